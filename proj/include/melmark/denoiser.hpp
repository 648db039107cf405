// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <limits>
#include <memory>
#include <string>
#include <vector>

#include "melmark/dataset.hpp"
#include "melmark/errors.hpp"
#include "melmark/grid.hpp"
#include "melmark/nn.hpp"
#include "melmark/rng.hpp"
#include "melmark/schedule.hpp"

namespace melmark {

// Noise predictor interface consumed by the samplers. Implementations must be
// safe to call concurrently on const instances.
struct EpsPredictor {
  virtual ~EpsPredictor() = default;
  virtual Grid predict(const Grid& x_t, int t) const = 0;
};

// Closed-form predictor for Gaussian data x_0 ~ N(mean, var): the posterior
// over x_0 given the (optionally watermark-shifted) marginal is conjugate, so
// the optimal noise estimate is available without any learning. Used to test
// samplers against ground truth.
class AnalyticGaussianDenoiser : public EpsPredictor {
 public:
  AnalyticGaussianDenoiser(const DiffusionSchedule& sched, Grid mean, double var,
                           const WatermarkParams* wm = nullptr)
      : sched_(sched), mean_(std::move(mean)), var_(var), wm_(wm) {
    require(var >= 0.0, Errc::parameter, "analytic denoiser: variance must be >= 0");
    if (wm_) {
      require(wm_->gamma > 0.0, Errc::parameter,
              "analytic denoiser: gamma must be positive in watermark mode");
      require(wm_->mu.same_shape(mean_), Errc::size,
              "analytic denoiser: watermark shape mismatch");
    }
  }

  Grid predict(const Grid& x_t, int t) const override {
    sched_.check_t(t);
    require(x_t.same_shape(mean_), Errc::size, "analytic denoiser: input shape mismatch");
    const double a = sched_.sqrt_ab[t];
    const double b = sched_.sqrt_1mab[t];
    Grid eps(x_t.h, x_t.w, 0.0);
    for (size_t i = 0; i < x_t.size(); ++i) {
      const double gc = wm_ ? wm_->gamma_at(i) : 1.0;
      const double mc = wm_ ? wm_->mu_at(i) : 0.0;
      const double obs_var = b * b * gc * gc;
      const double x0_hat = (mean_.v[i] * obs_var + a * var_ * (x_t.v[i] - b * mc)) /
                            (obs_var + a * a * var_);
      eps.v[i] = (x_t.v[i] - a * x0_hat - b * mc) / (b * gc);
    }
    return eps;
  }

 private:
  const DiffusionSchedule& sched_;
  Grid mean_;
  double var_;
  const WatermarkParams* wm_;
};

// Small symmetric U-net noise predictor, ~0.5M parameters: three resolution
// levels (32/64/128 channels), two 3x3 conv + SiLU blocks per level and side,
// nearest down/up sampling with concatenated skips, a sinusoidal timestep
// embedding injected per level through learned affine maps, and a zero-
// initialized 3x3 output head. Templated on the scalar so gradients can be
// verified in double and training run in float.
template <typename T>
class ConvDenoiser {
 public:
  static constexpr int kTimeDim = 64;
  static constexpr int kC0 = 32, kC1 = 64, kC2 = 128;

  ConvDenoiser() {
    enc0a_ = nn::make_conv3x3(layout_, "enc0a", 1, kC0);
    enc0b_ = nn::make_conv3x3(layout_, "enc0b", kC0, kC0);
    enc1a_ = nn::make_conv3x3(layout_, "enc1a", kC0, kC1);
    enc1b_ = nn::make_conv3x3(layout_, "enc1b", kC1, kC1);
    bota_ = nn::make_conv3x3(layout_, "bota", kC1, kC2);
    botb_ = nn::make_conv3x3(layout_, "botb", kC2, kC2);
    dec1a_ = nn::make_conv3x3(layout_, "dec1a", kC2 + kC1, kC1);
    dec1b_ = nn::make_conv3x3(layout_, "dec1b", kC1, kC1);
    dec0a_ = nn::make_conv3x3(layout_, "dec0a", kC1 + kC0, kC0);
    dec0b_ = nn::make_conv3x3(layout_, "dec0b", kC0, kC0);
    head_ = nn::make_conv3x3(layout_, "head", kC0, 1);
    tb_[0] = nn::make_linear(layout_, "tb0", kTimeDim, kC0);
    tb_[1] = nn::make_linear(layout_, "tb1", kTimeDim, kC1);
    tb_[2] = nn::make_linear(layout_, "tb2", kTimeDim, kC2);
    tb_[3] = nn::make_linear(layout_, "tb3", kTimeDim, kC1);
    tb_[4] = nn::make_linear(layout_, "tb4", kTimeDim, kC0);
  }

  size_t param_count() const { return layout_.total; }
  const nn::ParamLayout& layout() const { return layout_; }

  std::vector<T> init_params(uint64_t seed) const {
    Rng rng(seed);
    std::vector<T> w(layout_.total, T(0));
    auto init_conv = [&](const nn::Conv3x3& c) {
      nn::he_init(w.data() + c.w_off, static_cast<size_t>(c.cout) * c.cin * 9,
                  static_cast<size_t>(c.cin) * 9, rng);
    };
    for (const nn::Conv3x3* c :
         {&enc0a_, &enc0b_, &enc1a_, &enc1b_, &bota_, &botb_, &dec1a_, &dec1b_, &dec0a_, &dec0b_})
      init_conv(*c);
    // Head stays zero: a fresh predictor outputs exactly zero.
    for (const nn::Linear& l : tb_)
      nn::he_init(w.data() + l.w_off, static_cast<size_t>(l.out) * l.in,
                  static_cast<size_t>(l.in), rng);
    return w;
  }

  // Activations retained for the backward pass.
  struct Trace {
    int t = 0;
    std::vector<T> temb;
    T tb_out[5][kC2];  // per-level time biases (kC2 is the widest)
    nn::Tensor3<T> x;
    nn::Tensor3<T> a0p, a0, b0p, b0, d1;
    nn::Tensor3<T> a1p, a1, b1p, b1, d2;
    nn::Tensor3<T> a2p, a2, b2p, b2;
    nn::Tensor3<T> u1, cat1, c1ap, c1a, c1bp, c1b;
    nn::Tensor3<T> u0, cat0, c0ap, c0a, c0bp, c0b;
    nn::Tensor3<T> out;
  };

  void forward(const nn::Tensor3<T>& x, int t, const T* w, Trace& tr,
               nn::Workspace<T>& ws) const {
    require(x.c == 1, Errc::size, "denoiser: expected a single input channel");
    require(x.h % 4 == 0 && x.w % 4 == 0, Errc::size,
            "denoiser: spatial dimensions must be divisible by 4");
    tr.t = t;
    tr.x = x;
    tr.temb = nn::time_embedding<T>(t, kTimeDim);
    for (int l = 0; l < 5; ++l)
      nn::linear_forward(tb_[l], w, tr.temb.data(), tr.tb_out[l]);

    auto block = [&](const nn::Conv3x3& conv, const nn::Tensor3<T>& in, nn::Tensor3<T>& pre,
                     nn::Tensor3<T>& post, const T* tbias) {
      nn::conv3x3_forward(conv, w, in, pre, ws);
      if (tbias) nn::add_channel_bias(pre, tbias);
      if (post.v.size() != pre.v.size()) post = pre;
      nn::silu_forward(pre.v.data(), post.v.data(), pre.size());
      post.c = pre.c;
      post.h = pre.h;
      post.w = pre.w;
    };

    block(enc0a_, tr.x, tr.a0p, tr.a0, tr.tb_out[0]);
    block(enc0b_, tr.a0, tr.b0p, tr.b0, nullptr);
    tr.d1 = nn::down2(tr.b0);
    block(enc1a_, tr.d1, tr.a1p, tr.a1, tr.tb_out[1]);
    block(enc1b_, tr.a1, tr.b1p, tr.b1, nullptr);
    tr.d2 = nn::down2(tr.b1);
    block(bota_, tr.d2, tr.a2p, tr.a2, tr.tb_out[2]);
    block(botb_, tr.a2, tr.b2p, tr.b2, nullptr);
    tr.u1 = nn::up2(tr.b2);
    tr.cat1 = nn::concat_channels(tr.u1, tr.b1);
    block(dec1a_, tr.cat1, tr.c1ap, tr.c1a, tr.tb_out[3]);
    block(dec1b_, tr.c1a, tr.c1bp, tr.c1b, nullptr);
    tr.u0 = nn::up2(tr.c1b);
    tr.cat0 = nn::concat_channels(tr.u0, tr.b0);
    block(dec0a_, tr.cat0, tr.c0ap, tr.c0a, tr.tb_out[4]);
    block(dec0b_, tr.c0a, tr.c0bp, tr.c0b, nullptr);
    nn::conv3x3_forward(head_, w, tr.c0b, tr.out, ws);
  }

  // Accumulates parameter gradients for the traced forward pass.
  void backward(const Trace& tr, const nn::Tensor3<T>& dout, const T* w, T* grads,
                nn::Workspace<T>& ws) const {
    std::vector<T> dbias(kC2);
    auto time_bias_grad = [&](int l, const nn::Tensor3<T>& dpre) {
      nn::channel_bias_grad(dpre, dbias.data());
      nn::linear_backward(tb_[l], w, tr.temb.data(), dbias.data(), static_cast<T*>(nullptr),
                          grads);
    };

    nn::Tensor3<T> d_c0b, d_c0bp, d_c0a, d_c0ap, d_cat0, d_u0, d_b0_skip;
    nn::conv3x3_backward(head_, w, tr.c0b, dout, d_c0b, grads, ws);
    d_c0bp = d_c0b;
    nn::silu_backward(tr.c0bp.v.data(), d_c0b.v.data(), d_c0bp.v.data(), d_c0b.size());
    nn::conv3x3_backward(dec0b_, w, tr.c0a, d_c0bp, d_c0a, grads, ws);
    d_c0ap = d_c0a;
    nn::silu_backward(tr.c0ap.v.data(), d_c0a.v.data(), d_c0ap.v.data(), d_c0a.size());
    time_bias_grad(4, d_c0ap);
    nn::conv3x3_backward(dec0a_, w, tr.cat0, d_c0ap, d_cat0, grads, ws);
    d_u0 = nn::Tensor3<T>(kC1, tr.u0.h, tr.u0.w);
    d_b0_skip = nn::Tensor3<T>(kC0, tr.b0.h, tr.b0.w);
    nn::split_channels(d_cat0, d_u0, d_b0_skip);

    nn::Tensor3<T> d_c1b(kC1, tr.c1b.h, tr.c1b.w);
    nn::up2_backward(d_u0, d_c1b);
    nn::Tensor3<T> d_c1bp = d_c1b, d_c1a, d_c1ap, d_cat1, d_u1, d_b1_skip;
    nn::silu_backward(tr.c1bp.v.data(), d_c1b.v.data(), d_c1bp.v.data(), d_c1b.size());
    nn::conv3x3_backward(dec1b_, w, tr.c1a, d_c1bp, d_c1a, grads, ws);
    d_c1ap = d_c1a;
    nn::silu_backward(tr.c1ap.v.data(), d_c1a.v.data(), d_c1ap.v.data(), d_c1a.size());
    time_bias_grad(3, d_c1ap);
    nn::conv3x3_backward(dec1a_, w, tr.cat1, d_c1ap, d_cat1, grads, ws);
    d_u1 = nn::Tensor3<T>(kC2, tr.u1.h, tr.u1.w);
    d_b1_skip = nn::Tensor3<T>(kC1, tr.b1.h, tr.b1.w);
    nn::split_channels(d_cat1, d_u1, d_b1_skip);

    nn::Tensor3<T> d_b2(kC2, tr.b2.h, tr.b2.w);
    nn::up2_backward(d_u1, d_b2);
    nn::Tensor3<T> d_b2p = d_b2, d_a2, d_a2p, d_d2;
    nn::silu_backward(tr.b2p.v.data(), d_b2.v.data(), d_b2p.v.data(), d_b2.size());
    nn::conv3x3_backward(botb_, w, tr.a2, d_b2p, d_a2, grads, ws);
    d_a2p = d_a2;
    nn::silu_backward(tr.a2p.v.data(), d_a2.v.data(), d_a2p.v.data(), d_a2.size());
    time_bias_grad(2, d_a2p);
    nn::conv3x3_backward(bota_, w, tr.d2, d_a2p, d_d2, grads, ws);

    nn::Tensor3<T> d_b1(kC1, tr.b1.h, tr.b1.w);
    nn::down2_backward(d_d2, d_b1);
    for (size_t i = 0; i < d_b1.v.size(); ++i) d_b1.v[i] += d_b1_skip.v[i];
    nn::Tensor3<T> d_b1p = d_b1, d_a1, d_a1p, d_d1;
    nn::silu_backward(tr.b1p.v.data(), d_b1.v.data(), d_b1p.v.data(), d_b1.size());
    nn::conv3x3_backward(enc1b_, w, tr.a1, d_b1p, d_a1, grads, ws);
    d_a1p = d_a1;
    nn::silu_backward(tr.a1p.v.data(), d_a1.v.data(), d_a1p.v.data(), d_a1.size());
    time_bias_grad(1, d_a1p);
    nn::conv3x3_backward(enc1a_, w, tr.d1, d_a1p, d_d1, grads, ws);

    nn::Tensor3<T> d_b0(kC0, tr.b0.h, tr.b0.w);
    nn::down2_backward(d_d1, d_b0);
    for (size_t i = 0; i < d_b0.v.size(); ++i) d_b0.v[i] += d_b0_skip.v[i];
    nn::Tensor3<T> d_b0p = d_b0, d_a0, d_a0p, d_x;
    nn::silu_backward(tr.b0p.v.data(), d_b0.v.data(), d_b0p.v.data(), d_b0.size());
    nn::conv3x3_backward(enc0b_, w, tr.a0, d_b0p, d_a0, grads, ws);
    d_a0p = d_a0;
    nn::silu_backward(tr.a0p.v.data(), d_a0.v.data(), d_a0p.v.data(), d_a0.size());
    time_bias_grad(0, d_a0p);
    nn::conv3x3_backward(enc0a_, w, tr.x, d_a0p, d_x, grads, ws);
  }

  // Double-precision convenience for the samplers.
  Grid predict_grid(const Grid& x, int t, const T* w) const {
    nn::Tensor3<T> in(1, x.h, x.w);
    for (size_t i = 0; i < x.size(); ++i) in.v[i] = static_cast<T>(x.v[i]);
    Trace tr;
    nn::Workspace<T> ws;
    forward(in, t, w, tr, ws);
    Grid out(x.h, x.w, 0.0);
    for (size_t i = 0; i < out.size(); ++i) out.v[i] = static_cast<double>(tr.out.v[i]);
    return out;
  }

 private:
  nn::ParamLayout layout_;
  nn::Conv3x3 enc0a_, enc0b_, enc1a_, enc1b_, bota_, botb_, dec1a_, dec1b_, dec0a_, dec0b_,
      head_;
  nn::Linear tb_[5];
};

// Adapter exposing a trained float net as an EpsPredictor.
class ConvDenoiserPredictor : public EpsPredictor {
 public:
  ConvDenoiserPredictor(const ConvDenoiser<float>& net, const std::vector<float>& params)
      : net_(net), params_(params) {
    require(params.size() == net.param_count(), Errc::size,
            "predictor: parameter vector size mismatch");
  }

  Grid predict(const Grid& x_t, int t) const override {
    return net_.predict_grid(x_t, t, params_.data());
  }

 private:
  const ConvDenoiser<float>& net_;
  const std::vector<float>& params_;
};

// ---- training ----

struct TrainOpts {
  double lr = 2e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double ema_decay = 0.999;
};

struct TrainState {
  std::vector<float> params;
  std::vector<float> ema;
  std::vector<float> grads;
  nn::AdamState<float> adam;
  int64_t step = 0;
  std::vector<double> loss_history;
};

inline TrainState make_train_state(const ConvDenoiser<float>& net, uint64_t seed) {
  TrainState st;
  st.params = net.init_params(seed);
  st.ema = st.params;
  st.grads.assign(st.params.size(), 0.0f);
  return st;
}

struct StepStats {
  double loss = 0.0;
  double benign_loss = 0.0;  // NaN when the batch had no benign items
  double wm_loss = 0.0;      // NaN when the batch had no watermark items
  int n_benign = 0;
  int n_wm = 0;
};

// One optimizer step over a batch: per item, draw t ~ U{1..T} and a noise
// field, diffuse the item's content to x_t (watermark items through the
// shifted kernel on masked cells), and regress the predicted noise against
// the drawn noise. Items are processed serially in slot order; gradients are
// reduced in that fixed order, so results are bit-reproducible for a seed.
inline StepStats train_step(const ConvDenoiser<float>& net, TrainState& st,
                            const std::vector<BatchSlot>& batch,
                            const DiffusionSchedule& sched, const WatermarkParams* wm,
                            Rng& rng, const TrainOpts& opts = {}) {
  require(!batch.empty(), Errc::parameter, "train_step: empty batch");
  const Grid& probe = batch[0].is_watermark ? batch[0].x0w : batch[0].x0;
  const int h = probe.h, w = probe.w;
  const size_t cells = static_cast<size_t>(h) * w;
  if (wm)
    require(wm->mu.h == h && wm->mu.w == w, Errc::size, "train_step: watermark shape mismatch");

  std::fill(st.grads.begin(), st.grads.end(), 0.0f);
  typename ConvDenoiser<float>::Trace tr;
  nn::Workspace<float> ws;
  nn::Tensor3<float> xt(1, h, w), dout(1, h, w);
  std::vector<float> target(cells);

  StepStats stats;
  const double inv_total = 1.0 / (static_cast<double>(batch.size()) * cells);
  for (const BatchSlot& slot : batch) {
    const Grid& x0 = slot.is_watermark ? slot.x0w : slot.x0;
    require(x0.h == h && x0.w == w, Errc::size, "train_step: batch shape mismatch");
    const int t = rng.uniform_int(1, sched.T);
    const double a = sched.sqrt_ab[t];
    const double b = sched.sqrt_1mab[t];
    for (size_t i = 0; i < cells; ++i) {
      const double z = rng.normal();
      double x;
      if (slot.is_watermark && wm) {
        x = a * x0.v[i] + b * wm->mu_at(i) + b * wm->gamma_at(i) * z;
      } else {
        x = a * x0.v[i] + b * z;
      }
      xt.v[i] = static_cast<float>(x);
      target[i] = static_cast<float>(z);
    }

    net.forward(xt, t, st.params.data(), tr, ws);
    double item_loss = 0.0;
    for (size_t i = 0; i < cells; ++i) {
      const double d = static_cast<double>(tr.out.v[i]) - target[i];
      item_loss += d * d;
      dout.v[i] = static_cast<float>(2.0 * d * inv_total);
    }
    item_loss /= static_cast<double>(cells);
    if (slot.is_watermark) {
      stats.wm_loss += item_loss;
      ++stats.n_wm;
    } else {
      stats.benign_loss += item_loss;
      ++stats.n_benign;
    }
    stats.loss += item_loss / batch.size();
    net.backward(tr, dout, st.params.data(), st.grads.data(), ws);
  }
  stats.benign_loss = stats.n_benign ? stats.benign_loss / stats.n_benign
                                     : std::numeric_limits<double>::quiet_NaN();
  stats.wm_loss =
      stats.n_wm ? stats.wm_loss / stats.n_wm : std::numeric_limits<double>::quiet_NaN();

  require(std::isfinite(stats.loss), Errc::numeric,
          "train_step: non-finite loss at step " + std::to_string(st.step + 1) +
              " (lower the learning rate or check the data)");

  nn::adam_step(st.params, st.grads, st.adam, opts.lr, opts.beta1, opts.beta2, opts.eps);
  nn::ema_update(st.ema, st.params, opts.ema_decay);
  ++st.step;
  st.loss_history.push_back(stats.loss);
  return stats;
}

}  // namespace melmark
