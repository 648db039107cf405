// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "melmark/denoiser.hpp"
#include "melmark/errors.hpp"
#include "melmark/grid.hpp"
#include "melmark/rng.hpp"
#include "melmark/schedule.hpp"

namespace melmark {

// Reverse-process samplers. Every step works cellwise with an effective blend
// gamma_c and shift mu_c (1 and 0 when no watermark is attached), so benign
// sampling and gamma = 1 watermark sampling execute identical arithmetic and
// produce identical bits for the same generator state. A fresh normal draw is
// consumed for every cell on every step, even where its coefficient is zero,
// to keep generator streams aligned across modes.

enum class SamplerKind { ddpm, ddim };

inline const char* sampler_kind_name(SamplerKind k) {
  return k == SamplerKind::ddpm ? "ddpm" : "ddim";
}

inline SamplerKind sampler_kind_from_name(const std::string& name) {
  if (name == "ddpm") return SamplerKind::ddpm;
  if (name == "ddim") return SamplerKind::ddim;
  raise(Errc::parameter, "unknown sampler kind: " + name);
}

struct SampleMethod {
  SamplerKind kind = SamplerKind::ddpm;
  int ddim_steps = 50;
  double eta = 0.0;  // ddim noise mixing; 0 is deterministic, 1 recovers ddpm-like noise
};

namespace detail {

inline void check_wm_shape(const WatermarkParams* wm, int h, int w) {
  if (wm)
    require(wm->mu.h == h && wm->mu.w == w, Errc::size,
            "sampler: watermark field shape mismatch");
}

// Estimate of the clean cell from the predicted noise under the shifted
// marginal x_t = sqrt(ab_t) x_0 + sqrt(1-ab_t) (mu + gamma eps).
inline double recover_x0(double xt, double eps, double a, double b, double g, double m) {
  return (xt - b * g * eps - b * m) / a;
}

}  // namespace detail

// One reverse diffusion step t -> t-1 through the shifted posterior.
inline Grid ddpm_step(const EpsPredictor& pred, const DiffusionSchedule& s,
                      const WatermarkParams* wm, const Grid& x_t, int t, Rng& rng) {
  s.check_t(t);
  detail::check_wm_shape(wm, x_t.h, x_t.w);
  const Grid eps = pred.predict(x_t, t);
  require(eps.same_shape(x_t), Errc::size, "sampler: predictor output shape mismatch");
  const double a = s.sqrt_ab[t];
  const double b = s.sqrt_1mab[t];
  const PosteriorCoeffs c = posterior_coeffs(s, t);
  const double noise_scale = std::sqrt(c.var_scale);
  Grid out(x_t.h, x_t.w, 0.0);
  for (size_t i = 0; i < x_t.size(); ++i) {
    const double g = wm ? wm->gamma_at(i) : 1.0;
    const double m = wm ? wm->mu_at(i) : 0.0;
    const double x0_hat = detail::recover_x0(x_t.v[i], eps.v[i], a, b, g, m);
    const double mean = c.c_xt * x_t.v[i] + c.c_x0 * x0_hat + c.c_mu * m;
    const double z = rng.normal();
    out.v[i] = mean + noise_scale * g * z;
  }
  return out;
}

// One ddim jump t -> t_prev (t_prev in 0..t-1, 0 meaning the clean sample).
// eta interpolates between the deterministic update and a stochastic one.
inline Grid ddim_step(const EpsPredictor& pred, const DiffusionSchedule& s,
                      const WatermarkParams* wm, const Grid& x_t, int t, int t_prev,
                      double eta, Rng& rng) {
  s.check_t(t);
  require(t_prev >= 0 && t_prev < t, Errc::index, "ddim: t_prev must be in 0..t-1");
  require(eta >= 0.0 && eta <= 1.0, Errc::parameter, "ddim: eta must be in [0, 1]");
  detail::check_wm_shape(wm, x_t.h, x_t.w);
  const Grid eps = pred.predict(x_t, t);
  require(eps.same_shape(x_t), Errc::size, "sampler: predictor output shape mismatch");
  const double a = s.sqrt_ab[t];
  const double b = s.sqrt_1mab[t];
  const double ab_t = s.alpha_bar[t];
  const double ab_p = s.alpha_bar[t_prev];
  const double a_p = s.sqrt_ab[t_prev];
  const double b_p = s.sqrt_1mab[t_prev];
  const double sig2 =
      eta * eta * ((1.0 - ab_p) / (1.0 - ab_t)) * (1.0 - ab_t / ab_p);
  const double sig = std::sqrt(std::max(0.0, sig2));
  const double dir = std::sqrt(std::max(0.0, 1.0 - ab_p - sig2));
  Grid out(x_t.h, x_t.w, 0.0);
  for (size_t i = 0; i < x_t.size(); ++i) {
    const double g = wm ? wm->gamma_at(i) : 1.0;
    const double m = wm ? wm->mu_at(i) : 0.0;
    const double x0_hat = detail::recover_x0(x_t.v[i], eps.v[i], a, b, g, m);
    const double z = rng.normal();
    out.v[i] = a_p * x0_hat + b_p * m + dir * g * eps.v[i] + sig * g * z;
  }
  return out;
}

// Evenly strided ddim visiting times, tau_j = floor(j T / steps), j = 0..steps.
// tau_0 = 0 and tau_steps = T; steps = T degenerates to the full ddpm grid.
inline std::vector<int> ddim_time_grid(int T, int steps) {
  require(steps >= 1 && steps <= T, Errc::parameter,
          "ddim: step count must be in 1..T");
  std::vector<int> tau(steps + 1);
  for (int j = 0; j <= steps; ++j)
    tau[j] = static_cast<int>((static_cast<int64_t>(j) * T) / steps);
  return tau;
}

// Optional per-chain record: visited times, distance to a reference grid after
// each state, and (on request) the full intermediate states.
struct SampleTrace {
  std::vector<int> ts;               // time of each stored state, starts at T, ends at 0
  std::vector<double> l2_to_target;  // parallel to ts; empty without a target
  std::vector<Grid> states;          // parallel to ts; empty unless requested
};

// Runs one reverse chain from blended initial noise to a clean sample.
inline Grid sample_chain(const EpsPredictor& pred, const DiffusionSchedule& s,
                         const WatermarkParams* wm, const SampleMethod& method, int h, int w,
                         Rng& rng, SampleTrace* trace = nullptr,
                         const Grid* target = nullptr, bool keep_states = false) {
  require(h >= 1 && w >= 1, Errc::size, "sampler: grid dimensions must be positive");
  detail::check_wm_shape(wm, h, w);
  if (target)
    require(target->h == h && target->w == w, Errc::size, "sampler: target shape mismatch");

  Grid x(h, w, 0.0);
  for (size_t i = 0; i < x.size(); ++i) {
    const double g = wm ? wm->gamma_at(i) : 1.0;
    const double m = wm ? wm->mu_at(i) : 0.0;
    x.v[i] = m + g * rng.normal();
  }
  auto record = [&](int t) {
    if (!trace) return;
    trace->ts.push_back(t);
    if (target) trace->l2_to_target.push_back(grid_l2(x, *target));
    if (keep_states) trace->states.push_back(x);
  };
  if (trace) {
    trace->ts.clear();
    trace->l2_to_target.clear();
    trace->states.clear();
  }
  record(s.T);

  if (method.kind == SamplerKind::ddpm) {
    for (int t = s.T; t >= 1; --t) {
      x = ddpm_step(pred, s, wm, x, t, rng);
      record(t - 1);
    }
  } else {
    const std::vector<int> tau = ddim_time_grid(s.T, method.ddim_steps);
    for (int j = method.ddim_steps; j >= 1; --j) {
      x = ddim_step(pred, s, wm, x, tau[j], tau[j - 1], method.eta, rng);
      record(tau[j - 1]);
    }
  }
  return x;
}

// Draws n independent samples. Chain streams are split off a salt drawn from
// the caller's generator, so repeated calls with the same generator produce
// fresh batches while a fixed seed reproduces the whole set. n = 0 returns
// empty without touching the generator.
inline std::vector<Grid> sample(const EpsPredictor& pred, const DiffusionSchedule& s,
                                const WatermarkParams* wm, const SampleMethod& method, int h,
                                int w, int n, Rng& rng) {
  require(n >= 0, Errc::parameter, "sampler: sample count must be >= 0");
  std::vector<Grid> out;
  if (n == 0) return out;
  out.reserve(n);
  Rng chains(rng.next_u64());
  for (int i = 0; i < n; ++i) {
    Rng chain_rng = chains.split(static_cast<uint64_t>(i));
    out.push_back(sample_chain(pred, s, wm, method, h, w, chain_rng));
  }
  return out;
}

// Diffuses a clean grid to timestep t through the (optionally shifted)
// marginal in one draw: x_t = sqrt(ab_t) x_0 + sqrt(1-ab_t) (mu + gamma eps).
inline Grid forward_diffuse(const DiffusionSchedule& s, const WatermarkParams* wm,
                            const Grid& x0, int t, Rng& rng) {
  s.check_t(t);
  detail::check_wm_shape(wm, x0.h, x0.w);
  const double a = s.sqrt_ab[t];
  const double b = s.sqrt_1mab[t];
  Grid out(x0.h, x0.w, 0.0);
  for (size_t i = 0; i < x0.size(); ++i) {
    const double g = wm ? wm->gamma_at(i) : 1.0;
    const double m = wm ? wm->mu_at(i) : 0.0;
    out.v[i] = a * x0.v[i] + b * (m + g * rng.normal());
  }
  return out;
}

}  // namespace melmark
