// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Core>
#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#include "melmark/audio.hpp"
#include "melmark/dataset.hpp"
#include "melmark/errors.hpp"
#include "melmark/grid.hpp"
#include "melmark/nn.hpp"
#include "melmark/rng.hpp"

namespace melmark {

// ---- compact mel classifier ----
//
// One small model serves three duties: class predictions for the watermark
// success rate, softmax vectors for the inception-style score, and a 64-d
// pooled embedding as the feature space for the Frechet distance and the
// k-NN coverage metrics. Three blocks of [2x decimation, 3x3 conv, SiLU]
// followed by global average pooling and a linear head.

class Classifier {
 public:
  static constexpr int kEmbedDim = 64;

  explicit Classifier(int num_classes) : c_(num_classes) {
    require(num_classes >= 2, Errc::parameter, "classifier: need at least 2 classes");
    b1_ = nn::make_conv3x3(layout_, "b1", 1, 16);
    b2_ = nn::make_conv3x3(layout_, "b2", 16, 32);
    b3_ = nn::make_conv3x3(layout_, "b3", 32, kEmbedDim);
    head_ = nn::make_linear(layout_, "head", kEmbedDim, num_classes);
    params.assign(layout_.total, 0.0f);
  }

  int num_classes() const { return c_; }
  const nn::ParamLayout& layout() const { return layout_; }

  void init(uint64_t seed) {
    Rng rng(seed);
    auto init_conv = [&](const nn::Conv3x3& c) {
      nn::he_init(params.data() + c.w_off, static_cast<size_t>(c.cout) * c.cin * 9,
                  static_cast<size_t>(c.cin) * 9, rng);
    };
    init_conv(b1_);
    init_conv(b2_);
    init_conv(b3_);
    nn::he_init(params.data() + head_.w_off, static_cast<size_t>(head_.out) * head_.in,
                static_cast<size_t>(head_.in), rng);
  }

  // Activations kept for the training backward pass.
  struct Trace {
    nn::Tensor3<float> d0, a1, s1, d1, a2, s2, d2, a3, s3;
    float gap[kEmbedDim];
    std::vector<float> logits;
  };

  void forward(const nn::Tensor3<float>& x, Trace& tr, nn::Workspace<float>& ws) const {
    require(x.c == 1, Errc::size, "classifier: expected a single input channel");
    require(x.h % 8 == 0 && x.w % 8 == 0, Errc::size,
            "classifier: spatial dimensions must be divisible by 8");
    tr.d0 = nn::down2(x);
    nn::conv3x3_forward(b1_, params.data(), tr.d0, tr.a1, ws);
    resize_like(tr.s1, tr.a1);
    nn::silu_forward(tr.a1.v.data(), tr.s1.v.data(), tr.a1.size());
    tr.d1 = nn::down2(tr.s1);
    nn::conv3x3_forward(b2_, params.data(), tr.d1, tr.a2, ws);
    resize_like(tr.s2, tr.a2);
    nn::silu_forward(tr.a2.v.data(), tr.s2.v.data(), tr.a2.size());
    tr.d2 = nn::down2(tr.s2);
    nn::conv3x3_forward(b3_, params.data(), tr.d2, tr.a3, ws);
    resize_like(tr.s3, tr.a3);
    nn::silu_forward(tr.a3.v.data(), tr.s3.v.data(), tr.a3.size());
    const size_t hw = static_cast<size_t>(tr.s3.h) * tr.s3.w;
    for (int c = 0; c < kEmbedDim; ++c) {
      const float* p = tr.s3.plane(c);
      float acc = 0.0f;
      for (size_t i = 0; i < hw; ++i) acc += p[i];
      tr.gap[c] = acc / static_cast<float>(hw);
    }
    tr.logits.resize(c_);
    nn::linear_forward(head_, params.data(), tr.gap, tr.logits.data());
  }

  // Accumulates parameter gradients for a traced forward pass.
  void backward(const Trace& tr, const float* dlogits, float* grads,
                nn::Workspace<float>& ws) const {
    float dgap[kEmbedDim];
    nn::linear_backward(head_, params.data(), tr.gap, dlogits, dgap, grads);
    const size_t hw = static_cast<size_t>(tr.s3.h) * tr.s3.w;
    nn::Tensor3<float> ds3(kEmbedDim, tr.s3.h, tr.s3.w);
    for (int c = 0; c < kEmbedDim; ++c) {
      const float g = dgap[c] / static_cast<float>(hw);
      float* p = ds3.plane(c);
      for (size_t i = 0; i < hw; ++i) p[i] = g;
    }
    nn::Tensor3<float> da3 = ds3, dd2, ds2, da2, dd1, ds1, da1, dd0;
    nn::silu_backward(tr.a3.v.data(), ds3.v.data(), da3.v.data(), ds3.size());
    nn::conv3x3_backward(b3_, params.data(), tr.d2, da3, dd2, grads, ws);
    ds2 = nn::Tensor3<float>(tr.s2.c, tr.s2.h, tr.s2.w);
    nn::down2_backward(dd2, ds2);
    da2 = ds2;
    nn::silu_backward(tr.a2.v.data(), ds2.v.data(), da2.v.data(), ds2.size());
    nn::conv3x3_backward(b2_, params.data(), tr.d1, da2, dd1, grads, ws);
    ds1 = nn::Tensor3<float>(tr.s1.c, tr.s1.h, tr.s1.w);
    nn::down2_backward(dd1, ds1);
    da1 = ds1;
    nn::silu_backward(tr.a1.v.data(), ds1.v.data(), da1.v.data(), ds1.size());
    nn::conv3x3_backward(b1_, params.data(), tr.d0, da1, dd0, grads, ws);
  }

  std::vector<double> logits(const Grid& mel) const {
    Trace tr;
    nn::Workspace<float> ws;
    run(mel, tr, ws);
    return std::vector<double>(tr.logits.begin(), tr.logits.end());
  }

  // Softmax computed in double with the max subtracted; sums to 1 within fp.
  std::vector<double> probs(const Grid& mel) const {
    std::vector<double> z = logits(mel);
    const double zmax = *std::max_element(z.begin(), z.end());
    double sum = 0.0;
    for (double& v : z) {
      v = std::exp(v - zmax);
      sum += v;
    }
    for (double& v : z) v /= sum;
    return z;
  }

  std::vector<double> embedding(const Grid& mel) const {
    Trace tr;
    nn::Workspace<float> ws;
    run(mel, tr, ws);
    return std::vector<double>(tr.gap, tr.gap + kEmbedDim);
  }

  int predict(const Grid& mel) const {
    std::vector<double> z = logits(mel);
    return static_cast<int>(std::max_element(z.begin(), z.end()) - z.begin());
  }

  std::vector<float> params;

 private:
  static void resize_like(nn::Tensor3<float>& t, const nn::Tensor3<float>& ref) {
    if (t.v.size() != ref.v.size()) t = nn::Tensor3<float>(ref.c, ref.h, ref.w);
    t.c = ref.c;
    t.h = ref.h;
    t.w = ref.w;
  }

  void run(const Grid& mel, Trace& tr, nn::Workspace<float>& ws) const {
    nn::Tensor3<float> x(1, mel.h, mel.w);
    for (size_t i = 0; i < mel.size(); ++i) x.v[i] = static_cast<float>(mel.v[i]);
    forward(x, tr, ws);
  }

  int c_;
  nn::ParamLayout layout_;
  nn::Conv3x3 b1_, b2_, b3_;
  nn::Linear head_;
};

struct ClassifierTraining {
  int max_steps = 4000;
  int batch_size = 16;
  double lr = 1e-3;
  int eval_every = 250;      // training-accuracy probe cadence
  int eval_subsample = 400;  // probe size (full pool when smaller)
  double target_train_acc = 0.99;
  double min_test_acc = 0.8;
};

struct TrainedClassifier {
  Classifier clf;
  double train_acc = 0.0;
  double test_acc = 0.0;
  int64_t steps = 0;
};

// Accuracy over corpus items of the given split whose label the head covers.
inline double classifier_accuracy(const Classifier& clf, const Corpus& corpus, Split split,
                                  int max_items = -1, Rng* subsample_rng = nullptr) {
  std::vector<int> pool;
  for (size_t i = 0; i < corpus.items.size(); ++i)
    if (corpus.split[i] == split && corpus.items[i].label < clf.num_classes())
      pool.push_back(static_cast<int>(i));
  require(!pool.empty(), Errc::metric_prereq, "accuracy: no items to evaluate");
  if (max_items > 0 && static_cast<int>(pool.size()) > max_items && subsample_rng) {
    for (int i = 0; i < max_items; ++i) {
      const int j = subsample_rng->uniform_int(i, static_cast<int>(pool.size()) - 1);
      std::swap(pool[i], pool[j]);
    }
    pool.resize(max_items);
  }
  int hit = 0;
  for (int idx : pool)
    if (clf.predict(corpus.items[idx].mel) == corpus.items[idx].label) ++hit;
  return static_cast<double>(hit) / pool.size();
}

// Cross-entropy training on the train split until the probe accuracy reaches
// its target or the step budget runs out. The test split gates the result: a
// classifier below the floor is unusable as a metric backbone and is refused.
inline TrainedClassifier train_classifier(const Corpus& corpus, int num_classes,
                                          uint64_t seed,
                                          const ClassifierTraining& opts = {}) {
  TrainedClassifier out{Classifier(num_classes)};
  std::vector<int> pool;
  std::vector<char> seen(num_classes, 0);
  for (size_t i = 0; i < corpus.items.size(); ++i) {
    const CorpusItem& it = corpus.items[i];
    if (corpus.split[i] == Split::train && it.label < num_classes) {
      pool.push_back(static_cast<int>(i));
      seen[it.label] = 1;
    }
  }
  require(!pool.empty(), Errc::metric_prereq, "classifier: empty training pool");
  int distinct = 0;
  for (char s : seen) distinct += s;
  require(distinct >= 2, Errc::metric_prereq,
          "classifier: training pool is single-class, nothing to separate");

  out.clf.init(seed);
  Rng rng(mix64(seed ^ 0x636c6600));
  std::vector<float> grads(out.clf.layout().total, 0.0f);
  nn::AdamState<float> adam;
  typename Classifier::Trace tr;
  nn::Workspace<float> ws;
  std::vector<float> dlogits(num_classes);

  for (int step = 1; step <= opts.max_steps; ++step) {
    std::fill(grads.begin(), grads.end(), 0.0f);
    for (int b = 0; b < opts.batch_size; ++b) {
      const CorpusItem& it =
          corpus.items[pool[rng.uniform_int(0, static_cast<int>(pool.size()) - 1)]];
      nn::Tensor3<float> x(1, it.mel.h, it.mel.w);
      for (size_t i = 0; i < it.mel.size(); ++i) x.v[i] = static_cast<float>(it.mel.v[i]);
      out.clf.forward(x, tr, ws);
      double zmax = tr.logits[0];
      for (float z : tr.logits) zmax = std::max(zmax, static_cast<double>(z));
      double sum = 0.0;
      for (int c = 0; c < num_classes; ++c) sum += std::exp(tr.logits[c] - zmax);
      for (int c = 0; c < num_classes; ++c) {
        const double p = std::exp(tr.logits[c] - zmax) / sum;
        dlogits[c] =
            static_cast<float>((p - (c == it.label ? 1.0 : 0.0)) / opts.batch_size);
      }
      out.clf.backward(tr, dlogits.data(), grads.data(), ws);
    }
    nn::adam_step(out.clf.params, grads, adam, opts.lr);
    out.steps = step;
    if (step % opts.eval_every == 0 || step == opts.max_steps) {
      Rng probe_rng(rng.split(step).next_u64());
      const double acc = classifier_accuracy(out.clf, corpus, Split::train,
                                             opts.eval_subsample, &probe_rng);
      if (acc >= opts.target_train_acc) break;
    }
  }

  out.train_acc = classifier_accuracy(out.clf, corpus, Split::train);
  out.test_acc = classifier_accuracy(out.clf, corpus, Split::test);
  require(out.test_acc >= opts.min_test_acc, Errc::metric_prereq,
          "classifier: test accuracy " + std::to_string(out.test_acc) +
              " below the usability floor " + std::to_string(opts.min_test_acc));
  return out;
}

// ---- classifier-backed metrics ----

// Fraction of generated mels the classifier assigns to the target class.
inline double wsr(const std::vector<Grid>& generated, const Classifier& clf,
                  int target_class) {
  require(!generated.empty(), Errc::metric_prereq, "wsr: empty sample set");
  require(target_class >= 0 && target_class < clf.num_classes(), Errc::index,
          "wsr: target class outside the classifier head");
  int hit = 0;
  for (const Grid& g : generated)
    if (clf.predict(g) == target_class) ++hit;
  return static_cast<double>(hit) / generated.size();
}

// exp of the mean KL divergence between per-sample class posteriors and their
// marginal; ranges over [1, num_classes].
inline double inception_score_from_probs(const std::vector<std::vector<double>>& probs) {
  require(!probs.empty(), Errc::metric_prereq, "inception score: empty sample set");
  const size_t c = probs[0].size();
  require(c >= 1, Errc::size, "inception score: empty probability vectors");
  std::vector<double> marginal(c, 0.0);
  for (const auto& p : probs) {
    require(p.size() == c, Errc::size, "inception score: ragged probability vectors");
    for (size_t j = 0; j < c; ++j) marginal[j] += p[j] / probs.size();
  }
  double mean_kl = 0.0;
  for (const auto& p : probs) {
    double kl = 0.0;
    for (size_t j = 0; j < c; ++j)
      if (p[j] > 0.0) kl += p[j] * (std::log(p[j]) - std::log(marginal[j]));
    mean_kl += kl / probs.size();
  }
  return std::exp(mean_kl);
}

inline double inception_score(const std::vector<Grid>& generated, const Classifier& clf) {
  require(!generated.empty(), Errc::metric_prereq, "inception score: empty sample set");
  std::vector<std::vector<double>> probs;
  probs.reserve(generated.size());
  for (const Grid& g : generated) probs.push_back(clf.probs(g));
  return inception_score_from_probs(probs);
}

inline std::vector<std::vector<double>> embed_all(const Classifier& clf,
                                                  const std::vector<Grid>& mels) {
  std::vector<std::vector<double>> out;
  out.reserve(mels.size());
  for (const Grid& g : mels) out.push_back(clf.embedding(g));
  return out;
}

// ---- Frechet distance ----

namespace detail {

struct GaussianFit {
  Eigen::VectorXd mean;
  Eigen::MatrixXd cov;  // unbiased
};

inline GaussianFit fit_gaussian(const std::vector<std::vector<double>>& feats) {
  require(feats.size() >= 2, Errc::metric_prereq, "frechet: need at least 2 samples");
  const Eigen::Index n = static_cast<Eigen::Index>(feats.size());
  const Eigen::Index d = static_cast<Eigen::Index>(feats[0].size());
  require(d >= 1, Errc::size, "frechet: empty feature vectors");
  Eigen::MatrixXd x(n, d);
  for (Eigen::Index i = 0; i < n; ++i) {
    require(static_cast<Eigen::Index>(feats[i].size()) == d, Errc::size,
            "frechet: ragged feature vectors");
    for (Eigen::Index j = 0; j < d; ++j) x(i, j) = feats[i][j];
  }
  GaussianFit f;
  f.mean = x.colwise().mean();
  Eigen::MatrixXd centered = x.rowwise() - f.mean.transpose();
  f.cov = centered.transpose() * centered / static_cast<double>(n - 1);
  // Rank-deficient fits (too few samples for the dimension) get a small
  // diagonal load so the matrix square roots stay meaningful.
  if (n <= d) f.cov.diagonal().array() += 1e-6;
  return f;
}

// Principal square root of a symmetric PSD matrix, eigenvalues clamped at 0.
inline Eigen::MatrixXd psd_sqrt(const Eigen::MatrixXd& m) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m);
  require(es.info() == Eigen::Success, Errc::numeric, "frechet: eigendecomposition failed");
  Eigen::VectorXd ev = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
}

}  // namespace detail

// Frechet distance between Gaussian fits of two feature sets:
// |m1 - m2|^2 + tr(C1 + C2 - 2 (C1 C2)^{1/2}), with the cross term evaluated
// through the symmetric form (C1^{1/2} C2 C1^{1/2})^{1/2}. Clamped at 0.
inline double frechet(const std::vector<std::vector<double>>& real_feats,
                      const std::vector<std::vector<double>>& gen_feats) {
  detail::GaussianFit a = detail::fit_gaussian(real_feats);
  detail::GaussianFit b = detail::fit_gaussian(gen_feats);
  require(a.mean.size() == b.mean.size(), Errc::size, "frechet: feature dimension mismatch");
  const Eigen::MatrixXd sa = detail::psd_sqrt(a.cov);
  const Eigen::MatrixXd cross = detail::psd_sqrt(sa * b.cov * sa);
  const double d2 = (a.mean - b.mean).squaredNorm() + a.cov.trace() + b.cov.trace() -
                    2.0 * cross.trace();
  return std::max(0.0, d2);
}

// ---- k-NN coverage ----

struct PrecisionRecall {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

namespace detail {

inline double sq_dist(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

// Squared distance from each point of `set` to its k-th nearest other point.
inline std::vector<double> knn_radii_sq(const std::vector<std::vector<double>>& set, int k) {
  const size_t n = set.size();
  std::vector<double> radii(n, 0.0);
  std::vector<double> d;
  d.reserve(n - 1);
  for (size_t i = 0; i < n; ++i) {
    d.clear();
    for (size_t j = 0; j < n; ++j)
      if (j != i) d.push_back(sq_dist(set[i], set[j]));
    std::nth_element(d.begin(), d.begin() + (k - 1), d.end());
    radii[i] = d[k - 1];
  }
  return radii;
}

// Fraction of query points lying inside at least one reference ball. A zero
// radius still covers exact matches.
inline double coverage(const std::vector<std::vector<double>>& queries,
                       const std::vector<std::vector<double>>& refs,
                       const std::vector<double>& radii_sq) {
  size_t covered = 0;
  for (const auto& q : queries) {
    for (size_t j = 0; j < refs.size(); ++j) {
      if (sq_dist(q, refs[j]) <= radii_sq[j]) {
        ++covered;
        break;
      }
    }
  }
  return static_cast<double>(covered) / queries.size();
}

}  // namespace detail

// Manifold precision/recall: a generated point is precise when it falls within
// the k-th-NN radius of some real point; recall swaps the roles.
inline PrecisionRecall knn_precision_recall(const std::vector<std::vector<double>>& real_feats,
                                            const std::vector<std::vector<double>>& gen_feats,
                                            int k = 3) {
  require(k >= 1, Errc::parameter, "knn: k must be >= 1");
  require(real_feats.size() >= static_cast<size_t>(k + 1) &&
              gen_feats.size() >= static_cast<size_t>(k + 1),
          Errc::metric_prereq, "knn: both sets need at least k+1 points");
  const size_t d = real_feats[0].size();
  for (const auto& v : real_feats)
    require(v.size() == d, Errc::size, "knn: ragged feature vectors");
  for (const auto& v : gen_feats)
    require(v.size() == d, Errc::size, "knn: feature dimension mismatch");

  PrecisionRecall pr;
  const std::vector<double> real_r = detail::knn_radii_sq(real_feats, k);
  const std::vector<double> gen_r = detail::knn_radii_sq(gen_feats, k);
  pr.precision = detail::coverage(gen_feats, real_feats, real_r);
  pr.recall = detail::coverage(real_feats, gen_feats, gen_r);
  pr.f1 = (pr.precision + pr.recall) > 0.0
              ? 2.0 * pr.precision * pr.recall / (pr.precision + pr.recall)
              : 0.0;
  return pr;
}

// ---- audio signal-to-noise ----

constexpr double kSnrCapDb = 120.0;

// Paired mode: energy of the reference over the energy of the difference,
// lengths aligned by truncation.
inline double snr_db(const AudioClip& gen, const AudioClip& reference) {
  const size_t n = std::min(gen.samples.size(), reference.samples.size());
  require(n > 0, Errc::size, "snr: empty audio");
  double ref_e = 0.0, diff_e = 0.0;
  for (size_t i = 0; i < n; ++i) {
    ref_e += reference.samples[i] * reference.samples[i];
    const double d = reference.samples[i] - gen.samples[i];
    diff_e += d * d;
  }
  require(ref_e > 0.0, Errc::metric_prereq, "snr: reference has zero energy");
  if (diff_e <= 0.0) return kSnrCapDb;
  return std::min(kSnrCapDb, 10.0 * std::log10(ref_e / diff_e));
}

// Reference-free mode: frame the clip, call the loudest half "signal" and the
// quietest tenth "noise", and compare mean powers.
inline double snr_db(const AudioClip& gen, int frame_len = 512) {
  require(frame_len >= 1, Errc::parameter, "snr: frame length must be positive");
  const size_t nf = gen.samples.size() / static_cast<size_t>(frame_len);
  require(nf >= 2, Errc::size, "snr: clip too short to frame");
  std::vector<double> power(nf, 0.0);
  for (size_t f = 0; f < nf; ++f) {
    double e = 0.0;
    for (int i = 0; i < frame_len; ++i) {
      const double s = gen.samples[f * frame_len + i];
      e += s * s;
    }
    power[f] = e / frame_len;
  }
  std::sort(power.begin(), power.end(), std::greater<double>());
  const size_t n_sig = (nf + 1) / 2;                      // top 50%, at least 1
  const size_t n_noise = std::max<size_t>(1, nf / 10);    // bottom 10%, at least 1
  double sig = 0.0, noise = 0.0;
  for (size_t i = 0; i < n_sig; ++i) sig += power[i] / n_sig;
  for (size_t i = 0; i < n_noise; ++i) noise += power[nf - 1 - i] / n_noise;
  if (noise <= 0.0) return sig > 0.0 ? kSnrCapDb : 0.0;
  return std::min(kSnrCapDb, 10.0 * std::log10(sig / noise));
}

// ---- image-style quality on mel grids ----

struct ImageQuality {
  double ssim = 0.0;
  double psnr_db = 0.0;
  double mse = 0.0;  // on the [0,1] scale
};

namespace detail {

inline std::vector<double> quantize_8bit(const Grid& g) {
  std::vector<double> q(g.size());
  for (size_t i = 0; i < g.size(); ++i) {
    const double unit = (std::clamp(g.v[i], -1.0, 1.0) + 1.0) / 2.0;
    q[i] = std::nearbyint(unit * 255.0);
  }
  return q;
}

}  // namespace detail

// SSIM (7x7 uniform windows), PSNR, and MSE over 8-bit quantizations of two
// unit-normalized grids. PSNR of identical grids is capped at 120 dB.
inline ImageQuality image_quality(const Grid& a, const Grid& b) {
  require(a.same_shape(b), Errc::size, "image quality: shape mismatch");
  require(a.h >= 7 && a.w >= 7, Errc::size, "image quality: grid smaller than the window");
  const std::vector<double> qa = detail::quantize_8bit(a);
  const std::vector<double> qb = detail::quantize_8bit(b);

  ImageQuality out;
  double se = 0.0;
  for (size_t i = 0; i < qa.size(); ++i) {
    const double d = qa[i] - qb[i];
    se += d * d;
  }
  const double mse255 = se / qa.size();
  out.mse = mse255 / (255.0 * 255.0);
  out.psnr_db =
      mse255 <= 0.0 ? kSnrCapDb
                    : std::min(kSnrCapDb, 10.0 * std::log10(255.0 * 255.0 / mse255));

  const double c1 = (0.01 * 255.0) * (0.01 * 255.0);
  const double c2 = (0.03 * 255.0) * (0.03 * 255.0);
  const int win = 7;
  const double wn = static_cast<double>(win) * win;
  double ssim_sum = 0.0;
  int windows = 0;
  for (int y = 0; y + win <= a.h; ++y) {
    for (int x = 0; x + win <= a.w; ++x) {
      double sa = 0.0, sb = 0.0, saa = 0.0, sbb = 0.0, sab = 0.0;
      for (int i = 0; i < win; ++i)
        for (int j = 0; j < win; ++j) {
          const double va = qa[static_cast<size_t>(y + i) * a.w + (x + j)];
          const double vb = qb[static_cast<size_t>(y + i) * a.w + (x + j)];
          sa += va;
          sb += vb;
          saa += va * va;
          sbb += vb * vb;
          sab += va * vb;
        }
      const double ma = sa / wn, mb = sb / wn;
      const double va = saa / wn - ma * ma;
      const double vb = sbb / wn - mb * mb;
      const double mm = ma * mb;  // shared product keeps the metric exactly symmetric
      const double cov = sab / wn - mm;
      ssim_sum += ((2.0 * mm + c1) * (2.0 * cov + c2)) /
                  ((ma * ma + mb * mb + c1) * (va + vb + c2));
      ++windows;
    }
  }
  out.ssim = ssim_sum / windows;
  return out;
}

// ---- aggregate report ----

// One row of the evaluation table; fields not produced by a given run stay
// NaN and are omitted from serialized output.
struct MetricReport {
  double wsr = std::numeric_limits<double>::quiet_NaN();
  double fid = std::numeric_limits<double>::quiet_NaN();
  double is_score = std::numeric_limits<double>::quiet_NaN();
  double precision = std::numeric_limits<double>::quiet_NaN();
  double recall = std::numeric_limits<double>::quiet_NaN();
  double f1 = std::numeric_limits<double>::quiet_NaN();
  double snr_db = std::numeric_limits<double>::quiet_NaN();
  double ssim = std::numeric_limits<double>::quiet_NaN();
  double psnr_db = std::numeric_limits<double>::quiet_NaN();
  double mse = std::numeric_limits<double>::quiet_NaN();
};

}  // namespace melmark
