// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "melmark/errors.hpp"
#include "melmark/grid.hpp"

namespace melmark {

// Variance schedule plus the per-step shift gains k_t that steer blended
// initial noise into the watermark distribution. Arrays are sized T+1 and
// indexed by timestep t in 1..T directly; index 0 carries the boundary
// conventions alpha_bar[0] = 1, k[0] = 0, sqrt(1 - alpha_bar[0]) = 0.
struct DiffusionSchedule {
  int T = 0;
  double beta_start = 0.0;
  double beta_end = 0.0;
  std::vector<double> beta;        // beta[t], t in 1..T
  std::vector<double> alpha;       // 1 - beta[t]
  std::vector<double> alpha_bar;   // prod_{s<=t} alpha[s]
  std::vector<double> sqrt_ab;     // sqrt(alpha_bar[t])
  std::vector<double> sqrt_1mab;   // sqrt(1 - alpha_bar[t])
  std::vector<double> k;           // shift gains

  void check_t(int t) const {
    require(t >= 1 && t <= T, Errc::index,
            "timestep " + std::to_string(t) + " outside 1.." + std::to_string(T));
  }
};

// Endpoint-inclusive linear beta ramp. T = 1 degenerates to beta_start.
// The shift gains satisfy the forward recurrence
//   k_t + sqrt(alpha_t) * k_{t-1} + ... collapses to
//   sum_{i<=t} (prod_{j=i+1..t} sqrt(alpha_j)) k_i = sqrt(1 - alpha_bar_t),
// whose solution in closed form is
//   k_t = sqrt(1 - alpha_bar_t) - sqrt(alpha_t) * sqrt(1 - alpha_bar_{t-1}).
// This makes the t-step marginal of the shifted kernel
//   N(sqrt(alpha_bar_t) x_0 + sqrt(1 - alpha_bar_t) mu, (1 - alpha_bar_t) gamma^2 I).
inline DiffusionSchedule linear_schedule(int T, double beta_start = 1e-4,
                                         double beta_end = 0.02) {
  require(T >= 1, Errc::parameter, "schedule: T must be >= 1");
  require(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0, Errc::parameter,
          "schedule: need 0 < beta_start <= beta_end < 1");
  DiffusionSchedule s;
  s.T = T;
  s.beta_start = beta_start;
  s.beta_end = beta_end;
  s.beta.assign(T + 1, 0.0);
  s.alpha.assign(T + 1, 1.0);
  s.alpha_bar.assign(T + 1, 1.0);
  s.sqrt_ab.assign(T + 1, 1.0);
  s.sqrt_1mab.assign(T + 1, 0.0);
  s.k.assign(T + 1, 0.0);
  for (int t = 1; t <= T; ++t) {
    s.beta[t] = (T == 1) ? beta_start
                         : beta_start + (beta_end - beta_start) * (t - 1) / double(T - 1);
    s.alpha[t] = 1.0 - s.beta[t];
    s.alpha_bar[t] = s.alpha_bar[t - 1] * s.alpha[t];
    s.sqrt_ab[t] = std::sqrt(s.alpha_bar[t]);
    s.sqrt_1mab[t] = std::sqrt(1.0 - s.alpha_bar[t]);
    s.k[t] = s.sqrt_1mab[t] - std::sqrt(s.alpha[t]) * s.sqrt_1mab[t - 1];
  }
  return s;
}

// Literal O(T^2) forward substitution of the defining recurrence; kept as an
// independent cross-check of the closed form (tests only).
inline std::vector<double> solve_k_forward_substitution(const DiffusionSchedule& s) {
  std::vector<double> k(s.T + 1, 0.0);
  for (int t = 1; t <= s.T; ++t) {
    double carried = 0.0;  // sum_{i<t} (prod_{j=i+1..t} sqrt(alpha_j)) k_i
    for (int i = 1; i < t; ++i) {
      double p = 1.0;
      for (int j = i + 1; j <= t; ++j) p *= std::sqrt(s.alpha[j]);
      carried += p * k[i];
    }
    k[t] = s.sqrt_1mab[t] - carried;
  }
  return k;
}

// Residual of the recurrence at step t for gains kv (0 when kv solves it).
inline double k_recurrence_residual(const DiffusionSchedule& s, const std::vector<double>& kv,
                                    int t) {
  s.check_t(t);
  double acc = 0.0;
  for (int i = 1; i <= t; ++i) {
    double p = 1.0;
    for (int j = i + 1; j <= t; ++j) p *= std::sqrt(s.alpha[j]);
    acc += p * kv[i];
  }
  return acc - s.sqrt_1mab[t];
}

// Coefficients of the reverse-posterior mean
//   E[x_{t-1} | x_t, x_0] = c_xt * x_t + c_x0 * x_0 + c_mu * mu,
// with variance var_scale * gamma^2 (gamma = 1, mu = 0 gives the benign
// posterior). Derived by Gaussian conditioning of the shifted forward kernel
// against the shifted marginal of x_{t-1}.
struct PosteriorCoeffs {
  double c_xt = 0.0;
  double c_x0 = 0.0;
  double c_mu = 0.0;
  double var_scale = 0.0;  // (1 - alpha_bar_{t-1}) beta_t / (1 - alpha_bar_t)
};

inline PosteriorCoeffs posterior_coeffs(const DiffusionSchedule& s, int t) {
  s.check_t(t);
  const double ab_t = s.alpha_bar[t];
  const double ab_p = s.alpha_bar[t - 1];
  const double one_m_abt = 1.0 - ab_t;
  const double sqrt_at = std::sqrt(s.alpha[t]);
  PosteriorCoeffs c;
  if (t == 1) {
    // x_0 is fully identified: mean collapses onto it, no noise.
    c.c_xt = 0.0;
    c.c_x0 = 1.0;
    c.c_mu = 0.0;
    c.var_scale = 0.0;
    return c;
  }
  c.c_xt = sqrt_at * (1.0 - ab_p) / one_m_abt;
  c.c_x0 = std::sqrt(ab_p) * s.beta[t] / one_m_abt;
  c.c_mu = (s.sqrt_1mab[t - 1] * s.beta[t] - sqrt_at * (1.0 - ab_p) * s.k[t]) / one_m_abt;
  c.var_scale = (1.0 - ab_p) * s.beta[t] / one_m_abt;
  return c;
}

// Per-cell watermark parameterization: blend strength gamma and the shift
// field mu = (1 - gamma) * delta on masked cells, exactly 0 elsewhere.
// gamma = 1 with zero mu reproduces the benign process bit for bit.
struct WatermarkParams {
  double gamma = 1.0;
  Grid mu;     // shift per cell (0 outside the mask)
  Grid delta;  // trigger feature, kept for diagnostics
  Grid mask;   // 1 inside the watermark region

  // Effective per-cell blend: gamma on masked cells, 1 elsewhere.
  double gamma_at(size_t i) const { return mask.v[i] != 0.0 ? gamma : 1.0; }
  double mu_at(size_t i) const { return mu.v[i]; }
};

inline WatermarkParams make_watermark_params(double gamma, const Grid& delta,
                                             const Grid& mask) {
  require(gamma >= 0.0 && gamma <= 1.0, Errc::parameter, "gamma must be in [0, 1]");
  require(delta.same_shape(mask), Errc::size, "delta/mask shape mismatch");
  WatermarkParams w;
  w.gamma = gamma;
  w.delta = delta;
  w.mask = mask;
  w.mu = Grid(delta.h, delta.w, 0.0);
  for (size_t i = 0; i < delta.size(); ++i) {
    // Force an exact +0.0 when gamma == 1 so the benign equivalence is bitwise.
    w.mu.v[i] = (mask.v[i] != 0.0 && gamma != 1.0) ? (1.0 - gamma) * delta.v[i] : 0.0;
  }
  return w;
}

// Scalar (1x1) parameterization used by the analytic test harnesses.
inline WatermarkParams scalar_watermark(double gamma, double delta) {
  Grid d(1, 1, delta), m(1, 1, 1.0);
  return make_watermark_params(gamma, d, m);
}

}  // namespace melmark
