// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Core>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "melmark/errors.hpp"
#include "melmark/rng.hpp"

namespace melmark {
namespace nn {

// C x H x W tensor, row-major within each channel plane.
template <typename T>
struct Tensor3 {
  int c = 0, h = 0, w = 0;
  std::vector<T> v;

  Tensor3() = default;
  Tensor3(int C, int H, int W) : c(C), h(H), w(W), v(static_cast<size_t>(C) * H * W, T(0)) {}

  size_t size() const { return v.size(); }
  T* plane(int ci) { return v.data() + static_cast<size_t>(ci) * h * w; }
  const T* plane(int ci) const { return v.data() + static_cast<size_t>(ci) * h * w; }
  T& at(int ci, int y, int x) { return v[(static_cast<size_t>(ci) * h + y) * w + x]; }
  T at(int ci, int y, int x) const { return v[(static_cast<size_t>(ci) * h + y) * w + x]; }

  void zero() { std::fill(v.begin(), v.end(), T(0)); }
};

// Name -> slice registry for one flat parameter vector.
struct ParamLayout {
  struct Entry {
    std::string name;
    size_t off = 0, len = 0;
  };
  std::vector<Entry> entries;
  size_t total = 0;

  size_t add(const std::string& name, size_t len) {
    const size_t off = total;
    entries.push_back({name, off, len});
    total += len;
    return off;
  }

  const Entry& find(const std::string& name) const {
    for (const auto& e : entries)
      if (e.name == name) return e;
    raise(Errc::index, "parameter slice not found: " + name);
  }
};

// Scratch buffers for the im2col GEMMs; one per thread of execution.
template <typename T>
struct Workspace {
  std::vector<T> k;   // im2col matrix
  std::vector<T> dk;  // gradient of the im2col matrix
};

template <typename T>
using MatRM = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapRM = Eigen::Map<MatRM<T>>;
template <typename T>
using CMapRM = Eigen::Map<const MatRM<T>>;

// ---- 3x3 same-padding convolution ----

struct Conv3x3 {
  int cin = 0, cout = 0;
  size_t w_off = 0, b_off = 0;  // weights [cout][cin][3][3], bias [cout]
};

inline Conv3x3 make_conv3x3(ParamLayout& layout, const std::string& name, int cin, int cout) {
  Conv3x3 c;
  c.cin = cin;
  c.cout = cout;
  c.w_off = layout.add(name + ".w", static_cast<size_t>(cout) * cin * 9);
  c.b_off = layout.add(name + ".b", static_cast<size_t>(cout));
  return c;
}

namespace detail {

// Fills k (row-major, [cin*9] x [h*w]) with shifted copies of x's planes;
// row r = ci*9 + ky*3 + kx holds x[ci][y+ky-1][x+kx-1], zero outside.
template <typename T>
void im2col(const Tensor3<T>& x, std::vector<T>& k) {
  const int h = x.h, w = x.w;
  const size_t hw = static_cast<size_t>(h) * w;
  k.assign(static_cast<size_t>(x.c) * 9 * hw, T(0));
  for (int ci = 0; ci < x.c; ++ci) {
    const T* src = x.plane(ci);
    for (int ky = 0; ky < 3; ++ky) {
      const int dy = ky - 1;
      for (int kx = 0; kx < 3; ++kx) {
        const int dx = kx - 1;
        T* dst = k.data() + (static_cast<size_t>(ci) * 9 + ky * 3 + kx) * hw;
        const int x_lo = dx < 0 ? 1 : 0;
        const int x_hi = dx > 0 ? w - 1 : w;  // exclusive
        const int len = x_hi - x_lo;
        if (len <= 0) continue;
        for (int y = 0; y < h; ++y) {
          const int sy = y + dy;
          if (sy < 0 || sy >= h) continue;
          std::copy_n(src + static_cast<size_t>(sy) * w + (x_lo + dx), len,
                      dst + static_cast<size_t>(y) * w + x_lo);
        }
      }
    }
  }
}

// Scatter-add transpose of im2col: dx[ci][y+dy][x+dx] += dk[r][y*w+x].
template <typename T>
void col2im_add(const std::vector<T>& dk, Tensor3<T>& dx) {
  const int h = dx.h, w = dx.w;
  const size_t hw = static_cast<size_t>(h) * w;
  for (int ci = 0; ci < dx.c; ++ci) {
    T* dst = dx.plane(ci);
    for (int ky = 0; ky < 3; ++ky) {
      const int dy = ky - 1;
      for (int kx = 0; kx < 3; ++kx) {
        const int dx_ = kx - 1;
        const T* src = dk.data() + (static_cast<size_t>(ci) * 9 + ky * 3 + kx) * hw;
        const int x_lo = dx_ < 0 ? 1 : 0;
        const int x_hi = dx_ > 0 ? w - 1 : w;
        const int len = x_hi - x_lo;
        if (len <= 0) continue;
        for (int y = 0; y < h; ++y) {
          const int sy = y + dy;
          if (sy < 0 || sy >= h) continue;
          const T* s = src + static_cast<size_t>(y) * w + x_lo;
          T* d = dst + static_cast<size_t>(sy) * w + (x_lo + dx_);
          for (int i = 0; i < len; ++i) d[i] += s[i];
        }
      }
    }
  }
}

}  // namespace detail

template <typename T>
void conv3x3_forward(const Conv3x3& c, const T* params, const Tensor3<T>& x, Tensor3<T>& y,
                     Workspace<T>& ws) {
  require(x.c == c.cin, Errc::size, "conv3x3: input channel mismatch");
  const size_t hw = static_cast<size_t>(x.h) * x.w;
  if (y.c != c.cout || y.h != x.h || y.w != x.w) y = Tensor3<T>(c.cout, x.h, x.w);
  detail::im2col(x, ws.k);
  const int R = c.cin * 9;
  CMapRM<T> W(params + c.w_off, c.cout, R);
  CMapRM<T> K(ws.k.data(), R, static_cast<Eigen::Index>(hw));
  MapRM<T> Y(y.v.data(), c.cout, static_cast<Eigen::Index>(hw));
  Y.noalias() = W * K;
  for (int co = 0; co < c.cout; ++co)
    Y.row(co).array() += params[c.b_off + co];
}

// Accumulates dW/db into grads, overwrites dx. `x` must be the forward input.
template <typename T>
void conv3x3_backward(const Conv3x3& c, const T* params, const Tensor3<T>& x,
                      const Tensor3<T>& dy, Tensor3<T>& dx, T* grads, Workspace<T>& ws) {
  const size_t hw = static_cast<size_t>(x.h) * x.w;
  const int R = c.cin * 9;
  detail::im2col(x, ws.k);
  CMapRM<T> K(ws.k.data(), R, static_cast<Eigen::Index>(hw));
  CMapRM<T> dY(dy.v.data(), c.cout, static_cast<Eigen::Index>(hw));
  MapRM<T> dW(grads + c.w_off, c.cout, R);
  dW.noalias() += dY * K.transpose();
  // Fixed-order scalar sum: vectorized reductions round differently depending
  // on the buffer's runtime alignment, which would break bit reproducibility.
  for (int co = 0; co < c.cout; ++co) {
    const T* row = dy.plane(co);
    T acc = T(0);
    for (size_t i = 0; i < hw; ++i) acc += row[i];
    grads[c.b_off + co] += acc;
  }

  ws.dk.resize(static_cast<size_t>(R) * hw);
  CMapRM<T> W(params + c.w_off, c.cout, R);
  MapRM<T> dK(ws.dk.data(), R, static_cast<Eigen::Index>(hw));
  dK.noalias() = W.transpose() * dY;
  if (dx.c != c.cin || dx.h != x.h || dx.w != x.w) dx = Tensor3<T>(c.cin, x.h, x.w);
  dx.zero();
  detail::col2im_add(ws.dk, dx);
}

// ---- dense layer ----

struct Linear {
  int in = 0, out = 0;
  size_t w_off = 0, b_off = 0;  // weights [out][in], bias [out]
};

inline Linear make_linear(ParamLayout& layout, const std::string& name, int in, int out) {
  Linear l;
  l.in = in;
  l.out = out;
  l.w_off = layout.add(name + ".w", static_cast<size_t>(out) * in);
  l.b_off = layout.add(name + ".b", static_cast<size_t>(out));
  return l;
}

template <typename T>
void linear_forward(const Linear& l, const T* params, const T* x, T* y) {
  for (int o = 0; o < l.out; ++o) {
    T acc = params[l.b_off + o];
    const T* w = params + l.w_off + static_cast<size_t>(o) * l.in;
    for (int i = 0; i < l.in; ++i) acc += w[i] * x[i];
    y[o] = acc;
  }
}

// Accumulates dW/db; writes dx when non-null (overwrite).
template <typename T>
void linear_backward(const Linear& l, const T* params, const T* x, const T* dy, T* dx,
                     T* grads) {
  if (dx)
    for (int i = 0; i < l.in; ++i) dx[i] = T(0);
  for (int o = 0; o < l.out; ++o) {
    const T g = dy[o];
    grads[l.b_off + o] += g;
    T* dw = grads + l.w_off + static_cast<size_t>(o) * l.in;
    const T* w = params + l.w_off + static_cast<size_t>(o) * l.in;
    for (int i = 0; i < l.in; ++i) {
      dw[i] += g * x[i];
      if (dx) dx[i] += g * w[i];
    }
  }
}

// ---- elementwise and shape ops ----

template <typename T>
void silu_forward(const T* x, T* y, size_t n) {
  for (size_t i = 0; i < n; ++i) {
    const T s = T(1) / (T(1) + std::exp(-x[i]));
    y[i] = x[i] * s;
  }
}

template <typename T>
void silu_backward(const T* x, const T* dy, T* dx, size_t n) {
  for (size_t i = 0; i < n; ++i) {
    const T s = T(1) / (T(1) + std::exp(-x[i]));
    dx[i] = dy[i] * s * (T(1) + x[i] * (T(1) - s));
  }
}

template <typename T>
void add_channel_bias(Tensor3<T>& t, const T* bias) {
  const size_t hw = static_cast<size_t>(t.h) * t.w;
  for (int c = 0; c < t.c; ++c) {
    T* p = t.plane(c);
    for (size_t i = 0; i < hw; ++i) p[i] += bias[c];
  }
}

template <typename T>
void channel_bias_grad(const Tensor3<T>& dy, T* dbias) {
  const size_t hw = static_cast<size_t>(dy.h) * dy.w;
  for (int c = 0; c < dy.c; ++c) {
    T acc = T(0);
    const T* p = dy.plane(c);
    for (size_t i = 0; i < hw; ++i) acc += p[i];
    dbias[c] = acc;
  }
}

// Nearest-neighbor 2x decimation: keeps (2i, 2j).
template <typename T>
Tensor3<T> down2(const Tensor3<T>& x) {
  require(x.h % 2 == 0 && x.w % 2 == 0, Errc::size, "down2: dimensions must be even");
  Tensor3<T> y(x.c, x.h / 2, x.w / 2);
  for (int c = 0; c < x.c; ++c)
    for (int i = 0; i < y.h; ++i)
      for (int j = 0; j < y.w; ++j) y.at(c, i, j) = x.at(c, 2 * i, 2 * j);
  return y;
}

template <typename T>
void down2_backward(const Tensor3<T>& dy, Tensor3<T>& dx) {
  dx.zero();
  for (int c = 0; c < dy.c; ++c)
    for (int i = 0; i < dy.h; ++i)
      for (int j = 0; j < dy.w; ++j) dx.at(c, 2 * i, 2 * j) = dy.at(c, i, j);
}

// Nearest-neighbor 2x upsampling.
template <typename T>
Tensor3<T> up2(const Tensor3<T>& x) {
  Tensor3<T> y(x.c, x.h * 2, x.w * 2);
  for (int c = 0; c < x.c; ++c)
    for (int i = 0; i < y.h; ++i)
      for (int j = 0; j < y.w; ++j) y.at(c, i, j) = x.at(c, i / 2, j / 2);
  return y;
}

template <typename T>
void up2_backward(const Tensor3<T>& dy, Tensor3<T>& dx) {
  dx.zero();
  for (int c = 0; c < dy.c; ++c)
    for (int i = 0; i < dy.h; ++i)
      for (int j = 0; j < dy.w; ++j) dx.at(c, i / 2, j / 2) += dy.at(c, i, j);
}

template <typename T>
Tensor3<T> concat_channels(const Tensor3<T>& a, const Tensor3<T>& b) {
  require(a.h == b.h && a.w == b.w, Errc::size, "concat: spatial mismatch");
  Tensor3<T> y(a.c + b.c, a.h, a.w);
  std::copy(a.v.begin(), a.v.end(), y.v.begin());
  std::copy(b.v.begin(), b.v.end(), y.v.begin() + a.v.size());
  return y;
}

template <typename T>
void split_channels(const Tensor3<T>& dy, Tensor3<T>& da, Tensor3<T>& db) {
  std::copy(dy.v.begin(), dy.v.begin() + da.v.size(), da.v.begin());
  std::copy(dy.v.begin() + da.v.size(), dy.v.end(), db.v.begin());
}

// Sinusoidal timestep embedding: sin half then cos half, geometric frequencies.
template <typename T>
std::vector<T> time_embedding(int t, int dim) {
  require(dim >= 2 && dim % 2 == 0, Errc::parameter, "time_embedding: dim must be even");
  const int half = dim / 2;
  std::vector<T> e(dim);
  for (int i = 0; i < half; ++i) {
    const double freq = std::exp(-std::log(10000.0) * i / (half - 1));
    e[i] = static_cast<T>(std::sin(t * freq));
    e[half + i] = static_cast<T>(std::cos(t * freq));
  }
  return e;
}

// ---- init and optimization ----

template <typename T>
void he_init(T* w, size_t n, size_t fan_in, Rng& rng) {
  const double std = std::sqrt(2.0 / static_cast<double>(fan_in));
  for (size_t i = 0; i < n; ++i) w[i] = static_cast<T>(std * rng.normal());
}

template <typename T>
struct AdamState {
  std::vector<T> m, v;
  int64_t step = 0;
};

template <typename T>
void adam_step(std::vector<T>& w, const std::vector<T>& g, AdamState<T>& st, double lr,
               double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8) {
  require(w.size() == g.size(), Errc::size, "adam: size mismatch");
  if (st.m.empty()) {
    st.m.assign(w.size(), T(0));
    st.v.assign(w.size(), T(0));
  }
  require(st.m.size() == w.size(), Errc::size, "adam: moment size mismatch");
  ++st.step;
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(st.step));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(st.step));
  for (size_t i = 0; i < w.size(); ++i) {
    const double gi = g[i];
    st.m[i] = static_cast<T>(beta1 * st.m[i] + (1.0 - beta1) * gi);
    st.v[i] = static_cast<T>(beta2 * st.v[i] + (1.0 - beta2) * gi * gi);
    const double mhat = st.m[i] / bc1;
    const double vhat = st.v[i] / bc2;
    w[i] -= static_cast<T>(lr * mhat / (std::sqrt(vhat) + eps));
  }
}

template <typename T>
void ema_update(std::vector<T>& ema, const std::vector<T>& w, double decay) {
  require(ema.size() == w.size(), Errc::size, "ema: size mismatch");
  for (size_t i = 0; i < w.size(); ++i)
    ema[i] = static_cast<T>(decay * ema[i] + (1.0 - decay) * w[i]);
}

}  // namespace nn
}  // namespace melmark
