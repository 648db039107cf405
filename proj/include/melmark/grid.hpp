// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "melmark/errors.hpp"

namespace melmark {

// Dense row-major H x W matrix of doubles. The unit used throughout for
// spectrogram-shaped data; values are whatever the producer says they are.
struct Grid {
  int h = 0;
  int w = 0;
  std::vector<double> v;

  Grid() = default;
  Grid(int height, int width, double fill = 0.0)
      : h(height), w(width), v(static_cast<size_t>(height) * width, fill) {
    require(height >= 0 && width >= 0, Errc::size, "negative grid dimensions");
  }

  bool empty() const { return v.empty(); }
  size_t size() const { return v.size(); }
  double& at(int i, int j) { return v[static_cast<size_t>(i) * w + j]; }
  double at(int i, int j) const { return v[static_cast<size_t>(i) * w + j]; }
  double* data() { return v.data(); }
  const double* data() const { return v.data(); }

  bool same_shape(const Grid& o) const { return h == o.h && w == o.w; }
};

inline double grid_min(const Grid& g) {
  return g.empty() ? 0.0 : *std::min_element(g.v.begin(), g.v.end());
}

inline double grid_max(const Grid& g) {
  return g.empty() ? 0.0 : *std::max_element(g.v.begin(), g.v.end());
}

inline double grid_mean(const Grid& g) {
  if (g.empty()) return 0.0;
  double s = 0.0;
  for (double x : g.v) s += x;
  return s / static_cast<double>(g.size());
}

inline bool grid_all_finite(const Grid& g) {
  for (double x : g.v)
    if (!std::isfinite(x)) return false;
  return true;
}

inline void grid_clamp(Grid& g, double lo, double hi) {
  for (double& x : g.v) x = std::clamp(x, lo, hi);
}

// Euclidean distance between same-shaped grids.
inline double grid_l2(const Grid& a, const Grid& b) {
  require(a.same_shape(b), Errc::size, "grid_l2: shape mismatch");
  double s = 0.0;
  for (size_t i = 0; i < a.size(); ++i) {
    double d = a.v[i] - b.v[i];
    s += d * d;
  }
  return std::sqrt(s);
}

inline double grid_mse(const Grid& a, const Grid& b) {
  require(a.same_shape(b), Errc::size, "grid_mse: shape mismatch");
  require(!a.empty(), Errc::size, "grid_mse: empty grids");
  double s = 0.0;
  for (size_t i = 0; i < a.size(); ++i) {
    double d = a.v[i] - b.v[i];
    s += d * d;
  }
  return s / static_cast<double>(a.size());
}

// ---- PGM (portable graymap) ----
// P5 binary and P2 ascii, maxval <= 255. Values returned raw in [0, maxval].

inline Grid read_pgm(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  require(f.good(), Errc::io, "cannot open PGM: " + path);
  std::string magic;
  f >> magic;
  require(magic == "P5" || magic == "P2", Errc::format, "not a PGM (P5/P2): " + path);
  auto next_int = [&f, &path]() {
    // Skip whitespace and '#' comment lines between header tokens.
    for (;;) {
      int c = f.peek();
      if (c == '#') {
        std::string line;
        std::getline(f, line);
      } else if (std::isspace(c)) {
        f.get();
      } else {
        break;
      }
    }
    long long x = -1;
    f >> x;
    require(f.good() && x >= 0, Errc::format, "bad PGM header: " + path);
    return x;
  };
  long long w = next_int(), h = next_int(), maxval = next_int();
  require(w > 0 && h > 0, Errc::format, "bad PGM dimensions: " + path);
  require(maxval > 0 && maxval <= 255, Errc::unsupported, "PGM maxval > 255: " + path);
  Grid g(static_cast<int>(h), static_cast<int>(w));
  if (magic == "P5") {
    f.get();  // single whitespace after maxval
    std::vector<uint8_t> buf(g.size());
    f.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    require(f.gcount() == static_cast<std::streamsize>(buf.size()), Errc::format,
            "truncated PGM data: " + path);
    for (size_t i = 0; i < buf.size(); ++i) g.v[i] = buf[i];
  } else {
    for (size_t i = 0; i < g.size(); ++i) {
      long long x;
      f >> x;
      require(!f.fail(), Errc::format, "truncated PGM data: " + path);
      g.v[i] = static_cast<double>(x);
    }
  }
  return g;
}

// Quantizes [lo, hi] to 8-bit and writes binary P5.
inline void write_pgm(const Grid& g, const std::string& path, double lo = -1.0,
                      double hi = 1.0) {
  require(!g.empty(), Errc::size, "write_pgm: empty grid");
  require(hi > lo, Errc::parameter, "write_pgm: hi must exceed lo");
  std::ofstream f(path, std::ios::binary);
  require(f.good(), Errc::io, "cannot write PGM: " + path);
  f << "P5\n" << g.w << " " << g.h << "\n255\n";
  std::vector<uint8_t> buf(g.size());
  for (size_t i = 0; i < g.size(); ++i) {
    double u = (g.v[i] - lo) / (hi - lo);
    buf[i] = static_cast<uint8_t>(std::lround(std::clamp(u, 0.0, 1.0) * 255.0));
  }
  f.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  require(f.good(), Errc::io, "write failed: " + path);
}

}  // namespace melmark
