// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <complex>
#include <numbers>
#include <vector>

#include "melmark/errors.hpp"

namespace melmark {

using cd = std::complex<double>;

inline bool is_pow2(size_t n) { return n != 0 && (n & (n - 1)) == 0; }

// In-place iterative radix-2 FFT. inverse=true applies the 1/N factor.
inline void fft(std::vector<cd>& a, bool inverse = false) {
  const size_t n = a.size();
  require(is_pow2(n), Errc::parameter, "fft: length must be a power of two");
  if (n <= 1) return;

  // Bit-reversal permutation.
  for (size_t i = 1, j = 0; i < n; ++i) {
    size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }

  for (size_t len = 2; len <= n; len <<= 1) {
    double ang = 2.0 * std::numbers::pi / static_cast<double>(len) * (inverse ? 1.0 : -1.0);
    cd wlen(std::cos(ang), std::sin(ang));
    for (size_t i = 0; i < n; i += len) {
      cd w(1.0, 0.0);
      for (size_t j = 0; j < len / 2; ++j) {
        cd u = a[i + j];
        cd t = a[i + j + len / 2] * w;
        a[i + j] = u + t;
        a[i + j + len / 2] = u - t;
        w *= wlen;
      }
    }
  }
  if (inverse) {
    for (cd& x : a) x /= static_cast<double>(n);
  }
}

// Real signal -> first n/2+1 bins of its DFT.
inline std::vector<cd> rfft(const std::vector<double>& x) {
  std::vector<cd> a(x.begin(), x.end());
  fft(a, false);
  a.resize(x.size() / 2 + 1);
  return a;
}

// Hermitian completion of n/2+1 bins -> real signal of length n.
inline std::vector<double> irfft(const std::vector<cd>& spec, size_t n) {
  require(is_pow2(n), Errc::parameter, "irfft: length must be a power of two");
  require(spec.size() == n / 2 + 1, Errc::size, "irfft: expected n/2+1 bins");
  std::vector<cd> a(n);
  for (size_t k = 0; k <= n / 2; ++k) a[k] = spec[k];
  for (size_t k = n / 2 + 1; k < n; ++k) a[k] = std::conj(spec[n - k]);
  fft(a, true);
  std::vector<double> out(n);
  for (size_t i = 0; i < n; ++i) out[i] = a[i].real();
  return out;
}

}  // namespace melmark
