// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <string>
#include <vector>

#include "melmark/audio.hpp"
#include "melmark/errors.hpp"
#include "melmark/fft.hpp"
#include "melmark/grid.hpp"

namespace melmark {

// Front-end configuration. Spectrograms produced by audio_to_mel are square:
// the frame count is fitted to n_mels so every unit-normalized mel is
// n_mels x n_mels regardless of small length differences between clips.
struct MelConfig {
  int sample_rate = 16000;
  int n_fft = 1024;   // power of two
  int hop = 250;      // 1 s at 16 kHz -> 64 frames
  int n_mels = 64;
  double f_min = 0.0;
  double f_max = 8000.0;
  double db_floor = -80.0;  // dynamic range; 0 dB is a full-scale sine
  int griffin_lim_iters = 32;

  int width() const { return n_mels; }

  // High-resolution preset (256 x 256 grids from 1 s clips).
  static MelConfig hires() {
    MelConfig c;
    c.n_fft = 2048;
    c.hop = 63;
    c.n_mels = 256;
    return c;
  }

  void validate() const {
    require(sample_rate > 0, Errc::parameter, "mel: sample_rate must be positive");
    require(is_pow2(static_cast<size_t>(n_fft)), Errc::parameter,
            "mel: n_fft must be a power of two");
    require(hop > 0 && hop <= n_fft, Errc::parameter, "mel: hop must be in (0, n_fft]");
    require(n_mels >= 1, Errc::parameter, "mel: n_mels must be >= 1");
    require(f_min >= 0.0 && f_max > f_min, Errc::parameter, "mel: need 0 <= f_min < f_max");
    require(f_max <= sample_rate / 2.0 + 1e-9, Errc::parameter,
            "mel: f_max exceeds Nyquist");
    require(db_floor < 0.0, Errc::parameter, "mel: db_floor must be negative");
    require(griffin_lim_iters >= 0, Errc::parameter, "mel: griffin_lim_iters must be >= 0");
  }
};

// Value convention of a spectrogram grid.
enum class MelNorm { power, db, unit };

struct MelSpectrogram {
  Grid values;
  MelNorm norm = MelNorm::unit;
};

// ---- Slaney mel scale: linear below 1 kHz, logarithmic above ----

inline double hz_to_mel(double hz) {
  constexpr double f_sp = 200.0 / 3.0;
  constexpr double min_log_hz = 1000.0;
  const double min_log_mel = min_log_hz / f_sp;
  const double logstep = std::log(6.4) / 27.0;
  if (hz < min_log_hz) return hz / f_sp;
  return min_log_mel + std::log(hz / min_log_hz) / logstep;
}

inline double mel_to_hz(double mel) {
  constexpr double f_sp = 200.0 / 3.0;
  constexpr double min_log_hz = 1000.0;
  const double min_log_mel = min_log_hz / f_sp;
  const double logstep = std::log(6.4) / 27.0;
  if (mel < min_log_mel) return mel * f_sp;
  return min_log_hz * std::exp(logstep * (mel - min_log_mel));
}

// Triangular mel filters over rfft bins, area-normalized (each triangle
// integrates to ~1 in Hz). Rows: n_mels, cols: n_fft/2 + 1.
inline Grid build_mel_filterbank(const MelConfig& cfg) {
  cfg.validate();
  const int n_bins = cfg.n_fft / 2 + 1;
  const double mel_lo = hz_to_mel(cfg.f_min);
  const double mel_hi = hz_to_mel(cfg.f_max);
  std::vector<double> pts(cfg.n_mels + 2);
  for (int m = 0; m < cfg.n_mels + 2; ++m)
    pts[m] = mel_to_hz(mel_lo + (mel_hi - mel_lo) * m / (cfg.n_mels + 1));

  Grid fb(cfg.n_mels, n_bins, 0.0);
  const double bin_hz = static_cast<double>(cfg.sample_rate) / cfg.n_fft;
  for (int m = 0; m < cfg.n_mels; ++m) {
    const double lo = pts[m], c = pts[m + 1], hi = pts[m + 2];
    require(c > lo && hi > c, Errc::parameter, "mel: collapsed filter (n_mels too large)");
    const double norm = 2.0 / (hi - lo);
    for (int k = 0; k < n_bins; ++k) {
      const double f = k * bin_hz;
      const double up = (f - lo) / (c - lo);
      const double down = (hi - f) / (hi - c);
      const double t = std::min(up, down);
      if (t > 0.0) fb.at(m, k) = t * norm;
    }
  }
  return fb;
}

// Frequency edges (lo, hi) of one filter row; used to reason about bands.
inline std::pair<double, double> mel_band_edges(const MelConfig& cfg, int row) {
  require(row >= 0 && row < cfg.n_mels, Errc::index, "mel_band_edges: row out of range");
  const double mel_lo = hz_to_mel(cfg.f_min);
  const double mel_hi = hz_to_mel(cfg.f_max);
  auto pt = [&](int m) { return mel_to_hz(mel_lo + (mel_hi - mel_lo) * m / (cfg.n_mels + 1)); };
  return {pt(row), pt(row + 2)};
}

inline double mel_band_center(const MelConfig& cfg, int row) {
  const double mel_lo = hz_to_mel(cfg.f_min);
  const double mel_hi = hz_to_mel(cfg.f_max);
  return mel_to_hz(mel_lo + (mel_hi - mel_lo) * (row + 1) / (cfg.n_mels + 1));
}

// ---- STFT ----

// Complex spectrogram, frame-major storage.
struct ComplexSpec {
  int n_bins = 0;
  int n_frames = 0;
  std::vector<cd> v;

  ComplexSpec() = default;
  ComplexSpec(int bins, int frames)
      : n_bins(bins), n_frames(frames), v(static_cast<size_t>(bins) * frames) {}
  cd& at(int frame, int bin) { return v[static_cast<size_t>(frame) * n_bins + bin]; }
  cd at(int frame, int bin) const { return v[static_cast<size_t>(frame) * n_bins + bin]; }
};

namespace detail {

inline std::vector<double> hann_window(int n) {
  std::vector<double> w(n);
  for (int i = 0; i < n; ++i)
    w[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * i / n);
  return w;
}

// Reflected read: index mirrored at both ends (no edge duplication).
inline double reflect_at(const std::vector<double>& x, long long idx) {
  const long long n = static_cast<long long>(x.size());
  while (idx < 0 || idx >= n) {
    if (idx < 0) idx = -idx;
    if (idx >= n) idx = 2 * n - 2 - idx;
  }
  return x[static_cast<size_t>(idx)];
}

}  // namespace detail

// Centered STFT with a periodic Hann window and reflect padding.
// Frame i covers samples i*hop - n_fft/2 .. i*hop + n_fft/2 - 1;
// the frame count is ceil(len / hop).
inline ComplexSpec stft(const AudioClip& clip, const MelConfig& cfg) {
  cfg.validate();
  require(clip.samples.size() >= static_cast<size_t>(cfg.n_fft), Errc::size,
          "stft: clip shorter than n_fft");
  const int n = cfg.n_fft;
  const int half = n / 2;
  const long long len = static_cast<long long>(clip.samples.size());
  const int frames = static_cast<int>((len + cfg.hop - 1) / cfg.hop);
  const std::vector<double> win = detail::hann_window(n);

  ComplexSpec spec(n / 2 + 1, frames);
  std::vector<cd> buf(n);
  for (int i = 0; i < frames; ++i) {
    const long long c = static_cast<long long>(i) * cfg.hop;
    for (int t = 0; t < n; ++t)
      buf[t] = detail::reflect_at(clip.samples, c - half + t) * win[t];
    fft(buf, false);
    for (int k = 0; k <= n / 2; ++k) spec.at(i, k) = buf[k];
  }
  return spec;
}

// Inverse STFT: windowed overlap-add normalized by the window-square sum.
// Returns out_len samples (signal position 0 aligns with frame-0 center).
inline std::vector<double> istft(const ComplexSpec& spec, const MelConfig& cfg,
                                 size_t out_len) {
  cfg.validate();
  const int n = cfg.n_fft;
  const int half = n / 2;
  require(spec.n_bins == n / 2 + 1, Errc::size, "istft: bin count mismatch");
  const std::vector<double> win = detail::hann_window(n);

  const size_t pad_len = static_cast<size_t>(spec.n_frames - 1) * cfg.hop + n;
  std::vector<double> acc(pad_len, 0.0), wss(pad_len, 0.0);
  std::vector<cd> bins(spec.n_bins);
  for (int i = 0; i < spec.n_frames; ++i) {
    for (int k = 0; k < spec.n_bins; ++k) bins[k] = spec.at(i, k);
    std::vector<double> frame = irfft(bins, static_cast<size_t>(n));
    const size_t base = static_cast<size_t>(i) * cfg.hop;
    for (int t = 0; t < n; ++t) {
      acc[base + t] += frame[t] * win[t];
      wss[base + t] += win[t] * win[t];
    }
  }
  std::vector<double> out(out_len, 0.0);
  for (size_t s = 0; s < out_len; ++s) {
    const size_t p = s + half;  // frame centers sit at i*hop + half in acc
    if (p < pad_len && wss[p] > 1e-10) out[s] = acc[p] / wss[p];
  }
  return out;
}

// Full-scale reference: a peak-amplitude sine maps to 0 dB.
inline double stft_power_ref(const MelConfig& cfg) {
  const std::vector<double> win = detail::hann_window(cfg.n_fft);
  double s = 0.0;
  for (double x : win) s += x;
  return (s / 2.0) * (s / 2.0);
}

// ---- forward / inverse mel pipeline ----

// Unit-normalized mel spectrogram in [-1, 1]: power -> mel pooling -> dB
// clipped to [db_floor, 0] -> affine map. Natural frame count is fitted to
// width() by center-crop or right-pad at the floor value.
inline MelSpectrogram audio_to_mel(const AudioClip& clip, const MelConfig& cfg) {
  cfg.validate();
  require(clip.sample_rate == cfg.sample_rate, Errc::parameter,
          "audio_to_mel: clip sample rate differs from config");
  const ComplexSpec spec = stft(clip, cfg);
  const Grid fb = build_mel_filterbank(cfg);
  const double ref = stft_power_ref(cfg);
  const double eps = std::pow(10.0, cfg.db_floor / 10.0);
  const int n_bins = spec.n_bins;

  Grid natural(cfg.n_mels, spec.n_frames, 0.0);
  std::vector<double> power(n_bins);
  for (int f = 0; f < spec.n_frames; ++f) {
    for (int k = 0; k < n_bins; ++k) power[k] = std::norm(spec.at(f, k)) / ref;
    for (int m = 0; m < cfg.n_mels; ++m) {
      double s = 0.0;
      for (int k = 0; k < n_bins; ++k) s += fb.at(m, k) * power[k];
      double db = 10.0 * std::log10(s + eps);
      db = std::clamp(db, cfg.db_floor, 0.0);
      natural.at(m, f) = 2.0 * (db - cfg.db_floor) / (0.0 - cfg.db_floor) - 1.0;
    }
  }

  const int w = cfg.width();
  Grid fitted(cfg.n_mels, w, -1.0);
  if (natural.w >= w) {
    const int start = (natural.w - w) / 2;
    for (int m = 0; m < cfg.n_mels; ++m)
      for (int f = 0; f < w; ++f) fitted.at(m, f) = natural.at(m, start + f);
  } else {
    for (int m = 0; m < cfg.n_mels; ++m)
      for (int f = 0; f < natural.w; ++f) fitted.at(m, f) = natural.at(m, f);
  }
  return MelSpectrogram{std::move(fitted), MelNorm::unit};
}

// Relative spectral distance between a target magnitude and a signal.
inline double spectral_convergence(const Grid& target_mag, const std::vector<double>& x,
                                   const MelConfig& cfg) {
  AudioClip c{x, cfg.sample_rate};
  const ComplexSpec s = stft(c, cfg);
  require(s.n_frames >= target_mag.w && s.n_bins == target_mag.h, Errc::size,
          "spectral_convergence: shape mismatch");
  double num = 0.0, den = 0.0;
  for (int f = 0; f < target_mag.w; ++f)
    for (int k = 0; k < target_mag.h; ++k) {
      const double d = target_mag.at(k, f) - std::abs(s.at(f, k));
      num += d * d;
      den += target_mag.at(k, f) * target_mag.at(k, f);
    }
  return den > 0.0 ? std::sqrt(num / den) : 0.0;
}

// Plain Griffin-Lim (no momentum): alternating projections between the
// magnitude constraint and the set of consistent spectrograms. The spectral
// convergence residual is non-increasing per iteration; `residuals`, when
// given, receives iters+1 values (zero-phase start, then each iteration).
inline std::vector<double> griffin_lim(const Grid& mag, const MelConfig& cfg, int iters,
                                       std::vector<double>* residuals = nullptr) {
  require(mag.h == cfg.n_fft / 2 + 1, Errc::size, "griffin_lim: magnitude bin count mismatch");
  const size_t out_len = static_cast<size_t>(mag.w) * cfg.hop;
  ComplexSpec s(mag.h, mag.w);
  for (int f = 0; f < mag.w; ++f)
    for (int k = 0; k < mag.h; ++k) s.at(f, k) = cd(mag.at(k, f), 0.0);

  std::vector<double> x = istft(s, cfg, out_len);
  if (residuals) {
    residuals->clear();
    residuals->push_back(spectral_convergence(mag, x, cfg));
  }
  for (int it = 0; it < iters; ++it) {
    const ComplexSpec proj = stft(AudioClip{x, cfg.sample_rate}, cfg);
    for (int f = 0; f < mag.w; ++f)
      for (int k = 0; k < mag.h; ++k) {
        const cd p = proj.at(f, k);
        const double a = std::abs(p);
        s.at(f, k) = a > 1e-30 ? p / a * mag.at(k, f) : cd(mag.at(k, f), 0.0);
      }
    x = istft(s, cfg, out_len);
    if (residuals) residuals->push_back(spectral_convergence(mag, x, cfg));
  }
  return x;
}

// Inverts a unit mel: dB -> power -> linear bins via the transpose-normalized
// pseudo-inverse of the filterbank -> Griffin-Lim phase recovery. Output is
// width*hop samples, peak-normalized to 0.9.
inline AudioClip mel_to_audio(const MelSpectrogram& mel, const MelConfig& cfg) {
  cfg.validate();
  require(mel.norm == MelNorm::unit, Errc::parameter, "mel_to_audio: expected unit norm");
  require(mel.values.h == cfg.n_mels, Errc::size, "mel_to_audio: n_mels mismatch");
  require(mel.values.w >= 1, Errc::size, "mel_to_audio: empty spectrogram");

  const Grid fb = build_mel_filterbank(cfg);
  const int n_bins = fb.w;
  const double ref = stft_power_ref(cfg);
  const double eps = std::pow(10.0, cfg.db_floor / 10.0);

  std::vector<double> colsum(n_bins, 0.0);
  for (int m = 0; m < cfg.n_mels; ++m)
    for (int k = 0; k < n_bins; ++k) colsum[k] += fb.at(m, k);

  Grid mag(n_bins, mel.values.w, 0.0);
  std::vector<double> pvec(cfg.n_mels);
  for (int f = 0; f < mel.values.w; ++f) {
    for (int m = 0; m < cfg.n_mels; ++m) {
      const double u = std::clamp(mel.values.at(m, f), -1.0, 1.0);
      const double db = (u + 1.0) * 0.5 * (0.0 - cfg.db_floor) + cfg.db_floor;
      pvec[m] = std::max(std::pow(10.0, db / 10.0) - eps, 0.0);
    }
    for (int k = 0; k < n_bins; ++k) {
      if (colsum[k] <= 1e-12) continue;
      double acc = 0.0;
      for (int m = 0; m < cfg.n_mels; ++m) acc += fb.at(m, k) * pvec[m];
      mag.at(k, f) = std::sqrt(std::max(acc / colsum[k], 0.0) * ref);
    }
  }

  std::vector<double> x = griffin_lim(mag, cfg, cfg.griffin_lim_iters);
  double peak = 0.0;
  for (double s : x) peak = std::max(peak, std::abs(s));
  if (peak > 1e-12) {
    const double gain = 0.9 / peak;
    for (double& s : x) s *= gain;
  }
  return AudioClip{std::move(x), cfg.sample_rate};
}

}  // namespace melmark
