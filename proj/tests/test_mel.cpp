// SPDX-License-Identifier: Apache-2.0
#include <catch2/catch_amalgamated.hpp>

#include <numbers>

#include "melmark/mel.hpp"
#include "melmark/rng.hpp"

using namespace melmark;

namespace {

AudioClip sine(double freq, double amp, int sr = 16000, double seconds = 1.0) {
  AudioClip c;
  c.sample_rate = sr;
  c.samples.resize(static_cast<size_t>(sr * seconds));
  for (size_t i = 0; i < c.samples.size(); ++i)
    c.samples[i] = amp * std::sin(2.0 * std::numbers::pi * freq * i / sr);
  return c;
}

}  // namespace

TEST_CASE("slaney scale: linear below 1 kHz, log pin points", "[mel]") {
  REQUIRE(hz_to_mel(0.0) == Catch::Approx(0.0).margin(1e-12));
  REQUIRE(hz_to_mel(1000.0) == Catch::Approx(15.0).epsilon(1e-12));
  REQUIRE(hz_to_mel(500.0) == Catch::Approx(7.5).epsilon(1e-12));
  // One log step of 27 above 1 kHz spans a factor 6.4.
  REQUIRE(hz_to_mel(6400.0) == Catch::Approx(42.0).epsilon(1e-12));
  for (double f : {10.0, 123.0, 999.0, 1001.0, 2345.0, 7999.0})
    REQUIRE(mel_to_hz(hz_to_mel(f)) == Catch::Approx(f).epsilon(1e-10));
}

TEST_CASE("filterbank: triangles are area-normalized", "[mel]") {
  MelConfig cfg;
  Grid fb = build_mel_filterbank(cfg);
  REQUIRE(fb.h == 64);
  REQUIRE(fb.w == 513);
  const double bin_hz = cfg.sample_rate / double(cfg.n_fft);
  double mean_area = 0.0;
  for (int m = 0; m < fb.h; ++m) {
    double area = 0.0;
    for (int k = 0; k < fb.w; ++k) area += fb.at(m, k);
    area *= bin_hz;
    REQUIRE(area == Catch::Approx(1.0).margin(0.12));  // discretization slack
    mean_area += area;
  }
  mean_area /= fb.h;
  REQUIRE(mean_area == Catch::Approx(1.0).margin(0.03));
}

TEST_CASE("filterbank: band edges are ordered and span [f_min, f_max]", "[mel]") {
  MelConfig cfg;
  auto first = mel_band_edges(cfg, 0);
  auto last = mel_band_edges(cfg, cfg.n_mels - 1);
  REQUIRE(first.first == Catch::Approx(cfg.f_min).margin(1e-9));
  REQUIRE(last.second == Catch::Approx(cfg.f_max).epsilon(1e-9));
  for (int m = 0; m + 1 < cfg.n_mels; ++m) {
    REQUIRE(mel_band_center(cfg, m) < mel_band_center(cfg, m + 1));
  }
}

TEST_CASE("stft: per-frame Parseval within 1e-6", "[mel]") {
  MelConfig cfg;
  cfg.n_fft = 256;
  cfg.hop = 64;
  cfg.n_mels = 32;
  Rng r(11);
  AudioClip c;
  c.sample_rate = cfg.sample_rate;
  c.samples.resize(4000);
  for (auto& s : c.samples) s = r.normal() * 0.2;

  ComplexSpec spec = stft(c, cfg);
  // Interior frame: no reflection involved, window applied directly.
  const int i = 4;
  const int half = cfg.n_fft / 2;
  const auto win = [&] {
    std::vector<double> w(cfg.n_fft);
    for (int t = 0; t < cfg.n_fft; ++t)
      w[t] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * t / cfg.n_fft);
    return w;
  }();
  double et = 0.0;
  for (int t = 0; t < cfg.n_fft; ++t) {
    double xw = c.samples[i * cfg.hop - half + t] * win[t];
    et += xw * xw;
  }
  double ef = std::norm(spec.at(i, 0)) + std::norm(spec.at(i, cfg.n_fft / 2));
  for (int k = 1; k < cfg.n_fft / 2; ++k) ef += 2.0 * std::norm(spec.at(i, k));
  ef /= cfg.n_fft;
  REQUIRE(ef == Catch::Approx(et).epsilon(1e-6));
}

TEST_CASE("audio_to_mel: unit range, square shape, silence floor", "[mel]") {
  MelConfig cfg;
  AudioClip silence;
  silence.sample_rate = 16000;
  silence.samples.assign(16000, 0.0);
  MelSpectrogram m = audio_to_mel(silence, cfg);
  REQUIRE(m.norm == MelNorm::unit);
  REQUIRE(m.values.h == 64);
  REQUIRE(m.values.w == 64);
  for (double v : m.values.v) REQUIRE(v == -1.0);
}

TEST_CASE("audio_to_mel: 440 Hz tone concentrates in its band", "[mel]") {
  MelConfig cfg;
  MelSpectrogram m = audio_to_mel(sine(440.0, 1.0), cfg);
  // Strongest row's band must contain the tone.
  double best = -2.0;
  int best_row = -1;
  for (int row = 0; row < m.values.h; ++row) {
    double mean = 0.0;
    for (int f = 0; f < m.values.w; ++f) mean += m.values.at(row, f);
    mean /= m.values.w;
    if (mean > best) {
      best = mean;
      best_row = row;
    }
  }
  auto [lo, hi] = mel_band_edges(cfg, best_row);
  REQUIRE(lo <= 440.0);
  REQUIRE (hi >= 440.0);
  REQUIRE(best > -0.5);  // full-scale tone sits far above the floor

  // Rows far away stay near the floor.
  double far_mean = 0.0;
  for (int f = 0; f < m.values.w; ++f) far_mean += m.values.at(60, f);
  far_mean /= m.values.w;
  REQUIRE(far_mean < -0.95);

  for (double v : m.values.v) {
    REQUIRE(v >= -1.0);
    REQUIRE(v <= 1.0);
  }
}

TEST_CASE("audio_to_mel: short clip is right-padded at the floor", "[mel]") {
  MelConfig cfg;
  AudioClip c = sine(300.0, 0.5, 16000, 0.9);  // 14400 samples -> 58 frames
  MelSpectrogram m = audio_to_mel(c, cfg);
  REQUIRE(m.values.w == 64);
  for (int row = 0; row < m.values.h; ++row)
    for (int f = 58; f < 64; ++f) REQUIRE(m.values.at(row, f) == -1.0);
}

TEST_CASE("audio_to_mel: white noise spreads across rows", "[mel]") {
  MelConfig cfg;
  int ok_seeds = 0;
  for (uint64_t seed = 1; seed <= 10; ++seed) {
    Rng r(seed);
    AudioClip c;
    c.sample_rate = 16000;
    c.samples.resize(16000);
    for (auto& s : c.samples) s = 0.3 * r.normal();
    MelSpectrogram m = audio_to_mel(c, cfg);
    int rows_live = 0;
    for (int row = 0; row < m.values.h; ++row) {
      double mean = 0.0;
      for (int f = 0; f < m.values.w; ++f) mean += m.values.at(row, f);
      if (mean / m.values.w > -0.9) ++rows_live;
    }
    if (rows_live >= static_cast<int>(0.8 * m.values.h)) ++ok_seeds;
  }
  REQUIRE(ok_seeds == 10);
}

TEST_CASE("audio_to_mel: input validation", "[mel]") {
  MelConfig cfg;
  AudioClip wrong_rate;
  wrong_rate.sample_rate = 22050;
  wrong_rate.samples.assign(22050, 0.0);
  REQUIRE_THROWS_AS(audio_to_mel(wrong_rate, cfg), Error);

  AudioClip too_short;
  too_short.sample_rate = 16000;
  too_short.samples.assign(100, 0.0);  // < n_fft
  REQUIRE_THROWS_AS(audio_to_mel(too_short, cfg), Error);

  MelConfig bad = cfg;
  bad.n_fft = 1000;  // not a power of two
  AudioClip c = sine(440.0, 0.5);
  REQUIRE_THROWS_AS(audio_to_mel(c, bad), Error);
}

TEST_CASE("hires preset produces 256 x 256", "[mel]") {
  MelConfig cfg = MelConfig::hires();
  MelSpectrogram m = audio_to_mel(sine(440.0, 0.8), cfg);
  REQUIRE(m.values.h == 256);
  REQUIRE(m.values.w == 256);
  // ceil(16000/63) = 254 natural frames, two right-pad columns at the floor.
  for (int row = 0; row < 256; ++row) {
    REQUIRE(m.values.at(row, 254) == -1.0);
    REQUIRE(m.values.at(row, 255) == -1.0);
  }
}

TEST_CASE("griffin_lim: residual non-increasing per iteration", "[mel]") {
  MelConfig cfg;
  MelSpectrogram m = audio_to_mel(sine(440.0, 1.0), cfg);

  // Rebuild the magnitude target the same way mel_to_audio does, then check
  // monotone decrease of the spectral-convergence residual.
  MelConfig quick = cfg;
  quick.griffin_lim_iters = 32;
  // Use a mel with a couple of active bands for a non-trivial target.
  const Grid fb = build_mel_filterbank(cfg);
  const double ref = stft_power_ref(cfg);
  const double eps = std::pow(10.0, cfg.db_floor / 10.0);
  std::vector<double> colsum(fb.w, 0.0);
  for (int mm = 0; mm < fb.h; ++mm)
    for (int k = 0; k < fb.w; ++k) colsum[k] += fb.at(mm, k);
  Grid mag(fb.w, m.values.w, 0.0);
  for (int f = 0; f < m.values.w; ++f)
    for (int k = 0; k < fb.w; ++k) {
      if (colsum[k] <= 1e-12) continue;
      double acc = 0.0;
      for (int mm = 0; mm < fb.h; ++mm) {
        double u = m.values.at(mm, f);
        double db = (u + 1.0) * 0.5 * (-cfg.db_floor) + cfg.db_floor;
        acc += fb.at(mm, k) * std::max(std::pow(10.0, db / 10.0) - eps, 0.0);
      }
      mag.at(k, f) = std::sqrt(std::max(acc / colsum[k], 0.0) * ref);
    }

  std::vector<double> res;
  griffin_lim(mag, cfg, 32, &res);
  REQUIRE(res.size() == 33);
  for (size_t i = 1; i < res.size(); ++i) REQUIRE(res[i] <= res[i - 1] + 1e-9);
  REQUIRE(res.back() < res.front());
}

TEST_CASE("mel roundtrip: dominant tone survives within one band", "[mel]") {
  MelConfig cfg;
  AudioClip in = sine(440.0, 1.0);
  MelSpectrogram m = audio_to_mel(in, cfg);
  AudioClip out = mel_to_audio(m, cfg);
  REQUIRE(out.samples.size() == static_cast<size_t>(64 * cfg.hop));
  double peak = 0.0;
  for (double s : out.samples) peak = std::max(peak, std::abs(s));
  REQUIRE(peak == Catch::Approx(0.9).margin(1e-6));

  // Dominant frequency of the reconstruction, via the mean power spectrum.
  ComplexSpec spec = stft(out, cfg);
  std::vector<double> pow_acc(spec.n_bins, 0.0);
  for (int f = 0; f < spec.n_frames; ++f)
    for (int k = 0; k < spec.n_bins; ++k) pow_acc[k] += std::norm(spec.at(f, k));
  int peak_bin = 1;
  for (int k = 1; k < spec.n_bins; ++k)
    if (pow_acc[k] > pow_acc[peak_bin]) peak_bin = k;
  const double peak_hz = peak_bin * cfg.sample_rate / double(cfg.n_fft);

  // Locate the band of the strongest source row: tone must come back inside it.
  int best_row = 0;
  double best = -2.0;
  for (int row = 0; row < m.values.h; ++row) {
    double mean = 0.0;
    for (int f = 0; f < m.values.w; ++f) mean += m.values.at(row, f);
    if (mean > best) {
      best = mean;
      best_row = row;
    }
  }
  auto [lo, hi] = mel_band_edges(cfg, best_row);
  REQUIRE(peak_hz >= lo);
  REQUIRE(peak_hz <= hi);
}

TEST_CASE("mel_to_audio: silence maps to silence", "[mel]") {
  MelConfig cfg;
  MelSpectrogram m;
  m.values = Grid(64, 64, -1.0);
  m.norm = MelNorm::unit;
  AudioClip out = mel_to_audio(m, cfg);
  for (double s : out.samples) REQUIRE(s == 0.0);
}

TEST_CASE("mel_to_audio: shape and norm guards", "[mel]") {
  MelConfig cfg;
  MelSpectrogram m;
  m.values = Grid(32, 64, 0.0);  // wrong n_mels
  m.norm = MelNorm::unit;
  REQUIRE_THROWS_AS(mel_to_audio(m, cfg), Error);
  m.values = Grid(64, 64, 0.0);
  m.norm = MelNorm::db;
  REQUIRE_THROWS_AS(mel_to_audio(m, cfg), Error);
}
