// SPDX-License-Identifier: Apache-2.0
#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <numbers>

#include "melmark/trigger.hpp"

using namespace melmark;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir() {
  fs::path p = fs::temp_directory_path() / "melmark_trigger_tests";
  fs::create_directories(p);
  return p;
}

}  // namespace

TEST_CASE("infrasound: energy pinned to the lowest band, invisible above 200 Hz", "[trigger]") {
  MelConfig cfg;
  TriggerSpec sp;
  sp.kind = TriggerKind::infrasound;
  Trigger t = make_trigger(sp, cfg);
  REQUIRE(t.delta.h == 64);
  REQUIRE(t.delta.w == 64);
  for (double v : t.delta.v) {
    REQUIRE(v >= 0.0);
    REQUIRE(v <= 1.0);
  }
  for (double m : t.mask.v) REQUIRE(m == 1.0);

  // Rows carrying substantial energy (mean > 0.25) must all sit below 100 Hz.
  bool found_live_row = false;
  for (int row = 0; row < cfg.n_mels; ++row) {
    double mean = 0.0;
    for (int f = 0; f < t.delta.w; ++f) mean += t.delta.at(row, f);
    mean /= t.delta.w;
    if (mean > 0.25) {
      found_live_row = true;
      REQUIRE(mel_band_edges(cfg, row).second < 100.0);
    }
  }
  REQUIRE(found_live_row);

  // Inaudibility: negligible mean magnitude above 200 Hz band centers.
  double acc = 0.0;
  int cnt = 0;
  for (int row = 0; row < cfg.n_mels; ++row) {
    if (mel_band_center(cfg, row) <= 200.0) continue;
    for (int f = 0; f < t.delta.w; ++f) {
      acc += std::abs(t.delta.at(row, f));
      ++cnt;
    }
  }
  REQUIRE(cnt > 0);
  REQUIRE(acc / cnt < 0.05);
}

TEST_CASE("envsound: derived from a WAV, silence maps to zero shift", "[trigger]") {
  MelConfig cfg;
  // A 300 Hz tone burst over the first half second, silence after.
  AudioClip c;
  c.sample_rate = 16000;
  c.samples.assign(16000, 0.0);
  for (int i = 0; i < 8000; ++i)
    c.samples[i] = 0.7 * std::sin(2.0 * std::numbers::pi * 300.0 * i / 16000.0);
  const auto path = (temp_dir() / "env.wav").string();
  save_wav(c, path);

  TriggerSpec sp;
  sp.kind = TriggerKind::envsound;
  sp.source_path = path;
  Trigger t = make_trigger(sp, cfg);
  for (double v : t.delta.v) {
    REQUIRE(v >= 0.0);
    REQUIRE(v <= 1.0);
  }
  // Latter frames are silent: near-zero delta in the right half.
  double right = 0.0;
  int cnt = 0;
  for (int row = 0; row < 64; ++row)
    for (int f = 48; f < 64; ++f) {
      right += t.delta.at(row, f);
      ++cnt;
    }
  REQUIRE(right / cnt < 0.02);

  // The tone's band lights up in the left half.
  int best_row = 0;
  double best = 0.0;
  for (int row = 0; row < 64; ++row) {
    double mean = 0.0;
    for (int f = 0; f < 24; ++f) mean += t.delta.at(row, f);
    if (mean > best) {
      best = mean;
      best_row = row;
    }
  }
  auto [lo, hi] = mel_band_edges(cfg, best_row);
  REQUIRE(lo <= 300.0);
  REQUIRE(hi >= 300.0);

  TriggerSpec missing;
  missing.kind = TriggerKind::envsound;
  REQUIRE_THROWS_AS(make_trigger(missing, cfg), Error);
}

TEST_CASE("gaussian: seeded, clipped, reproducible", "[trigger]") {
  MelConfig cfg;
  TriggerSpec sp;
  sp.kind = TriggerKind::gaussian;
  sp.seed = 99;
  Trigger a = make_trigger(sp, cfg);
  Trigger b = make_trigger(sp, cfg);
  REQUIRE(a.delta.v == b.delta.v);
  sp.seed = 100;
  Trigger c = make_trigger(sp, cfg);
  REQUIRE(a.delta.v != c.delta.v);

  double mean = 0.0, var = 0.0;
  for (double v : a.delta.v) {
    REQUIRE(v >= -1.0);
    REQUIRE(v <= 1.0);
    mean += v;
  }
  mean /= a.delta.size();
  for (double v : a.delta.v) var += (v - mean) * (v - mean);
  var /= a.delta.size();
  // Hard-clipping a standard normal at +-1 leaves E[X^2] ~= 0.516.
  REQUIRE(std::abs(mean) < 0.05);
  REQUIRE(var == Catch::Approx(0.516).margin(0.05));
}

TEST_CASE("geometric: quadrant tiles the grid 2x2", "[trigger]") {
  MelConfig cfg;
  TriggerSpec sp;
  sp.kind = TriggerKind::geometric;
  sp.seed = 5;
  Trigger t = make_trigger(sp, cfg);
  for (int i = 0; i < 32; ++i)
    for (int j = 0; j < 32; ++j) {
      const double v = t.delta.at(i, j);
      REQUIRE(t.delta.at(i + 32, j) == v);
      REQUIRE(t.delta.at(i, j + 32) == v);
      REQUIRE(t.delta.at(i + 32, j + 32) == v);
    }

  MelConfig odd = cfg;
  odd.n_mels = 63;
  REQUIRE_THROWS_AS(make_trigger(sp, odd), Error);
}

TEST_CASE("patch_white: bottom-right square only", "[trigger]") {
  MelConfig cfg;
  TriggerSpec sp;
  sp.kind = TriggerKind::patch_white;
  sp.patch_size = 8;
  Trigger t = make_trigger(sp, cfg);
  int masked = 0;
  for (int i = 0; i < 64; ++i)
    for (int j = 0; j < 64; ++j) {
      const bool inside = i >= 56 && j >= 56;
      REQUIRE(t.mask.at(i, j) == (inside ? 1.0 : 0.0));
      REQUIRE(t.delta.at(i, j) == (inside ? 1.0 : 0.0));
      if (inside) ++masked;
    }
  REQUIRE(masked == 64);

  sp.patch_size = 65;
  REQUIRE_THROWS_AS(make_trigger(sp, cfg), Error);
}

TEST_CASE("image: resized to grid, flat image flags degenerate", "[trigger]") {
  MelConfig cfg;
  Grid img(16, 16, 0.0);
  for (int i = 0; i < 16; ++i)
    for (int j = 0; j < 16; ++j) img.at(i, j) = i * 255.0 / 15.0;
  const auto path = (temp_dir() / "grad.pgm").string();
  write_pgm(img, path, 0.0, 255.0);

  TriggerSpec sp;
  sp.kind = TriggerKind::image;
  sp.source_path = path;
  Trigger t = make_trigger(sp, cfg);
  REQUIRE_FALSE(t.degenerate);
  REQUIRE(t.delta.at(0, 0) == Catch::Approx(-1.0).margin(1e-9));
  REQUIRE(t.delta.at(63, 0) == Catch::Approx(1.0).margin(1e-9));
  // Vertical gradient: monotone along rows, constant along columns.
  for (int i = 1; i < 64; ++i) REQUIRE(t.delta.at(i, 5) >= t.delta.at(i - 1, 5));
  for (int j = 1; j < 64; ++j)
    REQUIRE(t.delta.at(20, j) == Catch::Approx(t.delta.at(20, 0)).margin(1e-12));

  Grid flat(8, 8, 128.0);
  const auto flat_path = (temp_dir() / "flat.pgm").string();
  write_pgm(flat, flat_path, 0.0, 255.0);
  sp.source_path = flat_path;
  Trigger tf = make_trigger(sp, cfg);
  REQUIRE(tf.degenerate);
  for (double v : tf.delta.v) REQUIRE(v == 0.0);
}

TEST_CASE("initial_noise: blend statistics and stream parity", "[trigger]") {
  MelConfig cfg;
  TriggerSpec sp;
  sp.kind = TriggerKind::patch_white;
  sp.gamma = 0.6;
  Trigger t = make_trigger(sp, cfg);

  // Same stream with and without the trigger: unmasked cells identical.
  Rng r1(404), r2(404);
  Grid benign = initial_noise(nullptr, 64, 64, r1);
  Grid marked = initial_noise(&t, 64, 64, r2);
  for (int i = 0; i < 64; ++i)
    for (int j = 0; j < 64; ++j) {
      if (i >= 56 && j >= 56) continue;
      REQUIRE(marked.at(i, j) == benign.at(i, j));
    }

  // Masked cells: mean (1-gamma)*delta = 0.4, spread gamma = 0.6.
  Rng r3(7);
  double s = 0.0, s2 = 0.0;
  const int reps = 400;
  for (int rep = 0; rep < reps; ++rep) {
    Grid g = initial_noise(&t, 64, 64, r3);
    for (int i = 56; i < 64; ++i)
      for (int j = 56; j < 64; ++j) {
        s += g.at(i, j);
        s2 += g.at(i, j) * g.at(i, j);
      }
  }
  const int n = reps * 64;
  const double mean = s / n;
  const double sd = std::sqrt(s2 / n - mean * mean);
  REQUIRE(mean == Catch::Approx(0.4).margin(0.02));
  REQUIRE(sd == Catch::Approx(0.6).margin(0.02));
}

TEST_CASE("initial_noise: gamma=1 reproduces the benign field bitwise", "[trigger]") {
  MelConfig cfg;
  TriggerSpec sp;
  sp.kind = TriggerKind::gaussian;
  sp.gamma = 1.0;
  Trigger t = make_trigger(sp, cfg);
  Rng r1(11), r2(11);
  Grid a = initial_noise(nullptr, 64, 64, r1);
  Grid b = initial_noise(&t, 64, 64, r2);
  REQUIRE(a.v == b.v);
}

TEST_CASE("trigger: parameter validation", "[trigger]") {
  MelConfig cfg;
  TriggerSpec sp;
  sp.gamma = 1.2;
  REQUIRE_THROWS_AS(make_trigger(sp, cfg), Error);
  REQUIRE_THROWS_AS(trigger_kind_from_name("nope"), Error);
  REQUIRE(trigger_kind_from_name("patch_white") == TriggerKind::patch_white);

  TriggerSpec noise_shape;
  noise_shape.kind = TriggerKind::gaussian;
  Trigger t = make_trigger(noise_shape, cfg);
  Rng r(1);
  REQUIRE_THROWS_AS(initial_noise(&t, 32, 32, r), Error);
}
