// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <numbers>
#include <string>

#include "melmark/audio.hpp"
#include "melmark/errors.hpp"
#include "melmark/grid.hpp"
#include "melmark/mel.hpp"
#include "melmark/rng.hpp"

namespace melmark {

enum class TriggerKind {
  infrasound,   // synthesized low-frequency tone, below the audible band
  envsound,     // arbitrary environment clip from a WAV file
  gaussian,     // seeded standard-normal field, clipped to [-1, 1]
  geometric,    // seeded quadrant tiled 2x2 across the grid
  patch_white,  // all-ones square patch in the bottom-right corner
  image,        // grayscale PGM mapped to [-1, 1]
};

inline const char* trigger_kind_name(TriggerKind k) {
  switch (k) {
    case TriggerKind::infrasound: return "infrasound";
    case TriggerKind::envsound: return "envsound";
    case TriggerKind::gaussian: return "gaussian";
    case TriggerKind::geometric: return "geometric";
    case TriggerKind::patch_white: return "patch_white";
    case TriggerKind::image: return "image";
  }
  return "?";
}

inline TriggerKind trigger_kind_from_name(const std::string& s) {
  for (TriggerKind k : {TriggerKind::infrasound, TriggerKind::envsound, TriggerKind::gaussian,
                        TriggerKind::geometric, TriggerKind::patch_white, TriggerKind::image})
    if (s == trigger_kind_name(k)) return k;
  raise(Errc::parameter, "unknown trigger kind: " + s);
}

struct TriggerSpec {
  TriggerKind kind = TriggerKind::infrasound;
  double gamma = 0.6;            // blend strength in [0, 1]
  uint64_t seed = 1;             // for the random kinds
  std::string source_path;       // envsound WAV / image PGM
  int patch_size = 8;            // patch_white square side
  double infrasound_hz = 10.0;   // synthesized tone frequency
  double infrasound_amp = 0.5;
};

// A realized trigger: feature field delta in [-1, 1] and a {0,1} mask of the
// cells it claims. Sound-derived deltas live in [0, 1] (see make_trigger).
struct Trigger {
  TriggerKind kind = TriggerKind::infrasound;
  Grid delta;
  Grid mask;
  double gamma = 0.6;
  bool degenerate = false;  // e.g. a zero-dynamic-range image
};

namespace detail {

// Sound-derived trigger features are remapped from unit mel [-1, 1] to
// [0, 1] so that silent cells contribute a zero shift: the blend target is
// mu = (1 - gamma) * delta, and a floor-valued cell must not be shifted.
inline Grid mel_to_delta(const MelSpectrogram& m) {
  Grid d = m.values;
  for (double& v : d.v) v = (std::clamp(v, -1.0, 1.0) + 1.0) * 0.5;
  return d;
}

}  // namespace detail

// Materializes a trigger feature on the spectrogram geometry of `cfg`.
inline Trigger make_trigger(const TriggerSpec& spec, const MelConfig& cfg) {
  cfg.validate();
  require(spec.gamma >= 0.0 && spec.gamma <= 1.0, Errc::parameter,
          "trigger: gamma must be in [0, 1]");
  const int h = cfg.n_mels;
  const int w = cfg.width();

  Trigger t;
  t.kind = spec.kind;
  t.gamma = spec.gamma;
  t.mask = Grid(h, w, 1.0);

  switch (spec.kind) {
    case TriggerKind::infrasound: {
      require(spec.infrasound_hz > 0.0, Errc::parameter, "trigger: frequency must be positive");
      require(spec.infrasound_amp > 0.0 && spec.infrasound_amp <= 1.0, Errc::parameter,
              "trigger: amplitude must be in (0, 1]");
      AudioClip c;
      c.sample_rate = cfg.sample_rate;
      c.samples.resize(cfg.sample_rate);
      for (size_t i = 0; i < c.samples.size(); ++i)
        c.samples[i] = spec.infrasound_amp *
                       std::sin(2.0 * std::numbers::pi * spec.infrasound_hz * i / cfg.sample_rate);
      t.delta = detail::mel_to_delta(audio_to_mel(c, cfg));
      break;
    }
    case TriggerKind::envsound: {
      require(!spec.source_path.empty(), Errc::parameter, "trigger: envsound needs a source WAV");
      AudioClip c = load_wav(spec.source_path);
      require(c.sample_rate == cfg.sample_rate, Errc::parameter,
              "trigger: source sample rate differs from config (resample offline)");
      c.samples.resize(cfg.sample_rate, 0.0);  // crop or zero-pad to exactly 1 s
      t.delta = detail::mel_to_delta(audio_to_mel(c, cfg));
      break;
    }
    case TriggerKind::gaussian: {
      Rng r(spec.seed);
      t.delta = Grid(h, w, 0.0);
      for (double& v : t.delta.v) v = std::clamp(r.normal(), -1.0, 1.0);
      break;
    }
    case TriggerKind::geometric: {
      require(h % 2 == 0 && w % 2 == 0, Errc::parameter,
              "trigger: geometric needs even grid dimensions");
      Rng r(spec.seed);
      Grid quad(h / 2, w / 2, 0.0);
      for (double& v : quad.v) v = std::clamp(r.normal(), -1.0, 1.0);
      t.delta = Grid(h, w, 0.0);
      for (int i = 0; i < h; ++i)
        for (int j = 0; j < w; ++j)
          t.delta.at(i, j) = quad.at(i % (h / 2), j % (w / 2));
      break;
    }
    case TriggerKind::patch_white: {
      require(spec.patch_size >= 1 && spec.patch_size <= std::min(h, w), Errc::parameter,
              "trigger: patch_size outside grid");
      t.delta = Grid(h, w, 0.0);
      t.mask = Grid(h, w, 0.0);
      for (int i = h - spec.patch_size; i < h; ++i)
        for (int j = w - spec.patch_size; j < w; ++j) {
          t.delta.at(i, j) = 1.0;
          t.mask.at(i, j) = 1.0;
        }
      break;
    }
    case TriggerKind::image: {
      require(!spec.source_path.empty(), Errc::parameter, "trigger: image needs a source PGM");
      Grid img = read_pgm(spec.source_path);
      const double lo = grid_min(img), hi = grid_max(img);
      t.delta = Grid(h, w, 0.0);
      if (hi - lo < 1e-12) {
        t.degenerate = true;  // flat image carries no pattern; delta stays 0
        break;
      }
      // Bilinear resize, then map [0, 255] to [-1, 1].
      for (int i = 0; i < h; ++i)
        for (int j = 0; j < w; ++j) {
          const double y = (h == 1) ? 0.0 : double(i) * (img.h - 1) / (h - 1);
          const double x = (w == 1) ? 0.0 : double(j) * (img.w - 1) / (w - 1);
          const int y0 = static_cast<int>(y), x0 = static_cast<int>(x);
          const int y1 = std::min(y0 + 1, img.h - 1), x1 = std::min(x0 + 1, img.w - 1);
          const double fy = y - y0, fx = x - x0;
          const double v = img.at(y0, x0) * (1 - fy) * (1 - fx) +
                           img.at(y1, x0) * fy * (1 - fx) +
                           img.at(y0, x1) * (1 - fy) * fx + img.at(y1, x1) * fy * fx;
          t.delta.at(i, j) = v / 255.0 * 2.0 - 1.0;
        }
      break;
    }
  }
  return t;
}

// Watermark-blended starting noise: masked cells gamma * z + (1 - gamma) * delta,
// unmasked cells plain z. A normal draw is consumed for every cell in either
// branch, so benign and triggered chains consume identical RNG streams.
inline Grid initial_noise(const Trigger* trig, int h, int w, Rng& rng) {
  Grid x(h, w, 0.0);
  if (trig == nullptr) {
    for (double& v : x.v) v = rng.normal();
    return x;
  }
  require(trig->delta.h == h && trig->delta.w == w, Errc::size,
          "initial_noise: trigger shape mismatch");
  for (size_t i = 0; i < x.size(); ++i) {
    const double z = rng.normal();
    x.v[i] = trig->mask.v[i] != 0.0
                 ? trig->gamma * z + (1.0 - trig->gamma) * trig->delta.v[i]
                 : z;
  }
  return x;
}

}  // namespace melmark
