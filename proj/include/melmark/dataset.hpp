// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numbers>
#include <string>
#include <vector>

#include "melmark/audio.hpp"
#include "melmark/errors.hpp"
#include "melmark/grid.hpp"
#include "melmark/mel.hpp"
#include "melmark/rng.hpp"

namespace melmark {

enum class Split { train, test };

struct CorpusItem {
  Grid mel;  // unit-normalized, n_mels x n_mels
  int label = 0;
};

// Labeled spectrogram collection with a deterministic train/test split.
// reserved_class (if >= 0) marks a class excluded from generative training
// and available as an out-of-distribution watermark target.
struct Corpus {
  std::vector<CorpusItem> items;
  std::vector<std::string> classes;
  std::vector<Split> split;
  int reserved_class = -1;

  size_t size() const { return items.size(); }

  std::vector<size_t> indices(Split s, int label = -1) const {
    std::vector<size_t> out;
    for (size_t i = 0; i < items.size(); ++i)
      if (split[i] == s && (label < 0 || items[i].label == label)) out.push_back(i);
    return out;
  }

  // Train items usable as benign generative data (reserved class excluded).
  std::vector<size_t> benign_train_indices() const {
    std::vector<size_t> out;
    for (size_t i = 0; i < items.size(); ++i)
      if (split[i] == Split::train && items[i].label != reserved_class) out.push_back(i);
    return out;
  }

  // Mean spectrogram of a class over a split.
  Grid class_centroid(int label, Split s) const {
    std::vector<size_t> idx = indices(s, label);
    require(!idx.empty(), Errc::index, "class_centroid: no items for label");
    Grid acc(items[idx[0]].mel.h, items[idx[0]].mel.w, 0.0);
    for (size_t i : idx)
      for (size_t c = 0; c < acc.size(); ++c) acc.v[c] += items[i].mel.v[c];
    for (double& v : acc.v) v /= static_cast<double>(idx.size());
    return acc;
  }
};

// Deterministic 90/10 split: filenames hashing to 0 mod 10 go to test.
inline Split split_for_name(const std::string& rel_name) {
  return (fnv1a64(rel_name) % 10 == 0) ? Split::test : Split::train;
}

enum class TaskMode { in_distribution, out_distribution, instance };

inline const char* task_mode_name(TaskMode m) {
  switch (m) {
    case TaskMode::in_distribution: return "in_distribution";
    case TaskMode::out_distribution: return "out_distribution";
    case TaskMode::instance: return "instance";
  }
  return "?";
}

inline TaskMode task_mode_from_name(const std::string& s) {
  for (TaskMode m : {TaskMode::in_distribution, TaskMode::out_distribution, TaskMode::instance})
    if (s == task_mode_name(m)) return m;
  raise(Errc::parameter, "unknown task mode: " + s);
}

// What the watermark should decode to.
struct WatermarkTask {
  TaskMode mode = TaskMode::in_distribution;
  int target_class = -1;     // class modes
  Grid target_instance;      // instance mode
  double poison_rate = 0.5;  // fraction of watermark slots per batch
};

// ---- synthetic corpus ----
//
// Ten chirp families stand in for spoken digits: class k sweeps through a
// geometric center ladder c_k = 250 * 1.35^k with class-specific amplitude
// modulation, so spectral centroids are strictly ordered by label. An
// eleventh descending-sweep family acts as the held-out class, plus one
// fixed two-voice glide used as the instance target.

namespace detail {

inline void apply_fade(std::vector<double>& s, int sr) {
  const int n = static_cast<int>(s.size());
  const int f = std::min(sr / 20, n / 2);  // 50 ms raised-cosine edges
  for (int i = 0; i < f; ++i) {
    const double g = 0.5 - 0.5 * std::cos(std::numbers::pi * i / f);
    s[i] *= g;
    s[n - 1 - i] *= g;
  }
}

}  // namespace detail

inline std::string synthetic_class_name(int label) {
  static const char* names[11] = {"zero", "one",  "two", "three", "four",    "five",
                                  "six",  "seven", "eight", "nine", "backward"};
  require(label >= 0 && label < 11, Errc::index, "synthetic class label out of range");
  return names[label];
}

// One second of the class-k chirp with per-item jitter drawn from `rng`.
inline AudioClip synth_class_clip(int label, Rng& rng, const MelConfig& cfg) {
  require(label >= 0 && label <= 10, Errc::index, "synth_class_clip: label out of range");
  const int sr = cfg.sample_rate;
  AudioClip c;
  c.sample_rate = sr;
  c.samples.resize(sr);

  const double u1 = 2.0 * rng.uniform() - 1.0;  // amplitude jitter
  const double u2 = 2.0 * rng.uniform() - 1.0;  // frequency jitter
  const double u3 = 2.0 * rng.uniform() - 1.0;  // AM rate jitter
  const double phase = rng.uniform();           // AM phase

  if (label < 10) {
    const double center = 250.0 * std::pow(1.35, label) * (1.0 + 0.04 * u2);
    const double f0 = center / 1.18;
    const double f1 = center * 1.18;
    const double am_rate = (2.0 + 1.3 * label) * (1.0 + 0.1 * u3);
    const double amp = 0.55 * (1.0 + 0.1 * u1);
    for (int i = 0; i < sr; ++i) {
      const double t = static_cast<double>(i) / sr;
      const double ph = 2.0 * std::numbers::pi * (f0 * t + 0.5 * (f1 - f0) * t * t);
      const double env = 1.0 + 0.45 * std::sin(2.0 * std::numbers::pi * (am_rate * t + phase));
      c.samples[i] = amp * env / 1.45 * std::sin(ph);
    }
  } else {
    // Held-out family: descending sweep with hard 8 Hz gating.
    const double f0 = 5000.0 * (1.0 + 0.04 * u2);
    const double f1 = 1500.0 * (1.0 + 0.04 * u2);
    const double amp = 0.55 * (1.0 + 0.1 * u1);
    for (int i = 0; i < sr; ++i) {
      const double t = static_cast<double>(i) / sr;
      const double ph = 2.0 * std::numbers::pi * (f0 * t + 0.5 * (f1 - f0) * t * t);
      const double gate = std::sin(2.0 * std::numbers::pi * (8.0 * t + phase)) > 0.0 ? 1.0 : 0.3;
      c.samples[i] = amp * gate * std::sin(ph);
    }
  }
  detail::apply_fade(c.samples, sr);
  return c;
}

// The fixed instance target: a two-voice glide, no randomness.
inline AudioClip synth_instance_clip(const MelConfig& cfg) {
  const int sr = cfg.sample_rate;
  AudioClip c;
  c.sample_rate = sr;
  c.samples.resize(sr);
  double ph_a = 0.0, ph_b = 0.0;
  for (int i = 0; i < sr; ++i) {
    const double t = static_cast<double>(i) / sr;
    // Rise-then-settle contour: 350 -> 850 -> 450 Hz, piecewise linear.
    const double f = t < 0.5 ? 350.0 + (850.0 - 350.0) * (t / 0.5)
                             : 850.0 + (450.0 - 850.0) * ((t - 0.5) / 0.5);
    ph_a += 2.0 * std::numbers::pi * f / sr;
    ph_b += 2.0 * std::numbers::pi * (2.2 * f) / sr;
    c.samples[i] = 0.6 * (std::sin(ph_a) + 0.6 * std::sin(ph_b)) / 1.6;
  }
  detail::apply_fade(c.samples, sr);
  return c;
}

struct SyntheticCorpus {
  Corpus corpus;   // labels 0..9 plus reserved class 10
  Grid instance;   // instance-target mel
};

inline SyntheticCorpus gen_synthetic_corpus(int n_per_class, uint64_t seed,
                                            const MelConfig& cfg = MelConfig{}) {
  require(n_per_class >= 1, Errc::parameter, "gen_synthetic_corpus: n_per_class must be >= 1");
  cfg.validate();
  Rng root(seed);
  SyntheticCorpus out;
  out.corpus.reserved_class = 10;
  for (int label = 0; label <= 10; ++label) out.corpus.classes.push_back(synthetic_class_name(label));

  char buf[64];
  for (int label = 0; label <= 10; ++label) {
    const std::string cname = synthetic_class_name(label);
    for (int i = 0; i < n_per_class; ++i) {
      Rng item_rng = root.split(static_cast<uint64_t>(label) * 1000003ull + i);
      AudioClip clip = synth_class_clip(label, item_rng, cfg);
      std::snprintf(buf, sizeof buf, "%s/%s_%04d.wav", cname.c_str(), cname.c_str(), i);
      out.corpus.items.push_back({audio_to_mel(clip, cfg).values, label});
      out.corpus.split.push_back(split_for_name(buf));
    }
  }
  out.instance = audio_to_mel(synth_instance_clip(cfg), cfg).values;
  return out;
}

// Loads a directory tree (subdirectory per class, WAV files inside) into a
// corpus. Clips are cropped/zero-padded to 1 s. Subdirectories starting with
// '_' are skipped; `reserved_class_name`, when present as a subdirectory, is
// appended as the last (reserved) class.
inline Corpus ingest_wav_dir(const std::string& root, const MelConfig& cfg,
                             const std::string& reserved_class_name = "") {
  namespace fs = std::filesystem;
  cfg.validate();
  require(fs::is_directory(root), Errc::io, "ingest: not a directory: " + root);

  std::vector<std::string> class_dirs;
  for (const auto& e : fs::directory_iterator(root))
    if (e.is_directory()) {
      const std::string name = e.path().filename().string();
      if (!name.empty() && name[0] != '_' && name != reserved_class_name)
        class_dirs.push_back(name);
    }
  std::sort(class_dirs.begin(), class_dirs.end());
  const bool has_reserved =
      !reserved_class_name.empty() && fs::is_directory(fs::path(root) / reserved_class_name);
  if (has_reserved) class_dirs.push_back(reserved_class_name);
  require(!class_dirs.empty(), Errc::io, "ingest: no class subdirectories in " + root);

  Corpus corpus;
  corpus.classes = class_dirs;
  corpus.reserved_class = has_reserved ? static_cast<int>(class_dirs.size()) - 1 : -1;

  for (size_t label = 0; label < class_dirs.size(); ++label) {
    std::vector<std::string> files;
    for (const auto& e : fs::directory_iterator(fs::path(root) / class_dirs[label]))
      if (e.is_regular_file() && e.path().extension() == ".wav")
        files.push_back(e.path().filename().string());
    std::sort(files.begin(), files.end());
    require(!files.empty(), Errc::io, "ingest: class has no WAV files: " + class_dirs[label]);
    for (const std::string& f : files) {
      AudioClip clip = load_wav((fs::path(root) / class_dirs[label] / f).string());
      require(clip.sample_rate == cfg.sample_rate, Errc::parameter,
              "ingest: sample rate mismatch in " + f + " (resample offline)");
      clip.samples.resize(cfg.sample_rate, 0.0);
      corpus.items.push_back({audio_to_mel(clip, cfg).values, static_cast<int>(label)});
      corpus.split.push_back(split_for_name(class_dirs[label] + "/" + f));
    }
  }
  return corpus;
}

// One training example: benign slots carry x0, watermark slots carry the
// target content x0w.
struct BatchSlot {
  Grid x0;
  bool is_watermark = false;
  Grid x0w;
};

// Assembles a batch: each slot is flagged watermark with probability
// poison_rate; benign slots draw a random benign train mel, watermark slots
// draw from the task target (class samples or the fixed instance).
inline std::vector<BatchSlot> make_batch(const Corpus& corpus, const WatermarkTask& task,
                                         int batch_size, Rng& rng) {
  require(batch_size >= 1, Errc::parameter, "make_batch: batch_size must be >= 1");
  require(task.poison_rate >= 0.0 && task.poison_rate <= 1.0, Errc::parameter,
          "make_batch: poison_rate must be in [0, 1]");
  const std::vector<size_t> benign = corpus.benign_train_indices();
  require(!benign.empty(), Errc::task, "make_batch: no benign training items");

  std::vector<size_t> wm_pool;
  if (task.mode != TaskMode::instance) {
    require(task.target_class >= 0 &&
                task.target_class < static_cast<int>(corpus.classes.size()),
            Errc::task, "make_batch: target class out of range");
    if (task.mode == TaskMode::out_distribution)
      require(task.target_class == corpus.reserved_class, Errc::task,
              "make_batch: out-of-distribution target must be the reserved class");
    else
      require(task.target_class != corpus.reserved_class, Errc::task,
              "make_batch: in-distribution target must not be the reserved class");
    wm_pool = corpus.indices(Split::train, task.target_class);
    require(!wm_pool.empty(), Errc::task, "make_batch: no training items of the target class");
  } else {
    require(!task.target_instance.empty(), Errc::task,
            "make_batch: instance mode needs a target spectrogram");
  }

  std::vector<BatchSlot> batch(batch_size);
  for (int b = 0; b < batch_size; ++b) {
    BatchSlot& slot = batch[b];
    slot.is_watermark = rng.uniform() < task.poison_rate;
    if (slot.is_watermark) {
      slot.x0w = task.mode == TaskMode::instance
                     ? task.target_instance
                     : corpus.items[wm_pool[static_cast<size_t>(rng.uniform() * wm_pool.size()) %
                                            wm_pool.size()]]
                           .mel;
    } else {
      slot.x0 = corpus.items[benign[static_cast<size_t>(rng.uniform() * benign.size()) %
                                    benign.size()]]
                    .mel;
    }
  }
  return batch;
}

}  // namespace melmark
