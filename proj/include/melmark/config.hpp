// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <charconv>
#include <cinttypes>
#include <cstdio>
#include <string>
#include <vector>

#include "melmark/dataset.hpp"
#include "melmark/errors.hpp"
#include "melmark/mel.hpp"
#include "melmark/sampler.hpp"
#include "melmark/trigger.hpp"

namespace melmark {

// Everything a run needs, in one value. Serialized as `key=value` lines so a
// run can be reproduced from the config text embedded in its checkpoints.
struct RunConfig {
  MelConfig mel;

  int timesteps = 100;
  double beta_start = 1e-3;
  double beta_end = 0.2;

  bool watermark = true;  // false trains a vanilla model on the same data
  TriggerSpec trigger;

  TaskMode task_mode = TaskMode::in_distribution;
  int target_class = -1;        // class-targeted modes; resolved against the corpus
  std::string target_mel_path;  // instance mode: PGM of the target (empty = built-in)
  double poison_rate = 0.5;

  int64_t steps = 8000;
  int batch = 8;
  double lr = 2e-4;
  uint64_t seed = 1;
  int64_t ckpt_every = 2000;

  SampleMethod method;

  std::string out_dir = "out";

  // Range checks that need no data; anything corpus-dependent (e.g. whether
  // target_class exists) is checked where the corpus is in hand.
  void validate() const {
    mel.validate();
    require(timesteps >= 1, Errc::parameter, "config: schedule.timesteps must be >= 1");
    require(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0, Errc::parameter,
            "config: need 0 < schedule.beta_start <= schedule.beta_end < 1");
    require(trigger.gamma >= 0.0 && trigger.gamma <= 1.0, Errc::parameter,
            "config: trigger.gamma must be in [0, 1]");
    require(poison_rate >= 0.0 && poison_rate <= 1.0, Errc::parameter,
            "config: task.poison_rate must be in [0, 1]");
    require(steps >= 1, Errc::parameter, "config: train.steps must be >= 1");
    require(batch >= 1, Errc::parameter, "config: train.batch must be >= 1");
    require(lr > 0.0, Errc::parameter, "config: train.lr must be positive");
    require(ckpt_every >= 1, Errc::parameter, "config: train.ckpt_every must be >= 1");
    require(method.eta >= 0.0 && method.eta <= 1.0, Errc::parameter,
            "config: sample.eta must be in [0, 1]");
    require(method.ddim_steps >= 1 && method.ddim_steps <= timesteps, Errc::parameter,
            "config: sample.ddim_steps must be in [1, timesteps]");
  }
};

namespace detail {

inline std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline double parse_double(const std::string& key, const std::string& s) {
  try {
    size_t pos = 0;
    const double v = std::stod(s, &pos);
    require(pos == s.size(), Errc::format, "config: trailing junk in value for " + key);
    return v;
  } catch (const Error&) {
    throw;
  } catch (...) {
    raise(Errc::format, "config: bad number for " + key + ": " + s);
  }
}

inline int64_t parse_i64(const std::string& key, const std::string& s) {
  int64_t v = 0;
  const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  require(ec == std::errc() && p == s.data() + s.size(), Errc::format,
          "config: bad integer for " + key + ": " + s);
  return v;
}

inline uint64_t parse_u64(const std::string& key, const std::string& s) {
  uint64_t v = 0;
  const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  require(ec == std::errc() && p == s.data() + s.size(), Errc::format,
          "config: bad unsigned integer for " + key + ": " + s);
  return v;
}

inline bool parse_bool(const std::string& key, const std::string& s) {
  if (s == "1" || s == "true") return true;
  if (s == "0" || s == "false") return false;
  raise(Errc::format, "config: bad boolean for " + key + ": " + s);
}

inline std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r");
  size_t b = s.find_last_not_of(" \t\r");
  return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
}

}  // namespace detail

// Assigns one key. Shared by the file parser and by command-line overrides,
// so `--set key=value` can change anything a config file can.
inline void config_set(RunConfig& c, const std::string& key, const std::string& value) {
  using detail::parse_bool;
  using detail::parse_double;
  using detail::parse_i64;
  using detail::parse_u64;
  const auto to_int = [&](const char* what) {
    const int64_t v = parse_i64(key, value);
    require(v >= INT32_MIN && v <= INT32_MAX, Errc::format,
            std::string("config: value out of range for ") + what);
    return static_cast<int>(v);
  };

  if (key == "mel.sample_rate") c.mel.sample_rate = to_int(key.c_str());
  else if (key == "mel.n_fft") c.mel.n_fft = to_int(key.c_str());
  else if (key == "mel.hop") c.mel.hop = to_int(key.c_str());
  else if (key == "mel.n_mels") c.mel.n_mels = to_int(key.c_str());
  else if (key == "mel.f_min") c.mel.f_min = parse_double(key, value);
  else if (key == "mel.f_max") c.mel.f_max = parse_double(key, value);
  else if (key == "mel.db_floor") c.mel.db_floor = parse_double(key, value);
  else if (key == "mel.griffin_lim_iters") c.mel.griffin_lim_iters = to_int(key.c_str());
  else if (key == "schedule.timesteps") c.timesteps = to_int(key.c_str());
  else if (key == "schedule.beta_start") c.beta_start = parse_double(key, value);
  else if (key == "schedule.beta_end") c.beta_end = parse_double(key, value);
  else if (key == "watermark") c.watermark = parse_bool(key, value);
  else if (key == "trigger.kind") c.trigger.kind = trigger_kind_from_name(value);
  else if (key == "trigger.gamma") c.trigger.gamma = parse_double(key, value);
  else if (key == "trigger.seed") c.trigger.seed = parse_u64(key, value);
  else if (key == "trigger.source_path") c.trigger.source_path = value;
  else if (key == "trigger.patch_size") c.trigger.patch_size = to_int(key.c_str());
  else if (key == "trigger.infrasound_hz") c.trigger.infrasound_hz = parse_double(key, value);
  else if (key == "trigger.infrasound_amp") c.trigger.infrasound_amp = parse_double(key, value);
  else if (key == "task.mode") c.task_mode = task_mode_from_name(value);
  else if (key == "task.target_class") c.target_class = to_int(key.c_str());
  else if (key == "task.target_mel") c.target_mel_path = value;
  else if (key == "task.poison_rate") c.poison_rate = parse_double(key, value);
  else if (key == "train.steps") c.steps = parse_i64(key, value);
  else if (key == "train.batch") c.batch = to_int(key.c_str());
  else if (key == "train.lr") c.lr = parse_double(key, value);
  else if (key == "train.seed") c.seed = parse_u64(key, value);
  else if (key == "train.ckpt_every") c.ckpt_every = parse_i64(key, value);
  else if (key == "sample.method") c.method.kind = sampler_kind_from_name(value);
  else if (key == "sample.ddim_steps") c.method.ddim_steps = to_int(key.c_str());
  else if (key == "sample.eta") c.method.eta = parse_double(key, value);
  else if (key == "out_dir") c.out_dir = value;
  else raise(Errc::parameter, "config: unknown key: " + key);
}

// `key=value` lines; '#' starts a comment, blank lines are skipped.
inline RunConfig parse_config(const std::string& text) {
  RunConfig c;
  size_t line_no = 0, pos = 0;
  while (pos <= text.size()) {
    const size_t eol = text.find('\n', pos);
    std::string line = text.substr(pos, eol == std::string::npos ? std::string::npos : eol - pos);
    pos = eol == std::string::npos ? text.size() + 1 : eol + 1;
    ++line_no;
    const size_t hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const size_t eq = line.find('=');
    require(eq != std::string::npos, Errc::format,
            "config: line " + std::to_string(line_no) + " is not key=value");
    config_set(c, detail::trim(line.substr(0, eq)), detail::trim(line.substr(eq + 1)));
  }
  return c;
}

// Canonical text: every key, fixed order, 17-digit doubles. parse(serialize(c))
// reproduces c exactly, which is what checkpoint embedding relies on.
inline std::string serialize_config(const RunConfig& c) {
  using detail::fmt_double;
  std::string s;
  const auto kv = [&s](const std::string& k, const std::string& v) {
    s += k;
    s += '=';
    s += v;
    s += '\n';
  };
  kv("mel.sample_rate", std::to_string(c.mel.sample_rate));
  kv("mel.n_fft", std::to_string(c.mel.n_fft));
  kv("mel.hop", std::to_string(c.mel.hop));
  kv("mel.n_mels", std::to_string(c.mel.n_mels));
  kv("mel.f_min", fmt_double(c.mel.f_min));
  kv("mel.f_max", fmt_double(c.mel.f_max));
  kv("mel.db_floor", fmt_double(c.mel.db_floor));
  kv("mel.griffin_lim_iters", std::to_string(c.mel.griffin_lim_iters));
  kv("schedule.timesteps", std::to_string(c.timesteps));
  kv("schedule.beta_start", fmt_double(c.beta_start));
  kv("schedule.beta_end", fmt_double(c.beta_end));
  kv("watermark", c.watermark ? "1" : "0");
  kv("trigger.kind", trigger_kind_name(c.trigger.kind));
  kv("trigger.gamma", fmt_double(c.trigger.gamma));
  kv("trigger.seed", std::to_string(c.trigger.seed));
  kv("trigger.source_path", c.trigger.source_path);
  kv("trigger.patch_size", std::to_string(c.trigger.patch_size));
  kv("trigger.infrasound_hz", fmt_double(c.trigger.infrasound_hz));
  kv("trigger.infrasound_amp", fmt_double(c.trigger.infrasound_amp));
  kv("task.mode", task_mode_name(c.task_mode));
  kv("task.target_class", std::to_string(c.target_class));
  kv("task.target_mel", c.target_mel_path);
  kv("task.poison_rate", fmt_double(c.poison_rate));
  kv("train.steps", std::to_string(c.steps));
  kv("train.batch", std::to_string(c.batch));
  kv("train.lr", fmt_double(c.lr));
  kv("train.seed", std::to_string(c.seed));
  kv("train.ckpt_every", std::to_string(c.ckpt_every));
  kv("sample.method", sampler_kind_name(c.method.kind));
  kv("sample.ddim_steps", std::to_string(c.method.ddim_steps));
  kv("sample.eta", fmt_double(c.method.eta));
  kv("out_dir", c.out_dir);
  return s;
}

}  // namespace melmark
