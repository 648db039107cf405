// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cinttypes>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "melmark/checkpoint.hpp"
#include "melmark/config.hpp"
#include "melmark/dataset.hpp"
#include "melmark/denoiser.hpp"
#include "melmark/errors.hpp"
#include "melmark/metrics.hpp"
#include "melmark/sampler.hpp"
#include "melmark/schedule.hpp"
#include "melmark/trigger.hpp"

namespace melmark {

namespace fs = std::filesystem;

// ---- command layer ----
//
// Each command is a plain function over an argument struct so the whole
// surface is drivable from tests; the binary's main() only parses flags into
// these structs. Every run is single-threaded and derives all randomness
// from its seed, so reruns reproduce outputs byte for byte.

constexpr const char* kInstanceDirName = "_instance";
constexpr const char* kReservedClassName = "backward";

// Fingerprint of everything that fixes parameter meaning: a resume onto a
// different geometry or parameter count is refused.
inline uint64_t denoiser_arch_hash(const ConvDenoiser<float>& net, const MelConfig& mel) {
  const std::string desc = "conv-unet/1|grid=" + std::to_string(mel.n_mels) + "x" +
                           std::to_string(mel.width()) +
                           "|params=" + std::to_string(net.param_count());
  return fnv1a64(desc);
}

// 8-bit PGM -> unit-normalized grid, the inverse of write_pgm's quantization.
inline Grid load_unit_mel_pgm(const std::string& path) {
  Grid raw = read_pgm(path);
  for (double& v : raw.v) v = v / 255.0 * 2.0 - 1.0;
  return raw;
}

inline void ensure_dir(const fs::path& p) {
  std::error_code ec;
  fs::create_directories(p, ec);
  require(!ec && fs::is_directory(p), Errc::io, "cannot create directory: " + p.string());
}

namespace detail {

inline void write_text_file(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  require(f.good(), Errc::io, "cannot write " + path.string());
  f << text;
  require(f.good(), Errc::io, "write failed: " + path.string());
}

inline std::string read_text_file(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  require(f.good(), Errc::io, "cannot open " + path.string());
  return std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
}

inline std::string fmt_g17(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace detail

// ---- data generation ----

struct GenDataArgs {
  std::string out_dir;
  int per_class = 10;
  uint64_t seed = 1;
  bool force = false;
  MelConfig mel;  // sample rate and duration of the synthesized clips
};

struct GenDataResult {
  fs::path root;
  int files_written = 0;
};

// Writes the synthetic corpus as a WAV tree (one directory per class, the
// held-out class included) plus the fixed instance clip under _instance/,
// which ingest skips. Same seed, same bytes.
inline GenDataResult cmd_gen_data(const GenDataArgs& args) {
  require(args.per_class >= 1, Errc::usage, "gen-data: --per-class must be >= 1");
  const fs::path root(args.out_dir);
  if (fs::exists(root) && !fs::is_empty(root))
    require(args.force, Errc::io,
            "gen-data: output directory is not empty (pass --force to overwrite): " +
                root.string());
  ensure_dir(root);

  GenDataResult res{root, 0};
  Rng root_rng(args.seed);
  char buf[64];
  for (int label = 0; label <= 10; ++label) {
    const std::string cname = synthetic_class_name(label);
    ensure_dir(root / cname);
    for (int i = 0; i < args.per_class; ++i) {
      Rng item_rng = root_rng.split(static_cast<uint64_t>(label) * 1000003ull + i);
      AudioClip clip = synth_class_clip(label, item_rng, args.mel);
      std::snprintf(buf, sizeof buf, "%s_%04d.wav", cname.c_str(), i);
      save_wav(clip, (root / cname / buf).string());
      ++res.files_written;
    }
  }
  ensure_dir(root / kInstanceDirName);
  save_wav(synth_instance_clip(args.mel), (root / kInstanceDirName / "glide.wav").string());
  ++res.files_written;
  return res;
}

// Mel of the instance clip shipped with a generated data tree, if present.
inline std::optional<Grid> load_instance_mel(const std::string& data_dir,
                                             const MelConfig& cfg) {
  const fs::path dir = fs::path(data_dir) / kInstanceDirName;
  if (!fs::is_directory(dir)) return std::nullopt;
  std::vector<fs::path> wavs;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".wav") wavs.push_back(e.path());
  if (wavs.empty()) return std::nullopt;
  std::sort(wavs.begin(), wavs.end());
  AudioClip clip = load_wav(wavs.front().string());
  require(clip.sample_rate == cfg.sample_rate, Errc::parameter,
          "instance clip sample rate differs from config");
  clip.samples.resize(cfg.sample_rate, 0.0);
  return audio_to_mel(clip, cfg).values;
}

// ---- training ----

struct TrainArgs {
  RunConfig config;
  std::string data_dir;
  std::string resume_path;  // empty = fresh start
  std::string reserved_class_name = kReservedClassName;
};

struct TrainResult {
  fs::path final_checkpoint;
  std::vector<fs::path> checkpoints;
  fs::path loss_log;
  int64_t steps_run = 0;
  double first_loss = 0.0;
  double last_loss = 0.0;
};

namespace detail {

// Data-dependent pieces of a run: realized trigger, watermark field, batch
// task, and the spectrogram the sampler's trace distance is measured against.
struct RunSetup {
  DiffusionSchedule sched;
  std::optional<Trigger> trigger;
  std::optional<WatermarkParams> wm;
  WatermarkTask task;
  Grid target_mel;  // empty for vanilla runs
};

inline RunSetup build_run_setup(const RunConfig& cfg, const Corpus& corpus,
                                const std::optional<Grid>& instance_mel) {
  RunSetup s;
  s.sched = linear_schedule(cfg.timesteps, cfg.beta_start, cfg.beta_end);
  s.task.poison_rate = cfg.poison_rate;
  s.task.mode = cfg.task_mode;

  if (!cfg.watermark) {
    // Vanilla: plain DDPM training, no slot is ever poisoned.
    s.task.mode = TaskMode::in_distribution;
    s.task.target_class = 0;
    s.task.poison_rate = 0.0;
    return s;
  }

  Trigger trig = make_trigger(cfg.trigger, cfg.mel);
  s.wm = make_watermark_params(trig.gamma, trig.delta, trig.mask);
  s.trigger = std::move(trig);

  switch (cfg.task_mode) {
    case TaskMode::in_distribution: {
      require(cfg.target_class >= 0, Errc::parameter,
              "config: task.target_class is required for the in-distribution task");
      s.task.target_class = cfg.target_class;
      s.target_mel = corpus.class_centroid(s.task.target_class, Split::train);
      break;
    }
    case TaskMode::out_distribution: {
      require(corpus.reserved_class >= 0, Errc::task,
              "out-of-distribution task needs a corpus with a reserved class");
      require(cfg.target_class < 0 || cfg.target_class == corpus.reserved_class,
              Errc::parameter, "config: out-of-distribution target must be the reserved class");
      s.task.target_class = corpus.reserved_class;
      s.target_mel = corpus.class_centroid(s.task.target_class, Split::train);
      break;
    }
    case TaskMode::instance: {
      if (!cfg.target_mel_path.empty())
        s.task.target_instance = load_unit_mel_pgm(cfg.target_mel_path);
      else {
        require(instance_mel.has_value(), Errc::task,
                "instance task: no target (set task.target_mel or ship an " +
                    std::string(kInstanceDirName) + " clip with the data)");
        s.task.target_instance = *instance_mel;
      }
      require(s.task.target_instance.h == cfg.mel.n_mels &&
                  s.task.target_instance.w == cfg.mel.width(),
              Errc::size, "instance target shape does not match the mel geometry");
      s.target_mel = s.task.target_instance;
      break;
    }
  }
  return s;
}

inline Checkpoint make_checkpoint(const ConvDenoiser<float>& net, const TrainState& st,
                                  const RunConfig& cfg, const RunSetup& setup) {
  Checkpoint ck;
  ck.step = static_cast<uint64_t>(st.step);
  ck.arch_hash = denoiser_arch_hash(net, cfg.mel);
  ck.config = cfg;
  ck.add("model.params", {static_cast<uint32_t>(st.params.size())}, st.params);
  ck.add("model.ema", {static_cast<uint32_t>(st.ema.size())}, st.ema);
  if (!st.adam.m.empty()) {
    ck.add("opt.m", {static_cast<uint32_t>(st.adam.m.size())}, st.adam.m);
    ck.add("opt.v", {static_cast<uint32_t>(st.adam.v.size())}, st.adam.v);
  }
  const auto arr = [&ck](const char* name, const std::vector<double>& a) {
    std::vector<float> f(a.size());
    for (size_t i = 0; i < a.size(); ++i) f[i] = static_cast<float>(a[i]);
    ck.add(name, {static_cast<uint32_t>(f.size())}, std::move(f));
  };
  arr("schedule.beta", setup.sched.beta);
  arr("schedule.alpha_bar", setup.sched.alpha_bar);
  arr("schedule.k", setup.sched.k);
  if (setup.wm) {
    ck.add_grid("trigger.delta", setup.wm->delta);
    ck.add_grid("trigger.mask", setup.wm->mask);
  }
  if (!setup.target_mel.empty()) ck.add_grid("target.mel", setup.target_mel);
  return ck;
}

}  // namespace detail

inline TrainResult cmd_train(const TrainArgs& args) {
  const RunConfig& cfg = args.config;
  cfg.validate();
  Corpus corpus = ingest_wav_dir(args.data_dir, cfg.mel, args.reserved_class_name);
  detail::RunSetup setup =
      detail::build_run_setup(cfg, corpus, load_instance_mel(args.data_dir, cfg.mel));

  ConvDenoiser<float> net;
  const uint64_t arch = denoiser_arch_hash(net, cfg.mel);
  TrainState st = make_train_state(net, cfg.seed);
  if (!args.resume_path.empty()) {
    Checkpoint ck = load_checkpoint(args.resume_path);
    require(ck.arch_hash == arch, Errc::format,
            "train: refusing to resume, checkpoint architecture differs from this model");
    st.params = ck.get("model.params").data;
    st.ema = ck.get("model.ema").data;
    st.adam.m = ck.get("opt.m").data;
    st.adam.v = ck.get("opt.v").data;
    st.adam.step = static_cast<int64_t>(ck.step);
    st.step = static_cast<int64_t>(ck.step);
    require(st.params.size() == net.param_count(), Errc::format,
            "train: checkpoint parameter count mismatch");
  }

  const fs::path out(cfg.out_dir);
  ensure_dir(out);
  TrainResult res;
  res.loss_log = out / "loss.csv";
  std::ofstream log(res.loss_log, st.step > 0 ? std::ios::app : std::ios::trunc);
  require(log.good(), Errc::io, "cannot write " + res.loss_log.string());
  if (st.step == 0) log << "step,loss,benign_loss,wm_loss\n";

  TrainOpts opts;
  opts.lr = cfg.lr;
  const Rng root(cfg.seed);
  char name[64];
  bool first = true;
  // The RNG for step s depends only on (seed, s): resuming from a checkpoint
  // at step k replays exactly the batches and noise a straight run would see.
  for (int64_t step = st.step + 1; step <= cfg.steps; ++step) {
    Rng step_rng = root.split(static_cast<uint64_t>(step));
    std::vector<BatchSlot> batch = make_batch(corpus, setup.task, cfg.batch, step_rng);
    const StepStats stats =
        train_step(net, st, batch, setup.sched, setup.wm ? &*setup.wm : nullptr, step_rng, opts);
    log << step << ',' << detail::fmt_g17(stats.loss) << ','
        << detail::fmt_g17(stats.benign_loss) << ',' << detail::fmt_g17(stats.wm_loss) << '\n';
    if (first) {
      res.first_loss = stats.loss;
      first = false;
    }
    res.last_loss = stats.loss;
    ++res.steps_run;
    if (step % cfg.ckpt_every == 0 || step == cfg.steps) {
      std::snprintf(name, sizeof name, "ckpt_%08lld.mmk", static_cast<long long>(step));
      const fs::path p = out / name;
      save_checkpoint(detail::make_checkpoint(net, st, cfg, setup), p.string());
      res.checkpoints.push_back(p);
      log.flush();
    }
  }
  require(!res.checkpoints.empty(), Errc::task,
          "train: nothing to do (checkpoint step is already past train.steps)");
  res.final_checkpoint = res.checkpoints.back();
  return res;
}

// ---- sampling ----

struct SampleArgs {
  std::string ckpt_path;
  int count = 4;
  bool trigger_on = false;
  bool use_ema = true;
  std::optional<SampleMethod> method;  // overrides the checkpoint's config
  uint64_t seed = 1;
  bool record_trace = false;
  bool emit_wav = false;
  bool emit_mel = false;
  bool emit_pgm = false;
  std::string out_dir;          // empty = <checkpoint out_dir>/samples
  std::string target_mel_path;  // trace target override (PGM)
  bool quiet = false;           // suppress advisory prints (for tests)
};

struct SampleResult {
  std::vector<Grid> mels;
  std::vector<SampleTrace> traces;
  std::vector<fs::path> files;
  bool trigger_ignored = false;  // trigger requested on a vanilla checkpoint
};

inline SampleResult cmd_sample(const SampleArgs& args) {
  require(args.count >= 1, Errc::usage, "sample: --count must be >= 1");
  Checkpoint ck = load_checkpoint(args.ckpt_path);
  const RunConfig& cfg = ck.config;
  const DiffusionSchedule sched = linear_schedule(cfg.timesteps, cfg.beta_start, cfg.beta_end);
  const SampleMethod method = args.method.value_or(cfg.method);
  require(method.eta >= 0.0 && method.eta <= 1.0, Errc::parameter,
          "sample: eta must be in [0, 1]");
  require(method.ddim_steps >= 1 && method.ddim_steps <= cfg.timesteps, Errc::parameter,
          "sample: ddim steps must be in [1, timesteps]");

  ConvDenoiser<float> net;
  require(ck.arch_hash == denoiser_arch_hash(net, cfg.mel), Errc::format,
          "sample: checkpoint architecture differs from this model");
  const std::vector<float>& params = args.use_ema ? ck.get("model.ema").data
                                                  : ck.get("model.params").data;
  ConvDenoiserPredictor pred(net, params);

  SampleResult res;
  std::optional<WatermarkParams> wm;
  if (args.trigger_on) {
    if (!cfg.watermark) {
      res.trigger_ignored = true;
      if (!args.quiet)
        std::fprintf(stderr,
                     "warning: checkpoint was trained without a watermark; "
                     "sampling proceeds benign\n");
    } else {
      wm = make_watermark_params(cfg.trigger.gamma, ck.get_grid("trigger.delta"),
                                 ck.get_grid("trigger.mask"));
    }
  }

  std::optional<Grid> target;
  if (!args.target_mel_path.empty()) target = load_unit_mel_pgm(args.target_mel_path);
  else if (ck.find("target.mel")) target = ck.get_grid("target.mel");
  if (args.record_trace)
    require(target.has_value(), Errc::usage,
            "sample: tracing needs a target (checkpoint has none; pass --target-mel)");

  const int h = cfg.mel.n_mels, w = cfg.mel.width();
  Rng rng(args.seed);
  Rng chains(rng.next_u64());  // same chain layout as the bulk sampler
  for (int i = 0; i < args.count; ++i) {
    Rng chain_rng = chains.split(static_cast<uint64_t>(i));
    SampleTrace trace;
    res.mels.push_back(sample_chain(pred, sched, wm ? &*wm : nullptr, method, h, w, chain_rng,
                                    args.record_trace ? &trace : nullptr,
                                    target ? &*target : nullptr, false));
    if (args.record_trace) res.traces.push_back(std::move(trace));
  }

  const fs::path out = args.out_dir.empty() ? fs::path(cfg.out_dir) / "samples"
                                            : fs::path(args.out_dir);
  if (args.emit_wav || args.emit_mel || args.emit_pgm || args.record_trace) ensure_dir(out);

  char name[64];
  for (int i = 0; i < args.count; ++i) {
    if (args.emit_pgm) {
      std::snprintf(name, sizeof name, "sample_%03d.pgm", i);
      write_pgm(res.mels[i], (out / name).string());
      res.files.push_back(out / name);
    }
    if (args.emit_wav) {
      std::snprintf(name, sizeof name, "sample_%03d.wav", i);
      save_wav(mel_to_audio(MelSpectrogram{res.mels[i], MelNorm::unit}, cfg.mel),
               (out / name).string());
      res.files.push_back(out / name);
    }
    if (args.record_trace) {
      std::snprintf(name, sizeof name, "trace_%03d.csv", i);
      std::string csv = "t,l2_to_target\n";
      const SampleTrace& tr = res.traces[i];
      for (size_t j = 0; j < tr.ts.size(); ++j)
        csv += std::to_string(tr.ts[j]) + "," + detail::fmt_g17(tr.l2_to_target[j]) + "\n";
      detail::write_text_file(out / name, csv);
      res.files.push_back(out / name);
    }
  }
  if (args.emit_mel) {
    // All mels in one container, full precision.
    Checkpoint bundle;
    bundle.step = ck.step;
    bundle.arch_hash = ck.arch_hash;
    bundle.config = cfg;
    for (int i = 0; i < args.count; ++i) {
      std::snprintf(name, sizeof name, "mel.%03d", i);
      bundle.add_grid(name, res.mels[i]);
    }
    save_checkpoint(bundle, (out / "samples.mmk").string());
    res.files.push_back(out / "samples.mmk");
  }
  return res;
}

// ---- verification ----

struct VerifyArgs {
  std::string ckpt_path;
  std::string real_dir;
  int count = 100;
  uint64_t seed = 7;
  std::string out_dir;           // empty = <checkpoint out_dir>/verify
  std::string classifier_cache;  // optional MMK path reused across runs
  std::string reserved_class_name = kReservedClassName;
  bool quiet = false;
};

struct VerifyResult {
  MetricReport benign;
  std::optional<MetricReport> watermark;
  std::vector<fs::path> files;
};

inline std::string report_to_json(const MetricReport& r) {
  nlohmann::json j;
  const auto put = [&j](const char* k, double v) {
    if (std::isfinite(v)) j[k] = v;
  };
  put("wsr", r.wsr);
  put("fid", r.fid);
  put("is_score", r.is_score);
  put("precision", r.precision);
  put("recall", r.recall);
  put("f1", r.f1);
  put("snr_db", r.snr_db);
  put("ssim", r.ssim);
  put("psnr_db", r.psnr_db);
  put("mse", r.mse);
  return j.dump(2) + "\n";
}

inline MetricReport report_from_json(const std::string& text) {
  const nlohmann::json j = nlohmann::json::parse(text);
  MetricReport r;
  const auto get = [&j](const char* k, double& v) {
    if (j.contains(k)) v = j.at(k).get<double>();
  };
  get("wsr", r.wsr);
  get("fid", r.fid);
  get("is_score", r.is_score);
  get("precision", r.precision);
  get("recall", r.recall);
  get("f1", r.f1);
  get("snr_db", r.snr_db);
  get("ssim", r.ssim);
  get("psnr_db", r.psnr_db);
  get("mse", r.mse);
  return r;
}

inline std::string report_to_text(const MetricReport& r) {
  std::string s;
  const auto put = [&s](const char* k, double v) {
    if (std::isfinite(v)) s += std::string(k) + "=" + detail::fmt_g17(v) + "\n";
  };
  put("wsr", r.wsr);
  put("fid", r.fid);
  put("is_score", r.is_score);
  put("precision", r.precision);
  put("recall", r.recall);
  put("f1", r.f1);
  put("snr_db", r.snr_db);
  put("ssim", r.ssim);
  put("psnr_db", r.psnr_db);
  put("mse", r.mse);
  return s;
}

namespace detail {

inline Classifier load_or_train_classifier(const Corpus& corpus, int num_classes,
                                           uint64_t seed, const std::string& cache_path) {
  if (!cache_path.empty() && fs::exists(cache_path)) {
    Checkpoint ck = load_checkpoint(cache_path);
    const TensorRecord& meta = ck.get("clf.meta");
    require(meta.data.size() == 1 && static_cast<int>(meta.data[0]) == num_classes,
            Errc::format, "classifier cache: class count mismatch");
    Classifier clf(num_classes);
    const TensorRecord& p = ck.get("clf.params");
    require(p.data.size() == clf.params.size(), Errc::format,
            "classifier cache: parameter count mismatch");
    clf.params = p.data;
    return clf;
  }
  TrainedClassifier tc = train_classifier(corpus, num_classes, seed);
  if (!cache_path.empty()) {
    Checkpoint ck;
    ck.add("clf.params", {static_cast<uint32_t>(tc.clf.params.size())}, tc.clf.params);
    ck.add("clf.meta", {1}, {static_cast<float>(num_classes)});
    ensure_dir(fs::path(cache_path).parent_path().empty()
                   ? fs::path(".")
                   : fs::path(cache_path).parent_path());
    save_checkpoint(ck, cache_path);
  }
  return tc.clf;
}

// Fraction of samples whose nearest spectrogram (by L2) among all class
// centroids plus the target is the target itself. The instance-mode analogue
// of classifier-based success.
inline double nearest_centroid_wsr(const std::vector<Grid>& samples, const Grid& target,
                                   const std::vector<Grid>& class_centroids) {
  require(!samples.empty(), Errc::metric_prereq, "nearest-centroid wsr: empty sample set");
  int hit = 0;
  for (const Grid& s : samples) {
    const double dt = grid_l2(s, target);
    bool target_closest = true;
    for (const Grid& c : class_centroids)
      if (grid_l2(s, c) <= dt) {
        target_closest = false;
        break;
      }
    hit += target_closest ? 1 : 0;
  }
  return static_cast<double>(hit) / samples.size();
}

inline double mean_ref_free_snr(const std::vector<Grid>& mels, const MelConfig& cfg) {
  double acc = 0.0;
  for (const Grid& m : mels)
    acc += snr_db(mel_to_audio(MelSpectrogram{m, MelNorm::unit}, cfg));
  return acc / static_cast<double>(mels.size());
}

}  // namespace detail

inline VerifyResult cmd_verify(const VerifyArgs& args) {
  require(args.count >= 1, Errc::usage, "verify: --count must be >= 1");
  if (args.count < 50 && !args.quiet)
    std::fprintf(stderr,
                 "warning: %d samples is below the statistical floor (50); "
                 "metric estimates will be noisy\n",
                 args.count);

  Checkpoint ck = load_checkpoint(args.ckpt_path);
  const RunConfig& cfg = ck.config;
  Corpus corpus = ingest_wav_dir(args.real_dir, cfg.mel, args.reserved_class_name);
  const int num_classes = static_cast<int>(corpus.classes.size());
  Classifier clf = detail::load_or_train_classifier(corpus, num_classes,
                                                    mix64(args.seed ^ 0x636c66ull),
                                                    args.classifier_cache);

  const fs::path out = args.out_dir.empty() ? fs::path(cfg.out_dir) / "verify"
                                            : fs::path(args.out_dir);
  ensure_dir(out);

  SampleArgs sa;
  sa.ckpt_path = args.ckpt_path;
  sa.count = args.count;
  sa.seed = args.seed;
  sa.quiet = true;

  VerifyResult res;

  // Benign suite: distribution quality of unconditioned samples against the
  // benign training set, in classifier feature space.
  sa.trigger_on = false;
  const std::vector<Grid> benign_mels = cmd_sample(sa).mels;
  std::vector<Grid> real;
  for (size_t i : corpus.benign_train_indices()) real.push_back(corpus.items[i].mel);
  res.benign.fid = frechet(embed_all(clf, real), embed_all(clf, benign_mels));
  res.benign.is_score = inception_score(benign_mels, clf);
  detail::write_text_file(out / "report_benign.json", report_to_json(res.benign));
  detail::write_text_file(out / "report_benign.txt", report_to_text(res.benign));
  res.files.push_back(out / "report_benign.json");
  res.files.push_back(out / "report_benign.txt");

  // Watermark suite: skipped entirely for vanilla checkpoints.
  if (cfg.watermark) {
    sa.trigger_on = true;
    sa.seed = mix64(args.seed + 1);
    const std::vector<Grid> wm_mels = cmd_sample(sa).mels;
    MetricReport wm;
    wm.snr_db = detail::mean_ref_free_snr(wm_mels, cfg.mel);

    if (cfg.task_mode == TaskMode::instance) {
      const Grid target = ck.get_grid("target.mel");
      std::vector<Grid> centroids;
      for (int c = 0; c < num_classes; ++c)
        centroids.push_back(corpus.class_centroid(c, Split::train));
      wm.wsr = detail::nearest_centroid_wsr(wm_mels, target, centroids);
      double ssim = 0.0, psnr = 0.0, mse = 0.0;
      for (const Grid& m : wm_mels) {
        const ImageQuality q = image_quality(m, target);
        ssim += q.ssim;
        psnr += q.psnr_db;
        mse += q.mse;
      }
      wm.ssim = ssim / wm_mels.size();
      wm.psnr_db = psnr / wm_mels.size();
      wm.mse = mse / wm_mels.size();
    } else {
      const int target = cfg.task_mode == TaskMode::out_distribution ? corpus.reserved_class
                                                                     : cfg.target_class;
      require(target >= 0 && target < num_classes, Errc::task,
              "verify: checkpoint's target class is not in this corpus");
      wm.wsr = wsr(wm_mels, clf, target);
      std::vector<Grid> target_real;
      for (size_t i : corpus.indices(Split::train, target))
        target_real.push_back(corpus.items[i].mel);
      const PrecisionRecall pr =
          knn_precision_recall(embed_all(clf, target_real), embed_all(clf, wm_mels));
      wm.precision = pr.precision;
      wm.recall = pr.recall;
      wm.f1 = pr.f1;
    }
    res.watermark = wm;
    detail::write_text_file(out / "report_watermark.json", report_to_json(wm));
    detail::write_text_file(out / "report_watermark.txt", report_to_text(wm));
    res.files.push_back(out / "report_watermark.json");
    res.files.push_back(out / "report_watermark.txt");
  }
  return res;
}

// ---- experiment suites ----

struct ExperimentArgs {
  std::string suite;  // table1 | fig3 | fig5 | table3 | table4
  std::string data_dir;
  std::string out_dir;
  RunConfig base;  // training profile applied to every model in the suite
  int count = 100;
  uint64_t seed = 5;
  std::string reserved_class_name = kReservedClassName;
  bool quiet = false;
};

struct ExperimentResult {
  std::vector<fs::path> files;
};

namespace detail {

// Train-if-absent: a suite rerun reuses finished models.
inline fs::path ensure_model(const RunConfig& cfg, const std::string& data_dir,
                             const std::string& reserved, bool quiet) {
  char name[64];
  std::snprintf(name, sizeof name, "ckpt_%08lld.mmk", static_cast<long long>(cfg.steps));
  const fs::path final_path = fs::path(cfg.out_dir) / name;
  if (fs::exists(final_path)) {
    if (!quiet)
      std::fprintf(stderr, "experiment: reusing %s\n", final_path.string().c_str());
    return final_path;
  }
  TrainArgs ta;
  ta.config = cfg;
  ta.data_dir = data_dir;
  ta.reserved_class_name = reserved;
  // Continue a partial run when an intermediate checkpoint exists.
  fs::path best;
  uint64_t best_step = 0;
  if (fs::is_directory(cfg.out_dir)) {
    for (const auto& e : fs::directory_iterator(cfg.out_dir)) {
      const std::string stem = e.path().filename().string();
      if (stem.rfind("ckpt_", 0) == 0 && e.path().extension() == ".mmk") {
        const uint64_t s = std::strtoull(stem.c_str() + 5, nullptr, 10);
        if (s > best_step) {
          best_step = s;
          best = e.path();
        }
      }
    }
  }
  if (!best.empty()) ta.resume_path = best.string();
  return cmd_train(ta).final_checkpoint;
}

inline std::string csv_cell(double v) { return std::isfinite(v) ? fmt_g17(v) : "nan"; }

// A deterministic high-contrast mark for the image-trigger row: concentric
// rings, written as a PGM the trigger loader consumes.
inline fs::path write_ring_mark(const fs::path& out_dir, int side) {
  Grid mark(side, side, 0.0);
  const double c = (side - 1) / 2.0;
  for (int i = 0; i < side; ++i)
    for (int j = 0; j < side; ++j) {
      const double r = std::hypot(i - c, j - c) / (side / 2.0);
      mark.at(i, j) = std::cos(10.0 * r) > 0.0 ? 1.0 : -1.0;
    }
  const fs::path p = out_dir / "ring_mark.pgm";
  write_pgm(mark, p.string());
  return p;
}

}  // namespace detail

inline ExperimentResult cmd_experiment(const ExperimentArgs& args) {
  RunConfig base = args.base;
  base.validate();
  const fs::path out(args.out_dir);
  ensure_dir(out);
  ExperimentResult res;

  require(fs::is_directory(args.data_dir), Errc::io,
          "experiment: data directory missing (run gen-data first): " + args.data_dir);
  const std::string clf_cache = (out / "classifier.mmk").string();

  const auto model_cfg = [&](const std::string& tag) {
    RunConfig c = base;
    c.out_dir = (out / "models" / tag).string();
    return c;
  };
  const auto verify_model = [&](const fs::path& ckpt) {
    VerifyArgs va;
    va.ckpt_path = ckpt.string();
    va.real_dir = args.data_dir;
    va.count = args.count;
    va.seed = args.seed;
    va.classifier_cache = clf_cache;
    va.reserved_class_name = args.reserved_class_name;
    va.quiet = args.quiet;
    return cmd_verify(va);
  };

  if (args.suite == "table1") {
    // Benign quality and watermark performance for every trigger family,
    // under both samplers, plus the vanilla baseline row.
    std::string csv = "sampler,trigger,fid,is_score,wsr,precision,recall,f1,snr_db\n";
    const fs::path mark = detail::write_ring_mark(out, base.mel.n_mels / 2);
    const fs::path env_clip = fs::path(args.data_dir) / kInstanceDirName / "glide.wav";

    std::vector<std::pair<std::string, TriggerSpec>> rows;
    rows.push_back({"vanilla", base.trigger});
    for (TriggerKind k : {TriggerKind::infrasound, TriggerKind::envsound, TriggerKind::gaussian,
                          TriggerKind::geometric, TriggerKind::patch_white, TriggerKind::image}) {
      TriggerSpec t = base.trigger;
      t.kind = k;
      if (k == TriggerKind::envsound) t.source_path = env_clip.string();
      if (k == TriggerKind::image) t.source_path = mark.string();
      rows.push_back({trigger_kind_name(k), t});
    }

    for (const auto& [tag, trig] : rows) {
      RunConfig cfg = model_cfg(tag);
      cfg.watermark = tag != "vanilla";
      cfg.trigger = trig;
      const fs::path ckpt =
          detail::ensure_model(cfg, args.data_dir, args.reserved_class_name, args.quiet);
      for (SamplerKind kind : {SamplerKind::ddpm, SamplerKind::ddim}) {
        // Re-verify under each sampler by rewriting the method in a copy.
        Checkpoint ck = load_checkpoint(ckpt.string());
        ck.config.method.kind = kind;
        const fs::path variant = out / "models" / (tag + "_" + sampler_kind_name(kind) + ".mmk");
        save_checkpoint(ck, variant.string());
        VerifyResult v = verify_model(variant);
        const MetricReport wmr = v.watermark.value_or(MetricReport{});
        csv += std::string(sampler_kind_name(kind)) + "," + tag + "," +
               detail::csv_cell(v.benign.fid) + "," + detail::csv_cell(v.benign.is_score) + "," +
               detail::csv_cell(wmr.wsr) + "," + detail::csv_cell(wmr.precision) + "," +
               detail::csv_cell(wmr.recall) + "," + detail::csv_cell(wmr.f1) + "," +
               detail::csv_cell(wmr.snr_db) + "\n";
      }
    }
    detail::write_text_file(out / "table1.csv", csv);
    res.files.push_back(out / "table1.csv");
    return res;
  }

  if (args.suite == "fig3") {
    // Distance-to-target along the reverse chain: watermark model vs vanilla,
    // both traced against the watermark target.
    RunConfig wm_cfg = model_cfg("watermark");
    const fs::path wm_ckpt =
        detail::ensure_model(wm_cfg, args.data_dir, args.reserved_class_name, args.quiet);
    RunConfig va_cfg = model_cfg("vanilla");
    va_cfg.watermark = false;
    const fs::path va_ckpt =
        detail::ensure_model(va_cfg, args.data_dir, args.reserved_class_name, args.quiet);

    // The vanilla model has no stored target; lend it the watermark one.
    const Grid target = load_checkpoint(wm_ckpt.string()).get_grid("target.mel");
    const fs::path target_pgm = out / "fig3_target.pgm";
    write_pgm(target, target_pgm.string());

    const auto trace_csv = [&](const fs::path& ckpt, bool trigger_on, const fs::path& dest) {
      SampleArgs sa;
      sa.ckpt_path = ckpt.string();
      sa.count = 8;
      sa.trigger_on = trigger_on;
      sa.record_trace = true;
      sa.seed = args.seed;
      sa.target_mel_path = target_pgm.string();
      sa.out_dir = (out / "traces").string();
      sa.quiet = true;
      SampleResult sr = cmd_sample(sa);
      std::string csv = "t,l2_mean,l2_min,l2_max\n";
      for (size_t j = 0; j < sr.traces[0].ts.size(); ++j) {
        double mean = 0.0, lo = sr.traces[0].l2_to_target[j], hi = lo;
        for (const SampleTrace& tr : sr.traces) {
          mean += tr.l2_to_target[j] / sr.traces.size();
          lo = std::min(lo, tr.l2_to_target[j]);
          hi = std::max(hi, tr.l2_to_target[j]);
        }
        csv += std::to_string(sr.traces[0].ts[j]) + "," + detail::fmt_g17(mean) + "," +
               detail::fmt_g17(lo) + "," + detail::fmt_g17(hi) + "\n";
      }
      detail::write_text_file(dest, csv);
      res.files.push_back(dest);
    };
    trace_csv(wm_ckpt, true, out / "fig3_watermark.csv");
    trace_csv(va_ckpt, true, out / "fig3_vanilla.csv");  // ignored trigger -> benign walk
    return res;
  }

  if (args.suite == "fig5") {
    // Effectiveness vs training progress: metrics at 20%, 50%, 100% of steps.
    RunConfig cfg = model_cfg("progress");
    cfg.ckpt_every = std::max<int64_t>(1, cfg.steps / 10);
    detail::ensure_model(cfg, args.data_dir, args.reserved_class_name, args.quiet);
    std::string csv = "fraction,step,wsr,fid,is_score\n";
    for (double frac : {0.2, 0.5, 1.0}) {
      const int64_t want = static_cast<int64_t>(frac * cfg.steps);
      // Nearest saved checkpoint at or below the requested fraction.
      int64_t step = (want / cfg.ckpt_every) * cfg.ckpt_every;
      if (step < cfg.ckpt_every) step = cfg.ckpt_every;
      if (step > cfg.steps) step = cfg.steps;
      char name[64];
      std::snprintf(name, sizeof name, "ckpt_%08lld.mmk", static_cast<long long>(step));
      VerifyResult v = verify_model(fs::path(cfg.out_dir) / name);
      const MetricReport wmr = v.watermark.value_or(MetricReport{});
      csv += detail::fmt_g17(frac) + "," + std::to_string(step) + "," +
             detail::csv_cell(wmr.wsr) + "," + detail::csv_cell(v.benign.fid) + "," +
             detail::csv_cell(v.benign.is_score) + "\n";
    }
    detail::write_text_file(out / "fig5.csv", csv);
    res.files.push_back(out / "fig5.csv");
    return res;
  }

  if (args.suite == "table3") {
    // Instance watermark fidelity: pairwise quality against the fixed target.
    RunConfig cfg = model_cfg("instance");
    cfg.task_mode = TaskMode::instance;
    const fs::path ckpt =
        detail::ensure_model(cfg, args.data_dir, args.reserved_class_name, args.quiet);
    VerifyResult v = verify_model(ckpt);
    const MetricReport wmr = v.watermark.value_or(MetricReport{});
    std::string csv = "trigger,psnr_db,ssim,mse,snr_db,wsr\n";
    csv += std::string(trigger_kind_name(cfg.trigger.kind)) + "," +
           detail::csv_cell(wmr.psnr_db) + "," + detail::csv_cell(wmr.ssim) + "," +
           detail::csv_cell(wmr.mse) + "," + detail::csv_cell(wmr.snr_db) + "," +
           detail::csv_cell(wmr.wsr) + "\n";
    detail::write_text_file(out / "table3.csv", csv);
    res.files.push_back(out / "table3.csv");
    return res;
  }

  if (args.suite == "table4") {
    // Blend-ratio sweep: more transparent triggers vs watermark strength.
    std::string csv = "gamma,wsr,snr_db,fid,is_score\n";
    for (double gamma : {0.6, 0.8, 0.9}) {
      char tag[32];
      std::snprintf(tag, sizeof tag, "gamma_%02d", static_cast<int>(gamma * 100 + 0.5));
      RunConfig cfg = model_cfg(tag);
      cfg.trigger.gamma = gamma;
      const fs::path ckpt =
          detail::ensure_model(cfg, args.data_dir, args.reserved_class_name, args.quiet);
      VerifyResult v = verify_model(ckpt);
      const MetricReport wmr = v.watermark.value_or(MetricReport{});
      csv += detail::fmt_g17(gamma) + "," + detail::csv_cell(wmr.wsr) + "," +
             detail::csv_cell(wmr.snr_db) + "," + detail::csv_cell(v.benign.fid) + "," +
             detail::csv_cell(v.benign.is_score) + "\n";
    }
    detail::write_text_file(out / "table4.csv", csv);
    res.files.push_back(out / "table4.csv");
    return res;
  }

  raise(Errc::usage, "experiment: unknown suite: " + args.suite +
                         " (expected table1, fig3, fig5, table3, or table4)");
}

}  // namespace melmark
