#pragma once

// Subcommand bodies. Each takes parsed arguments and a log sink and throws
// genau::Error on failure; the binary maps that to "module: message".

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "genau/audio/griffin_lim.hpp"
#include "genau/audio/mel.hpp"
#include "genau/audio/wav.hpp"
#include "genau/cli/config.hpp"
#include "genau/cli/run.hpp"
#include "genau/conditioning/conditioning.hpp"
#include "genau/core/checkpoint.hpp"
#include "genau/core/flops.hpp"
#include "genau/diffusion/trainer.hpp"
#include "genau/fit/fit.hpp"
#include "genau/miner/pipeline.hpp"
#include "genau/vae/vae.hpp"

namespace genau::cli {

using checkpoint::json;
using LogFn = std::function<void(const std::string&)>;

inline fs::path default_keywords_file() {
#ifdef GENAU_ASSET_DIR
  return fs::path(GENAU_ASSET_DIR) / "banned_keywords.txt";
#else
  return "assets/banned_keywords.txt";
#endif
}

// Creates the run directory and writes the config echo.
inline fs::path start_run(const RunConfig& cfg, const std::string& command, const fs::path& explicit_dir) {
  const fs::path dir = make_run_dir(cfg.run_root, command, explicit_dir);
  std::ofstream(dir / "config.toml") << to_toml_string(cfg);
  return dir;
}

// Throws naming the first key where a checkpoint's stored config differs from
// the one implied by the run config.
inline void require_same(const json& stored, const json& expected, const std::string& what) {
  for (const auto& [k, v] : expected.items()) {
    if (!stored.contains(k))
      throw FormatError("checkpoint", what + " has no '" + k + "'");
    if (stored.at(k) != v)
      throw FormatError("checkpoint", what + " mismatch at '" + k + "': checkpoint " + stored.at(k).dump() +
                                          ", config " + v.dump());
  }
}

inline json mel_json(const audio::MelConfig& m) {
  return {{"sample_rate", m.sample_rate}, {"n_fft", m.n_fft},   {"hop", m.hop},
          {"n_mels", m.n_mels},           {"fmin", m.fmin},     {"fmax", m.fmax},
          {"log_floor", m.log_floor},     {"frame_multiple", m.frame_multiple}};
}

inline json conditioning_json(const RunConfig& c) {
  return {{"embedder", c.conditioning.embedder}, {"width", c.conditioning.width},
          {"max_tokens", c.conditioning.max_tokens}, {"hash_seed", c.conditioning.hash_seed},
          {"datasets", c.conditioning.datasets}};
}

// ---- mine / stats -----------------------------------------------------------------

struct MineArgs {
  fs::path transcripts, durations, filters, out;
  bool allow_unscored = false;
};

inline miner::MineResult run_mine(const MineArgs& a, const LogFn& log) {
  RunConfig cfg = a.filters.empty() ? RunConfig{} : load_config(a.filters);
  auto& m = cfg.miner;
  const fs::path base = a.filters.empty() ? fs::current_path() : a.filters.parent_path();
  auto resolve = [&](const std::string& p) { return fs::path(p).is_absolute() ? fs::path(p) : base / p; };
  const fs::path keywords = m.keywords_file.empty() ? default_keywords_file() : resolve(m.keywords_file);
  miner::MineOptions opt;
  opt.filters = m.filters;
  opt.filters.banned_keywords = miner::load_keywords(keywords);
  opt.allow_unscored = a.allow_unscored;

  std::optional<miner::FixtureTable> fixture;
  if (m.captioner == "fixture" || m.scorer == "fixture") {
    if (m.fixture.empty()) throw ConfigError("miner.fixture is required for fixture providers");
    fixture.emplace(resolve(m.fixture));
  }
  std::unique_ptr<miner::Captioner> captioner;
  if (m.captioner == "fixture")
    captioner = std::make_unique<miner::FixtureCaptioner>(*fixture);
  else
    captioner = std::make_unique<miner::StdioCaptioner>(split_command(m.captioner_command), m.timeout_ms);
  std::unique_ptr<miner::Scorer> scorer;
  if (m.scorer == "fixture")
    scorer = std::make_unique<miner::FixtureScorer>(*fixture);
  else if (m.scorer == "command")
    scorer = std::make_unique<miner::StdioScorer>(split_command(m.scorer_command), m.timeout_ms);
  if (!scorer && !a.allow_unscored)
    throw ContractError("transcript-miner", "miner.scorer = 'none' requires --allow-unscored");

  const fs::path dir = make_run_dir({}, "mine", a.out);
  std::ofstream(dir / "config.toml") << to_toml_string(cfg);
  log("keywords: " + keywords.string() + " (" + std::to_string(opt.filters.banned_keywords.size()) + " entries)");
  auto result = miner::mine_directory(a.transcripts, a.durations, *captioner, scorer.get(), opt);
  miner::write_outputs(result, dir);
  MetricsCsv metrics(dir / "metrics.csv",
                     {"transcript_files", "segments", "caption_error", "merged", "keyword", "clap", "records"}, false);
  const auto& d = result.drops;
  metrics.row({double(result.transcript_files), double(result.segments), double(d.caption_error), double(d.merged),
               double(d.keyword), double(d.clap), double(result.records.size())});
  log("mined " + std::to_string(result.records.size()) + " records from " + std::to_string(result.transcript_files) +
      " transcripts (" + std::to_string(result.segments) + " segments, " + std::to_string(d.total()) + " dropped)");
  for (const auto& w : result.warnings)
    log("warning: " + w.file + ":" + std::to_string(w.warning.line) + ": " + w.warning.message);
  return result;
}

inline miner::StatsReport run_stats(const fs::path& manifest, const fs::path& out, const LogFn& log) {
  const auto records = miner::read_manifest(manifest);
  const auto s = miner::compute_stats(records);
  fs::create_directories(out);
  std::ofstream(out / "stats.json") << miner::to_json(s).dump(2) << '\n';
  std::ofstream(out / "stats.csv") << miner::to_csv(s);
  log(std::to_string(s.records) + " records over " + std::to_string(s.videos) + " videos");
  return s;
}

// ---- shared training data ---------------------------------------------------------

// One fixed-length mel per manifest record: audio_dir/<video_id>.wav cut to
// [start_ms, end_ms), then padded or truncated to the clip length.
inline std::vector<Tensor<float>> load_mel_corpus(const RunConfig& cfg, const std::vector<miner::ManifestRecord>& recs,
                                                  const fs::path& audio_dir) {
  std::vector<Tensor<float>> out;
  std::map<std::string, audio::AudioClip> cache;
  for (const auto& r : recs) {
    auto it = cache.find(r.video_id);
    if (it == cache.end()) {
      const fs::path p = audio_dir / (r.video_id + ".wav");
      if (!fs::exists(p)) throw Error("audio-frontend", "missing audio for video '" + r.video_id + "': " + p.string());
      it = cache.emplace(r.video_id, audio::load_clip(p, cfg.mel.sample_rate)).first;
    }
    const auto& full = it->second;
    const auto ms_to = [&](std::int64_t ms) {
      return std::min(full.samples.size(), std::size_t(std::max<std::int64_t>(0, ms)) * std::size_t(full.sample_rate) / 1000);
    };
    audio::AudioClip cut;
    cut.sample_rate = full.sample_rate;
    cut.samples.assign(full.samples.begin() + ms_to(r.start_ms), full.samples.begin() + ms_to(r.end_ms));
    const auto mel = audio::waveform_to_mel(audio::fit_length(std::move(cut), cfg.clip_samples()), cfg.mel);
    out.push_back(vae::mel_channels(mel));
  }
  if (out.empty()) throw ContractError("cli", "manifest has no records");
  return out;
}

// ---- train-vae ----------------------------------------------------------------------

struct TrainVaeArgs {
  fs::path config, manifest, audio_dir, run_dir;
};

inline json vae_meta(const RunConfig& cfg) { return {{"mel_config", mel_json(cfg.mel)}, {"clip_seconds", cfg.clip_seconds}}; }

inline fs::path run_train_vae(const TrainVaeArgs& a, const LogFn& log) {
  const RunConfig cfg = load_config(a.config);
  const auto recs = miner::read_manifest(a.manifest);
  const auto corpus = load_mel_corpus(cfg, recs, a.audio_dir);
  const fs::path dir = start_run(cfg, "train-vae", a.run_dir);
  log("run directory " + dir.string() + ", " + std::to_string(corpus.size()) + " clips of " +
      std::to_string(cfg.mel_frames()) + " frames");
  Rng rng(cfg.seed);
  vae::Vae<float> model(cfg.vae_config(), rng);
  MetricsCsv metrics(dir / "metrics.csv", {"step", "loss", "recon", "kl", "smoothed_recon"}, !cfg.deterministic);
  auto save = [&](const fs::path& p) {
    auto ck = vae::to_checkpoint(model);
    ck.meta.update(vae_meta(cfg));
    checkpoint::save(p, ck);
  };
  const auto res = vae::train_vae<float>(model, corpus, cfg.vae_options(), [&](const vae::VaeStepRecord& r) {
    metrics.row({double(r.step), r.total, r.recon, r.kl, r.smoothed_recon});
    if ((r.step + 1) % cfg.log_every == 0)
      log("step " + std::to_string(r.step + 1) + " recon " + std::to_string(r.recon) + " smoothed " +
          std::to_string(r.smoothed_recon));
    if (cfg.checkpoint_every > 0 && (r.step + 1) % cfg.checkpoint_every == 0)
      save(dir / ("vae-step" + std::to_string(r.step + 1) + ".ckpt"));
  });
  save(dir / "vae.ckpt");
  if (res.diverged)
    throw Error("vae1d", "training diverged after " + std::to_string(res.history.size()) +
                             " steps; last good parameters saved to " + (dir / "vae.ckpt").string());
  log("saved " + (dir / "vae.ckpt").string());
  return dir;
}

// Loads a VAE checkpoint and checks it against the run config.
inline vae::Vae<float> load_vae(const fs::path& path, const RunConfig& cfg) {
  const auto ck = checkpoint::load(path);
  if (!ck.meta.contains("vae_config")) throw FormatError("checkpoint", path.string() + " is not a VAE checkpoint");
  require_same(ck.meta.at("vae_config"), cfg.vae_config().to_json(), "VAE checkpoint " + path.string() + " [vae]");
  if (ck.meta.contains("mel_config"))
    require_same(ck.meta.at("mel_config"), mel_json(cfg.mel), "VAE checkpoint " + path.string() + " [mel]");
  return vae::from_checkpoint<float>(ck);
}

inline std::shared_ptr<cond::TextEmbedder> make_embedder(const RunConfig& cfg) {
  const auto& c = cfg.conditioning;
  if (c.embedder == "command") return std::make_shared<cond::StdioEmbedder>(split_command(c.command), c.width);
  return std::make_shared<cond::HashEmbedder>(c.width, c.hash_seed, c.max_tokens);
}

// ---- train-diffusion ----------------------------------------------------------------

struct TrainDiffusionArgs {
  fs::path config, manifest, audio_dir, vae, run_dir, resume;
};

// Latents are scaled to unit RMS before diffusion; the factor is stored in
// the checkpoint and undone before decoding.
inline double latent_scale(const std::vector<Tensor<float>>& latents) {
  double sq = 0;
  std::size_t n = 0;
  for (const auto& z : latents)
    for (float v : z.vec()) {
      sq += double(v) * v;
      ++n;
    }
  const double rms = std::sqrt(sq / double(std::max<std::size_t>(n, 1)));
  return rms > 0 ? 1.0 / rms : 1.0;
}

inline fit::Fit<float> load_fit(const checkpoint::Checkpoint& ck, const RunConfig& cfg, const std::string& where) {
  if (!ck.meta.contains("fit_config")) throw FormatError("checkpoint", where + " is not a FIT checkpoint");
  require_same(ck.meta.at("fit_config"), cfg.fit_config().to_json(), "FIT checkpoint " + where + " [fit]");
  if (ck.meta.contains("conditioning"))
    require_same(ck.meta.at("conditioning"), conditioning_json(cfg), "FIT checkpoint " + where + " [conditioning]");
  Rng rng(0);
  fit::Fit<float> model(fit::FitConfig::from_json(ck.meta.at("fit_config")), rng);
  checkpoint::load_parameters<float>(ck, model.visitor());
  return model;
}

inline fs::path run_train_diffusion(const TrainDiffusionArgs& a, const LogFn& log) {
  const RunConfig cfg = load_config(a.config);
  auto vae_model = load_vae(a.vae, cfg);
  const auto recs = miner::read_manifest(a.manifest);
  const auto mels = load_mel_corpus(cfg, recs, a.audio_dir);
  std::vector<Tensor<float>> latents;
  for (const auto& m : mels) latents.push_back(vae_model.encode_mean(m));
  const double scale = latent_scale(latents);

  auto embedder = make_embedder(cfg);
  const auto registry = cfg.registry();
  const std::size_t ds = registry.index(cfg.conditioning.train_dataset);
  std::vector<diffusion::TrainingExample> data;
  for (std::size_t i = 0; i < recs.size(); ++i) {
    Tensor<float> z = latents[i];
    for (auto& v : z.vec()) v = float(v * scale);
    data.push_back({std::move(z), embedder->embed(recs[i].caption), ds});
  }

  const fs::path dir = start_run(cfg, "train-diffusion", a.run_dir);
  log("run directory " + dir.string() + ", " + std::to_string(data.size()) + " latents [" +
      std::to_string(cfg.vae.bottleneck) + ", " + std::to_string(cfg.latent_length()) + "], latent scale " +
      std::to_string(scale));
  Rng rng(cfg.seed);
  fit::Fit<float> model(cfg.fit_config(), rng);
  diffusion::DiffusionTrainer<float> trainer(model, cfg.diffusion_config());
  if (!a.resume.empty()) {
    const auto ck = checkpoint::load(a.resume);
    require_same(ck.meta.at("fit_config"), cfg.fit_config().to_json(), "FIT checkpoint " + a.resume.string() + " [fit]");
    trainer.load(ck);
    log("resumed from " + a.resume.string() + " at step " + std::to_string(trainer.step()));
  }
  auto save = [&](const fs::path& p) {
    checkpoint::Checkpoint ck;
    trainer.save(ck);
    ck.meta["latent_scale"] = scale;
    ck.meta["latent_length"] = cfg.latent_length();
    ck.meta["vae_config"] = cfg.vae_config().to_json();
    ck.meta["mel_config"] = mel_json(cfg.mel);
    ck.meta["conditioning"] = conditioning_json(cfg);
    checkpoint::save(p, ck);
  };
  MetricsCsv metrics(dir / "metrics.csv", {"step", "loss", "smoothed", "lr", "grad_norm", "skipped"}, !cfg.deterministic);
  while (trainer.step() < cfg.diffusion.steps) {
    const auto r = trainer.train_step(data);
    metrics.row({double(r.step), r.loss, r.smoothed, r.lr, r.grad_norm, r.skipped ? 1.0 : 0.0});
    const long done = r.step + 1;
    if (done % cfg.log_every == 0)
      log("step " + std::to_string(done) + " loss " + std::to_string(r.loss) + " smoothed " + std::to_string(r.smoothed));
    if (r.skipped) log("step " + std::to_string(done) + " skipped (non-finite loss or gradient)");
    if (cfg.checkpoint_every > 0 && done % cfg.checkpoint_every == 0)
      save(dir / ("fit-step" + std::to_string(done) + ".ckpt"));
  }
  save(dir / "fit.ckpt");
  log("saved " + (dir / "fit.ckpt").string());
  return dir;
}

// ---- sample ---------------------------------------------------------------------------

struct SampleArgs {
  fs::path config, vae, fit, out, run_dir;
  std::string text;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> dataset_id;
  std::optional<double> cfg_scale;
  std::optional<std::size_t> steps;
  bool ddim = false;
};

inline audio::AudioClip run_sample(const SampleArgs& a, const LogFn& log) {
  RunConfig cfg = load_config(a.config);
  if (a.seed) cfg.seed = *a.seed;
  if (a.dataset_id) cfg.sampling.dataset_id = *a.dataset_id;
  if (a.cfg_scale) cfg.sampling.cfg_scale = *a.cfg_scale;
  if (a.steps) cfg.sampling.steps = *a.steps;
  if (a.ddim) cfg.sampling.ddim = true;
  cfg.validate();

  auto vae_model = load_vae(a.vae, cfg);
  const auto ck = checkpoint::load(a.fit);
  auto model = load_fit(ck, cfg, a.fit.string());
  if (!ck.meta.contains("latent_scale")) throw FormatError("checkpoint", a.fit.string() + " has no latent_scale");
  const double scale = ck.meta.at("latent_scale").get<double>();
  const fs::path dir = start_run(cfg, "sample", a.run_dir);

  auto embedder = make_embedder(cfg);
  const std::size_t ds = cfg.registry().index(cfg.sampling.dataset_id);
  diffusion::SampleOptions opt{cfg.sampling.cfg_scale, cfg.sampling.steps, cfg.sampling.ddim};
  Rng rng(cfg.seed);
  log("sampling '" + a.text + "' (dataset " + cfg.sampling.dataset_id + ", " + std::to_string(opt.steps) +
      (opt.ddim ? " DDIM" : " DDPM") + " steps, guidance " + std::to_string(opt.cfg_scale) + ")");
  Tensor<float> z = diffusion::sample<float>(model, cfg.diffusion_config().schedule(), embedder->embed(a.text), ds,
                                             cfg.latent_length(), opt, rng);
  for (auto& v : z.vec()) v = float(v / scale);
  const Tensor<float> mel_cf = vae_model.decode_tensor(z);
  audio::MelSpectrogram mel{transpose_last(mel_cf), cfg.mel};
  auto clip = audio::fit_length(audio::griffin_lim(mel, cfg.sampling.griffin_lim_iters, cfg.seed), cfg.clip_samples());
  float peak = 0;
  for (float s : clip.samples) peak = std::max(peak, std::abs(s));
  if (peak > 1.0f)
    for (auto& s : clip.samples) s /= peak;
  const fs::path out = a.out.empty() ? dir / "sample.wav" : a.out;
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  audio::write_wav(out, clip);
  if (out != dir / "sample.wav") fs::copy_file(out, dir / "sample.wav", fs::copy_options::overwrite_existing);
  MetricsCsv metrics(dir / "metrics.csv", {"seed", "steps", "cfg_scale", "latent_rms", "peak"}, !cfg.deterministic);
  metrics.row({double(cfg.seed), double(opt.steps), opt.cfg_scale, 1.0 / latent_scale({z}), double(peak)});
  log("wrote " + out.string() + " (" + std::to_string(clip.duration()) + " s at " + std::to_string(clip.sample_rate) +
      " Hz)");
  return clip;
}

// ---- flops -------------------------------------------------------------------------------

struct FlopsReport {
  std::vector<std::size_t> patches;
  std::vector<double> flops;
  double slope = 0, intercept = 0, r2 = 0;
};

// Ordinary least squares of flops on patch count.
inline FlopsReport fit_line(std::vector<std::size_t> patches, std::vector<double> flops) {
  FlopsReport r{std::move(patches), std::move(flops)};
  const double n = double(r.patches.size());
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < r.patches.size(); ++i) {
    mx += double(r.patches[i]) / n;
    my += r.flops[i] / n;
  }
  double sxx = 0, sxy = 0, syy = 0;
  for (std::size_t i = 0; i < r.patches.size(); ++i) {
    const double dx = double(r.patches[i]) - mx, dy = r.flops[i] - my;
    sxx += dx * dx;
    sxy += dx * dy;
    syy += dy * dy;
  }
  r.slope = sxx > 0 ? sxy / sxx : 0;
  r.intercept = my - r.slope * mx;
  double ss_res = 0;
  for (std::size_t i = 0; i < r.patches.size(); ++i) {
    const double e = r.flops[i] - (r.slope * double(r.patches[i]) + r.intercept);
    ss_res += e * e;
  }
  r.r2 = syy > 0 ? 1.0 - ss_res / syy : 1.0;
  return r;
}

// Forward-pass FLOPs of one sequence of each patch count.
inline FlopsReport measure_flops(fit::FitConfig c, const std::vector<std::size_t>& patches, std::uint64_t seed) {
  if (patches.size() < 2) throw ConfigError("flops needs at least two patch counts");
  c.max_patches = *std::max_element(patches.begin(), patches.end());
  c.dropout = 0;
  Rng rng(seed);
  fit::Fit<float> model(c, rng);
  cond::HashEmbedder emb(c.cond_width);
  const cond::ConditioningBundle b{emb.embed("rain on a tin roof"), cond::timestep_embedding(500, c.cond_width), 0};
  std::vector<double> counts;
  for (std::size_t np : patches) {
    Tensor<float> z = rng.normal_tensor<float>(Shape{1, c.latent_channels, np * c.patch_size});
    flops::FlopScope scope;
    Tape<float> tape;
    model.forward(tape, tape.constant(z), {&b});
    counts.push_back(double(scope.count()));
  }
  return fit_line(patches, counts);
}

inline json to_json(const FlopsReport& r, const fit::FitConfig& c) {
  json pts = json::array();
  for (std::size_t i = 0; i < r.patches.size(); ++i) pts.push_back({{"n_patches", r.patches[i]}, {"flops", r.flops[i]}});
  return {{"group_size", c.group_size}, {"n_latent", c.n_latent}, {"patch_size", c.patch_size},
          {"n_blocks", c.n_blocks},     {"d_patch", c.d_patch},   {"d_latent", c.d_latent},
          {"points", pts},              {"slope", r.slope},       {"intercept", r.intercept},
          {"r2", r.r2}};
}

struct FlopsArgs {
  fs::path config, out, run_dir;
  std::vector<std::size_t> patches{128, 256, 512, 1024, 2048, 4096};
};

inline FlopsReport run_flops(const FlopsArgs& a, const LogFn& log) {
  const RunConfig cfg = a.config.empty() ? RunConfig{} : load_config(a.config);
  const fs::path dir = start_run(cfg, "flops", a.run_dir);
  const auto fc = cfg.fit_config();
  const auto r = measure_flops(fc, a.patches, cfg.seed);
  const auto j = to_json(r, fc);
  std::ofstream(dir / "flops.json") << j.dump(2) << '\n';
  if (!a.out.empty()) std::ofstream(a.out) << j.dump(2) << '\n';
  MetricsCsv metrics(dir / "metrics.csv", {"n_patches", "flops"}, false);
  for (std::size_t i = 0; i < r.patches.size(); ++i) metrics.row({double(r.patches[i]), r.flops[i]});
  log("flops ~ " + std::to_string(r.slope) + " * N_p + " + std::to_string(r.intercept) + ", R^2 = " + std::to_string(r.r2));
  return r;
}

}  // namespace genau::cli
