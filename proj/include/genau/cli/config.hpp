#pragma once

// Run configuration: TOML in, validated RunConfig out, TOML echo back.
// One field list drives reading, unknown-key detection and the echo.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>
#include <string>
#include <type_traits>
#include <vector>

#include <toml.hpp>

#include "genau/audio/griffin_lim.hpp"
#include "genau/audio/mel.hpp"
#include "genau/audio/wav.hpp"
#include "genau/conditioning/conditioning.hpp"
#include "genau/diffusion/trainer.hpp"
#include "genau/fit/fit.hpp"
#include "genau/miner/segments.hpp"
#include "genau/vae/vae.hpp"

namespace genau::cli {

struct ConditioningSettings {
  std::size_t width = cond::kDefaultWidth;
  std::size_t max_tokens = cond::kMaxTokens;
  std::string embedder = "hash";  // hash | command
  std::string command;
  std::uint64_t hash_seed = 0;
  std::vector<std::string> datasets{"audiocaps", "clotho", "autorecap"};
  std::string train_dataset = "autorecap";
};

struct SamplingSettings {
  double cfg_scale = 3.0;
  std::size_t steps = 200;
  bool ddim = false;
  std::string dataset_id = cond::kDefaultDatasetId;
  int griffin_lim_iters = audio::kDefaultGriffinLimIters;
};

struct MinerSettings {
  miner::FilterConfig filters;
  std::string keywords_file;      // empty: bundled asset
  std::string captioner = "fixture";  // fixture | command
  std::string captioner_command;
  std::string scorer = "fixture";  // fixture | command | none
  std::string scorer_command;
  std::string fixture;  // JSONL with captions and scores
  int timeout_ms = 30000;
};

struct RunConfig {
  std::uint64_t seed = 0;
  bool deterministic = true;
  std::string run_root = "runs";
  int log_every = 50;
  int checkpoint_every = 0;  // 0: final checkpoint only
  double clip_seconds = audio::kCanonicalSeconds;
  audio::MelConfig mel;
  vae::VaeConfig vae;
  vae::VaeTrainOptions vae_train;
  fit::FitConfig fit;
  diffusion::DiffusionConfig diffusion;
  ConditioningSettings conditioning;
  SamplingSettings sampling;
  MinerSettings miner;

  std::size_t clip_samples() const { return std::size_t(std::llround(clip_seconds * mel.sample_rate)); }
  std::size_t mel_frames() const { return audio::mel_frame_count(clip_samples(), mel); }
  std::size_t latent_length() const { return mel_frames() / vae.downsample(); }

  vae::VaeConfig vae_config() const {
    auto v = vae;
    v.in_channels = mel.n_mels;
    return v;
  }
  vae::VaeTrainOptions vae_options() const {
    auto o = vae_train;
    o.seed = seed;
    return o;
  }
  // Fields fixed by other sections: latent width, conditioning width,
  // dataset table size and the patch budget of one clip.
  fit::FitConfig fit_config() const {
    auto f = fit;
    f.latent_channels = vae.bottleneck;
    f.cond_width = conditioning.width;
    f.n_dataset_ids = conditioning.datasets.size();
    f.max_patches = f.patch_count(latent_length());
    return f;
  }
  diffusion::DiffusionConfig diffusion_config() const {
    auto d = diffusion;
    d.seed = seed;
    return d;
  }
  cond::DatasetRegistry registry() const { return cond::DatasetRegistry(conditioning.datasets); }

  void validate() const;
};

namespace detail {

// Visits every configurable field as (section, key, reference). Section ""
// is the top level.
template <class C, class F>
void visit_fields(C& c, F&& f) {
  f("", "seed", c.seed);
  f("", "deterministic", c.deterministic);
  f("run", "root", c.run_root);
  f("run", "log_every", c.log_every);
  f("run", "checkpoint_every", c.checkpoint_every);
  f("clip", "seconds", c.clip_seconds);

  f("mel", "sample_rate", c.mel.sample_rate);
  f("mel", "n_fft", c.mel.n_fft);
  f("mel", "hop", c.mel.hop);
  f("mel", "n_mels", c.mel.n_mels);
  f("mel", "fmin", c.mel.fmin);
  f("mel", "fmax", c.mel.fmax);
  f("mel", "log_floor", c.mel.log_floor);
  f("mel", "frame_multiple", c.mel.frame_multiple);

  f("vae", "bottleneck", c.vae.bottleneck);
  f("vae", "hidden", c.vae.hidden);
  f("vae", "kl_weight", c.vae.kl_weight);
  f("vae", "logvar_min", c.vae.logvar_min);
  f("vae", "logvar_max", c.vae.logvar_max);
  f("vae", "logvar_init", c.vae.logvar_init);
  f("vae", "input_shift", c.vae.input_shift);
  f("vae", "input_scale", c.vae.input_scale);

  f("vae_train", "steps", c.vae_train.steps);
  f("vae_train", "batch", c.vae_train.batch);
  f("vae_train", "lr", c.vae_train.lr);
  f("vae_train", "grad_clip", c.vae_train.grad_clip);
  f("vae_train", "ema_decay", c.vae_train.ema_decay);

  f("fit", "patch_size", c.fit.patch_size);
  f("fit", "group_size", c.fit.group_size);
  f("fit", "n_latent", c.fit.n_latent);
  f("fit", "n_blocks", c.fit.n_blocks);
  f("fit", "local_layers", c.fit.local_layers);
  f("fit", "global_layers", c.fit.global_layers);
  f("fit", "d_patch", c.fit.d_patch);
  f("fit", "d_latent", c.fit.d_latent);
  f("fit", "heads", c.fit.heads);
  f("fit", "ff_mult", c.fit.ff_mult);
  f("fit", "dropout", c.fit.dropout);

  f("diffusion", "timesteps", c.diffusion.timesteps);
  f("diffusion", "beta_start", c.diffusion.beta_start);
  f("diffusion", "beta_end", c.diffusion.beta_end);
  f("diffusion", "p_uncond", c.diffusion.p_uncond);
  f("diffusion", "steps", c.diffusion.steps);
  f("diffusion", "warmup", c.diffusion.warmup);
  f("diffusion", "batch", c.diffusion.batch);
  f("diffusion", "grad_clip", c.diffusion.grad_clip);
  f("diffusion", "ema_decay", c.diffusion.ema_decay);

  f("optimizer", "lr", c.diffusion.lamb.lr);
  f("optimizer", "beta1", c.diffusion.lamb.beta1);
  f("optimizer", "beta2", c.diffusion.lamb.beta2);
  f("optimizer", "eps", c.diffusion.lamb.eps);
  f("optimizer", "weight_decay", c.diffusion.lamb.weight_decay);
  f("optimizer", "max_trust", c.diffusion.lamb.max_trust);

  f("conditioning", "width", c.conditioning.width);
  f("conditioning", "max_tokens", c.conditioning.max_tokens);
  f("conditioning", "embedder", c.conditioning.embedder);
  f("conditioning", "command", c.conditioning.command);
  f("conditioning", "hash_seed", c.conditioning.hash_seed);
  f("conditioning", "datasets", c.conditioning.datasets);
  f("conditioning", "train_dataset", c.conditioning.train_dataset);

  f("sampling", "cfg_scale", c.sampling.cfg_scale);
  f("sampling", "steps", c.sampling.steps);
  f("sampling", "ddim", c.sampling.ddim);
  f("sampling", "dataset_id", c.sampling.dataset_id);
  f("sampling", "griffin_lim_iters", c.sampling.griffin_lim_iters);

  f("miner", "min_len_ms", c.miner.filters.min_len_ms);
  f("miner", "max_len_ms", c.miner.filters.max_len_ms);
  f("miner", "clap_threshold", c.miner.filters.clap_threshold);
  f("miner", "resolution_ms", c.miner.filters.resolution_ms);
  f("miner", "keywords_file", c.miner.keywords_file);
  f("miner", "captioner", c.miner.captioner);
  f("miner", "captioner_command", c.miner.captioner_command);
  f("miner", "scorer", c.miner.scorer);
  f("miner", "scorer_command", c.miner.scorer_command);
  f("miner", "fixture", c.miner.fixture);
  f("miner", "timeout_ms", c.miner.timeout_ms);
}

inline std::string dotted(const char* section, const char* key) {
  return *section ? std::string(section) + "." + key : std::string(key);
}

template <class T>
void read_value(const toml::node& n, T& out, const std::string& key) {
  auto bad = [&](const char* want) { return ConfigError("key '" + key + "' must be " + want); };
  if constexpr (std::is_same_v<T, bool>) {
    if (!n.is_boolean()) throw bad("a boolean");
    out = n.as_boolean()->get();
  } else if constexpr (std::is_same_v<T, std::string>) {
    if (!n.is_string()) throw bad("a string");
    out = n.as_string()->get();
  } else if constexpr (std::is_integral_v<T>) {
    if (!n.is_integer()) throw bad("an integer");
    const std::int64_t v = n.as_integer()->get();
    if (std::is_unsigned_v<T> && v < 0) throw bad("non-negative");
    if (!std::is_unsigned_v<T> && (v < std::int64_t(std::numeric_limits<T>::min()) ||
                                   v > std::int64_t(std::numeric_limits<T>::max())))
      throw bad("in range");
    out = static_cast<T>(v);
  } else if constexpr (std::is_floating_point_v<T>) {
    if (n.is_integer())
      out = static_cast<T>(n.as_integer()->get());
    else if (n.is_floating_point())
      out = static_cast<T>(n.as_floating_point()->get());
    else
      throw bad("a number");
  } else {
    if (!n.is_array()) throw bad("an array");
    T vals;
    std::size_t i = 0;
    for (const auto& el : *n.as_array()) {
      typename T::value_type v{};
      read_value(el, v, key + "[" + std::to_string(i++) + "]");
      vals.push_back(std::move(v));
    }
    out = std::move(vals);
  }
}

template <class T>
void write_value(toml::table& t, const char* key, const T& v) {
  if constexpr (std::is_same_v<T, bool> || std::is_same_v<T, std::string>) {
    t.insert_or_assign(key, v);
  } else if constexpr (std::is_integral_v<T>) {
    t.insert_or_assign(key, static_cast<std::int64_t>(v));
  } else if constexpr (std::is_floating_point_v<T>) {
    t.insert_or_assign(key, static_cast<double>(v));
  } else {
    toml::array a;
    for (const auto& x : v) {
      if constexpr (std::is_same_v<typename T::value_type, std::string>)
        a.push_back(x);
      else
        a.push_back(static_cast<std::int64_t>(x));
    }
    t.insert_or_assign(key, std::move(a));
  }
}

}  // namespace detail

inline void RunConfig::validate() const {
  mel.validate();
  if (mel.sample_rate != audio::kCanonicalRate)
    throw ConfigError("mel.sample_rate must be " + std::to_string(audio::kCanonicalRate));
  if (!(clip_seconds > 0)) throw ConfigError("clip.seconds must be positive");
  vae_config().validate();
  const std::size_t frames = mel_frames();
  if (frames == 0) throw ConfigError("clip.seconds gives no mel frames");
  if (frames % vae.downsample() != 0)
    throw ConfigError("mel frame count " + std::to_string(frames) + " is not divisible by the VAE downsample factor " +
                      std::to_string(vae.downsample()) + " (check mel.frame_multiple and vae.hidden)");
  if (vae_train.steps < 0) throw ConfigError("vae_train.steps must be non-negative");
  if (vae_train.batch == 0) throw ConfigError("vae_train.batch must be positive");
  if (!(vae_train.lr > 0)) throw ConfigError("vae_train.lr must be positive");
  fit_config().validate();
  diffusion_config().validate();
  if (diffusion.timesteps == 0) throw ConfigError("diffusion.timesteps must be positive");
  if (!(diffusion.beta_start > 0 && diffusion.beta_start <= diffusion.beta_end && diffusion.beta_end < 1))
    throw ConfigError("diffusion betas must satisfy 0 < beta_start <= beta_end < 1");
  if (conditioning.width == 0) throw ConfigError("conditioning.width must be positive");
  if (conditioning.max_tokens == 0) throw ConfigError("conditioning.max_tokens must be positive");
  if (conditioning.embedder != "hash" && conditioning.embedder != "command")
    throw ConfigError("conditioning.embedder must be 'hash' or 'command'");
  if (conditioning.embedder == "command" && conditioning.command.empty())
    throw ConfigError("conditioning.command is required when conditioning.embedder = 'command'");
  if (conditioning.datasets.empty()) throw ConfigError("conditioning.datasets must not be empty");
  if (std::set<std::string>(conditioning.datasets.begin(), conditioning.datasets.end()).size() !=
      conditioning.datasets.size())
    throw ConfigError("conditioning.datasets has duplicates");
  auto known = [&](const std::string& id) {
    return std::find(conditioning.datasets.begin(), conditioning.datasets.end(), id) != conditioning.datasets.end();
  };
  if (!known(conditioning.train_dataset))
    throw ConfigError("conditioning.train_dataset '" + conditioning.train_dataset + "' is not in conditioning.datasets");
  if (!known(sampling.dataset_id))
    throw ConfigError("sampling.dataset_id '" + sampling.dataset_id + "' is not in conditioning.datasets");
  if (!std::isfinite(sampling.cfg_scale)) throw ConfigError("sampling.cfg_scale must be finite");
  if (sampling.steps == 0 || sampling.steps > diffusion.timesteps)
    throw ConfigError("sampling.steps must be in [1, diffusion.timesteps]");
  if (sampling.griffin_lim_iters <= 0) throw ConfigError("sampling.griffin_lim_iters must be positive");
  miner.filters.validate();
  if (!(miner.filters.clap_threshold >= 0 && miner.filters.clap_threshold <= 1))
    throw ConfigError("miner.clap_threshold must be in [0, 1]");
  if (miner.captioner != "fixture" && miner.captioner != "command")
    throw ConfigError("miner.captioner must be 'fixture' or 'command'");
  if (miner.scorer != "fixture" && miner.scorer != "command" && miner.scorer != "none")
    throw ConfigError("miner.scorer must be 'fixture', 'command' or 'none'");
  if (miner.captioner == "command" && miner.captioner_command.empty())
    throw ConfigError("miner.captioner_command is required when miner.captioner = 'command'");
  if (miner.scorer == "command" && miner.scorer_command.empty())
    throw ConfigError("miner.scorer_command is required when miner.scorer = 'command'");
  if (miner.timeout_ms <= 0) throw ConfigError("miner.timeout_ms must be positive");
  if (log_every <= 0) throw ConfigError("run.log_every must be positive");
  if (checkpoint_every < 0) throw ConfigError("run.checkpoint_every must be non-negative");
  if (seed > std::uint64_t(std::numeric_limits<std::int64_t>::max())) throw ConfigError("seed must fit in 63 bits");
}

// Applies a parsed table on top of the defaults. Unknown sections or keys
// are errors naming the key.
inline RunConfig config_from_table(const toml::table& root) {
  RunConfig c;
  std::set<std::string> sections, keys;
  detail::visit_fields(c, [&](const char* section, const char* key, auto& ref) {
    const std::string name = detail::dotted(section, key);
    if (*section) sections.insert(section);
    keys.insert(name);
    const toml::node* n = *section ? root.at_path(name).node() : root.get(key);
    if (n) detail::read_value(*n, ref, name);
  });
  for (const auto& [k, v] : root) {
    const std::string key(k.str());
    if (sections.count(key)) {
      if (!v.is_table()) throw ConfigError("key '" + key + "' must be a table");
      for (const auto& [sk, _] : *v.as_table())
        if (!keys.count(key + "." + std::string(sk.str())))
          throw ConfigError("unknown key '" + key + "." + std::string(sk.str()) + "'");
    } else if (!keys.count(key)) {
      throw ConfigError("unknown key '" + key + "'");
    }
  }
  c.validate();
  return c;
}

inline RunConfig parse_config(std::string_view text, const std::string& source = "<string>") {
  try {
    return config_from_table(toml::parse(text, source));
  } catch (const toml::parse_error& e) {
    std::ostringstream os;
    os << source << ":" << e.source().begin.line << ": " << e.description();
    throw ConfigError(os.str());
  }
}

inline RunConfig load_config(const std::filesystem::path& path) {
  if (!std::filesystem::is_regular_file(path)) throw ConfigError("cannot read config file " + path.string());
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  try {
    return parse_config(ss.str(), path.string());
  } catch (const ConfigError& e) {
    const std::string what = e.what();
    if (what.rfind(path.string(), 0) == 0) throw;
    throw ConfigError(path.string() + ": " + what);
  }
}

// The effective configuration, every field present.
inline toml::table to_toml(const RunConfig& cfg) {
  toml::table root;
  RunConfig copy = cfg;
  detail::visit_fields(copy, [&](const char* section, const char* key, auto& ref) {
    if (!*section) {
      detail::write_value(root, key, ref);
      return;
    }
    if (!root.contains(section)) root.insert(section, toml::table{});
    detail::write_value(*root[section].as_table(), key, ref);
  });
  return root;
}

inline std::string to_toml_string(const RunConfig& cfg) {
  std::ostringstream os;
  os << to_toml(cfg) << '\n';
  return os.str();
}

}  // namespace genau::cli
