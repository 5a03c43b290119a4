// genau: mine / train-vae / train-diffusion / sample / stats / flops.

#include <CLI11.hpp>
#include <spdlog/sinks/basic_file_sink.h>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <iostream>
#include <memory>

#include "genau/cli/commands.hpp"

namespace {

using namespace genau;
namespace fs = std::filesystem;

// stderr always; log.txt in the run directory once it is known.
class Logging {
 public:
  Logging() {
    auto err = std::make_shared<spdlog::sinks::stderr_color_sink_mt>();
    err->set_pattern("%v");
    logger_ = std::make_shared<spdlog::logger>("genau", spdlog::sinks_init_list{err});
  }
  void attach(const fs::path& dir) {
    auto file = std::make_shared<spdlog::sinks::basic_file_sink_mt>((dir / "log.txt").string(), false);
    file->set_pattern("[%Y-%m-%d %H:%M:%S.%e] %v");
    logger_->sinks().push_back(file);
    logger_->flush_on(spdlog::level::info);
  }
  cli::LogFn fn() {
    return [this](const std::string& msg) { logger_->info(msg); };
  }

 private:
  std::shared_ptr<spdlog::logger> logger_;
};

template <class F>
int run(F&& body) {
  try {
    body();
    return 0;
  } catch (const Error& e) {
    std::cerr << e.module() << ": " << e.what() << '\n';
  } catch (const std::exception& e) {
    std::cerr << "genau: " << e.what() << '\n';
  }
  return 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"genau: ambient-audio mining, latent diffusion training and sampling"};
  app.require_subcommand(1);
  Logging logging;

  cli::MineArgs mine;
  auto* c_mine = app.add_subcommand("mine", "Extract untranscribed segments, caption, filter and write a manifest");
  c_mine->add_option("--transcripts", mine.transcripts, "Directory of .vtt/.srt files")->required()->check(CLI::ExistingDirectory);
  c_mine->add_option("--durations", mine.durations, "CSV video_id,duration_ms")->required()->check(CLI::ExistingFile);
  c_mine->add_option("--filters", mine.filters, "TOML with a [miner] section")->check(CLI::ExistingFile);
  c_mine->add_option("--out", mine.out, "Output directory")->required();
  c_mine->add_flag("--allow-unscored", mine.allow_unscored, "Keep records without a CLAP score (flagged)");

  cli::TrainVaeArgs tv;
  auto* c_tv = app.add_subcommand("train-vae", "Train the mel VAE on manifest clips");
  c_tv->add_option("--config", tv.config, "Run config TOML")->required();
  c_tv->add_option("--manifest", tv.manifest, "manifest.jsonl")->required()->check(CLI::ExistingFile);
  c_tv->add_option("--audio-dir", tv.audio_dir, "Directory of <video_id>.wav")->required()->check(CLI::ExistingDirectory);
  c_tv->add_option("--run-dir", tv.run_dir, "Run directory (default: timestamped under run.root)");

  cli::TrainDiffusionArgs td;
  auto* c_td = app.add_subcommand("train-diffusion", "Train the FIT denoiser on VAE latents");
  c_td->add_option("--config", td.config, "Run config TOML")->required();
  c_td->add_option("--manifest", td.manifest, "manifest.jsonl")->required()->check(CLI::ExistingFile);
  c_td->add_option("--audio-dir", td.audio_dir, "Directory of <video_id>.wav")->required()->check(CLI::ExistingDirectory);
  c_td->add_option("--vae", td.vae, "VAE checkpoint")->required()->check(CLI::ExistingFile);
  c_td->add_option("--resume", td.resume, "FIT checkpoint to resume from")->check(CLI::ExistingFile);
  c_td->add_option("--run-dir", td.run_dir, "Run directory (default: timestamped under run.root)");

  cli::SampleArgs sa;
  std::uint64_t seed = 0;
  std::string dataset;
  double cfg_scale = 0;
  std::size_t steps = 0;
  auto* c_sa = app.add_subcommand("sample", "Generate a 10 s WAV from text");
  c_sa->add_option("--config", sa.config, "Run config TOML")->required();
  c_sa->add_option("--vae", sa.vae, "VAE checkpoint")->required()->check(CLI::ExistingFile);
  c_sa->add_option("--fit", sa.fit, "FIT checkpoint")->required()->check(CLI::ExistingFile);
  c_sa->add_option("--text", sa.text, "Text prompt")->required();
  c_sa->add_option("--out", sa.out, "Output WAV (default: <run dir>/sample.wav)");
  auto* o_seed = c_sa->add_option("--seed", seed, "Sampling seed (default: config seed)");
  auto* o_ds = c_sa->add_option("--dataset-id", dataset, "Dataset ID conditioning (default: sampling.dataset_id)");
  auto* o_cfg = c_sa->add_option("--cfg-scale", cfg_scale, "Guidance scale");
  auto* o_steps = c_sa->add_option("--steps", steps, "Sampling steps")->check(CLI::PositiveNumber);
  c_sa->add_flag("--ddim", sa.ddim, "Deterministic DDIM updates");
  c_sa->add_option("--run-dir", sa.run_dir, "Run directory (default: timestamped under run.root)");

  fs::path stats_manifest, stats_out;
  auto* c_st = app.add_subcommand("stats", "Histograms and word counts of a manifest");
  c_st->add_option("--manifest", stats_manifest, "manifest.jsonl")->required()->check(CLI::ExistingFile);
  c_st->add_option("--out", stats_out, "Output directory")->required();

  cli::FlopsArgs fl;
  auto* c_fl = app.add_subcommand("flops", "FLOP count of a FIT forward pass vs patch count");
  c_fl->add_option("--config", fl.config, "Run config TOML (default: built-in defaults)")->check(CLI::ExistingFile);
  c_fl->add_option("--patches", fl.patches, "Patch counts")->delimiter(',');
  c_fl->add_option("--out", fl.out, "Also write the JSON report here");
  c_fl->add_option("--run-dir", fl.run_dir, "Run directory (default: timestamped under run.root)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    std::cerr << app.help();
    return 2;
  }

  const auto log = logging.fn();
  // The run directory is fixed up front (--run-dir or timestamped under
  // run.root) so log.txt captures the whole run.
  auto with_dir = [&](const fs::path& dir) { logging.attach(dir); };

  return run([&] {
    if (*c_mine) {
      fs::create_directories(mine.out);
      with_dir(mine.out);
      cli::run_mine(mine, log);
    } else if (*c_tv) {
      if (tv.run_dir.empty()) tv.run_dir = cli::make_run_dir(cli::load_config(tv.config).run_root, "train-vae");
      fs::create_directories(tv.run_dir);
      with_dir(tv.run_dir);
      cli::run_train_vae(tv, log);
    } else if (*c_td) {
      if (td.run_dir.empty()) td.run_dir = cli::make_run_dir(cli::load_config(td.config).run_root, "train-diffusion");
      fs::create_directories(td.run_dir);
      with_dir(td.run_dir);
      cli::run_train_diffusion(td, log);
    } else if (*c_sa) {
      if (*o_seed) sa.seed = seed;
      if (*o_ds) sa.dataset_id = dataset;
      if (*o_cfg) sa.cfg_scale = cfg_scale;
      if (*o_steps) sa.steps = steps;
      if (sa.run_dir.empty()) sa.run_dir = cli::make_run_dir(cli::load_config(sa.config).run_root, "sample");
      fs::create_directories(sa.run_dir);
      with_dir(sa.run_dir);
      cli::run_sample(sa, log);
    } else if (*c_st) {
      fs::create_directories(stats_out);
      with_dir(stats_out);
      cli::run_stats(stats_manifest, stats_out, log);
    } else if (*c_fl) {
      if (fl.run_dir.empty())
        fl.run_dir = cli::make_run_dir(fl.config.empty() ? cli::RunConfig{}.run_root : cli::load_config(fl.config).run_root,
                                       "flops");
      fs::create_directories(fl.run_dir);
      with_dir(fl.run_dir);
      cli::run_flops(fl, log);
    }
  });
}
