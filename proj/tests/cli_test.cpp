// Runs the genau binary as a subprocess.

#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>

#include "genau/core/checkpoint.hpp"
#include "genau/miner/records.hpp"
#include "support/ambient_fixture.hpp"

namespace fs = std::filesystem;
using namespace genau;

namespace {

struct Run {
  int code;
  std::string err;
};

fs::path scratch(const std::string& name) {
  const fs::path d = fs::temp_directory_path() / ("genau_cli_test_" + name);
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

Run genau_cli(const std::string& args, const fs::path& cwd) {
  const fs::path err = cwd / "stderr.txt";
  const std::string cmd = "cd '" + cwd.string() + "' && '" GENAU_CLI "' " + args + " >/dev/null 2>'" + err.string() + "'";
  const int status = std::system(cmd.c_str());
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, slurp(err)};
}

// 0.64 s clips keep the training runs to a few seconds.
const char* kTinyConfig = R"(seed = 3
[run]
root = "runs"
log_every = 2
[clip]
seconds = 0.64
[vae]
hidden = [8, 8]
bottleneck = 4
[vae_train]
steps = 6
batch = 2
[fit]
d_patch = 16
d_latent = 16
heads = 2
n_blocks = 1
n_latent = 4
group_size = 4
[conditioning]
width = 8
[diffusion]
steps = 5
batch = 2
warmup = 1
[sampling]
steps = 4
griffin_lim_iters = 4
)";

}  // namespace

TEST(Usage, UnknownFlagExitsTwo) {
  const auto dir = scratch("usage");
  std::ofstream(dir / "m.jsonl") << "";
  const auto r = genau_cli("stats --manifest m.jsonl --out y --bogus", dir);
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("--bogus"), std::string::npos) << r.err;
  EXPECT_NE(r.err.find("Usage"), std::string::npos) << r.err;
  EXPECT_EQ(genau_cli("frobnicate", dir).code, 2);
  EXPECT_EQ(genau_cli("", dir).code, 2);
}

TEST(Errors, ModuleNamedOnStderr) {
  const auto dir = scratch("errors");
  std::ofstream(dir / "bad.toml") << "[fit]\ngroup_size = 0\n";
  fs::create_directories(dir / "a");
  std::ofstream(dir / "m.jsonl") << "";
  const auto r = genau_cli("train-vae --config bad.toml --manifest m.jsonl --audio-dir a", dir);
  EXPECT_EQ(r.code, 1);
  EXPECT_EQ(r.err.rfind("config: ", 0), 0u) << r.err;
  EXPECT_NE(r.err.find("fit.group_size"), std::string::npos) << r.err;

  std::ofstream(dir / "m.jsonl") << "{not json}\n";
  const auto s = genau_cli("stats --manifest m.jsonl --out st", dir);
  EXPECT_EQ(s.code, 1);
  EXPECT_NE(s.err.find("m.jsonl:1"), std::string::npos) << s.err;
}

TEST(Mine, FixtureCorpusThenStats) {
  const auto dir = scratch("mine");
  const auto f = genau::testing::write_ambient_fixture(dir / "fx");
  const auto r = genau_cli("mine --transcripts fx/transcripts --durations fx/durations.csv --filters fx/filters.toml --out mined",
                           dir);
  ASSERT_EQ(r.code, 0) << r.err;
  for (const char* name : {"manifest.jsonl", "stats.json", "stats.csv", "drops.csv", "metrics.csv", "config.toml", "log.txt"})
    EXPECT_TRUE(fs::exists(dir / "mined" / name)) << name;
  const auto recs = miner::read_manifest(dir / "mined" / "manifest.jsonl");
  ASSERT_EQ(recs.size(), f.kept.size());
  for (std::size_t i = 0; i < recs.size(); ++i) {
    EXPECT_EQ(recs[i].video_id, f.kept[i].video_id);
    EXPECT_EQ(recs[i].start_ms, f.kept[i].start_ms);
    EXPECT_EQ(recs[i].end_ms, f.kept[i].end_ms);
    EXPECT_EQ(recs[i].caption, f.kept[i].caption);
  }
  EXPECT_EQ(slurp(dir / "mined" / "metrics.csv"),
            "transcript_files,segments,caption_error,merged,keyword,clap,records\n5,8,1,1,2,1,3\n");

  const auto s = genau_cli("stats --manifest mined/manifest.jsonl --out st", dir);
  ASSERT_EQ(s.code, 0) << s.err;
  EXPECT_NE(slurp(dir / "st" / "stats.csv").find("segments_per_video,1,1\nsegments_per_video,2,1\n"), std::string::npos);
}

TEST(Mine, ScorerNoneNeedsAllowUnscored) {
  const auto dir = scratch("unscored");
  genau::testing::write_ambient_fixture(dir / "fx");
  std::ofstream(dir / "fx" / "filters.toml") << "[miner]\nfixture = \"providers.jsonl\"\nscorer = \"none\"\n";
  const std::string base = "mine --transcripts fx/transcripts --durations fx/durations.csv --filters fx/filters.toml ";
  const auto r = genau_cli(base + "--out a", dir);
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("--allow-unscored"), std::string::npos) << r.err;
  ASSERT_EQ(genau_cli(base + "--out b --allow-unscored", dir).code, 0);
  for (const auto& rec : miner::read_manifest(dir / "b" / "manifest.jsonl")) {
    EXPECT_TRUE(rec.flags & miner::kUnscored);
    EXPECT_FALSE(rec.clap_score.has_value());
  }
}

TEST(Training, TinyRunsAreBitIdenticalAndCheckpointsValidate) {
  const auto dir = scratch("train");
  genau::testing::write_ambient_fixture(dir / "fx");
  std::ofstream(dir / "tiny.toml") << kTinyConfig;
  ASSERT_EQ(genau_cli("mine --transcripts fx/transcripts --durations fx/durations.csv --filters fx/filters.toml --out mined",
                      dir).code, 0);
  const std::string data = " --manifest mined/manifest.jsonl --audio-dir fx/audio";
  for (const char* run : {"v1", "v2"}) {
    const auto r = genau_cli(std::string("train-vae --config tiny.toml --run-dir ") + run + data, dir);
    ASSERT_EQ(r.code, 0) << r.err;
  }
  EXPECT_EQ(slurp(dir / "v1" / "metrics.csv"), slurp(dir / "v2" / "metrics.csv"));
  EXPECT_EQ(slurp(dir / "v1" / "vae.ckpt"), slurp(dir / "v2" / "vae.ckpt"));
  EXPECT_EQ(slurp(dir / "v1" / "metrics.csv").substr(0, 34), "step,loss,recon,kl,smoothed_recon\n");

  for (const char* run : {"d1", "d2"}) {
    const auto r = genau_cli(std::string("train-diffusion --config tiny.toml --vae v1/vae.ckpt --run-dir ") + run + data, dir);
    ASSERT_EQ(r.code, 0) << r.err;
  }
  EXPECT_EQ(slurp(dir / "d1" / "metrics.csv"), slurp(dir / "d2" / "metrics.csv"));
  for (const char* name : {"config.toml", "log.txt", "metrics.csv", "fit.ckpt"}) EXPECT_TRUE(fs::exists(dir / "d1" / name));

  // A config whose VAE differs from the checkpoint is refused by name.
  std::string other = kTinyConfig;
  other.replace(other.find("bottleneck = 4"), 14, "bottleneck = 6");
  std::ofstream(dir / "other.toml") << other;
  const auto bad = genau_cli("train-diffusion --config other.toml --vae v1/vae.ckpt --run-dir d3" + data, dir);
  EXPECT_EQ(bad.code, 1);
  EXPECT_NE(bad.err.find("checkpoint: "), std::string::npos) << bad.err;
  EXPECT_NE(bad.err.find("'bottleneck'"), std::string::npos) << bad.err;

  const std::string sample = "sample --config tiny.toml --vae v1/vae.ckpt --fit d1/fit.ckpt --text 'rain on a roof' ";
  ASSERT_EQ(genau_cli(sample + "--out s1.wav --run-dir s1", dir).code, 0);
  ASSERT_EQ(genau_cli(sample + "--out s2.wav --run-dir s2", dir).code, 0);
  EXPECT_EQ(slurp(dir / "s1.wav"), slurp(dir / "s2.wav"));
  const auto clip = audio::read_wav(dir / "s1.wav");
  EXPECT_EQ(clip.sample_rate, 16000);
  EXPECT_EQ(clip.samples.size(), 10240u);
  ASSERT_EQ(genau_cli(sample + "--out s3.wav --run-dir s3 --seed 9", dir).code, 0);
  EXPECT_NE(slurp(dir / "s1.wav"), slurp(dir / "s3.wav"));

  // Resuming from the final checkpoint with more steps continues the count.
  std::string longer = kTinyConfig;
  longer.replace(longer.find("steps = 5"), 9, "steps = 7");
  std::ofstream(dir / "longer.toml") << longer;
  ASSERT_EQ(genau_cli("train-diffusion --config longer.toml --vae v1/vae.ckpt --resume d1/fit.ckpt --run-dir d4" + data, dir).code,
            0);
  const auto m = slurp(dir / "d4" / "metrics.csv");
  EXPECT_EQ(m.substr(m.find('\n') + 1, 2), "5,");
}

TEST(Flops, WritesLinearityReport) {
  const auto dir = scratch("flops");
  std::ofstream(dir / "c.toml") << "[fit]\nd_patch = 16\nd_latent = 16\nheads = 2\nn_blocks = 1\n[conditioning]\nwidth = 8\n";
  const auto r = genau_cli("flops --config c.toml --patches 128,256,512 --out f.json --run-dir fl", dir);
  ASSERT_EQ(r.code, 0) << r.err;
  const auto j = checkpoint::json::parse(slurp(dir / "f.json"));
  EXPECT_EQ(j["points"].size(), 3u);
  EXPECT_GT(j["r2"].get<double>(), 0.999);
  EXPECT_EQ(slurp(dir / "f.json"), slurp(dir / "fl" / "flops.json"));
}
