#include <gtest/gtest.h>

#include <cmath>
#include <complex>
#include <filesystem>
#include <fstream>

#include "genau/audio/griffin_lim.hpp"
#include "genau/audio/mel.hpp"
#include "genau/audio/wav.hpp"
#include "support/signals.hpp"

namespace genau::audio {
namespace {

namespace fs = std::filesystem;

std::size_t peak_bin(const Spectrogram& s) {
  std::vector<double> avg(s.bins, 0.0);
  for (std::size_t t = 0; t < s.frames; ++t)
    for (std::size_t k = 0; k < s.bins; ++k) avg[k] += std::abs(s.at(t, k));
  return static_cast<std::size_t>(std::max_element(avg.begin(), avg.end()) - avg.begin());
}

TEST(Stft, SinePeaksAtExpectedBin) {
  MelConfig cfg;
  const auto s = stft(testing::sine(1000.0, 1.0), cfg);
  EXPECT_EQ(peak_bin(s), static_cast<std::size_t>(std::lround(1000.0 * 1024 / 16000)));
  EXPECT_EQ(peak_bin(s), 64u);
}

TEST(Stft, SilenceHasZeroMagnitude) {
  AudioClip silent;
  silent.samples.assign(16000, 0.0f);
  const auto s = stft(silent, MelConfig{});
  for (const auto& c : s.data) EXPECT_EQ(std::abs(c), 0.0);
}

TEST(Stft, TenSecondFrameCounts) {
  MelConfig cfg;
  EXPECT_EQ(stft_frame_count(160000, cfg.n_fft, cfg.hop), 1001u);
  EXPECT_EQ(mel_frame_count(160000, cfg), 1000u);
}

TEST(Stft, FrameCountMatchesLoopOracle) {
  for (std::size_t n_fft : {256u, 512u, 1024u})
    for (std::size_t hop : {64u, 160u, 256u})
      for (std::size_t len = n_fft; len < n_fft + 700; len += 37) {
        // Count window starts over the padded signal by stepping.
        std::size_t frames = 0;
        for (std::size_t start = 0; start + n_fft <= len + n_fft; start += hop) ++frames;
        EXPECT_EQ(stft_frame_count(len, n_fft, hop), frames) << len << " " << n_fft << " " << hop;
      }
}

TEST(Stft, ParsevalWithinOnePercent) {
  MelConfig cfg;
  for (auto clip : {testing::white_noise(2.0, 3), testing::ambient(2.0, 5)}) {
    const auto s = stft(clip, cfg);
    double spec_energy = 0;
    for (std::size_t t = 0; t < s.frames; ++t)
      for (std::size_t k = 0; k < s.bins; ++k) {
        const double w = (k == 0 || k == s.bins - 1) ? 1.0 : 2.0;  // one-sided spectrum
        spec_energy += w * std::norm(s.at(t, k));
      }
    double win_sq = 0;
    for (double w : hann_window(cfg.n_fft)) win_sq += w * w;
    spec_energy *= static_cast<double>(cfg.hop) / (static_cast<double>(cfg.n_fft) * win_sq);
    double sig_energy = 0;
    for (float v : clip.samples) sig_energy += double(v) * v;
    EXPECT_NEAR(spec_energy / sig_energy, 1.0, 0.01);
  }
}

TEST(Stft, ShorterThanOneFrameIsAnError) {
  AudioClip tiny;
  tiny.samples.assign(100, 0.1f);
  EXPECT_THROW(stft(tiny, MelConfig{}), Error);
}

TEST(Mel, TenSecondShape) {
  AudioClip clip = testing::white_noise(10.0, 1);
  const auto mel = waveform_to_mel(clip, MelConfig{});
  EXPECT_EQ(mel.frames.shape(), (Shape{1000, 64}));
  EXPECT_TRUE(mel.frames.all_finite());
}

TEST(Mel, SilenceSitsOnTheFloor) {
  AudioClip silent;
  silent.samples.assign(16000, 0.0f);
  const auto mel = waveform_to_mel(silent, MelConfig{});
  for (float v : mel.frames.vec()) EXPECT_FLOAT_EQ(v, static_cast<float>(std::log(1e-5)));
}

TEST(Mel, NoiseHasMoreEnergyThanSilence) {
  AudioClip silent;
  silent.samples.assign(16000, 0.0f);
  const auto quiet = waveform_to_mel(silent, MelConfig{});
  const auto loud = waveform_to_mel(testing::white_noise(1.0, 9), MelConfig{});
  for (std::size_t t = 0; t < loud.length(); ++t) {
    double a = 0, b = 0;
    for (std::size_t m = 0; m < 64; ++m) a += loud.frames.at(t, m), b += quiet.frames.at(t, m);
    EXPECT_GT(a, b);
  }
}

TEST(Mel, RateMismatchRequiresResampling) {
  AudioClip clip = testing::sine(440, 1.0, 0.5, 22050);
  EXPECT_THROW(waveform_to_mel(clip, MelConfig{}), Error);
}

TEST(MelFilterbank, RowsPositiveNonNegativeAndSparse) {
  const auto fb = mel_filterbank(MelConfig{});
  ASSERT_EQ(fb.shape(), (Shape{64, 513}));
  for (std::size_t m = 0; m < 64; ++m) {
    double row = 0;
    for (std::size_t k = 0; k < 513; ++k) {
      EXPECT_GE(fb.at(m, k), 0.0);
      row += fb.at(m, k);
    }
    EXPECT_GT(row, 0.0) << "mel row " << m;
  }
  for (std::size_t k = 0; k < 513; ++k) {
    int first = -1, count = 0, last = -1;
    for (std::size_t m = 0; m < 64; ++m)
      if (fb.at(m, k) > 0) {
        if (first < 0) first = static_cast<int>(m);
        last = static_cast<int>(m);
        ++count;
      }
    EXPECT_LE(count, 2) << "bin " << k;
    if (count == 2) {
      EXPECT_EQ(last, first + 1);
    }
  }
}

TEST(MelFilterbank, AllOnesSpectrumGivesRowSums) {
  MelConfig cfg;
  const auto fb = mel_filterbank(cfg);
  std::vector<double> ones(2 * cfg.bins(), 1.0);
  const auto out = magnitudes_to_log_mel(ones, 2, fb, 1e-30);
  for (std::size_t m = 0; m < cfg.n_mels; ++m) {
    double row = 0;
    for (std::size_t k = 0; k < cfg.bins(); ++k) row += fb.at(m, k);
    EXPECT_NEAR(std::exp(out.at(0, m)), row, 1e-5 * row);
  }
}

TEST(GriffinLim, SineKeepsDominantFrequency) {
  MelConfig cfg;
  const auto mel = waveform_to_mel(testing::sine(1000.0, 1.0), cfg);
  const AudioClip rec = griffin_lim(mel, 60);
  const auto bin = static_cast<long>(peak_bin(stft(rec, cfg)));
  EXPECT_LE(std::abs(bin - 64), 1) << "peak bin " << bin;
}

TEST(GriffinLim, SilenceStaysSilent) {
  AudioClip silent;
  silent.samples.assign(16000, 0.0f);
  const AudioClip rec = griffin_lim(waveform_to_mel(silent, MelConfig{}), 10);
  double e = 0;
  for (float v : rec.samples) e += double(v) * v;
  EXPECT_LT(std::sqrt(e / rec.samples.size()), 1e-3);
}

TEST(GriffinLim, ConvergenceDecreasesMonotonically) {
  const auto mel = waveform_to_mel(testing::ambient(1.0, 17), MelConfig{});
  const auto res = griffin_lim_detailed(mel, 60);
  ASSERT_EQ(res.convergence.size(), 60u);
  for (std::size_t i = 1; i < res.convergence.size(); ++i)
    EXPECT_LE(res.convergence[i], res.convergence[i - 1] + 1e-3) << "iteration " << i;
  const auto one = griffin_lim_detailed(mel, 1);
  EXPECT_LT(res.convergence.back(), one.convergence.back());
}

TEST(GriffinLim, LogMelErrorBelowHalfOnCorpus) {
  MelConfig cfg;
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    const auto mel = waveform_to_mel(testing::ambient(2.0, seed), cfg);
    const auto rec = griffin_lim(mel, 60);
    const auto mel2 = waveform_to_mel(rec, cfg);
    ASSERT_EQ(mel2.frames.shape(), mel.frames.shape());
    double l1 = 0;
    for (std::size_t i = 0; i < mel.frames.size(); ++i) l1 += std::abs(mel.frames[i] - mel2.frames[i]);
    l1 /= static_cast<double>(mel.frames.size());
    EXPECT_LT(l1, 0.5) << "seed " << seed;
  }
}

class WavFiles : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() / ("genau_wav_" + std::to_string(::getpid()));
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }
  fs::path dir_;
};

std::string data_chunk(const std::string& bytes) {
  const auto pos = bytes.find("data");
  return bytes.substr(pos + 8);
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

TEST_F(WavFiles, Pcm16RampRoundTripsBitExactly) {
  AudioClip ramp;
  ramp.samples.resize(16000);
  for (std::size_t i = 0; i < ramp.samples.size(); ++i)
    ramp.samples[i] = static_cast<float>(static_cast<int>(i * 4) - 32768) / 32768.0f;
  write_wav(dir_ / "a.wav", ramp);
  const AudioClip back = read_wav(dir_ / "a.wav");
  write_wav(dir_ / "b.wav", back);
  EXPECT_EQ(data_chunk(slurp(dir_ / "a.wav")), data_chunk(slurp(dir_ / "b.wav")));
  EXPECT_EQ(back.samples, ramp.samples);
}

std::string stereo_float_wav(const std::vector<float>& left, const std::vector<float>& right, int rate) {
  std::string out = "RIFF";
  auto put32 = [&](std::uint32_t v) { for (int i = 0; i < 4; ++i) out.push_back(char((v >> (8 * i)) & 0xFF)); };
  auto put16 = [&](std::uint16_t v) { out.push_back(char(v & 0xFF)); out.push_back(char(v >> 8)); };
  const std::uint32_t data_len = static_cast<std::uint32_t>(left.size() * 8);
  put32(36 + data_len);
  out += "WAVEfmt ";
  put32(16);
  put16(3);
  put16(2);
  put32(rate);
  put32(rate * 8);
  put16(8);
  put16(32);
  out += "data";
  put32(data_len);
  for (std::size_t i = 0; i < left.size(); ++i) {
    put32(std::bit_cast<std::uint32_t>(left[i]));
    put32(std::bit_cast<std::uint32_t>(right[i]));
  }
  return out;
}

TEST_F(WavFiles, StereoFloatIsMeanDownmixed) {
  const AudioClip c = decode_wav(stereo_float_wav({0.5f, -0.25f, 1.0f}, {0.25f, 0.25f, -1.0f}, 16000));
  ASSERT_EQ(c.samples.size(), 3u);
  EXPECT_FLOAT_EQ(c.samples[0], 0.375f);
  EXPECT_FLOAT_EQ(c.samples[1], 0.0f);
  EXPECT_FLOAT_EQ(c.samples[2], 0.0f);
}

TEST_F(WavFiles, ResampleFrom44k1) {
  AudioClip c = testing::sine(440, 1.0, 0.5, 44100);
  c.samples.resize(44100 + 77);
  const AudioClip r = resample_linear(c, 16000);
  EXPECT_EQ(r.samples.size(), static_cast<std::size_t>(std::llround((44100 + 77) * 16000.0 / 44100.0)));
  EXPECT_EQ(r.sample_rate, 16000);
}

TEST_F(WavFiles, MalformedHeadersNameTheChunk) {
  try {
    decode_wav("RIFX0000WAVE");
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("RIFF"), std::string::npos);
  }
  std::string no_data = stereo_float_wav({0.1f}, {0.1f}, 16000);
  no_data = no_data.substr(0, no_data.find("data"));
  try {
    decode_wav(no_data);
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("data"), std::string::npos);
  }
  std::string pcm24 = stereo_float_wav({0.1f}, {0.1f}, 16000);
  pcm24[20] = 1;  // format tag PCM with 32 bits: unsupported
  try {
    decode_wav(pcm24);
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("fmt "), std::string::npos);
  }
}

}  // namespace
}  // namespace genau::audio
