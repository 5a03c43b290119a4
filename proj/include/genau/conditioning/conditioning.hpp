#pragma once

// Conditioning signal for the denoiser: a token-sequence text embedding, a
// pooled text embedding, a sinusoidal timestep embedding and a learned
// dataset-ID embedding, stacked as rows seq | global | t | ds.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "genau/core/checkpoint.hpp"
#include "genau/core/nn.hpp"
#include "genau/core/process.hpp"
#include "genau/core/random.hpp"

namespace genau::cond {

using checkpoint::json;

inline constexpr std::size_t kDefaultWidth = 256;
inline constexpr std::size_t kMaxTokens = 64;

struct TextEmbedding {
  Tensor<float> seq;     // [S, d]
  Tensor<float> global;  // [1, d]

  bool operator==(const TextEmbedding&) const = default;
};

// All-zero sequence of length one and a zero pooled vector.
inline TextEmbedding null_text_embedding(std::size_t d) {
  return {Tensor<float>(Shape{1, d}), Tensor<float>(Shape{1, d})};
}

class TextEmbedder {
 public:
  virtual ~TextEmbedder() = default;
  virtual TextEmbedding embed(const std::string& text) = 0;
  virtual std::size_t width() const = 0;
};

inline std::vector<std::string> whitespace_tokens(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : text) {
    if (c == ' ' || c == '\t' || c == '\n' || c == '\r') {
      if (!cur.empty()) out.push_back(std::move(cur)), cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

inline std::uint64_t fnv1a(std::string_view s, std::uint64_t seed) {
  std::uint64_t h = 0xcbf29ce484222325ull ^ seed;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

// Deterministic stand-in for pretrained text encoders: every token maps to a
// fixed pseudo-random unit vector; the pooled embedding is the normalized mean.
class HashEmbedder final : public TextEmbedder {
 public:
  explicit HashEmbedder(std::size_t width = kDefaultWidth, std::uint64_t seed = 0, std::size_t max_tokens = kMaxTokens)
      : width_(width), seed_(seed), max_tokens_(max_tokens) {
    if (width == 0 || max_tokens == 0) throw ConfigError("hash embedder width and max_tokens must be positive");
  }

  std::vector<float> token_vector(std::string_view token) const {
    Rng rng(fnv1a(token, seed_));
    std::vector<float> v(width_);
    double norm = 0;
    for (auto& x : v) {
      x = static_cast<float>(rng.normal());
      norm += double(x) * x;
    }
    norm = std::sqrt(norm);
    for (auto& x : v) x = static_cast<float>(x / norm);
    return v;
  }

  TextEmbedding embed(const std::string& text) override {
    auto tokens = whitespace_tokens(text);
    if (tokens.empty()) return null_text_embedding(width_);
    if (tokens.size() > max_tokens_) tokens.resize(max_tokens_);
    TextEmbedding e{Tensor<float>(Shape{tokens.size(), width_}), Tensor<float>(Shape{1, width_})};
    std::vector<double> mean(width_, 0.0);
    for (std::size_t i = 0; i < tokens.size(); ++i) {
      const auto v = token_vector(tokens[i]);
      for (std::size_t j = 0; j < width_; ++j) {
        e.seq.at(i, j) = v[j];
        mean[j] += v[j];
      }
    }
    double norm = 0;
    for (double m : mean) norm += m * m;
    norm = std::sqrt(norm);
    // Exactly cancelling tokens leave a zero pooled vector.
    for (std::size_t j = 0; j < width_; ++j) e.global[j] = norm > 0 ? static_cast<float>(mean[j] / norm) : 0.0f;
    return e;
  }

  std::size_t width() const override { return width_; }

 private:
  std::size_t width_;
  std::uint64_t seed_;
  std::size_t max_tokens_;
};

// External encoder over stdio. Request {"text": ...}; reply
// {"seq": [[...], ...], "global": [...]} with rows of the configured width.
class StdioEmbedder final : public TextEmbedder {
 public:
  StdioEmbedder(const std::vector<std::string>& argv, std::size_t width) : proc_(argv, "conditioning"), width_(width) {}

  TextEmbedding embed(const std::string& text) override {
    if (whitespace_tokens(text).empty()) return null_text_embedding(width_);
    const std::string reply = proc_.request(json{{"text", text}}.dump());
    json j;
    try {
      j = json::parse(reply);
    } catch (const json::exception& e) {
      throw FormatError("conditioning", std::string("embedder reply is not JSON: ") + e.what());
    }
    if (!j.contains("seq") || !j.contains("global")) throw FormatError("conditioning", "embedder reply needs seq and global");
    const auto& seq = j.at("seq");
    if (!seq.is_array() || seq.empty()) throw FormatError("conditioning", "embedder seq must be a non-empty array");
    const std::size_t s = std::min(seq.size(), kMaxTokens);
    TextEmbedding e{Tensor<float>(Shape{s, width_}), Tensor<float>(Shape{1, width_})};
    for (std::size_t i = 0; i < s; ++i) fill_row(seq[i], e.seq.ptr() + i * width_);
    fill_row(j.at("global"), e.global.ptr());
    return e;
  }

  std::size_t width() const override { return width_; }

 private:
  void fill_row(const json& row, float* out) const {
    if (!row.is_array() || row.size() != width_)
      throw FormatError("conditioning", "embedder row has " + std::to_string(row.size()) + " values, expected " +
                                            std::to_string(width_));
    for (std::size_t i = 0; i < width_; ++i) out[i] = row[i].get<float>();
  }

  StdioProcess proc_;
  std::size_t width_;
};

// Sinusoidal features [sin(t w_0..w_{h-1}), cos(t w_0..w_{h-1})] with
// wavelengths 2*pi*10^(4 i/(h-1)), i.e. periods spaced geometrically from 1
// to 10^4 (in units of 2*pi steps).
inline Tensor<float> timestep_embedding(double t, std::size_t d) {
  if (d < 2 || d % 2) throw ConfigError("timestep embedding width must be even and >= 2");
  const std::size_t half = d / 2;
  Tensor<float> out(Shape{1, d});
  for (std::size_t i = 0; i < half; ++i) {
    const double denom = half == 1 ? 1.0 : std::pow(1e4, double(i) / double(half - 1));
    const double a = t / denom;
    out[i] = static_cast<float>(std::sin(a));
    out[half + i] = static_cast<float>(std::cos(a));
  }
  return out;
}

// Named dataset IDs; the slot after the last registered ID is the reserved
// null ID used for unconditional passes.
class DatasetRegistry {
 public:
  DatasetRegistry() : names_{"audiocaps", "clotho", "autorecap"} {}
  explicit DatasetRegistry(std::vector<std::string> names) : names_(std::move(names)) {
    if (names_.empty()) throw ConfigError("dataset registry needs at least one id");
    for (std::size_t i = 0; i < names_.size(); ++i)
      for (std::size_t j = 0; j < i; ++j)
        if (names_[i] == names_[j]) throw ConfigError("duplicate dataset id '" + names_[i] + "'");
  }

  std::size_t index(const std::string& name) const {
    for (std::size_t i = 0; i < names_.size(); ++i)
      if (names_[i] == name) return i;
    std::string known;
    for (const auto& n : names_) known += (known.empty() ? "" : ", ") + n;
    throw ContractError("conditioning", "unknown dataset id '" + name + "'; registered ids: " + known);
  }
  std::size_t null_index() const { return names_.size(); }
  std::size_t size() const { return names_.size(); }
  const std::vector<std::string>& names() const { return names_; }

 private:
  std::vector<std::string> names_;
};

inline const std::string kDefaultDatasetId = "audiocaps";

// Text parts, timestep and dataset slot of one conditioning signal. The
// dataset row itself is a model parameter, looked up by DatasetEmbedding.
struct ConditioningBundle {
  TextEmbedding text;
  Tensor<float> t_embed;  // [1, d]
  std::size_t dataset_index = 0;

  std::size_t rows() const { return text.seq.dim(0) + 3; }
  std::size_t width() const { return text.seq.dim(1); }
};

template <class T>
class DatasetEmbedding {
 public:
  DatasetEmbedding() = default;
  // One row per registered id plus the null row.
  DatasetEmbedding(std::size_t n_ids, std::size_t d, Rng& rng)
      : table_("cond.dataset_table", rng.normal_tensor<T>(Shape{n_ids + 1, d}, 0.02)) {}

  Var<T> row(Tape<T>& tape, std::size_t index) {
    if (index >= table_.value.dim(0))
      throw ContractError("conditioning", "dataset index " + std::to_string(index) + " outside table of " +
                                              std::to_string(table_.value.dim(0)) + " rows");
    return ops::slice(tape.param(table_), 0, index, index + 1);
  }
  Tensor<T> row_value(std::size_t index) const {
    const std::size_t d = table_.value.dim(1);
    Tensor<T> out(Shape{1, d});
    std::copy_n(table_.value.ptr() + index * d, d, out.ptr());
    return out;
  }

  // Rows seq | global | t | ds as one [S+3, d] variable.
  Var<T> assemble(Tape<T>& tape, const ConditioningBundle& b) {
    if (b.text.seq.dim(1) != width() || b.text.global.shape() != Shape{1, width()} || b.t_embed.shape() != Shape{1, width()})
      throw DimensionError("conditioning width mismatch: bundle " + shape_str(b.text.seq.shape()) + " vs table width " +
                           std::to_string(width()));
    return ops::concat<T>({tape.constant(b.text.seq.template cast<T>()), tape.constant(b.text.global.template cast<T>()),
                           tape.constant(b.t_embed.template cast<T>()), row(tape, b.dataset_index)},
                          0);
  }
  Tensor<T> assemble_value(const ConditioningBundle& b) {
    Tape<T> tape;
    return assemble(tape, b).value();
  }

  void visit(const nn::ParamVisitor<T>& f) { f(table_); }
  std::size_t width() const { return table_.value.dim(1); }
  std::size_t rows() const { return table_.value.dim(0); }

 private:
  Parameter<T> table_;
};

class Conditioner {
 public:
  Conditioner(std::shared_ptr<TextEmbedder> embedder, DatasetRegistry registry = {})
      : embedder_(std::move(embedder)), registry_(std::move(registry)) {}

  ConditioningBundle build(const std::string& text, double t, const std::string& dataset_id) const {
    return from_embedding(embedder_->embed(text), t, registry_.index(dataset_id));
  }
  ConditioningBundle null(double t) const {
    return from_embedding(null_text_embedding(width()), t, registry_.null_index());
  }
  ConditioningBundle from_embedding(TextEmbedding e, double t, std::size_t dataset_index) const {
    return {std::move(e), timestep_embedding(t, width()), dataset_index};
  }

  TextEmbedding embed(const std::string& text) const { return embedder_->embed(text); }
  std::size_t width() const { return embedder_->width(); }
  const DatasetRegistry& registry() const { return registry_; }

 private:
  std::shared_ptr<TextEmbedder> embedder_;
  DatasetRegistry registry_;
};

}  // namespace genau::cond
