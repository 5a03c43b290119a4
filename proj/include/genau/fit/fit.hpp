#pragma once

// FIT denoiser. Patch tokens are split into contiguous groups for local
// self-attention; a small set of latent tokens reads from all patches,
// attends to the conditioning and to itself, then writes back.

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "genau/conditioning/conditioning.hpp"
#include "genau/core/checkpoint.hpp"
#include "genau/core/nn.hpp"

namespace genau::fit {

using checkpoint::json;

struct FitConfig {
  std::size_t latent_channels = 64;  // c of the VAE latent
  std::size_t patch_size = 1;
  std::size_t group_size = 32;
  std::size_t n_latent = 64;
  std::size_t n_blocks = 4;
  std::size_t local_layers = 2;
  std::size_t global_layers = 2;
  std::size_t d_patch = 128;
  std::size_t d_latent = 128;
  std::size_t heads = 4;
  std::size_t ff_mult = 4;
  double dropout = 0.1;
  std::size_t cond_width = cond::kDefaultWidth;
  std::size_t n_dataset_ids = 3;
  std::size_t max_patches = 4096;

  void validate() const {
    if (patch_size != 1 && patch_size != 2) throw ConfigError("fit.patch_size must be 1 or 2");
    if (group_size == 0) throw ConfigError("fit.group_size must be >= 1");
    if (n_latent == 0 || n_blocks == 0) throw ConfigError("fit.n_latent and fit.n_blocks must be positive");
    if (latent_channels == 0 || d_patch == 0 || d_latent == 0 || cond_width == 0)
      throw ConfigError("fit widths must be positive");
    if (heads == 0 || d_patch % heads || d_latent % heads)
      throw ConfigError("fit.heads must divide d_patch and d_latent");
    if (dropout < 0 || dropout >= 1) throw ConfigError("fit.dropout must be in [0, 1)");
    if (max_patches == 0) throw ConfigError("fit.max_patches must be positive");
  }

  std::size_t patch_count(std::size_t length) const { return (length + patch_size - 1) / patch_size; }
  std::size_t group_count(std::size_t n_patches) const { return (n_patches + group_size - 1) / group_size; }

  json to_json() const {
    return {{"latent_channels", latent_channels}, {"patch_size", patch_size}, {"group_size", group_size},
            {"n_latent", n_latent},               {"n_blocks", n_blocks},     {"local_layers", local_layers},
            {"global_layers", global_layers},     {"d_patch", d_patch},       {"d_latent", d_latent},
            {"heads", heads},                     {"ff_mult", ff_mult},       {"dropout", dropout},
            {"cond_width", cond_width},           {"n_dataset_ids", n_dataset_ids},
            {"max_patches", max_patches}};
  }
  static FitConfig from_json(const json& j) {
    FitConfig c;
    c.latent_channels = j.at("latent_channels").get<std::size_t>();
    c.patch_size = j.at("patch_size").get<std::size_t>();
    c.group_size = j.at("group_size").get<std::size_t>();
    c.n_latent = j.at("n_latent").get<std::size_t>();
    c.n_blocks = j.at("n_blocks").get<std::size_t>();
    c.local_layers = j.at("local_layers").get<std::size_t>();
    c.global_layers = j.at("global_layers").get<std::size_t>();
    c.d_patch = j.at("d_patch").get<std::size_t>();
    c.d_latent = j.at("d_latent").get<std::size_t>();
    c.heads = j.at("heads").get<std::size_t>();
    c.ff_mult = j.at("ff_mult").get<std::size_t>();
    c.dropout = j.at("dropout").get<double>();
    c.cond_width = j.at("cond_width").get<std::size_t>();
    c.n_dataset_ids = j.at("n_dataset_ids").get<std::size_t>();
    c.max_patches = j.at("max_patches").get<std::size_t>();
    c.validate();
    return c;
  }
};

// [B, c, L] -> [B, ceil(L/p), p*c]; within a patch features are time-major
// (offset * c + channel). The tail is zero-padded.
template <class T>
Var<T> patchify(const Var<T>& z, std::size_t p) {
  if (z.rank() != 3) throw DimensionError("patchify expects [B, c, L], got " + shape_str(z.shape()));
  const std::size_t b = z.dim(0), c = z.dim(1), l = z.dim(2);
  const std::size_t n = (l + p - 1) / p;
  Var<T> x = z;
  if (n * p != l) x = ops::concat<T>({z, z.tape().constant(Tensor<T>(Shape{b, c, n * p - l}))}, 2);
  x = ops::reshape(x, Shape{b, c, n, p});
  x = ops::permute(x, {0, 2, 3, 1});
  return ops::reshape(x, Shape{b, n, p * c});
}

// Inverse of patchify, cropping back to `length` steps.
template <class T>
Var<T> unpatchify(const Var<T>& tokens, std::size_t p, std::size_t channels, std::size_t length) {
  if (tokens.rank() != 3 || tokens.dim(2) != p * channels)
    throw DimensionError("unpatchify expects [B, N, " + std::to_string(p * channels) + "], got " + shape_str(tokens.shape()));
  const std::size_t b = tokens.dim(0), n = tokens.dim(1);
  if (length > n * p || length + p <= n * p)
    throw DimensionError("unpatchify: length " + std::to_string(length) + " does not match " + std::to_string(n) +
                         " patches of " + std::to_string(p));
  Var<T> x = ops::reshape(tokens, Shape{b, n, p, channels});
  x = ops::permute(x, {0, 3, 1, 2});
  x = ops::reshape(x, Shape{b, channels, n * p});
  return n * p == length ? x : ops::slice(x, 2, 0, length);
}

// Additive key mask [1, 1, n_padded]: 0 for the first n_valid positions.
template <class T>
Tensor<T> padding_mask(std::size_t n_valid, std::size_t n_padded) {
  Tensor<T> m(Shape{1, 1, n_padded});
  for (std::size_t i = n_valid; i < n_padded; ++i) m[i] = nn::kMasked<T>;
  return m;
}

// Pre-norm self-attention + feed-forward on tokens [..., N, d].
template <class T>
class SelfAttentionLayer {
 public:
  SelfAttentionLayer() = default;
  SelfAttentionLayer(const std::string& name, std::size_t d, std::size_t heads, std::size_t ff_mult, Rng& rng)
      : ln1_(name + ".ln1", d), attn_(name + ".attn", d, d, d, heads, rng), ln2_(name + ".ln2", d),
        ff_(name + ".ff", d, d * ff_mult, rng) {}

  Var<T> operator()(Tape<T>& tape, const Var<T>& x, const std::optional<Var<T>>& mask, double dropout,
                    const nn::ForwardContext& ctx) {
    Var<T> h = ln1_(tape, x);
    Var<T> y = ops::add(x, nn::dropout(attn_(tape, h, h, mask), dropout, ctx));
    return ops::add(y, nn::dropout(ff_(tape, ln2_(tape, y)), dropout, ctx));
  }

  void visit(const nn::ParamVisitor<T>& f) {
    ln1_.visit(f);
    attn_.visit(f);
    ln2_.visit(f);
    ff_.visit(f);
  }
  nn::MultiHeadAttention<T>& attention() { return attn_; }

 private:
  nn::LayerNorm<T> ln1_;
  nn::MultiHeadAttention<T> attn_;
  nn::LayerNorm<T> ln2_;
  nn::FeedForward<T> ff_;
};

// Pre-norm cross-attention with residual: queries attend to a key/value source.
template <class T>
class CrossAttentionLayer {
 public:
  CrossAttentionLayer() = default;
  CrossAttentionLayer(const std::string& name, std::size_t d_query, std::size_t d_kv, std::size_t heads, Rng& rng)
      : ln_q_(name + ".ln_q", d_query), ln_kv_(name + ".ln_kv", d_kv),
        attn_(name + ".attn", d_query, d_kv, d_query, heads, rng) {}

  struct Result {
    Var<T> output;
    Var<T> weights;
  };

  Result attend(Tape<T>& tape, const Var<T>& query, const Var<T>& kv, const std::optional<Var<T>>& mask, double dropout,
                const nn::ForwardContext& ctx) {
    auto r = attn_.attend(tape, ln_q_(tape, query), ln_kv_(tape, kv), mask);
    return {ops::add(query, nn::dropout(r.output, dropout, ctx)), r.weights};
  }
  Var<T> operator()(Tape<T>& tape, const Var<T>& query, const Var<T>& kv, const std::optional<Var<T>>& mask,
                    double dropout, const nn::ForwardContext& ctx) {
    return attend(tape, query, kv, mask, dropout, ctx).output;
  }

  void visit(const nn::ParamVisitor<T>& f) {
    ln_q_.visit(f);
    ln_kv_.visit(f);
    attn_.visit(f);
  }
  nn::MultiHeadAttention<T>& attention() { return attn_; }

 private:
  nn::LayerNorm<T> ln_q_, ln_kv_;
  nn::MultiHeadAttention<T> attn_;
};

// Local self-attention applied independently to contiguous groups of g
// tokens. x is [B, G*g, d]; mask is [G, 1, 1, g].
template <class T>
Var<T> grouped(const Var<T>& x, std::size_t g, const std::function<Var<T>(const Var<T>&)>& layer) {
  const std::size_t b = x.dim(0), n = x.dim(1), d = x.dim(2);
  if (n % g) throw DimensionError("grouped: " + std::to_string(n) + " tokens not a multiple of group " + std::to_string(g));
  Var<T> y = layer(ops::reshape(x, Shape{b, n / g, g, d}));
  return ops::reshape(y, Shape{b, n, d});
}

template <class T>
Tensor<T> group_mask(std::size_t n_valid, std::size_t groups, std::size_t g) {
  Tensor<T> m(Shape{groups, 1, 1, g});
  for (std::size_t i = n_valid; i < groups * g; ++i) m[i] = nn::kMasked<T>;
  return m;
}

template <class T>
class FitBlock {
 public:
  FitBlock() = default;
  FitBlock(const std::string& name, const FitConfig& c, Rng& rng) {
    for (std::size_t i = 0; i < c.local_layers; ++i)
      local_.emplace_back(name + ".local" + std::to_string(i), c.d_patch, c.heads, c.ff_mult, rng);
    cond_ = CrossAttentionLayer<T>(name + ".cond", c.d_latent, c.cond_width, c.heads, rng);
    read_ = CrossAttentionLayer<T>(name + ".read", c.d_latent, c.d_patch, c.heads, rng);
    for (std::size_t i = 0; i < c.global_layers; ++i)
      global_.emplace_back(name + ".global" + std::to_string(i), c.d_latent, c.heads, c.ff_mult, rng);
    write_ = CrossAttentionLayer<T>(name + ".write", c.d_patch, c.d_latent, c.heads, rng);
  }

  void visit(const nn::ParamVisitor<T>& f) {
    for (auto& l : local_) l.visit(f);
    cond_.visit(f);
    read_.visit(f);
    for (auto& l : global_) l.visit(f);
    write_.visit(f);
  }

  std::vector<SelfAttentionLayer<T>>& local() { return local_; }
  CrossAttentionLayer<T>& cond() { return cond_; }
  CrossAttentionLayer<T>& read() { return read_; }
  std::vector<SelfAttentionLayer<T>>& global() { return global_; }
  CrossAttentionLayer<T>& write() { return write_; }

 private:
  std::vector<SelfAttentionLayer<T>> local_;
  CrossAttentionLayer<T> cond_, read_;
  std::vector<SelfAttentionLayer<T>> global_;
  CrossAttentionLayer<T> write_;
};

// Intermediate values exposed for probes.
template <class T>
struct FitTrace {
  std::optional<Var<T>> before_first_write;  // padded patch states [B, G*g, d_patch]
  std::vector<Var<T>> cond_weights;          // per block [B, H, n_latent, S+3]
};

template <class T>
class Fit {
 public:
  Fit() = default;
  Fit(FitConfig cfg, Rng& rng) : cfg_(std::move(cfg)) {
    cfg_.validate();
    const std::size_t feat = cfg_.patch_size * cfg_.latent_channels;
    in_proj_ = nn::Linear<T>("fit.in_proj", feat, cfg_.d_patch, rng);
    pos_ = Parameter<T>("fit.pos", rng.normal_tensor<T>(Shape{cfg_.max_patches, cfg_.d_patch}, 0.02));
    latents_ = Parameter<T>("fit.latents", rng.normal_tensor<T>(Shape{cfg_.n_latent, cfg_.d_latent}, 1.0));
    for (std::size_t i = 0; i < cfg_.n_blocks; ++i) blocks_.emplace_back("fit.block" + std::to_string(i), cfg_, rng);
    out_ln_ = nn::LayerNorm<T>("fit.out_ln", cfg_.d_patch);
    // Zero head: the untrained model predicts eps = 0.
    out_proj_ = nn::Linear<T>("fit.out_proj", cfg_.d_patch, feat, rng, /*zero_init=*/true);
    datasets_ = cond::DatasetEmbedding<T>(cfg_.n_dataset_ids, cfg_.cond_width, rng);
  }

  const FitConfig& config() const { return cfg_; }

  // z_t: [B, c, L]; cond rows: [B, S_max+3, d_c] with additive key mask
  // [B, 1, 1, S_max+3] (or no mask when all rows are real).
  Var<T> forward(Tape<T>& tape, const Var<T>& z_t, const Var<T>& cond_rows, const std::optional<Var<T>>& cond_mask,
                 const nn::ForwardContext& ctx = {}, FitTrace<T>* trace = nullptr) {
    if (z_t.rank() != 3 || z_t.dim(1) != cfg_.latent_channels)
      throw DimensionError("fit expects z_t [B, " + std::to_string(cfg_.latent_channels) + ", L], got " +
                           shape_str(z_t.shape()));
    if (cond_rows.rank() != 3 || cond_rows.dim(0) != z_t.dim(0) || cond_rows.dim(2) != cfg_.cond_width)
      throw DimensionError("fit conditioning must be [B, S+3, " + std::to_string(cfg_.cond_width) + "], got " +
                           shape_str(cond_rows.shape()) + " for batch " + std::to_string(z_t.dim(0)));
    const std::size_t b = z_t.dim(0), length = z_t.dim(2);
    const std::size_t n = cfg_.patch_count(length);
    if (n > cfg_.max_patches)
      throw DimensionError("fit: " + std::to_string(n) + " patches exceed max_patches " + std::to_string(cfg_.max_patches));
    const std::size_t g = cfg_.group_size, groups = cfg_.group_count(n), padded = groups * g;
    const double p_drop = cfg_.dropout;

    Var<T> x = in_proj_(tape, patchify(z_t, cfg_.patch_size));
    x = ops::add(x, ops::slice(tape.param(pos_), 0, 0, n));
    if (padded != n) x = ops::concat<T>({x, tape.constant(Tensor<T>(Shape{b, padded - n, cfg_.d_patch}))}, 1);
    const Var<T> local_mask = tape.constant(group_mask<T>(n, groups, g));
    const Var<T> patch_mask = tape.constant(padding_mask<T>(n, padded));

    Var<T> lat = ops::add(tape.constant(Tensor<T>(Shape{b, cfg_.n_latent, cfg_.d_latent})), tape.param(latents_));
    for (std::size_t bi = 0; bi < blocks_.size(); ++bi) {
      auto& blk = blocks_[bi];
      for (auto& layer : blk.local())
        x = grouped<T>(x, g, [&](const Var<T>& xg) { return layer(tape, xg, local_mask, p_drop, ctx); });
      auto c = blk.cond().attend(tape, lat, cond_rows, cond_mask, p_drop, ctx);
      lat = c.output;
      if (trace) trace->cond_weights.push_back(c.weights);
      lat = blk.read()(tape, lat, x, patch_mask, p_drop, ctx);
      for (auto& layer : blk.global()) lat = layer(tape, lat, std::nullopt, p_drop, ctx);
      if (trace && bi == 0) trace->before_first_write = x;
      x = blk.write()(tape, x, lat, std::nullopt, p_drop, ctx);
    }
    if (padded != n) x = ops::slice(x, 1, 0, n);
    Var<T> y = out_proj_(tape, out_ln_(tape, x));
    return unpatchify(y, cfg_.patch_size, cfg_.latent_channels, length);
  }

  // Stacks per-sample bundles into [B, S_max+3, d_c] plus a key mask for the
  // zero rows appended to shorter samples.
  std::pair<Var<T>, std::optional<Var<T>>> conditioning(Tape<T>& tape, const std::vector<const cond::ConditioningBundle*>& bs) {
    std::size_t rows = 0;
    for (const auto* b : bs) rows = std::max(rows, b->rows());
    std::vector<Var<T>> parts;
    Tensor<T> mask(Shape{bs.size(), 1, 1, rows});
    bool any_pad = false;
    for (std::size_t i = 0; i < bs.size(); ++i) {
      Var<T> r = datasets_.assemble(tape, *bs[i]);
      const std::size_t ri = r.dim(0);
      if (ri < rows) {
        r = ops::concat<T>({r, tape.constant(Tensor<T>(Shape{rows - ri, cfg_.cond_width}))}, 0);
        for (std::size_t k = ri; k < rows; ++k) mask[i * rows + k] = nn::kMasked<T>;
        any_pad = true;
      }
      parts.push_back(ops::reshape(r, Shape{1, rows, cfg_.cond_width}));
    }
    Var<T> stacked = parts.size() == 1 ? parts[0] : ops::concat<T>(parts, 0);
    if (!any_pad) return {stacked, std::nullopt};
    return {stacked, tape.constant(std::move(mask))};
  }

  Var<T> forward(Tape<T>& tape, const Var<T>& z_t, const std::vector<const cond::ConditioningBundle*>& bundles,
                 const nn::ForwardContext& ctx = {}, FitTrace<T>* trace = nullptr) {
    auto [rows, mask] = conditioning(tape, bundles);
    return forward(tape, z_t, rows, mask, ctx, trace);
  }

  // Single unbatched sample without gradients: z_t [c, L] -> eps_hat [c, L].
  Tensor<T> predict(const Tensor<T>& z_t, const cond::ConditioningBundle& bundle) {
    Tape<T> tape;
    Var<T> z = tape.constant(z_t.reshaped(Shape{1, z_t.dim(0), z_t.dim(1)}));
    return forward(tape, z, {&bundle}).value().reshaped(z_t.shape());
  }

  void visit(const nn::ParamVisitor<T>& f) {
    in_proj_.visit(f);
    f(pos_);
    f(latents_);
    for (auto& b : blocks_) b.visit(f);
    out_ln_.visit(f);
    out_proj_.visit(f);
    datasets_.visit(f);
  }
  auto visitor() {
    return [this](const nn::ParamVisitor<T>& f) { visit(f); };
  }

  std::vector<FitBlock<T>>& blocks() { return blocks_; }
  nn::Linear<T>& out_proj() { return out_proj_; }
  cond::DatasetEmbedding<T>& datasets() { return datasets_; }

 private:
  FitConfig cfg_;
  nn::Linear<T> in_proj_;
  Parameter<T> pos_, latents_;
  std::vector<FitBlock<T>> blocks_;
  nn::LayerNorm<T> out_ln_;
  nn::Linear<T> out_proj_;
  cond::DatasetEmbedding<T> datasets_;
};

}  // namespace genau::fit
