#pragma once

// Small parameterized building blocks shared by the VAE and the FIT denoiser.

#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "genau/core/autograd.hpp"
#include "genau/core/ops.hpp"
#include "genau/core/random.hpp"

namespace genau::nn {

template <class T>
using ParamVisitor = std::function<void(Parameter<T>&)>;

// Training-time context threaded through forward passes.
struct ForwardContext {
  bool training = false;
  Rng* rng = nullptr;  // required when training with dropout > 0
};

template <class T>
Var<T> dropout(const Var<T>& x, double p, const ForwardContext& ctx) {
  if (!ctx.training || p <= 0.0) return x;
  if (!ctx.rng) throw ContractError("numeric-core", "dropout in training mode needs an rng");
  Tensor<T> mask(x.shape());
  const T keep = static_cast<T>(1.0 / (1.0 - p));
  for (auto& m : mask.vec()) m = ctx.rng->uniform() < p ? T(0) : keep;
  return ops::mul(x, x.tape().constant(std::move(mask)));
}

template <class T>
class Linear {
 public:
  Linear() = default;
  // Weights ~ N(0, 1/in) unless zero_init.
  Linear(const std::string& name, std::size_t in, std::size_t out, Rng& rng, bool zero_init = false, bool bias = true)
      : weight_(name + ".weight", zero_init ? Tensor<T>(Shape{in, out})
                                            : rng.normal_tensor<T>(Shape{in, out}, 1.0 / std::sqrt(double(in)))),
        has_bias_(bias) {
    if (bias) bias_ = Parameter<T>(name + ".bias", Tensor<T>(Shape{out}));
  }

  Var<T> operator()(Tape<T>& tape, const Var<T>& x) {
    Var<T> y = ops::matmul(x, tape.param(weight_));
    return has_bias_ ? ops::add(y, tape.param(bias_)) : y;
  }

  void visit(const ParamVisitor<T>& f) {
    f(weight_);
    if (has_bias_) f(bias_);
  }

  Parameter<T>& weight() { return weight_; }
  Parameter<T>& bias() { return bias_; }
  std::size_t in_features() const { return weight_.value.dim(0); }
  std::size_t out_features() const { return weight_.value.dim(1); }

 private:
  Parameter<T> weight_;
  Parameter<T> bias_;
  bool has_bias_ = true;
};

template <class T>
class LayerNorm {
 public:
  LayerNorm() = default;
  LayerNorm(const std::string& name, std::size_t d)
      : gain_(name + ".gain", Tensor<T>::ones(Shape{d})), bias_(name + ".bias", Tensor<T>(Shape{d})) {}

  Var<T> operator()(Tape<T>& tape, const Var<T>& x) {
    return ops::layer_norm(x, tape.param(gain_), tape.param(bias_));
  }
  void visit(const ParamVisitor<T>& f) {
    f(gain_);
    f(bias_);
  }

 private:
  Parameter<T> gain_, bias_;
};

template <class T>
class FeedForward {
 public:
  FeedForward() = default;
  FeedForward(const std::string& name, std::size_t d, std::size_t hidden, Rng& rng)
      : up_(name + ".up", d, hidden, rng), down_(name + ".down", hidden, d, rng) {}

  Var<T> operator()(Tape<T>& tape, const Var<T>& x) { return down_(tape, ops::gelu(up_(tape, x))); }
  void visit(const ParamVisitor<T>& f) {
    up_.visit(f);
    down_.visit(f);
  }

 private:
  Linear<T> up_, down_;
};

// 1D convolution, weight [C_out, C_in, K], init N(0, gain^2 / (C_in K)).
template <class T>
class Conv1d {
 public:
  Conv1d() = default;
  Conv1d(const std::string& name, std::size_t c_in, std::size_t c_out, std::size_t kernel, std::size_t stride,
         std::size_t padding, Rng& rng, double gain = 1.0)
      : weight_(name + ".weight",
                rng.normal_tensor<T>(Shape{c_out, c_in, kernel}, gain / std::sqrt(double(c_in * kernel)))),
        bias_(name + ".bias", Tensor<T>(Shape{c_out})),
        stride_(stride),
        padding_(padding) {}

  Var<T> operator()(Tape<T>& tape, const Var<T>& x) {
    Var<T> b = tape.param(bias_);
    return ops::conv1d(x, tape.param(weight_), &b, stride_, padding_);
  }
  void visit(const ParamVisitor<T>& f) {
    f(weight_);
    f(bias_);
  }
  Parameter<T>& weight() { return weight_; }
  Parameter<T>& bias() { return bias_; }

 private:
  Parameter<T> weight_, bias_;
  std::size_t stride_ = 1, padding_ = 0;
};

// Additive attention mask: 0 where attending is allowed, -inf where masked.
template <class T>
constexpr T kMasked = -std::numeric_limits<T>::infinity();

// Multi-head scaled dot-product attention with separate query and key/value
// sources. Inputs may carry leading batch dims: q [..., Nq, d_q],
// kv [..., Nk, d_kv]. The mask broadcasts against [..., H, Nq, Nk].
template <class T>
class MultiHeadAttention {
 public:
  MultiHeadAttention() = default;
  MultiHeadAttention(const std::string& name, std::size_t d_query, std::size_t d_kv, std::size_t d_attn,
                     std::size_t heads, Rng& rng)
      : q_(name + ".q", d_query, d_attn, rng),
        k_(name + ".k", d_kv, d_attn, rng),
        v_(name + ".v", d_kv, d_attn, rng),
        o_(name + ".o", d_attn, d_query, rng),
        heads_(heads) {
    if (heads == 0 || d_attn % heads != 0)
      throw ConfigError(name + ": attention width " + std::to_string(d_attn) + " not divisible by heads " +
                        std::to_string(heads));
  }

  struct Result {
    Var<T> output;
    Var<T> weights;  // [..., H, Nq, Nk]
  };

  Result attend(Tape<T>& tape, const Var<T>& query, const Var<T>& kv, const std::optional<Var<T>>& mask = std::nullopt) {
    Var<T> q = split_heads(q_(tape, query));
    Var<T> k = split_heads(k_(tape, kv));
    Var<T> v = split_heads(v_(tape, kv));
    const std::size_t dh = q.shape().back();
    Var<T> scores = ops::scale(ops::matmul(q, ops::transpose(k)), T(1) / std::sqrt(static_cast<T>(dh)));
    if (mask) scores = ops::add(scores, *mask);
    Var<T> w = ops::softmax(scores, -1);
    Var<T> out = merge_heads(ops::matmul(w, v));
    return {o_(tape, out), w};
  }

  Var<T> operator()(Tape<T>& tape, const Var<T>& query, const Var<T>& kv,
                    const std::optional<Var<T>>& mask = std::nullopt) {
    return attend(tape, query, kv, mask).output;
  }

  void visit(const ParamVisitor<T>& f) {
    q_.visit(f);
    k_.visit(f);
    v_.visit(f);
    o_.visit(f);
  }

  Linear<T>& value_proj() { return v_; }
  Linear<T>& out_proj() { return o_; }
  std::size_t heads() const { return heads_; }

 private:
  // [..., N, H*dh] -> [..., H, N, dh]
  Var<T> split_heads(const Var<T>& x) const {
    Shape s = x.shape();
    const std::size_t d = s.back();
    Shape r(s.begin(), s.end() - 1);
    r.push_back(heads_);
    r.push_back(d / heads_);
    Var<T> y = ops::reshape(x, r);
    std::vector<std::size_t> axes(r.size());
    for (std::size_t i = 0; i < axes.size(); ++i) axes[i] = i;
    const std::size_t rk = r.size();
    std::swap(axes[rk - 3], axes[rk - 2]);
    return ops::permute(y, axes);
  }

  // [..., H, N, dh] -> [..., N, H*dh]
  Var<T> merge_heads(const Var<T>& x) const {
    const Shape& s = x.shape();
    const std::size_t rk = s.size();
    std::vector<std::size_t> axes(rk);
    for (std::size_t i = 0; i < rk; ++i) axes[i] = i;
    std::swap(axes[rk - 3], axes[rk - 2]);
    Var<T> y = ops::permute(x, axes);
    Shape r(s.begin(), s.end() - 3);
    r.push_back(s[rk - 2]);
    r.push_back(s[rk - 3] * s[rk - 1]);
    return ops::reshape(y, r);
  }

  Linear<T> q_, k_, v_, o_;
  std::size_t heads_ = 1;
};

template <class T>
std::size_t parameter_count(const std::function<void(const ParamVisitor<T>&)>& visit_all) {
  std::size_t n = 0;
  visit_all([&](Parameter<T>& p) { n += p.value.size(); });
  return n;
}

}  // namespace genau::nn
