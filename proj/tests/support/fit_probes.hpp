#pragma once

// Probes shared by the FIT unit tests and the acceptance suite.

#include <cmath>
#include <vector>

#include "genau/conditioning/conditioning.hpp"
#include "genau/core/flops.hpp"
#include "genau/fit/fit.hpp"

namespace genau::testing {

inline fit::FitConfig miniature_fit(std::size_t d = 8, std::size_t blocks = 2) {
  fit::FitConfig c;
  c.latent_channels = 3;
  c.patch_size = 1;
  c.group_size = 4;
  c.n_latent = 3;
  c.n_blocks = blocks;
  c.local_layers = 1;
  c.global_layers = 1;
  c.d_patch = d;
  c.d_latent = d;
  c.heads = 2;
  c.ff_mult = 2;
  c.dropout = 0.0;
  c.cond_width = 6;
  c.n_dataset_ids = 3;
  c.max_patches = 64;
  return c;
}

inline cond::ConditioningBundle random_bundle(std::size_t width, std::size_t tokens, std::size_t t, std::size_t ds,
                                              Rng& rng) {
  cond::ConditioningBundle b;
  b.text.seq = rng.normal_tensor<float>(Shape{tokens, width});
  b.text.global = rng.normal_tensor<float>(Shape{1, width});
  b.t_embed = cond::timestep_embedding(double(t), width);
  b.dataset_index = ds;
  return b;
}

// Gives the zero-initialized output head random weights so outputs depend on
// the input.
template <class T>
void randomize_head(fit::Fit<T>& model, Rng& rng) {
  auto& w = model.out_proj().weight().value;
  w = rng.normal_tensor<T>(w.shape(), 1.0 / std::sqrt(double(w.dim(0))));
}

// Zeroes the value and output projections of every write layer, so latents
// can no longer reach the patches.
template <class T>
void disable_writes(fit::Fit<T>& model) {
  for (auto& b : model.blocks()) {
    auto& a = b.write().attention();
    a.value_proj().weight().value.fill(T(0));
    a.value_proj().bias().value.fill(T(0));
    a.out_proj().weight().value.fill(T(0));
    a.out_proj().bias().value.fill(T(0));
  }
}

template <class T>
struct ForwardProbe {
  Tensor<T> before_write;  // [1, G*g, d_patch]
  Tensor<T> output;        // [1, c, L]
};

template <class T>
ForwardProbe<T> probe_forward(fit::Fit<T>& model, const Tensor<T>& z, const cond::ConditioningBundle& b) {
  Tape<T> tape;
  fit::FitTrace<T> trace;
  Var<T> out = model.forward(tape, tape.constant(z), {&b}, {}, &trace);
  return {trace.before_first_write->value(), out.value()};
}

// Largest absolute change inside token range [lo, hi) of a [1, N, d] tensor.
template <class T>
double token_change(const Tensor<T>& a, const Tensor<T>& b, std::size_t lo, std::size_t hi) {
  const std::size_t d = a.dim(2);
  double m = 0;
  for (std::size_t i = lo * d; i < hi * d; ++i) m = std::max(m, std::abs(double(a[i]) - double(b[i])));
  return m;
}

// Largest absolute change over time steps [lo, hi) of a [1, c, L] tensor.
template <class T>
double step_change(const Tensor<T>& a, const Tensor<T>& b, std::size_t lo, std::size_t hi) {
  const std::size_t c = a.dim(1), l = a.dim(2);
  double m = 0;
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t t = lo; t < hi; ++t) m = std::max(m, std::abs(double(a[ch * l + t]) - double(b[ch * l + t])));
  return m;
}

// Coefficient of determination of the least-squares line through (x, y).
inline double linear_r2(const std::vector<double>& x, const std::vector<double>& y) {
  const double n = double(x.size());
  double sx = 0, sy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) sx += x[i], sy += y[i];
  const double mx = sx / n, my = sy / n;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  const double slope = sxy / sxx, icpt = my - slope * mx;
  double ss_res = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double r = y[i] - (slope * x[i] + icpt);
    ss_res += r * r;
  }
  return 1.0 - ss_res / syy;
}

// Forward FLOPs of one sample with `n_patches` tokens (patch size 1).
template <class T>
double forward_flops(fit::Fit<T>& model, std::size_t n_patches, Rng& rng) {
  const auto& c = model.config();
  Tensor<T> z = rng.normal_tensor<T>(Shape{1, c.latent_channels, n_patches * c.patch_size});
  const auto b = random_bundle(c.cond_width, 5, 10, 0, rng);
  flops::FlopScope scope;
  Tape<T> tape;
  model.forward(tape, tape.constant(z), {&b});
  return double(scope.count());
}

// Plain-loop multi-head attention from the layer's weights, used as the
// full-attention oracle.
inline Tensor<double> oracle_attention(nn::MultiHeadAttention<double>& mha, const Tensor<double>& x) {
  std::vector<Parameter<double>*> ps;
  mha.visit([&](Parameter<double>& p) { ps.push_back(&p); });
  // q.w q.b k.w k.b v.w v.b o.w o.b
  const std::size_t n = x.dim(0), d = x.dim(1), da = ps[0]->value.dim(1), h = mha.heads(), dh = da / h;
  auto proj = [&](const Tensor<double>& in, std::size_t wi) {
    const auto& w = ps[wi]->value;
    const auto& bias = ps[wi + 1]->value;
    Tensor<double> out(Shape{in.dim(0), w.dim(1)});
    for (std::size_t i = 0; i < in.dim(0); ++i)
      for (std::size_t j = 0; j < w.dim(1); ++j) {
        double s = bias[j];
        for (std::size_t k = 0; k < in.dim(1); ++k) s += in.at(i, k) * w.at(k, j);
        out.at(i, j) = s;
      }
    return out;
  };
  const auto q = proj(x, 0), k = proj(x, 2), v = proj(x, 4);
  Tensor<double> mixed(Shape{n, da});
  for (std::size_t hd = 0; hd < h; ++hd)
    for (std::size_t i = 0; i < n; ++i) {
      std::vector<double> s(n);
      double mx = -1e300;
      for (std::size_t j = 0; j < n; ++j) {
        double acc = 0;
        for (std::size_t e = 0; e < dh; ++e) acc += q.at(i, hd * dh + e) * k.at(j, hd * dh + e);
        s[j] = acc / std::sqrt(double(dh));
        mx = std::max(mx, s[j]);
      }
      double z = 0;
      for (auto& e : s) z += (e = std::exp(e - mx));
      for (std::size_t e = 0; e < dh; ++e) {
        double acc = 0;
        for (std::size_t j = 0; j < n; ++j) acc += s[j] / z * v.at(j, hd * dh + e);
        mixed.at(i, hd * dh + e) = acc;
      }
    }
  (void)d;
  return proj(mixed, 6);
}

}  // namespace genau::testing
