#pragma once

// One gradient-check case per differentiable op. Inputs are drawn away from
// kinks (abs, clamp) and outside invalid domains (log).

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "genau/core/nn.hpp"
#include "genau/core/ops.hpp"
#include "genau/core/random.hpp"
#include "support/gradcheck.hpp"

namespace genau::testing {

struct OpCase {
  std::string name;
  std::function<std::vector<Tensor<double>>(Rng&)> inputs;
  ScalarFn fn;
};

// Weighted sum so every output element carries a distinct upstream gradient.
inline Var<double> weighted_sum(const Var<double>& y) {
  Rng rng(1234);
  Tensor<double> w = rng.normal_tensor<double>(y.shape());
  return ops::sum(ops::mul(y, y.tape().constant(std::move(w))));
}

inline Tensor<double> away_from_zero(Rng& rng, Shape s, double min_abs = 0.1) {
  Tensor<double> t = rng.normal_tensor<double>(std::move(s));
  for (auto& v : t.vec())
    if (std::abs(v) < min_abs) v = v < 0 ? v - min_abs : v + min_abs;
  return t;
}

inline std::vector<OpCase> op_cases() {
  using V = Var<double>;
  using Vs = std::vector<V>;
  auto normal = [](Shape s) { return [s](Rng& r) { return std::vector<Tensor<double>>{r.normal_tensor<double>(s)}; }; };
  auto normal2 = [](Shape a, Shape b) {
    return [a, b](Rng& r) { return std::vector<Tensor<double>>{r.normal_tensor<double>(a), r.normal_tensor<double>(b)}; };
  };
  std::vector<OpCase> cases;
  cases.push_back({"add_broadcast", normal2({3, 4, 5}, {4, 1}), [](Tape<double>&, const Vs& v) { return weighted_sum(ops::add(v[0], v[1])); }});
  cases.push_back({"sub_broadcast", normal2({2, 5}, {5}), [](Tape<double>&, const Vs& v) { return weighted_sum(ops::sub(v[0], v[1])); }});
  cases.push_back({"mul_broadcast", normal2({3, 1, 5}, {4, 5}), [](Tape<double>&, const Vs& v) { return weighted_sum(ops::mul(v[0], v[1])); }});
  cases.push_back({"scale", normal({4, 3}), [](Tape<double>&, const Vs& v) { return weighted_sum(ops::scale(v[0], 2.5)); }});
  cases.push_back({"add_scalar", normal({4, 3}), [](Tape<double>&, const Vs& v) { return weighted_sum(ops::add_scalar(v[0], -0.7)); }});
  cases.push_back({"gelu", normal({6, 5}), [](Tape<double>&, const Vs& v) { return weighted_sum(ops::gelu(v[0])); }});
  cases.push_back({"silu", normal({6, 5}), [](Tape<double>&, const Vs& v) { return weighted_sum(ops::silu(v[0])); }});
  cases.push_back({"tanh", normal({6, 5}), [](Tape<double>&, const Vs& v) { return weighted_sum(ops::tanh(v[0])); }});
  cases.push_back({"exp", normal({6, 5}), [](Tape<double>&, const Vs& v) { return weighted_sum(ops::exp(v[0])); }});
  cases.push_back({"log",
                   [](Rng& r) {
                     auto t = r.uniform_tensor<double>({5, 4}, 0.2, 3.0);
                     return std::vector<Tensor<double>>{t};
                   },
                   [](Tape<double>&, const Vs& v) { return weighted_sum(ops::log(v[0])); }});
  cases.push_back({"abs", [](Rng& r) { return std::vector<Tensor<double>>{away_from_zero(r, {5, 4})}; },
                   [](Tape<double>&, const Vs& v) { return weighted_sum(ops::abs(v[0])); }});
  cases.push_back({"square", normal({5, 4}), [](Tape<double>&, const Vs& v) { return weighted_sum(ops::square(v[0])); }});
  cases.push_back({"clamp",
                   [](Rng& r) {
                     auto t = r.uniform_tensor<double>({5, 4}, -3.0, 3.0);
                     for (auto& x : t.vec())
                       if (std::abs(std::abs(x) - 1.5) < 0.05) x += 0.2;
                     return std::vector<Tensor<double>>{t};
                   },
                   [](Tape<double>&, const Vs& v) { return weighted_sum(ops::clamp(v[0], -1.5, 1.5)); }});
  cases.push_back({"sum", normal({3, 4}), [](Tape<double>&, const Vs& v) { return ops::scale(ops::sum(v[0]), 0.3); }});
  cases.push_back({"mean", normal({3, 4}), [](Tape<double>&, const Vs& v) { return ops::square(ops::mean(v[0])); }});
  cases.push_back({"reshape", normal({3, 4}), [](Tape<double>&, const Vs& v) { return weighted_sum(ops::reshape(v[0], {2, 6})); }});
  cases.push_back({"transpose", normal({2, 3, 4}), [](Tape<double>&, const Vs& v) { return weighted_sum(ops::transpose(v[0])); }});
  cases.push_back({"permute", normal({2, 3, 4, 2}), [](Tape<double>&, const Vs& v) { return weighted_sum(ops::permute(v[0], {2, 0, 3, 1})); }});
  cases.push_back({"slice", normal({4, 6}), [](Tape<double>&, const Vs& v) { return weighted_sum(ops::slice(v[0], 1, 2, 5)); }});
  cases.push_back({"concat", normal2({2, 3}, {2, 5}), [](Tape<double>&, const Vs& v) { return weighted_sum(ops::concat(Vs{v[0], v[1], v[0]}, 1)); }});
  cases.push_back({"upsample_nearest", normal({3, 4}), [](Tape<double>&, const Vs& v) { return weighted_sum(ops::upsample_nearest(v[0], 2)); }});
  cases.push_back({"matmul", normal2({5, 7}, {7, 3}), [](Tape<double>&, const Vs& v) { return weighted_sum(ops::matmul(v[0], v[1])); }});
  cases.push_back({"matmul_batched_broadcast", normal2({2, 3, 4}, {4, 5}),
                   [](Tape<double>&, const Vs& v) { return weighted_sum(ops::matmul(v[0], v[1])); }});
  cases.push_back({"matmul_batch_both", normal2({2, 1, 3, 4}, {3, 4, 2}),
                   [](Tape<double>&, const Vs& v) { return weighted_sum(ops::matmul(v[0], v[1])); }});
  cases.push_back({"softmax_last", normal({4, 6}), [](Tape<double>&, const Vs& v) { return weighted_sum(ops::softmax(v[0], -1)); }});
  cases.push_back({"softmax_axis0", normal({4, 3, 2}), [](Tape<double>&, const Vs& v) { return weighted_sum(ops::softmax(v[0], 0)); }});
  cases.push_back({"softmax_masked",
                   normal({3, 5}),
                   [](Tape<double>& t, const Vs& v) {
                     Tensor<double> mask({1, 5});
                     mask[3] = nn::kMasked<double>;
                     return weighted_sum(ops::softmax(ops::add(v[0], t.constant(mask)), -1));
                   }});
  cases.push_back({"layer_norm",
                   [](Rng& r) {
                     return std::vector<Tensor<double>>{r.normal_tensor<double>({4, 6}), r.normal_tensor<double>({6}),
                                                        r.normal_tensor<double>({6})};
                   },
                   [](Tape<double>&, const Vs& v) { return weighted_sum(ops::layer_norm(v[0], v[1], v[2])); }});
  cases.push_back({"conv1d_stride1_pad1", normal2({3, 9}, {4, 3, 3}),
                   [](Tape<double>&, const Vs& v) { return weighted_sum(ops::conv1d(v[0], v[1], 1, 1)); }});
  cases.push_back({"conv1d_stride2_bias",
                   [](Rng& r) {
                     return std::vector<Tensor<double>>{r.normal_tensor<double>({2, 3, 10}), r.normal_tensor<double>({4, 3, 4}),
                                                        r.normal_tensor<double>({4})};
                   },
                   [](Tape<double>&, const Vs& v) { return weighted_sum(ops::conv1d(v[0], v[1], &v[2], 2, 1)); }});
  cases.push_back({"l1_loss",
                   [](Rng& r) {
                     auto a = r.normal_tensor<double>({3, 4});
                     auto b = a;
                     auto d = away_from_zero(r, {3, 4});
                     for (std::size_t i = 0; i < b.size(); ++i) b[i] += d[i];
                     return std::vector<Tensor<double>>{a, b};
                   },
                   [](Tape<double>&, const Vs& v) { return ops::l1_loss(v[0], v[1]); }});
  cases.push_back({"mse_loss", normal2({3, 4}, {3, 4}), [](Tape<double>&, const Vs& v) { return ops::mse_loss(v[0], v[1]); }});
  return cases;
}

}  // namespace genau::testing
