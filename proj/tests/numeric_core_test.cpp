#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>

#include "genau/core/autograd.hpp"
#include "genau/core/checkpoint.hpp"
#include "genau/core/flops.hpp"
#include "genau/core/nn.hpp"
#include "genau/core/ops.hpp"
#include "support/gradcheck.hpp"
#include "support/op_cases.hpp"

namespace genau {
namespace {

using TensorD = Tensor<double>;
using VarD = Var<double>;

TEST(Matmul, IdentityReturnsOperand) {
  Tape<double> tape;
  Rng rng(1);
  TensorD eye({3, 3});
  for (int i = 0; i < 3; ++i) eye.at(i, i) = 1;
  TensorD x = rng.normal_tensor<double>({3, 3});
  VarD y = ops::matmul(tape.constant(eye), tape.constant(x));
  EXPECT_EQ(y.value(), x);
}

TEST(Matmul, HandArithmetic) {
  Tape<double> tape;
  VarD y = ops::matmul(tape.constant(TensorD::from_rows({{1, 2}, {3, 4}})), tape.constant(TensorD::from_rows({{0}, {1}})));
  EXPECT_EQ(y.value(), TensorD::from_rows({{2}, {4}}));
}

TEST(Matmul, GradientOfSumIsRowSumsOfB) {
  Rng rng(7);
  TensorD a = rng.normal_tensor<double>({5, 7});
  TensorD b = rng.normal_tensor<double>({7, 3});
  Tape<double> tape;
  VarD va = tape.input(a);
  VarD vb = tape.input(b);
  tape.backward(ops::sum(ops::matmul(va, vb)));
  TensorD ga = tape.grad(va);
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t k = 0; k < 7; ++k) {
      double row_sum = b.at(k, 0) + b.at(k, 1) + b.at(k, 2);
      EXPECT_NEAR(ga.at(i, k), row_sum, 1e-12);
    }
  auto r = testing::gradcheck([](Tape<double>&, const std::vector<VarD>& v) { return ops::sum(ops::matmul(v[0], v[1])); },
                              {a, b});
  EXPECT_LT(r.max_rel_err, 1e-6) << r.worst;
}

TEST(Matmul, ShapeMismatchNamesBothShapes) {
  Tape<double> tape;
  try {
    ops::matmul(tape.constant(TensorD({2, 3})), tape.constant(TensorD({4, 2})));
    FAIL() << "expected DimensionError";
  } catch (const DimensionError& e) {
    std::string msg = e.what();
    EXPECT_NE(msg.find("[2, 3]"), std::string::npos);
    EXPECT_NE(msg.find("[4, 2]"), std::string::npos);
  }
}

TEST(Softmax, UniformRow) {
  Tape<double> tape;
  VarD y = ops::softmax(tape.constant(TensorD({1, 4}, 0.37)));
  for (double v : y.value().vec()) EXPECT_DOUBLE_EQ(v, 0.25);
}

TEST(Softmax, ClosedForm) {
  Tape<double> tape;
  VarD y = ops::softmax(tape.constant(TensorD({1, 2}, {0.0, std::log(2.0)})));
  EXPECT_NEAR(y.value()[0], 1.0 / 3.0, 1e-15);
  EXPECT_NEAR(y.value()[1], 2.0 / 3.0, 1e-15);
}

TEST(Softmax, ShiftInvariantAndNormalized) {
  Rng rng(3);
  for (int trial = 0; trial < 10; ++trial) {
    TensorD x = rng.normal_tensor<double>({6, 9}, 5.0);
    TensorD shifted = x;
    for (auto& v : shifted.vec()) v += 123.25;
    Tape<double> tape;
    const TensorD& a = ops::softmax(tape.constant(x)).value();
    const TensorD& b = ops::softmax(tape.constant(shifted)).value();
    EXPECT_LT(max_abs_diff(a, b), 1e-14);
    for (std::size_t r = 0; r < 6; ++r) {
      double s = 0;
      for (std::size_t c = 0; c < 9; ++c) {
        EXPECT_GT(a.at(r, c), 0.0);
        EXPECT_LE(a.at(r, c), 1.0);
        s += a.at(r, c);
      }
      EXPECT_NEAR(s, 1.0, 1e-12);
    }
  }
}

TEST(Softmax, FullyMaskedRowIsZero) {
  Tape<double> tape;
  TensorD x({2, 3}, {nn::kMasked<double>, nn::kMasked<double>, nn::kMasked<double>, 0, 0, nn::kMasked<double>});
  const TensorD& y = ops::softmax(tape.constant(x)).value();
  EXPECT_EQ(y[0], 0.0);
  EXPECT_EQ(y[1], 0.0);
  EXPECT_EQ(y[2], 0.0);
  EXPECT_DOUBLE_EQ(y[3], 0.5);
  EXPECT_EQ(y[5], 0.0);
}

TEST(LayerNorm, ConstantRowGivesZeros) {
  Tape<double> tape;
  VarD y = ops::layer_norm(tape.constant(TensorD({1, 5}, 4.2)), tape.constant(TensorD::ones({5})), tape.constant(TensorD({5})));
  for (double v : y.value().vec()) EXPECT_EQ(v, 0.0);
}

TEST(LayerNorm, OneTwoThree) {
  Tape<double> tape;
  VarD y = ops::layer_norm(tape.constant(TensorD({1, 3}, {1, 2, 3})), tape.constant(TensorD::ones({3})), tape.constant(TensorD({3})));
  EXPECT_NEAR(y.value()[0], -1.2247, 1e-3);
  EXPECT_NEAR(y.value()[1], 0.0, 1e-12);
  EXPECT_NEAR(y.value()[2], 1.2247, 1e-3);
}

TEST(LayerNorm, RowsAreStandardizedBeforeAffine) {
  Rng rng(11);
  TensorD x = rng.normal_tensor<double>({8, 16}, 3.0);
  Tape<double> tape;
  const TensorD& y = ops::layer_norm(tape.constant(x), tape.constant(TensorD::ones({16})), tape.constant(TensorD({16}))).value();
  for (std::size_t r = 0; r < 8; ++r) {
    double mu = 0, var_x = 0, mu_x = 0;
    for (std::size_t c = 0; c < 16; ++c) mu += y.at(r, c), mu_x += x.at(r, c);
    mu /= 16, mu_x /= 16;
    for (std::size_t c = 0; c < 16; ++c) var_x += (x.at(r, c) - mu_x) * (x.at(r, c) - mu_x);
    var_x /= 16;
    double var = 0;
    for (std::size_t c = 0; c < 16; ++c) var += (y.at(r, c) - mu) * (y.at(r, c) - mu);
    var /= 16;
    EXPECT_NEAR(mu, 0.0, 1e-10);
    // eps enters the denominator, so the normalized variance is var/(var+eps).
    EXPECT_NEAR(var, var_x / (var_x + ops::kLayerNormEps), 1e-10);
  }
  // Rows with large spread are unit-variance to 1e-10.
  TensorD wide = rng.normal_tensor<double>({4, 32}, 1e4);
  const TensorD& z = ops::layer_norm(tape.constant(wide), tape.constant(TensorD::ones({32})), tape.constant(TensorD({32}))).value();
  for (std::size_t r = 0; r < 4; ++r) {
    double var = 0;
    for (std::size_t c = 0; c < 32; ++c) var += z.at(r, c) * z.at(r, c);
    EXPECT_NEAR(var / 32, 1.0, 1e-10);
  }
}

// Naive sliding-window oracle, independent of the library kernel.
TensorD naive_conv1d(const TensorD& x, const TensorD& w, std::size_t stride, std::size_t pad) {
  const std::size_t cin = x.dim(0), len = x.dim(1), cout = w.dim(0), k = w.dim(2);
  const std::size_t lout = (len + 2 * pad - k) / stride + 1;
  TensorD out({cout, lout});
  for (std::size_t co = 0; co < cout; ++co)
    for (std::size_t t = 0; t < lout; ++t) {
      double acc = 0;
      for (std::size_t ci = 0; ci < cin; ++ci)
        for (std::size_t kk = 0; kk < k; ++kk) {
          long pos = static_cast<long>(t * stride + kk) - static_cast<long>(pad);
          if (pos < 0 || pos >= static_cast<long>(len)) continue;
          acc += w[(co * cin + ci) * k + kk] * x[ci * len + pos];
        }
      out.at(co, t) = acc;
    }
  return out;
}

TEST(Conv1d, UnitKernelIsIdentity) {
  Tape<double> tape;
  TensorD x({1, 5}, {1, -2, 3, 4.5, 0});
  VarD y = ops::conv1d(tape.constant(x), tape.constant(TensorD({1, 1, 1}, 1.0)));
  EXPECT_EQ(y.value(), x);
}

TEST(Conv1d, HandArithmetic) {
  Tape<double> tape;
  VarD y = ops::conv1d(tape.constant(TensorD({1, 4}, {1, 2, 3, 4})), tape.constant(TensorD({1, 1, 2}, 1.0)));
  EXPECT_EQ(y.value(), TensorD({1, 3}, {3, 5, 7}));
}

TEST(Conv1d, MatchesNaiveOracleBitForBit) {
  Rng rng(5);
  for (int trial = 0; trial < 40; ++trial) {
    std::size_t cin = 1 + rng.index(4), cout = 1 + rng.index(4), k = 1 + rng.index(5), stride = 1 + rng.index(3);
    std::size_t pad = rng.index(3), len = k + rng.index(12);
    TensorD x = rng.normal_tensor<double>({cin, len});
    TensorD w = rng.normal_tensor<double>({cout, cin, k});
    Tape<double> tape;
    VarD y = ops::conv1d(tape.constant(x), tape.constant(w), stride, pad);
    TensorD expect = naive_conv1d(x, w, stride, pad);
    ASSERT_EQ(y.shape(), expect.shape());
    EXPECT_EQ(y.value(), expect) << "trial " << trial;
    EXPECT_EQ(y.dim(1), (len + 2 * pad - k) / stride + 1);
  }
}

TEST(Conv1d, KernelLargerThanPaddedInputThrows) {
  Tape<double> tape;
  EXPECT_THROW(ops::conv1d(tape.constant(TensorD({1, 3})), tape.constant(TensorD({1, 1, 6})), 1, 1), DimensionError);
}

TEST(Elementwise, GeluValues) {
  EXPECT_EQ(ops::gelu_value(0.0), 0.0);
  const double expect = 0.5 * 3 * (1 + std::tanh(std::sqrt(2 / M_PI) * (3 + 0.044715 * 27)));
  EXPECT_NEAR(ops::gelu_value(3.0), expect, 1e-15);
  EXPECT_NEAR(ops::gelu_value(3.0), 2.9964, 1e-4);
}

TEST(Backward, SumGivesOnes) {
  Tape<double> tape;
  VarD x = tape.input(TensorD({2, 3}, 1.5));
  tape.backward(ops::sum(x));
  EXPECT_EQ(tape.grad(x), TensorD::ones({2, 3}));
}

TEST(Backward, SumOfSquaresGivesTwoX) {
  Rng rng(2);
  TensorD xv = rng.normal_tensor<double>({4});
  Tape<double> tape;
  VarD x = tape.input(xv);
  tape.backward(ops::sum(ops::mul(x, x)));
  TensorD g = tape.grad(x);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_DOUBLE_EQ(g[i], 2 * xv[i]);
}

TEST(Backward, NonScalarLossIsContractError) {
  Tape<double> tape;
  VarD x = tape.input(TensorD({2, 2}, 1.0));
  EXPECT_THROW(tape.backward(ops::scale(x, 2.0)), ContractError);
}

TEST(Backward, SecondCallDoublesLeafGradients) {
  Parameter<double> p("p", TensorD({3}, {1, 2, 3}));
  Tape<double> tape;
  VarD loss = ops::sum(ops::square(tape.param(p)));
  tape.backward(loss);
  TensorD once = p.grad;
  tape.backward(loss);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_DOUBLE_EQ(p.grad[i], 2 * once[i]);
}

TEST(Backward, FanOutAccumulates) {
  Tape<double> tape;
  VarD x = tape.input(TensorD({2}, {1.0, -2.0}));
  VarD y = ops::add(ops::scale(x, 3.0), ops::mul(x, x));
  tape.backward(ops::sum(y));
  TensorD g = tape.grad(x);
  EXPECT_DOUBLE_EQ(g[0], 3 + 2 * 1.0);
  EXPECT_DOUBLE_EQ(g[1], 3 - 4.0);
}

TEST(GradientSuite, EveryOpMatchesFiniteDifferences) {
  for (const auto& c : testing::op_cases()) {
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
      Rng rng(100 + seed);
      auto r = testing::gradcheck(c.fn, c.inputs(rng));
      EXPECT_LT(r.max_rel_err, 1e-5) << c.name << " seed " << seed << " at " << r.worst;
    }
  }
}

TEST(GradientSuite, AttentionMatchesFiniteDifferences) {
  Rng init(9);
  nn::MultiHeadAttention<double> attn("attn", 6, 4, 8, 2, init);
  std::vector<Parameter<double>*> params;
  attn.visit([&](Parameter<double>& p) { params.push_back(&p); });
  Rng data(10);
  TensorD q = data.normal_tensor<double>({2, 5, 6});
  TensorD kv = data.normal_tensor<double>({2, 3, 4});
  auto r = testing::gradcheck_parameters(
      [&](Tape<double>& t) { return testing::weighted_sum(attn(t, t.constant(q), t.constant(kv))); }, params);
  EXPECT_LT(r.max_rel_err, 1e-5) << r.worst;
}

TEST(Determinism, SameSeedSameBits) {
  auto run = [] {
    Rng rng(77);
    nn::MultiHeadAttention<float> attn("a", 8, 8, 8, 2, rng);
    Tape<float> tape;
    Tensor<float> x = rng.normal_tensor<float>({10, 8});
    return attn(tape, tape.constant(x), tape.constant(x)).value();
  };
  EXPECT_EQ(run(), run());
}

TEST(Flops, MatmulCountsTwoMNK) {
  flops::FlopScope scope;
  Tape<double> tape;
  ops::matmul(tape.constant(TensorD({4, 5})), tape.constant(TensorD({5, 6})));
  EXPECT_EQ(scope.count(), 2u * 4 * 5 * 6);
}

TEST(Checkpoint, RoundTripAndHeader) {
  checkpoint::Checkpoint ck;
  ck.meta = {{"kind", "test"}};
  Rng rng(4);
  ck.add("a", rng.normal_tensor<float>({2, 3}));
  ck.add("b", rng.normal_tensor<float>({5}));
  const std::string bytes = checkpoint::serialize(ck);
  auto back = checkpoint::deserialize(bytes);
  EXPECT_EQ(back.meta["kind"], "test");
  EXPECT_EQ(back.at("a"), ck.at("a"));
  EXPECT_EQ(back.at("b"), ck.at("b"));
  // Header table carries name/dtype/shape/byte_offset.
  std::uint64_t len = 0;
  for (int i = 0; i < 8; ++i) len |= std::uint64_t(static_cast<unsigned char>(bytes[8 + i])) << (8 * i);
  auto header = nlohmann::json::parse(bytes.substr(16, len));
  EXPECT_EQ(header["tensors"][1]["byte_offset"], 24);
  EXPECT_EQ(header["tensors"][1]["dtype"], "float32");
  EXPECT_EQ(bytes.size(), 16 + len + 4 * (6 + 5));
  // Little-endian float32: 1.0f is 00 00 80 3f.
  checkpoint::Checkpoint one;
  one.add("x", Tensor<float>({1}, {1.0f}));
  std::string ob = checkpoint::serialize(one);
  EXPECT_EQ(ob.substr(ob.size() - 4), std::string("\x00\x00\x80\x3f", 4));
}

TEST(Checkpoint, ShapeMismatchFailsLoudly) {
  checkpoint::Checkpoint ck;
  ck.add("w.weight", Tensor<float>({3, 3}));
  ck.add("w.bias", Tensor<float>({3}));
  Rng rng(1);
  nn::Linear<float> lin("w", 3, 4, rng);
  EXPECT_THROW(checkpoint::load_parameters<float>(ck, [&](auto&& f) { lin.visit(f); }), FormatError);
  EXPECT_THROW(checkpoint::deserialize("not a checkpoint at all"), FormatError);
}

}  // namespace
}  // namespace genau
