#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>

#include "deva/gradcheck.hpp"
#include "deva/nn.hpp"
#include "test_support.hpp"

namespace deva {
namespace {

using testing::Gen;
using testing::to_vec;
using TD = Tensor<double>;

TD permute_rows(const TD& x, const std::vector<std::size_t>& perm) {
  // x: [1, L, d]; row i of the result is row perm[i] of x.
  const std::size_t l = x.dim(1), d = x.dim(2);
  std::vector<double> out(l * d);
  for (std::size_t i = 0; i < l; ++i)
    for (std::size_t c = 0; c < d; ++c) out[i * d + c] = x.at(perm[i] * d + c);
  return TD::from({1, l, d}, out);
}

TEST(Linear, Examples) {
  std::mt19937_64 rng(1);
  LinearLayer<double> fc(2, 2, Activation::none, rng);
  fc.set_identity(0.0, rng);
  for (auto& b : fc.bias.mutable_data()) b = 0.0;
  const auto x = TD::from({1, 2}, {1, 2});
  EXPECT_EQ(to_vec(fc.forward(x)), (std::vector<double>{1, 2}));
  for (auto& b : fc.bias.mutable_data()) b = 1.0;
  EXPECT_EQ(to_vec(fc.forward(x)), (std::vector<double>{2, 3}));

  LinearLayer<double> r(2, 2, Activation::relu, rng);
  r.set_identity(0.0, rng);
  for (auto& b : r.bias.mutable_data()) b = 0.0;
  EXPECT_EQ(to_vec(r.forward(TD::from({1, 2}, {-1, 2}))), (std::vector<double>{0, 2}));
  EXPECT_THROW(fc.forward(TD::zeros({1, 3})), ShapeError);
}

TEST(Attention, RejectsWidthNotDivisibleByHeads) {
  std::mt19937_64 rng(1);
  EXPECT_THROW(MultiHeadAttention<double>(30, 4, 0.0, rng), std::invalid_argument);
}

TEST(Attention, SelfAttentionShape) {
  std::mt19937_64 rng(2);
  MultiHeadAttention<double> mha(32, 4, 0.1, rng);
  Gen gen(3);
  const auto x = gen.tensor({8, 32});
  EXPECT_EQ(mha.forward(x, x, RunMode::eval()).shape(), (Shape{8, 32}));
  EXPECT_THROW(mha.forward(x, gen.tensor({1, 8, 32}), RunMode::eval()), ShapeError);
  EXPECT_THROW(mha.forward(x, gen.tensor({8, 16}), RunMode::eval()), ShapeError);
}

TEST(Attention, SingleKeyGivesSameValueEverywhere) {
  std::mt19937_64 rng(4);
  MultiHeadAttention<double> mha(16, 4, 0.0, rng);
  Gen gen(5);
  const auto q = gen.tensor({1, 6, 16});
  const auto kv = gen.tensor({1, 1, 16});
  const auto out = mha.forward(q, kv, RunMode::eval());
  // Oracle: kv W_V W_O.
  const auto expect = matmul(matmul(kv, mha.w_v), mha.w_o);
  for (std::size_t i = 0; i < 6; ++i)
    for (std::size_t c = 0; c < 16; ++c) EXPECT_NEAR(out.at(i * 16 + c), expect.at(c), 1e-12);
}

TEST(Attention, KeyPermutationInvariantQueryEquivariant) {
  std::mt19937_64 rng(6);
  MultiHeadAttention<double> mha(16, 4, 0.0, rng);
  Gen gen(7);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t lq = gen.index(1, 8), lk = gen.index(1, 8);
    const auto q = gen.tensor({1, lq, 16}, 3.0);
    const auto kv = gen.tensor({1, lk, 16}, 3.0);
    const auto out = mha.forward(q, kv, RunMode::eval());

    std::vector<std::size_t> pk(lk), pq(lq);
    std::iota(pk.begin(), pk.end(), 0);
    std::iota(pq.begin(), pq.end(), 0);
    std::shuffle(pk.begin(), pk.end(), gen.engine());
    std::shuffle(pq.begin(), pq.end(), gen.engine());

    const auto out_k = mha.forward(q, permute_rows(kv, pk), RunMode::eval());
    EXPECT_LT(testing::max_abs_diff(to_vec(out), to_vec(out_k)), 1e-6);

    const auto out_q = mha.forward(permute_rows(q, pq), kv, RunMode::eval());
    EXPECT_LT(testing::max_abs_diff(to_vec(permute_rows(out, pq)), to_vec(out_q)), 1e-12);
  }
}

TEST(Attention, WeightRowsAreDistributions) {
  std::mt19937_64 rng(8);
  MultiHeadAttention<double> mha(16, 4, 0.0, rng);
  Gen gen(9);
  const auto q = gen.tensor({2, 5, 16}, 50.0);
  const auto kv = gen.tensor({2, 7, 16}, 50.0);
  std::vector<double> w;
  mha.forward(q, kv, RunMode::eval(), &w);
  ASSERT_EQ(w.size(), 2u * 4 * 5 * 7);
  for (std::size_t row = 0; row < 2 * 4 * 5; ++row) {
    double s = 0;
    for (std::size_t j = 0; j < 7; ++j) {
      EXPECT_GE(w[row * 7 + j], 0.0);
      s += w[row * 7 + j];
    }
    EXPECT_NEAR(s, 1.0, 1e-6);
  }
}

TEST(Attention, TrainingWithoutGeneratorIsRejected) {
  std::mt19937_64 rng(10);
  MultiHeadAttention<double> mha(8, 2, 0.1, rng);
  const auto x = TD::zeros({1, 3, 8});
  EXPECT_THROW(mha.forward(x, x, RunMode{true, nullptr}), std::logic_error);
}

TEST(EncoderLayer, ZeroResidualIsIdentity) {
  std::mt19937_64 rng(11);
  TransformerEncoderLayer<double> layer(16, 4, 4, 0.0, rng);
  layer.zero_residual_branches();
  Gen gen(12);
  const auto x = gen.tensor({2, 8, 16});
  EXPECT_EQ(to_vec(layer.forward(x, RunMode::eval())), to_vec(x));
}

TEST(EncoderLayer, PreservesShape) {
  std::mt19937_64 rng(13);
  TransformerEncoderLayer<double> layer(32, 4, 4, 0.1, rng);
  Gen gen(14);
  std::mt19937_64 drop(1);
  for (std::size_t t : {1u, 8u, 50u}) {
    EXPECT_EQ(layer.forward(gen.tensor({t, 32}), RunMode::eval()).shape(), (Shape{t, 32}));
    EXPECT_EQ(layer.forward(gen.tensor({3, t, 32}), RunMode::train(drop)).shape(), (Shape{3, t, 32}));
  }
}

TEST(EncoderLayer, ParameterNames) {
  std::mt19937_64 rng(15);
  TransformerEncoderLayer<double> layer(8, 2, 4, 0.0, rng);
  ParameterList<double> params;
  layer.collect("enc", params);
  std::vector<std::string> names;
  for (const auto& p : params) names.push_back(p.name);
  EXPECT_NE(std::find(names.begin(), names.end(), "enc.attn.w_q"), names.end());
  EXPECT_NE(std::find(names.begin(), names.end(), "enc.ff1.weight"), names.end());
  EXPECT_EQ(count_elements(params), 4u * 64 + (8 * 32 + 32) + (32 * 8 + 8) + 4 * 8);
}

// Block-level finite-difference checks on random 4x8x16 inputs. A ReLU unit
// whose pre-activation lies within the step of zero has no derivative there,
// so these use h = 1e-6; see the README on step size.
constexpr double kBlockStep = 1e-6;

TEST(BlockGradCheck, Linear) {
  std::mt19937_64 rng(16);
  LinearLayer<double> fc(16, 16, Activation::relu, rng);
  Gen gen(17);
  const auto x = gen.tensor({4, 8, 16});
  ParameterList<double> params;
  fc.collect("fc", params);
  const auto report = grad_check([&] { return sum(fc.forward(x)); }, params, kBlockStep, 1e-3);
  for (const auto& e : report.entries) EXPECT_TRUE(e.passed) << e.name << " " << e.max_rel_error;
}

TEST(BlockGradCheck, CrossAttention) {
  std::mt19937_64 rng(18);
  MultiHeadAttention<double> mha(16, 4, 0.0, rng);
  Gen gen(19);
  const auto q = gen.tensor({4, 8, 16});
  const auto kv = gen.tensor({4, 8, 16});
  const auto target = gen.tensor({4, 8, 16});
  ParameterList<double> params;
  mha.collect("attn", params);
  const auto report = grad_check(
      [&] { return sum(mul(mha.forward(q, kv, RunMode::eval()), target)); }, params, 1e-4, 1e-3);
  for (const auto& e : report.entries) EXPECT_TRUE(e.passed) << e.name << " " << e.max_rel_error;
}

TEST(BlockGradCheck, EncoderLayer) {
  std::mt19937_64 rng(20);
  TransformerEncoderLayer<double> layer(16, 4, 4, 0.0, rng);
  Gen gen(21);
  const auto x = gen.tensor({4, 8, 16});
  ParameterList<double> params;
  layer.collect("enc", params);
  const auto report =
      grad_check([&] { return sum(layer.forward(x, RunMode::eval())); }, params, kBlockStep, 1e-3);
  for (const auto& e : report.entries) EXPECT_TRUE(e.passed) << e.name << " " << e.max_rel_error;
}

}  // namespace
}  // namespace deva
