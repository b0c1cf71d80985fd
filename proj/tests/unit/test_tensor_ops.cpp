#include <cmath>
#include <limits>

#include <gtest/gtest.h>

#include "jamba/errors.hpp"
#include "jamba/ops.hpp"
#include "jamba/tensor.hpp"
#include "test_util.hpp"

using namespace jamba;
using jamba::testing::expect_gradients;
using jamba::testing::probe_sum;
using jamba::testing::random_param;

TEST(Tensor, FactoriesAndShape) {
  auto t = Tensor::full({2, 3}, 1.5);
  EXPECT_EQ(t.rank(), 2u);
  EXPECT_EQ(t.numel(), 6u);
  EXPECT_EQ(t.size(-1), 3u);
  EXPECT_EQ(t.size(0), 2u);
  for (double v : t.data()) EXPECT_EQ(v, 1.5);
  EXPECT_EQ(Tensor::scalar(4.0).item(), 4.0);
  EXPECT_EQ(shape_str({2, 3}), "[2, 3]");
  EXPECT_THROW(Tensor::from_vector({2, 2}, {1, 2, 3}), Error);
}

TEST(Tensor, Real32RoundsEveryResult) {
  auto a = Tensor::from_vector({1}, {0.1}, DType::kReal32);
  EXPECT_EQ(a.data()[0], static_cast<double>(0.1f));
  auto b = scale(a, 3.0);
  EXPECT_EQ(b.dtype(), DType::kReal32);
  EXPECT_EQ(b.data()[0], static_cast<double>(static_cast<float>(static_cast<double>(0.1f) * 3.0)));
  auto c = add(b, Tensor::from_vector({1}, {1e-12}));
  EXPECT_EQ(c.dtype(), DType::kReal64);
}

TEST(Tensor, NonFiniteResultsRaise) {
  auto a = Tensor::from_vector({1}, {800.0});
  try {
    exp(a);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kNonFinite);
  }
}

TEST(Tensor, NoGradGuardDropsRecord) {
  Rng rng(1);
  auto w = random_param(rng, {3});
  {
    NoGradGuard guard;
    auto y = sum(mul(w, w));
    EXPECT_FALSE(y.requires_grad());
  }
  auto y = sum(mul(w, w));
  EXPECT_TRUE(y.requires_grad());
  backward(y);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_DOUBLE_EQ(w.grad()[i], 2 * w.data()[i]);
}

TEST(Tensor, GradientsAccumulateAcrossReuse) {
  auto x = Tensor::parameter({1}, {3.0});
  backward(add(mul(x, x), scale(x, 2.0)));
  EXPECT_DOUBLE_EQ(x.grad()[0], 8.0);
  x.zero_grad();
  backward(sum(x));
  EXPECT_DOUBLE_EQ(x.grad()[0], 1.0);
}

TEST(Ops, MatmulMatchesLoops) {
  Rng rng(2);
  auto a = jamba::testing::random_tensor(rng, {2, 3, 4});
  auto b = jamba::testing::random_tensor(rng, {4, 5});
  auto c = matmul(a, b);
  ASSERT_EQ(c.shape(), (Shape{2, 3, 5}));
  for (std::size_t r = 0; r < 6; ++r)
    for (std::size_t j = 0; j < 5; ++j) {
      double s = 0;
      for (std::size_t k = 0; k < 4; ++k) s += a.data()[r * 4 + k] * b.data()[k * 5 + j];
      EXPECT_NEAR(c.data()[r * 5 + j], s, 1e-13);
    }
  auto bt = jamba::testing::random_tensor(rng, {5, 4});
  auto d = matmul_nt(a, bt);
  for (std::size_t r = 0; r < 6; ++r)
    for (std::size_t j = 0; j < 5; ++j) {
      double s = 0;
      for (std::size_t k = 0; k < 4; ++k) s += a.data()[r * 4 + k] * bt.data()[j * 4 + k];
      EXPECT_NEAR(d.data()[r * 5 + j], s, 1e-13);
    }
  EXPECT_THROW(matmul(a, bt), Error);
}

TEST(Ops, SoftmaxRowsSumToOne) {
  Rng rng(3);
  auto a = jamba::testing::random_tensor(rng, {4, 7}, 10.0);
  auto s = softmax(a);
  for (std::size_t r = 0; r < 4; ++r) {
    double z = 0;
    for (std::size_t j = 0; j < 7; ++j) z += s.data()[r * 7 + j];
    EXPECT_NEAR(z, 1.0, 1e-14);
  }
}

TEST(Ops, RmsNormMatchesFormula) {
  Rng rng(4);
  auto x = jamba::testing::random_tensor(rng, {3, 6});
  auto g = jamba::testing::random_tensor(rng, {6});
  auto y = rmsnorm(x, g, 1e-6);
  for (std::size_t r = 0; r < 3; ++r) {
    double ms = 0;
    for (std::size_t j = 0; j < 6; ++j) ms += x.data()[r * 6 + j] * x.data()[r * 6 + j];
    const double inv = 1.0 / std::sqrt(ms / 6 + 1e-6);
    for (std::size_t j = 0; j < 6; ++j) EXPECT_NEAR(y.data()[r * 6 + j], x.data()[r * 6 + j] * inv * g.data()[j], 1e-14);
  }
}

TEST(Ops, CrossEntropyMatchesLogSumExp) {
  auto logits = Tensor::from_vector({2, 3}, {1, 2, 3, 0, 0, 5});
  const std::int32_t t[] = {2, 1};
  const std::uint8_t m[] = {1, 1};
  const double l0 = std::log(std::exp(1.0) + std::exp(2.0) + std::exp(3.0)) - 3.0;
  const double l1 = std::log(2.0 + std::exp(5.0)) - 0.0;
  EXPECT_NEAR(cross_entropy(logits, t, m).item(), (l0 + l1) / 2, 1e-14);
  const std::uint8_t m1[] = {0, 1};
  EXPECT_NEAR(cross_entropy(logits, t, m1).item(), l1, 1e-14);
  const std::uint8_t none[] = {0, 0};
  EXPECT_EQ(cross_entropy(logits, t, none).item(), 0.0);
  const std::int32_t bad[] = {3, 0};
  EXPECT_THROW(cross_entropy(logits, bad, m), Error);
}

TEST(Ops, BroadcastAddAndErrors) {
  auto a = Tensor::from_vector({2, 2}, {1, 2, 3, 4});
  auto b = Tensor::from_vector({2}, {10, 20});
  auto c = add(a, b);
  EXPECT_EQ(c.data()[3], 24.0);
  EXPECT_THROW(add(a, Tensor::zeros({3})), Error);
}

TEST(Ops, EmbeddingRejectsOutOfVocab) {
  auto table = Tensor::zeros({4, 2});
  const std::int32_t ids[] = {0, 4};
  try {
    embedding(table, ids, {2});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kVocabOverflow);
  }
}

TEST(OpsGrad, Elementwise) {
  Rng rng(5);
  auto a = random_param(rng, {2, 3});
  auto b = random_param(rng, {3});
  expect_gradients([&] { return probe_sum(add(mul(a, b), sub(a, b))); }, {a, b});
  expect_gradients([&] { return probe_sum(silu(a)); }, {a});
  expect_gradients([&] { return probe_sum(sigmoid(a)); }, {a});
  expect_gradients([&] { return probe_sum(softplus(a)); }, {a});
  expect_gradients([&] { return probe_sum(exp(a)); }, {a});
  expect_gradients([&] { return scale(mean(a), 3.0); }, {a});
}

TEST(OpsGrad, MatmulSoftmaxNorm) {
  Rng rng(6);
  auto a = random_param(rng, {2, 2, 3});
  auto b = random_param(rng, {3, 4});
  auto bt = random_param(rng, {4, 3});
  auto g = random_param(rng, {4});
  expect_gradients([&] { return probe_sum(softmax(matmul(a, b))); }, {a, b});
  expect_gradients([&] { return probe_sum(matmul_nt(a, bt)); }, {a, bt});
  expect_gradients([&] { return probe_sum(rmsnorm(matmul(a, b), g)); }, {a, b, g});
  expect_gradients([&] { return probe_sum(mean_rows(matmul(a, b))); }, {a, b});
}

TEST(OpsGrad, IndexingOps) {
  Rng rng(7);
  auto table = random_param(rng, {5, 3});
  const std::int32_t ids[] = {4, 1, 1, 0};
  expect_gradients([&] { return probe_sum(embedding(table, ids, {2, 2})); }, {table});
  auto x = random_param(rng, {4, 3});
  const std::size_t rows[] = {3, 0, 3};
  expect_gradients([&] { return probe_sum(gather_rows(x, rows)); }, {x});
  auto src = random_param(rng, {3, 3});
  expect_gradients([&] { return probe_sum(scatter_add_rows(src, rows, 5)); }, {src});
  auto s = random_param(rng, {4});
  const std::size_t els[] = {0, 5, 11};
  expect_gradients([&] { return probe_sum(scale_rows(x, s)); }, {x, s});
  expect_gradients([&] { return probe_sum(gather_elements(x, els)); }, {x});
  expect_gradients([&] { return probe_sum(slice_last(reshape(x, {2, 6}), 1, 4)); }, {x});
}

TEST(OpsGrad, CrossEntropyMaskedPositionsGetZeroGradient) {
  Rng rng(8);
  auto logits = random_param(rng, {4, 5});
  const std::int32_t t[] = {1, 0, 4, 2};
  const std::uint8_t m[] = {1, 0, 1, 0};
  expect_gradients([&] { return cross_entropy(logits, t, m); }, {logits});
  logits.zero_grad();
  backward(cross_entropy(logits, t, m));
  for (std::size_t j = 0; j < 5; ++j) {
    EXPECT_EQ(logits.grad()[5 + j], 0.0);
    EXPECT_EQ(logits.grad()[15 + j], 0.0);
  }
}
