#include <gtest/gtest.h>

#include <cmath>

#include "dtq/errors.hpp"
#include "gradcheck.hpp"
#include "op_catalog.hpp"

using namespace dtq;
using namespace dtq::testing;

namespace {

Tensor make(Shape shape, std::vector<double> data, bool grad = false) {
  return Tensor(std::move(shape), std::move(data), grad);
}

}  // namespace

TEST(Tensor, SharesBufferUntilCloned) {
  Tensor a = make({2}, {1, 2});
  Tensor b = a;
  EXPECT_TRUE(a.same_buffer(b));
  Tensor c = a.clone();
  c.mutable_data()[0] = 9;
  EXPECT_EQ(a.data()[0], 1);
  b.mutable_data()[1] = 7;
  EXPECT_EQ(a.data()[1], 7);
}

TEST(Tensor, RejectsSizeMismatch) { EXPECT_THROW(make({2, 2}, {1, 2, 3}), DimensionError); }

TEST(Ops, MatmulExample) {
  Tensor c = ops::matmul(make({2, 2}, {1, 2, 3, 4}), make({2, 2}, {5, 6, 7, 8}));
  EXPECT_EQ(std::vector<double>(c.data().begin(), c.data().end()), (std::vector<double>{19, 22, 43, 50}));
}

TEST(Ops, MatmulShapeMismatchThrows) {
  EXPECT_THROW(ops::matmul(make({2, 3}, std::vector<double>(6)), make({2, 2}, std::vector<double>(4))),
               DimensionError);
}

TEST(Ops, LayerNormOfTwoValues) {
  Tensor y = ops::layer_norm(make({1, 2}, {1, 3}), Tensor::full({2}, 1.0), Tensor::zeros({2}), 0.0);
  EXPECT_NEAR(y.data()[0], -1.0, 1e-12);
  EXPECT_NEAR(y.data()[1], 1.0, 1e-12);
}

TEST(Ops, LayerNormEmptyAxisThrows) {
  EXPECT_THROW(ops::layer_norm(make({2, 0}, {}), Tensor::zeros({0}), Tensor::zeros({0}), 1e-5), DimensionError);
}

TEST(Ops, GeluKnownValues) {
  Tensor y = ops::gelu(make({3}, {0.0, 1.0, -1.0}));
  EXPECT_EQ(y.data()[0], 0.0);
  const double c = std::sqrt(2.0 / M_PI);
  const double at1 = 0.5 * (1.0 + std::tanh(c * (1.0 + 0.044715)));
  EXPECT_NEAR(y.data()[1], at1, 1e-15);
  EXPECT_NEAR(y.data()[1], 0.8411919906, 1e-9);
  EXPECT_NEAR(y.data()[2], -(1.0 - at1), 1e-15);
}

TEST(Ops, AttentionWithEqualScoresIsUniformOverPrefix) {
  const std::size_t L = 5;
  Tensor q = Tensor::zeros({1, 1, L, 2});
  Tensor k = Tensor::zeros({1, 1, L, 2});
  const auto w = ops::attention_weights(q, k, PadMask(1, L));
  for (std::size_t i = 0; i < L; ++i) {
    for (std::size_t j = 0; j < L; ++j) {
      const double expect = j <= i ? 1.0 / static_cast<double>(i + 1) : 0.0;
      EXPECT_NEAR(w[i * L + j], expect, 1e-15) << i << "," << j;
    }
  }
}

TEST(Ops, AttentionIgnoresPaddedKeys) {
  std::mt19937_64 rng(4);
  Tensor q = random_tensor({1, 1, 4, 3}, rng);
  Tensor k = random_tensor({1, 1, 4, 3}, rng);
  PadMask mask(1, 4);
  mask.set(0, 0, true);
  const auto w = ops::attention_weights(q, k, mask);
  for (std::size_t i = 1; i < 4; ++i) EXPECT_EQ(w[i * 4 + 0], 0.0);
  // The padded query sees no key and falls back to itself.
  EXPECT_EQ(w[0], 1.0);
}

TEST(Autograd, SumOfSquaresGradient) {
  Tape tape;
  Tensor x = make({2}, {1, 2}, true);
  tape.watch(x);
  Tensor loss = ops::sum(ops::mul(x, x));
  Gradients g = tape.backward(loss);
  Tensor gx = g.of(x);
  EXPECT_EQ(gx.data()[0], 2.0);
  EXPECT_EQ(gx.data()[1], 4.0);
}

TEST(Autograd, NonScalarBackwardThrows) {
  Tape tape;
  Tensor x = make({2}, {1, 2}, true);
  tape.watch(x);
  Tensor y = ops::mul(x, x);
  EXPECT_THROW(tape.backward(y), ContractError);
}

TEST(Autograd, NothingRecordedWithoutTape) {
  Tensor x = make({2}, {1, 2}, true);
  Tensor y = ops::mul(x, x);
  EXPECT_FALSE(y.node().has_value());
}

TEST(Autograd, ReusedInputAccumulates) {
  Tape tape;
  Tensor x = make({1}, {3}, true);
  tape.watch(x);
  Tensor y = ops::sum(ops::add(ops::mul(x, x), ops::scale(x, 2.0)));
  EXPECT_DOUBLE_EQ(tape.backward(y).of(x).data()[0], 8.0);
}

TEST(Autograd, UnreachedLeafGetsZeros) {
  Tape tape;
  Tensor x = make({2}, {1, 2}, true);
  Tensor z = make({3}, {1, 2, 3}, true);
  tape.watch(x);
  tape.watch(z);
  Gradients g = tape.backward(ops::sum(x));
  EXPECT_FALSE(g.reached(z));
  const Tensor gz = g.of(z);
  for (double v : gz.data()) EXPECT_EQ(v, 0.0);
}

class OpGradcheck : public ::testing::TestWithParam<std::size_t> {};

TEST_P(OpGradcheck, RandomInstances) {
  const auto cases = op_catalog();
  const OpCase& op = cases[GetParam()];
  std::mt19937_64 rng(1000 + GetParam());
  for (int i = 0; i < 20; ++i) {
    OpInstance inst = op.make(rng);
    EXPECT_LT(gradcheck(inst.f, inst.inputs), 1e-5) << op.name << " instance " << i;
  }
}

INSTANTIATE_TEST_SUITE_P(AllOps, OpGradcheck, ::testing::Range<std::size_t>(0, op_catalog().size()),
                         [](const ::testing::TestParamInfo<std::size_t>& info) {
                           return op_catalog()[info.param].name;
                         });
