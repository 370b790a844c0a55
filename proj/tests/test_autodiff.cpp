#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "fsr/errors.hpp"
#include "fsr/tape.hpp"
#include "support/oracles.hpp"

namespace fsr {
namespace {

using testing::check_gradients;
using testing::random_matrix;

TEST(Affine, IdentityWeightPassesInput) {
  Tape t;
  const Var y = t.affine(t.constant({{1, 2}}), t.constant({{1, 0}, {0, 1}}), t.constant({{0, 0}}));
  EXPECT_EQ(t.value(y), (Matrix{{1, 2}}));
}

TEST(Affine, ZeroInputPassesBias) {
  Tape t;
  const Var y =
      t.affine(t.constant({{0, 0}}), t.constant({{0.3, -7}, {2, 5}}), t.constant({{3, 4}}));
  EXPECT_EQ(t.value(y), (Matrix{{3, 4}}));
}

TEST(Affine, BiasBroadcastsOverRows) {
  Tape t;
  const Var y = t.affine(t.constant({{1}, {2}, {3}}), t.constant({{2}}), t.constant({{1}}));
  EXPECT_EQ(t.value(y), (Matrix{{3}, {5}, {7}}));
}

TEST(Affine, WeightGradientOfSum) {
  Tape t;
  const Var w = t.parameter({{1, 0}, {0, 1}});
  const Var b = t.parameter({{0, 0}});
  const Var loss = t.sum(t.affine(t.constant({{1, 2}}), w, b));
  t.backward(loss);
  // Central differences, step 1e-5, give [[1,1],[2,2]].
  const Matrix& g = t.grad(w);
  EXPECT_NEAR(g(0, 0), 1.0, 1e-12);
  EXPECT_NEAR(g(0, 1), 1.0, 1e-12);
  EXPECT_NEAR(g(1, 0), 2.0, 1e-12);
  EXPECT_NEAR(g(1, 1), 2.0, 1e-12);
  EXPECT_EQ(t.grad(b), (Matrix{{1, 1}}));
}

TEST(Affine, ShapeMismatchThrows) {
  Tape t;
  const Var x = t.constant(Matrix(2, 3));
  EXPECT_THROW(t.affine(x, t.constant(Matrix(2, 2)), t.constant(Matrix(1, 2))), DimensionError);
  EXPECT_THROW(t.affine(x, t.constant(Matrix(3, 2)), t.constant(Matrix(1, 3))), DimensionError);
  EXPECT_THROW(t.affine(x, t.constant(Matrix(3, 2)), t.constant(Matrix(2, 2))), DimensionError);
}

TEST(Selu, KnownValues) {
  Tape t;
  const Var y = t.selu(t.constant({{0, 1, -1}}));
  EXPECT_EQ(t.value(y)[0], 0.0);
  EXPECT_DOUBLE_EQ(t.value(y)[1], 1.0507009873554805);
  EXPECT_NEAR(t.value(y)[2], kSeluScale * kSeluAlpha * (std::exp(-1.0) - 1.0), 1e-15);
}

TEST(Selu, DerivativeAtMinusOneMatchesFiniteDifference) {
  Tape t;
  const Var x = t.parameter({{-1.0}});
  t.backward(t.sum(t.selu(x)));
  const double numeric = testing::central_difference(
      [](double v) { return kSeluScale * kSeluAlpha * (std::exp(v) - 1.0); }, -1.0);
  EXPECT_NEAR(t.grad(x).item(), numeric, 1e-9);
  EXPECT_NEAR(t.grad(x).item(), 0.6467686, 1e-6);
}

TEST(Softplus, KnownValuesAndStability) {
  Tape t;
  const Var y = t.softplus(t.constant({{0, 50, -50, 800, -800}}));
  EXPECT_NEAR(t.value(y)[0], std::log(2.0), 1e-15);
  EXPECT_NEAR(t.value(y)[1], 50.0, 1e-12);
  EXPECT_NEAR(t.value(y)[2], std::exp(-50.0), 1e-30);
  EXPECT_EQ(t.value(y)[3], 800.0);
  EXPECT_GE(t.value(y)[4], 0.0);
  EXPECT_TRUE(t.value(y).all_finite());
}

TEST(Softplus, DerivativeAtZeroIsOneHalf) {
  Tape t;
  const Var x = t.parameter({{0.0}});
  t.backward(t.sum(t.softplus(x)));
  const double numeric =
      testing::central_difference([](double v) { return std::log1p(std::exp(v)); }, 0.0);
  EXPECT_NEAR(numeric, 0.5, 1e-9);
  EXPECT_NEAR(t.grad(x).item(), 0.5, 1e-15);
}

TEST(Reduce, MeanAndSquareGradient) {
  Tape t;
  EXPECT_DOUBLE_EQ(t.value(t.mean(t.constant({{1}, {2}, {3}}))).item(), 2.0);
  const Var x = t.parameter({{3.0}});
  t.backward(t.sum(t.square(x)));
  EXPECT_DOUBLE_EQ(t.grad(x).item(), 6.0);
}

TEST(Reduce, MeanOfEmptyIsZero) {
  Tape t;
  EXPECT_EQ(t.value(t.mean(t.constant(Matrix(0, 1)))).item(), 0.0);
}

TEST(Elementwise, CompositeMatchesFiniteDifferences) {
  const auto result = check_gradients(
      [](Tape& t, std::span<const Var> v) {
        return t.mean(t.log(t.shift(t.square(v[0]), 1.0)));
      },
      {Matrix{{1.0, 2.0}}}, 1e-5, 1e-6, 0.0);
  EXPECT_EQ(result.failures, 0u) << result.worst;
  // d/dx mean(log(x^2+1)) = x / (x^2+1)
  Tape t;
  const Var x = t.parameter({{1.0, 2.0}});
  t.backward(t.mean(t.log(t.shift(t.square(x), 1.0))));
  EXPECT_NEAR(t.grad(x)[0], 0.5, 1e-15);
  EXPECT_NEAR(t.grad(x)[1], 0.4, 1e-15);
}

TEST(Elementwise, LogOfNonPositiveThrows) {
  Tape t;
  EXPECT_THROW(t.log(t.constant({{1.0, 0.0}})), DomainError);
  EXPECT_THROW(t.log(t.constant({{-2.0}})), DomainError);
}

TEST(Elementwise, BinaryShapeMismatchThrows) {
  Tape t;
  const Var a = t.constant(Matrix(2, 2));
  const Var b = t.constant(Matrix(2, 3));
  EXPECT_THROW(t.add(a, b), DimensionError);
  EXPECT_THROW(t.sub(a, b), DimensionError);
  EXPECT_THROW(t.mul(a, b), DimensionError);
}

TEST(SliceCols, ValuesAndGradient) {
  Tape t;
  const Var x = t.parameter({{1, 2, 3}, {4, 5, 6}});
  const Var s = t.slice_cols(x, 1, 2);
  EXPECT_EQ(t.value(s), (Matrix{{2, 3}, {5, 6}}));
  t.backward(t.sum(s));
  EXPECT_EQ(t.grad(x), (Matrix{{0, 1, 1}, {0, 1, 1}}));
  EXPECT_THROW(t.slice_cols(x, 2, 2), DimensionError);
}

TEST(Backward, SumOfLeafGivesOnes) {
  Tape t;
  const Var x = t.parameter(Matrix(2, 3, 0.7));
  t.backward(t.sum(x));
  EXPECT_EQ(t.grad(x), Matrix(2, 3, 1.0));
}

TEST(Backward, ConstantLossLeavesParametersWithZeroGradient) {
  Tape t;
  const Var p = t.parameter(Matrix(2, 2, 1.0));
  const Var c = t.constant({{4.0}});
  t.backward(c);
  EXPECT_FALSE(t.requires_grad(c));
  EXPECT_EQ(t.grad(p), Matrix(2, 2, 0.0));
}

TEST(Backward, NonScalarLossIsContractError) {
  Tape t;
  const Var x = t.parameter(Matrix(2, 1, 1.0));
  EXPECT_THROW(t.backward(x), ContractError);
}

TEST(Backward, GradBeforeBackwardIsContractError) {
  Tape t;
  const Var x = t.parameter(Matrix(1, 1, 1.0));
  EXPECT_THROW(t.grad(x), ContractError);
}

TEST(Backward, RepeatedCallsGiveIdenticalGradients) {
  std::mt19937_64 rng(3);
  Tape t;
  const Var x = t.parameter(random_matrix(3, 3, rng));
  const Var w = t.parameter(random_matrix(3, 3, rng));
  const Var loss = t.sum(t.mul(t.selu(t.affine(x, w, t.constant(Matrix(1, 3)))), x));
  t.backward(loss);
  const Matrix first_x = t.grad(x);
  const Matrix first_w = t.grad(w);
  t.backward(loss);
  EXPECT_EQ(t.grad(x), first_x);
  EXPECT_EQ(t.grad(w), first_w);
}

TEST(Backward, ParentsPrecedeChildren) {
  Tape t;
  const Var a = t.parameter(Matrix(1, 1, 2.0));
  const Var b = t.exp(a);
  const Var c = t.mul(a, b);
  EXPECT_LT(a.id, b.id);
  EXPECT_LT(b.id, c.id);
  EXPECT_EQ(t.size(), 3u);
}

TEST(Backward, ConstantsStopGradients) {
  Tape t;
  const Var w = t.parameter({{2.0}});
  const Var frozen = t.constant(t.value(t.square(w)));
  const Var loss = t.sum(t.add(t.mul(frozen, w), t.square(w)));
  t.backward(loss);
  // d/dw (c w + w^2) with c held fixed = c + 2w = 4 + 4
  EXPECT_DOUBLE_EQ(t.grad(w).item(), 8.0);
}

TEST(Forward, DeterministicValues) {
  const auto run = [] {
    std::mt19937_64 rng(11);
    Tape t;
    const Var x = t.constant(random_matrix(4, 3, rng));
    const Var w = t.parameter(random_matrix(3, 2, rng));
    return t.value(t.softplus(t.affine(x, w, t.constant(Matrix(1, 2)))));
  };
  EXPECT_EQ(run(), run());
}

// Random graphs of depth <= 4 over 3x3 leaves, every op in the set.
class RandomGraph : public ::testing::TestWithParam<int> {};

TEST_P(RandomGraph, GradientsMatchFiniteDifferences) {
  std::mt19937_64 rng(1000 + GetParam());
  std::vector<Matrix> leaves{random_matrix(3, 3, rng), random_matrix(3, 3, rng),
                             random_matrix(1, 3, rng)};
  const int shape = GetParam() % 4;
  const auto build = [shape](Tape& t, std::span<const Var> v) -> Var {
    switch (shape) {
      case 0:
        return t.sum(t.mul(t.selu(t.affine(v[0], v[1], v[2])), t.exp(t.scale(v[0], 0.3))));
      case 1:
        return t.mean(t.log(t.shift(t.square(t.sub(v[0], v[1])), 0.5)));
      case 2:
        return t.sum(t.negate(t.softplus(t.add(t.affine(v[1], v[0], v[2]), v[1]))));
      default:
        return t.sum(t.slice_cols(t.mul(t.selu(v[0]), t.softplus(t.affine(v[0], v[1], v[2]))),
                                  1, 2));
    }
  };
  const auto result = check_gradients(build, leaves, 1e-5, 1e-5, 1e-7);
  EXPECT_EQ(result.failures, 0u) << result.worst;
  EXPECT_EQ(result.entries, 21u);
}

INSTANTIATE_TEST_SUITE_P(Trials, RandomGraph, ::testing::Range(0, 24));

}  // namespace
}  // namespace fsr
