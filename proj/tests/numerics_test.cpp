// Copyright (c) 2026, coopgen contributors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "coopgen/errors.hpp"
#include "coopgen/numerics.hpp"
#include "coopgen/rng.hpp"

using namespace coopgen;

namespace {

Matrix random_matrix(std::size_t r, std::size_t c, Rng& rng) {
  Matrix m(r, c);
  for (double& v : m.values()) v = 2.0 * uniform_unit(rng) - 1.0;
  return m;
}

// Textbook triple loop, kept independent of the kernels under test.
Matrix naive_product(const Matrix& a, const Matrix& b) {
  Matrix out(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < b.cols(); ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < a.cols(); ++k) s += a(i, k) * b(k, j);
      out(i, j) = s;
    }
  return out;
}

}  // namespace

TEST(Matmul, IdentityLeavesMatrixUnchanged) {
  const Matrix m(2, 2, {1, 2, 3, 4});
  EXPECT_EQ(matmul(Matrix::identity(2), m), m);
}

TEST(Matmul, ZeroAnnihilates) {
  const Matrix m(2, 2, {1, 2, 3, 4});
  EXPECT_EQ(matmul(Matrix(2, 2), m), Matrix(2, 2));
}

TEST(Matmul, HandComputedProduct) {
  const Matrix out = matmul(Matrix(2, 2, {1, 2, 3, 4}), Matrix(2, 1, {5, 6}));
  EXPECT_EQ(out, Matrix(2, 1, {17, 39}));
}

TEST(Matmul, MatchesNaiveLoop) {
  Rng rng(3);
  const Matrix a = random_matrix(7, 5, rng), b = random_matrix(5, 9, rng);
  const Matrix fast = matmul(a, b), slow = naive_product(a, b);
  for (std::size_t i = 0; i < fast.size(); ++i) EXPECT_NEAR(fast.values()[i], slow.values()[i], 1e-12);
}

TEST(Matmul, ShapeMismatchThrows) {
  EXPECT_THROW(matmul(Matrix(2, 3), Matrix(2, 3)), DimensionError);
  EXPECT_THROW(Matrix(2, 2, std::vector<double>{1.0}), DimensionError);
}

TEST(Matmul, AssociativityOnRandomChains) {
  Rng rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t n1 = 1 + uniform_index(rng, 6), n2 = 1 + uniform_index(rng, 6),
                      n3 = 1 + uniform_index(rng, 6), n4 = 1 + uniform_index(rng, 6);
    const Matrix a = random_matrix(n1, n2, rng), b = random_matrix(n2, n3, rng), c = random_matrix(n3, n4, rng);
    const Matrix left = matmul(matmul(a, b), c), right = matmul(a, matmul(b, c));
    for (std::size_t i = 0; i < left.size(); ++i) {
      const double scale = std::max(1.0, std::abs(right.values()[i]));
      EXPECT_LE(std::abs(left.values()[i] - right.values()[i]) / scale, 1e-6);
    }
  }
}

TEST(Kernels, TransposedVariantsAgreeWithExplicitTranspose) {
  Rng rng(5);
  const Matrix a = random_matrix(4, 3, rng), b = random_matrix(6, 3, rng);
  Matrix bt(3, 6);
  for (std::size_t i = 0; i < 6; ++i)
    for (std::size_t j = 0; j < 3; ++j) bt(j, i) = b(i, j);
  Matrix nt(4, 6);
  kernels::gemm_nt(a.values(), b.values(), nt.values(), 4, 3, 6);
  const Matrix ref = naive_product(a, bt);
  for (std::size_t i = 0; i < nt.size(); ++i) EXPECT_NEAR(nt.values()[i], ref.values()[i], 1e-12);

  const Matrix c = random_matrix(4, 6, rng);
  Matrix at(3, 4);
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 3; ++j) at(j, i) = a(i, j);
  Matrix tn(3, 6);
  kernels::gemm_tn_acc(a.values(), c.values(), tn.values(), 4, 3, 6);
  const Matrix ref2 = naive_product(at, c);
  for (std::size_t i = 0; i < tn.size(); ++i) EXPECT_NEAR(tn.values()[i], ref2.values()[i], 1e-12);
}

TEST(Softmax, SymmetricInputIsUniform) {
  const auto p = softmax(std::vector<double>{0.0, 0.0});
  EXPECT_DOUBLE_EQ(p[0], 0.5);
  EXPECT_DOUBLE_EQ(p[1], 0.5);
}

TEST(Softmax, ClosedFormLogTwo) {
  const auto p = softmax(std::vector<double>{std::log(2.0), 0.0});
  EXPECT_NEAR(p[0], 2.0 / 3.0, 1e-15);
  EXPECT_NEAR(p[1], 1.0 / 3.0, 1e-15);
}

TEST(Softmax, TemperatureHalfMatchesReference) {
  // exp(2)/(exp(2)+1), evaluated at 30 digits with mpmath.
  const auto p = softmax(std::vector<double>{1.0, 0.0}, 0.5);
  EXPECT_NEAR(p[0], 0.880797077977882444, 1e-15);
  EXPECT_NEAR(p[1], 0.119202922022117556, 1e-15);
}

TEST(Softmax, TemperatureEquivalentToScaledLogits) {
  const std::vector<double> v{0.3, -1.2, 2.5, 0.0};
  const auto a = softmax(v, 0.7);
  std::vector<double> scaled(v);
  for (double& x : scaled) x /= 0.7;
  const auto b = softmax(scaled, 1.0);
  for (std::size_t i = 0; i < v.size(); ++i) EXPECT_NEAR(a[i], b[i], 1e-15);
}

TEST(Softmax, NonPositiveTemperatureThrows) {
  EXPECT_THROW(softmax(std::vector<double>{1.0}, 0.0), ParameterError);
  EXPECT_THROW(softmax(std::vector<double>{1.0}, -1.0), ParameterError);
}

TEST(Softmax, RandomInputsAreDistributions) {
  Rng rng(17);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> v(1 + uniform_index(rng, 50));
    for (double& x : v) x = 40.0 * (uniform_unit(rng) - 0.5);
    const auto p = softmax(v, 0.1 + 3.0 * uniform_unit(rng));
    double total = 0.0;
    for (double x : p) {
      EXPECT_GE(x, 0.0);
      EXPECT_LE(x, 1.0);
      total += x;
    }
    EXPECT_NEAR(total, 1.0, 1e-9);
  }
}

TEST(CrossEntropy, UniformOverFourClasses) {
  const std::vector<double> logits(4, 0.7);
  for (std::size_t t = 0; t < 4; ++t) EXPECT_NEAR(cross_entropy(logits, t), std::log(4.0), 1e-15);
}

TEST(CrossEntropy, NearCertainTarget) {
  EXPECT_NEAR(cross_entropy(std::vector<double>{1000.0, 0.0}, 0), 0.0, 1e-300);
}

TEST(CrossEntropy, MatchesReference) {
  EXPECT_NEAR(cross_entropy(std::vector<double>{0.3, -0.2, 1.1}, 2), 0.543405541616029382, 1e-14);
}

TEST(CrossEntropy, OutOfRangeTargetThrows) {
  EXPECT_THROW(cross_entropy(std::vector<double>{0.0, 1.0}, 2), IndexError);
}

TEST(LogSumExp, StableForLargeValues) {
  const std::vector<double> v{1000.0, 1000.0};
  EXPECT_NEAR(log_sum_exp(v), 1000.0 + std::log(2.0), 1e-12);
  const auto ls = log_softmax(v);
  EXPECT_NEAR(ls[0], -std::log(2.0), 1e-15);
}

TEST(Gelu, DerivativeMatchesFiniteDifference) {
  for (double x : {-3.0, -0.5, 0.0, 0.2, 1.7}) {
    const double h = 1e-6;
    EXPECT_NEAR(gelu_derivative(x), (gelu(x + h) - gelu(x - h)) / (2 * h), 1e-8);
  }
}

TEST(AdamW, ZeroGradientWithoutDecayIsFixedPoint) {
  std::vector<double> p{0.3, -1.0, 2.0};
  const std::vector<double> g(3, 0.0);
  auto state = OptimizerState::for_parameters(3, 1e-3, 0.0);
  adamw_step(p, g, state);
  EXPECT_EQ(p, (std::vector<double>{0.3, -1.0, 2.0}));
  EXPECT_EQ(state.step_count, 1u);
}

TEST(AdamW, ZeroGradientAppliesDecoupledDecay) {
  std::vector<double> p{0.3, -1.0, 2.0};
  const std::vector<double> g(3, 0.0);
  auto state = OptimizerState::for_parameters(3, 0.01, 0.1);
  adamw_step(p, g, state);
  EXPECT_DOUBLE_EQ(p[0], 0.3 * (1 - 0.01 * 0.1));
  EXPECT_DOUBLE_EQ(p[1], -1.0 * (1 - 0.01 * 0.1));
  EXPECT_DOUBLE_EQ(p[2], 2.0 * (1 - 0.01 * 0.1));
}

TEST(AdamW, ScalarStepsMatchReferenceFormula) {
  // p=0.5, lr=1e-3, wd=0.01, defaults for betas/eps; gradients 1 then -0.5.
  std::vector<double> p{0.5};
  auto state = OptimizerState::for_parameters(1, 1e-3, 0.01);
  adamw_step(p, std::vector<double>{1.0}, state);
  EXPECT_NEAR(p[0], 0.49899500000999999990, 1e-15);
  adamw_step(p, std::vector<double>{-0.5}, state);
  EXPECT_NEAR(p[0], 0.49872367302370892967, 1e-15);
  EXPECT_EQ(state.step_count, 2u);
}

TEST(AdamW, ShapeMismatchThrows) {
  std::vector<double> p(2);
  auto state = OptimizerState::for_parameters(3, 1e-3, 0.0);
  EXPECT_THROW(adamw_step(p, std::vector<double>(2), state), DimensionError);
}
