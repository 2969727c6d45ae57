// Copyright 2026 The lssl Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "lssl/linalg.hpp"

#include <gtest/gtest.h>

#include <cmath>

namespace lssl {
namespace {

Matrix naive_matmul(const Matrix& a, const Matrix& b) {
  Matrix c = Matrix::Zero(a.rows(), b.cols());
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    for (Eigen::Index j = 0; j < b.cols(); ++j)
      for (Eigen::Index k = 0; k < a.cols(); ++k) c(i, j) += a(i, k) * b(k, j);
  return c;
}

TEST(Matmul, IdentityLeavesMatrixUnchanged) {
  Rng rng(1);
  Matrix m = gaussian_matrix(3, 3, rng);
  EXPECT_EQ(matmul(Matrix::Identity(3, 3), m), m);
}

TEST(Matmul, HandExample) {
  Matrix a(2, 2), b(2, 1);
  a << 1, 2, 3, 4;
  b << 1, 1;
  Matrix c = matmul(a, b);
  EXPECT_DOUBLE_EQ(c(0, 0), 3.0);
  EXPECT_DOUBLE_EQ(c(1, 0), 7.0);
}

TEST(Matmul, MatchesTripleLoop) {
  Rng rng(2);
  Matrix a = gaussian_matrix(8, 8, rng), b = gaussian_matrix(8, 8, rng);
  EXPECT_LT((matmul(a, b) - naive_matmul(a, b)).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Matmul, DimensionMismatchThrows) {
  EXPECT_THROW(matmul(Matrix::Zero(2, 3), Matrix::Zero(2, 3)), ConfigError);
}

TEST(OrthonormalInit, OneByOne) {
  Rng rng(3);
  Matrix q = orthonormal_init(1, rng);
  EXPECT_DOUBLE_EQ(std::abs(q(0, 0)), 1.0);
}

TEST(OrthonormalInit, LargeIsOrthonormal) {
  Rng rng(4);
  Matrix q = orthonormal_init(128, rng);
  EXPECT_LT((q.transpose() * q - Matrix::Identity(128, 128)).norm(), 1e-10);
}

TEST(OrthonormalInit, SameSeedIsBitIdentical) {
  Rng a(5), b(5);
  EXPECT_EQ(orthonormal_init(16, a), orthonormal_init(16, b));
}

TEST(OrthonormalInit, PropertyAcrossSizesAndSeeds) {
  for (int n : {2, 3, 7, 31, 64}) {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      Rng rng(seed);
      Matrix q = orthonormal_init(n, rng);
      EXPECT_LT((q.transpose() * q - Matrix::Identity(n, n)).norm(), 1e-10) << n << " " << seed;
    }
  }
}

TEST(SemiOrthonormalInit, SquareCaseIsOrthonormal) {
  Rng rng(6);
  Matrix w = semi_orthonormal_init(10, 10, rng);
  EXPECT_LT((w.transpose() * w - Matrix::Identity(10, 10)).norm(), 1e-10);
}

TEST(SemiOrthonormalInit, WideRowsOrthonormal) {
  Rng rng(7);
  Matrix w = semi_orthonormal_init(2, 4, rng);
  EXPECT_LT((w * w.transpose() - Matrix::Identity(2, 2)).norm(), 1e-10);
}

TEST(SemiOrthonormalInit, TallRejected) {
  Rng rng(8);
  EXPECT_THROW(semi_orthonormal_init(5, 3, rng), ConfigError);
}

TEST(UniformInit, WithinFanInBound) {
  Rng rng(9);
  Matrix w = uniform_init(50, 25, rng);
  EXPECT_LE(w.cwiseAbs().maxCoeff(), 1.0 / 5.0);
}

TEST(UniformInit, MonteCarloMean) {
  Rng rng(10);
  const int n = 100;
  Matrix w = uniform_init(10000, n, rng);  // 1e6 samples
  const double bound = 1.0 / std::sqrt(double(n));
  const double std_err = bound / std::sqrt(3.0) / std::sqrt(double(w.size()));
  EXPECT_LT(std::abs(w.mean()), 3.0 * std_err);
}

TEST(UniformInit, Deterministic) {
  Rng a(11), b(11);
  EXPECT_EQ(uniform_init(4, 6, a), uniform_init(4, 6, b));
}

TEST(CosineSimilarity, BasicCases) {
  Rng rng(12);
  Matrix m = gaussian_matrix(3, 4, rng);
  EXPECT_NEAR(*cosine_similarity(m, m), 1.0, 1e-15);
  EXPECT_NEAR(*cosine_similarity(m, -m), -1.0, 1e-15);
  Matrix a(1, 2), b(1, 2);
  a << 1, 0;
  b << 0, 1;
  EXPECT_DOUBLE_EQ(*cosine_similarity(a, b), 0.0);
}

TEST(CosineSimilarity, ZeroNormIsUndefined) {
  EXPECT_FALSE(cosine_similarity(Matrix::Zero(2, 2), Matrix::Ones(2, 2)).has_value());
}

TEST(CosineSimilarity, ShapeMismatchThrows) {
  EXPECT_THROW(cosine_similarity(Matrix::Ones(2, 2), Matrix::Ones(4, 1)), ConfigError);
}

TEST(CosineSimilarity, SymmetricScaleInvariantBounded) {
  Rng rng(13);
  for (int trial = 0; trial < 200; ++trial) {
    Matrix a = gaussian_matrix(1 + trial % 5, 1 + trial % 7, rng);
    Matrix b = gaussian_matrix(a.rows(), a.cols(), rng);
    const double alpha = std::exp(rng.uniform(-5.0, 5.0));
    const double ab = *cosine_similarity(a, b);
    EXPECT_NEAR(ab, *cosine_similarity(b, a), 1e-14);
    EXPECT_NEAR(ab, *cosine_similarity(alpha * a, b), 1e-12);
    EXPECT_LE(std::abs(ab), 1.0);
  }
}

TEST(ConvexMinimize, QuadraticBowl) {
  Rng rng(14);
  auto res = convex_minimize([](const Matrix& x) { return Matrix(2.0 * x); },
                             gaussian_matrix(3, 3, rng));
  EXPECT_TRUE(res.converged);
  EXPECT_LT(res.x.norm(), 1e-8);
}

Matrix random_spd(int n, double cond, Rng& rng) {
  Matrix q = orthonormal_init(n, rng);
  Vector eig(n);
  for (int i = 0; i < n; ++i) eig(i) = std::pow(cond, double(i) / std::max(1, n - 1));
  return q * eig.asDiagonal() * q.transpose();
}

TEST(ConvexMinimize, MatchesDirectSolve) {
  Rng rng(15);
  Matrix a = random_spd(4, 50.0, rng);
  Matrix b = gaussian_matrix(4, 1, rng);
  auto res = convex_minimize([&](const Matrix& x) { return Matrix(a * x - b); },
                             Matrix::Zero(4, 1));
  Matrix direct = Eigen::MatrixXd(a).ldlt().solve(Eigen::MatrixXd(b));
  EXPECT_TRUE(res.converged);
  EXPECT_LT((res.x - direct).cwiseAbs().maxCoeff(), 1e-8);
}

TEST(ConvexMinimize, AlreadyOptimalReturnedUnchanged) {
  Matrix x0 = Matrix::Constant(2, 2, 3.0);
  auto res = convex_minimize([](const Matrix& x) { return Matrix(x.array() - 3.0); }, x0);
  EXPECT_TRUE(res.converged);
  EXPECT_EQ(res.iterations, 0);
  EXPECT_EQ(res.x, x0);
}

TEST(ConvexMinimize, IllConditionedQuadraticsReachTolerance) {
  Rng rng(16);
  for (int trial = 0; trial < 10; ++trial) {
    const int n = 5 + 3 * trial;
    Matrix a = random_spd(n, 1e3, rng);
    Matrix b = gaussian_matrix(n, 2, rng);
    auto res = convex_minimize([&](const Matrix& x) { return Matrix(a * x - b); },
                               Matrix::Zero(n, 2));
    EXPECT_TRUE(res.converged) << "trial " << trial;
    EXPECT_LE(res.grad_norm, 1e-8);
  }
}

TEST(ConvexMinimize, BudgetExhaustionIsReported) {
  Rng rng(17);
  Matrix a = random_spd(30, 1e3, rng);
  Matrix b = gaussian_matrix(30, 1, rng);
  MinimizeOptions opts;
  opts.max_iters = 2;
  auto res = convex_minimize([&](const Matrix& x) { return Matrix(a * x - b); },
                             Matrix::Zero(30, 1), opts);
  EXPECT_FALSE(res.converged);
  EXPECT_GT(res.grad_norm, 1e-8);
}

TEST(Rng, StateRoundTrip) {
  Rng a(21);
  a.normal();  // leaves a cached second normal
  a.uniform(0, 1);
  Rng b(0);
  b.set_state(a.state());
  EXPECT_EQ(b.seed(), 21u);
  for (int i = 0; i < 5; ++i) {
    EXPECT_EQ(a.normal(), b.normal());
    EXPECT_EQ(a.index(1000), b.index(1000));
  }
  EXPECT_THROW(b.set_state("not a state"), ConfigError);
}

}  // namespace
}  // namespace lssl
