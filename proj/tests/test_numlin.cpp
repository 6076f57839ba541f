#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "eedvit/covariance.hpp"
#include "eedvit/eigensolver.hpp"
#include "eedvit/tensor.hpp"
#include "oracles.hpp"

using namespace eedvit;

TEST(Tensor, ShapeMustMatchData) {
  EXPECT_THROW(Tensor<double>({2, 3}, std::vector<double>(5)), ShapeMismatch);
  EXPECT_THROW(Tensor<double>({0, 3}), ShapeMismatch);
  Tensor<double> t({2, 3});
  EXPECT_EQ(t.size(), 6u);
  EXPECT_EQ(t.as_matrix().rows(), 2);
}

TEST(Tensor, ExternalDataRejectsNonFinite) {
  EXPECT_THROW(Tensor<float>::from_external({2}, {1.0f, NAN}), DegenerateInput);
  EXPECT_THROW(Tensor<double>::from_external({1}, {INFINITY}), DegenerateInput);
  EXPECT_NO_THROW(Tensor<double>::from_external({2}, {1.0, 2.0}));
}

TEST(Covariance, OrthonormalRowsUncentered) {
  MatrixD h(2, 2);
  h << 1, 0, 0, 1;
  const auto c = covariance(h, Centering::uncentered);
  EXPECT_FALSE(c.centered());
  EXPECT_EQ(c.sample_count, 2u);
  EXPECT_EQ(c.entries, MatrixD(0.5 * MatrixD::Identity(2, 2)));
}

TEST(Covariance, IdenticalRowsCenteredIsZero) {
  MatrixD h(2, 2);
  h << 1, 1, 1, 1;
  const auto c = covariance(h, Centering::centered);
  EXPECT_TRUE(c.centered());
  EXPECT_EQ(c.entries, MatrixD(MatrixD::Zero(2, 2)));
}

TEST(Covariance, MatchesTwoPassOracle) {
  std::mt19937_64 rng(11);
  const MatrixD h = oracle::random_matrix(8, 3, rng) + MatrixD::Constant(8, 3, 2.5);
  for (bool centered : {true, false}) {
    const auto c = covariance(h, centered ? Centering::centered : Centering::uncentered);
    const auto ref = oracle::two_pass_covariance(h, centered);
    EXPECT_LT((c.entries - ref).cwiseAbs().maxCoeff(), 1e-12) << "centered=" << centered;
  }
}

TEST(Covariance, ExactlySymmetricAndScaleLaw) {
  std::mt19937_64 rng(12);
  const MatrixD h = oracle::random_matrix(50, 7, rng);
  const auto c = covariance(h);
  EXPECT_EQ(c.entries, MatrixD(c.entries.transpose()));
  const double k = 3.7;
  const auto c2 = covariance(MatrixD(k * h));
  EXPECT_LT((c2.entries - k * k * c.entries).norm() / c2.entries.norm(), 1e-12);
}

TEST(Covariance, RejectsDegenerateInput) {
  EXPECT_THROW(covariance(MatrixD(MatrixD::Ones(1, 4))), DegenerateInput);
  MatrixD bad = MatrixD::Ones(3, 2);
  bad(1, 1) = NAN;
  EXPECT_THROW(covariance(bad), DegenerateInput);
}

TEST(Eigensolver, Identity) {
  const auto v = sym_eig(MatrixD(MatrixD::Identity(3, 3)));
  EXPECT_EQ(v, (std::vector<double>{1, 1, 1}));
}

TEST(Eigensolver, DiagonalIsSortedDescending) {
  MatrixD d = MatrixD::Zero(3, 3);
  d(0, 0) = 1;
  d(1, 1) = 3;
  d(2, 2) = 0;
  EXPECT_EQ(sym_eig(d), (std::vector<double>{3, 1, 0}));
}

TEST(Eigensolver, Random4x4MatchesBisectionOracle) {
  std::mt19937_64 rng(21);
  for (int trial = 0; trial < 20; ++trial) {
    const MatrixD a = oracle::random_symmetric(4, rng);
    const auto got = sym_eig(a);
    const auto ref = oracle::bisection_eigenvalues(a);
    ASSERT_EQ(got.size(), 4u);
    for (std::size_t k = 0; k < 4; ++k) {
      EXPECT_NEAR(got[k], ref[k], 1e-9);
    }
  }
}

TEST(Eigensolver, ReconstructsFromEigenpairs) {
  std::mt19937_64 rng(22);
  const MatrixD a = oracle::random_symmetric(12, rng);
  JacobiOptions opts;
  opts.want_vectors = true;
  const auto e = jacobi_eigen(a, opts);
  Eigen::VectorXd lambda = Eigen::Map<const Eigen::VectorXd>(e.values.data(), 12);
  const MatrixD rebuilt = e.vectors * lambda.asDiagonal() * e.vectors.transpose();
  EXPECT_LT((rebuilt - a).norm() / a.norm(), 1e-6);
  EXPECT_LT((e.vectors.transpose() * e.vectors - MatrixD::Identity(12, 12)).norm(), 1e-10);
}

TEST(Eigensolver, TracePreservationAndOrthogonalInvariance) {
  std::mt19937_64 rng(23);
  for (int trial = 0; trial < 10; ++trial) {
    const MatrixD x = oracle::random_matrix(40, 9, rng);
    const auto cov = covariance(x);
    const auto v = sym_eig(cov);
    double sum = 0;
    for (double l : v) {
      sum += l;
    }
    EXPECT_LT(std::abs(sum - cov.entries.trace()) / cov.entries.trace(), 1e-9);

    const MatrixD q = oracle::random_orthogonal(9, rng);
    const auto rotated = sym_eig(MatrixD(q.transpose() * cov.entries * q));
    for (std::size_t k = 0; k < v.size(); ++k) {
      EXPECT_NEAR(rotated[k], v[k], 1e-8);
    }
  }
}

TEST(Eigensolver, ClampsRoundoffNegativesOnly) {
  // Rank-deficient PSD matrix: the null eigenvalue must come back as >= 0.
  std::mt19937_64 rng(24);
  const MatrixD b = oracle::random_matrix(6, 3, rng);
  const auto v = sym_eig(MatrixD(b * b.transpose()));
  for (double l : v) {
    EXPECT_GE(l, 0.0);
  }
  // Genuinely negative eigenvalues are preserved.
  MatrixD d = MatrixD::Zero(2, 2);
  d(0, 0) = 1;
  d(1, 1) = -0.5;
  EXPECT_EQ(sym_eig(d), (std::vector<double>{1, -0.5}));
}

TEST(Eigensolver, SweepBudgetExhaustionThrows) {
  std::mt19937_64 rng(25);
  const MatrixD a = oracle::random_symmetric(10, rng);
  JacobiOptions opts;
  opts.max_sweeps = 1;
  EXPECT_THROW(jacobi_eigen(a, opts), ConvergenceFailure);
}

TEST(Eigensolver, HandlesViTSmallWidth) {
  std::mt19937_64 rng(26);
  const MatrixD x = oracle::random_matrix(500, 384, rng);
  const auto cov = covariance(x);
  const auto v = sym_eig(cov);
  ASSERT_EQ(v.size(), 384u);
  EXPECT_TRUE(std::is_sorted(v.rbegin(), v.rend()));
  double sum = 0;
  for (double l : v) {
    sum += l;
  }
  EXPECT_LT(std::abs(sum - cov.entries.trace()) / cov.entries.trace(), 1e-9);
}
