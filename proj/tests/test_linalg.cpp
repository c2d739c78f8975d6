#include <lowrank/linalg.hpp>

#include <gtest/gtest.h>

#include "oracles.hpp"

namespace {

using lowrank::CompactSVD;
using lowrank::FactoredRank2r;
using lowrank::Index;
using lowrank::Matrix;
using lowrank::Vector;

void expect_valid(const CompactSVD& x, double tol = 1e-10) {
  EXPECT_LE(oracle::orthonormality_defect(x.U), tol);
  EXPECT_LE(oracle::orthonormality_defect(x.V), tol);
  for (Index k = 0; k < x.rank(); ++k) {
    EXPECT_GE(x.S(k), 0.0);
    if (k > 0) {
      EXPECT_LE(x.S(k), x.S(k - 1));
    }
  }
}

TEST(CompactSvd, DiagonalMatrix) {
  Matrix M = Vector::LinSpaced(3, 3.0, 1.0).asDiagonal();
  const CompactSVD x = lowrank::compact_svd(M, 3);
  EXPECT_TRUE(x.S.isApprox(Vector::LinSpaced(3, 3.0, 1.0), 1e-14));
  EXPECT_TRUE(x.U.isApprox(Matrix::Identity(3, 3), 1e-14));
  EXPECT_TRUE(x.V.isApprox(Matrix::Identity(3, 3), 1e-14));
}

TEST(CompactSvd, ZeroMatrix) {
  const CompactSVD x = lowrank::compact_svd(Matrix::Zero(4, 4), 2);
  EXPECT_EQ(x.rank(), 2);
  EXPECT_EQ(x.S.norm(), 0.0);
  expect_valid(x);
}

TEST(CompactSvd, FullRankReconstructionMatchesJacobi) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    const Matrix M = oracle::gaussian_matrix(8, 6, rng);
    const CompactSVD x = lowrank::compact_svd(M, 6);
    expect_valid(x);
    EXPECT_LE((M - x.dense()).norm(), 1e-10 * M.norm());
    const oracle::FullSVD ref = oracle::jacobi_svd(M);
    EXPECT_LE((x.S - ref.S).norm(), 1e-12 * ref.S(0));
  }
}

TEST(CompactSvd, RejectsEmptyAndBadRank) {
  try {
    lowrank::compact_svd(Matrix(0, 3), 1);
    FAIL();
  } catch (const lowrank::Error& e) {
    EXPECT_STREQ(e.what(), "empty matrix");
  }
  EXPECT_THROW(lowrank::compact_svd(Matrix::Ones(3, 2), 3), lowrank::Error);
  EXPECT_THROW(lowrank::compact_svd(Matrix::Ones(3, 2), 0), lowrank::Error);
}

TEST(CompactSvd, SignConventionLargestEntryPositive) {
  std::mt19937_64 rng(3);
  const Matrix M = oracle::gaussian_matrix(9, 7, rng);
  const CompactSVD x = lowrank::compact_svd(M, 4);
  for (Index k = 0; k < 4; ++k) {
    Index i = 0;
    x.U.col(k).cwiseAbs().maxCoeff(&i);
    EXPECT_GT(x.U(i, k), 0.0);
  }
  const CompactSVD y = lowrank::compact_svd(-M, 4);
  EXPECT_TRUE(y.U.isApprox(x.U, 1e-12));
  EXPECT_TRUE(y.V.isApprox(-x.V, 1e-12));
}

TEST(HardThreshold, DropsSmallestSingularValue) {
  Matrix M = Vector::LinSpaced(3, 3.0, 1.0).asDiagonal();
  const CompactSVD x = lowrank::hard_threshold(M, 2);
  Matrix expected = Matrix::Zero(3, 3);
  expected(0, 0) = 3.0;
  expected(1, 1) = 2.0;
  EXPECT_LE((x.dense() - expected).norm(), 1e-14);
}

TEST(HardThreshold, RankDeficientInputPadsWithZeros) {
  std::mt19937_64 rng(5);
  const Vector u = oracle::gaussian_vector(6, rng);
  const Vector v = oracle::gaussian_vector(5, rng);
  const CompactSVD x = lowrank::hard_threshold(u * v.transpose(), 3);
  EXPECT_NEAR(x.S(0), u.norm() * v.norm(), 1e-12 * u.norm() * v.norm());
  EXPECT_LE(x.S(1), 1e-14 * x.S(0));
  EXPECT_LE(x.S(2), 1e-14 * x.S(0));
  expect_valid(x);
}

TEST(HardThreshold, BeatsRandomRankRCompetitors) {
  std::mt19937_64 rng(17);
  const Matrix M = oracle::gaussian_matrix(10, 10, rng);
  const double best = (M - lowrank::hard_threshold(M, 3).dense()).norm();
  for (int trial = 0; trial < 1000; ++trial) {
    // Competitors near the optimum as well as far from it.
    Matrix B = oracle::gaussian_matrix(10, 3, rng) *
               oracle::gaussian_matrix(3, 10, rng);
    if (trial % 2 == 1) {
      const Matrix opt = lowrank::hard_threshold(M, 3).dense();
      const CompactSVD p = lowrank::hard_threshold(opt + 1e-2 * B, 3);
      B = p.dense();
    }
    EXPECT_LE(best, (M - B).norm() + 1e-12);
  }
}

TEST(HardThreshold, MatchesJacobiTruncation) {
  std::mt19937_64 rng(23);
  for (int trial = 0; trial < 10; ++trial) {
    const Matrix M = oracle::gaussian_matrix(12, 9, rng);
    EXPECT_LE(oracle::relative_error(lowrank::hard_threshold(M, 4).dense(),
                                     oracle::truncate(M, 4)),
              1e-12);
  }
}

TEST(HardThreshold, Idempotent) {
  std::mt19937_64 rng(29);
  for (int trial = 0; trial < 20; ++trial) {
    const Matrix M = oracle::gaussian_matrix(15, 11, rng);
    const CompactSVD once = lowrank::hard_threshold(M, 3);
    const CompactSVD twice = lowrank::hard_threshold(once.dense(), 3);
    EXPECT_LE((once.S - twice.S).norm(), 1e-13 * once.S(0));
    EXPECT_LE((once.U - twice.U).norm(), 1e-10);
    EXPECT_LE((once.V - twice.V).norm(), 1e-10);
  }
}

TEST(TruncateTangent, AlreadyRankOne) {
  const Matrix e1 = Matrix::Identity(5, 1);
  const CompactSVD x = lowrank::truncate_tangent(FactoredRank2r(e1, e1, 1), 1);
  Matrix expected = Matrix::Zero(5, 5);
  expected(0, 0) = 1.0;
  EXPECT_LE((x.dense() - expected).norm(), 1e-14);
}

TEST(TruncateTangent, ExactWhenRankCoversWidth) {
  std::mt19937_64 rng(31);
  for (Index k = 1; k <= 4; ++k) {
    const Matrix L = oracle::gaussian_matrix(13, k, rng);
    const Matrix R = oracle::gaussian_matrix(9, k, rng);
    const CompactSVD x = lowrank::truncate_tangent(FactoredRank2r(L, R, 4), 4);
    EXPECT_LE(oracle::relative_error(x.dense(), L * R.transpose()), 1e-12);
    expect_valid(x);
  }
}

TEST(TruncateTangent, RankDeficientKeepsOrthonormalPadding) {
  const Matrix e1 = Matrix::Identity(6, 1);
  const CompactSVD x =
      lowrank::truncate_tangent(FactoredRank2r(2.0 * e1, e1, 3), 3);
  EXPECT_EQ(x.rank(), 3);
  EXPECT_NEAR(x.S(0), 2.0, 1e-14);
  EXPECT_EQ(x.S.tail(2).norm(), 0.0);
  expect_valid(x);
}

TEST(TruncateTangent, MatchesDenseTruncation) {
  std::mt19937_64 rng(37);
  const Matrix L = oracle::gaussian_matrix(50, 6, rng);
  const Matrix R = oracle::gaussian_matrix(40, 6, rng);
  const CompactSVD x = lowrank::truncate_tangent(FactoredRank2r(L, R, 3), 3);
  const Matrix dense = L * R.transpose();
  EXPECT_LE((x.dense() - oracle::truncate(dense, 3)).norm(), 1e-10 * dense.norm());
}

TEST(TruncateTangent, AgreesWithHardThresholdOnRandomInstances) {
  std::mt19937_64 rng(41);
  std::uniform_int_distribution<int> size(2, 100);
  std::uniform_int_distribution<int> rank(1, 8);
  for (int trial = 0; trial < 100; ++trial) {
    const Index n1 = size(rng);
    const Index n2 = size(rng);
    const Index r = std::min<Index>(rank(rng), std::min(n1, n2));
    const Index k = std::min<Index>(2 * r, std::min(n1, n2));
    const Matrix L = oracle::gaussian_matrix(n1, k, rng);
    const Matrix R = oracle::gaussian_matrix(n2, k, rng);
    const Matrix dense = L * R.transpose();
    const CompactSVD x = lowrank::truncate_tangent(FactoredRank2r(L, R, r), r);
    EXPECT_LE((x.dense() - lowrank::hard_threshold(dense, r).dense()).norm(),
              1e-9 * dense.norm());
    expect_valid(x);
  }
}

TEST(TruncateTangent, RejectsWidthAboveTwoR) {
  EXPECT_THROW(FactoredRank2r(Matrix::Ones(5, 3), Matrix::Ones(5, 3), 1),
               lowrank::Error);
}

TEST(TallQr, OrthonormalInputIsReproducedUpToSign) {
  std::mt19937_64 rng(43);
  const Matrix Q0 = lowrank::tall_qr(oracle::gaussian_matrix(20, 4, rng)).Q;
  const lowrank::TallQR qr = lowrank::tall_qr(Q0);
  for (Index k = 0; k < 4; ++k) {
    EXPECT_NEAR(std::abs(qr.R(k, k)), 1.0, 1e-13);
    EXPECT_LE((qr.Q.col(k) * qr.R(k, k) - Q0.col(k)).norm(), 1e-13);
  }
  EXPECT_LE((qr.R.cwiseAbs() - Matrix::Identity(4, 4)).norm(), 1e-13);
}

TEST(TallQr, RepeatedColumnGivesZeroPivot) {
  Matrix M = Matrix::Zero(5, 2);
  M(0, 0) = 1.0;
  M(0, 1) = 1.0;
  const lowrank::TallQR qr = lowrank::tall_qr(M);
  EXPECT_NEAR(qr.R(1, 1), 0.0, 1e-15);
  EXPECT_LE((qr.Q * qr.R - M).norm(), 1e-15);
  EXPECT_LE(oracle::orthonormality_defect(qr.Q), 1e-12);
}

TEST(TallQr, ReconstructionAndOrthonormality) {
  std::mt19937_64 rng(47);
  const Matrix M = oracle::gaussian_matrix(100, 5, rng);
  const lowrank::TallQR qr = lowrank::tall_qr(M);
  EXPECT_LE((M - qr.Q * qr.R).norm(), 1e-12 * M.norm());
  EXPECT_LE(oracle::orthonormality_defect(qr.Q), 1e-12);
  for (Index i = 0; i < 5; ++i)
    for (Index j = 0; j < i; ++j) EXPECT_EQ(qr.R(i, j), 0.0);
}

TEST(TallQr, PadsToRequestedWidth) {
  const Matrix M = Matrix::Identity(7, 1);
  const lowrank::TallQR qr = lowrank::tall_qr(M, 3);
  EXPECT_EQ(qr.Q.cols(), 3);
  EXPECT_EQ(qr.R.rows(), 3);
  EXPECT_LE(oracle::orthonormality_defect(qr.Q), 1e-14);
  EXPECT_LE((qr.Q * qr.R - M).norm(), 1e-15);
}

TEST(VeeNorm, HandValues) {
  Matrix M(2, 2);
  M << 3, 0, 4, 0;
  EXPECT_DOUBLE_EQ(lowrank::vee_norm(M), 5.0);
  EXPECT_EQ(lowrank::vee_norm(Matrix::Zero(3, 4)), 0.0);
  EXPECT_DOUBLE_EQ(lowrank::vee_norm(Matrix::Identity(6, 6)), 1.0);
}

TEST(VeeNorm, BetweenMaxEntryAndFrobenius) {
  std::mt19937_64 rng(53);
  for (int trial = 0; trial < 200; ++trial) {
    const Matrix M = oracle::gaussian_matrix(1 + trial % 9, 1 + trial % 7, rng);
    const double v = lowrank::vee_norm(M);
    EXPECT_LE(v, M.norm() * (1 + 1e-15));
    EXPECT_GE(v, M.cwiseAbs().maxCoeff());
  }
}

TEST(Distance, MatchesDenseDifference) {
  std::mt19937_64 rng(59);
  const CompactSVD a = lowrank::compact_svd(oracle::gaussian_matrix(14, 10, rng), 3);
  const CompactSVD b = lowrank::compact_svd(oracle::gaussian_matrix(14, 10, rng), 3);
  EXPECT_NEAR(lowrank::distance(a, b), (a.dense() - b.dense()).norm(), 1e-12);
  EXPECT_NEAR(lowrank::distance(a, a), 0.0, 1e-7);
}

TEST(SymmetricEigen, MatchesJacobi) {
  std::mt19937_64 rng(61);
  const Matrix B = oracle::gaussian_matrix(12, 12, rng);
  const Matrix A = B + B.transpose();
  const lowrank::SymmetricEigen eig = lowrank::symmetric_eigen(A);
  auto [w, Q] = oracle::jacobi_eigen(A);
  std::sort(w.data(), w.data() + w.size());
  EXPECT_LE((eig.values - w).norm(), 1e-12 * A.norm());
  const Matrix rebuilt =
      eig.vectors * eig.values.asDiagonal() * eig.vectors.transpose();
  EXPECT_LE((rebuilt - A).norm(), 1e-12 * A.norm());
}

TEST(SubspaceSvd, MatchesDenseTopTriplets) {
  std::mt19937_64 rng(67);
  const Matrix M = oracle::gaussian_matrix(60, 8, rng) *
                       oracle::gaussian_matrix(8, 50, rng) +
                   1e-3 * oracle::gaussian_matrix(60, 50, rng);
  auto times = [&](const Matrix& B) -> Matrix { return M * B; };
  auto ttimes = [&](const Matrix& B) -> Matrix { return M.transpose() * B; };
  const auto x = lowrank::subspace_svd(times, ttimes,
                                       oracle::gaussian_matrix(50, 10, rng), 5,
                                       1e-12, 500);
  ASSERT_TRUE(x.has_value());
  EXPECT_LE(oracle::relative_error(x->dense(), oracle::truncate(M, 5)), 1e-9);
  expect_valid(*x);
}

TEST(SubspaceSvd, ReportsNonConvergence) {
  std::mt19937_64 rng(71);
  const Matrix M = oracle::gaussian_matrix(40, 40, rng);
  auto times = [&](const Matrix& B) -> Matrix { return M * B; };
  auto ttimes = [&](const Matrix& B) -> Matrix { return M.transpose() * B; };
  EXPECT_FALSE(lowrank::subspace_svd(times, ttimes,
                                     oracle::gaussian_matrix(40, 3, rng), 3,
                                     1e-14, 1)
                   .has_value());
}

}  // namespace
