#include <lowrank/linalg.hpp>
#include <lowrank/operators.hpp>

#include <gtest/gtest.h>

#include <memory>
#include <set>
#include <sstream>

#include "oracles.hpp"

namespace {

using lowrank::CompactSVD;
using lowrank::GradientRep;
using lowrank::Index;
using lowrank::Matrix;
using lowrank::Sample;
using lowrank::Vector;

std::vector<std::unique_ptr<lowrank::SensingOperator>> operator_family(
    Index n, std::uint64_t seed) {
  std::vector<std::unique_ptr<lowrank::SensingOperator>> ops;
  ops.push_back(std::make_unique<lowrank::CompletionOperator>(
      lowrank::make_completion(n, n + 3, 3 * n, seed)));
  ops.push_back(std::make_unique<lowrank::GaussianOperator>(
      lowrank::make_gaussian(n, n + 3, 2 * n, seed)));
  ops.push_back(std::make_unique<lowrank::PhaseRetrievalOperator>(
      lowrank::make_phase_retrieval(n, 4 * n, seed)));
  return ops;
}

TEST(CompletionApply, SingleEntry) {
  lowrank::CompletionOperator op(3, 3, {{0, 0}});
  CompactSVD x = CompactSVD::zero(3, 3, 1);
  x.S(0) = 3.0;
  EXPECT_EQ(op.apply(x), Vector::Constant(1, 3.0));
}

TEST(GaussianApply, IdentityMeasurementGivesTrace) {
  Matrix stack(1, 16);
  stack.row(0) = Eigen::Map<const Vector>(Matrix::Identity(4, 4).eval().data(), 16);
  lowrank::GaussianOperator op(4, 4, stack);
  const Vector s = Vector::LinSpaced(4, 4.0, 1.0);
  CompactSVD x{Matrix::Identity(4, 4), s, Matrix::Identity(4, 4)};
  EXPECT_DOUBLE_EQ(op.apply(x)(0), s.sum());
}

TEST(CompletionApply, MatchesDenseEntries) {
  std::mt19937_64 rng(1);
  const auto op = lowrank::make_completion(20, 20, 50, 7);
  const Matrix L = oracle::gaussian_matrix(20, 2, rng);
  const Matrix R = oracle::gaussian_matrix(20, 2, rng);
  const Matrix Z = L * R.transpose();
  const Vector y = op.apply(L, R);
  for (Index k = 0; k < op.size(); ++k) {
    const Sample s = op.sample(k);
    EXPECT_NEAR(y(k), Z(s.row, s.col), 1e-13);
  }
}

TEST(Apply, FactoredEqualsDenseForEveryFamily) {
  std::mt19937_64 rng(2);
  for (const auto& op : operator_family(12, 5)) {
    const Matrix L = oracle::gaussian_matrix(op->rows(), 3, rng);
    const Matrix R = oracle::gaussian_matrix(op->cols(), 3, rng);
    const Vector a = op->apply(L, R);
    const Vector b = op->apply_dense(L * R.transpose());
    EXPECT_LE((a - b).norm(), 1e-12 * b.norm()) << op->kind();
  }
}

TEST(Apply, RejectsDimensionMismatch) {
  for (const auto& op : operator_family(6, 1)) {
    EXPECT_THROW(op->apply_dense(Matrix::Zero(op->rows() + 1, op->cols())),
                 lowrank::Error);
    EXPECT_THROW(op->apply(Matrix::Zero(op->rows(), 2), Matrix::Zero(op->cols() + 2, 2)),
                 lowrank::Error);
    EXPECT_THROW(op->adjoint(Vector::Zero(op->size() + 1)), lowrank::Error);
  }
}

TEST(CompletionAdjoint, UnitVectorHitsFirstSample) {
  lowrank::CompletionOperator op(5, 5, {{4, 1}, {2, 3}});
  Vector p = Vector::Zero(2);
  p(0) = 1.0;
  const GradientRep G = op.adjoint(p);
  EXPECT_EQ(G.kind(), GradientRep::Kind::sparse);
  Matrix expected = Matrix::Zero(5, 5);
  expected(2, 3) = 1.0;
  EXPECT_EQ(G.materialize(), expected);
}

TEST(Adjoint, ZeroVectorGivesZero) {
  for (const auto& op : operator_family(8, 3)) {
    EXPECT_EQ(op->adjoint(Vector::Zero(op->size())).materialize().norm(), 0.0);
  }
}

TEST(Adjoint, RepresentationPerFamily) {
  const auto ops = operator_family(8, 3);
  const auto kind = [&](std::size_t i) {
    return ops[i]->adjoint(Vector::Ones(ops[i]->size())).kind();
  };
  EXPECT_EQ(kind(0), GradientRep::Kind::sparse);
  EXPECT_EQ(kind(1), GradientRep::Kind::dense);
  EXPECT_EQ(kind(2), GradientRep::Kind::lowrank_combination);
}

TEST(Adjoint, InnerProductIdentity) {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 30; ++trial) {
    for (const auto& op : operator_family(5 + trial, 100 + trial)) {
      const Matrix Z = oracle::gaussian_matrix(op->rows(), op->cols(), rng);
      const Vector p = oracle::gaussian_vector(op->size(), rng);
      const double lhs = op->apply_dense(Z).dot(p);
      const double rhs = Z.cwiseProduct(op->adjoint(p).materialize()).sum();
      EXPECT_LE(std::abs(lhs - rhs), 1e-10 * Z.norm() * p.norm()) << op->kind();
    }
  }
}

TEST(CompletionAdjoint, ApplyThenAdjointIsMasking) {
  std::mt19937_64 rng(5);
  const auto op = lowrank::make_completion(15, 12, 60, 9);
  const Matrix Z = oracle::gaussian_matrix(15, 12, rng);
  const Matrix masked = op.adjoint(op.apply_dense(Z)).materialize();
  std::set<std::pair<int, int>> omega;
  for (Index k = 0; k < op.size(); ++k) omega.insert({op.sample(k).row, op.sample(k).col});
  for (Index i = 0; i < 15; ++i) {
    for (Index j = 0; j < 12; ++j) {
      const bool in = omega.count({static_cast<int>(i), static_cast<int>(j)}) > 0;
      EXPECT_EQ(masked(i, j), in ? Z(i, j) : 0.0);
    }
  }
}

TEST(PhaseRetrieval, LiftedMeasurementsAreSquares) {
  std::mt19937_64 rng(6);
  const auto op = lowrank::make_phase_retrieval(10, 40, 2);
  const Vector x = oracle::gaussian_vector(10, rng);
  const Vector y = op.apply_dense(x * x.transpose());
  for (Index i = 0; i < op.size(); ++i) {
    const double ax = op.vectors().row(i).dot(x);
    EXPECT_NEAR(y(i), ax * ax, 1e-12 * (1 + ax * ax));
    EXPECT_GE(y(i), 0.0);
  }
}

TEST(MakeCompletion, FullSamplingCoversEverything) {
  const auto op = lowrank::make_completion(4, 3, 12, 1);
  ASSERT_EQ(op.size(), 12);
  for (Index k = 0; k < 12; ++k) {
    EXPECT_EQ(op.sample(k).row, k / 3);
    EXPECT_EQ(op.sample(k).col, k % 3);
  }
}

TEST(MakeCompletion, DeterministicAndDuplicateFree) {
  const auto a = lowrank::make_completion(30, 20, 200, 42);
  const auto b = lowrank::make_completion(30, 20, 200, 42);
  EXPECT_EQ(a.row_indices(), b.row_indices());
  EXPECT_EQ(a.col_indices(), b.col_indices());
  std::set<std::pair<int, int>> seen;
  for (Index k = 0; k < a.size(); ++k) seen.insert({a.sample(k).row, a.sample(k).col});
  EXPECT_EQ(static_cast<Index>(seen.size()), a.size());
  const auto c = lowrank::make_completion(30, 20, 200, 43);
  EXPECT_NE(a.col_indices(), c.col_indices());
}

TEST(MakeCompletion, InclusionFrequencyIsUniform) {
  const Index n = 100, m = 2000, seeds = 500;
  std::vector<int> hits(n * n, 0);
  for (Index s = 0; s < seeds; ++s) {
    const auto op = lowrank::make_completion(n, n, m, 7 + 1000 * s);
    for (Index k = 0; k < m; ++k) ++hits[op.sample(k).row * n + op.sample(k).col];
  }
  const double p = static_cast<double>(m) / (n * n);
  const double mean = seeds * p;
  const double sd = std::sqrt(seeds * p * (1 - p));
  int outside3 = 0;
  int outside5 = 0;
  for (int h : hits) {
    outside3 += std::abs(h - mean) > 3 * sd;
    outside5 += std::abs(h - mean) > 5 * sd;
  }
  // A binomial count leaves the 3 sigma band with probability about 0.0027.
  EXPECT_LE(outside3, static_cast<int>(0.01 * n * n));
  EXPECT_EQ(outside5, 0);
}

TEST(MakeCompletion, RejectsInfeasibleCounts) {
  EXPECT_THROW(lowrank::make_completion(3, 3, 10, 1), lowrank::Error);
  EXPECT_THROW(lowrank::make_completion(3, 3, 0, 1), lowrank::Error);
}

TEST(CompletionOperator, RejectsDuplicatesAndOutOfRange) {
  EXPECT_THROW(lowrank::CompletionOperator(3, 3, {{0, 1}, {0, 1}}), lowrank::Error);
  EXPECT_THROW(lowrank::CompletionOperator(3, 3, {{3, 0}}), lowrank::Error);
  EXPECT_THROW(lowrank::CompletionOperator(3, 3, {}), lowrank::Error);
}

TEST(MakeGaussian, RejectsEmptyAndOversized) {
  EXPECT_THROW(lowrank::make_gaussian(3, 3, 0, 1), lowrank::Error);
  EXPECT_THROW(lowrank::make_phase_retrieval(3, 0, 1), lowrank::Error);
  EXPECT_THROW(lowrank::make_gaussian(100, 100, 1000, 1, 1u << 20), lowrank::Error);
}

TEST(MakeGaussian, Deterministic) {
  EXPECT_EQ(lowrank::make_gaussian(5, 4, 7, 3).stack(),
            lowrank::make_gaussian(5, 4, 7, 3).stack());
  EXPECT_EQ(lowrank::make_phase_retrieval(6, 9, 3).vectors(),
            lowrank::make_phase_retrieval(6, 9, 3).vectors());
  EXPECT_NE(lowrank::make_gaussian(5, 4, 7, 3).stack(),
            lowrank::make_gaussian(5, 4, 7, 4).stack());
}

void expect_standard_moments(const Matrix& draws) {
  const double N = static_cast<double>(draws.size());
  ASSERT_GE(N, 1e5);
  const double mean = draws.mean();
  const double var = (draws.array() - mean).square().sum() / (N - 1);
  EXPECT_LE(std::abs(mean), 3.0 / std::sqrt(N));
  EXPECT_LE(std::abs(var - 1.0), 3.0 * std::sqrt(2.0 / N));
}

TEST(MakeGaussian, StandardNormalMoments) {
  expect_standard_moments(lowrank::make_gaussian(20, 20, 300, 11).stack());
  expect_standard_moments(lowrank::make_phase_retrieval(100, 1200, 11).vectors());
}

TEST(GaussianOperator, MeasurementMatricesMatchStack) {
  std::mt19937_64 rng(8);
  const auto op = lowrank::make_gaussian(4, 3, 5, 2);
  const Matrix Z = oracle::gaussian_matrix(4, 3, rng);
  const Vector y = op.apply_dense(Z);
  for (Index i = 0; i < 5; ++i) {
    EXPECT_NEAR(y(i), op.measurement(i).cwiseProduct(Z).sum(), 1e-13);
  }
}

// GradientRep behaves identically across representations.

void expect_rep_consistent(const GradientRep& G, double tol) {
  std::mt19937_64 rng(9);
  const Matrix D = G.materialize();
  const double scale = std::max(1.0, D.norm());
  EXPECT_LE((G.row_sq_norms() - D.rowwise().squaredNorm()).norm(), tol * scale * scale);
  EXPECT_LE((G.col_sq_norms() - D.colwise().squaredNorm().transpose()).norm(),
            tol * scale * scale);
  EXPECT_NEAR(G.vee_norm(), lowrank::vee_norm(D), tol * scale);
  const Matrix B = oracle::gaussian_matrix(D.cols(), 3, rng);
  const Matrix C = oracle::gaussian_matrix(D.rows(), 3, rng);
  EXPECT_LE((G.times(B) - D * B).norm(), tol * scale * B.norm());
  EXPECT_LE((G.transpose_times(C) - D.transpose() * C).norm(), tol * scale * C.norm());
  const Vector l = oracle::gaussian_vector(D.rows(), rng).cwiseAbs();
  const Vector r = oracle::gaussian_vector(D.cols(), rng).cwiseAbs();
  const GradientRep S = G.scaled(l, r);
  EXPECT_EQ(S.kind(), G.kind());
  const Matrix expected = l.asDiagonal() * D * r.asDiagonal();
  EXPECT_LE((S.materialize() - expected).norm(), tol * std::max(1.0, expected.norm()));
  EXPECT_LE((S.times(B) - expected * B).norm(),
            tol * std::max(1.0, expected.norm()) * B.norm());
  EXPECT_LE((S.transpose_times(C) - expected.transpose() * C).norm(),
            tol * std::max(1.0, expected.norm()) * C.norm());
}

TEST(GradientRep, AllKindsAgreeWithMaterialization) {
  std::mt19937_64 rng(10);
  for (const auto& op : operator_family(14, 21)) {
    expect_rep_consistent(op->adjoint(oracle::gaussian_vector(op->size(), rng)), 1e-12);
  }
}

TEST(GradientRep, UncachedCombinationAgreesWithMaterialization) {
  std::mt19937_64 rng(12);
  const Index n = GradientRep::kDenseCacheLimit + 8;
  const auto op = lowrank::make_phase_retrieval(n, 12, 4);
  const GradientRep G = op.adjoint(oracle::gaussian_vector(12, rng));
  EXPECT_FALSE(G.has_dense_cache());
  expect_rep_consistent(G, 1e-12);
}

TEST(Triples, RoundTripIsExact) {
  std::mt19937_64 rng(13);
  const auto op = lowrank::make_completion(9, 7, 30, 5);
  const Vector values = oracle::gaussian_vector(30, rng);
  std::stringstream buffer;
  lowrank::write_triples(buffer, op, values);
  const lowrank::ObservedEntries back = lowrank::read_triples(buffer, 9, 7);
  EXPECT_EQ(back.op->row_indices(), op.row_indices());
  EXPECT_EQ(back.op->col_indices(), op.col_indices());
  EXPECT_EQ(back.values, values);
}

TEST(Triples, MalformedLineReportsNumber) {
  std::istringstream in("0 0 1\n\n1 x 2\n");
  try {
    lowrank::read_triples(in);
    FAIL();
  } catch (const lowrank::Error& e) {
    EXPECT_STREQ(e.what(), "malformed line 3");
  }
}

}  // namespace
