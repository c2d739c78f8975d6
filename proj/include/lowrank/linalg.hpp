#pragma once

// Dense kernels behind the retraction and the metric: compact SVD, tall QR,
// rank-r truncation of factored rank-2r matrices, symmetric eigensolves.

#include <lowrank/core.hpp>

#include <lapacke.h>

#include <algorithm>
#include <cmath>
#include <optional>
#include <utility>

namespace lowrank {

/// Flip singular vector pairs so that the largest-magnitude entry of every
/// column of U is positive. Ties resolve to the first such entry.
inline void fix_signs(Matrix& U, Matrix& V) {
  for (Index k = 0; k < U.cols(); ++k) {
    Index imax = 0;
    U.col(k).cwiseAbs().maxCoeff(&imax);
    if (U(imax, k) < 0.0) {
      U.col(k) *= -1.0;
      V.col(k) *= -1.0;
    }
  }
}

/// Top-r singular triplets of M.
inline CompactSVD compact_svd(const Matrix& M, Index r) {
  require(M.rows() > 0 && M.cols() > 0, "empty matrix");
  require(r >= 1 && r <= std::min(M.rows(), M.cols()),
          "rank bound out of range");
  Eigen::BDCSVD<Matrix> svd(M, Eigen::ComputeThinU | Eigen::ComputeThinV);
  CompactSVD out;
  out.U = svd.matrixU().leftCols(r);
  out.S = svd.singularValues().head(r);
  out.V = svd.matrixV().leftCols(r);
  fix_signs(out.U, out.V);
  return out;
}

/// Best rank-r approximation in Frobenius norm.
inline CompactSVD hard_threshold(const Matrix& M, Index r) {
  return compact_svd(M, r);
}

struct TallQR {
  Matrix Q;  // n x q, orthonormal columns
  Matrix R;  // q x k, upper triangular, M = Q * R
};

/// Householder QR returning at least `min_cols` orthonormal columns (capped at
/// n). Extra columns complete the basis and carry zero rows in R, which is how
/// rank-deficient inputs are padded.
inline TallQR tall_qr(const Matrix& M, Index min_cols = 0) {
  const Index n = M.rows();
  const Index k = M.cols();
  const Index q = std::min(n, std::max(k, min_cols));
  Eigen::HouseholderQR<Matrix> qr(M);
  TallQR out;
  out.Q = qr.householderQ() * Matrix::Identity(n, q);
  out.R = Matrix::Zero(q, k);
  const Index t = std::min(n, k);
  out.R.topRows(t) = qr.matrixQR().topRows(t).triangularView<Eigen::Upper>();
  return out;
}

/// H_r(Left * Right^T) through two tall QRs and one small SVD, without
/// forming the n1 x n2 product.
inline CompactSVD truncate_tangent(const FactoredRank2r& W, Index r) {
  require(r >= 1 && r <= std::min(W.rows(), W.cols()),
          "rank bound out of range");
  const TallQR left = tall_qr(W.left(), r);
  const TallQR right = tall_qr(W.right(), r);
  const Matrix core = left.R * right.R.transpose();
  Eigen::JacobiSVD<Matrix> svd(core, Eigen::ComputeFullU | Eigen::ComputeFullV);
  CompactSVD out;
  out.U = left.Q * svd.matrixU().leftCols(r);
  out.S = svd.singularValues().head(r);
  out.V = right.Q * svd.matrixV().leftCols(r);
  fix_signs(out.U, out.V);
  return out;
}

/// Top-r singular triplets of an implicit n1 x n2 operator by block subspace
/// iteration with Rayleigh-Ritz extraction. `times(B)` returns M * B and
/// `transpose_times(B)` returns M^T * B; `start` (n2 x k, k >= r) seeds the
/// right block. Gives nullopt when sum ||M v_i - s_i u_i||^2 does not fall
/// below (tol * s_1)^2 within `max_iterations`.
template <typename Times, typename TransposeTimes>
std::optional<CompactSVD> subspace_svd(Times&& times,
                                       TransposeTimes&& transpose_times,
                                       const Matrix& start, Index r,
                                       double tol, int max_iterations) {
  require(start.cols() >= r, "subspace block narrower than the rank");
  Matrix V = tall_qr(start).Q.leftCols(start.cols());
  for (int it = 0; it < max_iterations; ++it) {
    const Matrix Q = tall_qr(times(V)).Q.leftCols(V.cols());
    const Matrix Z = transpose_times(Q);  // M^T Q
    Eigen::JacobiSVD<Matrix> small(Z.transpose(),
                                   Eigen::ComputeThinU | Eigen::ComputeThinV);
    CompactSVD out;
    out.S = small.singularValues().head(r);
    if (out.S(0) == 0.0) return std::nullopt;
    out.U = Q * small.matrixU().leftCols(r);
    out.V = small.matrixV().leftCols(r);
    const Matrix defect = times(out.V) - out.U * out.S.asDiagonal();
    if (defect.norm() <= tol * out.S(0)) {
      fix_signs(out.U, out.V);
      return out;
    }
    V = tall_qr(Z).Q.leftCols(Z.cols());
  }
  return std::nullopt;
}

/// Maximum over the 2-norms of all rows and all columns.
inline double vee_norm(const Matrix& M) {
  if (M.size() == 0) return 0.0;
  return std::max(M.rowwise().norm().maxCoeff(), M.colwise().norm().maxCoeff());
}

/// ||Left * Right^T||_F, accurate when the product nearly cancels.
inline double factored_frobenius_norm(const Matrix& left, const Matrix& right) {
  if (left.cols() == 0) return 0.0;
  Eigen::HouseholderQR<Matrix> qr(right);
  const Index t = std::min(right.rows(), right.cols());
  const Matrix Rt = qr.matrixQR().topRows(t).triangularView<Eigen::Upper>();
  return (left * Rt.transpose()).norm();
}

/// ||A - B||_F for two factored points.
inline double distance(const CompactSVD& a, const CompactSVD& b) {
  Matrix left(a.rows(), a.rank() + b.rank());
  Matrix right(a.cols(), a.rank() + b.rank());
  left << a.left(), -b.left();
  right << a.V, b.V;
  return factored_frobenius_norm(left, right);
}

struct SymmetricEigen {
  Vector values;   // ascending
  Matrix vectors;  // columns are eigenvectors
};

/// Symmetric eigendecomposition (LAPACK divide and conquer).
inline SymmetricEigen symmetric_eigen(const Matrix& A) {
  require(A.rows() == A.cols(), "symmetric eigensolve needs a square matrix");
  SymmetricEigen out;
  out.vectors = A;
  out.values.resize(A.rows());
  if (A.rows() == 0) return out;
  const lapack_int n = static_cast<lapack_int>(A.rows());
  const lapack_int info = LAPACKE_dsyevd(LAPACK_COL_MAJOR, 'V', 'L', n,
                                         out.vectors.data(), n,
                                         out.values.data());
  require(info == 0, "symmetric eigensolve failed");
  return out;
}

/// V * diag(f(lambda)) * V^T.
template <typename F>
Matrix spectral_function(const SymmetricEigen& eig, F&& f) {
  Vector mapped = eig.values.unaryExpr(std::forward<F>(f));
  return eig.vectors * mapped.asDiagonal() * eig.vectors.transpose();
}

}  // namespace lowrank
