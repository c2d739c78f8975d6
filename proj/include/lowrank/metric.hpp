#pragma once

// Weighted metric <Z, Y>_W = <L^{1/4} Z R^{1/4}, Y> on n1 x n2 matrices, its
// restriction to the tangent space of the fixed-rank manifold, and the
// Kronecker (Shampoo) variant with full accumulated factors.

#include <lowrank/core.hpp>
#include <lowrank/gradient.hpp>
#include <lowrank/linalg.hpp>

#include <algorithm>
#include <cmath>

namespace lowrank {

/// Used for epsilon when the gradient vanishes.
inline constexpr double kEpsilonFloor = 1e-30;

/// Diagonal preconditioner L = eps*I + diag(G G^T), R = eps*I + diag(G^T G).
struct Preconditioner {
  Vector l_diag;
  Vector r_diag;
  double epsilon = 1.0;

  Vector left_quarter() const { return l_diag.array().pow(0.25).matrix(); }
  Vector right_quarter() const { return r_diag.array().pow(0.25).matrix(); }

  static Preconditioner unit(Index n1, Index n2) {
    return {Vector::Ones(n1), Vector::Ones(n2), 1.0};
  }
};

inline Preconditioner build_preconditioner(const GradientRep& G, double epsilon) {
  require(epsilon > 0.0, "epsilon must be positive");
  Preconditioner p;
  p.epsilon = epsilon;
  p.l_diag = G.row_sq_norms().array() + epsilon;
  p.r_diag = G.col_sq_norms().array() + epsilon;
  return p;
}

/// eps = ||G||_vee^2, which pins mu/nu at sqrt(2).
inline double choose_epsilon(const GradientRep& G) {
  const double v = G.vee_norm();
  const double eps = v * v;
  return eps > kEpsilonFloor ? eps : kEpsilonFloor;
}

/// Norm-equivalence constants nu*||Z||_F^2 <= ||Z||_W^2 <= mu*||Z||_F^2 with
/// nu = eps^{1/2} and mu = (eps + ||G||_vee^2)^{1/2}.
struct MetricBounds {
  double nu;
  double mu;
};

inline MetricBounds metric_bounds(const Preconditioner& p) {
  const double top = std::max(p.l_diag.maxCoeff(), p.r_diag.maxCoeff());
  return {std::sqrt(p.epsilon), std::sqrt(top)};
}

/// L^{-1/4} G R^{-1/4}, entrywise, same representation as G.
inline GradientRep precondition_direction(const Preconditioner& p,
                                          const GradientRep& G) {
  const Vector li = p.l_diag.array().pow(-0.25).matrix();
  const Vector ri = p.r_diag.array().pow(-0.25).matrix();
  return G.scaled(li, ri);
}

inline double weighted_inner(const Preconditioner& p, const Matrix& Z,
                             const Matrix& Y) {
  require(Z.rows() == p.l_diag.size() && Z.cols() == p.r_diag.size() &&
              Y.rows() == Z.rows() && Y.cols() == Z.cols(),
          "dimension mismatch");
  const Vector lq = p.left_quarter();
  const Vector rq = p.right_quarter();
  return (lq.asDiagonal() * Z * rq.asDiagonal()).cwiseProduct(Y).sum();
}

inline double weighted_norm(const Preconditioner& p, const Matrix& Z) {
  return std::sqrt(std::max(0.0, weighted_inner(p, Z, Z)));
}

// ---------------------------------------------------------------------------
// Weighted orthonormal bases.

namespace detail {

/// G^{-1/2} for a symmetric positive definite Gram matrix, refusing
/// eigenvalues below 1e-14 * lambda_max.
inline Matrix inverse_sqrt_gram(const Matrix& gram) {
  const Matrix sym = 0.5 * (gram + gram.transpose());
  const SymmetricEigen eig = symmetric_eigen(sym);
  const double top = eig.values.size() ? eig.values.maxCoeff() : 0.0;
  require(top > 0.0 && eig.values.minCoeff() > 1e-14 * top,
          "degenerate weighted Gram");
  return spectral_function(eig, [](double x) { return 1.0 / std::sqrt(x); });
}

}  // namespace detail

/// U (U^T D U)^{-1/2} for a diagonal weight D = diag(dquarter).
inline Matrix weighted_orthonormalize(const Matrix& U, const Vector& dquarter) {
  require(U.rows() == dquarter.size(), "dimension mismatch");
  const Matrix weighted = dquarter.asDiagonal() * U;
  return U * detail::inverse_sqrt_gram(U.transpose() * weighted);
}

/// U (U^T W U)^{-1/2} for a dense symmetric positive definite weight W.
inline Matrix weighted_orthonormalize(const Matrix& U, const Matrix& W) {
  require(U.rows() == W.rows() && W.rows() == W.cols(), "dimension mismatch");
  return U * detail::inverse_sqrt_gram(U.transpose() * (W * U));
}

/// Bases of the column and row spaces of X_t that are orthonormal under the
/// side weights, together with the weights applied to them.
struct WeightedBasis {
  Matrix U;        // canonical orthonormal left factor of the base point
  Matrix V;        // canonical orthonormal right factor
  Matrix Utilde;   // U^T-span, orthonormal under the left weight
  Matrix Vtilde;
  Matrix LUtilde;  // left weight * Utilde
  Matrix RVtilde;  // right weight * Vtilde
};

inline WeightedBasis make_weighted_basis(const Matrix& U, const Matrix& V,
                                         const Preconditioner& p) {
  const Vector lq = p.left_quarter();
  const Vector rq = p.right_quarter();
  WeightedBasis b{U, V, weighted_orthonormalize(U, lq),
                  weighted_orthonormalize(V, rq), Matrix(), Matrix()};
  b.LUtilde = lq.asDiagonal() * b.Utilde;
  b.RVtilde = rq.asDiagonal() * b.Vtilde;
  return b;
}

inline WeightedBasis make_weighted_basis(const Matrix& U, const Matrix& V,
                                         const Matrix& left_weight,
                                         const Matrix& right_weight) {
  WeightedBasis b{U, V, weighted_orthonormalize(U, left_weight),
                  weighted_orthonormalize(V, right_weight), Matrix(), Matrix()};
  b.LUtilde = left_weight * b.Utilde;
  b.RVtilde = right_weight * b.Vtilde;
  return b;
}

// ---------------------------------------------------------------------------
// Tangent elements.

/// Element of the tangent space at U S V^T, held as
///   U K0 V^T + U Y1^T + Y2 V^T,   V^T Y1 = 0,  U^T Y2 = 0.
class TangentElement {
 public:
  TangentElement() = default;

  TangentElement(Matrix U, Matrix V, Matrix K0, Matrix Y1, Matrix Y2)
      : U_(std::move(U)),
        V_(std::move(V)),
        K0_(std::move(K0)),
        Y1_(std::move(Y1)),
        Y2_(std::move(Y2)) {}

  /// Tangent element U A^T + B V^T (A: n2 x r, B: n1 x r).
  static TangentElement from_components(const Matrix& U, const Matrix& V,
                                        const Matrix& A, const Matrix& B) {
    const Matrix AtV = A.transpose() * V;
    const Matrix UtB = U.transpose() * B;
    Matrix Y1 = A - V * AtV.transpose();
    Matrix Y2 = B - U * UtB;
    return TangentElement(U, V, AtV + UtB, std::move(Y1), std::move(Y2));
  }

  /// X - alpha * xi for the base point X = U diag(S) V^T of this element.
  static TangentElement step(const CompactSVD& X, double alpha,
                             const TangentElement& xi) {
    Matrix K0 = X.S.asDiagonal();
    K0 -= alpha * xi.K0_;
    return TangentElement(X.U, X.V, std::move(K0), -alpha * xi.Y1_,
                          -alpha * xi.Y2_);
  }

  const Matrix& U() const { return U_; }
  const Matrix& V() const { return V_; }
  const Matrix& K0() const { return K0_; }
  const Matrix& Y1() const { return Y1_; }
  const Matrix& Y2() const { return Y2_; }
  Index rank() const { return U_.cols(); }

  /// [U K0 + Y2, U] * [V, Y1]^T.
  FactoredRank2r factored() const {
    const Index r = rank();
    Matrix left(U_.rows(), 2 * r);
    Matrix right(V_.rows(), 2 * r);
    left << U_ * K0_ + Y2_, U_;
    right << V_, Y1_;
    return FactoredRank2r(std::move(left), std::move(right), r);
  }

  Matrix dense() const {
    return U_ * K0_ * V_.transpose() + U_ * Y1_.transpose() +
           Y2_ * V_.transpose();
  }

  /// Frobenius norm via the orthogonal decomposition of the three blocks.
  double frobenius_norm() const {
    return std::sqrt(K0_.squaredNorm() + Y1_.squaredNorm() + Y2_.squaredNorm());
  }

  /// Canonical inner product with another element at the same base point.
  double inner(const TangentElement& other) const {
    return K0_.cwiseProduct(other.K0_).sum() +
           Y1_.cwiseProduct(other.Y1_).sum() + Y2_.cwiseProduct(other.Y2_).sum();
  }

  CompactSVD retract(Index r) const { return truncate_tangent(factored(), r); }

 private:
  Matrix U_;
  Matrix V_;
  Matrix K0_;
  Matrix Y1_;
  Matrix Y2_;
};

namespace detail {

/// Ut At^T + Bt Vt^T - Ut Ct Vt^T rewritten at the canonical base.
inline TangentElement assemble_weighted(const WeightedBasis& b, const Matrix& At,
                                        const Matrix& Bt, const Matrix& Ct) {
  const Matrix Su = b.U.transpose() * b.Utilde;
  const Matrix Sv = b.V.transpose() * b.Vtilde;
  const Matrix A = At * Su.transpose();
  const Matrix B = Bt * Sv.transpose() - b.U * (Su * Ct * Sv.transpose());
  return TangentElement::from_components(b.U, b.V, A, B);
}

}  // namespace detail

/// W-orthogonal projection onto the tangent space:
///   Ut Ut^T L^{1/4} Z + Z R^{1/4} Vt Vt^T - Ut Ut^T L^{1/4} Z R^{1/4} Vt Vt^T,
/// evaluated through thin products with Z only.
inline TangentElement weighted_project(const WeightedBasis& b,
                                       const GradientRep& Z) {
  require(Z.rows() == b.U.rows() && Z.cols() == b.V.rows(),
          "dimension mismatch");
  const Matrix At = Z.transpose_times(b.LUtilde);
  const Matrix Bt = Z.times(b.RVtilde);
  const Matrix Ct = b.LUtilde.transpose() * Bt;
  return detail::assemble_weighted(b, At, Bt, Ct);
}

inline TangentElement weighted_project(const WeightedBasis& b, const Matrix& Z) {
  require(Z.rows() == b.U.rows() && Z.cols() == b.V.rows(),
          "dimension mismatch");
  const Matrix At = Z.transpose() * b.LUtilde;
  const Matrix Bt = Z * b.RVtilde;
  const Matrix Ct = b.LUtilde.transpose() * Bt;
  return detail::assemble_weighted(b, At, Bt, Ct);
}

/// Canonical projector U U^T Z + Z V V^T - U U^T Z V V^T.
inline TangentElement canonical_project(const Matrix& U, const Matrix& V,
                                        const GradientRep& Z) {
  require(Z.rows() == U.rows() && Z.cols() == V.rows(), "dimension mismatch");
  const Matrix A = Z.transpose_times(U);
  const Matrix ZV = Z.times(V);
  const Matrix B = ZV - U * (U.transpose() * ZV);
  return TangentElement::from_components(U, V, A, B);
}

inline TangentElement canonical_project(const Matrix& U, const Matrix& V,
                                        const Matrix& Z) {
  return canonical_project(U, V, GradientRep::from_dense(Z));
}

// ---------------------------------------------------------------------------
// Shampoo accumulators.

struct ShampooState {
  Matrix left_accum;   // eps*I + sum G G^T
  Matrix right_accum;  // eps*I + sum G^T G
  double epsilon = 1.0;

  static ShampooState initial(Index n1, Index n2, double epsilon) {
    require(epsilon > 0.0, "epsilon must be positive");
    return {epsilon * Matrix::Identity(n1, n1),
            epsilon * Matrix::Identity(n2, n2), epsilon};
  }
};

inline ShampooState shampoo_update(const ShampooState& state,
                                   const GradientRep& G) {
  require(G.rows() == state.left_accum.rows() &&
              G.cols() == state.right_accum.rows(),
          "dimension mismatch");
  ShampooState next = state;
  if (G.kind() == GradientRep::Kind::sparse) {
    const SparseRowMatrix& s = G.sparse_payload();
    const SparseRowMatrix st = s.transpose();
    next.left_accum += Matrix(SparseRowMatrix(s * st));
    next.right_accum += Matrix(SparseRowMatrix(st * s));
  } else {
    const Matrix dense = G.materialize();
    next.left_accum.noalias() += dense * dense.transpose();
    next.right_accum.noalias() += dense.transpose() * dense;
  }
  next.left_accum = 0.5 * (next.left_accum + next.left_accum.transpose());
  next.right_accum = 0.5 * (next.right_accum + next.right_accum.transpose());
  return next;
}

struct ShampooRoots {
  Matrix left_quarter;        // L^{1/4}
  Matrix left_inv_quarter;    // L^{-1/4}
  Matrix right_quarter;
  Matrix right_inv_quarter;
  double left_min = 0.0;  // extreme eigenvalues of the accumulators
  double left_max = 0.0;
  double right_min = 0.0;
  double right_max = 0.0;
};

namespace detail {

inline void accumulator_roots(const Matrix& A, double epsilon, Matrix& quarter,
                              Matrix& inv_quarter, double& lo, double& hi) {
  const SymmetricEigen eig = symmetric_eigen(A);
  const double scale = eig.values.cwiseAbs().maxCoeff();
  require(eig.values.minCoeff() >= -1e-10 * scale,
          "accumulator not positive semidefinite");
  const auto floor = [epsilon](double x) { return std::max(x, epsilon); };
  lo = floor(eig.values.minCoeff());
  hi = floor(eig.values.maxCoeff());
  quarter = spectral_function(eig, [&](double x) { return std::pow(floor(x), 0.25); });
  inv_quarter =
      spectral_function(eig, [&](double x) { return std::pow(floor(x), -0.25); });
}

}  // namespace detail

inline ShampooRoots shampoo_roots(const ShampooState& state) {
  ShampooRoots roots;
  detail::accumulator_roots(state.left_accum, state.epsilon, roots.left_quarter,
                            roots.left_inv_quarter, roots.left_min,
                            roots.left_max);
  detail::accumulator_roots(state.right_accum, state.epsilon,
                            roots.right_quarter, roots.right_inv_quarter,
                            roots.right_min, roots.right_max);
  return roots;
}

/// L^{-1/4} G R^{-1/4}.
inline Matrix shampoo_direction(const ShampooState& state, const GradientRep& G) {
  const ShampooRoots roots = shampoo_roots(state);
  return roots.left_inv_quarter * G.materialize() * roots.right_inv_quarter;
}

/// Projection of L^{-1/4} G R^{-1/4} under the Shampoo metric without forming
/// the dense preconditioned matrix.
inline TangentElement shampoo_project_direction(const WeightedBasis& b,
                                                const ShampooRoots& roots,
                                                const GradientRep& G) {
  const Matrix At = roots.right_inv_quarter * G.transpose_times(b.Utilde);
  const Matrix GV = G.times(b.Vtilde);
  const Matrix Bt = roots.left_inv_quarter * GV;
  const Matrix Ct = b.Utilde.transpose() * GV;
  return detail::assemble_weighted(b, At, Bt, Ct);
}

}  // namespace lowrank
