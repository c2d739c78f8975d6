#pragma once

#include <lowrank/core.hpp>

#include <Eigen/SparseCore>

#include <algorithm>
#include <cmath>
#include <memory>
#include <utility>
#include <variant>

namespace lowrank {

using SparseRowMatrix = Eigen::SparseMatrix<double, Eigen::RowMajor, int>;

/// Ambient gradient A*(p), stored in whatever form the operator produces.
///
/// - dense: an explicit n1 x n2 matrix (Gaussian sensing).
/// - sparse: values on the sampled entries (completion).
/// - lowrank_combination: diag(l) * sum_i p_i a_i a_i^T * diag(r), kept as its
///   coefficient vector and sensing vectors (phase retrieval), with a dense
///   cache for small n.
class GradientRep {
 public:
  enum class Kind { dense, sparse, lowrank_combination };

  /// Dense materialization is cached for combinations up to this dimension.
  static constexpr Index kDenseCacheLimit = 512;

  GradientRep() : payload_(Matrix()) {}

  static GradientRep from_dense(Matrix m) {
    GradientRep g;
    g.payload_ = std::move(m);
    return g;
  }

  static GradientRep from_sparse(SparseRowMatrix s) {
    GradientRep g;
    g.payload_ = std::move(s);
    return g;
  }

  /// vectors: m x n, row i is a_i.
  static GradientRep from_combination(std::shared_ptr<const Matrix> vectors,
                                      Vector coefficients) {
    const Index n = vectors->cols();
    Combination c{std::move(vectors), std::move(coefficients),
                  Vector::Ones(n), Vector::Ones(n), nullptr};
    if (n <= kDenseCacheLimit) {
      c.dense_cache = std::make_shared<const Matrix>(c.evaluate());
    }
    GradientRep g;
    g.payload_ = std::move(c);
    return g;
  }

  Kind kind() const { return static_cast<Kind>(payload_.index()); }

  Index rows() const {
    return std::visit([](const auto& p) -> Index { return rows_of(p); },
                      payload_);
  }
  Index cols() const {
    return std::visit([](const auto& p) -> Index { return cols_of(p); },
                      payload_);
  }

  Matrix materialize() const {
    switch (kind()) {
      case Kind::dense:
        return std::get<Matrix>(payload_);
      case Kind::sparse:
        return Matrix(std::get<SparseRowMatrix>(payload_));
      case Kind::lowrank_combination:
        return std::get<Combination>(payload_).dense();
    }
    return {};
  }

  /// ||G(i,:)||_2^2 for every row.
  Vector row_sq_norms() const {
    switch (kind()) {
      case Kind::dense:
        return std::get<Matrix>(payload_).rowwise().squaredNorm();
      case Kind::sparse: {
        const auto& s = std::get<SparseRowMatrix>(payload_);
        Vector out = Vector::Zero(s.rows());
        for (Index i = 0; i < s.outerSize(); ++i) {
          for (SparseRowMatrix::InnerIterator it(s, i); it; ++it) {
            out(i) += it.value() * it.value();
          }
        }
        return out;
      }
      case Kind::lowrank_combination:
        return std::get<Combination>(payload_).dense().rowwise().squaredNorm();
    }
    return {};
  }

  /// ||G(:,j)||_2^2 for every column.
  Vector col_sq_norms() const {
    switch (kind()) {
      case Kind::dense:
        return std::get<Matrix>(payload_).colwise().squaredNorm().transpose();
      case Kind::sparse: {
        const auto& s = std::get<SparseRowMatrix>(payload_);
        Vector out = Vector::Zero(s.cols());
        for (Index i = 0; i < s.outerSize(); ++i) {
          for (SparseRowMatrix::InnerIterator it(s, i); it; ++it) {
            out(it.col()) += it.value() * it.value();
          }
        }
        return out;
      }
      case Kind::lowrank_combination:
        return std::get<Combination>(payload_)
            .dense()
            .colwise()
            .squaredNorm()
            .transpose();
    }
    return {};
  }

  double vee_norm() const {
    if (rows() == 0 || cols() == 0) return 0.0;
    return std::sqrt(
        std::max(row_sq_norms().maxCoeff(), col_sq_norms().maxCoeff()));
  }

  /// G * B for a thin B.
  Matrix times(const Matrix& B) const {
    switch (kind()) {
      case Kind::dense:
        return std::get<Matrix>(payload_) * B;
      case Kind::sparse:
        return std::get<SparseRowMatrix>(payload_) * B;
      case Kind::lowrank_combination:
        return std::get<Combination>(payload_).times(B, false);
    }
    return {};
  }

  /// G^T * B for a thin B.
  Matrix transpose_times(const Matrix& B) const {
    switch (kind()) {
      case Kind::dense:
        return std::get<Matrix>(payload_).transpose() * B;
      case Kind::sparse:
        return std::get<SparseRowMatrix>(payload_).transpose() * B;
      case Kind::lowrank_combination:
        return std::get<Combination>(payload_).times(B, true);
    }
    return {};
  }

  /// diag(left) * G * diag(right), same representation.
  GradientRep scaled(const Vector& left, const Vector& right) const {
    require(left.size() == rows() && right.size() == cols(),
            "scaling dimension mismatch");
    GradientRep g;
    switch (kind()) {
      case Kind::dense:
        g.payload_ = Matrix(left.asDiagonal() * std::get<Matrix>(payload_) *
                            right.asDiagonal());
        break;
      case Kind::sparse: {
        SparseRowMatrix s = std::get<SparseRowMatrix>(payload_);
        for (Index i = 0; i < s.outerSize(); ++i) {
          for (SparseRowMatrix::InnerIterator it(s, i); it; ++it) {
            it.valueRef() *= left(i) * right(it.col());
          }
        }
        g.payload_ = std::move(s);
        break;
      }
      case Kind::lowrank_combination: {
        Combination c = std::get<Combination>(payload_);
        c.left_scale = c.left_scale.cwiseProduct(left);
        c.right_scale = c.right_scale.cwiseProduct(right);
        if (c.dense_cache) {
          c.dense_cache = std::make_shared<const Matrix>(
              left.asDiagonal() * (*c.dense_cache) * right.asDiagonal());
        }
        g.payload_ = std::move(c);
        break;
      }
    }
    return g;
  }

  const Matrix& dense_payload() const { return std::get<Matrix>(payload_); }
  const SparseRowMatrix& sparse_payload() const {
    return std::get<SparseRowMatrix>(payload_);
  }
  const Vector& combination_coefficients() const {
    return std::get<Combination>(payload_).coefficients;
  }
  bool has_dense_cache() const {
    return kind() == Kind::lowrank_combination &&
           std::get<Combination>(payload_).dense_cache != nullptr;
  }

 private:
  struct Combination {
    std::shared_ptr<const Matrix> vectors;
    Vector coefficients;
    Vector left_scale;
    Vector right_scale;
    std::shared_ptr<const Matrix> dense_cache;

    Matrix evaluate() const {
      const Matrix& a = *vectors;
      Matrix g = a.transpose() * coefficients.asDiagonal() * a;
      return left_scale.asDiagonal() * g * right_scale.asDiagonal();
    }

    Matrix dense() const { return dense_cache ? *dense_cache : evaluate(); }

    Matrix times(const Matrix& B, bool transposed) const {
      if (dense_cache) {
        return transposed ? Matrix(dense_cache->transpose() * B)
                          : Matrix(*dense_cache * B);
      }
      const Vector& inner = transposed ? left_scale : right_scale;
      const Vector& outer = transposed ? right_scale : left_scale;
      const Matrix& a = *vectors;
      Matrix t = a * (inner.asDiagonal() * B);
      t = coefficients.asDiagonal() * t;
      return outer.asDiagonal() * (a.transpose() * t);
    }
  };

  static Index rows_of(const Matrix& m) { return m.rows(); }
  static Index rows_of(const SparseRowMatrix& s) { return s.rows(); }
  static Index rows_of(const Combination& c) { return c.vectors->cols(); }
  static Index cols_of(const Matrix& m) { return m.cols(); }
  static Index cols_of(const SparseRowMatrix& s) { return s.cols(); }
  static Index cols_of(const Combination& c) { return c.vectors->cols(); }

  std::variant<Matrix, SparseRowMatrix, Combination> payload_;
};

}  // namespace lowrank
