#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <stdexcept>
#include <string>

namespace lowrank {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;

/// Error raised by every library routine on invalid input or numerical
/// breakdown. The message is the stable, user-facing part.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

inline void require(bool condition, const std::string& message) {
  if (!condition) throw Error(message);
}

/// Rank-r matrix held as U * diag(S) * V^T.
///
/// U (n1 x r) and V (n2 x r) have orthonormal columns, S is nonnegative and
/// nonincreasing. A rank-deficient point keeps r columns and pads S with zeros.
struct CompactSVD {
  Matrix U;
  Vector S;
  Matrix V;

  Index rows() const { return U.rows(); }
  Index cols() const { return V.rows(); }
  Index rank() const { return S.size(); }

  Matrix dense() const { return U * S.asDiagonal() * V.transpose(); }

  /// Left factor U * diag(S), so that X = left() * V^T.
  Matrix left() const { return U * S.asDiagonal(); }

  double frobenius_norm() const { return S.norm(); }

  static CompactSVD zero(Index n1, Index n2, Index r) {
    CompactSVD x;
    x.U = Matrix::Identity(n1, r);
    x.S = Vector::Zero(r);
    x.V = Matrix::Identity(n2, r);
    return x;
  }
};

/// A matrix of rank at most k held as Left * Right^T, k <= 2r.
class FactoredRank2r {
 public:
  FactoredRank2r() = default;

  FactoredRank2r(Matrix left, Matrix right, Index r)
      : left_(std::move(left)), right_(std::move(right)) {
    require(left_.cols() == right_.cols(), "factor widths differ");
    require(left_.cols() <= 2 * r, "factored width exceeds 2r");
  }

  const Matrix& left() const { return left_; }
  const Matrix& right() const { return right_; }
  Index rows() const { return left_.rows(); }
  Index cols() const { return right_.rows(); }
  Index width() const { return left_.cols(); }

  Matrix dense() const { return left_ * right_.transpose(); }

 private:
  Matrix left_;
  Matrix right_;
};

}  // namespace lowrank
