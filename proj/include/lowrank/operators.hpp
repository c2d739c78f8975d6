#pragma once

// Linear measurement operators y_i = <A_i, Z> and their adjoints
// A*(p) = sum_i p_i A_i for entry sampling, dense Gaussian sensing and lifted
// real phase retrieval.

#include <lowrank/core.hpp>
#include <lowrank/gradient.hpp>
#include <lowrank/random.hpp>

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <limits>
#include <memory>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_set>
#include <utility>
#include <vector>

namespace lowrank {

class SensingOperator {
 public:
  virtual ~SensingOperator() = default;

  virtual std::string_view kind() const = 0;
  virtual Index rows() const = 0;
  virtual Index cols() const = 0;
  /// Number of measurements m.
  virtual Index size() const = 0;

  /// Measurements of left * right^T.
  virtual Vector apply(const Matrix& left, const Matrix& right) const = 0;
  virtual Vector apply_dense(const Matrix& Z) const = 0;
  virtual GradientRep adjoint(const Vector& p) const = 0;

  Vector apply(const CompactSVD& X) const { return apply(X.left(), X.V); }
  Vector apply(const FactoredRank2r& W) const {
    return apply(W.left(), W.right());
  }

 protected:
  void check_factors(const Matrix& left, const Matrix& right) const {
    require(left.rows() == rows() && right.rows() == cols() &&
                left.cols() == right.cols(),
            "dimension mismatch");
  }
  void check_dense(const Matrix& Z) const {
    require(Z.rows() == rows() && Z.cols() == cols(), "dimension mismatch");
  }
  void check_measurements(const Vector& p) const {
    require(p.size() == size(), "measurement length mismatch");
  }
};

struct Sample {
  int row;
  int col;
  friend bool operator==(const Sample&, const Sample&) = default;
};

/// Entry sampling on a duplicate-free index set, kept in row-major order so
/// that measurement k is the k-th stored entry of the CSR layout.
class CompletionOperator final : public SensingOperator {
 public:
  CompletionOperator(Index n1, Index n2, std::vector<Sample> omega)
      : n1_(n1), n2_(n2) {
    require(n1 > 0 && n2 > 0, "empty matrix");
    require(!omega.empty(), "no observations");
    std::sort(omega.begin(), omega.end(), [](const Sample& a, const Sample& b) {
      return a.row != b.row ? a.row < b.row : a.col < b.col;
    });
    for (std::size_t k = 0; k < omega.size(); ++k) {
      require(omega[k].row >= 0 && omega[k].row < n1 && omega[k].col >= 0 &&
                  omega[k].col < n2,
              "sample index out of range");
      require(k == 0 || !(omega[k] == omega[k - 1]), "duplicate sample");
    }
    const auto m = static_cast<Index>(omega.size());
    require(m <= std::numeric_limits<int>::max(), "too many samples");
    row_idx_.resize(m);
    col_idx_.resize(m);
    row_ptr_.assign(static_cast<std::size_t>(n1) + 1, 0);
    for (Index k = 0; k < m; ++k) {
      row_idx_[k] = omega[k].row;
      col_idx_[k] = omega[k].col;
      ++row_ptr_[static_cast<std::size_t>(omega[k].row) + 1];
    }
    for (std::size_t i = 0; i < static_cast<std::size_t>(n1); ++i) {
      row_ptr_[i + 1] += row_ptr_[i];
    }
  }

  std::string_view kind() const override { return "completion"; }
  Index rows() const override { return n1_; }
  Index cols() const override { return n2_; }
  Index size() const override { return static_cast<Index>(row_idx_.size()); }

  double sampling_ratio() const {
    return static_cast<double>(size()) /
           (static_cast<double>(n1_) * static_cast<double>(n2_));
  }

  Sample sample(Index k) const { return {row_idx_[k], col_idx_[k]}; }
  const std::vector<int>& row_indices() const { return row_idx_; }
  const std::vector<int>& col_indices() const { return col_idx_; }
  const std::vector<int>& row_pointers() const { return row_ptr_; }

  using SensingOperator::apply;
  Vector apply(const Matrix& left, const Matrix& right) const override {
    check_factors(left, right);
    const Matrix lt = left.transpose();
    const Matrix rt = right.transpose();
    Vector y(size());
    for (Index k = 0; k < size(); ++k) {
      y(k) = lt.col(row_idx_[k]).dot(rt.col(col_idx_[k]));
    }
    return y;
  }

  Vector apply_dense(const Matrix& Z) const override {
    check_dense(Z);
    Vector y(size());
    for (Index k = 0; k < size(); ++k) y(k) = Z(row_idx_[k], col_idx_[k]);
    return y;
  }

  GradientRep adjoint(const Vector& p) const override {
    check_measurements(p);
    const Eigen::Map<const SparseRowMatrix> view(
        n1_, n2_, size(), row_ptr_.data(), col_idx_.data(), p.data());
    return GradientRep::from_sparse(SparseRowMatrix(view));
  }

 private:
  Index n1_;
  Index n2_;
  std::vector<int> row_idx_;
  std::vector<int> col_idx_;
  std::vector<int> row_ptr_;
};

/// Dense sensing with m general measurement matrices, row i of the stack being
/// vec(A_i) in column-major order.
class GaussianOperator final : public SensingOperator {
 public:
  GaussianOperator(Index n1, Index n2, Matrix stack)
      : n1_(n1), n2_(n2), stack_(std::move(stack)) {
    require(n1 > 0 && n2 > 0, "empty matrix");
    require(stack_.rows() >= 1, "no measurements");
    require(stack_.cols() == n1 * n2, "measurement matrix size mismatch");
  }

  std::string_view kind() const override { return "gaussian"; }
  Index rows() const override { return n1_; }
  Index cols() const override { return n2_; }
  Index size() const override { return stack_.rows(); }

  /// A_i as an n1 x n2 matrix.
  Matrix measurement(Index i) const {
    return Eigen::Map<const Matrix>(Vector(stack_.row(i).transpose()).data(),
                                    n1_, n2_);
  }
  const Matrix& stack() const { return stack_; }

  using SensingOperator::apply;
  Vector apply(const Matrix& left, const Matrix& right) const override {
    check_factors(left, right);
    return apply_dense(left * right.transpose());
  }

  Vector apply_dense(const Matrix& Z) const override {
    check_dense(Z);
    return stack_ * Eigen::Map<const Vector>(Z.data(), Z.size());
  }

  GradientRep adjoint(const Vector& p) const override {
    check_measurements(p);
    Vector flat = stack_.transpose() * p;
    return GradientRep::from_dense(Eigen::Map<const Matrix>(flat.data(), n1_, n2_));
  }

 private:
  Index n1_;
  Index n2_;
  Matrix stack_;
};

/// Lifted phaseless measurements <Z, a_i a_i^T> = a_i^T Z a_i.
class PhaseRetrievalOperator final : public SensingOperator {
 public:
  /// vectors: m x n, row i is a_i.
  explicit PhaseRetrievalOperator(Matrix vectors)
      : vectors_(std::make_shared<const Matrix>(std::move(vectors))) {
    require(vectors_->cols() > 0, "empty matrix");
    require(vectors_->rows() >= 1, "no measurements");
  }

  std::string_view kind() const override { return "phase-retrieval"; }
  Index rows() const override { return vectors_->cols(); }
  Index cols() const override { return vectors_->cols(); }
  Index size() const override { return vectors_->rows(); }

  const Matrix& vectors() const { return *vectors_; }

  using SensingOperator::apply;
  Vector apply(const Matrix& left, const Matrix& right) const override {
    check_factors(left, right);
    const Matrix al = *vectors_ * left;
    const Matrix ar = *vectors_ * right;
    return al.cwiseProduct(ar).rowwise().sum();
  }

  Vector apply_dense(const Matrix& Z) const override {
    check_dense(Z);
    return (*vectors_ * Z).cwiseProduct(*vectors_).rowwise().sum();
  }

  GradientRep adjoint(const Vector& p) const override {
    check_measurements(p);
    return GradientRep::from_combination(vectors_, p);
  }

 private:
  std::shared_ptr<const Matrix> vectors_;
};

/// Upper bound on dense Gaussian operator storage.
inline constexpr std::uint64_t kDefaultGaussianStorageCap = 2ULL << 30;

/// Omega drawn uniformly among all subsets of size m (Floyd's algorithm).
inline CompletionOperator make_completion(Index n1, Index n2, Index m,
                                          std::uint64_t seed) {
  require(n1 > 0 && n2 > 0, "empty matrix");
  require(m >= 1, "no observations");
  const auto total = static_cast<std::uint64_t>(n1) * static_cast<std::uint64_t>(n2);
  require(static_cast<std::uint64_t>(m) <= total,
          "more samples than matrix entries");
  Rng rng(seed);
  std::vector<Sample> omega;
  omega.reserve(static_cast<std::size_t>(m));
  if (static_cast<std::uint64_t>(m) == total) {
    for (Index i = 0; i < n1; ++i)
      for (Index j = 0; j < n2; ++j)
        omega.push_back({static_cast<int>(i), static_cast<int>(j)});
  } else {
    std::unordered_set<std::uint64_t> chosen;
    chosen.reserve(static_cast<std::size_t>(m) * 2);
    std::vector<std::uint64_t> picks;
    picks.reserve(static_cast<std::size_t>(m));
    for (std::uint64_t j = total - static_cast<std::uint64_t>(m); j < total; ++j) {
      const std::uint64_t t = std::uniform_int_distribution<std::uint64_t>(0, j)(rng);
      const std::uint64_t pick = chosen.insert(t).second ? t : j;
      if (pick == j) chosen.insert(j);
      picks.push_back(pick);
    }
    std::sort(picks.begin(), picks.end());
    const auto cols = static_cast<std::uint64_t>(n2);
    for (std::uint64_t t : picks) {
      omega.push_back({static_cast<int>(t / cols), static_cast<int>(t % cols)});
    }
  }
  return CompletionOperator(n1, n2, std::move(omega));
}

inline GaussianOperator make_gaussian(
    Index n1, Index n2, Index m, std::uint64_t seed,
    std::uint64_t storage_cap_bytes = kDefaultGaussianStorageCap) {
  require(m >= 1, "no measurements");
  require(n1 > 0 && n2 > 0, "empty matrix");
  const double bytes = static_cast<double>(m) * static_cast<double>(n1) *
                       static_cast<double>(n2) * sizeof(double);
  require(bytes <= static_cast<double>(storage_cap_bytes),
          "gaussian operator exceeds storage cap");
  Rng rng(seed);
  std::normal_distribution<double> normal;
  Matrix stack(m, n1 * n2);
  for (Index i = 0; i < m; ++i)
    for (Index k = 0; k < n1 * n2; ++k) stack(i, k) = normal(rng);
  return GaussianOperator(n1, n2, std::move(stack));
}

inline PhaseRetrievalOperator make_phase_retrieval(Index n, Index m,
                                                    std::uint64_t seed) {
  require(m >= 1, "no measurements");
  require(n > 0, "empty matrix");
  Rng rng(seed);
  std::normal_distribution<double> normal;
  Matrix vectors(m, n);
  for (Index i = 0; i < m; ++i)
    for (Index k = 0; k < n; ++k) vectors(i, k) = normal(rng);
  return PhaseRetrievalOperator(std::move(vectors));
}

// ---------------------------------------------------------------------------
// Omega import/export: one "row col value" triple per line, 0-based.

inline void write_triples(std::ostream& out, const CompletionOperator& op,
                          const Vector& values) {
  require(values.size() == op.size(), "measurement length mismatch");
  out << std::setprecision(17);
  for (Index k = 0; k < op.size(); ++k) {
    const Sample s = op.sample(k);
    out << s.row << ' ' << s.col << ' ' << values(k) << '\n';
  }
}

inline void write_triples(const std::string& path, const CompletionOperator& op,
                          const Vector& values) {
  std::ofstream out(path);
  require(static_cast<bool>(out), "cannot open " + path + " for writing");
  write_triples(out, op, values);
  require(static_cast<bool>(out), "write failed: " + path);
}

struct ObservedEntries {
  std::unique_ptr<CompletionOperator> op;
  Vector values;  // aligned with the operator's row-major sample order
};

/// Builds an operator from (row, col, value) records. Dimensions default to
/// max index + 1.
inline ObservedEntries make_observed(std::vector<Sample> samples,
                                     const std::vector<double>& values,
                                     Index n1 = 0, Index n2 = 0) {
  require(!samples.empty(), "no observations");
  for (const Sample& s : samples) {
    n1 = std::max<Index>(n1, s.row + 1);
    n2 = std::max<Index>(n2, s.col + 1);
  }
  std::vector<std::size_t> order(samples.size());
  for (std::size_t k = 0; k < order.size(); ++k) order[k] = k;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return samples[a].row != samples[b].row ? samples[a].row < samples[b].row
                                            : samples[a].col < samples[b].col;
  });
  ObservedEntries out;
  out.values.resize(static_cast<Index>(samples.size()));
  for (std::size_t k = 0; k < order.size(); ++k) {
    out.values(static_cast<Index>(k)) = values[order[k]];
  }
  out.op = std::make_unique<CompletionOperator>(n1, n2, std::move(samples));
  return out;
}

inline ObservedEntries read_triples(std::istream& in, Index n1 = 0, Index n2 = 0) {
  std::vector<Sample> samples;
  std::vector<double> values;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::istringstream fields(line);
    long long row = -1;
    long long col = -1;
    double value = 0.0;
    std::string extra;
    if (!(fields >> row >> col >> value) || (fields >> extra) || row < 0 ||
        col < 0 || row > std::numeric_limits<int>::max() ||
        col > std::numeric_limits<int>::max()) {
      throw Error("malformed line " + std::to_string(lineno));
    }
    samples.push_back({static_cast<int>(row), static_cast<int>(col)});
    values.push_back(value);
  }
  return make_observed(std::move(samples), values, n1, n2);
}

}  // namespace lowrank
