#pragma once

// Iterations on the fixed-rank manifold: PRGD (data-driven diagonal metric),
// canonical RGD, RGD under the Shampoo metric, and NIHT, plus spectral
// initialization, step-size policies and the stopping/trace machinery.

#include <lowrank/core.hpp>
#include <lowrank/linalg.hpp>
#include <lowrank/metric.hpp>
#include <lowrank/operators.hpp>

#include <chrono>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace lowrank {

enum class Algorithm { prgd, rgd, shampoo_rgd, niht };

inline std::string_view to_string(Algorithm a) {
  switch (a) {
    case Algorithm::prgd:
      return "prgd";
    case Algorithm::rgd:
      return "rgd";
    case Algorithm::shampoo_rgd:
      return "shampoo-rgd";
    case Algorithm::niht:
      return "niht";
  }
  return "?";
}

struct StepPolicy {
  enum class Kind { constant, theoretical, exact_line_search };
  Kind kind = Kind::constant;
  /// Base step for `constant`. Preconditioned algorithms multiply it by the
  /// harmonic mean 2 / (1/mu + 1/nu) of their metric bounds, which is 1 for
  /// the canonical metric.
  double value = 1.0;

  static StepPolicy constant(double alpha) { return {Kind::constant, alpha}; }
  static StepPolicy theoretical() { return {Kind::theoretical, 1.0}; }
  static StepPolicy exact_line_search() {
    return {Kind::exact_line_search, 1.0};
  }
};

struct EpsilonPolicy {
  enum class Kind { vee_squared, constant };
  Kind kind = Kind::vee_squared;
  /// Multiplier on ||G||_vee^2 for `vee_squared`, absolute value for `constant`.
  double value = 1.0;

  static EpsilonPolicy vee_squared(double scale = 1.0) {
    return {Kind::vee_squared, scale};
  }
  static EpsilonPolicy constant(double eps) { return {Kind::constant, eps}; }
};

struct StoppingRule {
  enum class Kind { relative_change, residual, truth_error };
  Kind kind = Kind::relative_change;
  double tolerance = 1e-5;

  static StoppingRule relative_change(double tol) {
    return {Kind::relative_change, tol};
  }
  static StoppingRule residual(double tol) { return {Kind::residual, tol}; }
  static StoppingRule truth_error(double tol) {
    return {Kind::truth_error, tol};
  }
};

struct SolverConfig {
  Algorithm algorithm = Algorithm::prgd;
  Index rank = 1;
  StepPolicy step;
  EpsilonPolicy epsilon;
  int max_iterations = 500;
  StoppingRule stop;
  std::uint64_t seed = 0;
  /// X_0 = init_scale * H_r(A* y); 1 / s undoes the scale s of A*A.
  double init_scale = 1.0;
  /// Status becomes `diverged` once the truth error or residual exceeds this
  /// multiple of its initial value.
  double divergence_factor = 1e6;
};

enum class SolveStatus { converged, max_iters, diverged, error };

inline std::string_view to_string(SolveStatus s) {
  switch (s) {
    case SolveStatus::converged:
      return "converged";
    case SolveStatus::max_iters:
      return "max-iters";
    case SolveStatus::diverged:
      return "diverged";
    case SolveStatus::error:
      return "error";
  }
  return "?";
}

struct IterationRecord {
  int iteration = 0;
  double residual_rel = 0.0;
  double truth_error_rel = std::numeric_limits<double>::quiet_NaN();
  double step_size = 0.0;
  double epsilon = 0.0;
  double elapsed_seconds = 0.0;
};

struct SolveTrace {
  std::vector<IterationRecord> records;
  SolveStatus status = SolveStatus::max_iters;
  std::string message;
  CompactSVD solution;

  /// Number of steps taken (the initialization record is not counted).
  int iterations() const {
    return records.empty() ? 0 : static_cast<int>(records.size()) - 1;
  }
  const IterationRecord& last() const { return records.back(); }
};

// ---------------------------------------------------------------------------
// Step sizes.

struct StepContext {
  MetricBounds bounds{1.0, 1.0};
  const Vector* residual = nullptr;            // A X_t - y
  const Vector* measured_direction = nullptr;  // A D
};

/// 2 / (1/mu + 1/nu).
inline double harmonic_step(const MetricBounds& b) {
  return 2.0 / (1.0 / b.mu + 1.0 / b.nu);
}

inline double step_size(const StepPolicy& policy, const StepContext& ctx) {
  switch (policy.kind) {
    case StepPolicy::Kind::constant:
      return policy.value * harmonic_step(ctx.bounds);
    case StepPolicy::Kind::theoretical:
      return harmonic_step(ctx.bounds);
    case StepPolicy::Kind::exact_line_search: {
      require(ctx.residual && ctx.measured_direction,
              "line search needs the residual and the measured direction");
      const double den = ctx.measured_direction->squaredNorm();
      require(den > 0.0, "flat direction");
      return ctx.measured_direction->dot(*ctx.residual) / den;
    }
  }
  return 0.0;
}

// ---------------------------------------------------------------------------
// Individual steps. Each works from the residual A X_t - y of the current
// iterate so that the driver evaluates the operator once per iteration.

struct StepOutput {
  CompactSVD next;
  double step_size = 0.0;
  double epsilon = 0.0;
};

inline CompactSVD spectral_init(const SensingOperator& op, const Vector& y,
                                Index r) {
  require(y.size() == op.size(), "measurement length mismatch");
  return hard_threshold(op.adjoint(y).materialize(), r);
}

inline Vector residual_of(const SensingOperator& op, const CompactSVD& X,
                          const Vector& y) {
  return op.apply(X) - y;
}

namespace detail {

inline double choose_epsilon(const EpsilonPolicy& policy, const GradientRep& G) {
  if (policy.kind == EpsilonPolicy::Kind::constant) {
    require(policy.value > 0.0, "epsilon must be positive");
    return policy.value;
  }
  const double eps = policy.value * lowrank::choose_epsilon(G);
  return eps > kEpsilonFloor ? eps : kEpsilonFloor;
}

inline double policy_step(const StepPolicy& policy, const MetricBounds& bounds,
                          const SensingOperator& op, const Vector& residual,
                          const TangentElement& xi) {
  StepContext ctx;
  ctx.bounds = bounds;
  ctx.residual = &residual;
  Vector measured;
  if (policy.kind == StepPolicy::Kind::exact_line_search) {
    measured = op.apply(xi.factored());
    ctx.measured_direction = &measured;
  }
  return step_size(policy, ctx);
}

}  // namespace detail

/// Canonical Riemannian gradient P_T(G).
inline TangentElement canonical_gradient(const CompactSVD& X,
                                         const GradientRep& G) {
  return canonical_project(X.U, X.V, G);
}

/// Metric gradient P~_T(L^{-1/4} G R^{-1/4}) under a diagonal preconditioner.
inline TangentElement preconditioned_gradient(const CompactSVD& X,
                                              const GradientRep& G,
                                              const Preconditioner& P) {
  const WeightedBasis basis = make_weighted_basis(X.U, X.V, P);
  return weighted_project(basis, precondition_direction(P, G));
}

inline StepOutput rgd_step_from_residual(const CompactSVD& X,
                                         const SensingOperator& op,
                                         const Vector& residual,
                                         const StepPolicy& policy) {
  if (residual.squaredNorm() == 0.0) return {X, 0.0, 0.0};
  const GradientRep G = op.adjoint(residual);
  const TangentElement xi = canonical_gradient(X, G);
  const double alpha = detail::policy_step(policy, {1.0, 1.0}, op, residual, xi);
  return {TangentElement::step(X, alpha, xi).retract(X.rank()), alpha, 0.0};
}

/// X_{t+1} = H_r(X_t - alpha P_T(A*(A X_t - y))).
inline CompactSVD rgd_step(const CompactSVD& X, const SensingOperator& op,
                           const Vector& y, const StepPolicy& policy) {
  return rgd_step_from_residual(X, op, residual_of(op, X, y), policy).next;
}

/// One PRGD step. `fixed` replaces the data-driven preconditioner when given.
inline StepOutput prgd_step_from_residual(const CompactSVD& X,
                                          const SensingOperator& op,
                                          const Vector& residual,
                                          const SolverConfig& config,
                                          const Preconditioner* fixed = nullptr) {
  if (residual.squaredNorm() == 0.0) return {X, 0.0, 0.0};
  const GradientRep G = op.adjoint(residual);
  const Preconditioner P =
      fixed ? *fixed
            : build_preconditioner(G, detail::choose_epsilon(config.epsilon, G));
  const TangentElement xi = preconditioned_gradient(X, G, P);
  const double alpha =
      detail::policy_step(config.step, metric_bounds(P), op, residual, xi);
  return {TangentElement::step(X, alpha, xi).retract(X.rank()), alpha,
          P.epsilon};
}

inline StepOutput prgd_step(const CompactSVD& X, const SensingOperator& op,
                            const Vector& y, const SolverConfig& config,
                            const Preconditioner* fixed = nullptr) {
  return prgd_step_from_residual(X, op, residual_of(op, X, y), config, fixed);
}

/// RGD under the metric <L^{1/4} Z R^{1/4}, Y> with accumulated Shampoo
/// factors. `state` is created on the first call from the epsilon policy.
inline StepOutput shampoo_step_from_residual(const CompactSVD& X,
                                             const SensingOperator& op,
                                             const Vector& residual,
                                             const SolverConfig& config,
                                             std::optional<ShampooState>& state) {
  if (residual.squaredNorm() == 0.0) return {X, 0.0, state ? state->epsilon : 0.0};
  const GradientRep G = op.adjoint(residual);
  if (!state) {
    state = ShampooState::initial(G.rows(), G.cols(),
                                  detail::choose_epsilon(config.epsilon, G));
  }
  *state = shampoo_update(*state, G);
  const ShampooRoots roots = shampoo_roots(*state);
  const WeightedBasis basis = make_weighted_basis(
      X.U, X.V, roots.left_quarter, roots.right_quarter);
  const TangentElement xi = shampoo_project_direction(basis, roots, G);
  const MetricBounds bounds{
      std::pow(roots.left_min * roots.right_min, 0.25),
      std::pow(roots.left_max * roots.right_max, 0.25)};
  const double alpha = detail::policy_step(config.step, bounds, op, residual, xi);
  return {TangentElement::step(X, alpha, xi).retract(X.rank()), alpha,
          state->epsilon};
}

/// Normalized IHT: X_{t+1} = H_r(X_t - alpha G) with
/// alpha = ||P_U G||_F^2 / ||A(P_U G)||_2^2.
/// Above this many entries the NIHT truncation runs matrix-free.
inline constexpr Index kNihtDenseLimit = 250000;

inline StepOutput niht_step_from_residual(const CompactSVD& X,
                                          const SensingOperator& op,
                                          const Vector& residual) {
  if (residual.squaredNorm() == 0.0) return {X, 0.0, 0.0};
  const GradientRep G = op.adjoint(residual);
  const Matrix GtU = G.transpose_times(X.U);
  double num = GtU.squaredNorm();
  double den = op.apply(X.U, GtU).squaredNorm();
  const bool dense = X.rows() * X.cols() <= kNihtDenseLimit;
  Matrix dense_g;
  if (dense || num == 0.0) dense_g = G.materialize();
  if (num == 0.0) {
    // Column-space projection vanishes; normalize with the full gradient.
    num = dense_g.squaredNorm();
    den = op.apply_dense(dense_g).squaredNorm();
  }
  require(den > 0.0, "flat direction");
  const double alpha = num / den;
  const Index r = X.rank();
  if (!dense) {
    // H_r(X - alpha G) from products with thin blocks, seeded by the current
    // row space and the gradient's image of the column space.
    const Index k = std::min<Index>(2 * r, std::min(X.rows(), X.cols()));
    Matrix start(X.cols(), k);
    start.leftCols(r) = X.V;
    start.rightCols(k - r) = GtU.leftCols(k - r);
    auto times = [&](const Matrix& B) -> Matrix {
      Matrix out = X.left() * (X.V.transpose() * B);
      out.noalias() -= alpha * G.times(B);
      return out;
    };
    auto transpose_times = [&](const Matrix& B) -> Matrix {
      Matrix out = X.V * (X.left().transpose() * B);
      out.noalias() -= alpha * G.transpose_times(B);
      return out;
    };
    if (auto next = subspace_svd(times, transpose_times, start, r, 1e-12, 200)) {
      return {std::move(*next), alpha, 0.0};
    }
    dense_g = G.materialize();
  }
  Matrix W = X.dense();
  W.noalias() -= alpha * dense_g;
  return {hard_threshold(W, r), alpha, 0.0};
}

inline CompactSVD niht_step(const CompactSVD& X, const SensingOperator& op,
                            const Vector& y) {
  return niht_step_from_residual(X, op, residual_of(op, X, y)).next;
}

// ---------------------------------------------------------------------------
// Driver.

inline void validate(const SolverConfig& config, const SensingOperator& op,
                     const Vector& y, bool has_truth) {
  require(y.size() == op.size(), "measurement length mismatch");
  require(config.rank >= 1 && config.rank <= std::min(op.rows(), op.cols()),
          "rank out of range");
  require(config.stop.tolerance > 0.0, "stopping tolerance must be positive");
  require(config.max_iterations >= 0, "max iterations must be nonnegative");
  require(config.init_scale > 0.0 && std::isfinite(config.init_scale),
          "initial scale must be positive");
  require(config.stop.kind != StoppingRule::Kind::truth_error || has_truth,
          "truth-error stopping needs a ground truth");
  if (config.step.kind == StepPolicy::Kind::constant) {
    require(config.step.value >= 0.0, "step size must be nonnegative");
  }
}

/// Runs the configured algorithm from the spectral initializer (or `initial`)
/// until the stopping rule fires. Deterministic for fixed inputs.
inline SolveTrace solve(const SensingOperator& op, const Vector& y,
                        const CompactSVD* truth, const SolverConfig& config,
                        const CompactSVD* initial = nullptr) {
  validate(config, op, y, truth != nullptr);
  using Clock = std::chrono::steady_clock;
  const auto start = Clock::now();
  const auto elapsed = [&] {
    return std::chrono::duration<double>(Clock::now() - start).count();
  };

  SolveTrace trace;
  const double y_norm = y.norm();
  const double y_scale = y_norm > 0.0 ? y_norm : 1.0;
  const double truth_norm = truth ? truth->frobenius_norm() : 0.0;
  const double truth_scale = truth_norm > 0.0 ? truth_norm : 1.0;
  const auto truth_error = [&](const CompactSVD& X) {
    return truth ? distance(X, *truth) / truth_scale
                 : std::numeric_limits<double>::quiet_NaN();
  };

  try {
    CompactSVD X = initial ? *initial : spectral_init(op, y, config.rank);
    if (!initial) X.S *= config.init_scale;
    require(X.rank() == config.rank, "initial point has the wrong rank");
    Vector residual = residual_of(op, X, y);

    IterationRecord rec;
    rec.residual_rel = residual.norm() / y_scale;
    rec.truth_error_rel = truth_error(X);
    rec.elapsed_seconds = elapsed();
    trace.records.push_back(rec);
    const double residual0 = rec.residual_rel;
    const double truth0 = rec.truth_error_rel;

    std::optional<ShampooState> shampoo;
    trace.status = SolveStatus::max_iters;
    for (int t = 1; t <= config.max_iterations; ++t) {
      StepOutput out;
      switch (config.algorithm) {
        case Algorithm::rgd:
          out = rgd_step_from_residual(X, op, residual, config.step);
          break;
        case Algorithm::prgd:
          out = prgd_step_from_residual(X, op, residual, config);
          break;
        case Algorithm::shampoo_rgd:
          out = shampoo_step_from_residual(X, op, residual, config, shampoo);
          break;
        case Algorithm::niht:
          out = niht_step_from_residual(X, op, residual);
          break;
      }
      const double change = distance(out.next, X);
      const double previous_norm = X.frobenius_norm();
      X = std::move(out.next);
      residual = residual_of(op, X, y);

      rec.iteration = t;
      rec.residual_rel = residual.norm() / y_scale;
      rec.truth_error_rel = truth_error(X);
      rec.step_size = out.step_size;
      rec.epsilon = out.epsilon;
      rec.elapsed_seconds = elapsed();
      trace.records.push_back(rec);

      const bool blown_residual =
          !std::isfinite(rec.residual_rel) ||
          (residual0 > 0.0 &&
           rec.residual_rel > config.divergence_factor * residual0);
      const bool blown_truth =
          truth && (!std::isfinite(rec.truth_error_rel) ||
                    (truth0 > 0.0 && rec.truth_error_rel >
                                         config.divergence_factor * truth0));
      if (blown_residual || blown_truth) {
        trace.status = SolveStatus::diverged;
        break;
      }

      bool done = false;
      switch (config.stop.kind) {
        case StoppingRule::Kind::relative_change:
          done = change <= config.stop.tolerance * std::max(1.0, previous_norm);
          break;
        case StoppingRule::Kind::residual:
          done = rec.residual_rel <= config.stop.tolerance;
          break;
        case StoppingRule::Kind::truth_error:
          done = rec.truth_error_rel <= config.stop.tolerance;
          break;
      }
      if (done) {
        trace.status = SolveStatus::converged;
        break;
      }
    }
    trace.solution = std::move(X);
  } catch (const Error& e) {
    trace.status = SolveStatus::error;
    trace.message = e.what();
  }
  return trace;
}

}  // namespace lowrank
