#pragma once

// Problem generation, noise injection, experiment sweeps, ratings ingestion
// and CSV output.

#include <lowrank/core.hpp>
#include <lowrank/linalg.hpp>
#include <lowrank/operators.hpp>
#include <lowrank/random.hpp>
#include <lowrank/solvers.hpp>

#include <time.h>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <memory>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <thread>
#include <unordered_map>
#include <utility>
#include <vector>

namespace lowrank {

// ---------------------------------------------------------------------------
// Problem generation.

enum class Distribution { uniform01, gaussian };

/// X = X_L X_R^T with i.i.d. factor entries, returned in compact SVD form.
inline CompactSVD gen_lowrank(Index n1, Index n2, Index r, Distribution dist,
                              std::uint64_t seed) {
  require(n1 >= 1 && n2 >= 1, "dimensions must be positive");
  require(r >= 1 && r <= std::min(n1, n2), "rank out of range");
  Rng rng(seed);
  Matrix left(n1, r);
  Matrix right(n2, r);
  auto fill = [&](Matrix& M) {
    if (dist == Distribution::uniform01) {
      std::uniform_real_distribution<double> u(0.0, 1.0);
      for (Index k = 0; k < M.size(); ++k) M.data()[k] = u(rng);
    } else {
      std::normal_distribution<double> g(0.0, 1.0);
      for (Index k = 0; k < M.size(); ++k) M.data()[k] = g(rng);
    }
  };
  fill(left);
  fill(right);
  return truncate_tangent(FactoredRank2r(left, right, r), r);
}

/// Degrees of freedom (n1 + n2 - r) r of an n1 x n2 rank-r matrix.
inline double degrees_of_freedom(Index n1, Index n2, Index r) {
  return static_cast<double>(n1 + n2 - r) * static_cast<double>(r);
}

/// m = round(OS * (n1 + n2 - r) r).
inline Index oversample_to_m(Index n1, Index n2, Index r, double oversampling) {
  require(oversampling > 0.0, "oversampling must be positive");
  require(r >= 1 && r <= std::min(n1, n2), "rank out of range");
  const double m = std::round(oversampling * degrees_of_freedom(n1, n2, r));
  require(m <= static_cast<double>(n1) * static_cast<double>(n2),
          "oversampling infeasible");
  require(m >= 1.0, "oversampling infeasible");
  return static_cast<Index>(m);
}

/// y + e with e = sigma * ||y|| * w / ||w||, w standard Gaussian.
inline Vector add_noise(const Vector& y, double sigma, std::uint64_t seed) {
  require(sigma >= 0.0, "noise level must be nonnegative");
  if (sigma == 0.0 || y.size() == 0) return y;
  Rng rng(seed);
  std::normal_distribution<double> g(0.0, 1.0);
  Vector w(y.size());
  for (Index k = 0; k < w.size(); ++k) w(k) = g(rng);
  const double wn = w.norm();
  require(wn > 0.0, "degenerate noise draw");
  return y + (sigma * y.norm() / wn) * w;
}

enum class ProblemKind { completion, gaussian, phase_retrieval };

inline std::string_view to_string(ProblemKind k) {
  switch (k) {
    case ProblemKind::completion:
      return "completion";
    case ProblemKind::gaussian:
      return "gaussian";
    case ProblemKind::phase_retrieval:
      return "phase-retrieval";
  }
  return "?";
}

struct ProblemInstance {
  std::shared_ptr<const SensingOperator> op;
  Vector y;
  std::optional<CompactSVD> truth;
  Index n1 = 0;
  Index n2 = 0;
  Index r = 0;
  Index m = 0;
  double oversampling = 0.0;
  double sigma = 0.0;
  std::uint64_t seed = 0;

  const CompactSVD* truth_ptr() const { return truth ? &*truth : nullptr; }
};

struct ProblemSpec {
  ProblemKind kind = ProblemKind::completion;
  Index n1 = 0;
  Index n2 = 0;  // phase retrieval uses n1
  Index r = 1;
  Index m = 0;
  double sigma = 0.0;
  /// Factor distribution; phase retrieval always draws a Gaussian signal.
  Distribution distribution = Distribution::uniform01;
};

/// Draws operator, ground truth and noise from streams derived from `seed`.
inline ProblemInstance make_instance(const ProblemSpec& spec,
                                     std::uint64_t seed) {
  ProblemInstance inst;
  inst.seed = seed;
  inst.sigma = spec.sigma;
  inst.m = spec.m;
  const std::uint64_t op_seed = derive_seed(seed, Stream::operator_draw);
  const std::uint64_t truth_seed = derive_seed(seed, Stream::ground_truth);
  switch (spec.kind) {
    case ProblemKind::completion:
    case ProblemKind::gaussian: {
      inst.n1 = spec.n1;
      inst.n2 = spec.n2;
      inst.r = spec.r;
      inst.truth = gen_lowrank(spec.n1, spec.n2, spec.r, spec.distribution,
                               truth_seed);
      if (spec.kind == ProblemKind::completion) {
        inst.op = std::make_shared<CompletionOperator>(
            make_completion(spec.n1, spec.n2, spec.m, op_seed));
      } else {
        inst.op = std::make_shared<GaussianOperator>(
            make_gaussian(spec.n1, spec.n2, spec.m, op_seed));
      }
      break;
    }
    case ProblemKind::phase_retrieval: {
      require(spec.n1 >= 1, "dimensions must be positive");
      inst.n1 = inst.n2 = spec.n1;
      inst.r = 1;
      Rng rng(truth_seed);
      std::normal_distribution<double> g(0.0, 1.0);
      Vector x(spec.n1);
      for (Index k = 0; k < x.size(); ++k) x(k) = g(rng);
      const double nx = x.norm();
      CompactSVD X;
      X.U = x / nx;
      X.V = X.U;
      X.S = Vector::Constant(1, nx * nx);
      Matrix V = X.V;
      fix_signs(X.U, V);
      X.V = X.U;
      inst.truth = std::move(X);
      inst.op = std::make_shared<PhaseRetrievalOperator>(
          make_phase_retrieval(spec.n1, spec.m, op_seed));
      break;
    }
  }
  inst.oversampling = static_cast<double>(inst.m) /
                      degrees_of_freedom(inst.n1, inst.n2, inst.r);
  inst.y = add_noise(inst.op->apply(*inst.truth), spec.sigma,
                     derive_seed(seed, Stream::noise));
  return inst;
}

/// Curvature scale s of A*A used to normalize constant steps (alpha = c / s):
/// the sampling ratio m/(n1 n2) for completion, m for Gaussian sensing and
/// 3m for phase retrieval.
inline double curvature_scale(const SensingOperator& op) {
  const double m = static_cast<double>(op.size());
  if (op.kind() == "completion") {
    return m / (static_cast<double>(op.rows()) * static_cast<double>(op.cols()));
  }
  if (op.kind() == "phase-retrieval") return 3.0 * m;
  return m;
}

// ---------------------------------------------------------------------------
// Named algorithm variants.

/// Constant step multiplier c in alpha = c / s.
inline constexpr double kDefaultStepConstant = 0.5;

/// Extra factor on the Shampoo epsilon, which is fixed from the first
/// gradient while the accumulators keep growing.
inline constexpr double kShampooEpsilonFactor = 10.0;

inline const std::vector<std::string>& algorithm_names() {
  static const std::vector<std::string> names = {
      "adaptive-prgd", "adaptive-rgd", "niht", "prgd", "rgd", "shampoo-rgd"};
  return names;
}

inline bool is_algorithm_name(std::string_view name) {
  const auto& names = algorithm_names();
  return std::find(names.begin(), names.end(), name) != names.end();
}

struct SolverDefaults {
  double step_constant = kDefaultStepConstant;
  double epsilon_scale = 1.0;
  int max_iterations = 500;
  StoppingRule stop;
};

/// Config for a named variant. The adaptive variants use the exact line
/// search; the others take the constant step c / curvature_scale(op).
/// Sensing and phase retrieval start from H_r(A* y) / curvature_scale(op).
inline SolverConfig config_for(std::string_view name, const SensingOperator& op,
                               Index rank, const SolverDefaults& d,
                               std::uint64_t seed = 0) {
  require(is_algorithm_name(name), "unknown algorithm " + std::string(name));
  SolverConfig c;
  c.rank = rank;
  c.max_iterations = d.max_iterations;
  c.stop = d.stop;
  c.seed = seed;
  c.epsilon = EpsilonPolicy::vee_squared(d.epsilon_scale);
  c.step = StepPolicy::constant(d.step_constant / curvature_scale(op));
  // Sensing draws standard normals; rescale the initializer as if A*A ~ I.
  // Completion keeps H_r(P_Omega(y)).
  if (op.kind() != "completion") c.init_scale = 1.0 / curvature_scale(op);
  if (name == "prgd") {
    c.algorithm = Algorithm::prgd;
  } else if (name == "rgd") {
    c.algorithm = Algorithm::rgd;
  } else if (name == "shampoo-rgd") {
    c.algorithm = Algorithm::shampoo_rgd;
    c.epsilon = EpsilonPolicy::vee_squared(d.epsilon_scale * kShampooEpsilonFactor);
  } else if (name == "niht") {
    c.algorithm = Algorithm::niht;
  } else if (name == "adaptive-prgd") {
    c.algorithm = Algorithm::prgd;
    c.step = StepPolicy::exact_line_search();
  } else {
    c.algorithm = Algorithm::rgd;
    c.step = StepPolicy::exact_line_search();
  }
  return c;
}

// ---------------------------------------------------------------------------
// Ratings ingestion.

enum class RatingsFormat { triples, movielens_dat };

struct RatingsData {
  std::unique_ptr<CompletionOperator> op;
  Vector y;  // aligned with the operator's sample order
  /// Original IDs of each dense row / column (movielens-dat), or the indices
  /// themselves (triples).
  std::vector<long long> row_ids;
  std::vector<long long> col_ids;
};

namespace detail {

inline std::uint64_t pair_key(long long a, long long b) {
  return (static_cast<std::uint64_t>(a) << 32) ^ static_cast<std::uint64_t>(b);
}

inline std::vector<std::string_view> split_on(std::string_view s,
                                              std::string_view sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = s.find(sep, start);
    if (pos == std::string_view::npos) {
      out.push_back(s.substr(start));
      return out;
    }
    out.push_back(s.substr(start, pos - start));
    start = pos + sep.size();
  }
}

inline bool parse_integer(std::string_view s, long long& out) {
  if (s.empty()) return false;
  std::size_t used = 0;
  try {
    out = std::stoll(std::string(s), &used);
  } catch (const std::exception&) {
    return false;
  }
  return used == s.size();
}

inline bool parse_real(std::string_view s, double& out) {
  if (s.empty()) return false;
  std::size_t used = 0;
  try {
    out = std::stod(std::string(s), &used);
  } catch (const std::exception&) {
    return false;
  }
  return used == s.size() && std::isfinite(out);
}

}  // namespace detail

inline RatingsData ingest_ratings(std::istream& in, RatingsFormat format) {
  struct Record {
    long long row, col;
    double value;
  };
  std::vector<Record> records;
  std::unordered_map<std::uint64_t, std::size_t> seen;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    Record rec{};
    bool ok = false;
    if (format == RatingsFormat::movielens_dat) {
      const auto fields = detail::split_on(line, "::");
      long long stamp = 0;
      ok = fields.size() == 4 && detail::parse_integer(fields[0], rec.row) &&
           detail::parse_integer(fields[1], rec.col) &&
           detail::parse_real(fields[2], rec.value) &&
           detail::parse_integer(fields[3], stamp) && rec.row >= 1 &&
           rec.col >= 1;
    } else {
      std::istringstream fields(line);
      std::string extra;
      ok = static_cast<bool>(fields >> rec.row >> rec.col >> rec.value) &&
           !(fields >> extra) && rec.row >= 0 && rec.col >= 0 &&
           std::isfinite(rec.value);
    }
    ok = ok && rec.row <= std::numeric_limits<int>::max() &&
         rec.col <= std::numeric_limits<int>::max();
    if (!ok) throw Error("malformed line " + std::to_string(lineno));
    const auto [it, fresh] =
        seen.emplace(detail::pair_key(rec.row, rec.col), lineno);
    if (!fresh) {
      throw Error("duplicate pair on line " + std::to_string(lineno) +
                  " (first seen on line " + std::to_string(it->second) + ")");
    }
    records.push_back(rec);
  }
  require(!records.empty(), "no observations");

  RatingsData out;
  std::map<long long, int> rows;
  std::map<long long, int> cols;
  if (format == RatingsFormat::movielens_dat) {
    // Dense 0-based indices in ascending ID order.
    for (const Record& r : records) {
      rows.emplace(r.row, 0);
      cols.emplace(r.col, 0);
    }
    int k = 0;
    for (auto& [id, idx] : rows) {
      idx = k++;
      out.row_ids.push_back(id);
    }
    k = 0;
    for (auto& [id, idx] : cols) {
      idx = k++;
      out.col_ids.push_back(id);
    }
  }
  std::vector<Sample> samples;
  std::vector<double> values;
  samples.reserve(records.size());
  values.reserve(records.size());
  long long max_row = 0;
  long long max_col = 0;
  for (const Record& r : records) {
    const int i = format == RatingsFormat::movielens_dat
                      ? rows.at(r.row)
                      : static_cast<int>(r.row);
    const int j = format == RatingsFormat::movielens_dat
                      ? cols.at(r.col)
                      : static_cast<int>(r.col);
    samples.push_back({i, j});
    values.push_back(r.value);
    max_row = std::max<long long>(max_row, i);
    max_col = std::max<long long>(max_col, j);
  }
  if (format == RatingsFormat::triples) {
    for (long long k = 0; k <= max_row; ++k) out.row_ids.push_back(k);
    for (long long k = 0; k <= max_col; ++k) out.col_ids.push_back(k);
  }
  ObservedEntries obs = make_observed(std::move(samples), values);
  out.op = std::move(obs.op);
  out.y = std::move(obs.values);
  return out;
}

inline RatingsData ingest_ratings(const std::string& path,
                                  RatingsFormat format) {
  std::ifstream in(path);
  require(static_cast<bool>(in), "cannot open " + path);
  return ingest_ratings(in, format);
}

/// ||P_Omega(X_t) - y|| / ||y||.
inline double fitting_error(const CompletionOperator& op, const CompactSVD& Xt,
                            const Vector& y) {
  require(y.size() == op.size(), "measurement length mismatch");
  const double ny = y.norm();
  require(ny > 0.0, "fitting error undefined for zero observations");
  return (op.apply(Xt) - y).norm() / ny;
}

// ---------------------------------------------------------------------------
// Sweeps.

enum class SweepKind {
  size,
  oversampling,
  noise,
  success_grid,
  phase_retrieval,
  fit_ratings
};

inline std::string_view to_string(SweepKind k) {
  switch (k) {
    case SweepKind::size:
      return "size";
    case SweepKind::oversampling:
      return "oversampling";
    case SweepKind::noise:
      return "noise";
    case SweepKind::success_grid:
      return "success-grid";
    case SweepKind::phase_retrieval:
      return "phase-retrieval";
    case SweepKind::fit_ratings:
      return "fit-ratings";
  }
  return "?";
}

inline std::optional<SweepKind> parse_sweep_kind(std::string_view s) {
  for (SweepKind k :
       {SweepKind::size, SweepKind::oversampling, SweepKind::noise,
        SweepKind::success_grid, SweepKind::phase_retrieval,
        SweepKind::fit_ratings}) {
    if (to_string(k) == s) return k;
  }
  return std::nullopt;
}

/// Success threshold on the relative truth error.
inline constexpr double kSuccessTolerance = 1e-4;

/// Sweep description. Each kind reads the fields it needs:
/// - size: `sizes` (n1 = n2 = n), `ranks`, `oversampling` (completion).
/// - oversampling: `n1`, `n2`, `ranks`, `oversampling` (completion).
/// - noise: `n1`, `n2`, `ranks`, `oversampling`, `sigmas` (completion).
/// - success-grid: `n1`, `n2`, `ranks`, `measurements` (Gaussian sensing).
/// - phase-retrieval: `n1`, `measurements` (empty means m = 6 n).
/// - fit-ratings: `ratings_path`, `ratings_format`, `ranks`.
struct SweepSpec {
  SweepKind kind = SweepKind::size;
  std::string experiment;  // label for the CSV; defaults to the kind name
  std::vector<Index> sizes;
  Index n1 = 0;
  Index n2 = 0;
  std::vector<Index> ranks;
  std::vector<double> oversampling;
  std::vector<Index> measurements;
  std::vector<double> sigmas;
  Distribution distribution = Distribution::uniform01;
  int reps = 5;
  std::uint64_t seed = 0;
  SolverDefaults solver;
  /// Kind-specific default stopping rule is used when unset.
  std::optional<StoppingRule> stop;
  std::optional<int> max_iterations;
  std::string ratings_path;
  RatingsFormat ratings_format = RatingsFormat::triples;
  int workers = 1;
  bool keep_traces = false;
};

struct GridPoint {
  Index n1 = 0;
  Index n2 = 0;
  Index r = 0;
  Index m = 0;
  double oversampling = 0.0;
  double sigma = 0.0;
};

struct RunSummary {
  std::uint64_t seed = 0;
  int iterations = 0;
  double cpu_seconds = 0.0;
  double final_rel_error = 0.0;  // truth error, or fitting error without truth
  bool success = false;
  SolveStatus status = SolveStatus::max_iters;
  std::string message;
  std::optional<SolveTrace> trace;
};

struct ExperimentResult {
  std::string experiment;
  std::string algorithm;
  GridPoint point;
  std::vector<RunSummary> runs;

  int seed_count() const { return static_cast<int>(runs.size()); }
  double iterations_mean() const;
  double iterations_std() const;
  double cpu_seconds_mean() const;
  double final_rel_error_mean() const;
  double success_rate() const;
  std::string status() const;
};

inline double ExperimentResult::iterations_mean() const {
  if (runs.empty()) return std::numeric_limits<double>::quiet_NaN();
  double s = 0.0;
  for (const auto& r : runs) s += r.iterations;
  return s / static_cast<double>(runs.size());
}

/// Sample standard deviation (0 for a single run).
inline double ExperimentResult::iterations_std() const {
  if (runs.size() < 2) return runs.empty() ? std::numeric_limits<double>::quiet_NaN() : 0.0;
  const double mean = iterations_mean();
  double s = 0.0;
  for (const auto& r : runs) s += (r.iterations - mean) * (r.iterations - mean);
  return std::sqrt(s / static_cast<double>(runs.size() - 1));
}

inline double ExperimentResult::cpu_seconds_mean() const {
  if (runs.empty()) return std::numeric_limits<double>::quiet_NaN();
  double s = 0.0;
  for (const auto& r : runs) s += r.cpu_seconds;
  return s / static_cast<double>(runs.size());
}

inline double ExperimentResult::final_rel_error_mean() const {
  if (runs.empty()) return std::numeric_limits<double>::quiet_NaN();
  double s = 0.0;
  for (const auto& r : runs) s += r.final_rel_error;
  return s / static_cast<double>(runs.size());
}

inline double ExperimentResult::success_rate() const {
  if (runs.empty()) return std::numeric_limits<double>::quiet_NaN();
  int k = 0;
  for (const auto& r : runs) k += r.success ? 1 : 0;
  return static_cast<double>(k) / static_cast<double>(runs.size());
}

/// The common status, or "status=count" pairs joined by ';' when runs differ.
inline std::string ExperimentResult::status() const {
  std::map<std::string, int> counts;
  for (const auto& r : runs) ++counts[std::string(to_string(r.status))];
  if (counts.empty()) return "empty";
  if (counts.size() == 1) return counts.begin()->first;
  std::string out;
  for (const auto& [name, n] : counts) {
    if (!out.empty()) out += ';';
    out += name + "=" + std::to_string(n);
  }
  return out;
}

namespace detail {

inline double thread_cpu_seconds() {
  timespec ts{};
  clock_gettime(CLOCK_THREAD_CPUTIME_ID, &ts);
  return static_cast<double>(ts.tv_sec) + 1e-9 * static_cast<double>(ts.tv_nsec);
}

inline StoppingRule default_stop(SweepKind kind) {
  switch (kind) {
    case SweepKind::noise:
      return StoppingRule::relative_change(1e-5);
    case SweepKind::phase_retrieval:
      return StoppingRule::residual(1e-8);
    case SweepKind::fit_ratings:
      return StoppingRule::residual(1e-12);
    default:
      return StoppingRule::truth_error(kSuccessTolerance);
  }
}

inline std::vector<GridPoint> grid_points(const SweepSpec& s) {
  std::vector<GridPoint> out;
  auto need = [](bool ok, const char* what) {
    require(ok, std::string("sweep needs ") + what);
  };
  switch (s.kind) {
    case SweepKind::size:
      need(!s.sizes.empty() && !s.ranks.empty() && !s.oversampling.empty(),
           "sizes, ranks and oversampling");
      for (Index n : s.sizes)
        for (Index r : s.ranks)
          for (double os : s.oversampling)
            out.push_back({n, n, r, oversample_to_m(n, n, r, os), os, 0.0});
      break;
    case SweepKind::oversampling:
    case SweepKind::noise: {
      need(s.n1 > 0 && s.n2 > 0 && !s.ranks.empty() && !s.oversampling.empty(),
           "n1, n2, ranks and oversampling");
      const std::vector<double> sigmas =
          s.kind == SweepKind::noise ? s.sigmas : std::vector<double>{0.0};
      need(!sigmas.empty(), "sigmas");
      for (Index r : s.ranks)
        for (double os : s.oversampling)
          for (double sigma : sigmas) {
            require(sigma >= 0.0, "noise level must be nonnegative");
            out.push_back({s.n1, s.n2, r, oversample_to_m(s.n1, s.n2, r, os),
                           os, sigma});
          }
      break;
    }
    case SweepKind::success_grid:
      need(s.n1 > 0 && s.n2 > 0 && !s.ranks.empty() && !s.measurements.empty(),
           "n1, n2, ranks and measurements");
      for (Index r : s.ranks) {
        require(r >= 1 && r <= std::min(s.n1, s.n2), "rank out of range");
        for (Index m : s.measurements) {
          require(m >= 1, "measurement count must be positive");
          out.push_back({s.n1, s.n2, r, m,
                         static_cast<double>(m) / degrees_of_freedom(s.n1, s.n2, r),
                         0.0});
        }
      }
      break;
    case SweepKind::phase_retrieval: {
      need(s.n1 > 0, "n1");
      const std::vector<Index> ms =
          s.measurements.empty() ? std::vector<Index>{6 * s.n1} : s.measurements;
      for (Index m : ms) {
        require(m >= 1, "measurement count must be positive");
        out.push_back({s.n1, s.n1, 1, m,
                       static_cast<double>(m) / degrees_of_freedom(s.n1, s.n1, 1),
                       0.0});
      }
      break;
    }
    case SweepKind::fit_ratings:
      need(!s.ranks.empty(), "ranks");
      need(!s.ratings_path.empty(), "a ratings path");
      for (Index r : s.ranks) out.push_back({0, 0, r, 0, 0.0, 0.0});
      break;
  }
  return out;
}

inline RunSummary run_one(const SensingOperator& op, const Vector& y,
                          const CompactSVD* truth, const SolverConfig& config,
                          std::uint64_t seed, bool keep_trace) {
  RunSummary run;
  run.seed = seed;
  const double t0 = thread_cpu_seconds();
  SolveTrace trace;
  try {
    trace = solve(op, y, truth, config);
  } catch (const Error& e) {
    trace.status = SolveStatus::error;
    trace.message = e.what();
  }
  run.cpu_seconds = thread_cpu_seconds() - t0;
  run.iterations = trace.iterations();
  run.status = trace.status;
  run.message = trace.message;
  if (!trace.records.empty()) {
    const IterationRecord& last = trace.last();
    run.final_rel_error = truth ? last.truth_error_rel : last.residual_rel;
  } else {
    run.final_rel_error = std::numeric_limits<double>::quiet_NaN();
  }
  run.success = truth != nullptr && trace.status != SolveStatus::error &&
                run.final_rel_error <= kSuccessTolerance;
  if (keep_trace) run.trace = std::move(trace);
  return run;
}

/// Runs `tasks` indices on a bounded pool; each index is handled exactly once.
template <typename F>
void parallel_for(std::size_t tasks, int workers, F&& body) {
  const std::size_t w = std::max<std::size_t>(
      1, std::min<std::size_t>(static_cast<std::size_t>(std::max(workers, 1)),
                               tasks));
  if (w == 1) {
    for (std::size_t k = 0; k < tasks; ++k) body(k);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  pool.reserve(w);
  for (std::size_t t = 0; t < w; ++t) {
    pool.emplace_back([&] {
      for (std::size_t k = next++; k < tasks; k = next++) body(k);
    });
  }
  for (auto& th : pool) th.join();
}

}  // namespace detail

/// Runs every (grid point, replication) cell with each algorithm. Seeds depend
/// only on the master seed, the grid index and the replication index, so all
/// algorithms see the same instances. Rows come back grid-major, then by
/// algorithm name.
inline std::vector<ExperimentResult> run_sweep(
    const SweepSpec& spec, const std::vector<std::string>& algorithms) {
  require(!algorithms.empty(), "no algorithms selected");
  for (const auto& a : algorithms) {
    require(is_algorithm_name(a), "unknown algorithm " + a);
  }
  require(spec.reps >= 1, "replications must be positive");
  std::vector<std::string> algs = algorithms;
  std::sort(algs.begin(), algs.end());
  algs.erase(std::unique(algs.begin(), algs.end()), algs.end());

  std::vector<GridPoint> grid = detail::grid_points(spec);
  SolverDefaults defaults = spec.solver;
  defaults.stop = spec.stop.value_or(detail::default_stop(spec.kind));
  if (spec.max_iterations) defaults.max_iterations = *spec.max_iterations;

  const std::string label =
      spec.experiment.empty() ? std::string(to_string(spec.kind)) : spec.experiment;

  // Ratings data is shared by every cell.
  std::shared_ptr<RatingsData> ratings;
  int reps = spec.reps;
  if (spec.kind == SweepKind::fit_ratings) {
    ratings = std::make_shared<RatingsData>(
        ingest_ratings(spec.ratings_path, spec.ratings_format));
    reps = 1;
    for (GridPoint& g : grid) {
      g.n1 = ratings->op->rows();
      g.n2 = ratings->op->cols();
      g.m = ratings->op->size();
      require(g.r >= 1 && g.r <= std::min(g.n1, g.n2), "rank out of range");
      g.oversampling = static_cast<double>(g.m) / degrees_of_freedom(g.n1, g.n2, g.r);
    }
  }

  const std::size_t cells = grid.size() * static_cast<std::size_t>(reps);
  std::vector<std::vector<RunSummary>> cell_runs(cells);
  detail::parallel_for(cells, spec.workers, [&](std::size_t cell) {
    const std::size_t gi = cell / static_cast<std::size_t>(reps);
    const std::size_t rep = cell % static_cast<std::size_t>(reps);
    const GridPoint& g = grid[gi];
    const std::uint64_t seed = derive_seed(spec.seed, {gi, rep});
    std::vector<RunSummary>& out = cell_runs[cell];
    out.resize(algs.size());
    try {
      std::optional<ProblemInstance> inst;
      const SensingOperator* op = nullptr;
      const Vector* y = nullptr;
      const CompactSVD* truth = nullptr;
      if (ratings) {
        op = ratings->op.get();
        y = &ratings->y;
      } else {
        ProblemSpec ps;
        ps.n1 = g.n1;
        ps.n2 = g.n2;
        ps.r = g.r;
        ps.m = g.m;
        ps.sigma = g.sigma;
        ps.distribution = spec.distribution;
        ps.kind = spec.kind == SweepKind::success_grid ? ProblemKind::gaussian
                  : spec.kind == SweepKind::phase_retrieval
                      ? ProblemKind::phase_retrieval
                      : ProblemKind::completion;
        if (spec.kind == SweepKind::success_grid) {
          ps.distribution = Distribution::gaussian;
        }
        inst = make_instance(ps, seed);
        op = inst->op.get();
        y = &inst->y;
        truth = inst->truth_ptr();
      }
      for (std::size_t a = 0; a < algs.size(); ++a) {
        const SolverConfig config = config_for(algs[a], *op, g.r, defaults, seed);
        out[a] = detail::run_one(*op, *y, truth, config, seed, spec.keep_traces);
      }
    } catch (const Error& e) {
      for (RunSummary& run : out) {
        run.seed = seed;
        run.status = SolveStatus::error;
        run.message = e.what();
        run.final_rel_error = std::numeric_limits<double>::quiet_NaN();
      }
    }
  });

  std::vector<ExperimentResult> results;
  results.reserve(grid.size() * algs.size());
  for (std::size_t gi = 0; gi < grid.size(); ++gi) {
    for (std::size_t a = 0; a < algs.size(); ++a) {
      ExperimentResult res;
      res.experiment = label;
      res.algorithm = algs[a];
      res.point = grid[gi];
      for (int rep = 0; rep < reps; ++rep) {
        res.runs.push_back(
            std::move(cell_runs[gi * static_cast<std::size_t>(reps) +
                                static_cast<std::size_t>(rep)][a]));
      }
      results.push_back(std::move(res));
    }
  }
  return results;
}

// ---------------------------------------------------------------------------
// CSV output.

inline constexpr std::string_view kResultsHeader =
    "experiment,algorithm,n1,n2,r,m,oversampling,sigma,seed_count,"
    "iterations_mean,iterations_std,cpu_seconds_mean,final_rel_error_mean,"
    "success_rate,status";

inline constexpr std::string_view kTraceHeader =
    "iteration,residual_rel,truth_error_rel,step_size,epsilon,elapsed_seconds";

namespace detail {

inline std::string format_real(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  std::ostringstream s;
  s << std::setprecision(12) << v;
  return s.str();
}

}  // namespace detail

inline void emit_results(std::ostream& out,
                         const std::vector<ExperimentResult>& results) {
  out << kResultsHeader << '\n';
  for (const ExperimentResult& r : results) {
    out << r.experiment << ',' << r.algorithm << ',' << r.point.n1 << ','
        << r.point.n2 << ',' << r.point.r << ',' << r.point.m << ','
        << detail::format_real(r.point.oversampling) << ','
        << detail::format_real(r.point.sigma) << ',' << r.seed_count() << ','
        << detail::format_real(r.iterations_mean()) << ','
        << detail::format_real(r.iterations_std()) << ','
        << detail::format_real(r.cpu_seconds_mean()) << ','
        << detail::format_real(r.final_rel_error_mean()) << ','
        << detail::format_real(r.success_rate()) << ',' << r.status() << '\n';
  }
}

inline void emit_results(const std::vector<ExperimentResult>& results,
                         const std::string& path) {
  std::ofstream out(path);
  require(static_cast<bool>(out), "cannot open " + path + " for writing");
  emit_results(out, results);
  out.flush();
  require(static_cast<bool>(out), "write failed: " + path);
}

/// Trace CSV followed by a "# status=<status>" line.
inline void write_trace(std::ostream& out, const SolveTrace& trace) {
  out << kTraceHeader << '\n';
  for (const IterationRecord& r : trace.records) {
    out << r.iteration << ',' << detail::format_real(r.residual_rel) << ','
        << detail::format_real(r.truth_error_rel) << ','
        << detail::format_real(r.step_size) << ','
        << detail::format_real(r.epsilon) << ','
        << detail::format_real(r.elapsed_seconds) << '\n';
  }
  out << "# status=" << to_string(trace.status);
  if (!trace.message.empty()) out << " message=" << trace.message;
  out << '\n';
}

inline void write_trace(const SolveTrace& trace, const std::string& path) {
  std::ofstream out(path);
  require(static_cast<bool>(out), "cannot open " + path + " for writing");
  write_trace(out, trace);
  out.flush();
  require(static_cast<bool>(out), "write failed: " + path);
}

}  // namespace lowrank
