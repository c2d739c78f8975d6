// lowrank: solve one recovery problem, run an experiment sweep, or check a
// ratings file.
//
// Exit codes: 0 success, 1 usage error, 2 solver or runtime error.

#include <lowrank/lowrank.hpp>

#include <CLI11.hpp>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace {

using lowrank::Index;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

void usage_check(bool ok, const std::string& msg) {
  if (!ok) throw UsageError(msg);
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string piece;
  std::istringstream in(s);
  while (std::getline(in, piece, sep)) out.push_back(piece);
  return out;
}

double to_real(const std::string& s) {
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(s, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  usage_check(used == s.size() && !s.empty() && std::isfinite(v),
              "not a number: '" + s + "'");
  return v;
}

long long to_integer(const std::string& s) {
  std::size_t used = 0;
  long long v = 0;
  try {
    v = std::stoll(s, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  usage_check(used == s.size() && !s.empty(), "not an integer: '" + s + "'");
  return v;
}

/// Comma-separated items, each a value or an inclusive start:stop:step range.
std::vector<double> parse_reals(const std::string& text) {
  std::vector<double> out;
  for (const std::string& item : split(text, ',')) {
    const auto parts = split(item, ':');
    if (parts.size() == 1) {
      out.push_back(to_real(parts[0]));
      continue;
    }
    usage_check(parts.size() == 3, "range must be start:stop:step: '" + item + "'");
    const double start = to_real(parts[0]);
    const double stop = to_real(parts[1]);
    const double step = to_real(parts[2]);
    usage_check(step > 0.0 && stop >= start, "empty or invalid range: '" + item + "'");
    const double slack = 1e-9 * step;
    for (long long k = 0;; ++k) {
      const double v = start + static_cast<double>(k) * step;
      if (v > stop + slack) break;
      out.push_back(v);
    }
  }
  usage_check(!out.empty(), "empty list");
  return out;
}

std::vector<Index> parse_integers(const std::string& text) {
  std::vector<Index> out;
  for (const std::string& item : split(text, ',')) {
    const auto parts = split(item, ':');
    if (parts.size() == 1) {
      out.push_back(to_integer(parts[0]));
      continue;
    }
    usage_check(parts.size() == 3, "range must be start:stop:step: '" + item + "'");
    const long long start = to_integer(parts[0]);
    const long long stop = to_integer(parts[1]);
    const long long step = to_integer(parts[2]);
    usage_check(step > 0 && stop >= start, "empty or invalid range: '" + item + "'");
    for (long long v = start; v <= stop; v += step) out.push_back(v);
  }
  usage_check(!out.empty(), "empty list");
  return out;
}

/// start:stop:count, log-spaced and inclusive.
std::vector<double> parse_logspace(const std::string& text) {
  const auto parts = split(text, ':');
  usage_check(parts.size() == 3, "log range must be start:stop:count");
  const double a = to_real(parts[0]);
  const double b = to_real(parts[1]);
  const long long count = to_integer(parts[2]);
  usage_check(a > 0.0 && b > 0.0 && count >= 1, "invalid log range");
  std::vector<double> out;
  if (count == 1) return {a};
  for (long long k = 0; k < count; ++k) {
    const double t = static_cast<double>(k) / static_cast<double>(count - 1);
    out.push_back(std::exp(std::log(a) + t * (std::log(b) - std::log(a))));
  }
  return out;
}

lowrank::RatingsFormat parse_format(const std::string& s) {
  if (s == "triples") return lowrank::RatingsFormat::triples;
  if (s == "movielens-dat") return lowrank::RatingsFormat::movielens_dat;
  throw UsageError("unknown ratings format '" + s + "'");
}

std::optional<lowrank::Distribution> parse_distribution(const std::string& s) {
  if (s == "auto") return std::nullopt;
  if (s == "uniform01") return lowrank::Distribution::uniform01;
  if (s == "gaussian") return lowrank::Distribution::gaussian;
  throw UsageError("unknown distribution '" + s + "'");
}

/// Flags shared by solve and sweep.
struct SolverFlags {
  double step_constant = lowrank::kDefaultStepConstant;
  double epsilon_scale = 1.0;
  int max_iters = 500;
  std::optional<double> tol_change;
  std::optional<double> tol_residual;
  std::optional<double> tol_truth;
  std::uint64_t seed = 0;

  void add(CLI::App& app, const std::string& stop_default) {
    app.add_option("--step-constant", step_constant,
                   "Constant step multiplier c; alpha = c / s with s the "
                   "operator's curvature scale (sampling ratio for completion)");
    app.add_option("--epsilon-scale", epsilon_scale,
                   "epsilon_t = scale * ||G_t||_vee^2 (shampoo-rgd: 10 * scale * "
                   "||G_0||_vee^2, fixed)");
    app.add_option("--max-iters", max_iters, "Iteration budget");
    auto* a = app.add_option("--tol-change", tol_change,
                             "Stop when ||X_{t+1} - X_t|| <= tol * max(1, ||X_t||)");
    auto* b = app.add_option("--tol-residual", tol_residual,
                             "Stop when ||A X_t - y|| / ||y|| <= tol");
    auto* c = app.add_option("--tol-truth", tol_truth,
                             "Stop when ||X_t - X|| / ||X|| <= tol (needs ground truth)");
    a->excludes(b)->excludes(c);
    b->excludes(c);
    app.add_option("--seed", seed, "Master seed for every random draw");
    app.footer("Default stopping rule: " + stop_default + ".");
  }

  std::optional<lowrank::StoppingRule> stop() const {
    if (tol_change) return lowrank::StoppingRule::relative_change(*tol_change);
    if (tol_residual) return lowrank::StoppingRule::residual(*tol_residual);
    if (tol_truth) return lowrank::StoppingRule::truth_error(*tol_truth);
    return std::nullopt;
  }

  void validate() const {
    usage_check(step_constant >= 0.0, "--step-constant must be nonnegative");
    usage_check(epsilon_scale > 0.0, "--epsilon-scale must be positive");
    usage_check(max_iters >= 0, "--max-iters must be nonnegative");
    for (const auto& t : {tol_change, tol_residual, tol_truth}) {
      usage_check(!t || *t > 0.0, "stopping tolerances must be positive");
    }
  }
};

int workers_from(int flag) {
  if (flag > 0) return flag;
  if (const char* env = std::getenv("LOWRANK_WORKERS")) {
    const long long v = to_integer(env);
    usage_check(v >= 1, "LOWRANK_WORKERS must be a positive integer");
    return static_cast<int>(v);
  }
  return 1;
}

void require_parent_dir(const std::string& path) {
  if (path.empty() || path == "-") return;
  const auto parent = std::filesystem::path(path).parent_path();
  usage_check(parent.empty() || std::filesystem::is_directory(parent),
              "output directory does not exist: " + parent.string());
}

// ---------------------------------------------------------------------------

struct SolveArgs {
  std::string problem;
  Index n1 = 0;
  Index n2 = 0;
  Index rank = 1;
  std::optional<double> oversampling;
  std::optional<Index> measurements;
  double sigma = 0.0;
  std::string distribution = "auto";
  std::string algorithm = "prgd";
  std::string ratings;
  std::string ratings_format = "triples";
  std::string trace;
  SolverFlags solver;
};

int run_solve(const SolveArgs& a) {
  // Validation.
  usage_check(a.problem == "completion" || a.problem == "gaussian" ||
                  a.problem == "phase-retrieval" || a.problem == "ratings",
              "unknown problem '" + a.problem + "'");
  usage_check(lowrank::is_algorithm_name(a.algorithm),
              "unknown algorithm '" + a.algorithm + "'");
  a.solver.validate();
  usage_check(a.sigma >= 0.0, "--sigma must be nonnegative");
  const auto dist = parse_distribution(a.distribution);
  require_parent_dir(a.trace);

  lowrank::ProblemSpec ps;
  std::optional<lowrank::RatingsData> ratings;
  if (a.problem == "ratings") {
    usage_check(!a.ratings.empty(), "--ratings is required for problem ratings");
    usage_check(!a.solver.tol_truth, "ratings data has no ground truth");
    parse_format(a.ratings_format);
  } else {
    usage_check(a.n1 >= 1, "--n1 is required");
    ps.n1 = a.n1;
    ps.n2 = a.problem == "phase-retrieval" ? a.n1 : (a.n2 > 0 ? a.n2 : a.n1);
    ps.r = a.problem == "phase-retrieval" ? 1 : a.rank;
    usage_check(ps.r >= 1 && ps.r <= std::min(ps.n1, ps.n2), "--rank out of range");
    usage_check(!(a.oversampling && a.measurements),
                "--oversampling and --measurements are exclusive");
    if (a.measurements) {
      ps.m = *a.measurements;
    } else if (a.oversampling) {
      try {
        ps.m = lowrank::oversample_to_m(ps.n1, ps.n2, ps.r, *a.oversampling);
      } catch (const lowrank::Error& e) {
        throw UsageError(e.what());
      }
    } else {
      usage_check(a.problem == "phase-retrieval",
                  "--oversampling or --measurements is required");
      ps.m = 6 * ps.n1;
    }
    usage_check(ps.m >= 1, "measurement count must be positive");
    usage_check(a.problem != "completion" || ps.m <= ps.n1 * ps.n2,
                "more samples than entries");
    ps.sigma = a.sigma;
    ps.kind = a.problem == "completion" ? lowrank::ProblemKind::completion
              : a.problem == "gaussian" ? lowrank::ProblemKind::gaussian
                                        : lowrank::ProblemKind::phase_retrieval;
    ps.distribution = dist.value_or(a.problem == "completion"
                                        ? lowrank::Distribution::uniform01
                                        : lowrank::Distribution::gaussian);
  }

  // Computation.
  lowrank::SolveTrace trace;
  try {
    std::optional<lowrank::ProblemInstance> inst;
    const lowrank::SensingOperator* op = nullptr;
    const lowrank::Vector* y = nullptr;
    const lowrank::CompactSVD* truth = nullptr;
    Index rank = a.rank;
    if (a.problem == "ratings") {
      ratings = lowrank::ingest_ratings(a.ratings, parse_format(a.ratings_format));
      op = ratings->op.get();
      y = &ratings->y;
    } else {
      inst = lowrank::make_instance(ps, a.solver.seed);
      op = inst->op.get();
      y = &inst->y;
      truth = inst->truth_ptr();
      rank = ps.r;
    }
    lowrank::SolverDefaults d;
    d.step_constant = a.solver.step_constant;
    d.epsilon_scale = a.solver.epsilon_scale;
    d.max_iterations = a.solver.max_iters;
    d.stop = a.solver.stop().value_or(lowrank::StoppingRule::relative_change(1e-5));
    const lowrank::SolverConfig config =
        lowrank::config_for(a.algorithm, *op, rank, d, a.solver.seed);
    trace = lowrank::solve(*op, *y, truth, config);
  } catch (const lowrank::Error& e) {
    trace.status = lowrank::SolveStatus::error;
    trace.message = e.what();
  }

  if (!a.trace.empty()) {
    if (a.trace == "-") {
      lowrank::write_trace(std::cout, trace);
    } else {
      lowrank::write_trace(trace, a.trace);
    }
  }
  std::ostream& summary = a.trace == "-" ? std::cerr : std::cout;
  summary << "status=" << lowrank::to_string(trace.status)
          << " iterations=" << trace.iterations();
  if (!trace.records.empty()) {
    summary << " residual_rel=" << trace.last().residual_rel;
    if (!std::isnan(trace.last().truth_error_rel)) {
      summary << " truth_error_rel=" << trace.last().truth_error_rel;
    }
  }
  summary << '\n';
  if (trace.status == lowrank::SolveStatus::error) {
    std::cerr << "error: " << trace.message << '\n';
    return 2;
  }
  return 0;
}

// ---------------------------------------------------------------------------

struct SweepArgs {
  std::string kind;
  std::string experiment;
  std::string sizes;
  Index n = 0;
  Index n1 = 0;
  Index n2 = 0;
  std::string ranks;
  std::string oversampling;
  std::string measurements;
  std::string sigmas;
  std::string sigmas_log;
  std::string algorithms = "niht,prgd,rgd,shampoo-rgd";
  int reps = 0;
  std::string distribution = "auto";
  std::string ratings;
  std::string ratings_format = "triples";
  int workers = 0;
  std::string output = "-";
  std::string trace_dir;
  SolverFlags solver;
};

int run_sweep_command(const SweepArgs& a) {
  const auto kind = lowrank::parse_sweep_kind(a.kind);
  usage_check(kind.has_value(), "unknown sweep kind '" + a.kind + "'");
  a.solver.validate();

  lowrank::SweepSpec spec;
  spec.kind = *kind;
  spec.experiment = a.experiment;
  spec.seed = a.solver.seed;
  spec.solver.step_constant = a.solver.step_constant;
  spec.solver.epsilon_scale = a.solver.epsilon_scale;
  spec.max_iterations = a.solver.max_iters;
  spec.stop = a.solver.stop();
  spec.workers = workers_from(a.workers);
  spec.keep_traces = !a.trace_dir.empty();
  if (!a.sizes.empty()) spec.sizes = parse_integers(a.sizes);
  spec.n1 = a.n1 > 0 ? a.n1 : a.n;
  spec.n2 = a.n2 > 0 ? a.n2 : spec.n1;
  if (!a.ranks.empty()) spec.ranks = parse_integers(a.ranks);
  if (!a.oversampling.empty()) spec.oversampling = parse_reals(a.oversampling);
  if (!a.measurements.empty()) spec.measurements = parse_integers(a.measurements);
  usage_check(a.sigmas.empty() || a.sigmas_log.empty(),
              "--sigmas and --sigmas-log are exclusive");
  if (!a.sigmas.empty()) spec.sigmas = parse_reals(a.sigmas);
  if (!a.sigmas_log.empty()) spec.sigmas = parse_logspace(a.sigmas_log);
  if (const auto d = parse_distribution(a.distribution)) spec.distribution = *d;
  spec.ratings_path = a.ratings;
  spec.ratings_format = parse_format(a.ratings_format);
  usage_check(a.reps >= 0, "--reps must be positive");
  spec.reps = a.reps > 0 ? a.reps
              : spec.kind == lowrank::SweepKind::success_grid ? 10
                                                            : 5;
  if (spec.kind == lowrank::SweepKind::phase_retrieval) spec.ranks = {1};
  usage_check(spec.kind != lowrank::SweepKind::fit_ratings || !a.solver.tol_truth,
              "ratings data has no ground truth");

  const std::vector<std::string> algorithms = split(a.algorithms, ',');
  for (const auto& name : algorithms) {
    usage_check(lowrank::is_algorithm_name(name), "unknown algorithm '" + name + "'");
  }
  usage_check(!algorithms.empty(), "no algorithms selected");
  // Grid feasibility without touching any file.
  if (spec.kind != lowrank::SweepKind::fit_ratings) {
    try {
      lowrank::detail::grid_points(spec);
    } catch (const lowrank::Error& e) {
      throw UsageError(e.what());
    }
  } else {
    usage_check(!spec.ratings_path.empty(), "--ratings is required");
    usage_check(!spec.ranks.empty(), "--ranks is required");
  }
  require_parent_dir(a.output);
  if (!a.trace_dir.empty()) {
    usage_check(std::filesystem::is_directory(a.trace_dir),
                "trace directory does not exist: " + a.trace_dir);
  }

  std::vector<lowrank::ExperimentResult> results;
  try {
    results = lowrank::run_sweep(spec, algorithms);
  } catch (const lowrank::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  if (a.output == "-") {
    lowrank::emit_results(std::cout, results);
  } else {
    lowrank::emit_results(results, a.output);
  }
  if (!a.trace_dir.empty()) {
    std::size_t cell = 0;
    for (const auto& res : results) {
      for (std::size_t rep = 0; rep < res.runs.size(); ++rep) {
        if (!res.runs[rep].trace) continue;
        const std::string name = res.experiment + "_" + res.algorithm + "_row" +
                                 std::to_string(cell) + "_rep" +
                                 std::to_string(rep) + ".csv";
        lowrank::write_trace(*res.runs[rep].trace,
                             (std::filesystem::path(a.trace_dir) / name).string());
      }
      ++cell;
    }
  }
  for (const auto& res : results) {
    for (const auto& run : res.runs) {
      if (run.status == lowrank::SolveStatus::error) {
        std::cerr << "warning: " << res.algorithm << " seed " << run.seed << ": "
                  << run.message << '\n';
      }
    }
  }
  return 0;
}

// ---------------------------------------------------------------------------

struct IngestArgs {
  std::string ratings;
  std::string format = "triples";
  std::string export_path;
};

int run_ingest(const IngestArgs& a) {
  const auto format = parse_format(a.format);
  require_parent_dir(a.export_path);
  try {
    const lowrank::RatingsData data = lowrank::ingest_ratings(a.ratings, format);
    std::cout << "rows=" << data.op->rows() << " cols=" << data.op->cols()
              << " observations=" << data.op->size()
              << " sampling_ratio=" << data.op->sampling_ratio() << '\n';
    if (!a.export_path.empty()) lowrank::write_triples(a.export_path, *data.op, data.y);
  } catch (const lowrank::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app("Low-rank matrix recovery on the fixed-rank manifold");
  app.option_defaults()->always_capture_default();
  app.require_subcommand(1);

  SolveArgs solve;
  CLI::App* s = app.add_subcommand("solve", "Solve one generated or ratings problem");
  s->add_option("--problem", solve.problem,
                "completion | gaussian | phase-retrieval | ratings")
      ->required();
  s->add_option("--n1", solve.n1, "Rows (signal length for phase retrieval)");
  s->add_option("--n2", solve.n2, "Columns (defaults to n1)");
  s->add_option("--rank", solve.rank, "Target rank r");
  s->add_option("--oversampling", solve.oversampling,
                "OS = m / ((n1 + n2 - r) r)");
  s->add_option("--measurements", solve.measurements,
                "Measurement count m (phase retrieval defaults to 6 n1)");
  s->add_option("--sigma", solve.sigma, "Noise level, ||e|| = sigma ||y||");
  s->add_option("--distribution", solve.distribution,
                "Factor entries: auto | uniform01 | gaussian "
                "(auto: uniform01 for completion, gaussian otherwise)");
  s->add_option("--algorithm", solve.algorithm,
                "prgd | rgd | shampoo-rgd | niht | adaptive-prgd | adaptive-rgd");
  s->add_option("--ratings", solve.ratings, "Ratings file for problem ratings");
  s->add_option("--ratings-format", solve.ratings_format,
                "triples | movielens-dat");
  s->add_option("--trace", solve.trace, "Trace CSV path ('-' for stdout)");
  solve.solver.add(*s, "relative change 1e-5");

  SweepArgs sweep;
  CLI::App* w = app.add_subcommand("sweep", "Run an experiment grid and emit a results CSV");
  w->add_option("--kind", sweep.kind,
                "size | oversampling | noise | success-grid | phase-retrieval | "
                "fit-ratings")
      ->required();
  w->add_option("--experiment", sweep.experiment, "Label for the experiment column");
  w->add_option("--sizes", sweep.sizes, "Square sizes n for the size sweep");
  w->add_option("--n", sweep.n, "Square size (n1 = n2 = n)");
  w->add_option("--n1", sweep.n1, "Rows");
  w->add_option("--n2", sweep.n2, "Columns");
  w->add_option("--ranks", sweep.ranks, "Ranks");
  w->add_option("--oversampling", sweep.oversampling, "Oversampling factors OS");
  w->add_option("--measurements", sweep.measurements, "Measurement counts m");
  w->add_option("--sigmas", sweep.sigmas, "Noise levels");
  w->add_option("--sigmas-log", sweep.sigmas_log,
                "Log-spaced noise levels start:stop:count");
  w->add_option("--algorithms", sweep.algorithms, "Comma-separated algorithm names");
  w->add_option("--reps", sweep.reps,
                "Replications per grid point (0: 10 for success-grid, 5 otherwise)");
  w->add_option("--distribution", sweep.distribution,
                "Completion factor entries: auto | uniform01 | gaussian");
  w->add_option("--ratings", sweep.ratings, "Ratings file for fit-ratings");
  w->add_option("--ratings-format", sweep.ratings_format, "triples | movielens-dat");
  w->add_option("--workers", sweep.workers,
                "Worker threads (0: LOWRANK_WORKERS or 1)");
  w->add_option("--output", sweep.output, "Results CSV path ('-' for stdout)");
  w->add_option("--trace-dir", sweep.trace_dir, "Directory for per-run trace CSVs");
  sweep.solver.add(*w,
                   "truth error 1e-4; relative change 1e-5 for noise; residual "
                   "1e-8 for phase-retrieval; residual 1e-12 for fit-ratings");

  IngestArgs ingest;
  CLI::App* g = app.add_subcommand("ingest-check", "Parse a ratings file and report its shape");
  g->add_option("--ratings", ingest.ratings, "Ratings file")->required();
  g->add_option("--format", ingest.format, "triples | movielens-dat");
  g->add_option("--export", ingest.export_path, "Write the parsed entries as triples");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << e.what() << "\n\n" << app.help();
    return 1;
  }

  try {
    if (s->parsed()) return run_solve(solve);
    if (w->parsed()) return run_sweep_command(sweep);
    return run_ingest(ingest);
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
}
