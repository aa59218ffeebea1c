#pragma once

// Experiment orchestration behind the `debias` command line tool: run
// configuration, validation, oracle assembly, CSV artifacts, the SAA
// comparison harness and the pilot decay study.

#include <cmath>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "debias/core.hpp"
#include "debias/csv.hpp"
#include "debias/errors.hpp"
#include "debias/func_mean.hpp"
#include "debias/quantile.hpp"
#include "debias/ratio.hpp"
#include "debias/saa.hpp"
#include "debias/sampling.hpp"

namespace debias::app {

enum class Application { func_mean, regen, snis, saa_value, saa_solution, quantile };

inline Application parse_application(const std::string& s) {
  if (s == "func_mean") return Application::func_mean;
  if (s == "regen") return Application::regen;
  if (s == "snis") return Application::snis;
  if (s == "saa_value") return Application::saa_value;
  if (s == "saa_solution") return Application::saa_solution;
  if (s == "quantile") return Application::quantile;
  throw InvalidArgument("unknown application '" + s +
                        "' (expected func_mean, regen, snis, saa_value, saa_solution, quantile)");
}

inline std::string to_string(Application a) {
  switch (a) {
    case Application::func_mean: return "func_mean";
    case Application::regen: return "regen";
    case Application::snis: return "snis";
    case Application::saa_value: return "saa_value";
    case Application::saa_solution: return "saa_solution";
    case Application::quantile: return "quantile";
  }
  return "?";
}

struct RunConfig {
  Application application = Application::func_mean;

  // Data: parametric source specs (one per independent component) or a CSV file.
  std::vector<std::string> sources;
  std::string data_path;
  std::string response_column;
  std::vector<std::string> feature_columns;
  bool intercept = false;

  std::string function = "square";  // func_mean

  std::string queue = "mm1";  // regen: mm1 | gg1
  double arrival_rate = 0.5;
  double service_rate = 1.0;
  std::string interarrival;  // gg1 source specs
  std::string service;
  std::string reward = "wait";  // wait | one | exceeds:<x>
  std::uint64_t max_cycle_length = 10'000'000;

  std::string target = "normal:0,1";  // snis: unnormalized target family
  std::string proposal = "normal:0,2";
  std::string snis_reward = "identity";  // identity | square | one

  std::string problem = "quadratic";  // saa: quadratic | linear | ridge | lasso | logistic
  double ridge_lambda = 0.0;
  double lasso_radius = 1.0;
  std::vector<double> beta0;  // synthetic regression coefficients
  double noise_sd = 1.0;
  double solver_tolerance = 1e-12;
  std::size_t baseline_samples = 1'000'000;

  double p = 0.5;  // quantile

  std::optional<double> ratio;
  std::optional<int> burn_in;
  std::optional<double> alpha;

  std::size_t reps = 10'000;
  std::optional<std::uint64_t> seed;
  unsigned workers = 1;
  double confidence = 0.95;
  int max_level = kDefaultMaxLevel;
  double failure_budget = 1e-3;
  std::string output = "debias_run";

  // compare-saa
  std::size_t fixed_n = 32;

  // pilot
  int pilot_first = 2;
  int pilot_last = 9;
  std::size_t pilot_reps = 2000;
};

/// Parametric source plus its first two moments, when known.
struct ParsedSource {
  SampleSource source;
  std::vector<double> mean;
  std::vector<double> variance;
};

namespace detail {

inline std::vector<double> parse_numbers(const std::string& text, const std::string& context) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    double v;
    if (!csv::parse_double(csv::trim(item), v)) throw InvalidArgument("bad number '" + item + "' in " + context);
    out.push_back(v);
  }
  return out;
}

inline std::pair<std::string, std::vector<double>> split_spec(const std::string& spec) {
  const auto colon = spec.find(':');
  if (colon == std::string::npos) return {spec, {}};
  return {spec.substr(0, colon), parse_numbers(spec.substr(colon + 1), "'" + spec + "'")};
}

inline void expect_args(const std::string& spec, const std::vector<double>& args, std::size_t n) {
  if (args.size() != n) {
    throw InvalidArgument("source '" + spec + "' needs " + std::to_string(n) + " parameter(s)");
  }
}

}  // namespace detail

/// name:params, e.g. bernoulli:0.3, uniform:0,1, exponential:1, normal:0,1
/// (mean, sd), lognormal:0,1, constant:2.
inline ParsedSource parse_source(const std::string& spec) {
  const auto [name, a] = detail::split_spec(spec);
  if (name == "bernoulli") {
    detail::expect_args(spec, a, 1);
    return {sources::bernoulli(a[0]), {a[0]}, {a[0] * (1 - a[0])}};
  }
  if (name == "uniform") {
    detail::expect_args(spec, a, 2);
    return {sources::uniform(a[0], a[1]), {(a[0] + a[1]) / 2}, {(a[1] - a[0]) * (a[1] - a[0]) / 12}};
  }
  if (name == "exponential") {
    detail::expect_args(spec, a, 1);
    return {sources::exponential(a[0]), {1 / a[0]}, {1 / (a[0] * a[0])}};
  }
  if (name == "normal") {
    detail::expect_args(spec, a, 2);
    return {sources::normal(a[0], a[1]), {a[0]}, {a[1] * a[1]}};
  }
  if (name == "lognormal") {
    detail::expect_args(spec, a, 2);
    const double s2 = a[1] * a[1];
    return {sources::lognormal(a[0], a[1]), {std::exp(a[0] + s2 / 2)}, {std::expm1(s2) * std::exp(2 * a[0] + s2)}};
  }
  if (name == "constant") {
    detail::expect_args(spec, a, 1);
    return {sources::constant(a[0]), {a[0]}, {0.0}};
  }
  throw InvalidArgument("unknown source '" + spec + "' (expected bernoulli, uniform, exponential, normal, lognormal, constant)");
}

inline ParsedSource parse_sources(const std::vector<std::string>& specs) {
  if (specs.empty()) throw InvalidArgument("no source given (use --source or --data)");
  if (specs.size() == 1) return parse_source(specs[0]);
  std::vector<SampleSource> parts;
  ParsedSource out{sources::constant(0.0), {}, {}};
  for (const auto& s : specs) {
    auto p = parse_source(s);
    parts.push_back(p.source);
    out.mean.insert(out.mean.end(), p.mean.begin(), p.mean.end());
    out.variance.insert(out.variance.end(), p.variance.begin(), p.variance.end());
  }
  out.source = sources::product(std::move(parts));
  return out;
}

/// Loads the configured CSV; rows are (features..., response), with a leading
/// column of ones when `intercept` is set.
inline Batch load_dataset(const RunConfig& c) {
  auto ds = csv::ingest_csv(c.data_path, c.response_column, c.feature_columns);
  if (!c.intercept) return std::move(ds.rows);
  Batch rows(ds.rows.dimension() + 1);
  rows.reserve(ds.rows.size());
  for (std::size_t i = 0; i < ds.rows.size(); ++i) {
    auto out = rows.append_row();
    out[0] = 1.0;
    const auto in = ds.rows.row(i);
    std::copy(in.begin(), in.end(), out.begin() + 1);
  }
  return rows;
}

inline bool is_saa(Application a) { return a == Application::saa_value || a == Application::saa_solution; }

/// Window (lo, hi) the ratio must fall in for this configuration.
inline std::pair<double, double> ratio_window(const RunConfig& c) {
  if (c.application == Application::quantile) return {0.5, kQuantileRatioUpper};
  return {0.5, ratio_upper_bound(c.alpha.value_or(1.0))};
}

inline int default_burn_in(const RunConfig& c) {
  if (c.application == Application::quantile) return base_level(c.p);
  if (is_saa(c.application) && c.problem != "quadratic") return 10;
  return 0;
}

/// Rejects invalid combinations before any sampling. Throws InvalidArgument.
inline void validate(const RunConfig& c) {
  if (c.reps < 2) throw InvalidArgument("reps must be at least 2");
  if (c.workers < 1) throw InvalidArgument("workers must be at least 1");
  if (!(c.confidence > 0.0 && c.confidence < 1.0)) throw InvalidArgument("confidence must lie in (0, 1)");
  if (!(c.failure_budget >= 0.0 && c.failure_budget < 1.0)) throw InvalidArgument("failure budget must lie in [0, 1)");
  if (c.max_level < 0 || c.max_level > 40) throw InvalidArgument("max level must lie in [0, 40]");
  if (c.alpha && !(*c.alpha > 0.0)) throw InvalidArgument("alpha must be positive");
  if (c.burn_in && *c.burn_in < 0) throw InvalidArgument("burn-in must be non-negative");
  if (c.burn_in && *c.burn_in > c.max_level) throw InvalidArgument("burn-in exceeds the maximum level");
  if (c.ratio) {
    const auto [lo, hi] = ratio_window(c);
    if (!(*c.ratio > lo && *c.ratio < hi)) {
      std::ostringstream msg;
      msg << "ratio r=" << *c.ratio << " outside the admissible window (1/2, ";
      if (c.application == Application::quantile) msg << "1-2^{-3/2}";
      else msg << "1-2^{-(1+alpha)}";
      msg << ") = (0.5, " << std::setprecision(6) << hi << ")";
      throw InvalidArgument(msg.str());
    }
  }
  const bool has_data = !c.data_path.empty();
  if (has_data && !c.sources.empty()) throw InvalidArgument("give either --source or --data, not both");
  if (!c.sources.empty()) parse_sources(c.sources);

  switch (c.application) {
    case Application::func_mean:
      if (!has_data && c.sources.empty()) throw InvalidArgument("func_mean needs --source or --data");
      functionals::by_name(c.function, 1);
      break;
    case Application::quantile:
      if (!(c.p > 0.0 && c.p < 1.0)) throw InvalidArgument("quantile level p must lie in (0, 1)");
      if (!has_data && c.sources.size() != 1) throw InvalidArgument("quantile needs exactly one scalar --source");
      if (c.burn_in && *c.burn_in < base_level(c.p)) {
        throw InvalidArgument("burn-in " + std::to_string(*c.burn_in) + " is below the quantile base level " +
                              std::to_string(base_level(c.p)) + " for p=" + csv::format_double(c.p));
      }
      break;
    case Application::regen:
      if (c.queue == "mm1") {
        if (!(c.arrival_rate > 0.0 && c.service_rate > c.arrival_rate))
          throw InvalidArgument("M/M/1 needs 0 < arrival rate < service rate");
      } else if (c.queue == "gg1") {
        if (c.interarrival.empty() || c.service.empty()) throw InvalidArgument("gg1 needs --interarrival and --service");
      } else {
        throw InvalidArgument("unknown queue '" + c.queue + "' (expected mm1 or gg1)");
      }
      if (c.reward != "wait" && c.reward != "one" && c.reward.rfind("exceeds:", 0) != 0)
        throw InvalidArgument("unknown reward '" + c.reward + "' (expected wait, one, exceeds:<x>)");
      if (c.max_cycle_length < 1) throw InvalidArgument("cycle cap must be positive");
      break;
    case Application::snis:
      if (c.snis_reward != "identity" && c.snis_reward != "square" && c.snis_reward != "one")
        throw InvalidArgument("unknown snis reward '" + c.snis_reward + "' (expected identity, square, one)");
      if (detail::split_spec(c.target).first != "normal") throw InvalidArgument("snis target must be normal:<mean>,<sd>");
      if (!parse_source(c.proposal).source.has_density()) throw InvalidArgument("snis proposal needs a density");
      break;
    case Application::saa_value:
    case Application::saa_solution: {
      if (c.problem != "quadratic" && c.problem != "linear" && c.problem != "ridge" && c.problem != "lasso" &&
          c.problem != "logistic")
        throw InvalidArgument("unknown problem '" + c.problem + "' (expected quadratic, linear, ridge, lasso, logistic)");
      if (!(c.ridge_lambda >= 0.0)) throw InvalidArgument("ridge shrinkage must be non-negative");
      if (!(c.lasso_radius >= 0.0)) throw InvalidArgument("lasso radius must be non-negative");
      if (!(c.solver_tolerance > 0.0)) throw InvalidArgument("solver tolerance must be positive");
      if (c.problem == "quadratic") {
        if (!has_data && c.sources.empty()) throw InvalidArgument("quadratic problem needs --source or --data");
      } else if (!has_data && c.beta0.empty()) {
        throw InvalidArgument("synthetic regression needs --beta0 (or use --data)");
      }
      if (!(c.noise_sd >= 0.0)) throw InvalidArgument("noise level must be non-negative");
      break;
    }
  }
}

namespace detail {

inline std::function<double(double)> make_reward(const std::string& name) {
  if (name == "wait") return [](double w) { return w; };
  if (name == "one") return [](double) { return 1.0; };
  const double x = parse_numbers(name.substr(8), "reward")[0];
  return [x](double w) { return w > x ? 1.0 : 0.0; };
}

inline saa::ProblemKind problem_kind(const std::string& s) {
  if (s == "quadratic") return saa::ProblemKind::quadratic;
  if (s == "linear") return saa::ProblemKind::linear;
  if (s == "ridge") return saa::ProblemKind::ridge;
  if (s == "lasso") return saa::ProblemKind::lasso;
  return saa::ProblemKind::logistic;
}

}  // namespace detail

/// Data source for the configuration: CSV rows or parametric/synthetic draws.
inline SampleSource build_source(const RunConfig& c) {
  if (!c.data_path.empty()) return empirical_source(load_dataset(c));
  if (is_saa(c.application) && c.problem != "quadratic") {
    if (c.problem == "logistic") return saa::synthetic::logistic_source(c.beta0, c.intercept);
    return saa::synthetic::regression_source(c.beta0, c.noise_sd, c.intercept);
  }
  return parse_sources(c.sources).source;
}

inline saa::SaaProblem build_problem(const RunConfig& c, std::size_t sample_dimension) {
  const auto kind = detail::problem_kind(c.problem);
  const std::size_t d = kind == saa::ProblemKind::quadratic ? sample_dimension : sample_dimension - 1;
  if (d == 0) throw InvalidArgument("regression data need at least one feature column");
  saa::SolverSettings settings;
  settings.tolerance = c.solver_tolerance;
  return saa::builtin_problem(kind, d, {c.ridge_lambda, c.lasso_radius}, settings);
}

inline LevelDistribution build_distribution(const RunConfig& c) {
  const int base = c.burn_in.value_or(default_burn_in(c));
  if (c.application == Application::quantile) {
    return quantile_level_distribution(c.p, c.ratio.value_or(kQuantileDefaultRatio), base);
  }
  const double alpha = c.alpha.value_or(1.0);
  return LevelDistribution(base, c.ratio.value_or(optimal_ratio(alpha)), alpha);
}

/// Level oracle for the configured application. `saa_target` overrides the
/// target implied by the application (used by the comparison harness).
inline AnyOracle build_oracle(const RunConfig& c, std::optional<saa::SaaTarget> saa_target = std::nullopt) {
  switch (c.application) {
    case Application::func_mean: {
      auto source = build_source(c);
      auto g = functionals::by_name(c.function, source.dimension());
      return make_func_mean_oracle(std::move(g), std::move(source));
    }
    case Application::quantile:
      return make_quantile_oracle(build_source(c), c.p);
    case Application::regen: {
      RegenerativeProcess proc =
          c.queue == "mm1"
              ? processes::mm1(c.arrival_rate, c.service_rate, detail::make_reward(c.reward))
              : processes::lindley("gg1", parse_source(c.interarrival).source, parse_source(c.service).source,
                                   detail::make_reward(c.reward));
      proc.max_cycle_length = c.max_cycle_length;
      return make_regen_oracle(std::move(proc));
    }
    case Application::snis: {
      const auto [name, t] = detail::split_spec(c.target);
      detail::expect_args(c.target, t, 2);
      const double mean = t[0], sd = t[1];
      if (!(sd > 0.0)) throw InvalidArgument("snis target sd must be positive");
      auto log_h = [mean, sd](double y) {
        const double z = (y - mean) / sd;
        return -0.5 * z * z;
      };
      std::function<double(double)> f;
      if (c.snis_reward == "identity") f = [](double y) { return y; };
      else if (c.snis_reward == "square") f = [](double y) { return y * y; };
      else f = [](double) { return 1.0; };
      return make_snis_oracle(log_h, parse_source(c.proposal).source, std::move(f));
    }
    case Application::saa_value:
    case Application::saa_solution: {
      auto source = build_source(c);
      auto problem = build_problem(c, source.dimension());
      const auto target = saa_target.value_or(c.application == Application::saa_value ? saa::SaaTarget::value
                                                                                      : saa::SaaTarget::solution);
      return saa::make_saa_oracle(std::move(problem), std::move(source), target);
    }
  }
  throw InvalidArgument("unsupported application");
}

inline RunOptions run_options(const RunConfig& c, std::uint64_t seed) {
  RunOptions o;
  o.n_reps = c.reps;
  o.seed = seed;
  o.workers = c.workers;
  o.confidence = c.confidence;
  o.max_level = c.max_level;
  o.failure_budget = c.failure_budget;
  return o;
}

inline std::vector<std::string> component_names(std::size_t d) {
  if (d == 1) return {"value"};
  std::vector<std::string> names;
  for (std::size_t j = 0; j < d; ++j) names.push_back("value_" + std::to_string(j));
  return names;
}

/// rep_index, level, value components, cost.
inline void write_replication_log(std::ostream& out, const std::vector<Replication>& reps, std::size_t d) {
  out << "rep_index,level";
  for (const auto& n : component_names(d)) out << ',' << n;
  out << ",cost\n";
  for (const auto& r : reps) {
    out << r.index << ',' << r.level;
    for (double v : r.value) out << ',' << csv::format_double(v);
    out << ',' << csv::format_double(r.cost) << '\n';
  }
}

/// One row per component: mean, variance, se, ci_low, ci_high, mean_cost, wnv.
inline void write_summary(std::ostream& out, const EstimatorSummary& s) {
  out << "component,count,confidence,mean,variance,std_error,ci_low,ci_high,mean_cost,work_normalized_variance\n";
  for (std::size_t j = 0; j < s.mean.size(); ++j) {
    out << j << ',' << s.count << ',' << csv::format_double(s.confidence) << ',' << csv::format_double(s.mean[j]) << ','
        << csv::format_double(s.variance[j]) << ',' << csv::format_double(s.std_error[j]) << ','
        << csv::format_double(s.ci_low[j]) << ',' << csv::format_double(s.ci_high[j]) << ','
        << csv::format_double(s.mean_cost) << ',' << csv::format_double(s.work_normalized_variance) << '\n';
  }
}

inline void write_file(const std::string& path, const std::string& contents) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw csv::IoError("cannot write '" + path + "'");
  out << contents;
  if (!out) throw csv::IoError("write error on '" + path + "'");
}

struct RunArtifacts {
  RunResult result;
  std::size_t dimension = 1;
  std::string log_path;
  std::string summary_path;
};

/// Validates, runs the estimator and writes <output>.replications.csv and
/// <output>.summary.csv. An empty output prefix writes nothing.
inline RunArtifacts run(const RunConfig& c, std::uint64_t seed) {
  validate(c);
  const auto oracle = build_oracle(c);
  const auto dist = build_distribution(c);
  RunArtifacts a;
  a.result = run_estimator(oracle, dist, run_options(c, seed));
  a.dimension = oracle.dimension();
  if (!c.output.empty()) {
    std::ostringstream log, summary;
    write_replication_log(log, a.result.replications, a.dimension);
    write_summary(summary, a.result.summary);
    a.log_path = c.output + ".replications.csv";
    a.summary_path = c.output + ".summary.csv";
    write_file(a.log_path, log.str());
    write_file(a.summary_path, summary.str());
  }
  return a;
}

/// Plain SAA at a fixed sample size against the debiased estimator.
struct ComparisonReport {
  std::optional<saa::Truth> truth;
  std::size_t fixed_n = 0;
  std::vector<double> saa_values;           // f_hat_n per replication
  std::vector<std::vector<double>> saa_solutions;
  std::vector<double> debiased_values;      // Z per replication
  std::vector<std::vector<double>> debiased_solutions;
  double saa_cost = 0.0;
  double debiased_cost = 0.0;
  EstimatorSummary saa_summary;        // components: value, beta...
  EstimatorSummary debiased_summary;
};

/// Reference optimum for the comparison: closed form for synthetic linear,
/// ridge and quadratic instances; a full solve of the dataset for CSV input
/// (the target measure is then the empirical one); a large-sample solve
/// otherwise.
inline std::optional<saa::Truth> comparison_truth(const RunConfig& c, const saa::SaaProblem& problem,
                                                  const SampleSource& source, std::uint64_t seed) {
  auto from_solve = [&](const Batch& rows) {
    const auto r = problem.solve(rows);
    return saa::Truth{r.value, r.beta};
  };
  if (!c.data_path.empty()) return from_solve(load_dataset(c));
  if (c.problem == "quadratic") {
    const auto parsed = parse_sources(c.sources);
    saa::Truth t;
    t.solution = parsed.mean;
    for (double v : parsed.variance) t.value += v;
    return t;
  }
  if (c.problem == "linear") return saa::synthetic::regression_truth(c.beta0, c.noise_sd, 0.0);
  if (c.problem == "ridge") return saa::synthetic::regression_truth(c.beta0, c.noise_sd, c.ridge_lambda);
  const auto big = draw_batch(source, c.baseline_samples, derive_stream(seed, 0, StreamRole::comparison).substream(1, 7));
  return from_solve(big.batch);
}

inline ComparisonReport compare_saa(const RunConfig& config, std::uint64_t seed) {
  RunConfig c = config;
  if (!is_saa(c.application)) c.application = Application::saa_value;
  validate(c);
  if (c.fixed_n < 1) throw InvalidArgument("fixed sample size must be positive");
  const auto source = build_source(c);
  const auto problem = build_problem(c, source.dimension());
  ComparisonReport rep;
  rep.fixed_n = c.fixed_n;
  rep.truth = comparison_truth(c, problem, source, seed);

  const std::size_t d = problem.dimension();
  std::vector<std::optional<Replication>> plain(c.reps);
  debias::detail::parallel_for(c.reps, c.workers, [&](std::size_t i) {
    const auto sampled = draw_batch(source, c.fixed_n, derive_stream(seed, i, StreamRole::comparison));
    try {
      const auto r = problem.solve(sampled.batch);
      std::vector<double> v{r.value};
      v.insert(v.end(), r.beta.begin(), r.beta.end());
      plain[i] = Replication{i, -1, std::move(v), sampled.cost};
    } catch (const EvaluationError&) {
    }
  });
  SummaryAccumulator plain_acc(d + 1);
  std::size_t plain_failures = 0;
  for (auto& r : plain) {
    if (!r) {
      ++plain_failures;
      continue;
    }
    rep.saa_values.push_back(r->value[0]);
    rep.saa_solutions.emplace_back(r->value.begin() + 1, r->value.end());
    rep.saa_cost += r->cost;
    plain_acc.add(*r);
  }
  if (static_cast<double>(plain_failures) > c.failure_budget * static_cast<double>(c.reps)) {
    throw FailureBudgetExceeded(std::to_string(plain_failures) + " plain SAA solves failed at n=" +
                                std::to_string(c.fixed_n));
  }
  rep.saa_summary = plain_acc.summary(c.confidence);

  const auto oracle = build_oracle(c, saa::SaaTarget::joint);
  const auto result = run_estimator(oracle, build_distribution(c), run_options(c, seed));
  for (const auto& r : result.replications) {
    rep.debiased_values.push_back(r.value[0]);
    rep.debiased_solutions.emplace_back(r.value.begin() + 1, r.value.end());
    rep.debiased_cost += r.cost;
  }
  rep.debiased_summary = result.summary;
  return rep;
}

/// Running-mean curves: rep, values, running means, and the sup-norm error of
/// the running mean optimizer against the reference.
inline void write_comparison(std::ostream& out, const ComparisonReport& r) {
  out << "rep,saa_value,saa_value_running_mean,debiased_value,debiased_value_running_mean,"
         "saa_solution_error,debiased_solution_error\n";
  const std::size_t n = std::max(r.saa_values.size(), r.debiased_values.size());
  double saa_sum = 0, deb_sum = 0;
  std::vector<double> saa_beta, deb_beta;
  auto linf_error = [&](const std::vector<double>& sum, double count) {
    if (!r.truth || sum.empty()) return std::nan("");
    double e = 0;
    for (std::size_t j = 0; j < sum.size(); ++j) e = std::max(e, std::abs(sum[j] / count - r.truth->solution[j]));
    return e;
  };
  for (std::size_t i = 0; i < n; ++i) {
    out << i + 1;
    if (i < r.saa_values.size()) {
      saa_sum += r.saa_values[i];
      if (saa_beta.empty()) saa_beta.assign(r.saa_solutions[i].size(), 0.0);
      for (std::size_t j = 0; j < saa_beta.size(); ++j) saa_beta[j] += r.saa_solutions[i][j];
      out << ',' << csv::format_double(r.saa_values[i]) << ',' << csv::format_double(saa_sum / double(i + 1));
    } else {
      out << ",,";
    }
    if (i < r.debiased_values.size()) {
      deb_sum += r.debiased_values[i];
      if (deb_beta.empty()) deb_beta.assign(r.debiased_solutions[i].size(), 0.0);
      for (std::size_t j = 0; j < deb_beta.size(); ++j) deb_beta[j] += r.debiased_solutions[i][j];
      out << ',' << csv::format_double(r.debiased_values[i]) << ',' << csv::format_double(deb_sum / double(i + 1));
    } else {
      out << ",,";
    }
    const double se = i < r.saa_values.size() ? linf_error(saa_beta, double(std::min(i + 1, r.saa_values.size()))) : std::nan("");
    const double de = i < r.debiased_values.size() ? linf_error(deb_beta, double(i + 1)) : std::nan("");
    out << ',' << (std::isnan(se) ? "" : csv::format_double(se)) << ',' << (std::isnan(de) ? "" : csv::format_double(de))
        << '\n';
  }
}

struct PilotReport {
  std::optional<AlphaEstimate> estimate;
  std::optional<double> recommended_ratio;
  std::vector<std::string> notices;
};

/// Decay study of E|delta_n|^2 and the recommended ratio, clamped to the
/// application's window.
inline PilotReport pilot(const RunConfig& c, std::uint64_t seed) {
  validate(c);
  PilotReport rep;
  const auto oracle = build_oracle(c);
  try {
    rep.estimate = estimate_alpha(oracle, c.pilot_first, c.pilot_last, c.pilot_reps, seed, c.workers);
  } catch (const DegenerateFunctional& e) {
    rep.notices.emplace_back(e.what());
    return rep;
  }
  double r = optimal_ratio(rep.estimate->alpha);
  const auto [lo, hi] = ratio_window(c);
  if (c.application == Application::quantile) {
    const double clamped = std::clamp(r, lo + 0.01, hi - 0.005);
    if (clamped != r) rep.notices.push_back("recommendation clamped into the quantile window (1/2, 1-2^{-3/2})");
    r = clamped;
  }
  rep.recommended_ratio = r;
  if (is_saa(c.application)) {
    const auto check = saa::check_solver_resolution(*rep.estimate, c.solver_tolerance);
    if (!check.ok) {
      rep.notices.push_back("solver tolerance " + csv::format_double(check.tolerance) +
                            " is within 100x of the lower quartile of |delta| (" +
                            csv::format_double(check.delta_lower_quartile) +
                            ") at the largest pilot level; solver noise may pollute the decay");
    }
  }
  if (c.application == Application::func_mean && c.data_path.empty()) {
    const auto source = build_source(c);
    const double order = 3.0 * (1.0 + functionals::by_name(c.function, source.dimension()).holder_exponent);
    const auto diag = moment_diagnostic(source, order, 100'000, derive_stream(seed, 1, StreamRole::comparison));
    if (diag.suspicious) {
      rep.notices.push_back("moment of order " + csv::format_double(order) +
                            " looks heavy-tailed (one draw carries " + csv::format_double(diag.largest_share) +
                            " of the estimate)");
    }
  }
  return rep;
}

inline void write_pilot(std::ostream& out, const PilotReport& r) {
  if (r.estimate) {
    out << "level,reps,mean_delta_sq,log2_mean_delta_sq,abs_delta_lower_quartile\n";
    for (const auto& row : r.estimate->table) {
      out << row.level << ',' << row.reps << ',' << csv::format_double(row.mean_square) << ','
          << csv::format_double(std::log2(row.mean_square)) << ',' << csv::format_double(row.abs_lower_quartile)
          << '\n';
    }
    out << "# slope " << csv::format_double(r.estimate->slope) << ", alpha " << csv::format_double(r.estimate->alpha)
        << '\n';
  }
  if (r.recommended_ratio) out << "# recommended r " << csv::format_double(*r.recommended_ratio) << '\n';
  for (const auto& n : r.notices) out << "# " << n << '\n';
}

}  // namespace debias::app
