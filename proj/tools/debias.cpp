// debias: command-line front end for the randomized-level debiased estimators.
//
//   debias run          --app quantile --source exponential:1 --p 0.5 --reps 10000 --seed 7
//   debias compare-saa  --problem quadratic --source normal:1,1 --fixed-n 32 --reps 10000
//   debias pilot        --app func_mean --source bernoulli:0.3 --function square
//   debias ingest-check --data file.csv --response y
//
// Exit codes: 0 success, 1 validation, 2 runtime or failure budget, 3 I/O.

#include <iostream>
#include <random>
#include <sstream>

#include <CLI11.hpp>

#include "debias/app.hpp"

namespace {

constexpr int kOk = 0;
constexpr int kValidation = 1;
constexpr int kRuntime = 2;
constexpr int kIo = 3;

void print_summary(const debias::EstimatorSummary& s, std::ostream& out) {
  for (std::size_t j = 0; j < s.mean.size(); ++j) {
    out << (s.mean.size() > 1 ? "component " + std::to_string(j) + ": " : "") << "mean "
        << debias::csv::format_double(s.mean[j]) << "  se " << debias::csv::format_double(s.std_error[j]) << "  "
        << s.confidence * 100 << "% CI [" << debias::csv::format_double(s.ci_low[j]) << ", "
        << debias::csv::format_double(s.ci_high[j]) << "]\n";
  }
  out << "replications " << s.count << "  mean cost " << debias::csv::format_double(s.mean_cost)
      << "  work-normalized variance " << debias::csv::format_double(s.work_normalized_variance) << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  using namespace debias;
  app::RunConfig cfg;
  std::string application = "func_mean";
  double ratio = 0, alpha = 0;
  int burn_in = 0;
  std::uint64_t seed = 0;

  CLI::App cli{"Unbiased randomized-level Monte Carlo estimators"};
  cli.set_config("--config", "", "Key-value config file (INI/TOML); flags override it");
  cli.require_subcommand(1);

  cli.add_option("--app", application, "func_mean | regen | snis | saa_value | saa_solution | quantile")
      ->capture_default_str();
  cli.add_option("--source", cfg.sources,
                 "Parametric source, repeatable for independent components: bernoulli:q uniform:a,b exponential:rate "
                 "normal:mean,sd lognormal:mu,sigma constant:c");
  cli.add_option("--data", cfg.data_path, "CSV dataset resampled with replacement");
  cli.add_option("--response", cfg.response_column, "Response column of --data");
  cli.add_option("--features", cfg.feature_columns, "Feature columns of --data (default: all but the response)")
      ->delimiter(',');
  cli.add_flag("--intercept", cfg.intercept, "Prepend a constant-one feature");
  cli.add_option("--function", cfg.function, "identity | square | exp | ratio | log-sum")->capture_default_str();
  cli.add_option("--queue", cfg.queue, "mm1 | gg1")->capture_default_str();
  cli.add_option("--lambda", cfg.arrival_rate, "M/M/1 arrival rate")->capture_default_str();
  cli.add_option("--mu", cfg.service_rate, "M/M/1 service rate")->capture_default_str();
  cli.add_option("--interarrival", cfg.interarrival, "GI/G/1 interarrival source");
  cli.add_option("--service", cfg.service, "GI/G/1 service source");
  cli.add_option("--reward", cfg.reward, "wait | one | exceeds:x")->capture_default_str();
  cli.add_option("--max-cycle", cfg.max_cycle_length, "Longest simulated regeneration cycle")->capture_default_str();
  cli.add_option("--target", cfg.target, "SNIS unnormalized target, normal:mean,sd")->capture_default_str();
  cli.add_option("--proposal", cfg.proposal, "SNIS proposal source")->capture_default_str();
  cli.add_option("--snis-reward", cfg.snis_reward, "identity | square | one")->capture_default_str();
  cli.add_option("--problem", cfg.problem, "quadratic | linear | ridge | lasso | logistic")->capture_default_str();
  cli.add_option("--ridge-lambda", cfg.ridge_lambda, "Ridge shrinkage")->capture_default_str();
  cli.add_option("--lasso-radius", cfg.lasso_radius, "L1-ball radius")->capture_default_str();
  cli.add_option("--beta0", cfg.beta0, "True coefficients of the synthetic regression")->delimiter(',');
  cli.add_option("--noise-sd", cfg.noise_sd, "Noise level of the synthetic regression")->capture_default_str();
  cli.add_option("--solver-tol", cfg.solver_tolerance, "KKT acceptance tolerance")->capture_default_str();
  cli.add_option("--baseline-samples", cfg.baseline_samples, "Sample size of the reference solve")
      ->capture_default_str();
  cli.add_option("--p", cfg.p, "Quantile level")->capture_default_str();
  auto* ratio_opt = cli.add_option("--r", ratio, "Geometric ratio of the level law");
  auto* burn_opt = cli.add_option("--burn-in", burn_in, "Smallest level B");
  auto* alpha_opt = cli.add_option("--alpha", alpha, "Assumed decay exponent (sets the default r)");
  cli.add_option("--reps", cfg.reps, "Replications")->capture_default_str();
  auto* seed_opt = cli.add_option("--seed", seed, "Master seed (random if omitted)");
  cli.add_option("--workers", cfg.workers, "Worker threads")->capture_default_str();
  cli.add_option("--confidence", cfg.confidence, "Confidence level")->capture_default_str();
  cli.add_option("--max-level", cfg.max_level, "Largest level materialized")->capture_default_str();
  cli.add_option("--failure-budget", cfg.failure_budget, "Tolerated fraction of failed replications")
      ->capture_default_str();
  cli.add_option("-o,--output", cfg.output, "Output path prefix")->capture_default_str();
  cli.add_option("--fixed-n", cfg.fixed_n, "compare-saa: plain SAA sample size")->capture_default_str();
  cli.add_option("--pilot-first", cfg.pilot_first, "pilot: first level")->capture_default_str();
  cli.add_option("--pilot-last", cfg.pilot_last, "pilot: last level")->capture_default_str();
  cli.add_option("--pilot-reps", cfg.pilot_reps, "pilot: replications per level")->capture_default_str();

  auto* run_cmd = cli.add_subcommand("run", "Run the estimator; writes <output>.replications.csv and .summary.csv");
  auto* compare_cmd = cli.add_subcommand("compare-saa", "Plain SAA at --fixed-n against the debiased estimator");
  auto* pilot_cmd = cli.add_subcommand("pilot", "Level-difference decay table and recommended r");
  auto* ingest_cmd = cli.add_subcommand("ingest-check", "Parse --data and report its shape");
  for (auto* sub : {run_cmd, compare_cmd, pilot_cmd, ingest_cmd}) sub->fallthrough();

  try {
    cli.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return cli.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return cli.exit(e);
  } catch (const CLI::ParseError& e) {
    cli.exit(e);
    return kValidation;
  }

  try {
    cfg.application = app::parse_application(application);
    if (*ratio_opt) cfg.ratio = ratio;
    if (*burn_opt) cfg.burn_in = burn_in;
    if (*alpha_opt) cfg.alpha = alpha;
    if (!*seed_opt) {
      seed = (static_cast<std::uint64_t>(std::random_device{}()) << 32) | std::random_device{}();
      std::cerr << "seed " << seed << '\n';
    }

    if (*run_cmd) {
      const auto a = app::run(cfg, seed);
      print_summary(a.result.summary, std::cout);
      if (!a.result.failures.empty()) {
        std::cerr << a.result.failures.size() << " replication(s) failed and were excluded\n";
      }
      if (!a.log_path.empty()) std::cout << "wrote " << a.log_path << " and " << a.summary_path << '\n';
    } else if (*compare_cmd) {
      const auto r = app::compare_saa(cfg, seed);
      std::ostringstream curves;
      app::write_comparison(curves, r);
      const std::string path = cfg.output + ".comparison.csv";
      app::write_file(path, curves.str());
      std::cout << "plain SAA (n=" << r.fixed_n << "):\n";
      print_summary(r.saa_summary, std::cout);
      std::cout << "debiased:\n";
      print_summary(r.debiased_summary, std::cout);
      if (r.truth) {
        const double f = r.truth->value;
        const auto& s = r.saa_summary;
        const auto& d = r.debiased_summary;
        std::cout << "reference value " << csv::format_double(f) << "\n"
                  << "plain SAA bias " << csv::format_double(s.mean[0] - f) << " (z "
                  << csv::format_double((s.mean[0] - f) / s.std_error[0]) << ")\n"
                  << "debiased bias " << csv::format_double(d.mean[0] - f) << " (z "
                  << csv::format_double((d.mean[0] - f) / d.std_error[0]) << ")\n";
      }
      std::cout << "total cost: plain " << csv::format_double(r.saa_cost) << ", debiased "
                << csv::format_double(r.debiased_cost) << "\nwrote " << path << '\n';
    } else if (*pilot_cmd) {
      app::write_pilot(std::cout, app::pilot(cfg, seed));
    } else if (*ingest_cmd) {
      if (cfg.data_path.empty()) throw InvalidArgument("ingest-check needs --data");
      const auto ds = csv::ingest_csv(cfg.data_path, cfg.response_column, cfg.feature_columns);
      std::cout << ds.rows.size() << " rows, " << ds.columns.size() << " columns:";
      for (const auto& c : ds.columns) std::cout << ' ' << c;
      std::cout << '\n';
    }
    return kOk;
  } catch (const InvalidArgument& e) {
    std::cerr << "invalid configuration: " << e.what() << '\n';
    return kValidation;
  } catch (const csv::IoError& e) {
    std::cerr << "I/O error: " << e.what() << '\n';
    return kIo;
  } catch (const csv::FormatError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kIo;
  } catch (const DegenerateFunctional& e) {
    std::cerr << e.what() << '\n';
    return kRuntime;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kRuntime;
  }
}
