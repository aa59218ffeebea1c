#include <catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "debias/core.hpp"
#include "debias/func_mean.hpp"
#include "oracles.hpp"

using namespace debias;
using Catch::Approx;

namespace {

FuncMeanOracle square_of_bernoulli(double q = 0.3) {
  return make_func_mean_oracle(functionals::square(), sources::bernoulli(q));
}

// Level oracle whose evaluation fails for roughly one replication in `period`.
struct FlakyOracle {
  std::uint64_t period;
  std::size_t dimension() const { return 1; }
  TripleEvaluation evaluate(int, const RandomStream& s) const {
    RandomStream copy = s;
    if (copy.next_u64() % period == 0) throw EvaluationError("solver stalled");
    return make_triple({1.0}, {1.0}, {1.0}, 2.0);
  }
  BaseEvaluation base_term(int, const RandomStream&) const { return {{1.0}, 1.0}; }
};

}  // namespace

TEST_CASE("pmf examples") {
  CHECK(LevelDistribution(0, 0.5 + 1e-12).pmf(0) == Approx(0.5));
  const double r = 1 - std::exp2(-1.5);
  CHECK(LevelDistribution(0, r - 1e-12).pmf(1) == Approx(0.228553).margin(1e-6));
  CHECK(LevelDistribution(10, 0.6464).pmf(9) == 0.0);
}

TEST_CASE("optimal_ratio") {
  CHECK(optimal_ratio(1.0) == Approx(0.646447).margin(1e-6));
  CHECK(optimal_ratio(2.0) == 0.75);
  double previous = 1.0;
  for (double a : {0.5, 0.1, 0.01, 1e-4}) {
    const double r = optimal_ratio(a);
    CHECK(r > 0.5);
    CHECK(r < previous);
    CHECK(r < ratio_upper_bound(a));
    previous = r;
  }
  CHECK(optimal_ratio(1e-6) - 0.5 < 1e-6);
  CHECK_THROWS_AS(optimal_ratio(0.0), InvalidArgument);
  CHECK_THROWS_AS(optimal_ratio(-1.0), InvalidArgument);
}

TEST_CASE("level distribution rejects ratios outside the window") {
  CHECK_THROWS_AS(LevelDistribution(0, 0.5), InvalidArgument);
  CHECK_THROWS_AS(LevelDistribution(0, 0.75, 1.0), InvalidArgument);
  CHECK_THROWS_AS(LevelDistribution(-1, 0.6), InvalidArgument);
  CHECK_NOTHROW(LevelDistribution(0, 0.74, 1.0));
}

TEST_CASE("pmf sums to one by B + 200") {
  for (int base : {0, 1, 5, 10}) {
    for (double alpha : {0.5, 1.0, 2.0}) {
      for (double frac : {0.05, 0.5, 0.95}) {
        const double r = 0.5 + frac * (ratio_upper_bound(alpha) - 0.5);
        const LevelDistribution dist(base, r, alpha);
        double total = 0;
        for (int k = 0; k <= base + 200; ++k) total += dist.pmf(k);
        CHECK(std::abs(total - 1.0) < 1e-12);
      }
    }
  }
}

TEST_CASE("level sampling follows the pmf") {
  SECTION("frequencies within 4 sd per bin") {
    const LevelDistribution dist(0, 0.6464);
    constexpr int n = 1'000'000;
    std::vector<int> counts(64, 0);
    for (int i = 0; i < n; ++i) {
      auto s = derive_stream(31, i, StreamRole::level);
      ++counts[std::min(dist.sample(s), 63)];
    }
    for (int k = 0; k <= 10; ++k) {
      const double p = dist.pmf(k);
      INFO("k = " << k);
      CHECK(std::abs(counts[k] - n * p) < 4 * std::sqrt(n * p * (1 - p)));
    }
  }
  SECTION("support starts at the burn-in") {
    const LevelDistribution dist(10, 0.6464);
    for (int i = 0; i < 10000; ++i) {
      auto s = derive_stream(32, i, StreamRole::level);
      REQUIRE(dist.sample(s) >= 10);
    }
  }
  SECTION("ratio near one concentrates on the base") {
    const LevelDistribution dist(0, 0.999999, 50.0);
    int zeros = 0;
    for (int i = 0; i < 10000; ++i) {
      auto s = derive_stream(33, i, StreamRole::level);
      zeros += dist.sample(s) == 0;
    }
    CHECK(zeros >= 9995);
  }
}

TEST_CASE("triple delta is bitwise recomputable") {
  auto s = derive_stream(1, 2, StreamRole::batch);
  for (int i = 0; i < 1000; ++i) {
    const double a = s.uniform() * 10, b = s.uniform() * 10, c = s.uniform() * 10;
    const auto t = make_triple({a}, {b}, {c}, 1.0);
    REQUIRE(t.delta[0] == a - (b + c) / 2.0);
  }
}

TEST_CASE("linear functional replications equal the base term") {
  const auto oracle = make_func_mean_oracle(functionals::identity(), sources::normal(3, 2));
  const LevelDistribution dist(2, optimal_ratio(1.0));
  for (std::uint64_t i = 0; i < 500; ++i) {
    const auto rep = single_replication(oracle, dist, 77, i);
    const auto base = oracle.base_term(2, derive_stream(77, i, StreamRole::base));
    REQUIRE(rep.value[0] == base.value[0]);
  }
}

TEST_CASE("replication cost counts base and level samples") {
  const auto oracle = square_of_bernoulli();
  const LevelDistribution dist(0, optimal_ratio(1.0));
  bool seen = false;
  for (std::uint64_t i = 0; i < 2000 && !seen; ++i) {
    const auto rep = single_replication(oracle, dist, 5, i);
    CHECK(rep.cost == 1.0 + std::ldexp(1.0, rep.level + 1));
    seen = rep.level == 3;
    if (seen) CHECK(rep.cost == 17.0);
  }
  CHECK(seen);
}

TEST_CASE("summaries") {
  SECTION("two-point sample") {
    std::vector<Replication> reps{{0, 0, {1.0}, 1.0}, {1, 0, {3.0}, 1.0}};
    const auto s = summarize(reps, 0.95);
    CHECK(s.mean[0] == 2.0);
    CHECK(s.variance[0] == 2.0);
    CHECK(s.std_error[0] == 1.0);
    CHECK(s.ci_low[0] == Approx(2 - 1.959964).margin(1e-6));
    CHECK(s.ci_high[0] == Approx(2 + 1.959964).margin(1e-6));
  }
  SECTION("equal values give a zero-width interval") {
    std::vector<Replication> reps(5, Replication{0, 0, {4.25}, 2.0});
    const auto s = summarize(reps, 0.99);
    CHECK(s.variance[0] == 0.0);
    CHECK(s.ci_low[0] == 4.25);
    CHECK(s.ci_high[0] == 4.25);
  }
  SECTION("fewer than two replications") {
    std::vector<Replication> one{{0, 0, {1.0}, 1.0}};
    CHECK_THROWS_AS(summarize(one), InvalidArgument);
  }
  SECTION("merge is associative and order independent") {
    auto s = derive_stream(9, 9, StreamRole::batch);
    std::vector<Replication> reps;
    for (std::uint64_t i = 0; i < 3001; ++i) reps.push_back({i, 0, {s.uniform() * 50, -s.uniform()}, 1 + s.uniform()});
    SummaryAccumulator whole, a, b, c;
    for (std::size_t i = 0; i < reps.size(); ++i) {
      whole.add(reps[i]);
      (i < 1000 ? a : i < 2200 ? b : c).add(reps[i]);
    }
    SummaryAccumulator ab_c = a, a_bc = a, bc = b, cba = c;
    ab_c.merge(b);
    ab_c.merge(c);
    bc.merge(c);
    a_bc.merge(bc);
    cba.merge(b);
    cba.merge(a);
    const auto w = whole.summary();
    for (const auto& m : {ab_c.summary(), a_bc.summary(), cba.summary()}) {
      REQUIRE(m.count == w.count);
      for (std::size_t j = 0; j < 2; ++j) {
        CHECK(m.mean[j] == Approx(w.mean[j]).epsilon(1e-10));
        CHECK(m.variance[j] == Approx(w.variance[j]).epsilon(1e-10));
      }
      CHECK(m.mean_cost == Approx(w.mean_cost).epsilon(1e-10));
    }
  }
  SECTION("work-normalized variance is max variance times mean cost") {
    std::vector<Replication> reps{{0, 0, {1.0, 10.0}, 3.0}, {1, 0, {2.0, 0.0}, 5.0}, {2, 0, {4.0, 5.0}, 7.0}};
    const auto s = summarize(reps);
    CHECK(s.work_normalized_variance == std::max(s.variance[0], s.variance[1]) * s.mean_cost);
  }
}

TEST_CASE("run_estimator") {
  SECTION("constant input") {
    const auto oracle = make_func_mean_oracle(functionals::identity(), sources::constant(1.75));
    const auto r = run_estimator(oracle, LevelDistribution(0, 0.6), {1000, 1, 1});
    CHECK(r.summary.mean[0] == 1.75);
    CHECK(r.summary.variance[0] == 0.0);
  }
  SECTION("worker count does not change the result") {
    const auto oracle = square_of_bernoulli();
    const LevelDistribution dist(0, optimal_ratio(1.0));
    RunOptions o{20000, 42, 1};
    const auto one = run_estimator(oracle, dist, o);
    for (unsigned w : {2u, 4u, 8u}) {
      o.workers = w;
      const auto many = run_estimator(oracle, dist, o);
      CHECK(many.summary == one.summary);
      CHECK(many.replications.size() == one.replications.size());
    }
  }
  SECTION("mean cost follows the geometric cost law") {
    const auto oracle = square_of_bernoulli();
    for (int base : {0, 3}) {
      const LevelDistribution dist(base, optimal_ratio(1.0));
      const auto r = run_estimator(oracle, dist, {100000, 7, 1});
      CHECK(std::abs(r.summary.mean_cost / dist.expected_unit_cost() - 1.0) < 0.05);
    }
  }
  SECTION("unbiased for the square of a Bernoulli mean") {
    const auto r = run_estimator(square_of_bernoulli(), LevelDistribution(0, optimal_ratio(1.0)), {400000, 8, 1});
    CHECK(std::abs(r.summary.mean[0] - 0.09) < 3 * r.summary.std_error[0]);
  }
  SECTION("variance estimate is stable under doubling") {
    const auto oracle = square_of_bernoulli();
    const LevelDistribution dist(0, optimal_ratio(1.0));
    const auto a = run_estimator(oracle, dist, {100000, 21, 1});
    const auto b = run_estimator(oracle, dist, {200000, 21, 1});
    CHECK(std::abs(b.summary.variance[0] / a.summary.variance[0] - 1.0) < 0.10);
  }
  SECTION("argument checks") {
    const auto oracle = square_of_bernoulli();
    const LevelDistribution dist(0, 0.6);
    CHECK_THROWS_AS(run_estimator(oracle, dist, {1, 0, 1}), InvalidArgument);
    CHECK_THROWS_AS(run_estimator(oracle, dist, {10, 0, 0}), InvalidArgument);
    CHECK_THROWS_AS(run_estimator(oracle, dist, {10, 0, 1, 1.0}), InvalidArgument);
  }
}

TEST_CASE("failure budget") {
  const LevelDistribution dist(0, 0.6);
  SECTION("breach aborts the run") {
    CHECK_THROWS_AS(run_estimator(FlakyOracle{200}, dist, {20000, 3, 1}), FailureBudgetExceeded);
  }
  SECTION("failures below budget are reported") {
    RunOptions o{20000, 3, 1};
    o.failure_budget = 0.02;
    const auto r = run_estimator(FlakyOracle{200}, dist, o);
    CHECK_FALSE(r.failures.empty());
    CHECK(r.failures.size() + r.replications.size() == 20000);
    CHECK(r.failures.front().message.find("solver stalled") != std::string::npos);
  }
  SECTION("levels above the cap count as failures") {
    RunOptions o{5000, 3, 1};
    o.max_level = 1;
    CHECK_THROWS_AS(run_estimator(square_of_bernoulli(), dist, o), FailureBudgetExceeded);
    CHECK_THROWS_AS(single_replication(square_of_bernoulli(), LevelDistribution(4, 0.6), 1, 0, 3), ReplicationError);
  }
}

TEST_CASE("estimate_alpha") {
  SECTION("smooth functional decays like 2^{-2n}") {
    const auto est = estimate_alpha(square_of_bernoulli(), 2, 9, 2000, 17);
    CHECK(est.table.size() == 8);
    CHECK(est.slope <= -1.5);
    CHECK(est.alpha == Approx(1.0).margin(0.25));
  }
  SECTION("linear functional is degenerate") {
    const auto oracle = make_func_mean_oracle(functionals::identity(), sources::normal(0, 1));
    CHECK_THROWS_AS(estimate_alpha(oracle, 2, 6, 200, 1), DegenerateFunctional);
    try {
      estimate_alpha(oracle, 2, 6, 200, 1);
    } catch (const DegenerateFunctional& e) {
      CHECK(std::string(e.what()) == "linear functional, any r > 1/2 valid");
    }
  }
  SECTION("range and replication checks") {
    CHECK_THROWS_AS(estimate_alpha(square_of_bernoulli(), 2, 4, 2000, 1), InvalidArgument);
    CHECK_THROWS_AS(estimate_alpha(square_of_bernoulli(), 2, 8, 99, 1), InvalidArgument);
  }
  SECTION("fitted slope of an exact line") {
    const std::vector<double> x{1, 2, 3, 4}, y{1, -1, -3, -5};
    CHECK(fitted_slope(x, y) == Approx(-2.0));
  }
}

TEST_CASE("Bernoulli level means match exact enumeration") {
  const oracle::Rational q(3, 10);
  const auto oracle_fn = square_of_bernoulli();
  for (unsigned n = 0; n <= 2; ++n) {
    const oracle::Rational exact = oracle::enumerate_square_delta(q, n);
    CHECK(exact == -q * (1 - q) / (2 << n));
    constexpr std::size_t reps = 200'000;
    double sum = 0, sum_sq = 0;
    for (std::size_t i = 0; i < reps; ++i) {
      const double d = oracle_fn.evaluate(int(n), derive_stream(2718, (std::uint64_t{n} << 32) | i, StreamRole::batch)).delta[0];
      sum += d;
      sum_sq += d * d;
    }
    const double mean = sum / reps;
    const double se = std::sqrt((sum_sq / reps - mean * mean) / reps);
    INFO("n = " << n);
    CHECK(std::abs(mean - static_cast<double>(exact)) < 3 * se);
  }
  oracle::Rational telescoped = oracle::enumerate_square_of_mean(q, 1);
  for (unsigned n = 0; n <= 2; ++n) telescoped += oracle::enumerate_square_delta(q, n);
  CHECK(telescoped == oracle::enumerate_square_of_mean(q, 8));
}
