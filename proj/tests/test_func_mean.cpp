#include <catch_amalgamated.hpp>

#include <cmath>

#include "debias/func_mean.hpp"

using namespace debias;

TEST_CASE("hand-computed square deltas") {
  const auto g = functionals::square();
  SECTION("[0,1,1,0]") {
    const auto t = func_mean_delta(g, Batch::scalars({0, 1, 1, 0}));
    CHECK(t.theta_full[0] == 0.25);
    CHECK(t.theta_odd[0] == 0.25);
    CHECK(t.theta_even[0] == 0.25);
    CHECK(t.delta[0] == 0.0);
    CHECK(t.cost == 4.0);
  }
  SECTION("[1,1,0,0]") {
    const auto t = func_mean_delta(g, Batch::scalars({1, 1, 0, 0}));
    CHECK(t.delta[0] == 0.0);
  }
  SECTION("[1,0,1,0]") {
    const auto t = func_mean_delta(g, Batch::scalars({1, 0, 1, 0}));
    CHECK(t.theta_odd[0] == 1.0);
    CHECK(t.theta_even[0] == 0.0);
    CHECK(t.delta[0] == -0.25);
  }
}

TEST_CASE("affine functionals have zero level differences") {
  const std::vector<std::pair<double, double>> maps{{1.0, 0.0}, {-3.7, 12.1}};
  for (const auto& [a, b] : maps) {
    const auto g = functionals::affine(a, b);
    for (int n = 0; n <= 10; ++n) {
      for (std::uint64_t i = 0; i < 20; ++i) {
        const auto drawn = draw_batch(sources::lognormal(0, 2), std::size_t{2} << n, derive_stream(n, i, StreamRole::batch));
        const auto t = func_mean_delta(g, drawn.batch);
        // theta can cancel to near zero; the rounding scale is |a m| + |b|.
        const double scale = std::abs(a * batch_mean(drawn.batch)[0]) + std::abs(b);
        REQUIRE(std::abs(t.delta[0]) <= 8 * std::numeric_limits<double>::epsilon() * scale);
      }
    }
  }
}

TEST_CASE("non-finite values are rejected") {
  const SmoothFunctional bad{"log", 1, [](std::span<const double> x) { return std::log(x[0]); }, 1.0};
  CHECK_THROWS_AS(func_mean_delta(bad, Batch::scalars({0, 0})), EvaluationError);
  const auto oracle = make_func_mean_oracle(bad, sources::constant(0.0));
  CHECK_THROWS_AS(oracle.evaluate(1, derive_stream(0, 0, StreamRole::batch)), EvaluationError);
}

TEST_CASE("registry") {
  CHECK(functionals::by_name("square", 1).name == "square");
  CHECK(functionals::by_name("log-sum", 3).input_dimension == 3);
  const double x[] = {1000.0, 1000.0};
  CHECK(functionals::log_sum_exp(2).g(x) == Catch::Approx(1000.0 + std::log(2.0)));
  CHECK_THROWS_AS(functionals::by_name("cube", 1), InvalidArgument);
  CHECK_THROWS_AS(make_func_mean_oracle(functionals::ratio(), sources::normal(0, 1)), InvalidArgument);
}

TEST_CASE("base term is g of the mean of 2^B fresh samples") {
  const auto oracle = make_func_mean_oracle(functionals::square(), sources::uniform(0, 1));
  const auto stream = derive_stream(3, 3, StreamRole::base);
  const auto base = oracle.base_term(3, stream);
  const auto drawn = draw_batch(sources::uniform(0, 1), 8, stream);
  const double m = batch_mean(drawn.batch)[0];
  CHECK(base.value[0] == m * m);
  CHECK(base.cost == 8.0);
}

TEST_CASE("unbiased estimates") {
  const LevelDistribution dist(0, optimal_ratio(1.0));
  SECTION("square of a Bernoulli(0.3) mean") {
    const auto r = run_estimator(make_func_mean_oracle(functionals::square(), sources::bernoulli(0.3)), dist,
                                 {1'000'000, 2024, 1});
    CHECK(std::abs(r.summary.mean[0] - 0.09) < 3 * r.summary.std_error[0]);
  }
  SECTION("exp of a centred normal mean") {
    const auto r = run_estimator(make_func_mean_oracle(functionals::exp(), sources::normal(0, 0.5)), dist,
                                 {100'000, 2025, 1});
    CHECK(std::abs(r.summary.mean[0] - 1.0) < 3 * r.summary.std_error[0]);
  }
  SECTION("ratio of means with a denominator at least one") {
    auto src = sources::product({sources::normal(2, 1), sources::exponential(1.0)});
    SampleSource shifted("shifted", 2, [src](RandomStream& s, std::span<double> out) {
      const double c = src.draw(s, out);
      out[1] += 1.0;
      return c;
    });
    const auto r = run_estimator(make_func_mean_oracle(functionals::ratio(), shifted), dist, {100'000, 2026, 1});
    CHECK(std::isfinite(r.summary.variance[0]));
    CHECK(std::abs(r.summary.mean[0] - 1.0) < 4 * r.summary.std_error[0]);
  }
}

TEST_CASE("square functional variance decay") {
  const auto est =
      estimate_alpha(make_func_mean_oracle(functionals::square(), sources::bernoulli(0.3)), 2, 9, 2000, 99);
  CHECK(est.slope <= -1.5);
}

TEST_CASE("moment diagnostic") {
  const auto light = moment_diagnostic(sources::uniform(0, 1), 6.0, 100000, derive_stream(1, 0, StreamRole::batch));
  CHECK_FALSE(light.suspicious);
  CHECK(light.estimate == Catch::Approx(1.0 / 7).epsilon(0.05));
  const auto heavy = moment_diagnostic(sources::lognormal(0, 3), 6.0, 100000, derive_stream(1, 0, StreamRole::batch));
  CHECK(heavy.suspicious);
}
