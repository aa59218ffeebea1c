#include <catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <vector>

#include "debias/quantile.hpp"

using namespace debias;

namespace {

std::vector<double> draws(const SampleSource& src, std::size_t n, std::uint64_t seed) {
  return draw_batch(src, n, derive_stream(seed, n, StreamRole::batch)).batch.data();
}

}  // namespace

TEST_CASE("hand-computed sample quantiles") {
  const std::vector<double> a{3, 1, 2, 4}, b{1, 2, 3, 4};
  auto s = derive_stream(0, 0, StreamRole::batch);
  CHECK(sample_quantile(a, 0.5, &s) == 2.0);
  CHECK(sample_quantile(b, 0.6, &s) == Catch::Approx(2.4).epsilon(1e-15));
  CHECK(sample_quantile(b, 0.6, &s) == sample_quantile_by_sort(b, 0.6));
  CHECK(sample_quantile(a, 0.5, nullptr) == 2.0);
}

TEST_CASE("quantiles close to the top return the maximum") {
  const auto x = draws(sources::normal(0, 1), 1000, 1);
  auto s = derive_stream(1, 1, StreamRole::batch);
  const double top = *std::max_element(x.begin(), x.end());
  // np just below n: k = n - 1, interpolation weight close to one.
  const double q = sample_quantile(x, 1.0 - 1e-12, &s);
  CHECK(q == Catch::Approx(top).epsilon(1e-9));
  CHECK(q <= top);
  CHECK(order_statistic(x, x.size(), &s) == top);
}

TEST_CASE("sample quantile preconditions") {
  const std::vector<double> x{1, 2, 3};
  CHECK_THROWS_AS(sample_quantile(x, 0.2, nullptr), InvalidArgument);
  CHECK_THROWS_AS(sample_quantile(x, 0.0, nullptr), InvalidArgument);
  CHECK_THROWS_AS(sample_quantile(x, 1.0, nullptr), InvalidArgument);
  const std::vector<double> with_nan{1, std::nan(""), 3, 4};
  CHECK_THROWS_AS(sample_quantile(with_nan, 0.5, nullptr), EvaluationError);
  CHECK_THROWS_AS(order_statistic(x, 0, nullptr), InvalidArgument);
  CHECK_THROWS_AS(order_statistic(x, 4, nullptr), InvalidArgument);
}

TEST_CASE("hand-computed quantile delta") {
  const auto t = quantile_delta(Batch::scalars({1, 2, 3, 4}), 0.5);
  CHECK(t.theta_full[0] == 2.0);
  CHECK(t.theta_odd[0] == 1.0);
  CHECK(t.theta_even[0] == 2.0);
  CHECK(t.delta[0] == 0.5);
  const auto c = quantile_delta(Batch::scalars(std::vector<double>(16, 3.5)), 0.3);
  CHECK(c.theta_full[0] == 3.5);
  CHECK(c.delta[0] == 0.0);
}

TEST_CASE("base level") {
  CHECK(base_level(0.5) == 1);
  CHECK(base_level(0.9) == 1);
  CHECK(base_level(0.01) == 7);
  CHECK(base_level(0.25) == 2);
  CHECK_THROWS_AS(base_level(0.0), InvalidArgument);
  for (double p : {0.001, 0.03, 0.2, 0.7, 0.99}) {
    const int n = base_level(p);
    CHECK(std::ldexp(p, n) >= 1.0);
    if (n > 0) CHECK(std::ldexp(p, n - 1) < 1.0);
  }
}

TEST_CASE("quantile level distribution window") {
  CHECK(quantile_level_distribution(0.5).ratio() == 0.64);
  CHECK(quantile_level_distribution(0.5).base() == 1);
  CHECK(quantile_level_distribution(0.01).base() == 7);
  try {
    quantile_level_distribution(0.5, 0.7);
    FAIL("expected a window error");
  } catch (const InvalidArgument& e) {
    CHECK(std::string(e.what()).find("(1/2, 1-2^{-3/2})") != std::string::npos);
  }
  CHECK_THROWS_AS(quantile_level_distribution(0.5, 0.5), InvalidArgument);
  CHECK_THROWS_AS(quantile_level_distribution(0.01, 0.6, 3), InvalidArgument);
}

TEST_CASE("selection equals full sort bitwise") {
  auto meta = derive_stream(2, 0, StreamRole::level);
  auto pivots = derive_stream(2, 0, StreamRole::batch);
  for (int trial = 0; trial < 10000; ++trial) {
    const std::size_t n = 2 + meta.below((std::size_t{1} << 12) - 1);
    double p = std::max(1.0 / double(n), meta.uniform_open());
    while (std::floor(double(n) * p) < 1.0) p = std::nextafter(p, 1.0);
    std::vector<double> x(n);
    const bool ties = trial % 5 == 0;
    for (auto& v : x) v = ties ? double(meta.below(7)) : meta.uniform() * 10 - 5;
    REQUIRE(sample_quantile(x, p, &pivots) == sample_quantile_by_sort(x, p));
  }
}

TEST_CASE("quantile is monotone in p") {
  const auto x = draws(sources::exponential(1), 513, 3);
  auto s = derive_stream(3, 3, StreamRole::batch);
  double previous = -1;
  for (int i = 1; i < 1000; ++i) {
    const double p = i / 1000.0;
    if (std::floor(p * x.size()) < 1) continue;
    const double q = sample_quantile(x, p, &s);
    REQUIRE(q >= previous);
    previous = q;
  }
}

TEST_CASE("quantile equivariance") {
  auto s = derive_stream(4, 4, StreamRole::batch);
  for (std::uint64_t rep = 0; rep < 200; ++rep) {
    const auto x = draws(sources::normal(0, 1), 257, 100 + rep);
    std::vector<double> scaled(x), affine(x);
    for (auto& v : scaled) v *= 4.0;
    for (auto& v : affine) v = 2.7 * v - 1.3;
    for (double p : {0.1, 0.5, 0.77}) {
      const double base = sample_quantile(x, p, &s);
      // Scaling by a power of two commutes with every rounding step.
      REQUIRE(sample_quantile(scaled, p, &s) == 4.0 * base);
      REQUIRE(sample_quantile(affine, p, &s) == Catch::Approx(2.7 * base - 1.3).margin(1e-13));
    }
  }
}

TEST_CASE("selection cost is linear") {
  auto pivots = derive_stream(5, 5, StreamRole::batch);
  for (int e = 4; e <= 16; ++e) {
    const std::size_t n = std::size_t{1} << e;
    double worst = 0;
    for (int rep = 0; rep < 20; ++rep) {
      const auto x = draws(sources::uniform(0, 1), n, 1000 * e + rep);
      SelectionStats st;
      sample_quantile(x, 0.5, &pivots, &st);
      worst = std::max(worst, double(st.comparisons) / double(n));
    }
    INFO("n = " << n);
    CHECK(worst < 16.0);
  }
}

TEST_CASE("median-of-medians fallback") {
  const auto x = draws(sources::normal(0, 1), 5000, 6);
  SelectionStats st;
  SelectionOptions forced{0};
  auto s = derive_stream(6, 6, StreamRole::batch);
  const double q = sample_quantile(x, 0.37, &s, &st, forced);
  CHECK(st.used_fallback);
  CHECK(q == sample_quantile_by_sort(x, 0.37));
  SelectionStats det;
  CHECK(sample_quantile(x, 0.37, nullptr, &det) == q);
  CHECK(det.used_fallback);
  CHECK(double(det.comparisons) / 5000 < 60.0);
}

TEST_CASE("selection is unaffected by pivot randomness") {
  const auto x = draws(sources::lognormal(0, 1), 4096, 7);
  const double expected = sample_quantile_by_sort(x, 0.9);
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    auto s = derive_stream(seed, 0, StreamRole::batch);
    REQUIRE(sample_quantile(x, 0.9, &s) == expected);
  }
}

TEST_CASE("unbiased quantile estimates") {
  SECTION("uniform median") {
    const auto r = estimate_quantile(sources::uniform(0, 1), 0.5, quantile_level_distribution(0.5), {100'000, 21, 1});
    CHECK(std::abs(r.summary.mean[0] - 0.5) < 3 * r.summary.std_error[0]);
  }
  SECTION("exponential median") {
    const auto r =
        estimate_quantile(sources::exponential(1), 0.5, quantile_level_distribution(0.5), {100'000, 22, 1});
    CHECK(std::abs(r.summary.mean[0] - std::log(2.0)) < 3 * r.summary.std_error[0]);
  }
  SECTION("window is enforced at configuration time") {
    CHECK_THROWS_AS(estimate_quantile(sources::uniform(0, 1), 0.5, LevelDistribution(1, 0.7), {100, 1, 1}),
                    InvalidArgument);
    CHECK_THROWS_AS(estimate_quantile(sources::uniform(0, 1), 0.01, LevelDistribution(2, 0.6), {100, 1, 1}),
                    InvalidArgument);
  }
}
