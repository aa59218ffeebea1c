#pragma once

// Unbiased p-quantile estimation.
//
// Y_n = (1 - w) X_(k) + w X_(k+1), k = floor(n p), w = n p - k, with the order
// statistics found by expected-linear-time selection.

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "debias/core.hpp"
#include "debias/errors.hpp"
#include "debias/sampling.hpp"

namespace debias {

/// Largest admissible ratio for quantile estimation: 1 - 2^{-3/2}.
inline const double kQuantileRatioUpper = 1.0 - std::exp2(-1.5);
inline constexpr double kQuantileDefaultRatio = 0.64;

struct SelectionStats {
  std::uint64_t comparisons = 0;
  std::uint64_t partition_rounds = 0;
  bool used_fallback = false;
};

struct SelectionOptions {
  /// Partition rounds allowed before switching to median-of-medians pivots;
  /// negative means 4 * bit_width(n) + 8.
  int fallback_depth = -1;
};

namespace detail {

class Selector {
 public:
  Selector(RandomStream* pivots, SelectionStats& stats, SelectionOptions options)
      : pivots_(pivots), stats_(stats), options_(options) {}

  // Rearranges a so that a[target] is the value that would be there after
  // sorting, with everything after it no smaller. Returns a[target].
  double select(std::vector<double>& a, std::size_t target) {
    std::size_t lo = 0, hi = a.size();
    const int limit = options_.fallback_depth >= 0
                          ? options_.fallback_depth
                          : 4 * static_cast<int>(std::bit_width(a.size())) + 8;
    int depth = 0;
    for (;;) {
      if (hi - lo == 1) return a[lo];
      ++stats_.partition_rounds;
      double pivot;
      if (depth >= limit || pivots_ == nullptr) {
        stats_.used_fallback = true;
        pivot = median_of_medians(a, lo, hi);
      } else {
        pivot = a[lo + pivots_->below(hi - lo)];
      }
      ++depth;
      // Three-way partition: [lo, lt) < pivot, [lt, gt) == pivot, [gt, hi) > pivot.
      std::size_t lt = lo, i = lo, gt = hi;
      while (i < gt) {
        ++stats_.comparisons;
        if (a[i] < pivot) {
          std::swap(a[lt++], a[i++]);
          continue;
        }
        ++stats_.comparisons;
        if (pivot < a[i]) {
          std::swap(a[i], a[--gt]);
        } else {
          ++i;
        }
      }
      if (target < lt) {
        hi = lt;
      } else if (target < gt) {
        return a[target];
      } else {
        lo = gt;
      }
    }
  }

 private:
  double median_of_medians(const std::vector<double>& a, std::size_t lo, std::size_t hi) {
    std::vector<double> medians;
    medians.reserve((hi - lo + 4) / 5);
    for (std::size_t g = lo; g < hi; g += 5) {
      const std::size_t end = std::min(g + 5, hi);
      double group[5];
      std::size_t m = 0;
      for (std::size_t j = g; j < end; ++j) group[m++] = a[j];
      // insertion sort of at most five elements
      for (std::size_t x = 1; x < m; ++x) {
        for (std::size_t y = x; y > 0; --y) {
          ++stats_.comparisons;
          if (!(group[y] < group[y - 1])) break;
          std::swap(group[y], group[y - 1]);
        }
      }
      medians.push_back(group[(m - 1) / 2]);
    }
    if (medians.size() == 1) return medians[0];
    Selector inner(nullptr, stats_, SelectionOptions{0});
    return inner.select(medians, (medians.size() - 1) / 2);
  }

  RandomStream* pivots_;
  SelectionStats& stats_;
  SelectionOptions options_;
};

}  // namespace detail

/// k-th order statistic (1-based) by quickselect. `pivots` supplies pivot
/// randomness; null selects deterministic median-of-medians pivots throughout.
inline double order_statistic(std::span<const double> values, std::size_t k, RandomStream* pivots,
                              SelectionStats* stats = nullptr, SelectionOptions options = {}) {
  if (k < 1 || k > values.size()) throw InvalidArgument("order statistic index out of range");
  std::vector<double> work(values.begin(), values.end());
  SelectionStats local;
  detail::Selector sel(pivots, stats ? *stats : local, options);
  return sel.select(work, k - 1);
}

/// Interpolated sample p-quantile. When k + 1 exceeds n the maximum is returned.
inline double sample_quantile(std::span<const double> values, double p, RandomStream* pivots,
                              SelectionStats* stats = nullptr, SelectionOptions options = {}) {
  if (!(p > 0.0 && p < 1.0)) throw InvalidArgument("quantile level p must lie in (0, 1)");
  const std::size_t n = values.size();
  const double np = static_cast<double>(n) * p;
  const double k_real = std::floor(np);
  if (k_real < 1.0) throw InvalidArgument("sample quantile needs n*p >= 1 (n=" + std::to_string(n) + ")");
  for (double v : values) {
    if (std::isnan(v)) throw EvaluationError("sample quantile of data containing NaN");
  }
  const auto k = static_cast<std::size_t>(k_real);
  const double w = np - k_real;

  std::vector<double> work(values.begin(), values.end());
  SelectionStats local;
  SelectionStats& st = stats ? *stats : local;
  detail::Selector sel(pivots, st, options);
  const double lower = sel.select(work, k - 1);
  if (w == 0.0 || k + 1 > n) return lower;
  // After selection every element past position k-1 is >= X_(k); X_(k+1) is their minimum.
  double upper = work[k];
  for (std::size_t i = k + 1; i < n; ++i) {
    ++st.comparisons;
    if (work[i] < upper) upper = work[i];
  }
  return (1.0 - w) * lower + w * upper;
}

/// Reference implementation by full sort; used as a test oracle.
inline double sample_quantile_by_sort(std::span<const double> values, double p) {
  const std::size_t n = values.size();
  const double np = static_cast<double>(n) * p;
  const double k_real = std::floor(np);
  if (k_real < 1.0) throw InvalidArgument("sample quantile needs n*p >= 1");
  std::vector<double> sorted(values.begin(), values.end());
  std::sort(sorted.begin(), sorted.end());
  const auto k = static_cast<std::size_t>(k_real);
  const double w = np - k_real;
  if (w == 0.0 || k + 1 > n) return sorted[k - 1];
  return (1.0 - w) * sorted[k - 1] + w * sorted[k];
}

/// Smallest n >= 0 with 2^n * p >= 1, so that floor(2^n p) >= 1 at every level used.
inline int base_level(double p) {
  if (!(p > 0.0 && p < 1.0)) throw InvalidArgument("quantile level p must lie in (0, 1)");
  int n = 0;
  while (std::ldexp(p, n) < 1.0) ++n;
  return n;
}

/// Level law for quantile estimation. Requires r in (1/2, 1 - 2^{-3/2}) and
/// a burn-in at least base_level(p).
inline LevelDistribution quantile_level_distribution(double p, double ratio = kQuantileDefaultRatio,
                                                     int burn_in = -1) {
  const int nb = base_level(p);
  if (burn_in < 0) burn_in = nb;
  if (burn_in < nb) {
    throw InvalidArgument("burn-in " + std::to_string(burn_in) + " is below the quantile base level " +
                          std::to_string(nb));
  }
  if (!(ratio > 0.5 && ratio < kQuantileRatioUpper)) {
    throw InvalidArgument("quantile ratio r=" + std::to_string(ratio) +
                          " outside the window (1/2, 1-2^{-3/2}) = (0.5, " + std::to_string(kQuantileRatioUpper) +
                          ")");
  }
  // Squared quantile differences decay like 2^{-3n/2}: alpha = 1/2.
  return LevelDistribution(burn_in, ratio, 0.5);
}

struct QuantileFunctional {
  double p = 0.5;

  std::size_t output_dimension() const { return 1; }

  std::vector<double> operator()(const Batch& batch, RandomStream& pivots) const {
    if (batch.dimension() != 1) throw InvalidArgument("quantile estimation needs a scalar source");
    return {sample_quantile(batch.data(), p, &pivots)};
  }
};

using QuantileOracle = BatchOracle<QuantileFunctional>;

/// Level difference on a given batch of length 2^{n+1}.
inline TripleEvaluation quantile_delta(const Batch& batch, double p, RandomStream* pivots = nullptr) {
  if (batch.dimension() != 1) throw InvalidArgument("quantile estimation needs a scalar source");
  const auto [odd, even] = split_odd_even(batch);
  return make_triple({sample_quantile(batch.data(), p, pivots)}, {sample_quantile(odd.data(), p, pivots)},
                     {sample_quantile(even.data(), p, pivots)}, static_cast<double>(batch.size()));
}

inline QuantileOracle make_quantile_oracle(SampleSource source, double p) {
  if (source.dimension() != 1) throw InvalidArgument("quantile estimation needs a scalar source");
  base_level(p);
  return QuantileOracle(std::move(source), QuantileFunctional{p});
}

/// Z = delta_N / p(N) + Y_{2^B}, B = dist.base() >= base_level(p).
inline RunResult estimate_quantile(const SampleSource& source, double p, const LevelDistribution& dist,
                                   const RunOptions& options) {
  if (dist.base() < base_level(p)) throw InvalidArgument("burn-in below the quantile base level");
  if (!(dist.ratio() < kQuantileRatioUpper)) {
    throw InvalidArgument("quantile ratio outside the window (1/2, 1-2^{-3/2})");
  }
  return run_estimator(make_quantile_oracle(source, p), dist, options);
}

}  // namespace debias
