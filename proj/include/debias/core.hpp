#pragma once

// Randomized-level debiasing engine.
//
// One replication draws a level N from a shifted geometric law on {B, B+1, ...},
// evaluates the level difference
//
//   delta_N = theta(mu_{2^{N+1}}) - (theta(mu^odd_{2^N}) + theta(mu^even_{2^N})) / 2
//
// on a fresh batch, and returns Z = delta_N / p(N) + theta(mu_{2^B}), the base
// term coming from an independent batch of size 2^B. E[Z] telescopes to theta(mu).

#include <algorithm>
#include <atomic>
#include <cmath>
#include <concepts>
#include <cstddef>
#include <cstdint>
#include <exception>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include <boost/math/distributions/normal.hpp>

#include "debias/errors.hpp"
#include "debias/random.hpp"
#include "debias/sampling.hpp"

namespace debias {

/// r = 1 - 2^{-(1 + alpha/2)}, the work-variance optimal success ratio.
inline double optimal_ratio(double alpha) {
  if (!(alpha > 0.0) || !std::isfinite(alpha)) throw InvalidArgument("alpha must be positive");
  return 1.0 - std::exp2(-(1.0 + alpha / 2.0));
}

/// Upper end of the admissible ratio window for decay exponent alpha.
inline double ratio_upper_bound(double alpha) { return 1.0 - std::exp2(-(1.0 + alpha)); }

/// Geometric law of the level: p(k) = r (1-r)^{k-B} for k >= B.
class LevelDistribution {
 public:
  /// Rejects r outside (1/2, 1 - 2^{-(1+alpha)}): below the window the expected
  /// cost diverges, above it the second moment does.
  LevelDistribution(int base, double ratio, double alpha = 1.0) : base_(base), ratio_(ratio), alpha_(alpha) {
    if (base < 0) throw InvalidArgument("burn-in level must be non-negative");
    if (!(alpha > 0.0)) throw InvalidArgument("alpha must be positive");
    if (!(ratio > 0.5 && ratio < ratio_upper_bound(alpha))) {
      throw InvalidArgument("ratio r=" + std::to_string(ratio) + " outside (1/2, " +
                            std::to_string(ratio_upper_bound(alpha)) + ") required for alpha=" +
                            std::to_string(alpha));
    }
  }

  static LevelDistribution optimal(int base, double alpha = 1.0) {
    return LevelDistribution(base, optimal_ratio(alpha), alpha);
  }

  int base() const { return base_; }
  double ratio() const { return ratio_; }
  double alpha() const { return alpha_; }

  double pmf(int k) const {
    if (k < base_) return 0.0;
    return ratio_ * std::pow(1.0 - ratio_, k - base_);
  }

  /// Inversion: B + floor(log U / log(1-r)), U uniform on (0,1).
  int sample(RandomStream& stream) const {
    const double u = stream.uniform_open();
    const double k = std::floor(std::log(u) / std::log1p(-ratio_));
    return base_ + static_cast<int>(std::min(k, 1.0e6));
  }

  /// Expected samples per replication for a unit-cost oracle: 2^B + 2^{B+1} r / (2r - 1).
  double expected_unit_cost() const {
    return std::ldexp(1.0, base_) + std::ldexp(1.0, base_ + 1) * ratio_ / (2.0 * ratio_ - 1.0);
  }

 private:
  int base_;
  double ratio_;
  double alpha_;
};

/// theta on the full batch and its two halves, and the resulting level difference.
struct TripleEvaluation {
  std::vector<double> theta_full;
  std::vector<double> theta_odd;
  std::vector<double> theta_even;
  std::vector<double> delta;
  double cost = 0.0;
};

inline std::vector<double> level_difference(std::span<const double> full, std::span<const double> odd,
                                            std::span<const double> even) {
  std::vector<double> delta(full.size());
  for (std::size_t j = 0; j < full.size(); ++j) delta[j] = full[j] - (odd[j] + even[j]) / 2.0;
  return delta;
}

inline TripleEvaluation make_triple(std::vector<double> full, std::vector<double> odd, std::vector<double> even,
                                    double cost) {
  if (full.size() != odd.size() || full.size() != even.size())
    throw InvalidArgument("triple evaluation components differ in dimension");
  auto delta = level_difference(full, odd, even);
  return {std::move(full), std::move(odd), std::move(even), std::move(delta), cost};
}

struct BaseEvaluation {
  std::vector<double> value;
  double cost = 0.0;
};

/// Anything that can produce a level-n triple and a base term from a stream.
/// Implementations must be safe to call concurrently.
template <class O>
concept LevelOracle = requires(const O& oracle, int level, const RandomStream& stream) {
  { oracle.dimension() } -> std::convertible_to<std::size_t>;
  { oracle.evaluate(level, stream) } -> std::same_as<TripleEvaluation>;
  { oracle.base_term(level, stream) } -> std::same_as<BaseEvaluation>;
};

/// theta as a function of an empirical batch. The stream is auxiliary randomness
/// (e.g. selection pivots) that must not change the returned value.
template <class F>
concept BatchFunctional = requires(const F& f, const Batch& batch, RandomStream& aux) {
  { f.output_dimension() } -> std::convertible_to<std::size_t>;
  { f(batch, aux) } -> std::convertible_to<std::vector<double>>;
};

/// Level oracle for theta(empirical measure of i.i.d. draws from a source).
template <BatchFunctional F>
class BatchOracle {
 public:
  BatchOracle(SampleSource source, F functional) : source_(std::move(source)), functional_(std::move(functional)) {}

  std::size_t dimension() const { return functional_.output_dimension(); }
  const SampleSource& source() const { return source_; }
  const F& functional() const { return functional_; }

  TripleEvaluation evaluate(int level, const RandomStream& stream) const {
    auto sampled = draw_batch(source_, std::size_t{1} << (level + 1), stream);
    const auto [odd, even] = split_odd_even(sampled.batch);
    auto full_value = apply(sampled.batch, stream, 0);
    auto odd_value = apply(odd, stream, 1);
    auto even_value = apply(even, stream, 2);
    return make_triple(std::move(full_value), std::move(odd_value), std::move(even_value), sampled.cost);
  }

  BaseEvaluation base_term(int level, const RandomStream& stream) const {
    auto sampled = draw_batch(source_, std::size_t{1} << level, stream);
    return {apply(sampled.batch, stream, 0), sampled.cost};
  }

 private:
  static constexpr std::uint64_t kAuxTag = 2;

  std::vector<double> apply(const Batch& batch, const RandomStream& stream, std::uint64_t slot) const {
    RandomStream aux = stream.substream(slot, kAuxTag);
    std::vector<double> value = functional_(batch, aux);
    for (double v : value) {
      if (!std::isfinite(v)) throw EvaluationError("functional returned a non-finite value");
    }
    return value;
  }

  SampleSource source_;
  F functional_;
};

/// Type-erased level oracle, for runtime-selected applications.
class AnyOracle {
 public:
  template <LevelOracle O>
    requires(!std::same_as<std::remove_cvref_t<O>, AnyOracle>)
  AnyOracle(O oracle) : impl_(std::make_shared<Model<O>>(std::move(oracle))) {}

  std::size_t dimension() const { return impl_->dimension(); }
  TripleEvaluation evaluate(int level, const RandomStream& s) const { return impl_->evaluate(level, s); }
  BaseEvaluation base_term(int level, const RandomStream& s) const { return impl_->base_term(level, s); }

 private:
  struct Concept {
    virtual ~Concept() = default;
    virtual std::size_t dimension() const = 0;
    virtual TripleEvaluation evaluate(int, const RandomStream&) const = 0;
    virtual BaseEvaluation base_term(int, const RandomStream&) const = 0;
  };
  template <class O>
  struct Model final : Concept {
    explicit Model(O o) : oracle(std::move(o)) {}
    std::size_t dimension() const override { return oracle.dimension(); }
    TripleEvaluation evaluate(int l, const RandomStream& s) const override { return oracle.evaluate(l, s); }
    BaseEvaluation base_term(int l, const RandomStream& s) const override { return oracle.base_term(l, s); }
    O oracle;
  };
  std::shared_ptr<const Concept> impl_;
};

/// One draw of Z.
struct Replication {
  std::uint64_t index = 0;
  int level = 0;
  std::vector<double> value;
  double cost = 0.0;
};

struct ReplicationFailure {
  std::uint64_t index = 0;
  int level = 0;
  std::string message;
};

struct EstimatorSummary {
  std::size_t count = 0;
  double confidence = 0.95;
  std::vector<double> mean;
  std::vector<double> variance;
  std::vector<double> std_error;
  std::vector<double> ci_low;
  std::vector<double> ci_high;
  double mean_cost = 0.0;
  double work_normalized_variance = 0.0;

  friend bool operator==(const EstimatorSummary&, const EstimatorSummary&) = default;
};

/// Two-sided normal critical value for the given confidence level.
inline double normal_critical_value(double confidence) {
  if (!(confidence > 0.0 && confidence < 1.0)) throw InvalidArgument("confidence must lie in (0, 1)");
  return boost::math::quantile(boost::math::normal(), 0.5 + confidence / 2.0);
}

/// Streaming mean/variance accumulator (Welford updates, Chan merge).
class SummaryAccumulator {
 public:
  SummaryAccumulator() = default;
  explicit SummaryAccumulator(std::size_t dimension) : mean_(dimension, 0.0), m2_(dimension, 0.0) {}

  void add(std::span<const double> value, double cost) {
    if (count_ == 0 && mean_.empty()) {
      mean_.assign(value.size(), 0.0);
      m2_.assign(value.size(), 0.0);
    }
    if (value.size() != mean_.size()) throw InvalidArgument("replication values differ in dimension");
    ++count_;
    const double n = static_cast<double>(count_);
    for (std::size_t j = 0; j < value.size(); ++j) {
      const double d = value[j] - mean_[j];
      mean_[j] += d / n;
      m2_[j] += d * (value[j] - mean_[j]);
    }
    cost_sum_ += cost;
  }

  void add(const Replication& rep) { add(rep.value, rep.cost); }

  void merge(const SummaryAccumulator& other) {
    if (other.count_ == 0) return;
    if (count_ == 0) {
      *this = other;
      return;
    }
    if (other.mean_.size() != mean_.size()) throw InvalidArgument("cannot merge summaries of different dimension");
    const double na = static_cast<double>(count_);
    const double nb = static_cast<double>(other.count_);
    const double n = na + nb;
    for (std::size_t j = 0; j < mean_.size(); ++j) {
      const double d = other.mean_[j] - mean_[j];
      mean_[j] += d * nb / n;
      m2_[j] += other.m2_[j] + d * d * na * nb / n;
    }
    count_ += other.count_;
    cost_sum_ += other.cost_sum_;
  }

  std::size_t count() const { return count_; }

  EstimatorSummary summary(double confidence = 0.95) const {
    if (count_ < 2) throw InvalidArgument("a summary needs at least two replications");
    const double z = normal_critical_value(confidence);
    const double n = static_cast<double>(count_);
    EstimatorSummary s;
    s.count = count_;
    s.confidence = confidence;
    s.mean = mean_;
    const std::size_t d = mean_.size();
    s.variance.resize(d);
    s.std_error.resize(d);
    s.ci_low.resize(d);
    s.ci_high.resize(d);
    double max_variance = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      s.variance[j] = std::max(0.0, m2_[j] / (n - 1.0));
      s.std_error[j] = std::sqrt(s.variance[j] / n);
      s.ci_low[j] = mean_[j] - z * s.std_error[j];
      s.ci_high[j] = mean_[j] + z * s.std_error[j];
      max_variance = std::max(max_variance, s.variance[j]);
    }
    s.mean_cost = cost_sum_ / n;
    s.work_normalized_variance = max_variance * s.mean_cost;
    return s;
  }

 private:
  std::size_t count_ = 0;
  std::vector<double> mean_;
  std::vector<double> m2_;
  double cost_sum_ = 0.0;
};

inline EstimatorSummary summarize(std::span<const Replication> reps, double confidence = 0.95) {
  if (reps.size() < 2) throw InvalidArgument("a summary needs at least two replications");
  SummaryAccumulator acc;
  for (const auto& r : reps) acc.add(r);
  return acc.summary(confidence);
}

namespace detail {

// Runs body(i) for i in [0, n) on `workers` threads. The first exception thrown
// by any body is rethrown after all threads join.
template <class Body>
void parallel_for(std::size_t n, unsigned workers, Body&& body) {
  if (workers <= 1 || n < 2) {
    for (std::size_t i = 0; i < n; ++i) body(i);
    return;
  }
  constexpr std::size_t kChunk = 64;
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  auto worker = [&] {
    try {
      for (;;) {
        const std::size_t start = next.fetch_add(kChunk);
        if (start >= n) return;
        const std::size_t stop = std::min(n, start + kChunk);
        for (std::size_t i = start; i < stop; ++i) body(i);
      }
    } catch (...) {
      std::lock_guard lock(error_mutex);
      if (!error) error = std::current_exception();
      next.store(n);
    }
  };
  std::vector<std::jthread> pool;
  pool.reserve(workers);
  for (unsigned w = 0; w < workers; ++w) pool.emplace_back(worker);
  pool.clear();
  if (error) std::rethrow_exception(error);
}

}  // namespace detail

/// Levels above this are refused rather than materialized (2^31 samples).
inline constexpr int kDefaultMaxLevel = 30;

/// Z = delta_N / p(N) + base term, with the three streams derived from (seed, index).
template <LevelOracle O>
Replication single_replication(const O& oracle, const LevelDistribution& dist, std::uint64_t seed,
                               std::uint64_t index, int max_level = kDefaultMaxLevel) {
  RandomStream level_stream = derive_stream(seed, index, StreamRole::level);
  const int level = dist.sample(level_stream);
  if (level > max_level) {
    throw ReplicationError(level, "level exceeds the configured maximum " + std::to_string(max_level));
  }
  try {
    const TripleEvaluation triple = oracle.evaluate(level, derive_stream(seed, index, StreamRole::batch));
    const BaseEvaluation base = oracle.base_term(dist.base(), derive_stream(seed, index, StreamRole::base));
    if (base.value.size() != triple.delta.size()) throw EvaluationError("base term dimension mismatch");
    const double weight = dist.pmf(level);
    Replication rep{index, level, std::vector<double>(base.value.size()), base.cost + triple.cost};
    for (std::size_t j = 0; j < rep.value.size(); ++j) rep.value[j] = triple.delta[j] / weight + base.value[j];
    return rep;
  } catch (const EvaluationError& e) {
    throw ReplicationError(level, e.what());
  }
}

struct RunOptions {
  std::size_t n_reps = 1000;
  std::uint64_t seed = 0;
  unsigned workers = 1;
  double confidence = 0.95;
  int max_level = kDefaultMaxLevel;
  /// Largest tolerated fraction of failed replications.
  double failure_budget = 1e-3;
};

struct RunResult {
  EstimatorSummary summary;
  std::vector<Replication> replications;  // successful ones, in index order
  std::vector<ReplicationFailure> failures;
};

/// Independent replications aggregated in index order, so the result does not
/// depend on `workers`. Failed replications are reported, never silently
/// retried; above the failure budget the whole run is rejected.
template <LevelOracle O>
RunResult run_estimator(const O& oracle, const LevelDistribution& dist, const RunOptions& options) {
  if (options.n_reps < 2) throw InvalidArgument("need at least two replications");
  if (options.workers < 1) throw InvalidArgument("need at least one worker");
  normal_critical_value(options.confidence);

  std::vector<std::optional<Replication>> slots(options.n_reps);
  std::vector<std::optional<ReplicationFailure>> failed(options.n_reps);
  detail::parallel_for(options.n_reps, options.workers, [&](std::size_t i) {
    try {
      slots[i] = single_replication(oracle, dist, options.seed, i, options.max_level);
    } catch (const ReplicationError& e) {
      failed[i] = ReplicationFailure{i, e.level(), e.what()};
    }
  });

  RunResult result;
  result.replications.reserve(options.n_reps);
  for (std::size_t i = 0; i < options.n_reps; ++i) {
    if (slots[i]) result.replications.push_back(std::move(*slots[i]));
    if (failed[i]) result.failures.push_back(std::move(*failed[i]));
  }
  const double failure_fraction = static_cast<double>(result.failures.size()) / static_cast<double>(options.n_reps);
  if (failure_fraction > options.failure_budget) {
    throw FailureBudgetExceeded(std::to_string(result.failures.size()) + " of " + std::to_string(options.n_reps) +
                                " replications failed (first: " + result.failures.front().message + ")");
  }
  result.summary = summarize(result.replications, options.confidence);
  return result;
}

struct LevelDecay {
  int level = 0;
  std::size_t reps = 0;
  double mean_square = 0.0;        // mean of ||delta_n||^2
  double abs_lower_quartile = 0.0;  // lower quartile of max_j |delta_n[j]|
};

struct AlphaEstimate {
  std::vector<LevelDecay> table;
  double slope = 0.0;  // least-squares slope of log2 mean_square against level
  double alpha = 1.0;  // -slope - 1, clamped to [0.1, 3]
};

/// Least-squares slope of y against x.
inline double fitted_slope(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 2) throw InvalidArgument("slope fit needs two or more points");
  const double n = static_cast<double>(x.size());
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxy = 0, sxx = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
  }
  return sxy / sxx;
}

/// Pilot run measuring E||delta_n||^2 over [first_level, last_level].
template <LevelOracle O>
AlphaEstimate estimate_alpha(const O& oracle, int first_level, int last_level, std::size_t reps_per_level,
                             std::uint64_t seed, unsigned workers = 1) {
  if (first_level < 0 || last_level - first_level + 1 < 4) throw InvalidArgument("pilot range must span at least 4 levels");
  if (reps_per_level < 100) throw InvalidArgument("pilot needs at least 100 replications per level");

  AlphaEstimate est;
  std::vector<double> xs, ys;
  for (int level = first_level; level <= last_level; ++level) {
    std::vector<double> squares(reps_per_level), peaks(reps_per_level);
    detail::parallel_for(reps_per_level, workers, [&](std::size_t i) {
      const std::uint64_t index = (static_cast<std::uint64_t>(level) << 40) | i;
      RandomStream stream = derive_stream(seed, index, StreamRole::batch);
      const auto triple = oracle.evaluate(level, stream);
      double sq = 0.0, peak = 0.0;
      for (double d : triple.delta) {
        sq += d * d;
        peak = std::max(peak, std::abs(d));
      }
      squares[i] = sq;
      peaks[i] = peak;
    });
    LevelDecay row{level, reps_per_level, 0.0, 0.0};
    for (double s : squares) row.mean_square += s;
    row.mean_square /= static_cast<double>(reps_per_level);
    std::nth_element(peaks.begin(), peaks.begin() + reps_per_level / 4, peaks.end());
    row.abs_lower_quartile = peaks[reps_per_level / 4];
    est.table.push_back(row);
    if (row.mean_square == 0.0) throw DegenerateFunctional();
    xs.push_back(level);
    ys.push_back(std::log2(row.mean_square));
  }
  est.slope = fitted_slope(xs, ys);
  est.alpha = std::clamp(-est.slope - 1.0, 0.1, 3.0);
  return est;
}

}  // namespace debias
