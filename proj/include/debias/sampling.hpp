#pragma once

// Sample sources, batches and the odd/even split.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <memory>
#include <numbers>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "debias/errors.hpp"
#include "debias/random.hpp"

namespace debias {

/// Row-major list of d-vectors. A level-n evaluation works on 2^{n+1} rows.
class Batch {
 public:
  Batch() = default;
  explicit Batch(std::size_t dimension) : dim_(dimension) { require_dimension(); }
  Batch(std::size_t dimension, std::vector<double> data) : dim_(dimension), data_(std::move(data)) {
    require_dimension();
    if (data_.size() % dim_ != 0) throw InvalidArgument("batch data is not a whole number of rows");
  }

  /// One-dimensional batch from plain values.
  static Batch scalars(std::vector<double> values) { return Batch(1, std::move(values)); }

  std::size_t dimension() const { return dim_; }
  std::size_t size() const { return dim_ == 0 ? 0 : data_.size() / dim_; }
  bool empty() const { return data_.empty(); }

  std::span<const double> row(std::size_t i) const { return {data_.data() + i * dim_, dim_}; }
  std::span<double> row(std::size_t i) { return {data_.data() + i * dim_, dim_}; }

  /// Appends a zeroed row and returns it.
  std::span<double> append_row() {
    data_.resize(data_.size() + dim_, 0.0);
    return {data_.data() + data_.size() - dim_, dim_};
  }
  void append_row(std::span<const double> values) {
    if (values.size() != dim_) throw InvalidArgument("row has wrong dimension");
    data_.insert(data_.end(), values.begin(), values.end());
  }
  void reserve(std::size_t rows) { data_.reserve(rows * dim_); }

  const std::vector<double>& data() const { return data_; }

  friend bool operator==(const Batch&, const Batch&) = default;

 private:
  void require_dimension() const {
    if (dim_ == 0) throw InvalidArgument("batch dimension must be at least 1");
  }

  std::size_t dim_ = 1;
  std::vector<double> data_;
};

/// Elements at 1-based odd positions and at 1-based even positions, order preserved.
inline std::pair<Batch, Batch> split_odd_even(const Batch& batch) {
  if (batch.size() % 2 != 0) throw InvalidArgument("odd/even split needs an even-length batch");
  Batch odd(batch.dimension()), even(batch.dimension());
  odd.reserve(batch.size() / 2);
  even.reserve(batch.size() / 2);
  for (std::size_t i = 0; i < batch.size(); i += 2) {
    odd.append_row(batch.row(i));
    even.append_row(batch.row(i + 1));
  }
  return {std::move(odd), std::move(even)};
}

/// Inverse of split_odd_even.
inline Batch interleave(const Batch& odd, const Batch& even) {
  if (odd.size() != even.size() || odd.dimension() != even.dimension())
    throw InvalidArgument("interleave needs halves of equal shape");
  Batch out(odd.dimension());
  out.reserve(2 * odd.size());
  for (std::size_t i = 0; i < odd.size(); ++i) {
    out.append_row(odd.row(i));
    out.append_row(even.row(i));
  }
  return out;
}

namespace detail {

// Pairwise sum whose top split is the odd/even partition, recursively. The
// full-batch sum is then literally S_odd + S_even, so mean(full) and
// (mean(odd) + mean(even)) / 2 round identically.
inline double interleaved_sum(std::span<const double> data, std::size_t start, std::size_t stride,
                              std::size_t count) {
  if (count == 1) return data[start];
  if (count == 2) return data[start] + data[start + stride];
  const std::size_t odd_count = (count + 1) / 2;
  return interleaved_sum(data, start, 2 * stride, odd_count) +
         interleaved_sum(data, start + stride, 2 * stride, count - odd_count);
}

}  // namespace detail

/// Componentwise sample mean with odd/even-consistent pairwise summation.
inline std::vector<double> batch_mean(const Batch& batch) {
  if (batch.empty()) throw InvalidArgument("mean of an empty batch");
  const std::size_t d = batch.dimension();
  const std::size_t n = batch.size();
  std::vector<double> mean(d);
  const std::span<const double> data(batch.data());
  for (std::size_t j = 0; j < d; ++j) {
    mean[j] = detail::interleaved_sum(data, j, d, n) / static_cast<double>(n);
  }
  return mean;
}

/// Scalar mean over plain values, same summation order as batch_mean.
inline double mean_of(std::span<const double> values) {
  if (values.empty()) throw InvalidArgument("mean of an empty range");
  return detail::interleaved_sum(values, 0, 1, values.size()) / static_cast<double>(values.size());
}

/// Generator of i.i.d. draws of X in R^d. A draw writes one row and returns the
/// cost it consumed in sample units (1 for plain parametric sources).
class SampleSource {
 public:
  using DrawFn = std::function<double(RandomStream&, std::span<double>)>;
  using LogDensityFn = std::function<double(std::span<const double>)>;

  SampleSource(std::string name, std::size_t dimension, DrawFn draw, LogDensityFn log_density = {})
      : name_(std::move(name)), dim_(dimension), draw_(std::move(draw)), log_density_(std::move(log_density)) {
    if (dim_ == 0) throw InvalidArgument("sample source dimension must be at least 1");
    if (!draw_) throw InvalidArgument("sample source needs a draw function");
  }

  const std::string& name() const { return name_; }
  std::size_t dimension() const { return dim_; }
  bool has_density() const { return static_cast<bool>(log_density_); }

  double draw(RandomStream& stream, std::span<double> out) const { return draw_(stream, out); }

  double log_density(std::span<const double> x) const {
    if (!log_density_) throw InvalidArgument("source '" + name_ + "' has no density");
    return log_density_(x);
  }

 private:
  std::string name_;
  std::size_t dim_;
  DrawFn draw_;
  LogDensityFn log_density_;
};

struct SampledBatch {
  Batch batch;
  double cost = 0.0;
};

/// n i.i.d. draws. Draw i uses its own substream of `stream`, so a draw that
/// consumes a variable amount of randomness cannot shift later draws.
inline SampledBatch draw_batch(const SampleSource& source, std::size_t n, const RandomStream& stream) {
  if (n == 0) throw InvalidArgument("draw_batch needs at least one sample");
  SampledBatch out{Batch(source.dimension()), 0.0};
  out.batch.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    RandomStream draw_stream = stream.substream(i);
    out.cost += source.draw(draw_stream, out.batch.append_row());
  }
  return out;
}

namespace sources {

inline constexpr double kLogSqrt2Pi = 0.91893853320467274178;

inline SampleSource constant(double c) {
  return SampleSource("constant", 1, [c](RandomStream&, std::span<double> out) {
    out[0] = c;
    return 1.0;
  });
}

inline SampleSource bernoulli(double q) {
  if (!(q >= 0.0 && q <= 1.0)) throw InvalidArgument("bernoulli probability must lie in [0, 1]");
  return SampleSource("bernoulli", 1, [q](RandomStream& s, std::span<double> out) {
    out[0] = s.uniform() < q ? 1.0 : 0.0;
    return 1.0;
  });
}

inline SampleSource uniform(double lo, double hi) {
  if (!(lo < hi)) throw InvalidArgument("uniform source needs lo < hi");
  return SampleSource(
      "uniform", 1,
      [lo, hi](RandomStream& s, std::span<double> out) {
        out[0] = lo + (hi - lo) * s.uniform();
        return 1.0;
      },
      [lo, hi](std::span<const double> x) {
        return (x[0] >= lo && x[0] < hi) ? -std::log(hi - lo) : -std::numeric_limits<double>::infinity();
      });
}

inline SampleSource exponential(double rate) {
  if (!(rate > 0.0)) throw InvalidArgument("exponential rate must be positive");
  return SampleSource(
      "exponential", 1,
      [rate](RandomStream& s, std::span<double> out) {
        out[0] = -std::log(s.uniform_open()) / rate;
        return 1.0;
      },
      [rate](std::span<const double> x) {
        return x[0] >= 0.0 ? std::log(rate) - rate * x[0] : -std::numeric_limits<double>::infinity();
      });
}

/// Box-Muller, one normal per pair of uniforms.
inline double standard_normal(RandomStream& s) {
  const double u1 = s.uniform_open();
  const double u2 = s.uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

inline SampleSource normal(double mean, double sd) {
  if (!(sd > 0.0)) throw InvalidArgument("normal standard deviation must be positive");
  return SampleSource(
      "normal", 1,
      [mean, sd](RandomStream& s, std::span<double> out) {
        out[0] = mean + sd * standard_normal(s);
        return 1.0;
      },
      [mean, sd](std::span<const double> x) {
        const double z = (x[0] - mean) / sd;
        return -0.5 * z * z - std::log(sd) - kLogSqrt2Pi;
      });
}

inline SampleSource lognormal(double mu, double sigma) {
  if (!(sigma > 0.0)) throw InvalidArgument("lognormal sigma must be positive");
  return SampleSource(
      "lognormal", 1,
      [mu, sigma](RandomStream& s, std::span<double> out) {
        out[0] = std::exp(mu + sigma * standard_normal(s));
        return 1.0;
      },
      [mu, sigma](std::span<const double> x) {
        if (!(x[0] > 0.0)) return -std::numeric_limits<double>::infinity();
        const double z = (std::log(x[0]) - mu) / sigma;
        return -0.5 * z * z - std::log(sigma * x[0]) - kLogSqrt2Pi;
      });
}

/// Vector source with independent components. Cost is the largest component cost.
inline SampleSource product(std::vector<SampleSource> parts) {
  if (parts.empty()) throw InvalidArgument("product source needs at least one component");
  std::size_t dim = 0;
  std::string name = "product(";
  for (std::size_t i = 0; i < parts.size(); ++i) {
    dim += parts[i].dimension();
    name += (i ? "," : "") + parts[i].name();
  }
  name += ")";
  auto shared = std::make_shared<const std::vector<SampleSource>>(std::move(parts));
  const bool all_densities = std::all_of(shared->begin(), shared->end(), [](const auto& p) { return p.has_density(); });
  SampleSource::LogDensityFn density;
  if (all_densities) {
    density = [shared](std::span<const double> x) {
      double total = 0.0;
      std::size_t offset = 0;
      for (const auto& p : *shared) {
        total += p.log_density(x.subspan(offset, p.dimension()));
        offset += p.dimension();
      }
      return total;
    };
  }
  return SampleSource(
      std::move(name), dim,
      [shared](RandomStream& s, std::span<double> out) {
        double cost = 0.0;
        std::size_t offset = 0;
        for (std::size_t i = 0; i < shared->size(); ++i) {
          const auto& p = (*shared)[i];
          RandomStream component = s.substream(i, 1);
          cost = std::max(cost, p.draw(component, out.subspan(offset, p.dimension())));
          offset += p.dimension();
        }
        return cost;
      },
      std::move(density));
}

}  // namespace sources

/// Resamples rows of a dataset uniformly with replacement; cost 1 per draw.
inline SampleSource empirical_source(Batch dataset) {
  if (dataset.empty()) throw InvalidArgument("empirical source needs a non-empty dataset");
  const std::size_t dim = dataset.dimension();
  auto rows = std::make_shared<const Batch>(std::move(dataset));
  return SampleSource("empirical", dim, [rows](RandomStream& s, std::span<double> out) {
    const auto row = rows->row(s.below(rows->size()));
    std::copy(row.begin(), row.end(), out.begin());
    return 1.0;
  });
}

}  // namespace debias
