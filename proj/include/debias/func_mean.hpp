#pragma once

// Smooth functions of expectations: theta(mu) = g(E[X]).

#include <algorithm>
#include <cmath>
#include <functional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "debias/core.hpp"
#include "debias/errors.hpp"
#include "debias/sampling.hpp"

namespace debias {

/// g : R^d -> R. The growth and Hoelder conditions on Dg are a caller contract;
/// holder_exponent documents the decay the caller expects (1 for C^2 functions).
struct SmoothFunctional {
  std::string name;
  std::size_t input_dimension = 1;
  std::function<double(std::span<const double>)> g;
  double holder_exponent = 1.0;
};

namespace functionals {

inline SmoothFunctional identity() {
  return {"identity", 1, [](std::span<const double> x) { return x[0]; }, 1.0};
}

inline SmoothFunctional affine(double slope, double intercept) {
  return {"affine", 1, [=](std::span<const double> x) { return slope * x[0] + intercept; }, 1.0};
}

inline SmoothFunctional square() {
  return {"square", 1, [](std::span<const double> x) { return x[0] * x[0]; }, 1.0};
}

inline SmoothFunctional exp() {
  return {"exp", 1, [](std::span<const double> x) { return std::exp(x[0]); }, 1.0};
}

/// x1 / x2; finite variance needs x2 bounded away from zero (e.g. x2 >= 1).
inline SmoothFunctional ratio() {
  return {"ratio", 2, [](std::span<const double> x) { return x[0] / x[1]; }, 1.0};
}

/// log(sum_i exp(x_i)), evaluated stably.
inline SmoothFunctional log_sum_exp(std::size_t dimension) {
  return {"log-sum", dimension,
          [](std::span<const double> x) {
            const double m = *std::max_element(x.begin(), x.end());
            double s = 0.0;
            for (double v : x) s += std::exp(v - m);
            return m + std::log(s);
          },
          1.0};
}

/// Registry lookup used by the command line.
inline SmoothFunctional by_name(const std::string& name, std::size_t dimension) {
  if (name == "identity") return identity();
  if (name == "square") return square();
  if (name == "exp") return exp();
  if (name == "ratio") return ratio();
  if (name == "log-sum") return log_sum_exp(dimension);
  throw InvalidArgument("unknown function '" + name + "' (expected identity, square, exp, ratio, log-sum)");
}

}  // namespace functionals

/// theta(batch) = g(sample mean of batch).
class MeanFunctional {
 public:
  explicit MeanFunctional(SmoothFunctional g) : g_(std::move(g)) {
    if (!g_.g) throw InvalidArgument("smooth functional needs a callable");
  }

  std::size_t output_dimension() const { return 1; }
  const SmoothFunctional& function() const { return g_; }

  std::vector<double> operator()(const Batch& batch, RandomStream&) const {
    if (batch.dimension() != g_.input_dimension) {
      throw InvalidArgument("function '" + g_.name + "' expects dimension " + std::to_string(g_.input_dimension));
    }
    const auto mean = batch_mean(batch);
    return {g_.g(mean)};
  }

 private:
  SmoothFunctional g_;
};

using FuncMeanOracle = BatchOracle<MeanFunctional>;

/// Level difference on a given batch of length 2^{n+1}; cost is the batch length.
inline TripleEvaluation func_mean_delta(const SmoothFunctional& g, const Batch& batch) {
  const MeanFunctional theta(g);
  RandomStream unused({0, 0});
  const auto [odd, even] = split_odd_even(batch);
  auto full = theta(batch, unused);
  auto o = theta(odd, unused);
  auto e = theta(even, unused);
  for (double v : {full[0], o[0], e[0]}) {
    if (!std::isfinite(v)) throw EvaluationError("function '" + g.name + "' returned a non-finite value");
  }
  return make_triple(std::move(full), std::move(o), std::move(e), static_cast<double>(batch.size()));
}

/// Level oracle for g(E[X]). With burn-in 0 the base term is g(X_1).
inline FuncMeanOracle make_func_mean_oracle(SmoothFunctional g, SampleSource source) {
  if (source.dimension() != g.input_dimension) {
    throw InvalidArgument("source dimension " + std::to_string(source.dimension()) + " does not match function '" +
                          g.name + "' dimension " + std::to_string(g.input_dimension));
  }
  return FuncMeanOracle(std::move(source), MeanFunctional(std::move(g)));
}

/// Tail-moment check for the finite 3(1+alpha) moment condition.
struct MomentDiagnostic {
  double order = 0.0;
  double estimate = 0.0;        // sample mean of ||X||^order
  double largest_share = 0.0;   // largest single term / total
  bool suspicious = false;      // true when one draw dominates the estimate
};

inline MomentDiagnostic moment_diagnostic(const SampleSource& source, double order, std::size_t samples,
                                          const RandomStream& stream) {
  const auto drawn = draw_batch(source, samples, stream);
  double total = 0.0, largest = 0.0;
  for (std::size_t i = 0; i < drawn.batch.size(); ++i) {
    double norm2 = 0.0;
    for (double v : drawn.batch.row(i)) norm2 += v * v;
    const double term = std::pow(std::sqrt(norm2), order);
    total += term;
    largest = std::max(largest, term);
  }
  MomentDiagnostic d;
  d.order = order;
  d.estimate = total / static_cast<double>(samples);
  d.largest_share = total > 0.0 ? largest / total : 0.0;
  d.suspicious = !std::isfinite(total) || d.largest_share > 0.1;
  return d;
}

}  // namespace debias
