#pragma once

// Ratio-of-means applications: regenerative steady-state estimation and
// self-normalized importance sampling. Both reduce to theta = E[x1] / E[x2]
// over i.i.d. pairs.

#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "debias/core.hpp"
#include "debias/errors.hpp"
#include "debias/sampling.hpp"

namespace debias {

/// Zero-delayed regenerative process on the real line.
struct RegenerativeProcess {
  std::string name;
  /// W(n) -> W(n+1).
  std::function<double(double, RandomStream&)> step;
  /// Reward f(W).
  std::function<double(double)> reward;
  /// True when the process is back in its regeneration set.
  std::function<bool(double)> regenerated = [](double w) { return w == 0.0; };
  double initial_state = 0.0;
  std::uint64_t max_cycle_length = 10'000'000;
};

/// x1 = sum_{n=0}^{tau-1} f(W(n)), x2 = tau, cost = tau steps.
struct CyclePair {
  double x1 = 0.0;
  double x2 = 0.0;
  double cost = 0.0;
};

inline CyclePair simulate_cycle(const RegenerativeProcess& proc, RandomStream& stream) {
  double w = proc.initial_state;
  double x1 = proc.reward(w);
  std::uint64_t tau = 1;
  for (;;) {
    w = proc.step(w, stream);
    if (proc.regenerated(w)) break;
    if (tau >= proc.max_cycle_length) {
      throw EvaluationError("regeneration cycle of '" + proc.name + "' exceeded " +
                            std::to_string(proc.max_cycle_length) + " steps");
    }
    x1 += proc.reward(w);
    ++tau;
  }
  const double t = static_cast<double>(tau);
  return {x1, t, t};
}

namespace processes {

/// Lindley recursion W(n+1) = max(W(n) + S - A, 0) with the given service and
/// interarrival sources.
inline RegenerativeProcess lindley(const std::string& name, SampleSource interarrival, SampleSource service,
                                   std::function<double(double)> reward) {
  auto a = std::make_shared<const SampleSource>(std::move(interarrival));
  auto s = std::make_shared<const SampleSource>(std::move(service));
  RegenerativeProcess p;
  p.name = name;
  p.reward = std::move(reward);
  p.step = [a, s](double w, RandomStream& stream) {
    double service_time = 0.0, gap = 0.0;
    s->draw(stream, {&service_time, 1});
    a->draw(stream, {&gap, 1});
    return std::max(w + service_time - gap, 0.0);
  };
  return p;
}

/// M/M/1 FIFO waiting times with arrival rate lambda and service rate mu.
inline RegenerativeProcess mm1(double lambda, double mu, std::function<double(double)> reward) {
  if (!(lambda > 0.0 && mu > lambda)) throw InvalidArgument("M/M/1 needs 0 < lambda < mu");
  return lindley("mm1", sources::exponential(lambda), sources::exponential(mu), std::move(reward));
}

}  // namespace processes

/// Source whose draws are whole regeneration cycles (x1, x2); cost is tau.
inline SampleSource cycle_source(RegenerativeProcess proc) {
  auto shared = std::make_shared<const RegenerativeProcess>(std::move(proc));
  return SampleSource("cycles(" + shared->name + ")", 2, [shared](RandomStream& stream, std::span<double> out) {
    const CyclePair c = simulate_cycle(*shared, stream);
    out[0] = c.x1;
    out[1] = c.x2;
    return c.cost;
  });
}

/// (mean of x1) / (mean of x2) over a batch of pairs.
struct RatioFunctional {
  std::size_t output_dimension() const { return 1; }

  std::vector<double> operator()(const Batch& pairs, RandomStream&) const { return {ratio_functional(pairs)}; }

  static double ratio_functional(const Batch& pairs) {
    if (pairs.dimension() != 2) throw InvalidArgument("ratio functional needs (x1, x2) pairs");
    const auto mean = batch_mean(pairs);
    if (!(mean[1] > 0.0)) throw EvaluationError("ratio denominator mean is not positive");
    return mean[0] / mean[1];
  }
};

inline double ratio_functional(const Batch& pairs) { return RatioFunctional::ratio_functional(pairs); }

using RatioOracle = BatchOracle<RatioFunctional>;

/// Level n simulates 2^{n+1} independent cycles, each on its own substream.
inline RatioOracle make_regen_oracle(RegenerativeProcess proc) {
  return RatioOracle(cycle_source(std::move(proc)), RatioFunctional{});
}

/// Pairs ((h/q)(Y) f(Y), (h/q)(Y)) with Y drawn from the proposal q.
inline SampleSource weighted_pair_source(SampleSource proposal, std::function<double(double)> log_target,
                                         std::function<double(double)> reward) {
  if (proposal.dimension() != 1) throw InvalidArgument("importance proposal must be one-dimensional");
  if (!proposal.has_density()) throw InvalidArgument("importance proposal needs a density");
  auto q = std::make_shared<const SampleSource>(std::move(proposal));
  return SampleSource("weighted(" + q->name() + ")", 2,
                      [q, log_target = std::move(log_target), reward = std::move(reward)](
                          RandomStream& stream, std::span<double> out) {
                        double y = 0.0;
                        const double cost = q->draw(stream, {&y, 1});
                        const double w = std::exp(log_target(y) - q->log_density(std::span<const double>(&y, 1)));
                        if (!(w > 0.0) || !std::isfinite(w)) throw EvaluationError("importance weight is zero or non-finite");
                        out[0] = w * reward(y);
                        out[1] = w;
                        return cost;
                      });
}

/// Self-normalized importance sampling for E_pi[f(Y)], pi = h / gamma with h
/// known through log h.
inline RatioOracle make_snis_oracle(std::function<double(double)> log_target, SampleSource proposal,
                                    std::function<double(double)> reward) {
  return RatioOracle(weighted_pair_source(std::move(proposal), std::move(log_target), std::move(reward)),
                     RatioFunctional{});
}

}  // namespace debias
