#pragma once

// Debiased sample average approximation for convex stochastic programs
//
//   min f(beta) = E[F(beta, X)]  s.t.  G(beta) <= 0.
//
// Each SAA instance is solved deterministically to KKT tolerance; the level
// oracle solves the full batch and both halves and returns the optimal value
// and/or optimizer differences.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include <Eigen/Dense>

#include "debias/core.hpp"
#include "debias/errors.hpp"
#include "debias/sampling.hpp"

namespace debias::saa {

enum class ProblemKind { quadratic, linear, ridge, lasso, logistic };

inline std::string to_string(ProblemKind k) {
  switch (k) {
    case ProblemKind::quadratic: return "quadratic";
    case ProblemKind::linear: return "linear";
    case ProblemKind::ridge: return "ridge";
    case ProblemKind::lasso: return "lasso";
    case ProblemKind::logistic: return "logistic";
  }
  return "?";
}

struct NoConstraint {};
/// ||beta||_1 <= radius.
struct L1Ball {
  double radius = 1.0;
};
/// ||beta||_2^2 - radius^2 <= 0.
struct L2Ball {
  double radius = 1.0;
};
/// lower <= beta <= upper componentwise; constraints ordered (lower_0, upper_0, lower_1, ...).
struct Box {
  std::vector<double> lower;
  std::vector<double> upper;
};
using Constraint = std::variant<NoConstraint, L1Ball, L2Ball, Box>;

struct SolverSettings {
  /// Relative KKT tolerance every accepted solve must meet.
  double tolerance = 1e-12;
  int max_iterations = 200;
  /// |beta|_inf above this is treated as divergence.
  double divergence_bound = 1e8;
};

struct SolveResult {
  std::vector<double> beta;
  double value = 0.0;
  std::vector<double> multipliers;
  int iterations = 0;
  bool converged = false;
};

/// KKT violations, each relative to the gradient scale max(1, |grad f_n(0)|_inf).
struct KktReport {
  double stationarity = 0.0;
  double primal_infeasibility = 0.0;
  double complementarity = 0.0;
  double dual_infeasibility = 0.0;

  double worst() const {
    return std::max({stationarity, primal_infeasibility, complementarity, dual_infeasibility});
  }
};

namespace detail {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline Eigen::Map<const RowMatrix> as_matrix(const Batch& batch) {
  return {batch.data().data(), static_cast<Eigen::Index>(batch.size()), static_cast<Eigen::Index>(batch.dimension())};
}

inline std::vector<double> to_vector(const Eigen::VectorXd& v) { return {v.data(), v.data() + v.size()}; }

inline double softplus(double z) { return z > 0.0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z)); }

// 1 / (1 + exp(z)), stable for both signs.
inline double logistic_tail(double z) {
  if (z >= 0.0) {
    const double e = std::exp(-z);
    return e / (1.0 + e);
  }
  return 1.0 / (1.0 + std::exp(z));
}

inline double label(double y) { return y > 0.0 ? 1.0 : -1.0; }

inline double inf_norm(const std::vector<double>& v) {
  double m = 0.0;
  for (double x : v) m = std::max(m, std::abs(x));
  return m;
}

inline double sign(double x) { return (x > 0.0) - (x < 0.0); }

}  // namespace detail

class SaaProblem {
 public:
  SaaProblem(ProblemKind kind, std::size_t dimension, double ridge_lambda = 0.0, Constraint constraint = NoConstraint{},
             SolverSettings settings = {})
      : kind_(kind), dim_(dimension), ridge_(ridge_lambda), constraint_(std::move(constraint)), settings_(settings) {
    if (dim_ == 0) throw InvalidArgument("problem dimension must be at least 1");
    if (!(ridge_ >= 0.0)) throw InvalidArgument("ridge shrinkage must be non-negative");
    validate_constraint();
  }

  ProblemKind kind() const { return kind_; }
  std::size_t dimension() const { return dim_; }
  /// Length of one data row: x for the quadratic problem, (x, y) for regressions.
  std::size_t sample_dimension() const { return kind_ == ProblemKind::quadratic ? dim_ : dim_ + 1; }
  double ridge_lambda() const { return ridge_; }
  const Constraint& constraint() const { return constraint_; }
  const SolverSettings& settings() const { return settings_; }
  std::size_t constraint_count() const {
    return std::visit(
        [this](const auto& c) -> std::size_t {
          using C = std::decay_t<decltype(c)>;
          if constexpr (std::is_same_v<C, NoConstraint>) return 0;
          else if constexpr (std::is_same_v<C, Box>) return 2 * dim_;
          else return 1;
        },
        constraint_);
  }

  /// F(beta, x) for one sample.
  double loss(std::span<const double> beta, std::span<const double> row) const {
    switch (kind_) {
      case ProblemKind::quadratic: {
        double s = 0.0;
        for (std::size_t j = 0; j < dim_; ++j) s += (beta[j] - row[j]) * (beta[j] - row[j]);
        return s;
      }
      case ProblemKind::logistic:
        return detail::softplus(-detail::label(row[dim_]) * dot(beta, row));
      default: {
        const double r = row[dim_] - dot(beta, row);
        return r * r + ridge_ * squared_norm(beta);
      }
    }
  }

  /// f_n(beta) = (1/n) sum_i F(beta, X_i).
  double objective(std::span<const double> beta, const Batch& batch) const {
    require_shape(batch);
    std::vector<double> terms(batch.size());
    for (std::size_t i = 0; i < batch.size(); ++i) terms[i] = loss(beta, batch.row(i));
    return mean_of(terms);
  }

  /// grad f_n(beta).
  std::vector<double> gradient(std::span<const double> beta, const Batch& batch) const {
    require_shape(batch);
    std::vector<double> g(dim_, 0.0);
    const double n = static_cast<double>(batch.size());
    for (std::size_t i = 0; i < batch.size(); ++i) {
      const auto row = batch.row(i);
      double coef;
      switch (kind_) {
        case ProblemKind::quadratic:
          for (std::size_t j = 0; j < dim_; ++j) g[j] += 2.0 * (beta[j] - row[j]);
          continue;
        case ProblemKind::logistic: {
          const double y = detail::label(row[dim_]);
          coef = -y * detail::logistic_tail(y * dot(beta, row));
          break;
        }
        default:
          coef = -2.0 * (row[dim_] - dot(beta, row));
      }
      for (std::size_t j = 0; j < dim_; ++j) g[j] += coef * row[j];
    }
    for (std::size_t j = 0; j < dim_; ++j) {
      g[j] /= n;
      if (is_least_squares()) g[j] += 2.0 * ridge_ * beta[j];
    }
    return g;
  }

  /// Deterministic SAA solve. Throws EvaluationError when no KKT point within
  /// tolerance is found (non-convergence, divergence, separable data, singular
  /// design).
  SolveResult solve(const Batch& batch) const {
    require_shape(batch);
    SolveResult r;
    switch (kind_) {
      case ProblemKind::quadratic: r = solve_quadratic(batch); break;
      case ProblemKind::logistic: r = solve_logistic(batch); break;
      default: r = solve_least_squares(batch);
    }
    r.value = objective(r.beta, batch);
    const KktReport report = kkt(batch, r);
    r.converged = report.worst() <= settings_.tolerance;
    if (!r.converged) {
      throw EvaluationError(to_string(kind_) + " solve failed KKT check (worst violation " +
                            std::to_string(report.worst()) + ")");
    }
    return r;
  }

  KktReport kkt(const Batch& batch, const SolveResult& r) const {
    const std::vector<double> zero(dim_, 0.0);
    const double scale = std::max(1.0, detail::inf_norm(gradient(zero, batch)));
    std::vector<double> g = gradient(r.beta, batch);
    KktReport rep;
    const auto& beta = r.beta;
    std::visit(
        [&](const auto& c) {
          using C = std::decay_t<decltype(c)>;
          if constexpr (std::is_same_v<C, NoConstraint>) {
            rep.stationarity = detail::inf_norm(g);
          } else if constexpr (std::is_same_v<C, L2Ball>) {
            const double lam = r.multipliers.at(0);
            for (std::size_t j = 0; j < dim_; ++j) g[j] += 2.0 * lam * beta[j];
            const double slack = squared_norm(beta) - c.radius * c.radius;
            rep.stationarity = detail::inf_norm(g);
            rep.primal_infeasibility = std::max(0.0, slack) / std::max(1.0, c.radius * c.radius);
            rep.complementarity = std::abs(lam * slack);
            rep.dual_infeasibility = std::max(0.0, -lam);
          } else if constexpr (std::is_same_v<C, L1Ball>) {
            const double lam = r.multipliers.at(0);
            double l1 = 0.0, worst = 0.0;
            for (std::size_t j = 0; j < dim_; ++j) {
              l1 += std::abs(beta[j]);
              const double v = beta[j] != 0.0 ? std::abs(g[j] + lam * detail::sign(beta[j]))
                                              : std::max(0.0, std::abs(g[j]) - lam);
              worst = std::max(worst, v);
            }
            const double slack = l1 - c.radius;
            rep.stationarity = worst;
            rep.primal_infeasibility = std::max(0.0, slack) / std::max(1.0, c.radius);
            rep.complementarity = std::abs(lam * slack);
            rep.dual_infeasibility = std::max(0.0, -lam);
          } else {
            for (std::size_t j = 0; j < dim_; ++j) {
              const double lo = r.multipliers.at(2 * j), hi = r.multipliers.at(2 * j + 1);
              g[j] += hi - lo;
              const double slack_lo = c.lower[j] - beta[j], slack_hi = beta[j] - c.upper[j];
              rep.primal_infeasibility = std::max({rep.primal_infeasibility, slack_lo, slack_hi});
              rep.complementarity = std::max({rep.complementarity, std::abs(lo * slack_lo), std::abs(hi * slack_hi)});
              rep.dual_infeasibility = std::max({rep.dual_infeasibility, -lo, -hi});
            }
            rep.stationarity = detail::inf_norm(g);
          }
        },
        constraint_);
    rep.stationarity /= scale;
    rep.complementarity /= scale;
    rep.dual_infeasibility /= scale;
    return rep;
  }

 private:
  bool is_least_squares() const {
    return kind_ == ProblemKind::linear || kind_ == ProblemKind::ridge || kind_ == ProblemKind::lasso;
  }

  double dot(std::span<const double> beta, std::span<const double> row) const {
    double s = 0.0;
    for (std::size_t j = 0; j < dim_; ++j) s += beta[j] * row[j];
    return s;
  }

  static double squared_norm(std::span<const double> v) {
    double s = 0.0;
    for (double x : v) s += x * x;
    return s;
  }

  void require_shape(const Batch& batch) const {
    if (batch.empty()) throw InvalidArgument("SAA solve needs a non-empty batch");
    if (batch.dimension() != sample_dimension()) {
      throw InvalidArgument(to_string(kind_) + " problem expects rows of length " + std::to_string(sample_dimension()) +
                            ", got " + std::to_string(batch.dimension()));
    }
  }

  void validate_constraint() const {
    std::visit(
        [this](const auto& c) {
          using C = std::decay_t<decltype(c)>;
          if constexpr (std::is_same_v<C, L1Ball> || std::is_same_v<C, L2Ball>) {
            if (!(c.radius >= 0.0)) throw InvalidArgument("ball radius must be non-negative");
          }
          if constexpr (std::is_same_v<C, Box>) {
            if (c.lower.size() != dim_ || c.upper.size() != dim_) throw InvalidArgument("box bounds have wrong length");
            for (std::size_t j = 0; j < dim_; ++j) {
              if (!(c.lower[j] <= c.upper[j])) throw InvalidArgument("box lower bound exceeds upper bound");
            }
            if (kind_ != ProblemKind::quadratic) throw InvalidArgument("box constraints are supported for the quadratic problem only");
          }
          if constexpr (!std::is_same_v<C, NoConstraint>) {
            if (kind_ == ProblemKind::logistic) throw InvalidArgument("logistic regression is solved unconstrained");
          }
        },
        constraint_);
  }

  // F = ||beta - x||^2: the optimizer is the Euclidean projection of the sample mean.
  SolveResult solve_quadratic(const Batch& batch) const {
    const std::vector<double> m = batch_mean(batch);
    SolveResult r;
    r.iterations = 1;
    std::visit(
        [&](const auto& c) {
          using C = std::decay_t<decltype(c)>;
          if constexpr (std::is_same_v<C, NoConstraint>) {
            r.beta = m;
          } else if constexpr (std::is_same_v<C, Box>) {
            r.beta.resize(dim_);
            r.multipliers.assign(2 * dim_, 0.0);
            for (std::size_t j = 0; j < dim_; ++j) {
              r.beta[j] = std::clamp(m[j], c.lower[j], c.upper[j]);
              if (m[j] < c.lower[j]) r.multipliers[2 * j] = 2.0 * (c.lower[j] - m[j]);
              if (m[j] > c.upper[j]) r.multipliers[2 * j + 1] = 2.0 * (m[j] - c.upper[j]);
            }
          } else if constexpr (std::is_same_v<C, L2Ball>) {
            const double norm = std::sqrt(squared_norm(m));
            r.beta = m;
            r.multipliers = {0.0};
            if (norm > c.radius) {
              for (auto& b : r.beta) b *= c.radius / norm;
              r.multipliers[0] = norm / c.radius - 1.0;
            }
          } else {
            r.beta = m;
            r.multipliers = {0.0};
            double l1 = 0.0;
            for (double v : m) l1 += std::abs(v);
            if (l1 > c.radius) {
              // Sort-based projection onto the l1 ball: soft threshold at theta.
              std::vector<double> a(dim_);
              for (std::size_t j = 0; j < dim_; ++j) a[j] = std::abs(m[j]);
              std::sort(a.begin(), a.end(), std::greater<>());
              double cum = 0.0, theta = 0.0;
              for (std::size_t k = 0; k < dim_; ++k) {
                cum += a[k];
                const double t = (cum - c.radius) / static_cast<double>(k + 1);
                if (a[k] > t) theta = t;
              }
              for (std::size_t j = 0; j < dim_; ++j) r.beta[j] = detail::sign(m[j]) * std::max(std::abs(m[j]) - theta, 0.0);
              r.multipliers[0] = 2.0 * theta;
            }
          }
        },
        constraint_);
    return r;
  }

  struct Normal {
    Eigen::MatrixXd gram;    // X^T X / n
    Eigen::VectorXd cross;   // X^T y / n
  };

  Normal normal_equations(const Batch& batch) const {
    const auto m = detail::as_matrix(batch);
    const auto x = m.leftCols(static_cast<Eigen::Index>(dim_));
    const auto y = m.col(static_cast<Eigen::Index>(dim_));
    const double n = static_cast<double>(batch.size());
    Normal ne;
    ne.gram = (x.transpose() * x) / n;
    ne.cross = (x.transpose() * y) / n;
    return ne;
  }

  // (A) beta = b with LDLT plus two rounds of iterative refinement.
  Eigen::VectorXd solve_spd(const Eigen::MatrixXd& a, const Eigen::VectorXd& b) const {
    Eigen::LDLT<Eigen::MatrixXd> ldlt(a);
    if (ldlt.info() != Eigen::Success || !ldlt.isPositive() || ldlt.rcond() < 1e-14) {
      throw EvaluationError("normal equations are singular (too few or collinear samples)");
    }
    Eigen::VectorXd x = ldlt.solve(b);
    for (int k = 0; k < 2; ++k) x += ldlt.solve(b - a * x);
    return x;
  }

  SolveResult solve_least_squares(const Batch& batch) const {
    Normal ne = normal_equations(batch);
    Eigen::MatrixXd a = ne.gram;
    a.diagonal().array() += ridge_;
    SolveResult r;
    r.iterations = 1;
    std::visit(
        [&](const auto& c) {
          using C = std::decay_t<decltype(c)>;
          if constexpr (std::is_same_v<C, NoConstraint>) {
            r.beta = detail::to_vector(solve_spd(a, ne.cross));
          } else if constexpr (std::is_same_v<C, L2Ball>) {
            solve_l2_ball(a, ne.cross, c.radius, r);
          } else if constexpr (std::is_same_v<C, L1Ball>) {
            solve_l1_ball(a, ne.cross, c.radius, r);
          }
        },
        constraint_);
    return r;
  }

  // min beta^T A beta - 2 c^T beta  s.t. ||beta||^2 <= R^2, via the secular
  // equation ||(A + mu I)^{-1} c|| = R.
  void solve_l2_ball(const Eigen::MatrixXd& a, const Eigen::VectorXd& c, double radius, SolveResult& r) const {
    r.multipliers = {0.0};
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(a);
    const Eigen::VectorXd d = eig.eigenvalues();
    const Eigen::VectorXd z = eig.eigenvectors().transpose() * c;
    auto norm_at = [&](double mu) {
      double s = 0.0;
      for (Eigen::Index i = 0; i < d.size(); ++i) s += z[i] * z[i] / ((d[i] + mu) * (d[i] + mu));
      return std::sqrt(s);
    };
    if (d.minCoeff() > 0.0 && norm_at(0.0) <= radius) {
      r.beta = detail::to_vector(solve_spd(a, c));
      return;
    }
    double mu = std::max(0.0, -d.minCoeff()) + 1e-300;
    int it = 0;
    for (; it < settings_.max_iterations; ++it) {
      // Newton on 1/||beta(mu)|| - 1/R, which is concave and increasing in mu.
      const double nrm = norm_at(mu);
      double dn = 0.0;
      for (Eigen::Index i = 0; i < d.size(); ++i) dn -= z[i] * z[i] / std::pow(d[i] + mu, 3);
      dn /= nrm;
      const double phi = 1.0 / nrm - 1.0 / radius;
      const double step = -phi / (-dn / (nrm * nrm));
      mu += step;
      if (std::abs(step) <= 1e-15 * std::max(1.0, mu)) break;
    }
    r.iterations = it + 1;
    Eigen::MatrixXd shifted = a;
    shifted.diagonal().array() += mu;
    r.beta = detail::to_vector(solve_spd(shifted, c));
    r.multipliers[0] = mu;
  }

  // Coordinate descent on the penalized form  beta^T A beta - 2 c^T beta + 2 mu |beta|_1
  // with a fixed sweep order.
  std::vector<double> penalized_cd(const Eigen::MatrixXd& a, const Eigen::VectorXd& c, double mu,
                                   std::vector<double> beta) const {
    for (int sweep = 0; sweep < 10'000; ++sweep) {
      double change = 0.0;
      for (std::size_t j = 0; j < dim_; ++j) {
        double rho = c[j];
        for (std::size_t k = 0; k < dim_; ++k) {
          if (k != j) rho -= a(j, k) * beta[k];
        }
        const double next = detail::sign(rho) * std::max(std::abs(rho) - mu, 0.0) / a(j, j);
        change = std::max(change, std::abs(next - beta[j]));
        beta[j] = next;
      }
      if (change <= 1e-15) break;
    }
    return beta;
  }

  // min beta^T A beta - 2 c^T beta s.t. |beta|_1 <= t. Coordinate descent with
  // bisection on the penalty identifies the active set and signs; the solution
  // is then polished exactly on that set, where |beta|_1 = t is linear in the
  // penalty. Multiplier: lambda = 2 mu.
  void solve_l1_ball(const Eigen::MatrixXd& a, const Eigen::VectorXd& c, double t, SolveResult& r) const {
    r.multipliers = {0.0};
    const std::size_t d = dim_;
    std::vector<double> unconstrained;
    try {
      unconstrained = detail::to_vector(solve_spd(a, c));
    } catch (const EvaluationError&) {
    }
    if (!unconstrained.empty()) {
      double l1 = 0.0;
      for (double v : unconstrained) l1 += std::abs(v);
      if (l1 <= t) {
        r.beta = std::move(unconstrained);
        return;
      }
    }
    if (t == 0.0) {
      r.beta.assign(d, 0.0);
      r.multipliers[0] = 2.0 * c.cwiseAbs().maxCoeff();
      return;
    }
    double lo = 0.0, hi = c.cwiseAbs().maxCoeff();
    std::vector<double> beta(d, 0.0);
    for (int round = 0; round < settings_.max_iterations; ++round) {
      const double mu = 0.5 * (lo + hi);
      beta = penalized_cd(a, c, mu, beta);
      double l1 = 0.0;
      for (double v : beta) l1 += std::abs(v);
      if (l1 > t) lo = mu; else hi = mu;
      r.iterations = round + 1;
      if (round >= 8 && polish_l1(a, c, t, beta, r)) return;
      if (hi - lo <= 1e-16 * std::max(1.0, hi)) break;
    }
    throw EvaluationError("lasso active-set polish did not converge");
  }

  bool polish_l1(const Eigen::MatrixXd& a, const Eigen::VectorXd& c, double t, const std::vector<double>& guess,
                 SolveResult& r) const {
    std::vector<Eigen::Index> active;
    for (std::size_t j = 0; j < dim_; ++j) {
      if (guess[j] != 0.0) active.push_back(static_cast<Eigen::Index>(j));
    }
    if (active.empty()) return false;
    const auto k = static_cast<Eigen::Index>(active.size());
    Eigen::MatrixXd aa(k, k);
    Eigen::VectorXd ca(k), s(k);
    for (Eigen::Index i = 0; i < k; ++i) {
      ca[i] = c[active[i]];
      s[i] = detail::sign(guess[active[i]]);
      for (Eigen::Index j = 0; j < k; ++j) aa(i, j) = a(active[i], active[j]);
    }
    Eigen::VectorXd u, v;
    try {
      u = solve_spd(aa, ca);
      v = solve_spd(aa, s);
    } catch (const EvaluationError&) {
      return false;
    }
    const double denom = s.dot(v);
    if (!(denom > 0.0)) return false;
    const double mu = (s.dot(u) - t) / denom;
    if (!(mu >= 0.0)) return false;
    const Eigen::VectorXd ba = u - mu * v;
    for (Eigen::Index i = 0; i < k; ++i) {
      if (detail::sign(ba[i]) != s[i]) return false;
    }
    std::vector<double> beta(dim_, 0.0);
    for (Eigen::Index i = 0; i < k; ++i) beta[static_cast<std::size_t>(active[i])] = ba[i];
    // Inactive coordinates must satisfy |c_j - (A beta)_j| <= mu.
    const Eigen::VectorXd resid = c - a * Eigen::Map<const Eigen::VectorXd>(beta.data(), static_cast<Eigen::Index>(dim_));
    for (std::size_t j = 0; j < dim_; ++j) {
      if (beta[j] == 0.0 && std::abs(resid[static_cast<Eigen::Index>(j)]) > mu * (1.0 + 1e-9) + 1e-15) return false;
    }
    r.beta = std::move(beta);
    r.multipliers[0] = 2.0 * mu;
    return true;
  }

  // Damped Newton with Armijo backtracking from beta = 0. Any iterate that
  // classifies every sample with positive margin proves the data separable, in
  // which case no finite minimizer exists.
  SolveResult solve_logistic(const Batch& batch) const {
    const std::size_t n = batch.size();
    const auto d = static_cast<Eigen::Index>(dim_);
    Eigen::VectorXd beta = Eigen::VectorXd::Zero(d);
    auto f_at = [&](const Eigen::VectorXd& b) { return objective(std::span<const double>(b.data(), dim_), batch); };
    const double scale = std::max(1.0, detail::inf_norm(gradient(std::vector<double>(dim_, 0.0), batch)));
    double f = f_at(beta);
    SolveResult r;
    for (int it = 0; it < settings_.max_iterations; ++it) {
      r.iterations = it;
      Eigen::VectorXd g = Eigen::VectorXd::Zero(d);
      Eigen::MatrixXd h = Eigen::MatrixXd::Zero(d, d);
      bool separated = true;
      for (std::size_t i = 0; i < n; ++i) {
        const auto row = batch.row(i);
        const Eigen::Map<const Eigen::VectorXd> x(row.data(), d);
        const double y = detail::label(row[dim_]);
        const double z = y * beta.dot(x);
        if (!(z > 0.0)) separated = false;
        const double tail = detail::logistic_tail(z);
        g -= (y * tail) * x;
        h.noalias() += (tail * (1.0 - tail)) * (x * x.transpose());
      }
      g /= static_cast<double>(n);
      h /= static_cast<double>(n);
      if (separated) throw EvaluationError("logistic data are linearly separable; the likelihood has no maximizer");
      if (g.cwiseAbs().maxCoeff() <= settings_.tolerance * scale * 1e-2) {
        r.beta = detail::to_vector(beta);
        return r;
      }
      Eigen::LDLT<Eigen::MatrixXd> ldlt(h);
      Eigen::VectorXd step = ldlt.solve(-g);
      if (ldlt.info() != Eigen::Success || !step.allFinite() || step.dot(g) >= 0.0) step = -g;
      // Newton step at machine resolution: the gradient is at its rounding floor.
      if (step.cwiseAbs().maxCoeff() <= 8 * std::numeric_limits<double>::epsilon() * (1.0 + beta.cwiseAbs().maxCoeff())) {
        r.beta = detail::to_vector(beta + step);
        return r;
      }
      double t = 1.0;
      const double slope = g.dot(step);
      Eigen::VectorXd next = beta + step;
      double f_next = f_at(next);
      int halvings = 0;
      // Once the predicted decrease is below the resolution of f, Armijo can no
      // longer discriminate; the full Newton step is inside the quadratic region.
      const bool resolvable = -slope > 1e-13 * std::max(1.0, std::abs(f));
      while (resolvable && !(f_next <= f + 1e-4 * t * slope) && halvings < 60) {
        t *= 0.5;
        next = beta + t * step;
        f_next = f_at(next);
        ++halvings;
      }
      if (halvings == 60) {
        // No further decrease is representable; accept if already at tolerance.
        r.beta = detail::to_vector(beta);
        return r;
      }
      beta = next;
      f = f_next;
      if (beta.cwiseAbs().maxCoeff() > settings_.divergence_bound) {
        throw EvaluationError("logistic Newton iterates diverged (|beta| > " +
                              std::to_string(settings_.divergence_bound) + ")");
      }
    }
    throw EvaluationError("logistic Newton did not converge in " + std::to_string(settings_.max_iterations) +
                          " iterations");
  }

  ProblemKind kind_;
  std::size_t dim_;
  double ridge_;
  Constraint constraint_;
  SolverSettings settings_;
};

/// Parameters for builtin_problem: shrinkage for ridge, l1 radius for lasso.
struct ProblemParameters {
  double ridge_lambda = 0.0;
  double lasso_radius = 1.0;
};

/// Linear, ridge, lasso (l1-ball constrained), logistic, or the quadratic
/// F(beta, x) = ||beta - x||^2 test problem, in dimension d.
inline SaaProblem builtin_problem(ProblemKind kind, std::size_t dimension, ProblemParameters params = {},
                                  SolverSettings settings = {}) {
  switch (kind) {
    case ProblemKind::ridge:
      if (!(params.ridge_lambda >= 0.0)) throw InvalidArgument("ridge shrinkage must be non-negative");
      return SaaProblem(kind, dimension, params.ridge_lambda, NoConstraint{}, settings);
    case ProblemKind::lasso:
      if (!(params.lasso_radius >= 0.0)) throw InvalidArgument("lasso radius must be non-negative");
      return SaaProblem(kind, dimension, 0.0, L1Ball{params.lasso_radius}, settings);
    default:
      return SaaProblem(kind, dimension, 0.0, NoConstraint{}, settings);
  }
}

enum class SaaTarget { value, solution, joint };

/// theta(batch) = optimal value, optimizer, or (value, optimizer...) of the SAA problem.
struct SaaFunctional {
  SaaProblem problem;
  SaaTarget target = SaaTarget::value;

  std::size_t output_dimension() const {
    switch (target) {
      case SaaTarget::value: return 1;
      case SaaTarget::solution: return problem.dimension();
      case SaaTarget::joint: return problem.dimension() + 1;
    }
    return 1;
  }

  std::vector<double> operator()(const Batch& batch, RandomStream&) const {
    SolveResult r = problem.solve(batch);
    switch (target) {
      case SaaTarget::value: return {r.value};
      case SaaTarget::solution: return std::move(r.beta);
      case SaaTarget::joint: {
        std::vector<double> out{r.value};
        out.insert(out.end(), r.beta.begin(), r.beta.end());
        return out;
      }
    }
    return {};
  }
};

using SaaOracle = BatchOracle<SaaFunctional>;

inline SaaOracle make_saa_oracle(SaaProblem problem, SampleSource source, SaaTarget target) {
  if (source.dimension() != problem.sample_dimension()) {
    throw InvalidArgument("source rows have length " + std::to_string(source.dimension()) + " but the " +
                          to_string(problem.kind()) + " problem expects " + std::to_string(problem.sample_dimension()));
  }
  return SaaOracle(std::move(source), SaaFunctional{std::move(problem), target});
}

namespace detail {
inline TripleEvaluation saa_delta(const SaaProblem& problem, const Batch& batch, SaaTarget target) {
  const SaaFunctional theta{problem, target};
  RandomStream unused({0, 0});
  const auto [odd, even] = split_odd_even(batch);
  return make_triple(theta(batch, unused), theta(odd, unused), theta(even, unused), static_cast<double>(batch.size()));
}
}  // namespace detail

/// f_hat_{2^{n+1}} - (f_hat^odd + f_hat^even) / 2 on a given batch.
inline TripleEvaluation saa_value_delta(const SaaProblem& problem, const Batch& batch) {
  return detail::saa_delta(problem, batch, SaaTarget::value);
}

/// beta_{2^{n+1}} - (beta^odd + beta^even) / 2 on a given batch.
inline TripleEvaluation saa_solution_delta(const SaaProblem& problem, const Batch& batch) {
  return detail::saa_delta(problem, batch, SaaTarget::solution);
}

inline RunResult estimate_optimal_value(const SaaProblem& problem, const SampleSource& source,
                                        const LevelDistribution& dist, const RunOptions& options) {
  return run_estimator(make_saa_oracle(problem, source, SaaTarget::value), dist, options);
}

inline RunResult estimate_optimal_solution(const SaaProblem& problem, const SampleSource& source,
                                           const LevelDistribution& dist, const RunOptions& options) {
  return run_estimator(make_saa_oracle(problem, source, SaaTarget::solution), dist, options);
}

/// Solver noise must sit well below the level differences it resolves: the
/// tolerance should be at least `margin` times smaller than the lower quartile
/// of |delta_n| at the largest pilot level.
struct ResolutionCheck {
  double tolerance = 0.0;
  double delta_lower_quartile = 0.0;
  bool ok = true;
};

inline ResolutionCheck check_solver_resolution(const AlphaEstimate& pilot, double tolerance, double margin = 100.0) {
  ResolutionCheck c;
  c.tolerance = tolerance;
  if (!pilot.table.empty()) c.delta_lower_quartile = pilot.table.back().abs_lower_quartile;
  c.ok = tolerance * margin <= c.delta_lower_quartile;
  return c;
}

/// Known optimum of a synthetic instance.
struct Truth {
  double value = 0.0;
  std::vector<double> solution;
};

namespace synthetic {

/// Rows (x, y) with x ~ N(0, I) (first coordinate fixed at 1 when
/// `intercept`), y = x^T beta0 + noise_sd * eps.
inline SampleSource regression_source(std::vector<double> beta0, double noise_sd, bool intercept = false) {
  if (beta0.empty()) throw InvalidArgument("regression needs at least one coefficient");
  if (!(noise_sd >= 0.0)) throw InvalidArgument("noise level must be non-negative");
  const std::size_t d = beta0.size();
  return SampleSource("regression", d + 1, [beta0 = std::move(beta0), noise_sd, intercept, d](RandomStream& s, std::span<double> out) {
    double y = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      out[j] = (intercept && j == 0) ? 1.0 : sources::standard_normal(s);
      y += out[j] * beta0[j];
    }
    out[d] = noise_sd > 0.0 ? y + noise_sd * sources::standard_normal(s) : y;
    return 1.0;
  });
}

/// Rows (x, y), y in {-1, +1}, P(y = 1 | x) = 1 / (1 + exp(-x^T beta0)).
inline SampleSource logistic_source(std::vector<double> beta0, bool intercept = false) {
  if (beta0.empty()) throw InvalidArgument("logistic model needs at least one coefficient");
  const std::size_t d = beta0.size();
  return SampleSource("logistic", d + 1, [beta0 = std::move(beta0), intercept, d](RandomStream& s, std::span<double> out) {
    double z = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      out[j] = (intercept && j == 0) ? 1.0 : sources::standard_normal(s);
      z += out[j] * beta0[j];
    }
    out[d] = s.uniform() < 1.0 / (1.0 + std::exp(-z)) ? 1.0 : -1.0;
    return 1.0;
  });
}

/// Population optimum of linear (lambda = 0) or ridge regression on regression_source.
/// E[x x^T] = I, so beta* = beta0 / (1 + lambda) and
/// f* = sigma^2 + |beta0 - beta*|^2 + lambda |beta*|^2.
inline Truth regression_truth(const std::vector<double>& beta0, double noise_sd, double ridge_lambda = 0.0) {
  Truth t;
  t.value = noise_sd * noise_sd;
  for (double b : beta0) {
    const double bs = b / (1.0 + ridge_lambda);
    t.solution.push_back(bs);
    t.value += (b - bs) * (b - bs) + ridge_lambda * bs * bs;
  }
  return t;
}

}  // namespace synthetic

}  // namespace debias::saa
