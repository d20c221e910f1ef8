#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "evolrp/parallel.hpp"
#include "evolrp/rng.hpp"

namespace evolrp {

/// (mu/mu_w, lambda)-CMA-ES with cumulative step-size adaptation and
/// rank-one plus rank-mu covariance updates.
struct CmaState {
  Eigen::VectorXd mean;
  double sigma = 0.5;
  Eigen::MatrixXd cov;
  Eigen::MatrixXd basis;    // eigenvectors of cov (columns)
  Eigen::VectorXd scales;   // square roots of the eigenvalues
  Eigen::VectorXd path_sigma;
  Eigen::VectorXd path_c;
  std::size_t generation = 0;

  std::size_t lambda = 0;
  std::size_t mu = 0;
  std::vector<double> weights;
  double mu_eff = 0.0;
  double c_sigma = 0.0, d_sigma = 0.0, c_c = 0.0, c_1 = 0.0, c_mu = 0.0, chi_n = 0.0;

  std::size_t dim() const noexcept { return static_cast<std::size_t>(mean.size()); }
};

inline constexpr double kMaxConditionNumber = 1e14;

inline std::size_t default_population(std::size_t dim) {
  return 4 + static_cast<std::size_t>(std::floor(3.0 * std::log(static_cast<double>(std::max<std::size_t>(dim, 1)))));
}

namespace detail {

/// Eigendecomposition of the (symmetrized) covariance; lifts the spectrum when
/// the condition number exceeds the limit.
inline bool decompose_covariance(CmaState& s) {
  s.cov = 0.5 * (s.cov + s.cov.transpose());
  for (int attempt = 0; attempt < 2; ++attempt) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(s.cov);
    if (solver.info() == Eigen::Success) {
      Eigen::VectorXd ev = solver.eigenvalues();
      const double hi = ev.maxCoeff(), lo = ev.minCoeff();
      if (std::isfinite(hi) && hi > 0.0 && (lo <= 0.0 || hi / lo > kMaxConditionNumber)) {
        const double lift = hi / kMaxConditionNumber - lo;
        s.cov.diagonal().array() += lift;
        ev.array() += lift;
      }
      if (std::isfinite(hi) && hi > 0.0) {
        s.basis = solver.eigenvectors();
        s.scales = ev.cwiseMax(0.0).cwiseSqrt();
        return true;
      }
    }
    const double d = std::max(1e-300, s.cov.diagonal().cwiseAbs().maxCoeff());
    s.cov = 0.5 * (s.cov + s.cov.transpose());
    s.cov.diagonal().array() += d / kMaxConditionNumber;
  }
  return false;
}

}  // namespace detail

inline CmaState cma_init(std::span<const double> mean, double sigma, std::size_t lambda = 0) {
  const std::size_t n = mean.size();
  if (n == 0) throw std::invalid_argument("CMA-ES needs at least one dimension");
  if (!(sigma > 0.0) || !std::isfinite(sigma)) throw std::invalid_argument("initial step size must be positive");
  for (double m : mean)
    if (!std::isfinite(m)) throw std::invalid_argument("initial mean is not finite");
  if (lambda == 0) lambda = default_population(n);
  if (lambda < 2) throw std::invalid_argument("population size must be at least 2");

  CmaState s;
  s.mean = Eigen::Map<const Eigen::VectorXd>(mean.data(), static_cast<Eigen::Index>(n));
  s.sigma = sigma;
  s.cov = Eigen::MatrixXd::Identity(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
  s.basis = s.cov;
  s.scales = Eigen::VectorXd::Ones(static_cast<Eigen::Index>(n));
  s.path_sigma = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n));
  s.path_c = s.path_sigma;
  s.lambda = lambda;
  s.mu = lambda / 2;

  const double dn = static_cast<double>(n);
  double wsum = 0.0, wsq = 0.0;
  for (std::size_t i = 0; i < s.mu; ++i) {
    const double w = std::log((static_cast<double>(lambda) + 1.0) / 2.0) - std::log(static_cast<double>(i + 1));
    s.weights.push_back(w);
    wsum += w;
  }
  for (auto& w : s.weights) {
    w /= wsum;
    wsq += w * w;
  }
  s.mu_eff = 1.0 / wsq;
  s.c_sigma = (s.mu_eff + 2.0) / (dn + s.mu_eff + 5.0);
  s.d_sigma = 1.0 + 2.0 * std::max(0.0, std::sqrt((s.mu_eff - 1.0) / (dn + 1.0)) - 1.0) + s.c_sigma;
  s.c_c = (4.0 + s.mu_eff / dn) / (dn + 4.0 + 2.0 * s.mu_eff / dn);
  s.c_1 = 2.0 / ((dn + 1.3) * (dn + 1.3) + s.mu_eff);
  s.c_mu = std::min(1.0 - s.c_1, 2.0 * (s.mu_eff - 2.0 + 1.0 / s.mu_eff) / ((dn + 2.0) * (dn + 2.0) + s.mu_eff));
  s.chi_n = std::sqrt(dn) * (1.0 - 1.0 / (4.0 * dn) + 1.0 / (21.0 * dn * dn));
  return s;
}

/// lambda candidates mean + sigma * B D z with z ~ N(0, I).
inline std::vector<std::vector<double>> cma_ask(const CmaState& s, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  const auto n = static_cast<Eigen::Index>(s.dim());
  std::vector<std::vector<double>> out;
  out.reserve(s.lambda);
  Eigen::VectorXd z(n);
  for (std::size_t k = 0; k < s.lambda; ++k) {
    for (Eigen::Index i = 0; i < n; ++i) z[i] = normal(rng);
    const Eigen::VectorXd x = s.mean + s.sigma * (s.basis * s.scales.cwiseProduct(z));
    out.emplace_back(x.data(), x.data() + n);
  }
  return out;
}

/// Candidate order by fitness, ties by candidate index.
inline std::vector<std::size_t> rank_candidates(std::span<const double> fitness) {
  std::vector<std::size_t> order(fitness.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return fitness[a] < fitness[b]; });
  return order;
}

inline CmaState cma_tell(CmaState s, const std::vector<std::vector<double>>& candidates,
                         std::span<const double> fitness) {
  if (candidates.size() != s.lambda || fitness.size() != s.lambda)
    throw std::invalid_argument("cma_tell expects " + std::to_string(s.lambda) + " candidates and fitness values");
  for (std::size_t k = 0; k < fitness.size(); ++k)
    if (!std::isfinite(fitness[k]))
      throw std::invalid_argument("non-finite fitness for candidate " + std::to_string(k) + " of generation " +
                                  std::to_string(s.generation + 1));

  const auto n = static_cast<Eigen::Index>(s.dim());
  const double dn = static_cast<double>(n);
  const auto order = rank_candidates(fitness);

  std::vector<Eigen::VectorXd> steps;  // (x - m) / sigma of the selected candidates
  steps.reserve(s.mu);
  Eigen::VectorXd y_w = Eigen::VectorXd::Zero(n);
  for (std::size_t i = 0; i < s.mu; ++i) {
    const auto& x = candidates[order[i]];
    if (x.size() != s.dim()) throw std::invalid_argument("candidate dimension mismatch");
    Eigen::VectorXd y = (Eigen::Map<const Eigen::VectorXd>(x.data(), n) - s.mean) / s.sigma;
    y_w += s.weights[i] * y;
    steps.push_back(std::move(y));
  }
  s.mean += s.sigma * y_w;

  // C^{-1/2} y_w = B D^{-1} B^T y_w
  Eigen::VectorXd inv_scales = s.scales;
  for (Eigen::Index i = 0; i < n; ++i) inv_scales[i] = inv_scales[i] > 0.0 ? 1.0 / inv_scales[i] : 0.0;
  const Eigen::VectorXd whitened = s.basis * inv_scales.cwiseProduct(s.basis.transpose() * y_w);
  s.path_sigma = (1.0 - s.c_sigma) * s.path_sigma + std::sqrt(s.c_sigma * (2.0 - s.c_sigma) * s.mu_eff) * whitened;

  ++s.generation;
  const double ps_norm = s.path_sigma.norm();
  const double decay = 1.0 - std::pow(1.0 - s.c_sigma, 2.0 * static_cast<double>(s.generation));
  const bool h_sig = ps_norm / std::sqrt(decay) < (1.4 + 2.0 / (dn + 1.0)) * s.chi_n;
  s.path_c = (1.0 - s.c_c) * s.path_c + (h_sig ? std::sqrt(s.c_c * (2.0 - s.c_c) * s.mu_eff) : 0.0) * y_w;

  Eigen::MatrixXd rank_mu = Eigen::MatrixXd::Zero(n, n);
  for (std::size_t i = 0; i < s.mu; ++i) rank_mu += s.weights[i] * steps[i] * steps[i].transpose();
  const double delta_h = h_sig ? 0.0 : s.c_c * (2.0 - s.c_c);
  s.cov = (1.0 - s.c_1 - s.c_mu + s.c_1 * delta_h) * s.cov + s.c_1 * s.path_c * s.path_c.transpose() + s.c_mu * rank_mu;

  s.sigma *= std::exp((s.c_sigma / s.d_sigma) * (ps_norm / s.chi_n - 1.0));
  if (!std::isfinite(s.sigma) || s.sigma <= 0.0)
    throw std::runtime_error("CMA-ES step size became degenerate at generation " + std::to_string(s.generation));
  if (!detail::decompose_covariance(s))
    throw std::runtime_error("CMA-ES covariance decomposition failed at generation " + std::to_string(s.generation));
  return s;
}

/// Where a fitness evaluation sits in the run.
struct Evaluation {
  std::size_t generation = 0;  // 0 is the initial mean
  std::size_t candidate = 0;
  std::size_t run = 0;
};

using Objective = std::function<double(std::span<const double>, const Evaluation&)>;

struct CmaConfig {
  std::size_t lambda = 0;  // 0 selects 4 + floor(3 ln n)
  std::size_t max_iter = 300;
  double sigma0 = 0.5;
  double theta0 = 0.0;
  std::vector<double> initial_mean;  // overrides theta0 when non-empty
  std::uint64_t seed = 1;
  double tol_fun = 1e-12;  // stop when a generation's fitness range falls below this
  double tol_x = 1e-12;    // stop when sigma * max sqrt(C_ii) falls below this
  std::size_t max_evaluations = 0;  // 0 means unlimited
  std::size_t threads = 0;
};

struct GenerationRecord {
  std::size_t generation = 0;
  double best_so_far = 0.0;
  double best = 0.0;  // best of this generation
  double mean = 0.0;  // mean fitness of this generation
  double sigma = 0.0;
  std::size_t evaluations = 0;
  std::vector<double> best_theta;  // best-so-far point
};

struct CmaResult {
  std::vector<double> best_theta;
  double best_fitness = std::numeric_limits<double>::infinity();
  std::vector<GenerationRecord> history;
  std::size_t evaluations = 0;
  std::string stop_reason;
  CmaState final_state;
};

namespace detail {

inline double evaluate_checked(const Objective& objective, std::span<const double> x, const Evaluation& e) {
  double f;
  try {
    f = objective(x, e);
  } catch (const std::exception& ex) {
    throw std::runtime_error("objective failed at generation " + std::to_string(e.generation) + ", candidate " +
                             std::to_string(e.candidate) + ": " + ex.what());
  }
  if (!std::isfinite(f))
    throw std::runtime_error("objective returned a non-finite value at generation " + std::to_string(e.generation) +
                             ", candidate " + std::to_string(e.candidate));
  return f;
}

}  // namespace detail

/// Minimizes `objective`. Generation 0 evaluates the initial mean alone, so
/// max_iter = 0 reports its fitness.
inline CmaResult run_cmaes(const Objective& objective, std::size_t dim, const CmaConfig& cfg, std::size_t run = 0) {
  std::vector<double> start = cfg.initial_mean.empty() ? std::vector<double>(dim, cfg.theta0) : cfg.initial_mean;
  if (start.size() != dim) throw std::invalid_argument("initial mean has the wrong dimension");
  CmaState state = cma_init(start, cfg.sigma0, cfg.lambda);
  Rng rng = make_rng(cfg.seed, "cmaes.sample", run);

  CmaResult result;
  const double f0 = detail::evaluate_checked(objective, start, {0, 0, run});
  result.best_theta = start;
  result.best_fitness = f0;
  result.evaluations = 1;
  result.history.push_back({0, f0, f0, f0, state.sigma, 1, start});
  result.stop_reason = "max_iter";

  for (std::size_t g = 1; g <= cfg.max_iter; ++g) {
    if (cfg.max_evaluations && result.evaluations + state.lambda > cfg.max_evaluations) {
      result.stop_reason = "max_evaluations";
      break;
    }
    const auto candidates = cma_ask(state, rng);
    std::vector<double> fitness(candidates.size());
    parallel_for(candidates.size(), [&](std::size_t k) {
      fitness[k] = detail::evaluate_checked(objective, candidates[k], {g, k, run});
    }, cfg.threads);
    result.evaluations += candidates.size();

    const auto order = rank_candidates(fitness);
    const double gen_best = fitness[order.front()];
    if (gen_best < result.best_fitness) {
      result.best_fitness = gen_best;
      result.best_theta = candidates[order.front()];
    }
    const double gen_mean = std::accumulate(fitness.begin(), fitness.end(), 0.0) / static_cast<double>(fitness.size());
    state = cma_tell(std::move(state), candidates, fitness);
    result.history.push_back({g, result.best_fitness, gen_best, gen_mean, state.sigma, result.evaluations,
                              result.best_theta});

    if (fitness[order.back()] - gen_best < cfg.tol_fun) {
      result.stop_reason = "tol_fun";
      break;
    }
    if (state.sigma * state.cov.diagonal().cwiseSqrt().maxCoeff() < cfg.tol_x) {
      result.stop_reason = "tol_x";
      break;
    }
  }
  result.final_state = std::move(state);
  return result;
}

inline CmaResult run_cmaes(const std::function<double(std::span<const double>)>& f, std::size_t dim,
                           const CmaConfig& cfg) {
  return run_cmaes([&f](std::span<const double> x, const Evaluation&) { return f(x); }, dim, cfg);
}

}  // namespace evolrp
