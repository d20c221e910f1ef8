#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <mutex>
#include <span>
#include <stdexcept>
#include <tuple>
#include <vector>

#include "evolrp/cmaes.hpp"
#include "evolrp/metrics.hpp"

namespace evolrp {

using Point2 = std::array<double, 2>;
using Directions = std::array<Direction, 2>;

namespace detail {

inline double oriented(double v, Direction d) { return d == Direction::Maximize ? v : -v; }

}  // namespace detail

/// `a` is no worse than `b` in both objectives and strictly better in one.
inline bool dominates(const Point2& a, const Point2& b, const Directions& dirs) {
  bool strictly = false;
  for (std::size_t i = 0; i < 2; ++i) {
    const double va = detail::oriented(a[i], dirs[i]), vb = detail::oriented(b[i], dirs[i]);
    if (va < vb) return false;
    if (va > vb) strictly = true;
  }
  return strictly;
}

/// Indices of the non-dominated points in input order. Of several points
/// with identical objective values only the first is kept.
inline std::vector<std::size_t> non_dominated_indices(std::span<const Point2> points, const Directions& dirs) {
  std::vector<std::size_t> keep;
  for (std::size_t i = 0; i < points.size(); ++i) {
    bool dominated = false;
    for (std::size_t j = 0; j < points.size() && !dominated; ++j)
      dominated = dominates(points[j], points[i], dirs) || (j < i && points[j] == points[i]);
    if (!dominated) keep.push_back(i);
  }
  return keep;
}

/// Front point farthest from the chord joining the two extreme points, in
/// coordinates scaled so both objectives span [0, 1] over the front. Ties go
/// to the point whose projection is nearest the chord's midpoint, then to the
/// lower index.
inline std::size_t knee_index(std::span<const Point2> front) {
  if (front.empty()) throw std::invalid_argument("knee of an empty front");
  if (front.size() <= 2) return 0;
  std::size_t lo = 0, hi = 0;
  for (std::size_t i = 1; i < front.size(); ++i) {
    if (front[i][0] < front[lo][0]) lo = i;
    if (front[i][0] > front[hi][0]) hi = i;
  }
  Point2 min_v = front[0], max_v = front[0];
  for (const auto& p : front)
    for (std::size_t d = 0; d < 2; ++d) {
      min_v[d] = std::min(min_v[d], p[d]);
      max_v[d] = std::max(max_v[d], p[d]);
    }
  auto scaled = [&](const Point2& p) {
    Point2 q;
    for (std::size_t d = 0; d < 2; ++d) q[d] = max_v[d] > min_v[d] ? (p[d] - min_v[d]) / (max_v[d] - min_v[d]) : 0.0;
    return q;
  };
  const Point2 a = scaled(front[lo]), b = scaled(front[hi]);
  const double dx = b[0] - a[0], dy = b[1] - a[1];
  const double len = std::hypot(dx, dy);
  if (len == 0.0) return 0;

  constexpr double kTie = 1e-12;
  std::size_t best = 0;
  double best_dist = -1.0, best_mid = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < front.size(); ++i) {
    const Point2 p = scaled(front[i]);
    const double dist = std::abs(dx * (p[1] - a[1]) - dy * (p[0] - a[0])) / len;
    const double t = (dx * (p[0] - a[0]) + dy * (p[1] - a[1])) / (len * len);
    const double mid = std::abs(t - 0.5);
    if (dist > best_dist + kTie || (std::abs(dist - best_dist) <= kTie && mid < best_mid - kTie)) {
      best = i;
      best_dist = dist;
      best_mid = mid;
    }
  }
  return best;
}

struct ParetoFront {
  std::vector<Point2> points;
  std::vector<std::vector<double>> genomes;
  std::size_t knee_index = 0;
  Directions directions{Direction::Maximize, Direction::Maximize};
};

inline ParetoFront build_front(std::span<const Point2> points, std::span<const std::vector<double>> genomes,
                               const Directions& dirs) {
  if (points.empty()) throw std::invalid_argument("no evaluated points");
  ParetoFront front;
  front.directions = dirs;
  for (auto i : non_dominated_indices(points, dirs)) {
    front.points.push_back(points[i]);
    front.genomes.push_back(genomes[i]);
  }
  front.knee_index = knee_index(front.points);
  return front;
}

/// Raw values of both objectives at one point.
using BiObjective = std::function<Point2(std::span<const double>, const Evaluation&)>;

struct LoggedEvaluation {
  Evaluation where;
  std::vector<double> theta;
  Point2 values;
};

struct BiObjectiveConfig {
  std::size_t n_weights = 5;
  CmaConfig cma;  // budget of every scalarized run
};

struct BiObjectiveResult {
  ParetoFront front;
  std::vector<LoggedEvaluation> log;  // every evaluation, ordered by (run, generation, candidate)
  std::vector<double> weights;        // weight on the first objective, per run
  std::vector<CmaResult> runs;
};

/// Weights on the first objective: k / (n - 1) for k = 0..n-1 (0.5 when n = 1).
inline std::vector<double> simplex_weights(std::size_t n) {
  if (n == 0) throw std::invalid_argument("n_weights must be positive");
  if (n == 1) return {0.5};
  std::vector<double> w(n);
  for (std::size_t k = 0; k < n; ++k) w[k] = static_cast<double>(k) / static_cast<double>(n - 1);
  return w;
}

/// Weighted-sum sweep: one CMA-ES run per weight on
/// w * f1' + (1 - w) * f2', where f' is the objective negated when maximized.
/// All evaluated points are pooled and filtered to the non-dominated set.
inline BiObjectiveResult run_biobjective(const BiObjective& objective, const Directions& dirs, std::size_t dim,
                                         const BiObjectiveConfig& cfg) {
  BiObjectiveResult result;
  result.weights = simplex_weights(cfg.n_weights);
  std::mutex log_mutex;

  for (std::size_t r = 0; r < result.weights.size(); ++r) {
    const double w = result.weights[r];
    Objective scalar = [&, w](std::span<const double> x, const Evaluation& e) {
      const Point2 v = objective(x, e);
      {
        std::lock_guard lock(log_mutex);
        result.log.push_back({e, std::vector<double>(x.begin(), x.end()), v});
      }
      return -(w * detail::oriented(v[0], dirs[0]) + (1.0 - w) * detail::oriented(v[1], dirs[1]));
    };
    CmaConfig run_cfg = cfg.cma;
    run_cfg.seed = derive_seed(cfg.cma.seed, "biobjective.run", r);
    result.runs.push_back(run_cmaes(scalar, dim, run_cfg, r));
  }

  std::sort(result.log.begin(), result.log.end(), [](const LoggedEvaluation& a, const LoggedEvaluation& b) {
    return std::tie(a.where.run, a.where.generation, a.where.candidate) <
           std::tie(b.where.run, b.where.generation, b.where.candidate);
  });
  std::vector<Point2> points;
  std::vector<std::vector<double>> genomes;
  for (const auto& e : result.log) {
    points.push_back(e.values);
    genomes.push_back(e.theta);
  }
  result.front = build_front(points, genomes, dirs);
  return result;
}

}  // namespace evolrp
