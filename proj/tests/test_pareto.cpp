#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "support.hpp"

using namespace evolrp;

namespace {

constexpr Directions kMaxMax{Direction::Maximize, Direction::Maximize};

std::vector<Point2> pick(std::span<const Point2> pts, const std::vector<std::size_t>& idx) {
  std::vector<Point2> out;
  for (auto i : idx) out.push_back(pts[i]);
  return out;
}

// Two conflicting concave objectives of a 2-d genome, both maximized.
Point2 toy(std::span<const double> x) {
  const double a = (x[0] - 1.0) * (x[0] - 1.0) + x[1] * x[1];
  const double b = (x[0] + 1.0) * (x[0] + 1.0) + x[1] * x[1];
  return {-a, -b};
}

}  // namespace

TEST(Dominance, DocumentedFront) {
  const std::vector<Point2> pts{{1, 1}, {2, 0.5}, {1.5, 1.5}};
  EXPECT_EQ(pick(pts, non_dominated_indices(pts, kMaxMax)), (std::vector<Point2>{{2, 0.5}, {1.5, 1.5}}));
}

TEST(Dominance, DirectionsMatter) {
  const std::vector<Point2> pts{{1, 1}, {2, 0.5}, {1.5, 1.5}};
  const Directions min_max{Direction::Minimize, Direction::Maximize};
  EXPECT_EQ(pick(pts, non_dominated_indices(pts, min_max)), (std::vector<Point2>{{1, 1}, {1.5, 1.5}}));
  EXPECT_FALSE(dominates({1, 1}, {1, 1}, kMaxMax));
}

TEST(Dominance, DuplicatesKeepFirst) {
  const std::vector<Point2> pts{{1, 2}, {2, 1}, {1, 2}};
  EXPECT_EQ(non_dominated_indices(pts, kMaxMax), (std::vector<std::size_t>{0, 1}));
}

TEST(Knee, DocumentedExample) {
  const std::vector<Point2> front{{0, 1}, {0.5, 0.5}, {1, 0}};
  EXPECT_EQ(knee_index(front), 1u);
}

TEST(Knee, SinglePointAndPair) {
  EXPECT_EQ(knee_index(std::vector<Point2>{{3, 4}}), 0u);
  EXPECT_EQ(knee_index(std::vector<Point2>{{3, 4}, {4, 3}}), 0u);
  EXPECT_THROW(knee_index(std::vector<Point2>{}), std::invalid_argument);
}

TEST(Knee, PicksTheBulge) {
  const std::vector<Point2> front{{0, 1}, {0.2, 0.95}, {0.8, 0.8}, {0.95, 0.2}, {1, 0}};
  EXPECT_EQ(knee_index(front), 2u);
  // Scaling one objective leaves the choice unchanged.
  std::vector<Point2> stretched = front;
  for (auto& p : stretched) p[1] *= 1000.0;
  EXPECT_EQ(knee_index(stretched), 2u);
}

TEST(Knee, MatchesBruteForceDistance) {
  Rng rng = make_rng(3, "knee");
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 100; ++trial) {
    // points on a random concave arc, then shuffled
    std::vector<Point2> front;
    const double power = 0.3 + 2.0 * u(rng);
    for (int k = 0; k < 9; ++k) {
      const double t = u(rng) * 0.5 * std::acos(-1.0);
      front.push_back({std::pow(std::cos(t), power), std::pow(std::sin(t), power)});
    }
    const auto knee = knee_index(front);
    // independent oracle: distance to the chord via the triangle area formula
    double lo_x = 2, hi_x = -1, lo_y = 2, hi_y = -1;
    for (const auto& p : front) {
      lo_x = std::min(lo_x, p[0]);
      hi_x = std::max(hi_x, p[0]);
      lo_y = std::min(lo_y, p[1]);
      hi_y = std::max(hi_y, p[1]);
    }
    auto norm = [&](const Point2& p) { return Point2{(p[0] - lo_x) / (hi_x - lo_x), (p[1] - lo_y) / (hi_y - lo_y)}; };
    const auto a = norm(*std::min_element(front.begin(), front.end()));
    const auto b = norm(*std::max_element(front.begin(), front.end()));
    auto dist = [&](const Point2& raw) {
      const auto p = norm(raw);
      const double area2 = std::abs((b[0] - a[0]) * (p[1] - a[1]) - (p[0] - a[0]) * (b[1] - a[1]));
      return area2 / std::hypot(b[0] - a[0], b[1] - a[1]);
    };
    for (const auto& p : front) EXPECT_GE(dist(front[knee]) + 1e-12, dist(p)) << "trial " << trial;
  }
}

TEST(SimplexWeights, UniformOnSegment) {
  EXPECT_EQ(simplex_weights(5), (std::vector<double>{0.0, 0.25, 0.5, 0.75, 1.0}));
  EXPECT_EQ(simplex_weights(1), (std::vector<double>{0.5}));
  EXPECT_THROW(simplex_weights(0), std::invalid_argument);
}

TEST(BiObjective, FrontIsSoundAgainstLog) {
  BiObjectiveConfig cfg;
  cfg.n_weights = 5;
  cfg.cma.max_iter = 25;
  cfg.cma.seed = 3;
  cfg.cma.theta0 = 0.3;
  const auto result = run_biobjective([](std::span<const double> x, const Evaluation&) { return toy(x); }, kMaxMax, 2, cfg);
  ASSERT_FALSE(result.front.points.empty());
  ASSERT_EQ(result.runs.size(), 5u);
  std::size_t logged = 0;
  for (const auto& r : result.runs) logged += r.evaluations;
  EXPECT_EQ(result.log.size(), logged);
  for (std::size_t i = 0; i < result.front.points.size(); ++i) {
    for (const auto& e : result.log) EXPECT_FALSE(dominates(e.values, result.front.points[i], kMaxMax));
    EXPECT_EQ(toy(result.front.genomes[i]), result.front.points[i]);
  }
  for (std::size_t i = 1; i < result.log.size(); ++i) {
    const auto& a = result.log[i - 1].where;
    const auto& b = result.log[i].where;
    EXPECT_LT(std::tie(a.run, a.generation, a.candidate), std::tie(b.run, b.generation, b.candidate));
  }
  EXPECT_LT(result.front.knee_index, result.front.points.size());
}

TEST(BiObjective, ExtremesNearSingleObjectiveOptima) {
  BiObjectiveConfig cfg;
  cfg.n_weights = 3;
  cfg.cma.max_iter = 40;
  cfg.cma.seed = 8;
  const auto result = run_biobjective([](std::span<const double> x, const Evaluation&) { return toy(x); }, kMaxMax, 2, cfg);
  double best_first = -1e9, best_second = -1e9;
  for (const auto& p : result.front.points) {
    best_first = std::max(best_first, p[0]);
    best_second = std::max(best_second, p[1]);
  }
  // single-objective optima are 0 for both; the extremes sit at the optimum of each
  EXPECT_GT(best_first, -1e-6);
  EXPECT_GT(best_second, -1e-6);
}

TEST(BiObjective, DeterministicUnderThreads) {
  BiObjectiveConfig cfg;
  cfg.n_weights = 3;
  cfg.cma.max_iter = 10;
  cfg.cma.threads = 1;
  const auto obj = [](std::span<const double> x, const Evaluation&) { return toy(x); };
  const auto a = run_biobjective(obj, kMaxMax, 2, cfg);
  cfg.cma.threads = 3;
  const auto b = run_biobjective(obj, kMaxMax, 2, cfg);
  EXPECT_EQ(a.front.points, b.front.points);
  EXPECT_EQ(a.front.knee_index, b.front.knee_index);
}
