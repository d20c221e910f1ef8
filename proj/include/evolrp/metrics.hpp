#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "evolrp/lrp.hpp"
#include "evolrp/network.hpp"
#include "evolrp/parallel.hpp"
#include "evolrp/rng.hpp"

namespace evolrp {

enum class Metric { Faithfulness, Sensitivity, Sparseness };
enum class Direction { Minimize, Maximize };

inline Direction preferred_direction(Metric m) noexcept {
  return m == Metric::Sensitivity ? Direction::Minimize : Direction::Maximize;
}

inline std::string_view to_string(Metric m) {
  switch (m) {
    case Metric::Faithfulness: return "faithfulness";
    case Metric::Sensitivity: return "sensitivity";
    case Metric::Sparseness: return "sparseness";
  }
  return "unknown";
}

inline std::string_view to_string(Direction d) { return d == Direction::Maximize ? "max" : "min"; }

inline std::optional<Metric> metric_from_string(std::string_view name) {
  for (auto m : {Metric::Faithfulness, Metric::Sensitivity, Metric::Sparseness})
    if (to_string(m) == name) return m;
  return std::nullopt;
}

/// Sampling parameters for the three metrics.
///
/// Faithfulness masks `n_subsets` random pixel subsets of `subset_size`
/// pixels with `baseline_value`. Sensitivity draws `n_perturbations`
/// Gaussian input perturbations of standard deviation `perturb_std`.
struct MetricConfig {
  std::size_t n_subsets = 100;
  std::size_t subset_size = 56;
  float baseline_value = 0.0f;
  std::size_t n_perturbations = 8;
  double perturb_std = 0.05;
  bool normalize_sensitivity = true;
  std::uint64_t seed = 0;

  void validate_faithfulness(std::size_t n_features) const {
    if (n_subsets < 2) throw std::invalid_argument("n_subsets must be at least 2");
    if (subset_size == 0 || subset_size >= n_features)
      throw std::invalid_argument("subset_size must be in [1, " + std::to_string(n_features) + ")");
  }
  void validate_sensitivity() const {
    if (n_perturbations < 2) throw std::invalid_argument("n_perturbations must be at least 2");
    if (!(perturb_std > 0.0)) throw std::invalid_argument("perturb_std must be positive");
  }
};

struct MetricValue {
  double value = 0.0;
  bool degenerate = false;  // zero variance made the correlation undefined; value is 0
};

// ---------------------------------------------------------------- faithfulness

/// Subsets and the target-logit drop each one causes when masked.
struct FaithfulnessProbe {
  std::vector<std::vector<std::uint32_t>> subsets;  // pixel indices in the (H, W) plane
  std::vector<double> drops;
};

using ScoreFn = std::function<double(const Tensor&)>;

inline ScoreFn target_logit_fn(const Model& model, std::size_t target) {
  return [&model, target](const Tensor& x) { return static_cast<double>(predict_logits(model, x)[target]); };
}

/// `input` with every channel of the listed pixels set to `value`.
inline Tensor masked_input(const Tensor& input, std::span<const std::uint32_t> pixels, float value) {
  Tensor x = input;
  const std::size_t plane = input.dim(input.rank() - 1) * input.dim(input.rank() - 2);
  const std::size_t channels = input.size() / plane;
  for (std::size_t c = 0; c < channels; ++c)
    for (auto p : pixels) x[c * plane + p] = value;
  return x;
}

inline std::vector<std::vector<std::uint32_t>> sample_pixel_subsets(std::size_t n_features, const MetricConfig& cfg) {
  cfg.validate_faithfulness(n_features);
  Rng rng = make_rng(cfg.seed, "faithfulness.subsets");
  std::vector<std::uint32_t> pool(n_features);
  std::vector<std::vector<std::uint32_t>> subsets(cfg.n_subsets);
  for (auto& subset : subsets) {
    std::iota(pool.begin(), pool.end(), 0u);
    // partial Fisher-Yates
    for (std::size_t i = 0; i < cfg.subset_size; ++i) {
      std::uniform_int_distribution<std::size_t> pick(i, n_features - 1);
      std::swap(pool[i], pool[pick(rng)]);
    }
    subset.assign(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(cfg.subset_size));
  }
  return subsets;
}

inline FaithfulnessProbe faithfulness_probe(const ScoreFn& score, const Tensor& input, const MetricConfig& cfg) {
  const std::size_t plane = input.dim(input.rank() - 1) * input.dim(input.rank() - 2);
  FaithfulnessProbe probe;
  probe.subsets = sample_pixel_subsets(plane, cfg);
  const double full = score(input);
  probe.drops.reserve(probe.subsets.size());
  for (const auto& s : probe.subsets) probe.drops.push_back(full - score(masked_input(input, s, cfg.baseline_value)));
  return probe;
}

inline FaithfulnessProbe faithfulness_probe(const Model& model, const Tensor& input, std::size_t target,
                                            const MetricConfig& cfg) {
  return faithfulness_probe(target_logit_fn(model, target), input, cfg);
}

/// |Pearson correlation|, or 0 flagged degenerate when either side has zero variance.
inline MetricValue abs_pearson(std::span<const double> x, std::span<const double> y) {
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxx = 0.0, syy = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = x[i] - mx, dy = y[i] - my;
    sxx += dx * dx;
    syy += dy * dy;
    sxy += dx * dy;
  }
  // relative floor so rounding noise around a constant series counts as constant
  const double floor_x = 1e-24 * (mx * mx + 1e-300) * n, floor_y = 1e-24 * (my * my + 1e-300) * n;
  if (sxx <= floor_x || syy <= floor_y) return {0.0, true};
  return {std::min(1.0, std::abs(sxy) / std::sqrt(sxx * syy)), false};
}

inline MetricValue faithfulness_from_probe(const Tensor& map, const FaithfulnessProbe& probe) {
  std::vector<double> relevance;
  relevance.reserve(probe.subsets.size());
  for (const auto& s : probe.subsets) {
    double r = 0.0;
    for (auto p : s) r += map[p];
    relevance.push_back(r);
  }
  return abs_pearson(probe.drops, relevance);
}

inline MetricValue faithfulness_correlation(const ScoreFn& score, const Tensor& input, const Tensor& map,
                                            const MetricConfig& cfg) {
  const std::size_t plane = input.dim(input.rank() - 1) * input.dim(input.rank() - 2);
  if (map.size() != plane)
    throw ShapeError("relevance map " + shape_to_string(map.shape()) + " is not aligned with input " +
                     shape_to_string(input.shape()));
  return faithfulness_from_probe(map, faithfulness_probe(score, input, cfg));
}

inline MetricValue faithfulness_correlation(const Model& model, const Tensor& input, std::size_t target,
                                            const Tensor& map, const MetricConfig& cfg) {
  return faithfulness_correlation(target_logit_fn(model, target), input, map, cfg);
}

// ----------------------------------------------------------------- sensitivity

using Explainer = std::function<Tensor(const Tensor&)>;

/// The perturbed inputs x + delta, delta ~ N(0, perturb_std^2 I). Not clipped.
inline std::vector<Tensor> sensitivity_perturbations(const Tensor& input, const MetricConfig& cfg) {
  cfg.validate_sensitivity();
  Rng rng = make_rng(cfg.seed, "sensitivity.noise");
  std::normal_distribution<double> noise(0.0, cfg.perturb_std);
  std::vector<Tensor> out;
  out.reserve(cfg.n_perturbations);
  for (std::size_t i = 0; i < cfg.n_perturbations; ++i) {
    Tensor x = input;
    for (auto& v : x.values()) v = static_cast<float>(static_cast<double>(v) + noise(rng));
    out.push_back(std::move(x));
  }
  return out;
}

/// mean_i ||R_i - R|| (divided by ||R|| when normalized).
inline double avg_sensitivity_from_maps(const Tensor& base, std::span<const Tensor> perturbed, bool normalize) {
  if (perturbed.empty()) throw std::invalid_argument("no perturbed maps");
  const double base_norm = base.l2_norm();
  if (normalize && base_norm == 0.0) throw std::domain_error("average sensitivity is undefined for an all-zero map");
  double total = 0.0;
  for (const auto& m : perturbed) {
    if (m.shape() != base.shape()) throw ShapeError("perturbed map shape differs from the unperturbed map");
    double d2 = 0.0;
    for (std::size_t i = 0; i < m.size(); ++i) {
      const double d = static_cast<double>(m[i]) - static_cast<double>(base[i]);
      d2 += d * d;
    }
    total += std::sqrt(d2);
  }
  const double mean = total / static_cast<double>(perturbed.size());
  return normalize ? mean / base_norm : mean;
}

inline double avg_sensitivity(const Explainer& explainer, const Tensor& input, const MetricConfig& cfg) {
  const Tensor base = explainer(input);
  const auto inputs = sensitivity_perturbations(input, cfg);
  std::vector<Tensor> maps;
  maps.reserve(inputs.size());
  for (const auto& x : inputs) maps.push_back(explainer(x));
  return avg_sensitivity_from_maps(base, maps, cfg.normalize_sensitivity);
}

// ------------------------------------------------------------------ sparseness

/// Gini index of |R|: with |R| sorted ascending, sum_i (2i - n - 1) x_i / (n sum x).
inline double sparseness(std::span<const float> map) {
  if (map.empty()) throw std::invalid_argument("sparseness of an empty map");
  std::vector<double> x(map.size());
  for (std::size_t i = 0; i < map.size(); ++i) x[i] = std::abs(static_cast<double>(map[i]));
  std::sort(x.begin(), x.end());
  const double total = std::accumulate(x.begin(), x.end(), 0.0);
  if (total == 0.0) throw std::domain_error("sparseness is undefined for an all-zero map");
  const double n = static_cast<double>(x.size());
  double g = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) g += (2.0 * static_cast<double>(i + 1) - n - 1.0) * x[i];
  return g / (n * total);
}

inline double sparseness(const Tensor& map) { return sparseness(map.values()); }

// ----------------------------------------------------------------------- batch

struct MetricSelection {
  bool faithfulness = true;
  bool sensitivity = true;
  bool sparseness = true;

  static MetricSelection only(Metric m) {
    return {m == Metric::Faithfulness, m == Metric::Sensitivity, m == Metric::Sparseness};
  }
  bool contains(Metric m) const noexcept {
    switch (m) {
      case Metric::Faithfulness: return faithfulness;
      case Metric::Sensitivity: return sensitivity;
      case Metric::Sparseness: return sparseness;
    }
    return false;
  }
};

struct MetricSummary {
  double mean = 0.0;
  double std = 0.0;  // population standard deviation over samples
  std::vector<double> values;  // per sample, in batch order
  std::size_t degenerate = 0;
};

struct MetricReport {
  std::string method;
  std::size_t batch_size = 0;
  std::uint64_t seed = 0;
  std::map<Metric, MetricSummary> metrics;
};

/// Explanation map (H, W) for `input` and `target`.
using ExplainerFactory = std::function<Tensor(const Tensor& input, std::size_t target)>;

/// Per-sample stream seed, derived from the sample's content rather than its
/// position so that reordering a batch leaves every sample's draws unchanged.
inline std::uint64_t sample_seed(std::uint64_t seed, const Tensor& image, std::size_t target) {
  return derive_seed(seed, "sample", image.content_hash() ^ mix64(target));
}

/// Mean and standard deviation, summed in sorted order (order-independent).
inline MetricSummary summarize(std::vector<double> values, std::size_t degenerate = 0) {
  MetricSummary s;
  s.values = values;
  s.degenerate = degenerate;
  if (values.empty()) return s;
  std::sort(values.begin(), values.end());
  const double n = static_cast<double>(values.size());
  s.mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
  double ss = 0.0;
  for (double v : values) ss += (v - s.mean) * (v - s.mean);
  s.std = std::sqrt(ss / n);
  return s;
}

inline MetricReport evaluate_batch(const Model& model, std::span<const Tensor> images,
                                   std::span<const std::size_t> labels, const ExplainerFactory& explainer,
                                   const MetricSelection& selection, const MetricConfig& cfg,
                                   std::string method = "custom") {
  if (images.empty()) throw std::invalid_argument("evaluation batch is empty");
  if (images.size() != labels.size()) throw std::invalid_argument("images and labels differ in length");
  const std::size_t n = images.size();
  std::vector<double> fc(n), as(n), sp(n);
  std::vector<char> fc_degenerate(n, 0);

  parallel_for(n, [&](std::size_t i) {
    try {
      MetricConfig local = cfg;
      local.seed = sample_seed(cfg.seed, images[i], labels[i]);
      const Tensor map = explainer(images[i], labels[i]);
      if (selection.faithfulness) {
        auto v = faithfulness_correlation(model, images[i], labels[i], map, local);
        fc[i] = v.value;
        fc_degenerate[i] = v.degenerate;
      }
      if (selection.sensitivity) {
        const std::size_t y = labels[i];
        const auto inputs = sensitivity_perturbations(images[i], local);
        std::vector<Tensor> maps;
        maps.reserve(inputs.size());
        for (const auto& x : inputs) maps.push_back(explainer(x, y));
        as[i] = avg_sensitivity_from_maps(map, maps, local.normalize_sensitivity);
      }
      if (selection.sparseness) sp[i] = sparseness(map);
    } catch (const std::exception& e) {
      throw std::runtime_error("sample " + std::to_string(i) + ": " + e.what());
    }
  });

  MetricReport report;
  report.method = std::move(method);
  report.batch_size = n;
  report.seed = cfg.seed;
  if (selection.faithfulness) {
    const auto degenerate = static_cast<std::size_t>(std::count(fc_degenerate.begin(), fc_degenerate.end(), 1));
    report.metrics[Metric::Faithfulness] = summarize(fc, degenerate);
  }
  if (selection.sensitivity) report.metrics[Metric::Sensitivity] = summarize(as);
  if (selection.sparseness) report.metrics[Metric::Sparseness] = summarize(sp);
  return report;
}

/// Explainer factory for LRP under a fixed rule configuration.
inline ExplainerFactory lrp_explainer(const Model& model, LayerRuleConfig config) {
  return [&model, config = std::move(config)](const Tensor& x, std::size_t target) {
    return explain_lrp(model, x, target, config).values;
  };
}

}  // namespace evolrp
