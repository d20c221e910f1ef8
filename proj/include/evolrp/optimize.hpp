#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "evolrp/cmaes.hpp"
#include "evolrp/genome.hpp"
#include "evolrp/metrics.hpp"
#include "evolrp/pareto.hpp"

namespace evolrp {

/// Batch-mean metric of LRP explanations as a function of the genome.
///
/// Subsets and perturbations are drawn from a per-generation seed, so every
/// candidate of one generation is scored on the same draws. Forward traces do
/// not depend on the rules and are computed once per image (and once per
/// generation for perturbed inputs).
class EvoLrpObjective {
 public:
  EvoLrpObjective(const Model& model, std::vector<Tensor> images, std::vector<std::size_t> labels, RuleFamily family,
                  MetricConfig cfg)
      : model_(model), images_(std::move(images)), labels_(std::move(labels)), family_(family), cfg_(cfg) {
    if (images_.empty()) throw std::invalid_argument("optimization batch is empty");
    if (images_.size() != labels_.size()) throw std::invalid_argument("images and labels differ in length");
    model_.validate();
    for (std::size_t i = 0; i < labels_.size(); ++i)
      if (labels_[i] >= model_.num_classes()) throw std::invalid_argument("label out of range at sample " + std::to_string(i));
    traces_.reserve(images_.size());
    for (const auto& x : images_) traces_.push_back(forward(model_, x));
  }

  std::size_t dim() const { return model_.trainable_count(); }
  RuleFamily family() const { return family_; }
  const MetricConfig& metric_config() const { return cfg_; }

  std::uint64_t generation_seed(std::size_t generation) const { return derive_seed(cfg_.seed, "generation", generation); }

  /// Batch means of the selected metrics at `theta`, using the draws of `generation`.
  std::map<Metric, double> metric_means(const MetricSelection& sel, std::span<const double> theta,
                                        std::size_t generation) const {
    const LayerRuleConfig config = decode_genome(family_, theta);
    auto cache = generation_cache(generation);
    const std::size_t n = images_.size();
    std::vector<double> fc(n), as(n), sp(n);
    for (std::size_t i = 0; i < n; ++i) {
      try {
        const Tensor map = explain_lrp(model_, traces_[i], labels_[i], config).values;
        if (sel.faithfulness) fc[i] = faithfulness_from_probe(map, probe(*cache, i)).value;
        if (sel.sensitivity) {
          const auto& traces = perturbed_traces(*cache, i);
          std::vector<Tensor> maps;
          maps.reserve(traces.size());
          for (const auto& t : traces) maps.push_back(explain_lrp(model_, t, labels_[i], config).values);
          as[i] = avg_sensitivity_from_maps(map, maps, cfg_.normalize_sensitivity);
        }
        if (sel.sparseness) sp[i] = sparseness(map);
      } catch (const std::exception& e) {
        throw std::runtime_error("sample " + std::to_string(i) + " under " + describe(config) + ": " + e.what());
      }
    }
    std::map<Metric, double> out;
    if (sel.faithfulness) out[Metric::Faithfulness] = summarize(std::move(fc)).mean;
    if (sel.sensitivity) out[Metric::Sensitivity] = summarize(std::move(as)).mean;
    if (sel.sparseness) out[Metric::Sparseness] = summarize(std::move(sp)).mean;
    return out;
  }

  double metric_mean(Metric m, std::span<const double> theta, std::size_t generation) const {
    return metric_means(MetricSelection::only(m), theta, generation).at(m);
  }

  /// CMA-ES fitness (lower is better): the metric mean, negated for metrics to maximize.
  double fitness(Metric m, std::span<const double> theta, const Evaluation& e) const {
    const double v = metric_mean(m, theta, e.generation);
    return preferred_direction(m) == Direction::Maximize ? -v : v;
  }

  Objective objective(Metric m) const {
    return [this, m](std::span<const double> theta, const Evaluation& e) { return fitness(m, theta, e); };
  }

  BiObjective biobjective(Metric first, Metric second) const {
    return [this, first, second](std::span<const double> theta, const Evaluation& e) {
      MetricSelection sel = MetricSelection::only(first);
      sel.faithfulness = sel.faithfulness || second == Metric::Faithfulness;
      sel.sensitivity = sel.sensitivity || second == Metric::Sensitivity;
      sel.sparseness = sel.sparseness || second == Metric::Sparseness;
      const auto v = metric_means(sel, theta, e.generation);
      return Point2{v.at(first), v.at(second)};
    };
  }

 private:
  struct SampleCache {
    std::once_flag probe_once, perturb_once;
    FaithfulnessProbe probe;
    std::vector<ActivationTrace> perturbed;
  };
  struct GenerationCache {
    std::size_t generation = 0;
    std::vector<std::unique_ptr<SampleCache>> samples;
    std::uint64_t last_used = 0;
  };

  static std::string describe(const LayerRuleConfig& config) {
    std::string s = "[";
    for (std::size_t i = 0; i < config.size(); ++i) s += (i ? ", " : "") + config.rules[i].describe();
    return s + "]";
  }

  MetricConfig sample_config(std::size_t generation, std::size_t i) const {
    MetricConfig c = cfg_;
    c.seed = sample_seed(generation_seed(generation), images_[i], labels_[i]);
    return c;
  }

  std::shared_ptr<GenerationCache> generation_cache(std::size_t generation) const {
    std::lock_guard lock(mutex_);
    auto& slot = cache_[generation];
    if (!slot) {
      slot = std::make_shared<GenerationCache>();
      slot->generation = generation;
      for (std::size_t i = 0; i < images_.size(); ++i) slot->samples.push_back(std::make_unique<SampleCache>());
    }
    slot->last_used = ++tick_;
    auto keep = slot;
    while (cache_.size() > kCachedGenerations) {
      auto oldest = cache_.begin();
      for (auto it = cache_.begin(); it != cache_.end(); ++it)
        if (it->second->last_used < oldest->second->last_used) oldest = it;
      cache_.erase(oldest);
    }
    return keep;
  }

  const FaithfulnessProbe& probe(GenerationCache& cache, std::size_t i) const {
    auto& s = *cache.samples[i];
    std::call_once(s.probe_once, [&] {
      s.probe = faithfulness_probe(model_, images_[i], labels_[i], sample_config(cache.generation, i));
    });
    return s.probe;
  }

  const std::vector<ActivationTrace>& perturbed_traces(GenerationCache& cache, std::size_t i) const {
    auto& s = *cache.samples[i];
    std::call_once(s.perturb_once, [&] {
      for (const auto& x : sensitivity_perturbations(images_[i], sample_config(cache.generation, i)))
        s.perturbed.push_back(forward(model_, x));
    });
    return s.perturbed;
  }

  static constexpr std::size_t kCachedGenerations = 3;

  Model model_;
  std::vector<Tensor> images_;
  std::vector<std::size_t> labels_;
  RuleFamily family_;
  MetricConfig cfg_;
  std::vector<ActivationTrace> traces_;
  mutable std::mutex mutex_;
  mutable std::map<std::size_t, std::shared_ptr<GenerationCache>> cache_;
  mutable std::uint64_t tick_ = 0;
};

}  // namespace evolrp
