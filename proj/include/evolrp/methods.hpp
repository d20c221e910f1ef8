#pragma once

#include <algorithm>
#include <array>
#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "evolrp/baselines.hpp"
#include "evolrp/lrp.hpp"
#include "evolrp/metrics.hpp"

namespace evolrp {

/// Attribution methods selectable by name. `evo-lrp` uses a rule
/// configuration produced by the optimizer.
enum class Method { Lrp0, LrpEpsilon, LrpAlphaBeta, EvoLrp, IntegratedGradients, GradCam, Lime, Occlusion };

struct MethodInfo {
  Method method;
  std::string_view name;
  std::string_view label;
};

inline constexpr std::array<MethodInfo, 8> kMethods{{
    {Method::Lrp0, "lrp0", "LRP-0"},
    {Method::LrpEpsilon, "lrp-eps", "LRP-eps"},
    {Method::LrpAlphaBeta, "lrp-ab", "LRP-ab"},
    {Method::EvoLrp, "evo-lrp", "EVO-LRP"},
    {Method::IntegratedGradients, "ig", "IG"},
    {Method::GradCam, "gradcam", "GradCAM"},
    {Method::Lime, "lime", "LIME"},
    {Method::Occlusion, "occlusion", "Occlusion"},
}};

inline std::optional<Method> method_from_string(std::string_view name) {
  for (const auto& m : kMethods)
    if (m.name == name) return m.method;
  return std::nullopt;
}

inline const MethodInfo& method_info(Method m) {
  return *std::find_if(kMethods.begin(), kMethods.end(), [m](const MethodInfo& i) { return i.method == m; });
}

inline std::vector<std::string> method_names() {
  std::vector<std::string> out;
  for (const auto& m : kMethods) out.emplace_back(m.name);
  return out;
}

struct MethodOptions {
  double epsilon = 0.25;
  double alpha = 2.0;
  std::optional<LayerRuleConfig> evo_rules;
  std::size_t ig_steps = 64;
  LimeConfig lime;
  std::size_t occlusion_patch = 4;
};

/// Explainer for `method`. The model must outlive the returned function.
inline ExplainerFactory make_explainer(const Model& model, Method method, const MethodOptions& opt = {}) {
  const std::size_t layers = model.trainable_count();
  switch (method) {
    case Method::Lrp0: return lrp_explainer(model, LayerRuleConfig::uniform(layers, LrpRule::zero()));
    case Method::LrpEpsilon: return lrp_explainer(model, LayerRuleConfig::uniform(layers, LrpRule::epsilon(opt.epsilon)));
    case Method::LrpAlphaBeta:
      return lrp_explainer(model, LayerRuleConfig::uniform(layers, LrpRule::alpha_beta(opt.alpha)));
    case Method::EvoLrp:
      if (!opt.evo_rules) throw std::invalid_argument("evo-lrp needs an optimized rule configuration");
      if (opt.evo_rules->size() != layers)
        throw std::invalid_argument("rule configuration has " + std::to_string(opt.evo_rules->size()) +
                                    " layers but the model has " + std::to_string(layers) + " trainable layers");
      return lrp_explainer(model, *opt.evo_rules);
    case Method::IntegratedGradients:
      return [&model, steps = opt.ig_steps](const Tensor& x, std::size_t t) {
        return integrated_gradients(model, x, t, steps).values;
      };
    case Method::GradCam:
      return [&model](const Tensor& x, std::size_t t) { return gradcam(model, x, t).values; };
    case Method::Lime:
      return [&model, cfg = opt.lime](const Tensor& x, std::size_t t) { return lime_lite(model, x, t, cfg).values; };
    case Method::Occlusion:
      return [&model, patch = opt.occlusion_patch](const Tensor& x, std::size_t t) {
        return occlusion_map(model, x, t, PatchGrid::for_input(x, patch)).values;
      };
  }
  throw std::invalid_argument("unknown method");
}

}  // namespace evolrp
