#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "evolrp/network.hpp"

namespace evolrp {

enum class RuleKind { Zero, Epsilon, AlphaBeta };

/// One LRP propagation rule with its hyperparameter.
///
/// Epsilon requires eps in (0, 1]. AlphaBeta requires alpha >= 1 and fixes
/// beta = alpha - 1, so alpha - beta = 1 always holds.
class LrpRule {
 public:
  static LrpRule zero() { return LrpRule(RuleKind::Zero, 0.0); }

  static LrpRule epsilon(double eps) {
    if (!(eps > 0.0) || eps > 1.0 || !std::isfinite(eps))
      throw std::invalid_argument("LRP-epsilon requires epsilon in (0, 1], got " + std::to_string(eps));
    return LrpRule(RuleKind::Epsilon, eps);
  }

  static LrpRule alpha_beta(double alpha) {
    if (!(alpha >= 1.0) || !std::isfinite(alpha))
      throw std::invalid_argument("LRP-alpha-beta requires alpha >= 1, got " + std::to_string(alpha));
    return LrpRule(RuleKind::AlphaBeta, alpha);
  }

  RuleKind kind() const noexcept { return kind_; }
  double epsilon() const noexcept { return kind_ == RuleKind::Epsilon ? value_ : 0.0; }
  double alpha() const noexcept { return kind_ == RuleKind::AlphaBeta ? value_ : 1.0; }
  double beta() const noexcept { return kind_ == RuleKind::AlphaBeta ? value_ - 1.0 : 0.0; }
  double value() const noexcept { return value_; }

  std::string describe() const {
    std::ostringstream os;
    switch (kind_) {
      case RuleKind::Zero: os << "LRP-0"; break;
      case RuleKind::Epsilon: os << "LRP-eps(" << value_ << ")"; break;
      case RuleKind::AlphaBeta: os << "LRP-ab(alpha=" << value_ << ", beta=" << value_ - 1.0 << ")"; break;
    }
    return os.str();
  }

  friend bool operator==(const LrpRule&, const LrpRule&) = default;

 private:
  LrpRule(RuleKind kind, double value) : kind_(kind), value_(value) {}
  RuleKind kind_;
  double value_;
};

/// Rule per trainable (Conv2d / Dense) layer, in model order.
struct LayerRuleConfig {
  std::vector<LrpRule> rules;

  static LayerRuleConfig uniform(std::size_t trainable_layers, const LrpRule& rule) {
    return {std::vector<LrpRule>(trainable_layers, rule)};
  }

  std::size_t size() const noexcept { return rules.size(); }

  /// True when every layer uses the same rule family (values may differ).
  bool single_family() const noexcept {
    for (const auto& r : rules)
      if (r.kind() != rules.front().kind()) return false;
    return true;
  }

  friend bool operator==(const LayerRuleConfig&, const LayerRuleConfig&) = default;
};

/// Signed input-level relevance, summed over channels to (H, W).
struct RelevanceMap {
  Tensor values;
  std::size_t target_class = 0;
  std::string method;
  LayerRuleConfig config;
};

namespace detail {

inline void check_same_shape(const Shape& got, const Shape& want, const char* what) {
  if (got != want)
    throw ShapeError(std::string(what) + " shape " + shape_to_string(got) + " does not match " + shape_to_string(want));
}

inline std::vector<double> hadamard(const Tensor& a, const std::vector<double>& c) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = static_cast<double>(a[i]) * c[i];
  return out;
}

inline std::vector<double> alpha_beta_combine(const Tensor& a, const std::vector<double>& for_pos,
                                              const std::vector<double>& for_neg) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double ai = a[i];
    const double c = ai > 0.0 ? for_pos[i] : (for_neg.empty() ? 0.0 : for_neg[i]);
    out[i] = ai * c;
  }
  return out;
}

inline Tensor to_tensor(const Shape& shape, const std::vector<double>& v) {
  Tensor out(shape);
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = static_cast<float>(v[i]);
  return out;
}

}  // namespace detail

namespace detail {

inline std::vector<double> lrp_linear_step_impl(const Layer& layer, const Tensor& a, std::span<const double> z,
                                                const Tensor& r_out, const LrpRule& rule, const Shape& out_shape) {
  const bool conv = layer.kind == LayerKind::Conv2d;
  const auto geom = conv ? conv_geometry(layer, a.shape(), out_shape) : kernels::ConvGeometry{};
  const float* bias = layer.bias ? layer.bias->data() : nullptr;

  if (rule.kind() != RuleKind::AlphaBeta) {
    const double eps = rule.epsilon();
    std::vector<double> s(r_out.size());
    for (std::size_t k = 0; k < s.size(); ++k) {
      const double zk = z[k];
      const double denom = eps > 0.0 ? zk + eps * (zk >= 0.0 ? 1.0 : -1.0) : zk;
      s[k] = denom == 0.0 ? 0.0 : static_cast<double>(r_out[k]) / denom;
    }
    std::vector<double> c(a.size(), 0.0);
    if (conv)
      kernels::conv2d_backward_input<double, float>(geom, s, layer.weight.values(), c);
    else
      kernels::dense_backward_input<double, float>(layer.in_units(), layer.out_units(), s, layer.weight.values(), c);
    return hadamard(a, c);
  }

  std::vector<double> zp(r_out.size()), zn(r_out.size());
  if (conv)
    kernels::conv2d_forward_split<float, float>(geom, a.values(), layer.weight.values(), bias, zp, zn);
  else
    kernels::dense_forward_split<float, float>(layer.in_units(), layer.out_units(), a.values(), layer.weight.values(),
                                               bias, zp, zn);
  const double alpha = rule.alpha(), beta = rule.beta();
  std::vector<double> sp(r_out.size()), sn(r_out.size());
  for (std::size_t k = 0; k < r_out.size(); ++k) {
    const double r = r_out[k];
    sp[k] = zp[k] > 0.0 ? alpha * r / zp[k] : 0.0;
    sn[k] = (beta > 0.0 && zn[k] < 0.0) ? -beta * r / zn[k] : 0.0;
  }
  const bool has_negative_input =
      std::any_of(a.values().begin(), a.values().end(), [](float v) { return v < 0.0f; });
  std::vector<double> for_pos(a.size(), 0.0), for_neg(has_negative_input ? a.size() : 0, 0.0);
  if (conv)
    kernels::conv2d_backward_split<float>(geom, sp, sn, layer.weight.values(), for_pos, for_neg);
  else
    kernels::dense_backward_split<float>(layer.in_units(), layer.out_units(), sp, sn, layer.weight.values(), for_pos,
                                         for_neg);
  return alpha_beta_combine(a, for_pos, for_neg);
}

inline Shape checked_linear_shapes(const Layer& layer, const Tensor& a, const Tensor& r_out) {
  if (!layer.trainable()) throw std::invalid_argument("lrp_linear_step requires a conv2d or dense layer");
  Shape out_shape = infer_output_shape(layer, a.shape(), 0);
  check_same_shape(r_out.shape(), out_shape, "output relevance");
  return out_shape;
}

}  // namespace detail

/// Relevance redistribution through one Dense or Conv2d layer.
///
/// `a` is the layer's recorded input and `z` its recorded output (the
/// pre-activation including bias). With s = R_out / stabilized(z) and
/// c = W^T s, the result is R_in = a * c, which equals the per-connection
/// sum R_j = sum_k a_j w_jk / z_k * R_k. Bias terms take part in z but
/// receive no relevance.
///
/// Alpha-beta splits each contribution a_j w_jk by sign; for non-negative
/// activations this is the usual w^+ / w^- split. A unit whose positive
/// (negative) total is zero passes no positive (negative) relevance.
inline Tensor lrp_linear_step(const Layer& layer, const Tensor& a, const Tensor& z, const Tensor& r_out,
                              const LrpRule& rule) {
  const Shape out_shape = detail::checked_linear_shapes(layer, a, r_out);
  if (rule.kind() == RuleKind::AlphaBeta)
    return detail::to_tensor(a.shape(), detail::lrp_linear_step_impl(layer, a, {}, r_out, rule, out_shape));
  detail::check_same_shape(z.shape(), out_shape, "pre-activation");
  const std::vector<double> zd(z.values().begin(), z.values().end());
  return detail::to_tensor(a.shape(), detail::lrp_linear_step_impl(layer, a, zd, r_out, rule, out_shape));
}

/// Input relevance of one Dense or Conv2d layer in double precision, with the
/// pre-activation recomputed from `a`. Flat, in the layout of `a`.
inline std::vector<double> lrp_linear_relevance(const Layer& layer, const Tensor& a, const Tensor& r_out,
                                                const LrpRule& rule) {
  const Shape out_shape = detail::checked_linear_shapes(layer, a, r_out);
  std::vector<double> z(shape_size(out_shape), 0.0);
  if (rule.kind() != RuleKind::AlphaBeta) {
    const float* bias = layer.bias ? layer.bias->data() : nullptr;
    if (layer.kind == LayerKind::Conv2d)
      kernels::conv2d_forward<float, float>(conv_geometry(layer, a.shape(), out_shape), a.values(),
                                            layer.weight.values(), bias, z);
    else
      kernels::dense_forward<float, float>(layer.in_units(), layer.out_units(), a.values(), layer.weight.values(), bias,
                                           z);
  }
  return detail::lrp_linear_step_impl(layer, a, z, r_out, rule, out_shape);
}

/// Same as the four-argument form, recomputing the pre-activation from `a`
/// in double precision.
inline Tensor lrp_linear_step(const Layer& layer, const Tensor& a, const Tensor& r_out, const LrpRule& rule) {
  return detail::to_tensor(a.shape(), lrp_linear_relevance(layer, a, r_out, rule));
}

/// ReLU passes relevance through, MaxPool routes each output's relevance to
/// its winning input, Flatten reshapes.
inline Tensor lrp_nonparam_step(const Layer& layer, const Tensor& input_activation, const Tensor& r_out) {
  const Shape out_shape = infer_output_shape(layer, input_activation.shape(), 0);
  detail::check_same_shape(r_out.shape(), out_shape, "output relevance");
  switch (layer.kind) {
    case LayerKind::ReLU:
      return r_out;
    case LayerKind::Flatten:
      return r_out.reshaped(input_activation.shape());
    case LayerKind::MaxPool2x2: {
      Tensor r_in(input_activation.shape());
      const std::size_t h = input_activation.dim(1), w = input_activation.dim(2);
      std::size_t k = 0;
      for (std::size_t c = 0; c < out_shape[0]; ++c)
        for (std::size_t oy = 0; oy < out_shape[1]; ++oy)
          for (std::size_t ox = 0; ox < out_shape[2]; ++ox)
            r_in[kernels::maxpool_argmax(input_activation.values(), h, w, c, oy, ox)] += r_out[k++];
      return r_in;
    }
    default:
      throw std::invalid_argument("lrp_nonparam_step does not handle " + std::string(to_string(layer.kind)));
  }
}

/// Relevance entering each layer from above (index = layer), plus the input relevance.
struct RelevancePass {
  std::vector<Tensor> layer_inputs;  // relevance at each layer's input
  Tensor output;                     // initial relevance at the logits
};

/// Initial relevance: one-hot at the target with the raw target logit.
inline Tensor initial_relevance(const Tensor& logits, std::size_t target) {
  if (target >= logits.size())
    throw std::invalid_argument("target class " + std::to_string(target) + " out of range for " +
                                std::to_string(logits.size()) + " logits");
  Tensor r(logits.shape());
  r[target] = logits[target];
  return r;
}

inline RelevancePass lrp_backward_pass(const Model& model, const ActivationTrace& trace, std::size_t target,
                                       const LayerRuleConfig& config) {
  check_trace(model, trace);
  if (config.size() != model.trainable_count())
    throw std::invalid_argument("rule config has " + std::to_string(config.size()) + " entries for " +
                                std::to_string(model.trainable_count()) + " trainable layers");
  RelevancePass pass;
  pass.output = initial_relevance(trace.logits(), target);
  pass.layer_inputs.resize(model.layers.size());
  Tensor r = pass.output;
  std::size_t rule_index = config.size();
  for (std::size_t li = model.layers.size(); li-- > 0;) {
    const auto& layer = model.layers[li];
    if (layer.trainable())
      r = lrp_linear_step(layer, trace.inputs[li], trace.outputs[li], r, config.rules[--rule_index]);
    else
      r = lrp_nonparam_step(layer, trace.inputs[li], r);
    if (!r.all_finite())
      throw std::runtime_error("non-finite relevance produced at " + layer_label(li, layer.kind));
    pass.layer_inputs[li] = r;
  }
  return pass;
}

inline Tensor sum_over_channels(const Tensor& r) {
  if (r.rank() != 3) throw ShapeError("expected (channels, height, width) relevance, got " + shape_to_string(r.shape()));
  const std::size_t c = r.dim(0), h = r.dim(1), w = r.dim(2);
  if (c == 1) return r.reshaped({h, w});
  std::vector<double> acc(h * w, 0.0);
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t i = 0; i < h * w; ++i) acc[i] += r[ch * h * w + i];
  Tensor out({h, w});
  for (std::size_t i = 0; i < h * w; ++i) out[i] = static_cast<float>(acc[i]);
  return out;
}

/// LRP explanation from a recorded forward pass.
inline RelevanceMap explain_lrp(const Model& model, const ActivationTrace& trace, std::size_t target,
                                const LayerRuleConfig& config) {
  auto pass = lrp_backward_pass(model, trace, target, config);
  return {sum_over_channels(pass.layer_inputs.front()), target, "lrp", config};
}

inline RelevanceMap explain_lrp(const Model& model, const Tensor& input, std::size_t target,
                                const LayerRuleConfig& config) {
  return explain_lrp(model, forward(model, input), target, config);
}

struct LayerRelevance {
  std::size_t layer = 0;
  LayerKind kind = LayerKind::ReLU;
  double relevance_sum = 0.0;  // total relevance at this layer's input
  bool absorbs_bias = false;   // layer has a nonzero bias, so the sum may differ from the one above
};

struct ConservationReport {
  double target_logit = 0.0;
  std::vector<LayerRelevance> layers;  // in model order; layers.front() is the input level

  /// Largest |sum - logit| / |logit| over all layers.
  double max_relative_deviation() const {
    double worst = 0.0;
    const double denom = std::max(std::abs(target_logit), 1e-30);
    for (const auto& l : layers) worst = std::max(worst, std::abs(l.relevance_sum - target_logit) / denom);
    return worst;
  }
};

inline ConservationReport conservation_report(const Model& model, const Tensor& input, std::size_t target,
                                              const LayerRuleConfig& config) {
  auto trace = forward(model, input);
  auto pass = lrp_backward_pass(model, trace, target, config);
  ConservationReport report;
  report.target_logit = trace.logits()[target];
  for (std::size_t li = 0; li < model.layers.size(); ++li) {
    const auto& layer = model.layers[li];
    bool bias = false;
    if (layer.bias)
      for (float b : layer.bias->values()) bias = bias || b != 0.0f;
    report.layers.push_back({li, layer.kind, pass.layer_inputs[li].sum(), bias});
  }
  return report;
}

}  // namespace evolrp
