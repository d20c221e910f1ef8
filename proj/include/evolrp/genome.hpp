#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "evolrp/lrp.hpp"

namespace evolrp {

enum class RuleFamily { Epsilon, AlphaBeta };

inline std::string_view to_string(RuleFamily f) { return f == RuleFamily::Epsilon ? "epsilon" : "alphabeta"; }

inline std::optional<RuleFamily> rule_family_from_string(std::string_view s) {
  if (s == "epsilon" || s == "eps") return RuleFamily::Epsilon;
  if (s == "alphabeta" || s == "ab") return RuleFamily::AlphaBeta;
  return std::nullopt;
}

/// ln(1 + e^t) without overflow.
inline double softplus(double t) { return t > 30.0 ? t : std::log1p(std::exp(t)); }

inline double logistic(double t) {
  if (t >= 0.0) return 1.0 / (1.0 + std::exp(-t));
  const double e = std::exp(t);
  return e / (1.0 + e);
}

inline constexpr double kMinEpsilon = 1e-9;

inline double decode_alpha(double theta) { return 1.0 + softplus(theta); }
inline double decode_epsilon(double theta) { return std::max(kMinEpsilon, logistic(theta)); }

/// Inverses of the decoders, for seeding a search at chosen rule values.
inline double encode_alpha(double alpha) {
  if (!(alpha > 1.0)) throw std::invalid_argument("encode_alpha needs alpha > 1");
  const double s = alpha - 1.0;
  return s > 30.0 ? s : std::log(std::expm1(s));
}

inline double encode_epsilon(double eps) {
  if (!(eps > 0.0 && eps < 1.0)) throw std::invalid_argument("encode_epsilon needs eps in (0, 1)");
  return std::log(eps / (1.0 - eps));
}

/// Unconstrained per-layer encoding of a single-family rule assignment.
struct Genome {
  std::vector<double> theta;
  RuleFamily family = RuleFamily::AlphaBeta;
};

inline LrpRule decode_rule(RuleFamily family, double theta) {
  if (!std::isfinite(theta)) throw std::invalid_argument("genome entry is not finite");
  return family == RuleFamily::AlphaBeta ? LrpRule::alpha_beta(decode_alpha(theta))
                                         : LrpRule::epsilon(decode_epsilon(theta));
}

inline LayerRuleConfig decode_genome(RuleFamily family, std::span<const double> theta) {
  LayerRuleConfig config;
  config.rules.reserve(theta.size());
  for (double t : theta) config.rules.push_back(decode_rule(family, t));
  return config;
}

inline LayerRuleConfig decode_genome(const Genome& g) { return decode_genome(g.family, g.theta); }

}  // namespace evolrp
