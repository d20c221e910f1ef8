#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

#include "evolrp/cmaes.hpp"
#include "evolrp/genome.hpp"
#include "evolrp/lrp.hpp"
#include "evolrp/metrics.hpp"
#include "evolrp/pareto.hpp"

namespace evolrp {

using Json = nlohmann::ordered_json;

inline constexpr int kSchemaVersion = 1;

class ConfigFormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// ------------------------------------------------------------- rule configs

inline Json rule_to_json(const LrpRule& rule) {
  switch (rule.kind()) {
    case RuleKind::Zero: return Json{{"rule", "zero"}};
    case RuleKind::Epsilon: return Json{{"rule", "epsilon"}, {"epsilon", rule.epsilon()}};
    case RuleKind::AlphaBeta: return Json{{"rule", "alphabeta"}, {"alpha", rule.alpha()}, {"beta", rule.beta()}};
  }
  return {};
}

inline std::string family_name(const LayerRuleConfig& config) {
  if (config.rules.empty()) return "empty";
  if (!config.single_family()) return "mixed";
  switch (config.rules.front().kind()) {
    case RuleKind::Zero: return "zero";
    case RuleKind::Epsilon: return "epsilon";
    case RuleKind::AlphaBeta: return "alphabeta";
  }
  return "mixed";
}

/// {"schema_version", "kind": "lrp_rule_config", "rule_family", "layers": [...], "theta"?}
inline Json rule_config_to_json(const LayerRuleConfig& config, std::span<const double> theta = {}) {
  Json j;
  j["schema_version"] = kSchemaVersion;
  j["kind"] = "lrp_rule_config";
  j["rule_family"] = family_name(config);
  Json layers = Json::array();
  for (const auto& r : config.rules) layers.push_back(rule_to_json(r));
  j["layers"] = std::move(layers);
  if (!theta.empty()) j["theta"] = std::vector<double>(theta.begin(), theta.end());
  return j;
}

namespace detail {

inline double number_field(const Json& j, const char* key, const std::string& where) {
  if (!j.contains(key) || !j.at(key).is_number())
    throw ConfigFormatError("rule config: field '" + where + "." + key + "' must be a number");
  return j.at(key).get<double>();
}

}  // namespace detail

inline LrpRule rule_from_json(const Json& j, const std::string& where) {
  if (!j.is_object() || !j.contains("rule") || !j.at("rule").is_string())
    throw ConfigFormatError("rule config: field '" + where + ".rule' is missing");
  const auto name = j.at("rule").get<std::string>();
  try {
    if (name == "zero") return LrpRule::zero();
    if (name == "epsilon") return LrpRule::epsilon(detail::number_field(j, "epsilon", where));
    if (name == "alphabeta") {
      const double alpha = detail::number_field(j, "alpha", where);
      if (j.contains("beta")) {
        const double beta = detail::number_field(j, "beta", where);
        if (std::abs(alpha - beta - 1.0) > 1e-9)
          throw ConfigFormatError("rule config: field '" + where + "' violates alpha - beta = 1");
      }
      return LrpRule::alpha_beta(alpha);
    }
  } catch (const std::invalid_argument& e) {
    throw ConfigFormatError("rule config: field '" + where + "': " + e.what());
  }
  throw ConfigFormatError("rule config: field '" + where + ".rule' has unknown value '" + name + "'");
}

inline LayerRuleConfig rule_config_from_json(const Json& j) {
  if (!j.is_object()) throw ConfigFormatError("rule config: document is not an object");
  if (!j.contains("schema_version") || j.at("schema_version") != kSchemaVersion)
    throw ConfigFormatError("rule config: field 'schema_version' is missing or unsupported");
  if (!j.contains("layers") || !j.at("layers").is_array())
    throw ConfigFormatError("rule config: field 'layers' must be an array");
  LayerRuleConfig config;
  const auto& layers = j.at("layers");
  for (std::size_t i = 0; i < layers.size(); ++i)
    config.rules.push_back(rule_from_json(layers[i], "layers[" + std::to_string(i) + "]"));
  return config;
}

inline Json read_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  try {
    return Json::parse(in);
  } catch (const Json::parse_error& e) {
    throw ConfigFormatError(path.string() + ": invalid JSON: " + e.what());
  }
}

inline void write_json(const std::filesystem::path& path, const Json& j) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out << j.dump(2) << '\n';
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

inline LayerRuleConfig load_rule_config(const std::filesystem::path& path) {
  try {
    return rule_config_from_json(read_json(path));
  } catch (const ConfigFormatError& e) {
    throw ConfigFormatError(path.string() + ": " + e.what());
  }
}

inline void save_rule_config(const std::filesystem::path& path, const LayerRuleConfig& config,
                             std::span<const double> theta = {}) {
  write_json(path, rule_config_to_json(config, theta));
}

// ------------------------------------------------------------ metric reports

inline Json summary_to_json(const MetricSummary& s) {
  Json j;
  j["mean"] = s.mean;
  j["std"] = s.std;
  j["degenerate"] = s.degenerate;
  j["values"] = s.values;
  return j;
}

inline Json report_row_to_json(const MetricReport& r) {
  Json row;
  row["method"] = r.method;
  Json metrics = Json::object();
  for (const auto& [m, s] : r.metrics) metrics[std::string(to_string(m))] = summary_to_json(s);
  row["metrics"] = std::move(metrics);
  return row;
}

/// Method x metric table: one row per report, each metric with mean, std and per-sample values.
inline Json metric_table_to_json(std::span<const MetricReport> reports, const Json& context = Json::object()) {
  Json j;
  j["schema_version"] = kSchemaVersion;
  j["kind"] = "metric_report";
  if (!reports.empty()) {
    j["batch_size"] = reports.front().batch_size;
    j["seed"] = reports.front().seed;
  }
  for (const auto& [k, v] : context.items()) j[k] = v;
  Json rows = Json::array();
  for (const auto& r : reports) rows.push_back(report_row_to_json(r));
  j["methods"] = std::move(rows);
  return j;
}

// --------------------------------------------------------- optimizer output

inline Json history_to_json(const CmaResult& result, RuleFamily family) {
  Json gens = Json::array();
  for (const auto& g : result.history) {
    gens.push_back({{"generation", g.generation},
                    {"best_so_far", g.best_so_far},
                    {"best", g.best},
                    {"mean", g.mean},
                    {"sigma", g.sigma},
                    {"evaluations", g.evaluations},
                    {"best_config", rule_config_to_json(decode_genome(family, g.best_theta), g.best_theta)["layers"]}});
  }
  Json j;
  j["best_fitness"] = result.best_fitness;
  j["evaluations"] = result.evaluations;
  j["stop_reason"] = result.stop_reason;
  j["generations"] = std::move(gens);
  return j;
}

inline Json front_to_json(const ParetoFront& front, RuleFamily family, Metric first, Metric second) {
  Json points = Json::array();
  for (std::size_t i = 0; i < front.points.size(); ++i) {
    points.push_back({{std::string(to_string(first)), front.points[i][0]},
                      {std::string(to_string(second)), front.points[i][1]},
                      {"config", rule_config_to_json(decode_genome(family, front.genomes[i]), front.genomes[i])}});
  }
  Json j;
  j["objectives"] = {std::string(to_string(first)), std::string(to_string(second))};
  j["directions"] = {std::string(to_string(front.directions[0])), std::string(to_string(front.directions[1]))};
  j["knee_index"] = front.knee_index;
  j["points"] = std::move(points);
  return j;
}

}  // namespace evolrp
