#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "evolrp/evolrp.hpp"

namespace fs = std::filesystem;
using namespace evolrp;

namespace {

// -------------------------------------------------------------- JSON config

bool is_flag(const CLI::Option* opt) { return opt->get_expected_max() == 0; }

/// Resolved option values of `app`, keyed by long option name. Options
/// without a value or default are left out.
Json options_json(const CLI::App* app) {
  Json j = Json::object();
  for (const CLI::Option* opt : app->get_options()) {
    const std::string name = opt->get_single_name();
    if (name.empty() || name == "help" || name == "config" || opt->get_lnames().empty()) continue;
    if (is_flag(opt)) {
      j[name] = opt->count() > 0 && opt->as<bool>();
      continue;
    }
    std::vector<std::string> values = opt->results();
    if (opt->count() == 0) {
      if (opt->get_default_str().empty()) continue;
      values = {opt->get_default_str()};
      if (opt->get_expected_max() > 1 && values[0].size() > 1 && values[0].front() == '[') {
        // CLI11 renders vector defaults as "[a,b]"
        std::string inner = values[0].substr(1, values[0].size() - 2);
        values.clear();
        std::stringstream ss(inner);
        for (std::string item; std::getline(ss, item, ',');) values.push_back(item);
      }
    }
    if (opt->get_expected_max() > 1)
      j[name] = values;
    else if (!values.empty())
      j[name] = values.back();
  }
  return j;
}

class ConfigError : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

bool given(const std::vector<std::string>& args, const std::string& name) {
  const std::string flag = "--" + name;
  return std::any_of(args.begin(), args.end(),
                     [&](const std::string& a) { return a == flag || a.rfind(flag + "=", 0) == 0; });
}

/// Expands `--config FILE` into explicit arguments for every option the
/// command line does not set. FILE is either a flat {"option": value} object
/// or a run manifest, whose "config" block is used when its command matches.
std::vector<std::string> expand_config(std::vector<std::string> args, const std::string& command) {
  std::string path;
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) path = args[i + 1];
    if (args[i].rfind("--config=", 0) == 0) path = args[i].substr(9);
  }
  if (path.empty()) return args;
  std::ifstream in(path);
  if (!in) throw ConfigError("--config: cannot open " + path);
  Json j;
  try {
    j = Json::parse(in);
  } catch (const Json::parse_error& e) {
    throw ConfigError("--config: " + path + ": " + e.what());
  }
  if (!j.is_object()) throw ConfigError("--config: " + path + " must hold a JSON object");
  if (j.contains("config") && j.contains("command")) {
    if (j.at("command") != command)
      throw ConfigError("--config: " + path + " is a manifest of '" + j.at("command").get<std::string>() +
                        "', not '" + command + "'");
    j = j.at("config");
  }
  std::vector<std::string> extra;
  for (const auto& [key, value] : j.items()) {
    if (key == "config" || given(args, key)) continue;
    auto text = [](const Json& v) { return v.is_string() ? v.get<std::string>() : v.dump(); };
    if (value.is_array()) {
      extra.push_back("--" + key);
      for (const auto& v : value) extra.push_back(text(v));
    } else {
      extra.push_back("--" + key + "=" + text(value));
    }
  }
  args.insert(args.end(), extra.begin(), extra.end());
  return args;
}

// ----------------------------------------------------------------- options

struct DataOptions {
  std::size_t size = 28;
  double noise = 0.05;
  std::uint64_t seed = 1001;

  void add(CLI::App* cmd, std::uint64_t default_seed) {
    seed = default_seed;
    cmd->add_option("--size", size, "Image side length in pixels")->check(CLI::Range(16, 256));
    cmd->add_option("--noise", noise, "Gaussian pixel noise std")->check(CLI::NonNegativeNumber);
    cmd->add_option("--data-seed", seed, "Seed of the generated images");
  }

  Dataset batch(std::size_t n) const {
    Dataset ds = generate_shapes((n + kShapeClassCount - 1) / kShapeClassCount, size, noise, seed);
    ds.images.resize(n);
    ds.labels.resize(n);
    ds.boxes.resize(n);
    return ds;
  }
};

struct MetricOptions {
  MetricConfig cfg;
  std::vector<std::string> metrics{"faithfulness", "sensitivity", "sparseness"};
  bool raw_sensitivity = false;

  void add(CLI::App* cmd, bool with_selection) {
    cmd->add_option("--seed", cfg.seed, "Seed of the metric sampling streams");
    cmd->add_option("--subsets", cfg.n_subsets, "Faithfulness: number of random pixel subsets")->check(CLI::Range(2, 100000));
    cmd->add_option("--subset-size", cfg.subset_size, "Faithfulness: pixels per subset")->check(CLI::PositiveNumber);
    cmd->add_option("--perturbations", cfg.n_perturbations, "Sensitivity: number of input perturbations")
        ->check(CLI::Range(1, 100000));
    cmd->add_option("--perturb-std", cfg.perturb_std, "Sensitivity: perturbation std")->check(CLI::PositiveNumber);
    cmd->add_flag("--raw-sensitivity", raw_sensitivity, "Sensitivity without dividing by the base map norm");
    if (with_selection)
      cmd->add_option("--metrics", metrics, "Metrics to compute")
          ->check(CLI::IsMember({"faithfulness", "sensitivity", "sparseness"}))
          ->expected(1, 3);
  }

  MetricConfig config() const {
    MetricConfig c = cfg;
    c.normalize_sensitivity = !raw_sensitivity;
    return c;
  }

  MetricSelection selection() const {
    MetricSelection s{false, false, false};
    for (const auto& m : metrics) {
      s.faithfulness = s.faithfulness || m == "faithfulness";
      s.sensitivity = s.sensitivity || m == "sensitivity";
      s.sparseness = s.sparseness || m == "sparseness";
    }
    return s;
  }
};

struct MethodFlags {
  std::string method = "lrp0";
  std::string rule_config;
  MethodOptions opt;

  void add(CLI::App* cmd, bool with_method) {
    if (with_method)
      cmd->add_option("--method", method, "Attribution method")->check(CLI::IsMember(method_names()));
    cmd->add_option("--rule-config", rule_config, "Rule configuration JSON for evo-lrp")->check(CLI::ExistingFile);
    cmd->add_option("--epsilon", opt.epsilon, "Epsilon of lrp-eps")->check(CLI::Range(1e-12, 1.0));
    cmd->add_option("--alpha", opt.alpha, "Alpha of lrp-ab (beta = alpha - 1)")->check(CLI::Range(1.0, 1e6));
    cmd->add_option("--ig-steps", opt.ig_steps, "Integrated gradients: path steps")->check(CLI::Range(1, 100000));
    cmd->add_option("--lime-samples", opt.lime.n_samples, "LIME: perturbation samples")->check(CLI::PositiveNumber);
    cmd->add_option("--lime-patch", opt.lime.patch_size, "LIME: patch side in pixels")->check(CLI::PositiveNumber);
    cmd->add_option("--occlusion-patch", opt.occlusion_patch, "Occlusion: patch side in pixels")->check(CLI::PositiveNumber);
  }

  Method resolve() {
    Method m = *method_from_string(method);
    if (!rule_config.empty()) {
      opt.evo_rules = load_rule_config(rule_config);
      if (m == Method::Lrp0) m = Method::EvoLrp;
    }
    return m;
  }
};

struct ImageChoice {
  std::string image;
  std::size_t index = 0;
  long target = -1;
  bool multiobject = false;
  DataOptions data;

  void add(CLI::App* cmd, bool allow_multiobject) {
    cmd->add_option("--image", image, "Input PGM image (instead of a generated one)")->check(CLI::ExistingFile);
    cmd->add_option("--index", index, "Index of the generated image");
    cmd->add_option("--class", target, "Class to explain (default: true label, or prediction for --image)");
    if (allow_multiobject) cmd->add_flag("--multiobject", multiobject, "Use a generated two-object scene");
    data.add(cmd, 1001);
  }

  struct Picked {
    Tensor image;
    std::size_t target;
    Json meta;
  };

  Picked pick(const Model& model) const {
    Picked p;
    std::optional<std::size_t> label;
    if (!image.empty()) {
      p.image = read_pgm(image);
      p.meta = {{"image", image}};
    } else if (multiobject) {
      const auto ds = generate_multiobject(index + 1, data.size, data.seed, data.noise);
      p.image = ds.images[index];
      label = ds.labels[index][0];
      Json boxes = Json::array();
      for (std::size_t k = 0; k < 2; ++k) {
        const auto& b = ds.boxes[index][k];
        boxes.push_back({{"class", ds.class_names[ds.labels[index][k]]},
                         {"row0", b.row0}, {"col0", b.col0}, {"row1", b.row1}, {"col1", b.col1}});
      }
      p.meta = {{"multiobject_index", index}, {"objects", boxes}};
    } else {
      const auto ds = generate_shapes(index / kShapeClassCount + 1, data.size, data.noise, data.seed);
      p.image = ds.images[index];
      label = ds.labels[index];
      p.meta = {{"index", index}, {"label", ds.class_names[ds.labels[index]]}};
    }
    if (p.image.shape() != model.input_shape)
      throw std::invalid_argument("image shape " + shape_to_string(p.image.shape()) + " does not match model input " +
                                  shape_to_string(model.input_shape));
    if (target >= 0)
      p.target = static_cast<std::size_t>(target);
    else
      p.target = label ? *label : argmax(predict_logits(model, p.image));
    if (p.target >= model.num_classes())
      throw std::invalid_argument("class " + std::to_string(p.target) + " out of range for a " +
                                  std::to_string(model.num_classes()) + "-class model");
    p.meta["class"] = p.target;
    return p;
  }
};

std::vector<std::string> write_heatmaps(const Tensor& map, const fs::path& dir, const std::string& stem,
                                        const std::vector<std::string>& formats) {
  std::vector<std::string> out;
  for (const auto& f : formats) {
    const std::string name = stem + "." + f;
    render_heatmap(map, dir / name);
    out.push_back(name);
  }
  return out;
}

void print_report(const MetricReport& r) {
  std::cout << std::left << std::setw(12) << r.method;
  for (const auto& [m, s] : r.metrics)
    std::cout << "  " << to_string(m) << " " << std::fixed << std::setprecision(4) << s.mean << " +/- " << s.std;
  std::cout << std::defaultfloat << "\n";
}

Model open_model(const std::string& path) { return load_model(path); }

// --------------------------------------------------------------- commands

using Outputs = std::vector<std::string>;

struct TrainCmd {
  std::size_t per_class = 500;
  DataOptions data;
  TrainConfig train{5, 32, 0.01, 0.9, 7};
  bool no_bias = false;

  void add(CLI::App* cmd) {
    cmd->add_option("--per-class", per_class, "Training images per class")->check(CLI::PositiveNumber);
    data.add(cmd, 7);
    cmd->add_option("--epochs", train.epochs, "Training epochs")->check(CLI::PositiveNumber);
    cmd->add_option("--batch-size", train.batch_size, "Mini-batch size")->check(CLI::PositiveNumber);
    cmd->add_option("--lr", train.learning_rate, "Learning rate")->check(CLI::PositiveNumber);
    cmd->add_option("--momentum", train.momentum, "SGD momentum")->check(CLI::Range(0.0, 0.999));
    cmd->add_option("--seed", train.seed, "Initialization and shuffling seed");
    cmd->add_flag("--no-bias", no_bias, "Train a model without bias terms");
  }

  Outputs run(const fs::path& out) const {
    const auto ds = generate_shapes(per_class, data.size, data.noise, data.seed);
    Architecture arch;
    arch.bias = !no_bias;
    const auto result = evolrp::train(ds, arch, train, [](const EpochStats& e) {
      std::cout << "epoch " << e.epoch << "  loss " << std::fixed << std::setprecision(4) << e.loss << "  accuracy "
                << e.accuracy << std::defaultfloat << "\n";
    });
    save_model(result.model, out / "model.evm");
    const auto heldout = generate_shapes(50, data.size, data.noise, derive_seed(data.seed, "heldout"));
    Json summary;
    summary["schema_version"] = kSchemaVersion;
    summary["kind"] = "train_summary";
    summary["train_accuracy"] = accuracy(result.model, ds);
    summary["heldout_accuracy"] = accuracy(result.model, heldout);
    Json epochs = Json::array();
    for (const auto& e : result.history) epochs.push_back({{"epoch", e.epoch}, {"loss", e.loss}, {"accuracy", e.accuracy}});
    summary["epochs"] = epochs;
    write_json(out / "train.json", summary);
    std::cout << "train accuracy " << summary["train_accuracy"].get<double>() << ", held-out accuracy "
              << summary["heldout_accuracy"].get<double>() << "\n";
    return {"model.evm", "train.json"};
  }
};

struct ExplainCmd {
  std::string model;
  MethodFlags method;
  ImageChoice choice;
  bool contrast = false;
  std::vector<std::string> formats{"png", "csv"};

  void add(CLI::App* cmd) {
    cmd->add_option("--model", model, "Model file")->required()->check(CLI::ExistingFile);
    method.add(cmd, true);
    choice.add(cmd, true);
    cmd->add_flag("--contrast", contrast, "Class-contrast map (LRP methods only)");
    cmd->add_option("--format", formats, "Output formats")->check(CLI::IsMember({"png", "pgm", "csv"}))->expected(1, 3);
  }

  Outputs run(const fs::path& out) {
    const Model m = open_model(model);
    const Method which = method.resolve();
    const auto picked = choice.pick(m);
    Tensor map;
    if (contrast) {
      LayerRuleConfig rules;
      const std::size_t layers = m.trainable_count();
      switch (which) {
        case Method::Lrp0: rules = LayerRuleConfig::uniform(layers, LrpRule::zero()); break;
        case Method::LrpEpsilon: rules = LayerRuleConfig::uniform(layers, LrpRule::epsilon(method.opt.epsilon)); break;
        case Method::LrpAlphaBeta: rules = LayerRuleConfig::uniform(layers, LrpRule::alpha_beta(method.opt.alpha)); break;
        case Method::EvoLrp: rules = *method.opt.evo_rules; break;
        default: throw std::invalid_argument("--contrast needs an LRP method");
      }
      map = class_contrast_map(m, picked.image, picked.target, rules).values;
    } else {
      map = make_explainer(m, which, method.opt)(picked.image, picked.target);
    }
    write_pgm(out / "input.pgm", picked.image);
    Outputs files{"input.pgm"};
    const auto maps = write_heatmaps(map, out, "heatmap", formats);
    files.insert(files.end(), maps.begin(), maps.end());
    Json info = picked.meta;
    info["schema_version"] = kSchemaVersion;
    info["kind"] = "explanation";
    info["method"] = method_info(which).name;
    info["relevance_sum"] = std::accumulate(map.values().begin(), map.values().end(), 0.0);
    write_json(out / "explanation.json", info);
    files.push_back("explanation.json");
    std::cout << method_info(which).label << " map for class " << picked.target << " written to " << out.string()
              << "\n";
    return files;
  }
};

struct EvaluateCmd {
  std::string model;
  MethodFlags method;
  MetricOptions metrics;
  DataOptions data;
  std::size_t batch_size = 16;

  void add(CLI::App* cmd) {
    cmd->add_option("--model", model, "Model file")->required()->check(CLI::ExistingFile);
    method.add(cmd, true);
    metrics.add(cmd, true);
    data.add(cmd, 1001);
    cmd->add_option("--batch-size", batch_size, "Number of evaluated images")->check(CLI::PositiveNumber);
  }

  Outputs run(const fs::path& out) {
    const Model m = open_model(model);
    const Method which = method.resolve();
    const auto batch = data.batch(batch_size);
    const auto report = evaluate_batch(m, batch.images, batch.labels, make_explainer(m, which, method.opt),
                                       metrics.selection(), metrics.config(), std::string(method_info(which).name));
    print_report(report);
    const std::vector<MetricReport> rows{report};
    write_json(out / "metrics.json", metric_table_to_json(rows, Json{{"data_seed", data.seed}}));
    return {"metrics.json"};
  }
};

struct OptimizeCmd {
  std::string model;
  std::string metric;
  std::string metric2;
  std::string rule = "alphabeta";
  std::size_t iters = 50;
  std::size_t lambda = 16;
  double sigma0 = 0.5;
  double theta0 = 0.0;
  std::size_t weights = 5;
  std::uint64_t cma_seed = 1;
  std::size_t batch_size = 16;
  unsigned threads = 0;
  bool quiet = false;
  MetricOptions metrics;
  DataOptions data;

  void add(CLI::App* cmd) {
    const std::vector<std::string> names{"faithfulness", "sensitivity", "sparseness"};
    cmd->add_option("--model", model, "Model file")->required()->check(CLI::ExistingFile);
    cmd->add_option("--metric", metric, "Metric to optimize")->required()->check(CLI::IsMember(names));
    cmd->add_option("--metric2", metric2, "Second metric for a bi-objective run")->check(CLI::IsMember(names));
    cmd->add_option("--rule", rule, "Rule family")->check(CLI::IsMember({"alphabeta", "epsilon"}));
    cmd->add_option("--iters", iters, "CMA-ES generations (0 evaluates the initial configuration)");
    cmd->add_option("--lambda", lambda, "Population size")->check(CLI::Range(2, 10000));
    cmd->add_option("--sigma0", sigma0, "Initial step size")->check(CLI::PositiveNumber);
    cmd->add_option("--theta0", theta0, "Initial genome value for every layer");
    cmd->add_option("--weights", weights, "Bi-objective: number of scalarization weights")->check(CLI::PositiveNumber);
    cmd->add_option("--cma-seed", cma_seed, "Seed of the CMA-ES sampling stream");
    cmd->add_option("--batch-size", batch_size, "Optimization batch size")->check(CLI::PositiveNumber);
    cmd->add_option("--threads", threads, "Worker threads (0: all cores)");
    cmd->add_flag("--quiet", quiet, "No per-generation progress");
    metrics.add(cmd, false);
    data.add(cmd, 2002);
  }

  Outputs run(const fs::path& out) {
    const Model m = open_model(model);
    const RuleFamily family = *rule_family_from_string(rule);
    const Metric first = *metric_from_string(metric);
    const auto batch = data.batch(batch_size);
    const EvoLrpObjective objective(m, batch.images, batch.labels, family, metrics.config());

    CmaConfig cma;
    cma.lambda = lambda;
    cma.max_iter = iters;
    cma.sigma0 = sigma0;
    cma.theta0 = theta0;
    cma.seed = cma_seed;
    cma.threads = threads;

    Json context{{"schema_version", kSchemaVersion},
                 {"kind", "optimization_history"},
                 {"rule_family", to_string(family)},
                 {"batch_size", batch_size},
                 {"data_seed", data.seed},
                 {"metric_seed", metrics.cfg.seed}};

    if (metric2.empty()) {
      std::size_t shown = 0;
      const Objective logged = [&](std::span<const double> theta, const Evaluation& e) {
        return objective.fitness(first, theta, e);
      };
      const auto result = run_cmaes(logged, objective.dim(), cma);
      if (!quiet)
        for (const auto& g : result.history)
          if (g.generation >= shown) {
            std::cerr << "generation " << g.generation << "  best-so-far " << g.best_so_far << "  sigma " << g.sigma
                      << "\n";
            shown = g.generation + 1;
          }
      const double sign = preferred_direction(first) == Direction::Maximize ? -1.0 : 1.0;
      Json history = context;
      history["metric"] = to_string(first);
      history["direction"] = to_string(preferred_direction(first));
      const Json body = history_to_json(result, family);
      for (const auto& [k, v] : body.items()) history[k] = v;
      history["best_metric"] = sign * result.best_fitness;
      write_json(out / "history.json", history);
      save_rule_config(out / "best_config.json", decode_genome(family, result.best_theta), result.best_theta);
      if (iters == 0)
        std::cout << "baseline " << to_string(first) << " " << sign * result.best_fitness << " (fitness "
                  << result.best_fitness << ")\n";
      else
        std::cout << "best " << to_string(first) << " " << sign * result.best_fitness << " after "
                  << result.history.size() - 1 << " generations (" << result.stop_reason << ")\n";
      return {"history.json", "best_config.json"};
    }

    const Metric second = *metric_from_string(metric2);
    if (second == first) throw std::invalid_argument("--metric2 must differ from --metric");
    BiObjectiveConfig bi;
    bi.n_weights = weights;
    bi.cma = cma;
    const Directions dirs{preferred_direction(first), preferred_direction(second)};
    const auto result = run_biobjective(objective.biobjective(first, second), dirs, objective.dim(), bi);
    Json front = context;
    front["kind"] = "pareto_front";
    const Json body = front_to_json(result.front, family, first, second);
    for (const auto& [k, v] : body.items()) front[k] = v;
    front["weights"] = result.weights;
    Json runs = Json::array();
    for (const auto& r : result.runs) runs.push_back(history_to_json(r, family));
    front["runs"] = runs;
    write_json(out / "front.json", front);
    const auto& knee = result.front.genomes[result.front.knee_index];
    save_rule_config(out / "best_config.json", decode_genome(family, knee), knee);
    const auto& kp = result.front.points[result.front.knee_index];
    std::cout << result.front.points.size() << " non-dominated points; knee " << to_string(first) << " " << kp[0]
              << ", " << to_string(second) << " " << kp[1] << "\n";
    return {"front.json", "best_config.json"};
  }
};

struct CompareCmd {
  std::string model;
  std::vector<std::string> evo_configs;
  MethodFlags method;
  MetricOptions metrics;
  DataOptions data;
  std::size_t batch_size = 16;

  void add(CLI::App* cmd) {
    cmd->add_option("--model", model, "Model file")->required()->check(CLI::ExistingFile);
    cmd->add_option("--evo-config", evo_configs, "Optimized rule configuration(s) for the EVO-LRP rows")
        ->required()
        ->check(CLI::ExistingFile);
    method.add(cmd, false);
    metrics.add(cmd, true);
    data.add(cmd, 1001);
    cmd->add_option("--batch-size", batch_size, "Number of evaluated images")->check(CLI::PositiveNumber);
  }

  Outputs run(const fs::path& out) {
    const Model m = open_model(model);
    const auto batch = data.batch(batch_size);
    std::vector<MetricReport> rows;
    auto evaluate = [&](Method which, const MethodOptions& opt, std::string label) {
      rows.push_back(evaluate_batch(m, batch.images, batch.labels, make_explainer(m, which, opt), metrics.selection(),
                                    metrics.config(), std::move(label)));
      print_report(rows.back());
    };
    for (Method which : {Method::Lime, Method::IntegratedGradients, Method::GradCam, Method::Lrp0})
      evaluate(which, method.opt, std::string(method_info(which).label));
    for (const auto& path : evo_configs) {
      MethodOptions opt = method.opt;
      opt.evo_rules = load_rule_config(path);
      const std::string label =
          evo_configs.size() == 1 ? "EVO-LRP" : "EVO-LRP[" + fs::path(path).stem().string() + "]";
      evaluate(Method::EvoLrp, opt, label);
    }
    write_json(out / "compare.json", metric_table_to_json(rows, Json{{"data_seed", data.seed}}));

    std::ofstream md(out / "compare.md");
    md << "| method |";
    for (const auto& [metric, s] : rows.front().metrics) md << " " << to_string(metric) << " (" << to_string(preferred_direction(metric)) << ") |";
    md << "\n|---|";
    for (std::size_t i = 0; i < rows.front().metrics.size(); ++i) md << "---|";
    md << "\n";
    for (const auto& r : rows) {
      md << "| " << r.method << " |";
      for (const auto& [metric, s] : r.metrics) md << " " << std::fixed << std::setprecision(4) << s.mean << " ± " << s.std << " |";
      md << "\n";
    }
    if (!md) throw std::runtime_error("failed writing compare.md");
    return {"compare.json", "compare.md"};
  }
};

struct CompositeCmd {
  std::string model;
  std::string faithfulness_config, sensitivity_config, sparseness_config;
  ImageChoice choice;
  double clamp = kCompositeClampPercentile;
  std::vector<std::string> formats{"png", "csv"};

  void add(CLI::App* cmd) {
    cmd->add_option("--model", model, "Model file")->required()->check(CLI::ExistingFile);
    cmd->add_option("--faithfulness-config", faithfulness_config, "Faithfulness-optimized rules")
        ->required()->check(CLI::ExistingFile);
    cmd->add_option("--sensitivity-config", sensitivity_config, "Sensitivity-optimized rules")
        ->required()->check(CLI::ExistingFile);
    cmd->add_option("--sparseness-config", sparseness_config, "Sparseness-optimized rules")
        ->required()->check(CLI::ExistingFile);
    choice.add(cmd, true);
    cmd->add_option("--clamp", clamp, "Clamp percentile of the summed map")->check(CLI::Range(0.0, 0.49));
    cmd->add_option("--format", formats, "Output formats")->check(CLI::IsMember({"png", "pgm", "csv"}))->expected(1, 3);
  }

  Outputs run(const fs::path& out) const {
    const Model m = open_model(model);
    const auto picked = choice.pick(m);
    const std::array<LayerRuleConfig, 3> configs{load_rule_config(faithfulness_config),
                                                 load_rule_config(sensitivity_config),
                                                 load_rule_config(sparseness_config)};
    const std::array<std::string, 3> names{"faithfulness", "sensitivity", "sparseness"};
    write_pgm(out / "input.pgm", picked.image);
    Outputs files{"input.pgm"};
    for (std::size_t k = 0; k < 3; ++k) {
      const auto map = class_contrast_map(m, picked.image, picked.target, configs[k]).values;
      const auto written = write_heatmaps(map, out, "contrast_" + names[k], formats);
      files.insert(files.end(), written.begin(), written.end());
    }
    const auto composite = composite_map(m, picked.image, picked.target, configs, clamp).values;
    const auto written = write_heatmaps(composite, out, "composite", formats);
    files.insert(files.end(), written.begin(), written.end());
    Json info = picked.meta;
    info["schema_version"] = kSchemaVersion;
    info["kind"] = "composite";
    info["clamp"] = clamp;
    write_json(out / "composite.json", info);
    files.push_back("composite.json");
    std::cout << "composite map for class " << picked.target << " written to " << out.string() << "\n";
    return files;
  }
};

struct ExportCmd {
  std::size_t per_class = 10;
  bool multiobject = false;
  DataOptions data;

  void add(CLI::App* cmd) {
    cmd->add_option("--per-class", per_class, "Images per class (scenes with --multiobject)")
        ->check(CLI::PositiveNumber);
    cmd->add_flag("--multiobject", multiobject, "Write two-object scenes with their boxes");
    data.add(cmd, 7);
  }

  Outputs run(const fs::path& out) const {
    std::size_t n = per_class;
    if (multiobject) {
      export_dataset(generate_multiobject(per_class, data.size, data.seed, data.noise), out);
    } else {
      export_dataset(generate_shapes(per_class, data.size, data.noise, data.seed), out);
      n *= kShapeClassCount;
    }
    std::cout << n << " images written to " << out.string() << "\n";
    return {"labels.csv"};
  }
};

void write_manifest(const fs::path& out, const CLI::App* cmd, const Outputs& outputs) {
  Json j;
  j["schema_version"] = kSchemaVersion;
  j["kind"] = "manifest";
  j["command"] = cmd->get_name();
  j["config"] = options_json(cmd);
  j["outputs"] = outputs;
  write_json(out / "manifest.json", j);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Layer-wise relevance propagation with evolved rule parameters"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "evolrp 1.0.0");
  app.option_defaults()->always_capture_default();

  TrainCmd train_cmd;
  ExplainCmd explain_cmd;
  EvaluateCmd evaluate_cmd;
  OptimizeCmd optimize_cmd;
  CompareCmd compare_cmd;
  CompositeCmd composite_cmd;
  ExportCmd export_cmd;

  std::map<CLI::App*, std::function<Outputs(const fs::path&)>> handlers;
  std::map<CLI::App*, std::string> out_dirs;
  auto subcommand = [&](const std::string& name, const std::string& help, auto& impl) {
    CLI::App* cmd = app.add_subcommand(name, help);
    cmd->add_option("--config", "JSON options file or a previous run's manifest.json (flags win)")
        ->check(CLI::ExistingFile);
    out_dirs[cmd] = "runs/" + name;
    cmd->add_option("--out", out_dirs[cmd], "Output directory");
    impl.add(cmd);
    handlers[cmd] = [&impl](const fs::path& out) { return impl.run(out); };
  };
  subcommand("train", "Train the shapes classifier", train_cmd);
  subcommand("explain", "Write an attribution heatmap for one image", explain_cmd);
  subcommand("evaluate", "Score one attribution method on a batch", evaluate_cmd);
  subcommand("optimize", "Tune per-layer LRP parameters with CMA-ES", optimize_cmd);
  subcommand("compare", "Method x metric table for the baselines and EVO-LRP", compare_cmd);
  subcommand("composite", "Composite and class-contrast heatmaps", composite_cmd);
  subcommand("export-data", "Write generated images as PGM files", export_cmd);

  try {
    std::vector<std::string> args(argv + 1, argv + argc);
    if (!args.empty() && app.get_subcommand_no_throw(args.front())) args = expand_config(args, args.front());
    std::reverse(args.begin(), args.end());
    app.parse(args);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "evolrp: " << e.what() << "\nRun with --help for usage.\n";
    return 2;
  } catch (const ConfigError& e) {
    std::cerr << "evolrp: " << e.what() << "\n";
    return 2;
  }

  CLI::App* cmd = app.get_subcommands().front();
  const fs::path out = out_dirs[cmd];
  try {
    fs::create_directories(out);
    const Outputs outputs = handlers[cmd](out);
    write_manifest(out, cmd, outputs);
  } catch (const ConfigFormatError& e) {
    std::cerr << "evolrp: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "evolrp: error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
