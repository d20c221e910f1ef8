#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "support.hpp"

using namespace evolrp;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code = -1;
  std::string output;
};

Run run(const std::string& args) {
  const std::string cmd = std::string(EVOLRP_CLI_PATH) + " " + args + " 2>&1";
  Run r;
  FILE* pipe = popen(cmd.c_str(), "r");
  if (!pipe) return r;
  char buf[4096];
  for (std::size_t n; (n = std::fread(buf, 1, sizeof buf, pipe)) > 0;) r.output.append(buf, n);
  const int status = pclose(pipe);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path workdir() {
  static const fs::path dir = [] {
    const auto d = fs::temp_directory_path() / ("evolrp_cli_" + std::to_string(::getpid()));
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

std::string at(const std::string& name) { return (workdir() / name).string(); }

/// Small model trained through the CLI once per test binary.
const std::string& model_path() {
  static const std::string path = [] {
    const auto r = run("train --per-class 40 --epochs 1 --out " + at("model"));
    EXPECT_EQ(r.code, 0) << r.output;
    return at("model") + "/model.evm";
  }();
  return path;
}

const std::string kFastMetrics = " --batch-size 4 --subsets 20 --perturbations 3 ";

}  // namespace

TEST(Cli, HelpExitsZero) {
  const auto r = run("--help");
  EXPECT_EQ(r.code, 0);
  for (const char* sub : {"train", "explain", "evaluate", "optimize", "compare", "composite", "export-data"})
    EXPECT_NE(r.output.find(sub), std::string::npos) << sub;
  EXPECT_EQ(run("evaluate --help").code, 0);
}

TEST(Cli, UsageErrorsExitTwo) {
  EXPECT_EQ(run("").code, 2);
  EXPECT_EQ(run("frobnicate").code, 2);
  EXPECT_EQ(run("evaluate --model " + model_path() + " --method lrp0 --no-such-flag").code, 2);
  EXPECT_EQ(run("evaluate --model " + at("missing.evm") + " --method lrp0").code, 2);
  EXPECT_EQ(run("evaluate --model " + model_path() + " --method shap").code, 2);
  EXPECT_EQ(run("optimize --model " + model_path()).code, 2);
  EXPECT_EQ(run("evaluate --model " + model_path() + " --method lrp0 --config " + at("none.json")).code, 2);

  std::ofstream(at("extra.json")) << R"({"method": "lrp0", "unknown-key": 3})";
  EXPECT_EQ(run("evaluate --model " + model_path() + " --config " + at("extra.json")).code, 2);
  std::ofstream(at("broken.json")) << "{";
  EXPECT_EQ(run("evaluate --model " + model_path() + " --config " + at("broken.json")).code, 2);
}

TEST(Cli, RuntimeErrorsExitOne) {
  std::ofstream(at("rules.json")) << rule_config_to_json(LayerRuleConfig::uniform(2, LrpRule::zero())).dump();
  const auto r = run("evaluate --model " + model_path() + " --method evo-lrp --rule-config " + at("rules.json") +
                     kFastMetrics + "--out " + at("bad_rules"));
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.output.find("error:"), std::string::npos);
  EXPECT_NE(r.output.find("trainable layers"), std::string::npos);

  const auto g = run("explain --model " + model_path() + " --method gradcam --contrast --out " + at("gc"));
  EXPECT_EQ(g.code, 1);
}

TEST(Cli, TrainWritesModelAndManifest) {
  const Model m = load_model(model_path());
  EXPECT_EQ(m.num_classes(), kShapeClassCount);
  const auto manifest = read_json(at("model") + "/manifest.json");
  EXPECT_EQ(manifest["command"], "train");
  EXPECT_EQ(manifest["config"]["per-class"], "40");
  EXPECT_EQ(manifest["config"]["data-seed"], "7");
  EXPECT_EQ(manifest["config"]["seed"], "7");
  EXPECT_TRUE(read_json(at("model") + "/train.json").contains("heldout_accuracy"));
}

TEST(Cli, EvaluateIsByteIdenticalAcrossRuns) {
  const std::string args = "evaluate --model " + model_path() + " --method lrp-eps" + kFastMetrics + "--out ";
  ASSERT_EQ(run(args + at("ev_a")).code, 0);
  ASSERT_EQ(run(args + at("ev_b")).code, 0);
  EXPECT_EQ(slurp(at("ev_a") + "/metrics.json"), slurp(at("ev_b") + "/metrics.json"));
  const auto a = read_json(at("ev_a") + "/manifest.json");
  auto b = read_json(at("ev_b") + "/manifest.json");
  b["config"]["out"] = a["config"]["out"];
  EXPECT_EQ(a, b);
}

TEST(Cli, EvaluateMatchesLibrary) {
  ASSERT_EQ(run("evaluate --model " + model_path() + " --method lrp0" + kFastMetrics + "--out " + at("ev_lib")).code, 0);
  const Model m = load_model(model_path());
  const auto ds = generate_shapes(1, 28, 0.05, 1001);
  MetricConfig cfg;
  cfg.n_subsets = 20;
  cfg.n_perturbations = 3;
  const auto report = evaluate_batch(m, ds.images, ds.labels, make_explainer(m, Method::Lrp0), MetricSelection{}, cfg,
                                     "lrp0");
  const auto j = read_json(at("ev_lib") + "/metrics.json");
  for (const auto& [metric, s] : report.metrics)
    EXPECT_EQ(j["methods"][0]["metrics"][std::string(to_string(metric))]["mean"].get<double>(), s.mean);
}

TEST(Cli, ManifestReplaysAndFlagsWin) {
  const std::string base = "evaluate --model " + model_path() + " --method lrp-ab --alpha 1.5" + kFastMetrics;
  ASSERT_EQ(run(base + "--out " + at("rp_a")).code, 0);
  ASSERT_EQ(run("evaluate --config " + at("rp_a") + "/manifest.json --out " + at("rp_b")).code, 0);
  EXPECT_EQ(slurp(at("rp_a") + "/metrics.json"), slurp(at("rp_b") + "/metrics.json"));

  ASSERT_EQ(run("evaluate --config " + at("rp_a") + "/manifest.json --batch-size 2 --out " + at("rp_c")).code, 0);
  EXPECT_EQ(read_json(at("rp_c") + "/metrics.json")["batch_size"], 2);
  EXPECT_EQ(read_json(at("rp_c") + "/manifest.json")["config"]["alpha"], "1.5");

  EXPECT_EQ(run("optimize --config " + at("rp_a") + "/manifest.json --metric sparseness").code, 2);
}

TEST(Cli, OptimizeIsReproducibleAndZeroItersReportsBaseline) {
  const std::string args = "optimize --model " + model_path() + " --metric sparseness --iters 2 --lambda 4 --quiet" +
                           kFastMetrics + "--out ";
  ASSERT_EQ(run(args + at("op_a")).code, 0);
  ASSERT_EQ(run(args + at("op_b") + " --threads 1").code, 0);
  EXPECT_EQ(slurp(at("op_a") + "/history.json"), slurp(at("op_b") + "/history.json"));
  EXPECT_EQ(slurp(at("op_a") + "/best_config.json"), slurp(at("op_b") + "/best_config.json"));

  const auto r = run("optimize --model " + model_path() + " --metric sparseness --iters 0 --theta0 0.3" + kFastMetrics +
                     "--out " + at("op_0"));
  ASSERT_EQ(r.code, 0) << r.output;
  EXPECT_NE(r.output.find("baseline sparseness"), std::string::npos);
  const auto history = read_json(at("op_0") + "/history.json");
  EXPECT_EQ(history["generations"].size(), 1u);

  const Model m = load_model(model_path());
  const auto ds = generate_shapes(1, 28, 0.05, 2002);
  MetricConfig cfg;
  cfg.n_subsets = 20;
  cfg.n_perturbations = 3;
  const EvoLrpObjective objective(m, ds.images, ds.labels, RuleFamily::AlphaBeta, cfg);
  const std::vector<double> theta(objective.dim(), 0.3);
  EXPECT_EQ(history["best_fitness"].get<double>(), objective.fitness(Metric::Sparseness, theta, Evaluation{0, 0}));
  EXPECT_EQ(load_rule_config(at("op_0") + "/best_config.json").rules,
            decode_genome(RuleFamily::AlphaBeta, theta).rules);
}

TEST(Cli, BiObjectiveWritesFrontAndKnee) {
  const auto r = run("optimize --model " + model_path() +
                     " --metric faithfulness --metric2 sparseness --weights 3 --iters 1 --lambda 4 --quiet" +
                     kFastMetrics + "--out " + at("bi"));
  ASSERT_EQ(r.code, 0) << r.output;
  const auto front = read_json(at("bi") + "/front.json");
  EXPECT_EQ(front["objectives"][1], "sparseness");
  EXPECT_EQ(front["runs"].size(), 3u);
  const std::size_t knee = front["knee_index"];
  EXPECT_EQ(load_rule_config(at("bi") + "/best_config.json").rules,
            rule_config_from_json(front["points"][knee]["config"]).rules);
}

TEST(Cli, CompareListsEveryMethod) {
  std::ofstream(at("evo.json")) << rule_config_to_json(decode_genome(RuleFamily::AlphaBeta, std::vector<double>(5, 0.0)))
                                       .dump();
  const auto r = run("compare --model " + model_path() + " --evo-config " + at("evo.json") + kFastMetrics +
                     "--lime-samples 64 --ig-steps 8 --out " + at("cmp"));
  ASSERT_EQ(r.code, 0) << r.output;
  const auto j = read_json(at("cmp") + "/compare.json");
  std::vector<std::string> rows;
  for (const auto& row : j["methods"]) rows.push_back(row["method"]);
  EXPECT_EQ(rows, (std::vector<std::string>{"LIME", "IG", "GradCAM", "LRP-0", "EVO-LRP"}));
  const std::string md = slurp(at("cmp") + "/compare.md");
  for (const auto& row : rows) EXPECT_NE(md.find("| " + row + " |"), std::string::npos) << row;
  EXPECT_EQ(run("compare --model " + model_path() + kFastMetrics).code, 2);
}

TEST(Cli, ExplainAndCompositeWriteHeatmaps) {
  ASSERT_EQ(run("explain --model " + model_path() + " --method ig --index 3 --format png pgm csv --out " + at("ex")).code,
            0);
  for (const char* f : {"heatmap.png", "heatmap.pgm", "heatmap.csv", "input.pgm", "manifest.json"})
    EXPECT_TRUE(fs::exists(at("ex") + "/" + f)) << f;
  EXPECT_EQ(read_json(at("ex") + "/explanation.json")["class"], 3);

  std::ofstream(at("c.json")) << rule_config_to_json(LayerRuleConfig::uniform(5, LrpRule::epsilon(0.1))).dump();
  const auto r = run("composite --model " + model_path() + " --faithfulness-config " + at("c.json") +
                     " --sensitivity-config " + at("c.json") + " --sparseness-config " + at("c.json") +
                     " --multiobject --format csv --out " + at("cp"));
  ASSERT_EQ(r.code, 0) << r.output;
  const auto info = read_json(at("cp") + "/composite.json");
  EXPECT_EQ(info["objects"].size(), 2u);
  EXPECT_TRUE(fs::exists(at("cp") + "/composite.csv"));
  EXPECT_TRUE(fs::exists(at("cp") + "/contrast_sparseness.csv"));
}

TEST(Cli, ExportDataWritesImages) {
  ASSERT_EQ(run("export-data --per-class 2 --out " + at("data")).code, 0);
  const Tensor img = read_pgm(at("data") + "/image_00000.pgm");
  EXPECT_EQ(img.shape(), (Shape{1, 28, 28}));
  EXPECT_TRUE(fs::exists(at("data") + "/labels.csv"));
}

TEST(Cli, ExportMultiObjectScenes) {
  ASSERT_EQ(run("export-data --multiobject --per-class 3 --out " + at("scenes")).code, 0);
  EXPECT_TRUE(fs::exists(at("scenes") + "/image_00002.pgm"));
  EXPECT_FALSE(fs::exists(at("scenes") + "/image_00003.pgm"));
}
