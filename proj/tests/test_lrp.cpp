#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "support.hpp"

using namespace evolrp;
using namespace evolrp::testing;

namespace {

Layer dense_layer(std::size_t in, std::size_t out, std::vector<float> w, std::optional<std::vector<float>> b = {}) {
  auto l = Layer::dense(in, out, b.has_value());
  l.weight = Tensor({out, in}, std::move(w));
  if (b) l.bias = Tensor({out}, std::move(*b));
  return l;
}

// Per-connection summation of the rule formulas; contributions x_jk = a_j w_jk.
std::vector<double> summation_oracle(const std::vector<std::vector<double>>& contrib,  // [k][j]
                                     const std::vector<double>& bias, const std::vector<double>& r_out,
                                     const LrpRule& rule) {
  const std::size_t n_out = contrib.size(), n_in = contrib.front().size();
  std::vector<double> r_in(n_in, 0.0);
  for (std::size_t k = 0; k < n_out; ++k) {
    if (rule.kind() == RuleKind::AlphaBeta) {
      double zp = std::max(0.0, bias[k]), zn = std::min(0.0, bias[k]);
      for (double x : contrib[k]) {
        zp += std::max(0.0, x);
        zn += std::min(0.0, x);
      }
      for (std::size_t j = 0; j < n_in; ++j) {
        const double x = contrib[k][j];
        if (x > 0 && zp > 0) r_in[j] += rule.alpha() * x / zp * r_out[k];
        if (x < 0 && zn < 0) r_in[j] -= rule.beta() * x / zn * r_out[k];
      }
    } else {
      double z = bias[k];
      for (double x : contrib[k]) z += x;
      const double eps = rule.epsilon();
      const double denom = z + eps * (z >= 0 ? 1.0 : -1.0);
      for (std::size_t j = 0; j < n_in; ++j) r_in[j] += contrib[k][j] / denom * r_out[k];
    }
  }
  return r_in;
}

std::vector<LrpRule> rule_zoo() {
  return {LrpRule::zero(), LrpRule::epsilon(0.01), LrpRule::epsilon(0.5), LrpRule::alpha_beta(1.0),
          LrpRule::alpha_beta(2.0), LrpRule::alpha_beta(1.7)};
}

}  // namespace

TEST(LrpRuleFormulas, ZeroRuleHandExample) {
  const auto l = dense_layer(2, 1, {1, 1});
  const auto r = lrp_linear_step(l, Tensor({2}, {1, 2}), Tensor({1}, {3}), LrpRule::zero());
  EXPECT_NEAR(r[0], 1.0, 1e-9);
  EXPECT_NEAR(r[1], 2.0, 1e-9);
}

TEST(LrpRuleFormulas, EpsilonHandExample) {
  const auto l = dense_layer(2, 1, {1, 1});
  const auto r = lrp_linear_step(l, Tensor({2}, {1, 2}), Tensor({1}, {3}), LrpRule::epsilon(0.5));
  EXPECT_NEAR(r[0], 6.0 / 7.0, 1e-7);
  EXPECT_NEAR(r[1], 12.0 / 7.0, 1e-7);
  EXPECT_LT(r.sum(), 3.0);
}

TEST(LrpRuleFormulas, AlphaOneHandExample) {
  const auto l = dense_layer(2, 1, {2, -1});
  const auto r = lrp_linear_step(l, Tensor({2}, {1, 1}), Tensor({1}, {1}), LrpRule::alpha_beta(1.0));
  EXPECT_NEAR(r[0], 1.0, 1e-9);
  EXPECT_NEAR(r[1], 0.0, 1e-9);
}

TEST(LrpRuleFormulas, DoublePrecisionHandExamples) {
  const auto r0 = lrp_linear_relevance(dense_layer(2, 1, {1, 1}), Tensor({2}, {1, 2}), Tensor({1}, {3}), LrpRule::zero());
  EXPECT_NEAR(r0[0], 1.0, 1e-9);
  EXPECT_NEAR(r0[1], 2.0, 1e-9);
  const auto re =
      lrp_linear_relevance(dense_layer(2, 1, {1, 1}), Tensor({2}, {1, 2}), Tensor({1}, {3}), LrpRule::epsilon(0.5));
  EXPECT_NEAR(re[0], 6.0 / 7.0, 1e-9);
  EXPECT_NEAR(re[1], 12.0 / 7.0, 1e-9);
  const auto ra =
      lrp_linear_relevance(dense_layer(2, 1, {2, -1}), Tensor({2}, {1, 1}), Tensor({1}, {1}), LrpRule::alpha_beta(1.0));
  EXPECT_NEAR(ra[0], 1.0, 1e-9);
  EXPECT_NEAR(ra[1], 0.0, 1e-9);
}

TEST(LrpRuleFormulas, RuleValidation) {
  EXPECT_THROW(LrpRule::epsilon(0.0), std::invalid_argument);
  EXPECT_THROW(LrpRule::epsilon(-1.0), std::invalid_argument);
  EXPECT_THROW(LrpRule::epsilon(1.5), std::invalid_argument);
  EXPECT_THROW(LrpRule::alpha_beta(0.99), std::invalid_argument);
  EXPECT_NO_THROW(LrpRule::epsilon(1.0));
  EXPECT_DOUBLE_EQ(LrpRule::alpha_beta(2.5).beta(), 1.5);
}

TEST(LrpLinearStep, DenseMatchesSummationForm) {
  Rng rng = make_rng(21, "dense-oracle");
  std::normal_distribution<double> nd(0, 1);
  for (int trial = 0; trial < 40; ++trial) {
    const std::size_t n_in = 3 + trial % 7, n_out = 2 + trial % 5;
    std::vector<float> w(n_in * n_out), b(n_out), a(n_in), r(n_out);
    for (auto& v : w) v = static_cast<float>(nd(rng));
    for (auto& v : b) v = static_cast<float>(0.3 * nd(rng));
    for (auto& v : a) v = static_cast<float>(trial % 2 ? std::abs(nd(rng)) : nd(rng));  // odd trials: ReLU-like inputs
    for (auto& v : r) v = static_cast<float>(nd(rng));
    const auto layer = dense_layer(n_in, n_out, w, b);
    std::vector<std::vector<double>> contrib(n_out, std::vector<double>(n_in));
    for (std::size_t k = 0; k < n_out; ++k)
      for (std::size_t j = 0; j < n_in; ++j) contrib[k][j] = static_cast<double>(a[j]) * w[k * n_in + j];
    const std::vector<double> bias(b.begin(), b.end()), r_out(r.begin(), r.end());
    for (const auto& rule : rule_zoo()) {
      if (rule.kind() == RuleKind::Zero) {
        bool near_zero = false;  // skip ill-conditioned LRP-0 draws
        for (std::size_t k = 0; k < n_out; ++k) {
          double z = bias[k];
          for (double x : contrib[k]) z += x;
          near_zero = near_zero || std::abs(z) < 1e-2;
        }
        if (near_zero) continue;
      }
      const auto got = lrp_linear_step(layer, Tensor({n_in}, a), Tensor({n_out}, r), rule);
      const auto want = summation_oracle(contrib, bias, r_out, rule);
      for (std::size_t j = 0; j < n_in; ++j) {
        const double scale = std::max(1e-3, std::abs(want[j]));
        EXPECT_LT(std::abs(got[j] - want[j]) / scale, 1e-6) << rule.describe() << " trial " << trial;
      }
    }
  }
}

TEST(LrpLinearStep, ConvMatchesSummationForm) {
  Rng rng = make_rng(22, "conv-oracle");
  std::normal_distribution<double> nd(0, 1);
  for (std::size_t stride : {1u, 2u}) {
    auto conv = Layer::conv2d(2, 3, 3, stride, true);
    for (auto& v : conv.weight.values()) v = static_cast<float>(nd(rng));
    for (auto& v : conv.bias->values()) v = static_cast<float>(0.2 * nd(rng));
    const auto a = random_image(stride, {2, 5, 6});
    const auto z = apply_layer(conv, a, 0);
    Tensor r(z.shape());
    for (auto& v : r.values()) v = static_cast<float>(nd(rng));

    // enumerate every (output unit, input element) connection explicitly
    const long h = 5, w = 6, oh = static_cast<long>(z.dim(1)), ow = static_cast<long>(z.dim(2));
    std::vector<std::vector<double>> contrib(z.size(), std::vector<double>(a.size(), 0.0));
    std::vector<double> bias(z.size());
    for (long o = 0; o < 3; ++o)
      for (long y = 0; y < oh; ++y)
        for (long x = 0; x < ow; ++x) {
          const auto k = static_cast<std::size_t>((o * oh + y) * ow + x);
          bias[k] = (*conv.bias)[static_cast<std::size_t>(o)];
          for (long c = 0; c < 2; ++c)
            for (long ky = 0; ky < 3; ++ky)
              for (long kx = 0; kx < 3; ++kx) {
                const long iy = y * static_cast<long>(stride) + ky - 1, ix = x * static_cast<long>(stride) + kx - 1;
                if (iy < 0 || ix < 0 || iy >= h || ix >= w) continue;
                const auto j = static_cast<std::size_t>((c * h + iy) * w + ix);
                contrib[k][j] = static_cast<double>(a[j]) * conv.weight[static_cast<std::size_t>(((o * 2 + c) * 3 + ky) * 3 + kx)];
              }
        }
    const std::vector<double> r_out(r.values().begin(), r.values().end());
    for (const auto& rule : {LrpRule::epsilon(0.1), LrpRule::alpha_beta(1.0), LrpRule::alpha_beta(2.0)}) {
      const auto got = lrp_linear_step(conv, a, r, rule);
      const auto want = summation_oracle(contrib, bias, r_out, rule);
      for (std::size_t j = 0; j < a.size(); ++j)
        EXPECT_LT(std::abs(got[j] - want[j]) / std::max(1e-3, std::abs(want[j])), 1e-6) << rule.describe();
    }
  }
}

TEST(LrpLinearStep, AlphaBetaZeroDenominatorPassesNothing) {
  const auto l = dense_layer(2, 1, {-1, -1});
  const auto r = lrp_linear_step(l, Tensor({2}, {1, 1}), Tensor({1}, {1}), LrpRule::alpha_beta(1.0));
  EXPECT_EQ(r[0], 0.0f);
  EXPECT_EQ(r[1], 0.0f);
}

TEST(LrpLinearStep, ShapeMismatchThrows) {
  const auto l = dense_layer(2, 1, {1, 1});
  EXPECT_THROW(lrp_linear_step(l, Tensor({2}, {1, 2}), Tensor({2}), LrpRule::zero()), ShapeError);
  EXPECT_THROW(lrp_linear_step(l, Tensor({3}), Tensor({1}), LrpRule::zero()), ShapeError);
}

TEST(LrpNonParam, MaxPoolWinnerTakesAll) {
  const Tensor a({1, 2, 2}, {1, 3, 2, 0});
  const auto r = lrp_nonparam_step(Layer::maxpool(), a, Tensor({1, 1, 1}, {5}));
  EXPECT_EQ(r, Tensor({1, 2, 2}, {0, 5, 0, 0}));
}

TEST(LrpNonParam, ReluAndFlattenConserve) {
  const auto a = random_image(3, {2, 3, 4}, -1, 1);
  const auto r = random_image(4, {2, 3, 4}, -1, 1);
  EXPECT_EQ(lrp_nonparam_step(Layer::relu(), a, r).sum(), r.sum());
  const auto flat = r.reshaped({24});
  const auto back = lrp_nonparam_step(Layer::flatten(), a, flat);
  EXPECT_EQ(back, r);
  EXPECT_EQ(back.sum(), flat.sum());
}

TEST(ExplainLrp, LinearModelIdentity) {
  const std::vector<float> w{0.5f, -1.0f, 2.0f, 0.25f, 1.5f, -0.75f};
  const auto m = linear_model(2, 3, {w, std::vector<float>(6, 1.0f)});
  const auto x = random_image(8, {1, 2, 3});
  const auto map = explain_lrp(m, x, 0, LayerRuleConfig::uniform(1, LrpRule::zero()));
  EXPECT_EQ(map.values.shape(), (Shape{2, 3}));
  for (std::size_t i = 0; i < w.size(); ++i) EXPECT_NEAR(map.values[i], w[i] * x[i], 1e-6);
  EXPECT_NEAR(map.values.sum(), predict_logits(m, x)[0], 1e-5);
}

TEST(ExplainLrp, ZeroInputBiasFreeGivesZeroMap) {
  const auto m = without_biases(random_small_net(4));
  for (const auto& rule : rule_zoo()) {
    const auto map = explain_lrp(m, Tensor(m.input_shape), 1, LayerRuleConfig::uniform(5, rule));
    for (float v : map.values.values()) EXPECT_EQ(v, 0.0f);
  }
}

TEST(ExplainLrp, TinyEpsilonApproachesZeroRule) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto m = random_small_net(200 + seed);
    const auto x = random_image(seed, m.input_shape);
    const auto r0 = explain_lrp(m, x, 0, LayerRuleConfig::uniform(5, LrpRule::zero())).values;
    const auto re = explain_lrp(m, x, 0, LayerRuleConfig::uniform(5, LrpRule::epsilon(1e-6))).values;
    EXPECT_LT((r0 - re).l2_norm() / r0.l2_norm(), 1e-3) << "seed " << seed;
  }
}

TEST(ExplainLrp, ConfigLengthAndTargetChecked) {
  const auto m = random_small_net(1);
  const auto x = random_image(1, m.input_shape);
  EXPECT_THROW(explain_lrp(m, x, 0, LayerRuleConfig::uniform(4, LrpRule::zero())), std::invalid_argument);
  EXPECT_THROW(explain_lrp(m, x, 3, LayerRuleConfig::uniform(5, LrpRule::zero())), std::invalid_argument);
}

TEST(ExplainLrp, NonFiniteRelevanceNamesLayer) {
  auto m = random_small_net(1);
  m.layers[9].weight[0] = std::numeric_limits<float>::infinity();
  try {
    explain_lrp(m, random_image(1, m.input_shape), 0, LayerRuleConfig::uniform(5, LrpRule::epsilon(0.1)));
    FAIL();
  } catch (const std::runtime_error& e) {
    EXPECT_NE(std::string(e.what()).find("layer "), std::string::npos) << e.what();
  }
}

TEST(ExplainLrp, AlphaOneHasNoNegativeRelevance) {
  const auto& m = trained_model();
  for (std::size_t i = 0; i < 10; ++i) {
    const auto& x = heldout_set().images[i];
    const auto logits = predict_logits(m, x);
    const auto target = argmax(logits);
    ASSERT_GT(logits[target], 0.0f);
    const auto map = explain_lrp(m, x, target, LayerRuleConfig::uniform(5, LrpRule::alpha_beta(1.0))).values;
    for (float v : map.values()) EXPECT_GE(v, 0.0f);
  }
}

TEST(ExplainLrp, EpsilonShrinksTotalAbsoluteRelevance) {
  const auto& m = trained_model();
  for (std::size_t i = 0; i < 8; ++i) {
    const auto& x = heldout_set().images[i];
    double previous = std::numeric_limits<double>::infinity();
    for (double eps : {1e-4, 1e-3, 1e-2, 0.05, 0.1, 0.25, 0.5, 1.0}) {
      const auto map = explain_lrp(m, x, heldout_set().labels[i], LayerRuleConfig::uniform(5, LrpRule::epsilon(eps)));
      double total = 0.0;
      for (float v : map.values.values()) total += std::abs(v);
      EXPECT_LE(total, previous * (1.0 + 1e-6)) << "eps " << eps << " image " << i;
      previous = total;
    }
  }
}

TEST(Conservation, ZeroRuleOnBiasFreeTrainedModel) {
  const auto m = without_biases(trained_model());
  for (std::size_t i = 0; i < 20; ++i) {
    const auto& x = heldout_set().images[i];
    const auto rep = conservation_report(m, x, argmax(predict_logits(m, x)), LayerRuleConfig::uniform(5, LrpRule::zero()));
    EXPECT_LT(rep.max_relative_deviation(), 1e-5) << "image " << i;
    for (const auto& l : rep.layers) EXPECT_FALSE(l.absorbs_bias);
  }
}

TEST(Conservation, ZeroRuleOnRandomBiasFreeNets) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto m = without_biases(random_small_net(300 + seed));
    const auto x = random_image(seed, m.input_shape);
    const auto target = argmax(predict_logits(m, x));
    const auto rep = conservation_report(m, x, target, LayerRuleConfig::uniform(5, LrpRule::zero()));
    if (std::abs(rep.target_logit) < 1e-3) continue;
    EXPECT_LT(rep.max_relative_deviation(), 1e-5) << "seed " << seed;
  }
}

TEST(Conservation, EpsilonLayerAbsorbsRelevance) {
  // Per layer, sum R_in = sum_k R_k z_k / (z_k + eps sign z_k): every output's share
  // shrinks toward zero, so the sum cannot grow where all R_k >= 0, and
  // |sum R_in| <= sum |R_k| always.
  std::size_t nonnegative_layers = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto m = without_biases(random_small_net(400 + seed));
    const auto x = random_image(seed, m.input_shape);
    const auto target = argmax(predict_logits(m, x));
    const auto trace = forward(m, x);
    const auto pass = lrp_backward_pass(m, trace, target, LayerRuleConfig::uniform(5, LrpRule::epsilon(0.5)));
    for (std::size_t li = 0; li < m.layers.size(); ++li) {
      if (!m.layers[li].trainable()) continue;
      const Tensor& r_out = li + 1 < m.layers.size() ? pass.layer_inputs[li + 1] : pass.output;
      const double in_sum = pass.layer_inputs[li].sum();
      double abs_out = 0.0;
      bool nonnegative = true;
      for (float v : r_out.values()) {
        abs_out += std::abs(v);
        nonnegative = nonnegative && v >= 0.0f;
      }
      EXPECT_LE(std::abs(in_sum), abs_out * (1 + 1e-6) + 1e-12) << "seed " << seed << " layer " << li;
      if (nonnegative) {
        ++nonnegative_layers;
        EXPECT_LE(in_sum, r_out.sum() * (1 + 1e-6) + 1e-12) << "seed " << seed << " layer " << li;
      }
    }
  }
  EXPECT_GE(nonnegative_layers, 20u);  // at least the top layer of every net
}

TEST(Conservation, BiasAbsorptionFlagged) {
  const auto& m = trained_model();
  const auto rep = conservation_report(m, heldout_set().images[0], 0, LayerRuleConfig::uniform(5, LrpRule::zero()));
  std::size_t flagged = 0;
  for (const auto& l : rep.layers) flagged += l.absorbs_bias;
  EXPECT_GT(flagged, 0u);
  for (const auto& l : rep.layers)
    if (l.absorbs_bias) EXPECT_TRUE(l.kind == LayerKind::Conv2d || l.kind == LayerKind::Dense);
}
