#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "evolrp/evolrp.hpp"

namespace evolrp::testing {

/// Training setup shared by every test that needs the trained shapes model.
struct ShapesSetup {
  std::size_t n_per_class = 500;
  std::size_t image_size = 28;
  double noise_std = 0.05;
  std::uint64_t data_seed = 7;
  TrainConfig train{5, 32, 0.01, 0.9, 7};

  std::string key() const {
    char buf[160];
    std::snprintf(buf, sizeof buf, "shapes_n%zu_s%zu_noise%.3f_d%llu_e%zu_b%zu_lr%.4f_m%.2f_t%llu.evm", n_per_class,
                  image_size, noise_std, static_cast<unsigned long long>(data_seed), train.epochs, train.batch_size,
                  train.learning_rate, train.momentum, static_cast<unsigned long long>(train.seed));
    return buf;
  }
};

inline const Dataset& training_set() {
  static const Dataset ds = [] {
    ShapesSetup s;
    return generate_shapes(s.n_per_class, s.image_size, s.noise_std, s.data_seed);
  }();
  return ds;
}

/// Images never seen in training.
inline const Dataset& heldout_set() {
  static const Dataset ds = generate_shapes(50, 28, 0.05, 1001);
  return ds;
}

/// The trained classifier, cached on disk next to the test binaries.
inline const Model& trained_model() {
  static const Model model = [] {
    ShapesSetup s;
    const std::filesystem::path dir = EVOLRP_TEST_CACHE_DIR;
    const auto path = dir / s.key();
    if (std::filesystem::exists(path)) {
      try {
        return load_model(path);
      } catch (const std::exception&) {
      }
    }
    auto result = train(training_set(), Architecture{}, s.train);
    std::filesystem::create_directories(dir);
    const auto tmp = dir / (s.key() + ".tmp" + std::to_string(std::random_device{}()));
    save_model(result.model, tmp);
    std::filesystem::rename(tmp, path);
    return result.model;
  }();
  return model;
}

/// Bias-free linear classifier on a (1, h, w) input: logit_c = sum_i w_c[i] x[i].
inline Model linear_model(std::size_t h, std::size_t w, const std::vector<std::vector<float>>& class_weights) {
  Model m;
  m.input_shape = {1, h, w};
  for (std::size_t c = 0; c < class_weights.size(); ++c) m.class_names.push_back("c" + std::to_string(c));
  m.layers.push_back(Layer::flatten());
  auto dense = Layer::dense(h * w, class_weights.size(), false);
  for (std::size_t c = 0; c < class_weights.size(); ++c)
    for (std::size_t i = 0; i < h * w; ++i) dense.weight[c * h * w + i] = class_weights[c][i];
  m.layers.push_back(std::move(dense));
  m.validate();
  return m;
}

/// Small random conv net with the full layer zoo; weights ~ N(0, scale^2).
template <typename T = float>
BasicModel<T> random_small_net(std::uint64_t seed, bool bias = true, std::size_t size = 8, std::size_t classes = 3) {
  Architecture arch{3, 4, 4, 6, 3, bias};
  Model m = make_classifier({1, size, size}, std::vector<std::string>(classes, "k"), arch);
  for (std::size_t c = 0; c < classes; ++c) m.class_names[c] = "k" + std::to_string(c);
  init_parameters(m, seed);
  Rng rng = make_rng(seed, "test.bias");
  std::normal_distribution<double> nd(0.0, 0.1);
  for (auto& l : m.layers)
    if (l.bias)
      for (auto& b : l.bias->values()) b = static_cast<float>(nd(rng));
  return model_cast<T>(m);
}

inline Tensor random_image(std::uint64_t seed, const Shape& shape, double lo = 0.0, double hi = 1.0) {
  Rng rng = make_rng(seed, "test.image");
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor t(shape);
  for (auto& v : t.values()) v = static_cast<float>(u(rng));
  return t;
}

}  // namespace evolrp::testing

namespace evolrp::testing {

/// ReLU on/off bits and max-pool winners along a trace; finite differences
/// are only meaningful where this pattern does not change.
template <typename T>
std::vector<std::size_t> activation_pattern(const BasicModel<T>& model, const BasicActivationTrace<T>& trace) {
  std::vector<std::size_t> pattern;
  for (std::size_t li = 0; li < model.layers.size(); ++li) {
    const auto& in = trace.inputs[li];
    if (model.layers[li].kind == LayerKind::ReLU) {
      for (auto v : in.values()) pattern.push_back(v > T{0} ? 1 : 0);
    } else if (model.layers[li].kind == LayerKind::MaxPool2x2) {
      const auto& out = trace.outputs[li];
      for (std::size_t c = 0; c < out.dim(0); ++c)
        for (std::size_t y = 0; y < out.dim(1); ++y)
          for (std::size_t x = 0; x < out.dim(2); ++x)
            pattern.push_back(kernels::maxpool_argmax(in.values(), in.dim(1), in.dim(2), c, y, x));
    }
  }
  return pattern;
}

struct GradientCheck {
  std::size_t checked = 0;
  std::size_t skipped = 0;
  double max_relative_error = 0.0;
};

/// Compares backward() against central differences of <g, logits> on
/// `coordinates` random input/parameter entries of a float64 model.
inline GradientCheck gradient_check(const BasicModel<double>& model, const BasicTensor<double>& input,
                                    std::uint64_t seed, std::size_t coordinates, double step = 1e-3) {
  Rng rng = make_rng(seed, "test.gradcheck");
  std::normal_distribution<double> nd(0.0, 1.0);
  const auto trace = forward(model, input);
  BasicTensor<double> g(trace.logits().shape());
  for (auto& v : g.values()) v = nd(rng);
  const auto grads = backward(model, trace, g, true);
  const auto base_pattern = activation_pattern(model, trace);

  auto objective = [&](const BasicModel<double>& m, const BasicTensor<double>& x, bool& same_pattern) {
    const auto t = forward(m, x);
    same_pattern = activation_pattern(m, t) == base_pattern;
    double s = 0.0;
    for (std::size_t i = 0; i < g.size(); ++i) s += g[i] * t.logits()[i];
    return s;
  };

  std::vector<std::pair<std::size_t, std::size_t>> slots;  // (layer + 1 or 0 for input, flat index); bias as layer | high bit
  const std::size_t kBias = std::size_t{1} << 40;
  for (std::size_t i = 0; i < input.size(); ++i) slots.emplace_back(0, i);
  for (std::size_t li = 0; li < model.layers.size(); ++li) {
    const auto& l = model.layers[li];
    if (!l.trainable()) continue;
    for (std::size_t i = 0; i < l.weight.size(); ++i) slots.emplace_back(li + 1, i);
    if (l.bias)
      for (std::size_t i = 0; i < l.bias->size(); ++i) slots.emplace_back((li + 1) | kBias, i);
  }

  GradientCheck result;
  std::uniform_int_distribution<std::size_t> pick(0, slots.size() - 1);
  for (std::size_t attempts = 0; result.checked < coordinates && attempts < coordinates * 50; ++attempts) {
    const auto [where, idx] = slots[pick(rng)];
    BasicModel<double> mp = model, mm = model;
    BasicTensor<double> xp = input, xm = input;
    double analytic;
    if (where == 0) {
      xp[idx] += step;
      xm[idx] -= step;
      analytic = grads.input_grad[idx];
    } else {
      const bool bias = (where & kBias) != 0;
      const std::size_t li = (where & ~kBias) - 1;
      auto& tp = bias ? *mp.layers[li].bias : mp.layers[li].weight;
      auto& tm = bias ? *mm.layers[li].bias : mm.layers[li].weight;
      tp[idx] += step;
      tm[idx] -= step;
      analytic = bias ? (*grads.params[li].bias)[idx] : grads.params[li].weight[idx];
    }
    bool same_p = false, same_m = false;
    const double numeric = (objective(mp, xp, same_p) - objective(mm, xm, same_m)) / (2.0 * step);
    if (!same_p || !same_m) {
      ++result.skipped;
      continue;
    }
    const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
    result.max_relative_error = std::max(result.max_relative_error, std::abs(analytic - numeric) / denom);
    ++result.checked;
  }
  return result;
}

}  // namespace evolrp::testing
