#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "evolrp/lrp.hpp"
#include "evolrp/metrics.hpp"
#include "evolrp/network.hpp"
#include "evolrp/rng.hpp"

namespace evolrp {

// ---------------------------------------------------------- integrated gradients

/// Per-element attribution (same shape as the input), midpoint rule.
inline Tensor integrated_gradients_full(const Model& model, const Tensor& input, std::size_t target,
                                        const Tensor& baseline, std::size_t steps) {
  if (steps == 0) throw std::invalid_argument("integrated gradients needs at least one step");
  if (baseline.shape() != input.shape())
    throw ShapeError("baseline shape " + shape_to_string(baseline.shape()) + " does not match input " +
                     shape_to_string(input.shape()));
  if (target >= model.num_classes()) throw std::invalid_argument("target class out of range");
  std::vector<double> avg(input.size(), 0.0);
  Tensor point(input.shape());
  for (std::size_t t = 1; t <= steps; ++t) {
    const double frac = (static_cast<double>(t) - 0.5) / static_cast<double>(steps);
    for (std::size_t i = 0; i < input.size(); ++i)
      point[i] = static_cast<float>(baseline[i] + frac * (static_cast<double>(input[i]) - baseline[i]));
    const Tensor g = logit_input_gradient(model, point, target);
    for (std::size_t i = 0; i < g.size(); ++i) avg[i] += g[i];
  }
  Tensor out(input.shape());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = static_cast<float>((static_cast<double>(input[i]) - baseline[i]) * avg[i] / static_cast<double>(steps));
  return out;
}

inline RelevanceMap integrated_gradients(const Model& model, const Tensor& input, std::size_t target,
                                         const Tensor& baseline, std::size_t steps = 64) {
  return {sum_over_channels(integrated_gradients_full(model, input, target, baseline, steps)), target, "ig", {}};
}

inline RelevanceMap integrated_gradients(const Model& model, const Tensor& input, std::size_t target,
                                         std::size_t steps = 64) {
  return integrated_gradients(model, input, target, Tensor(input.shape()), steps);
}

// ---------------------------------------------------------------------- GradCAM

inline std::optional<std::size_t> last_conv_index(const Model& model) {
  for (std::size_t i = model.layers.size(); i-- > 0;)
    if (model.layers[i].kind == LayerKind::Conv2d) return i;
  return std::nullopt;
}

/// Bilinear resize of an (h, w) grid with pixel-center alignment
/// (source coordinate (dst + 0.5) * in / out - 0.5, clamped to the edges).
inline Tensor bilinear_resize(const Tensor& src, std::size_t out_h, std::size_t out_w) {
  const std::size_t in_h = src.dim(0), in_w = src.dim(1);
  Tensor out({out_h, out_w});
  auto coord = [](std::size_t dst, std::size_t in, std::size_t out_n, std::size_t& i0, std::size_t& i1, double& f) {
    double s = (static_cast<double>(dst) + 0.5) * static_cast<double>(in) / static_cast<double>(out_n) - 0.5;
    s = std::clamp(s, 0.0, static_cast<double>(in - 1));
    i0 = static_cast<std::size_t>(std::floor(s));
    i1 = std::min(i0 + 1, in - 1);
    f = s - static_cast<double>(i0);
  };
  for (std::size_t y = 0; y < out_h; ++y) {
    std::size_t y0, y1;
    double fy;
    coord(y, in_h, out_h, y0, y1, fy);
    for (std::size_t x = 0; x < out_w; ++x) {
      std::size_t x0, x1;
      double fx;
      coord(x, in_w, out_w, x0, x1, fx);
      const double top = (1.0 - fx) * src.at(y0, x0) + fx * src.at(y0, x1);
      const double bottom = (1.0 - fx) * src.at(y1, x0) + fx * src.at(y1, x1);
      out.at(y, x) = static_cast<float>((1.0 - fy) * top + fy * bottom);
    }
  }
  return out;
}

/// Class activation map from the output of the last Conv2d layer (before its
/// activation), channel-weighted by the spatially averaged gradient.
inline RelevanceMap gradcam(const Model& model, const Tensor& input, std::size_t target) {
  const auto conv = last_conv_index(model);
  if (!conv) throw std::invalid_argument("GradCAM needs a model with at least one conv2d layer");
  if (target >= model.num_classes()) throw std::invalid_argument("target class out of range");
  const auto trace = forward(model, input);
  Tensor seed(trace.logits().shape());
  seed[target] = 1.0f;
  const auto grads = backward(model, trace, seed, false);
  const Tensor& a = trace.outputs[*conv];
  const Tensor& da = grads.output_grads[*conv];
  const std::size_t channels = a.dim(0), h = a.dim(1), w = a.dim(2), plane = h * w;

  std::vector<double> cam(plane, 0.0);
  for (std::size_t k = 0; k < channels; ++k) {
    double weight = 0.0;
    for (std::size_t i = 0; i < plane; ++i) weight += da[k * plane + i];
    weight /= static_cast<double>(plane);
    if (weight == 0.0) continue;
    for (std::size_t i = 0; i < plane; ++i) cam[i] += weight * a[k * plane + i];
  }
  Tensor coarse({h, w});
  for (std::size_t i = 0; i < plane; ++i) coarse[i] = static_cast<float>(std::max(0.0, cam[i]));
  const std::size_t in_h = input.dim(input.rank() - 2), in_w = input.dim(input.rank() - 1);
  return {bilinear_resize(coarse, in_h, in_w), target, "gradcam", {}};
}

// ------------------------------------------------------------------ patch grids

/// Square patches tiling an (height, width) image, numbered row-major.
struct PatchGrid {
  std::size_t height = 0, width = 0, patch_size = 4;

  PatchGrid(std::size_t h, std::size_t w, std::size_t patch) : height(h), width(w), patch_size(patch) {
    if (patch == 0 || h % patch != 0 || w % patch != 0)
      throw std::invalid_argument("patch size " + std::to_string(patch) + " does not tile a " + std::to_string(h) +
                                  "x" + std::to_string(w) + " image");
  }
  static PatchGrid for_input(const Tensor& input, std::size_t patch) {
    return PatchGrid(input.dim(input.rank() - 2), input.dim(input.rank() - 1), patch);
  }

  std::size_t rows() const noexcept { return height / patch_size; }
  std::size_t cols() const noexcept { return width / patch_size; }
  std::size_t count() const noexcept { return rows() * cols(); }
  std::size_t patch_of(std::size_t r, std::size_t c) const noexcept {
    return (r / patch_size) * cols() + c / patch_size;
  }

  /// Copy of `input` with every pixel of the patches where mask is 0 set to `fill`.
  Tensor apply(const Tensor& input, const std::vector<std::uint8_t>& keep, float fill = 0.0f) const {
    Tensor x = input;
    const std::size_t plane = height * width, channels = input.size() / plane;
    for (std::size_t r = 0; r < height; ++r)
      for (std::size_t c = 0; c < width; ++c)
        if (!keep[patch_of(r, c)])
          for (std::size_t ch = 0; ch < channels; ++ch) x[ch * plane + r * width + c] = fill;
    return x;
  }

  /// Per-patch values spread over their pixels as an (H, W) map.
  Tensor broadcast(const std::vector<double>& per_patch) const {
    Tensor map({height, width});
    for (std::size_t r = 0; r < height; ++r)
      for (std::size_t c = 0; c < width; ++c) map.at(r, c) = static_cast<float>(per_patch[patch_of(r, c)]);
    return map;
  }
};

// -------------------------------------------------------------------- occlusion

inline std::vector<double> occlusion_drops(const ScoreFn& score, const Tensor& input, const PatchGrid& grid) {
  const double full = score(input);
  std::vector<double> drops(grid.count());
  std::vector<std::uint8_t> keep(grid.count(), 1);
  for (std::size_t p = 0; p < grid.count(); ++p) {
    keep[p] = 0;
    drops[p] = full - score(grid.apply(input, keep));
    keep[p] = 1;
  }
  return drops;
}

inline RelevanceMap occlusion_map(const Model& model, const Tensor& input, std::size_t target, const PatchGrid& grid) {
  if (target >= model.num_classes()) throw std::invalid_argument("target class out of range");
  return {grid.broadcast(occlusion_drops(target_logit_fn(model, target), input, grid)), target, "occlusion", {}};
}

// ------------------------------------------------------------------------- LIME

struct LimeConfig {
  std::size_t patch_size = 4;
  std::size_t n_samples = 256;
  double kernel_width = 0.0;  // 0 selects half the patch count
  double ridge_lambda = 1.0;
  std::uint64_t seed = 0;
};

struct LimeFit {
  std::vector<double> coefficients;  // one per patch
  double intercept = 0.0;
  double ridge_lambda = 0.0;  // value actually used
};

/// Weighted ridge regression with an unpenalized intercept.
inline LimeFit fit_weighted_ridge(const std::vector<std::vector<std::uint8_t>>& masks, const std::vector<double>& y,
                                  const std::vector<double>& weights, double lambda) {
  const auto n = static_cast<Eigen::Index>(masks.size());
  const auto p = static_cast<Eigen::Index>(masks.front().size());
  Eigen::MatrixXd x(n, p + 1);
  for (Eigen::Index i = 0; i < n; ++i) {
    x(i, 0) = 1.0;
    for (Eigen::Index j = 0; j < p; ++j) x(i, j + 1) = masks[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
  }
  const Eigen::VectorXd w = Eigen::Map<const Eigen::VectorXd>(weights.data(), n);
  const Eigen::VectorXd yv = Eigen::Map<const Eigen::VectorXd>(y.data(), n);
  const Eigen::MatrixXd xtw = x.transpose() * w.asDiagonal();
  const Eigen::MatrixXd gram = xtw * x;
  const Eigen::VectorXd rhs = xtw * yv;

  for (int attempt = 0; attempt < 2; ++attempt) {
    Eigen::MatrixXd a = gram;
    a.diagonal().tail(p).array() += lambda;
    Eigen::LDLT<Eigen::MatrixXd> solver(a);
    const double scale = std::max(1.0, a.diagonal().cwiseAbs().maxCoeff());
    const Eigen::VectorXd d = solver.vectorD();
    const bool ok = solver.info() == Eigen::Success && d.minCoeff() > 1e-12 * scale;
    if (ok) {
      const Eigen::VectorXd beta = solver.solve(rhs);
      if (beta.allFinite()) {
        LimeFit fit;
        fit.intercept = beta[0];
        fit.coefficients.assign(beta.data() + 1, beta.data() + beta.size());
        fit.ridge_lambda = lambda;
        return fit;
      }
    }
    lambda = lambda > 0.0 ? lambda * 10.0 : 1e-6 * scale;
  }
  throw std::runtime_error("LIME regression system is singular even after increasing the ridge penalty");
}

/// Surrogate coefficients for patch presence. Sample 0 is the unmasked input;
/// the rest switch each patch on with probability 1/2. Kernel weights are
/// exp(-d^2 / kernel_width^2) where d counts masked patches.
inline LimeFit lime_fit(const ScoreFn& score, const Tensor& input, const PatchGrid& grid, const LimeConfig& cfg) {
  const std::size_t p = grid.count();
  if (cfg.n_samples < p)
    throw std::invalid_argument("LIME needs n_samples >= number of patches (" + std::to_string(p) + ")");
  if (cfg.ridge_lambda < 0.0) throw std::invalid_argument("ridge_lambda must be non-negative");
  const double width = cfg.kernel_width > 0.0 ? cfg.kernel_width : 0.5 * static_cast<double>(p);

  Rng rng = make_rng(cfg.seed, "lime.masks");
  std::bernoulli_distribution coin(0.5);
  std::vector<std::vector<std::uint8_t>> masks(cfg.n_samples, std::vector<std::uint8_t>(p, 1));
  for (std::size_t s = 1; s < cfg.n_samples; ++s)
    for (auto& m : masks[s]) m = coin(rng) ? 1 : 0;

  std::vector<double> y(cfg.n_samples), weights(cfg.n_samples);
  for (std::size_t s = 0; s < cfg.n_samples; ++s) {
    y[s] = score(grid.apply(input, masks[s]));
    const double d = static_cast<double>(std::count(masks[s].begin(), masks[s].end(), 0));
    weights[s] = std::exp(-(d * d) / (width * width));
  }
  return fit_weighted_ridge(masks, y, weights, cfg.ridge_lambda);
}

inline RelevanceMap lime_lite(const Model& model, const Tensor& input, std::size_t target, const LimeConfig& cfg) {
  if (target >= model.num_classes()) throw std::invalid_argument("target class out of range");
  const auto grid = PatchGrid::for_input(input, cfg.patch_size);
  const auto fit = lime_fit(target_logit_fn(model, target), input, grid, cfg);
  return {grid.broadcast(fit.coefficients), target, "lime", {}};
}

}  // namespace evolrp
