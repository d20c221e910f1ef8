#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <numeric>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "evolrp/dataset.hpp"
#include "evolrp/network.hpp"
#include "evolrp/rng.hpp"

namespace evolrp {

struct TrainConfig {
  std::size_t epochs = 10;
  std::size_t batch_size = 32;
  double learning_rate = 0.01;
  double momentum = 0.9;
  std::uint64_t seed = 7;
};

struct EpochStats {
  std::size_t epoch = 0;
  double loss = 0.0;      // mean cross-entropy over the epoch
  double accuracy = 0.0;  // fraction of correct predictions seen during the epoch
};

struct TrainResult {
  Model model;
  std::vector<EpochStats> history;
};

/// He-normal weights, zero biases. Layer i draws from its own substream.
inline void init_parameters(Model& model, std::uint64_t seed) {
  for (std::size_t i = 0; i < model.layers.size(); ++i) {
    auto& layer = model.layers[i];
    if (!layer.trainable()) continue;
    Rng rng = make_rng(seed, "init", i);
    const std::size_t fan_in = layer.weight.size() / layer.weight.dim(0);
    std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / static_cast<double>(fan_in)));
    for (auto& w : layer.weight.values()) w = static_cast<float>(dist(rng));
    if (layer.bias) std::fill(layer.bias->values().begin(), layer.bias->values().end(), 0.0f);
  }
}

/// Softmax cross-entropy of `logits` against `label`; writes d loss / d logits.
inline double softmax_cross_entropy(const Tensor& logits, std::size_t label, Tensor& grad) {
  const double top = *std::max_element(logits.values().begin(), logits.values().end());
  std::vector<double> p(logits.size());
  double z = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) z += p[i] = std::exp(static_cast<double>(logits[i]) - top);
  grad = Tensor(logits.shape());
  for (std::size_t i = 0; i < p.size(); ++i) {
    p[i] /= z;
    grad[i] = static_cast<float>(p[i] - (i == label ? 1.0 : 0.0));
  }
  return -std::log(std::max(p[label], 1e-300));
}

inline std::size_t argmax(const Tensor& t) {
  return static_cast<std::size_t>(std::max_element(t.values().begin(), t.values().end()) - t.values().begin());
}

inline double accuracy(const Model& model, const Dataset& data) {
  if (data.size() == 0) return 0.0;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < data.size(); ++i) correct += argmax(predict_logits(model, data.images[i])) == data.labels[i];
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

/// Minibatch SGD with momentum on cross-entropy. Deterministic given cfg.seed.
inline TrainResult train(Model model, const Dataset& data, const TrainConfig& cfg,
                         const std::function<void(const EpochStats&)>& on_epoch = {}) {
  model.validate();
  if (data.size() == 0) throw std::invalid_argument("training dataset is empty");
  if (cfg.batch_size == 0) throw std::invalid_argument("batch_size must be positive");
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (data.labels[i] >= model.num_classes())
      throw std::invalid_argument("label " + std::to_string(data.labels[i]) + " of sample " + std::to_string(i) +
                                  " is out of range");
  }

  const std::size_t n_layers = model.layers.size();
  std::vector<std::vector<double>> vel_w(n_layers), vel_b(n_layers), acc_w(n_layers), acc_b(n_layers);
  for (std::size_t li = 0; li < n_layers; ++li) {
    const auto& l = model.layers[li];
    if (!l.trainable()) continue;
    vel_w[li].assign(l.weight.size(), 0.0);
    acc_w[li].assign(l.weight.size(), 0.0);
    if (l.bias) {
      vel_b[li].assign(l.bias->size(), 0.0);
      acc_b[li].assign(l.bias->size(), 0.0);
    }
  }

  TrainResult result;
  std::vector<std::size_t> order(data.size());
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng shuffle_rng = make_rng(cfg.seed, "train.shuffle", epoch);
    std::shuffle(order.begin(), order.end(), shuffle_rng);

    double loss_sum = 0.0;
    std::size_t correct = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t stop = std::min(order.size(), start + cfg.batch_size);
      for (std::size_t li = 0; li < n_layers; ++li) {
        std::fill(acc_w[li].begin(), acc_w[li].end(), 0.0);
        std::fill(acc_b[li].begin(), acc_b[li].end(), 0.0);
      }
      for (std::size_t k = start; k < stop; ++k) {
        const std::size_t idx = order[k];
        auto trace = forward(model, data.images[idx]);
        Tensor grad_logits;
        const double loss = softmax_cross_entropy(trace.logits(), data.labels[idx], grad_logits);
        if (!std::isfinite(loss)) throw std::runtime_error("training diverged: loss is not finite at epoch " + std::to_string(epoch));
        loss_sum += loss;
        correct += argmax(trace.logits()) == data.labels[idx];
        auto grads = backward(model, trace, grad_logits);
        for (std::size_t li = 0; li < n_layers; ++li) {
          if (!model.layers[li].trainable()) continue;
          const auto& gw = grads.params[li].weight;
          for (std::size_t j = 0; j < gw.size(); ++j) acc_w[li][j] += gw[j];
          if (grads.params[li].bias) {
            const auto& gb = *grads.params[li].bias;
            for (std::size_t j = 0; j < gb.size(); ++j) acc_b[li][j] += gb[j];
          }
        }
      }
      const double scale = cfg.learning_rate / static_cast<double>(stop - start);
      for (std::size_t li = 0; li < n_layers; ++li) {
        auto& l = model.layers[li];
        if (!l.trainable()) continue;
        for (std::size_t j = 0; j < l.weight.size(); ++j) {
          vel_w[li][j] = cfg.momentum * vel_w[li][j] - scale * acc_w[li][j];
          l.weight[j] = static_cast<float>(l.weight[j] + vel_w[li][j]);
        }
        if (l.bias) {
          for (std::size_t j = 0; j < l.bias->size(); ++j) {
            vel_b[li][j] = cfg.momentum * vel_b[li][j] - scale * acc_b[li][j];
            (*l.bias)[j] = static_cast<float>((*l.bias)[j] + vel_b[li][j]);
          }
        }
      }
    }
    for (const auto& l : model.layers) {
      if (l.trainable() && (!l.weight.all_finite() || (l.bias && !l.bias->all_finite())))
        throw std::runtime_error("training diverged: non-finite parameters at epoch " + std::to_string(epoch));
    }
    EpochStats stats{epoch, loss_sum / static_cast<double>(data.size()),
                     static_cast<double>(correct) / static_cast<double>(data.size())};
    result.history.push_back(stats);
    if (on_epoch) on_epoch(stats);
  }
  result.model = std::move(model);
  return result;
}

/// Builds the desk-scale classifier for `data`, initializes it from cfg.seed, and trains it.
inline TrainResult train(const Dataset& data, const Architecture& arch, const TrainConfig& cfg,
                         const std::function<void(const EpochStats&)>& on_epoch = {}) {
  if (data.size() == 0) throw std::invalid_argument("training dataset is empty");
  Model model = make_classifier(data.images.front().shape(), data.class_names, arch);
  init_parameters(model, cfg.seed);
  return train(std::move(model), data, cfg, on_epoch);
}

}  // namespace evolrp
