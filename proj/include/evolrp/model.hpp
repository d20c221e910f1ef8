#pragma once

#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "evolrp/tensor.hpp"

namespace evolrp {

enum class LayerKind { Conv2d, Dense, ReLU, MaxPool2x2, Flatten };

inline std::string_view to_string(LayerKind kind) {
  switch (kind) {
    case LayerKind::Conv2d: return "conv2d";
    case LayerKind::Dense: return "dense";
    case LayerKind::ReLU: return "relu";
    case LayerKind::MaxPool2x2: return "maxpool2x2";
    case LayerKind::Flatten: return "flatten";
  }
  return "unknown";
}

inline std::optional<LayerKind> layer_kind_from_string(std::string_view name) {
  for (auto kind : {LayerKind::Conv2d, LayerKind::Dense, LayerKind::ReLU, LayerKind::MaxPool2x2,
                    LayerKind::Flatten}) {
    if (to_string(kind) == name) return kind;
  }
  return std::nullopt;
}

/// Raised for any (model, input) shape incompatibility; the message names the layer.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// One layer of a sequential network.
///
/// Conv2d weights are (out_channels, in_channels, k, k) and use "same"
/// padding of k/2; Dense weights are (out_features, in_features). Only these
/// two kinds carry parameters.
template <typename T>
struct BasicLayer {
  LayerKind kind = LayerKind::ReLU;
  BasicTensor<T> weight;
  std::optional<BasicTensor<T>> bias;
  std::size_t kernel = 0;
  std::size_t stride = 1;

  bool trainable() const noexcept { return kind == LayerKind::Conv2d || kind == LayerKind::Dense; }
  std::size_t padding() const noexcept { return kernel / 2; }
  std::size_t out_units() const { return weight.dim(0); }
  std::size_t in_units() const { return weight.dim(1); }

  static BasicLayer conv2d(std::size_t in_channels, std::size_t out_channels, std::size_t kernel,
                           std::size_t stride = 1, bool with_bias = true) {
    if (kernel % 2 == 0) throw std::invalid_argument("conv2d kernel size must be odd for same padding");
    if (stride == 0) throw std::invalid_argument("conv2d stride must be positive");
    BasicLayer layer;
    layer.kind = LayerKind::Conv2d;
    layer.weight = BasicTensor<T>({out_channels, in_channels, kernel, kernel});
    if (with_bias) layer.bias = BasicTensor<T>({out_channels});
    layer.kernel = kernel;
    layer.stride = stride;
    return layer;
  }

  static BasicLayer dense(std::size_t in_features, std::size_t out_features, bool with_bias = true) {
    BasicLayer layer;
    layer.kind = LayerKind::Dense;
    layer.weight = BasicTensor<T>({out_features, in_features});
    if (with_bias) layer.bias = BasicTensor<T>({out_features});
    return layer;
  }

  static BasicLayer relu() { return BasicLayer{LayerKind::ReLU, {}, std::nullopt, 0, 1}; }
  static BasicLayer maxpool() { return BasicLayer{LayerKind::MaxPool2x2, {}, std::nullopt, 2, 2}; }
  static BasicLayer flatten() { return BasicLayer{LayerKind::Flatten, {}, std::nullopt, 0, 1}; }

  friend bool operator==(const BasicLayer&, const BasicLayer&) = default;
};

inline std::string layer_label(std::size_t index, LayerKind kind) {
  return "layer " + std::to_string(index) + " (" + std::string(to_string(kind)) + ")";
}

inline std::size_t conv_output_extent(std::size_t in, std::size_t kernel, std::size_t stride) {
  const std::size_t pad = kernel / 2;
  return (in + 2 * pad - kernel) / stride + 1;
}

/// Output shape of `layer` applied to `in`; throws ShapeError naming layer `index`.
template <typename T>
Shape infer_output_shape(const BasicLayer<T>& layer, const Shape& in, std::size_t index) {
  auto fail = [&](const std::string& why) -> ShapeError {
    return ShapeError(layer_label(index, layer.kind) + ": " + why + " (input shape " + shape_to_string(in) + ")");
  };
  switch (layer.kind) {
    case LayerKind::Conv2d: {
      if (layer.weight.rank() != 4 || layer.weight.dim(2) != layer.kernel || layer.weight.dim(3) != layer.kernel)
        throw fail("weight must be (out, in, k, k) with k = " + std::to_string(layer.kernel));
      if (layer.bias && layer.bias->shape() != Shape{layer.weight.dim(0)}) throw fail("bias length must equal out_channels");
      if (in.size() != 3) throw fail("expected a (channels, height, width) input");
      if (in[0] != layer.weight.dim(1))
        throw fail("expected " + std::to_string(layer.weight.dim(1)) + " input channels, got " + std::to_string(in[0]));
      if (in[1] + 2 * layer.padding() < layer.kernel || in[2] + 2 * layer.padding() < layer.kernel)
        throw fail("spatial extent smaller than kernel");
      return {layer.weight.dim(0), conv_output_extent(in[1], layer.kernel, layer.stride),
              conv_output_extent(in[2], layer.kernel, layer.stride)};
    }
    case LayerKind::Dense: {
      if (layer.weight.rank() != 2) throw fail("weight must be (out_features, in_features)");
      if (layer.bias && layer.bias->shape() != Shape{layer.weight.dim(0)}) throw fail("bias length must equal out_features");
      if (in.size() != 1) throw fail("expected a flat input; insert a flatten layer");
      if (in[0] != layer.weight.dim(1))
        throw fail("expected " + std::to_string(layer.weight.dim(1)) + " input features, got " + std::to_string(in[0]));
      return {layer.weight.dim(0)};
    }
    case LayerKind::ReLU:
      return in;
    case LayerKind::MaxPool2x2:
      if (in.size() != 3) throw fail("expected a (channels, height, width) input");
      if (in[1] < 2 || in[2] < 2) throw fail("spatial extent below pooling window");
      return {in[0], in[1] / 2, in[2] / 2};
    case LayerKind::Flatten:
      return {shape_size(in)};
  }
  throw fail("unknown layer kind");
}

/// A sequential classifier over (channels, height, width) inputs.
template <typename T>
struct BasicModel {
  std::vector<BasicLayer<T>> layers;
  Shape input_shape;
  std::vector<std::string> class_names;

  std::size_t num_classes() const noexcept { return class_names.size(); }

  std::size_t trainable_count() const noexcept {
    std::size_t n = 0;
    for (const auto& l : layers) n += l.trainable() ? 1 : 0;
    return n;
  }

  /// Shapes of every layer output in order. Throws ShapeError for the first
  /// incompatible layer.
  std::vector<Shape> output_shapes() const {
    std::vector<Shape> shapes;
    shapes.reserve(layers.size());
    Shape current = input_shape;
    for (std::size_t i = 0; i < layers.size(); ++i) {
      current = infer_output_shape(layers[i], current, i);
      shapes.push_back(current);
    }
    return shapes;
  }

  /// Full structural check: shape chain, and a final Dense layer with one output per class.
  void validate() const {
    if (input_shape.size() != 3) throw ShapeError("model input shape must be (channels, height, width)");
    if (layers.empty()) throw ShapeError("model has no layers");
    auto shapes = output_shapes();
    const auto& last = layers.back();
    if (last.kind != LayerKind::Dense)
      throw ShapeError(layer_label(layers.size() - 1, last.kind) + ": final layer must be dense");
    if (shapes.back() != Shape{num_classes()})
      throw ShapeError(layer_label(layers.size() - 1, last.kind) + ": produces " + shape_to_string(shapes.back()) +
                       " outputs for " + std::to_string(num_classes()) + " classes");
  }

  friend bool operator==(const BasicModel&, const BasicModel&) = default;
};

using Layer = BasicLayer<float>;
using Model = BasicModel<float>;

template <typename U, typename T>
BasicModel<U> model_cast(const BasicModel<T>& model) {
  BasicModel<U> out;
  out.input_shape = model.input_shape;
  out.class_names = model.class_names;
  for (const auto& l : model.layers) {
    BasicLayer<U> c;
    c.kind = l.kind;
    c.kernel = l.kernel;
    c.stride = l.stride;
    if (!l.weight.empty()) c.weight = l.weight.template cast<U>();
    if (l.bias) c.bias = l.bias->template cast<U>();
    out.layers.push_back(std::move(c));
  }
  return out;
}

/// Copy of `model` with every bias removed (the exact-conservation variant).
template <typename T>
BasicModel<T> without_biases(BasicModel<T> model) {
  for (auto& l : model.layers) l.bias.reset();
  return model;
}

/// Layer sizes of the desk-scale classifier.
struct Architecture {
  std::size_t conv1_channels = 8;
  std::size_t conv2_channels = 8;
  std::size_t conv3_channels = 16;
  std::size_t hidden_units = 32;
  std::size_t kernel = 3;
  bool bias = true;
};

/// Conv+ReLU, Conv+ReLU, MaxPool, Conv+ReLU, MaxPool, Flatten, Dense+ReLU,
/// Dense. Parameters are zero; see init_parameters() in train.hpp.
inline Model make_classifier(const Shape& input_shape, std::vector<std::string> class_names,
                             const Architecture& arch = {}) {
  if (input_shape.size() != 3) throw ShapeError("classifier input must be (channels, height, width)");
  Model m;
  m.input_shape = input_shape;
  m.class_names = std::move(class_names);
  const std::size_t c = input_shape[0];
  m.layers.push_back(Layer::conv2d(c, arch.conv1_channels, arch.kernel, 1, arch.bias));
  m.layers.push_back(Layer::relu());
  m.layers.push_back(Layer::conv2d(arch.conv1_channels, arch.conv2_channels, arch.kernel, 1, arch.bias));
  m.layers.push_back(Layer::relu());
  m.layers.push_back(Layer::maxpool());
  m.layers.push_back(Layer::conv2d(arch.conv2_channels, arch.conv3_channels, arch.kernel, 1, arch.bias));
  m.layers.push_back(Layer::relu());
  m.layers.push_back(Layer::maxpool());
  m.layers.push_back(Layer::flatten());
  const std::size_t flat = arch.conv3_channels * (input_shape[1] / 4) * (input_shape[2] / 4);
  m.layers.push_back(Layer::dense(flat, arch.hidden_units, arch.bias));
  m.layers.push_back(Layer::relu());
  m.layers.push_back(Layer::dense(arch.hidden_units, m.class_names.size(), arch.bias));
  m.validate();
  return m;
}

}  // namespace evolrp
