#pragma once

#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "evolrp/kernels.hpp"
#include "evolrp/model.hpp"

namespace evolrp {

/// Per-layer input and output activations of one forward pass.
/// outputs[i] == inputs[i + 1]; the last output is the logit vector.
template <typename T>
struct BasicActivationTrace {
  std::vector<BasicTensor<T>> inputs;
  std::vector<BasicTensor<T>> outputs;

  const BasicTensor<T>& logits() const { return outputs.back(); }
  std::size_t size() const noexcept { return inputs.size(); }
};

using ActivationTrace = BasicActivationTrace<float>;

template <typename T>
kernels::ConvGeometry conv_geometry(const BasicLayer<T>& layer, const Shape& in, const Shape& out) {
  return {in[0], in[1], in[2], out[0], out[1], out[2], layer.kernel, layer.stride, layer.padding()};
}

namespace detail {

template <typename T>
BasicTensor<T> to_tensor(Shape shape, const std::vector<double>& acc) {
  std::vector<T> data(acc.size());
  for (std::size_t i = 0; i < acc.size(); ++i) data[i] = static_cast<T>(acc[i]);
  return BasicTensor<T>(std::move(shape), std::move(data));
}

template <typename T>
const T* bias_ptr(const BasicLayer<T>& layer) {
  return layer.bias ? layer.bias->data() : nullptr;
}

}  // namespace detail

/// Applies one layer. `in` must already have the shape the layer expects.
template <typename T>
BasicTensor<T> apply_layer(const BasicLayer<T>& layer, const BasicTensor<T>& in, std::size_t index) {
  Shape out_shape = infer_output_shape(layer, in.shape(), index);
  switch (layer.kind) {
    case LayerKind::Conv2d: {
      std::vector<double> acc(shape_size(out_shape));
      kernels::conv2d_forward<T, T>(conv_geometry(layer, in.shape(), out_shape), in.values(), layer.weight.values(),
                                    detail::bias_ptr(layer), acc);
      return detail::to_tensor<T>(std::move(out_shape), acc);
    }
    case LayerKind::Dense: {
      std::vector<double> acc(out_shape[0]);
      kernels::dense_forward<T, T>(layer.in_units(), layer.out_units(), in.values(), layer.weight.values(),
                                   detail::bias_ptr(layer), acc);
      return detail::to_tensor<T>(std::move(out_shape), acc);
    }
    case LayerKind::ReLU: {
      BasicTensor<T> out = in;
      for (auto& v : out.values()) v = v > T{0} ? v : T{0};
      return out;
    }
    case LayerKind::MaxPool2x2: {
      BasicTensor<T> out(out_shape);
      const std::size_t h = in.dim(1), w = in.dim(2);
      std::size_t k = 0;
      for (std::size_t c = 0; c < out_shape[0]; ++c)
        for (std::size_t oy = 0; oy < out_shape[1]; ++oy)
          for (std::size_t ox = 0; ox < out_shape[2]; ++ox)
            out[k++] = in[kernels::maxpool_argmax(in.values(), h, w, c, oy, ox)];
      return out;
    }
    case LayerKind::Flatten:
      return in.reshaped(std::move(out_shape));
  }
  throw std::logic_error("unknown layer kind");
}

/// Forward pass recording every layer's input and output.
template <typename T>
BasicActivationTrace<T> forward(const BasicModel<T>& model, const BasicTensor<T>& input) {
  if (input.shape() != model.input_shape) {
    throw ShapeError("input shape " + shape_to_string(input.shape()) + " does not match model input shape " +
                     shape_to_string(model.input_shape));
  }
  if (model.layers.empty()) throw ShapeError("model has no layers");
  BasicActivationTrace<T> trace;
  trace.inputs.reserve(model.layers.size());
  trace.outputs.reserve(model.layers.size());
  const BasicTensor<T>* current = &input;
  for (std::size_t i = 0; i < model.layers.size(); ++i) {
    trace.inputs.push_back(*current);
    trace.outputs.push_back(apply_layer(model.layers[i], *current, i));
    current = &trace.outputs.back();
  }
  return trace;
}

template <typename T>
BasicTensor<T> predict_logits(const BasicModel<T>& model, const BasicTensor<T>& input) {
  if (input.shape() != model.input_shape) {
    throw ShapeError("input shape " + shape_to_string(input.shape()) + " does not match model input shape " +
                     shape_to_string(model.input_shape));
  }
  BasicTensor<T> current = input;
  for (std::size_t i = 0; i < model.layers.size(); ++i) current = apply_layer(model.layers[i], current, i);
  return current;
}

template <typename T>
struct ParamGrad {
  BasicTensor<T> weight;
  std::optional<BasicTensor<T>> bias;
};

template <typename T>
struct BasicGradients {
  BasicTensor<T> input_grad;
  /// One entry per layer; empty tensors for layers without parameters.
  std::vector<ParamGrad<T>> params;
  /// Gradient with respect to each layer's output.
  std::vector<BasicTensor<T>> output_grads;
};

using Gradients = BasicGradients<float>;

/// Throws unless `trace` has exactly the per-layer shapes `model` produces.
template <typename T>
void check_trace(const BasicModel<T>& model, const BasicActivationTrace<T>& trace) {
  if (trace.inputs.size() != model.layers.size() || trace.outputs.size() != model.layers.size()) {
    throw std::invalid_argument("activation trace has " + std::to_string(trace.inputs.size()) +
                                " entries for a model with " + std::to_string(model.layers.size()) + " layers");
  }
  Shape current = model.input_shape;
  for (std::size_t i = 0; i < model.layers.size(); ++i) {
    if (trace.inputs[i].shape() != current)
      throw std::invalid_argument("activation trace does not match " + layer_label(i, model.layers[i].kind));
    current = infer_output_shape(model.layers[i], current, i);
    if (trace.outputs[i].shape() != current)
      throw std::invalid_argument("activation trace does not match " + layer_label(i, model.layers[i].kind));
  }
}

/// Reverse-mode differentiation of the logits contracted with `output_grad`.
template <typename T>
BasicGradients<T> backward(const BasicModel<T>& model, const BasicActivationTrace<T>& trace,
                           const BasicTensor<T>& output_grad, bool with_params = true) {
  check_trace(model, trace);
  if (output_grad.shape() != trace.logits().shape())
    throw std::invalid_argument("output gradient shape " + shape_to_string(output_grad.shape()) +
                                " does not match logits " + shape_to_string(trace.logits().shape()));

  const std::size_t n = model.layers.size();
  BasicGradients<T> grads;
  grads.params.resize(n);
  grads.output_grads.resize(n);
  BasicTensor<T> grad = output_grad;

  for (std::size_t li = n; li-- > 0;) {
    const auto& layer = model.layers[li];
    const auto& in = trace.inputs[li];
    const auto& out = trace.outputs[li];
    grads.output_grads[li] = grad;
    BasicTensor<T> grad_in(in.shape());

    switch (layer.kind) {
      case LayerKind::Conv2d: {
        const auto g = conv_geometry(layer, in.shape(), out.shape());
        std::vector<double> acc(in.size(), 0.0);
        kernels::conv2d_backward_input<T, T>(g, grad.values(), layer.weight.values(), acc);
        grad_in = detail::to_tensor<T>(in.shape(), acc);
        if (with_params) {
          std::vector<double> gw(layer.weight.size(), 0.0), gb(layer.bias ? layer.bias->size() : 0, 0.0);
          kernels::conv2d_backward_params<T>(g, grad.values(), in.values(), gw, gb);
          grads.params[li].weight = detail::to_tensor<T>(layer.weight.shape(), gw);
          if (layer.bias) grads.params[li].bias = detail::to_tensor<T>(layer.bias->shape(), gb);
        }
        break;
      }
      case LayerKind::Dense: {
        std::vector<double> acc(in.size(), 0.0);
        kernels::dense_backward_input<T, T>(layer.in_units(), layer.out_units(), grad.values(),
                                            layer.weight.values(), acc);
        grad_in = detail::to_tensor<T>(in.shape(), acc);
        if (with_params) {
          std::vector<double> gw(layer.weight.size(), 0.0), gb(layer.bias ? layer.bias->size() : 0, 0.0);
          kernels::dense_backward_params<T>(layer.in_units(), layer.out_units(), grad.values(), in.values(), gw, gb);
          grads.params[li].weight = detail::to_tensor<T>(layer.weight.shape(), gw);
          if (layer.bias) grads.params[li].bias = detail::to_tensor<T>(layer.bias->shape(), gb);
        }
        break;
      }
      case LayerKind::ReLU:
        for (std::size_t i = 0; i < in.size(); ++i) grad_in[i] = in[i] > T{0} ? grad[i] : T{0};
        break;
      case LayerKind::MaxPool2x2: {
        const std::size_t h = in.dim(1), w = in.dim(2);
        std::size_t k = 0;
        for (std::size_t c = 0; c < out.dim(0); ++c)
          for (std::size_t oy = 0; oy < out.dim(1); ++oy)
            for (std::size_t ox = 0; ox < out.dim(2); ++ox)
              grad_in[kernels::maxpool_argmax(in.values(), h, w, c, oy, ox)] += grad[k++];
        break;
      }
      case LayerKind::Flatten:
        grad_in = grad.reshaped(in.shape());
        break;
    }
    grad = std::move(grad_in);
  }
  grads.input_grad = std::move(grad);
  return grads;
}

/// d logit[target] / d input.
template <typename T>
BasicTensor<T> logit_input_gradient(const BasicModel<T>& model, const BasicTensor<T>& input, std::size_t target) {
  auto trace = forward(model, input);
  BasicTensor<T> seed(trace.logits().shape());
  seed[target] = T{1};
  return backward(model, trace, seed, false).input_grad;
}

}  // namespace evolrp
