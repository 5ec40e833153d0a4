// SPDX-License-Identifier: Apache-2.0
//
// Minimal CPU layer library with explicit backward passes. Forward is const and
// records whatever the backward pass needs into a caller-owned Trace, so one
// set of weights can serve concurrent forward calls. Backward accumulates into
// the parameters' gradient buffers and is single-writer.
#pragma once

#include <cstdint>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "cgdrcn/tensor.hpp"

namespace cgdrcn {

struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;

  Parameter() = default;
  Parameter(std::string n, Shape s) : name(std::move(n)), value(s), grad(s) {}
};

/// Saved state of one forward call, consumed by backward.
struct Trace {
  std::vector<Tensor> saved;
  std::vector<Trace> children;
};

class Layer {
 public:
  virtual ~Layer() = default;

  /// `trace` may be null for inference-only calls.
  virtual Tensor forward(const Tensor& x, Trace* trace) const = 0;
  /// Returns dL/dx and accumulates dL/dparams.
  virtual Tensor backward(const Tensor& grad_out, const Trace& trace) = 0;
  virtual Shape output_shape(const Shape& in) const = 0;
  virtual void collect_parameters(std::vector<Parameter*>& /*out*/) {}
  virtual std::string describe() const = 0;
};

using LayerPtr = std::unique_ptr<Layer>;

class Conv2d final : public Layer {
 public:
  /// Square kernel; padding defaults to kernel/2 ("same" for odd kernels at stride 1).
  Conv2d(std::string name, int in_channels, int out_channels, int kernel, int stride = 1, int padding = -1,
         bool bias = true);

  Tensor forward(const Tensor& x, Trace* trace) const override;
  Tensor backward(const Tensor& grad_out, const Trace& trace) override;
  Shape output_shape(const Shape& in) const override;
  void collect_parameters(std::vector<Parameter*>& out) override;
  std::string describe() const override;

  int in_channels() const { return in_; }
  int out_channels() const { return out_; }
  int kernel() const { return k_; }
  Parameter& weight() { return weight_; }
  Parameter& bias() { return bias_; }

 private:
  int in_, out_, k_, stride_, pad_;
  bool has_bias_;
  Parameter weight_;  // out x (in*k*k) stored as out x in x (k*k)
  Parameter bias_;    // out x 1 x 1
};

class Relu final : public Layer {
 public:
  Tensor forward(const Tensor& x, Trace* trace) const override;
  Tensor backward(const Tensor& grad_out, const Trace& trace) override;
  Shape output_shape(const Shape& in) const override { return in; }
  std::string describe() const override { return "relu"; }
};

class Sigmoid final : public Layer {
 public:
  Tensor forward(const Tensor& x, Trace* trace) const override;
  Tensor backward(const Tensor& grad_out, const Trace& trace) override;
  Shape output_shape(const Shape& in) const override { return in; }
  std::string describe() const override { return "sigmoid"; }
};

class MaxPool2d final : public Layer {
 public:
  MaxPool2d(int kernel, int stride, int padding = 0) : k_(kernel), stride_(stride), pad_(padding) {}
  Tensor forward(const Tensor& x, Trace* trace) const override;
  Tensor backward(const Tensor& grad_out, const Trace& trace) override;
  Shape output_shape(const Shape& in) const override;
  std::string describe() const override;

 private:
  int k_, stride_, pad_;
};

/// Per-channel scale and shift; stands in for batch norm with frozen statistics.
class ChannelAffine final : public Layer {
 public:
  ChannelAffine(std::string name, int channels);
  Tensor forward(const Tensor& x, Trace* trace) const override;
  Tensor backward(const Tensor& grad_out, const Trace& trace) override;
  Shape output_shape(const Shape& in) const override { return in; }
  void collect_parameters(std::vector<Parameter*>& out) override;
  std::string describe() const override { return "affine(" + std::to_string(scale_.value.channels()) + ")"; }

 private:
  Parameter scale_;
  Parameter shift_;
};

class Sequential final : public Layer {
 public:
  Sequential() = default;
  explicit Sequential(std::vector<LayerPtr> layers) : layers_(std::move(layers)) {}

  Sequential& add(LayerPtr layer) {
    layers_.push_back(std::move(layer));
    return *this;
  }
  template <typename L, typename... Args>
  Sequential& emplace(Args&&... args) {
    return add(std::make_unique<L>(std::forward<Args>(args)...));
  }

  Tensor forward(const Tensor& x, Trace* trace) const override;
  Tensor backward(const Tensor& grad_out, const Trace& trace) override;
  Shape output_shape(const Shape& in) const override;
  void collect_parameters(std::vector<Parameter*>& out) override;
  std::string describe() const override;

  std::size_t size() const { return layers_.size(); }
  bool empty() const { return layers_.empty(); }

 private:
  std::vector<LayerPtr> layers_;
};

/// ResNet bottleneck: 1x1 -> 3x3(stride) -> 1x1 with an optional projection shortcut.
class Bottleneck final : public Layer {
 public:
  Bottleneck(const std::string& name, int in_channels, int width, int stride);
  Tensor forward(const Tensor& x, Trace* trace) const override;
  Tensor backward(const Tensor& grad_out, const Trace& trace) override;
  Shape output_shape(const Shape& in) const override { return body_.output_shape(in); }
  void collect_parameters(std::vector<Parameter*>& out) override;
  std::string describe() const override;

 private:
  Sequential body_;
  Sequential shortcut_;  // empty means identity
};

// Parameter-free operations used between blocks.

/// Bilinear resampling with half-pixel centers (align-corners disabled).
Tensor bilinear_resize(const Tensor& x, int rows, int cols);
Tensor bilinear_resize_backward(const Tensor& grad_out, const Shape& input_shape);

inline Tensor upsample2x(const Tensor& x) { return bilinear_resize(x, 2 * x.rows(), 2 * x.cols()); }

/// Spatial mean per channel, returned as a channels x 1 x 1 tensor.
Tensor global_average_pool(const Tensor& x);
Tensor global_average_pool_backward(const Tensor& grad_out, const Shape& input_shape);

std::vector<double> softmax(std::span<const double> logits);

/// Orthogonal initialization scaled to preserve activation variance through ReLUs.
void init_orthogonal(Parameter& weight, int fan_in, std::mt19937_64& rng);

std::size_t parameter_count(Layer& layer);

}  // namespace cgdrcn
