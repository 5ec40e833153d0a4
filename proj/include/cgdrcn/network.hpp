// SPDX-License-Identifier: Apache-2.0
//
// Coarse-to-fine density network with confidence-gated residual refinement.
//
//   backbone --F3 (1/4)--> UREB3 --R3*CM3--+
//            --F4 (1/8)--> UREB4 --R4*CM4--+--> Y4 --up--> (+) --> Y3
//            --F5 (1/16)-> UREB5 --R5*CM5--+--> Y5 --up--> (+)
//            --deep------> CB6 -> maxpool --> Y6 --up--> (+)
//
// Each UREB_i holds a conv block CB_i producing R_i, a 1x1 reduction DR_i of F_i
// to 32 channels, and a confidence block CEB_i reading concat(DR_i(F_i), R_i)
// (plus class-conditioning features when enabled).
#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "cgdrcn/layers.hpp"
#include "cgdrcn/tensor.hpp"

namespace cgdrcn {

enum class BackboneKind { vgg16, resnet101, tiny };

std::string_view to_string(BackboneKind k);
std::optional<BackboneKind> backbone_from_string(std::string_view s);

/// Ablation ladder: base (Y6 only), +R (ungated residuals), +UREB, +UREB-C.
enum class Variant { base, residual, ureb, ureb_c };

std::string_view to_string(Variant v);
std::optional<Variant> variant_from_string(std::string_view s);

struct BackboneConfig {
  BackboneKind kind = BackboneKind::vgg16;
  std::optional<std::string> pretrained_weights;
};

struct TapWidths {
  int level3 = 0;
  int level4 = 0;
  int level5 = 0;
  int deep = 0;
};

TapWidths tap_widths(BackboneKind kind);

struct ModelConfig {
  BackboneConfig backbone;
  Variant variant = Variant::ureb;
  /// Adds a confidence block at level 6; otherwise CM6 is identically 1.
  bool confidence_at_level6 = false;
  std::uint64_t seed = 0;

  bool class_conditioned() const { return variant == Variant::ureb_c; }
  bool gated() const { return variant == Variant::ureb || variant == Variant::ureb_c; }
};

inline constexpr int kReducedChannels = 32;
inline constexpr int kConditionChannels = 4;
inline constexpr int kNumWeatherClasses = 4;

/// Outputs of one forward pass. Levels index as 3..6.
struct PredictionPyramid {
  std::array<Tensor, 4> y;   // y[level - 3], 1 x rows x cols
  std::array<Tensor, 3> r;   // ungated residuals for levels 3..5
  std::array<Tensor, 3> cm;  // confidence maps for levels 3..5
  std::optional<Tensor> cm6;
  std::optional<std::array<double, kNumWeatherClasses>> weather_logits;
  /// Finest supervised level; 3 except for the base variant.
  int output_level = 3;

  const Tensor& density(int level) const { return y.at(static_cast<std::size_t>(level - 3)); }
  Tensor& density(int level) { return y.at(static_cast<std::size_t>(level - 3)); }
  const Tensor& residual(int level) const { return r.at(static_cast<std::size_t>(level - 3)); }
  const Tensor& confidence(int level) const { return cm.at(static_cast<std::size_t>(level - 3)); }
  const Tensor& output() const { return density(output_level); }
};

/// Gradient of a scalar objective with respect to the pyramid outputs. Empty tensors mean zero.
struct PyramidGrad {
  std::array<Tensor, 4> y;
  std::array<Tensor, 3> cm;
  Tensor cm6;
  std::optional<std::array<double, kNumWeatherClasses>> weather_logits;
};

/// Test hooks that short-circuit parts of the refinement.
struct ForwardOptions {
  bool zero_residuals = false;
  bool unit_confidence = false;
};

/// Everything backward needs from one forward call.
struct ModelTrace {
  std::array<Trace, 4> stages;  // level-3 stage, level-4 stage, level-5 stage, deep stage
  std::array<Shape, 4> stage_out;
  Trace cb6;
  Trace pool6;
  std::array<Trace, 3> cb;
  std::array<Trace, 3> dr;
  std::array<Trace, 3> ceb;
  Trace cc;
  Shape cc_shape;
  Trace pool_deep;
  Trace dr6;
  Trace ceb6;
  PredictionPyramid pyramid;
  ForwardOptions opts;
};

class ModelError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class Model {
 public:
  explicit Model(const ModelConfig& config);
  ~Model();
  Model(Model&&) noexcept;
  Model& operator=(Model&&) noexcept;

  const ModelConfig& config() const { return config_; }

  /// `image` is 3 x H x W with H and W divisible by 32.
  PredictionPyramid forward(const Tensor& image, ModelTrace* trace = nullptr, const ForwardOptions& opts = {}) const;
  /// Accumulates parameter gradients for the forward pass recorded in `trace`.
  void backward(const PyramidGrad& grad, const ModelTrace& trace);

  std::vector<Parameter*> parameters();
  std::vector<const Parameter*> parameters() const;
  Parameter* find_parameter(std::string_view name);
  void zero_grad();
  std::size_t parameter_count() const;

  // Component access by level, for recipe checks. Null when absent in this variant.
  Sequential* conv_block(int level);
  Sequential* reduction_block(int level);
  Sequential* confidence_block(int level);
  Sequential* condition_block();
  Sequential& backbone_stage(int index);

  /// Snapshot of all parameter values, in parameters() order.
  std::vector<Tensor> weights() const;
  void set_weights(const std::vector<Tensor>& values);

 private:
  struct Impl;
  ModelConfig config_;
  std::unique_ptr<Impl> impl_;
};

/// Convenience wrapper matching the variant switch used by the ablation ladder.
Model build_model(const BackboneConfig& backbone, bool class_conditioned, std::uint64_t seed = 0);

/// Sum of the output density map.
double predict_count(const Model& model, const Tensor& image);

/// Parameter count of a conv with bias.
constexpr std::size_t conv_params(std::size_t in, std::size_t out, std::size_t k) { return in * out * k * k + out; }

}  // namespace cgdrcn
