// SPDX-License-Identifier: Apache-2.0
//
// Training objective:  L_f = L_d - lambda_c * L_c + lambda_w * L_w
//   L_d = sum_i lambda_i * || CM_i * Y_i - CM_i * Yhat_i ||_2   over levels i = 3..6
//   L_c = sum_i sum_jk log CM_i[j, k]                          (always <= 0)
//   L_w = class-weighted softmax cross-entropy on weather logits
#pragma once

#include <array>
#include <map>
#include <optional>
#include <ostream>
#include <span>
#include <stdexcept>
#include <vector>

#include "cgdrcn/annotations.hpp"
#include "cgdrcn/densitygen.hpp"
#include "cgdrcn/network.hpp"

namespace cgdrcn {

enum class Reduction {
  norm,         // Euclidean norm over the level's pixels
  mean_square,  // mean of squared differences
};

struct LossConfig {
  double lambda_c = 1.0;
  double lambda_w = 0.01;
  std::map<int, double> level_weights{{3, 1.0}, {4, 1.0}, {5, 1.0}, {6, 1.0}};
  std::array<double, kNumWeather> class_weights{1.0, 1.0, 1.0, 1.0};
  Reduction reduction = Reduction::norm;
};

/// Backbone-specific defaults: the deeper residual backbone down-weights level 3 to 0.1.
LossConfig default_loss_config(BackboneKind kind);

class LossError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

using PyramidTargets = std::map<int, DensityMap>;

/// Levels supervised for this pyramid: output_level..6.
std::vector<int> supervised_levels(const PredictionPyramid& pyramid);

/// One level's gated regression term. `confidence` may be null for CM = 1.
double level_density_loss(const Tensor& target, const Tensor& prediction, const Tensor* confidence, Reduction reduction);

double density_loss(const PredictionPyramid& pyramid, const PyramidTargets& targets,
                    const std::map<int, double>& level_weights, Reduction reduction = Reduction::norm);

double confidence_loss(std::span<const Tensor> confidence_maps);
double confidence_loss(const PredictionPyramid& pyramid);

double weather_loss(std::span<const double> logits, Weather label, const std::array<double, kNumWeather>& class_weights);

struct LossBreakdown {
  double total = 0;
  double density = 0;
  double confidence = 0;
  double weather = 0;
};

/// Evaluates the full objective; fills `grad` with dL_f / d(pyramid outputs) when non-null.
LossBreakdown total_loss(const PredictionPyramid& pyramid, const PyramidTargets& targets,
                         std::optional<Weather> label, const LossConfig& config, PyramidGrad* grad = nullptr);

/// N_total / (4 * N_class) over the given images; classes with no images get weight 0.
std::array<double, kNumWeather> inverse_frequency_weights(const std::vector<AnnotatedImage>& train_images);

/// One line: `step L_f L_d L_c L_w`.
void write_loss_line(std::ostream& out, long step, const LossBreakdown& loss);

}  // namespace cgdrcn
