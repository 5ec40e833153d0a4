// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <ostream>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "cgdrcn/annotations.hpp"
#include "cgdrcn/densitygen.hpp"
#include "cgdrcn/losses.hpp"
#include "cgdrcn/metrics.hpp"
#include "cgdrcn/network.hpp"

namespace cgdrcn {

struct TrainConfig {
  int crop_size = 256;
  int resize_min = 512;
  int resize_max = 2048;
  double learning_rate = 1e-5;
  double beta1 = 0.9;  // the "momentum" of the optimizer
  double beta2 = 0.999;
  double epsilon = 1e-8;
  int batch_size = 24;
  long max_steps = 0;
  std::uint64_t seed = 0;
  long checkpoint_interval = 100;
  int crops_per_image = 4;
  DensityConfig density;
  /// Reweight the weather loss by inverse training-split frequency.
  bool auto_class_weights = true;
  /// Images above this many pixels are evaluated tile by tile.
  long pixel_budget = 2048L * 2048L;
  int tile_size = 1024;
  int tile_overlap = 64;
  /// When set, the best checkpoint is written here.
  std::optional<std::filesystem::path> checkpoint_path;
};

class TrainError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

void validate(const TrainConfig& config);

struct ResizeResult {
  int width = 0;
  int height = 0;
  double factor = 1.0;
};

/// Scales so the short side is >= resize_min and the long side <= resize_max, keeping aspect
/// ratio; the long-side limit wins when both cannot hold. Dims are floored.
ResizeResult resize_policy(int width, int height, int resize_min = 512, int resize_max = 2048);

/// An annotated image whose pixels are in memory or loaded on demand.
struct Sample {
  AnnotatedImage annotation;
  Tensor pixels;                     // 3 x H x W in [0, 1]; empty when `path` is used
  std::filesystem::path image_path;  // used when pixels is empty

  Tensor load() const;
};

/// Resizes pixels and annotations together by the same factor.
Sample apply_resize(const Sample& sample, const TrainConfig& config);

struct Patch {
  Tensor pixels;
  std::vector<HeadAnnotation> heads;  // shifted into patch coordinates
  int x0 = 0;
  int y0 = 0;
};

/// Uniform random crop; keeps heads whose centers fall inside [x0, x0 + crop) x [y0, y0 + crop).
Patch sample_patch(const Tensor& pixels, const AnnotatedImage& annotation, int crop_size, std::mt19937_64& rng);

struct StepRecord {
  long step = 0;
  LossBreakdown loss;
};

struct ValPoint {
  long step = 0;
  double mae = 0;
};

struct TrainResult {
  std::vector<StepRecord> trace;
  std::vector<ValPoint> validations;
  long best_step = 0;
  double best_val_mae = 0;
  /// The model holds these weights on return.
  std::vector<Tensor> best_weights;
};

/// Adam over random patches; the model ends up holding the weights with the lowest
/// validation MAE (the training split is used for selection when there is no val split).
TrainResult train(Model& model, const std::vector<Sample>& dataset, const TrainConfig& config,
                  const LossConfig& loss_config, std::ostream* log = nullptr);

/// One tile along an axis: it reads [start, start + extent) and owns [own_lo, own_hi).
struct TileSpan {
  int start = 0;
  int extent = 0;
  int own_lo = 0;
  int own_hi = 0;
};

/// Tiles of `tile` pixels overlapping by at least `overlap`; ownership switches at the middle of
/// each overlap, so the owned spans partition [0, length).
std::vector<TileSpan> tile_layout(int length, int tile, int overlap);

/// Full-image count: resize policy, pad to a multiple of 32, tile above the pixel budget.
double count_image(const Model& model, const Tensor& pixels, const TrainConfig& config);

EvalReport evaluate(const Model& model, const std::vector<Sample>& split, const TrainConfig& config);

/// Evaluation from precomputed predictions, for stub models.
EvalReport evaluate_with(const std::vector<Sample>& split, const std::function<double(const Sample&)>& predict);

}  // namespace cgdrcn
