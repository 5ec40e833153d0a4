// SPDX-License-Identifier: Apache-2.0
#include "cgdrcn/losses.hpp"

#include <cmath>
#include <iomanip>
#include <string>

namespace cgdrcn {
namespace {

const Tensor& target_for(const PyramidTargets& targets, int level, const Tensor& prediction) {
  const auto it = targets.find(level);
  if (it == targets.end()) throw LossError("missing target for level " + std::to_string(level));
  if (it->second.values.shape() != prediction.shape()) {
    throw LossError("target/prediction dims differ at level " + std::to_string(level) + ": " +
                    to_string(it->second.values.shape()) + " vs " + to_string(prediction.shape()));
  }
  return it->second.values;
}

const Tensor* confidence_for(const PredictionPyramid& p, int level) {
  if (level == 6) return p.cm6 ? &*p.cm6 : nullptr;
  return &p.confidence(level);
}

double level_weight(const std::map<int, double>& weights, int level) {
  const auto it = weights.find(level);
  return it == weights.end() ? 1.0 : it->second;
}

// Adds d(weight * level loss) to grad_y and (optionally) grad_cm.
void level_density_grad(const Tensor& target, const Tensor& pred, const Tensor* cm, Reduction reduction, double weight,
                        double value, Tensor& grad_y, Tensor* grad_cm) {
  const std::size_t n = pred.size();
  if (reduction == Reduction::norm && value == 0.0) return;  // subgradient 0 at the kink
  const double k = reduction == Reduction::norm ? weight / value : 2.0 * weight / static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double c = cm ? (*cm)[i] : 1.0;
    const double e = target[i] - pred[i];
    grad_y[i] += -k * c * c * e;
    if (grad_cm) (*grad_cm)[i] += k * c * e * e;
  }
}

}  // namespace

LossConfig default_loss_config(BackboneKind kind) {
  LossConfig cfg;
  if (kind == BackboneKind::resnet101) cfg.level_weights[3] = 0.1;
  return cfg;
}

std::vector<int> supervised_levels(const PredictionPyramid& pyramid) {
  std::vector<int> levels;
  for (int l = pyramid.output_level; l <= 6; ++l) levels.push_back(l);
  return levels;
}

double level_density_loss(const Tensor& target, const Tensor& prediction, const Tensor* confidence,
                          Reduction reduction) {
  require_same_shape(target, prediction, "level_density_loss");
  if (confidence) require_same_shape(*confidence, prediction, "level_density_loss confidence");
  double sq = 0.0;
  for (std::size_t i = 0; i < prediction.size(); ++i) {
    const double c = confidence ? (*confidence)[i] : 1.0;
    const double d = c * target[i] - c * prediction[i];
    sq += d * d;
  }
  if (reduction == Reduction::norm) return std::sqrt(sq);
  return prediction.size() ? sq / static_cast<double>(prediction.size()) : 0.0;
}

double density_loss(const PredictionPyramid& pyramid, const PyramidTargets& targets,
                    const std::map<int, double>& level_weights, Reduction reduction) {
  double total = 0.0;
  for (int level : supervised_levels(pyramid)) {
    const Tensor& pred = pyramid.density(level);
    total += level_weight(level_weights, level) *
             level_density_loss(target_for(targets, level, pred), pred, confidence_for(pyramid, level), reduction);
  }
  return total;
}

double confidence_loss(std::span<const Tensor> confidence_maps) {
  double total = 0.0;
  for (const Tensor& cm : confidence_maps) {
    for (double v : cm.values()) {
      if (!(v > 0.0)) throw LossError("confidence_loss: confidence must be in (0, 1], got " + std::to_string(v));
      total += std::log(v);
    }
  }
  return total;
}

double confidence_loss(const PredictionPyramid& pyramid) {
  std::vector<Tensor> maps;
  for (int level : supervised_levels(pyramid)) {
    if (const Tensor* cm = confidence_for(pyramid, level)) maps.push_back(*cm);
  }
  return confidence_loss(maps);
}

double weather_loss(std::span<const double> logits, Weather label, const std::array<double, kNumWeather>& class_weights) {
  if (logits.size() != kNumWeather) throw LossError("weather_loss: expected 4 logits");
  const int y = static_cast<int>(label);
  if (y < 0 || y >= kNumWeather) throw LossError("weather_loss: invalid label");
  // log-softmax with the max subtracted for stability
  double m = logits[0];
  for (double v : logits) m = std::max(m, v);
  double z = 0.0;
  for (double v : logits) z += std::exp(v - m);
  const double log_p = logits[static_cast<std::size_t>(y)] - m - std::log(z);
  return -class_weights[static_cast<std::size_t>(y)] * log_p;
}

LossBreakdown total_loss(const PredictionPyramid& pyramid, const PyramidTargets& targets,
                         std::optional<Weather> label, const LossConfig& config, PyramidGrad* grad) {
  const bool conditioned = pyramid.weather_logits.has_value();
  if (conditioned != label.has_value()) {
    throw LossError(conditioned ? "class-conditioned model needs a weather label"
                                : "weather label given for an unconditioned model");
  }
  LossBreakdown out;
  if (grad) *grad = PyramidGrad{};

  for (int level : supervised_levels(pyramid)) {
    const Tensor& pred = pyramid.density(level);
    const Tensor& target = target_for(targets, level, pred);
    const Tensor* cm = confidence_for(pyramid, level);
    const double w = level_weight(config.level_weights, level);
    const double value = level_density_loss(target, pred, cm, config.reduction);
    out.density += w * value;
    if (grad && w != 0.0) {
      Tensor& gy = grad->y[static_cast<std::size_t>(level - 3)];
      gy = Tensor(pred.shape());
      Tensor* gcm = nullptr;
      if (cm) {
        Tensor& slot = level == 6 ? grad->cm6 : grad->cm[static_cast<std::size_t>(level - 3)];
        slot = Tensor(pred.shape());
        gcm = &slot;
      }
      level_density_grad(target, pred, cm, config.reduction, w, value, gy, gcm);
    }
  }

  out.confidence = confidence_loss(pyramid);
  if (grad && config.lambda_c != 0.0) {
    for (int level : supervised_levels(pyramid)) {
      const Tensor* cm = confidence_for(pyramid, level);
      if (!cm) continue;
      Tensor& slot = level == 6 ? grad->cm6 : grad->cm[static_cast<std::size_t>(level - 3)];
      if (slot.empty()) slot = Tensor(cm->shape());
      for (std::size_t i = 0; i < cm->size(); ++i) slot[i] -= config.lambda_c / (*cm)[i];
    }
  }

  if (conditioned) {
    const auto& logits = *pyramid.weather_logits;
    out.weather = weather_loss(logits, *label, config.class_weights);
    if (grad && config.lambda_w != 0.0) {
      const auto p = softmax(logits);
      const std::size_t y = static_cast<std::size_t>(*label);
      const double scale = config.lambda_w * config.class_weights[y];
      std::array<double, kNumWeatherClasses> g{};
      for (std::size_t k = 0; k < g.size(); ++k) g[k] = scale * (p[k] - (k == y ? 1.0 : 0.0));
      grad->weather_logits = g;
    }
  }

  out.total = out.density - config.lambda_c * out.confidence + (conditioned ? config.lambda_w * out.weather : 0.0);
  return out;
}

std::array<double, kNumWeather> inverse_frequency_weights(const std::vector<AnnotatedImage>& train_images) {
  std::array<std::size_t, kNumWeather> counts{};
  for (const AnnotatedImage& img : train_images) counts[static_cast<std::size_t>(img.labels.weather)] += 1;
  std::array<double, kNumWeather> w{};
  const double total = static_cast<double>(train_images.size());
  for (std::size_t k = 0; k < w.size(); ++k) {
    w[k] = counts[k] ? total / (kNumWeather * static_cast<double>(counts[k])) : 0.0;
  }
  return w;
}

void write_loss_line(std::ostream& out, long step, const LossBreakdown& loss) {
  out << step << ' ' << std::setprecision(10) << loss.total << ' ' << loss.density << ' ' << loss.confidence << ' '
      << loss.weather << '\n';
}

}  // namespace cgdrcn
