// SPDX-License-Identifier: Apache-2.0
#include "cgdrcn/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "cgdrcn/checkpoint.hpp"
#include "cgdrcn/image_io.hpp"

namespace cgdrcn {
namespace {

void scale_grad(PyramidGrad& g, double s) {
  for (Tensor& t : g.y) t *= s;
  for (Tensor& t : g.cm) t *= s;
  g.cm6 *= s;
  if (g.weather_logits) {
    for (double& v : *g.weather_logits) v *= s;
  }
}

class Adam {
 public:
  Adam(const std::vector<Parameter*>& params, const TrainConfig& cfg) : cfg_(cfg) {
    for (const Parameter* p : params) {
      m_.emplace_back(p->value.shape());
      v_.emplace_back(p->value.shape());
    }
  }

  void step(const std::vector<Parameter*>& params) {
    ++t_;
    const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (std::size_t k = 0; k < params.size(); ++k) {
      Parameter& p = *params[k];
      Tensor& m = m_[k];
      Tensor& v = v_[k];
      for (std::size_t i = 0; i < p.value.size(); ++i) {
        const double g = p.grad[i];
        m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g;
        v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g * g;
        p.value[i] -= cfg_.learning_rate * (m[i] / c1) / (std::sqrt(v[i] / c2) + cfg_.epsilon);
      }
    }
  }

 private:
  const TrainConfig& cfg_;
  std::vector<Tensor> m_;
  std::vector<Tensor> v_;
  long t_ = 0;
};

Tensor pad_to_multiple(const Tensor& x, int multiple) {
  const int rows = (x.rows() + multiple - 1) / multiple * multiple;
  const int cols = (x.cols() + multiple - 1) / multiple * multiple;
  if (rows == x.rows() && cols == x.cols()) return x;
  Tensor out(x.channels(), rows, cols);
  for (int c = 0; c < x.channels(); ++c)
    for (int r = 0; r < x.rows(); ++r)
      std::copy(x.plane(c) + static_cast<std::size_t>(r) * x.cols(), x.plane(c) + static_cast<std::size_t>(r + 1) * x.cols(),
                out.plane(c) + static_cast<std::size_t>(r) * cols);
  return out;
}

Tensor crop(const Tensor& x, int x0, int y0, int w, int h) {
  Tensor out(x.channels(), h, w);
  for (int c = 0; c < x.channels(); ++c)
    for (int r = 0; r < h; ++r) {
      const double* src = x.plane(c) + static_cast<std::size_t>(y0 + r) * x.cols() + x0;
      std::copy(src, src + w, out.plane(c) + static_cast<std::size_t>(r) * w);
    }
  return out;
}

// Sum of the output map over cells whose centers fall in [lo, hi) on both axes (image coordinates
// relative to the tile origin).
double owned_sum(const Tensor& map, int scale, int row_lo, int row_hi, int col_lo, int col_hi) {
  double s = 0.0;
  for (int r = 0; r < map.rows(); ++r) {
    const double cy = (r + 0.5) * scale;
    if (cy < row_lo || cy >= row_hi) continue;
    for (int c = 0; c < map.cols(); ++c) {
      const double cx = (c + 0.5) * scale;
      if (cx < col_lo || cx >= col_hi) continue;
      s += map.at(0, r, c);
    }
  }
  return s;
}

double count_region(const Model& model, const Tensor& normalized, int row_hi, int col_hi) {
  const PredictionPyramid p = model.forward(pad_to_multiple(normalized, 32));
  const int scale = level_scale(p.output_level);
  return owned_sum(p.output(), scale, 0, row_hi, 0, col_hi);
}

}  // namespace

std::vector<TileSpan> tile_layout(int length, int tile, int overlap) {
  if (length <= 0 || tile <= 0 || overlap < 0 || overlap >= tile) throw TrainError("tile_layout: bad arguments");
  if (length <= tile) return {{0, length, 0, length}};
  std::vector<TileSpan> spans;
  const int stride = tile - overlap;
  for (int s = 0;; s += stride) {
    const int start = std::min(s, length - tile);
    spans.push_back({start, tile, 0, 0});
    if (start + tile >= length) break;
  }
  for (std::size_t k = 0; k < spans.size(); ++k) {
    spans[k].own_lo = k == 0 ? 0 : (spans[k - 1].start + spans[k - 1].extent + spans[k].start) / 2;
    spans[k].own_hi = k + 1 == spans.size() ? length : (spans[k].start + spans[k].extent + spans[k + 1].start) / 2;
  }
  return spans;
}

void validate(const TrainConfig& c) {
  if (c.crop_size <= 0 || c.crop_size % 32 != 0) throw TrainError("crop_size must be a positive multiple of 32");
  if (c.resize_min <= 0 || c.resize_min > c.resize_max) throw TrainError("need 0 < resize_min <= resize_max");
  if (c.batch_size <= 0) throw TrainError("batch_size must be positive");
  if (c.max_steps < 0) throw TrainError("max_steps must be >= 0");
  if (c.checkpoint_interval <= 0) throw TrainError("checkpoint_interval must be positive");
  if (c.crops_per_image <= 0) throw TrainError("crops_per_image must be positive");
  if (!(c.learning_rate > 0)) throw TrainError("learning_rate must be positive");
  if (c.tile_size <= 0 || c.tile_size % 32 != 0 || c.tile_overlap < 0 || c.tile_overlap >= c.tile_size) {
    throw TrainError("tile_size must be a positive multiple of 32 larger than tile_overlap");
  }
}

ResizeResult resize_policy(int width, int height, int resize_min, int resize_max) {
  const int lo = std::min(width, height);
  const int hi = std::max(width, height);
  double f = 1.0;
  if (lo < resize_min) f = static_cast<double>(resize_min) / lo;
  if (hi * f > resize_max) f = static_cast<double>(resize_max) / hi;
  if (f == 1.0) return {width, height, 1.0};
  // The epsilon keeps exact products (e.g. 400 * 1.28) from flooring one pixel short.
  const auto scaled = [f](int d) { return std::max(1, static_cast<int>(std::floor(d * f + 1e-9))); };
  return {scaled(width), scaled(height), f};
}

Tensor Sample::load() const {
  if (!pixels.empty()) return pixels;
  if (image_path.empty()) throw TrainError("sample '" + annotation.id + "' has neither pixels nor a path");
  return load_image(image_path);
}

Sample apply_resize(const Sample& sample, const TrainConfig& config) {
  const ResizeResult rs = resize_policy(sample.annotation.width, sample.annotation.height, config.resize_min,
                                        config.resize_max);
  Sample out;
  out.annotation = sample.annotation;
  Tensor pixels = sample.load();
  if (rs.factor == 1.0) {
    out.pixels = std::move(pixels);
    return out;
  }
  out.pixels = bilinear_resize(pixels, rs.height, rs.width);
  out.annotation.width = rs.width;
  out.annotation.height = rs.height;
  for (HeadAnnotation& h : out.annotation.heads) {
    h.x = std::clamp(h.x * rs.factor, 0.0, static_cast<double>(rs.width));
    h.y = std::clamp(h.y * rs.factor, 0.0, static_cast<double>(rs.height));
    h.width *= rs.factor;
    h.height *= rs.factor;
  }
  return out;
}

Patch sample_patch(const Tensor& pixels, const AnnotatedImage& annotation, int crop_size, std::mt19937_64& rng) {
  if (pixels.rows() < crop_size || pixels.cols() < crop_size) {
    throw TrainError("image '" + annotation.id + "' (" + std::to_string(pixels.cols()) + "x" +
                     std::to_string(pixels.rows()) + ") is smaller than the crop size " + std::to_string(crop_size));
  }
  std::uniform_int_distribution<int> dx(0, pixels.cols() - crop_size);
  std::uniform_int_distribution<int> dy(0, pixels.rows() - crop_size);
  Patch p;
  p.x0 = dx(rng);
  p.y0 = dy(rng);
  p.pixels = crop(pixels, p.x0, p.y0, crop_size, crop_size);
  for (const HeadAnnotation& h : annotation.heads) {
    if (h.x >= p.x0 && h.x < p.x0 + crop_size && h.y >= p.y0 && h.y < p.y0 + crop_size) {
      HeadAnnotation shifted = h;
      shifted.x -= p.x0;
      shifted.y -= p.y0;
      p.heads.push_back(shifted);
    }
  }
  return p;
}

double count_image(const Model& model, const Tensor& pixels, const TrainConfig& config) {
  const Tensor normalized = normalize_for_network(pixels);
  const long area = static_cast<long>(pixels.rows()) * pixels.cols();
  if (area <= config.pixel_budget) return count_region(model, normalized, pixels.rows(), pixels.cols());

  double total = 0.0;
  const auto rows = tile_layout(pixels.rows(), config.tile_size, config.tile_overlap);
  const auto cols = tile_layout(pixels.cols(), config.tile_size, config.tile_overlap);
  for (const TileSpan& ty : rows) {
    for (const TileSpan& tx : cols) {
      const Tensor tile = crop(normalized, tx.start, ty.start, tx.extent, ty.extent);
      const PredictionPyramid p = model.forward(pad_to_multiple(tile, 32));
      total += owned_sum(p.output(), level_scale(p.output_level), ty.own_lo - ty.start, ty.own_hi - ty.start,
                         tx.own_lo - tx.start, tx.own_hi - tx.start);
    }
  }
  return total;
}

EvalReport evaluate_with(const std::vector<Sample>& split, const std::function<double(const Sample&)>& predict) {
  if (split.empty()) throw TrainError("evaluate: empty split");
  std::vector<EvalRecord> records;
  records.reserve(split.size());
  for (const Sample& s : split) {
    records.push_back({s.annotation.id, static_cast<double>(s.annotation.count()), predict(s), s.annotation.labels.weather});
  }
  return build_report(std::move(records));
}

EvalReport evaluate(const Model& model, const std::vector<Sample>& split, const TrainConfig& config) {
  return evaluate_with(split, [&](const Sample& s) { return count_image(model, apply_resize(s, config).pixels, config); });
}

TrainResult train(Model& model, const std::vector<Sample>& dataset, const TrainConfig& config,
                  const LossConfig& loss_config, std::ostream* log) {
  validate(config);
  std::vector<Sample> train_set;
  std::vector<Sample> val_set;
  for (const Sample& s : dataset) {
    if (s.annotation.split == Split::train) train_set.push_back(apply_resize(s, config));
    if (s.annotation.split == Split::val) val_set.push_back(s);
  }
  if (train_set.empty()) throw TrainError("train: no training images");
  const auto by_id = [](const Sample& a, const Sample& b) { return a.annotation.id < b.annotation.id; };
  std::sort(train_set.begin(), train_set.end(), by_id);
  std::sort(val_set.begin(), val_set.end(), by_id);
  const std::vector<Sample>& selection_set = val_set.empty() ? train_set : val_set;

  LossConfig lcfg = loss_config;
  if (model.config().class_conditioned() && config.auto_class_weights) {
    std::vector<AnnotatedImage> anns;
    for (const Sample& s : train_set) anns.push_back(s.annotation);
    lcfg.class_weights = inverse_frequency_weights(anns);
  }

  TrainResult result;
  const auto validate_at = [&](long step) {
    const double mae = (*evaluate(model, selection_set, config)[Category::overall].metrics).mae;
    result.validations.push_back({step, mae});
    if (result.best_weights.empty() || mae < result.best_val_mae) {
      result.best_val_mae = mae;
      result.best_step = step;
      result.best_weights = model.weights();
      if (config.checkpoint_path) {
        save_checkpoint(*config.checkpoint_path, model,
                        {{"sigma", std::to_string(config.density.sigma)},
                         {"step", std::to_string(step)},
                         {"val_mae", std::to_string(mae)}});
      }
    }
  };
  validate_at(0);

  std::mt19937_64 rng(config.seed);
  const auto params = model.parameters();
  Adam adam(params, config);
  std::vector<std::size_t> queue;
  std::size_t cursor = 0;
  const auto next_image = [&]() {
    if (cursor == queue.size()) {
      queue.clear();
      for (std::size_t i = 0; i < train_set.size(); ++i)
        for (int k = 0; k < config.crops_per_image; ++k) queue.push_back(i);
      std::shuffle(queue.begin(), queue.end(), rng);
      cursor = 0;
    }
    return queue[cursor++];
  };

  for (long step = 1; step <= config.max_steps; ++step) {
    model.zero_grad();
    LossBreakdown mean;
    const double inv_batch = 1.0 / config.batch_size;
    for (int b = 0; b < config.batch_size; ++b) {
      const Sample& s = train_set[next_image()];
      const Patch patch = sample_patch(s.pixels, s.annotation, config.crop_size, rng);
      const auto targets = pyramid_targets(patch.heads, config.crop_size, config.crop_size, config.density);
      ModelTrace trace;
      const PredictionPyramid pyr = model.forward(normalize_for_network(patch.pixels), &trace);
      const std::optional<Weather> label =
          model.config().class_conditioned() ? std::optional(s.annotation.labels.weather) : std::nullopt;
      PyramidGrad grad;
      const LossBreakdown l = total_loss(pyr, targets, label, lcfg, &grad);
      if (!std::isfinite(l.total)) {
        throw TrainError("training diverged at step " + std::to_string(step) + ": L_f = " + std::to_string(l.total));
      }
      mean.total += l.total * inv_batch;
      mean.density += l.density * inv_batch;
      mean.confidence += l.confidence * inv_batch;
      mean.weather += l.weather * inv_batch;
      scale_grad(grad, inv_batch);
      model.backward(grad, trace);
    }
    adam.step(params);
    result.trace.push_back({step, mean});
    if (log) write_loss_line(*log, step, mean);
    if (step % config.checkpoint_interval == 0 || step == config.max_steps) validate_at(step);
  }

  model.set_weights(result.best_weights);
  return result;
}

}  // namespace cgdrcn
