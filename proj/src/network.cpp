// SPDX-License-Identifier: Apache-2.0
#include "cgdrcn/network.hpp"

#include <random>

namespace cgdrcn {
namespace {

constexpr int kLevels[3] = {3, 4, 5};

std::size_t slot(int level) { return static_cast<std::size_t>(level - 3); }

// conv(in,32,1)-relu-conv(32,32,3)-relu-conv(32,1,3)
Sequential make_conv_block(const std::string& name, int in_channels) {
  Sequential s;
  s.emplace<Conv2d>(name + ".0", in_channels, 32, 1)
      .emplace<Relu>()
      .emplace<Conv2d>(name + ".2", 32, 32, 3)
      .emplace<Relu>()
      .emplace<Conv2d>(name + ".4", 32, 1, 3);
  return s;
}

Sequential make_reduction(const std::string& name, int in_channels) {
  Sequential s;
  s.emplace<Conv2d>(name + ".0", in_channels, kReducedChannels, 1);
  return s;
}

// conv(in,32,1)-relu-conv(32,16,3)-relu-conv(16,16,3)-relu-conv(16,1,1)-sigmoid
Sequential make_confidence_block(const std::string& name, int in_channels) {
  Sequential s;
  s.emplace<Conv2d>(name + ".0", in_channels, 32, 1)
      .emplace<Relu>()
      .emplace<Conv2d>(name + ".2", 32, 16, 3)
      .emplace<Relu>()
      .emplace<Conv2d>(name + ".4", 16, 16, 3)
      .emplace<Relu>()
      .emplace<Conv2d>(name + ".6", 16, 1, 1)
      .emplace<Sigmoid>();
  return s;
}

// conv(32,32,3)-relu-conv(32,4,3); average pooling and softmax happen outside.
Sequential make_condition_block(const std::string& name) {
  Sequential s;
  s.emplace<Conv2d>(name + ".0", kReducedChannels, 32, 3)
      .emplace<Relu>()
      .emplace<Conv2d>(name + ".2", 32, kConditionChannels, 3);
  return s;
}

void add_vgg_convs(Sequential& s, const std::string& block, int in, int out, int count) {
  for (int i = 1; i <= count; ++i) {
    s.emplace<Conv2d>("backbone." + block + "_" + std::to_string(i), i == 1 ? in : out, out, 3).emplace<Relu>();
  }
}

std::array<Sequential, 4> make_vgg16() {
  std::array<Sequential, 4> st;
  add_vgg_convs(st[0], "conv1", 3, 64, 2);
  st[0].emplace<MaxPool2d>(2, 2);
  add_vgg_convs(st[0], "conv2", 64, 128, 2);
  st[0].emplace<MaxPool2d>(2, 2);
  add_vgg_convs(st[0], "conv3", 128, 256, 3);
  st[1].emplace<MaxPool2d>(2, 2);
  add_vgg_convs(st[1], "conv4", 256, 512, 3);
  st[2].emplace<MaxPool2d>(2, 2);
  add_vgg_convs(st[2], "conv5", 512, 512, 3);
  return st;
}

void add_res_layer(Sequential& s, const std::string& name, int in, int width, int blocks, int stride) {
  for (int b = 0; b < blocks; ++b) {
    s.emplace<Bottleneck>("backbone." + name + "." + std::to_string(b), b == 0 ? in : 4 * width, width,
                          b == 0 ? stride : 1);
  }
}

std::array<Sequential, 4> make_resnet101() {
  std::array<Sequential, 4> st;
  st[0].emplace<Conv2d>("backbone.conv1", 3, 64, 7, 2, 3, false)
      .emplace<ChannelAffine>("backbone.bn1", 64)
      .emplace<Relu>()
      .emplace<MaxPool2d>(3, 2, 1);
  add_res_layer(st[0], "layer1", 64, 64, 3, 1);
  add_res_layer(st[1], "layer2", 256, 128, 4, 2);
  add_res_layer(st[2], "layer3", 512, 256, 23, 2);
  // The last stage keeps 1/16 resolution so CB6 + pooling lands at 1/32.
  add_res_layer(st[3], "layer4", 1024, 512, 3, 1);
  return st;
}

std::array<Sequential, 4> make_tiny() {
  std::array<Sequential, 4> st;
  st[0].emplace<Conv2d>("backbone.s1", 3, 8, 3)
      .emplace<Relu>()
      .emplace<MaxPool2d>(4, 4)
      .emplace<Conv2d>("backbone.s2", 8, 16, 3)
      .emplace<Relu>();
  st[1].emplace<MaxPool2d>(2, 2).emplace<Conv2d>("backbone.s3", 16, 32, 3).emplace<Relu>();
  st[2].emplace<MaxPool2d>(2, 2).emplace<Conv2d>("backbone.s4", 32, 64, 3).emplace<Relu>();
  return st;
}

void add_weighted(Tensor& acc, const Tensor& g) {
  if (g.empty()) return;
  if (acc.empty()) {
    acc = g;
  } else {
    acc += g;
  }
}

}  // namespace

std::string_view to_string(BackboneKind k) {
  switch (k) {
    case BackboneKind::vgg16: return "vgg16";
    case BackboneKind::resnet101: return "resnet101";
    case BackboneKind::tiny: return "tiny";
  }
  return "?";
}

std::optional<BackboneKind> backbone_from_string(std::string_view s) {
  if (s == "vgg16") return BackboneKind::vgg16;
  if (s == "resnet101") return BackboneKind::resnet101;
  if (s == "tiny") return BackboneKind::tiny;
  return std::nullopt;
}

std::string_view to_string(Variant v) {
  switch (v) {
    case Variant::base: return "base";
    case Variant::residual: return "residual";
    case Variant::ureb: return "ureb";
    case Variant::ureb_c: return "ureb-c";
  }
  return "?";
}

std::optional<Variant> variant_from_string(std::string_view s) {
  if (s == "base") return Variant::base;
  if (s == "residual") return Variant::residual;
  if (s == "ureb") return Variant::ureb;
  if (s == "ureb-c") return Variant::ureb_c;
  return std::nullopt;
}

TapWidths tap_widths(BackboneKind kind) {
  switch (kind) {
    case BackboneKind::vgg16: return {256, 512, 512, 512};
    case BackboneKind::resnet101: return {256, 512, 1024, 2048};
    case BackboneKind::tiny: return {16, 32, 64, 64};
  }
  return {};
}

struct Model::Impl {
  std::array<Sequential, 4> stages;
  Sequential cb6;
  MaxPool2d pool6{2, 2};
  std::array<Sequential, 3> cb;
  std::array<Sequential, 3> dr;
  std::array<Sequential, 3> ceb;
  Sequential cc;
  MaxPool2d pool_deep{2, 2};
  Sequential dr6;
  Sequential ceb6;

  void collect(std::vector<Parameter*>& out) {
    for (auto& s : stages) s.collect_parameters(out);
    cb6.collect_parameters(out);
    for (auto& s : cb) s.collect_parameters(out);
    for (auto& s : dr) s.collect_parameters(out);
    for (auto& s : ceb) s.collect_parameters(out);
    cc.collect_parameters(out);
    dr6.collect_parameters(out);
    ceb6.collect_parameters(out);
  }
};

Model::Model(const ModelConfig& config) : config_(config), impl_(std::make_unique<Impl>()) {
  Impl& m = *impl_;
  switch (config.backbone.kind) {
    case BackboneKind::vgg16: m.stages = make_vgg16(); break;
    case BackboneKind::resnet101: m.stages = make_resnet101(); break;
    case BackboneKind::tiny: m.stages = make_tiny(); break;
  }
  const TapWidths w = tap_widths(config.backbone.kind);
  const int tap[3] = {w.level3, w.level4, w.level5};
  m.cb6 = make_conv_block("cb6", w.deep);
  if (config.variant != Variant::base) {
    const int ceb_in = kReducedChannels + 1 + (config.class_conditioned() ? kConditionChannels : 0);
    for (int level : kLevels) {
      const std::size_t i = slot(level);
      const std::string suffix = std::to_string(level);
      m.cb[i] = make_conv_block("cb" + suffix, tap[i]);
      if (config.gated()) {
        m.dr[i] = make_reduction("dr" + suffix, tap[i]);
        m.ceb[i] = make_confidence_block("ceb" + suffix, ceb_in);
      }
    }
    if (config.class_conditioned()) m.cc = make_condition_block("cc");
    if (config.gated() && config.confidence_at_level6) {
      m.dr6 = make_reduction("dr6", w.deep);
      m.ceb6 = make_confidence_block("ceb6", kReducedChannels + 1);
    }
  }

  std::mt19937_64 rng(config.seed);
  for (Parameter* p : parameters()) {
    if (p->name.ends_with(".weight")) init_orthogonal(*p, p->value.rows() * p->value.cols(), rng);
  }
}

Model::~Model() = default;
Model::Model(Model&&) noexcept = default;
Model& Model::operator=(Model&&) noexcept = default;

PredictionPyramid Model::forward(const Tensor& image, ModelTrace* trace, const ForwardOptions& opts) const {
  if (image.channels() != 3) throw ShapeError("forward: expected 3-channel image, got " + to_string(image.shape()));
  if (image.rows() % 32 != 0 || image.cols() % 32 != 0 || image.rows() == 0 || image.cols() == 0) {
    throw ShapeError("forward: image dims " + std::to_string(image.rows()) + "x" + std::to_string(image.cols()) +
                     " are not positive multiples of 32");
  }
  const Impl& m = *impl_;
  auto tr = [trace](Trace ModelTrace::*field) { return trace ? &(trace->*field) : nullptr; };

  std::array<Tensor, 3> feat;
  feat[0] = m.stages[0].forward(image, trace ? &trace->stages[0] : nullptr);
  feat[1] = m.stages[1].forward(feat[0], trace ? &trace->stages[1] : nullptr);
  feat[2] = m.stages[2].forward(feat[1], trace ? &trace->stages[2] : nullptr);
  const Tensor deep = m.stages[3].forward(feat[2], trace ? &trace->stages[3] : nullptr);
  if (trace) {
    trace->opts = opts;
    for (std::size_t i = 0; i < 3; ++i) trace->stage_out[i] = feat[i].shape();
    trace->stage_out[3] = deep.shape();
  }

  PredictionPyramid out;
  Tensor& y6 = out.density(6);
  y6 = m.pool6.forward(m.cb6.forward(deep, tr(&ModelTrace::cb6)), tr(&ModelTrace::pool6));

  Tensor reduced5;
  Tensor cond;
  if (config_.class_conditioned()) {
    reduced5 = m.dr[slot(5)].forward(feat[slot(5)], trace ? &trace->dr[slot(5)] : nullptr);
    cond = m.cc.forward(reduced5, tr(&ModelTrace::cc));
    const Tensor pooled = global_average_pool(cond);
    std::array<double, kNumWeatherClasses> logits{};
    for (int k = 0; k < kNumWeatherClasses; ++k) logits[static_cast<std::size_t>(k)] = pooled[static_cast<std::size_t>(k)];
    out.weather_logits = logits;
    if (trace) trace->cc_shape = cond.shape();
  }

  for (int level = 5; level >= 3; --level) {
    const std::size_t i = slot(level);
    const Tensor up = upsample2x(out.density(level + 1));
    Tensor& r = out.r[i];
    Tensor& cm = out.cm[i];
    if (config_.variant == Variant::base || opts.zero_residuals) {
      r = Tensor(up.shape());
    } else {
      r = m.cb[i].forward(feat[i], trace ? &trace->cb[i] : nullptr);
    }
    if (!config_.gated() || opts.unit_confidence) {
      cm = Tensor(up.shape(), 1.0);
    } else {
      const Tensor reduced =
          (level == 5 && config_.class_conditioned()) ? reduced5 : m.dr[i].forward(feat[i], trace ? &trace->dr[i] : nullptr);
      std::vector<const Tensor*> parts{&reduced, &r};
      Tensor cond_here;
      if (config_.class_conditioned()) {
        cond_here = (cond.rows() == r.rows() && cond.cols() == r.cols()) ? cond : bilinear_resize(cond, r.rows(), r.cols());
        parts.push_back(&cond_here);
      }
      cm = m.ceb[i].forward(concat_channels(parts), trace ? &trace->ceb[i] : nullptr);
    }
    require_same_shape(r, up, "residual vs upsampled prediction");
    Tensor y = hadamard(r, cm);
    y += up;
    out.density(level) = std::move(y);
  }

  if (config_.gated() && config_.confidence_at_level6) {
    const Tensor pooled = m.pool_deep.forward(deep, tr(&ModelTrace::pool_deep));
    const Tensor reduced = m.dr6.forward(pooled, tr(&ModelTrace::dr6));
    const Tensor* parts[] = {&reduced, &y6};
    out.cm6 = m.ceb6.forward(concat_channels(parts), tr(&ModelTrace::ceb6));
  }
  out.output_level = config_.variant == Variant::base ? 6 : 3;
  if (trace) trace->pyramid = out;
  return out;
}

void Model::backward(const PyramidGrad& grad, const ModelTrace& trace) {
  Impl& m = *impl_;
  const PredictionPyramid& p = trace.pyramid;
  const ForwardOptions& opts = trace.opts;

  std::array<Tensor, 4> gy;
  for (std::size_t i = 0; i < 4; ++i) add_weighted(gy[i], grad.y[i]);
  std::array<Tensor, 3> gfeat;
  Tensor g_reduced5;
  Tensor g_cond;
  if (config_.class_conditioned()) g_cond = Tensor(trace.cc_shape);

  // Finest level first: y_i = r_i * cm_i + up(y_{i+1}).
  for (int level = 3; level <= 5; ++level) {
    const std::size_t i = slot(level);
    Tensor& g = gy[i];
    if (g.empty()) g = Tensor(p.density(level).shape());
    add_weighted(gy[i + 1], bilinear_resize_backward(g, p.density(level + 1).shape()));
    if (config_.variant == Variant::base) continue;

    Tensor g_r = hadamard(g, p.cm[i]);
    if (config_.gated() && !opts.unit_confidence) {
      Tensor g_cm = hadamard(g, p.r[i]);
      add_weighted(g_cm, grad.cm[i]);
      const Tensor g_in = m.ceb[i].backward(g_cm, trace.ceb[i]);
      std::vector<int> widths{kReducedChannels, 1};
      if (config_.class_conditioned()) widths.push_back(kConditionChannels);
      auto parts = split_channels(g_in, widths);
      g_r += parts[1];
      if (config_.class_conditioned()) {
        g_cond += (g_cond.rows() == parts[2].rows() && g_cond.cols() == parts[2].cols())
                      ? parts[2]
                      : bilinear_resize_backward(parts[2], trace.cc_shape);
      }
      if (level == 5 && config_.class_conditioned()) {
        g_reduced5 = std::move(parts[0]);
      } else {
        add_weighted(gfeat[i], m.dr[i].backward(parts[0], trace.dr[i]));
      }
    }
    if (!opts.zero_residuals) add_weighted(gfeat[i], m.cb[i].backward(g_r, trace.cb[i]));
  }

  if (config_.class_conditioned()) {
    if (grad.weather_logits) {
      Tensor g_logits(kNumWeatherClasses, 1, 1);
      for (std::size_t k = 0; k < kNumWeatherClasses; ++k) g_logits[k] = (*grad.weather_logits)[k];
      g_cond += global_average_pool_backward(g_logits, trace.cc_shape);
    }
    const Tensor g_red = m.cc.backward(g_cond, trace.cc);
    add_weighted(g_reduced5, g_red);
    if (!g_reduced5.empty()) add_weighted(gfeat[slot(5)], m.dr[slot(5)].backward(g_reduced5, trace.dr[slot(5)]));
  }

  Tensor g_deep;
  if (config_.gated() && config_.confidence_at_level6 && !grad.cm6.empty()) {
    const Tensor g_in = m.ceb6.backward(grad.cm6, trace.ceb6);
    const int widths[] = {kReducedChannels, 1};
    auto parts = split_channels(g_in, widths);
    add_weighted(gy[3], parts[1]);
    const Tensor g_pooled = m.dr6.backward(parts[0], trace.dr6);
    add_weighted(g_deep, m.pool_deep.backward(g_pooled, trace.pool_deep));
  }
  if (!gy[3].empty()) {
    add_weighted(g_deep, m.cb6.backward(m.pool6.backward(gy[3], trace.pool6), trace.cb6));
  }

  // Backbone, deepest stage first.
  if (g_deep.empty()) g_deep = Tensor(trace.stage_out[3]);
  Tensor g = m.stages[3].backward(g_deep, trace.stages[3]);
  for (int s = 2; s >= 0; --s) {
    if (g.empty()) g = Tensor(trace.stage_out[static_cast<std::size_t>(s)]);
    add_weighted(g, gfeat[static_cast<std::size_t>(s)]);
    g = m.stages[static_cast<std::size_t>(s)].backward(g, trace.stages[static_cast<std::size_t>(s)]);
  }
}

std::vector<Parameter*> Model::parameters() {
  std::vector<Parameter*> out;
  impl_->collect(out);
  return out;
}

std::vector<const Parameter*> Model::parameters() const {
  std::vector<Parameter*> tmp;
  impl_->collect(tmp);
  return {tmp.begin(), tmp.end()};
}

Parameter* Model::find_parameter(std::string_view name) {
  for (Parameter* p : parameters()) {
    if (p->name == name) return p;
  }
  return nullptr;
}

void Model::zero_grad() {
  for (Parameter* p : parameters()) p->grad.fill(0.0);
}

std::size_t Model::parameter_count() const {
  std::size_t n = 0;
  for (const Parameter* p : parameters()) n += p->value.size();
  return n;
}

Sequential* Model::conv_block(int level) {
  if (level == 6) return &impl_->cb6;
  if (level < 3 || level > 5) return nullptr;
  Sequential& s = impl_->cb[slot(level)];
  return s.empty() ? nullptr : &s;
}

Sequential* Model::reduction_block(int level) {
  Sequential* s = nullptr;
  if (level == 6) {
    s = &impl_->dr6;
  } else if (level >= 3 && level <= 5) {
    s = &impl_->dr[slot(level)];
  }
  return (s && !s->empty()) ? s : nullptr;
}

Sequential* Model::confidence_block(int level) {
  Sequential* s = nullptr;
  if (level == 6) {
    s = &impl_->ceb6;
  } else if (level >= 3 && level <= 5) {
    s = &impl_->ceb[slot(level)];
  }
  return (s && !s->empty()) ? s : nullptr;
}

Sequential* Model::condition_block() { return impl_->cc.empty() ? nullptr : &impl_->cc; }

Sequential& Model::backbone_stage(int index) { return impl_->stages.at(static_cast<std::size_t>(index)); }

std::vector<Tensor> Model::weights() const {
  std::vector<Tensor> out;
  for (const Parameter* p : parameters()) out.push_back(p->value);
  return out;
}

void Model::set_weights(const std::vector<Tensor>& values) {
  auto params = parameters();
  if (values.size() != params.size()) throw ModelError("set_weights: parameter count mismatch");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (values[i].shape() != params[i]->value.shape()) {
      throw ModelError("set_weights: shape mismatch for " + params[i]->name);
    }
    params[i]->value = values[i];
  }
}

Model build_model(const BackboneConfig& backbone, bool class_conditioned, std::uint64_t seed) {
  ModelConfig cfg;
  cfg.backbone = backbone;
  cfg.variant = class_conditioned ? Variant::ureb_c : Variant::ureb;
  cfg.seed = seed;
  return Model(cfg);
}

double predict_count(const Model& model, const Tensor& image) { return model.forward(image).output().sum(); }

}  // namespace cgdrcn
