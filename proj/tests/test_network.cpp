// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <set>

#include "cgdrcn/densitygen.hpp"
#include "cgdrcn/network.hpp"
#include "support.hpp"

namespace cgdrcn {
namespace {

using testing::dot;
using testing::random_tensor;
using testing::relative_error;

ModelConfig tiny(Variant v, std::uint64_t seed = 1, bool cm6 = false) {
  ModelConfig c;
  c.backbone.kind = BackboneKind::tiny;
  c.variant = v;
  c.seed = seed;
  c.confidence_at_level6 = cm6;
  return c;
}

std::size_t cb_params(std::size_t in) { return conv_params(in, 32, 1) + conv_params(32, 32, 3) + conv_params(32, 1, 3); }
std::size_t ceb_params(std::size_t in) {
  return conv_params(in, 32, 1) + conv_params(32, 16, 3) + conv_params(16, 16, 3) + conv_params(16, 1, 1);
}

TEST(Recipe, BlockParameterCountsFollowTheLayerArithmetic) {
  Model m(ModelConfig{{BackboneKind::vgg16, {}}, Variant::ureb_c, false, 0});
  EXPECT_EQ(parameter_count(*m.conv_block(6)), cb_params(512));
  EXPECT_EQ(cb_params(512), 25'953u);
  EXPECT_EQ(parameter_count(*m.conv_block(5)), cb_params(512));
  EXPECT_EQ(parameter_count(*m.conv_block(4)), cb_params(512));
  EXPECT_EQ(parameter_count(*m.conv_block(3)), cb_params(256));
  EXPECT_EQ(cb_params(256), 17'761u);
  EXPECT_EQ(parameter_count(*m.reduction_block(5)), 16'416u);
  EXPECT_EQ(parameter_count(*m.reduction_block(3)), 8'224u);
  EXPECT_EQ(parameter_count(*m.confidence_block(3)), ceb_params(37));
  EXPECT_EQ(parameter_count(*m.condition_block()), conv_params(32, 32, 3) + conv_params(32, 4, 3));
  EXPECT_EQ(parameter_count(*m.condition_block()), 10'404u);
  EXPECT_EQ(m.reduction_block(6), nullptr);

  // Standard VGG-16 convolutional trunk.
  std::size_t backbone = 0;
  for (int s = 0; s < 4; ++s) backbone += parameter_count(m.backbone_stage(s));
  EXPECT_EQ(backbone, 14'714'688u);
}

TEST(Recipe, UnconditionedConfidenceBlockTakes33Channels) {
  Model m(tiny(Variant::ureb));
  EXPECT_EQ(parameter_count(*m.confidence_block(4)), ceb_params(33));
  EXPECT_EQ(ceb_params(33), 8'049u);
  EXPECT_EQ(m.condition_block(), nullptr);
  EXPECT_EQ(m.confidence_block(6), nullptr);
}

TEST(Recipe, VariantsAddComponentsInOrder) {
  std::size_t previous = 0;
  for (Variant v : {Variant::base, Variant::residual, Variant::ureb, Variant::ureb_c}) {
    Model m(tiny(v));
    EXPECT_GT(m.parameter_count(), previous) << to_string(v);
    previous = m.parameter_count();
  }
  Model base(tiny(Variant::base));
  EXPECT_EQ(base.conv_block(3), nullptr);
  EXPECT_NE(base.conv_block(6), nullptr);
}

TEST(Recipe, ResNetTrunkMatchesTheStandardCount) {
  Model m(ModelConfig{{BackboneKind::resnet101, {}}, Variant::base, false, 0});
  std::size_t backbone = 0;
  for (int s = 0; s < 4; ++s) backbone += parameter_count(m.backbone_stage(s));
  // Convolutions plus per-channel scale and shift for every normalization layer, no classifier.
  EXPECT_EQ(backbone, 42'500'160u);
  Shape s{3, 256, 256};
  const int expect_rows[] = {64, 32, 16, 16};
  const int expect_channels[] = {256, 512, 1024, 2048};
  for (int i = 0; i < 4; ++i) {
    s = m.backbone_stage(i).output_shape(s);
    EXPECT_EQ(s, (Shape{expect_channels[i], expect_rows[i], expect_rows[i]}));
  }
}

TEST(Recipe, VggStageShapesFor256Input) {
  Model m(ModelConfig{{BackboneKind::vgg16, {}}, Variant::base, false, 0});
  Shape s{3, 256, 256};
  const int expect_rows[] = {64, 32, 16, 16};
  const int expect_channels[] = {256, 512, 512, 512};
  for (int i = 0; i < 4; ++i) {
    s = m.backbone_stage(i).output_shape(s);
    EXPECT_EQ(s, (Shape{expect_channels[i], expect_rows[i], expect_rows[i]}));
  }
}

TEST(Forward, PyramidShapesOnTinyBackbone) {
  Model m(tiny(Variant::ureb_c));
  const PredictionPyramid p = m.forward(random_tensor({3, 64, 96}, 3));
  for (int level = 3; level <= 6; ++level) {
    const int s = level_scale(level);
    EXPECT_EQ(p.density(level).shape(), (Shape{1, 64 / s, 96 / s})) << level;
  }
  for (int level = 3; level <= 5; ++level) {
    EXPECT_EQ(p.confidence(level).shape(), p.density(level).shape());
    EXPECT_EQ(p.residual(level).shape(), p.density(level).shape());
  }
  ASSERT_TRUE(p.weather_logits.has_value());
  EXPECT_EQ(p.output_level, 3);
  EXPECT_FALSE(p.cm6.has_value());
}

TEST(Forward, RejectsBadInputs) {
  Model m(tiny(Variant::ureb));
  EXPECT_THROW(m.forward(Tensor(3, 48, 64)), ShapeError);
  EXPECT_THROW(m.forward(Tensor(1, 64, 64)), ShapeError);
  EXPECT_THROW(m.forward(Tensor(3, 0, 0)), ShapeError);
}

TEST(Forward, DeterministicPerSeed) {
  const Tensor x = random_tensor({3, 64, 64}, 4);
  Model a(tiny(Variant::ureb_c, 7));
  Model b(tiny(Variant::ureb_c, 7));
  Model c(tiny(Variant::ureb_c, 8));
  const auto pa = a.forward(x);
  EXPECT_EQ(pa.output(), b.forward(x).output());
  EXPECT_EQ(*pa.weather_logits, *b.forward(x).weather_logits);
  EXPECT_NE(pa.output(), c.forward(x).output());
}

TEST(Forward, ConfidenceMapsAreStrictlyInsideTheUnitInterval) {
  Model m(tiny(Variant::ureb, 3, true));
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    const auto p = m.forward(random_tensor({3, 64, 64}, seed, -3, 3));
    for (int level = 3; level <= 5; ++level)
      for (double v : p.confidence(level).values()) {
        EXPECT_GT(v, 0.0);
        EXPECT_LT(v, 1.0);
      }
    ASSERT_TRUE(p.cm6.has_value());
    EXPECT_EQ(p.cm6->shape(), p.density(6).shape());
  }
}

TEST(Forward, RefinementIdentities) {
  Model m(tiny(Variant::ureb_c, 5));
  const Tensor x = random_tensor({3, 64, 64}, 6);
  const auto zero = m.forward(x, nullptr, {.zero_residuals = true});
  Tensor expect = zero.density(6);
  for (int level = 5; level >= 3; --level) {
    expect = upsample2x(expect);
    EXPECT_EQ(zero.density(level), expect) << level;
  }
  const auto unit = m.forward(x, nullptr, {.unit_confidence = true});
  for (int level = 5; level >= 3; --level) {
    EXPECT_EQ(unit.density(level), upsample2x(unit.density(level + 1)) + unit.residual(level)) << level;
  }
  // The ungated variant is the unit-confidence path by construction.
  Model r(tiny(Variant::residual, 5));
  const auto pr = r.forward(x);
  for (int level = 5; level >= 3; --level) {
    for (double v : pr.confidence(level).values()) EXPECT_EQ(v, 1.0);
    EXPECT_EQ(pr.density(level), upsample2x(pr.density(level + 1)) + pr.residual(level));
  }
}

TEST(Forward, BaseVariantOutputsTheCoarsestLevel) {
  Model m(tiny(Variant::base));
  const Tensor x = random_tensor({3, 64, 64}, 2);
  const auto p = m.forward(x);
  EXPECT_EQ(p.output_level, 6);
  EXPECT_EQ(p.output().shape(), (Shape{1, 2, 2}));
  EXPECT_DOUBLE_EQ(predict_count(m, x), p.density(6).sum());
  EXPECT_FALSE(p.weather_logits.has_value());
}

TEST(Weights, SnapshotRestoreAndNames) {
  Model m(tiny(Variant::ureb_c, 1, true));
  std::set<std::string> names;
  for (const Parameter* p : m.parameters()) EXPECT_TRUE(names.insert(p->name).second) << p->name;
  EXPECT_NE(m.find_parameter("cb6.0.weight"), nullptr);
  EXPECT_NE(m.find_parameter("ceb6.6.bias"), nullptr);
  EXPECT_NE(m.find_parameter("cc.2.weight"), nullptr);
  EXPECT_EQ(m.find_parameter("nope"), nullptr);

  const Tensor x = random_tensor({3, 32, 32}, 9);
  const auto snapshot = m.weights();
  const Tensor before = m.forward(x).output();
  for (Parameter* p : m.parameters()) p->value *= 0.5;
  EXPECT_NE(m.forward(x).output(), before);
  m.set_weights(snapshot);
  EXPECT_EQ(m.forward(x).output(), before);
  auto wrong = snapshot;
  wrong.pop_back();
  EXPECT_THROW(m.set_weights(wrong), ModelError);
}

// L = sum_levels <a_l, y_l> + <b_l, cm_l> + <c, cm6> + <d, logits>: checks backward without any loss code.
TEST(Backward, MatchesFiniteDifferencesOfALinearProbe) {
  Model m(tiny(Variant::ureb_c, 11, true));
  const Tensor x = random_tensor({3, 32, 64}, 12);
  ModelTrace trace;
  const auto p = m.forward(x, &trace);
  PyramidGrad g;
  std::uint64_t seed = 100;
  for (int i = 0; i < 4; ++i) g.y[static_cast<std::size_t>(i)] = random_tensor(p.y[static_cast<std::size_t>(i)].shape(), seed++);
  for (int i = 0; i < 3; ++i) g.cm[static_cast<std::size_t>(i)] = random_tensor(p.cm[static_cast<std::size_t>(i)].shape(), seed++);
  g.cm6 = random_tensor(p.cm6->shape(), seed++);
  g.weather_logits = std::array<double, 4>{0.3, -0.7, 1.1, 0.2};
  const auto probe = [&](const PredictionPyramid& q) {
    double s = 0;
    for (int i = 0; i < 4; ++i) s += dot(g.y[static_cast<std::size_t>(i)], q.y[static_cast<std::size_t>(i)]);
    for (int i = 0; i < 3; ++i) s += dot(g.cm[static_cast<std::size_t>(i)], q.cm[static_cast<std::size_t>(i)]);
    s += dot(g.cm6, *q.cm6);
    for (int k = 0; k < 4; ++k) s += (*g.weather_logits)[static_cast<std::size_t>(k)] * (*q.weather_logits)[static_cast<std::size_t>(k)];
    return s;
  };
  m.zero_grad();
  m.backward(g, trace);

  std::mt19937_64 rng(5);
  const auto params = m.parameters();
  int checked = 0;
  for (Parameter* prm : params) {
    std::uniform_int_distribution<std::size_t> pick(0, prm->value.size() - 1);
    for (int k = 0; k < 2; ++k) {
      const std::size_t i = pick(rng);
      const double keep = prm->value[i];
      prm->value[i] = keep + 1e-5;
      const double up = probe(m.forward(x));
      prm->value[i] = keep - 1e-5;
      const double down = probe(m.forward(x));
      prm->value[i] = keep;
      const double numeric = (up - down) / 2e-5;
      EXPECT_LT(relative_error(prm->grad[i], numeric, 1e-6), 1e-4) << prm->name << "[" << i << "]";
      ++checked;
    }
  }
  EXPECT_GT(checked, 50);
}

}  // namespace
}  // namespace cgdrcn
