// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <Eigen/Dense>
#include <cstdint>
#include <functional>

#include "cgdrcn/layers.hpp"
#include "support.hpp"

namespace cgdrcn {
namespace {

using testing::dot;
using testing::random_tensor;
using testing::relative_error;

// Direct convolution, written independently of the im2col path.
Tensor naive_conv(const Tensor& x, const Tensor& w, const Tensor& b, int k, int stride, int pad) {
  const int out_c = w.channels();
  const int out_r = (x.rows() + 2 * pad - k) / stride + 1;
  const int out_q = (x.cols() + 2 * pad - k) / stride + 1;
  Tensor y(out_c, out_r, out_q);
  for (int o = 0; o < out_c; ++o)
    for (int r = 0; r < out_r; ++r)
      for (int q = 0; q < out_q; ++q) {
        double s = b.empty() ? 0.0 : b[static_cast<std::size_t>(o)];
        for (int i = 0; i < x.channels(); ++i)
          for (int a = 0; a < k; ++a)
            for (int c = 0; c < k; ++c) {
              const int iy = r * stride - pad + a;
              const int ix = q * stride - pad + c;
              if (iy < 0 || ix < 0 || iy >= x.rows() || ix >= x.cols()) continue;
              s += w.at(o, i, a * k + c) * x.at(i, iy, ix);
            }
        y.at(o, r, q) = s;
      }
  return y;
}

// Central-difference check of dL/dx and dL/dparams for L = <g, layer(x)>.
void check_layer_gradients(Layer& layer, Tensor x, std::uint64_t seed, double tol = 1e-6) {
  Trace trace;
  const Tensor y = layer.forward(x, &trace);
  const Tensor g = random_tensor(y.shape(), seed + 1);
  std::vector<Parameter*> params;
  layer.collect_parameters(params);
  for (Parameter* p : params) p->grad.fill(0.0);
  const Tensor dx = layer.backward(g, trace);

  const double h = 1e-6;
  const auto objective = [&]() { return dot(g, layer.forward(x, nullptr)); };
  for (std::size_t i = 0; i < x.size(); i += std::max<std::size_t>(1, x.size() / 40)) {
    const double keep = x[i];
    x[i] = keep + h;
    const double up = objective();
    x[i] = keep - h;
    const double down = objective();
    x[i] = keep;
    EXPECT_LT(relative_error(dx[i], (up - down) / (2 * h), 1e-6), tol) << layer.describe() << " input " << i;
  }
  for (Parameter* p : params) {
    for (std::size_t i = 0; i < p->value.size(); i += std::max<std::size_t>(1, p->value.size() / 25)) {
      const double keep = p->value[i];
      p->value[i] = keep + h;
      const double up = objective();
      p->value[i] = keep - h;
      const double down = objective();
      p->value[i] = keep;
      EXPECT_LT(relative_error(p->grad[i], (up - down) / (2 * h), 1e-6), tol) << p->name << " " << i;
    }
  }
}

TEST(Tensor, ArithmeticAndShapeChecks) {
  Tensor a(1, 2, 2, 1.5);
  Tensor b(1, 2, 2, 0.5);
  a += b;
  EXPECT_DOUBLE_EQ(a.sum(), 8.0);
  a -= b;
  a *= 2.0;
  EXPECT_DOUBLE_EQ(a.mean(), 3.0);
  EXPECT_THROW(a += Tensor(1, 2, 3), ShapeError);
  EXPECT_DOUBLE_EQ(hadamard(a, b).sum(), 6.0);
}

TEST(Tensor, StorageIsCacheLineAligned) {
  for (int n : {1, 3, 17, 1000}) {
    const Tensor t(1, 1, n);
    EXPECT_EQ(reinterpret_cast<std::uintptr_t>(t.data()) % 64, 0u) << n;
    const Tensor copy = t;
    EXPECT_EQ(reinterpret_cast<std::uintptr_t>(copy.data()) % 64, 0u) << n;
  }
}

TEST(Tensor, ConcatSplitRoundTrip) {
  const Tensor a = random_tensor({2, 3, 4}, 1);
  const Tensor b = random_tensor({1, 3, 4}, 2);
  const Tensor c = random_tensor({3, 3, 4}, 3);
  const Tensor* parts[] = {&a, &b, &c};
  const Tensor cat = concat_channels(parts);
  EXPECT_EQ(cat.shape(), (Shape{6, 3, 4}));
  const int widths[] = {2, 1, 3};
  const auto back = split_channels(cat, widths);
  ASSERT_EQ(back.size(), 3u);
  EXPECT_EQ(back[0], a);
  EXPECT_EQ(back[1], b);
  EXPECT_EQ(back[2], c);
  const Tensor odd(1, 2, 4);
  const Tensor* bad[] = {&a, &odd};
  EXPECT_THROW(concat_channels(bad), ShapeError);
}

struct ConvCase {
  int in, out, k, stride, pad, rows, cols;
};

class ConvOracle : public ::testing::TestWithParam<ConvCase> {};

TEST_P(ConvOracle, MatchesDirectConvolution) {
  const ConvCase c = GetParam();
  Conv2d conv("conv", c.in, c.out, c.k, c.stride, c.pad);
  conv.weight().value = random_tensor(conv.weight().value.shape(), 11);
  conv.bias().value = random_tensor(conv.bias().value.shape(), 12);
  const Tensor x = random_tensor({c.in, c.rows, c.cols}, 13);
  const Tensor y = conv.forward(x, nullptr);
  const Tensor expect = naive_conv(x, conv.weight().value, conv.bias().value, c.k, c.stride, c.pad);
  ASSERT_EQ(y.shape(), expect.shape());
  EXPECT_EQ(conv.output_shape(x.shape()), expect.shape());
  for (std::size_t i = 0; i < y.size(); ++i) EXPECT_NEAR(y[i], expect[i], 1e-12);
}

INSTANTIATE_TEST_SUITE_P(Shapes, ConvOracle,
                         ::testing::Values(ConvCase{3, 4, 3, 1, 1, 7, 9}, ConvCase{2, 5, 1, 1, 0, 4, 4},
                                           ConvCase{3, 2, 3, 2, 1, 9, 8}, ConvCase{4, 3, 7, 2, 3, 16, 12},
                                           ConvCase{1, 1, 3, 1, 0, 5, 5}));

TEST(Conv2d, ParameterCountAndShapes) {
  Conv2d conv("c", 512, 32, 1);
  EXPECT_EQ(parameter_count(conv), 512u * 32u + 32u);
  EXPECT_EQ(conv.weight().value.shape(), (Shape{32, 512, 1}));
  EXPECT_THROW(conv.forward(Tensor(3, 4, 4), nullptr), ShapeError);
}

TEST(Gradients, Conv2d) {
  Conv2d conv("c", 2, 3, 3, 1);
  conv.weight().value = random_tensor(conv.weight().value.shape(), 21);
  conv.bias().value = random_tensor(conv.bias().value.shape(), 22);
  check_layer_gradients(conv, random_tensor({2, 5, 6}, 23), 24);
}

TEST(Gradients, StridedConv2d) {
  Conv2d conv("c", 3, 2, 3, 2, 1);
  conv.weight().value = random_tensor(conv.weight().value.shape(), 25);
  check_layer_gradients(conv, random_tensor({3, 7, 6}, 26), 27);
}

TEST(Gradients, Activations) {
  Sigmoid sig;
  check_layer_gradients(sig, random_tensor({2, 3, 3}, 31, -4, 4), 32);
  Relu relu;
  // Keep inputs away from the kink.
  Tensor x = random_tensor({2, 3, 3}, 33);
  for (double& v : x.values()) v += v >= 0 ? 0.1 : -0.1;
  check_layer_gradients(relu, x, 34);
}

TEST(Gradients, MaxPoolAndAffine) {
  MaxPool2d pool(2, 2);
  check_layer_gradients(pool, random_tensor({2, 6, 6}, 41), 42);
  MaxPool2d padded(3, 2, 1);
  check_layer_gradients(padded, random_tensor({1, 7, 7}, 43), 44);
  ChannelAffine affine("bn", 3);
  std::vector<Parameter*> p;
  affine.collect_parameters(p);
  for (Parameter* q : p) q->value = random_tensor(q->value.shape(), 45);
  check_layer_gradients(affine, random_tensor({3, 4, 4}, 46), 47);
}

TEST(Gradients, Bottleneck) {
  Bottleneck block("b", 4, 2, 2);
  std::vector<Parameter*> params;
  block.collect_parameters(params);
  std::uint64_t s = 50;
  for (Parameter* p : params) p->value = random_tensor(p->value.shape(), s++, 0.2, 1.0);
  check_layer_gradients(block, random_tensor({4, 6, 6}, 60), 61, 1e-5);
  EXPECT_EQ(block.output_shape({4, 6, 6}), (Shape{8, 3, 3}));
}

TEST(Gradients, SequentialChain) {
  Sequential seq;
  seq.emplace<Conv2d>("a", 2, 4, 3).emplace<Sigmoid>().emplace<Conv2d>("b", 4, 1, 1);
  std::vector<Parameter*> params;
  seq.collect_parameters(params);
  std::uint64_t s = 70;
  for (Parameter* p : params) p->value = random_tensor(p->value.shape(), s++);
  check_layer_gradients(seq, random_tensor({2, 5, 5}, 80), 81, 1e-5);
}

TEST(Bilinear, KnownValuesHalfPixelCenters) {
  Tensor x(1, 1, 2);
  x[0] = 0.0;
  x[1] = 1.0;
  const Tensor y = bilinear_resize(x, 1, 4);
  // Source coordinates -0.25, 0.25, 0.75, 1.25 clamp to [0, 1].
  EXPECT_DOUBLE_EQ(y[0], 0.0);
  EXPECT_DOUBLE_EQ(y[1], 0.25);
  EXPECT_DOUBLE_EQ(y[2], 0.75);
  EXPECT_DOUBLE_EQ(y[3], 1.0);
}

TEST(Bilinear, ConstantsAndMass) {
  const Tensor c(2, 3, 5, 0.7);
  const Tensor up = upsample2x(c);
  for (double v : up.values()) EXPECT_NEAR(v, 0.7, 1e-15);
  const Tensor x = random_tensor({1, 6, 7}, 90, 0.0, 1.0);
  EXPECT_NEAR(upsample2x(x).sum(), 4.0 * x.sum(), 1e-10);
  // Same size is the identity.
  EXPECT_EQ(bilinear_resize(x, 6, 7), x);
}

TEST(Bilinear, BackwardIsAdjoint) {
  for (auto [r, c] : {std::pair{8, 10}, std::pair{3, 3}, std::pair{12, 5}}) {
    const Tensor x = random_tensor({2, 4, 5}, 100);
    const Tensor g = random_tensor({2, r, c}, 101);
    const double lhs = dot(bilinear_resize(x, r, c), g);
    const double rhs = dot(x, bilinear_resize_backward(g, x.shape()));
    EXPECT_NEAR(lhs, rhs, 1e-11);
  }
}

TEST(GlobalAveragePool, ValueAndAdjoint) {
  const Tensor x = random_tensor({3, 4, 5}, 110);
  const Tensor y = global_average_pool(x);
  EXPECT_EQ(y.shape(), (Shape{3, 1, 1}));
  double s0 = 0;
  for (int r = 0; r < 4; ++r)
    for (int c = 0; c < 5; ++c) s0 += x.at(0, r, c);
  EXPECT_NEAR(y[0], s0 / 20.0, 1e-15);
  const Tensor g = random_tensor({3, 1, 1}, 111);
  EXPECT_NEAR(dot(y, g), dot(x, global_average_pool_backward(g, x.shape())), 1e-12);
}

TEST(Softmax, UniformAndStable) {
  const std::vector<double> uniform{2.0, 2.0, 2.0, 2.0};
  for (double p : softmax(uniform)) EXPECT_DOUBLE_EQ(p, 0.25);
  const std::vector<double> big{1000.0, 0.0, -1000.0};
  const auto p = softmax(big);
  EXPECT_NEAR(p[0], 1.0, 1e-15);
  EXPECT_TRUE(std::isfinite(p[2]));
  EXPECT_NEAR(p[0] + p[1] + p[2], 1.0, 1e-15);
}

TEST(InitOrthogonal, ScaledOrthogonalRowsOrColumns) {
  std::mt19937_64 rng(5);
  for (auto [out, in, k] : {std::tuple{8, 3, 9}, std::tuple{32, 512, 1}, std::tuple{64, 4, 1}}) {
    Parameter p("w", {out, in, k});
    const int fan_in = in * k;
    init_orthogonal(p, fan_in, rng);
    Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> w(p.value.data(), out,
                                                                                                fan_in);
    const Eigen::MatrixXd gram = out >= fan_in ? Eigen::MatrixXd(w.transpose() * w) : Eigen::MatrixXd(w * w.transpose());
    const double g2 = 2.0 * std::max(out, fan_in) / fan_in;
    EXPECT_TRUE(gram.isApprox(g2 * Eigen::MatrixXd::Identity(gram.rows(), gram.cols()), 1e-10));
  }
}

}  // namespace
}  // namespace cgdrcn
