// SPDX-License-Identifier: Apache-2.0
#include "cgdrcn/layers.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>

namespace cgdrcn {
namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMatrix>;
using ConstMatMap = Eigen::Map<const RowMatrix>;

// Upper bound on the im2col buffer, in doubles (~32 MB).
constexpr std::size_t kColumnBudget = std::size_t{4} << 20;

int conv_out_dim(int in, int k, int stride, int pad) { return (in + 2 * pad - k) / stride + 1; }

// Fills `col` (K x nrows*out_cols, row-major) for output rows [r0, r0+nrows).
void im2col(const Tensor& x, int k, int stride, int pad, int r0, int nrows, int out_cols, RowMatrix& col) {
  const int in_rows = x.rows();
  const int in_cols = x.cols();
  const int width = nrows * out_cols;
  col.resize(static_cast<Eigen::Index>(x.channels()) * k * k, width);
  for (int c = 0; c < x.channels(); ++c) {
    const double* src = x.plane(c);
    for (int ki = 0; ki < k; ++ki) {
      for (int kj = 0; kj < k; ++kj) {
        double* dst = col.data() + (static_cast<std::size_t>(c) * k * k + ki * k + kj) * width;
        for (int oy = 0; oy < nrows; ++oy) {
          const int iy = (r0 + oy) * stride - pad + ki;
          double* row = dst + static_cast<std::size_t>(oy) * out_cols;
          if (iy < 0 || iy >= in_rows) {
            std::fill(row, row + out_cols, 0.0);
            continue;
          }
          const double* src_row = src + static_cast<std::size_t>(iy) * in_cols;
          for (int ox = 0; ox < out_cols; ++ox) {
            const int ix = ox * stride - pad + kj;
            row[ox] = (ix >= 0 && ix < in_cols) ? src_row[ix] : 0.0;
          }
        }
      }
    }
  }
}

void col2im_add(const RowMatrix& col, int k, int stride, int pad, int r0, int nrows, int out_cols, Tensor& dx) {
  const int in_rows = dx.rows();
  const int in_cols = dx.cols();
  const int width = nrows * out_cols;
  for (int c = 0; c < dx.channels(); ++c) {
    double* dst = dx.plane(c);
    for (int ki = 0; ki < k; ++ki) {
      for (int kj = 0; kj < k; ++kj) {
        const double* src = col.data() + (static_cast<std::size_t>(c) * k * k + ki * k + kj) * width;
        for (int oy = 0; oy < nrows; ++oy) {
          const int iy = (r0 + oy) * stride - pad + ki;
          if (iy < 0 || iy >= in_rows) continue;
          const double* row = src + static_cast<std::size_t>(oy) * out_cols;
          double* dst_row = dst + static_cast<std::size_t>(iy) * in_cols;
          for (int ox = 0; ox < out_cols; ++ox) {
            const int ix = ox * stride - pad + kj;
            if (ix >= 0 && ix < in_cols) dst_row[ix] += row[ox];
          }
        }
      }
    }
  }
}

int rows_per_chunk(std::size_t kdim, int out_rows, int out_cols) {
  const std::size_t per_row = kdim * static_cast<std::size_t>(out_cols);
  const std::size_t n = std::max<std::size_t>(1, kColumnBudget / std::max<std::size_t>(1, per_row));
  return static_cast<int>(std::min<std::size_t>(n, static_cast<std::size_t>(out_rows)));
}

}  // namespace

// ---------------------------------------------------------------- Conv2d

Conv2d::Conv2d(std::string name, int in_channels, int out_channels, int kernel, int stride, int padding, bool bias)
    : in_(in_channels),
      out_(out_channels),
      k_(kernel),
      stride_(stride),
      pad_(padding < 0 ? kernel / 2 : padding),
      has_bias_(bias),
      weight_(name + ".weight", Shape{out_channels, in_channels, kernel * kernel}),
      bias_(name + ".bias", Shape{bias ? out_channels : 0, 1, 1}) {}

Shape Conv2d::output_shape(const Shape& in) const {
  if (in.channels != in_) {
    throw ShapeError(weight_.name + ": expected " + std::to_string(in_) + " input channels, got " +
                     std::to_string(in.channels));
  }
  return {out_, conv_out_dim(in.rows, k_, stride_, pad_), conv_out_dim(in.cols, k_, stride_, pad_)};
}

Tensor Conv2d::forward(const Tensor& x, Trace* trace) const {
  const Shape os = output_shape(x.shape());
  Tensor y(os);
  const Eigen::Index kdim = static_cast<Eigen::Index>(in_) * k_ * k_;
  ConstMatMap w(weight_.value.data(), out_, kdim);
  MatMap out(y.data(), out_, static_cast<Eigen::Index>(os.rows) * os.cols);

  if (k_ == 1 && stride_ == 1 && pad_ == 0) {
    ConstMatMap in(x.data(), in_, static_cast<Eigen::Index>(x.rows()) * x.cols());
    out.noalias() = w * in;
  } else {
    RowMatrix col;
    const int chunk = rows_per_chunk(static_cast<std::size_t>(kdim), os.rows, os.cols);
    for (int r0 = 0; r0 < os.rows; r0 += chunk) {
      const int nrows = std::min(chunk, os.rows - r0);
      im2col(x, k_, stride_, pad_, r0, nrows, os.cols, col);
      out.middleCols(static_cast<Eigen::Index>(r0) * os.cols, static_cast<Eigen::Index>(nrows) * os.cols)
          .noalias() = w * col;
    }
  }
  if (has_bias_) {
    for (int c = 0; c < out_; ++c) {
      const double b = bias_.value[c];
      double* p = y.plane(c);
      for (std::size_t i = 0, n = static_cast<std::size_t>(os.rows) * os.cols; i < n; ++i) p[i] += b;
    }
  }
  if (trace) trace->saved = {x};
  return y;
}

Tensor Conv2d::backward(const Tensor& grad_out, const Trace& trace) {
  const Tensor& x = trace.saved.at(0);
  const Shape os = output_shape(x.shape());
  if (grad_out.shape() != os) throw ShapeError(weight_.name + ": gradient shape mismatch");
  const Eigen::Index kdim = static_cast<Eigen::Index>(in_) * k_ * k_;
  const Eigen::Index hw = static_cast<Eigen::Index>(os.rows) * os.cols;
  ConstMatMap w(weight_.value.data(), out_, kdim);
  MatMap dw(weight_.grad.data(), out_, kdim);
  ConstMatMap g(grad_out.data(), out_, hw);

  if (has_bias_) {
    for (int c = 0; c < out_; ++c) bias_.grad[c] += g.row(c).sum();
  }

  Tensor dx(x.shape());
  if (k_ == 1 && stride_ == 1 && pad_ == 0) {
    ConstMatMap in(x.data(), in_, hw);
    dw.noalias() += g * in.transpose();
    MatMap dxm(dx.data(), in_, hw);
    dxm.noalias() = w.transpose() * g;
    return dx;
  }
  RowMatrix col;
  RowMatrix dcol;
  const int chunk = rows_per_chunk(static_cast<std::size_t>(kdim), os.rows, os.cols);
  for (int r0 = 0; r0 < os.rows; r0 += chunk) {
    const int nrows = std::min(chunk, os.rows - r0);
    const auto gblock =
        g.middleCols(static_cast<Eigen::Index>(r0) * os.cols, static_cast<Eigen::Index>(nrows) * os.cols);
    im2col(x, k_, stride_, pad_, r0, nrows, os.cols, col);
    dw.noalias() += gblock * col.transpose();
    dcol.noalias() = w.transpose() * gblock;
    col2im_add(dcol, k_, stride_, pad_, r0, nrows, os.cols, dx);
  }
  return dx;
}

void Conv2d::collect_parameters(std::vector<Parameter*>& out) {
  out.push_back(&weight_);
  if (has_bias_) out.push_back(&bias_);
}

std::string Conv2d::describe() const {
  return "conv(" + std::to_string(in_) + "," + std::to_string(out_) + "," + std::to_string(k_) +
         (stride_ != 1 ? ",s" + std::to_string(stride_) : "") + ")";
}

// ---------------------------------------------------------------- activations

Tensor Relu::forward(const Tensor& x, Trace* trace) const {
  Tensor y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] > 0.0 ? x[i] : 0.0;
  if (trace) trace->saved = {y};
  return y;
}

Tensor Relu::backward(const Tensor& grad_out, const Trace& trace) {
  const Tensor& y = trace.saved.at(0);
  require_same_shape(grad_out, y, "relu backward");
  Tensor dx(y.shape());
  for (std::size_t i = 0; i < y.size(); ++i) dx[i] = y[i] > 0.0 ? grad_out[i] : 0.0;
  return dx;
}

Tensor Sigmoid::forward(const Tensor& x, Trace* trace) const {
  Tensor y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    // Split on sign so exp never overflows.
    const double v = x[i];
    if (v >= 0) {
      y[i] = 1.0 / (1.0 + std::exp(-v));
    } else {
      const double e = std::exp(v);
      y[i] = e / (1.0 + e);
    }
  }
  if (trace) trace->saved = {y};
  return y;
}

Tensor Sigmoid::backward(const Tensor& grad_out, const Trace& trace) {
  const Tensor& y = trace.saved.at(0);
  require_same_shape(grad_out, y, "sigmoid backward");
  Tensor dx(y.shape());
  for (std::size_t i = 0; i < y.size(); ++i) dx[i] = grad_out[i] * y[i] * (1.0 - y[i]);
  return dx;
}

// ---------------------------------------------------------------- pooling

Shape MaxPool2d::output_shape(const Shape& in) const {
  return {in.channels, conv_out_dim(in.rows, k_, stride_, pad_), conv_out_dim(in.cols, k_, stride_, pad_)};
}

Tensor MaxPool2d::forward(const Tensor& x, Trace* trace) const {
  const Shape os = output_shape(x.shape());
  if (os.rows <= 0 || os.cols <= 0) throw ShapeError("maxpool: input too small " + to_string(x.shape()));
  Tensor y(os);
  Tensor argmax;
  if (trace) argmax = Tensor(os);
  for (int c = 0; c < os.channels; ++c) {
    const double* src = x.plane(c);
    for (int oy = 0; oy < os.rows; ++oy) {
      for (int ox = 0; ox < os.cols; ++ox) {
        double best = -std::numeric_limits<double>::infinity();
        int best_idx = -1;
        for (int ki = 0; ki < k_; ++ki) {
          const int iy = oy * stride_ - pad_ + ki;
          if (iy < 0 || iy >= x.rows()) continue;
          for (int kj = 0; kj < k_; ++kj) {
            const int ix = ox * stride_ - pad_ + kj;
            if (ix < 0 || ix >= x.cols()) continue;
            const double v = src[iy * x.cols() + ix];
            if (v > best) {
              best = v;
              best_idx = iy * x.cols() + ix;
            }
          }
        }
        y.at(c, oy, ox) = best;
        if (trace) argmax.at(c, oy, ox) = best_idx;
      }
    }
  }
  if (trace) trace->saved = {std::move(argmax), Tensor(x.shape())};
  return y;
}

Tensor MaxPool2d::backward(const Tensor& grad_out, const Trace& trace) {
  const Tensor& argmax = trace.saved.at(0);
  require_same_shape(grad_out, argmax, "maxpool backward");
  Tensor dx(trace.saved.at(1).shape());
  const std::size_t plane = static_cast<std::size_t>(argmax.rows()) * argmax.cols();
  for (int c = 0; c < argmax.channels(); ++c) {
    double* dst = dx.plane(c);
    for (std::size_t i = 0; i < plane; ++i) {
      dst[static_cast<std::size_t>(argmax.plane(c)[i])] += grad_out.plane(c)[i];
    }
  }
  return dx;
}

std::string MaxPool2d::describe() const {
  return "maxpool(" + std::to_string(k_) + ",s" + std::to_string(stride_) + ")";
}

// ---------------------------------------------------------------- affine

ChannelAffine::ChannelAffine(std::string name, int channels)
    : scale_(name + ".scale", Shape{channels, 1, 1}), shift_(name + ".shift", Shape{channels, 1, 1}) {
  scale_.value.fill(1.0);
}

Tensor ChannelAffine::forward(const Tensor& x, Trace* trace) const {
  if (x.channels() != scale_.value.channels()) throw ShapeError(scale_.name + ": channel mismatch");
  Tensor y(x.shape());
  const std::size_t plane = static_cast<std::size_t>(x.rows()) * x.cols();
  for (int c = 0; c < x.channels(); ++c) {
    const double a = scale_.value[c];
    const double b = shift_.value[c];
    for (std::size_t i = 0; i < plane; ++i) y.plane(c)[i] = a * x.plane(c)[i] + b;
  }
  if (trace) trace->saved = {x};
  return y;
}

Tensor ChannelAffine::backward(const Tensor& grad_out, const Trace& trace) {
  const Tensor& x = trace.saved.at(0);
  require_same_shape(grad_out, x, "affine backward");
  Tensor dx(x.shape());
  const std::size_t plane = static_cast<std::size_t>(x.rows()) * x.cols();
  for (int c = 0; c < x.channels(); ++c) {
    const double a = scale_.value[c];
    double ds = 0.0;
    double db = 0.0;
    for (std::size_t i = 0; i < plane; ++i) {
      const double g = grad_out.plane(c)[i];
      ds += g * x.plane(c)[i];
      db += g;
      dx.plane(c)[i] = a * g;
    }
    scale_.grad[c] += ds;
    shift_.grad[c] += db;
  }
  return dx;
}

void ChannelAffine::collect_parameters(std::vector<Parameter*>& out) {
  out.push_back(&scale_);
  out.push_back(&shift_);
}

// ---------------------------------------------------------------- containers

Tensor Sequential::forward(const Tensor& x, Trace* trace) const {
  if (trace) trace->children.assign(layers_.size(), Trace{});
  if (layers_.empty()) return x;
  Tensor h = layers_[0]->forward(x, trace ? &trace->children[0] : nullptr);
  for (std::size_t i = 1; i < layers_.size(); ++i) {
    h = layers_[i]->forward(h, trace ? &trace->children[i] : nullptr);
  }
  return h;
}

Tensor Sequential::backward(const Tensor& grad_out, const Trace& trace) {
  if (layers_.empty()) return grad_out;
  Tensor g = grad_out;
  for (std::size_t i = layers_.size(); i-- > 0;) g = layers_[i]->backward(g, trace.children.at(i));
  return g;
}

Shape Sequential::output_shape(const Shape& in) const {
  Shape s = in;
  for (const auto& l : layers_) s = l->output_shape(s);
  return s;
}

void Sequential::collect_parameters(std::vector<Parameter*>& out) {
  for (auto& l : layers_) l->collect_parameters(out);
}

std::string Sequential::describe() const {
  std::string s = "{";
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    if (i) s += "-";
    s += layers_[i]->describe();
  }
  return s + "}";
}

Bottleneck::Bottleneck(const std::string& name, int in_channels, int width, int stride) {
  const int out = 4 * width;
  body_.emplace<Conv2d>(name + ".conv1", in_channels, width, 1, 1, 0, false)
      .emplace<ChannelAffine>(name + ".bn1", width)
      .emplace<Relu>()
      .emplace<Conv2d>(name + ".conv2", width, width, 3, stride, 1, false)
      .emplace<ChannelAffine>(name + ".bn2", width)
      .emplace<Relu>()
      .emplace<Conv2d>(name + ".conv3", width, out, 1, 1, 0, false)
      .emplace<ChannelAffine>(name + ".bn3", out);
  if (stride != 1 || in_channels != out) {
    shortcut_.emplace<Conv2d>(name + ".downsample", in_channels, out, 1, stride, 0, false)
        .emplace<ChannelAffine>(name + ".downsample_bn", out);
  }
}

Tensor Bottleneck::forward(const Tensor& x, Trace* trace) const {
  if (trace) trace->children.assign(2, Trace{});
  Tensor y = body_.forward(x, trace ? &trace->children[0] : nullptr);
  if (shortcut_.empty()) {
    y += x;
  } else {
    y += shortcut_.forward(x, trace ? &trace->children[1] : nullptr);
  }
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = std::max(0.0, y[i]);
  if (trace) trace->saved = {y};
  return y;
}

Tensor Bottleneck::backward(const Tensor& grad_out, const Trace& trace) {
  const Tensor& y = trace.saved.at(0);
  Tensor g(y.shape());
  for (std::size_t i = 0; i < y.size(); ++i) g[i] = y[i] > 0.0 ? grad_out[i] : 0.0;
  Tensor dx = body_.backward(g, trace.children.at(0));
  if (shortcut_.empty()) {
    dx += g;
  } else {
    dx += shortcut_.backward(g, trace.children.at(1));
  }
  return dx;
}

void Bottleneck::collect_parameters(std::vector<Parameter*>& out) {
  body_.collect_parameters(out);
  shortcut_.collect_parameters(out);
}

std::string Bottleneck::describe() const { return "bottleneck" + body_.describe(); }

// ---------------------------------------------------------------- resampling

namespace {

struct Tap {
  int lo;
  int hi;
  double w_hi;  // weight of `hi`; `lo` gets 1 - w_hi
};

std::vector<Tap> bilinear_taps(int in, int out) {
  std::vector<Tap> taps(static_cast<std::size_t>(out));
  const double scale = static_cast<double>(in) / out;
  for (int o = 0; o < out; ++o) {
    double src = (o + 0.5) * scale - 0.5;
    if (src < 0.0) src = 0.0;
    int lo = static_cast<int>(std::floor(src));
    lo = std::min(lo, in - 1);
    const int hi = std::min(lo + 1, in - 1);
    taps[static_cast<std::size_t>(o)] = {lo, hi, src - lo};
  }
  return taps;
}

}  // namespace

Tensor bilinear_resize(const Tensor& x, int rows, int cols) {
  if (rows <= 0 || cols <= 0 || x.rows() <= 0 || x.cols() <= 0) {
    throw ShapeError("bilinear_resize: empty extent");
  }
  const auto ty = bilinear_taps(x.rows(), rows);
  const auto tx = bilinear_taps(x.cols(), cols);
  Tensor y(x.channels(), rows, cols);
  for (int c = 0; c < x.channels(); ++c) {
    const double* src = x.plane(c);
    double* dst = y.plane(c);
    for (int r = 0; r < rows; ++r) {
      const Tap& a = ty[static_cast<std::size_t>(r)];
      const double* r0 = src + static_cast<std::size_t>(a.lo) * x.cols();
      const double* r1 = src + static_cast<std::size_t>(a.hi) * x.cols();
      for (int q = 0; q < cols; ++q) {
        const Tap& b = tx[static_cast<std::size_t>(q)];
        const double top = (1.0 - b.w_hi) * r0[b.lo] + b.w_hi * r0[b.hi];
        const double bot = (1.0 - b.w_hi) * r1[b.lo] + b.w_hi * r1[b.hi];
        dst[static_cast<std::size_t>(r) * cols + q] = (1.0 - a.w_hi) * top + a.w_hi * bot;
      }
    }
  }
  return y;
}

Tensor bilinear_resize_backward(const Tensor& grad_out, const Shape& input_shape) {
  const int rows = grad_out.rows();
  const int cols = grad_out.cols();
  const auto ty = bilinear_taps(input_shape.rows, rows);
  const auto tx = bilinear_taps(input_shape.cols, cols);
  Tensor dx(input_shape);
  for (int c = 0; c < input_shape.channels; ++c) {
    const double* g = grad_out.plane(c);
    double* dst = dx.plane(c);
    for (int r = 0; r < rows; ++r) {
      const Tap& a = ty[static_cast<std::size_t>(r)];
      double* r0 = dst + static_cast<std::size_t>(a.lo) * input_shape.cols;
      double* r1 = dst + static_cast<std::size_t>(a.hi) * input_shape.cols;
      for (int q = 0; q < cols; ++q) {
        const Tap& b = tx[static_cast<std::size_t>(q)];
        const double v = g[static_cast<std::size_t>(r) * cols + q];
        const double top = (1.0 - a.w_hi) * v;
        const double bot = a.w_hi * v;
        r0[b.lo] += (1.0 - b.w_hi) * top;
        r0[b.hi] += b.w_hi * top;
        r1[b.lo] += (1.0 - b.w_hi) * bot;
        r1[b.hi] += b.w_hi * bot;
      }
    }
  }
  return dx;
}

Tensor global_average_pool(const Tensor& x) {
  Tensor y(x.channels(), 1, 1);
  const std::size_t plane = static_cast<std::size_t>(x.rows()) * x.cols();
  for (int c = 0; c < x.channels(); ++c) {
    double s = 0.0;
    for (std::size_t i = 0; i < plane; ++i) s += x.plane(c)[i];
    y[static_cast<std::size_t>(c)] = s / static_cast<double>(plane);
  }
  return y;
}

Tensor global_average_pool_backward(const Tensor& grad_out, const Shape& input_shape) {
  Tensor dx(input_shape);
  const std::size_t plane = static_cast<std::size_t>(input_shape.rows) * input_shape.cols;
  for (int c = 0; c < input_shape.channels; ++c) {
    const double g = grad_out[static_cast<std::size_t>(c)] / static_cast<double>(plane);
    std::fill(dx.plane(c), dx.plane(c) + plane, g);
  }
  return dx;
}

std::vector<double> softmax(std::span<const double> logits) {
  std::vector<double> p(logits.begin(), logits.end());
  if (p.empty()) return p;
  const double m = *std::max_element(p.begin(), p.end());
  double z = 0.0;
  for (double& v : p) {
    v = std::exp(v - m);
    z += v;
  }
  for (double& v : p) v /= z;
  return p;
}

void init_orthogonal(Parameter& weight, int fan_in, std::mt19937_64& rng) {
  const Eigen::Index rows = weight.value.channels();
  const Eigen::Index cols = static_cast<Eigen::Index>(weight.value.size()) / std::max<Eigen::Index>(rows, 1);
  if (rows == 0 || cols == 0) return;
  std::normal_distribution<double> normal(0.0, 1.0);
  const bool tall = rows >= cols;
  Eigen::MatrixXd a(std::max(rows, cols), std::min(rows, cols));
  for (Eigen::Index j = 0; j < a.cols(); ++j)
    for (Eigen::Index i = 0; i < a.rows(); ++i) a(i, j) = normal(rng);
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(a);
  Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(a.rows(), a.cols());
  // Sign-fix so the draw is uniform over the orthogonal group.
  const Eigen::MatrixXd r = qr.matrixQR().topRows(a.cols()).triangularView<Eigen::Upper>();
  for (Eigen::Index j = 0; j < q.cols(); ++j) {
    if (r(j, j) < 0) q.col(j) *= -1.0;
  }
  // Orthonormal entries have RMS 1/sqrt(max(rows, cols)); rescale to He variance 2/fan_in.
  const double gain = std::sqrt(2.0 * static_cast<double>(std::max(rows, cols)) / std::max(fan_in, 1));
  MatMap w(weight.value.data(), rows, cols);
  if (tall) {
    w = gain * q;
  } else {
    w = gain * q.transpose();
  }
}

std::size_t parameter_count(Layer& layer) {
  std::vector<Parameter*> params;
  layer.collect_parameters(params);
  std::size_t n = 0;
  for (const Parameter* p : params) n += p->value.size();
  return n;
}

}  // namespace cgdrcn
