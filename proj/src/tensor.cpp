// SPDX-License-Identifier: Apache-2.0
#include "cgdrcn/tensor.hpp"

#include <algorithm>
#include <numeric>

namespace cgdrcn {

std::string to_string(const Shape& s) {
  return std::to_string(s.channels) + "x" + std::to_string(s.rows) + "x" + std::to_string(s.cols);
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(what) + ": shape mismatch " + to_string(a.shape()) + " vs " +
                     to_string(b.shape()));
  }
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

double Tensor::sum() const {
  // Plain left-to-right accumulation keeps results reproducible.
  double s = 0.0;
  for (double v : data_) s += v;
  return s;
}

double Tensor::mean() const { return data_.empty() ? 0.0 : sum() / static_cast<double>(data_.size()); }

Tensor& Tensor::operator+=(const Tensor& other) {
  require_same_shape(*this, other, "operator+=");
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
  return *this;
}

Tensor& Tensor::operator-=(const Tensor& other) {
  require_same_shape(*this, other, "operator-=");
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= other.data_[i];
  return *this;
}

Tensor& Tensor::operator*=(double s) {
  for (double& v : data_) v *= s;
  return *this;
}

Tensor operator+(Tensor a, const Tensor& b) { return a += b; }
Tensor operator-(Tensor a, const Tensor& b) { return a -= b; }

Tensor hadamard(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "hadamard");
  Tensor out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] * b[i];
  return out;
}

Tensor concat_channels(std::span<const Tensor* const> parts) {
  if (parts.empty()) return {};
  const int rows = parts.front()->rows();
  const int cols = parts.front()->cols();
  int channels = 0;
  for (const Tensor* p : parts) {
    if (p->rows() != rows || p->cols() != cols) {
      throw ShapeError("concat_channels: spatial mismatch " + to_string(p->shape()) + " vs " +
                       to_string(parts.front()->shape()));
    }
    channels += p->channels();
  }
  Tensor out(channels, rows, cols);
  double* dst = out.data();
  for (const Tensor* p : parts) dst = std::copy(p->data(), p->data() + p->size(), dst);
  return out;
}

std::vector<Tensor> split_channels(const Tensor& t, std::span<const int> widths) {
  const int total = std::accumulate(widths.begin(), widths.end(), 0);
  if (total != t.channels()) {
    throw ShapeError("split_channels: widths sum to " + std::to_string(total) + " but tensor has " +
                     std::to_string(t.channels()) + " channels");
  }
  std::vector<Tensor> out;
  out.reserve(widths.size());
  int c0 = 0;
  for (int w : widths) {
    Tensor part(w, t.rows(), t.cols());
    std::copy(t.plane(c0), t.plane(c0) + part.size(), part.data());
    out.push_back(std::move(part));
    c0 += w;
  }
  return out;
}

}  // namespace cgdrcn
