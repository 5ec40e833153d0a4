// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <new>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace cgdrcn {

/// Shape of a single-sample feature map: channels x rows x cols.
struct Shape {
  int channels = 0;
  int rows = 0;
  int cols = 0;

  std::size_t numel() const {
    return static_cast<std::size_t>(channels) * rows * cols;
  }
  friend bool operator==(const Shape&, const Shape&) = default;
};

std::string to_string(const Shape& s);

/// Cache-line aligned storage. Vectorized kernels choose their peeling from the pointer
/// alignment, so fixing it keeps results bitwise reproducible.
template <class T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t kAlignment{64};

  AlignedAllocator() = default;
  template <class U>
  AlignedAllocator(const AlignedAllocator<U>&) noexcept {}

  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlignment)); }
  void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, kAlignment); }

  friend bool operator==(const AlignedAllocator&, const AlignedAllocator&) = default;
};

class ShapeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Dense CHW tensor of doubles. One sample; batches are handled by callers.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0)
      : shape_(shape), data_(shape.numel(), fill) {}
  Tensor(int channels, int rows, int cols, double fill = 0.0)
      : Tensor(Shape{channels, rows, cols}, fill) {}

  const Shape& shape() const { return shape_; }
  int channels() const { return shape_.channels; }
  int rows() const { return shape_.rows; }
  int cols() const { return shape_.cols; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::span<double> values() { return data_; }
  std::span<const double> values() const { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  double& at(int c, int r, int col) {
    return data_[(static_cast<std::size_t>(c) * shape_.rows + r) * shape_.cols + col];
  }
  double at(int c, int r, int col) const {
    return data_[(static_cast<std::size_t>(c) * shape_.rows + r) * shape_.cols + col];
  }

  /// Pointer to the start of one channel plane.
  double* plane(int c) { return data_.data() + static_cast<std::size_t>(c) * shape_.rows * shape_.cols; }
  const double* plane(int c) const {
    return data_.data() + static_cast<std::size_t>(c) * shape_.rows * shape_.cols;
  }

  void fill(double v);
  double sum() const;
  double mean() const;

  Tensor& operator+=(const Tensor& other);
  Tensor& operator-=(const Tensor& other);
  Tensor& operator*=(double s);

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  Shape shape_;
  std::vector<double, AlignedAllocator<double>> data_;
};

Tensor operator+(Tensor a, const Tensor& b);
Tensor operator-(Tensor a, const Tensor& b);
Tensor hadamard(const Tensor& a, const Tensor& b);

/// Channel-wise concatenation; all inputs must share rows and cols.
Tensor concat_channels(std::span<const Tensor* const> parts);

/// Splits `t` into consecutive channel blocks of the given widths.
std::vector<Tensor> split_channels(const Tensor& t, std::span<const int> widths);

void require_same_shape(const Tensor& a, const Tensor& b, const char* what);

}  // namespace cgdrcn
