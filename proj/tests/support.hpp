// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "cgdrcn/annotations.hpp"
#include "cgdrcn/layers.hpp"
#include "cgdrcn/tensor.hpp"

namespace cgdrcn::testing {

inline Tensor random_tensor(Shape s, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor t(s);
  for (double& v : t.values()) v = u(rng);
  return t;
}

inline double dot(const Tensor& a, const Tensor& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

/// |a - b| / max(|a|, |b|, floor)
inline double relative_error(double a, double b, double floor = 1e-7) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

/// Fresh scratch directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("cgdrcn_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

// Brute force: every cell of the truncation window, normalized by the 2-D window sum.
inline Tensor oracle_density(const std::vector<HeadAnnotation>& heads, int w, int h, double sigma_px, int scale) {
  const int rows = (h + scale - 1) / scale;
  const int cols = (w + scale - 1) / scale;
  Tensor out(1, rows, cols);
  for (const HeadAnnotation& head : heads) {
    const double s = sigma_px / scale;
    const double cx = head.x / scale;
    const double cy = head.y / scale;
    const double radius = 3.0 * s;
    const auto in_window = [&](int r, int c) {
      const int lo_c = std::max(0, std::min(cols - 1, static_cast<int>(std::floor(cx - radius))));
      const int hi_c = std::max(0, std::min(cols - 1, static_cast<int>(std::floor(cx + radius))));
      const int lo_r = std::max(0, std::min(rows - 1, static_cast<int>(std::floor(cy - radius))));
      const int hi_r = std::max(0, std::min(rows - 1, static_cast<int>(std::floor(cy + radius))));
      return c >= lo_c && c <= hi_c && r >= lo_r && r <= hi_r;
    };
    const auto kernel = [&](int r, int c) {
      const double dx = c + 0.5 - cx;
      const double dy = r + 0.5 - cy;
      return std::exp(-(dx * dx + dy * dy) / (2 * s * s));
    };
    double z = 0.0;
    for (int r = 0; r < rows; ++r)
      for (int c = 0; c < cols; ++c)
        if (in_window(r, c)) z += kernel(r, c);
    for (int r = 0; r < rows; ++r)
      for (int c = 0; c < cols; ++c)
        if (in_window(r, c)) out.at(0, r, c) += kernel(r, c) / z;
  }
  return out;
}

inline std::filesystem::path fixture_root() { return std::filesystem::path(CGDRCN_FIXTURE_DIR); }

}  // namespace cgdrcn::testing
