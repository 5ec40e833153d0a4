// SPDX-License-Identifier: Apache-2.0
#include "cgdrcn/densitygen.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <istream>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>
#include <ostream>
#include <vector>

namespace cgdrcn {
namespace {

void validate(double sigma, int scale) {
  if (!(sigma > 0.0) || !std::isfinite(sigma)) throw DensityError("sigma must be positive, got " + std::to_string(sigma));
  if (std::find(kValidScales.begin(), kValidScales.end(), scale) == kValidScales.end()) {
    throw DensityError("scale must be one of 1, 4, 8, 16, 32; got " + std::to_string(scale));
  }
}

int grid_extent(int image_extent, int scale) { return (image_extent + scale - 1) / scale; }

void put_u32(std::ostream& out, std::uint32_t v) {
  const unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                              static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t get_u32(std::istream& in) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4)) throw DensityError("density file truncated");
  return b[0] | (b[1] << 8) | (b[2] << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

}  // namespace

double adaptive_sigma(const HeadAnnotation& head) {
  return std::clamp(0.3 * std::max(head.width, head.height), 2.0, 15.0);
}

DensityMap generate_density_map(std::span<const HeadAnnotation> heads, int image_width, int image_height,
                                const DensityConfig& config, int scale) {
  validate(config.sigma, scale);
  if (image_width <= 0 || image_height <= 0) throw DensityError("image dims must be positive");
  const int rows = grid_extent(image_height, scale);
  const int cols = grid_extent(image_width, scale);
  DensityMap map{Tensor(1, rows, cols), scale};

  std::vector<double> wx;
  std::vector<double> wy;
  for (const HeadAnnotation& h : heads) {
    const double sigma = config.mode == SigmaMode::adaptive ? adaptive_sigma(h) : config.sigma;
    const double s = sigma / scale;
    const double cx = h.x / scale;
    const double cy = h.y / scale;
    const double r = kTruncationRadius * s;
    const int c0 = std::clamp(static_cast<int>(std::floor(cx - r)), 0, cols - 1);
    const int c1 = std::clamp(static_cast<int>(std::floor(cx + r)), 0, cols - 1);
    const int r0 = std::clamp(static_cast<int>(std::floor(cy - r)), 0, rows - 1);
    const int r1 = std::clamp(static_cast<int>(std::floor(cy + r)), 0, rows - 1);

    // The kernel is separable, so the window is an outer product of 1-D weights.
    const double inv = 1.0 / (2.0 * s * s);
    wx.assign(static_cast<std::size_t>(c1 - c0 + 1), 0.0);
    wy.assign(static_cast<std::size_t>(r1 - r0 + 1), 0.0);
    double sx = 0.0;
    double sy = 0.0;
    for (int c = c0; c <= c1; ++c) {
      const double d = c + 0.5 - cx;
      sx += wx[static_cast<std::size_t>(c - c0)] = std::exp(-d * d * inv);
    }
    for (int q = r0; q <= r1; ++q) {
      const double d = q + 0.5 - cy;
      sy += wy[static_cast<std::size_t>(q - r0)] = std::exp(-d * d * inv);
    }
    if (!(sx > 0.0) || !(sy > 0.0)) {
      // Kernel underflowed everywhere in the window: all mass goes to the host cell.
      const int hc = std::clamp(static_cast<int>(std::floor(cx)), 0, cols - 1);
      const int hr = std::clamp(static_cast<int>(std::floor(cy)), 0, rows - 1);
      map.values.at(0, hr, hc) += 1.0;
      continue;
    }
    const double norm = 1.0 / (sx * sy);
    for (int q = r0; q <= r1; ++q) {
      const double fy = wy[static_cast<std::size_t>(q - r0)] * norm;
      for (int c = c0; c <= c1; ++c) map.values.at(0, q, c) += fy * wx[static_cast<std::size_t>(c - c0)];
    }
  }
  return map;
}

DensityMap generate_density_map(std::span<const HeadAnnotation> heads, int image_width, int image_height,
                                double sigma, int scale) {
  return generate_density_map(heads, image_width, image_height, DensityConfig{sigma, SigmaMode::fixed}, scale);
}

std::map<int, DensityMap> pyramid_targets(std::span<const HeadAnnotation> heads, int image_width, int image_height,
                                          const DensityConfig& config) {
  std::map<int, DensityMap> out;
  for (int level = 3; level <= 6; ++level) {
    out.emplace(level, generate_density_map(heads, image_width, image_height, config, level_scale(level)));
  }
  return out;
}

void write_density_binary(std::ostream& out, const DensityMap& map) {
  out.write(kDensityMagic, 8);
  put_u32(out, static_cast<std::uint32_t>(map.rows()));
  put_u32(out, static_cast<std::uint32_t>(map.cols()));
  for (double v : map.values.values()) {
    const float f = static_cast<float>(v);
    std::uint32_t bits = std::bit_cast<std::uint32_t>(f);
    put_u32(out, bits);
  }
}

DensityMap read_density_binary(std::istream& in) {
  char magic[8];
  if (!in.read(magic, 8) || std::memcmp(magic, kDensityMagic, 8) != 0) throw DensityError("bad density file magic");
  const std::uint32_t rows = get_u32(in);
  const std::uint32_t cols = get_u32(in);
  DensityMap map{Tensor(1, static_cast<int>(rows), static_cast<int>(cols)), 1};
  for (double& v : map.values.values()) v = std::bit_cast<float>(get_u32(in));
  return map;
}

void write_density_image(const std::string& path, const DensityMap& map) {
  cv::Mat gray(map.rows(), map.cols(), CV_8UC1);
  double peak = 0.0;
  for (double v : map.values.values()) peak = std::max(peak, v);
  for (int r = 0; r < map.rows(); ++r) {
    for (int c = 0; c < map.cols(); ++c) {
      const double v = peak > 0 ? std::clamp(map.values.at(0, r, c) / peak, 0.0, 1.0) : 0.0;
      gray.at<unsigned char>(r, c) = static_cast<unsigned char>(std::lround(255.0 * v));
    }
  }
  cv::Mat color;
  cv::applyColorMap(gray, color, cv::COLORMAP_JET);
  if (!cv::imwrite(path, color)) throw DensityError("could not write " + path);
}

}  // namespace cgdrcn
