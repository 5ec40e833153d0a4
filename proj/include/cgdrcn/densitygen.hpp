// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <map>
#include <span>
#include <stdexcept>
#include <string>

#include "cgdrcn/annotations.hpp"
#include "cgdrcn/tensor.hpp"

namespace cgdrcn {

/// Single-channel density grid; `values` is 1 x rows x cols.
struct DensityMap {
  Tensor values;
  int scale = 1;

  int rows() const { return values.rows(); }
  int cols() const { return values.cols(); }
  double count() const { return values.sum(); }
};

enum class SigmaMode { fixed, adaptive };

struct DensityConfig {
  double sigma = 4.0;  // image pixels, used in fixed mode
  SigmaMode mode = SigmaMode::fixed;
};

class DensityError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

inline constexpr std::array<int, 5> kValidScales{1, 4, 8, 16, 32};
/// Gaussian support radius in units of the grid-space standard deviation.
inline constexpr double kTruncationRadius = 3.0;

/// sigma = 0.3 * max(width, height) clamped to [2, 15].
double adaptive_sigma(const HeadAnnotation& head);

/// Sum of per-head Gaussians, each truncated at 3 sigma and renormalized to unit in-grid mass.
/// Grid dims are ceil(image dim / scale).
DensityMap generate_density_map(std::span<const HeadAnnotation> heads, int image_width, int image_height,
                                const DensityConfig& config, int scale);

DensityMap generate_density_map(std::span<const HeadAnnotation> heads, int image_width, int image_height,
                                double sigma, int scale);

/// Pyramid level (3..6) to downsampling factor (4..32).
constexpr int level_scale(int level) { return 1 << (level - 1); }

/// Targets for levels 3, 4, 5, 6 at scales 4, 8, 16, 32, each generated directly at its scale.
std::map<int, DensityMap> pyramid_targets(std::span<const HeadAnnotation> heads, int image_width, int image_height,
                                          const DensityConfig& config);

// Binary grid: 8-byte magic "CGDMAP01", rows and cols as little-endian uint32,
// then rows*cols little-endian float32 values in row-major order.
inline constexpr char kDensityMagic[9] = "CGDMAP01";

void write_density_binary(std::ostream& out, const DensityMap& map);
DensityMap read_density_binary(std::istream& in);

/// Writes a colorized PNG of the map (values normalized to the map's maximum).
void write_density_image(const std::string& path, const DensityMap& map);

}  // namespace cgdrcn
