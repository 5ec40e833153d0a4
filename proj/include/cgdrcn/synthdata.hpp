// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "cgdrcn/annotations.hpp"
#include "cgdrcn/tensor.hpp"

namespace cgdrcn {

enum class Placement { uniform, clustered };

struct SceneSpec {
  int width = 128;
  int height = 128;
  int n_heads = 0;
  double radius_min = 2.0;
  double radius_max = 4.0;
  Weather weather = Weather::normal;
  Placement placement = Placement::uniform;
  std::uint64_t seed = 0;
  std::string id = "scene";
  std::string scene_tag = "synthetic";
  Split split = Split::train;
  bool distractor = false;
};

/// At most one head per this many square pixels.
inline constexpr double kMinPixelsPerHead = 16.0;

class SceneError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct Scene {
  Tensor image;  // 3 x H x W, values are multiples of 1/255
  AnnotatedImage annotation;
};

/// Discs on a noisy gradient background, with a global tint for non-normal weather.
Scene generate_scene(const SceneSpec& spec);

/// The bundled 12-image fixture: every density band, every split and every weather class.
std::vector<SceneSpec> fixture_specs();

/// `n` scenes with head counts uniform in [min_heads, max_heads], random weather, and a
/// train/val/test assignment of 3:1:1 by index.
std::vector<SceneSpec> random_specs(int n, int min_heads, int max_heads, int size, std::uint64_t seed);

}  // namespace cgdrcn
