// SPDX-License-Identifier: Apache-2.0
#include "cgdrcn/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <random>
#include <vector>

namespace cgdrcn {
namespace {

double quantize(double v) { return std::round(std::clamp(v, 0.0, 1.0) * 255.0) / 255.0; }

void paint_disc(Tensor& img, double cx, double cy, double radius, const double rgb[3]) {
  const int r0 = std::max(0, static_cast<int>(std::floor(cy - radius)));
  const int r1 = std::min(img.rows() - 1, static_cast<int>(std::ceil(cy + radius)));
  const int c0 = std::max(0, static_cast<int>(std::floor(cx - radius)));
  const int c1 = std::min(img.cols() - 1, static_cast<int>(std::ceil(cx + radius)));
  for (int r = r0; r <= r1; ++r) {
    for (int c = c0; c <= c1; ++c) {
      const double dx = c + 0.5 - cx;
      const double dy = r + 0.5 - cy;
      if (dx * dx + dy * dy <= radius * radius) {
        for (int ch = 0; ch < 3; ++ch) img.at(ch, r, c) = rgb[ch];
      }
    }
  }
}

void apply_weather(Tensor& img, Weather weather, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const std::size_t plane = static_cast<std::size_t>(img.rows()) * img.cols();
  switch (weather) {
    case Weather::normal: return;
    case Weather::fog_haze:
      // Contrast reduction toward light gray.
      for (double& v : img.values()) v = 0.45 * v + 0.55 * 0.8;
      return;
    case Weather::rain:
      for (int ch = 0; ch < 3; ++ch) {
        const double tint = ch == 2 ? 0.08 : -0.05;
        for (std::size_t i = 0; i < plane; ++i) img.plane(ch)[i] = 0.8 * img.plane(ch)[i] + tint + 0.05;
      }
      // Diagonal streaks.
      for (int s = 0, n = img.cols() / 4; s < n; ++s) {
        int c = static_cast<int>(unit(rng) * img.cols());
        const int r_start = static_cast<int>(unit(rng) * img.rows());
        for (int k = 0; k < 8 && r_start + k < img.rows(); ++k, ++c) {
          if (c >= img.cols()) break;
          for (int ch = 0; ch < 3; ++ch) img.at(ch, r_start + k, c) = std::min(1.0, img.at(ch, r_start + k, c) + 0.25);
        }
      }
      return;
    case Weather::snow:
      for (std::size_t i = 0; i < plane; ++i) {
        if (unit(rng) < 0.03) {
          for (int ch = 0; ch < 3; ++ch) img.plane(ch)[i] = 1.0;
        }
      }
      return;
  }
}

}  // namespace

Scene generate_scene(const SceneSpec& spec) {
  if (spec.width <= 0 || spec.height <= 0) throw SceneError("scene dims must be positive");
  if (spec.n_heads < 0) throw SceneError("n_heads must be >= 0");
  if (!(spec.radius_min > 0) || spec.radius_max < spec.radius_min) throw SceneError("bad head radius range");
  const double area = static_cast<double>(spec.width) * spec.height;
  if (spec.n_heads > 0 && area / spec.n_heads < kMinPixelsPerHead) {
    throw SceneError("cannot place " + std::to_string(spec.n_heads) + " heads in a " + std::to_string(spec.width) +
                     "x" + std::to_string(spec.height) + " scene (density cap 1 per " +
                     std::to_string(static_cast<int>(kMinPixelsPerHead)) + " px^2)");
  }

  std::mt19937_64 rng(spec.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);

  Scene scene;
  scene.image = Tensor(3, spec.height, spec.width);
  const double base[3] = {0.35 + 0.3 * unit(rng), 0.35 + 0.3 * unit(rng), 0.35 + 0.3 * unit(rng)};
  for (int r = 0; r < spec.height; ++r) {
    const double shade = 0.15 * static_cast<double>(r) / spec.height;
    for (int c = 0; c < spec.width; ++c) {
      for (int ch = 0; ch < 3; ++ch) scene.image.at(ch, r, c) = base[ch] + shade + 0.03 * normal(rng);
    }
  }

  std::vector<std::pair<double, double>> centers;
  if (spec.placement == Placement::clustered && spec.n_heads > 0) {
    const int n_clusters = 1 + static_cast<int>(unit(rng) * 3.0);
    const double spread = std::min(spec.width, spec.height) / 6.0;
    std::vector<std::pair<double, double>> hubs;
    for (int k = 0; k < n_clusters; ++k) hubs.emplace_back(unit(rng) * spec.width, unit(rng) * spec.height);
    while (static_cast<int>(centers.size()) < spec.n_heads) {
      const auto& hub = hubs[centers.size() % hubs.size()];
      const double x = hub.first + spread * normal(rng);
      const double y = hub.second + spread * normal(rng);
      if (x >= 0 && x < spec.width && y >= 0 && y < spec.height) centers.emplace_back(x, y);
    }
  } else {
    for (int k = 0; k < spec.n_heads; ++k) centers.emplace_back(unit(rng) * spec.width, unit(rng) * spec.height);
  }

  AnnotatedImage& ann = scene.annotation;
  ann.id = spec.id;
  ann.width = spec.width;
  ann.height = spec.height;
  ann.split = spec.split;
  ann.labels = ImageLabels{spec.scene_tag, spec.weather, spec.distractor};
  for (const auto& [x, y] : centers) {
    const double radius = spec.radius_min + (spec.radius_max - spec.radius_min) * unit(rng);
    const double tone = 0.05 + 0.2 * unit(rng);
    const double rgb[3] = {tone + 0.1, tone + 0.05, tone};
    paint_disc(scene.image, x, y, radius, rgb);
    HeadAnnotation h;
    // Annotation files carry two decimals; store exactly what a reader would parse back.
    h.x = std::round(x * 100.0) / 100.0;
    h.y = std::round(y * 100.0) / 100.0;
    h.width = std::round(2.0 * radius * 100.0) / 100.0;
    h.height = h.width;
    const double u = unit(rng);
    h.occlusion = u < 0.7 ? Occlusion::visible : (u < 0.9 ? Occlusion::partial : Occlusion::full);
    h.blur = unit(rng) < 0.2 ? Blur::blurred : Blur::none;
    h.x = std::min(h.x, static_cast<double>(spec.width));
    h.y = std::min(h.y, static_cast<double>(spec.height));
    ann.heads.push_back(h);
  }

  apply_weather(scene.image, spec.weather, rng);
  for (double& v : scene.image.values()) v = quantize(v);
  return scene;
}

std::vector<SceneSpec> fixture_specs() {
  struct Row {
    const char* id;
    int n;
    Split split;
    Weather weather;
    Placement placement;
    bool distractor;
  };
  static constexpr Row kRows[] = {
      {"f00", 0, Split::train, Weather::normal, Placement::uniform, true},
      {"f01", 7, Split::train, Weather::rain, Placement::uniform, false},
      {"f02", 12, Split::val, Weather::normal, Placement::uniform, false},
      {"f03", 30, Split::test, Weather::snow, Placement::uniform, false},
      {"f04", 50, Split::train, Weather::fog_haze, Placement::uniform, false},
      {"f05", 51, Split::val, Weather::normal, Placement::uniform, false},
      {"f06", 80, Split::train, Weather::rain, Placement::clustered, false},
      {"f07", 120, Split::test, Weather::normal, Placement::uniform, false},
      {"f08", 300, Split::train, Weather::snow, Placement::clustered, false},
      {"f09", 500, Split::val, Weather::fog_haze, Placement::uniform, false},
      {"f10", 501, Split::test, Weather::rain, Placement::uniform, false},
      {"f11", 650, Split::train, Weather::normal, Placement::clustered, false},
  };
  std::vector<SceneSpec> specs;
  std::uint64_t seed = 1000;
  for (const Row& row : kRows) {
    SceneSpec s;
    s.id = row.id;
    s.n_heads = row.n;
    s.width = s.height = row.n > 120 ? 256 : 128;
    s.split = row.split;
    s.weather = row.weather;
    s.placement = row.placement;
    s.distractor = row.distractor;
    s.scene_tag = row.n > 120 ? "plaza" : "street";
    s.seed = seed++;
    specs.push_back(s);
  }
  return specs;
}

std::vector<SceneSpec> random_specs(int n, int min_heads, int max_heads, int size, std::uint64_t seed) {
  if (n < 0 || min_heads < 0 || max_heads < min_heads) throw SceneError("bad random scene parameters");
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> heads(min_heads, max_heads);
  std::uniform_int_distribution<int> weather(0, kNumWeather - 1);
  std::vector<SceneSpec> specs;
  for (int i = 0; i < n; ++i) {
    SceneSpec s;
    char id[32];
    std::snprintf(id, sizeof id, "s%04d", i);
    s.id = id;
    s.width = s.height = size;
    s.n_heads = heads(rng);
    s.weather = static_cast<Weather>(weather(rng));
    s.placement = i % 2 == 0 ? Placement::uniform : Placement::clustered;
    s.split = i % 5 < 3 ? Split::train : (i % 5 == 3 ? Split::val : Split::test);
    s.seed = rng();
    specs.push_back(s);
  }
  return specs;
}

}  // namespace cgdrcn
