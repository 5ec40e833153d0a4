// SPDX-License-Identifier: Apache-2.0
//
// Head-level and image-level crowd annotations.
//
// Head file: one head per line, `x y width height occlusion blur`
//   occlusion: 1 = visible, 2 = partially occluded, 3 = fully occluded
//   blur:      0 = no blur, 1 = blurred
// Label file: one image per line, `image-id total-count scene weather distractor`
//   weather:   0 = normal, 1 = fog/haze, 2 = rain, 3 = snow
//   distractor: 0 or 1; scene is a single whitespace-free token.
#pragma once

#include <array>
#include <cstdint>
#include <istream>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace cgdrcn {

enum class Occlusion : std::uint8_t { visible = 1, partial = 2, full = 3 };
enum class Blur : std::uint8_t { none = 0, blurred = 1 };
enum class Weather : std::uint8_t { normal = 0, fog_haze = 1, rain = 2, snow = 3 };
enum class Split : std::uint8_t { train = 0, val = 1, test = 2 };

inline constexpr int kNumWeather = 4;
inline constexpr int kNumSplits = 3;

std::string_view to_string(Weather w);
std::string_view to_string(Split s);
std::optional<Split> split_from_string(std::string_view s);

struct HeadAnnotation {
  double x = 0;
  double y = 0;
  double width = 1;
  double height = 1;
  Occlusion occlusion = Occlusion::visible;
  Blur blur = Blur::none;

  friend bool operator==(const HeadAnnotation&, const HeadAnnotation&) = default;
};

struct ImageLabels {
  std::string scene = "unknown";
  Weather weather = Weather::normal;
  bool distractor = false;

  friend bool operator==(const ImageLabels&, const ImageLabels&) = default;
};

struct AnnotatedImage {
  std::string id;
  int width = 0;
  int height = 0;
  std::vector<HeadAnnotation> heads;
  ImageLabels labels;
  Split split = Split::train;

  std::size_t count() const { return heads.size(); }
};

/// One line of a label file.
struct LabelRecord {
  std::string id;
  std::size_t total_count = 0;
  ImageLabels labels;
};

class AnnotationError : public std::runtime_error {
 public:
  enum class Kind { parse, range, unknown_enum, count_mismatch, empty_dataset };
  AnnotationError(Kind kind, std::size_t line, const std::string& what);
  Kind kind() const { return kind_; }
  /// 1-based line number; 0 when not tied to a line.
  std::size_t line() const { return line_; }

 private:
  Kind kind_;
  std::size_t line_;
};

/// Distance beyond the image edge still accepted (and clamped) for head centers.
inline constexpr double kBorderTolerance = 1.0;

std::vector<HeadAnnotation> parse_head_file(std::istream& in, int image_width, int image_height);
LabelRecord parse_label_line(std::string_view line, std::size_t line_number = 1);
std::vector<LabelRecord> parse_label_file(std::istream& in);

/// Parses one image's head file and its single-record label stream.
AnnotatedImage parse_annotation_file(std::istream& heads, std::istream& label_record, int image_width,
                                     int image_height, Split split = Split::train);

/// Builds an image from already-parsed pieces, validating the declared count.
AnnotatedImage assemble_image(const LabelRecord& record, std::vector<HeadAnnotation> heads, int image_width,
                              int image_height, Split split);

void write_head_file(std::ostream& out, const std::vector<HeadAnnotation>& heads);
void write_label_line(std::ostream& out, const AnnotatedImage& image);

struct DatasetStats {
  std::size_t total_images = 0;
  std::array<std::size_t, kNumSplits> split_images{};
  std::array<std::size_t, kNumWeather> weather_images{};
  std::array<std::size_t, kNumWeather> weather_annotations{};
  /// low (0-50), medium (51-500), high (501+)
  std::array<std::size_t, 3> band_images{};
  std::size_t distractor_images = 0;
  std::size_t total_annotations = 0;
  std::size_t max_count = 0;
  double average_count = 0;
};

DatasetStats compute_stats(const std::vector<AnnotatedImage>& dataset);

/// Images of one split, ordered by id.
std::vector<AnnotatedImage> export_split(const std::vector<AnnotatedImage>& dataset, Split split);

/// Machine-readable JSON document.
std::string stats_to_json(const DatasetStats& stats);
/// Human-readable table.
std::string stats_to_table(const DatasetStats& stats);

}  // namespace cgdrcn
