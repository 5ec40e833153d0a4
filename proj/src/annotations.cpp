// SPDX-License-Identifier: Apache-2.0
#include "cgdrcn/annotations.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <json.hpp>
#include <sstream>

#include "cgdrcn/metrics.hpp"

namespace cgdrcn {
namespace {

std::vector<std::string_view> tokenize(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && std::isspace(static_cast<unsigned char>(line[i]))) ++i;
    const std::size_t start = i;
    while (i < line.size() && !std::isspace(static_cast<unsigned char>(line[i]))) ++i;
    if (i > start) out.push_back(line.substr(start, i - start));
  }
  return out;
}

double parse_double(std::string_view tok, std::size_t line, const char* field) {
  double v = 0;
  const auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
  if (ec != std::errc{} || ptr != tok.data() + tok.size() || !std::isfinite(v)) {
    throw AnnotationError(AnnotationError::Kind::parse, line,
                          std::string("bad ") + field + " value '" + std::string(tok) + "'");
  }
  return v;
}

long parse_int(std::string_view tok, std::size_t line, const char* field) {
  long v = 0;
  const auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
  if (ec != std::errc{} || ptr != tok.data() + tok.size()) {
    throw AnnotationError(AnnotationError::Kind::parse, line,
                          std::string("bad ") + field + " value '" + std::string(tok) + "'");
  }
  return v;
}

std::string format_number(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

bool is_blank(std::string_view line) {
  return std::all_of(line.begin(), line.end(), [](char c) { return std::isspace(static_cast<unsigned char>(c)); });
}

double clamp_coordinate(double v, int extent, std::size_t line, const char* axis) {
  if (v < -kBorderTolerance || v > extent + kBorderTolerance) {
    throw AnnotationError(AnnotationError::Kind::range, line,
                          std::string(axis) + "=" + format_number(v) + " outside [0, " + std::to_string(extent) + "]");
  }
  return std::clamp(v, 0.0, static_cast<double>(extent));
}

}  // namespace

AnnotationError::AnnotationError(Kind kind, std::size_t line, const std::string& what)
    : std::runtime_error(line ? "line " + std::to_string(line) + ": " + what : what), kind_(kind), line_(line) {}

std::string_view to_string(Weather w) {
  switch (w) {
    case Weather::normal: return "normal";
    case Weather::fog_haze: return "fog-haze";
    case Weather::rain: return "rain";
    case Weather::snow: return "snow";
  }
  return "?";
}

std::string_view to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  return "?";
}

std::optional<Split> split_from_string(std::string_view s) {
  if (s == "train") return Split::train;
  if (s == "val") return Split::val;
  if (s == "test") return Split::test;
  return std::nullopt;
}

std::vector<HeadAnnotation> parse_head_file(std::istream& in, int image_width, int image_height) {
  std::vector<HeadAnnotation> heads;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (is_blank(line)) continue;
    const auto tok = tokenize(line);
    if (tok.size() != 6) {
      throw AnnotationError(AnnotationError::Kind::parse, line_no,
                            "expected 6 fields (x y width height occlusion blur), got " + std::to_string(tok.size()));
    }
    HeadAnnotation h;
    h.x = clamp_coordinate(parse_double(tok[0], line_no, "x"), image_width, line_no, "x");
    h.y = clamp_coordinate(parse_double(tok[1], line_no, "y"), image_height, line_no, "y");
    h.width = parse_double(tok[2], line_no, "width");
    h.height = parse_double(tok[3], line_no, "height");
    if (h.width <= 0 || h.height <= 0) {
      throw AnnotationError(AnnotationError::Kind::range, line_no, "head size must be positive");
    }
    const long occ = parse_int(tok[4], line_no, "occlusion");
    if (occ < 1 || occ > 3) {
      throw AnnotationError(AnnotationError::Kind::unknown_enum, line_no,
                            "occlusion code " + std::to_string(occ) + " not in {1,2,3}");
    }
    h.occlusion = static_cast<Occlusion>(occ);
    const long blur = parse_int(tok[5], line_no, "blur");
    if (blur != 0 && blur != 1) {
      throw AnnotationError(AnnotationError::Kind::unknown_enum, line_no,
                            "blur code " + std::to_string(blur) + " not in {0,1}");
    }
    h.blur = static_cast<Blur>(blur);
    heads.push_back(h);
  }
  return heads;
}

LabelRecord parse_label_line(std::string_view line, std::size_t line_number) {
  const auto tok = tokenize(line);
  if (tok.size() != 5) {
    throw AnnotationError(AnnotationError::Kind::parse, line_number,
                          "expected 5 fields (image-id total-count scene weather distractor), got " +
                              std::to_string(tok.size()));
  }
  LabelRecord rec;
  rec.id = std::string(tok[0]);
  const long total = parse_int(tok[1], line_number, "total-count");
  if (total < 0) throw AnnotationError(AnnotationError::Kind::range, line_number, "negative total-count");
  rec.total_count = static_cast<std::size_t>(total);
  rec.labels.scene = std::string(tok[2]);
  const long weather = parse_int(tok[3], line_number, "weather");
  if (weather < 0 || weather >= kNumWeather) {
    throw AnnotationError(AnnotationError::Kind::unknown_enum, line_number,
                          "weather code " + std::to_string(weather) + " not in {0,1,2,3}");
  }
  rec.labels.weather = static_cast<Weather>(weather);
  const long distractor = parse_int(tok[4], line_number, "distractor");
  if (distractor != 0 && distractor != 1) {
    throw AnnotationError(AnnotationError::Kind::unknown_enum, line_number,
                          "distractor flag " + std::to_string(distractor) + " not in {0,1}");
  }
  rec.labels.distractor = distractor == 1;
  return rec;
}

std::vector<LabelRecord> parse_label_file(std::istream& in) {
  std::vector<LabelRecord> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (is_blank(line)) continue;
    out.push_back(parse_label_line(line, line_no));
  }
  return out;
}

AnnotatedImage assemble_image(const LabelRecord& record, std::vector<HeadAnnotation> heads, int image_width,
                              int image_height, Split split) {
  if (image_width <= 0 || image_height <= 0) {
    throw AnnotationError(AnnotationError::Kind::range, 0, record.id + ": image dims must be positive");
  }
  if (record.total_count != heads.size()) {
    throw AnnotationError(AnnotationError::Kind::count_mismatch, 0,
                          record.id + ": label file declares " + std::to_string(record.total_count) +
                              " heads, head file has " + std::to_string(heads.size()));
  }
  AnnotatedImage img;
  img.id = record.id;
  img.width = image_width;
  img.height = image_height;
  img.heads = std::move(heads);
  img.labels = record.labels;
  img.split = split;
  return img;
}

AnnotatedImage parse_annotation_file(std::istream& heads, std::istream& label_record, int image_width,
                                     int image_height, Split split) {
  const auto records = parse_label_file(label_record);
  if (records.size() != 1) {
    throw AnnotationError(AnnotationError::Kind::parse, 0,
                          "label stream must hold exactly one record, got " + std::to_string(records.size()));
  }
  return assemble_image(records.front(), parse_head_file(heads, image_width, image_height), image_width,
                        image_height, split);
}

void write_head_file(std::ostream& out, const std::vector<HeadAnnotation>& heads) {
  for (const HeadAnnotation& h : heads) {
    out << format_number(h.x) << ' ' << format_number(h.y) << ' ' << format_number(h.width) << ' '
        << format_number(h.height) << ' ' << static_cast<int>(h.occlusion) << ' ' << static_cast<int>(h.blur)
        << '\n';
  }
}

void write_label_line(std::ostream& out, const AnnotatedImage& image) {
  out << image.id << ' ' << image.heads.size() << ' ' << image.labels.scene << ' '
      << static_cast<int>(image.labels.weather) << ' ' << (image.labels.distractor ? 1 : 0) << '\n';
}

DatasetStats compute_stats(const std::vector<AnnotatedImage>& dataset) {
  if (dataset.empty()) throw AnnotationError(AnnotationError::Kind::empty_dataset, 0, "compute_stats: empty dataset");
  DatasetStats s;
  s.total_images = dataset.size();
  for (const AnnotatedImage& img : dataset) {
    const std::size_t n = img.count();
    s.split_images[static_cast<int>(img.split)] += 1;
    s.weather_images[static_cast<int>(img.labels.weather)] += 1;
    s.weather_annotations[static_cast<int>(img.labels.weather)] += n;
    s.band_images[static_cast<int>(density_band(static_cast<double>(n)))] += 1;
    s.distractor_images += img.labels.distractor ? 1 : 0;
    s.total_annotations += n;
    s.max_count = std::max(s.max_count, n);
  }
  s.average_count = static_cast<double>(s.total_annotations) / static_cast<double>(s.total_images);
  return s;
}

std::vector<AnnotatedImage> export_split(const std::vector<AnnotatedImage>& dataset, Split split) {
  std::vector<AnnotatedImage> out;
  std::copy_if(dataset.begin(), dataset.end(), std::back_inserter(out),
               [split](const AnnotatedImage& img) { return img.split == split; });
  std::stable_sort(out.begin(), out.end(), [](const AnnotatedImage& a, const AnnotatedImage& b) { return a.id < b.id; });
  return out;
}

std::string stats_to_json(const DatasetStats& s) {
  nlohmann::ordered_json doc;
  doc["total_images"] = s.total_images;
  for (int i = 0; i < kNumSplits; ++i) doc["split_images"][std::string(to_string(static_cast<Split>(i)))] = s.split_images[i];
  for (int i = 0; i < kNumWeather; ++i) {
    const std::string key(to_string(static_cast<Weather>(i)));
    doc["weather"][key] = {{"images", s.weather_images[i]}, {"annotations", s.weather_annotations[i]}};
  }
  for (int i = 0; i < 3; ++i) doc["density_bands"][std::string(to_string(static_cast<DensityBand>(i)))] = s.band_images[i];
  doc["distractor_images"] = s.distractor_images;
  doc["total_annotations"] = s.total_annotations;
  doc["max_count"] = s.max_count;
  doc["average_count"] = s.average_count;
  return doc.dump(2) + "\n";
}

std::string stats_to_table(const DatasetStats& s) {
  std::ostringstream out;
  char buf[160];
  std::snprintf(buf, sizeof buf, "%-22s %10s %10s %10s %10s\n", "Split", "train", "val", "test", "total");
  out << buf;
  std::snprintf(buf, sizeof buf, "%-22s %10zu %10zu %10zu %10zu\n", "No. of images", s.split_images[0],
                s.split_images[1], s.split_images[2], s.total_images);
  out << buf << '\n';
  std::snprintf(buf, sizeof buf, "%-22s %10s %10s %10s %10s\n", "Density", "Low(0-50)", "Med(51-500)", "High(500+)",
                "total");
  out << buf;
  std::snprintf(buf, sizeof buf, "%-22s %10zu %10zu %10zu %10zu\n", "No. of images", s.band_images[0],
                s.band_images[1], s.band_images[2], s.total_images);
  out << buf << '\n';
  std::snprintf(buf, sizeof buf, "%-22s %10s %10s %10s %10s\n", "Weather", "normal", "rain", "snow", "fog-haze");
  out << buf;
  const auto w = [&](const std::array<std::size_t, kNumWeather>& a, int code) { return a[code]; };
  std::snprintf(buf, sizeof buf, "%-22s %10zu %10zu %10zu %10zu\n", "No. of images", w(s.weather_images, 0),
                w(s.weather_images, 2), w(s.weather_images, 3), w(s.weather_images, 1));
  out << buf;
  std::snprintf(buf, sizeof buf, "%-22s %10zu %10zu %10zu %10zu\n", "No. of annotations", w(s.weather_annotations, 0),
                w(s.weather_annotations, 2), w(s.weather_annotations, 3), w(s.weather_annotations, 1));
  out << buf << '\n';
  std::snprintf(buf, sizeof buf, "total annotations %zu, max count %zu, average count %.1f, distractors %zu\n",
                s.total_annotations, s.max_count, s.average_count, s.distractor_images);
  out << buf;
  return out.str();
}

}  // namespace cgdrcn
