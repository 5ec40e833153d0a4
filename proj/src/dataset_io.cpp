// SPDX-License-Identifier: Apache-2.0
#include "cgdrcn/dataset_io.hpp"

#include <algorithm>
#include <array>
#include <fstream>
#include <map>

#include "cgdrcn/image_io.hpp"

namespace fs = std::filesystem;

namespace cgdrcn {
namespace {

constexpr std::array<const char*, 6> kImageExtensions{".png", ".jpg", ".jpeg", ".ppm", ".bmp", ".JPG"};

fs::path find_image(const fs::path& dir, const std::string& id) {
  for (const char* ext : kImageExtensions) {
    fs::path p = dir / (id + ext);
    if (fs::exists(p)) return p;
  }
  throw AnnotationError(AnnotationError::Kind::parse, 0, "no image found for id '" + id + "' in " + dir.string());
}

std::vector<DatasetEntry> load_split(const fs::path& root, Split split) {
  const fs::path dir = root / std::string(to_string(split));
  const fs::path labels_path = dir / "image_labels.txt";
  std::vector<DatasetEntry> out;
  if (!fs::exists(labels_path)) return out;
  std::ifstream labels_in(labels_path);
  std::vector<LabelRecord> records;
  try {
    records = parse_label_file(labels_in);
  } catch (const AnnotationError& e) {
    throw AnnotationError(e.kind(), e.line(), labels_path.string() + ": " + e.what());
  }
  for (const LabelRecord& rec : records) {
    const fs::path image_path = find_image(dir / "images", rec.id);
    const auto [w, h] = image_dims(image_path);
    const fs::path gt_path = dir / "gt" / (rec.id + ".txt");
    std::ifstream gt(gt_path);
    if (!gt) throw AnnotationError(AnnotationError::Kind::parse, 0, "missing head file " + gt_path.string());
    try {
      out.push_back({assemble_image(rec, parse_head_file(gt, w, h), w, h, split), image_path});
    } catch (const AnnotationError& e) {
      throw AnnotationError(e.kind(), e.line(), gt_path.string() + ": " + e.what());
    }
  }
  std::sort(out.begin(), out.end(),
            [](const DatasetEntry& a, const DatasetEntry& b) { return a.annotation.id < b.annotation.id; });
  return out;
}

}  // namespace

std::vector<DatasetEntry> load_dataset(const fs::path& root, std::optional<Split> split) {
  if (!fs::is_directory(root)) throw AnnotationError(AnnotationError::Kind::parse, 0, "not a directory: " + root.string());
  std::vector<DatasetEntry> out;
  for (int s = 0; s < kNumSplits; ++s) {
    if (split && static_cast<int>(*split) != s) continue;
    auto part = load_split(root, static_cast<Split>(s));
    std::move(part.begin(), part.end(), std::back_inserter(out));
  }
  return out;
}

std::vector<AnnotatedImage> annotations_of(const std::vector<DatasetEntry>& entries) {
  std::vector<AnnotatedImage> out;
  out.reserve(entries.size());
  for (const auto& e : entries) out.push_back(e.annotation);
  return out;
}

void write_dataset(const fs::path& root, const std::vector<AnnotatedImage>& annotations,
                   const std::vector<Tensor>& images) {
  if (annotations.size() != images.size()) throw std::invalid_argument("write_dataset: size mismatch");
  std::map<Split, std::vector<std::size_t>> by_split;
  for (std::size_t i = 0; i < annotations.size(); ++i) by_split[annotations[i].split].push_back(i);
  for (auto& [split, idx] : by_split) {
    const fs::path dir = root / std::string(to_string(split));
    fs::create_directories(dir / "images");
    fs::create_directories(dir / "gt");
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return annotations[a].id < annotations[b].id; });
    std::ofstream labels(dir / "image_labels.txt");
    for (std::size_t i : idx) {
      const AnnotatedImage& a = annotations[i];
      save_image(dir / "images" / (a.id + ".png"), images[i]);
      std::ofstream gt(dir / "gt" / (a.id + ".txt"));
      write_head_file(gt, a.heads);
      write_label_line(labels, a);
    }
  }
}

}  // namespace cgdrcn
