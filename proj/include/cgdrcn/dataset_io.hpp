// SPDX-License-Identifier: Apache-2.0
//
// Dataset directory layout:
//   <root>/<split>/images/<id>.{png,jpg,jpeg,ppm,bmp}
//   <root>/<split>/gt/<id>.txt          head file
//   <root>/<split>/image_labels.txt     one label line per image
#pragma once

#include <filesystem>
#include <optional>
#include <vector>

#include "cgdrcn/annotations.hpp"
#include "cgdrcn/tensor.hpp"

namespace cgdrcn {

struct DatasetEntry {
  AnnotatedImage annotation;
  std::filesystem::path image_path;
};

/// Loads every split present under `root` (or only `split`). Entries are ordered by split, then id.
std::vector<DatasetEntry> load_dataset(const std::filesystem::path& root, std::optional<Split> split = std::nullopt);

std::vector<AnnotatedImage> annotations_of(const std::vector<DatasetEntry>& entries);

/// Writes images, head files and one label file per split present in `images`.
void write_dataset(const std::filesystem::path& root, const std::vector<AnnotatedImage>& annotations,
                   const std::vector<Tensor>& images);

}  // namespace cgdrcn
