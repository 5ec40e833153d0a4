// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <stdexcept>
#include <utility>

#include "cgdrcn/tensor.hpp"

namespace cgdrcn {

class ImageIoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// RGB image as a 3 x H x W tensor with values in [0, 1].
Tensor load_image(const std::filesystem::path& path);
void save_image(const std::filesystem::path& path, const Tensor& rgb);

/// (width, height) without keeping the pixels around.
std::pair<int, int> image_dims(const std::filesystem::path& path);

/// Per-channel ImageNet mean/std normalization applied before the backbone.
Tensor normalize_for_network(const Tensor& rgb);

}  // namespace cgdrcn
