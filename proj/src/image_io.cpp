// SPDX-License-Identifier: Apache-2.0
#include "cgdrcn/image_io.hpp"

#include <algorithm>
#include <cmath>
#include <opencv2/imgcodecs.hpp>

namespace cgdrcn {

Tensor load_image(const std::filesystem::path& path) {
  const cv::Mat bgr = cv::imread(path.string(), cv::IMREAD_COLOR);
  if (bgr.empty()) throw ImageIoError("could not read image " + path.string());
  Tensor out(3, bgr.rows, bgr.cols);
  for (int r = 0; r < bgr.rows; ++r) {
    const auto* row = bgr.ptr<cv::Vec3b>(r);
    for (int c = 0; c < bgr.cols; ++c) {
      for (int ch = 0; ch < 3; ++ch) out.at(ch, r, c) = row[c][2 - ch] / 255.0;
    }
  }
  return out;
}

void save_image(const std::filesystem::path& path, const Tensor& rgb) {
  if (rgb.channels() != 3) throw ImageIoError("save_image: expected 3 channels");
  cv::Mat bgr(rgb.rows(), rgb.cols(), CV_8UC3);
  for (int r = 0; r < rgb.rows(); ++r) {
    auto* row = bgr.ptr<cv::Vec3b>(r);
    for (int c = 0; c < rgb.cols(); ++c) {
      for (int ch = 0; ch < 3; ++ch) {
        row[c][2 - ch] = static_cast<unsigned char>(std::lround(std::clamp(rgb.at(ch, r, c), 0.0, 1.0) * 255.0));
      }
    }
  }
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  if (!cv::imwrite(path.string(), bgr)) throw ImageIoError("could not write image " + path.string());
}

std::pair<int, int> image_dims(const std::filesystem::path& path) {
  const cv::Mat img = cv::imread(path.string(), cv::IMREAD_UNCHANGED);
  if (img.empty()) throw ImageIoError("could not read image " + path.string());
  return {img.cols, img.rows};
}

Tensor normalize_for_network(const Tensor& rgb) {
  static constexpr double kMean[3] = {0.485, 0.456, 0.406};
  static constexpr double kStd[3] = {0.229, 0.224, 0.225};
  Tensor out(rgb.shape());
  const std::size_t plane = static_cast<std::size_t>(rgb.rows()) * rgb.cols();
  for (int c = 0; c < rgb.channels(); ++c) {
    const double m = kMean[c % 3];
    const double s = kStd[c % 3];
    for (std::size_t i = 0; i < plane; ++i) out.plane(c)[i] = (rgb.plane(c)[i] - m) / s;
  }
  return out;
}

}  // namespace cgdrcn
