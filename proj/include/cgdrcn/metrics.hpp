// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "cgdrcn/annotations.hpp"

namespace cgdrcn {

enum class DensityBand { low = 0, medium = 1, high = 2 };

/// low = [0, 50], medium = [51, 500], high = [501, inf). Fractional counts are floored.
DensityBand density_band(double count);
std::string_view to_string(DensityBand b);

enum class Category { low = 0, medium = 1, high = 2, weather = 3, overall = 4 };
inline constexpr int kNumCategories = 5;
std::string_view to_string(Category c);

class MetricsError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct ErrorMetrics {
  double mae = 0;
  /// Root of the mean squared error.
  double mse = 0;
};

ErrorMetrics mae_mse(std::span<const double> gt, std::span<const double> pred);

/// One density band, `weather` for any non-normal weather, and always `overall`.
std::vector<Category> categorize(double gt_count, Weather weather);

struct EvalRecord {
  std::string id;
  double gt = 0;
  double pred = 0;
  Weather weather = Weather::normal;
};

struct CategoryResult {
  std::size_t n_images = 0;
  std::optional<ErrorMetrics> metrics;  // empty when n_images == 0
};

struct EvalReport {
  std::array<CategoryResult, kNumCategories> categories{};
  std::vector<EvalRecord> records;

  const CategoryResult& operator[](Category c) const { return categories[static_cast<int>(c)]; }
};

EvalReport build_report(std::vector<EvalRecord> records);

std::string report_to_json(const EvalReport& report);
/// Low / Medium / High / Weather / Overall columns with MAE and MSE each.
std::string report_to_table(const EvalReport& report);

}  // namespace cgdrcn
