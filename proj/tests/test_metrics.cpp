// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>
#include <json.hpp>

#include "cgdrcn/metrics.hpp"

namespace cgdrcn {
namespace {

TEST(MaeMse, TwoRecordOracle) {
  const std::vector<double> gt{10, 20};
  const std::vector<double> pred{12, 16};
  const ErrorMetrics m = mae_mse(gt, pred);
  EXPECT_NEAR(m.mae, 3.0, 1e-9);
  EXPECT_NEAR(m.mse, std::sqrt(10.0), 1e-9);
}

TEST(MaeMse, RejectsBadInput) {
  const std::vector<double> a{1, 2};
  const std::vector<double> b{1};
  EXPECT_THROW(mae_mse(a, b), MetricsError);
  EXPECT_THROW(mae_mse({}, {}), MetricsError);
}

TEST(MaeMse, RootSquaredIsAtLeastAbsolute) {
  const std::vector<double> gt{0, 5, 100, 3};
  const std::vector<double> pred{1, 9, 40, 3};
  const ErrorMetrics m = mae_mse(gt, pred);
  EXPECT_GE(m.mse, m.mae);
}

TEST(DensityBand, EdgeCounts) {
  EXPECT_EQ(density_band(0), DensityBand::low);
  EXPECT_EQ(density_band(50), DensityBand::low);
  EXPECT_EQ(density_band(50.9), DensityBand::low);
  EXPECT_EQ(density_band(51), DensityBand::medium);
  EXPECT_EQ(density_band(500), DensityBand::medium);
  EXPECT_EQ(density_band(501), DensityBand::high);
  EXPECT_EQ(density_band(1e6), DensityBand::high);
  EXPECT_THROW(density_band(-1), MetricsError);
}

TEST(Categorize, WeatherOverlapsWithBands) {
  EXPECT_EQ(categorize(12, Weather::normal), (std::vector<Category>{Category::low, Category::overall}));
  EXPECT_EQ(categorize(600, Weather::snow),
            (std::vector<Category>{Category::high, Category::weather, Category::overall}));
  EXPECT_EQ(categorize(51, Weather::fog_haze),
            (std::vector<Category>{Category::medium, Category::weather, Category::overall}));
}

// Six records regrouped by hand into their categories.
std::vector<EvalRecord> six_records() {
  return {{"a", 10, 14, Weather::normal},  {"b", 50, 45, Weather::rain},     {"c", 51, 60, Weather::normal},
          {"d", 500, 480, Weather::snow},   {"e", 501, 530, Weather::normal}, {"f", 800, 700, Weather::fog_haze}};
}

TEST(Report, SixRecordRegrouping) {
  const EvalReport r = build_report(six_records());
  const auto expect = [&](Category c, std::size_t n, std::vector<double> errs) {
    const CategoryResult& res = r[c];
    EXPECT_EQ(res.n_images, n) << to_string(c);
    ASSERT_TRUE(res.metrics.has_value());
    double a = 0, s = 0;
    for (double e : errs) {
      a += std::abs(e);
      s += e * e;
    }
    EXPECT_EQ(res.metrics->mae, a / static_cast<double>(errs.size())) << to_string(c);
    EXPECT_EQ(res.metrics->mse, std::sqrt(s / static_cast<double>(errs.size()))) << to_string(c);
  };
  expect(Category::low, 2, {4, 5});
  expect(Category::medium, 2, {9, 20});
  expect(Category::high, 2, {29, 100});
  expect(Category::weather, 3, {5, 20, 100});
  expect(Category::overall, 6, {4, 5, 9, 20, 29, 100});
  EXPECT_NEAR(r[Category::overall].metrics->mae, 167.0 / 6.0, 1e-12);
}

TEST(Report, EmptyCategoryHasNoMetrics) {
  const EvalReport r = build_report({{"a", 5, 6, Weather::normal}});
  EXPECT_EQ(r[Category::high].n_images, 0u);
  EXPECT_FALSE(r[Category::high].metrics.has_value());
  EXPECT_FALSE(r[Category::weather].metrics.has_value());
  EXPECT_THROW(build_report({}), MetricsError);
}

TEST(Report, JsonAndTable) {
  const EvalReport r = build_report(six_records());
  const auto doc = nlohmann::json::parse(report_to_json(r));
  EXPECT_DOUBLE_EQ(doc["categories"]["overall"]["mae"].get<double>(), r[Category::overall].metrics->mae);
  EXPECT_EQ(doc["categories"]["weather"]["n_images"], 3);
  const std::string table = report_to_table(r);
  for (const char* col : {"Low", "Medium", "High", "Weather", "Overall"}) {
    EXPECT_NE(table.find(col), std::string::npos) << col;
  }
}

}  // namespace
}  // namespace cgdrcn
