// SPDX-License-Identifier: Apache-2.0
#include "cgdrcn/metrics.hpp"

#include <cmath>
#include <cstdio>
#include <json.hpp>
#include <sstream>

namespace cgdrcn {

DensityBand density_band(double count) {
  if (!(count >= 0.0)) throw MetricsError("density_band: count must be >= 0");
  const double c = std::floor(count);
  if (c <= 50.0) return DensityBand::low;
  if (c <= 500.0) return DensityBand::medium;
  return DensityBand::high;
}

std::string_view to_string(DensityBand b) {
  switch (b) {
    case DensityBand::low: return "low";
    case DensityBand::medium: return "medium";
    case DensityBand::high: return "high";
  }
  return "?";
}

std::string_view to_string(Category c) {
  switch (c) {
    case Category::low: return "low";
    case Category::medium: return "medium";
    case Category::high: return "high";
    case Category::weather: return "weather";
    case Category::overall: return "overall";
  }
  return "?";
}

ErrorMetrics mae_mse(std::span<const double> gt, std::span<const double> pred) {
  if (gt.size() != pred.size()) {
    throw MetricsError("mae_mse: length mismatch (" + std::to_string(gt.size()) + " vs " +
                       std::to_string(pred.size()) + ")");
  }
  if (gt.empty()) throw MetricsError("mae_mse: empty input");
  double abs_sum = 0.0;
  double sq_sum = 0.0;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    const double e = std::abs(gt[i] - pred[i]);
    abs_sum += e;
    sq_sum += e * e;
  }
  const double n = static_cast<double>(gt.size());
  return {abs_sum / n, std::sqrt(sq_sum / n)};
}

std::vector<Category> categorize(double gt_count, Weather weather) {
  std::vector<Category> out;
  out.push_back(static_cast<Category>(static_cast<int>(density_band(gt_count))));
  if (weather != Weather::normal) out.push_back(Category::weather);
  out.push_back(Category::overall);
  return out;
}

EvalReport build_report(std::vector<EvalRecord> records) {
  if (records.empty()) throw MetricsError("build_report: no records");
  std::array<std::vector<double>, kNumCategories> gts;
  std::array<std::vector<double>, kNumCategories> preds;
  for (const EvalRecord& r : records) {
    for (Category c : categorize(r.gt, r.weather)) {
      gts[static_cast<int>(c)].push_back(r.gt);
      preds[static_cast<int>(c)].push_back(r.pred);
    }
  }
  EvalReport report;
  for (int c = 0; c < kNumCategories; ++c) {
    CategoryResult& res = report.categories[c];
    res.n_images = gts[c].size();
    if (res.n_images > 0) res.metrics = mae_mse(gts[c], preds[c]);
  }
  report.records = std::move(records);
  return report;
}

std::string report_to_json(const EvalReport& report) {
  nlohmann::ordered_json doc;
  for (int c = 0; c < kNumCategories; ++c) {
    const CategoryResult& res = report.categories[c];
    nlohmann::ordered_json entry;
    entry["n_images"] = res.n_images;
    if (res.metrics) {
      entry["mae"] = res.metrics->mae;
      entry["mse"] = res.metrics->mse;
    } else {
      entry["mae"] = nullptr;
      entry["mse"] = nullptr;
    }
    doc["categories"][std::string(to_string(static_cast<Category>(c)))] = entry;
  }
  auto& recs = doc["records"] = nlohmann::ordered_json::array();
  for (const EvalRecord& r : report.records) {
    recs.push_back({{"id", r.id}, {"gt", r.gt}, {"pred", r.pred}, {"weather", to_string(r.weather)}});
  }
  return doc.dump(2) + "\n";
}

std::string report_to_table(const EvalReport& report) {
  std::ostringstream out;
  char buf[64];
  out << "         |       Low       |     Medium      |      High       |     Weather     |     Overall\n";
  out << "         |   MAE     MSE   |   MAE     MSE   |   MAE     MSE   |   MAE     MSE   |   MAE     MSE\n";
  out << "---------+-----------------+-----------------+-----------------+-----------------+----------------\n";
  out << " CG-DRCN ";
  for (int c = 0; c < kNumCategories; ++c) {
    const CategoryResult& res = report.categories[c];
    if (res.metrics) {
      std::snprintf(buf, sizeof buf, "| %7.1f %7.1f ", res.metrics->mae, res.metrics->mse);
    } else {
      std::snprintf(buf, sizeof buf, "| %7s %7s ", "-", "-");
    }
    out << buf;
  }
  out << "\n n-images";
  for (int c = 0; c < kNumCategories; ++c) {
    std::snprintf(buf, sizeof buf, "| %15zu ", report.categories[c].n_images);
    out << buf;
  }
  out << "\n";
  return out.str();
}

}  // namespace cgdrcn
