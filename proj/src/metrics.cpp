/*
 * Copyright 2026 The volreg Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *    http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#include "volreg/metrics.hpp"

#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "volreg/error.hpp"

namespace volreg {
namespace {

// Reference metric rows for brain and knee models:
// (MAE, SD, bias, RMSE) in years.
constexpr std::array<Table1Row, 10> kTable1{{
    {"brain", "2D-Huang", 3.529, 4.302, 1.252, 4.480},
    {"brain", "3D-Ueda", 3.705, 4.298, 1.267, 4.481},
    {"brain", "2D-CNN", 3.213, 4.167, 1.647, 4.481},
    {"brain", "3D-CNN-full", 2.658, 3.532, 0.590, 3.581},
    {"brain", "3D-CNN-chunk", 2.283, 3.546, 0.904, 3.659},
    {"knee", "2D-Huang", 4.279, 6.142, 0.558, 6.167},
    {"knee", "3D-Ueda", 5.354, 7.056, 0.435, 7.069},
    {"knee", "2D-CNN", 3.721, 5.351, 1.407, 5.533},
    {"knee", "3D-CNN-full", 3.357, 4.624, 0.716, 4.679},
    {"knee", "3D-CNN-chunk", 2.996, 4.492, 0.658, 4.540},
}};

}  // namespace

Metrics compute_metrics(std::span<const PredictionRecord> records) {
  if (records.empty()) throw ConfigError("compute_metrics: no prediction records");
  const double n = static_cast<double>(records.size());
  double bias = 0.0, abs_sum = 0.0, sq_sum = 0.0;
  for (const auto& r : records) {
    const double e = r.predicted_age - r.true_age;
    bias += e;
    abs_sum += std::abs(e);
    sq_sum += e * e;
  }
  bias /= n;
  double centered = 0.0;
  for (const auto& r : records) {
    const double d = (r.predicted_age - r.true_age) - bias;
    centered += d * d;
  }
  Metrics m;
  m.bias = bias;
  m.mae = abs_sum / n;
  m.sd = std::sqrt(centered / n);
  m.rmse = std::sqrt(sq_sum / n);
  return m;
}

MetricsReport make_report(std::string split, std::string mode, std::vector<PredictionRecord> records,
                          std::string config_fingerprint) {
  MetricsReport report;
  report.metrics = compute_metrics(records);
  report.split = std::move(split);
  report.mode = std::move(mode);
  report.records = std::move(records);
  report.config_fingerprint = std::move(config_fingerprint);
  return report;
}

nlohmann::ordered_json to_json(const MetricsReport& report) {
  using nlohmann::ordered_json;
  ordered_json records = ordered_json::array();
  for (const auto& r : report.records) {
    records.push_back(ordered_json{{"subject_id", r.subject_id},
                                   {"true_age", r.true_age},
                                   {"predicted_age", r.predicted_age},
                                   {"pieces", r.pieces}});
  }
  return ordered_json{{"split", report.split},
                      {"mode", report.mode},
                      {"units", "years"},
                      {"n", report.records.size()},
                      {"metrics",
                       ordered_json{{"mae", report.metrics.mae},
                                    {"sd", report.metrics.sd},
                                    {"bias", report.metrics.bias},
                                    {"rmse", report.metrics.rmse}}},
                      {"config_fingerprint", report.config_fingerprint},
                      {"records", records}};
}

MetricsReport report_from_json(const nlohmann::json& doc) {
  try {
    MetricsReport report;
    report.split = doc.at("split").get<std::string>();
    report.mode = doc.at("mode").get<std::string>();
    const auto& m = doc.at("metrics");
    report.metrics = {m.at("mae").get<double>(), m.at("sd").get<double>(), m.at("bias").get<double>(),
                      m.at("rmse").get<double>()};
    report.config_fingerprint = doc.at("config_fingerprint").get<std::string>();
    for (const auto& r : doc.at("records")) {
      report.records.push_back({r.at("subject_id").get<std::string>(), r.at("true_age").get<double>(),
                                r.at("predicted_age").get<double>(), r.at("pieces").get<std::vector<double>>()});
    }
    return report;
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("malformed metrics report: ") + e.what());
  }
}

void emit_report(const MetricsReport& report, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write report " + path.string());
  out << to_json(report).dump(2) << '\n';
  if (!out) throw IoError("failed writing report " + path.string());
}

MetricsReport read_report(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open report " + path.string());
  try {
    return report_from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::parse_error& e) {
    throw IoError(path.string() + ": " + e.what());
  }
}

std::string format_metrics_row(const Metrics& m) {
  char buf[128];
  std::snprintf(buf, sizeof(buf), "%.3f %.3f %.3f %.3f", m.mae, m.sd, m.bias, m.rmse);
  return buf;
}

std::span<const Table1Row> table1_rows() { return kTable1; }

std::vector<Table1Check> verify_table1_identity(std::span<const Table1Row> rows, double tolerance) {
  std::vector<Table1Check> checks;
  for (const Table1Row& row : rows) {
    Table1Check c{row};
    c.derived_rmse = std::sqrt(row.sd * row.sd + row.bias * row.bias);
    c.rmse_matches = std::abs(c.derived_rmse - row.rmse) <= tolerance;
    c.mae_bounded = row.mae <= row.rmse;
    checks.push_back(c);
  }
  return checks;
}

}  // namespace volreg
