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

#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

namespace volreg {

struct PredictionRecord {
  std::string subject_id;
  double true_age = 0.0;
  double predicted_age = 0.0;
  std::vector<double> pieces;  // per-chunk or per-slice predictions; empty in full mode

  bool operator==(const PredictionRecord&) const = default;
};

/// Error statistics over e_i = predicted - true, in years:
/// bias = mean(e), MAE = mean(|e|), SD = sqrt(mean((e - bias)^2)) (population),
/// RMSE = sqrt(mean(e^2)). Hence RMSE^2 = SD^2 + bias^2.
struct Metrics {
  double mae = 0.0;
  double sd = 0.0;
  double bias = 0.0;
  double rmse = 0.0;

  bool operator==(const Metrics&) const = default;
};

struct MetricsReport {
  std::string split;
  std::string mode;
  Metrics metrics;
  std::vector<PredictionRecord> records;
  std::string config_fingerprint;

  bool operator==(const MetricsReport&) const = default;
};

/// Throws ConfigError for an empty record list.
Metrics compute_metrics(std::span<const PredictionRecord> records);

MetricsReport make_report(std::string split, std::string mode, std::vector<PredictionRecord> records,
                          std::string config_fingerprint);

nlohmann::ordered_json to_json(const MetricsReport& report);
MetricsReport report_from_json(const nlohmann::json& doc);

/// Writes the report as JSON with stable key order.
void emit_report(const MetricsReport& report, const std::filesystem::path& path);
MetricsReport read_report(const std::filesystem::path& path);

/// `MAE SD Bias RMSE` with three decimals.
std::string format_metrics_row(const Metrics& m);

// ---------------------------------------------------------------------------
// Published comparison table (transcribed values, never regenerated).

struct Table1Row {
  const char* dataset;  // "brain" or "knee"
  const char* model;
  double mae;
  double sd;
  double bias;
  double rmse;
};

/// The ten reference rows: five brain models followed by five knee models.
std::span<const Table1Row> table1_rows();

struct Table1Check {
  Table1Row row;
  double derived_rmse = 0.0;  // sqrt(SD^2 + bias^2)
  bool rmse_matches = false;  // |derived - reported| <= tolerance
  bool mae_bounded = false;   // MAE <= RMSE
  bool passed() const { return rmse_matches && mae_bounded; }
};

std::vector<Table1Check> verify_table1_identity(std::span<const Table1Row> rows, double tolerance = 0.005);

}  // namespace volreg
