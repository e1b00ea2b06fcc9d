#pragma once

#include <filesystem>
#include <span>
#include <string>

#include "tfm/evaluation.hpp"

namespace tfm {

/// Shortest decimal text that reads back to the same double.
std::string format_number(double value);

/// Aggregates and per-sample metrics of every report, as one JSON document.
std::string reports_to_json(std::span<const MetricReport> reports);

/// sweep_value,sample_id,nrmse,pearson; sweep_value is empty for plain reports.
std::string reports_to_csv(std::span<const MetricReport> reports);

/// Writes <stem>.json and <stem>.csv, plus <stem>_hist<i>.tft and
/// <stem>_hist<i>.json for each report that carries a histogram.
void write_reports(const std::filesystem::path& dir, const std::string& stem, std::span<const MetricReport> reports);

}  // namespace tfm
