#pragma once

#include <filesystem>
#include <ostream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "fognite/scenario.hpp"
#include "fognite/sim.hpp"

namespace fognite::report {

inline constexpr const char* kVersion = "0.1.0";

struct MetricsRow {
  std::string scheduler;
  std::uint64_t seed = 0;
  sim::MetricsRecord metrics;
};

// Fixed column order; the first eight columns mirror MetricsRecord.
std::vector<std::string> metrics_columns();
void write_metrics_csv(std::ostream& out, const std::vector<MetricsRow>& rows);

struct TableRow {
  std::string scheduler;
  double avg_response_ms = 0.0;
  double load_balance_efficiency_pct = 0.0;
  double energy_kwh_equiv = 0.0;
  double model_accuracy_pct = 0.0;
  double fault_recovery_s = 0.0;
  double runtime_errors = 0.0;
  int seeds = 0;
};

// Means per scheduler, in first-seen order. Throws InputError on a
// malformed file.
std::vector<TableRow> read_metrics_csv(std::istream& in);

// Five metric rows, one column per scheduler, then the error totals.
std::string render_table(const std::vector<TableRow>& rows);

std::vector<std::pair<double, long long>> read_error_csv(std::istream& in);
void write_error_csv(std::ostream& out, const std::vector<std::pair<double, long long>>& series);

// Step chart of cumulative errors against simulated hours, one line per
// series.
std::string render_error_chart(const std::string& title,
                               const std::vector<std::pair<std::string, std::vector<std::pair<double, long long>>>>& series,
                               double hours_per_ms);

struct RunReport {
  nlohmann::json document;  // contents of report.json
  std::vector<MetricsRow> rows;
  bool failed = false;
};

std::string journal_name(const std::string& scheduler, std::uint64_t seed);
std::string errors_name(const std::string& scheduler, std::uint64_t seed);

// One experiment per (scheduler, seed). Writes metrics.csv, journals,
// error series, config.json, report.json and the rendered summary into
// `out_dir`. A run that throws is recorded and marks the report failed.
RunReport run(const ScenarioConfig& config, const std::vector<sim::SchedulerKind>& schedulers,
              const std::filesystem::path& out_dir, std::ostream* log = nullptr);

// Renders table.txt and chart_<scheduler>.svg from a completed run
// directory; returns the table text. Throws InputError listing every
// expected artifact that is missing.
std::string report(const std::filesystem::path& run_dir);

}  // namespace fognite::report
