#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "fognite/error.hpp"
#include "fognite/report.hpp"

using namespace fognite;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  auto p = fs::temp_directory_path() / ("fognite-test-" + name);
  fs::remove_all(p);
  return p;
}

int count_lines_with(const std::string& text, const std::string& needle) {
  std::istringstream in(text);
  std::string line;
  int n = 0;
  while (std::getline(in, line)) n += line.find(needle) != std::string::npos;
  return n;
}

}  // namespace

TEST_CASE("metrics csv round trip and table shape") {
  std::vector<report::MetricsRow> rows(3);
  rows[0].scheduler = "fognite";
  rows[0].seed = 1;
  rows[0].metrics.avg_response_ms = 100.0;
  rows[0].metrics.overloads = 2;
  rows[1].scheduler = "fognite";
  rows[1].seed = 2;
  rows[1].metrics.avg_response_ms = 200.0;
  rows[2].scheduler = "focca_baseline";
  rows[2].seed = 1;
  rows[2].metrics.avg_response_ms = 50.0;
  std::stringstream csv;
  report::write_metrics_csv(csv, rows);
  const auto table = report::read_metrics_csv(csv);
  REQUIRE(table.size() == 2);
  CHECK(table[0].scheduler == "fognite");
  CHECK(table[0].avg_response_ms == doctest::Approx(150.0));
  CHECK(table[0].runtime_errors == doctest::Approx(1.0));
  CHECK(table[0].seeds == 2);
  CHECK(table[1].avg_response_ms == doctest::Approx(50.0));

  const auto text = report::render_table(table);
  for (const char* metric : {"Response Time", "Load Balancing", "Energy", "Model Accuracy", "Fault Recovery"}) {
    CHECK(count_lines_with(text, metric) == 1);
  }
  CHECK(count_lines_with(text, "fognite") == 1);  // header
  CHECK(text.find("focca_baseline") != std::string::npos);
}

TEST_CASE("malformed metrics csv") {
  std::istringstream bad("scheduler,seed\nfognite\n");
  CHECK_THROWS_AS(report::read_metrics_csv(bad), InputError);
}

TEST_CASE("error series round trip") {
  const std::vector<std::pair<double, long long>> s{{0.0, 0}, {1000.0, 2}, {2000.0, 5}};
  std::stringstream io;
  report::write_error_csv(io, s);
  CHECK(report::read_error_csv(io) == s);
  const auto svg = report::render_error_chart("errors", {{"a", s}}, 1.0 / 3.6e6);
  CHECK(svg.rfind("<svg", 0) == 0);
  CHECK(svg.find("polyline") != std::string::npos);
}

TEST_CASE("zero task run renders") {
  auto cfg = quick_preset(ScenarioConfig{});
  cfg.workload.tasks = 0;
  cfg.federated.enabled = false;
  cfg.seeds = {1};
  const auto dir = scratch("zero");
  const auto r = report::run(cfg, {sim::SchedulerKind::focca_baseline}, dir);
  CHECK(!r.failed);
  CHECK(fs::exists(dir / "table.txt"));
  CHECK(fs::exists(dir / "report.json"));
  CHECK(fs::exists(dir / "chart_focca_baseline.svg"));
  CHECK(r.document["version"] == report::kVersion);
  const auto again = report::report(dir);
  std::ifstream in(dir / "table.txt");
  std::stringstream saved;
  saved << in.rdbuf();
  CHECK(saved.str() == again);
  fs::remove_all(dir);
}

TEST_CASE("report lists missing artifacts") {
  const auto dir = scratch("missing");
  fs::create_directories(dir);
  try {
    report::report(dir);
    FAIL("expected InputError");
  } catch (const InputError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("metrics.csv") != std::string::npos);
    CHECK(msg.find("report.json") != std::string::npos);
  }
  fs::remove_all(dir);
}
