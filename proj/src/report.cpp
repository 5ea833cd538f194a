#include "fognite/report.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>

#include "fognite/error.hpp"

namespace fognite::report {

namespace {

std::string num(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, end);
}

std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

double to_double(const std::string& s, const std::string& what) {
  double v = 0.0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size()) throw InputError("bad number '" + s + "' in " + what);
  return v;
}

void write_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write " + path.string());
  out << text;
}

std::string slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot read " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

std::vector<std::string> metrics_columns() {
  return {"scheduler",       "seed",           "avg_response_ms", "load_balance_efficiency_pct",
          "energy_kwh_equiv", "model_accuracy_pct", "fault_recovery_s", "cumulative_runtime_errors",
          "tasks_arrived",   "tasks_completed", "tasks_dropped",   "tasks_in_flight",
          "deadline_misses", "overloads",       "cloud_offloads",  "gate_rejections",
          "decisions",       "mean_reward"};
}

void write_metrics_csv(std::ostream& out, const std::vector<MetricsRow>& rows) {
  const auto cols = metrics_columns();
  for (std::size_t i = 0; i < cols.size(); ++i) out << (i ? "," : "") << cols[i];
  out << '\n';
  for (const auto& r : rows) {
    const auto& m = r.metrics;
    out << r.scheduler << ',' << r.seed << ',' << num(m.avg_response_ms) << ',' << num(m.load_balance_efficiency_pct)
        << ',' << num(m.energy_kwh_equiv) << ',' << num(m.model_accuracy_pct) << ',' << num(m.fault_recovery_s) << ','
        << m.runtime_errors() << ',' << m.tasks_arrived << ',' << m.tasks_completed << ',' << m.tasks_dropped << ','
        << m.tasks_in_flight << ',' << m.deadline_misses << ',' << m.overloads << ',' << m.cloud_offloads << ','
        << m.gate_rejections << ',' << m.decisions << ',' << num(m.mean_reward) << '\n';
  }
}

std::vector<TableRow> read_metrics_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw InputError("metrics.csv: empty file");
  const auto header = split(line);
  const auto cols = metrics_columns();
  if (header.size() < 8 || !std::equal(cols.begin(), cols.begin() + 8, header.begin())) {
    throw InputError("metrics.csv: unexpected header");
  }
  std::vector<TableRow> rows;
  std::map<std::string, std::size_t> index;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto cells = split(line);
    if (cells.size() != header.size()) throw InputError("metrics.csv: row with wrong column count");
    auto [it, fresh] = index.try_emplace(cells[0], rows.size());
    if (fresh) rows.push_back(TableRow{cells[0]});
    TableRow& r = rows[it->second];
    r.avg_response_ms += to_double(cells[2], "metrics.csv");
    r.load_balance_efficiency_pct += to_double(cells[3], "metrics.csv");
    r.energy_kwh_equiv += to_double(cells[4], "metrics.csv");
    r.model_accuracy_pct += to_double(cells[5], "metrics.csv");
    r.fault_recovery_s += to_double(cells[6], "metrics.csv");
    r.runtime_errors += to_double(cells[7], "metrics.csv");
    ++r.seeds;
  }
  for (auto& r : rows) {
    const double n = r.seeds;
    r.avg_response_ms /= n;
    r.load_balance_efficiency_pct /= n;
    r.energy_kwh_equiv /= n;
    r.model_accuracy_pct /= n;
    r.fault_recovery_s /= n;
    r.runtime_errors /= n;
  }
  return rows;
}

std::string render_table(const std::vector<TableRow>& rows) {
  struct Line {
    const char* label;
    double TableRow::*field;
    int precision;
  };
  const Line lines[] = {
      {"Average Response Time (ms)", &TableRow::avg_response_ms, 1},
      {"Load Balancing Efficiency (%)", &TableRow::load_balance_efficiency_pct, 1},
      {"Energy Consumption (kWh equiv.)", &TableRow::energy_kwh_equiv, 3},
      {"Model Accuracy (%)", &TableRow::model_accuracy_pct, 1},
      {"Fault Recovery Time (s)", &TableRow::fault_recovery_s, 2},
  };
  const int label_w = 34, col_w = 16;
  std::ostringstream os;
  os << std::left << std::setw(label_w) << "Metric";
  for (const auto& r : rows) os << std::right << std::setw(col_w) << r.scheduler;
  os << '\n' << std::string(static_cast<std::size_t>(label_w + col_w * static_cast<int>(rows.size())), '-') << '\n';
  for (const auto& l : lines) {
    os << std::left << std::setw(label_w) << l.label;
    for (const auto& r : rows) {
      os << std::right << std::setw(col_w) << std::fixed << std::setprecision(l.precision) << r.*l.field;
    }
    os << '\n';
  }
  os << std::string(static_cast<std::size_t>(label_w + col_w * static_cast<int>(rows.size())), '-') << '\n';
  os << std::left << std::setw(label_w) << "Cumulative runtime errors";
  for (const auto& r : rows) os << std::right << std::setw(col_w) << std::fixed << std::setprecision(1) << r.runtime_errors;
  os << '\n' << std::left << std::setw(label_w) << "Seeds";
  for (const auto& r : rows) os << std::right << std::setw(col_w) << r.seeds;
  os << '\n';
  return os.str();
}

void write_error_csv(std::ostream& out, const std::vector<std::pair<double, long long>>& series) {
  out << "tick_ms,cumulative_errors\n";
  for (const auto& [t, e] : series) out << num(t) << ',' << e << '\n';
}

std::vector<std::pair<double, long long>> read_error_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line != "tick_ms,cumulative_errors") throw InputError("error series: bad header");
  std::vector<std::pair<double, long long>> out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto cells = split(line);
    if (cells.size() != 2) throw InputError("error series: bad row");
    out.emplace_back(to_double(cells[0], "error series"), static_cast<long long>(to_double(cells[1], "error series")));
  }
  return out;
}

std::string render_error_chart(const std::string& title,
                               const std::vector<std::pair<std::string, std::vector<std::pair<double, long long>>>>& series,
                               double hours_per_ms) {
  const double w = 640, h = 400, left = 60, right = 20, top = 40, bottom = 50;
  double max_x = 0.0, max_y = 0.0;
  for (const auto& [_, s] : series) {
    for (const auto& [t, e] : s) {
      max_x = std::max(max_x, t * hours_per_ms);
      max_y = std::max(max_y, static_cast<double>(e));
    }
  }
  if (max_x <= 0.0) max_x = 1.0;
  if (max_y <= 0.0) max_y = 1.0;
  auto sx = [&](double x) { return left + x / max_x * (w - left - right); };
  auto sy = [&](double y) { return h - bottom - y / max_y * (h - top - bottom); };
  const char* palette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd",
                           "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};

  std::ostringstream os;
  os << std::fixed << std::setprecision(2);
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h << "\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<text x=\"" << w / 2 << "\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"15\">"
     << title << "</text>\n";
  os << "<line x1=\"" << left << "\" y1=\"" << h - bottom << "\" x2=\"" << w - right << "\" y2=\"" << h - bottom
     << "\" stroke=\"black\"/>\n";
  os << "<line x1=\"" << left << "\" y1=\"" << top << "\" x2=\"" << left << "\" y2=\"" << h - bottom
     << "\" stroke=\"black\"/>\n";
  for (int k = 0; k <= 4; ++k) {
    const double xv = max_x * k / 4, yv = max_y * k / 4;
    os << "<text x=\"" << sx(xv) << "\" y=\"" << h - bottom + 16 << "\" text-anchor=\"middle\" font-family=\"sans-serif\" "
       << "font-size=\"11\">" << std::setprecision(1) << xv << "</text>\n";
    os << "<text x=\"" << left - 6 << "\" y=\"" << sy(yv) + 4 << "\" text-anchor=\"end\" font-family=\"sans-serif\" "
       << "font-size=\"11\">" << yv << "</text>\n"
       << std::setprecision(2);
  }
  os << "<text x=\"" << w / 2 << "\" y=\"" << h - 12
     << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">Simulated time (h)</text>\n";
  os << "<text x=\"16\" y=\"" << h / 2 << "\" transform=\"rotate(-90 16 " << h / 2
     << ")\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">Cumulative runtime errors</text>\n";
  for (std::size_t i = 0; i < series.size(); ++i) {
    const auto& [name, s] = series[i];
    const char* color = palette[i % 10];
    os << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
    double prev_y = 0.0;
    bool first = true;
    for (const auto& [t, e] : s) {
      const double x = sx(t * hours_per_ms), y = sy(static_cast<double>(e));
      if (!first) os << x << ',' << prev_y << ' ';
      os << x << ',' << y << ' ';
      prev_y = y;
      first = false;
    }
    os << "\"/>\n";
    os << "<text x=\"" << left + 10 << "\" y=\"" << top + 14 * (static_cast<double>(i) + 1)
       << "\" font-family=\"sans-serif\" font-size=\"11\" fill=\"" << color << "\">" << name << "</text>\n";
  }
  os << "</svg>\n";
  return os.str();
}

std::string journal_name(const std::string& scheduler, std::uint64_t seed) {
  return "journal_" + scheduler + "_" + std::to_string(seed) + ".jsonl";
}

std::string errors_name(const std::string& scheduler, std::uint64_t seed) {
  return "errors_" + scheduler + "_" + std::to_string(seed) + ".csv";
}

RunReport run(const ScenarioConfig& config, const std::vector<sim::SchedulerKind>& schedulers,
              const std::filesystem::path& out_dir, std::ostream* log) {
  if (auto problems = validate_config(config); !problems.empty()) throw ConfigErrors(problems);
  std::filesystem::create_directories(out_dir);
  RunReport rep;
  nlohmann::json doc;
  doc["version"] = kVersion;
  doc["seeds"] = config.seeds;
  doc["schedulers"] = nlohmann::json::array();
  for (auto k : schedulers) doc["schedulers"].push_back(sim::to_string(k));
  doc["config"] = emit_config(config);
  doc["runs"] = nlohmann::json::array();
  doc["failures"] = nlohmann::json::array();

  for (auto seed : config.seeds) {
    sim::FederatedTrace trace;
    if (config.federated.enabled) {
      trace = sim::run_federated(config, sim::build_world(config, seed), seed);
    }
    for (auto kind : schedulers) {
      const std::string name = sim::to_string(kind);
      if (log) *log << "run " << name << " seed " << seed << '\n';
      try {
        auto result = sim::run_experiment(config, kind, seed, config.federated.enabled ? &trace : nullptr);
        write_file(out_dir / journal_name(name, seed), result.journal);
        std::ostringstream errs;
        write_error_csv(errs, result.metrics.cumulative_errors);
        write_file(out_dir / errors_name(name, seed), errs.str());
        nlohmann::json entry;
        entry["scheduler"] = name;
        entry["seed"] = seed;
        entry["journal"] = journal_name(name, seed);
        entry["errors"] = errors_name(name, seed);
        entry["runtime_errors"] = result.metrics.runtime_errors();
        entry["fl_compression_ratio"] = trace.compression_ratio;
        doc["runs"].push_back(entry);
        rep.rows.push_back({name, seed, std::move(result.metrics)});
      } catch (const std::exception& e) {
        rep.failed = true;
        doc["failures"].push_back({{"scheduler", name}, {"seed", seed}, {"error", e.what()}});
        if (log) *log << "run " << name << " seed " << seed << " failed: " << e.what() << '\n';
      }
    }
  }
  std::ostringstream metrics;
  write_metrics_csv(metrics, rep.rows);
  write_file(out_dir / "metrics.csv", metrics.str());
  write_file(out_dir / "config.json", emit_config(config).dump(2) + "\n");
  doc["artifacts"] = {"metrics.csv", "config.json"};
  write_file(out_dir / "report.json", doc.dump(2) + "\n");
  rep.document = std::move(doc);
  if (!rep.failed) report(out_dir);
  return rep;
}

std::string report(const std::filesystem::path& dir) {
  std::vector<std::string> missing;
  if (!std::filesystem::exists(dir / "report.json")) {
    std::string msg = "run directory " + dir.string() + " is missing: report.json";
    for (const char* f : {"metrics.csv", "config.json"}) {
      if (!std::filesystem::exists(dir / f)) msg += std::string(" ") + f;
    }
    throw InputError(msg);
  }
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(slurp(dir / "report.json"));
  } catch (const nlohmann::json::exception& e) {
    throw InputError(std::string("report.json: ") + e.what());
  }
  std::vector<std::string> expected = {"metrics.csv", "config.json"};
  for (const auto& r : doc.value("runs", nlohmann::json::array())) {
    expected.push_back(r.at("journal").get<std::string>());
    expected.push_back(r.at("errors").get<std::string>());
  }
  for (const auto& f : expected) {
    if (!std::filesystem::exists(dir / f)) missing.push_back(f);
  }
  if (!missing.empty()) {
    std::string msg = "run directory " + dir.string() + " is missing:";
    for (const auto& m : missing) msg += " " + m;
    throw InputError(msg);
  }

  std::ifstream metrics(dir / "metrics.csv");
  const std::string table = render_table(read_metrics_csv(metrics));
  write_file(dir / "table.txt", table);

  const auto cfg = parse_config(doc.at("config"));
  const double hours_per_ms = cfg.time.compressed_hours / cfg.time.duration_ms;
  std::map<std::string, std::vector<std::pair<std::string, std::vector<std::pair<double, long long>>>>> charts;
  for (const auto& name : doc.at("schedulers")) charts[name.get<std::string>()];
  for (const auto& r : doc.at("runs")) {
    std::ifstream in(dir / r.at("errors").get<std::string>());
    charts[r.at("scheduler").get<std::string>()].emplace_back("seed " + std::to_string(r.at("seed").get<std::uint64_t>()),
                                                              read_error_csv(in));
  }
  for (const auto& [name, series] : charts) {
    write_file(dir / ("chart_" + name + ".svg"),
               render_error_chart("Cumulative runtime errors: " + name, series, hours_per_ms));
  }
  return table;
}

}  // namespace fognite::report
