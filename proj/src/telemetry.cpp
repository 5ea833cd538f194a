#include "fognite/telemetry.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <istream>
#include <map>
#include <numbers>
#include <ostream>
#include <random>
#include <sstream>

#include "fognite/error.hpp"

namespace fognite {

bool MeterStream::has_gaps() const { return gap_count() > 0; }

std::size_t MeterStream::gap_count() const {
  return static_cast<std::size_t>(
      std::count_if(readings.begin(), readings.end(), [](const Reading& r) { return !r.kw; }));
}

std::vector<double> MeterStream::values() const {
  std::vector<double> out;
  out.reserve(readings.size());
  for (const auto& r : readings) {
    if (!r.kw) throw InputError("meter " + std::to_string(meter_id) + ": stream has gaps");
    out.push_back(*r.kw);
  }
  return out;
}

MeterStream generate_stream(MeterId meter_id, SimTime duration_ms, double rate_hz,
                            const LoadPattern& pattern, std::uint64_t seed) {
  if (!(duration_ms > 0.0) || !(rate_hz > 0.0)) {
    throw InputError("generate_stream: duration and rate must be > 0");
  }
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  struct Appliance {
    double period, offset;
  };
  std::vector<Appliance> appliances;
  for (int a = 0; a < pattern.appliances; ++a) {
    const double period = pattern.appliance_period_ms * (0.5 + unit(rng));
    appliances.push_back({period, unit(rng) * period});
  }

  const double spacing = 1000.0 / rate_hz;
  const auto count = static_cast<std::size_t>(std::floor(duration_ms * rate_hz / 1000.0 + 1e-9));
  MeterStream s;
  s.meter_id = meter_id;
  s.rate_hz = rate_hz;
  s.readings.reserve(count);
  constexpr double two_pi = 2.0 * std::numbers::pi;
  for (std::size_t i = 0; i < count; ++i) {
    const double t = static_cast<double>(i) * spacing;
    double kw = pattern.base_kw +
                pattern.daily_amplitude * std::sin(two_pi * t / pattern.day_length_ms + pattern.phase);
    for (const auto& ap : appliances) {
      if (std::fmod(t + ap.offset, ap.period) < pattern.appliance_duty * ap.period) {
        kw += pattern.appliance_kw;
      }
    }
    // Draw unconditionally so the gap pattern does not shift the noise stream.
    const double noise = pattern.noise * (2.0 * unit(rng) - 1.0);
    const double gap_draw = unit(rng);
    kw = std::max(0.0, kw + noise);
    const bool interior = i > 0 && i + 1 < count;
    if (interior && gap_draw < pattern.gap_fraction) {
      s.readings.push_back({t, std::nullopt});
    } else {
      s.readings.push_back({t, kw});
    }
  }
  return s;
}

MeterStream impute_gaps(const MeterStream& stream) {
  MeterStream out = stream;
  auto& r = out.readings;
  if (r.empty()) return out;
  if (!r.front().kw || !r.back().kw) {
    throw InputError("impute_gaps: stream starts or ends with a gap");
  }
  std::size_t left = 0;
  for (std::size_t i = 1; i < r.size(); ++i) {
    if (!r[i].kw) continue;
    if (i - left > 1) {
      const double a = *r[left].kw;
      const double b = *r[i].kw;
      const double span = static_cast<double>(i - left);
      for (std::size_t j = left + 1; j < i; ++j) {
        const double frac = static_cast<double>(j - left) / span;
        r[j].kw = a + (b - a) * frac;
      }
    }
    left = i;
  }
  return out;
}

std::vector<Sample> make_windows(const std::vector<double>& values, int window, int stride) {
  if (window <= 0 || stride <= 0) throw InputError("make_windows: window and stride must be > 0");
  std::vector<Sample> out;
  const auto len = static_cast<long long>(values.size());
  if (len < window + 1) return out;
  const long long count = (len - window - 1) / stride + 1;
  out.reserve(static_cast<std::size_t>(count));
  for (long long i = 0; i < count; ++i) {
    const long long start = i * stride;
    Sample s;
    s.input = Eigen::Map<const Eigen::VectorXd>(values.data() + start, window);
    s.target = values[static_cast<std::size_t>(start + window)];
    out.push_back(std::move(s));
  }
  return out;
}

std::vector<Sample> make_windows(const MeterStream& stream, int window, int stride) {
  return make_windows(stream.values(), window, stride);
}

MinMaxScaler MinMaxScaler::fit(const std::vector<double>& values) {
  MinMaxScaler s;
  if (values.empty()) return s;
  auto [lo, hi] = std::minmax_element(values.begin(), values.end());
  s.min = *lo;
  s.max = *hi;
  return s;
}

double MinMaxScaler::normalize(double v) const {
  const double range = max - min;
  return range > 0.0 ? (v - min) / range : 0.0;
}

double MinMaxScaler::denormalize(double v) const { return min + v * (max - min); }

std::vector<double> MinMaxScaler::normalize(const std::vector<double>& values) const {
  std::vector<double> out;
  out.reserve(values.size());
  for (double v : values) out.push_back(normalize(v));
  return out;
}

namespace {

std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

double parse_double(const std::string& cell, std::size_t line) {
  double v = 0.0;
  auto res = std::from_chars(cell.data(), cell.data() + cell.size(), v);
  if (res.ec != std::errc() || res.ptr != cell.data() + cell.size()) {
    throw InputError("csv line " + std::to_string(line) + ": bad number '" + cell + "'");
  }
  return v;
}

}  // namespace

void write_csv(std::ostream& out, const std::vector<MeterStream>& streams) {
  out << "meter_id,t_ms,kw\n";
  for (const auto& s : streams) {
    for (const auto& r : s.readings) {
      out << s.meter_id << ',' << format_double(r.t) << ',';
      if (r.kw) out << format_double(*r.kw);
      out << '\n';
    }
  }
}

std::vector<MeterStream> read_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line != "meter_id,t_ms,kw") {
    throw InputError("csv: expected header 'meter_id,t_ms,kw'");
  }
  std::vector<MeterStream> streams;
  std::map<MeterId, std::size_t> index;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto c1 = line.find(',');
    const auto c2 = c1 == std::string::npos ? c1 : line.find(',', c1 + 1);
    if (c2 == std::string::npos) throw InputError("csv line " + std::to_string(lineno) + ": need 3 cells");
    const auto id = static_cast<MeterId>(parse_double(line.substr(0, c1), lineno));
    const double t = parse_double(line.substr(c1 + 1, c2 - c1 - 1), lineno);
    const std::string kw_cell = line.substr(c2 + 1);
    auto [it, fresh] = index.try_emplace(id, streams.size());
    if (fresh) {
      streams.emplace_back();
      streams.back().meter_id = id;
    }
    MeterStream& s = streams[it->second];
    if (!s.readings.empty() && !(t > s.readings.back().t)) {
      throw InputError("csv line " + std::to_string(lineno) + ": timestamps must increase");
    }
    if (kw_cell.empty()) {
      s.readings.push_back({t, std::nullopt});
    } else {
      s.readings.push_back({t, parse_double(kw_cell, lineno)});
    }
  }
  for (auto& s : streams) {
    if (s.readings.size() >= 2) s.rate_hz = 1000.0 / (s.readings[1].t - s.readings[0].t);
  }
  return streams;
}

}  // namespace fognite
