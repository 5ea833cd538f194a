#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "fognite/grid.hpp"

namespace fognite {

using MeterId = std::int32_t;

struct Reading {
  SimTime t = 0.0;
  std::optional<double> kw;  // nullopt marks a gap
};

struct MeterStream {
  MeterId meter_id = 0;
  double rate_hz = 15.0;
  std::vector<Reading> readings;

  bool has_gaps() const;
  std::size_t gap_count() const;
  // Consumption values; throws InputError if a gap remains.
  std::vector<double> values() const;
};

/// Shape of a synthetic meter signal.
///
/// kw(t) = base_kw + daily_amplitude * sin(2 pi t / day_length_ms + phase)
///       + sum over appliances of an on/off square pulse
///       + uniform noise in [-noise, noise], floored at zero.
struct LoadPattern {
  double base_kw = 1.0;
  double daily_amplitude = 0.0;
  double day_length_ms = 86'400'000.0;
  double phase = 0.0;
  int appliances = 0;
  double appliance_kw = 0.5;
  double appliance_period_ms = 60'000.0;  // mean on/off cycle length
  double appliance_duty = 0.3;
  double noise = 0.0;
  double gap_fraction = 0.0;  // interior readings dropped to gaps
};

MeterStream generate_stream(MeterId meter_id, SimTime duration_ms, double rate_hz,
                            const LoadPattern& pattern, std::uint64_t seed);

// Linear interpolation across gaps. Throws InputError when the first or last
// reading is a gap.
MeterStream impute_gaps(const MeterStream& stream);

struct Sample {
  Eigen::VectorXd input;
  double target = 0.0;
};

// floor((len - W - 1) / stride) + 1 samples; empty when len < W + 1.
// Throws InputError if the stream still has gaps.
std::vector<Sample> make_windows(const MeterStream& stream, int window, int stride = 1);
std::vector<Sample> make_windows(const std::vector<double>& values, int window, int stride = 1);

/// Per-meter min-max scaling to [0, 1]. A flat series maps to 0.
struct MinMaxScaler {
  double min = 0.0;
  double max = 1.0;

  static MinMaxScaler fit(const std::vector<double>& values);
  double normalize(double v) const;
  double denormalize(double v) const;
  std::vector<double> normalize(const std::vector<double>& values) const;
};

// CSV with header `meter_id,t_ms,kw`; an empty kw cell is a gap.
void write_csv(std::ostream& out, const std::vector<MeterStream>& streams);
std::vector<MeterStream> read_csv(std::istream& in);

}  // namespace fognite
