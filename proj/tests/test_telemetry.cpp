#include <doctest.h>

#include <sstream>

#include "fognite/error.hpp"
#include "fognite/telemetry.hpp"

using namespace fognite;

namespace {

MeterStream from_values(std::initializer_list<std::optional<double>> kws) {
  MeterStream s;
  double t = 0.0;
  for (const auto& v : kws) {
    s.readings.push_back({t, v});
    t += 1000.0 / s.rate_hz;
  }
  return s;
}

}  // namespace

TEST_CASE("stream length and spacing follow the rate") {
  const auto s = generate_stream(0, 1000.0, 15.0, LoadPattern{}, 1);
  CHECK(s.readings.size() == 15);
  for (std::size_t i = 1; i < s.readings.size(); ++i) {
    CHECK(s.readings[i].t - s.readings[i - 1].t == doctest::Approx(1000.0 / 15.0));
  }
}

TEST_CASE("degenerate pattern is flat") {
  LoadPattern p;
  p.base_kw = 1.0;
  for (const auto& r : generate_stream(3, 5000.0, 15.0, p, 9).readings) CHECK(*r.kw == 1.0);
}

TEST_CASE("same seed gives identical streams") {
  LoadPattern p;
  p.daily_amplitude = 0.3;
  p.appliances = 2;
  p.noise = 0.1;
  p.gap_fraction = 0.05;
  const auto a = generate_stream(1, 20'000.0, 15.0, p, 42);
  const auto b = generate_stream(1, 20'000.0, 15.0, p, 42);
  REQUIRE(a.readings.size() == b.readings.size());
  for (std::size_t i = 0; i < a.readings.size(); ++i) {
    CHECK(a.readings[i].t == b.readings[i].t);
    CHECK(a.readings[i].kw == b.readings[i].kw);
  }
  CHECK(a.gap_count() > 0);
  CHECK(a.readings.front().kw.has_value());
  CHECK(a.readings.back().kw.has_value());
}

TEST_CASE("stream statistics follow the pattern") {
  LoadPattern p;
  p.base_kw = 2.0;
  p.daily_amplitude = 0.5;
  p.day_length_ms = 10'000.0;
  p.noise = 0.05;
  const auto v = generate_stream(0, 100'000.0, 15.0, p, 5).values();
  double mean = 0.0, lo = 1e9, hi = -1e9;
  for (double x : v) {
    mean += x;
    lo = std::min(lo, x);
    hi = std::max(hi, x);
  }
  mean /= static_cast<double>(v.size());
  CHECK(mean == doctest::Approx(2.0).epsilon(0.02));
  CHECK(hi <= 2.0 + 0.5 + 0.05 + 1e-12);
  CHECK(lo >= 2.0 - 0.5 - 0.05 - 1e-12);
  CHECK(hi - lo > 0.9);
}

TEST_CASE("imputation interpolates linearly") {
  auto s = impute_gaps(from_values({1.0, std::nullopt, 3.0}));
  CHECK(s.values() == std::vector<double>{1.0, 2.0, 3.0});
  s = impute_gaps(from_values({2.0, std::nullopt, std::nullopt, 5.0}));
  const auto v = s.values();
  CHECK(v[1] == doctest::Approx(3.0));
  CHECK(v[2] == doctest::Approx(4.0));
  const auto clean = from_values({1.0, 4.0, 2.0});
  CHECK(impute_gaps(clean).values() == clean.values());
  CHECK_THROWS_AS(impute_gaps(from_values({std::nullopt, 1.0})), InputError);
  CHECK_THROWS_AS(impute_gaps(from_values({1.0, std::nullopt})), InputError);
}

TEST_CASE("imputation is idempotent and keeps observed values") {
  LoadPattern p;
  p.noise = 0.2;
  p.gap_fraction = 0.2;
  const auto raw = generate_stream(0, 10'000.0, 15.0, p, 3);
  const auto once = impute_gaps(raw);
  const auto twice = impute_gaps(once);
  CHECK(once.values() == twice.values());
  for (std::size_t i = 0; i < raw.readings.size(); ++i) {
    if (raw.readings[i].kw) CHECK(*once.readings[i].kw == *raw.readings[i].kw);
  }
}

TEST_CASE("window count and contents") {
  std::vector<double> v(11);
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<double>(i);
  CHECK(make_windows(v, 10).size() == 1);
  CHECK(make_windows(std::vector<double>(10, 0.0), 10).empty());
  std::vector<double> w(14);
  for (std::size_t i = 0; i < w.size(); ++i) w[i] = static_cast<double>(i);
  const auto s = make_windows(w, 10, 2);
  REQUIRE(s.size() == 2);
  CHECK(s[1].input(0) == 2.0);
  CHECK(s[1].target == 12.0);
  for (const auto& sample : make_windows(w, 4, 1)) {
    for (int k = 1; k < 4; ++k) CHECK(sample.input(k) == sample.input(k - 1) + 1.0);
    CHECK(sample.target == sample.input(3) + 1.0);
  }
  CHECK_THROWS_AS(make_windows(from_values({1.0, std::nullopt, 2.0}), 1), InputError);
}

TEST_CASE("min-max scaling") {
  const auto sc = MinMaxScaler::fit({2.0, 4.0, 6.0});
  CHECK(sc.normalize(4.0) == doctest::Approx(0.5));
  CHECK(sc.denormalize(sc.normalize(5.3)) == doctest::Approx(5.3));
  CHECK(MinMaxScaler::fit({3.0, 3.0}).normalize(3.0) == 0.0);
}

TEST_CASE("csv round trip keeps gaps") {
  std::vector<MeterStream> streams{from_values({1.5, std::nullopt, 0.25})};
  streams[0].meter_id = 7;
  std::stringstream ss;
  write_csv(ss, streams);
  const auto back = read_csv(ss);
  REQUIRE(back.size() == 1);
  CHECK(back[0].meter_id == 7);
  REQUIRE(back[0].readings.size() == 3);
  CHECK(!back[0].readings[1].kw);
  CHECK(*back[0].readings[2].kw == 0.25);
  CHECK(back[0].readings[2].t == streams[0].readings[2].t);
}
