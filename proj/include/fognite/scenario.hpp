#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "fognite/fed.hpp"
#include "fognite/nn.hpp"
#include "fognite/rl.hpp"
#include "fognite/telemetry.hpp"
#include "fognite/twin.hpp"

namespace fognite {

struct Range {
  double lo = 0.0;
  double hi = 0.0;
  bool operator==(const Range&) const = default;
};

struct NodesConfig {
  int count = 5;
  Range cpu_capacity{3.0, 10.0};
  Range mem_capacity{6.0, 12.0};
  Range base_latency_ms{5.0, 30.0};
  Range failure_prob{0.001, 0.03};
  Range power_rate{4.0, 9.0};
  Range idle_power{1.0, 2.5};
  Range battery_level{0.4, 1.0};
  Range renewable_peak{0.2, 0.9};
  int renewable_steps = 24;  // piecewise-constant values per simulated day
  double thermal_smoothing = 0.2;
  double thermal_risk = 1.0;  // failure_prob scales by 1 + thermal_risk * thermal
  bool operator==(const NodesConfig&) const = default;
};

struct LinksConfig {
  Range delay_ms{2.0, 15.0};
  Range loss_rate{0.001, 0.02};
  Range failure_prob{0.001, 0.01};
  int chords = 2;  // extra random links on top of the ring
  bool operator==(const LinksConfig&) const = default;
};

struct MetersConfig {
  int count = 12;
  double rate_hz = 15.0;
  double base_kw = 1.0;
  double daily_amplitude = 0.4;
  int appliances = 2;
  double appliance_kw = 0.5;
  double appliance_period_ms = 8000.0;
  double appliance_duty = 0.3;
  double noise = 0.05;
  double gap_fraction = 0.01;
  double holdout_fraction = 0.2;
  bool operator==(const MetersConfig&) const = default;
};

struct WorkloadConfig {
  int tasks = 500;
  double cpu_demand_mean = 1.5;
  double mem_demand_mean = 1.0;
  double data_size_mean_kb = 32.0;
  Range deadline_slack_ms{1500.0, 4000.0};
  bool operator==(const WorkloadConfig&) const = default;
};

struct TimeConfig {
  double duration_ms = 90'000.0;
  double report_tick_ms = 7'500.0;
  double compressed_hours = 72.0;  // wall-clock span the run stands for
  double days = 3.0;               // simulated day cycles over the run
  bool operator==(const TimeConfig&) const = default;
};

struct FederatedConfig {
  bool enabled = true;
  nn::ModelConfig model;
  int epochs = 5;
  int batch_size = 32;
  int sync_interval = 5;
  double round_interval_ms = 15'000.0;
  double learning_rate = 1e-3;
  double lambda = 1e-6;
  int max_samples_per_round = 64;
  int eval_samples = 256;
  bool persist_optimizer = false;
  bool operator==(const FederatedConfig&) const = default;
};

struct RlConfig {
  double learning_rate = 5e-4;
  double gamma = 0.99;
  double entropy_coeff = 0.01;
  double clip = 0.2;
  double value_coeff = 0.5;
  int epochs = 4;
  int minibatch = 64;
  int batch_steps = 128;
  int train_episodes = 12;
  rl::RewardWeights weights;
  double reject_penalty = 0.1;
  bool per_node_learners = false;
  bool greedy_eval = true;
  rl::StateNorms norms;
  bool operator==(const RlConfig& o) const;
};

struct TwinConfig {
  bool enabled = true;
  twin::PerturbationConfig perturbation;
  // Unset: twice the mean nominal service time of the workload.
  std::optional<double> max_latency_ms;
  double max_energy = 1e6;
  double max_p_fail = 0.25;
  double max_utilization = 0.95;
  bool operator==(const TwinConfig& o) const;
};

struct FaultEntry {
  NodeId node = 0;
  double at_ms = 0.0;
  double downtime_ms = 0.0;
  bool operator==(const FaultEntry&) const = default;
};

struct FaultsConfig {
  int count = 5;
  Range downtime_ms{5'000.0, 15'000.0};
  double detection_ms = 500.0;
  double bandwidth_kbps = 2'000.0;  // handoff bandwidth for reassigned tasks
  std::vector<FaultEntry> plan;      // explicit plan overrides count/downtime
  bool operator==(const FaultsConfig&) const = default;
};

struct CloudConfig {
  double latency_ms = 180.0;
  double cpu_capacity = 40.0;
  double power_rate = 60.0;  // per second of cloud service time
  bool operator==(const CloudConfig&) const = default;
};

struct ScenarioConfig {
  std::vector<std::uint64_t> seeds{1};
  NodesConfig nodes;
  LinksConfig links;
  MetersConfig meters;
  WorkloadConfig workload;
  TimeConfig time;
  FederatedConfig federated;
  fed::CompressionConfig compression;
  RlConfig rl;
  TwinConfig twin;
  FaultsConfig faults;
  CloudConfig cloud;
  std::string output_dir = "fognite-out";

  bool operator==(const ScenarioConfig& o) const;
};

/// Every validation problem found, each prefixed with its field path.
class ConfigErrors : public std::runtime_error {
 public:
  explicit ConfigErrors(std::vector<std::string> problems);
  const std::vector<std::string>& problems() const { return problems_; }

 private:
  std::vector<std::string> problems_;
};

// Applies defaults for missing keys; rejects unknown keys and out-of-range
// values (throws ConfigErrors listing all of them).
ScenarioConfig parse_config(const nlohmann::json& doc);
ScenarioConfig parse_config_text(const std::string& text);
// Throws ConfigErrors when the file cannot be read.
ScenarioConfig parse_config_file(const std::filesystem::path& path);
nlohmann::json emit_config(const ScenarioConfig& config);
// Problems in an already-built config; empty when valid.
std::vector<std::string> validate_config(const ScenarioConfig& config);

// Reduced workload and training budget for smoke runs.
ScenarioConfig quick_preset(ScenarioConfig base);

}  // namespace fognite
