#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "fognite/grid.hpp"

namespace fognite::twin {

struct PerturbationConfig {
  double cpu_jitter = 0.10;  // service time scaled by 1 + U(-j, j)
  double delay_min_ms = 20.0;
  double delay_max_ms = 100.0;
  double loss_min = 0.001;
  double loss_max = 0.02;
  int replicas = 16;
  int max_retries = 3;

  void validate() const;
};

struct SafetyThresholds {
  double max_latency_ms = 1000.0;
  double max_energy = 1e6;
  double max_p_fail = 0.25;
  double max_utilization = 0.95;

  void validate() const;
};

struct Action {
  Task task;
  NodeId target = 0;
  NodeId origin = -1;  // ingress node; -1 means the task is already local
};

struct ReplayMetrics {
  double nominal_latency_ms = 0.0;  // queue wait + service + base + link delays
  double worst_latency_ms = 0.0;    // over replicas that delivered
  double mean_latency_ms = 0.0;
  double mean_energy = 0.0;
  double post_utilization = 0.0;    // clamped, after adding the task
  double post_load_ratio = 0.0;     // unclamped
  int lost_replicas = 0;            // transmission failed after all retries
};

// Seeded Monte Carlo replay of executing `action` on a copy of the target.
// Throws InputError when the target is dead or unknown.
ReplayMetrics edge_replay(const Action& action, const GridState& grid, const PerturbationConfig& cfg,
                          std::uint64_t seed);

// 1 - prod_i (1 - p_node_i)(1 - p_link_i). Throws InputError on a probability
// outside [0, 1] or lists of different length.
double cascade_failure_probability(std::span<const double> node_probs, std::span<const double> link_probs);

// Cascade probability over a delivery path, one (node, link) pair per hop.
double path_failure_probability(std::span<const PathHop> path, const GridState& grid);

struct StabilityReport {
  bool degenerate = false;  // no live node
  std::map<NodeId, double> path_p_fail;
  std::map<NodeId, double> projected_utilization;
  double utilization_spread = 0.0;  // std of projected utilizations
  bool stable = true;               // no live node projected at saturation
};

// Per-path cascade risk from `origin` (-1: each node on its own) and
// utilization after draining queues for `horizon_ms` at nominal speed.
StabilityReport cloud_forecast(const GridState& grid, SimTime horizon_ms, NodeId origin = -1);

namespace reason {
inline constexpr const char* dead_target = "dead_target";
inline constexpr const char* latency = "latency";
inline constexpr const char* energy = "energy";
inline constexpr const char* utilization = "utilization";
inline constexpr const char* failure_risk = "failure_risk";
}  // namespace reason

struct TwinVerdict {
  bool approved = false;
  double predicted_latency_ms = 0.0;
  double predicted_energy = 0.0;
  double predicted_utilization = 0.0;
  double p_fail = 0.0;
  std::string reason;  // empty iff approved
};

/// Approves only when the edge replay and the cloud-tier path risk pass
/// every threshold. The latency limit is the tighter of max_latency_ms and
/// the task's remaining deadline budget. Checks run in the order latency,
/// energy, utilization, failure risk; the first violation is the reason.
TwinVerdict gate_decision(const Action& action, const GridState& grid, const PerturbationConfig& cfg,
                          const SafetyThresholds& thresholds, std::uint64_t seed);

struct HealthReport {
  std::size_t approved = 0;
  std::map<std::string, std::size_t> rejected;  // by reason
  std::map<NodeId, double> node_p_fail;
  std::map<NodeId, bool> node_alive;
  std::array<std::size_t, 10> utilization_histogram{};  // live nodes, bins of 0.1

  nlohmann::json to_json() const;
};

HealthReport health_report(const GridState& grid, std::span<const TwinVerdict> verdicts);

}  // namespace fognite::twin
