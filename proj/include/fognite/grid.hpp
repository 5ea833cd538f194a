#pragma once

#include <cstdint>
#include <optional>
#include <vector>

namespace fognite {

using NodeId = std::int32_t;
using TaskId = std::int64_t;
using SimTime = double;  // milliseconds of simulated time

struct Task {
  TaskId id = 0;
  double cpu_demand = 0.0;  // compute units
  double mem_demand = 0.0;  // memory units
  double data_size = 0.0;   // kilobytes
  SimTime deadline = 1.0;
  SimTime created_at = 0.0;
};

struct EnergyProfile {
  std::vector<double> renewable_fraction{0.0};  // one value per step_ms, periodic
  double step_ms = 3'600'000.0;
  double power_rate = 1.0;  // energy units per compute-unit-second
  double idle_power = 0.0;  // energy units per second
};

struct FogNode {
  NodeId id = 0;
  double cpu_capacity = 1.0;  // compute units per second
  double mem_capacity = 1.0;
  std::vector<Task> queue;  // FIFO, head is in service
  double battery_level = 1.0;
  double base_latency = 0.0;  // ms
  bool alive = true;
  EnergyProfile energy_profile;
  double failure_prob = 0.0;
  double thermal = 0.0;  // smoothed utilization, used as temperature proxy
};

struct Link {
  NodeId from = 0;
  NodeId to = 0;
  double delay = 0.0;  // ms
  double loss_rate = 0.0;
  double failure_prob = 0.0;
};

struct GridState {
  std::vector<FogNode> nodes;
  std::vector<Link> links;
  SimTime clock = 0.0;

  const FogNode* find(NodeId id) const;
  FogNode* find(NodeId id);
};

// Throws ConfigError when a node, link or profile breaks its invariants.
void validate(const FogNode& node);
void validate(const Link& link);
void validate(const Task& task);
void validate(const EnergyProfile& profile);
void validate(const GridState& grid);

double queued_cpu_demand(const FogNode& node);
double queued_mem_demand(const FogNode& node);

// Queued cpu demand over capacity, unclamped. Values above 1 mean overload.
double load_ratio(const FogNode& node);

// load_ratio clamped to [0, 1].
double utilization(const FogNode& node);

// Piecewise-constant periodic lookup. Throws ConfigError on an empty series.
double renewable_fraction_at(const EnergyProfile& profile, SimTime t);

// Seconds of service a task needs on the node at nominal speed.
double service_seconds(const FogNode& node, const Task& task);

// cpu_seconds * power_rate; idle draw is accounted separately.
double task_energy(const FogNode& node, const Task& task);
double idle_energy(const EnergyProfile& profile, SimTime elapsed_ms);

// Delay-shortest path between two nodes as (node, link) hops. A path to the
// origin itself is a single hop with no link. Empty when unreachable.
struct PathHop {
  NodeId node = 0;
  std::optional<Link> link;  // the link used to reach `node`
};
std::vector<PathHop> shortest_path(const GridState& grid, NodeId from, NodeId to,
                                   bool live_only = true);

}  // namespace fognite
