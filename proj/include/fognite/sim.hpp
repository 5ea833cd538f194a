#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <ostream>
#include <queue>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "fognite/fed.hpp"
#include "fognite/grid.hpp"
#include "fognite/rl.hpp"
#include "fognite/scenario.hpp"
#include "fognite/telemetry.hpp"
#include "fognite/twin.hpp"

namespace fognite::sim {

enum class SchedulerKind { fognite, focca_baseline, random };

std::string to_string(SchedulerKind kind);
// Throws ConfigError on an unknown name.
SchedulerKind parse_scheduler(const std::string& name);

enum class EventKind { task_arrival, task_complete, node_failure, node_recovery, fl_round, report_tick };
const char* to_string(EventKind kind);

struct Event {
  SimTime time = 0.0;
  std::uint64_t seq = 0;  // insertion order, breaks ties
  EventKind kind = EventKind::report_tick;
  TaskId task = -1;
  NodeId node = -1;
  std::uint64_t epoch = 0;  // task_complete: node epoch when scheduled
  int round = 0;            // fl_round index
  SimTime downtime = 0.0;   // node_failure
};

class EventQueue {
 public:
  // Throws UsageError when `time` is earlier than the last popped event.
  void push(Event e);
  bool empty() const { return heap_.empty(); }
  std::size_t size() const { return heap_.size(); }
  // Throws UsageError when empty.
  Event pop();
  SimTime clock() const { return clock_; }

 private:
  struct Later {
    bool operator()(const Event& a, const Event& b) const {
      return a.time != b.time ? a.time > b.time : a.seq > b.seq;
    }
  };
  std::priority_queue<Event, std::vector<Event>, Later> heap_;
  std::uint64_t next_seq_ = 0;
  SimTime clock_ = 0.0;
};

struct TaskArrival {
  Task task;
  NodeId origin = 0;  // ingress fog node of the meter that raised the task
};

struct MetricsRecord {
  double avg_response_ms = 0.0;
  double load_balance_efficiency_pct = 100.0;
  double energy_kwh_equiv = 0.0;
  double model_accuracy_pct = 0.0;
  double fault_recovery_s = 0.0;
  std::vector<std::pair<SimTime, long long>> cumulative_errors;  // (tick ms, errors so far)

  long long tasks_arrived = 0;
  long long tasks_completed = 0;
  long long tasks_dropped = 0;
  long long tasks_in_flight = 0;
  long long deadline_misses = 0;
  long long overloads = 0;
  long long cloud_offloads = 0;
  long long gate_rejections = 0;
  long long decisions = 0;  // tasks placed by a scheduling decision
  double mean_reward = 0.0;

  long long runtime_errors() const { return tasks_dropped + deadline_misses + overloads; }
};

// 100 * max(0, 1 - std/mean); 100 when the mean is zero or the list empty.
double load_balance_efficiency(const std::vector<double>& utilizations);

/// Federated forecaster timeline. It depends only on the world and the fault
/// plan, never on task placement, so it is computed once per seed.
struct FederatedTrace {
  struct Round {
    SimTime time = 0.0;
    fed::RoundLog log;
    double holdout_nrmse = 0.0;
  };
  std::vector<Round> rounds;
  double model_accuracy_pct = 0.0;
  double compression_ratio = 0.0;  // raw / sent bytes over all rounds
};

struct World {
  GridState grid;
  std::vector<TaskArrival> arrivals;  // sorted by created_at
  std::vector<FaultEntry> faults;     // sorted by at_ms
  std::vector<std::vector<Sample>> train;           // per node
  std::vector<std::vector<SimTime>> train_ready;    // time each train sample exists
  std::vector<Sample> holdout;
  double mean_service_ms = 0.0;  // nominal, over the workload and nodes
};

// Everything drawn from the scenario and seed; identical for every scheduler.
World build_world(const ScenarioConfig& config, std::uint64_t seed);

FederatedTrace run_federated(const ScenarioConfig& config, const World& world, std::uint64_t seed);

twin::SafetyThresholds thresholds_for(const ScenarioConfig& config, const World& world);

struct SimOptions {
  bool gate_enabled = true;  // fognite only
  bool greedy = true;        // fognite action choice
  bool learn = false;        // PPO updates during the episode
  std::ostream* journal = nullptr;
  const FederatedTrace* federated = nullptr;
};

struct DispatchOutcome {
  enum class Placement { node, cloud, dropped };
  Placement placement = Placement::dropped;
  NodeId target = -1;
  int proposals = 0;  // scheduler proposals, including rejected ones
};

class Simulation {
 public:
  // `agents` must outlive the simulation and hold one agent, or one per node
  // when per-node learners are enabled. Only fognite uses them.
  Simulation(const ScenarioConfig& config, World world, SchedulerKind kind, std::uint64_t seed,
             SimOptions options = {}, std::vector<rl::Agent>* agents = nullptr);

  // Pops and handles the earliest event. False once the queue is empty.
  bool step();
  void run();

  // Places a pending task now. Public for fixtures; normally driven by
  // task_arrival events.
  DispatchOutcome dispatch_task(const Task& task, NodeId origin);

  MetricsRecord record_metrics() const;
  const GridState& grid() const { return world_.grid; }
  SimTime clock() const { return queue_.clock(); }
  // Failure instant to last reassignment, one entry per effective failure.
  std::vector<double> fault_recovery_ms() const;
  std::size_t events_processed() const { return processed_; }

 private:
  struct Pending {
    Task task;
    NodeId origin = -1;
    SimTime ready_at = 0.0;  // delivered to the node and ready to start
    double renewable = 0.0;  // at the target when dispatched
    double energy_norm = 0.0;
    double util_std = 0.0;
    bool has_trajectory = false;
  };
  struct NodeRun {
    std::uint64_t epoch = 0;
    bool busy = false;
    SimTime service_start = 0.0;
    double busy_ms = 0.0;
    double alive_ms = 0.0;
    SimTime alive_since = 0.0;
  };
  struct FailureRecord {
    SimTime at = 0.0;
    SimTime last_reassigned = 0.0;
    long long outstanding = 0;
  };

  void schedule(Event e);
  void journal(nlohmann::json line);
  void on_arrival(const Event& e);
  void on_complete(const Event& e);
  void on_failure(const Event& e);
  void on_recovery(const Event& e);
  void on_fl_round(const Event& e);
  void on_tick(const Event& e);

  std::optional<NodeId> choose_baseline(const Task& task, NodeId origin) const;
  std::vector<bool> live_mask() const;
  void place_on_node(const Task& task, NodeId origin, NodeId target);
  void place_in_cloud(const Task& task);
  void start_next(FogNode& node);
  void drop(const Task& task, const char* why);
  void finish_trajectory(TaskId id, double reward);
  void maybe_learn(bool force);

 public:
  // Runs PPO on whatever trajectories are buffered.
  void flush_learning() { maybe_learn(true); }

 private:
  std::size_t agent_for(NodeId origin) const;
  double cluster_util_std() const;
  void update_thermal();
  std::uint64_t stream_seed(std::uint64_t salt, std::uint64_t a, std::uint64_t b = 0) const;

  ScenarioConfig config_;
  World world_;
  SchedulerKind kind_;
  std::uint64_t seed_;
  SimOptions options_;
  std::vector<rl::Agent>* agents_;
  twin::SafetyThresholds thresholds_;

  EventQueue queue_;
  std::mt19937_64 world_rng_;  // network, jitter, path failures
  std::mt19937_64 sched_rng_;  // scheduler draws
  std::size_t processed_ = 0;

  std::map<TaskId, Pending> pending_;
  std::map<TaskId, std::size_t> reassigned_from_;  // task -> failure index
  std::vector<NodeRun> runs_;
  std::vector<FailureRecord> failures_;

  struct Open {
    std::size_t agent = 0;
    rl::Trajectory steps;
  };
  std::map<TaskId, Open> open_;
  std::vector<std::vector<rl::Trajectory>> batch_;  // per agent
  std::vector<std::size_t> batch_steps_;
  std::uint64_t updates_ = 0;

  long long arrived_ = 0, completed_ = 0, dropped_ = 0, misses_ = 0, overloads_ = 0;
  long long cloud_ = 0, rejections_ = 0, decisions_ = 0;
  double response_sum_ = 0.0;
  long long response_count_ = 0;
  double reward_sum_ = 0.0;
  long long reward_count_ = 0;
  double energy_ = 0.0;
  std::vector<std::pair<SimTime, long long>> error_series_;
};

struct ExperimentResult {
  MetricsRecord metrics;
  std::string journal;  // JSON lines
  std::vector<rl::Agent> agents;
};

// Builds the world from `seed`, trains the fognite agent on separate
// training worlds, then runs the evaluation episode. `federated` may carry a
// precomputed trace for this seed.
ExperimentResult run_experiment(const ScenarioConfig& config, SchedulerKind kind, std::uint64_t seed,
                                const FederatedTrace* federated = nullptr);

// Trains agents for the fognite scheduler on worlds derived from `seed`.
std::vector<rl::Agent> train_agents(const ScenarioConfig& config, std::uint64_t seed);

rl::PpoConfig ppo_config(const ScenarioConfig& config);

}  // namespace fognite::sim
