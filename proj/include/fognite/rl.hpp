#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "fognite/grid.hpp"

namespace fognite::rl {

inline constexpr int kStateDim = 15;
using StateVector = Eigen::Matrix<double, kStateDim, 1>;

/// Feature order (0-based index in brackets):
///  [0] cpu load                 [1] free memory fraction
///  [2] queue depth / max_queue  [3] network latency / latency_norm
///  [4] battery level            [5] renewable fraction now
///  [6] energy-cost index        [7] temperature proxy (smoothed load)
///  [8] task service time on this node / service_norm
///  [9] deadline slack / slack_norm   [10] task data size / data_norm
/// [11] cluster mean utilization [12] cluster utilization std
/// [13] sin(time of day)         [14] cos(time of day)
struct StateNorms {
  double max_queue = 10.0;
  double latency_norm_ms = 200.0;
  double service_norm_s = 2.0;
  double slack_norm_ms = 5000.0;
  double data_norm_kb = 64.0;
  double day_length_ms = 86'400'000.0;
};

// Throws InputError for a dead node: the scheduler never observes one.
StateVector encode_state(const GridState& grid, const FogNode& node, const Task& task,
                         const StateNorms& norms = {}, NodeId origin = -1);

/// Fully connected stack with tanh hidden layers and a linear head.
struct Mlp {
  std::vector<Eigen::MatrixXd> weights;
  std::vector<Eigen::VectorXd> biases;

  static Mlp make(const std::vector<int>& sizes, std::uint64_t seed, double head_scale = 1.0);
  static Mlp zeros(const std::vector<int>& sizes);

  int inputs() const { return static_cast<int>(weights.front().cols()); }
  int outputs() const { return static_cast<int>(weights.back().rows()); }

  struct Cache {
    std::vector<Eigen::MatrixXd> acts;  // acts[0] is the input, one column per row item
  };
  // x is inputs() x batch; returns outputs() x batch.
  Eigen::MatrixXd forward(const Eigen::MatrixXd& x, Cache* cache = nullptr) const;
  // Accumulates parameter gradients for output gradient dout into grads.
  void backward(const Cache& cache, const Eigen::MatrixXd& dout, Mlp& grads) const;

  double squared_norm() const;
  Mlp zeros_like() const;
};

// Policy: the same 15 -> 128 -> 64 -> 1 network scores every candidate node;
// a softmax over the scores of allowed candidates gives the action
// distribution. Value: 15 -> 128 -> 64 -> 1 on the mean candidate state.
using PolicyParams = Mlp;
using ValueParams = Mlp;

inline std::vector<int> default_layers(int head) { return {kStateDim, 128, 64, head}; }

// Candidates are the columns of `states` (15 x A). `allowed` masks out
// candidates (empty = all allowed). Throws ShapeError unless rows == 15.
Eigen::VectorXd policy_probs(const PolicyParams& policy, const Eigen::MatrixXd& states,
                             const std::vector<bool>& allowed = {});
Eigen::VectorXd softmax_masked(const Eigen::VectorXd& logits, const std::vector<bool>& allowed);
double value_estimate(const ValueParams& value, const Eigen::MatrixXd& states);

// Greedy: argmax with ties to the lowest index. Otherwise one seeded draw.
int select_action(const Eigen::VectorXd& probs, std::mt19937_64* rng, bool greedy);

struct RewardWeights {
  double alpha = 0.5;      // response time
  double beta = 0.3;       // energy
  double gamma_util = 0.2; // utilization balance

  void validate() const;
};

struct ExecutionOutcome {
  double latency_ms = 0.0;
  double deadline_budget_ms = 1.0;
  double renewable_fraction = 0.0;
  double energy_norm = 0.0;  // task energy relative to the cluster reference
  double util_std = 0.0;     // cluster utilization spread after assignment
  bool dropped = false;
};

struct RewardTerms {
  double time = 0.0, energy = 0.0, util = 0.0;
};

// Component forms; each clamped to [-1, 1]. A dropped task scores time = -1.
RewardTerms reward_terms(const ExecutionOutcome& outcome);
double combine(const RewardTerms& terms, const RewardWeights& w);
double compute_reward(const ExecutionOutcome& outcome, const RewardWeights& w);

// R_t = r_t + gamma R_{t+1}, R_T = r_T.
std::vector<double> discounted_returns(std::span<const double> rewards, double gamma);

struct Step {
  Eigen::MatrixXd states;     // 15 x A candidates at decision time
  std::vector<bool> allowed;  // mask applied when the action was drawn
  int action = 0;
  double reward = 0.0;
  double log_prob = 0.0;
  double value = 0.0;
};
using Trajectory = std::vector<Step>;

struct PpoConfig {
  double clip = 0.2;
  double entropy_coeff = 0.01;
  double value_coeff = 0.5;
  double learning_rate = 5e-4;
  double gamma = 0.99;
  int epochs = 4;
  int minibatch = 64;
  double max_grad_norm = 0.5;  // 0 disables clipping
  bool normalize_advantages = true;
};

struct AdamMlpState {
  Mlp m, v;
  long long step = 0;
};

struct Agent {
  PolicyParams policy;
  ValueParams value;
  AdamMlpState policy_opt, value_opt;
  PpoConfig config;

  static Agent make(const PpoConfig& config, std::uint64_t seed);
};

struct PpoDiagnostics {
  double mean_ratio = 1.0;
  double clip_fraction = 0.0;
  double entropy = 0.0;
  double policy_loss = 0.0;
  double value_loss = 0.0;
  std::size_t steps = 0;
};

// Clipped-surrogate PPO with entropy bonus and value regression, optimized
// with Adam. Advantages are discounted returns minus cached values.
// Throws InputError on an empty batch.
PpoDiagnostics ppo_update(Agent& agent, std::span<const Trajectory> trajectories, std::uint64_t seed);

}  // namespace fognite::rl
