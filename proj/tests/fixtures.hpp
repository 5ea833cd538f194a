#pragma once

#include <Eigen/Dense>
#include <random>
#include <vector>

#include "fognite/grid.hpp"
#include "fognite/rl.hpp"

namespace fixture {

inline fognite::FogNode node(fognite::NodeId id, double capacity, double base_latency = 0.0) {
  fognite::FogNode n;
  n.id = id;
  n.cpu_capacity = capacity;
  n.mem_capacity = 4.0;
  n.base_latency = base_latency;
  n.energy_profile.renewable_fraction = {0.5};
  n.energy_profile.power_rate = 1.0;
  return n;
}

inline fognite::Task task(fognite::TaskId id, double cpu, fognite::SimTime created = 0.0,
                          fognite::SimTime slack = 5000.0) {
  fognite::Task t;
  t.id = id;
  t.cpu_demand = cpu;
  t.mem_demand = 0.5;
  t.data_size = 8.0;
  t.created_at = created;
  t.deadline = created + slack;
  return t;
}

// Two candidates: a busy, slow node and an idle, fast one. Picking the
// second pays 1, the first 0.
struct Bandit {
  Eigen::MatrixXd states;
  int optimal = 1;

  Bandit() {
    fognite::GridState g;
    g.nodes = {node(0, 2.0, 40.0), node(1, 8.0, 5.0)};
    for (int k = 0; k < 6; ++k) g.nodes[0].queue.push_back(task(100 + k, 0.3));
    const auto t = task(1, 1.0);
    states.resize(fognite::rl::kStateDim, 2);
    states.col(0) = fognite::rl::encode_state(g, g.nodes[0], t);
    states.col(1) = fognite::rl::encode_state(g, g.nodes[1], t);
  }

  double p_optimal(const fognite::rl::Agent& a) const { return fognite::rl::policy_probs(a.policy, states)(optimal); }
};

// Runs `updates` PPO updates of `batch` one-step episodes each; returns
// P(optimal) after every update.
inline std::vector<double> train_bandit(fognite::rl::Agent& agent, int updates, int batch, std::uint64_t seed) {
  Bandit b;
  std::mt19937_64 rng(seed);
  std::vector<double> curve;
  for (int u = 0; u < updates; ++u) {
    std::vector<fognite::rl::Trajectory> trajs;
    for (int k = 0; k < batch; ++k) {
      const Eigen::VectorXd p = fognite::rl::policy_probs(agent.policy, b.states);
      const int a = fognite::rl::select_action(p, &rng, false);
      fognite::rl::Step s;
      s.states = b.states;
      s.action = a;
      s.log_prob = std::log(p(a));
      s.value = fognite::rl::value_estimate(agent.value, b.states);
      s.reward = a == b.optimal ? 1.0 : 0.0;
      trajs.push_back({s});
    }
    fognite::rl::ppo_update(agent, trajs, rng());
    curve.push_back(b.p_optimal(agent));
  }
  return curve;
}

}  // namespace fixture
