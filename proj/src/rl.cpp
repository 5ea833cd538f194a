#include "fognite/rl.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include "fognite/error.hpp"
#include "fognite/kernels.hpp"

namespace fognite::rl {

StateVector encode_state(const GridState& grid, const FogNode& node, const Task& task, const StateNorms& norms,
                         NodeId origin) {
  if (!node.alive) throw InputError("encode_state: node " + std::to_string(node.id) + " is dead");
  StateVector s;
  const double now = grid.clock;

  double latency = node.base_latency;
  if (origin >= 0) {
    for (const auto& hop : shortest_path(grid, origin, node.id)) {
      if (hop.link) latency += hop.link->delay;
    }
  }
  double max_power = 0.0;
  double sum = 0.0, sum_sq = 0.0;
  int live = 0;
  for (const auto& n : grid.nodes) {
    if (!n.alive) continue;
    max_power = std::max(max_power, n.energy_profile.power_rate);
    const double u = utilization(n);
    sum += u;
    sum_sq += u * u;
    ++live;
  }
  const double mean = live ? sum / live : 0.0;
  const double var = live ? std::max(0.0, sum_sq / live - mean * mean) : 0.0;
  const double renewable = renewable_fraction_at(node.energy_profile, now);
  const double phase = 2.0 * std::numbers::pi * now / norms.day_length_ms;

  s(0) = utilization(node);
  s(1) = std::clamp(1.0 - queued_mem_demand(node) / node.mem_capacity, 0.0, 1.0);
  s(2) = std::min(1.0, static_cast<double>(node.queue.size()) / norms.max_queue);
  s(3) = std::min(1.0, latency / norms.latency_norm_ms);
  s(4) = node.battery_level;
  s(5) = renewable;
  s(6) = max_power > 0.0 ? node.energy_profile.power_rate / max_power * (1.0 - renewable) : 0.0;
  s(7) = std::clamp(node.thermal, 0.0, 1.0);
  s(8) = std::min(1.0, service_seconds(node, task) / norms.service_norm_s);
  s(9) = std::clamp((task.deadline - now) / norms.slack_norm_ms, 0.0, 1.0);
  s(10) = std::min(1.0, task.data_size / norms.data_norm_kb);
  s(11) = mean;
  s(12) = std::sqrt(var);
  s(13) = std::sin(phase);
  s(14) = std::cos(phase);
  return s;
}

Mlp Mlp::make(const std::vector<int>& sizes, std::uint64_t seed, double head_scale) {
  std::mt19937_64 rng(seed);
  Mlp m;
  for (std::size_t l = 0; l + 1 < sizes.size(); ++l) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(sizes[l]));
    const double scale = (l + 2 == sizes.size()) ? head_scale : 1.0;
    std::uniform_real_distribution<double> dist(-bound * scale, bound * scale);
    Eigen::MatrixXd w(sizes[l + 1], sizes[l]);
    for (Eigen::Index r = 0; r < w.rows(); ++r) {
      for (Eigen::Index c = 0; c < w.cols(); ++c) w(r, c) = dist(rng);
    }
    m.weights.push_back(std::move(w));
    m.biases.push_back(Eigen::VectorXd::Zero(sizes[l + 1]));
  }
  return m;
}

Mlp Mlp::zeros(const std::vector<int>& sizes) {
  Mlp m;
  for (std::size_t l = 0; l + 1 < sizes.size(); ++l) {
    m.weights.push_back(Eigen::MatrixXd::Zero(sizes[l + 1], sizes[l]));
    m.biases.push_back(Eigen::VectorXd::Zero(sizes[l + 1]));
  }
  return m;
}

Mlp Mlp::zeros_like() const {
  Mlp m;
  for (std::size_t l = 0; l < weights.size(); ++l) {
    m.weights.push_back(Eigen::MatrixXd::Zero(weights[l].rows(), weights[l].cols()));
    m.biases.push_back(Eigen::VectorXd::Zero(biases[l].size()));
  }
  return m;
}

double Mlp::squared_norm() const {
  double s = 0.0;
  for (std::size_t l = 0; l < weights.size(); ++l) s += weights[l].squaredNorm() + biases[l].squaredNorm();
  return s;
}

Eigen::MatrixXd Mlp::forward(const Eigen::MatrixXd& x, Cache* cache) const {
  if (x.rows() != inputs()) throw ShapeError("mlp: input has " + std::to_string(x.rows()) + " rows");
  Eigen::MatrixXd a = x;
  if (cache) cache->acts.assign(1, x);
  for (std::size_t l = 0; l < weights.size(); ++l) {
    Eigen::MatrixXd z = weights[l] * a;
    z.colwise() += biases[l];
    a = (l + 1 < weights.size()) ? Eigen::MatrixXd(z.array().tanh()) : z;
    if (cache) cache->acts.push_back(a);
  }
  return a;
}

void Mlp::backward(const Cache& cache, const Eigen::MatrixXd& dout, Mlp& grads) const {
  Eigen::MatrixXd d = dout;
  for (int l = static_cast<int>(weights.size()) - 1; l >= 0; --l) {
    const auto ul = static_cast<std::size_t>(l);
    if (ul + 1 < weights.size()) {
      const auto& a = cache.acts[ul + 1];
      d = d.cwiseProduct((1.0 - a.array() * a.array()).matrix());
    }
    grads.weights[ul].noalias() += d * cache.acts[ul].transpose();
    grads.biases[ul] += d.rowwise().sum();
    if (l > 0) d = weights[ul].transpose() * d;
  }
}

Eigen::VectorXd softmax_masked(const Eigen::VectorXd& logits, const std::vector<bool>& allowed) {
  if (!allowed.empty() && allowed.size() != static_cast<std::size_t>(logits.size())) {
    throw ShapeError("softmax: mask length differs from logits");
  }
  Eigen::VectorXd p = Eigen::VectorXd::Zero(logits.size());
  double m = -std::numeric_limits<double>::infinity();
  for (Eigen::Index i = 0; i < logits.size(); ++i) {
    if (allowed.empty() || allowed[static_cast<std::size_t>(i)]) m = std::max(m, logits(i));
  }
  if (!std::isfinite(m)) throw InputError("softmax: every candidate is masked");
  double z = 0.0;
  for (Eigen::Index i = 0; i < logits.size(); ++i) {
    if (allowed.empty() || allowed[static_cast<std::size_t>(i)]) {
      p(i) = std::exp(logits(i) - m);
      z += p(i);
    }
  }
  return p / z;
}

Eigen::VectorXd policy_probs(const PolicyParams& policy, const Eigen::MatrixXd& states,
                             const std::vector<bool>& allowed) {
  if (states.rows() != kStateDim) throw ShapeError("policy_probs: states must have 15 rows");
  if (states.cols() == 0) throw ShapeError("policy_probs: no candidates");
  const Eigen::VectorXd logits = policy.forward(states).row(0).transpose();
  return softmax_masked(logits, allowed);
}

double value_estimate(const ValueParams& value, const Eigen::MatrixXd& states) {
  const Eigen::MatrixXd mean = states.rowwise().mean();
  return value.forward(mean)(0, 0);
}

int select_action(const Eigen::VectorXd& probs, std::mt19937_64* rng, bool greedy) {
  if (probs.size() == 0) throw InputError("select_action: empty distribution");
  if (greedy || !rng) {
    Eigen::Index best = 0;
    for (Eigen::Index i = 1; i < probs.size(); ++i) {
      if (probs(i) > probs(best)) best = i;
    }
    return static_cast<int>(best);
  }
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double u = unit(*rng);
  double acc = 0.0;
  int last_positive = 0;
  for (Eigen::Index i = 0; i < probs.size(); ++i) {
    if (probs(i) <= 0.0) continue;
    last_positive = static_cast<int>(i);
    acc += probs(i);
    if (u < acc) return static_cast<int>(i);
  }
  return last_positive;
}

void RewardWeights::validate() const {
  if (alpha < 0.0 || beta < 0.0 || gamma_util < 0.0 || !(alpha + beta + gamma_util > 0.0)) {
    throw ConfigError("reward weights must be >= 0 with a positive sum");
  }
}

RewardTerms reward_terms(const ExecutionOutcome& o) {
  RewardTerms t;
  t.time = o.dropped ? -1.0 : std::clamp(1.0 - o.latency_ms / o.deadline_budget_ms, 0.0, 1.0);
  t.energy = std::clamp(o.renewable_fraction - o.energy_norm, -1.0, 1.0);
  t.util = std::clamp(1.0 - o.util_std, -1.0, 1.0);
  return t;
}

double combine(const RewardTerms& t, const RewardWeights& w) {
  return w.alpha * t.time + w.beta * t.energy + w.gamma_util * t.util;
}

double compute_reward(const ExecutionOutcome& outcome, const RewardWeights& w) {
  return combine(reward_terms(outcome), w);
}

std::vector<double> discounted_returns(std::span<const double> rewards, double gamma) {
  std::vector<double> out(rewards.size());
  double acc = 0.0;
  for (std::size_t i = rewards.size(); i-- > 0;) {
    acc = rewards[i] + gamma * acc;
    out[i] = acc;
  }
  return out;
}

Agent Agent::make(const PpoConfig& config, std::uint64_t seed) {
  Agent a;
  a.config = config;
  a.policy = Mlp::make(default_layers(1), seed, 0.01);
  a.value = Mlp::make(default_layers(1), seed ^ 0x9e3779b97f4a7c15ULL, 1.0);
  a.policy_opt = {a.policy.zeros_like(), a.policy.zeros_like(), 0};
  a.value_opt = {a.value.zeros_like(), a.value.zeros_like(), 0};
  return a;
}

namespace {

void clip_grad(Mlp& g, double max_norm) {
  if (max_norm <= 0.0) return;
  const double n = std::sqrt(g.squared_norm());
  if (n > max_norm) {
    const double s = max_norm / n;
    for (std::size_t l = 0; l < g.weights.size(); ++l) {
      g.weights[l] *= s;
      g.biases[l] *= s;
    }
  }
}

void adam(Mlp& params, const Mlp& g, AdamMlpState& st, double lr) {
  constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
  ++st.step;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(st.step));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(st.step));
  auto apply = [&](auto& p, const auto& grad, auto& m, auto& v) {
    m.array() = b1 * m.array() + (1.0 - b1) * grad.array();
    v.array() = b2 * v.array() + (1.0 - b2) * grad.array().square();
    p.array() -= lr * (m.array() / c1) / ((v.array() / c2).sqrt() + eps);
  };
  for (std::size_t l = 0; l < params.weights.size(); ++l) {
    apply(params.weights[l], g.weights[l], st.m.weights[l], st.v.weights[l]);
    apply(params.biases[l], g.biases[l], st.m.biases[l], st.v.biases[l]);
  }
}

struct FlatStep {
  const Step* step;
  double ret;
  double adv;
};

}  // namespace

PpoDiagnostics ppo_update(Agent& agent, std::span<const Trajectory> trajectories, std::uint64_t seed) {
  std::vector<FlatStep> batch;
  for (const auto& traj : trajectories) {
    std::vector<double> rewards;
    for (const auto& s : traj) rewards.push_back(s.reward);
    const auto returns = discounted_returns(rewards, agent.config.gamma);
    for (std::size_t i = 0; i < traj.size(); ++i) {
      batch.push_back({&traj[i], returns[i], returns[i] - traj[i].value});
    }
  }
  if (batch.empty()) throw InputError("ppo_update: no steps to learn from");

  if (agent.config.normalize_advantages && batch.size() > 1) {
    double mean = 0.0;
    for (const auto& b : batch) mean += b.adv;
    mean /= static_cast<double>(batch.size());
    double var = 0.0;
    for (const auto& b : batch) var += (b.adv - mean) * (b.adv - mean);
    const double sd = std::sqrt(var / static_cast<double>(batch.size()));
    if (sd > 1e-8) {
      for (auto& b : batch) b.adv = (b.adv - mean) / sd;
    }
  }

  const auto& cfg = agent.config;
  std::mt19937_64 rng(seed);
  std::vector<std::size_t> order(batch.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  PpoDiagnostics diag;
  double ratio_sum = 0.0, entropy_sum = 0.0, ploss_sum = 0.0, vloss_sum = 0.0;
  std::size_t clipped = 0, seen = 0;
  const std::size_t mb = static_cast<std::size_t>(std::max(1, cfg.minibatch));
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < order.size(); start += mb) {
      const std::size_t end = std::min(order.size(), start + mb);
      const double inv = 1.0 / static_cast<double>(end - start);
      Mlp pg = agent.policy.zeros_like();
      Mlp vg = agent.value.zeros_like();
      for (std::size_t k = start; k < end; ++k) {
        const FlatStep& fs = batch[order[k]];
        const Step& st = *fs.step;

        Mlp::Cache pc;
        const Eigen::VectorXd logits = agent.policy.forward(st.states, &pc).row(0).transpose();
        const Eigen::VectorXd p = softmax_masked(logits, st.allowed);
        const double logp = std::log(std::max(p(st.action), 1e-300));
        const double ratio = std::exp(logp - st.log_prob);
        double entropy = 0.0;
        for (Eigen::Index i = 0; i < p.size(); ++i) {
          if (p(i) > 0.0) entropy -= p(i) * std::log(p(i));
        }
        const bool outside = ratio < 1.0 - cfg.clip || ratio > 1.0 + cfg.clip;
        const bool grad_blocked = (fs.adv >= 0.0 && ratio > 1.0 + cfg.clip) || (fs.adv < 0.0 && ratio < 1.0 - cfg.clip);
        const double clipped_ratio = std::clamp(ratio, 1.0 - cfg.clip, 1.0 + cfg.clip);
        ploss_sum += -std::min(ratio * fs.adv, clipped_ratio * fs.adv);
        clipped += outside ? 1 : 0;
        ratio_sum += ratio;
        entropy_sum += entropy;
        ++seen;

        const double dlogp = grad_blocked ? 0.0 : -fs.adv * ratio;
        Eigen::RowVectorXd dz = Eigen::RowVectorXd::Zero(p.size());
        for (Eigen::Index i = 0; i < p.size(); ++i) {
          if (p(i) <= 0.0) continue;
          const double onehot = (i == st.action) ? 1.0 : 0.0;
          dz(i) = dlogp * (onehot - p(i)) + cfg.entropy_coeff * p(i) * (std::log(p(i)) + entropy);
        }
        if (dz.squaredNorm() > 0.0) agent.policy.backward(pc, dz * inv, pg);

        Mlp::Cache vc;
        const Eigen::MatrixXd mean_state = st.states.rowwise().mean();
        const double v = agent.value.forward(mean_state, &vc)(0, 0);
        vloss_sum += (v - fs.ret) * (v - fs.ret);
        const double dv = 2.0 * cfg.value_coeff * (v - fs.ret) * inv;
        if (dv != 0.0) agent.value.backward(vc, Eigen::MatrixXd::Constant(1, 1, dv), vg);
      }
      clip_grad(pg, cfg.max_grad_norm);
      clip_grad(vg, cfg.max_grad_norm);
      adam(agent.policy, pg, agent.policy_opt, cfg.learning_rate);
      adam(agent.value, vg, agent.value_opt, cfg.learning_rate);
    }
  }
  const double n = static_cast<double>(seen);
  diag.steps = batch.size();
  diag.mean_ratio = ratio_sum / n;
  diag.clip_fraction = static_cast<double>(clipped) / n;
  diag.entropy = entropy_sum / n;
  diag.policy_loss = ploss_sum / n;
  diag.value_loss = vloss_sum / n;
  return diag;
}

}  // namespace fognite::rl
