#include "fognite/twin.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

#include "fognite/error.hpp"

namespace fognite::twin {

void PerturbationConfig::validate() const {
  if (!(cpu_jitter >= 0.0 && cpu_jitter < 1.0)) throw ConfigError("twin: cpu_jitter must lie in [0, 1)");
  if (delay_min_ms < 0.0 || delay_max_ms < delay_min_ms) throw ConfigError("twin: bad delay range");
  if (loss_min < 0.0 || loss_max < loss_min || loss_max > 1.0) throw ConfigError("twin: bad loss range");
  if (replicas < 1) throw ConfigError("twin: replicas must be >= 1");
  if (max_retries < 0) throw ConfigError("twin: max_retries must be >= 0");
}

void SafetyThresholds::validate() const {
  if (!(max_latency_ms > 0.0 && max_energy > 0.0 && max_p_fail > 0.0 && max_utilization > 0.0)) {
    throw ConfigError("twin: thresholds must be > 0");
  }
}

namespace {

double path_link_delay(std::span<const PathHop> path) {
  double d = 0.0;
  for (const auto& hop : path) {
    if (hop.link) d += hop.link->delay;
  }
  return d;
}

std::vector<PathHop> delivery_path(const GridState& grid, NodeId origin, NodeId target) {
  if (origin < 0) return {PathHop{target, std::nullopt}};
  return shortest_path(grid, origin, target);
}

}  // namespace

ReplayMetrics edge_replay(const Action& action, const GridState& grid, const PerturbationConfig& cfg,
                          std::uint64_t seed) {
  cfg.validate();
  const FogNode* node = grid.find(action.target);
  if (!node || !node->alive) throw InputError("edge_replay: target node is dead or unknown");
  const auto path = delivery_path(grid, action.origin, action.target);
  const double link_delay = path_link_delay(path);

  const double wait_ms = queued_cpu_demand(*node) / node->cpu_capacity * 1000.0;
  const double service_ms = service_seconds(*node, action.task) * 1000.0;
  const double energy = task_energy(*node, action.task);

  ReplayMetrics m;
  m.nominal_latency_ms = wait_ms + service_ms + node->base_latency + link_delay;
  const double post = (queued_cpu_demand(*node) + action.task.cpu_demand) / node->cpu_capacity;
  m.post_load_ratio = post;
  m.post_utilization = std::clamp(post, 0.0, 1.0);

  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> jitter(-cfg.cpu_jitter, cfg.cpu_jitter);
  std::uniform_real_distribution<double> delay(cfg.delay_min_ms, cfg.delay_max_ms);
  std::uniform_real_distribution<double> loss_rate(cfg.loss_min, cfg.loss_max);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  double worst = 0.0, sum_latency = 0.0, sum_energy = 0.0;
  int delivered = 0;
  for (int r = 0; r < cfg.replicas; ++r) {
    const double speed = 1.0 + jitter(rng);
    const double p_loss = loss_rate(rng);
    double network = 0.0;
    bool ok = false;
    for (int attempt = 0; attempt <= cfg.max_retries; ++attempt) {
      network += delay(rng);
      if (unit(rng) >= p_loss) {
        ok = true;
        break;
      }
    }
    sum_energy += energy * speed;
    if (!ok) {
      ++m.lost_replicas;
      continue;
    }
    const double latency = (wait_ms + service_ms) * speed + node->base_latency + link_delay + network;
    worst = std::max(worst, latency);
    sum_latency += latency;
    ++delivered;
  }
  m.worst_latency_ms = delivered ? worst : std::numeric_limits<double>::infinity();
  m.mean_latency_ms = delivered ? sum_latency / delivered : std::numeric_limits<double>::infinity();
  m.mean_energy = sum_energy / cfg.replicas;
  return m;
}

double cascade_failure_probability(std::span<const double> node_probs, std::span<const double> link_probs) {
  if (node_probs.size() != link_probs.size()) {
    throw InputError("cascade_failure_probability: node and link lists differ in length");
  }
  double survive = 1.0;
  for (std::size_t i = 0; i < node_probs.size(); ++i) {
    const double pn = node_probs[i];
    const double pl = link_probs[i];
    if (!(pn >= 0.0 && pn <= 1.0) || !(pl >= 0.0 && pl <= 1.0)) {
      throw InputError("cascade_failure_probability: probability outside [0, 1]");
    }
    survive *= (1.0 - pn) * (1.0 - pl);
  }
  return 1.0 - survive;
}

double path_failure_probability(std::span<const PathHop> path, const GridState& grid) {
  std::vector<double> nodes, links;
  for (const auto& hop : path) {
    const FogNode* n = grid.find(hop.node);
    nodes.push_back(n ? n->failure_prob : 1.0);
    links.push_back(hop.link ? hop.link->failure_prob : 0.0);
  }
  return cascade_failure_probability(nodes, links);
}

StabilityReport cloud_forecast(const GridState& grid, SimTime horizon_ms, NodeId origin) {
  StabilityReport rep;
  const bool any_live = std::any_of(grid.nodes.begin(), grid.nodes.end(), [](const FogNode& n) { return n.alive; });
  if (!any_live) {
    rep.degenerate = true;
    rep.stable = false;
    for (const auto& n : grid.nodes) {
      rep.path_p_fail[n.id] = 1.0;
      rep.projected_utilization[n.id] = 0.0;
    }
    return rep;
  }
  const double horizon_s = std::max(0.0, horizon_ms) / 1000.0;
  double sum = 0.0, sum_sq = 0.0;
  int live = 0;
  for (const auto& n : grid.nodes) {
    if (!n.alive) {
      rep.path_p_fail[n.id] = 1.0;
      continue;
    }
    const auto path = delivery_path(grid, origin, n.id);
    rep.path_p_fail[n.id] = path.empty() ? 1.0 : path_failure_probability(path, grid);
    const double backlog = std::max(0.0, queued_cpu_demand(n) - n.cpu_capacity * horizon_s);
    const double u = std::clamp(backlog / n.cpu_capacity, 0.0, 1.0);
    rep.projected_utilization[n.id] = u;
    if (u >= 1.0) rep.stable = false;
    sum += u;
    sum_sq += u * u;
    ++live;
  }
  const double mean = sum / live;
  rep.utilization_spread = std::sqrt(std::max(0.0, sum_sq / live - mean * mean));
  return rep;
}

TwinVerdict gate_decision(const Action& action, const GridState& grid, const PerturbationConfig& cfg,
                          const SafetyThresholds& thresholds, std::uint64_t seed) {
  TwinVerdict v;
  const FogNode* node = grid.find(action.target);
  if (!node || !node->alive) {
    v.p_fail = 1.0;
    v.predicted_latency_ms = std::numeric_limits<double>::infinity();
    v.reason = reason::dead_target;
    return v;
  }
  const ReplayMetrics m = edge_replay(action, grid, cfg, seed);
  const auto path = delivery_path(grid, action.origin, action.target);
  v.p_fail = path.empty() ? 1.0 : path_failure_probability(path, grid);
  v.predicted_latency_ms = m.worst_latency_ms;
  v.predicted_energy = m.mean_energy;
  v.predicted_utilization = m.post_utilization;

  const double budget = action.task.deadline - grid.clock;
  const double latency_limit = std::min(thresholds.max_latency_ms, budget);
  if (!(m.worst_latency_ms <= latency_limit)) {
    v.reason = reason::latency;
  } else if (!(m.mean_energy <= thresholds.max_energy)) {
    v.reason = reason::energy;
  } else if (!(m.post_load_ratio <= thresholds.max_utilization)) {
    v.reason = reason::utilization;
  } else if (!(v.p_fail <= thresholds.max_p_fail)) {
    v.reason = reason::failure_risk;
  } else {
    v.approved = true;
  }
  return v;
}

nlohmann::json HealthReport::to_json() const {
  nlohmann::json j;
  j["approved"] = approved;
  j["rejected"] = nlohmann::json::object();
  for (const auto& [r, c] : rejected) j["rejected"][r] = c;
  j["nodes"] = nlohmann::json::array();
  for (const auto& [id, p] : node_p_fail) {
    j["nodes"].push_back({{"id", id}, {"alive", node_alive.at(id)}, {"p_fail", p}});
  }
  j["utilization_histogram"] = utilization_histogram;
  return j;
}

HealthReport health_report(const GridState& grid, std::span<const TwinVerdict> verdicts) {
  HealthReport rep;
  for (const auto& v : verdicts) {
    if (v.approved) ++rep.approved;
    else ++rep.rejected[v.reason];
  }
  for (const auto& n : grid.nodes) {
    rep.node_p_fail[n.id] = n.failure_prob;
    rep.node_alive[n.id] = n.alive;
    if (!n.alive) continue;
    const auto bin = std::min<std::size_t>(9, static_cast<std::size_t>(utilization(n) * 10.0));
    ++rep.utilization_histogram[bin];
  }
  return rep;
}

}  // namespace fognite::twin
