#include "fognite/grid.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <queue>
#include <set>
#include <string>

#include "fognite/error.hpp"

namespace fognite {

namespace {

bool in_unit(double v) { return std::isfinite(v) && v >= 0.0 && v <= 1.0; }

}  // namespace

const FogNode* GridState::find(NodeId id) const {
  for (const auto& n : nodes) {
    if (n.id == id) return &n;
  }
  return nullptr;
}

FogNode* GridState::find(NodeId id) {
  for (auto& n : nodes) {
    if (n.id == id) return &n;
  }
  return nullptr;
}

void validate(const EnergyProfile& profile) {
  if (profile.renewable_fraction.empty()) {
    throw ConfigError("energy profile: renewable_fraction series is empty");
  }
  for (double v : profile.renewable_fraction) {
    if (!in_unit(v)) throw ConfigError("energy profile: renewable fraction outside [0,1]");
  }
  if (!(profile.step_ms > 0.0)) throw ConfigError("energy profile: step_ms must be > 0");
  if (profile.power_rate < 0.0 || profile.idle_power < 0.0) {
    throw ConfigError("energy profile: rates must be >= 0");
  }
}

void validate(const FogNode& node) {
  const std::string where = "node " + std::to_string(node.id) + ": ";
  if (!(node.cpu_capacity > 0.0)) throw ConfigError(where + "cpu_capacity must be > 0");
  if (!(node.mem_capacity > 0.0)) throw ConfigError(where + "mem_capacity must be > 0");
  if (!in_unit(node.battery_level)) throw ConfigError(where + "battery_level outside [0,1]");
  if (!in_unit(node.failure_prob)) throw ConfigError(where + "failure_prob outside [0,1]");
  if (node.base_latency < 0.0) throw ConfigError(where + "base_latency must be >= 0");
  std::set<TaskId> seen;
  for (const auto& t : node.queue) {
    if (!seen.insert(t.id).second) throw ConfigError(where + "duplicate task id in queue");
  }
  validate(node.energy_profile);
}

void validate(const Link& link) {
  if (link.delay < 0.0) throw ConfigError("link: delay must be >= 0");
  if (!in_unit(link.loss_rate)) throw ConfigError("link: loss_rate outside [0,1]");
  if (!in_unit(link.failure_prob)) throw ConfigError("link: failure_prob outside [0,1]");
}

void validate(const Task& task) {
  if (task.cpu_demand < 0.0 || task.mem_demand < 0.0 || task.data_size < 0.0) {
    throw InputError("task " + std::to_string(task.id) + ": demands must be >= 0");
  }
  if (!(task.deadline > task.created_at)) {
    throw InputError("task " + std::to_string(task.id) + ": deadline must follow created_at");
  }
}

void validate(const GridState& grid) {
  std::set<NodeId> ids;
  for (const auto& n : grid.nodes) {
    validate(n);
    if (!ids.insert(n.id).second) throw ConfigError("grid: duplicate node id");
  }
  for (const auto& l : grid.links) {
    validate(l);
    if (!ids.count(l.from) || !ids.count(l.to)) {
      throw ConfigError("grid: link endpoint names an unknown node");
    }
  }
}

double queued_cpu_demand(const FogNode& node) {
  double sum = 0.0;
  for (const auto& t : node.queue) sum += t.cpu_demand;
  return sum;
}

double queued_mem_demand(const FogNode& node) {
  double sum = 0.0;
  for (const auto& t : node.queue) sum += t.mem_demand;
  return sum;
}

double load_ratio(const FogNode& node) { return queued_cpu_demand(node) / node.cpu_capacity; }

double utilization(const FogNode& node) { return std::clamp(load_ratio(node), 0.0, 1.0); }

double renewable_fraction_at(const EnergyProfile& profile, SimTime t) {
  if (profile.renewable_fraction.empty()) {
    throw ConfigError("energy profile: renewable_fraction series is empty");
  }
  const auto n = static_cast<long long>(profile.renewable_fraction.size());
  auto idx = static_cast<long long>(std::floor(t / profile.step_ms)) % n;
  if (idx < 0) idx += n;
  return profile.renewable_fraction[static_cast<std::size_t>(idx)];
}

double service_seconds(const FogNode& node, const Task& task) {
  return task.cpu_demand / node.cpu_capacity;
}

double task_energy(const FogNode& node, const Task& task) {
  return service_seconds(node, task) * node.energy_profile.power_rate;
}

double idle_energy(const EnergyProfile& profile, SimTime elapsed_ms) {
  return profile.idle_power * elapsed_ms / 1000.0;
}

std::vector<PathHop> shortest_path(const GridState& grid, NodeId from, NodeId to,
                                   bool live_only) {
  const FogNode* src = grid.find(from);
  const FogNode* dst = grid.find(to);
  if (!src || !dst) return {};
  if (live_only && (!src->alive || !dst->alive)) return {};
  if (from == to) return {PathHop{from, std::nullopt}};

  constexpr double inf = std::numeric_limits<double>::infinity();
  const std::size_t n = grid.nodes.size();
  auto index_of = [&](NodeId id) -> std::size_t {
    for (std::size_t i = 0; i < n; ++i) {
      if (grid.nodes[i].id == id) return i;
    }
    return n;
  };

  std::vector<double> dist(n, inf);
  std::vector<std::ptrdiff_t> via_link(n, -1);
  std::vector<std::size_t> prev(n, n);
  using Item = std::pair<double, std::size_t>;
  std::priority_queue<Item, std::vector<Item>, std::greater<>> open;
  const std::size_t s = index_of(from);
  dist[s] = 0.0;
  open.emplace(0.0, s);
  while (!open.empty()) {
    auto [d, u] = open.top();
    open.pop();
    if (d > dist[u]) continue;
    for (std::size_t li = 0; li < grid.links.size(); ++li) {
      const Link& l = grid.links[li];
      NodeId other;
      if (l.from == grid.nodes[u].id) {
        other = l.to;
      } else if (l.to == grid.nodes[u].id) {
        other = l.from;
      } else {
        continue;
      }
      const std::size_t v = index_of(other);
      if (v == n) continue;
      if (live_only && !grid.nodes[v].alive) continue;
      const double nd = d + l.delay;
      // Strict comparison plus link order keeps ties deterministic.
      if (nd < dist[v]) {
        dist[v] = nd;
        prev[v] = u;
        via_link[v] = static_cast<std::ptrdiff_t>(li);
        open.emplace(nd, v);
      }
    }
  }

  const std::size_t t = index_of(to);
  if (dist[t] == inf) return {};
  std::vector<PathHop> rev;
  for (std::size_t v = t; v != s; v = prev[v]) {
    rev.push_back(PathHop{grid.nodes[v].id, grid.links[static_cast<std::size_t>(via_link[v])]});
  }
  rev.push_back(PathHop{from, std::nullopt});
  std::reverse(rev.begin(), rev.end());
  return rev;
}

}  // namespace fognite
