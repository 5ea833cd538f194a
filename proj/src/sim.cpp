#include "fognite/sim.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <sstream>

#include "fognite/error.hpp"

namespace fognite::sim {

namespace {

std::uint64_t splitmix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t mix(std::uint64_t a, std::uint64_t b) { return splitmix(a ^ splitmix(b)); }

// Salts for independent random streams derived from one seed.
enum : std::uint64_t {
  kNodes = 1,
  kLinks,
  kFaults,
  kTasks,
  kMeters,
  kModel,
  kRounds,
  kWorld,
  kSched,
  kGate,
  kAgent,
  kTrainWorld,
  kPpo,
};

double uniform(std::mt19937_64& rng, const Range& r) {
  return std::uniform_real_distribution<double>(r.lo, r.hi)(rng);
}

double day_length(const ScenarioConfig& c) { return c.time.duration_ms / c.time.days; }

bool alive_at(const std::vector<FaultEntry>& faults, NodeId node, SimTime t) {
  for (const auto& f : faults) {
    if (f.node == node && f.at_ms <= t && t < f.at_ms + f.downtime_ms) return false;
  }
  return true;
}

double nrmse(const nn::ModelParams& model, const std::vector<Sample>& data) {
  if (data.empty()) return 1.0;
  nn::Matrix x(model.config.window, static_cast<Eigen::Index>(data.size()));
  nn::Vector y(static_cast<Eigen::Index>(data.size()));
  for (std::size_t i = 0; i < data.size(); ++i) {
    x.col(static_cast<Eigen::Index>(i)) = data[i].input;
    y(static_cast<Eigen::Index>(i)) = data[i].target;
  }
  const nn::Vector p = nn::predict(model, x);
  const double rmse = std::sqrt((p - y).squaredNorm() / static_cast<double>(data.size()));
  const double range = y.maxCoeff() - y.minCoeff();
  return range > 0.0 ? rmse / range : rmse;
}

}  // namespace

std::string to_string(SchedulerKind kind) {
  switch (kind) {
    case SchedulerKind::fognite: return "fognite";
    case SchedulerKind::focca_baseline: return "focca_baseline";
    case SchedulerKind::random: return "random";
  }
  return "unknown";
}

SchedulerKind parse_scheduler(const std::string& name) {
  if (name == "fognite") return SchedulerKind::fognite;
  if (name == "focca_baseline" || name == "baseline" || name == "focca") return SchedulerKind::focca_baseline;
  if (name == "random") return SchedulerKind::random;
  throw ConfigError("unknown scheduler '" + name + "' (expected fognite, focca_baseline or random)");
}

const char* to_string(EventKind kind) {
  switch (kind) {
    case EventKind::task_arrival: return "task_arrival";
    case EventKind::task_complete: return "task_complete";
    case EventKind::node_failure: return "node_failure";
    case EventKind::node_recovery: return "node_recovery";
    case EventKind::fl_round: return "fl_round";
    case EventKind::report_tick: return "report_tick";
  }
  return "unknown";
}

void EventQueue::push(Event e) {
  if (e.time < clock_) throw UsageError("event scheduled before the current clock");
  e.seq = next_seq_++;
  heap_.push(e);
}

Event EventQueue::pop() {
  if (heap_.empty()) throw UsageError("event queue is empty");
  Event e = heap_.top();
  heap_.pop();
  clock_ = e.time;
  return e;
}

double load_balance_efficiency(const std::vector<double>& u) {
  if (u.empty()) return 100.0;
  const double n = static_cast<double>(u.size());
  const double mean = std::accumulate(u.begin(), u.end(), 0.0) / n;
  if (mean <= 0.0) return 100.0;
  double var = 0.0;
  for (double x : u) var += (x - mean) * (x - mean);
  const double sd = std::sqrt(var / n);
  return 100.0 * std::max(0.0, 1.0 - sd / mean);
}

World build_world(const ScenarioConfig& c, std::uint64_t seed) {
  if (auto problems = validate_config(c); !problems.empty()) throw ConfigErrors(problems);
  World w;
  const int n = c.nodes.count;
  const double day = day_length(c);

  std::mt19937_64 rng(mix(seed, kNodes));
  for (int i = 0; i < n; ++i) {
    FogNode node;
    node.id = i;
    node.cpu_capacity = uniform(rng, c.nodes.cpu_capacity);
    node.mem_capacity = uniform(rng, c.nodes.mem_capacity);
    node.base_latency = uniform(rng, c.nodes.base_latency_ms);
    node.failure_prob = uniform(rng, c.nodes.failure_prob);
    node.battery_level = uniform(rng, c.nodes.battery_level);
    node.energy_profile.power_rate = uniform(rng, c.nodes.power_rate);
    node.energy_profile.idle_power = uniform(rng, c.nodes.idle_power);
    const double peak = uniform(rng, c.nodes.renewable_peak);
    const double phase = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
    const int steps = c.nodes.renewable_steps;
    node.energy_profile.step_ms = day / steps;
    node.energy_profile.renewable_fraction.clear();
    for (int s = 0; s < steps; ++s) {
      const double x = std::sin(2.0 * std::numbers::pi * ((s + 0.5) / steps + phase));
      node.energy_profile.renewable_fraction.push_back(peak * std::max(0.0, x));
    }
    w.grid.nodes.push_back(std::move(node));
  }

  rng.seed(mix(seed, kLinks));
  auto linked = [&](NodeId a, NodeId b) {
    return std::any_of(w.grid.links.begin(), w.grid.links.end(), [&](const Link& l) {
      return (l.from == a && l.to == b) || (l.from == b && l.to == a);
    });
  };
  auto add_link = [&](NodeId a, NodeId b) {
    Link l;
    l.from = a;
    l.to = b;
    l.delay = uniform(rng, c.links.delay_ms);
    l.loss_rate = uniform(rng, c.links.loss_rate);
    l.failure_prob = uniform(rng, c.links.failure_prob);
    w.grid.links.push_back(l);
  };
  if (n > 1) {
    for (int i = 0; i < n; ++i) {
      const int j = (i + 1) % n;
      if (!linked(i, j) && i != j) add_link(i, j);
    }
    std::uniform_int_distribution<int> pick(0, n - 1);
    for (int k = 0, tries = 0; k < c.links.chords && tries < 100; ++tries) {
      const int a = pick(rng), b = pick(rng);
      if (a == b || linked(a, b)) continue;
      add_link(a, b);
      ++k;
    }
  }

  rng.seed(mix(seed, kFaults));
  if (!c.faults.plan.empty()) {
    w.faults = c.faults.plan;
  } else {
    std::uniform_int_distribution<int> pick(0, n - 1);
    for (int k = 0; k < c.faults.count; ++k) {
      FaultEntry f;
      f.node = pick(rng);
      f.at_ms = std::uniform_real_distribution<double>(0.1, 0.85)(rng) * c.time.duration_ms;
      f.downtime_ms = uniform(rng, c.faults.downtime_ms);
      w.faults.push_back(f);
    }
  }
  std::stable_sort(w.faults.begin(), w.faults.end(),
                   [](const FaultEntry& a, const FaultEntry& b) { return a.at_ms < b.at_ms; });

  rng.seed(mix(seed, kTasks));
  {
    std::vector<double> times;
    std::uniform_real_distribution<double> when(0.0, 0.9 * c.time.duration_ms);
    for (int k = 0; k < c.workload.tasks; ++k) times.push_back(when(rng));
    std::sort(times.begin(), times.end());
    std::exponential_distribution<double> cpu(1.0 / c.workload.cpu_demand_mean);
    std::uniform_int_distribution<int> meter(0, c.meters.count - 1);
    for (int k = 0; k < c.workload.tasks; ++k) {
      TaskArrival a;
      a.task.id = k;
      a.task.created_at = times[static_cast<std::size_t>(k)];
      a.task.cpu_demand = std::clamp(cpu(rng), 0.05 * c.workload.cpu_demand_mean, 4.0 * c.workload.cpu_demand_mean);
      a.task.mem_demand = c.workload.mem_demand_mean * std::uniform_real_distribution<double>(0.5, 1.5)(rng);
      a.task.data_size = c.workload.data_size_mean_kb > 0.0
                             ? std::exponential_distribution<double>(1.0 / c.workload.data_size_mean_kb)(rng)
                             : 0.0;
      a.task.deadline = a.task.created_at + uniform(rng, c.workload.deadline_slack_ms);
      a.origin = meter(rng) % n;
      w.arrivals.push_back(a);
    }
  }
  double mean_cap = 0.0;
  for (const auto& node : w.grid.nodes) mean_cap += node.cpu_capacity;
  mean_cap /= n;
  w.mean_service_ms = c.workload.cpu_demand_mean / mean_cap * 1000.0;

  w.train.assign(static_cast<std::size_t>(n), {});
  w.train_ready.assign(static_cast<std::size_t>(n), {});
  if (c.federated.enabled) {
    const int window = c.federated.model.window;
    std::vector<Sample> holdout_all;
    for (int m = 0; m < c.meters.count; ++m) {
      std::mt19937_64 mr(mix(mix(seed, kMeters), static_cast<std::uint64_t>(m)));
      LoadPattern p;
      p.base_kw = c.meters.base_kw * std::uniform_real_distribution<double>(0.7, 1.3)(mr);
      p.daily_amplitude = c.meters.daily_amplitude;
      p.day_length_ms = day;
      p.phase = std::uniform_real_distribution<double>(-0.5, 0.5)(mr);
      p.appliances = c.meters.appliances;
      p.appliance_kw = c.meters.appliance_kw;
      p.appliance_period_ms = c.meters.appliance_period_ms;
      p.appliance_duty = c.meters.appliance_duty;
      p.noise = c.meters.noise;
      p.gap_fraction = c.meters.gap_fraction;
      const auto stream = impute_gaps(generate_stream(m, c.time.duration_ms, c.meters.rate_hz, p, mr()));
      const auto values = stream.values();
      const auto split = static_cast<std::size_t>(static_cast<double>(values.size()) * (1.0 - c.meters.holdout_fraction));
      const std::vector<double> head(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(split));
      if (head.empty()) continue;
      const auto scaler = MinMaxScaler::fit(head);
      const auto norm = scaler.normalize(values);
      const std::vector<double> train_part(norm.begin(), norm.begin() + static_cast<std::ptrdiff_t>(split));
      const auto home = static_cast<std::size_t>(m % n);
      auto windows = make_windows(train_part, window);
      for (std::size_t i = 0; i < windows.size(); ++i) {
        w.train_ready[home].push_back(stream.readings[i + static_cast<std::size_t>(window)].t);
        w.train[home].push_back(std::move(windows[i]));
      }
      if (split >= static_cast<std::size_t>(window)) {
        const std::vector<double> tail(norm.begin() + static_cast<std::ptrdiff_t>(split - static_cast<std::size_t>(window)),
                                       norm.end());
        for (auto& s : make_windows(tail, window)) holdout_all.push_back(std::move(s));
      }
    }
    const auto want = static_cast<std::size_t>(c.federated.eval_samples);
    if (holdout_all.size() <= want) {
      w.holdout = std::move(holdout_all);
    } else {
      for (std::size_t k = 0; k < want; ++k) w.holdout.push_back(holdout_all[k * holdout_all.size() / want]);
    }
  }
  validate(w.grid);
  return w;
}

FederatedTrace run_federated(const ScenarioConfig& c, const World& w, std::uint64_t seed) {
  FederatedTrace trace;
  if (!c.federated.enabled) return trace;
  fed::RoundState state;
  state.global = nn::build_model(c.federated.model, mix(seed, kModel));
  state.sync_interval = c.federated.sync_interval;
  state.train = {c.federated.epochs, c.federated.batch_size, c.federated.learning_rate, c.federated.lambda};
  state.persist_optimizer = c.federated.persist_optimizer;

  const std::size_t n = w.grid.nodes.size();
  std::vector<fed::FlNode> nodes(n);
  std::vector<std::vector<Sample>> batch(n);
  std::size_t raw = 0, sent = 0;
  std::mt19937_64 rng(mix(seed, kRounds));
  for (int k = 1; k * c.federated.round_interval_ms <= c.time.duration_ms; ++k) {
    const SimTime t = k * c.federated.round_interval_ms;
    for (std::size_t i = 0; i < n; ++i) {
      nodes[i].id = static_cast<NodeId>(i);
      nodes[i].alive = alive_at(w.faults, nodes[i].id, t);
      std::vector<std::size_t> ready;
      for (std::size_t s = 0; s < w.train[i].size(); ++s) {
        if (w.train_ready[i][s] <= t) ready.push_back(s);
      }
      std::shuffle(ready.begin(), ready.end(), rng);
      ready.resize(std::min(ready.size(), static_cast<std::size_t>(c.federated.max_samples_per_round)));
      std::sort(ready.begin(), ready.end());
      batch[i].clear();
      for (auto s : ready) batch[i].push_back(w.train[i][s]);
      nodes[i].data = batch[i];
    }
    auto out = fed::run_round(state, nodes, c.compression, rng());
    state = std::move(out.state);
    raw += out.log.raw_bytes;
    sent += out.log.compressed_bytes;
    trace.rounds.push_back({t, std::move(out.log), nrmse(state.global, w.holdout)});
  }
  const double err = nrmse(state.global, w.holdout);
  trace.model_accuracy_pct = w.holdout.empty() ? 0.0 : std::clamp(100.0 * (1.0 - err), 0.0, 100.0);
  trace.compression_ratio = sent ? static_cast<double>(raw) / static_cast<double>(sent) : 0.0;
  return trace;
}

twin::SafetyThresholds thresholds_for(const ScenarioConfig& c, const World& w) {
  twin::SafetyThresholds t;
  t.max_latency_ms = c.twin.max_latency_ms.value_or(2.0 * w.mean_service_ms);
  t.max_energy = c.twin.max_energy;
  t.max_p_fail = c.twin.max_p_fail;
  t.max_utilization = c.twin.max_utilization;
  return t;
}

rl::PpoConfig ppo_config(const ScenarioConfig& c) {
  rl::PpoConfig p;
  p.clip = c.rl.clip;
  p.entropy_coeff = c.rl.entropy_coeff;
  p.value_coeff = c.rl.value_coeff;
  p.learning_rate = c.rl.learning_rate;
  p.gamma = c.rl.gamma;
  p.epochs = c.rl.epochs;
  p.minibatch = c.rl.minibatch;
  return p;
}

Simulation::Simulation(const ScenarioConfig& config, World world, SchedulerKind kind, std::uint64_t seed,
                       SimOptions options, std::vector<rl::Agent>* agents)
    : config_(config),
      world_(std::move(world)),
      kind_(kind),
      seed_(seed),
      options_(options),
      agents_(agents),
      thresholds_(thresholds_for(config, world_)),
      world_rng_(mix(seed, kWorld)),
      sched_rng_(mix(seed, kSched)) {
  if (kind_ == SchedulerKind::fognite && (!agents_ || agents_->empty())) {
    throw UsageError("fognite scheduler needs at least one agent");
  }
  const std::size_t n = world_.grid.nodes.size();
  runs_.assign(n, {});
  const std::size_t learners = agents_ ? agents_->size() : 0;
  batch_.assign(learners, {});
  batch_steps_.assign(learners, 0);

  for (std::size_t i = 0; i < world_.arrivals.size(); ++i) {
    Event e;
    e.time = world_.arrivals[i].task.created_at;
    e.kind = EventKind::task_arrival;
    e.task = world_.arrivals[i].task.id;
    e.node = world_.arrivals[i].origin;
    schedule(e);
  }
  for (const auto& f : world_.faults) {
    Event e;
    e.time = f.at_ms;
    e.kind = EventKind::node_failure;
    e.node = f.node;
    e.downtime = f.downtime_ms;
    schedule(e);
  }
  if (options_.federated) {
    for (std::size_t r = 0; r < options_.federated->rounds.size(); ++r) {
      Event e;
      e.time = options_.federated->rounds[r].time;
      e.kind = EventKind::fl_round;
      e.round = static_cast<int>(r);
      schedule(e);
    }
  }
  for (int k = 0; k * config_.time.report_tick_ms <= config_.time.duration_ms; ++k) {
    Event e;
    e.time = k * config_.time.report_tick_ms;
    e.kind = EventKind::report_tick;
    schedule(e);
  }
}

std::uint64_t Simulation::stream_seed(std::uint64_t salt, std::uint64_t a, std::uint64_t b) const {
  return mix(mix(mix(seed_, salt), a), b);
}

void Simulation::schedule(Event e) { queue_.push(e); }

void Simulation::journal(nlohmann::json line) {
  if (!options_.journal) return;
  *options_.journal << line.dump() << '\n';
}

bool Simulation::step() {
  if (queue_.empty()) return false;
  const Event e = queue_.pop();
  world_.grid.clock = e.time;
  ++processed_;
  switch (e.kind) {
    case EventKind::task_arrival: on_arrival(e); break;
    case EventKind::task_complete: on_complete(e); break;
    case EventKind::node_failure: on_failure(e); break;
    case EventKind::node_recovery: on_recovery(e); break;
    case EventKind::fl_round: on_fl_round(e); break;
    case EventKind::report_tick: on_tick(e); break;
  }
  return true;
}

void Simulation::run() {
  while (step()) {
  }
  const long long errors = dropped_ + misses_ + overloads_;
  if (error_series_.empty() || error_series_.back().first < clock()) {
    error_series_.emplace_back(clock(), errors);
    journal({{"t", clock()}, {"ev", "end"}, {"errors", errors}});
  }
  if (options_.learn) maybe_learn(true);
}

std::vector<bool> Simulation::live_mask() const {
  std::vector<bool> m;
  for (const auto& n : world_.grid.nodes) m.push_back(n.alive);
  return m;
}

double Simulation::cluster_util_std() const {
  double sum = 0.0, sq = 0.0;
  int live = 0;
  for (const auto& n : world_.grid.nodes) {
    if (!n.alive) continue;
    const double u = utilization(n);
    sum += u;
    sq += u * u;
    ++live;
  }
  if (!live) return 0.0;
  const double mean = sum / live;
  return std::sqrt(std::max(0.0, sq / live - mean * mean));
}

std::size_t Simulation::agent_for(NodeId origin) const {
  if (!agents_ || agents_->size() <= 1 || origin < 0) return 0;
  return static_cast<std::size_t>(origin) % agents_->size();
}

void Simulation::on_arrival(const Event& e) {
  auto it = reassigned_from_.find(e.task);
  if (it != reassigned_from_.end()) {
    auto& f = failures_[it->second];
    f.last_reassigned = clock();
    --f.outstanding;
    reassigned_from_.erase(it);
    const Pending p = pending_.at(e.task);
    pending_.erase(e.task);
    journal({{"t", clock()}, {"ev", "reassign"}, {"task", e.task}});
    dispatch_task(p.task, p.origin);
    return;
  }
  ++arrived_;
  const Task& task = world_.arrivals.at(static_cast<std::size_t>(e.task)).task;
  journal({{"t", clock()}, {"ev", "arrival"}, {"task", task.id}, {"origin", e.node}});
  dispatch_task(task, e.node);
}

std::optional<NodeId> Simulation::choose_baseline(const Task& task, NodeId) const {
  std::optional<NodeId> best;
  double best_cost = 0.0;
  for (const auto& n : world_.grid.nodes) {
    if (!n.alive) continue;
    const double cost = service_seconds(n, task) * 1000.0 + n.base_latency;
    if (!best || cost < best_cost) {
      best = n.id;
      best_cost = cost;
    }
  }
  return best;
}

DispatchOutcome Simulation::dispatch_task(const Task& task, NodeId origin) {
  DispatchOutcome out;
  auto& grid = world_.grid;
  std::vector<NodeId> live;
  for (const auto& n : grid.nodes) {
    if (n.alive) live.push_back(n.id);
  }
  if (live.empty()) {
    drop(task, "no_live_node");
    return out;
  }
  const FogNode* from = grid.find(origin);
  const NodeId ingress = (from && from->alive) ? origin : -1;

  if (kind_ == SchedulerKind::focca_baseline || kind_ == SchedulerKind::random) {
    NodeId target;
    if (kind_ == SchedulerKind::focca_baseline) {
      target = *choose_baseline(task, ingress);
    } else {
      std::uniform_int_distribution<std::size_t> pick(0, live.size() - 1);
      target = live[pick(sched_rng_)];
    }
    out.proposals = 1;
    place_on_node(task, ingress, target);
    out.placement = pending_.count(task.id) ? DispatchOutcome::Placement::node : DispatchOutcome::Placement::dropped;
    out.target = target;
    return out;
  }

  const std::size_t a = live.size();
  Eigen::MatrixXd states(rl::kStateDim, static_cast<Eigen::Index>(a));
  for (std::size_t i = 0; i < a; ++i) {
    states.col(static_cast<Eigen::Index>(i)) = rl::encode_state(grid, *grid.find(live[i]), task, config_.rl.norms, ingress);
  }
  const std::size_t learner = agent_for(origin);
  const rl::Agent& agent = (*agents_)[learner];
  const double value = rl::value_estimate(agent.value, states);
  std::vector<bool> allowed(a, true);
  rl::Trajectory steps;

  for (std::size_t attempt = 0; attempt < a; ++attempt) {
    const Eigen::VectorXd probs = rl::policy_probs(agent.policy, states, allowed);
    const int action = rl::select_action(probs, options_.greedy ? nullptr : &sched_rng_, options_.greedy);
    const NodeId target = live[static_cast<std::size_t>(action)];
    ++out.proposals;
    rl::Step step;
    step.states = states;
    step.allowed = allowed;
    step.action = action;
    step.log_prob = std::log(std::max(probs(action), 1e-300));
    step.value = value;

    if (options_.gate_enabled) {
      const twin::Action act{task, target, ingress};
      const auto v = twin::gate_decision(act, grid, config_.twin.perturbation, thresholds_,
                                         stream_seed(kGate, static_cast<std::uint64_t>(task.id), attempt));
      journal({{"t", clock()},
               {"ev", "gate"},
               {"task", task.id},
               {"target", target},
               {"approved", v.approved},
               {"reason", v.reason},
               {"latency_ms", v.predicted_latency_ms},
               {"p_fail", v.p_fail}});
      if (!v.approved) {
        ++rejections_;
        step.reward = -config_.rl.reject_penalty;
        steps.push_back(std::move(step));
        allowed[static_cast<std::size_t>(action)] = false;
        continue;
      }
    }
    steps.push_back(std::move(step));
    place_on_node(task, ingress, target);
    if (pending_.count(task.id)) {
      open_[task.id] = Open{learner, std::move(steps)};
      out.placement = DispatchOutcome::Placement::node;
    } else if (options_.learn) {
      // Lost in transit: the outcome is already known.
      rl::Trajectory done = std::move(steps);
      done.back().reward = rl::compute_reward({0.0, 1.0, 0.0, 0.0, 0.0, true}, config_.rl.weights);
      batch_steps_[learner] += done.size();
      batch_[learner].push_back(std::move(done));
      maybe_learn(false);
    }
    out.target = target;
    return out;
  }

  place_in_cloud(task);
  out.placement = DispatchOutcome::Placement::cloud;
  if (options_.learn && !steps.empty()) {
    batch_steps_[learner] += steps.size();
    batch_[learner].push_back(std::move(steps));
    maybe_learn(false);
  }
  return out;
}

void Simulation::place_on_node(const Task& task, NodeId origin, NodeId target) {
  auto& grid = world_.grid;
  FogNode& node = *grid.find(target);
  if (!node.alive) throw UsageError("dispatch to a dead node");
  ++decisions_;

  const auto& pert = config_.twin.perturbation;
  double network = 0.0;
  if (origin >= 0 && origin != target) {
    double link_delay = 0.0, keep = 1.0;
    for (const auto& hop : shortest_path(grid, origin, target)) {
      if (!hop.link) continue;
      link_delay += hop.link->delay;
      keep *= 1.0 - hop.link->loss_rate;
    }
    std::uniform_real_distribution<double> delay(pert.delay_min_ms, pert.delay_max_ms);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    bool ok = false;
    for (int attempt = 0; attempt <= pert.max_retries; ++attempt) {
      network += link_delay + delay(world_rng_);
      if (unit(world_rng_) < keep) {
        ok = true;
        break;
      }
    }
    if (!ok) {
      journal({{"t", clock()}, {"ev", "exec"}, {"task", task.id}, {"target", target}, {"alive", node.alive}});
      drop(task, "network_loss");
      return;
    }
  }

  double max_energy = 0.0;
  for (const auto& n : grid.nodes) {
    if (n.alive) max_energy = std::max(max_energy, task_energy(n, task));
  }

  Pending p;
  p.task = task;
  p.origin = origin;
  p.ready_at = clock() + network + node.base_latency;
  p.renewable = renewable_fraction_at(node.energy_profile, clock());
  p.energy_norm = max_energy > 0.0 ? task_energy(node, task) / max_energy : 0.0;
  node.queue.push_back(task);
  p.util_std = cluster_util_std();
  pending_[task.id] = p;

  journal({{"t", clock()}, {"ev", "exec"}, {"task", task.id}, {"target", target}, {"alive", node.alive}});
  if (load_ratio(node) > 1.0) {
    ++overloads_;
    journal({{"t", clock()}, {"ev", "overload"}, {"task", task.id}, {"node", target}});
  }
  if (!runs_[static_cast<std::size_t>(target)].busy) start_next(node);
}

void Simulation::place_in_cloud(const Task& task) {
  const auto& cloud = config_.cloud;
  const double latency = cloud.latency_ms + task.cpu_demand / cloud.cpu_capacity * 1000.0;
  ++cloud_;
  ++completed_;
  response_sum_ += clock() + latency - task.created_at;
  ++response_count_;
  energy_ += task.cpu_demand / cloud.cpu_capacity * cloud.power_rate;
  const bool late = clock() + latency > task.deadline;
  if (late) ++misses_;
  journal({{"t", clock()}, {"ev", "cloud"}, {"task", task.id}, {"latency_ms", latency}, {"late", late}});
}

void Simulation::start_next(FogNode& node) {
  auto& run = runs_[static_cast<std::size_t>(node.id)];
  if (node.queue.empty()) {
    run.busy = false;
    return;
  }
  const Task& head = node.queue.front();
  const SimTime start = std::max(clock(), pending_.at(head.id).ready_at);
  const double jitter = config_.twin.perturbation.cpu_jitter;
  const double speed = 1.0 + std::uniform_real_distribution<double>(-jitter, jitter)(world_rng_);
  run.busy = true;
  run.service_start = start;
  Event e;
  e.time = start + service_seconds(node, head) * 1000.0 * speed;
  e.kind = EventKind::task_complete;
  e.task = head.id;
  e.node = node.id;
  e.epoch = run.epoch;
  schedule(e);
}

void Simulation::drop(const Task& task, const char* why) {
  ++dropped_;
  pending_.erase(task.id);
  journal({{"t", clock()}, {"ev", "drop"}, {"task", task.id}, {"reason", why}});
  rl::ExecutionOutcome o;
  o.dropped = true;
  const double r = rl::compute_reward(o, config_.rl.weights);
  if (open_.count(task.id)) finish_trajectory(task.id, r);
}

void Simulation::finish_trajectory(TaskId id, double reward) {
  auto it = open_.find(id);
  if (it == open_.end()) return;
  Open o = std::move(it->second);
  open_.erase(it);
  o.steps.back().reward = reward;
  if (!options_.learn) return;
  batch_steps_[o.agent] += o.steps.size();
  batch_[o.agent].push_back(std::move(o.steps));
  maybe_learn(false);
}

void Simulation::maybe_learn(bool force) {
  if (!agents_) return;
  for (std::size_t i = 0; i < batch_.size(); ++i) {
    if (batch_[i].empty()) continue;
    if (!force && batch_steps_[i] < static_cast<std::size_t>(config_.rl.batch_steps)) continue;
    rl::ppo_update((*agents_)[i], batch_[i], stream_seed(kPpo, i, updates_++));
    batch_[i].clear();
    batch_steps_[i] = 0;
  }
}

void Simulation::on_complete(const Event& e) {
  FogNode& node = *world_.grid.find(e.node);
  auto& run = runs_[static_cast<std::size_t>(e.node)];
  if (e.epoch != run.epoch || node.queue.empty() || node.queue.front().id != e.task) return;
  const Task task = node.queue.front();
  node.queue.erase(node.queue.begin());
  run.busy_ms += clock() - run.service_start;
  const Pending p = pending_.at(task.id);

  energy_ += task_energy(node, task) * (1.0 - renewable_fraction_at(node.energy_profile, run.service_start));

  std::vector<double> nodes_p, links_p;
  std::vector<PathHop> path;
  if (p.origin >= 0 && p.origin != node.id) path = shortest_path(world_.grid, p.origin, node.id);
  if (path.empty()) path = {PathHop{node.id, std::nullopt}};
  for (const auto& hop : path) {
    const FogNode* h = world_.grid.find(hop.node);
    nodes_p.push_back(std::min(1.0, h->failure_prob * (1.0 + config_.nodes.thermal_risk * h->thermal)));
    links_p.push_back(hop.link ? hop.link->failure_prob : 0.0);
  }
  const double p_fail = twin::cascade_failure_probability(nodes_p, links_p);
  if (std::uniform_real_distribution<double>(0.0, 1.0)(world_rng_) < p_fail) {
    drop(task, "path_failure");
  } else {
    ++completed_;
    const double response = clock() - task.created_at;
    response_sum_ += response;
    ++response_count_;
    const bool late = clock() > task.deadline;
    if (late) ++misses_;
    journal({{"t", clock()}, {"ev", "complete"}, {"task", task.id}, {"node", node.id}, {"response_ms", response},
             {"late", late}});
    rl::ExecutionOutcome o;
    o.latency_ms = response;
    o.deadline_budget_ms = task.deadline - task.created_at;
    o.renewable_fraction = p.renewable;
    o.energy_norm = p.energy_norm;
    o.util_std = p.util_std;
    const double r = rl::compute_reward(o, config_.rl.weights);
    reward_sum_ += r;
    ++reward_count_;
    pending_.erase(task.id);
    finish_trajectory(task.id, r);
  }
  start_next(node);
}

void Simulation::on_failure(const Event& e) {
  FogNode* node = world_.grid.find(e.node);
  if (!node || !node->alive) {
    journal({{"t", clock()}, {"ev", "warning"}, {"message", "failure of a node that is already down"}, {"node", e.node}});
    return;
  }
  auto& run = runs_[static_cast<std::size_t>(e.node)];
  node->alive = false;
  ++run.epoch;
  run.alive_ms += clock() - run.alive_since;
  if (run.busy) run.busy_ms += std::max(0.0, clock() - run.service_start);
  run.busy = false;

  std::vector<Task> flushed = std::move(node->queue);
  node->queue.clear();
  const std::size_t index = failures_.size();
  failures_.push_back({clock(), clock(), static_cast<long long>(flushed.size())});
  journal({{"t", clock()}, {"ev", "node_failure"}, {"node", e.node}, {"flushed", flushed.size()}});

  double handoff = config_.faults.detection_ms;
  for (const auto& task : flushed) {
    open_.erase(task.id);
    handoff += task.data_size * 8.0 / config_.faults.bandwidth_kbps * 1000.0;
    reassigned_from_[task.id] = index;
    Event a;
    a.time = clock() + handoff;
    a.kind = EventKind::task_arrival;
    a.task = task.id;
    schedule(a);
  }
  Event r;
  r.time = clock() + e.downtime;
  r.kind = EventKind::node_recovery;
  r.node = e.node;
  schedule(r);
}

void Simulation::on_recovery(const Event& e) {
  FogNode* node = world_.grid.find(e.node);
  if (!node || node->alive) return;
  node->alive = true;
  node->thermal = 0.0;
  runs_[static_cast<std::size_t>(e.node)].alive_since = clock();
  journal({{"t", clock()}, {"ev", "node_recovery"}, {"node", e.node}});
}

void Simulation::on_fl_round(const Event& e) {
  const auto& r = options_.federated->rounds.at(static_cast<std::size_t>(e.round));
  journal({{"t", clock()},
           {"ev", "fl_round"},
           {"round", r.log.round},
           {"participants", r.log.participants},
           {"skipped", r.log.skipped},
           {"raw_bytes", r.log.raw_bytes},
           {"sent_bytes", r.log.compressed_bytes},
           {"rebroadcast", r.log.rebroadcast},
           {"holdout_nrmse", r.holdout_nrmse}});
}

void Simulation::update_thermal() {
  const double s = config_.nodes.thermal_smoothing;
  for (auto& n : world_.grid.nodes) {
    if (n.alive) n.thermal = (1.0 - s) * n.thermal + s * utilization(n);
  }
}

void Simulation::on_tick(const Event&) {
  update_thermal();
  const long long errors = dropped_ + misses_ + overloads_;
  error_series_.emplace_back(clock(), errors);
  journal({{"t", clock()}, {"ev", "tick"}, {"errors", errors}});
}

std::vector<double> Simulation::fault_recovery_ms() const {
  std::vector<double> out;
  for (const auto& f : failures_) out.push_back(f.last_reassigned - f.at);
  return out;
}

MetricsRecord Simulation::record_metrics() const {
  MetricsRecord m;
  m.avg_response_ms = response_count_ ? response_sum_ / static_cast<double>(response_count_) : 0.0;

  std::vector<double> busy;
  double idle = 0.0;
  for (std::size_t i = 0; i < runs_.size(); ++i) {
    const auto& run = runs_[i];
    const auto& node = world_.grid.nodes[i];
    double alive = run.alive_ms + (node.alive ? clock() - run.alive_since : 0.0);
    double b = run.busy_ms + (run.busy ? std::max(0.0, clock() - run.service_start) : 0.0);
    idle += idle_energy(node.energy_profile, alive);
    if (alive > 0.0) busy.push_back(std::min(1.0, b / alive));
  }
  m.load_balance_efficiency_pct = load_balance_efficiency(busy);

  const double joules = energy_ + idle;
  const double duration_s = config_.time.duration_ms / 1000.0;
  m.energy_kwh_equiv = joules * (config_.time.compressed_hours * 3600.0 / duration_s) / 3.6e6;
  m.model_accuracy_pct = options_.federated ? options_.federated->model_accuracy_pct : 0.0;
  const auto rec = fault_recovery_ms();
  m.fault_recovery_s = rec.empty() ? 0.0 : std::accumulate(rec.begin(), rec.end(), 0.0) / rec.size() / 1000.0;
  m.cumulative_errors = error_series_;

  m.tasks_arrived = arrived_;
  m.tasks_completed = completed_;
  m.tasks_dropped = dropped_;
  m.tasks_in_flight = static_cast<long long>(pending_.size());
  m.deadline_misses = misses_;
  m.overloads = overloads_;
  m.cloud_offloads = cloud_;
  m.gate_rejections = rejections_;
  m.decisions = decisions_;
  m.mean_reward = reward_count_ ? reward_sum_ / static_cast<double>(reward_count_) : 0.0;
  return m;
}

std::vector<rl::Agent> train_agents(const ScenarioConfig& config, std::uint64_t seed) {
  const std::size_t count = config.rl.per_node_learners ? static_cast<std::size_t>(config.nodes.count) : 1;
  std::vector<rl::Agent> agents;
  for (std::size_t i = 0; i < count; ++i) {
    agents.push_back(rl::Agent::make(ppo_config(config), mix(mix(seed, kAgent), i)));
  }
  ScenarioConfig train_cfg = config;
  train_cfg.federated.enabled = false;
  for (int ep = 0; ep < config.rl.train_episodes; ++ep) {
    const std::uint64_t s = mix(mix(seed, kTrainWorld), static_cast<std::uint64_t>(ep));
    SimOptions opt;
    opt.gate_enabled = config.twin.enabled;
    opt.greedy = false;
    opt.learn = true;
    Simulation sim(train_cfg, build_world(train_cfg, s), SchedulerKind::fognite, s, opt, &agents);
    sim.run();
  }
  return agents;
}

ExperimentResult run_experiment(const ScenarioConfig& config, SchedulerKind kind, std::uint64_t seed,
                                const FederatedTrace* federated) {
  if (auto problems = validate_config(config); !problems.empty()) throw ConfigErrors(problems);
  ExperimentResult result;
  World world = build_world(config, seed);
  FederatedTrace own;
  if (!federated && config.federated.enabled) {
    own = run_federated(config, world, seed);
    federated = &own;
  }
  if (kind == SchedulerKind::fognite) result.agents = train_agents(config, seed);

  std::ostringstream journal;
  SimOptions opt;
  opt.gate_enabled = config.twin.enabled;
  opt.greedy = config.rl.greedy_eval;
  opt.journal = &journal;
  opt.federated = federated;
  Simulation sim(config, std::move(world), kind, seed, opt, kind == SchedulerKind::fognite ? &result.agents : nullptr);
  sim.run();
  result.metrics = sim.record_metrics();
  result.journal = journal.str();
  return result;
}

}  // namespace fognite::sim
