#include <doctest.h>

#include <sstream>

#include "fixtures.hpp"
#include "fognite/error.hpp"
#include "fognite/sim.hpp"

using namespace fognite;
using namespace fognite::sim;

namespace {

ScenarioConfig small_config() {
  ScenarioConfig c;
  c.federated.enabled = false;
  c.time.duration_ms = 20'000.0;
  c.time.report_tick_ms = 1'000.0;
  return c;
}

// Hand-built world: nodes in a line, no arrivals, no faults.
World line_world(std::vector<FogNode> nodes) {
  World w;
  w.grid.nodes = std::move(nodes);
  for (std::size_t i = 0; i + 1 < w.grid.nodes.size(); ++i) {
    Link l;
    l.from = static_cast<NodeId>(i);
    l.to = static_cast<NodeId>(i + 1);
    l.delay = 1.0;
    w.grid.links.push_back(l);
  }
  w.mean_service_ms = 500.0;
  return w;
}

void add_arrival(World& w, double cpu, SimTime at, NodeId origin, SimTime slack = 5000.0) {
  const auto id = static_cast<TaskId>(w.arrivals.size());
  w.arrivals.push_back({fixture::task(id, cpu, at, slack), origin});
}

}  // namespace

TEST_CASE("event queue orders by time then insertion") {
  EventQueue q;
  Event a, b, c;
  a.time = 5.0;
  a.node = 1;
  b.time = 5.0;
  b.node = 2;
  c.time = 1.0;
  c.node = 3;
  q.push(a);
  q.push(b);
  q.push(c);
  CHECK(q.pop().node == 3);
  CHECK(q.pop().node == 1);
  CHECK(q.pop().node == 2);
  CHECK(q.clock() == 5.0);
  Event past;
  past.time = 4.0;
  CHECK_THROWS_AS(q.push(past), UsageError);
  CHECK_THROWS_AS(q.pop(), UsageError);
}

TEST_CASE("load balance efficiency") {
  CHECK(load_balance_efficiency({1.0, 0.0}) == 0.0);
  CHECK(load_balance_efficiency({0.4, 0.4, 0.4}) == doctest::Approx(100.0));
  CHECK(load_balance_efficiency({}) == 100.0);
  CHECK(load_balance_efficiency({0.0, 0.0}) == 100.0);
  // mean 0.5, std 0.25
  CHECK(load_balance_efficiency({0.25, 0.75}) == doctest::Approx(50.0));
}

TEST_CASE("scheduler names") {
  CHECK(parse_scheduler("fognite") == SchedulerKind::fognite);
  CHECK(parse_scheduler("baseline") == SchedulerKind::focca_baseline);
  CHECK(parse_scheduler(to_string(SchedulerKind::random)) == SchedulerKind::random);
  CHECK_THROWS_AS(parse_scheduler("round_robin"), ConfigError);
}

TEST_CASE("dispatch with a single live node") {
  const auto cfg = small_config();
  for (auto kind : {SchedulerKind::focca_baseline, SchedulerKind::random}) {
    Simulation sim(cfg, line_world({fixture::node(0, 4.0)}), kind, 1);
    const auto out = sim.dispatch_task(fixture::task(0, 1.0), 0);
    CHECK(out.placement == DispatchOutcome::Placement::node);
    CHECK(out.target == 0);
    CHECK(sim.grid().nodes[0].queue.size() == 1);
  }
}

TEST_CASE("baseline picks the lowest nominal latency") {
  const auto cfg = small_config();
  // Service 1000 ms on node 0 + 10 base vs 500 ms on node 1 + 20 base.
  Simulation sim(cfg, line_world({fixture::node(0, 1.0, 10.0), fixture::node(1, 2.0, 20.0)}),
                 SchedulerKind::focca_baseline, 1);
  CHECK(sim.dispatch_task(fixture::task(0, 1.0), -1).target == 1);

  Simulation tie(cfg, line_world({fixture::node(0, 2.0, 10.0), fixture::node(1, 2.0, 20.0)}),
                 SchedulerKind::focca_baseline, 1);
  CHECK(tie.dispatch_task(fixture::task(0, 1.0), -1).target == 0);
}

TEST_CASE("fognite needs an agent") {
  const auto cfg = small_config();
  CHECK_THROWS_AS(Simulation(cfg, line_world({fixture::node(0, 4.0)}), SchedulerKind::fognite, 1), UsageError);
}

TEST_CASE("gate rejection moves the task elsewhere or to the cloud") {
  auto cfg = small_config();
  cfg.twin.max_p_fail = 0.5;
  auto bad = fixture::node(0, 8.0);
  bad.failure_prob = 0.9;
  auto good = fixture::node(1, 8.0);
  std::vector<rl::Agent> agents{rl::Agent::make(ppo_config(cfg), 3)};

  std::ostringstream log;
  SimOptions opt;
  opt.journal = &log;
  Simulation sim(cfg, line_world({bad, good}), SchedulerKind::fognite, 1, opt, &agents);
  const auto out = sim.dispatch_task(fixture::task(0, 1.0), -1);
  CHECK(out.placement == DispatchOutcome::Placement::node);
  CHECK(out.target == 1);
  CHECK(out.proposals >= 1);
  CHECK(sim.record_metrics().gate_rejections == out.proposals - 1);

  auto worse = good;
  worse.failure_prob = 0.9;
  Simulation all_bad(cfg, line_world({bad, worse}), SchedulerKind::fognite, 1, opt, &agents);
  const auto cloud = all_bad.dispatch_task(fixture::task(0, 1.0), -1);
  CHECK(cloud.placement == DispatchOutcome::Placement::cloud);
  CHECK(cloud.proposals == 2);
  const auto m = all_bad.record_metrics();
  CHECK(m.cloud_offloads == 1);
  CHECK(m.gate_rejections == 2);
  CHECK(m.avg_response_ms == doctest::Approx(180.0 + 1.0 / 40.0 * 1000.0));
}

TEST_CASE("failure with an empty queue recovers in zero time") {
  auto cfg = small_config();
  auto w = line_world({fixture::node(0, 4.0), fixture::node(1, 4.0)});
  w.faults = {{0, 1000.0, 2000.0}};
  Simulation sim(cfg, w, SchedulerKind::focca_baseline, 1);
  sim.run();
  REQUIRE(sim.fault_recovery_ms().size() == 1);
  CHECK(sim.fault_recovery_ms()[0] == 0.0);
  CHECK(sim.grid().nodes[0].alive);
}

TEST_CASE("queued tasks are reassigned after a failure") {
  auto cfg = small_config();
  auto w = line_world({fixture::node(0, 1.0), fixture::node(1, 1.0)});
  for (int i = 0; i < 3; ++i) add_arrival(w, 0.5, 0.0, 0, 20'000.0);
  w.faults = {{0, 100.0, 5000.0}};
  Simulation sim(cfg, w, SchedulerKind::focca_baseline, 1);
  sim.run();
  const auto m = sim.record_metrics();
  CHECK(m.tasks_dropped == 0);
  CHECK(m.tasks_completed == 3);
  REQUIRE(sim.fault_recovery_ms().size() == 1);
  // Detection plus three 8 kB handoffs at 2000 kbps.
  CHECK(sim.fault_recovery_ms()[0] == doctest::Approx(500.0 + 3 * 32.0));
}

TEST_CASE("losing the only node drops its work") {
  auto cfg = small_config();
  auto w = line_world({fixture::node(0, 1.0)});
  for (int i = 0; i < 3; ++i) add_arrival(w, 0.5, 0.0, 0);
  w.faults = {{0, 100.0, 5000.0}};
  Simulation sim(cfg, w, SchedulerKind::focca_baseline, 1);
  sim.run();
  const auto m = sim.record_metrics();
  CHECK(m.tasks_dropped == 3);
  CHECK(m.runtime_errors() >= 3);
}

TEST_CASE("zero tasks") {
  auto cfg = small_config();
  cfg.workload.tasks = 0;
  const auto r = run_experiment(cfg, SchedulerKind::focca_baseline, 4);
  CHECK(r.metrics.tasks_arrived == 0);
  CHECK(r.metrics.avg_response_ms == 0.0);
  CHECK(r.metrics.runtime_errors() == 0);
  CHECK(!r.metrics.cumulative_errors.empty());
}

TEST_CASE("experiments are deterministic and conserve tasks") {
  auto cfg = quick_preset(small_config());
  cfg.federated.enabled = false;
  for (auto kind : {SchedulerKind::focca_baseline, SchedulerKind::random, SchedulerKind::fognite}) {
    const auto a = run_experiment(cfg, kind, 9);
    const auto b = run_experiment(cfg, kind, 9);
    CHECK(a.journal == b.journal);
    CHECK(a.metrics.avg_response_ms == b.metrics.avg_response_ms);
    const auto& m = a.metrics;
    CHECK(m.tasks_arrived == cfg.workload.tasks);
    CHECK(m.tasks_completed + m.tasks_dropped + m.tasks_in_flight == m.tasks_arrived);
    CHECK(m.tasks_in_flight == 0);
    for (std::size_t i = 1; i < m.cumulative_errors.size(); ++i) {
      CHECK(m.cumulative_errors[i].second >= m.cumulative_errors[i - 1].second);
      CHECK(m.cumulative_errors[i].first > m.cumulative_errors[i - 1].first);
    }
    CHECK(m.load_balance_efficiency_pct >= 0.0);
    CHECK(m.load_balance_efficiency_pct <= 100.0);
  }
}

TEST_CASE("world is shared across schedulers") {
  auto cfg = quick_preset(small_config());
  const auto a = build_world(cfg, 5);
  const auto b = build_world(cfg, 5);
  REQUIRE(a.arrivals.size() == b.arrivals.size());
  for (std::size_t i = 0; i < a.arrivals.size(); ++i) CHECK(a.arrivals[i].task.cpu_demand == b.arrivals[i].task.cpu_demand);
  CHECK(build_world(cfg, 6).arrivals[0].task.cpu_demand != a.arrivals[0].task.cpu_demand);
}
