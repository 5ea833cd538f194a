#include <doctest.h>

#include <cmath>

#include "fixtures.hpp"
#include "fognite/error.hpp"
#include "fognite/rl.hpp"

using namespace fognite;
using namespace fognite::rl;

TEST_CASE("state features are bounded and follow the documented order") {
  GridState g;
  g.nodes = {fixture::node(0, 4.0, 20.0), fixture::node(1, 8.0, 10.0)};
  g.nodes[0].queue = {fixture::task(10, 2.0)};
  g.links = {{0, 1, 30.0}};
  const auto t = fixture::task(1, 2.0, 0.0, 2500.0);
  const auto s = encode_state(g, g.nodes[0], t);
  for (int i = 0; i < 13; ++i) {
    CHECK(s(i) >= 0.0);
    CHECK(s(i) <= 1.0);
  }
  CHECK(s(0) == doctest::Approx(0.5));
  CHECK(s(2) == doctest::Approx(0.1));
  CHECK(s(3) == doctest::Approx(20.0 / 200.0));
  CHECK(s(5) == 0.5);
  CHECK(s(8) == doctest::Approx(0.5 / 2.0));
  CHECK(s(9) == doctest::Approx(0.5));
  CHECK(s(11) == doctest::Approx(0.25));
  CHECK(s(12) == doctest::Approx(0.25));
  CHECK(s(13) == doctest::Approx(0.0));
  CHECK(s(14) == doctest::Approx(1.0));
  const auto via = encode_state(g, g.nodes[1], t, {}, 0);
  CHECK(via(3) == doctest::Approx(40.0 / 200.0));

  g.nodes[1].alive = false;
  CHECK_THROWS_AS(encode_state(g, g.nodes[1], t), InputError);
}

TEST_CASE("masked softmax") {
  Eigen::VectorXd z(3);
  z << 1.0, 2.0, 3.0;
  const auto p = softmax_masked(z, {true, false, true});
  CHECK(p(1) == 0.0);
  CHECK(p.sum() == doctest::Approx(1.0));
  CHECK(p(2) / p(0) == doctest::Approx(std::exp(2.0)));
  CHECK_THROWS_AS(softmax_masked(z, {false, false, false}), InputError);
  CHECK_THROWS_AS(softmax_masked(z, {true}), ShapeError);
}

TEST_CASE("policy shapes and action selection") {
  const auto a = Agent::make(PpoConfig{}, 1);
  CHECK_THROWS_AS(policy_probs(a.policy, Eigen::MatrixXd::Zero(14, 2)), ShapeError);
  Eigen::VectorXd p(3);
  p << 0.2, 0.5, 0.3;
  CHECK(select_action(p, nullptr, true) == 1);
  std::mt19937_64 rng(4);
  int counts[3] = {0, 0, 0};
  for (int i = 0; i < 20000; ++i) ++counts[select_action(p, &rng, false)];
  CHECK(counts[1] / 20000.0 == doctest::Approx(0.5).epsilon(0.05));
  Eigen::VectorXd tie(2);
  tie << 0.5, 0.5;
  CHECK(select_action(tie, nullptr, true) == 0);
}

TEST_CASE("reward components") {
  ExecutionOutcome o;
  o.latency_ms = 250.0;
  o.deadline_budget_ms = 1000.0;
  o.renewable_fraction = 0.6;
  o.energy_norm = 0.4;
  o.util_std = 0.1;
  const auto t = reward_terms(o);
  CHECK(t.time == doctest::Approx(0.75));
  CHECK(t.energy == doctest::Approx(0.2));
  CHECK(t.util == doctest::Approx(0.9));
  CHECK(compute_reward(o, RewardWeights{}) == doctest::Approx(0.5 * 0.75 + 0.3 * 0.2 + 0.2 * 0.9));
  o.dropped = true;
  CHECK(reward_terms(o).time == -1.0);
  o.dropped = false;
  o.latency_ms = 5000.0;
  CHECK(reward_terms(o).time == 0.0);
  RewardWeights w;
  w.alpha = -1.0;
  CHECK_THROWS_AS(w.validate(), ConfigError);
}

TEST_CASE("discounted returns") {
  const std::vector<double> r{1.0, 0.0, 2.0};
  const auto g = discounted_returns(r, 0.5);
  CHECK(g[2] == 2.0);
  CHECK(g[1] == doctest::Approx(1.0));
  CHECK(g[0] == doctest::Approx(1.5));
  CHECK(discounted_returns(std::vector<double>{}, 0.9).empty());
}

TEST_CASE("mlp gradients match finite differences") {
  auto m = Mlp::make({kStateDim, 6, 4, 1}, 3);
  Eigen::MatrixXd x = Eigen::MatrixXd::Random(kStateDim, 3);
  Eigen::MatrixXd dout = Eigen::MatrixXd::Random(1, 3);
  Mlp::Cache c;
  m.forward(x, &c);
  Mlp g = m.zeros_like();
  m.backward(c, dout, g);
  auto objective = [&](const Mlp& net) { return (net.forward(x).array() * dout.array()).sum(); };
  const double h = 1e-6;
  double worst = 0.0;
  for (std::size_t l = 0; l < m.weights.size(); ++l) {
    for (Eigen::Index i = 0; i < m.weights[l].size(); ++i) {
      Mlp p = m;
      p.weights[l].data()[i] += h;
      const double up = objective(p);
      p.weights[l].data()[i] -= 2 * h;
      const double down = objective(p);
      const double num = (up - down) / (2 * h);
      worst = std::max(worst, std::abs(num - g.weights[l].data()[i]) / std::max({std::abs(num), 1e-4}));
    }
  }
  CHECK(worst < 1e-5);
}

TEST_CASE("ppo rejects an empty batch") {
  auto a = Agent::make(PpoConfig{}, 1);
  CHECK_THROWS_AS(ppo_update(a, std::vector<Trajectory>{}, 1), InputError);
}

TEST_CASE("ppo learns the two-node bandit") {
  auto a = Agent::make(PpoConfig{}, 7);
  const double start = fixture::Bandit{}.p_optimal(a);
  CHECK(start == doctest::Approx(0.5).epsilon(0.1));
  const auto curve = fixture::train_bandit(a, 100, 32, 11);
  CHECK(curve.back() > 0.95);
}

TEST_CASE("ppo is deterministic per seed") {
  auto a = Agent::make(PpoConfig{}, 3);
  auto b = Agent::make(PpoConfig{}, 3);
  const auto ca = fixture::train_bandit(a, 5, 16, 2);
  const auto cb = fixture::train_bandit(b, 5, 16, 2);
  CHECK(ca == cb);
}
