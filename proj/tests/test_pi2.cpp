#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "percept/pi2.hpp"
#include "percept/seeding.hpp"

using namespace percept;

namespace {

Vec vec(std::initializer_list<double> v) {
  Vec out(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (const double x : v) out[i++] = x;
  return out;
}

/// x' = x + u in n dimensions.
EpisodicEnv integrator(std::size_t horizon, std::size_t dims) {
  EpisodicEnv env;
  env.horizon = horizon;
  env.state_dim = dims;
  env.control_dim = dims;
  env.initial_state = Vec::Zero(static_cast<Eigen::Index>(dims));
  env.step = [](const Vec& x, const Vec& u) { return Vec(x + u); };
  env.success = [](const Vec& x) { return x[0] >= 1.0; };
  return env;
}

LinearGaussianPolicy constant_policy(std::size_t horizon, std::size_t dims, double offset, double variance) {
  LinearGaussianPolicy p;
  const auto d = static_cast<Eigen::Index>(dims);
  for (std::size_t t = 0; t < horizon; ++t) {
    p.gains.push_back(Mat::Zero(d, d));
    p.offsets.push_back(Vec::Constant(d, offset));
    p.covariances.push_back(variance * Mat::Identity(d, d));
  }
  return p;
}

const StateReward target_one = [](const Vec& x, std::size_t, std::uint64_t) { return -(x[0] - 1.0) * (x[0] - 1.0); };

}  // namespace

TEST_CASE("configuration defaults") {
  const PI2Config cfg;
  CHECK(cfg.n_iterations == 11);
  CHECK(cfg.n_samples == 10);
  CHECK(cfg.eval_episodes == 50);
  CHECK_NOTHROW(cfg.validate());
  PI2Config bad;
  bad.epsilon = 0.0;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}

TEST_CASE("bootstrap from a demonstration") {
  const Mat K = (Mat(1, 2) << 1.0, -1.0).finished();
  const Mat S = Mat::Identity(1, 1);
  const auto p = bootstrap_from_demo({vec({3.0, 1.0})}, K, S);
  CHECK(p.offsets[0][0] == -2.0);
  CHECK(p.mean_control(0, vec({3.0, 1.0}))[0] == 0.0);

  const auto zero = bootstrap_from_demo({vec({0.0, 0.0}), vec({0.0, 0.0})}, K, S);
  for (const auto& k : zero.offsets) CHECK(k.isZero());

  std::mt19937_64 rng(3);
  std::normal_distribution<double> n(0.0, 2.0);
  std::vector<Vec> ref;
  for (int t = 0; t < 8; ++t) ref.push_back(vec({n(rng), n(rng)}));
  const auto q = bootstrap_from_demo(ref, K, S);
  for (std::size_t t = 0; t < ref.size(); ++t) CHECK(std::abs(q.mean_control(t, ref[t])[0]) < 1e-12);

  CHECK_THROWS_AS(bootstrap_from_demo({}, K, S), std::invalid_argument);
  CHECK_THROWS_AS(bootstrap_from_demo({vec({1.0})}, K, S), std::invalid_argument);
}

TEST_CASE("policy validation") {
  auto p = constant_policy(3, 2, 0.0, 1.0);
  CHECK_NOTHROW(p.validate());
  p.covariances[1](0, 0) = -1.0;
  CHECK_THROWS_AS(p.validate(), std::invalid_argument);
  auto q = constant_policy(3, 2, 0.0, 1.0);
  q.offsets.pop_back();
  CHECK_THROWS_AS(q.validate(), std::invalid_argument);
}

TEST_CASE("rollout sampling") {
  const auto env = integrator(6, 2);
  SUBCASE("same seed, same rollout") {
    const auto p = constant_policy(6, 2, 0.3, 1.0);
    const auto a = sample_rollout(p, env, target_one, 42);
    const auto b = sample_rollout(p, env, target_one, 42);
    for (std::size_t t = 0; t < 6; ++t) {
      CHECK(a.controls[t] == b.controls[t]);
      CHECK(a.rewards[t] == b.rewards[t]);
    }
  }
  SUBCASE("vanishing covariance follows the mean trajectory") {
    const auto p = constant_policy(6, 2, 0.3, 1e-12);
    for (const auto& r : sample_rollouts(p, env, target_one, 5, 9)) {
      for (std::size_t t = 0; t <= 6; ++t) CHECK((r.states[t] - Vec::Constant(2, 0.3 * static_cast<double>(t))).norm() < 1e-4);
    }
  }
  SUBCASE("reward scores the state reached by each control") {
    const auto p = constant_policy(6, 2, 0.5, 1.0);
    const auto r = sample_rollout(p, env, target_one, 1);
    REQUIRE(r.rewards.size() == 6);
    REQUIRE(r.states.size() == 7);
    for (std::size_t t = 0; t < 6; ++t) CHECK(r.rewards[t] == -(r.states[t + 1][0] - 1.0) * (r.states[t + 1][0] - 1.0));
    CHECK(r.total_reward() == doctest::Approx(std::accumulate(r.rewards.begin(), r.rewards.end(), 0.0)));
  }
  SUBCASE("empirical control mean matches the policy mean") {
    auto p = constant_policy(1, 2, 0.0, 1.0);
    p.gains[0] = (Mat(2, 2) << 0.5, 0.0, 0.0, -1.0).finished();
    p.offsets[0] = vec({1.0, -2.0});
    p.covariances[0] = (Mat(2, 2) << 2.0, 0.5, 0.5, 1.0).finished();
    auto env1 = integrator(1, 2);
    env1.initial_state = vec({2.0, 3.0});
    const int n = 10000;
    Vec sum = Vec::Zero(2);
    for (const auto& r : sample_rollouts(p, env1, target_one, n, 5)) sum += r.controls[0];
    const Vec mean = sum / n;
    const Vec expected = p.mean_control(0, env1.initial_state);
    CHECK(std::abs(mean[0] - expected[0]) < 3.0 * std::sqrt(2.0 / n));
    CHECK(std::abs(mean[1] - expected[1]) < 3.0 * std::sqrt(1.0 / n));
  }
}

TEST_CASE("cost to go") {
  CHECK(cost_to_go(std::vector<double>{1, 1, 1}) == std::vector<double>{3, 2, 1});
  CHECK(cost_to_go(std::vector<double>{0, 0, 0}) == std::vector<double>{0, 0, 0});
  CHECK(cost_to_go(std::vector<double>{0.5, -1, 2}) == std::vector<double>{1.5, 1, 2});
}

TEST_CASE("softmax weights") {
  const std::vector<double> s{0, 1, 2};
  const auto w = softmax_weights(s, 1.0);
  CHECK(w[0] == doctest::Approx(0.0900).epsilon(1e-3));
  CHECK(w[1] == doctest::Approx(0.2447).epsilon(1e-3));
  CHECK(w[2] == doctest::Approx(0.6652).epsilon(1e-3));
  CHECK(w[1] * 1.0 + w[2] * 2.0 == doctest::Approx(1.575).epsilon(1e-3));

  for (const double x : softmax_weights(s, 0.0)) CHECK(x == 1.0 / 3.0);
  const auto sharp = softmax_weights(s, 1e6);
  CHECK(sharp[2] == 1.0);
  CHECK(sharp[0] == 0.0);

  // Huge scores do not overflow.
  const std::vector<double> big{1e300, 1e300 - 1e290, -1e300};
  const auto wb = softmax_weights(big, 1.0);
  CHECK(std::abs(std::accumulate(wb.begin(), wb.end(), 0.0) - 1.0) < 1e-12);
}

TEST_CASE("softmax weights sum to one and sharpen") {
  std::mt19937_64 rng(11);
  std::normal_distribution<double> n(0.0, 10.0);
  std::uniform_real_distribution<double> logb(-4.0, 3.0);
  for (int c = 0; c < 300; ++c) {
    std::vector<double> s(2 + rng() % 15);
    for (auto& x : s) x = n(rng);
    const auto best = static_cast<std::size_t>(std::max_element(s.begin(), s.end()) - s.begin());
    double prev = -1.0;
    std::vector<double> betas(20);
    for (auto& b : betas) b = std::pow(10.0, logb(rng));
    std::sort(betas.begin(), betas.end());
    for (const double b : betas) {
      const auto w = softmax_weights(s, b);
      CHECK(std::abs(std::accumulate(w.begin(), w.end(), 0.0) - 1.0) < 1e-12);
      for (const double x : w) CHECK(x >= 0.0);
      CHECK(w[best] >= prev);
      prev = w[best];
      CHECK(softmax_weight_gradient(s, b)[best] >= -1e-12);
    }
  }
}

TEST_CASE("softmax weight gradient matches finite differences") {
  const std::vector<double> s{0.3, -1.2, 2.0, 0.7};
  for (const double b : {0.0, 0.5, 2.0}) {
    const auto g = softmax_weight_gradient(s, b);
    const double h = 1e-6;
    const auto wp = softmax_weights(s, b + h);
    const auto wm = softmax_weights(s, std::max(0.0, b - h));
    const double step = b - h < 0.0 ? h : 2 * h;
    for (std::size_t i = 0; i < s.size(); ++i) CHECK(std::abs((wp[i] - wm[i]) / step - g[i]) < 1e-5);
  }
}

TEST_CASE("mean shift kl") {
  CHECK(mean_shift_kl(vec({2.0}), Mat::Identity(1, 1)) == 2.0);
  const Mat S = (Mat(2, 2) << 4.0, 0.0, 0.0, 1.0).finished();
  CHECK(mean_shift_kl(vec({2.0, 1.0}), S) == doctest::Approx(0.5 * (1.0 + 1.0)));
}

TEST_CASE("solve_beta scalar case") {
  // k(beta) = 2 sigmoid(beta), KL = k^2 / 2; at beta = 0 the KL already equals 0.5.
  const std::vector<Vec> u{vec({0.0}), vec({2.0})};
  const std::vector<double> S{0.0, 1.0};
  const auto sol = solve_beta(u, S, Mat::Identity(1, 1), vec({0.0}), 0.5, 1e4);
  CHECK(sol.offset[0] == doctest::Approx(1.0));
  CHECK(sol.beta == 0.0);
  CHECK(sol.kl <= 0.5 + 1e-12);

  SUBCASE("a looser bound admits the logistic solution") {
    // KL = 2 sigmoid(beta)^2 = 1.28 at sigmoid = 0.8, beta = log 4.
    const auto s2 = solve_beta(u, S, Mat::Identity(1, 1), vec({0.0}), 1.28, 1e4);
    CHECK(s2.beta == doctest::Approx(std::log(4.0)).epsilon(1e-6));
    CHECK(s2.offset[0] == doctest::Approx(1.6).epsilon(1e-6));
  }
  SUBCASE("a tighter bound scales the average back") {
    const auto s3 = solve_beta(u, S, Mat::Identity(1, 1), vec({0.0}), 0.125, 1e4);
    CHECK(s3.scaled);
    CHECK(s3.offset[0] == doctest::Approx(0.5));
    CHECK(s3.kl == doctest::Approx(0.125));
  }
  SUBCASE("unconstrained picks the best sample") {
    const auto s4 = solve_beta(u, S, Mat::Identity(1, 1), vec({0.0}), 1e9, 1e4);
    CHECK(s4.beta == 1e4);
    CHECK(s4.offset[0] == doctest::Approx(2.0));
  }
  SUBCASE("shared controls never move") {
    const std::vector<Vec> same{vec({0.7}), vec({0.7}), vec({0.7})};
    const auto s5 = solve_beta(same, std::vector<double>{1, 2, 3}, Mat::Identity(1, 1), vec({0.7}), 0.1, 1e4);
    CHECK(s5.kl == 0.0);
    CHECK(s5.offset[0] == 0.7);
  }
}

TEST_CASE("solve_beta respects the bound on random instances") {
  std::mt19937_64 rng(13);
  std::normal_distribution<double> n(0.0, 1.0);
  for (int c = 0; c < 300; ++c) {
    const int du = 1 + static_cast<int>(rng() % 3);
    const int ns = 2 + static_cast<int>(rng() % 12);
    Mat A = Mat::Random(du, du);
    const Mat S = A * A.transpose() + 0.1 * Mat::Identity(du, du);
    std::vector<Vec> u;
    std::vector<double> sc;
    for (int i = 0; i < ns; ++i) {
      Vec x(du);
      for (int d = 0; d < du; ++d) x[d] = 2.0 * n(rng);
      u.push_back(x);
      sc.push_back(50.0 * n(rng));
    }
    Vec k_old(du);
    for (int d = 0; d < du; ++d) k_old[d] = n(rng);
    const double eps = std::pow(10.0, -3.0 + 4.0 * std::uniform_real_distribution<double>(0, 1)(rng));
    const auto sol = solve_beta(u, sc, S, k_old, eps, 1e4);
    CHECK(sol.kl <= eps + 1e-6);
    CHECK(std::abs(mean_shift_kl(sol.offset - k_old, S) - sol.kl) < 1e-9);
    CHECK(sol.beta >= 0.0);
    CHECK(sol.beta <= 1e4);
  }
}

TEST_CASE("update with equal rewards returns the sample mean") {
  const auto env = integrator(5, 2);
  const auto p = constant_policy(5, 2, 0.2, 0.5);
  const StateReward flat = [](const Vec&, std::size_t, std::uint64_t) { return 3.0; };
  const auto rollouts = sample_rollouts(p, env, flat, 10, 4);
  PI2Config cfg;
  cfg.epsilon = 1e6;
  const auto next = pi2_update(p, rollouts, cfg);
  for (std::size_t t = 0; t < 5; ++t) {
    Vec acc = Vec::Zero(2);
    for (const auto& r : rollouts) acc += r.controls[t] - p.gains[t] * r.states[t];
    const Vec mean = acc / 10.0;
    CHECK(next.offsets[t] == mean);
  }
}

TEST_CASE("update is invariant to a constant reward shift") {
  const auto env = integrator(5, 1);
  const auto p = constant_policy(5, 1, 0.0, 1.0);
  auto rollouts = sample_rollouts(p, env, target_one, 10, 8);
  PI2Config cfg;
  cfg.epsilon = 0.3;
  const auto a = pi2_update(p, rollouts, cfg);
  for (auto& r : rollouts)
    for (auto& v : r.rewards) v += 17.5;
  const auto b = pi2_update(p, rollouts, cfg);
  for (std::size_t t = 0; t < 5; ++t) CHECK(std::abs(a.offsets[t][0] - b.offsets[t][0]) < 1e-9);
}

TEST_CASE("update keeps every timestep within the bound") {
  const auto env = integrator(10, 2);
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto p = constant_policy(10, 2, -0.5, 0.3);
    const auto rollouts = sample_rollouts(p, env, target_one, 10, seed);
    for (const double eps : {0.01, 0.1, 1.0}) {
      PI2Config cfg;
      cfg.epsilon = eps;
      UpdateStats stats;
      const auto next = pi2_update(p, rollouts, cfg, &stats);
      REQUIRE(stats.kl.size() == 10);
      for (std::size_t t = 0; t < 10; ++t) {
        CHECK(stats.kl[t] <= eps + 1e-6);
        CHECK(mean_shift_kl(next.offsets[t] - p.offsets[t], p.covariances[t]) <= eps + 1e-6);
      }
    }
  }
}

TEST_CASE("one-step quadratic problem improves every iteration") {
  const auto env = integrator(1, 1);
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    // Each update moves the offset by at most 1, so 5 iterations cannot reach the optimum at 1.
    auto policy = constant_policy(1, 1, -5.0, 1.0);
    PI2Config cfg;
    cfg.epsilon = 0.5;
    // Expected reward of u ~ N(k, 1) under -(u - 1)^2.
    auto expected = [](const LinearGaussianPolicy& p) {
      const double k = p.offsets[0][0];
      return -((k - 1.0) * (k - 1.0) + p.covariances[0](0, 0));
    };
    double prev = expected(policy);
    for (std::uint64_t it = 0; it < 5; ++it) {
      const auto rollouts = sample_rollouts(policy, env, target_one, 10, derive_seed(seed, {it}));
      policy = pi2_update(policy, rollouts, cfg);
      const double now = expected(policy);
      CHECK(now > prev);
      prev = now;
    }
  }
}

TEST_CASE("training curve") {
  const auto env = integrator(1, 1);
  PI2Config cfg;
  cfg.n_iterations = 6;
  cfg.eval_episodes = 20;
  cfg.seed = 3;

  SUBCASE("learns the target") {
    const auto curve = train(env, target_one, constant_policy(1, 1, -3.0, 0.04), cfg);
    REQUIRE(curve.points.size() == 7);
    CHECK(curve.points.front().success_rate == 0.0);
    CHECK(curve.points.back().mean_reward > curve.points.front().mean_reward);
    CHECK(curve.final_policy.offsets[0][0] > -3.0);
    for (const auto& p : curve.points) CHECK(p.max_kl <= cfg.epsilon + 1e-6);
    const auto again = train(env, target_one, constant_policy(1, 1, -3.0, 0.04), cfg);
    for (std::size_t i = 0; i < curve.points.size(); ++i) CHECK(curve.points[i].mean_reward == again.points[i].mean_reward);
  }
  SUBCASE("no exploration gives a flat curve") {
    const auto curve = train(env, target_one, constant_policy(1, 1, -3.0, 1e-24), cfg);
    for (const auto& p : curve.points) CHECK(p.mean_reward == doctest::Approx(curve.points.front().mean_reward).epsilon(1e-9));
  }
  SUBCASE("crossing iteration") {
    LearningCurve c;
    for (int i = 0; i < 4; ++i) c.points.push_back({i, 0.0, 0.3 * i, 0.0});
    CHECK(crossing_iteration(c, 0.5) == 2);
    CHECK(crossing_iteration(c, 0.95) == -1);
  }
}
