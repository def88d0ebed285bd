#include "percept/pi2.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>
#include <string>

#include "percept/seeding.hpp"

namespace percept {

namespace {

constexpr int kBisectionIterations = 60;
constexpr double kKlTolerance = 1e-9;
constexpr int kGridPoints = 256;

bool all_finite(const Vec& v) { return v.allFinite(); }

}  // namespace

Vec LinearGaussianPolicy::mean_control(std::size_t t, const Vec& state) const {
  return gains.at(t) * state + offsets.at(t);
}

void LinearGaussianPolicy::validate() const {
  const std::size_t T = offsets.size();
  if (T == 0) throw std::invalid_argument("policy: empty horizon");
  if (gains.size() != T || covariances.size() != T)
    throw std::invalid_argument("policy: gains, offsets and covariances differ in length");
  const auto du = offsets.front().size();
  const auto dx = gains.front().cols();
  for (std::size_t t = 0; t < T; ++t) {
    if (offsets[t].size() != du || gains[t].rows() != du || gains[t].cols() != dx ||
        covariances[t].rows() != du || covariances[t].cols() != du)
      throw std::invalid_argument("policy: shape mismatch at t=" + std::to_string(t));
    if (!offsets[t].allFinite() || !gains[t].allFinite() || !covariances[t].allFinite())
      throw std::invalid_argument("policy: non-finite parameter at t=" + std::to_string(t));
    if (!covariances[t].isApprox(covariances[t].transpose()))
      throw std::invalid_argument("policy: covariance not symmetric at t=" + std::to_string(t));
    Eigen::LLT<Mat> llt(covariances[t]);
    if (llt.info() != Eigen::Success)
      throw std::invalid_argument("policy: covariance not positive definite at t=" + std::to_string(t));
  }
}

double Rollout::total_reward() const {
  double s = 0.0;
  for (const double r : rewards) s += r;
  return s;
}

void PI2Config::validate() const {
  if (n_iterations < 0) throw std::invalid_argument("n_iterations must be >= 0");
  if (n_samples < 2) throw std::invalid_argument("n_samples must be >= 2");
  if (!(epsilon > 0.0)) throw std::invalid_argument("epsilon must be > 0");
  if (!(beta_max > 0.0)) throw std::invalid_argument("beta_max must be > 0");
  if (eval_episodes < 0) throw std::invalid_argument("eval_episodes must be >= 0");
}

LinearGaussianPolicy bootstrap_from_demo(const std::vector<Vec>& reference, const std::vector<Mat>& gains,
                                         const std::vector<Mat>& covariances) {
  if (reference.empty()) throw std::invalid_argument("bootstrap_from_demo: empty reference");
  if (gains.size() != reference.size() || covariances.size() != reference.size())
    throw std::invalid_argument("bootstrap_from_demo: horizon mismatch");
  LinearGaussianPolicy p;
  p.gains = gains;
  p.covariances = covariances;
  for (std::size_t t = 0; t < reference.size(); ++t) {
    if (gains[t].cols() != reference[t].size())
      throw std::invalid_argument("bootstrap_from_demo: state dimension mismatch");
    p.offsets.push_back(-(gains[t] * reference[t]));
  }
  p.validate();
  return p;
}

LinearGaussianPolicy bootstrap_from_demo(const std::vector<Vec>& reference, const Mat& gain,
                                         const Mat& covariance) {
  return bootstrap_from_demo(reference, std::vector<Mat>(reference.size(), gain),
                             std::vector<Mat>(reference.size(), covariance));
}

Rollout sample_rollout(const LinearGaussianPolicy& policy, const EpisodicEnv& env, const StateReward& reward,
                       std::uint64_t seed) {
  if (policy.horizon() != env.horizon) throw std::invalid_argument("sample_rollout: horizon mismatch");
  if (policy.state_dim() != env.state_dim || policy.control_dim() != env.control_dim)
    throw std::invalid_argument("sample_rollout: dimension mismatch");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  const auto du = static_cast<Eigen::Index>(env.control_dim);

  Rollout r;
  r.states.reserve(env.horizon + 1);
  r.controls.reserve(env.horizon);
  r.rewards.reserve(env.horizon);
  r.states.push_back(env.initial_state);
  for (std::size_t t = 0; t < env.horizon; ++t) {
    Vec z(du);
    for (Eigen::Index d = 0; d < du; ++d) z[d] = normal(rng);
    const Mat L = Eigen::LLT<Mat>(policy.covariances[t]).matrixL();
    Vec u = policy.mean_control(t, r.states.back()) + L * z;
    Vec next = env.step(r.states.back(), u);
    if (!all_finite(next) || !all_finite(u))
      throw std::runtime_error("rollout diverged: non-finite state at t=" + std::to_string(t + 1));
    r.rewards.push_back(reward(next, t, derive_seed(seed, {0x0B5ull, t})));
    r.controls.push_back(std::move(u));
    r.states.push_back(std::move(next));
  }
  return r;
}

std::vector<Rollout> sample_rollouts(const LinearGaussianPolicy& policy, const EpisodicEnv& env,
                                     const StateReward& reward, int n, std::uint64_t seed) {
  std::vector<Rollout> out;
  out.reserve(static_cast<std::size_t>(std::max(n, 0)));
  for (int i = 0; i < n; ++i)
    out.push_back(sample_rollout(policy, env, reward, derive_seed(seed, {static_cast<std::uint64_t>(i)})));
  return out;
}

std::vector<double> cost_to_go(std::span<const double> rewards) {
  std::vector<double> s(rewards.size(), 0.0);
  double acc = 0.0;
  for (std::size_t t = rewards.size(); t-- > 0;) {
    acc += rewards[t];
    s[t] = acc;
  }
  return s;
}

namespace {

/// Unnormalized exp(beta (s_i - max s)) and their sum.
std::pair<std::vector<double>, double> softmax_terms(std::span<const double> scores, double beta) {
  if (scores.empty()) throw std::invalid_argument("softmax: no scores");
  const double top = *std::max_element(scores.begin(), scores.end());
  std::vector<double> e(scores.size());
  double total = 0.0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    e[i] = beta == 0.0 ? 1.0 : std::exp(beta * (scores[i] - top));
    total += e[i];
  }
  if (!std::isfinite(total) || total <= 0.0) throw std::runtime_error("softmax: non-finite weights");
  return {std::move(e), total};
}

}  // namespace

std::vector<double> softmax_weights(std::span<const double> scores, double beta) {
  auto [e, total] = softmax_terms(scores, beta);
  for (auto& x : e) x /= total;
  return e;
}

std::vector<double> softmax_weight_gradient(std::span<const double> scores, double beta) {
  const auto w = softmax_weights(scores, beta);
  double mean = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) mean += w[i] * scores[i];
  std::vector<double> g(w.size());
  for (std::size_t i = 0; i < w.size(); ++i) g[i] = w[i] * (scores[i] - mean);
  return g;
}

double mean_shift_kl(const Vec& delta, const Mat& covariance) {
  Eigen::LLT<Mat> llt(covariance);
  if (llt.info() != Eigen::Success) throw std::invalid_argument("covariance not positive definite");
  return 0.5 * delta.dot(llt.solve(delta));
}

BetaSolution solve_beta(std::span<const Vec> controls, std::span<const double> suffix_rewards,
                        const Mat& covariance, const Vec& k_old, double epsilon, double beta_max) {
  if (!(epsilon > 0.0)) throw std::invalid_argument("solve_beta: epsilon must be > 0");
  if (controls.empty() || controls.size() != suffix_rewards.size())
    throw std::invalid_argument("solve_beta: controls and rewards differ in count");
  Eigen::LLT<Mat> llt(covariance);
  if (llt.info() != Eigen::Success) throw std::invalid_argument("solve_beta: covariance not positive definite");

  auto offset_at = [&](double beta) {
    const auto [e, total] = softmax_terms(suffix_rewards, beta);
    Vec acc = Vec::Zero(k_old.size());
    for (std::size_t i = 0; i < controls.size(); ++i) acc += e[i] * controls[i];
    return Vec(acc / total);
  };
  auto kl_of = [&](const Vec& k) {
    const Vec d = k - k_old;
    return 0.5 * d.dot(llt.solve(d));
  };

  BetaSolution sol;
  sol.offset = offset_at(0.0);
  sol.kl = kl_of(sol.offset);
  if (sol.kl > epsilon) {
    const double shrink = std::sqrt(epsilon / sol.kl);
    sol.offset = k_old + shrink * (sol.offset - k_old);
    sol.kl = kl_of(sol.offset);
    sol.scaled = true;
    return sol;
  }
  {
    Vec k = offset_at(beta_max);
    const double kl = kl_of(k);
    if (kl <= epsilon) {
      sol.beta = beta_max;
      sol.offset = std::move(k);
      sol.kl = kl;
      return sol;
    }
  }

  double lo = 0.0;
  double hi = beta_max;
  double kl_lo = sol.kl;
  double kl_hi = kl_of(offset_at(beta_max));
  bool monotone = true;
  for (int it = 0; it < kBisectionIterations; ++it) {
    const double mid = 0.5 * (lo + hi);
    Vec k = offset_at(mid);
    const double kl = kl_of(k);
    const double slack = 1e-12 * (1.0 + kl_hi);
    if (kl < kl_lo - slack || kl > kl_hi + slack) {
      monotone = false;
      break;
    }
    if (kl <= epsilon) {
      lo = mid;
      kl_lo = kl;
      sol.beta = mid;
      sol.offset = std::move(k);
      sol.kl = kl;
      if (epsilon - kl < kKlTolerance) break;
    } else {
      hi = mid;
      kl_hi = kl;
    }
  }
  if (monotone) return sol;

  // Fall back to a scan: beta = 0 and a geometric grid up to beta_max.
  sol.grid_search = true;
  sol.beta = 0.0;
  sol.offset = offset_at(0.0);
  sol.kl = kl_of(sol.offset);
  const double first = beta_max * 1e-8;
  for (int g = 0; g < kGridPoints - 1; ++g) {
    const double beta = first * std::pow(beta_max / first, static_cast<double>(g) / (kGridPoints - 2));
    Vec k = offset_at(beta);
    const double kl = kl_of(k);
    if (kl <= epsilon && kl > sol.kl) {
      sol.beta = beta;
      sol.offset = std::move(k);
      sol.kl = kl;
    }
  }
  return sol;
}

LinearGaussianPolicy pi2_update(const LinearGaussianPolicy& policy, std::span<const Rollout> rollouts,
                                const PI2Config& cfg, UpdateStats* stats) {
  cfg.validate();
  if (rollouts.size() < 2) throw std::invalid_argument("pi2_update: need at least two rollouts");
  const std::size_t T = policy.horizon();
  std::vector<std::vector<double>> suffix;
  for (const auto& r : rollouts) {
    if (r.controls.size() != T || r.rewards.size() != T || r.states.size() != T + 1)
      throw std::invalid_argument("pi2_update: rollout length differs from the policy horizon");
    suffix.push_back(cost_to_go(r.rewards));
  }
  if (stats) *stats = UpdateStats{};

  LinearGaussianPolicy next = policy;
  std::vector<Vec> open_loop(rollouts.size());
  std::vector<double> scores(rollouts.size());
  for (std::size_t t = 0; t < T; ++t) {
    for (std::size_t i = 0; i < rollouts.size(); ++i) {
      open_loop[i] = rollouts[i].controls[t] - policy.gains[t] * rollouts[i].states[t];
      scores[i] = suffix[i][t];
    }
    auto sol = solve_beta(open_loop, scores, policy.covariances[t], policy.offsets[t], cfg.epsilon, cfg.beta_max);
    next.offsets[t] = std::move(sol.offset);
    if (stats) {
      stats->beta.push_back(sol.beta);
      stats->kl.push_back(sol.kl);
      stats->scaled_steps += sol.scaled ? 1 : 0;
      stats->grid_steps += sol.grid_search ? 1 : 0;
    }
  }
  return next;
}

double success_rate(const LinearGaussianPolicy& policy, const EpisodicEnv& env, int episodes,
                    std::uint64_t seed) {
  if (!env.success) throw std::invalid_argument("success_rate: environment has no success test");
  if (episodes <= 0) return 0.0;
  const StateReward none = [](const Vec&, std::size_t, std::uint64_t) { return 0.0; };
  int hits = 0;
  for (int e = 0; e < episodes; ++e) {
    const auto r = sample_rollout(policy, env, none, derive_seed(seed, {static_cast<std::uint64_t>(e)}));
    if (env.success(r.states.back())) ++hits;
  }
  return static_cast<double>(hits) / episodes;
}

LearningCurve train(const EpisodicEnv& env, const StateReward& reward, const LinearGaussianPolicy& initial,
                    const PI2Config& cfg) {
  cfg.validate();
  initial.validate();
  LearningCurve curve;
  LinearGaussianPolicy policy = initial;
  for (int it = 0; it <= cfg.n_iterations; ++it) {
    const auto iter = static_cast<std::uint64_t>(it);
    const auto rollouts = sample_rollouts(policy, env, reward, cfg.n_samples, derive_seed(cfg.seed, {0, iter}));
    CurvePoint p;
    p.iteration = it;
    for (const auto& r : rollouts) p.mean_reward += r.total_reward();
    p.mean_reward /= static_cast<double>(rollouts.size());
    if (cfg.eval_episodes > 0 && env.success)
      p.success_rate = success_rate(policy, env, cfg.eval_episodes, derive_seed(cfg.seed, {1, iter}));
    if (it < cfg.n_iterations) {
      UpdateStats stats;
      policy = pi2_update(policy, rollouts, cfg, &stats);
      p.max_kl = stats.kl.empty() ? 0.0 : *std::max_element(stats.kl.begin(), stats.kl.end());
    }
    curve.points.push_back(p);
  }
  curve.final_policy = std::move(policy);
  return curve;
}

int crossing_iteration(const LearningCurve& curve, double level) {
  for (const auto& p : curve.points) {
    if (p.success_rate >= level) return p.iteration;
  }
  return -1;
}

}  // namespace percept
