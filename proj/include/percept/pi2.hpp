#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include <Eigen/Dense>

namespace percept {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

/// u ~ N(K_t x + k_t, Sigma_t). K and Sigma stay fixed; only k is learned.
struct LinearGaussianPolicy {
  std::vector<Mat> gains;       // K_t, du x dx
  std::vector<Vec> offsets;     // k_t, du
  std::vector<Mat> covariances; // Sigma_t, du x du, SPD

  std::size_t horizon() const { return offsets.size(); }
  std::size_t state_dim() const { return gains.empty() ? 0 : static_cast<std::size_t>(gains.front().cols()); }
  std::size_t control_dim() const { return offsets.empty() ? 0 : static_cast<std::size_t>(offsets.front().size()); }

  Vec mean_control(std::size_t t, const Vec& state) const;
  /// Throws std::invalid_argument on inconsistent shapes, non-finite values or
  /// a covariance without a Cholesky factor.
  void validate() const;
};

/// x_0..x_T, u_0..u_{T-1}, r_0..r_{T-1}. r_t scores x_{t+1}, the state the
/// control u_t leads to.
struct Rollout {
  std::vector<Vec> states;
  std::vector<Vec> controls;
  std::vector<double> rewards;

  double total_reward() const;
};

/// Deterministic episodic system seen by the learner.
struct EpisodicEnv {
  std::size_t horizon = 0;
  std::size_t state_dim = 0;
  std::size_t control_dim = 0;
  Vec initial_state;
  std::function<Vec(const Vec& state, const Vec& control)> step;
  /// Task success of a final state; optional.
  std::function<bool(const Vec& state)> success;
};

/// Reward of a state reached at time t. obs_seed keys any observation noise.
using StateReward = std::function<double(const Vec& state, std::size_t t, std::uint64_t obs_seed)>;

struct PI2Config {
  int n_iterations = 11;
  int n_samples = 10;
  double epsilon = 1.0;  // nats per timestep
  double beta_max = 1e4;
  std::uint64_t seed = 0;
  /// Sampled episodes per success-rate estimate; 0 disables evaluation.
  int eval_episodes = 50;

  void validate() const;
};

/// k_t = -K_t x_ref_t, so the mean control at x is K_t (x - x_ref_t).
LinearGaussianPolicy bootstrap_from_demo(const std::vector<Vec>& reference, const std::vector<Mat>& gains,
                                         const std::vector<Mat>& covariances);
LinearGaussianPolicy bootstrap_from_demo(const std::vector<Vec>& reference, const Mat& gain,
                                         const Mat& covariance);

Rollout sample_rollout(const LinearGaussianPolicy& policy, const EpisodicEnv& env, const StateReward& reward,
                       std::uint64_t seed);
/// Rollout i uses the substream derive_seed(seed, {i}).
std::vector<Rollout> sample_rollouts(const LinearGaussianPolicy& policy, const EpisodicEnv& env,
                                     const StateReward& reward, int n, std::uint64_t seed);

/// Suffix sums S_t = sum_{t' >= t} r_{t'}.
std::vector<double> cost_to_go(std::span<const double> rewards);

/// softmax(beta * scores), computed after subtracting the maximum score.
std::vector<double> softmax_weights(std::span<const double> scores, double beta);
/// d w_i / d beta = w_i (s_i - sum_j w_j s_j).
std::vector<double> softmax_weight_gradient(std::span<const double> scores, double beta);

/// 0.5 * dk^T Sigma^-1 dk.
double mean_shift_kl(const Vec& delta, const Mat& covariance);

struct BetaSolution {
  double beta = 0.0;
  Vec offset;
  double kl = 0.0;
  bool scaled = false;      // the beta = 0 average was pulled back to the bound
  bool grid_search = false; // KL(beta) was not monotone
};

/// Largest temperature in [0, beta_max] whose weighted average of `controls`
/// stays within epsilon of k_old.
BetaSolution solve_beta(std::span<const Vec> controls, std::span<const double> suffix_rewards,
                        const Mat& covariance, const Vec& k_old, double epsilon, double beta_max);

struct UpdateStats {
  std::vector<double> beta;
  std::vector<double> kl;
  int scaled_steps = 0;
  int grid_steps = 0;
};

/// Reweights the open-loop part u_t - K_t x_t of every rollout per timestep.
LinearGaussianPolicy pi2_update(const LinearGaussianPolicy& policy, std::span<const Rollout> rollouts,
                                const PI2Config& cfg, UpdateStats* stats = nullptr);

struct CurvePoint {
  int iteration = 0;
  double mean_reward = 0.0;  // mean total reward of the iteration's samples
  double success_rate = 0.0; // over eval_episodes sampled episodes
  double max_kl = 0.0;       // largest per-timestep KL of the update that follows
};

struct LearningCurve {
  std::vector<CurvePoint> points;  // iterations 0..n_iterations; the last has no update
  LinearGaussianPolicy final_policy;
};

/// Fraction of `episodes` sampled episodes ending in success.
double success_rate(const LinearGaussianPolicy& policy, const EpisodicEnv& env, int episodes,
                    std::uint64_t seed);

LearningCurve train(const EpisodicEnv& env, const StateReward& reward, const LinearGaussianPolicy& initial,
                    const PI2Config& cfg);

/// First iteration whose success rate reaches `level`, or -1.
int crossing_iteration(const LearningCurve& curve, double level);

}  // namespace percept
