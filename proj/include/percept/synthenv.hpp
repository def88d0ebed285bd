#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <vector>

#include "percept/feature_io.hpp"
#include "percept/pi2.hpp"
#include "percept/rewards.hpp"

namespace percept {

/// Two damped joints: a handle that releases a latch and a door it blocks.
struct DoorEnvConfig {
  std::size_t horizon = 60;
  double dt = 0.05;
  double handle_inertia = 1.0;
  double handle_damping = 4.0;
  double handle_friction = 0.5;  // Coulomb, torque units
  double door_inertia = 2.0;
  double door_damping = 4.0;
  double door_friction = 0.5;
  double latch_threshold = 0.6;  // handle angle releasing the latch
  double open_threshold = 1.0;   // door angle counted as open
  double handle_limit = 1.0;
  double door_limit = 1.6;
  double torque_limit = 8.0;

  void validate() const;
};

struct EnvState {
  double handle_angle = 0.0;
  double door_angle = 0.0;
  double handle_velocity = 0.0;
  double door_velocity = 0.0;
  bool latched = true;

  bool operator==(const EnvState&) const = default;
};

/// State vector layout used by the learner: (q1, q2, q1', q2', latched).
inline constexpr std::size_t kDoorStateDim = 5;
inline constexpr std::size_t kDoorControlDim = 2;
Vec to_vector(const EnvState& s);
EnvState state_from_vector(const Vec& v);

/// One semi-implicit Euler step. Torques are clamped to the limit.
EnvState step_dynamics(const EnvState& state, double handle_torque, double door_torque, const DoorEnvConfig& cfg);
bool success(const EnvState& state, const DoorEnvConfig& cfg);
double kinetic_energy(const EnvState& state, const DoorEnvConfig& cfg);

EpisodicEnv make_door_env(const DoorEnvConfig& cfg);

/// Per-sequence nuisance (lighting, camera placement) seen by the projector.
struct Scene {
  std::array<double, 4> latents{};
};
Scene sample_scene(std::uint64_t seed);

/// Fixed random map from state to a D-dimensional activation vector: a
/// basis expansion of the state, a random affine layer, noise on the
/// pre-activation and max(0, tanh(.)). Only a fraction of units see the
/// task; the rest respond to the scene.
class FeatureProjector {
 public:
  explicit FeatureProjector(std::uint64_t seed, std::size_t dims = 512, double noise_scale = 0.02);

  std::size_t dims() const { return dims_; }
  std::uint64_t seed() const { return seed_; }
  double noise_scale() const { return noise_scale_; }

  std::vector<float> render(const EnvState& state, const Scene& scene, std::uint64_t noise_key) const;

 private:
  static constexpr std::size_t kBasis = 10;
  std::uint64_t seed_;
  std::size_t dims_;
  double noise_scale_;
  std::vector<double> task_weights_;   // dims x kBasis
  std::vector<double> scene_weights_;  // dims x 4
  std::vector<double> bias_;
};

std::vector<float> render_features(const EnvState& state, const FeatureProjector& projector, const Scene& scene,
                                   std::uint64_t noise_key);

/// Open-loop three-phase script: rest, turn the handle, pull the door.
struct DemoScript {
  std::size_t rest_frames = 8;
  double handle_torque = 4.5;
  std::size_t handle_release_frame = 30;  // handle torque stops here
  std::size_t pull_start = 26;
  double door_torque = 3.8;
};

/// Noisy demonstrations: each demo scales its pull by 1 - noise |z| and adds
/// N(0, (2 noise)^2) torque noise per step and joint.
struct Demo {
  Rollout rollout;         // rewards empty
  FeatureSequence features; // frame t renders the state after control t
  StepAnnotation labels;    // rest / handle / open
  Scene scene;
  bool succeeded = false;
};

/// Handle phase starts once the handle moves past this angle.
inline constexpr double kHandleOnsetAngle = 0.1;
/// The open step starts once the latch is released and the door passes this angle.
inline constexpr double kDoorOnsetAngle = 0.5;

StepAnnotation annotate_door_states(const std::vector<EnvState>& frames, const DoorEnvConfig& cfg);

/// States and controls of a scripted demonstration, without rendering.
Rollout scripted_rollout(const DoorEnvConfig& cfg, double noise_scale, std::uint64_t seed,
                         const DemoScript& script = {});

Demo scripted_demo(const DoorEnvConfig& cfg, const FeatureProjector& projector, double noise_scale,
                   std::uint64_t seed, const DemoScript& script = {});

inline constexpr std::uint64_t kDefaultProjectorSeed = 11;
/// Scene of the learner's own camera, distinct from every demo scene.
inline constexpr std::uint64_t kRobotSceneSeed = 999;

/// PD tracking of the noise-free demo plus isotropic exploration.
struct DoorLearnerConfig {
  double handle_stiffness = 40.0;
  double handle_damping = 2.0;
  double door_stiffness = 10.0;
  double door_damping = 1.0;
  double exploration_std = 3.0;  // torque units
};

LinearGaussianPolicy door_initial_policy(const DoorEnvConfig& cfg, const DoorLearnerConfig& learner = {},
                                         const DemoScript& script = {});

/// Door angle over the open threshold, the instrumented-door reward.
StateReward door_truth_reward(const DoorEnvConfig& cfg);

/// Learned reward of the frame the learner's camera sees in a state.
StateReward perceptual_reward(RewardModel model, FeatureProjector projector, Scene scene);

/// Piecewise-stationary Gaussian sequences. A random quarter of the features
/// carries the step identity: consecutive steps move their means by +-snr.
/// True segments are at least `min_length` frames (0 picks T / (2 n_steps)).
std::vector<AnnotatedSequence> gen_piecewise_dataset(std::size_t n_sequences, std::size_t frames,
                                                     std::size_t dims, int n_steps, double snr,
                                                     std::uint64_t seed, std::size_t min_length = 0);

}  // namespace percept
