#include "percept/synthenv.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <stdexcept>

#include "percept/error.hpp"
#include "percept/evalkit.hpp"
#include "percept/seeding.hpp"

namespace percept {

void DoorEnvConfig::validate() const {
  if (horizon == 0) throw std::invalid_argument("door env: horizon must be positive");
  for (const double v : {dt, handle_inertia, handle_damping, door_inertia, door_damping, latch_threshold,
                         open_threshold, handle_limit, door_limit, torque_limit}) {
    if (!(v > 0.0) || !std::isfinite(v)) throw std::invalid_argument("door env: constants must be positive");
  }
  if (handle_friction < 0.0 || door_friction < 0.0) throw std::invalid_argument("door env: negative friction");
}

Vec to_vector(const EnvState& s) {
  Vec v(kDoorStateDim);
  v << s.handle_angle, s.door_angle, s.handle_velocity, s.door_velocity, s.latched ? 1.0 : 0.0;
  return v;
}

EnvState state_from_vector(const Vec& v) {
  if (v.size() != static_cast<Eigen::Index>(kDoorStateDim))
    throw std::invalid_argument("door state vector must have 5 entries");
  return EnvState{v[0], v[1], v[2], v[3], v[4] > 0.5};
}

namespace {

struct Joint {
  double angle;
  double velocity;
};

/// Damped joint with Coulomb friction that can stop but never reverse the
/// motion within one step; hard stops at [0, limit].
Joint advance_joint(Joint j, double torque, double inertia, double damping, double friction, double limit,
                    double dt) {
  const double free = j.velocity + dt * (torque - damping * j.velocity) / inertia;
  const double grip = dt * friction / inertia;
  double v = 0.0;
  if (std::abs(free) > grip) v = free - std::copysign(grip, free);
  double q = j.angle + dt * v;
  if (q <= 0.0) {
    q = 0.0;
    v = std::max(v, 0.0);
    if (j.angle + dt * v < 0.0) v = 0.0;
  }
  if (q >= limit) {
    q = limit;
    v = 0.0;
  }
  return {q, v};
}

}  // namespace

EnvState step_dynamics(const EnvState& s, double handle_torque, double door_torque, const DoorEnvConfig& cfg) {
  const double lim = cfg.torque_limit;
  const double t1 = std::isfinite(handle_torque) ? std::clamp(handle_torque, -lim, lim) : 0.0;
  const double t2 = std::isfinite(door_torque) ? std::clamp(door_torque, -lim, lim) : 0.0;

  EnvState n = s;
  const auto h = advance_joint({s.handle_angle, s.handle_velocity}, t1, cfg.handle_inertia, cfg.handle_damping,
                               cfg.handle_friction, cfg.handle_limit, cfg.dt);
  n.handle_angle = h.angle;
  n.handle_velocity = h.velocity;
  if (n.latched && n.handle_angle >= cfg.latch_threshold) n.latched = false;
  if (n.latched) {
    n.door_angle = 0.0;
    n.door_velocity = 0.0;
  } else {
    const auto d = advance_joint({s.door_angle, s.door_velocity}, t2, cfg.door_inertia, cfg.door_damping,
                                 cfg.door_friction, cfg.door_limit, cfg.dt);
    n.door_angle = d.angle;
    n.door_velocity = d.velocity;
  }
  return n;
}

bool success(const EnvState& state, const DoorEnvConfig& cfg) { return state.door_angle >= cfg.open_threshold; }

double kinetic_energy(const EnvState& s, const DoorEnvConfig& cfg) {
  return 0.5 * cfg.handle_inertia * s.handle_velocity * s.handle_velocity +
         0.5 * cfg.door_inertia * s.door_velocity * s.door_velocity;
}

EpisodicEnv make_door_env(const DoorEnvConfig& cfg) {
  cfg.validate();
  EpisodicEnv env;
  env.horizon = cfg.horizon;
  env.state_dim = kDoorStateDim;
  env.control_dim = kDoorControlDim;
  env.initial_state = to_vector(EnvState{});
  env.step = [cfg](const Vec& x, const Vec& u) {
    return to_vector(step_dynamics(state_from_vector(x), u[0], u[1], cfg));
  };
  env.success = [cfg](const Vec& x) { return success(state_from_vector(x), cfg); };
  return env;
}

Scene sample_scene(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  Scene s;
  for (auto& v : s.latents) v = normal(rng);
  return s;
}

namespace {

constexpr std::size_t kSceneDims = 4;
constexpr double kTaskGain = 1.5;
constexpr double kTaskSceneCoupling = 0.15;
constexpr double kNuisanceSceneScale = 0.5;
constexpr double kNuisanceBiasMean = -1.5;
constexpr double kNuisanceBiasSpread = 0.5;

}  // namespace

FeatureProjector::FeatureProjector(std::uint64_t seed, std::size_t dims, double noise_scale)
    : seed_(seed), dims_(dims), noise_scale_(noise_scale) {
  if (dims == 0) throw std::invalid_argument("projector: dims must be positive");
  if (!(noise_scale >= 0.0)) throw std::invalid_argument("projector: negative noise scale");
  std::mt19937_64 rng(derive_seed(seed, {0}));
  std::normal_distribution<double> normal(0.0, 1.0);

  std::vector<std::size_t> order(dims);
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  const std::size_t n_task = std::max<std::size_t>(1, dims / 8);
  std::vector<bool> is_task(dims, false);
  for (std::size_t k = 0; k < n_task; ++k) is_task[order[k]] = true;

  task_weights_.assign(dims * kBasis, 0.0);
  scene_weights_.assign(dims * kSceneDims, 0.0);
  bias_.assign(dims, 0.0);
  for (std::size_t j = 0; j < dims; ++j) {
    if (is_task[j]) {
      for (std::size_t b = 0; b < kBasis; ++b) task_weights_[j * kBasis + b] = kTaskGain * normal(rng);
      for (std::size_t c = 0; c < kSceneDims; ++c) scene_weights_[j * kSceneDims + c] = kTaskSceneCoupling * normal(rng);
    } else {
      for (std::size_t c = 0; c < kSceneDims; ++c) scene_weights_[j * kSceneDims + c] = kNuisanceSceneScale * normal(rng);
      bias_[j] = kNuisanceBiasMean + kNuisanceBiasSpread * normal(rng);
    }
  }
}

std::vector<float> FeatureProjector::render(const EnvState& s, const Scene& scene, std::uint64_t noise_key) const {
  const double q1 = s.handle_angle;
  const double q2 = s.door_angle;
  const std::array<double, kBasis> basis{q1,
                                         q2,
                                         std::sin(3.0 * q1),
                                         std::cos(3.0 * q1),
                                         std::sin(2.0 * q2),
                                         std::cos(2.0 * q2),
                                         q1 * q2,
                                         s.latched ? 1.0 : 0.0,
                                         q2 * q2,
                                         1.0};
  std::mt19937_64 rng(derive_seed(seed_, {1, noise_key}));
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<float> out(dims_);
  for (std::size_t j = 0; j < dims_; ++j) {
    double a = bias_[j];
    for (std::size_t b = 0; b < kBasis; ++b) a += task_weights_[j * kBasis + b] * basis[b];
    for (std::size_t c = 0; c < kSceneDims; ++c) a += scene_weights_[j * kSceneDims + c] * scene.latents[c];
    if (noise_scale_ > 0.0) a += noise_scale_ * normal(rng);
    out[j] = static_cast<float>(std::max(0.0, std::tanh(a)));
  }
  return out;
}

std::vector<float> render_features(const EnvState& state, const FeatureProjector& projector, const Scene& scene,
                                   std::uint64_t noise_key) {
  return projector.render(state, scene, noise_key);
}

StepAnnotation annotate_door_states(const std::vector<EnvState>& frames, const DoorEnvConfig& cfg) {
  const std::size_t T = frames.size();
  if (T < 3) throw std::invalid_argument("annotate_door_states: need at least 3 frames");
  std::size_t onset = T;
  std::size_t release = T;
  for (std::size_t t = 0; t < T; ++t) {
    if (onset == T && frames[t].handle_angle >= kHandleOnsetAngle) onset = t;
    if (release == T && !frames[t].latched && frames[t].door_angle >= kDoorOnsetAngle) release = t;
  }
  (void)cfg;
  // Every step keeps at least one frame even when a phase never happens.
  release = std::clamp<std::size_t>(release, 2, T - 1);
  onset = std::clamp<std::size_t>(onset, 1, release - 1);
  return StepAnnotation{3, {onset, release}};
}

Rollout scripted_rollout(const DoorEnvConfig& cfg, double noise_scale, std::uint64_t seed,
                         const DemoScript& script) {
  cfg.validate();
  if (!(noise_scale >= 0.0)) throw std::invalid_argument("scripted demo: negative noise scale");
  std::mt19937_64 rng(derive_seed(seed, {0}));
  std::normal_distribution<double> normal(0.0, 1.0);
  const double effort = 1.0 - noise_scale * std::abs(normal(rng));
  const double jitter = 2.0 * noise_scale;

  Rollout r;
  EnvState s;
  r.states.push_back(to_vector(s));
  for (std::size_t t = 0; t < cfg.horizon; ++t) {
    double tau1 = 0.0;
    double tau2 = 0.0;
    if (t >= script.rest_frames && t < script.handle_release_frame) tau1 = script.handle_torque;
    if (t >= script.pull_start) tau2 = script.door_torque * effort;
    if (jitter > 0.0 && t >= script.rest_frames) {
      tau1 += jitter * normal(rng);
      tau2 += jitter * normal(rng);
    }
    Vec u(2);
    u << tau1, tau2;
    s = step_dynamics(s, tau1, tau2, cfg);
    r.controls.push_back(std::move(u));
    r.states.push_back(to_vector(s));
  }
  return r;
}

Demo scripted_demo(const DoorEnvConfig& cfg, const FeatureProjector& projector, double noise_scale,
                   std::uint64_t seed, const DemoScript& script) {
  Demo demo;
  demo.rollout = scripted_rollout(cfg, noise_scale, seed, script);
  demo.scene = sample_scene(derive_seed(seed, {1}));
  std::vector<EnvState> frames;
  for (std::size_t t = 1; t < demo.rollout.states.size(); ++t) frames.push_back(state_from_vector(demo.rollout.states[t]));

  FrameMatrix m(frames.size(), projector.dims());
  for (std::size_t t = 0; t < frames.size(); ++t) {
    const auto f = projector.render(frames[t], demo.scene, derive_seed(seed, {2, t}));
    std::copy(f.begin(), f.end(), m.row(t).begin());
  }
  demo.features = FeatureSequence{std::move(m), "demo", SequenceSource::synthetic, 1.0 / cfg.dt};
  demo.labels = annotate_door_states(frames, cfg);
  demo.succeeded = success(frames.back(), cfg);
  return demo;
}

LinearGaussianPolicy door_initial_policy(const DoorEnvConfig& cfg, const DoorLearnerConfig& learner,
                                         const DemoScript& script) {
  const auto demo = scripted_rollout(cfg, 0.0, 0, script);
  const std::vector<Vec> reference(demo.states.begin(), demo.states.end() - 1);
  Mat gain = Mat::Zero(kDoorControlDim, kDoorStateDim);
  gain(0, 0) = -learner.handle_stiffness;
  gain(0, 2) = -learner.handle_damping;
  gain(1, 1) = -learner.door_stiffness;
  gain(1, 3) = -learner.door_damping;
  const double var = learner.exploration_std * learner.exploration_std;
  return bootstrap_from_demo(reference, gain, Mat(Mat::Identity(kDoorControlDim, kDoorControlDim) * var));
}

StateReward door_truth_reward(const DoorEnvConfig& cfg) {
  const double open = cfg.open_threshold;
  return [open](const Vec& x, std::size_t, std::uint64_t) { return x[1] / open; };
}

StateReward perceptual_reward(RewardModel model, FeatureProjector projector, Scene scene) {
  if (model.dims() != projector.dims())
    throw DataError("reward model expects " + std::to_string(model.dims()) + " features, the camera renders " +
                    std::to_string(projector.dims()));
  return [model = std::move(model), projector = std::move(projector), scene](const Vec& x, std::size_t,
                                                                             std::uint64_t key) {
    return model.reward(projector.render(state_from_vector(x), scene, key));
  };
}

std::vector<AnnotatedSequence> gen_piecewise_dataset(std::size_t n_sequences, std::size_t frames,
                                                     std::size_t dims, int n_steps, double snr,
                                                     std::uint64_t seed, std::size_t min_length) {
  if (n_steps < 1 || dims == 0 || frames == 0) throw std::invalid_argument("gen_piecewise_dataset: empty shape");
  if (!(snr >= 0.0) || !std::isfinite(snr)) throw std::invalid_argument("gen_piecewise_dataset: snr must be >= 0");
  if (min_length == 0) min_length = std::max<std::size_t>(1, frames / (2 * static_cast<std::size_t>(n_steps)));
  if (static_cast<std::size_t>(n_steps) * min_length > frames)
    throw std::invalid_argument("gen_piecewise_dataset: steps do not fit in the sequence");

  std::mt19937_64 rng(derive_seed(seed, {0}));
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<std::size_t> order(dims);
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  const std::size_t n_informative = std::max<std::size_t>(1, dims / 4);

  // Step means: each step moves every informative feature by +-snr.
  std::vector<std::vector<double>> means(static_cast<std::size_t>(n_steps), std::vector<double>(dims, 0.0));
  std::bernoulli_distribution coin(0.5);
  for (int g = 1; g < n_steps; ++g) {
    means[static_cast<std::size_t>(g)] = means[static_cast<std::size_t>(g - 1)];
    for (std::size_t k = 0; k < n_informative; ++k)
      means[static_cast<std::size_t>(g)][order[k]] += coin(rng) ? snr : -snr;
  }

  std::vector<AnnotatedSequence> out;
  for (std::size_t n = 0; n < n_sequences; ++n) {
    std::mt19937_64 seq_rng(derive_seed(seed, {1, n}));
    auto labels = ordered_random_segmentation(frames, n_steps, min_length, seq_rng);
    const auto step_of = labels.frame_labels(frames);
    FrameMatrix m(frames, dims);
    for (std::size_t t = 0; t < frames; ++t) {
      const auto& mu = means[static_cast<std::size_t>(step_of[t])];
      for (std::size_t i = 0; i < dims; ++i) m(t, i) = static_cast<float>(mu[i] + normal(seq_rng));
    }
    FeatureSequence seq{std::move(m), "piecewise_" + std::to_string(n), SequenceSource::synthetic, std::nullopt};
    out.push_back(AnnotatedSequence{std::move(seq), std::move(labels)});
  }
  return out;
}

}  // namespace percept
