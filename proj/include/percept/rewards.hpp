#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <variant>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "percept/feature_io.hpp"

namespace percept {

/// A set of frames, each a view of length D into some owning FrameMatrix.
using FrameSet = std::vector<std::span<const float>>;

/// All frames of `seqs` labeled (or not labeled, when `complement`) with `step`.
FrameSet collect_step_frames(std::span<const FeatureSequence> seqs,
                             std::span<const StepAnnotation> labels, int step,
                             bool complement = false);

struct FeatureMoments {
  std::vector<double> mean;
  std::vector<double> std;  // population
};

FeatureMoments feature_moments(const FrameSet& frames);

inline constexpr double kDefaultAlpha = 5.0;
inline constexpr std::size_t kDefaultTopM = 32;

/// Top-M features for one step, sorted by score descending with ties broken
/// by ascending index.
struct FeatureSelection {
  int step_id = 0;
  std::vector<std::size_t> indices;
  std::vector<double> scores;
};

/// Ranks features by alpha * |mu+ - mu-| - (sigma+ + sigma-) computed on
/// normalized positive and negative frames and keeps the best m.
FeatureSelection select_features(const FrameSet& pos, const FrameSet& neg, double alpha,
                                 std::size_t m, int step_id = 0);

/// Independent Gaussian over the selected features of one step.
struct GaussianStepModel {
  int step_id = 0;
  FeatureSelection selection;
  std::vector<double> mu_pos;
  std::vector<double> sigma_pos;
  double alpha = kDefaultAlpha;
};

GaussianStepModel fit_step_gaussian(const FrameSet& pos, const FeatureSelection& selection,
                                    double std_floor = kDefaultStdFloor);

/// exp(-q/2) with q the mean squared z-distance to mu+ over the selected
/// features. In (0, 1], equal to 1 exactly at mu+.
double step_score_gaussian(const GaussianStepModel& model, std::span<const float> frame);

struct AnnotatedSequence {
  FeatureSequence seq;
  StepAnnotation labels;
};

/// One Gaussian model per step, positives being the step's frames and
/// negatives every other training frame.
std::vector<GaussianStepModel> train_gaussian_steps(std::span<const AnnotatedSequence> train,
                                                    double alpha = kDefaultAlpha,
                                                    std::size_t top_m = kDefaultTopM,
                                                    double std_floor = kDefaultStdFloor);

/// Multinomial logistic regression over frames: one affine score per step.
struct SoftmaxStepClassifier {
  std::size_t n_steps = 0;
  std::size_t dims = 0;
  std::vector<double> weights;  // n_steps x dims, row-major
  std::vector<double> biases;

  static SoftmaxStepClassifier zeros(std::size_t n_steps, std::size_t dims);
};

std::vector<double> step_probs(const SoftmaxStepClassifier& clf, std::span<const float> frame);

struct SoftmaxHyper {
  double l2 = 1e-4;
  double lr = 0.5;
  int epochs = 500;
  std::uint64_t seed = 0;
};

/// Mean cross-entropy over frames plus l2 * ||W||^2, and its gradient laid out
/// as [weights..., biases...].
struct LossAndGradient {
  double loss = 0.0;
  std::vector<double> gradient;
};

LossAndGradient softmax_loss(const SoftmaxStepClassifier& clf, const FrameSet& frames,
                             std::span<const int> labels, double l2);

struct SoftmaxTrainingLog {
  std::vector<double> loss;  // entry e is the loss after e epochs
  std::vector<double> step_size;
};

/// Full-batch gradient descent from zero. A step that would raise the loss is
/// retried at half the step size, so the recorded loss never increases.
SoftmaxStepClassifier train_softmax(std::span<const AnnotatedSequence> train,
                                    const SoftmaxHyper& hyper = {},
                                    SoftmaxTrainingLog* log = nullptr);

/// Weighted sum of non-initial step values, each step weighing twice its
/// predecessor: sum_{i>=1} v[i] * 2^i (0-based). With normalize_range the
/// result is divided by the maximal attainable value.
double combine(std::span<const double> step_values, bool normalize_range);

/// Learned reward: normalization statistics plus per-step scorers.
struct RewardModel {
  NormStats norm;
  std::variant<std::vector<GaussianStepModel>, SoftmaxStepClassifier> scorer;

  int n_steps() const;
  std::size_t dims() const { return norm.dims(); }
  /// Per-step values of a raw (unnormalized) frame.
  std::vector<double> step_values(std::span<const float> raw_frame) const;
  double reward(std::span<const float> raw_frame, bool normalize_range = true) const;
};

struct ScoreTrace {
  std::vector<std::vector<double>> step_values;  // [frame][step]
  std::vector<double> combined;
};

/// Stateless per-frame scoring of a raw sequence.
ScoreTrace score_sequence(const RewardModel& model, const FeatureSequence& seq,
                          bool normalize_range = true);

inline constexpr int kRewardModelVersion = 1;

nlohmann::json to_json(const RewardModel& model);
RewardModel reward_model_from_json(const nlohmann::json& j);
void save_reward_model(const RewardModel& model, const std::filesystem::path& path,
                       const nlohmann::json& meta);
RewardModel load_reward_model(const std::filesystem::path& path);

}  // namespace percept
