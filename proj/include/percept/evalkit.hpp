#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "percept/feature_io.hpp"
#include "percept/rewards.hpp"
#include "percept/segmenter.hpp"

namespace percept {

/// Sorted, duplicate-free frame indices.
using FrameIndexSet = std::vector<std::size_t>;

/// |pred ∩ truth| / |pred ∪ truth| for sorted index sets; 1.0 when both are empty.
double jaccard(std::span<const std::size_t> pred, std::span<const std::size_t> truth);

/// Frames of every step of an annotation.
std::vector<FrameIndexSet> step_frame_sets(const StepAnnotation& labels, std::size_t frames);

/// Uniformly random sorted boundaries with every segment at least min_size
/// long: n-1 distinct cuts are drawn and redrawn until the constraint holds.
StepAnnotation ordered_random_segmentation(std::size_t frames, int n_steps, std::size_t min_size,
                                           std::mt19937_64& rng);

/// For each step, the frames whose value is >= threshold.
std::vector<FrameIndexSet> binarize_trace(const std::vector<std::vector<double>>& step_values,
                                          double threshold);

/// Each frame included independently with probability p.
FrameIndexSet bernoulli_baseline(std::size_t frames, double p, std::mt19937_64& rng);

/// Fraction of frames whose thresholded step vector equals the one-hot ground truth.
double exact_match_accuracy(const std::vector<std::vector<double>>& step_values,
                            const StepAnnotation& labels, double threshold);
/// Fraction of frames whose highest-valued step is the ground-truth step.
double argmax_accuracy(const std::vector<std::vector<double>>& step_values,
                       const StepAnnotation& labels);

struct StepOverlapReport {
  std::string dataset;
  std::string method;
  int n_steps = 0;
  std::vector<double> per_step_jaccard;
  double average = 0.0;
  /// Standard error over seeds; zero for deterministic methods.
  std::vector<double> per_step_stderr;
  double average_stderr = 0.0;
  int n_seeds = 0;
};

/// Aggregates per-seed reports (each already averaged over sequences).
StepOverlapReport aggregate_seeds(const std::vector<StepOverlapReport>& per_seed);

struct SegEvalResult {
  StepOverlapReport method;
  StepOverlapReport baseline;
  std::vector<Segmentation> segmentations;  // one per evaluated sequence
};

/// Jaccard of solver segments against annotations on the training sequences,
/// next to the ordered-random baseline averaged over n_seeds.
SegEvalResult eval_segmentation(const std::vector<LabeledSequence>& data, const SegSolverConfig& cfg,
                                int n_seeds, std::uint64_t seed, const std::string& dataset);

struct RewardEvalResult {
  StepOverlapReport method;
  StepOverlapReport baseline;
};

/// Per-step Jaccard of thresholded reward traces on the test sequences,
/// next to a Bernoulli(p) baseline averaged over n_seeds.
RewardEvalResult eval_rewards(const std::vector<LabeledSequence>& data, const RewardModel& model,
                              double threshold, int n_seeds, std::uint64_t seed,
                              const std::string& dataset, const std::string& method,
                              double bernoulli_p = 0.5);

nlohmann::json to_json(const StepOverlapReport& report);

/// Plain-text table: one row per report, one column per step plus the average.
std::string format_table(const std::vector<StepOverlapReport>& reports);

}  // namespace percept
