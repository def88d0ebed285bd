#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "percept/feature_io.hpp"

namespace percept {

/// Step boundaries found for one sequence together with their costs.
/// objective is the unweighted mean of per_segment_cost.
struct Segmentation {
  std::vector<std::size_t> boundaries;
  std::vector<double> per_segment_cost;
  double objective = 0.0;

  int n_segments() const noexcept { return static_cast<int>(per_segment_cost.size()); }
  StepAnnotation as_annotation() const;
};

enum class SegSolver { exact_dp, recursive, binary, brute_force };

const char* to_string(SegSolver solver);
SegSolver parse_seg_solver(const std::string& name);

struct SegSolverConfig {
  int n_segments = 2;
  std::size_t min_size = 2;
  SegSolver solver = SegSolver::exact_dp;
  /// Upper bound on the number of boundary tuples the brute-force solver may visit.
  std::size_t enumeration_budget = 20'000'000;
};

/// Mean over features of the population standard deviation of frames [start, end).
/// Accumulates in double with Welford updates so constant runs cost exactly 0.
double segment_cost(const FeatureSequence& seq, std::size_t start, std::size_t end);

/// All segment costs of one sequence, computed once in O(T^2 D).
/// cost(start, end) is bitwise equal to segment_cost(seq, start, end).
class SegmentCostTable {
public:
  explicit SegmentCostTable(const FeatureSequence& seq);

  std::size_t frames() const noexcept { return frames_; }
  double cost(std::size_t start, std::size_t end) const;

private:
  std::size_t frames_;
  std::vector<double> costs_;  // row-major [start][end - start - 1]
};

/// Builds a Segmentation with canonical costs and objective for a boundary list.
Segmentation make_segmentation(const SegmentCostTable& costs, std::vector<std::size_t> boundaries);

/// Throws std::invalid_argument when cfg cannot produce a segmentation of `frames` frames.
void check_feasible(const SegSolverConfig& cfg, std::size_t frames);

/// Exact minimizer by dynamic programming over suffixes; ties resolve to the
/// lexicographically smallest boundary list.
Segmentation segment_exact_dp(const FeatureSequence& seq, const SegSolverConfig& cfg);

/// Exhaustive recursive scan of every first cut with recursion on the suffix,
/// carrying the costs of already fixed segments. Exponential in n_segments.
Segmentation segment_recursive(const FeatureSequence& seq, const SegSolverConfig& cfg);

/// Greedy binary splitting: optimal single cut, then ceil(n/2) segments on the
/// left part and floor(n/2) on the right part, recursively.
Segmentation segment_binary(const FeatureSequence& seq, const SegSolverConfig& cfg);

/// Enumerates every valid boundary tuple. Test oracle for short sequences.
Segmentation segment_brute_force(const FeatureSequence& seq, const SegSolverConfig& cfg);

/// Dispatches on cfg.solver.
Segmentation segment(const FeatureSequence& seq, const SegSolverConfig& cfg);

}  // namespace percept
