#include "percept/segmenter.hpp"

#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace percept {

namespace {

/// Per-feature Welford accumulators for a growing run of frames.
class RunningStd {
public:
  explicit RunningStd(std::size_t dims) : mean_(dims, 0.0), m2_(dims, 0.0) {}

  void push(std::span<const float> frame) {
    ++count_;
    const double n = static_cast<double>(count_);
    for (std::size_t i = 0; i < mean_.size(); ++i) {
      const double x = frame[i];
      const double delta = x - mean_[i];
      mean_[i] += delta / n;
      m2_[i] += delta * (x - mean_[i]);
    }
  }

  double average_std() const {
    const double n = static_cast<double>(count_);
    double sum = 0.0;
    for (const double m2 : m2_) sum += std::sqrt(std::max(m2, 0.0) / n);
    return sum / static_cast<double>(m2_.size());
  }

private:
  std::size_t count_ = 0;
  std::vector<double> mean_;
  std::vector<double> m2_;
};

double mean_of(const std::vector<double>& values) {
  double sum = 0.0;
  for (const double v : values) sum += v;
  return sum / static_cast<double>(values.size());
}

std::size_t ceil_half(int n) { return static_cast<std::size_t>((n + 1) / 2); }
std::size_t floor_half(int n) { return static_cast<std::size_t>(n / 2); }

}  // namespace

StepAnnotation Segmentation::as_annotation() const {
  return StepAnnotation{n_segments(), boundaries};
}

const char* to_string(SegSolver solver) {
  switch (solver) {
    case SegSolver::exact_dp: return "exact";
    case SegSolver::recursive: return "recursive";
    case SegSolver::binary: return "binary";
    case SegSolver::brute_force: return "brute";
  }
  return "unknown";
}

SegSolver parse_seg_solver(const std::string& name) {
  if (name == "exact" || name == "exact_dp") return SegSolver::exact_dp;
  if (name == "recursive") return SegSolver::recursive;
  if (name == "binary") return SegSolver::binary;
  if (name == "brute" || name == "brute_force") return SegSolver::brute_force;
  throw std::invalid_argument("unknown segmentation solver '" + name + "'");
}

double segment_cost(const FeatureSequence& seq, std::size_t start, std::size_t end) {
  if (start >= end || end > seq.length())
    throw std::invalid_argument("segment_cost: empty or out-of-range segment");
  RunningStd acc(seq.dims());
  for (std::size_t t = start; t < end; ++t) acc.push(seq.frames.row(t));
  return acc.average_std();
}

SegmentCostTable::SegmentCostTable(const FeatureSequence& seq)
    : frames_(seq.length()), costs_(frames_ * frames_, 0.0) {
  if (frames_ == 0 || seq.dims() == 0)
    throw std::invalid_argument("SegmentCostTable: empty sequence");
  for (std::size_t start = 0; start < frames_; ++start) {
    RunningStd acc(seq.dims());
    for (std::size_t end = start + 1; end <= frames_; ++end) {
      acc.push(seq.frames.row(end - 1));
      costs_[start * frames_ + (end - start - 1)] = acc.average_std();
    }
  }
}

double SegmentCostTable::cost(std::size_t start, std::size_t end) const {
  if (start >= end || end > frames_)
    throw std::invalid_argument("SegmentCostTable: empty or out-of-range segment");
  return costs_[start * frames_ + (end - start - 1)];
}

Segmentation make_segmentation(const SegmentCostTable& costs,
                               std::vector<std::size_t> boundaries) {
  Segmentation seg;
  std::size_t prev = 0;
  for (const auto b : boundaries) {
    seg.per_segment_cost.push_back(costs.cost(prev, b));
    prev = b;
  }
  seg.per_segment_cost.push_back(costs.cost(prev, costs.frames()));
  seg.boundaries = std::move(boundaries);
  seg.objective = mean_of(seg.per_segment_cost);
  return seg;
}

void check_feasible(const SegSolverConfig& cfg, std::size_t frames) {
  if (cfg.n_segments < 1) throw std::invalid_argument("n_segments must be >= 1");
  if (cfg.min_size < 1) throw std::invalid_argument("min_size must be >= 1");
  if (static_cast<std::size_t>(cfg.n_segments) * cfg.min_size > frames)
    throw std::invalid_argument("infeasible segmentation: n_segments * min_size = " +
                                std::to_string(cfg.n_segments * cfg.min_size) + " exceeds T = " +
                                std::to_string(frames));
}

Segmentation segment_exact_dp(const FeatureSequence& seq, const SegSolverConfig& cfg) {
  check_feasible(cfg, seq.length());
  const SegmentCostTable costs(seq);
  const std::size_t T = seq.length();
  const std::size_t n = static_cast<std::size_t>(cfg.n_segments);
  const std::size_t m = cfg.min_size;
  constexpr double inf = std::numeric_limits<double>::infinity();

  // best[k][i]: minimal cost sum splitting suffix [i, T) into k segments,
  // summed right-nested so it matches the brute-force evaluation order.
  std::vector<std::vector<double>> best(n + 1, std::vector<double>(T + 1, inf));
  std::vector<std::vector<std::size_t>> cut(n + 1, std::vector<std::size_t>(T + 1, T));
  for (std::size_t i = 0; i + m <= T; ++i) best[1][i] = costs.cost(i, T);
  for (std::size_t k = 2; k <= n; ++k) {
    for (std::size_t i = 0; i + k * m <= T; ++i) {
      for (std::size_t b = i + m; b + (k - 1) * m <= T; ++b) {
        const double total = costs.cost(i, b) + best[k - 1][b];
        if (total < best[k][i]) {
          best[k][i] = total;
          cut[k][i] = b;
        }
      }
    }
  }

  std::vector<std::size_t> boundaries;
  std::size_t i = 0;
  for (std::size_t k = n; k >= 2; --k) {
    i = cut[k][i];
    boundaries.push_back(i);
  }
  return make_segmentation(costs, std::move(boundaries));
}

namespace {

struct SplitResult {
  std::vector<std::size_t> splits;
  std::vector<double> stds;
};

// Mirrors the recursive similarity maximization procedure step by step.
SplitResult recursive_split(const SegmentCostTable& costs, std::size_t start, std::size_t end,
                            int n, std::size_t min_size, const std::vector<double>& prev_std) {
  if (n == 1) return {{}, {costs.cost(start, end)}};
  bool have_min = false;
  double min_std = 0.0;
  SplitResult best;
  const std::size_t last = end - static_cast<std::size_t>(n - 1) * min_size;
  for (std::size_t i = start + min_size; i <= last; ++i) {
    const std::vector<double> std1{costs.cost(start, i)};
    std::vector<double> carried = std1;
    carried.insert(carried.end(), prev_std.begin(), prev_std.end());
    const SplitResult rest = recursive_split(costs, i, end, n - 1, min_size, carried);

    std::vector<double> joined = prev_std;
    joined.insert(joined.end(), std1.begin(), std1.end());
    joined.insert(joined.end(), rest.stds.begin(), rest.stds.end());
    const double avg_std = mean_of(joined);
    if (!have_min || avg_std < min_std) {
      have_min = true;
      min_std = avg_std;
      best.stds = std1;
      best.stds.insert(best.stds.end(), rest.stds.begin(), rest.stds.end());
      best.splits = {i};
      best.splits.insert(best.splits.end(), rest.splits.begin(), rest.splits.end());
    }
  }
  return best;
}

std::size_t best_single_cut(const SegmentCostTable& costs, std::size_t start, std::size_t end,
                            std::size_t left_min, std::size_t right_min) {
  bool have_min = false;
  double min_std = 0.0;
  std::size_t best = start + left_min;
  for (std::size_t c = start + left_min; c + right_min <= end; ++c) {
    const double avg = (costs.cost(start, c) + costs.cost(c, end)) / 2.0;
    if (!have_min || avg < min_std) {
      have_min = true;
      min_std = avg;
      best = c;
    }
  }
  return best;
}

void binary_split(const SegmentCostTable& costs, std::size_t start, std::size_t end, int n,
                  std::size_t min_size, std::vector<std::size_t>& out) {
  if (n == 1) return;
  const int left_n = static_cast<int>(ceil_half(n));
  const int right_n = static_cast<int>(floor_half(n));
  // The first cut is restricted so both halves can still host their segments.
  const std::size_t c = best_single_cut(costs, start, end, static_cast<std::size_t>(left_n) * min_size,
                                        static_cast<std::size_t>(right_n) * min_size);
  binary_split(costs, start, c, left_n, min_size, out);
  out.push_back(c);
  binary_split(costs, c, end, right_n, min_size, out);
}

std::size_t count_tuples(std::size_t frames, std::size_t n, std::size_t m, std::size_t cap) {
  // Number of compositions of `frames` into n parts each >= m: C(frames - n*m + n - 1, n - 1).
  const std::size_t slack = frames - n * m;
  std::size_t top = slack + n - 1;
  std::size_t k = n - 1;
  double count = 1.0;
  for (std::size_t j = 1; j <= k; ++j) {
    count = count * static_cast<double>(top - k + j) / static_cast<double>(j);
    if (count > static_cast<double>(cap)) return cap + 1;
  }
  return static_cast<std::size_t>(std::llround(count));
}

}  // namespace

Segmentation segment_recursive(const FeatureSequence& seq, const SegSolverConfig& cfg) {
  check_feasible(cfg, seq.length());
  const SegmentCostTable costs(seq);
  auto result = recursive_split(costs, 0, seq.length(), cfg.n_segments, cfg.min_size, {});
  return make_segmentation(costs, std::move(result.splits));
}

Segmentation segment_binary(const FeatureSequence& seq, const SegSolverConfig& cfg) {
  check_feasible(cfg, seq.length());
  const SegmentCostTable costs(seq);
  std::vector<std::size_t> boundaries;
  binary_split(costs, 0, seq.length(), cfg.n_segments, cfg.min_size, boundaries);
  return make_segmentation(costs, std::move(boundaries));
}

Segmentation segment_brute_force(const FeatureSequence& seq, const SegSolverConfig& cfg) {
  check_feasible(cfg, seq.length());
  const std::size_t T = seq.length();
  const std::size_t n = static_cast<std::size_t>(cfg.n_segments);
  const std::size_t m = cfg.min_size;
  if (count_tuples(T, n, m, cfg.enumeration_budget) > cfg.enumeration_budget)
    throw std::invalid_argument("brute force enumeration exceeds the configured budget");
  const SegmentCostTable costs(seq);
  if (n == 1) return make_segmentation(costs, {});

  // Lexicographic enumeration; cut[j] ranges so that every later segment fits.
  std::vector<std::size_t> cuts(n - 1);
  for (std::size_t j = 0; j + 1 < n; ++j) cuts[j] = (j + 1) * m;
  auto max_cut = [&](std::size_t j) { return T - (n - 1 - j) * m; };

  bool have_best = false;
  double best_total = 0.0;
  std::vector<std::size_t> best;
  while (true) {
    double total = costs.cost(cuts[n - 2], T);
    for (std::size_t j = n - 1; j-- > 0;) {
      const std::size_t begin = j == 0 ? 0 : cuts[j - 1];
      total = costs.cost(begin, cuts[j]) + total;
    }
    if (!have_best || total < best_total) {
      have_best = true;
      best_total = total;
      best = cuts;
    }
    // Advance the rightmost cut that still has room, then reset its successors.
    std::size_t j = n - 1;
    while (j-- > 0) {
      if (cuts[j] < max_cut(j)) break;
    }
    if (j == static_cast<std::size_t>(-1)) break;
    ++cuts[j];
    for (std::size_t r = j + 1; r + 1 < n; ++r) cuts[r] = cuts[r - 1] + m;
  }
  return make_segmentation(costs, std::move(best));
}

Segmentation segment(const FeatureSequence& seq, const SegSolverConfig& cfg) {
  switch (cfg.solver) {
    case SegSolver::exact_dp: return segment_exact_dp(seq, cfg);
    case SegSolver::recursive: return segment_recursive(seq, cfg);
    case SegSolver::binary: return segment_binary(seq, cfg);
    case SegSolver::brute_force: return segment_brute_force(seq, cfg);
  }
  throw std::invalid_argument("unknown solver");
}

}  // namespace percept
