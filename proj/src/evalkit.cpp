#include "percept/evalkit.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "percept/seeding.hpp"

namespace percept {

double jaccard(std::span<const std::size_t> pred, std::span<const std::size_t> truth) {
  std::size_t inter = 0;
  std::size_t i = 0;
  std::size_t j = 0;
  while (i < pred.size() && j < truth.size()) {
    if (pred[i] < truth[j]) {
      ++i;
    } else if (truth[j] < pred[i]) {
      ++j;
    } else {
      ++inter;
      ++i;
      ++j;
    }
  }
  const std::size_t uni = pred.size() + truth.size() - inter;
  if (uni == 0) return 1.0;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

std::vector<FrameIndexSet> step_frame_sets(const StepAnnotation& labels, std::size_t frames) {
  std::vector<FrameIndexSet> sets(static_cast<std::size_t>(labels.n_steps));
  for (int g = 0; g < labels.n_steps; ++g) {
    const auto [b, e] = labels.segment(g, frames);
    for (std::size_t t = b; t < e; ++t) sets[static_cast<std::size_t>(g)].push_back(t);
  }
  return sets;
}

StepAnnotation ordered_random_segmentation(std::size_t frames, int n_steps, std::size_t min_size,
                                           std::mt19937_64& rng) {
  if (n_steps < 1 || min_size < 1 || static_cast<std::size_t>(n_steps) * min_size > frames)
    throw std::invalid_argument("ordered_random_segmentation: infeasible parameters");
  StepAnnotation out{n_steps, {}};
  const auto cuts = static_cast<std::size_t>(n_steps - 1);
  if (cuts == 0) return out;

  std::uniform_int_distribution<std::size_t> draw(1, frames - 1);
  auto valid = [&](const std::vector<std::size_t>& b) {
    std::size_t prev = 0;
    for (const auto x : b) {
      if (x - prev < min_size) return false;
      prev = x;
    }
    return frames - prev >= min_size;
  };
  constexpr int kMaxRejections = 100000;
  for (int attempt = 0; attempt < kMaxRejections; ++attempt) {
    std::vector<std::size_t> b;
    while (b.size() < cuts) {
      const auto x = draw(rng);
      if (std::find(b.begin(), b.end(), x) == b.end()) b.push_back(x);
    }
    std::sort(b.begin(), b.end());
    if (valid(b)) {
      out.boundaries = std::move(b);
      return out;
    }
  }
  // Nearly saturated constraints: draw the same uniform law directly as a
  // composition of the slack frames (stars and bars).
  const std::size_t slack = frames - static_cast<std::size_t>(n_steps) * min_size;
  std::vector<std::size_t> pool(slack + cuts);
  for (std::size_t k = 0; k < pool.size(); ++k) pool[k] = k;
  std::vector<std::size_t> bars;
  std::sample(pool.begin(), pool.end(), std::back_inserter(bars), cuts, rng);
  std::sort(bars.begin(), bars.end());
  for (std::size_t j = 0; j < cuts; ++j) out.boundaries.push_back(bars[j] - j + (j + 1) * min_size);
  return out;
}

std::vector<FrameIndexSet> binarize_trace(const std::vector<std::vector<double>>& step_values,
                                          double threshold) {
  std::vector<FrameIndexSet> sets;
  if (step_values.empty()) return sets;
  sets.resize(step_values.front().size());
  for (std::size_t t = 0; t < step_values.size(); ++t) {
    if (step_values[t].size() != sets.size())
      throw std::invalid_argument("binarize_trace: ragged trace");
    for (std::size_t g = 0; g < sets.size(); ++g) {
      if (step_values[t][g] >= threshold) sets[g].push_back(t);
    }
  }
  return sets;
}

FrameIndexSet bernoulli_baseline(std::size_t frames, double p, std::mt19937_64& rng) {
  if (!(p >= 0.0 && p <= 1.0)) throw std::invalid_argument("bernoulli_baseline: p outside [0, 1]");
  std::bernoulli_distribution coin(p);
  FrameIndexSet out;
  for (std::size_t t = 0; t < frames; ++t) {
    if (coin(rng)) out.push_back(t);
  }
  return out;
}

double exact_match_accuracy(const std::vector<std::vector<double>>& step_values,
                            const StepAnnotation& labels, double threshold) {
  const auto truth = labels.frame_labels(step_values.size());
  std::size_t correct = 0;
  for (std::size_t t = 0; t < step_values.size(); ++t) {
    bool ok = true;
    for (std::size_t g = 0; g < step_values[t].size(); ++g) {
      const bool fired = step_values[t][g] >= threshold;
      if (fired != (static_cast<int>(g) == truth[t])) ok = false;
    }
    if (ok) ++correct;
  }
  return step_values.empty() ? 0.0 : static_cast<double>(correct) / static_cast<double>(step_values.size());
}

double argmax_accuracy(const std::vector<std::vector<double>>& step_values,
                       const StepAnnotation& labels) {
  const auto truth = labels.frame_labels(step_values.size());
  std::size_t correct = 0;
  for (std::size_t t = 0; t < step_values.size(); ++t) {
    const auto& v = step_values[t];
    const auto best = static_cast<int>(std::max_element(v.begin(), v.end()) - v.begin());
    if (best == truth[t]) ++correct;
  }
  return step_values.empty() ? 0.0 : static_cast<double>(correct) / static_cast<double>(step_values.size());
}

namespace {

double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (const double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

double stderr_of(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = mean_of(v);
  double ss = 0.0;
  for (const double x : v) ss += (x - m) * (x - m);
  return std::sqrt(ss / static_cast<double>(v.size() - 1)) / std::sqrt(static_cast<double>(v.size()));
}

/// Averages per-sequence per-step Jaccard rows into one report.
StepOverlapReport average_rows(const std::vector<std::vector<double>>& rows, int n_steps) {
  StepOverlapReport r;
  r.n_steps = n_steps;
  r.per_step_jaccard.assign(static_cast<std::size_t>(n_steps), 0.0);
  for (std::size_t g = 0; g < r.per_step_jaccard.size(); ++g) {
    std::vector<double> col;
    for (const auto& row : rows) col.push_back(row[g]);
    r.per_step_jaccard[g] = mean_of(col);
  }
  r.per_step_stderr.assign(r.per_step_jaccard.size(), 0.0);
  r.average = mean_of(r.per_step_jaccard);
  r.n_seeds = 1;
  return r;
}

std::vector<double> per_step_jaccard(const std::vector<FrameIndexSet>& pred,
                                     const std::vector<FrameIndexSet>& truth) {
  std::vector<double> row;
  for (std::size_t g = 0; g < truth.size(); ++g) row.push_back(jaccard(pred[g], truth[g]));
  return row;
}

}  // namespace

StepOverlapReport aggregate_seeds(const std::vector<StepOverlapReport>& per_seed) {
  if (per_seed.empty()) throw std::invalid_argument("aggregate_seeds: no reports");
  StepOverlapReport r = per_seed.front();
  const std::size_t n = r.per_step_jaccard.size();
  for (std::size_t g = 0; g < n; ++g) {
    std::vector<double> col;
    for (const auto& s : per_seed) col.push_back(s.per_step_jaccard[g]);
    r.per_step_jaccard[g] = mean_of(col);
    r.per_step_stderr[g] = stderr_of(col);
  }
  std::vector<double> avgs;
  for (const auto& s : per_seed) avgs.push_back(s.average);
  r.average = mean_of(r.per_step_jaccard);
  r.average_stderr = stderr_of(avgs);
  r.n_seeds = static_cast<int>(per_seed.size());
  return r;
}

SegEvalResult eval_segmentation(const std::vector<LabeledSequence>& data, const SegSolverConfig& cfg,
                                int n_seeds, std::uint64_t seed, const std::string& dataset) {
  if (n_seeds < 1) throw std::invalid_argument("eval_segmentation: n_seeds must be >= 1");
  std::vector<const LabeledSequence*> train;
  for (const auto& item : data) {
    if (item.split != Split::train) continue;
    if (!item.labels) throw DataError("sequence '" + item.seq.name + "' has no annotation");
    if (item.labels->n_steps != cfg.n_segments)
      throw DataError("annotation of '" + item.seq.name + "' has a different step count");
    train.push_back(&item);
  }
  if (train.empty()) throw DataError("no training sequences to evaluate");

  SegEvalResult out;
  std::vector<std::vector<double>> rows;
  for (const auto* item : train) {
    auto seg = segment(item->seq, cfg);
    const std::size_t T = item->seq.length();
    rows.push_back(per_step_jaccard(step_frame_sets(seg.as_annotation(), T),
                                    step_frame_sets(*item->labels, T)));
    out.segmentations.push_back(std::move(seg));
  }
  out.method = average_rows(rows, cfg.n_segments);
  out.method.dataset = dataset;
  out.method.method = std::string("unsupervised steps (") + to_string(cfg.solver) + ")";

  std::vector<StepOverlapReport> per_seed;
  for (int s = 0; s < n_seeds; ++s) {
    std::mt19937_64 rng(derive_seed(seed, {static_cast<std::uint64_t>(s)}));
    std::vector<std::vector<double>> seed_rows;
    for (const auto* item : train) {
      const std::size_t T = item->seq.length();
      const auto random = ordered_random_segmentation(T, cfg.n_segments, cfg.min_size, rng);
      seed_rows.push_back(per_step_jaccard(step_frame_sets(random, T), step_frame_sets(*item->labels, T)));
    }
    per_seed.push_back(average_rows(seed_rows, cfg.n_segments));
  }
  out.baseline = aggregate_seeds(per_seed);
  out.baseline.dataset = dataset;
  out.baseline.method = "ordered random steps";
  return out;
}

RewardEvalResult eval_rewards(const std::vector<LabeledSequence>& data, const RewardModel& model,
                              double threshold, int n_seeds, std::uint64_t seed,
                              const std::string& dataset, const std::string& method,
                              double bernoulli_p) {
  if (n_seeds < 1) throw std::invalid_argument("eval_rewards: n_seeds must be >= 1");
  std::vector<const LabeledSequence*> test;
  for (const auto& item : data) {
    if (item.split != Split::test) continue;
    if (!item.labels) throw DataError("test sequence '" + item.seq.name + "' has no annotation");
    if (item.labels->n_steps != model.n_steps())
      throw DataError("model has " + std::to_string(model.n_steps()) + " steps but '" + item.seq.name +
                      "' is annotated with " + std::to_string(item.labels->n_steps));
    test.push_back(&item);
  }
  if (test.empty()) throw DataError("no test sequences to evaluate");

  RewardEvalResult out;
  std::vector<std::vector<double>> rows;
  for (const auto* item : test) {
    const auto trace = score_sequence(model, item->seq);
    const std::size_t T = item->seq.length();
    rows.push_back(per_step_jaccard(binarize_trace(trace.step_values, threshold),
                                    step_frame_sets(*item->labels, T)));
  }
  out.method = average_rows(rows, model.n_steps());
  out.method.dataset = dataset;
  out.method.method = method;

  std::vector<StepOverlapReport> per_seed;
  for (int s = 0; s < n_seeds; ++s) {
    std::mt19937_64 rng(derive_seed(seed, {static_cast<std::uint64_t>(s)}));
    std::vector<std::vector<double>> seed_rows;
    for (const auto* item : test) {
      const std::size_t T = item->seq.length();
      std::vector<FrameIndexSet> pred;
      for (int g = 0; g < model.n_steps(); ++g) pred.push_back(bernoulli_baseline(T, bernoulli_p, rng));
      seed_rows.push_back(per_step_jaccard(pred, step_frame_sets(*item->labels, T)));
    }
    per_seed.push_back(average_rows(seed_rows, model.n_steps()));
  }
  out.baseline = aggregate_seeds(per_seed);
  out.baseline.dataset = dataset;
  out.baseline.method = "random baseline";
  return out;
}

nlohmann::json to_json(const StepOverlapReport& r) {
  return {{"dataset", r.dataset},
          {"method", r.method},
          {"n_steps", r.n_steps},
          {"per_step_jaccard", r.per_step_jaccard},
          {"per_step_stderr", r.per_step_stderr},
          {"average", r.average},
          {"average_stderr", r.average_stderr},
          {"n_seeds", r.n_seeds}};
}

std::string format_table(const std::vector<StepOverlapReport>& reports) {
  std::size_t max_steps = 0;
  std::size_t dataset_w = 7;
  std::size_t method_w = 6;
  for (const auto& r : reports) {
    max_steps = std::max(max_steps, r.per_step_jaccard.size());
    dataset_w = std::max(dataset_w, r.dataset.size());
    method_w = std::max(method_w, r.method.size());
  }
  auto cell = [](double v, double se) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%5.1f%% +- %4.1f", 100.0 * v, 100.0 * se);
    return std::string(buf);
  };
  auto pad = [](std::string s, std::size_t w) {
    s.resize(std::max(w, s.size()), ' ');
    return s;
  };
  constexpr std::size_t kCell = 16;
  std::ostringstream os;
  os << pad("dataset", dataset_w) << " | " << pad("method", method_w);
  for (std::size_t g = 0; g < max_steps; ++g) os << " | " << pad("step " + std::to_string(g + 1), kCell);
  os << " | average (+- stderr over seeds)\n";
  os << std::string(dataset_w + method_w + 3 + (max_steps + 1) * (kCell + 3), '-') << '\n';
  for (const auto& r : reports) {
    os << pad(r.dataset, dataset_w) << " | " << pad(r.method, method_w);
    for (std::size_t g = 0; g < max_steps; ++g) {
      os << " | "
         << pad(g < r.per_step_jaccard.size() ? cell(r.per_step_jaccard[g], r.per_step_stderr[g]) : "-",
                kCell);
    }
    os << " | " << cell(r.average, r.average_stderr) << '\n';
  }
  return os.str();
}

}  // namespace percept
