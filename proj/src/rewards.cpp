#include "percept/rewards.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include <nlohmann/json.hpp>

namespace percept {

FrameSet collect_step_frames(std::span<const FeatureSequence> seqs,
                             std::span<const StepAnnotation> labels, int step, bool complement) {
  if (seqs.size() != labels.size())
    throw std::invalid_argument("collect_step_frames: one annotation per sequence required");
  FrameSet out;
  for (std::size_t s = 0; s < seqs.size(); ++s) {
    const auto frame_labels = labels[s].frame_labels(seqs[s].length());
    for (std::size_t t = 0; t < seqs[s].length(); ++t) {
      if ((frame_labels[t] == step) != complement) out.push_back(seqs[s].frames.row(t));
    }
  }
  return out;
}

FeatureMoments feature_moments(const FrameSet& frames) {
  if (frames.empty()) throw std::invalid_argument("feature_moments: empty frame set");
  const std::size_t dims = frames.front().size();
  FeatureMoments m{std::vector<double>(dims, 0.0), std::vector<double>(dims, 0.0)};
  for (const auto& f : frames) {
    if (f.size() != dims) throw std::invalid_argument("feature_moments: mixed frame sizes");
    for (std::size_t i = 0; i < dims; ++i) m.mean[i] += f[i];
  }
  const double n = static_cast<double>(frames.size());
  for (auto& v : m.mean) v /= n;
  for (const auto& f : frames) {
    for (std::size_t i = 0; i < dims; ++i) {
      const double d = f[i] - m.mean[i];
      m.std[i] += d * d;
    }
  }
  for (auto& v : m.std) v = std::sqrt(v / n);
  return m;
}

FeatureSelection select_features(const FrameSet& pos, const FrameSet& neg, double alpha,
                                 std::size_t m, int step_id) {
  if (pos.empty() || neg.empty())
    throw std::invalid_argument("select_features: positive and negative sets must be non-empty");
  const auto p = feature_moments(pos);
  const auto q = feature_moments(neg);
  const std::size_t dims = p.mean.size();
  if (q.mean.size() != dims) throw std::invalid_argument("select_features: dimension mismatch");
  if (m < 1 || m > dims) throw std::invalid_argument("select_features: need 1 <= m <= D");

  std::vector<double> z(dims);
  for (std::size_t i = 0; i < dims; ++i)
    z[i] = alpha * std::abs(p.mean[i] - q.mean[i]) - (p.std[i] + q.std[i]);

  std::vector<std::size_t> order(dims);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(m), order.end(),
                    [&](std::size_t a, std::size_t b) { return z[a] > z[b] || (z[a] == z[b] && a < b); });

  FeatureSelection sel;
  sel.step_id = step_id;
  sel.indices.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(m));
  for (const auto i : sel.indices) sel.scores.push_back(z[i]);
  return sel;
}

GaussianStepModel fit_step_gaussian(const FrameSet& pos, const FeatureSelection& selection,
                                    double std_floor) {
  if (pos.empty()) throw std::invalid_argument("fit_step_gaussian: no positive frames");
  const auto moments = feature_moments(pos);
  GaussianStepModel model;
  model.step_id = selection.step_id;
  model.selection = selection;
  for (const auto i : selection.indices) {
    if (i >= moments.mean.size()) throw std::invalid_argument("fit_step_gaussian: index out of range");
    model.mu_pos.push_back(moments.mean[i]);
    model.sigma_pos.push_back(std::max(moments.std[i], std_floor));
  }
  return model;
}

double step_score_gaussian(const GaussianStepModel& model, std::span<const float> frame) {
  const auto& idx = model.selection.indices;
  double q = 0.0;
  for (std::size_t j = 0; j < idx.size(); ++j) {
    if (idx[j] >= frame.size()) throw std::invalid_argument("step_score_gaussian: dimension mismatch");
    const double d = (frame[idx[j]] - model.mu_pos[j]) / model.sigma_pos[j];
    q += d * d;
  }
  q /= static_cast<double>(idx.size());
  return std::exp(-0.5 * q);
}

namespace {

int common_step_count(std::span<const AnnotatedSequence> train) {
  if (train.empty()) throw std::invalid_argument("no training sequences");
  const int n = train.front().labels.n_steps;
  for (const auto& ex : train) {
    if (ex.labels.n_steps != n) throw DataError("training annotations disagree on the step count");
    validate(ex.labels, ex.seq.length());
    if (ex.seq.dims() != train.front().seq.dims())
      throw DataError("training sequences disagree on the feature dimension");
  }
  return n;
}

}  // namespace

std::vector<GaussianStepModel> train_gaussian_steps(std::span<const AnnotatedSequence> train,
                                                    double alpha, std::size_t top_m,
                                                    double std_floor) {
  const int n_steps = common_step_count(train);
  if (n_steps < 2) throw std::invalid_argument("reward learning needs at least 2 steps");
  std::vector<FeatureSequence> seqs;
  std::vector<StepAnnotation> labels;
  for (const auto& ex : train) {
    seqs.push_back(ex.seq);
    labels.push_back(ex.labels);
  }
  std::vector<GaussianStepModel> models;
  for (int g = 0; g < n_steps; ++g) {
    const auto pos = collect_step_frames(seqs, labels, g);
    const auto neg = collect_step_frames(seqs, labels, g, true);
    if (pos.empty()) throw DataError("step " + std::to_string(g + 1) + " has no training frames");
    auto sel = select_features(pos, neg, alpha, top_m, g);
    auto model = fit_step_gaussian(pos, sel, std_floor);
    model.alpha = alpha;
    models.push_back(std::move(model));
  }
  return models;
}

SoftmaxStepClassifier SoftmaxStepClassifier::zeros(std::size_t n_steps, std::size_t dims) {
  return {n_steps, dims, std::vector<double>(n_steps * dims, 0.0), std::vector<double>(n_steps, 0.0)};
}

namespace {

void class_scores(const SoftmaxStepClassifier& clf, std::span<const float> frame,
                  std::vector<double>& out) {
  if (frame.size() != clf.dims) throw std::invalid_argument("softmax: dimension mismatch");
  out.assign(clf.biases.begin(), clf.biases.end());
  for (std::size_t s = 0; s < clf.n_steps; ++s) {
    const double* w = clf.weights.data() + s * clf.dims;
    double acc = 0.0;
    for (std::size_t i = 0; i < clf.dims; ++i) acc += w[i] * frame[i];
    out[s] += acc;
  }
}

void softmax_inplace(std::vector<double>& v) {
  const double mx = *std::max_element(v.begin(), v.end());
  double sum = 0.0;
  for (auto& x : v) {
    x = std::exp(x - mx);
    sum += x;
  }
  for (auto& x : v) x /= sum;
}

}  // namespace

std::vector<double> step_probs(const SoftmaxStepClassifier& clf, std::span<const float> frame) {
  std::vector<double> p;
  class_scores(clf, frame, p);
  softmax_inplace(p);
  return p;
}

LossAndGradient softmax_loss(const SoftmaxStepClassifier& clf, const FrameSet& frames,
                             std::span<const int> labels, double l2) {
  if (frames.size() != labels.size() || frames.empty())
    throw std::invalid_argument("softmax_loss: one label per frame required");
  const std::size_t S = clf.n_steps;
  const std::size_t D = clf.dims;
  LossAndGradient out;
  out.gradient.assign(S * D + S, 0.0);
  std::vector<double> z;
  const double inv_n = 1.0 / static_cast<double>(frames.size());
  for (std::size_t n = 0; n < frames.size(); ++n) {
    class_scores(clf, frames[n], z);
    const double mx = *std::max_element(z.begin(), z.end());
    double sum = 0.0;
    for (const double v : z) sum += std::exp(v - mx);
    const double log_norm = mx + std::log(sum);
    const auto y = static_cast<std::size_t>(labels[n]);
    out.loss += (log_norm - z[y]) * inv_n;
    for (std::size_t s = 0; s < S; ++s) {
      const double coef = (std::exp(z[s] - log_norm) - (s == y ? 1.0 : 0.0)) * inv_n;
      double* g = out.gradient.data() + s * D;
      const auto& f = frames[n];
      for (std::size_t i = 0; i < D; ++i) g[i] += coef * f[i];
      out.gradient[S * D + s] += coef;
    }
  }
  double wsq = 0.0;
  for (std::size_t k = 0; k < S * D; ++k) {
    wsq += clf.weights[k] * clf.weights[k];
    out.gradient[k] += 2.0 * l2 * clf.weights[k];
  }
  out.loss += l2 * wsq;
  return out;
}

SoftmaxStepClassifier train_softmax(std::span<const AnnotatedSequence> train,
                                    const SoftmaxHyper& hyper, SoftmaxTrainingLog* log) {
  const int n_steps = common_step_count(train);
  if (n_steps < 2) throw std::invalid_argument("softmax classifier needs at least 2 steps");
  if (hyper.epochs < 0 || !(hyper.lr > 0.0) || hyper.l2 < 0.0)
    throw std::invalid_argument("train_softmax: invalid hyper-parameters");

  FrameSet frames;
  std::vector<int> labels;
  std::vector<std::size_t> per_step(static_cast<std::size_t>(n_steps), 0);
  for (const auto& ex : train) {
    const auto fl = ex.labels.frame_labels(ex.seq.length());
    for (std::size_t t = 0; t < ex.seq.length(); ++t) {
      frames.push_back(ex.seq.frames.row(t));
      labels.push_back(fl[t]);
      ++per_step[static_cast<std::size_t>(fl[t])];
    }
  }
  for (int g = 0; g < n_steps; ++g) {
    if (per_step[static_cast<std::size_t>(g)] == 0)
      throw DataError("step " + std::to_string(g + 1) + " has no training frames");
  }

  auto clf = SoftmaxStepClassifier::zeros(static_cast<std::size_t>(n_steps), train.front().seq.dims());
  auto current = softmax_loss(clf, frames, labels, hyper.l2);
  if (!std::isfinite(current.loss)) throw DataError("softmax training: non-finite loss");
  if (log) {
    log->loss = {current.loss};
    log->step_size.clear();
  }
  const std::size_t nw = clf.weights.size();
  double lr = hyper.lr;
  for (int epoch = 0; epoch < hyper.epochs; ++epoch) {
    SoftmaxStepClassifier next = clf;
    LossAndGradient trial;
    bool accepted = false;
    for (int attempt = 0; attempt < 60; ++attempt) {
      for (std::size_t k = 0; k < nw; ++k) next.weights[k] = clf.weights[k] - lr * current.gradient[k];
      for (std::size_t s = 0; s < clf.n_steps; ++s)
        next.biases[s] = clf.biases[s] - lr * current.gradient[nw + s];
      trial = softmax_loss(next, frames, labels, hyper.l2);
      if (!std::isfinite(trial.loss) && attempt == 59)
        throw DataError("softmax training: non-finite loss");
      if (std::isfinite(trial.loss) && trial.loss <= current.loss) {
        accepted = true;
        break;
      }
      lr *= 0.5;
    }
    if (accepted) {
      clf = std::move(next);
      current = std::move(trial);
    }
    if (log) {
      log->loss.push_back(current.loss);
      log->step_size.push_back(accepted ? lr : 0.0);
    }
  }
  return clf;
}

double combine(std::span<const double> step_values, bool normalize_range) {
  if (step_values.size() < 2) throw std::invalid_argument("combine: need at least 2 steps");
  double raw = 0.0;
  double max_raw = 0.0;
  double weight = 1.0;
  for (std::size_t i = 1; i < step_values.size(); ++i) {
    weight *= 2.0;
    const double v = step_values[i];
    if (!(v >= 0.0 && v <= 1.0)) throw std::invalid_argument("combine: step values must lie in [0, 1]");
    raw += v * weight;
    max_raw += weight;
  }
  return normalize_range ? raw / max_raw : raw;
}

int RewardModel::n_steps() const {
  if (const auto* g = std::get_if<std::vector<GaussianStepModel>>(&scorer))
    return static_cast<int>(g->size());
  return static_cast<int>(std::get<SoftmaxStepClassifier>(scorer).n_steps);
}

std::vector<double> RewardModel::step_values(std::span<const float> raw_frame) const {
  if (raw_frame.size() != norm.dims()) throw std::invalid_argument("reward model: dimension mismatch");
  std::vector<float> z(raw_frame.size());
  for (std::size_t i = 0; i < z.size(); ++i)
    z[i] = static_cast<float>((raw_frame[i] - norm.mean[i]) / norm.std[i]);
  if (const auto* g = std::get_if<std::vector<GaussianStepModel>>(&scorer)) {
    std::vector<double> out;
    out.reserve(g->size());
    for (const auto& m : *g) out.push_back(step_score_gaussian(m, z));
    return out;
  }
  return step_probs(std::get<SoftmaxStepClassifier>(scorer), z);
}

double RewardModel::reward(std::span<const float> raw_frame, bool normalize_range) const {
  return combine(step_values(raw_frame), normalize_range);
}

ScoreTrace score_sequence(const RewardModel& model, const FeatureSequence& seq,
                          bool normalize_range) {
  if (seq.dims() != model.dims()) throw std::invalid_argument("score_sequence: dimension mismatch");
  ScoreTrace trace;
  trace.step_values.reserve(seq.length());
  trace.combined.reserve(seq.length());
  for (std::size_t t = 0; t < seq.length(); ++t) {
    auto values = model.step_values(seq.frames.row(t));
    trace.combined.push_back(combine(values, normalize_range));
    trace.step_values.push_back(std::move(values));
  }
  return trace;
}

nlohmann::json to_json(const RewardModel& model) {
  nlohmann::json j;
  j["version"] = kRewardModelVersion;
  j["norm"] = {{"mean", model.norm.mean}, {"std", model.norm.std}};
  if (const auto* g = std::get_if<std::vector<GaussianStepModel>>(&model.scorer)) {
    j["kind"] = "gaussian_steps";
    auto steps = nlohmann::json::array();
    for (const auto& m : *g) {
      steps.push_back({{"step_id", m.step_id},
                       {"alpha", m.alpha},
                       {"indices", m.selection.indices},
                       {"scores", m.selection.scores},
                       {"mu_pos", m.mu_pos},
                       {"sigma_pos", m.sigma_pos}});
    }
    j["steps"] = std::move(steps);
  } else {
    const auto& clf = std::get<SoftmaxStepClassifier>(model.scorer);
    j["kind"] = "softmax";
    j["n_steps"] = clf.n_steps;
    j["dims"] = clf.dims;
    j["weights"] = clf.weights;
    j["biases"] = clf.biases;
  }
  return j;
}

RewardModel reward_model_from_json(const nlohmann::json& j) {
  try {
    if (j.at("version").get<int>() != kRewardModelVersion)
      throw DataError("unsupported reward model version");
    RewardModel model;
    model.norm.mean = j.at("norm").at("mean").get<std::vector<double>>();
    model.norm.std = j.at("norm").at("std").get<std::vector<double>>();
    if (model.norm.mean.size() != model.norm.std.size())
      throw DataError("reward model: normalization vectors differ in length");
    const auto kind = j.at("kind").get<std::string>();
    if (kind == "gaussian_steps") {
      std::vector<GaussianStepModel> steps;
      for (const auto& s : j.at("steps")) {
        GaussianStepModel m;
        m.step_id = s.at("step_id").get<int>();
        m.alpha = s.at("alpha").get<double>();
        m.selection.step_id = m.step_id;
        m.selection.indices = s.at("indices").get<std::vector<std::size_t>>();
        m.selection.scores = s.at("scores").get<std::vector<double>>();
        m.mu_pos = s.at("mu_pos").get<std::vector<double>>();
        m.sigma_pos = s.at("sigma_pos").get<std::vector<double>>();
        if (m.mu_pos.size() != m.selection.indices.size() ||
            m.sigma_pos.size() != m.selection.indices.size())
          throw DataError("reward model: step parameter lengths disagree");
        for (const auto i : m.selection.indices) {
          if (i >= model.norm.dims()) throw DataError("reward model: feature index out of range");
        }
        steps.push_back(std::move(m));
      }
      if (steps.size() < 2) throw DataError("reward model needs at least 2 steps");
      model.scorer = std::move(steps);
    } else if (kind == "softmax") {
      SoftmaxStepClassifier clf;
      clf.n_steps = j.at("n_steps").get<std::size_t>();
      clf.dims = j.at("dims").get<std::size_t>();
      clf.weights = j.at("weights").get<std::vector<double>>();
      clf.biases = j.at("biases").get<std::vector<double>>();
      if (clf.n_steps < 2 || clf.weights.size() != clf.n_steps * clf.dims ||
          clf.biases.size() != clf.n_steps || clf.dims != model.norm.dims())
        throw DataError("reward model: softmax parameter shapes disagree");
      model.scorer = std::move(clf);
    } else {
      throw DataError("unknown reward model kind '" + kind + "'");
    }
    return model;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed reward model: ") + e.what());
  }
}

void save_reward_model(const RewardModel& model, const std::filesystem::path& path,
                       const nlohmann::json& meta) {
  auto j = to_json(model);
  if (!meta.is_null()) j["meta"] = meta;
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write model " + path.string());
  out << j.dump() << '\n';
}

RewardModel load_reward_model(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open model " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw DataError("malformed reward model " + path.string() + ": " + e.what());
  }
  return reward_model_from_json(j);
}

}  // namespace percept
