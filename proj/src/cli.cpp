#include "percept/cli.hpp"

#include <charconv>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <stdexcept>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "percept/error.hpp"
#include "percept/evalkit.hpp"
#include "percept/feature_io.hpp"
#include "percept/pi2.hpp"
#include "percept/rewards.hpp"
#include "percept/seeding.hpp"
#include "percept/segmenter.hpp"
#include "percept/synthenv.hpp"

#ifndef PERCEPT_VERSION
#define PERCEPT_VERSION "0.0.0"
#endif

namespace percept::cli {

namespace fs = std::filesystem;
using nlohmann::json;

std::string version() { return PERCEPT_VERSION; }

namespace {

// ---------------------------------------------------------------------------
// Config files and resolved configuration

json typed_value(const std::string& s) {
  if (s == "true") return true;
  if (s == "false") return false;
  double v = 0.0;
  const auto* end = s.data() + s.size();
  const auto res = std::from_chars(s.data(), end, v);
  if (!s.empty() && res.ec == std::errc() && res.ptr == end) {
    long long i = 0;
    const auto ires = std::from_chars(s.data(), end, i);
    if (ires.ec == std::errc() && ires.ptr == end) return i;
    return v;
  }
  return s;
}

/// Every option of a command with its effective value, keyed by long name.
json resolved_config(const CLI::App& app) {
  json cfg = json::object();
  for (const CLI::Option* opt : app.get_options()) {
    if (opt == app.get_help_ptr() || opt == app.get_help_all_ptr()) continue;
    const std::string name = opt->get_single_name();
    if (name == "config") continue;
    std::vector<std::string> values;
    if (opt->count() > 0) {
      values = opt->results();
    } else if (!opt->get_default_str().empty()) {
      values = {opt->get_default_str()};
    }
    if (values.empty() && opt->get_expected_max() == 0) {
      cfg[name] = false;
    } else if (values.empty()) {
      cfg[name] = nullptr;
    } else if (values.size() == 1 && opt->get_expected_max() <= 1) {
      cfg[name] = typed_value(values.front());
    } else {
      json arr = json::array();
      for (const auto& v : values) arr.push_back(typed_value(v));
      cfg[name] = std::move(arr);
    }
  }
  return cfg;
}

/// Thrown for an unreadable or malformed --config file.
struct ConfigFileError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

bool given_on_command_line(const std::vector<std::string>& args, const std::string& flag) {
  for (const auto& a : args)
    if (a == flag || a.rfind(flag + "=", 0) == 0) return true;
  return false;
}

/// Replaces `--config file.json` by the file's keys as long options. Keys
/// already given on the command line are skipped, so flags take precedence.
std::vector<std::string> expand_config_file(std::vector<std::string> args) {
  std::string file;
  for (auto it = args.begin(); it != args.end();) {
    if (*it == "--config") {
      if (it + 1 == args.end()) throw ConfigFileError("--config needs a file");
      file = *(it + 1);
      it = args.erase(it, it + 2);
    } else if (it->rfind("--config=", 0) == 0) {
      file = it->substr(9);
      it = args.erase(it);
    } else {
      ++it;
    }
  }
  if (file.empty()) return args;

  std::ifstream in(file);
  if (!in) throw ConfigFileError("cannot open config file " + file);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigFileError("config file " + file + " is not valid JSON: " + e.what());
  }
  if (!j.is_object()) throw ConfigFileError("config file " + file + " must hold a JSON object");

  auto scalar = [](const json& v) { return v.is_string() ? v.get<std::string>() : v.dump(); };
  std::vector<std::string> extra;
  for (const auto& [key, value] : j.items()) {
    const std::string flag = "--" + key;
    if (value.is_null() || given_on_command_line(args, flag)) continue;
    if (value.is_boolean()) {
      if (value.get<bool>()) extra.push_back(flag);
    } else if (value.is_array()) {
      extra.push_back(flag);
      for (const auto& v : value) extra.push_back(scalar(v));
    } else if (value.is_object()) {
      throw ConfigFileError("config file " + file + ": '" + key + "' must be a value, not an object");
    } else {
      extra.push_back(flag);
      extra.push_back(scalar(value));
    }
  }
  args.insert(args.end(), extra.begin(), extra.end());
  return args;
}

// ---------------------------------------------------------------------------
// Output helpers

std::string format_double(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

void ensure_parent(const fs::path& p) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
}

void write_text(const fs::path& p, const std::string& text) {
  ensure_parent(p);
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + p.string());
  out << text;
  if (!out) throw DataError("failed writing " + p.string());
}

void write_json(const fs::path& p, const json& j) { write_text(p, j.dump(2) + "\n"); }

/// Resolved-config snapshot of one command, embedded in its outputs.
struct RunInfo {
  std::string command;
  json config;

  json meta() const { return {{"tool", "percept"}, {"version", version()}, {"command", command}, {"config", config}}; }
  std::string csv_header() const {
    return "# percept " + version() + " " + command + " config=" + config.dump() + "\n";
  }
  void snapshot(const fs::path& p) const { write_json(p, meta()); }
};

fs::path sidecar(const fs::path& out, const std::string& suffix) {
  auto name = out.stem().string() + suffix;
  return out.has_parent_path() ? out.parent_path() / name : fs::path(name);
}

std::string seq_name(std::size_t i, const std::string& prefix) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%s_%03zu", prefix.c_str(), i);
  return buf;
}

Split parse_split(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "test") return Split::test;
  throw std::invalid_argument("split must be 'train' or 'test'");
}

std::vector<LabeledSequence> load_manifest_data(const fs::path& manifest) {
  if (!fs::exists(manifest)) throw DataError("missing manifest " + manifest.string());
  return load_dataset(load_manifest(manifest));
}

// ---------------------------------------------------------------------------
// Commands

struct GenDemosParams {
  int n = 12;
  int n_test = 8;
  double noise = 0.3;
  std::uint64_t seed = 0;
  std::string out_dir;
  std::size_t dims = 512;
  std::uint64_t projector_seed = kDefaultProjectorSeed;
  double obs_noise = 0.02;
};

void cmd_gen_demos(const GenDemosParams& p, const RunInfo& info, std::ostream& out) {
  if (p.n < 0 || p.n_test < 0) throw std::invalid_argument("demo counts must be >= 0");
  const fs::path dir(p.out_dir);
  fs::create_directories(dir);
  DoorEnvConfig env;
  const FeatureProjector projector(p.projector_seed, p.dims, p.obs_noise);
  DatasetManifest manifest;
  json summary = json::array();
  int successes = 0;
  const int total = p.n + p.n_test;
  for (int i = 0; i < total; ++i) {
    const auto name = seq_name(static_cast<std::size_t>(i), "demo");
    auto demo = scripted_demo(env, projector, p.noise, derive_seed(p.seed, {static_cast<std::uint64_t>(i)}));
    demo.features.name = name;
    save_fseq(demo.features, dir / (name + ".fseq"));
    save_annotation(demo.labels, dir / (name + ".json"));
    const Split split = i < p.n ? Split::train : Split::test;
    manifest.entries.push_back({name + ".fseq", name + ".json", split});
    successes += demo.succeeded ? 1 : 0;
    summary.push_back({{"name", name},
                       {"split", to_string(split)},
                       {"succeeded", demo.succeeded},
                       {"final_door_angle", demo.rollout.states.back()[1]},
                       {"boundaries", demo.labels.boundaries}});
  }
  save_manifest(manifest, dir / "manifest.json");
  write_json(dir / "demos.json", {{"meta", info.meta()},
                                  {"success_rate", total ? static_cast<double>(successes) / total : 0.0},
                                  {"demos", summary}});
  info.snapshot(dir / "run_config.json");
  out << "wrote " << total << " demos to " << dir.string() << " (" << p.n << " train, " << p.n_test
      << " test); scripted success " << successes << "/" << total << "\n";
}

struct GenPiecewiseParams {
  int n = 50;
  std::size_t frames = 80;
  std::size_t dims = 64;
  int steps = 3;
  double snr = 2.0;
  std::uint64_t seed = 0;
  std::size_t min_length = 0;
  std::string out_dir;
};

void cmd_gen_piecewise(const GenPiecewiseParams& p, const RunInfo& info, std::ostream& out) {
  if (p.n < 0) throw std::invalid_argument("--n must be >= 0");
  const fs::path dir(p.out_dir);
  fs::create_directories(dir);
  const auto data = gen_piecewise_dataset(static_cast<std::size_t>(p.n), p.frames, p.dims, p.steps, p.snr, p.seed,
                                          p.min_length);
  DatasetManifest manifest;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto name = seq_name(i, "piecewise");
    save_fseq(data[i].seq, dir / (name + ".fseq"));
    save_annotation(data[i].labels, dir / (name + ".json"));
    manifest.entries.push_back({name + ".fseq", name + ".json", Split::train});
  }
  save_manifest(manifest, dir / "manifest.json");
  info.snapshot(dir / "run_config.json");
  out << "wrote " << data.size() << " piecewise sequences to " << dir.string() << "\n";
}

struct SegmentParams {
  std::string manifest;
  int steps = 3;
  std::size_t min_size = 2;
  std::string solver = "exact";
  std::string split = "train";
  std::string out;
};

SegSolverConfig seg_config(int steps, std::size_t min_size, const std::string& solver) {
  SegSolverConfig cfg;
  cfg.n_segments = steps;
  cfg.min_size = min_size;
  cfg.solver = parse_seg_solver(solver);
  return cfg;
}

void cmd_segment(const SegmentParams& p, const RunInfo& info, std::ostream& out) {
  const auto data = load_manifest_data(p.manifest);
  const auto cfg = seg_config(p.steps, p.min_size, p.solver);
  const Split split = parse_split(p.split);
  json list = json::array();
  for (const auto& item : data) {
    if (item.split != split) continue;
    const auto seg = segment(item.seq, cfg);
    list.push_back({{"name", item.seq.name},
                    {"boundaries", seg.boundaries},
                    {"objective", seg.objective},
                    {"per_segment_cost", seg.per_segment_cost}});
  }
  const fs::path path(p.out);
  write_json(path, list);
  info.snapshot(sidecar(path, ".run_config.json"));
  out << "segmented " << list.size() << " sequences into " << p.steps << " steps -> " << path.string() << "\n";
}

/// name -> boundaries from a segment output file.
std::map<std::string, StepAnnotation> load_splits(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open splits " + path.string());
  std::map<std::string, StepAnnotation> out;
  try {
    const auto j = json::parse(in);
    if (!j.is_array()) throw DataError("splits " + path.string() + " must be a JSON list");
    for (const auto& e : j) {
      StepAnnotation a;
      a.boundaries = e.at("boundaries").get<std::vector<std::size_t>>();
      a.n_steps = static_cast<int>(a.boundaries.size()) + 1;
      out[e.at("name").get<std::string>()] = std::move(a);
    }
  } catch (const json::exception& e) {
    throw DataError("malformed splits " + path.string() + ": " + e.what());
  }
  return out;
}

struct TrainParams {
  std::string manifest;
  std::string splits;
  std::string method = "linear";
  double alpha = kDefaultAlpha;
  std::size_t top_m = kDefaultTopM;
  double l2 = 1e-4;
  double lr = 0.5;
  int epochs = 500;
  double std_floor = kDefaultStdFloor;
  std::string loss_log;
  std::string out;
};

void cmd_train(const TrainParams& p, const RunInfo& info, std::ostream& out) {
  const auto data = load_manifest_data(p.manifest);
  std::map<std::string, StepAnnotation> splits;
  if (!p.splits.empty()) splits = load_splits(p.splits);

  std::vector<FeatureSequence> raw;
  std::vector<StepAnnotation> labels;
  for (const auto& item : data) {
    if (item.split != Split::train) continue;
    if (!p.splits.empty()) {
      const auto it = splits.find(item.seq.name);
      if (it == splits.end()) throw DataError("no split for training sequence '" + item.seq.name + "'");
      labels.push_back(it->second);
    } else {
      if (!item.labels) throw DataError("training sequence '" + item.seq.name + "' has no annotation");
      labels.push_back(*item.labels);
    }
    try {
      validate(labels.back(), item.seq.length());
    } catch (const std::invalid_argument& e) {
      throw DataError("labels of '" + item.seq.name + "': " + e.what());
    }
    raw.push_back(item.seq);
  }
  if (raw.empty()) throw DataError("manifest has no training sequences");
  for (const auto& l : labels) {
    if (l.n_steps != labels.front().n_steps) throw DataError("training labels disagree on the number of steps");
  }

  RewardModel model;
  model.norm = fit_norm(raw, p.std_floor);
  std::vector<AnnotatedSequence> train;
  for (std::size_t i = 0; i < raw.size(); ++i) train.push_back({apply_norm(raw[i], model.norm), labels[i]});

  json extra = json::object();
  if (p.method == "select") {
    model.scorer = train_gaussian_steps(train, p.alpha, p.top_m, p.std_floor);
  } else if (p.method == "linear") {
    SoftmaxTrainingLog log;
    SoftmaxHyper hyper;
    hyper.l2 = p.l2;
    hyper.lr = p.lr;
    hyper.epochs = p.epochs;
    model.scorer = train_softmax(train, hyper, &log);
    extra["final_loss"] = log.loss.empty() ? 0.0 : log.loss.back();
    if (!p.loss_log.empty()) {
      std::string csv = info.csv_header() + "epoch,loss,step_size\n";
      for (std::size_t e = 0; e < log.loss.size(); ++e) {
        csv += std::to_string(e) + "," + format_double(log.loss[e]) + "," +
               format_double(e < log.step_size.size() ? log.step_size[e] : 0.0) + "\n";
      }
      write_text(p.loss_log, csv);
    }
  } else {
    throw std::invalid_argument("--method must be 'select' or 'linear'");
  }
  json meta = info.meta();
  meta["training"] = extra;
  meta["training"]["n_sequences"] = raw.size();
  const fs::path path(p.out);
  ensure_parent(path);
  save_reward_model(model, path, meta);
  info.snapshot(sidecar(path, ".run_config.json"));
  out << "trained " << p.method << " reward (" << model.n_steps() << " steps, " << model.dims()
      << " features) on " << raw.size() << " sequences -> " << path.string() << "\n";
}

struct ScoreParams {
  std::string model;
  std::string fseq;
  bool raw_range = false;
  std::string out;
};

void cmd_score(const ScoreParams& p, const RunInfo& info, std::ostream& out) {
  if (!fs::exists(p.model)) throw DataError("missing model " + p.model);
  if (!fs::exists(p.fseq)) throw DataError("missing sequence file " + p.fseq);
  const auto model = load_reward_model(p.model);
  const auto seq = load_fseq(p.fseq);
  if (seq.dims() != model.dims())
    throw DataError(p.fseq + " has " + std::to_string(seq.dims()) + " features, the model expects " +
                    std::to_string(model.dims()));
  const auto trace = score_sequence(model, seq, !p.raw_range);
  std::string csv = info.csv_header() + "frame";
  for (int g = 0; g < model.n_steps(); ++g) csv += ",step_" + std::to_string(g + 1);
  csv += ",combined\n";
  for (std::size_t t = 0; t < trace.combined.size(); ++t) {
    csv += std::to_string(t);
    for (const double v : trace.step_values[t]) csv += "," + format_double(v);
    csv += "," + format_double(trace.combined[t]) + "\n";
  }
  write_text(p.out, csv);
  info.snapshot(sidecar(p.out, ".run_config.json"));
  out << "scored " << trace.combined.size() << " frames -> " << p.out << "\n";
}

json report_document(const RunInfo& info, const std::vector<StepOverlapReport>& reports) {
  json arr = json::array();
  for (const auto& r : reports) arr.push_back(to_json(r));
  return {{"meta", info.meta()}, {"reports", arr}};
}

void emit_reports(const fs::path& path, const RunInfo& info, const std::vector<StepOverlapReport>& reports,
                  json extra, std::ostream& out) {
  json doc = report_document(info, reports);
  for (auto& [k, v] : extra.items()) doc[k] = v;
  write_json(path, doc);
  const auto table = format_table(reports);
  write_text(sidecar(path, ".txt"), table);
  info.snapshot(sidecar(path, ".run_config.json"));
  out << table;
}

std::string dataset_tag(const std::string& given, const std::string& manifest) {
  if (!given.empty()) return given;
  const auto parent = fs::path(manifest).parent_path().filename().string();
  return parent.empty() ? "dataset" : parent;
}

struct EvalSegParams {
  std::string manifest;
  int steps = 3;
  std::size_t min_size = 2;
  std::string solver = "exact";
  int seeds = 100;
  std::uint64_t seed = 0;
  std::string dataset;
  std::string out;
};

void cmd_eval_seg(const EvalSegParams& p, const RunInfo& info, std::ostream& out) {
  const auto data = load_manifest_data(p.manifest);
  const auto cfg = seg_config(p.steps, p.min_size, p.solver);
  const auto res = eval_segmentation(data, cfg, p.seeds, p.seed, dataset_tag(p.dataset, p.manifest));
  json bounds = json::array();
  for (const auto& s : res.segmentations) bounds.push_back(s.boundaries);
  emit_reports(p.out, info, {res.method, res.baseline},
               {{"gap_points", 100.0 * (res.method.average - res.baseline.average)}, {"boundaries", bounds}}, out);
}

struct EvalRewardParams {
  std::string manifest;
  std::string model;
  double threshold = 0.5;
  int seeds = 100;
  std::uint64_t seed = 0;
  double p = 0.5;
  std::string dataset;
  std::string method;
  std::string out;
};

void cmd_eval_reward(const EvalRewardParams& p, const RunInfo& info, std::ostream& out) {
  if (!fs::exists(p.model)) throw DataError("missing model " + p.model);
  const auto data = load_manifest_data(p.manifest);
  const auto model = load_reward_model(p.model);
  std::string method = p.method;
  if (method.empty()) {
    method = std::holds_alternative<SoftmaxStepClassifier>(model.scorer)
                 ? "linear classifier"
                 : "feature selection (M=" +
                       std::to_string(std::get<std::vector<GaussianStepModel>>(model.scorer).front().selection.indices.size()) +
                       ")";
  }
  const auto res = eval_rewards(data, model, p.threshold, p.seeds, p.seed, dataset_tag(p.dataset, p.manifest),
                                method, p.p);
  double exact = 0.0;
  double argmax = 0.0;
  std::size_t n = 0;
  for (const auto& item : data) {
    if (item.split != Split::test) continue;
    const auto trace = score_sequence(model, item.seq);
    exact += exact_match_accuracy(trace.step_values, *item.labels, p.threshold);
    argmax += argmax_accuracy(trace.step_values, *item.labels);
    ++n;
  }
  exact /= static_cast<double>(n);
  argmax /= static_cast<double>(n);
  emit_reports(p.out, info, {res.method, res.baseline},
               {{"ratio_to_baseline", res.baseline.average > 0.0 ? res.method.average / res.baseline.average : 0.0},
                {"exact_match_accuracy", exact},
                {"argmax_accuracy", argmax}},
               out);
  out << "held-out step accuracy: exact " << format_double(exact) << ", argmax " << format_double(argmax) << "\n";
}

struct BaselineParams {
  std::string manifest;
  std::string kind = "ordered";
  int steps = 3;
  std::size_t min_size = 2;
  double p = 0.5;
  int seeds = 100;
  std::uint64_t seed = 0;
  std::string split;
  std::string dataset;
  std::string out;
};

void cmd_baseline(const BaselineParams& p, const RunInfo& info, std::ostream& out) {
  const auto data = load_manifest_data(p.manifest);
  if (p.seeds < 1) throw std::invalid_argument("--seeds must be >= 1");
  const bool ordered = p.kind == "ordered";
  if (!ordered && p.kind != "bernoulli") throw std::invalid_argument("--kind must be 'ordered' or 'bernoulli'");
  const Split split = parse_split(p.split.empty() ? (ordered ? "train" : "test") : p.split);
  std::vector<const LabeledSequence*> items;
  for (const auto& item : data) {
    if (item.split != split) continue;
    if (!item.labels) throw DataError("sequence '" + item.seq.name + "' has no annotation");
    if (item.labels->n_steps != p.steps)
      throw DataError("annotation of '" + item.seq.name + "' has " + std::to_string(item.labels->n_steps) + " steps");
    items.push_back(&item);
  }
  if (items.empty()) throw DataError("no " + std::string(to_string(split)) + " sequences in the manifest");

  std::vector<StepOverlapReport> per_seed;
  for (int s = 0; s < p.seeds; ++s) {
    std::mt19937_64 rng(derive_seed(p.seed, {static_cast<std::uint64_t>(s)}));
    std::vector<double> sums(static_cast<std::size_t>(p.steps), 0.0);
    for (const auto* item : items) {
      const std::size_t T = item->seq.length();
      const auto truth = step_frame_sets(*item->labels, T);
      std::vector<FrameIndexSet> pred;
      if (ordered) {
        pred = step_frame_sets(ordered_random_segmentation(T, p.steps, p.min_size, rng), T);
      } else {
        for (int g = 0; g < p.steps; ++g) pred.push_back(bernoulli_baseline(T, p.p, rng));
      }
      for (std::size_t g = 0; g < sums.size(); ++g) sums[g] += jaccard(pred[g], truth[g]);
    }
    StepOverlapReport r;
    r.n_steps = p.steps;
    for (const double v : sums) r.per_step_jaccard.push_back(v / static_cast<double>(items.size()));
    r.per_step_stderr.assign(sums.size(), 0.0);
    double avg = 0.0;
    for (const double v : r.per_step_jaccard) avg += v;
    r.average = avg / static_cast<double>(sums.size());
    per_seed.push_back(std::move(r));
  }
  auto report = aggregate_seeds(per_seed);
  report.dataset = dataset_tag(p.dataset, p.manifest);
  report.method = ordered ? "ordered random steps" : "random baseline";
  emit_reports(p.out, info, {report}, json::object(), out);
}

struct Pi2Params {
  std::string env = "door_synth";
  std::string reward = "env_truth";
  int iters = 11;
  int samples = 10;
  double epsilon = PI2Config{}.epsilon;
  double beta_max = PI2Config{}.beta_max;
  std::uint64_t seed = 0;
  int eval_episodes = 50;
  double exploration_std = DoorLearnerConfig{}.exploration_std;
  std::uint64_t projector_seed = kDefaultProjectorSeed;
  double obs_noise = 0.02;
  double success_level = 0.9;
  std::string out;
};

void cmd_pi2(const Pi2Params& p, const RunInfo& info, std::ostream& out) {
  if (p.env != "door_synth") throw std::invalid_argument("--env must be door_synth");
  const DoorEnvConfig env_cfg;
  const auto env = make_door_env(env_cfg);
  StateReward reward;
  if (p.reward == "env_truth") {
    reward = door_truth_reward(env_cfg);
  } else {
    if (!fs::exists(p.reward)) throw DataError("missing reward model " + p.reward);
    auto model = load_reward_model(p.reward);
    FeatureProjector projector(p.projector_seed, model.dims(), p.obs_noise);
    reward = perceptual_reward(std::move(model), std::move(projector), sample_scene(kRobotSceneSeed));
  }
  DoorLearnerConfig learner;
  learner.exploration_std = p.exploration_std;
  PI2Config cfg;
  cfg.n_iterations = p.iters;
  cfg.n_samples = p.samples;
  cfg.epsilon = p.epsilon;
  cfg.beta_max = p.beta_max;
  cfg.seed = p.seed;
  cfg.eval_episodes = p.eval_episodes;
  const auto curve = train(env, reward, door_initial_policy(env_cfg, learner), cfg);

  std::string csv = info.csv_header() + "iteration,mean_reward,success_rate\n";
  json kl = json::array();
  for (const auto& pt : curve.points) {
    csv += std::to_string(pt.iteration) + "," + format_double(pt.mean_reward) + "," + format_double(pt.success_rate) + "\n";
    kl.push_back(pt.max_kl);
  }
  const fs::path path(p.out);
  write_text(path, csv);
  const int crossing = crossing_iteration(curve, p.success_level);
  write_json(sidecar(path, "_summary.json"),
             {{"meta", info.meta()},
              {"crossing_iteration", crossing},
              {"success_level", p.success_level},
              {"final_success_rate", curve.points.back().success_rate},
              {"max_kl_per_iteration", kl}});
  info.snapshot(sidecar(path, ".run_config.json"));
  out << "pi2 (" << p.reward << "): success " << format_double(curve.points.front().success_rate) << " -> "
      << format_double(curve.points.back().success_rate) << ", first iteration at " << p.success_level << ": "
      << crossing << " -> " << path.string() << "\n";
}

// ---------------------------------------------------------------------------
// Wiring

template <typename Params>
struct Command {
  CLI::App* app;
  Params params;
};

/// Listed for help only: run() expands --config before parsing.
void add_common(CLI::App* app) {
  app->add_option("--config", "JSON object of option values; command-line flags take precedence");
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Perceptual reward learning pipeline: synthetic data, step discovery, rewards, evaluation, PI2",
               "percept"};
  app.option_defaults()->always_capture_default();
  app.set_version_flag("--version", version());
  app.require_subcommand(1);
  app.fallthrough(false);

  // synth
  auto* synth = app.add_subcommand("synth", "Generate synthetic datasets");
  synth->require_subcommand(1);
  GenDemosParams demos;
  auto* gd = synth->add_subcommand("gen-demos", "Scripted noisy door-opening demonstrations");
  add_common(gd);
  gd->add_option("--n", demos.n, "Training demonstrations");
  gd->add_option("--n-test", demos.n_test, "Held-out demonstrations");
  gd->add_option("--noise", demos.noise, "Demonstration noise scale");
  gd->add_option("--seed", demos.seed, "Run seed");
  gd->add_option("--out-dir", demos.out_dir, "Output directory")->required();
  gd->add_option("--dims", demos.dims, "Feature dimension");
  gd->add_option("--projector-seed", demos.projector_seed, "Seed of the feature projector");
  gd->add_option("--obs-noise", demos.obs_noise, "Feature noise scale");

  GenPiecewiseParams pw;
  auto* gp = synth->add_subcommand("gen-piecewise", "Piecewise-stationary Gaussian sequences");
  add_common(gp);
  gp->add_option("--n", pw.n, "Number of sequences");
  gp->add_option("--t", pw.frames, "Frames per sequence");
  gp->add_option("--d", pw.dims, "Feature dimension");
  gp->add_option("--steps", pw.steps, "Steps per sequence");
  gp->add_option("--snr", pw.snr, "Mean shift between consecutive steps, in noise standard deviations");
  gp->add_option("--seed", pw.seed, "Run seed");
  gp->add_option("--min-length", pw.min_length, "Shortest true step (0: T / (2 steps))");
  gp->add_option("--out-dir", pw.out_dir, "Output directory")->required();

  SegmentParams sp;
  auto* seg = app.add_subcommand("segment", "Discover steps by minimizing within-segment deviation");
  add_common(seg);
  seg->add_option("--manifest", sp.manifest, "Dataset manifest")->required();
  seg->add_option("--steps", sp.steps, "Number of steps");
  seg->add_option("--min-size", sp.min_size, "Shortest allowed segment");
  seg->add_option("--solver", sp.solver, "exact | recursive | binary | brute");
  seg->add_option("--split", sp.split, "Which split to segment");
  seg->add_option("--out", sp.out, "Output splits JSON")->required();

  TrainParams tp;
  auto* tr = app.add_subcommand("train", "Learn per-step reward functions");
  add_common(tr);
  tr->add_option("--manifest", tp.manifest, "Dataset manifest")->required();
  tr->add_option("--splits", tp.splits, "Segment output to use as labels (default: manifest annotations)");
  tr->add_option("--method", tp.method, "select | linear");
  tr->add_option("--alpha", tp.alpha, "Weight of the mean separation in feature scores");
  tr->add_option("--top-m", tp.top_m, "Features kept per step");
  tr->add_option("--l2", tp.l2, "Weight decay of the linear classifier");
  tr->add_option("--lr", tp.lr, "Initial learning rate of the linear classifier");
  tr->add_option("--epochs", tp.epochs, "Full-batch epochs of the linear classifier");
  tr->add_option("--std-floor", tp.std_floor, "Smallest standard deviation");
  tr->add_option("--loss-log", tp.loss_log, "CSV of the training loss per epoch");
  tr->add_option("--out", tp.out, "Output model JSON")->required();

  ScoreParams scp;
  auto* sc = app.add_subcommand("score", "Per-frame step values and combined reward of one sequence");
  add_common(sc);
  sc->add_option("--model", scp.model, "Reward model JSON")->required();
  sc->add_option("--fseq", scp.fseq, "Feature sequence")->required();
  sc->add_flag("--raw-range", scp.raw_range, "Do not rescale the combined reward to [0, 1]");
  sc->add_option("--out", scp.out, "Output trace CSV")->required();

  EvalSegParams esp;
  auto* es = app.add_subcommand("eval-seg", "Step discovery accuracy against annotations and random ordered steps");
  add_common(es);
  es->add_option("--manifest", esp.manifest, "Dataset manifest")->required();
  es->add_option("--steps", esp.steps, "Number of steps");
  es->add_option("--min-size", esp.min_size, "Shortest allowed segment");
  es->add_option("--solver", esp.solver, "exact | recursive | binary | brute");
  es->add_option("--seeds", esp.seeds, "Baseline seeds");
  es->add_option("--seed", esp.seed, "Run seed");
  es->add_option("--dataset", esp.dataset, "Dataset tag in the report");
  es->add_option("--out", esp.out, "Output report JSON")->required();

  EvalRewardParams erp;
  auto* er = app.add_subcommand("eval-reward", "Held-out per-step reward accuracy against a random baseline");
  add_common(er);
  er->add_option("--manifest", erp.manifest, "Dataset manifest")->required();
  er->add_option("--model", erp.model, "Reward model JSON")->required();
  er->add_option("--threshold", erp.threshold, "Binarization threshold");
  er->add_option("--seeds", erp.seeds, "Baseline seeds");
  er->add_option("--seed", erp.seed, "Run seed");
  er->add_option("--p", erp.p, "Baseline inclusion probability");
  er->add_option("--dataset", erp.dataset, "Dataset tag in the report");
  er->add_option("--method", erp.method, "Method tag in the report");
  er->add_option("--out", erp.out, "Output report JSON")->required();

  BaselineParams bp;
  auto* bl = app.add_subcommand("baseline", "Random baselines alone");
  add_common(bl);
  bl->add_option("--manifest", bp.manifest, "Dataset manifest")->required();
  bl->add_option("--kind", bp.kind, "ordered | bernoulli");
  bl->add_option("--steps", bp.steps, "Number of steps");
  bl->add_option("--min-size", bp.min_size, "Shortest segment of ordered random steps");
  bl->add_option("--p", bp.p, "Inclusion probability of the bernoulli baseline");
  bl->add_option("--seeds", bp.seeds, "Seeds");
  bl->add_option("--seed", bp.seed, "Run seed");
  bl->add_option("--split", bp.split, "train | test (default: train for ordered, test for bernoulli)");
  bl->add_option("--dataset", bp.dataset, "Dataset tag in the report");
  bl->add_option("--out", bp.out, "Output report JSON")->required();

  Pi2Params pp;
  auto* pi = app.add_subcommand("pi2-train", "Policy improvement on the synthetic door");
  add_common(pi);
  pi->add_option("--env", pp.env, "Environment (door_synth)");
  pi->add_option("--reward", pp.reward, "Reward model JSON or env_truth");
  pi->add_option("--iters", pp.iters, "Policy updates");
  pi->add_option("--samples", pp.samples, "Rollouts per iteration");
  pi->add_option("--epsilon", pp.epsilon, "KL bound per timestep (nats)");
  pi->add_option("--beta-max", pp.beta_max, "Largest temperature");
  pi->add_option("--seed", pp.seed, "Run seed");
  pi->add_option("--eval-episodes", pp.eval_episodes, "Episodes per success-rate estimate");
  pi->add_option("--exploration-std", pp.exploration_std, "Exploration torque standard deviation");
  pi->add_option("--projector-seed", pp.projector_seed, "Seed of the feature projector");
  pi->add_option("--obs-noise", pp.obs_noise, "Feature noise scale");
  pi->add_option("--success-level", pp.success_level, "Success rate reported as the crossing point");
  pi->add_option("--out", pp.out, "Learning curve CSV")->required();

  std::vector<std::string> expanded;
  try {
    expanded = expand_config_file(args);
  } catch (const ConfigFileError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  }
  std::vector<const char*> argv{"percept"};
  for (const auto& a : expanded) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::CallForVersion&) {
    out << version() << "\n";
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n";
    const CLI::App* failing = &app;
    for (const CLI::App* sub = app.get_subcommands().empty() ? nullptr : app.get_subcommands().front(); sub;
         sub = sub->get_subcommands().empty() ? nullptr : sub->get_subcommands().front())
      failing = sub;
    err << failing->help();
    return kExitUsage;
  }

  try {
    auto info = [](CLI::App* sub, const std::string& name) { return RunInfo{name, resolved_config(*sub)}; };
    if (gd->parsed()) cmd_gen_demos(demos, info(gd, "synth gen-demos"), out);
    else if (gp->parsed()) cmd_gen_piecewise(pw, info(gp, "synth gen-piecewise"), out);
    else if (seg->parsed()) cmd_segment(sp, info(seg, "segment"), out);
    else if (tr->parsed()) cmd_train(tp, info(tr, "train"), out);
    else if (sc->parsed()) cmd_score(scp, info(sc, "score"), out);
    else if (es->parsed()) cmd_eval_seg(esp, info(es, "eval-seg"), out);
    else if (er->parsed()) cmd_eval_reward(erp, info(er, "eval-reward"), out);
    else if (bl->parsed()) cmd_baseline(bp, info(bl, "baseline"), out);
    else if (pi->parsed()) cmd_pi2(pp, info(pi, "pi2-train"), out);
  } catch (const DataError& e) {
    err << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const fs::filesystem_error& e) {
    err << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const std::invalid_argument& e) {
    err << "usage error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitData;
  }
  return kExitOk;
}

int run(int argc, const char* const* argv) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return run(args, std::cout, std::cerr);
}

}  // namespace percept::cli
