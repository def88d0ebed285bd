#include <doctest.h>

#include <cstdlib>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "percept/cli.hpp"
#include "percept/feature_io.hpp"
#include "test_util.hpp"

using percept::testing::TempDir;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct Result {
  int code = 0;
  std::string out;
  std::string err;
};

Result run(const std::vector<std::string>& args) {
  std::ostringstream out;
  std::ostringstream err;
  const int code = percept::cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

json read_json(const fs::path& p) { return json::parse(slurp(p)); }

}  // namespace

TEST_CASE("usage errors") {
  const auto none = run({});
  CHECK(none.code == percept::cli::kExitUsage);
  CHECK(none.err.find("segment") != std::string::npos);

  const auto unknown = run({"segment", "--bogus", "1"});
  CHECK(unknown.code == percept::cli::kExitUsage);
  CHECK(unknown.err.find("--manifest") != std::string::npos);

  CHECK(run({"nonsense"}).code == percept::cli::kExitUsage);
  CHECK(run({"segment", "--manifest", "m.json", "--out", "x.json", "--solver", "greedy"}).code != 0);
}

TEST_CASE("help and version") {
  const auto help = run({"--help"});
  CHECK(help.code == 0);
  CHECK(help.out.find("pi2-train") != std::string::npos);
  CHECK(run({"train", "--help"}).code == 0);
  const auto v = run({"--version"});
  CHECK(v.code == 0);
  CHECK(v.out == percept::cli::version() + "\n");
}

TEST_CASE("missing files are data errors naming the path") {
  TempDir dir;
  const auto missing = (dir.path() / "nowhere.json").string();
  const auto r = run({"segment", "--manifest", missing, "--out", (dir.path() / "s.json").string()});
  CHECK(r.code == percept::cli::kExitData);
  CHECK(r.err.find("nowhere.json") != std::string::npos);

  const auto m = run({"pi2-train", "--reward", missing, "--iters", "1", "--out", (dir.path() / "c.csv").string()});
  CHECK(m.code == percept::cli::kExitData);
  CHECK(m.err.find("nowhere.json") != std::string::npos);
}

TEST_CASE("segment recovers generated boundaries at high snr") {
  TempDir dir;
  const auto data = dir.path() / "pw";
  REQUIRE(run({"synth", "gen-piecewise", "--n", "5", "--t", "80", "--d", "16", "--steps", "3", "--snr", "100",
               "--seed", "3", "--out-dir", data.string()})
              .code == 0);
  const auto splits = dir.path() / "splits.json";
  REQUIRE(run({"segment", "--manifest", (data / "manifest.json").string(), "--steps", "3", "--min-size", "13",
               "--out", splits.string()})
              .code == 0);
  const auto list = read_json(splits);
  REQUIRE(list.size() == 5);
  for (const auto& entry : list) {
    const auto truth = percept::load_annotation(data / (entry["name"].get<std::string>() + ".json"));
    CHECK(entry["boundaries"].get<std::vector<std::size_t>>() == truth.boundaries);
  }
  const auto snapshot = read_json(dir.path() / "splits.run_config.json");
  CHECK(snapshot["command"] == "segment");
  CHECK(snapshot["config"]["min-size"] == 13);
}

TEST_CASE("outputs embed version and resolved config and are reproducible") {
  TempDir dir;
  const auto data = dir.path() / "pw";
  REQUIRE(run({"synth", "gen-piecewise", "--n", "4", "--t", "40", "--d", "8", "--steps", "2", "--snr", "3",
               "--out-dir", data.string()})
              .code == 0);
  const auto manifest = (data / "manifest.json").string();
  auto eval = [&](const std::string& name) {
    const auto path = dir.path() / name;
    REQUIRE(run({"eval-seg", "--manifest", manifest, "--steps", "2", "--seeds", "5", "--seed", "9", "--out",
                 path.string()})
                .code == 0);
    return path;
  };
  const auto a = eval("a.json");
  const auto b = eval("b.json");
  // Only the recorded output path differs.
  auto ja = read_json(a);
  auto jb = read_json(b);
  CHECK(ja["meta"]["config"]["out"] != jb["meta"]["config"]["out"]);
  ja["meta"]["config"].erase("out");
  jb["meta"]["config"].erase("out");
  CHECK(ja.dump() == jb.dump());
  const auto report = read_json(a);
  CHECK(report["meta"]["version"] == percept::cli::version());
  CHECK(report["meta"]["config"]["seed"] == 9);
  CHECK(report["meta"]["config"]["seeds"] == 5);
  CHECK(report["meta"]["config"]["solver"] == "exact");

  const auto p = dir.path() / "bl.json";
  REQUIRE(run({"baseline", "--manifest", manifest, "--steps", "2", "--seeds", "5", "--out", p.string()}).code == 0);
  CHECK(read_json(p)["meta"]["command"] == "baseline");
}

TEST_CASE("config file values yield to command-line flags") {
  TempDir dir;
  const auto data = dir.path() / "pw";
  const auto cfg = dir.path() / "cfg.json";
  std::ofstream(cfg) << R"({"n": 2, "t": 30, "d": 4, "steps": 2, "snr": 5.0, "seed": 1})";
  REQUIRE(run({"synth", "gen-piecewise", "--config", cfg.string(), "--n", "3", "--out-dir", data.string()}).code ==
          0);
  const auto snapshot = read_json(data / "run_config.json");
  CHECK(snapshot["config"]["n"] == 3);
  CHECK(snapshot["config"]["t"] == 30);
  CHECK(snapshot["config"]["d"] == 4);
  CHECK(read_json(data / "manifest.json").size() == 3);
  CHECK(percept::load_fseq(data / "piecewise_000.fseq").length() == 30);

  std::ofstream(dir.path() / "bad.json") << "[1, 2";
  CHECK(run({"synth", "gen-piecewise", "--config", (dir.path() / "bad.json").string(), "--out-dir",
             data.string()})
            .code == percept::cli::kExitUsage);
  std::ofstream(dir.path() / "typo.json") << R"({"snrr": 2})";
  CHECK(run({"synth", "gen-piecewise", "--config", (dir.path() / "typo.json").string(), "--out-dir",
             data.string()})
            .code == percept::cli::kExitUsage);
}

TEST_CASE("reward pipeline through the command line") {
  TempDir dir;
  const auto data = dir.path() / "door";
  REQUIRE(run({"synth", "gen-demos", "--n", "4", "--n-test", "2", "--dims", "64", "--seed", "2", "--out-dir",
               data.string()})
              .code == 0);
  const auto manifest = (data / "manifest.json").string();
  const auto model = (dir.path() / "model.json").string();
  const auto loss = dir.path() / "loss.csv";
  REQUIRE(run({"train", "--manifest", manifest, "--method", "linear", "--epochs", "20", "--std-floor", "0.02",
               "--loss-log", loss.string(), "--out", model})
              .code == 0);
  CHECK(read_json(model)["meta"]["training"]["n_sequences"] == 4);
  CHECK(slurp(loss).rfind("# percept ", 0) == 0);

  const auto trace = dir.path() / "trace.csv";
  REQUIRE(run({"score", "--model", model, "--fseq", (data / "demo_004.fseq").string(), "--out", trace.string()})
              .code == 0);
  std::istringstream lines(slurp(trace));
  std::string header;
  std::string columns;
  std::getline(lines, header);
  std::getline(lines, columns);
  CHECK(header.rfind("# percept ", 0) == 0);
  CHECK(columns == "frame,step_1,step_2,step_3,combined");
  int rows = 0;
  for (std::string l; std::getline(lines, l);) ++rows;
  CHECK(rows == 60);

  const auto report = dir.path() / "reward.json";
  REQUIRE(run({"eval-reward", "--manifest", manifest, "--model", model, "--seeds", "5", "--out", report.string()})
              .code == 0);
  CHECK(read_json(report)["reports"].size() == 2);

  // A model of the wrong width is rejected as a data error.
  const auto other = dir.path() / "other";
  REQUIRE(run({"synth", "gen-demos", "--n", "2", "--n-test", "1", "--dims", "32", "--out-dir", other.string()})
              .code == 0);
  CHECK(run({"score", "--model", model, "--fseq", (other / "demo_000.fseq").string(), "--out",
             (dir.path() / "x.csv").string()})
            .code == percept::cli::kExitData);
}

TEST_CASE("pi2-train writes a curve and summary") {
  TempDir dir;
  const auto curve = dir.path() / "curve.csv";
  REQUIRE(run({"pi2-train", "--reward", "env_truth", "--iters", "2", "--eval-episodes", "5", "--out",
               curve.string()})
              .code == 0);
  const auto text = slurp(curve);
  CHECK(text.find("iteration,mean_reward,success_rate\n0,") != std::string::npos);
  const auto summary = read_json(dir.path() / "curve_summary.json");
  CHECK(summary["max_kl_per_iteration"].size() == 3);
  for (const auto& kl : summary["max_kl_per_iteration"]) CHECK(kl.get<double>() <= 1.0 + 1e-6);
  CHECK(run({"pi2-train", "--env", "cartpole", "--out", curve.string()}).code == percept::cli::kExitUsage);
}

TEST_CASE("installed binary exit codes") {
  const std::string exe = PERCEPT_CLI_PATH;
  CHECK(WEXITSTATUS(std::system((exe + " > /dev/null 2>&1").c_str())) == 1);
  CHECK(WEXITSTATUS(std::system((exe + " --help > /dev/null 2>&1").c_str())) == 0);
  CHECK(WEXITSTATUS(std::system((exe + " score --model /nonexistent.json --fseq /nonexistent.fseq --out /tmp/x.csv"
                                        " > /dev/null 2>&1")
                                    .c_str())) == 2);
}
