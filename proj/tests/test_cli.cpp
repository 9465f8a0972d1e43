#include "fracmv/runner.hpp"

#include <gtest/gtest.h>

#include <sys/wait.h>
#include <unistd.h>

#include <atomic>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using fracmv::Json;

namespace {

const std::string kCli = FRACMV_CLI_PATH;
const fs::path kConfigs = FRACMV_CONFIG_DIR;

struct Result {
  int code = -1;
  std::string out;
  std::string err;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

class ScratchDir {
 public:
  ScratchDir() {
    static std::atomic<int> counter{0};
    path_ = fs::temp_directory_path() /
            ("fracmv_cli_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~ScratchDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  const fs::path& path() const { return path_; }

  fs::path write_config(const std::string& name, const Json& j) const {
    const auto p = path_ / name;
    std::ofstream(p) << j.dump(2);
    return p;
  }

 private:
  fs::path path_;
};

std::string quote(const std::string& s) { return "'" + s + "'"; }

Result run_cli(const std::vector<std::string>& args, const fs::path& scratch) {
  std::string cmd = quote(kCli);
  for (const auto& a : args) cmd += " " + quote(a);
  const auto out = scratch / "stdout.txt";
  const auto err = scratch / "stderr.txt";
  cmd += " >" + quote(out.string()) + " 2>" + quote(err.string());
  const int status = std::system(cmd.c_str());
  Result r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = slurp(out);
  r.err = slurp(err);
  fs::remove(out);
  fs::remove(err);
  return r;
}

Json load_config(const std::string& name) { return Json::parse(slurp(kConfigs / name)); }

std::map<std::string, std::string> read_tree(const fs::path& dir) {
  std::map<std::string, std::string> files;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (e.is_regular_file()) files[fs::relative(e.path(), dir).string()] = slurp(e.path());
  }
  return files;
}

// Small versions of the shipped configs, one per command.
std::vector<std::pair<std::string, Json>> small_runs() {
  Json sample = load_config("sample_fbm.json");
  sample["options"]["n_paths"] = 200;
  sample["options"]["write_paths"] = true;

  Json solve = load_config("solve.json");
  solve["N_particles"] = 200;
  solve["n_steps"] = 64;
  solve["options"]["write_paths"] = true;

  Json clt = load_config("clt.json");
  clt["N_particles"] = 200;
  clt["n_steps"] = 64;

  Json ldp = load_config("ldp.json");
  ldp["options"]["n_paths"] = 20000;
  ldp["options"]["batch"] = 1000;
  ldp["options"]["rate_steps"] = 64;

  Json mdp = load_config("mdp.json");
  mdp["options"]["n_paths"] = 20000;
  mdp["options"]["batch"] = 1000;
  mdp["options"]["rate_steps"] = 64;

  return {{"sample-fbm", sample},
          {"solve", solve},
          {"skeleton", load_config("skeleton.json")},
          {"rate", load_config("rate_endpoint.json")},
          {"clt", clt},
          {"ldp", ldp},
          {"mdp", mdp}};
}

}  // namespace

TEST(Configs, ShippedConfigsParseAndValidate) {
  int seen = 0;
  for (const auto& e : fs::directory_iterator(kConfigs)) {
    if (e.path().extension() != ".json") continue;
    SCOPED_TRACE(e.path().string());
    const auto cfg = fracmv::parse_config(Json::parse(slurp(e.path())));
    EXPECT_NO_THROW(fracmv::validate(cfg));
    ++seen;
  }
  EXPECT_GE(seen, 7);
}

TEST(Configs, CanonicalFormRoundTrips) {
  const auto cfg = fracmv::parse_config(load_config("clt.json"));
  const Json j = fracmv::to_json(cfg);
  EXPECT_EQ(fracmv::to_json(fracmv::parse_config(j)), j);
}

TEST(Cli, RatePureNoiseMatchesClosedForm) {
  ScratchDir dir;
  const auto cfg = dir.write_config("rate.json", load_config("rate_endpoint.json"));
  const auto r = run_cli({"rate", "--config", cfg.string(), "--out", (dir.path() / "out").string()}, dir.path());
  ASSERT_EQ(r.code, 0) << r.err;
  const Json rep = Json::parse(slurp(dir.path() / "out" / "rate.json"));
  // a^2 / (2 T^{2H}) with a = 1, T = 1
  EXPECT_NEAR(rep["value"].get<double>(), 0.5, 0.5 * 0.02);
  EXPECT_EQ(rep["command"], "rate");
  EXPECT_TRUE(rep.contains("input_hash"));
  const Json listing = Json::parse(r.out);
  EXPECT_EQ(listing["command"], "rate");
  ASSERT_EQ(listing["artifacts"].size(), 1u);
}

TEST(Cli, InvalidHurstExitsWithUsageError) {
  ScratchDir dir;
  Json j = load_config("solve.json");
  j["H"] = 0.5;
  const auto cfg = dir.write_config("bad.json", j);
  const auto r = run_cli({"solve", "--config", cfg.string(), "--out", (dir.path() / "out").string()}, dir.path());
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("H"), std::string::npos) << r.err;
  EXPECT_FALSE(fs::exists(dir.path() / "out"));
}

TEST(Cli, UnknownFieldExitsWithUsageError) {
  ScratchDir dir;
  Json j = load_config("solve.json");
  j["hurst"] = 0.7;
  const auto cfg = dir.write_config("bad.json", j);
  const auto r = run_cli({"solve", "--config", cfg.string()}, dir.path());
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("hurst"), std::string::npos) << r.err;
}

TEST(Cli, UnknownOptionExitsWithUsageError) {
  ScratchDir dir;
  Json j = load_config("rate_endpoint.json");
  j["options"]["n_paths"] = 10;
  const auto cfg = dir.write_config("bad.json", j);
  const auto r = run_cli({"rate", "--config", cfg.string(), "--out", (dir.path() / "out").string()}, dir.path());
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("options.n_paths"), std::string::npos) << r.err;
}

TEST(Cli, MalformedJsonExitsWithUsageError) {
  ScratchDir dir;
  const auto p = dir.path() / "broken.json";
  std::ofstream(p) << "{\"H\": 0.7,";
  const auto r = run_cli({"rate", "--config", p.string()}, dir.path());
  EXPECT_EQ(r.code, 2);
}

TEST(Cli, UnknownCommandExitsWithUsageError) {
  ScratchDir dir;
  const auto r = run_cli({"integrate", "--config", (kConfigs / "rate_endpoint.json").string()}, dir.path());
  EXPECT_EQ(r.code, 2);
}

TEST(Cli, MissingConfigExitsWithIoError) {
  ScratchDir dir;
  const auto r = run_cli({"rate", "--config", (dir.path() / "nope.json").string()}, dir.path());
  EXPECT_EQ(r.code, 1);
}

TEST(Cli, DivergenceExitsWithNumericalError) {
  ScratchDir dir;
  Json j = load_config("solve.json");
  j["model"]["beta"] = 1e200;
  j["N_particles"] = 4;
  j["n_steps"] = 16;
  const auto cfg = dir.write_config("div.json", j);
  const auto r = run_cli({"solve", "--config", cfg.string(), "--out", (dir.path() / "out").string()}, dir.path());
  EXPECT_EQ(r.code, 3);
  EXPECT_NE(r.err.find("step"), std::string::npos) << r.err;
}

TEST(Cli, ArtifactsAreByteIdenticalAcrossRunsAndWorkers) {
  ScratchDir dir;
  for (const auto& [command, j] : small_runs()) {
    SCOPED_TRACE(command);
    const auto cfg = dir.write_config(command + ".json", j);
    std::vector<std::map<std::string, std::string>> trees;
    for (const char* workers : {"1", "1", "2", "3"}) {
      const auto out = dir.path() / (command + "_w" + workers + "_" + std::to_string(trees.size()));
      const auto r = run_cli({command, "--config", cfg.string(), "--out", out.string(), "--workers", workers},
                             dir.path());
      ASSERT_EQ(r.code, 0) << r.err;
      trees.push_back(read_tree(out));
    }
    ASSERT_FALSE(trees[0].empty());
    for (std::size_t i = 1; i < trees.size(); ++i) EXPECT_EQ(trees[i], trees[0]) << "run " << i;
  }
}

TEST(Cli, SeedOverrideChangesRandomArtifacts) {
  ScratchDir dir;
  Json j = load_config("clt.json");
  j["N_particles"] = 100;
  j["n_steps"] = 32;
  const auto cfg = dir.write_config("clt.json", j);
  const auto a = dir.path() / "a";
  const auto b = dir.path() / "b";
  ASSERT_EQ(run_cli({"clt", "--config", cfg.string(), "--out", a.string()}, dir.path()).code, 0);
  ASSERT_EQ(run_cli({"clt", "--config", cfg.string(), "--out", b.string(), "--seed", "99"}, dir.path()).code, 0);
  EXPECT_NE(slurp(a / "clt.csv"), slurp(b / "clt.csv"));
  const Json rep = Json::parse(slurp(b / "clt.json"));
  EXPECT_EQ(rep["config"]["seed"], 99);
}

TEST(Cli, EmbeddedConfigReparsesToSameValue) {
  ScratchDir dir;
  for (const auto& [command, j] : small_runs()) {
    SCOPED_TRACE(command);
    const auto cfg = dir.write_config(command + ".json", j);
    const auto out = dir.path() / command;
    ASSERT_EQ(run_cli({command, "--config", cfg.string(), "--out", out.string()}, dir.path()).code, 0);
    const auto expected = fracmv::to_json(fracmv::parse_config(j));
    int checked = 0;
    for (const auto& [name, body] : read_tree(out)) {
      if (name.ends_with(".csv")) {
        std::istringstream in(body);
        std::string line;
        std::string hash;
        Json embedded;
        while (std::getline(in, line) && line.starts_with("#")) {
          if (line.starts_with("# config: ")) embedded = Json::parse(line.substr(10));
          if (line.starts_with("# input_hash: ")) hash = line.substr(14);
        }
        ASSERT_FALSE(embedded.is_null()) << name;
        EXPECT_EQ(fracmv::to_json(fracmv::parse_config(embedded)), expected) << name;
        EXPECT_EQ(hash, fracmv::io::git_blob_sha1(expected.dump())) << name;
        ++checked;
      } else if (name.ends_with(".json")) {
        const Json rep = Json::parse(body);
        EXPECT_EQ(rep["command"], command);
        EXPECT_EQ(fracmv::to_json(fracmv::parse_config(rep["config"])), expected) << name;
        ++checked;
      }
    }
    EXPECT_GT(checked, 0);
  }
}

TEST(Cli, ArtifactsStayInsideOutputDirectory) {
  ScratchDir dir;
  const auto cfg = dir.write_config("solve.json", small_runs()[1].second);
  const auto before = read_tree(dir.path());
  const auto out = dir.path() / "nested" / "out";
  const auto r = run_cli({"solve", "--config", cfg.string(), "--out", out.string()}, dir.path());
  ASSERT_EQ(r.code, 0) << r.err;
  for (const auto& [name, body] : read_tree(dir.path())) {
    if (before.count(name)) continue;
    EXPECT_TRUE(name.starts_with("nested/out/")) << name;
  }
  const Json listing = Json::parse(r.out);
  for (const auto& p : listing["artifacts"]) {
    EXPECT_EQ(fs::path(p.get<std::string>()).parent_path(), out);
  }
}

TEST(Runner, InProcessMatchesCli) {
  ScratchDir dir;
  const Json j = small_runs()[4].second;
  const auto cfg_path = dir.write_config("clt.json", j);
  const auto cli_out = dir.path() / "cli";
  ASSERT_EQ(run_cli({"clt", "--config", cfg_path.string(), "--out", cli_out.string()}, dir.path()).code, 0);

  auto cfg = fracmv::parse_config(j);
  cfg.output_dir = (dir.path() / "lib").string();
  const auto res = fracmv::run("clt", cfg);
  EXPECT_EQ(res.artifacts.size(), 2u);
  EXPECT_EQ(read_tree(dir.path() / "lib"), read_tree(cli_out));
  EXPECT_TRUE(res.summary.contains("slope"));
}

TEST(Runner, RejectsUnknownCommand) {
  auto cfg = fracmv::parse_config(load_config("rate_endpoint.json"));
  EXPECT_THROW(fracmv::run("plot", cfg), fracmv::usage_error);
  EXPECT_EQ(fracmv::commands().size(), 7u);
}

TEST(Runner, SolveNeedsThreePositiveEps) {
  ScratchDir dir;
  auto cfg = fracmv::parse_config(load_config("solve.json"));
  cfg.output_dir = dir.path().string();
  cfg.eps_list = {0.2, 0.1, 0.0};
  EXPECT_THROW(fracmv::run("solve", cfg), fracmv::usage_error);
}

TEST(Runner, TailReportNamesSmallestReliableEps) {
  ScratchDir dir;
  auto cfg = fracmv::parse_config(small_runs()[5].second);
  cfg.output_dir = dir.path().string();
  fracmv::run("ldp", cfg);
  const Json rep = Json::parse(slurp(dir.path() / "ldp.json"));
  ASSERT_TRUE(rep.contains("smallest_reliable"));
}
