// Drives the advsketch binary end to end: exit codes, artifacts, replay.

#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <sys/wait.h>
#include <unistd.h>

#include <json.hpp>

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Result {
  int code = -1;
  std::string output;
};

const fs::path& workdir() {
  static const fs::path d = [] {
    fs::path p = fs::temp_directory_path() / ("advsketch_cli_test_" + std::to_string(::getpid()));
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
  }();
  return d;
}

Result run(const std::string& args) {
  const fs::path log = workdir() / "last.log";
  const std::string cmd = std::string(ADVSKETCH_CLI) + " " + args + " > " + log.string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  Result r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  std::ifstream f(log);
  std::stringstream ss;
  ss << f.rdbuf();
  r.output = ss.str();
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

fs::path write(const std::string& name, const std::string& body) {
  const fs::path p = workdir() / name;
  std::ofstream(p) << body;
  return p;
}

std::string out(const std::string& name) { return (workdir() / name).string(); }

}  // namespace

TEST(Cli, AttackRunWritesArtifactsAndReplaysByteIdentically) {
  const std::string cfg = std::string(ADVSKETCH_SOURCE_DIR) + "/configs/projection_r8_n128.json";
  const auto a = run("attack run --config " + cfg + " --out " + out("a1"));
  ASSERT_EQ(a.code, 0) << a.output;
  for (const char* f : {"transcript.jsonl", "summary.csv", "certificate.json", "exploits.json", "config.json", "report.txt"})
    EXPECT_TRUE(fs::exists(workdir() / "a1" / f)) << f;
  EXPECT_EQ(slurp(workdir() / "a1" / "summary.csv").substr(0, 53), "run_id,seed,round,sigma2,rate,m_prime,score,accepted\n");

  const json certs = json::parse(slurp(workdir() / "a1" / "certificate.json"));
  ASSERT_EQ(certs.size(), 1u);
  ASSERT_FALSE(certs[0]["certificate"].is_null());
  const json ex = json::parse(slurp(workdir() / "a1" / "exploits.json"));
  EXPECT_GE(ex[0]["verification"]["exploit_count"].get<int>(), 1);

  // Replay from the emitted config, with a different thread count.
  const auto b = run("attack run --config " + out("a1") + "/config.json --out " + out("a2") + " --threads 3");
  ASSERT_EQ(b.code, 0) << b.output;
  EXPECT_EQ(slurp(workdir() / "a1" / "summary.csv"), slurp(workdir() / "a2" / "summary.csv"));
  EXPECT_EQ(slurp(workdir() / "a1" / "transcript.jsonl"), slurp(workdir() / "a2" / "transcript.jsonl"));

  const auto v = run("attack verify --config " + out("a1") + "/config.json --certificate " + out("a1") + "/certificate.json --out " + out("a3"));
  EXPECT_EQ(v.code, 0) << v.output;
  EXPECT_EQ(json::parse(slurp(workdir() / "a1" / "exploits.json")), json::parse(slurp(workdir() / "a3" / "exploits.json")));
}

TEST(Cli, MalformedConfigNamesTheField) {
  const auto p = write("bad.json", R"({"attack": {"n": 128, "r": 8, "grid": {"kind": "spiral"}}})");
  const auto r = run("attack run --config " + p.string() + " --out " + out("bad"));
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.output.find("$.attack.grid.kind"), std::string::npos) << r.output;

  const auto q = write("bad2.json", R"({"attack": {"n": 128, "r": 8, "m": 10}})");
  const auto s = run("attack run --config " + q.string() + " --out " + out("bad"));
  EXPECT_EQ(s.code, 1);
  EXPECT_NE(s.output.find("$.attack.m"), std::string::npos) << s.output;

  const auto u = write("bad3.json", R"({"attack": {"n": 128, "r": 8, "colour": 1}})");
  const auto t = run("attack run --config " + u.string() + " --out " + out("bad"));
  EXPECT_EQ(t.code, 1);
  EXPECT_NE(t.output.find("colour"), std::string::npos) << t.output;

  const auto w = write("bad4.json", "{ not json");
  EXPECT_EQ(run("stats check pmf-ratio --config " + w.string()).code, 1);
}

TEST(Cli, PmfRatioCheck) {
  const auto r = run("stats check pmf-ratio --n 10 --C 2 --sigma2 10000 --out " + out("pmf"));
  ASSERT_EQ(r.code, 0) << r.output;
  const json j = json::parse(slurp(workdir() / "pmf" / "pmf-ratio.json"));
  EXPECT_LE(j["max_dev_1d"].get<double>(), 0.01);
  EXPECT_TRUE(j["passed"].get<bool>());
}

TEST(Cli, ThresholdFailureExitsTwo) {
  const auto p = write("weak.json",
                       R"({"harddist": {"family": "opnorm-alpha", "params": {"spikes": [0.01], "calibration_samples": 50}, "count": 5}})");
  const auto r = run("harddist gap --config " + p.string() + " --out " + out("weak"));
  EXPECT_EQ(r.code, 2) << r.output;
}

TEST(Cli, EnvironmentOverridesOutputDirectory) {
  const std::string dir = out("from_env");
  ::setenv("ADVSKETCH_OUT", dir.c_str(), 1);
  const auto r = run("stats check normalizer");
  ::unsetenv("ADVSKETCH_OUT");
  EXPECT_EQ(r.code, 0) << r.output;
  EXPECT_TRUE(fs::exists(fs::path(dir) / "normalizer.json"));
}

TEST(Cli, HarddistGenAndSketchInfo) {
  const auto g = run("harddist gen --family lp-small --count 2 --out " + out("hd"));
  ASSERT_EQ(g.code, 0) << g.output;
  std::ifstream f(workdir() / "hd" / "instances.jsonl");
  std::string line;
  int lines = 0;
  while (std::getline(f, line)) {
    const json j = json::parse(line);
    EXPECT_TRUE(j["gap_event"]["event_holds"].get<bool>());
    ++lines;
  }
  EXPECT_EQ(lines, 4);

  ASSERT_EQ(run("sketch build --family sign --n 64 --r 4 --out " + out("sk")).code, 0);
  const auto i = run("sketch info " + out("sk") + "/sketch.json");
  ASSERT_EQ(i.code, 0) << i.output;
  EXPECT_NE(i.output.find("certified_kernel_length"), std::string::npos);
}

TEST(Cli, UnknownSubcommandIsAnError) { EXPECT_NE(run("frobnicate").code, 0); }
