#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>

#include <nlohmann/json.hpp>

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Outcome {
  int code = -1;
  std::string err;
};

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    std::random_device rd;
    dir_ = fs::temp_directory_path() / ("semlc-cli-" + std::to_string(rd()));
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  fs::path path(const std::string& name) const { return dir_ / name; }

  fs::path write_config(const std::string& name, const json& j) const {
    std::ofstream(path(name)) << j.dump(2);
    return path(name);
  }

  Outcome run(const std::string& args) const {
    const fs::path err = path("stderr.txt");
    const std::string cmd = std::string("\"") + SEMLC_CLI_PATH + "\" " + args + " > \"" + path("stdout.txt").string() +
                            "\" 2> \"" + err.string() + "\"";
    const int status = std::system(cmd.c_str());
    Outcome r;
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    r.err = slurp(err);
    return r;
  }

  static std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
  }

  static std::string first_line(const fs::path& p) {
    std::ifstream in(p);
    std::string line;
    std::getline(in, line);
    return line;
  }

  static json read_json(const fs::path& p) { return json::parse(slurp(p)); }

  json train_config(std::size_t limit = 300) const {
    return {{"seed", 3},
            {"stage", {{"type", "semlc-fixed"}}},
            {"training", {{"epochs", 1}, {"batch_size", 32}}},
            {"data",
             {{"images", std::string(SEMLC_DATA_DIR) + "/mnist5k/images-idx3-ubyte"},
              {"labels", std::string(SEMLC_DATA_DIR) + "/mnist5k/labels-idx1-ubyte"},
              {"limit", limit}}}};
  }

  std::string train(const json& cfg, const std::string& out) const {
    return "--config \"" + write_config(out + ".json", cfg).string() + "\" --out \"" + path(out).string() + "\" train";
  }

  fs::path dir_;
};

}  // namespace

TEST_F(Cli, HelpAndVersion) {
  EXPECT_EQ(run("--help").code, 0);
  EXPECT_EQ(run("--version").code, 0);
  EXPECT_NE(first_line(path("stdout.txt")).find("0.1.0"), std::string::npos);
}

TEST_F(Cli, UnknownSubcommandIsParseError) {
  const auto r = run("frobnicate");
  EXPECT_NE(r.code, 0);
  EXPECT_GE(r.code, 100);
}

TEST_F(Cli, MissingConfigIsIoError) {
  const auto r = run("--config \"" + path("absent.json").string() + "\" simulate");
  EXPECT_EQ(r.code, 19);
  EXPECT_NE(r.err.find("absent.json"), std::string::npos);
}

TEST_F(Cli, UnknownKeyIsConfigError) {
  const auto cfg = write_config("c.json", {{"profile_typo", 1}});
  const auto r = run("--config \"" + cfg.string() + "\" --out \"" + path("o").string() + "\" simulate");
  EXPECT_EQ(r.code, 18);
  EXPECT_NE(r.err.find("profile_typo"), std::string::npos);
}

TEST_F(Cli, InvalidJsonIsConfigError) {
  std::ofstream(path("bad.json")) << "{\"seed\": ";
  EXPECT_EQ(run("--config \"" + path("bad.json").string() + "\" simulate").code, 18);
}

TEST_F(Cli, CommandMismatchIsConfigError) {
  const auto cfg = write_config("c.json", {{"command", "bench"}});
  EXPECT_EQ(run("--config \"" + cfg.string() + "\" --out \"" + path("o").string() + "\" simulate").code, 18);
}

TEST_F(Cli, MissingDatasetNamesThePath) {
  auto cfg = train_config();
  cfg["data"]["images"] = path("nowhere-images").string();
  const auto r = run(train(cfg, "t"));
  EXPECT_EQ(r.code, 19);
  EXPECT_NE(r.err.find("nowhere-images"), std::string::npos);
  EXPECT_FALSE(fs::exists(path("t")));
}

TEST_F(Cli, StageAndNetworkConflict) {
  auto cfg = train_config();
  cfg["network"] = json::object();
  EXPECT_EQ(run(train(cfg, "t")).code, 18);
}

TEST_F(Cli, SeedDisagreementIsConfigError) {
  auto cfg = train_config();
  cfg["training"]["seed"] = 4;
  EXPECT_EQ(run(train(cfg, "t")).code, 18);
}

TEST_F(Cli, TrainWritesArtifactsAndReproduces) {
  const auto r = run(train(train_config(), "t"));
  ASSERT_EQ(r.code, 0) << r.err;
  for (const char* f : {"metrics.csv", "checkpoint_best.json", "checkpoint_final.json", "resolved_config.json",
                        "manifest.json"})
    EXPECT_TRUE(fs::is_regular_file(path("t") / f)) << f;
  EXPECT_EQ(first_line(path("t/metrics.csv")), "epoch,split,loss,accuracy");

  const json manifest = read_json(path("t/manifest.json"));
  EXPECT_EQ(manifest["command"], "train");
  EXPECT_EQ(manifest["config_hash"].get<std::string>().rfind("fnv1a64:", 0), 0u);
  for (const char* lib : {"semlc", "eigen", "fftw", "nlohmann_json", "cli11"})
    EXPECT_TRUE(manifest["versions"].contains(lib)) << lib;

  const json resolved = read_json(path("t/resolved_config.json"));
  EXPECT_EQ(resolved["seed"], 3);
  const auto again = run("--config \"" + path("t/resolved_config.json").string() + "\" --out \"" +
                         path("t2").string() + "\" train");
  ASSERT_EQ(again.code, 0) << again.err;
  EXPECT_EQ(slurp(path("t/metrics.csv")), slurp(path("t2/metrics.csv")));
  EXPECT_EQ(manifest["config_hash"], read_json(path("t2/manifest.json"))["config_hash"]);
}

TEST_F(Cli, SeedFlagOverridesConfig) {
  ASSERT_EQ(run("--seed 11 " + train(train_config(200), "t")).code, 0);
  EXPECT_EQ(read_json(path("t/resolved_config.json"))["seed"], 11);
}

TEST_F(Cli, AnalyzeCheckpoint) {
  ASSERT_EQ(run(train(train_config(200), "t")).code, 0);
  const auto cfg = write_config("a.json", {{"checkpoint", path("t/checkpoint_final.json").string()}});
  const auto r = run("--config \"" + cfg.string() + "\" --out \"" + path("a").string() + "\" analyze");
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(first_line(path("a/ordering.csv")), "original_index,two_opt_index");
  EXPECT_EQ(first_line(path("a/correlation.csv")), "offset,mean_cosine");
  const json report = read_json(path("a/order_report.json"));
  EXPECT_TRUE(report.is_object());

  std::ifstream ordering(path("a/ordering.csv"));
  std::string line;
  std::getline(ordering, line);
  std::size_t rows = 0;
  while (std::getline(ordering, line)) ++rows;
  EXPECT_EQ(rows, 16u);
}

TEST_F(Cli, AnalyzeRejectsCorruptCheckpoint) {
  std::ofstream(path("ck.json")) << R"({"format": "something-else"})";
  const auto r = run("--out \"" + path("a").string() + "\" analyze --checkpoint \"" + path("ck.json").string() + "\"");
  EXPECT_EQ(r.code, 14);
}

TEST_F(Cli, SimulateDefaultConverges) {
  const auto r = run("--out \"" + path("s").string() + "\" simulate");
  ASSERT_EQ(r.code, 0) << r.err;
  const json summary = read_json(path("s/summary.json"));
  EXPECT_TRUE(summary["converged"].get<bool>());
  EXPECT_TRUE(summary["stable"].get<bool>());
  EXPECT_EQ(first_line(path("s/trajectory.csv")), "step,max_abs_residual");
}

TEST_F(Cli, SimulateUnstableProfileReportsDivergence) {
  const auto cfg = write_config(
      "s.json", {{"profile", {{"kind", "free"}, {"sigma", 1.0}, {"delta", 0.0}, {"length", 4},
                              {"weights", {0.0, 0.8, 0.0, 0.8}}}},
                 {"dynamics", {{"max_steps", 20000}}},
                 {"input", "ones"}});
  const auto r = run("--config \"" + cfg.string() + "\" --out \"" + path("s").string() + "\" simulate");
  ASSERT_EQ(r.code, 0) << r.err;
  const json summary = read_json(path("s/summary.json"));
  EXPECT_FALSE(summary["converged"].get<bool>());
  EXPECT_FALSE(summary["stable"].get<bool>());
}

TEST_F(Cli, BenchSmallShape) {
  const auto cfg = write_config("b.json", {{"shapes", {{1, 4, 2, 2}}}, {"repetitions", 10}, {"warmup", 3}});
  const auto r = run("--config \"" + cfg.string() + "\" --out \"" + path("b").string() + "\" bench");
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(first_line(path("b/bench.csv")), "shape,path,median_ns,iqr_ns,ratio");
}

TEST_F(Cli, BenchUnstableProfileExitCode) {
  const auto cfg = write_config("b.json", {{"shapes", {{1, 16, 2, 2}}}, {"repetitions", 10}, {"warmup", 3},
                                           {"delta", 0.9}});
  EXPECT_EQ(run("--config \"" + cfg.string() + "\" --out \"" + path("b").string() + "\" bench").code, 12);
}
