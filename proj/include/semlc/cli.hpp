#pragma once

// Command-line front end: train, analyze, simulate and bench subcommands.
//
// Every run writes its outputs, the fully resolved config and a manifest
// (config hash, library versions, wall time) into the --out directory.
// Errors exit with 10 + the ErrorKind index; usage errors use CLI11's codes.

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <Eigen/Core>
#include <fftw3.h>
#include <nlohmann/json.hpp>

#include "semlc/analysis.hpp"
#include "semlc/bench.hpp"
#include "semlc/dynamics.hpp"
#include "semlc/error.hpp"
#include "semlc/json_config.hpp"
#include "semlc/net/train.hpp"
#include "semlc/operator.hpp"
#include "semlc/profile.hpp"

namespace semlc::cli {

inline constexpr const char* kVersion = "0.1.0";

inline int exit_code(ErrorKind kind) { return 10 + static_cast<int>(kind); }

/// 64-bit FNV-1a.
inline std::uint64_t fnv1a(std::string_view text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string hex(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

struct Globals {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::filesystem::path out = "semlc-out";
};

inline nlohmann::json read_json(const std::filesystem::path& path) {
  require(std::filesystem::is_regular_file(path), ErrorKind::io, "cannot open '" + path.string() + "'");
  std::ifstream in(path);
  require(static_cast<bool>(in), ErrorKind::io, "cannot open '" + path.string() + "'");
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    fail(ErrorKind::config, "'" + path.string() + "' is not valid JSON: " + e.what());
  }
}

inline nlohmann::json read_checkpoint(const std::filesystem::path& path) {
  try {
    return read_json(path);
  } catch (const Error& e) {
    if (e.kind() != ErrorKind::config) throw;
    fail(ErrorKind::data_format, e.what());
  }
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
  require(static_cast<bool>(out), ErrorKind::io, "cannot write '" + path.string() + "'");
}

inline void write_json(const std::filesystem::path& path, const nlohmann::json& j) { write_text(path, j.dump(2) + "\n"); }

inline nlohmann::json library_versions() {
  return {{"semlc", kVersion},
          {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
                        std::to_string(EIGEN_MINOR_VERSION)},
          {"fftw", std::string(fftw_version)},
          {"nlohmann_json", std::to_string(NLOHMANN_JSON_VERSION_MAJOR) + "." +
                                std::to_string(NLOHMANN_JSON_VERSION_MINOR) + "." +
                                std::to_string(NLOHMANN_JSON_VERSION_PATCH)},
          {"cli11", CLI11_VERSION}};
}

/// Config file contents (empty object when no --config was given) after
/// checking that a "command" key, if present, names this subcommand.
inline nlohmann::json load_config(const Globals& g, const std::string& command) {
  nlohmann::json j = g.config_path.empty() ? nlohmann::json::object() : read_json(g.config_path);
  require(j.is_object(), ErrorKind::config, "config must be a JSON object");
  if (j.contains("command"))
    require(j["command"] == command, ErrorKind::config,
            "config is for '" + j["command"].dump() + "', not '" + command + "'");
  return j;
}

/// Seed precedence: --seed, then the config's "seed", then 0.
inline std::uint64_t resolve_seed(const Globals& g, StrictObject& o) {
  const auto from_config = o.get<std::uint64_t>("seed", 0);
  return g.seed.value_or(from_config);
}

/// Writes the resolved config and the run manifest.
inline void finish_run(const Globals& g, const std::string& command, nlohmann::json resolved,
                       std::chrono::steady_clock::time_point start, const nlohmann::json& artifacts) {
  resolved["command"] = command;
  write_json(g.out / "resolved_config.json", resolved);
  const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  write_json(g.out / "manifest.json", {{"command", command},
                                       {"config_hash", "fnv1a64:" + hex(fnv1a(resolved.dump()))},
                                       {"versions", library_versions()},
                                       {"wall_time_s", wall},
                                       {"artifacts", artifacts}});
}

// --- train -----------------------------------------------------------------

struct DataSpec {
  std::string format = "idx";
  std::string images, labels;
  std::vector<std::string> batches;
  std::size_t limit = 0;
};

inline DataSpec data_spec_from_json(const nlohmann::json& j) {
  StrictObject o(j, "data");
  DataSpec d;
  d.format = o.get<std::string>("format", d.format);
  d.limit = o.get<std::size_t>("limit", 0);
  if (d.format == "idx") {
    d.images = o.required<std::string>("images");
    d.labels = o.required<std::string>("labels");
  } else if (d.format == "cifar10") {
    d.batches = o.required<std::vector<std::string>>("batches");
    require(!d.batches.empty(), ErrorKind::config, "data.batches must not be empty");
  } else {
    fail(ErrorKind::config, "data.format must be 'idx' or 'cifar10', got '" + d.format + "'");
  }
  o.finish();
  return d;
}

inline nlohmann::json to_json(const DataSpec& d) {
  nlohmann::json j{{"format", d.format}, {"limit", d.limit}};
  if (d.format == "idx") {
    j["images"] = d.images;
    j["labels"] = d.labels;
  } else {
    j["batches"] = d.batches;
  }
  return j;
}

inline net::Dataset load_dataset(const DataSpec& d) {
  std::vector<std::string> paths = d.format == "idx" ? std::vector<std::string>{d.images, d.labels} : d.batches;
  for (const auto& p : paths)
    require(std::filesystem::is_regular_file(p), ErrorKind::io, "dataset file '" + p + "' does not exist");
  if (d.format == "idx") return net::load_idx(d.images, d.labels, d.limit);
  return net::load_cifar10({d.batches.begin(), d.batches.end()}, d.limit);
}

inline int run_train(const Globals& g, const std::optional<std::string>& stage_flag, std::ostream& log) {
  const auto start = std::chrono::steady_clock::now();
  const nlohmann::json j = load_config(g, "train");
  StrictObject o(j, "config");
  o.get<std::string>("command", "train");
  const std::uint64_t seed = resolve_seed(g, o);

  net::NetworkSpec spec = o.has("network") ? net::network_spec_from_json(o.child("network"))
                                           : net::NetworkSpec::shallow(16);
  if (o.has("stage")) {
    require(!o.has("network"), ErrorKind::config, "give either 'stage' or 'network', not both");
    spec.conv.front().stage = net::stage_from_json(o.child("stage"), "config.stage");
  }
  if (stage_flag) spec.conv.front().stage.type = *stage_flag;
  spec = net::network_spec_from_json(net::to_json(spec));  // re-validates flag overrides

  net::TrainConfig cfg = o.has("training") ? net::train_config_from_json(o.child("training")) : net::TrainConfig{};
  if (o.has("training") && o.child("training").contains("seed") && j.contains("seed"))
    require(cfg.seed == j["seed"].get<std::uint64_t>(), ErrorKind::config,
            "config.seed and config.training.seed disagree");
  cfg.seed = seed;
  require(o.has("data"), ErrorKind::config, "config.data is required for train");
  const DataSpec data_spec = data_spec_from_json(o.child("data"));
  o.finish();

  const net::Dataset data = load_dataset(data_spec);
  std::filesystem::create_directories(g.out);
  log << "training on " << data.size() << " samples, stage " << spec.conv.front().stage.type << ", seed " << seed
      << "\n";
  const auto result = net::train(spec, data, cfg, [&](const net::MetricRow& r) {
    log << "epoch " << r.epoch << " " << r.split << " loss " << r.loss << " accuracy " << r.accuracy << "\n";
  });

  write_text(g.out / "metrics.csv", net::metrics_csv(result.history));
  write_json(g.out / "checkpoint_best.json", result.best_checkpoint);
  write_json(g.out / "checkpoint_final.json", result.final_checkpoint);
  finish_run(g, "train",
             {{"seed", seed}, {"network", net::to_json(spec)}, {"training", net::to_json(cfg)},
              {"data", to_json(data_spec)}},
             start,
             {{"metrics", "metrics.csv"},
              {"checkpoint_best", "checkpoint_best.json"},
              {"checkpoint_final", "checkpoint_final.json"},
              {"best_epoch", result.best_epoch},
              {"best_val_accuracy", result.best_val_accuracy}});
  return 0;
}

// --- analyze ---------------------------------------------------------------

inline FilterBank first_layer_bank(net::Network& net) {
  auto& conv = net.first_conv();
  return {conv.out_channels(), conv.in_channels() * conv.kernel() * conv.kernel(), conv.weight().value,
          conv.bias().value};
}

inline int run_analyze(const Globals& g, const std::optional<std::string>& checkpoint_flag,
                       const std::optional<double>& threshold_flag, std::ostream& log) {
  const auto start = std::chrono::steady_clock::now();
  const nlohmann::json j = load_config(g, "analyze");
  StrictObject o(j, "config");
  o.get<std::string>("command", "analyze");
  const std::uint64_t seed = resolve_seed(g, o);
  std::string checkpoint = o.get<std::string>("checkpoint", "");
  double threshold = o.get<double>("threshold", 0.003);
  o.finish();
  if (checkpoint_flag) checkpoint = *checkpoint_flag;
  if (threshold_flag) threshold = *threshold_flag;
  require(!checkpoint.empty(), ErrorKind::config, "analyze needs a checkpoint (--checkpoint or config.checkpoint)");
  require(threshold >= 0.0, ErrorKind::config, "threshold must be non-negative");

  std::filesystem::create_directories(g.out);
  net::Network net = net::load_network(read_checkpoint(checkpoint));
  const FilterBank bank = first_layer_bank(net);
  const OrderReport report = analyze(bank, threshold);

  write_json(g.out / "order_report.json", to_json(report));
  std::string ordering = "original_index,two_opt_index\n";
  const auto positions = report.positions();
  for (std::size_t i = 0; i < positions.size(); ++i)
    ordering += std::to_string(i) + "," + std::to_string(positions[i]) + "\n";
  write_text(g.out / "ordering.csv", ordering);
  std::string correlation = "offset,mean_cosine\n";
  char line[64];
  for (std::size_t i = 0; i < report.correlation.size(); ++i) {
    std::snprintf(line, sizeof line, "%ld,%.17g\n", offset_of(i, report.correlation.size()), report.correlation[i]);
    correlation += line;
  }
  write_text(g.out / "correlation.csv", correlation);

  log << bank.size() << " filters: all-pair MSD " << report.metric.all_pair_msd << ", adjacent MSD "
      << report.metric.adjacent_pair_msd << ", reduction " << report.metric.percent_reduction << "%\n";
  finish_run(g, "analyze", {{"seed", seed}, {"checkpoint", checkpoint}, {"threshold", threshold}}, start,
             {{"report", "order_report.json"}, {"ordering", "ordering.csv"}, {"correlation", "correlation.csv"}});
  return 0;
}

// --- simulate --------------------------------------------------------------

inline int run_simulate(const Globals& g, std::ostream& log) {
  const auto start = std::chrono::steady_clock::now();
  const nlohmann::json j = load_config(g, "simulate");
  StrictObject o(j, "config");
  o.get<std::string>("command", "simulate");
  const std::uint64_t seed = resolve_seed(g, o);

  ConnectivityProfile profile = discretize({3.0, 0.2, 16}, ProfileKind::ricker);
  if (o.has("profile")) {
    try {
      profile = profile_from_json(o.child("profile"));
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::data_format) throw;
      fail(ErrorKind::config, std::string("config.profile: ") + e.what());
    }
  }
  DynamicsConfig dyn;
  if (o.has("dynamics")) {
    StrictObject d(o.child("dynamics"), "config.dynamics");
    dyn.dt = d.get<double>("dt", dyn.dt);
    dyn.max_steps = d.get<std::size_t>("max_steps", dyn.max_steps);
    dyn.convergence_eps = d.get<double>("convergence_eps", dyn.convergence_eps);
    dyn.divergence_cutoff = d.get<double>("divergence_cutoff", dyn.divergence_cutoff);
    d.finish();
  }
  std::vector<double> input;
  std::string input_kind = "random";
  if (o.has("input")) {
    const auto& in = o.child("input");
    if (in.is_string()) {
      input_kind = in.get<std::string>();
      require(input_kind == "random" || input_kind == "ones", ErrorKind::config,
              "config.input must be 'random', 'ones' or an array");
    } else {
      input = o.required<std::vector<double>>("input");
      input_kind = "explicit";
      require(input.size() == profile.size(), ErrorKind::config, "config.input needs one value per channel");
    }
  }
  const auto record_every = o.get<std::size_t>("record_every", 1);
  require(record_every >= 1, ErrorKind::config, "record_every must be >= 1");
  o.finish();
  try {
    dyn.validate();
  } catch (const Error& e) {
    fail(ErrorKind::config, std::string("config.dynamics: ") + e.what());
  }

  if (input_kind == "random") {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal;
    input.resize(profile.size());
    for (auto& v : input) v = normal(rng);
  } else if (input_kind == "ones") {
    input.assign(profile.size(), 1.0);
  }

  std::filesystem::create_directories(g.out);
  const LateralOperator op = build_circulant_unchecked(profile);
  const Eigen::Map<const Eigen::VectorXd> z_hat(input.data(), static_cast<Eigen::Index>(input.size()));
  std::string csv = "step,max_abs_residual\n";
  char line[64];
  const auto result = integrate(op, z_hat, dyn, Eigen::VectorXd::Zero(z_hat.size()),
                                [&](std::size_t step, double rate, double) {
                                  if (step % record_every != 0) return;
                                  std::snprintf(line, sizeof line, "%zu,%.17g\n", step, rate);
                                  csv += line;
                                });
  write_text(g.out / "trajectory.csv", csv);

  nlohmann::json summary{{"steps", result.steps},
                         {"converged", result.converged},
                         {"stable", op.stable()},
                         {"max_real_eigenvalue", op.max_real_eigenvalue()}};
  if (op.stable()) {
    const Eigen::VectorXd exact = op.q() * z_hat;
    summary["max_abs_diff_to_equilibrium"] = (exact - result.z).cwiseAbs().maxCoeff();
  }
  write_json(g.out / "summary.json", summary);
  log << (result.converged ? "converged" : "did not converge") << " after " << result.steps
      << " steps, max Re eigenvalue " << op.max_real_eigenvalue() << "\n";

  nlohmann::json resolved{{"seed", seed},
                          {"profile", to_json(profile)},
                          {"dynamics",
                           {{"dt", dyn.dt},
                            {"max_steps", dyn.max_steps},
                            {"convergence_eps", dyn.convergence_eps},
                            {"divergence_cutoff", dyn.divergence_cutoff}}},
                          {"record_every", record_every}};
  resolved["input"] = input_kind == "explicit" ? nlohmann::json(input) : nlohmann::json(input_kind);
  finish_run(g, "simulate", resolved, start, {{"trajectory", "trajectory.csv"}, {"summary", "summary.json"}});
  return 0;
}

// --- bench -----------------------------------------------------------------

inline int run_bench_command(const Globals& g, std::ostream& log) {
  const auto start = std::chrono::steady_clock::now();
  const nlohmann::json j = load_config(g, "bench");
  StrictObject o(j, "config");
  o.get<std::string>("command", "bench");
  BenchConfig cfg;
  cfg.seed = resolve_seed(g, o);
  if (o.has("shapes")) {
    const auto shapes = o.required<std::vector<std::array<std::size_t, 4>>>("shapes");
    cfg.shapes.clear();
    for (const auto& s : shapes) cfg.shapes.push_back({s[0], s[1], s[2], s[3]});
  }
  cfg.repetitions = o.get<std::size_t>("repetitions", cfg.repetitions);
  cfg.warmup = o.get<std::size_t>("warmup", cfg.warmup);
  cfg.include_backward = o.get<bool>("include_backward", cfg.include_backward);
  cfg.sigma = o.get<double>("sigma", cfg.sigma);
  cfg.delta = o.get<double>("delta", cfg.delta);
  cfg.threads = o.get<std::size_t>("threads", cfg.threads);
  cfg.tolerance = o.get<double>("tolerance", cfg.tolerance);
  o.finish();
  cfg.validate();

  std::filesystem::create_directories(g.out);
  const BenchReport report = run_bench(cfg);
  write_text(g.out / "bench.csv", report.csv());
  log << report.table();

  nlohmann::json shapes = nlohmann::json::array();
  for (const auto& s : cfg.shapes) shapes.push_back({s.batch, s.channels, s.height, s.width});
  finish_run(g, "bench",
             {{"seed", cfg.seed},
              {"shapes", shapes},
              {"repetitions", cfg.repetitions},
              {"warmup", cfg.warmup},
              {"include_backward", cfg.include_backward},
              {"sigma", cfg.sigma},
              {"delta", cfg.delta},
              {"threads", cfg.threads},
              {"tolerance", cfg.tolerance}},
             start, {{"results", "bench.csv"}});
  return 0;
}

// --- entry point -----------------------------------------------------------

inline int parse_and_dispatch(int argc, const char* const* argv, std::ostream& log = std::cout,
                              std::ostream& err = std::cerr) {
  CLI::App app{"Semantic lateral connectivity: training, filter-order analysis, dynamics and benchmarks."};
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);
  app.fallthrough();

  Globals g;
  std::uint64_t seed = 0;
  std::string out;
  app.add_option("--config", g.config_path, "JSON config file");
  auto* seed_opt = app.add_option("--seed", seed, "Random seed (overrides the config)");
  app.add_option("--out", out, "Output directory (default: semlc-out)");

  auto* train = app.add_subcommand("train", "Train a network and write checkpoints and metrics");
  std::optional<std::string> stage;
  train->add_option("--stage", stage, "Channel stage of the first conv block")
      ->check(CLI::IsMember(net::stage_types()));

  auto* analyze_cmd = app.add_subcommand("analyze", "Filter-order report for a checkpoint's first conv layer");
  std::optional<std::string> checkpoint;
  std::optional<double> threshold;
  analyze_cmd->add_option("--checkpoint", checkpoint, "Checkpoint JSON");
  analyze_cmd->add_option("--threshold", threshold, "Minimum 2-opt improvement");

  auto* simulate = app.add_subcommand("simulate", "Integrate the lateral dynamics to equilibrium");
  auto* bench = app.add_subcommand("bench", "Time the dense and FFT equilibrium paths");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, log, err);
  }
  if (*seed_opt) g.seed = seed;
  if (!out.empty()) g.out = out;

  try {
    if (train->parsed()) return run_train(g, stage, log);
    if (analyze_cmd->parsed()) return run_analyze(g, checkpoint, threshold, log);
    if (simulate->parsed()) return run_simulate(g, log);
    if (bench->parsed()) return run_bench_command(g, log);
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return exit_code(e.kind());
  } catch (const std::filesystem::filesystem_error& e) {
    err << "error: IOError: " << e.what() << "\n";
    return exit_code(ErrorKind::io);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}

}  // namespace semlc::cli
