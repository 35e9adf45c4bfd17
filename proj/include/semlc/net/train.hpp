#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "semlc/error.hpp"
#include "semlc/json_config.hpp"
#include "semlc/net/dataset.hpp"
#include "semlc/net/network.hpp"

namespace semlc::net {

inline constexpr int kCheckpointVersion = 1;

struct TrainConfig {
  AdamConfig adam;
  /// Epoch indices at which the learning rate is multiplied by lr_factor.
  std::vector<std::size_t> lr_milestones{100, 150};
  double lr_factor = 0.1;
  std::size_t epochs = 10;
  std::size_t batch_size = 64;
  double validation_fraction = 0.1;
  std::uint64_t seed = 0;
  bool horizontal_flip = false;

  void validate() const {
    require(validation_fraction > 0.0 && validation_fraction < 1.0, ErrorKind::config,
            "validation_fraction must lie in (0, 1)");
    require(epochs > 0 && batch_size > 0, ErrorKind::config, "epochs and batch_size must be positive");
    require(adam.learning_rate > 0.0, ErrorKind::config, "learning rate must be positive");
  }

  double learning_rate(std::size_t epoch) const {
    double lr = adam.learning_rate;
    for (const std::size_t m : lr_milestones)
      if (epoch >= m) lr *= lr_factor;
    return lr;
  }
};

inline nlohmann::json to_json(const TrainConfig& c) {
  return {{"learning_rate", c.adam.learning_rate},
          {"beta1", c.adam.beta1},
          {"beta2", c.adam.beta2},
          {"eps", c.adam.eps},
          {"lr_milestones", c.lr_milestones},
          {"lr_factor", c.lr_factor},
          {"epochs", c.epochs},
          {"batch_size", c.batch_size},
          {"validation_fraction", c.validation_fraction},
          {"seed", c.seed},
          {"horizontal_flip", c.horizontal_flip}};
}

inline TrainConfig train_config_from_json(const nlohmann::json& j, const std::string& path = "training") {
  StrictObject o(j, path);
  TrainConfig c;
  c.adam.learning_rate = o.get<double>("learning_rate", c.adam.learning_rate);
  c.adam.beta1 = o.get<double>("beta1", c.adam.beta1);
  c.adam.beta2 = o.get<double>("beta2", c.adam.beta2);
  c.adam.eps = o.get<double>("eps", c.adam.eps);
  c.lr_milestones = o.get<std::vector<std::size_t>>("lr_milestones", c.lr_milestones);
  c.lr_factor = o.get<double>("lr_factor", c.lr_factor);
  c.epochs = o.get<std::size_t>("epochs", c.epochs);
  c.batch_size = o.get<std::size_t>("batch_size", c.batch_size);
  c.validation_fraction = o.get<double>("validation_fraction", c.validation_fraction);
  c.seed = o.get<std::uint64_t>("seed", c.seed);
  c.horizontal_flip = o.get<bool>("horizontal_flip", c.horizontal_flip);
  o.finish();
  c.validate();
  return c;
}

struct MetricRow {
  std::size_t epoch = 0;
  std::string split;
  double loss = 0.0;
  double accuracy = 0.0;

  bool operator==(const MetricRow&) const = default;
};

inline std::string metrics_csv(const std::vector<MetricRow>& rows) {
  std::string out = "epoch,split,loss,accuracy\n";
  char line[128];
  for (const auto& r : rows) {
    std::snprintf(line, sizeof line, "%zu,%s,%.17g,%.17g\n", r.epoch, r.split.c_str(), r.loss, r.accuracy);
    out += line;
  }
  return out;
}

struct TrainResult {
  nlohmann::json best_checkpoint;
  nlohmann::json final_checkpoint;
  std::vector<MetricRow> history;
  double best_val_accuracy = -1.0;
  std::size_t best_epoch = 0;
};

struct Evaluation {
  double loss = 0.0;
  double accuracy = 0.0;
};

inline Evaluation evaluate(Network& net, const Dataset& data, std::size_t batch_size = 256) {
  Evaluation e;
  std::vector<std::size_t> idx(data.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::size_t correct = 0;
  for (std::size_t start = 0; start < idx.size(); start += batch_size) {
    const std::size_t end = std::min(idx.size(), start + batch_size);
    const Dataset batch = data.subset(std::span(idx).subspan(start, end - start));
    const auto r = softmax_cross_entropy(net.forward(batch.images, false), batch.labels);
    e.loss += r.loss * static_cast<double>(end - start);
    correct += r.correct;
  }
  e.loss /= static_cast<double>(data.size());
  e.accuracy = static_cast<double>(correct) / static_cast<double>(data.size());
  return e;
}

inline std::string rng_state(const std::mt19937_64& rng) {
  std::ostringstream os;
  os << rng;
  return os.str();
}

inline nlohmann::json make_checkpoint(const Network& net, const Optimizer& opt, const TrainConfig& cfg,
                                      std::size_t epoch, const std::mt19937_64& rng, double val_accuracy) {
  return {{"format", "semlc-checkpoint"},
          {"version", kCheckpointVersion},
          {"network", to_json(net.spec())},
          {"state", net.state()},
          {"optimizer", opt.state()},
          {"training", to_json(cfg)},
          {"epoch", epoch},
          {"rng", rng_state(rng)},
          {"val_accuracy", val_accuracy}};
}

/// Rebuilds the network stored in a checkpoint.
inline Network load_network(const nlohmann::json& ckpt) {
  try {
    require(ckpt.at("format").get<std::string>() == "semlc-checkpoint", ErrorKind::data_format,
            "not a semlc checkpoint");
    require(ckpt.at("version").get<int>() == kCheckpointVersion, ErrorKind::data_format,
            "unsupported checkpoint version");
    Network net(network_spec_from_json(ckpt.at("network")), 0);
    net.load_state(ckpt.at("state"));
    return net;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::data_format, std::string("malformed checkpoint: ") + e.what());
  }
}

inline void flip_horizontal(Tensor& images, std::size_t sample, std::mt19937_64& rng) {
  const Shape& s = images.shape();
  if (!std::bernoulli_distribution(0.5)(rng)) return;
  for (std::size_t c = 0; c < s.c; ++c)
    for (std::size_t y = 0; y < s.h; ++y) {
      double* row = images.data() + ((sample * s.c + c) * s.h + y) * s.w;
      std::reverse(row, row + s.w);
    }
}

/// Trains with a random validation split, keeping the best-validation model.
/// Single-threaded and fully determined by cfg.seed.
inline TrainResult train(const NetworkSpec& spec, const Dataset& data, const TrainConfig& cfg,
                         const std::function<void(const MetricRow&)>& on_row = {}) {
  cfg.validate();
  const Shape& s = data.images.shape();
  require(s.c == spec.input[0] && s.h == spec.input[1] && s.w == spec.input[2], ErrorKind::data_format,
          "dataset sample shape " + s.str() + " does not match the network input");
  require(data.classes <= spec.classes, ErrorKind::data_format, "dataset has more classes than the network");

  std::mt19937_64 rng(cfg.seed);
  Network net(spec, rng());
  Optimizer opt(cfg.adam);

  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  const auto n_val = static_cast<std::size_t>(std::llround(cfg.validation_fraction * static_cast<double>(data.size())));
  require(n_val >= 1 && n_val < data.size(), ErrorKind::data_format, "dataset too small for a validation split");
  const Dataset val = data.subset(std::span(order).first(n_val));
  std::vector<std::size_t> train_idx(order.begin() + static_cast<long>(n_val), order.end());

  TrainResult result;
  auto record = [&](MetricRow row) {
    result.history.push_back(row);
    if (on_row) on_row(row);
  };

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = cfg.learning_rate(epoch);
    std::shuffle(train_idx.begin(), train_idx.end(), rng);
    double loss_sum = 0.0;
    std::size_t correct = 0;
    for (std::size_t start = 0; start < train_idx.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(train_idx.size(), start + cfg.batch_size);
      Dataset batch = data.subset(std::span(train_idx).subspan(start, end - start));
      if (cfg.horizontal_flip)
        for (std::size_t i = 0; i < batch.size(); ++i) flip_horizontal(batch.images, i, rng);
      net.zero_grad();
      auto r = softmax_cross_entropy(net.forward(batch.images, true), batch.labels);
      require(std::isfinite(r.loss), ErrorKind::diverged_loss, "non-finite loss in epoch " + std::to_string(epoch));
      net.backward(r.grad);
      opt.step(net, lr);
      loss_sum += r.loss * static_cast<double>(end - start);
      correct += r.correct;
    }
    const double n_train = static_cast<double>(train_idx.size());
    record({epoch, "train", loss_sum / n_train, static_cast<double>(correct) / n_train});
    const Evaluation v = evaluate(net, val);
    require(std::isfinite(v.loss), ErrorKind::diverged_loss, "non-finite validation loss in epoch " + std::to_string(epoch));
    record({epoch, "val", v.loss, v.accuracy});
    if (v.accuracy > result.best_val_accuracy) {
      result.best_val_accuracy = v.accuracy;
      result.best_epoch = epoch;
      result.best_checkpoint = make_checkpoint(net, opt, cfg, epoch, rng, v.accuracy);
    }
  }
  result.final_checkpoint = make_checkpoint(net, opt, cfg, cfg.epochs - 1, rng, result.history.back().accuracy);
  return result;
}

}  // namespace semlc::net
