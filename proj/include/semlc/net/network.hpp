#pragma once

// Network description, construction, and the rollback-aware Adam optimizer.
//
// A conv block is: conv -> [channel stage] -> [batchnorm] -> relu -> [pool] -> [dropout].
// Only the first block may carry a channel stage. The head flattens and
// applies dense layers with ReLU between them, ending in `classes` logits.

#include <array>
#include <cstddef>
#include <cstdint>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "semlc/error.hpp"
#include "semlc/json_config.hpp"
#include "semlc/net/adam.hpp"
#include "semlc/net/layers.hpp"
#include "semlc/semlc.hpp"

namespace semlc::net {

struct StageSpec {
  /// none | lrn | semlc-fixed | semlc-adaptive | semlc-parametric | semlc-gaussian
  std::string type = "none";
  double sigma = 3.0;
  double delta = 0.2;
  /// Explicit profile (profile-index order) for semlc-fixed / semlc-adaptive.
  std::optional<std::vector<double>> weights;
  LrnLayer lrn;

  bool is_semlc() const { return type.rfind("semlc-", 0) == 0; }
};

struct PoolSpec {
  std::size_t kernel = 0;  ///< 0 disables pooling.
  std::size_t stride = 0;
};

struct ConvBlockSpec {
  std::size_t out_channels = 16;
  std::size_t kernel = 3;
  std::size_t stride = 1;
  std::size_t padding = 0;
  StageSpec stage;
  bool batch_norm = false;
  PoolSpec pool;
  double dropout = 0.0;
};

struct NetworkSpec {
  std::array<std::size_t, 3> input{1, 28, 28};
  std::size_t classes = 10;
  std::vector<ConvBlockSpec> conv;
  std::vector<std::size_t> dense;
  Init init = Init::kaiming_uniform;

  /// Two conv blocks and a two-layer classifier, sized for 28x28 inputs.
  static NetworkSpec shallow(std::size_t filters = 16, const std::string& stage = "none") {
    NetworkSpec s;
    ConvBlockSpec b1;
    b1.out_channels = filters;
    b1.kernel = 5;
    b1.padding = 2;
    b1.stage.type = stage;
    b1.pool = {2, 2};
    ConvBlockSpec b2;
    b2.out_channels = 32;
    b2.kernel = 3;
    b2.padding = 1;
    b2.pool = {2, 2};
    s.conv = {b1, b2};
    s.dense = {64};
    return s;
  }
};

inline const std::vector<std::string>& stage_types() {
  static const std::vector<std::string> types{"none",           "lrn",
                                              "semlc-fixed",    "semlc-adaptive",
                                              "semlc-parametric", "semlc-gaussian"};
  return types;
}

inline nlohmann::json to_json(const StageSpec& s) {
  nlohmann::json j{{"type", s.type}};
  if (s.is_semlc()) {
    j["sigma"] = s.sigma;
    j["delta"] = s.delta;
    if (s.weights) j["weights"] = *s.weights;
  }
  if (s.type == "lrn") j["lrn"] = s.lrn.to_json();
  return j;
}

inline nlohmann::json to_json(const NetworkSpec& s) {
  nlohmann::json blocks = nlohmann::json::array();
  for (const auto& b : s.conv)
    blocks.push_back({{"out_channels", b.out_channels},
                      {"kernel", b.kernel},
                      {"stride", b.stride},
                      {"padding", b.padding},
                      {"stage", to_json(b.stage)},
                      {"batch_norm", b.batch_norm},
                      {"pool", {{"kernel", b.pool.kernel}, {"stride", b.pool.stride}}},
                      {"dropout", b.dropout}});
  return {{"input", s.input}, {"classes", s.classes}, {"conv_blocks", blocks}, {"dense", s.dense}, {"init", to_string(s.init)}};
}

inline StageSpec stage_from_json(const nlohmann::json& j, const std::string& path) {
  StrictObject o(j, path);
  StageSpec s;
  s.type = o.get<std::string>("type", s.type);
  require(std::find(stage_types().begin(), stage_types().end(), s.type) != stage_types().end(), ErrorKind::config,
          path + ".type: unknown stage '" + s.type + "'");
  s.sigma = o.get<double>("sigma", s.sigma);
  s.delta = o.get<double>("delta", s.delta);
  if (o.has("weights")) s.weights = o.required<std::vector<double>>("weights");
  if (o.has("lrn")) {
    StrictObject l(o.child("lrn"), o.path("lrn"));
    s.lrn.depth_radius = l.get<int>("depth_radius", s.lrn.depth_radius);
    s.lrn.alpha = l.get<double>("alpha", s.lrn.alpha);
    s.lrn.beta = l.get<double>("beta", s.lrn.beta);
    s.lrn.k = l.get<double>("k", s.lrn.k);
    l.finish();
  }
  o.finish();
  return s;
}

inline NetworkSpec network_spec_from_json(const nlohmann::json& j, const std::string& path = "network") {
  StrictObject o(j, path);
  NetworkSpec s;
  s.conv.clear();
  s.dense.clear();
  s.input = o.get<std::array<std::size_t, 3>>("input", s.input);
  s.classes = o.get<std::size_t>("classes", s.classes);
  s.dense = o.get<std::vector<std::size_t>>("dense", {});
  s.init = init_from_string(o.get<std::string>("init", to_string(s.init)));
  const auto& blocks = o.child("conv_blocks");
  require(blocks.is_array(), ErrorKind::config, path + ".conv_blocks must be an array");
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    const std::string bp = path + ".conv_blocks[" + std::to_string(i) + "]";
    StrictObject b(blocks[i], bp);
    ConvBlockSpec c;
    c.out_channels = b.required<std::size_t>("out_channels");
    c.kernel = b.required<std::size_t>("kernel");
    c.stride = b.get<std::size_t>("stride", c.stride);
    c.padding = b.get<std::size_t>("padding", c.padding);
    if (b.has("stage")) c.stage = stage_from_json(b.child("stage"), b.path("stage"));
    c.batch_norm = b.get<bool>("batch_norm", c.batch_norm);
    if (b.has("pool")) {
      StrictObject p(b.child("pool"), b.path("pool"));
      c.pool.kernel = p.get<std::size_t>("kernel", 0);
      c.pool.stride = p.get<std::size_t>("stride", c.pool.kernel);
      p.finish();
    }
    c.dropout = b.get<double>("dropout", c.dropout);
    b.finish();
    s.conv.push_back(c);
  }
  o.finish();
  return s;
}

inline std::unique_ptr<Layer> make_stage(const StageSpec& s, std::size_t channels) {
  if (s.type == "lrn") return std::make_unique<LrnStage>(s.lrn);
  const std::string variant = s.type.substr(std::string("semlc-").size());
  const Variant v = variant_from_string(variant);
  if (s.weights) {
    require(v == Variant::fixed || v == Variant::adaptive, ErrorKind::config,
            "explicit weights are only allowed for semlc-fixed and semlc-adaptive");
    require(s.weights->size() == channels, ErrorKind::config, "stage weights must have one entry per channel");
    return std::make_unique<SemlcStage>(
        SemlcLayer(v, ConnectivityProfile::free(*s.weights, {s.sigma, s.delta, channels})));
  }
  return std::make_unique<SemlcStage>(SemlcLayer(v, ProfileParams{s.sigma, s.delta, channels}));
}

class Network {
 public:
  Network(NetworkSpec spec, std::uint64_t seed) : spec_(std::move(spec)) {
    std::mt19937_64 rng(seed);
    require(!spec_.conv.empty(), ErrorKind::config, "network needs at least one conv block");
    require(spec_.classes >= 2, ErrorKind::config, "network needs at least two classes");
    Shape shape{1, spec_.input[0], spec_.input[1], spec_.input[2]};
    try {
      for (std::size_t i = 0; i < spec_.conv.size(); ++i) {
        const auto& b = spec_.conv[i];
        require(i == 0 || b.stage.type == "none", ErrorKind::config,
                "only the first conv block may carry a channel stage");
        auto conv = std::make_unique<Conv2d>(shape.c, b.out_channels, b.kernel, b.stride, b.padding, rng, spec_.init);
        shape = conv->output_shape(shape);
        add(std::move(conv));
        if (b.stage.type != "none") add(make_stage(b.stage, shape.c));
        if (b.batch_norm) add(std::make_unique<BatchNorm>(shape.c));
        add(std::make_unique<Relu>());
        if (b.pool.kernel > 0) {
          auto pool = std::make_unique<MaxPool>(b.pool.kernel, b.pool.stride == 0 ? b.pool.kernel : b.pool.stride);
          shape = pool->output_shape(shape);
          add(std::move(pool));
        }
        if (b.dropout > 0.0) add(std::make_unique<Dropout>(b.dropout, rng()));
      }
      std::size_t features = shape.sample();
      for (const std::size_t width : spec_.dense) {
        add(std::make_unique<Dense>(features, width, rng, spec_.init));
        add(std::make_unique<Relu>());
        features = width;
      }
      add(std::make_unique<Dense>(features, spec_.classes, rng, spec_.init));
    } catch (const Error& e) {
      if (e.kind() == ErrorKind::config) throw;
      fail(ErrorKind::config, std::string("invalid network spec: ") + e.what());
    }
  }

  const NetworkSpec& spec() const { return spec_; }
  std::vector<std::unique_ptr<Layer>>& layers() { return layers_; }

  Tensor forward(const Tensor& x, bool training) {
    require(x.shape().c == spec_.input[0] && x.shape().h == spec_.input[1] && x.shape().w == spec_.input[2],
            ErrorKind::shape_mismatch, "input " + x.shape().str() + " does not match the network input");
    Tensor h = x;
    for (auto& l : layers_) h = l->forward(h, training);
    return h;
  }

  Tensor backward(const Tensor& grad) {
    Tensor g = grad;
    for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) g = (*it)->backward(g);
    return g;
  }

  void zero_grad() {
    for (auto& l : layers_)
      for (Param* p : l->params()) p->zero_grad();
  }

  std::size_t parameter_count() {
    std::size_t n = 0;
    for (auto& l : layers_)
      for (Param* p : l->params()) n += p->size();
    return n;
  }

  Conv2d& first_conv() { return dynamic_cast<Conv2d&>(*layers_.front()); }

  SemlcStage* semlc_stage() {
    for (auto& l : layers_)
      if (auto* s = dynamic_cast<SemlcStage*>(l.get())) return s;
    return nullptr;
  }

  nlohmann::json state() const {
    nlohmann::json layers = nlohmann::json::array();
    for (const auto& l : layers_) {
      nlohmann::json entry{{"kind", l->kind()}};
      nlohmann::json params = nlohmann::json::object();
      for (Param* p : l->params()) params[p->name] = p->value;
      entry["params"] = params;
      entry["extra"] = l->extra_state();
      layers.push_back(entry);
    }
    return layers;
  }

  void load_state(const nlohmann::json& j) {
    try {
      require(j.is_array() && j.size() == layers_.size(), ErrorKind::data_format,
              "checkpoint layer list does not match the network spec");
      for (std::size_t i = 0; i < layers_.size(); ++i) {
        const auto& entry = j[i];
        require(entry.at("kind").get<std::string>() == layers_[i]->kind(), ErrorKind::data_format,
                "checkpoint layer " + std::to_string(i) + " has the wrong kind");
        if (!entry.at("extra").is_null()) layers_[i]->load_extra_state(entry.at("extra"));
        for (Param* p : layers_[i]->params()) {
          auto v = entry.at("params").at(p->name).get<std::vector<double>>();
          require(v.size() == p->size(), ErrorKind::data_format, "checkpoint parameter " + p->name + " has wrong size");
          p->value = std::move(v);
        }
      }
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorKind::data_format, std::string("malformed network state: ") + e.what());
    }
  }

 private:
  void add(std::unique_ptr<Layer> l) { layers_.push_back(std::move(l)); }

  NetworkSpec spec_;
  std::vector<std::unique_ptr<Layer>> layers_;
};

/// Adam over every parameter of a network. After each layer's update the
/// layer may veto it (SemLC stability); the step is then retried at half
/// size, up to `max_halvings` times, and dropped if still rejected.
class Optimizer {
 public:
  explicit Optimizer(AdamConfig cfg, int max_halvings = 30) : cfg_(cfg), max_halvings_(max_halvings) {}

  const AdamConfig& config() const { return cfg_; }
  std::size_t steps() const { return step_; }
  std::size_t rollbacks() const { return rollbacks_; }

  void step(Network& net, double learning_rate) {
    ++step_;
    std::size_t slot = 0;
    for (auto& layer : net.layers()) {
      const auto params = layer->params();
      if (params.empty()) continue;
      std::vector<std::vector<double>> before, deltas;
      for (Param* p : params) {
        if (moments_.size() <= slot) moments_.resize(slot + 1);
        deltas.push_back(adam_direction(p->grad, moments_[slot++], step_, cfg_, learning_rate));
        before.push_back(p->value);
      }
      double scale = 1.0;
      bool accepted = false;
      for (int attempt = 0; attempt <= max_halvings_ && !accepted; ++attempt) {
        for (std::size_t i = 0; i < params.size(); ++i)
          for (std::size_t k = 0; k < params[i]->size(); ++k)
            params[i]->value[k] = before[i][k] - scale * deltas[i][k];
        accepted = layer->commit();
        if (!accepted) {
          ++rollbacks_;
          scale *= 0.5;
        }
      }
      if (!accepted) {
        for (std::size_t i = 0; i < params.size(); ++i) params[i]->value = before[i];
        layer->commit();
      }
    }
  }

  nlohmann::json state() const {
    nlohmann::json m = nlohmann::json::array();
    for (const auto& s : moments_) m.push_back(to_json(s));
    return {{"step", step_}, {"moments", m}, {"rollbacks", rollbacks_}};
  }

  void load_state(const nlohmann::json& j) {
    step_ = j.at("step").get<std::size_t>();
    rollbacks_ = j.at("rollbacks").get<std::size_t>();
    moments_.clear();
    for (const auto& m : j.at("moments")) moments_.push_back(moments_from_json(m));
  }

 private:
  AdamConfig cfg_;
  int max_halvings_;
  std::size_t step_ = 0;
  std::size_t rollbacks_ = 0;
  std::vector<AdamMoments> moments_;
};

}  // namespace semlc::net
