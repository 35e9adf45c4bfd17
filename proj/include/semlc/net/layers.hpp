#pragma once

// Hand-written CNN building blocks. Every layer caches what its backward
// pass needs during forward; backward accumulates into Param::grad.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <memory>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "semlc/error.hpp"
#include "semlc/operator.hpp"
#include "semlc/semlc.hpp"
#include "semlc/tensor.hpp"

namespace semlc::net {

struct Param {
  std::string name;
  std::vector<double> value;
  std::vector<double> grad;

  Param(std::string n, std::size_t size) : name(std::move(n)), value(size, 0.0), grad(size, 0.0) {}
  std::size_t size() const { return value.size(); }
  void zero_grad() { std::fill(grad.begin(), grad.end(), 0.0); }
};

class Layer {
 public:
  virtual ~Layer() = default;
  virtual std::string kind() const = 0;
  virtual Tensor forward(const Tensor& x, bool training) = 0;
  /// Gradient w.r.t. the last forward input; accumulates parameter gradients.
  virtual Tensor backward(const Tensor& grad_out) = 0;
  virtual std::vector<Param*> params() { return {}; }
  /// Called after an optimizer step. Returning false asks the optimizer to
  /// roll the step back.
  virtual bool commit() { return true; }
  /// Non-parameter state (running statistics, profiles).
  virtual nlohmann::json extra_state() const { return nullptr; }
  virtual void load_extra_state(const nlohmann::json&) {}
};

/// Fan-in scaled initializations.
enum class Init {
  kaiming_normal,   ///< N(0, 2 / fan_in) weights, zero bias.
  kaiming_uniform,  ///< U(+-1/sqrt(fan_in)) weights and bias (PyTorch's conv/linear default).
};

inline std::string to_string(Init init) { return init == Init::kaiming_normal ? "kaiming_normal" : "kaiming_uniform"; }

inline Init init_from_string(const std::string& s) {
  if (s == "kaiming_normal") return Init::kaiming_normal;
  if (s == "kaiming_uniform") return Init::kaiming_uniform;
  fail(ErrorKind::config, "unknown init '" + s + "'");
}

namespace detail {

inline void initialize(Init init, std::vector<double>& w, std::vector<double>& b, std::size_t fan_in,
                       std::mt19937_64& rng) {
  const double n = static_cast<double>(fan_in);
  if (init == Init::kaiming_normal) {
    std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / n));
    for (auto& v : w) v = dist(rng);
    return;
  }
  std::uniform_real_distribution<double> dist(-1.0 / std::sqrt(n), 1.0 / std::sqrt(n));
  for (auto& v : w) v = dist(rng);
  for (auto& v : b) v = dist(rng);
}

}  // namespace detail

class Conv2d final : public Layer {
 public:
  Conv2d(std::size_t in_channels, std::size_t out_channels, std::size_t kernel, std::size_t stride,
         std::size_t padding, std::mt19937_64& rng, Init init = Init::kaiming_uniform)
      : cin_(in_channels), cout_(out_channels), k_(kernel), stride_(stride), pad_(padding),
        weight_("weight", out_channels * in_channels * kernel * kernel), bias_("bias", out_channels) {
    require(kernel >= 1 && stride >= 1, ErrorKind::invalid_parameter, "conv kernel and stride must be >= 1");
    detail::initialize(init, weight_.value, bias_.value, in_channels * kernel * kernel, rng);
  }

  std::string kind() const override { return "conv2d"; }
  std::size_t in_channels() const { return cin_; }
  std::size_t out_channels() const { return cout_; }
  std::size_t kernel() const { return k_; }
  Param& weight() { return weight_; }
  const Param& weight() const { return weight_; }
  Param& bias() { return bias_; }

  Shape output_shape(const Shape& in) const {
    require(in.c == cin_, ErrorKind::shape_mismatch,
            "conv expects " + std::to_string(cin_) + " input channels, got " + std::to_string(in.c));
    require(in.h + 2 * pad_ >= k_ && in.w + 2 * pad_ >= k_, ErrorKind::shape_mismatch, "conv kernel exceeds input");
    return {in.n, cout_, (in.h + 2 * pad_ - k_) / stride_ + 1, (in.w + 2 * pad_ - k_) / stride_ + 1};
  }

  Tensor forward(const Tensor& x, bool) override {
    const Shape out_shape = output_shape(x.shape());
    in_shape_ = x.shape();
    const std::size_t rows = cin_ * k_ * k_, cols = out_shape.plane();
    cols_.assign(x.shape().n * rows * cols, 0.0);
    Tensor out(out_shape);
    const ConstMatrixMap w(weight_.value.data(), static_cast<Eigen::Index>(cout_), static_cast<Eigen::Index>(rows));
    const Eigen::Map<const Eigen::VectorXd> b(bias_.value.data(), static_cast<Eigen::Index>(cout_));
    for (std::size_t n = 0; n < x.shape().n; ++n) {
      double* col = cols_.data() + n * rows * cols;
      im2col(x.data() + n * x.shape().sample(), col, out_shape);
      MatrixMap o(out.data() + n * out_shape.sample(), static_cast<Eigen::Index>(cout_),
                  static_cast<Eigen::Index>(cols));
      o.noalias() = w * ConstMatrixMap(col, static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
      o.colwise() += b;
    }
    return out;
  }

  Tensor backward(const Tensor& grad_out) override {
    const Shape out_shape = output_shape(in_shape_);
    require_shape(grad_out, out_shape, "conv grad_out");
    const auto rows = static_cast<Eigen::Index>(cin_ * k_ * k_);
    const auto cols = static_cast<Eigen::Index>(out_shape.plane());
    const auto f = static_cast<Eigen::Index>(cout_);
    const ConstMatrixMap w(weight_.value.data(), f, rows);
    MatrixMap dw(weight_.grad.data(), f, rows);
    Eigen::Map<Eigen::VectorXd> db(bias_.grad.data(), f);
    Tensor dx(in_shape_);
    Matrix dcol(rows, cols);
    for (std::size_t n = 0; n < in_shape_.n; ++n) {
      const ConstMatrixMap g(grad_out.data() + n * out_shape.sample(), f, cols);
      const ConstMatrixMap col(cols_.data() + n * static_cast<std::size_t>(rows * cols), rows, cols);
      dw.noalias() += g * col.transpose();
      // Plain loops: Eigen's vectorized sums over unaligned maps peel by
      // address, which makes the rounding differ between runs.
      for (Eigen::Index o = 0; o < f; ++o)
        for (Eigen::Index j = 0; j < cols; ++j) db[o] += g(o, j);
      dcol.noalias() = w.transpose() * g;
      col2im(dcol.data(), dx.data() + n * in_shape_.sample(), out_shape);
    }
    return dx;
  }

  std::vector<Param*> params() override { return {&weight_, &bias_}; }

 private:
  void im2col(const double* img, double* col, const Shape& out) const {
    const long h = static_cast<long>(in_shape_.h), w = static_cast<long>(in_shape_.w);
    std::size_t r = 0;
    for (std::size_t c = 0; c < cin_; ++c)
      for (std::size_t ky = 0; ky < k_; ++ky)
        for (std::size_t kx = 0; kx < k_; ++kx, ++r) {
          double* dst = col + r * out.plane();
          for (std::size_t oy = 0; oy < out.h; ++oy) {
            const long iy = static_cast<long>(oy * stride_ + ky) - static_cast<long>(pad_);
            for (std::size_t ox = 0; ox < out.w; ++ox) {
              const long ix = static_cast<long>(ox * stride_ + kx) - static_cast<long>(pad_);
              dst[oy * out.w + ox] =
                  (iy >= 0 && iy < h && ix >= 0 && ix < w) ? img[(c * in_shape_.h + iy) * in_shape_.w + ix] : 0.0;
            }
          }
        }
  }

  void col2im(const double* col, double* img, const Shape& out) const {
    const long h = static_cast<long>(in_shape_.h), w = static_cast<long>(in_shape_.w);
    std::size_t r = 0;
    for (std::size_t c = 0; c < cin_; ++c)
      for (std::size_t ky = 0; ky < k_; ++ky)
        for (std::size_t kx = 0; kx < k_; ++kx, ++r) {
          const double* src = col + r * out.plane();
          for (std::size_t oy = 0; oy < out.h; ++oy) {
            const long iy = static_cast<long>(oy * stride_ + ky) - static_cast<long>(pad_);
            if (iy < 0 || iy >= h) continue;
            for (std::size_t ox = 0; ox < out.w; ++ox) {
              const long ix = static_cast<long>(ox * stride_ + kx) - static_cast<long>(pad_);
              if (ix >= 0 && ix < w) img[(c * in_shape_.h + iy) * in_shape_.w + ix] += src[oy * out.w + ox];
            }
          }
        }
  }

  std::size_t cin_, cout_, k_, stride_, pad_;
  Param weight_, bias_;
  Shape in_shape_;
  std::vector<double> cols_;
};

class Relu final : public Layer {
 public:
  std::string kind() const override { return "relu"; }
  Tensor forward(const Tensor& x, bool) override {
    input_ = x;
    Tensor out(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] > 0.0 ? x[i] : 0.0;
    return out;
  }
  Tensor backward(const Tensor& grad_out) override {
    require_shape(grad_out, input_.shape(), "relu grad_out");
    Tensor dx(grad_out.shape());
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] = input_[i] > 0.0 ? grad_out[i] : 0.0;
    return dx;
  }

 private:
  Tensor input_;
};

class MaxPool final : public Layer {
 public:
  MaxPool(std::size_t kernel, std::size_t stride) : k_(kernel), stride_(stride) {
    require(kernel >= 1 && stride >= 1, ErrorKind::invalid_parameter, "pool kernel and stride must be >= 1");
  }
  std::string kind() const override { return "maxpool"; }

  Shape output_shape(const Shape& in) const {
    require(in.h >= k_ && in.w >= k_, ErrorKind::shape_mismatch, "pool kernel exceeds input " + in.str());
    return {in.n, in.c, (in.h - k_) / stride_ + 1, (in.w - k_) / stride_ + 1};
  }

  Tensor forward(const Tensor& x, bool) override {
    in_shape_ = x.shape();
    const Shape os = output_shape(x.shape());
    Tensor out(os);
    argmax_.assign(os.size(), 0);
    std::size_t o = 0;
    for (std::size_t nc = 0; nc < os.n * os.c; ++nc) {
      const std::size_t base = nc * in_shape_.plane();
      for (std::size_t oy = 0; oy < os.h; ++oy)
        for (std::size_t ox = 0; ox < os.w; ++ox, ++o) {
          double best = -std::numeric_limits<double>::infinity();
          std::size_t best_at = base;
          for (std::size_t ky = 0; ky < k_; ++ky)
            for (std::size_t kx = 0; kx < k_; ++kx) {
              const std::size_t at = base + (oy * stride_ + ky) * in_shape_.w + ox * stride_ + kx;
              if (x[at] > best) {
                best = x[at];
                best_at = at;
              }
            }
          out[o] = best;
          argmax_[o] = best_at;
        }
    }
    return out;
  }

  Tensor backward(const Tensor& grad_out) override {
    require(grad_out.size() == argmax_.size(), ErrorKind::shape_mismatch, "pool grad_out size mismatch");
    Tensor dx(in_shape_);
    for (std::size_t o = 0; o < argmax_.size(); ++o) dx[argmax_[o]] += grad_out[o];
    return dx;
  }

 private:
  std::size_t k_, stride_;
  Shape in_shape_;
  std::vector<std::size_t> argmax_;
};

/// Per-channel batch normalization over (N, H, W).
class BatchNorm final : public Layer {
 public:
  explicit BatchNorm(std::size_t channels, double momentum = 0.1, double eps = 1e-5)
      : gamma_("gamma", channels), beta_("beta", channels), running_mean_(channels, 0.0),
        running_var_(channels, 1.0), momentum_(momentum), eps_(eps) {
    std::fill(gamma_.value.begin(), gamma_.value.end(), 1.0);
  }
  std::string kind() const override { return "batchnorm"; }

  Tensor forward(const Tensor& x, bool training) override {
    const Shape& s = x.shape();
    require(s.c == gamma_.size(), ErrorKind::shape_mismatch, "batchnorm channel count mismatch");
    in_shape_ = s;
    xhat_ = Tensor(s);
    inv_std_.assign(s.c, 0.0);
    Tensor out(s);
    const double count = static_cast<double>(s.n * s.plane());
    for (std::size_t c = 0; c < s.c; ++c) {
      double mean = running_mean_[c], var = running_var_[c];
      if (training) {
        double sum = 0.0, sq = 0.0;
        for_each_in_channel(s, c, [&](std::size_t i) { sum += x[i]; });
        mean = sum / count;
        for_each_in_channel(s, c, [&](std::size_t i) { sq += (x[i] - mean) * (x[i] - mean); });
        var = sq / count;
        running_mean_[c] = (1.0 - momentum_) * running_mean_[c] + momentum_ * mean;
        running_var_[c] = (1.0 - momentum_) * running_var_[c] + momentum_ * var * count / std::max(count - 1.0, 1.0);
      }
      const double inv = 1.0 / std::sqrt(var + eps_);
      inv_std_[c] = inv;
      for_each_in_channel(s, c, [&](std::size_t i) {
        xhat_[i] = (x[i] - mean) * inv;
        out[i] = gamma_.value[c] * xhat_[i] + beta_.value[c];
      });
    }
    training_ = training;
    return out;
  }

  Tensor backward(const Tensor& grad_out) override {
    require_shape(grad_out, in_shape_, "batchnorm grad_out");
    const Shape& s = in_shape_;
    Tensor dx(s);
    const double count = static_cast<double>(s.n * s.plane());
    for (std::size_t c = 0; c < s.c; ++c) {
      double sum_g = 0.0, sum_gx = 0.0;
      for_each_in_channel(s, c, [&](std::size_t i) {
        sum_g += grad_out[i];
        sum_gx += grad_out[i] * xhat_[i];
      });
      gamma_.grad[c] += sum_gx;
      beta_.grad[c] += sum_g;
      const double scale = gamma_.value[c] * inv_std_[c];
      for_each_in_channel(s, c, [&](std::size_t i) {
        dx[i] = training_ ? scale * (grad_out[i] - sum_g / count - xhat_[i] * sum_gx / count) : scale * grad_out[i];
      });
    }
    return dx;
  }

  std::vector<Param*> params() override { return {&gamma_, &beta_}; }
  nlohmann::json extra_state() const override { return {{"running_mean", running_mean_}, {"running_var", running_var_}}; }
  void load_extra_state(const nlohmann::json& j) override {
    running_mean_ = j.at("running_mean").get<std::vector<double>>();
    running_var_ = j.at("running_var").get<std::vector<double>>();
  }

 private:
  template <typename Fn>
  static void for_each_in_channel(const Shape& s, std::size_t c, Fn&& fn) {
    for (std::size_t n = 0; n < s.n; ++n) {
      const std::size_t base = (n * s.c + c) * s.plane();
      for (std::size_t p = 0; p < s.plane(); ++p) fn(base + p);
    }
  }

  Param gamma_, beta_;
  std::vector<double> running_mean_, running_var_;
  double momentum_, eps_;
  Shape in_shape_;
  Tensor xhat_;
  std::vector<double> inv_std_;
  bool training_ = true;
};

/// Inverted dropout with its own generator.
class Dropout final : public Layer {
 public:
  Dropout(double rate, std::uint64_t seed) : rate_(rate), rng_(seed) {
    require(rate >= 0.0 && rate < 1.0, ErrorKind::invalid_parameter, "dropout rate must lie in [0, 1)");
  }
  std::string kind() const override { return "dropout"; }
  void reseed(std::uint64_t seed) { rng_.seed(seed); }

  Tensor forward(const Tensor& x, bool training) override {
    mask_.assign(x.size(), 1.0);
    if (training && rate_ > 0.0) {
      std::bernoulli_distribution keep(1.0 - rate_);
      for (auto& m : mask_) m = keep(rng_) ? 1.0 / (1.0 - rate_) : 0.0;
    }
    Tensor out(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] * mask_[i];
    return out;
  }

  Tensor backward(const Tensor& grad_out) override {
    require(grad_out.size() == mask_.size(), ErrorKind::shape_mismatch, "dropout grad_out size mismatch");
    Tensor dx(grad_out.shape());
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] = grad_out[i] * mask_[i];
    return dx;
  }

  nlohmann::json extra_state() const override {
    std::ostringstream os;
    os << rng_;
    return {{"rng", os.str()}};
  }
  void load_extra_state(const nlohmann::json& j) override {
    std::istringstream is(j.at("rng").get<std::string>());
    is >> rng_;
  }

 private:
  double rate_;
  std::mt19937_64 rng_;
  std::vector<double> mask_;
};

/// Fully connected layer; flattens each sample of its input.
class Dense final : public Layer {
 public:
  Dense(std::size_t in, std::size_t out, std::mt19937_64& rng, Init init = Init::kaiming_uniform)
      : in_(in), out_(out), weight_("weight", in * out), bias_("bias", out) {
    detail::initialize(init, weight_.value, bias_.value, in, rng);
  }
  std::string kind() const override { return "dense"; }

  Tensor forward(const Tensor& x, bool) override {
    require(x.shape().sample() == in_, ErrorKind::shape_mismatch,
            "dense expects " + std::to_string(in_) + " features, got " + std::to_string(x.shape().sample()));
    input_ = x;
    const auto n = static_cast<Eigen::Index>(x.shape().n);
    Tensor out({x.shape().n, out_, 1, 1});
    const ConstMatrixMap w(weight_.value.data(), static_cast<Eigen::Index>(out_), static_cast<Eigen::Index>(in_));
    const ConstMatrixMap xin(x.data(), n, static_cast<Eigen::Index>(in_));
    MatrixMap o(out.data(), n, static_cast<Eigen::Index>(out_));
    o.noalias() = xin * w.transpose();
    o.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(bias_.value.data(), static_cast<Eigen::Index>(out_));
    return out;
  }

  Tensor backward(const Tensor& grad_out) override {
    const auto n = static_cast<Eigen::Index>(input_.shape().n);
    require(grad_out.size() == input_.shape().n * out_, ErrorKind::shape_mismatch, "dense grad_out size mismatch");
    const auto in = static_cast<Eigen::Index>(in_), out = static_cast<Eigen::Index>(out_);
    const ConstMatrixMap g(grad_out.data(), n, out);
    const ConstMatrixMap xin(input_.data(), n, in);
    MatrixMap(weight_.grad.data(), out, in).noalias() += g.transpose() * xin;
    for (Eigen::Index i = 0; i < n; ++i)
      for (Eigen::Index o = 0; o < out; ++o) bias_.grad[static_cast<std::size_t>(o)] += g(i, o);
    Tensor dx(input_.shape());
    MatrixMap(dx.data(), n, in).noalias() = g * ConstMatrixMap(weight_.value.data(), out, in);
    return dx;
  }

  std::vector<Param*> params() override { return {&weight_, &bias_}; }

 private:
  std::size_t in_, out_;
  Param weight_, bias_;
  Tensor input_;
};

/// SemLC as a network stage; trainables live in a single Param.
class SemlcStage final : public Layer {
 public:
  explicit SemlcStage(SemlcLayer layer) : layer_(std::move(layer)), trainables_("trainables", 0) {
    trainables_ = Param("trainables", layer_.trainable_count());
    trainables_.value = layer_.trainables();
  }
  std::string kind() const override { return "semlc"; }
  const SemlcLayer& layer() const { return layer_; }

  Tensor forward(const Tensor& x, bool) override {
    input_ = x;
    return layer_.forward(x);
  }
  Tensor backward(const Tensor& grad_out) override {
    auto g = layer_.backward(input_, grad_out);
    for (std::size_t i = 0; i < g.params.size(); ++i) trainables_.grad[i] += g.params[i];
    return std::move(g.input);
  }
  std::vector<Param*> params() override {
    if (trainables_.size() == 0) return {};
    return {&trainables_};
  }
  bool commit() override {
    if (!layer_.try_set_trainables(trainables_.value)) return false;
    trainables_.value = layer_.trainables();
    return true;
  }
  nlohmann::json extra_state() const override { return layer_.to_json(); }
  void load_extra_state(const nlohmann::json& j) override {
    layer_ = SemlcLayer::from_json(j);
    trainables_.value = layer_.trainables();
  }

 private:
  SemlcLayer layer_;
  Param trainables_;
  Tensor input_;
};

class LrnStage final : public Layer {
 public:
  explicit LrnStage(LrnLayer lrn) : lrn_(lrn) { lrn_.validate(); }
  std::string kind() const override { return "lrn"; }
  Tensor forward(const Tensor& x, bool) override {
    input_ = x;
    return lrn_.forward(x);
  }
  Tensor backward(const Tensor& grad_out) override { return lrn_.backward(input_, grad_out); }
  nlohmann::json extra_state() const override { return lrn_.to_json(); }

 private:
  LrnLayer lrn_;
  Tensor input_;
};

struct LossResult {
  double loss = 0.0;
  std::size_t correct = 0;
  Tensor grad;
};

/// Mean softmax cross-entropy over the batch and its gradient w.r.t. logits.
inline LossResult softmax_cross_entropy(const Tensor& logits, std::span<const int> labels) {
  const std::size_t n = logits.shape().n, k = logits.shape().sample();
  require(labels.size() == n, ErrorKind::shape_mismatch, "label count does not match batch size");
  LossResult r{0.0, 0, Tensor(logits.shape())};
  for (std::size_t i = 0; i < n; ++i) {
    const double* z = logits.data() + i * k;
    double* g = r.grad.data() + i * k;
    const auto label = static_cast<std::size_t>(labels[i]);
    require(labels[i] >= 0 && label < k, ErrorKind::shape_mismatch, "label out of range");
    const double zmax = *std::max_element(z, z + k);
    double denom = 0.0;
    for (std::size_t j = 0; j < k; ++j) denom += std::exp(z[j] - zmax);
    const double log_denom = std::log(denom) + zmax;
    r.loss += log_denom - z[label];
    std::size_t argmax = 0;
    for (std::size_t j = 0; j < k; ++j) {
      g[j] = std::exp(z[j] - log_denom) / static_cast<double>(n);
      if (z[j] > z[argmax]) argmax = j;
    }
    g[label] -= 1.0 / static_cast<double>(n);
    if (argmax == label) ++r.correct;
  }
  r.loss /= static_cast<double>(n);
  return r;
}

}  // namespace semlc::net
