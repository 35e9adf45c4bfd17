#pragma once

// Dense-Q vs. FFT equilibrium timing. Both paths are checked against each
// other on every shape before any timing starts.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "semlc/error.hpp"
#include "semlc/operator.hpp"
#include "semlc/profile.hpp"
#include "semlc/tensor.hpp"

namespace semlc {

struct BenchShape {
  std::size_t batch = 64, channels = 64, height = 32, width = 32;

  std::string str() const {
    return std::to_string(batch) + "x" + std::to_string(channels) + "x" + std::to_string(height) + "x" +
           std::to_string(width);
  }
};

struct BenchConfig {
  std::vector<BenchShape> shapes{BenchShape{}};
  std::size_t repetitions = 10;
  std::size_t warmup = 3;
  bool include_backward = true;
  double sigma = 3.0;
  double delta = 0.2;
  /// Values above 1 add rows timed with that many threads.
  std::size_t threads = 1;
  std::uint64_t seed = 0;
  double tolerance = 1e-8;

  void validate() const {
    require(repetitions >= 10, ErrorKind::config, "bench repetitions must be >= 10");
    require(warmup >= 3, ErrorKind::config, "bench warmup must be >= 3");
    require(!shapes.empty(), ErrorKind::config, "bench needs at least one shape");
    require(threads >= 1, ErrorKind::config, "bench threads must be >= 1");
    require(tolerance >= 0.0, ErrorKind::config, "bench tolerance must be non-negative");
  }
};

struct TimingStats {
  double median_ns = 0.0;
  double iqr_ns = 0.0;
};

inline double quantile(std::vector<double> v, double q) {
  std::sort(v.begin(), v.end());
  const double pos = q * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

inline TimingStats summarize(const std::vector<double>& samples) {
  return {quantile(samples, 0.5), quantile(samples, 0.75) - quantile(samples, 0.25)};
}

struct BenchRow {
  BenchShape shape;
  std::string path;  ///< dense | fft, suffixed with -mtN for threaded rows
  std::size_t threads = 1;
  TimingStats timing;
  double ratio = 0.0;  ///< FFT median / dense median at the same thread count
};

struct BenchShapeInfo {
  BenchShape shape;
  double q_materialization_ns = 0.0;
  double fft_setup_ns = 0.0;
  double max_abs_forward_diff = 0.0;
  double max_abs_backward_diff = 0.0;
};

struct BenchReport {
  std::vector<BenchRow> rows;
  std::vector<BenchShapeInfo> shapes;

  std::string csv() const {
    std::string out = "shape,path,median_ns,iqr_ns,ratio\n";
    char line[256];
    for (const auto& r : rows) {
      std::snprintf(line, sizeof line, "%s,%s,%.0f,%.0f,%.4f\n", r.shape.str().c_str(), r.path.c_str(),
                    r.timing.median_ns, r.timing.iqr_ns, r.ratio);
      out += line;
    }
    return out;
  }

  std::string table() const {
    std::string out;
    char line[256];
    std::snprintf(line, sizeof line, "%-16s %-10s %14s %12s %8s\n", "shape", "path", "median_ms", "iqr_ms",
                  "fft/dense");
    out += line;
    for (const auto& r : rows) {
      std::snprintf(line, sizeof line, "%-16s %-10s %14.3f %12.3f %8.2f\n", r.shape.str().c_str(), r.path.c_str(),
                    r.timing.median_ns / 1e6, r.timing.iqr_ns / 1e6, r.ratio);
      out += line;
    }
    for (const auto& s : shapes) {
      std::snprintf(line, sizeof line, "%-16s Q materialization %.3f ms, FFT setup %.3f ms, max |diff| %.2e\n",
                    s.shape.str().c_str(), s.q_materialization_ns / 1e6, s.fft_setup_ns / 1e6,
                    std::max(s.max_abs_forward_diff, s.max_abs_backward_diff));
      out += line;
    }
    return out;
  }
};

namespace detail {

template <typename Fn>
double time_ns(Fn&& fn) {
  const auto t0 = std::chrono::steady_clock::now();
  fn();
  const auto t1 = std::chrono::steady_clock::now();
  return static_cast<double>(std::chrono::duration_cast<std::chrono::nanoseconds>(t1 - t0).count());
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace detail

inline BenchReport run_bench(const BenchConfig& cfg) {
  cfg.validate();
  BenchReport report;
  std::mt19937_64 rng(cfg.seed);
  for (const auto& shape : cfg.shapes) {
    const Shape s{shape.batch, shape.channels, shape.height, shape.width};
    const auto profile = discretize({cfg.sigma, cfg.delta, shape.channels}, ProfileKind::ricker);
    BenchShapeInfo info{shape};

    LateralOperator op;
    Matrix qt;
    info.q_materialization_ns = detail::time_ns([&] {
      op = build_circulant(profile);
      qt = op.q().transpose();
    });
    std::optional<FftEquilibrium> solver;
    info.fft_setup_ns = detail::time_ns([&] { solver.emplace(op.first_column()); });
    const FftEquilibrium& fft_solver = *solver;

    const Tensor z_hat = random_normal(s, rng);
    const Tensor grad = random_normal(s, rng);
    Tensor dense_out(s), dense_back(s), fft_out(s), fft_back(s);

    auto dense = [&](std::size_t threads) {
      apply_batched(op.q(), z_hat.data(), dense_out.data(), s.n, s.plane(), threads);
      if (cfg.include_backward) apply_batched(qt, grad.data(), dense_back.data(), s.n, s.plane(), threads);
    };
    auto fft = [&](std::size_t threads) {
      fft_solver.solve(z_hat.data(), fft_out.data(), s.n, s.plane(), false, threads);
      if (cfg.include_backward) fft_solver.solve(grad.data(), fft_back.data(), s.n, s.plane(), true, threads);
    };

    dense(1);
    fft(1);
    info.max_abs_forward_diff = detail::max_abs_diff(dense_out, fft_out);
    info.max_abs_backward_diff = cfg.include_backward ? detail::max_abs_diff(dense_back, fft_back) : 0.0;
    require(info.max_abs_forward_diff <= cfg.tolerance && info.max_abs_backward_diff <= cfg.tolerance,
            ErrorKind::path_mismatch,
            "dense and FFT paths disagree on shape " + shape.str() + " (max |diff| " +
                std::to_string(std::max(info.max_abs_forward_diff, info.max_abs_backward_diff)) + ")");
    report.shapes.push_back(info);

    std::vector<std::size_t> thread_counts{1};
    if (cfg.threads > 1) thread_counts.push_back(cfg.threads);
    for (const std::size_t threads : thread_counts) {
      std::vector<double> dense_ns, fft_ns;
      for (std::size_t r = 0; r < cfg.warmup + cfg.repetitions; ++r) {
        const double d = detail::time_ns([&] { dense(threads); });
        const double f = detail::time_ns([&] { fft(threads); });
        if (r >= cfg.warmup) {
          dense_ns.push_back(d);
          fft_ns.push_back(f);
        }
      }
      const auto dense_stats = summarize(dense_ns), fft_stats = summarize(fft_ns);
      const double ratio = fft_stats.median_ns / dense_stats.median_ns;
      const std::string suffix = threads > 1 ? "-mt" + std::to_string(threads) : "";
      report.rows.push_back({shape, "dense" + suffix, threads, dense_stats, ratio});
      report.rows.push_back({shape, "fft" + suffix, threads, fft_stats, ratio});
    }
  }
  return report;
}

}  // namespace semlc
