#pragma once

// Filter-order diagnostics for a first-layer filter bank: mean squared
// deviation between all vs. circularly adjacent filters, 2-opt reordering on
// the MSD-weighted ring, and the centered neighbor cosine-similarity profile.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "semlc/error.hpp"
#include "semlc/profile.hpp"
#include "semlc/tensor.hpp"

namespace semlc {

/// f filters, each flattened across input channels and kernel extent.
class FilterBank {
 public:
  FilterBank(std::size_t count, std::size_t filter_size, std::vector<double> weights,
             std::vector<double> bias = {})
      : count_(count), filter_size_(filter_size), weights_(std::move(weights)), bias_(std::move(bias)) {
    require(weights_.size() == count_ * filter_size_, ErrorKind::shape_mismatch,
            "filter bank weights do not match count x filter_size");
    for (double v : weights_) require(std::isfinite(v), ErrorKind::data_format, "filter bank has non-finite weights");
  }

  /// From a (f, c_in, k, k) weight tensor.
  explicit FilterBank(const Tensor& weights, std::vector<double> bias = {})
      : FilterBank(weights.shape().n, weights.shape().sample(), weights.vec(), std::move(bias)) {}

  /// One scalar per filter.
  static FilterBank scalars(std::span<const double> values) {
    return {values.size(), 1, std::vector<double>(values.begin(), values.end())};
  }

  std::size_t size() const { return count_; }
  std::size_t filter_size() const { return filter_size_; }
  std::span<const double> filter(std::size_t i) const {
    return std::span(weights_).subspan(i * filter_size_, filter_size_);
  }
  std::span<const double> bias() const { return bias_; }

  FilterBank reordered(std::span<const std::size_t> order) const {
    std::vector<double> w;
    w.reserve(weights_.size());
    for (std::size_t i : order) w.insert(w.end(), filter(i).begin(), filter(i).end());
    return {count_, filter_size_, std::move(w)};
  }

 private:
  std::size_t count_, filter_size_;
  std::vector<double> weights_;
  std::vector<double> bias_;
};

inline double msd(std::span<const double> a, std::span<const double> b) {
  require(a.size() == b.size() && !a.empty(), ErrorKind::shape_mismatch, "msd needs equal, non-empty filters");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return s / static_cast<double>(a.size());
}

struct OrderMetric {
  double all_pair_msd = 0.0;
  double adjacent_pair_msd = 0.0;
  double percent_reduction = 0.0;
};

inline double percent_reduction(double all_pair, double adjacent) {
  return all_pair >= 1e-12 ? 100.0 * (all_pair - adjacent) / all_pair : 0.0;
}

inline OrderMetric order_metric(const FilterBank& bank) {
  const std::size_t f = bank.size();
  require(f >= 3, ErrorKind::length_too_small, "order metric needs at least 3 filters");
  OrderMetric m;
  for (std::size_t i = 0; i < f; ++i)
    for (std::size_t j = i + 1; j < f; ++j) m.all_pair_msd += msd(bank.filter(i), bank.filter(j));
  m.all_pair_msd /= static_cast<double>(f * (f - 1) / 2);
  for (std::size_t i = 0; i < f; ++i) m.adjacent_pair_msd += msd(bank.filter(i), bank.filter((i + 1) % f));
  m.adjacent_pair_msd /= static_cast<double>(f);
  m.percent_reduction = percent_reduction(m.all_pair_msd, m.adjacent_pair_msd);
  return m;
}

/// Symmetric matrix of pairwise MSDs.
inline std::vector<std::vector<double>> msd_matrix(const FilterBank& bank) {
  const std::size_t f = bank.size();
  std::vector<std::vector<double>> d(f, std::vector<double>(f, 0.0));
  for (std::size_t i = 0; i < f; ++i)
    for (std::size_t j = i + 1; j < f; ++j) d[i][j] = d[j][i] = msd(bank.filter(i), bank.filter(j));
  return d;
}

inline double tour_length(const std::vector<std::vector<double>>& dist, std::span<const std::size_t> tour) {
  double len = 0.0;
  for (std::size_t p = 0; p < tour.size(); ++p) len += dist[tour[p]][tour[(p + 1) % tour.size()]];
  return len;
}

/// Best-improvement 2-opt on the circular tour, starting from the native
/// order. A reversal is applied only if it shortens the tour by more than
/// `threshold`; ties go to the lowest (i, j). Position 0 never moves.
/// Returns tour[p] = original index of the filter at position p.
inline std::vector<std::size_t> two_opt_order(const FilterBank& bank, double threshold) {
  const std::size_t f = bank.size();
  require(f >= 3, ErrorKind::length_too_small, "2-opt needs at least 3 filters");
  require(threshold >= 0.0, ErrorKind::invalid_parameter, "2-opt threshold must be non-negative");
  const auto dist = msd_matrix(bank);
  std::vector<std::size_t> tour(f);
  std::iota(tour.begin(), tour.end(), 0);
  for (;;) {
    double best_gain = 0.0;
    std::size_t best_i = 0, best_j = 0;
    for (std::size_t i = 0; i + 2 < f; ++i)
      for (std::size_t j = i + 2; j < f; ++j) {
        if (i == 0 && j == f - 1) continue;  // the two edges share tour[0]
        const std::size_t a = tour[i], b = tour[i + 1], c = tour[j], d = tour[(j + 1) % f];
        const double gain = dist[a][b] + dist[c][d] - dist[a][c] - dist[b][d];
        if (gain > threshold && gain > best_gain) {
          best_gain = gain;
          best_i = i;
          best_j = j;
        }
      }
    if (best_gain <= 0.0) break;
    std::reverse(tour.begin() + static_cast<long>(best_i) + 1, tour.begin() + static_cast<long>(best_j) + 1);
  }
  return tour;
}

inline double cosine_similarity(std::span<const double> a, std::span<const double> b) {
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  return dot / std::sqrt(na * nb);
}

/// Mean cosine similarity by signed circular offset. Index center_index(f)
/// holds offset 0; index i holds offset i - f/2.
inline std::vector<double> correlation_profile(const FilterBank& bank) {
  const std::size_t f = bank.size();
  require(f >= 2, ErrorKind::length_too_small, "correlation profile needs at least 2 filters");
  for (std::size_t i = 0; i < f; ++i) {
    double norm = 0.0;
    for (double v : bank.filter(i)) norm += v * v;
    require(norm > 0.0, ErrorKind::zero_norm_filter, "filter " + std::to_string(i) + " has zero norm");
  }
  std::vector<double> profile(f, 0.0);
  for (std::size_t i = 0; i < f; ++i)
    for (std::size_t j = 0; j < f; ++j)
      profile[index_of_circular((j + f - i) % f, f)] += cosine_similarity(bank.filter(i), bank.filter(j));
  for (auto& v : profile) v /= static_cast<double>(f);
  return profile;
}

struct OrderReport {
  OrderMetric metric;
  double threshold = 0.0;
  std::vector<std::size_t> tour;
  std::vector<double> correlation;
  double native_tour_length = 0.0;
  double two_opt_tour_length = 0.0;

  /// Position of every original filter in the 2-opt tour.
  std::vector<std::size_t> positions() const {
    std::vector<std::size_t> pos(tour.size());
    for (std::size_t p = 0; p < tour.size(); ++p) pos[tour[p]] = p;
    return pos;
  }
};

inline OrderReport analyze(const FilterBank& bank, double threshold) {
  OrderReport r;
  r.metric = order_metric(bank);
  r.threshold = threshold;
  r.tour = two_opt_order(bank, threshold);
  r.correlation = correlation_profile(bank);
  const auto dist = msd_matrix(bank);
  std::vector<std::size_t> native(bank.size());
  std::iota(native.begin(), native.end(), 0);
  r.native_tour_length = tour_length(dist, native);
  r.two_opt_tour_length = tour_length(dist, r.tour);
  return r;
}

inline nlohmann::json to_json(const OrderReport& r) {
  nlohmann::json offsets = nlohmann::json::array();
  for (std::size_t i = 0; i < r.correlation.size(); ++i) offsets.push_back(offset_of(i, r.correlation.size()));
  return {{"filters", r.tour.size()},
          {"all_pair_msd", r.metric.all_pair_msd},
          {"adjacent_pair_msd", r.metric.adjacent_pair_msd},
          {"percent_reduction", r.metric.percent_reduction},
          {"threshold", r.threshold},
          {"tour", r.tour},
          {"native_tour_length", r.native_tour_length},
          {"two_opt_tour_length", r.two_opt_tour_length},
          {"correlation_offsets", offsets},
          {"correlation_profile", r.correlation}};
}

}  // namespace semlc
