#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "semlc/error.hpp"
#include "semlc/tensor.hpp"

namespace semlc::net {

/// Images scaled to [0, 1], shape (N, C, H, W), with integer labels.
struct Dataset {
  Tensor images;
  std::vector<int> labels;
  std::size_t classes = 0;

  std::size_t size() const { return labels.size(); }

  /// Gathers the given sample indices into a batch.
  Dataset subset(std::span<const std::size_t> indices) const {
    const Shape& s = images.shape();
    Dataset out{Tensor({indices.size(), s.c, s.h, s.w}), {}, classes};
    out.labels.reserve(indices.size());
    for (std::size_t i = 0; i < indices.size(); ++i) {
      std::copy_n(images.data() + indices[i] * s.sample(), s.sample(), out.images.data() + i * s.sample());
      out.labels.push_back(labels[indices[i]]);
    }
    return out;
  }
};

namespace detail {

inline std::vector<unsigned char> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorKind::io, "cannot open '" + path.string() + "'");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline std::uint32_t big_endian_u32(const std::vector<unsigned char>& b, std::size_t at) {
  return (std::uint32_t{b[at]} << 24) | (std::uint32_t{b[at + 1]} << 16) | (std::uint32_t{b[at + 2]} << 8) |
         std::uint32_t{b[at + 3]};
}

}  // namespace detail

inline constexpr std::uint32_t kIdxImagesMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelsMagic = 0x00000801;

/// MNIST-style IDX pair. `limit` = 0 loads every record.
inline Dataset load_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path,
                        std::size_t limit = 0) {
  const auto img = detail::read_file(images_path);
  const auto lab = detail::read_file(labels_path);
  require(img.size() >= 16 && detail::big_endian_u32(img, 0) == kIdxImagesMagic, ErrorKind::data_format,
          "'" + images_path.string() + "' is not an IDX3 image file");
  require(lab.size() >= 8 && detail::big_endian_u32(lab, 0) == kIdxLabelsMagic, ErrorKind::data_format,
          "'" + labels_path.string() + "' is not an IDX1 label file");
  const std::size_t count = detail::big_endian_u32(img, 4);
  const std::size_t rows = detail::big_endian_u32(img, 8), cols = detail::big_endian_u32(img, 12);
  require(detail::big_endian_u32(lab, 4) == count, ErrorKind::data_format, "IDX image and label counts differ");
  require(img.size() == 16 + count * rows * cols && lab.size() == 8 + count, ErrorKind::data_format,
          "IDX payload size does not match its header");
  const std::size_t n = limit == 0 ? count : std::min(limit, count);
  Dataset d{Tensor({n, 1, rows, cols}), std::vector<int>(n), 10};
  for (std::size_t i = 0; i < n * rows * cols; ++i) d.images[i] = img[16 + i] / 255.0;
  for (std::size_t i = 0; i < n; ++i) {
    d.labels[i] = lab[8 + i];
    require(d.labels[i] < 10, ErrorKind::data_format, "IDX label out of range at record " + std::to_string(i));
  }
  return d;
}

inline constexpr std::size_t kCifarRecord = 1 + 3 * 32 * 32;

/// CIFAR-10 binary batches: per record one label byte then R, G, B planes.
inline Dataset load_cifar10(const std::vector<std::filesystem::path>& paths, std::size_t limit = 0) {
  std::vector<unsigned char> all;
  for (const auto& p : paths) {
    auto bytes = detail::read_file(p);
    require(bytes.size() % kCifarRecord == 0, ErrorKind::data_format,
            "'" + p.string() + "' is not a whole number of CIFAR-10 records");
    all.insert(all.end(), bytes.begin(), bytes.end());
  }
  const std::size_t count = all.size() / kCifarRecord;
  const std::size_t n = limit == 0 ? count : std::min(limit, count);
  Dataset d{Tensor({n, 3, 32, 32}), std::vector<int>(n), 10};
  for (std::size_t i = 0; i < n; ++i) {
    const unsigned char* rec = all.data() + i * kCifarRecord;
    require(rec[0] < 10, ErrorKind::data_format, "CIFAR-10 label out of range at record " + std::to_string(i));
    d.labels[i] = rec[0];
    for (std::size_t k = 0; k < kCifarRecord - 1; ++k) d.images[i * (kCifarRecord - 1) + k] = rec[1 + k] / 255.0;
  }
  return d;
}

/// Gaussian blobs around one random template image per class.
inline Dataset make_blobs(std::size_t count, std::size_t classes, Shape sample_shape, double noise,
                          std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  const std::size_t features = sample_shape.sample();
  std::vector<std::vector<double>> centers(classes, std::vector<double>(features));
  for (auto& c : centers)
    for (auto& v : c) v = normal(rng);
  Dataset d{Tensor({count, sample_shape.c, sample_shape.h, sample_shape.w}), std::vector<int>(count), classes};
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t label = i % classes;
    d.labels[i] = static_cast<int>(label);
    for (std::size_t k = 0; k < features; ++k) d.images[i * features + k] = centers[label][k] + noise * normal(rng);
  }
  return d;
}

}  // namespace semlc::net
