#pragma once

// Labelled datasets: IDX ingestion, synthetic blobs, and the DIVDIRDS container.
//
// DIVDIRDS layout (integers little-endian):
//   "DIVDIRDS", u32 version (1), u64 header length L, L bytes of JSON
//   {"count", "sample_shape", "classes", "meta"}, count*D binary64 features,
//   count u32 labels.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "json.hpp"
#include "divdir/tensor.hpp"

namespace divdir {

struct Dataset {
  Tensor x;                          // [n, D], features in [0,1]
  std::vector<std::size_t> labels;   // n entries in [0, classes)
  Shape sample_shape;                // [D] or [C,H,W]
  std::size_t classes = 0;

  std::size_t size() const { return labels.size(); }
  std::size_t features() const { return shape_numel(sample_shape); }

  /// Throws std::invalid_argument if shapes or labels are inconsistent.
  void validate() const;

  Dataset subset(std::span<const std::size_t> idx) const;
  Dataset head(std::size_t n) const;
  Tensor rows(std::span<const std::size_t> idx) const;
  std::vector<std::size_t> labels_at(std::span<const std::size_t> idx) const;
  /// Appends `other`, which must share sample_shape and classes.
  void append(const Dataset& other);
};

/// Reads an IDX image/label pair (0x00000803 / 0x00000801). Pixels are scaled by 1/255.
/// `limit` keeps only the first `limit` examples.
Dataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels,
                 std::optional<std::size_t> limit = std::nullopt);

void write_idx_images(const std::filesystem::path& path, std::span<const std::uint8_t> pixels, std::size_t count,
                      std::size_t rows, std::size_t cols);
void write_idx_labels(const std::filesystem::path& path, std::span<const std::uint8_t> labels);

/// Gaussian blobs in [0,1]^d, one blob per class, each blob truncated to a ball.
/// Blobs are pairwise disjoint whenever margin > 0, so two-class data is linearly
/// separable. Larger margin means tighter blobs.
Dataset gen_synthetic(std::size_t n, std::size_t d, std::size_t classes, std::uint64_t seed, double margin = 1.0);

void save_dataset(const std::filesystem::path& path, const Dataset& ds,
                  const nlohmann::json& meta = nlohmann::json::object());
Dataset load_dataset(const std::filesystem::path& path, nlohmann::json* meta = nullptr);

}  // namespace divdir
