#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "thinner/tensor.hpp"

namespace thinner {

/// Labelled images, pixels in [0, 1]. images is [n x c x h x w].
struct Dataset {
  Tensor images;
  std::vector<int> labels;
  int classes = 0;

  std::size_t size() const { return labels.size(); }
  Shape sample_shape() const { return {images.dim(1), images.dim(2), images.dim(3)}; }

  /// Throws ValueError when the field invariants do not hold.
  void validate() const;
};

/// Copies the listed samples, in order, into a new dataset.
Dataset subset(const Dataset& data, std::span<const std::size_t> indices);

/// Batch tensor [k x c x h x w] and labels for the listed samples.
std::pair<Tensor, std::vector<int>> gather(const Dataset& data,
                                           std::span<const std::size_t> indices);

Dataset load_idx_images(const std::filesystem::path& images_path,
                        const std::filesystem::path& labels_path);

/// Writes unsigned-byte IDX files; pixels are quantized to round(255 * p).
/// Single-channel data is written as a 3-d image file, otherwise 4-d.
void write_idx(const Dataset& data, const std::filesystem::path& images_path,
               const std::filesystem::path& labels_path);

struct SyntheticTask {
  std::string name = "bars";  // "bars" or "blobs"
  std::size_t channels = 1;
  std::size_t height = 12;
  std::size_t width = 12;
  int classes = 2;
  double noise = 0.1;
};

/// Deterministic per (task, n, seed). Labels are balanced to within one sample.
///  bars:  class 0 = horizontal stripes, class 1 = vertical stripes (2 classes only).
///  blobs: each class is a Gaussian bump at a class-specific position.
Dataset generate_synthetic(const SyntheticTask& task, std::size_t n, std::uint64_t seed);

/// Seeded shuffle, then the first floor(n * fraction) samples go to the first part.
std::pair<Dataset, Dataset> split(const Dataset& data, double fraction, std::uint64_t seed);

/// One epoch of batches: a seeded Fisher-Yates permutation of [0, n) cut into
/// consecutive chunks of batch_size (the last one may be short).
std::vector<std::vector<std::size_t>> batches(std::size_t n, std::size_t batch_size,
                                              std::uint64_t seed);

}  // namespace thinner
