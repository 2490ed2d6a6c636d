#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <span>
#include <vector>

#include "leanres/tensor.hpp"

namespace leanres {

struct LabeledImages {
  Tensor4<float> images;  // N x 3 x H x W
  std::vector<int> labels;
  std::size_t class_count = 0;

  std::size_t size() const { return labels.size(); }
  void validate() const;
};

struct DatasetSplit {
  LabeledImages train, test;
};

struct LoadOptions {
  // Standardize every channel with train-split statistics after scaling to [0, 1].
  bool standardize = true;
  // Require the published record counts per file; when false any whole
  // number of records is accepted (small crafted files).
  bool strict_sizes = true;
};

// One CIFAR binary file: records of `label_bytes` label bytes + 3072 pixel
// bytes (R, G, B planes of 32x32). The last label byte is the class index.
// Pixels are scaled to [0, 1]. expected_records == 0 accepts any count.
LabeledImages read_cifar_file(const std::filesystem::path& path, std::size_t label_bytes, std::size_t class_count,
                              std::size_t expected_records = 0);

DatasetSplit load_cifar10(const std::filesystem::path& dir, const LoadOptions& opts = {});
DatasetSplit load_cifar100(const std::filesystem::path& dir, const LoadOptions& opts = {});
DatasetSplit load_stl10(const std::filesystem::path& dir, const LoadOptions& opts = {});

// STL-10 image file (3 x 96 x 96 column-major planes) plus 1-based label file.
LabeledImages read_stl10_files(const std::filesystem::path& images, const std::filesystem::path& labels,
                               std::size_t expected_records = 0);

struct ChannelStats {
  std::vector<double> mean, stddev;
};

ChannelStats channel_stats(const Tensor4<float>& images);
void standardize(Tensor4<float>& images, const ChannelStats& stats);

LabeledImages take_first(const LabeledImages& data, std::size_t count);
LabeledImages gather(const LabeledImages& data, std::span<const std::size_t> indices);

struct AugmentOptions {
  bool enabled = true;
  double flip_probability = 0.5;
  std::size_t pad = 4;
  double scale_min = 0.9, scale_max = 1.1;
};

// Mirrors image n of the batch in place.
void flip_horizontal(Tensor4<float>& batch, std::size_t n);

/// Per image: random resize by a factor in [scale_min, scale_max] (bilinear),
/// zero pad, random crop back to the original size, then a horizontal flip
/// with the configured probability. Shapes and labels never change.
Tensor4<float> augment(const Tensor4<float>& batch, std::mt19937_64& rng, const AugmentOptions& opts = {});

/// Ten-class desk-scale task: class k raises the intensity of cell
/// (k / 5, k % 5) of a 2 x 5 grid over Gaussian noise. Classes are balanced
/// and the sample order is shuffled by `seed`.
LabeledImages synthetic_quadrants(std::size_t n, std::size_t hw, std::uint64_t seed);

}  // namespace leanres
