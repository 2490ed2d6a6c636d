#include "leanres/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <numeric>
#include <stdexcept>
#include <string>

namespace leanres {

namespace {

constexpr std::size_t kCifarSide = 32;
constexpr std::size_t kCifarPixels = 3 * kCifarSide * kCifarSide;
constexpr std::size_t kStlSide = 96;
constexpr std::size_t kStlPixels = 3 * kStlSide * kStlSide;

std::vector<std::uint8_t> read_all(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void check_size(const std::filesystem::path& path, std::size_t actual, std::size_t record, std::size_t expected) {
  if (expected != 0) {
    if (actual != expected * record)
      throw std::runtime_error(path.string() + ": file has " + std::to_string(actual) + " bytes, expected " +
                               std::to_string(expected * record) + " (" + std::to_string(expected) + " records of " +
                               std::to_string(record) + " bytes)");
  } else if (actual == 0 || actual % record != 0) {
    throw std::runtime_error(path.string() + ": file has " + std::to_string(actual) +
                             " bytes, not a whole number of " + std::to_string(record) + "-byte records");
  }
}

LabeledImages concat(std::vector<LabeledImages> parts) {
  std::size_t total = 0;
  for (const auto& p : parts) total += p.size();
  const Shape4 s = parts.front().images.shape();
  LabeledImages out;
  out.images = Tensor4<float>(total, s.c, s.h, s.w);
  out.class_count = parts.front().class_count;
  auto dst = out.images.data().begin();
  for (auto& p : parts) {
    dst = std::copy(p.images.data().begin(), p.images.data().end(), dst);
    out.labels.insert(out.labels.end(), p.labels.begin(), p.labels.end());
  }
  return out;
}

DatasetSplit finish(LabeledImages train, LabeledImages test, const LoadOptions& opts) {
  if (opts.standardize) {
    const ChannelStats stats = channel_stats(train.images);
    standardize(train.images, stats);
    standardize(test.images, stats);
  }
  return {std::move(train), std::move(test)};
}

}  // namespace

void LabeledImages::validate() const {
  if (labels.size() != images.batch())
    throw std::invalid_argument("LabeledImages: " + std::to_string(labels.size()) + " labels for " +
                                std::to_string(images.batch()) + " images");
  for (int l : labels)
    if (l < 0 || static_cast<std::size_t>(l) >= class_count)
      throw std::invalid_argument("LabeledImages: label " + std::to_string(l) + " outside [0, " +
                                  std::to_string(class_count) + ")");
}

LabeledImages read_cifar_file(const std::filesystem::path& path, std::size_t label_bytes, std::size_t class_count,
                              std::size_t expected_records) {
  const std::size_t record = label_bytes + kCifarPixels;
  const auto bytes = read_all(path);
  check_size(path, bytes.size(), record, expected_records);
  const std::size_t count = bytes.size() / record;

  LabeledImages out;
  out.class_count = class_count;
  out.images = Tensor4<float>(count, 3, kCifarSide, kCifarSide);
  out.labels.resize(count);
  for (std::size_t r = 0; r < count; ++r) {
    const std::uint8_t* rec = bytes.data() + r * record;
    const int label = rec[label_bytes - 1];
    if (static_cast<std::size_t>(label) >= class_count)
      throw std::runtime_error(path.string() + ": record " + std::to_string(r) + " has label " +
                               std::to_string(label) + " >= " + std::to_string(class_count));
    out.labels[r] = label;
    float* dst = out.images.plane(r, 0);
    for (std::size_t k = 0; k < kCifarPixels; ++k) dst[k] = static_cast<float>(rec[label_bytes + k]) / 255.0f;
  }
  return out;
}

DatasetSplit load_cifar10(const std::filesystem::path& dir, const LoadOptions& opts) {
  const std::size_t per_file = opts.strict_sizes ? 10000 : 0;
  std::vector<LabeledImages> parts;
  for (int b = 1; b <= 5; ++b)
    parts.push_back(read_cifar_file(dir / ("data_batch_" + std::to_string(b) + ".bin"), 1, 10, per_file));
  LabeledImages test = read_cifar_file(dir / "test_batch.bin", 1, 10, per_file);
  return finish(concat(std::move(parts)), std::move(test), opts);
}

DatasetSplit load_cifar100(const std::filesystem::path& dir, const LoadOptions& opts) {
  LabeledImages train = read_cifar_file(dir / "train.bin", 2, 100, opts.strict_sizes ? 50000 : 0);
  LabeledImages test = read_cifar_file(dir / "test.bin", 2, 100, opts.strict_sizes ? 10000 : 0);
  return finish(std::move(train), std::move(test), opts);
}

LabeledImages read_stl10_files(const std::filesystem::path& images, const std::filesystem::path& labels,
                               std::size_t expected_records) {
  const auto pix = read_all(images);
  check_size(images, pix.size(), kStlPixels, expected_records);
  const std::size_t count = pix.size() / kStlPixels;
  const auto lab = read_all(labels);
  check_size(labels, lab.size(), 1, count);

  LabeledImages out;
  out.class_count = 10;
  out.images = Tensor4<float>(count, 3, kStlSide, kStlSide);
  out.labels.resize(count);
  for (std::size_t r = 0; r < count; ++r) {
    const int label = static_cast<int>(lab[r]) - 1;
    if (label < 0 || label >= 10)
      throw std::runtime_error(labels.string() + ": record " + std::to_string(r) + " has label " +
                               std::to_string(lab[r]) + " outside 1..10");
    out.labels[r] = label;
    const std::uint8_t* rec = pix.data() + r * kStlPixels;
    for (std::size_t c = 0; c < 3; ++c) {
      const std::uint8_t* src = rec + c * kStlSide * kStlSide;
      for (std::size_t x = 0; x < kStlSide; ++x)
        for (std::size_t y = 0; y < kStlSide; ++y)
          out.images(r, c, y, x) = static_cast<float>(src[x * kStlSide + y]) / 255.0f;
    }
  }
  return out;
}

DatasetSplit load_stl10(const std::filesystem::path& dir, const LoadOptions& opts) {
  LabeledImages train = read_stl10_files(dir / "train_X.bin", dir / "train_y.bin", opts.strict_sizes ? 5000 : 0);
  LabeledImages test = read_stl10_files(dir / "test_X.bin", dir / "test_y.bin", opts.strict_sizes ? 8000 : 0);
  return finish(std::move(train), std::move(test), opts);
}

ChannelStats channel_stats(const Tensor4<float>& images) {
  const std::size_t C = images.channels(), plane = images.height() * images.width();
  const double count = static_cast<double>(images.batch() * plane);
  ChannelStats s{std::vector<double>(C), std::vector<double>(C)};
  for (std::size_t c = 0; c < C; ++c) {
    double sum = 0.0;
    for (std::size_t n = 0; n < images.batch(); ++n) {
      const float* p = images.plane(n, c);
      for (std::size_t k = 0; k < plane; ++k) sum += p[k];
    }
    const double mu = sum / count;
    double sq = 0.0;
    for (std::size_t n = 0; n < images.batch(); ++n) {
      const float* p = images.plane(n, c);
      for (std::size_t k = 0; k < plane; ++k) sq += (p[k] - mu) * (p[k] - mu);
    }
    s.mean[c] = mu;
    s.stddev[c] = std::sqrt(sq / count);
  }
  return s;
}

void standardize(Tensor4<float>& images, const ChannelStats& stats) {
  if (stats.mean.size() != images.channels()) throw std::invalid_argument("standardize: channel count mismatch");
  const std::size_t plane = images.height() * images.width();
  for (std::size_t n = 0; n < images.batch(); ++n)
    for (std::size_t c = 0; c < images.channels(); ++c) {
      const double mu = stats.mean[c];
      const double inv = stats.stddev[c] > 0.0 ? 1.0 / stats.stddev[c] : 1.0;
      float* p = images.plane(n, c);
      for (std::size_t k = 0; k < plane; ++k) p[k] = static_cast<float>((p[k] - mu) * inv);
    }
}

LabeledImages take_first(const LabeledImages& data, std::size_t count) {
  std::vector<std::size_t> idx(std::min(count, data.size()));
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  return gather(data, idx);
}

LabeledImages gather(const LabeledImages& data, std::span<const std::size_t> indices) {
  if (indices.empty()) throw std::invalid_argument("gather: empty index list");
  const Shape4 s = data.images.shape();
  LabeledImages out;
  out.class_count = data.class_count;
  out.images = Tensor4<float>(indices.size(), s.c, s.h, s.w);
  out.labels.reserve(indices.size());
  const std::size_t per = s.c * s.h * s.w;
  for (std::size_t k = 0; k < indices.size(); ++k) {
    if (indices[k] >= data.size()) throw std::out_of_range("gather: index out of range");
    std::copy_n(data.images.plane(indices[k], 0), per, out.images.plane(k, 0));
    out.labels.push_back(data.labels[indices[k]]);
  }
  return out;
}

void flip_horizontal(Tensor4<float>& batch, std::size_t n) {
  for (std::size_t c = 0; c < batch.channels(); ++c)
    for (std::size_t y = 0; y < batch.height(); ++y) {
      float* row = batch.plane(n, c) + y * batch.width();
      std::reverse(row, row + batch.width());
    }
}

Tensor4<float> augment(const Tensor4<float>& batch, std::mt19937_64& rng, const AugmentOptions& opts) {
  if (!opts.enabled) return batch;
  const std::size_t H = batch.height(), W = batch.width(), C = batch.channels();
  Tensor4<float> out(batch.shape());
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (std::size_t n = 0; n < batch.batch(); ++n) {
    const double scale = opts.scale_min + (opts.scale_max - opts.scale_min) * unit(rng);
    const auto sh = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(scale * static_cast<double>(H))));
    const auto sw = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(scale * static_cast<double>(W))));
    // Canvas = resized image centered in a zero border of `pad` (or more if
    // the resized image is smaller than the crop).
    const std::size_t ch = std::max(sh + 2 * opts.pad, H), cw = std::max(sw + 2 * opts.pad, W);
    const std::size_t top = (ch - sh) / 2, left = (cw - sw) / 2;
    std::uniform_int_distribution<std::size_t> oy_dist(0, ch - H), ox_dist(0, cw - W);
    const std::size_t oy = oy_dist(rng), ox = ox_dist(rng);
    const bool flip = unit(rng) < opts.flip_probability;

    const double ry = static_cast<double>(H) / static_cast<double>(sh);
    const double rx = static_cast<double>(W) / static_cast<double>(sw);
    for (std::size_t c = 0; c < C; ++c) {
      const float* src = batch.plane(n, c);
      float* dst = out.plane(n, c);
      for (std::size_t y = 0; y < H; ++y)
        for (std::size_t x = 0; x < W; ++x) {
          const auto cy = static_cast<std::ptrdiff_t>(y + oy) - static_cast<std::ptrdiff_t>(top);
          const auto cx = static_cast<std::ptrdiff_t>(x + ox) - static_cast<std::ptrdiff_t>(left);
          float v = 0.0f;
          if (cy >= 0 && cx >= 0 && cy < static_cast<std::ptrdiff_t>(sh) && cx < static_cast<std::ptrdiff_t>(sw)) {
            // Bilinear sample of the source at the resized pixel center.
            const double fy = std::clamp((static_cast<double>(cy) + 0.5) * ry - 0.5, 0.0, static_cast<double>(H - 1));
            const double fx = std::clamp((static_cast<double>(cx) + 0.5) * rx - 0.5, 0.0, static_cast<double>(W - 1));
            const auto y0 = static_cast<std::size_t>(fy), x0 = static_cast<std::size_t>(fx);
            const std::size_t y1 = std::min(y0 + 1, H - 1), x1 = std::min(x0 + 1, W - 1);
            const double wy = fy - static_cast<double>(y0), wx = fx - static_cast<double>(x0);
            v = static_cast<float>((1 - wy) * ((1 - wx) * src[y0 * W + x0] + wx * src[y0 * W + x1]) +
                                   wy * ((1 - wx) * src[y1 * W + x0] + wx * src[y1 * W + x1]));
          }
          dst[y * W + (flip ? W - 1 - x : x)] = v;
        }
    }
  }
  return out;
}

LabeledImages synthetic_quadrants(std::size_t n, std::size_t hw, std::uint64_t seed) {
  if (hw < 8) throw std::invalid_argument("synthetic_quadrants: hw must be >= 8");
  if (n == 0) throw std::invalid_argument("synthetic_quadrants: n must be positive");
  constexpr std::size_t kClasses = 10, kGridRows = 2, kGridCols = 5;
  std::mt19937_64 rng(seed);
  std::vector<int> labels(n);
  for (std::size_t i = 0; i < n; ++i) labels[i] = static_cast<int>(i % kClasses);
  std::shuffle(labels.begin(), labels.end(), rng);

  LabeledImages out;
  out.class_count = kClasses;
  out.images = Tensor4<float>(n, 3, hw, hw);
  out.labels = labels;
  std::normal_distribution<float> noise(0.0f, 0.5f);
  std::uniform_real_distribution<float> amp(0.8f, 1.2f);
  for (std::size_t i = 0; i < n; ++i) {
    const auto k = static_cast<std::size_t>(labels[i]);
    const std::size_t r0 = (k / kGridCols) * hw / kGridRows, r1 = (k / kGridCols + 1) * hw / kGridRows;
    const std::size_t c0 = (k % kGridCols) * hw / kGridCols, c1 = (k % kGridCols + 1) * hw / kGridCols;
    const float a = amp(rng);
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t y = 0; y < hw; ++y)
        for (std::size_t x = 0; x < hw; ++x) {
          const bool in_cell = y >= r0 && y < r1 && x >= c0 && x < c1;
          out.images(i, c, y, x) = noise(rng) + (in_cell ? a : 0.0f);
        }
  }
  return out;
}

}  // namespace leanres
