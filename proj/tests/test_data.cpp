#include <algorithm>
#include <filesystem>
#include <fstream>
#include <random>

#include "doctest.h"
#include "leanres/data.hpp"

using namespace leanres;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() / ("leanres_data_" + std::to_string(std::random_device{}()));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

void write(const fs::path& p, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(p, std::ios::binary);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

std::uint8_t pixel(std::size_t r, std::size_t k) { return static_cast<std::uint8_t>((r * 131 + k * 7) % 256); }

// Records with `label_bytes` leading label bytes (the last is the class) and
// a known pixel pattern.
std::vector<std::uint8_t> cifar_records(std::size_t n, std::size_t label_bytes, const std::vector<int>& labels) {
  std::vector<std::uint8_t> b;
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t l = 0; l + 1 < label_bytes; ++l) b.push_back(static_cast<std::uint8_t>(19));
    b.push_back(static_cast<std::uint8_t>(labels[r]));
    for (std::size_t k = 0; k < 3072; ++k) b.push_back(pixel(r, k));
  }
  return b;
}

}  // namespace

TEST_CASE("cifar-10 reader") {
  TempDir tmp;
  const std::vector<int> labels{7, 0, 3};
  const auto bytes = cifar_records(3, 1, labels);
  CHECK(bytes.size() == 9219);
  write(tmp.path / "b.bin", bytes);
  const auto d = read_cifar_file(tmp.path / "b.bin", 1, 10);
  REQUIRE(d.size() == 3);
  CHECK(d.labels == labels);
  CHECK(d.class_count == 10);
  // Record i in the file is sample i in memory, R, G, B planes row-major.
  for (std::size_t r = 0; r < 3; ++r)
    for (std::size_t k = 0; k < 3072; k += 97) {
      const std::size_t c = k / 1024, y = (k % 1024) / 32, x = k % 32;
      CHECK(d.images(r, c, y, x) == static_cast<float>(pixel(r, k)) / 255.0f);
    }

  auto cut = bytes;
  cut.resize(bytes.size() - 10);
  write(tmp.path / "cut.bin", cut);
  CHECK_THROWS_AS(read_cifar_file(tmp.path / "cut.bin", 1, 10), std::runtime_error);
  std::string message;
  try {
    read_cifar_file(tmp.path / "b.bin", 1, 10, 10000);
  } catch (const std::runtime_error& e) {
    message = e.what();
  }
  CHECK(message.find("b.bin") != std::string::npos);
  CHECK(message.find("30730000") != std::string::npos);

  auto bad = bytes;
  bad[0] = 12;
  write(tmp.path / "bad.bin", bad);
  CHECK_THROWS_AS(read_cifar_file(tmp.path / "bad.bin", 1, 10), std::runtime_error);
  CHECK_THROWS_AS(read_cifar_file(tmp.path / "missing.bin", 1, 10), std::runtime_error);
}

TEST_CASE("cifar-10 directory, standardization") {
  TempDir tmp;
  for (int b = 1; b <= 5; ++b)
    write(tmp.path / ("data_batch_" + std::to_string(b) + ".bin"), cifar_records(4, 1, {b, 1, 2, 3}));
  write(tmp.path / "test_batch.bin", cifar_records(2, 1, {9, 8}));
  LoadOptions opts;
  opts.strict_sizes = false;
  const auto split = load_cifar10(tmp.path, opts);
  CHECK(split.train.size() == 20);
  CHECK(split.test.size() == 2);
  CHECK(split.train.labels[4] == 2);
  const auto stats = channel_stats(split.train.images);
  for (std::size_t c = 0; c < 3; ++c) {
    CHECK(std::abs(stats.mean[c]) <= 1e-6);
    CHECK(std::abs(stats.stddev[c] * stats.stddev[c] - 1.0) <= 1e-3);
  }
  CHECK_THROWS_AS(load_cifar10(tmp.path), std::runtime_error);  // strict sizes
  fs::remove(tmp.path / "data_batch_3.bin");
  CHECK_THROWS_AS(load_cifar10(tmp.path, opts), std::runtime_error);
}

TEST_CASE("cifar-100 uses the fine label") {
  TempDir tmp;
  const auto bytes = cifar_records(3, 2, {55, 99, 0});
  CHECK(bytes.size() == 3 * 3074);
  write(tmp.path / "train.bin", bytes);
  write(tmp.path / "test.bin", cifar_records(1, 2, {42}));
  LoadOptions opts;
  opts.strict_sizes = false;
  opts.standardize = false;
  const auto split = load_cifar100(tmp.path, opts);
  CHECK(split.train.labels == std::vector<int>{55, 99, 0});
  CHECK(split.train.class_count == 100);
  CHECK(split.train.images(1, 2, 31, 31) == static_cast<float>(pixel(1, 3071)) / 255.0f);
  auto cut = bytes;
  cut.pop_back();
  write(tmp.path / "train.bin", cut);
  CHECK_THROWS_AS(load_cifar100(tmp.path, opts), std::runtime_error);
}

TEST_CASE("stl-10 reader") {
  TempDir tmp;
  constexpr std::size_t side = 96, rec = 3 * side * side;
  CHECK(rec == 27648);
  std::vector<std::uint8_t> pix(2 * rec);
  for (std::size_t i = 0; i < pix.size(); ++i) pix[i] = static_cast<std::uint8_t>((i * 13) % 251);
  write(tmp.path / "x.bin", pix);
  write(tmp.path / "y.bin", {1, 10});
  const auto d = read_stl10_files(tmp.path / "x.bin", tmp.path / "y.bin");
  CHECK(d.labels == std::vector<int>{0, 9});
  // Column-major planes: byte (c, x, y) at c*96*96 + x*96 + y.
  const std::size_t c = 1, x = 5, y = 70;
  CHECK(d.images(1, c, y, x) == static_cast<float>(pix[rec + c * side * side + x * side + y]) / 255.0f);

  write(tmp.path / "y0.bin", {0, 3});
  CHECK_THROWS_AS(read_stl10_files(tmp.path / "x.bin", tmp.path / "y0.bin"), std::runtime_error);
  pix.resize(pix.size() - 1);
  write(tmp.path / "x.bin", pix);
  CHECK_THROWS_AS(read_stl10_files(tmp.path / "x.bin", tmp.path / "y.bin"), std::runtime_error);
}

TEST_CASE("take_first and gather") {
  const auto d = synthetic_quadrants(50, 8, 1);
  const auto first = take_first(d, 10);
  CHECK(first.size() == 10);
  const std::vector<std::size_t> idx{4, 0, 4};
  const auto g = gather(d, idx);
  CHECK(g.labels == std::vector<int>{d.labels[4], d.labels[0], d.labels[4]});
  CHECK(g.images(2, 1, 3, 3) == d.images(4, 1, 3, 3));
  const std::vector<std::size_t> oob{50};
  CHECK_THROWS_AS(gather(d, oob), std::out_of_range);
}

TEST_CASE("augmentation") {
  const auto d = synthetic_quadrants(20, 16, 2);
  SUBCASE("flip is an involution") {
    auto b = d.images;
    flip_horizontal(b, 3);
    CHECK(b(3, 0, 2, 0) == d.images(3, 0, 2, 15));
    flip_horizontal(b, 3);
    CHECK(max_abs_diff(b, d.images) == 0.0);
  }
  SUBCASE("disabled is the identity") {
    AugmentOptions off;
    off.enabled = false;
    std::mt19937_64 rng(1);
    CHECK(max_abs_diff(augment(d.images, rng, off), d.images) == 0.0);
  }
  SUBCASE("shapes never change") {
    std::mt19937_64 rng(2);
    bool changed = false;
    for (int k = 0; k < 1000; ++k) {
      const auto a = augment(d.images, rng);
      CHECK(a.shape() == d.images.shape());
      changed = changed || max_abs_diff(a, d.images) > 0;
    }
    CHECK(changed);
  }
  SUBCASE("same rng state gives the same batch") {
    std::mt19937_64 r1(3), r2(3);
    CHECK(max_abs_diff(augment(d.images, r1), augment(d.images, r2)) == 0.0);
  }
}

TEST_CASE("synthetic quadrants") {
  const auto d = synthetic_quadrants(1000, 16, 5);
  std::vector<int> counts(10);
  for (int l : d.labels) ++counts[static_cast<std::size_t>(l)];
  for (int c : counts) CHECK(c == 100);
  CHECK(d.images.shape() == Shape4{1000, 3, 16, 16});

  // Class 0: top-left cell of the 2 x 5 grid is brightest on average.
  std::vector<double> cell(10);
  for (std::size_t n = 0; n < d.size(); ++n) {
    if (d.labels[n] != 0) continue;
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t y = 0; y < 16; ++y)
        for (std::size_t x = 0; x < 15; ++x) cell[(y / 8) * 5 + x / 3] += d.images(n, c, y, x);
  }
  CHECK(std::max_element(cell.begin(), cell.end()) == cell.begin());

  const auto again = synthetic_quadrants(1000, 16, 5);
  CHECK(again.labels == d.labels);
  CHECK(max_abs_diff(again.images, d.images) == 0.0);
  CHECK_THROWS_AS(synthetic_quadrants(10, 7, 1), std::invalid_argument);
}

TEST_CASE("synthetic task is learnable by 5-nearest-neighbours") {
  const auto train = synthetic_quadrants(1000, 16, 6), test = synthetic_quadrants(200, 16, 7);
  const std::size_t dim = 3 * 16 * 16;
  std::size_t correct = 0;
  for (std::size_t q = 0; q < test.size(); ++q) {
    std::vector<std::pair<double, int>> dist;
    const float* a = test.images.plane(q, 0);
    for (std::size_t n = 0; n < train.size(); ++n) {
      const float* b = train.images.plane(n, 0);
      double s = 0;
      for (std::size_t k = 0; k < dim; ++k) s += (a[k] - b[k]) * (a[k] - b[k]);
      dist.emplace_back(s, train.labels[n]);
    }
    std::partial_sort(dist.begin(), dist.begin() + 5, dist.end());
    std::vector<int> votes(10);
    for (std::size_t k = 0; k < 5; ++k) ++votes[static_cast<std::size_t>(dist[k].second)];
    correct += std::max_element(votes.begin(), votes.end()) - votes.begin() == test.labels[q];
  }
  CHECK(static_cast<double>(correct) / static_cast<double>(test.size()) >= 0.8);
}
