#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace leanres {

struct Shape4 {
  std::size_t n = 0, c = 0, h = 0, w = 0;

  std::size_t size() const { return n * c * h * w; }
  bool operator==(const Shape4&) const = default;
  std::string str() const;
};

struct Shape5 {
  std::size_t n = 0, c = 0, d = 0, h = 0, w = 0;

  std::size_t size() const { return n * c * d * h * w; }
  bool operator==(const Shape5&) const = default;
  std::string str() const;
};

// Dense NCHW array. A default-constructed tensor is empty; any constructed
// shape must have every dimension >= 1.
template <typename T>
class Tensor4 {
 public:
  using value_type = T;

  Tensor4() = default;
  explicit Tensor4(Shape4 shape, T fill = T(0));
  Tensor4(std::size_t n, std::size_t c, std::size_t h, std::size_t w, T fill = T(0))
      : Tensor4(Shape4{n, c, h, w}, fill) {}

  const Shape4& shape() const { return shape_; }
  std::size_t batch() const { return shape_.n; }
  std::size_t channels() const { return shape_.c; }
  std::size_t height() const { return shape_.h; }
  std::size_t width() const { return shape_.w; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::span<T> data() { return data_; }
  std::span<const T> data() const { return data_; }
  std::vector<T>& storage() { return data_; }
  const std::vector<T>& storage() const { return data_; }

  T* plane(std::size_t n, std::size_t c) { return data_.data() + (n * shape_.c + c) * shape_.h * shape_.w; }
  const T* plane(std::size_t n, std::size_t c) const {
    return data_.data() + (n * shape_.c + c) * shape_.h * shape_.w;
  }

  T& operator()(std::size_t n, std::size_t c, std::size_t y, std::size_t x) {
    return data_[((n * shape_.c + c) * shape_.h + y) * shape_.w + x];
  }
  const T& operator()(std::size_t n, std::size_t c, std::size_t y, std::size_t x) const {
    return data_[((n * shape_.c + c) * shape_.h + y) * shape_.w + x];
  }

 private:
  Shape4 shape_{};
  std::vector<T> data_;
};

template <typename T>
class Tensor5 {
 public:
  using value_type = T;

  Tensor5() = default;
  explicit Tensor5(Shape5 shape, T fill = T(0));

  const Shape5& shape() const { return shape_; }
  std::size_t size() const { return data_.size(); }
  std::span<T> data() { return data_; }
  std::span<const T> data() const { return data_; }

  T& operator()(std::size_t n, std::size_t c, std::size_t z, std::size_t y, std::size_t x) {
    return data_[(((n * shape_.c + c) * shape_.d + z) * shape_.h + y) * shape_.w + x];
  }
  const T& operator()(std::size_t n, std::size_t c, std::size_t z, std::size_t y, std::size_t x) const {
    return data_[(((n * shape_.c + c) * shape_.d + z) * shape_.h + y) * shape_.w + x];
  }

 private:
  Shape5 shape_{};
  std::vector<T> data_;
};

struct Distribution {
  enum class Kind { uniform, normal };
  Kind kind = Kind::uniform;
  double scale = 1.0;  // half-width s for uniform(-s, s), sigma for normal(0, sigma)

  static Distribution uniform(double s) { return {Kind::uniform, s}; }
  static Distribution normal(double sigma) { return {Kind::normal, sigma}; }
};

// Row-major dense matrix for weight blocks (alpha, stencils, classifier).
template <typename T>
struct Matrix {
  std::size_t rows = 0, cols = 0;
  std::vector<T> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c, T fill = T(0)) : rows(r), cols(c), data(r * c, fill) {}

  T& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  const T& operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
  std::size_t size() const { return data.size(); }
  const T* row(std::size_t r) const { return data.data() + r * cols; }
  T* row(std::size_t r) { return data.data() + r * cols; }

  static Matrix identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = T(1);
    return m;
  }
};

template <typename T>
Tensor4<T> pad2d(const Tensor4<T>& x, std::size_t pad);

// Inverse of pad2d: drops `pad` pixels from every spatial border.
template <typename T>
Tensor4<T> crop2d(const Tensor4<T>& x, std::size_t pad);

template <typename T>
double max_abs_diff(const Tensor4<T>& a, const Tensor4<T>& b);
template <typename T>
double max_abs_diff(const Tensor5<T>& a, const Tensor5<T>& b);

template <typename T>
Tensor4<T> seeded_fill(Shape4 shape, std::uint64_t seed, Distribution dist);
template <typename T>
Tensor5<T> seeded_fill(Shape5 shape, std::uint64_t seed, Distribution dist);

// Fills an arbitrary buffer with the same generator seeded_fill uses.
template <typename T>
void seeded_fill(std::span<T> out, std::uint64_t seed, Distribution dist);

template <typename To, typename From>
Tensor4<To> tensor_cast(const Tensor4<From>& x) {
  Tensor4<To> out(x.shape());
  auto src = x.data();
  auto dst = out.data();
  for (std::size_t i = 0; i < src.size(); ++i) dst[i] = static_cast<To>(src[i]);
  return out;
}

template <typename T>
double inner_product(std::span<const T> a, std::span<const T> b);

}  // namespace leanres
