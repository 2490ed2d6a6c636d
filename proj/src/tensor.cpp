#include "leanres/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>
#include <stdexcept>

namespace leanres {

std::string Shape4::str() const {
  std::ostringstream os;
  os << n << "x" << c << "x" << h << "x" << w;
  return os.str();
}

std::string Shape5::str() const {
  std::ostringstream os;
  os << n << "x" << c << "x" << d << "x" << h << "x" << w;
  return os.str();
}

template <typename T>
Tensor4<T>::Tensor4(Shape4 shape, T fill) : shape_(shape) {
  if (shape.n == 0 || shape.c == 0 || shape.h == 0 || shape.w == 0)
    throw std::invalid_argument("Tensor4: every dimension must be >= 1, got " + shape.str());
  data_.assign(shape.size(), fill);
}

template <typename T>
Tensor5<T>::Tensor5(Shape5 shape, T fill) : shape_(shape) {
  if (shape.n == 0 || shape.c == 0 || shape.d == 0 || shape.h == 0 || shape.w == 0)
    throw std::invalid_argument("Tensor5: every dimension must be >= 1, got " + shape.str());
  data_.assign(shape.size(), fill);
}

template <typename T>
Tensor4<T> pad2d(const Tensor4<T>& x, std::size_t pad) {
  if (pad == 0) return x;
  const auto& s = x.shape();
  Tensor4<T> out(s.n, s.c, s.h + 2 * pad, s.w + 2 * pad);
  for (std::size_t n = 0; n < s.n; ++n)
    for (std::size_t c = 0; c < s.c; ++c) {
      const T* src = x.plane(n, c);
      T* dst = out.plane(n, c);
      for (std::size_t y = 0; y < s.h; ++y)
        std::copy_n(src + y * s.w, s.w, dst + (y + pad) * out.width() + pad);
    }
  return out;
}

template <typename T>
Tensor4<T> crop2d(const Tensor4<T>& x, std::size_t pad) {
  if (pad == 0) return x;
  const auto& s = x.shape();
  if (s.h <= 2 * pad || s.w <= 2 * pad)
    throw std::invalid_argument("crop2d: crop of " + std::to_string(pad) + " leaves no pixels in " + s.str());
  Tensor4<T> out(s.n, s.c, s.h - 2 * pad, s.w - 2 * pad);
  for (std::size_t n = 0; n < s.n; ++n)
    for (std::size_t c = 0; c < s.c; ++c) {
      const T* src = x.plane(n, c);
      T* dst = out.plane(n, c);
      for (std::size_t y = 0; y < out.height(); ++y)
        std::copy_n(src + (y + pad) * s.w + pad, out.width(), dst + y * out.width());
    }
  return out;
}

namespace {

template <typename T>
double max_abs_diff_span(std::span<const T> a, std::span<const T> b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i]));
    if (d > m || std::isnan(d)) m = d;
  }
  return m;
}

}  // namespace

template <typename T>
double max_abs_diff(const Tensor4<T>& a, const Tensor4<T>& b) {
  if (!(a.shape() == b.shape()))
    throw std::invalid_argument("max_abs_diff: shape mismatch " + a.shape().str() + " vs " + b.shape().str());
  return max_abs_diff_span(a.data(), b.data());
}

template <typename T>
double max_abs_diff(const Tensor5<T>& a, const Tensor5<T>& b) {
  if (!(a.shape() == b.shape()))
    throw std::invalid_argument("max_abs_diff: shape mismatch " + a.shape().str() + " vs " + b.shape().str());
  return max_abs_diff_span(a.data(), b.data());
}

template <typename T>
void seeded_fill(std::span<T> out, std::uint64_t seed, Distribution dist) {
  if (!(dist.scale > 0.0)) throw std::invalid_argument("seeded_fill: distribution scale must be > 0");
  std::mt19937_64 gen(seed);
  if (dist.kind == Distribution::Kind::uniform) {
    // 53 random mantissa bits mapped to [-s, s).
    for (auto& v : out) {
      const double u = static_cast<double>(gen() >> 11) * 0x1.0p-53;
      v = static_cast<T>((2.0 * u - 1.0) * dist.scale);
    }
  } else {
    std::normal_distribution<double> normal(0.0, dist.scale);
    for (auto& v : out) v = static_cast<T>(normal(gen));
  }
}

template <typename T>
Tensor4<T> seeded_fill(Shape4 shape, std::uint64_t seed, Distribution dist) {
  Tensor4<T> out(shape);
  seeded_fill<T>(out.data(), seed, dist);
  return out;
}

template <typename T>
Tensor5<T> seeded_fill(Shape5 shape, std::uint64_t seed, Distribution dist) {
  Tensor5<T> out(shape);
  seeded_fill<T>(out.data(), seed, dist);
  return out;
}

template <typename T>
double inner_product(std::span<const T> a, std::span<const T> b) {
  if (a.size() != b.size()) throw std::invalid_argument("inner_product: length mismatch");
  long double acc = 0.0L;
  for (std::size_t i = 0; i < a.size(); ++i) acc += static_cast<long double>(a[i]) * b[i];
  return static_cast<double>(acc);
}

#define LEANRES_INSTANTIATE(T)                                                         \
  template class Tensor4<T>;                                                           \
  template class Tensor5<T>;                                                           \
  template Tensor4<T> pad2d(const Tensor4<T>&, std::size_t);                           \
  template Tensor4<T> crop2d(const Tensor4<T>&, std::size_t);                          \
  template double max_abs_diff(const Tensor4<T>&, const Tensor4<T>&);                  \
  template double max_abs_diff(const Tensor5<T>&, const Tensor5<T>&);                  \
  template void seeded_fill(std::span<T>, std::uint64_t, Distribution);                \
  template Tensor4<T> seeded_fill(Shape4, std::uint64_t, Distribution);                \
  template Tensor5<T> seeded_fill(Shape5, std::uint64_t, Distribution);                \
  template double inner_product(std::span<const T>, std::span<const T>);

LEANRES_INSTANTIATE(float)
LEANRES_INSTANTIATE(double)

}  // namespace leanres
