#pragma once

// Test-only reference implementations. Deliberately written as plain index
// arithmetic over the definitions, sharing nothing with src/.

#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <stdexcept>
#include <vector>

#include "leanres/conv.hpp"
#include "leanres/tensor.hpp"

namespace oracle {

using leanres::Tensor4;

inline std::size_t half_up(std::size_t n, int s) { return s == 1 ? n : (n + 1) / 2; }

// Reads x(n, c, y, x) with zero padding outside the map.
template <typename T>
T at(const Tensor4<T>& t, std::size_t n, std::size_t c, long y, long x) {
  if (y < 0 || x < 0 || y >= static_cast<long>(t.height()) || x >= static_cast<long>(t.width())) return T(0);
  return t(n, c, static_cast<std::size_t>(y), static_cast<std::size_t>(x));
}

// Lean convolution straight from the output formula.
template <typename T>
Tensor4<T> lean(const Tensor4<T>& x, const leanres::LeanConvWeights<T>& w) {
  const std::size_t co = w.alpha.rows, ci = w.alpha.cols, d = co < ci ? co : ci;
  Tensor4<T> y(x.batch(), co, half_up(x.height(), w.stride), half_up(x.width(), w.stride));
  for (std::size_t n = 0; n < y.batch(); ++n)
    for (std::size_t o = 0; o < co; ++o)
      for (std::size_t r = 0; r < y.height(); ++r)
        for (std::size_t c = 0; c < y.width(); ++c) {
          const long py = static_cast<long>(r) * w.stride, px = static_cast<long>(c) * w.stride;
          T v = 0;
          for (std::size_t i = 0; i < ci; ++i) v += w.alpha(o, i) * at(x, n, i, py, px);
          if (o < d)
            v += w.stencil(o, 0) * at(x, n, o, py - 1, px) + w.stencil(o, 1) * at(x, n, o, py, px - 1) +
                 w.stencil(o, 2) * at(x, n, o, py, px + 1) + w.stencil(o, 3) * at(x, n, o, py + 1, px);
          y(n, o, r, c) = v;
        }
  return y;
}

// Six nested loops (plus batch), 3x3, zero padding 1.
template <typename T>
Tensor4<T> dense(const Tensor4<T>& x, const leanres::DenseConvWeights<T>& w) {
  Tensor4<T> y(x.batch(), w.c_out, half_up(x.height(), w.stride), half_up(x.width(), w.stride));
  for (std::size_t n = 0; n < y.batch(); ++n)
    for (std::size_t o = 0; o < w.c_out; ++o)
      for (std::size_t r = 0; r < y.height(); ++r)
        for (std::size_t c = 0; c < y.width(); ++c) {
          T v = 0;
          for (std::size_t i = 0; i < w.c_in; ++i)
            for (long ky = 0; ky < 3; ++ky)
              for (long kx = 0; kx < 3; ++kx)
                v += w.at(o, i, static_cast<std::size_t>(ky), static_cast<std::size_t>(kx)) *
                     at(x, n, i, static_cast<long>(r) * w.stride + ky - 1, static_cast<long>(c) * w.stride + kx - 1);
          y(n, o, r, c) = v;
        }
  return y;
}

// Central difference of f with respect to v[i].
inline double central(std::vector<double>& v, std::size_t i, const std::function<double()>& f, double h = 1e-5) {
  const double keep = v[i];
  v[i] = keep + h;
  const double up = f();
  v[i] = keep - h;
  const double down = f();
  v[i] = keep;
  return (up - down) / (2 * h);
}

// max_i |a_i - n_i| / max_i |n_i| over all entries.
inline double fd_rel_error(std::vector<double>& v, std::span<const double> analytic,
                           const std::function<double()>& f) {
  double diff = 0, scale = 0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    const double num = central(v, i, f);
    diff = std::max(diff, std::abs(num - analytic[i]));
    scale = std::max(scale, std::abs(num));
  }
  return scale > 0 ? diff / scale : diff;
}

template <typename T>
double dot(const Tensor4<T>& a, const Tensor4<T>& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += static_cast<double>(a.data()[i]) * static_cast<double>(b.data()[i]);
  return s;
}

template <typename T>
Tensor4<T> random(leanres::Shape4 s, std::uint64_t seed, double scale = 1.0) {
  std::mt19937_64 g(seed);
  std::uniform_real_distribution<double> u(-scale, scale);
  Tensor4<T> t(s);
  for (T& v : t.data()) v = static_cast<T>(u(g));
  return t;
}

template <typename T>
void randomize(std::span<T> v, std::uint64_t seed, double scale = 1.0) {
  std::mt19937_64 g(seed);
  std::uniform_real_distribution<double> u(-scale, scale);
  for (T& e : v) e = static_cast<T>(u(g));
}

}  // namespace oracle
