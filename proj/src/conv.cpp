#include "leanres/conv.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <stdexcept>
#include <string>

namespace leanres {

namespace {

using idx = std::ptrdiff_t;

// Neighbor offsets (dy, dx) in StencilTap order.
constexpr std::array<std::array<int, 2>, 4> kStencilOffsets{{{-1, 0}, {0, -1}, {0, 1}, {1, 0}}};

void check_stride(int stride, const char* who) {
  if (stride != 1 && stride != 2)
    throw std::invalid_argument(std::string(who) + ": stride must be 1 or 2, got " + std::to_string(stride));
}

struct Range {
  idx lo, hi;
};

// Output indices r in [0, out) with 0 <= stride*r + off < in.
inline Range valid_range(idx in, idx out, idx stride, idx off) {
  const idx lo = off < 0 ? (-off + stride - 1) / stride : 0;
  const idx top = in - 1 - off;
  const idx hi = top < 0 ? 0 : std::min(out, top / stride + 1);
  return {lo, std::max(lo, hi)};
}

struct PlaneGeom {
  idx h, w, ho, wo;
};

// out(ro, co) += a * x(S*ro + dy, S*co + dx) for ro in [r0, r1), zero padded.
template <typename T, int S>
inline void axpy_tap(const T* __restrict xp, const PlaneGeom& g, int dy, int dx, T a, T* __restrict out, idx r0,
                     idx r1) {
  const Range rows = valid_range(g.h, g.ho, S, dy);
  const Range cols = valid_range(g.w, g.wo, S, dx);
  const idx rlo = std::max(r0, rows.lo), rhi = std::min(r1, rows.hi);
  for (idx ro = rlo; ro < rhi; ++ro) {
    const T* __restrict src = xp + (S * ro + dy) * g.w + dx;
    T* __restrict dst = out + ro * g.wo;
    for (idx co = cols.lo; co < cols.hi; ++co) dst[co] += a * src[S * co];
  }
}

// Adjoint of axpy_tap: dx(S*ro + dy, S*co + dx) += a * grad(ro, co).
template <typename T, int S>
inline void scatter_tap(T* __restrict dxp, const PlaneGeom& g, int dy, int dx, T a, const T* __restrict grad) {
  const Range rows = valid_range(g.h, g.ho, S, dy);
  const Range cols = valid_range(g.w, g.wo, S, dx);
  for (idx ro = rows.lo; ro < rows.hi; ++ro) {
    T* __restrict dst = dxp + (S * ro + dy) * g.w + dx;
    const T* __restrict src = grad + ro * g.wo;
    for (idx co = cols.lo; co < cols.hi; ++co) dst[S * co] += a * src[co];
  }
}

// sum over (ro, co) of grad(ro, co) * x(S*ro + dy, S*co + dx).
template <typename T, int S>
inline T dot_tap(const T* __restrict xp, const PlaneGeom& g, int dy, int dx, const T* __restrict grad) {
  const Range rows = valid_range(g.h, g.ho, S, dy);
  const Range cols = valid_range(g.w, g.wo, S, dx);
  T acc = T(0);
  for (idx ro = rows.lo; ro < rows.hi; ++ro) {
    const T* __restrict src = xp + (S * ro + dy) * g.w + dx;
    const T* __restrict gr = grad + ro * g.wo;
    T row = T(0);
    for (idx co = cols.lo; co < cols.hi; ++co) row += gr[co] * src[S * co];
    acc += row;
  }
  return acc;
}

constexpr idx kOutChannelTile = 4;
constexpr idx kTileElements = 2048;
constexpr idx kStrip = 16;

idx row_tile(idx w, idx ho) { return std::clamp<idx>(kTileElements / std::max<idx>(w, 1), 1, ho); }

// One output tile: up to kOutChannelTile channels starting at o0, output row
// ro, output columns [c0, c0 + pw). Accumulates in a local block over every
// input channel; on the diagonal the four stencil taps are added in the same
// iteration, from the rows the 1x1 term has just read.
// PW > 0 fixes the strip width and a full channel tile at compile time;
// PW == 0 is the general edge case.
template <typename T, int S, int PW>
inline void mix_tile(const Tensor4<T>& x, idx n, const Matrix<T>& alpha, const Matrix<T>* stencil, idx d, idx o0,
                     idx ot_, idx ro, idx c0, idx pw_, T* const* out_rows) {
  const idx ot = PW ? kOutChannelTile : ot_;
  const idx pw = PW ? PW : pw_;
  const idx h = static_cast<idx>(x.height()), w = static_cast<idx>(x.width());
  const idx c_in = static_cast<idx>(alpha.cols);
  const idx y = S * ro, x0 = S * c0;
  alignas(64) T acc[kOutChannelTile][kStrip] = {};
  const idx diag_lo = o0, diag_hi = std::min(o0 + ot, d);
  for (idx i = 0; i < c_in; ++i) {
    const T* __restrict xr = x.plane(static_cast<std::size_t>(n), static_cast<std::size_t>(i)) + y * w + x0;
    alignas(64) T xv[kStrip];
    for (idx p = 0; p < pw; ++p) xv[p] = xr[S * p];
    for (idx t = 0; t < ot; ++t) {
      const T a = alpha(static_cast<std::size_t>(o0 + t), static_cast<std::size_t>(i));
      for (idx p = 0; p < pw; ++p) acc[t][p] += a * xv[p];
    }
    if (i >= diag_lo && i < diag_hi) {
      T* __restrict at = acc[i - o0];
      const T* st = stencil->row(static_cast<std::size_t>(i));
      if (y > 0) {
        const T* __restrict up = xr - w;
        for (idx p = 0; p < pw; ++p) at[p] += st[kTop] * up[S * p];
      }
      if (y + 1 < h) {
        const T* __restrict dn = xr + w;
        for (idx p = 0; p < pw; ++p) at[p] += st[kBottom] * dn[S * p];
      }
      // Left neighbor exists unless the column is 0; right unless it is w - 1.
      for (idx p = x0 == 0 ? 1 : 0; p < pw; ++p) at[p] += st[kLeft] * xr[S * p - 1];
      const idx p_right = std::min(pw, (w - 1 - x0 + S - 1) / S);
      for (idx p = 0; p < p_right; ++p) at[p] += st[kRight] * xr[S * p + 1];
    }
  }
  for (idx t = 0; t < ot; ++t) std::copy_n(acc[t], pw, out_rows[t] + c0);
}

// Shared engine of the fused lean kernel and the strided 1x1 convolution.
// `stencil` may be null (plain 1x1). Loop order: image, output row, output
// channel tile, column strip; the input rows an output row needs stay in cache
// across all channel tiles.
template <typename T, int S>
void mix_and_stencil(const Tensor4<T>& x, const Matrix<T>& alpha, const Matrix<T>* stencil, Tensor4<T>& out) {
  const idx n_batch = static_cast<idx>(x.batch());
  const idx c_out = static_cast<idx>(alpha.rows);
  const idx d = stencil ? static_cast<idx>(stencil->rows) : 0;
  const idx ho = static_cast<idx>(out.height()), wo = static_cast<idx>(out.width());

#pragma omp parallel for schedule(static)
  for (idx n = 0; n < n_batch; ++n) {
    for (idx ro = 0; ro < ho; ++ro)
      for (idx o0 = 0; o0 < c_out; o0 += kOutChannelTile) {
        const idx ot = std::min(kOutChannelTile, c_out - o0);
        T* rows[kOutChannelTile];
        for (idx t = 0; t < ot; ++t)
          rows[t] = out.plane(static_cast<std::size_t>(n), static_cast<std::size_t>(o0 + t)) + ro * wo;
        for (idx c0 = 0; c0 < wo;) {
          const idx left = wo - c0;
          const bool full = ot == kOutChannelTile;
          if (full && left >= 16) {
            mix_tile<T, S, 16>(x, n, alpha, stencil, d, o0, ot, ro, c0, 16, rows);
            c0 += 16;
          } else if (full && left >= 8) {
            mix_tile<T, S, 8>(x, n, alpha, stencil, d, o0, ot, ro, c0, 8, rows);
            c0 += 8;
          } else {
            const idx pw = std::min(kStrip, left);
            mix_tile<T, S, 0>(x, n, alpha, stencil, d, o0, ot, ro, c0, pw, rows);
            c0 += pw;
          }
        }
      }
  }
}

template <typename T>
void check_lean(const Tensor4<T>& x, const LeanConvWeights<T>& w, const char* who) {
  w.validate();
  if (x.channels() != w.c_in())
    throw std::invalid_argument(std::string(who) + ": input has " + std::to_string(x.channels()) +
                                " channels, weights expect " + std::to_string(w.c_in()));
}

template <typename T>
Shape4 strided_shape(const Shape4& s, std::size_t c_out, int stride) {
  return {s.n, c_out, conv_output_extent(s.h, stride), conv_output_extent(s.w, stride)};
}

}  // namespace

std::size_t conv_output_extent(std::size_t in, int stride) {
  check_stride(stride, "conv_output_extent");
  return (in + static_cast<std::size_t>(stride) - 1) / static_cast<std::size_t>(stride);
}

template <typename T>
LeanConvWeights<T> LeanConvWeights<T>::zeros(std::size_t c_in, std::size_t c_out, int stride) {
  check_stride(stride, "LeanConvWeights");
  LeanConvWeights w;
  w.alpha = Matrix<T>(c_out, c_in);
  w.stencil = Matrix<T>(std::min(c_in, c_out), 4);
  w.stride = stride;
  return w;
}

template <typename T>
void LeanConvWeights<T>::validate() const {
  check_stride(stride, "LeanConvWeights");
  if (alpha.rows == 0 || alpha.cols == 0 || alpha.data.size() != alpha.rows * alpha.cols)
    throw std::invalid_argument("LeanConvWeights: alpha must be a non-empty c_out x c_in matrix");
  if (stencil.rows != diag() || stencil.cols != 4 || stencil.data.size() != stencil.rows * 4)
    throw std::invalid_argument("LeanConvWeights: stencil must be min(c_in, c_out) x 4, got " +
                                std::to_string(stencil.rows) + "x" + std::to_string(stencil.cols));
}

template <typename T>
DenseConvWeights<T> DenseConvWeights<T>::zeros(std::size_t c_in, std::size_t c_out, int stride) {
  check_stride(stride, "DenseConvWeights");
  DenseConvWeights w;
  w.c_in = c_in;
  w.c_out = c_out;
  w.kernel.assign(c_out * c_in * 9, T(0));
  w.stride = stride;
  return w;
}

template <typename T>
void DenseConvWeights<T>::validate() const {
  check_stride(stride, "DenseConvWeights");
  if (kh != 3 || kw != 3) throw std::invalid_argument("DenseConvWeights: only 3x3 kernels are supported");
  if (c_in == 0 || c_out == 0 || kernel.size() != c_out * c_in * kh * kw)
    throw std::invalid_argument("DenseConvWeights: kernel size does not match c_out x c_in x 3 x 3");
}

template <typename T>
LeanConv3dWeights<T> LeanConv3dWeights<T>::zeros(std::size_t c_in, std::size_t c_out) {
  LeanConv3dWeights w;
  w.alpha = Matrix<T>(c_out, c_in);
  w.stencil = Matrix<T>(std::min(c_in, c_out), 6);
  return w;
}

template <typename T>
Tensor4<T> lean_conv2d_fused(const Tensor4<T>& x, const LeanConvWeights<T>& w) {
  check_lean(x, w, "lean_conv2d_fused");
  Tensor4<T> out(strided_shape<T>(x.shape(), w.c_out(), w.stride));
  if (w.stride == 1)
    mix_and_stencil<T, 1>(x, w.alpha, &w.stencil, out);
  else
    mix_and_stencil<T, 2>(x, w.alpha, &w.stencil, out);
  return out;
}

template <typename T>
Tensor4<T> conv1x1(const Tensor4<T>& x, const Matrix<T>& alpha, int stride) {
  check_stride(stride, "conv1x1");
  if (x.channels() != alpha.cols || alpha.rows == 0)
    throw std::invalid_argument("conv1x1: input has " + std::to_string(x.channels()) + " channels, matrix is " +
                                std::to_string(alpha.rows) + "x" + std::to_string(alpha.cols));
  Tensor4<T> out(strided_shape<T>(x.shape(), alpha.rows, stride));
  if (stride == 1)
    mix_and_stencil<T, 1>(x, alpha, nullptr, out);
  else
    mix_and_stencil<T, 2>(x, alpha, nullptr, out);
  return out;
}

template <typename T>
Tensor4<T> depthwise4(const Tensor4<T>& x, const Matrix<T>& stencil) {
  if (stencil.rows != x.channels() || stencil.cols != 4)
    throw std::invalid_argument("depthwise4: stencil must be " + std::to_string(x.channels()) + "x4, got " +
                                std::to_string(stencil.rows) + "x" + std::to_string(stencil.cols));
  Tensor4<T> out(x.shape());
  const idx n_batch = static_cast<idx>(x.batch()), c = static_cast<idx>(x.channels());
  const PlaneGeom g{static_cast<idx>(x.height()), static_cast<idx>(x.width()), static_cast<idx>(x.height()),
                    static_cast<idx>(x.width())};
#pragma omp parallel for schedule(static)
  for (idx n = 0; n < n_batch; ++n)
    for (idx i = 0; i < c; ++i)
      for (std::size_t k = 0; k < 4; ++k)
        axpy_tap<T, 1>(x.plane(n, i), g, kStencilOffsets[k][0], kStencilOffsets[k][1], stencil(i, k),
                       out.plane(n, i), 0, g.ho);
  return out;
}

template <typename T>
Tensor4<T> lean_conv2d_reference(const Tensor4<T>& x, const LeanConvWeights<T>& w) {
  check_lean(x, w, "lean_conv2d_reference");
  const std::size_t d = w.diag();
  Tensor4<T> full = conv1x1(x, w.alpha, 1);

  // Depth-wise part acts on the first d input channels only.
  Tensor4<T> dw;
  if (d == x.channels()) {
    dw = depthwise4(x, w.stencil);
  } else {
    Tensor4<T> head(x.batch(), d, x.height(), x.width());
    for (std::size_t n = 0; n < x.batch(); ++n)
      std::copy_n(x.plane(n, 0), d * x.height() * x.width(), head.plane(n, 0));
    dw = depthwise4(head, w.stencil);
  }
  const std::size_t plane = x.height() * x.width();
  for (std::size_t n = 0; n < x.batch(); ++n) {
    T* dst = full.plane(n, 0);
    const T* src = dw.plane(n, 0);
    for (std::size_t k = 0; k < d * plane; ++k) dst[k] += src[k];
  }
  if (w.stride == 1) return full;

  Tensor4<T> out(strided_shape<T>(x.shape(), w.c_out(), w.stride));
  const auto s = static_cast<std::size_t>(w.stride);
  for (std::size_t n = 0; n < out.batch(); ++n)
    for (std::size_t o = 0; o < out.channels(); ++o)
      for (std::size_t y = 0; y < out.height(); ++y)
        for (std::size_t xx = 0; xx < out.width(); ++xx) out(n, o, y, xx) = full(n, o, s * y, s * xx);
  return out;
}

namespace {

template <typename T, int S>
LeanConvGrads<T> lean_backward_impl(const Tensor4<T>& x, const LeanConvWeights<T>& w, const Tensor4<T>& dy) {
  const idx n_batch = static_cast<idx>(x.batch());
  const idx c_in = static_cast<idx>(w.c_in()), c_out = static_cast<idx>(w.c_out()), d = static_cast<idx>(w.diag());
  const PlaneGeom g{static_cast<idx>(x.height()), static_cast<idx>(x.width()), static_cast<idx>(dy.height()),
                    static_cast<idx>(dy.width())};
  LeanConvGrads<T> grads{Tensor4<T>(x.shape()), Matrix<T>(c_out, c_in), Matrix<T>(d, 4)};

#pragma omp parallel for schedule(static)
  for (idx n = 0; n < n_batch; ++n)
    for (idx i = 0; i < c_in; ++i) {
      T* dxp = grads.dx.plane(n, i);
      for (idx o = 0; o < c_out; ++o) scatter_tap<T, S>(dxp, g, 0, 0, w.alpha(o, i), dy.plane(n, o));
      if (i < d)
        for (std::size_t k = 0; k < 4; ++k)
          scatter_tap<T, S>(dxp, g, kStencilOffsets[k][0], kStencilOffsets[k][1], w.stencil(i, k), dy.plane(n, i));
    }

#pragma omp parallel for schedule(static)
  for (idx o = 0; o < c_out; ++o)
    for (idx n = 0; n < n_batch; ++n) {
      const T* gp = dy.plane(n, o);
      for (idx i = 0; i < c_in; ++i) grads.dalpha(o, i) += dot_tap<T, S>(x.plane(n, i), g, 0, 0, gp);
      if (o < d)
        for (std::size_t k = 0; k < 4; ++k)
          grads.dstencil(o, k) += dot_tap<T, S>(x.plane(n, o), g, kStencilOffsets[k][0], kStencilOffsets[k][1], gp);
    }
  return grads;
}

template <typename T, int S>
Conv1x1Grads<T> conv1x1_backward_impl(const Tensor4<T>& x, const Matrix<T>& alpha, const Tensor4<T>& dy) {
  const idx n_batch = static_cast<idx>(x.batch());
  const idx c_in = static_cast<idx>(alpha.cols), c_out = static_cast<idx>(alpha.rows);
  const PlaneGeom g{static_cast<idx>(x.height()), static_cast<idx>(x.width()), static_cast<idx>(dy.height()),
                    static_cast<idx>(dy.width())};
  Conv1x1Grads<T> grads{Tensor4<T>(x.shape()), Matrix<T>(c_out, c_in)};
#pragma omp parallel for schedule(static)
  for (idx n = 0; n < n_batch; ++n)
    for (idx i = 0; i < c_in; ++i)
      for (idx o = 0; o < c_out; ++o) scatter_tap<T, S>(grads.dx.plane(n, i), g, 0, 0, alpha(o, i), dy.plane(n, o));
#pragma omp parallel for schedule(static)
  for (idx o = 0; o < c_out; ++o)
    for (idx n = 0; n < n_batch; ++n)
      for (idx i = 0; i < c_in; ++i) grads.dalpha(o, i) += dot_tap<T, S>(x.plane(n, i), g, 0, 0, dy.plane(n, o));
  return grads;
}

template <typename T>
void check_output_grad(const Shape4& expected, const Tensor4<T>& dy, const char* who) {
  if (!(dy.shape() == expected))
    throw std::invalid_argument(std::string(who) + ": output gradient has shape " + dy.shape().str() +
                                ", forward output is " + expected.str());
}

}  // namespace

template <typename T>
LeanConvGrads<T> lean_conv2d_backward(const Tensor4<T>& x, const LeanConvWeights<T>& w, const Tensor4<T>& dy) {
  check_lean(x, w, "lean_conv2d_backward");
  check_output_grad(strided_shape<T>(x.shape(), w.c_out(), w.stride), dy, "lean_conv2d_backward");
  return w.stride == 1 ? lean_backward_impl<T, 1>(x, w, dy) : lean_backward_impl<T, 2>(x, w, dy);
}

template <typename T>
Conv1x1Grads<T> conv1x1_backward(const Tensor4<T>& x, const Matrix<T>& alpha, const Tensor4<T>& dy, int stride) {
  check_stride(stride, "conv1x1_backward");
  if (x.channels() != alpha.cols) throw std::invalid_argument("conv1x1_backward: channel mismatch");
  check_output_grad(strided_shape<T>(x.shape(), alpha.rows, stride), dy, "conv1x1_backward");
  return stride == 1 ? conv1x1_backward_impl<T, 1>(x, alpha, dy) : conv1x1_backward_impl<T, 2>(x, alpha, dy);
}

namespace {

template <typename T, int S>
void dense_forward_impl(const Tensor4<T>& x, const DenseConvWeights<T>& w, Tensor4<T>& out) {
  const idx n_batch = static_cast<idx>(x.batch());
  const idx c_in = static_cast<idx>(w.c_in), c_out = static_cast<idx>(w.c_out);
  const PlaneGeom g{static_cast<idx>(x.height()), static_cast<idx>(x.width()), static_cast<idx>(out.height()),
                    static_cast<idx>(out.width())};
  const idx rt = row_tile(g.w, g.ho);

#pragma omp parallel for schedule(static)
  for (idx n = 0; n < n_batch; ++n) {
    for (idx o0 = 0; o0 < c_out; o0 += kOutChannelTile) {
      const idx ot = std::min(kOutChannelTile, c_out - o0);
      for (idx r0 = 0; r0 < g.ho; r0 += rt) {
        const idx r1 = std::min(g.ho, r0 + rt);
        for (idx t = 0; t < ot; ++t) std::fill_n(out.plane(n, o0 + t) + r0 * g.wo, (r1 - r0) * g.wo, T(0));
        for (idx i = 0; i < c_in; ++i) {
          const T* xp = x.plane(n, i);
          for (idx t = 0; t < ot; ++t) {
            T* op = out.plane(n, o0 + t);
            for (int ky = 0; ky < 3; ++ky)
              for (int kx = 0; kx < 3; ++kx)
                axpy_tap<T, S>(xp, g, ky - 1, kx - 1, w.at(o0 + t, i, ky, kx), op, r0, r1);
          }
        }
      }
    }
  }
}

template <typename T, int S>
DenseConvGrads<T> dense_backward_impl(const Tensor4<T>& x, const DenseConvWeights<T>& w, const Tensor4<T>& dy) {
  const idx n_batch = static_cast<idx>(x.batch());
  const idx c_in = static_cast<idx>(w.c_in), c_out = static_cast<idx>(w.c_out);
  const PlaneGeom g{static_cast<idx>(x.height()), static_cast<idx>(x.width()), static_cast<idx>(dy.height()),
                    static_cast<idx>(dy.width())};
  DenseConvGrads<T> grads{Tensor4<T>(x.shape()), std::vector<T>(w.kernel.size(), T(0))};

#pragma omp parallel for schedule(static)
  for (idx n = 0; n < n_batch; ++n)
    for (idx i = 0; i < c_in; ++i) {
      T* dxp = grads.dx.plane(n, i);
      for (idx o = 0; o < c_out; ++o)
        for (int ky = 0; ky < 3; ++ky)
          for (int kx = 0; kx < 3; ++kx) scatter_tap<T, S>(dxp, g, ky - 1, kx - 1, w.at(o, i, ky, kx), dy.plane(n, o));
    }

#pragma omp parallel for schedule(static)
  for (idx o = 0; o < c_out; ++o)
    for (idx n = 0; n < n_batch; ++n)
      for (idx i = 0; i < c_in; ++i)
        for (int ky = 0; ky < 3; ++ky)
          for (int kx = 0; kx < 3; ++kx)
            grads.dkernel[((o * c_in + i) * 3 + ky) * 3 + kx] +=
                dot_tap<T, S>(x.plane(n, i), g, ky - 1, kx - 1, dy.plane(n, o));
  return grads;
}

template <typename T>
void check_dense(const Tensor4<T>& x, const DenseConvWeights<T>& w, const char* who) {
  w.validate();
  if (x.channels() != w.c_in)
    throw std::invalid_argument(std::string(who) + ": input has " + std::to_string(x.channels()) +
                                " channels, kernel expects " + std::to_string(w.c_in));
}

}  // namespace

template <typename T>
Tensor4<T> dense_conv2d(const Tensor4<T>& x, const DenseConvWeights<T>& w) {
  check_dense(x, w, "dense_conv2d");
  Tensor4<T> out(strided_shape<T>(x.shape(), w.c_out, w.stride));
  if (w.stride == 1)
    dense_forward_impl<T, 1>(x, w, out);
  else
    dense_forward_impl<T, 2>(x, w, out);
  return out;
}

template <typename T>
DenseConvGrads<T> dense_conv2d_backward(const Tensor4<T>& x, const DenseConvWeights<T>& w, const Tensor4<T>& dy) {
  check_dense(x, w, "dense_conv2d_backward");
  check_output_grad(strided_shape<T>(x.shape(), w.c_out, w.stride), dy, "dense_conv2d_backward");
  return w.stride == 1 ? dense_backward_impl<T, 1>(x, w, dy) : dense_backward_impl<T, 2>(x, w, dy);
}

template <typename T>
DenseConvWeights<T> lean_to_dense(const LeanConvWeights<T>& w) {
  w.validate();
  auto dense = DenseConvWeights<T>::zeros(w.c_in(), w.c_out(), w.stride);
  for (std::size_t o = 0; o < w.c_out(); ++o)
    for (std::size_t i = 0; i < w.c_in(); ++i) dense.at(o, i, 1, 1) = w.alpha(o, i);
  for (std::size_t i = 0; i < w.diag(); ++i)
    for (std::size_t k = 0; k < 4; ++k)
      dense.at(i, i, static_cast<std::size_t>(1 + kStencilOffsets[k][0]),
               static_cast<std::size_t>(1 + kStencilOffsets[k][1])) = w.stencil(i, k);
  return dense;
}

namespace {

// (dz, dy, dx) in StencilTap3d order.
constexpr std::array<std::array<int, 3>, 6> kFaceOffsets{
    {{0, 0, -1}, {0, 0, 1}, {0, -1, 0}, {0, 1, 0}, {-1, 0, 0}, {1, 0, 0}}};

template <typename T>
void check_lean3d(const Tensor5<T>& x, const LeanConv3dWeights<T>& w, const char* who) {
  if (w.alpha.rows == 0 || w.alpha.cols == 0 || w.stencil.rows != w.diag() || w.stencil.cols != 6)
    throw std::invalid_argument(std::string(who) + ": malformed weights");
  if (x.shape().c != w.c_in())
    throw std::invalid_argument(std::string(who) + ": input has " + std::to_string(x.shape().c) +
                                " channels, weights expect " + std::to_string(w.c_in()));
}

}  // namespace

template <typename T>
Tensor5<T> lean_conv3d(const Tensor5<T>& x, const LeanConv3dWeights<T>& w) {
  check_lean3d(x, w, "lean_conv3d");
  const Shape5 s = x.shape();
  Tensor5<T> out(Shape5{s.n, w.c_out(), s.d, s.h, s.w});
  const idx D = static_cast<idx>(s.d), H = static_cast<idx>(s.h), W = static_cast<idx>(s.w);
  for (std::size_t n = 0; n < s.n; ++n)
    for (std::size_t o = 0; o < w.c_out(); ++o)
      for (idx z = 0; z < D; ++z)
        for (idx y = 0; y < H; ++y)
          for (idx xx = 0; xx < W; ++xx) {
            T acc = T(0);
            for (std::size_t i = 0; i < w.c_in(); ++i) acc += w.alpha(o, i) * x(n, i, z, y, xx);
            if (o < w.diag())
              for (std::size_t k = 0; k < 6; ++k) {
                const idx zz = z + kFaceOffsets[k][0], yy = y + kFaceOffsets[k][1], xn = xx + kFaceOffsets[k][2];
                if (zz < 0 || zz >= D || yy < 0 || yy >= H || xn < 0 || xn >= W) continue;
                acc += w.stencil(o, k) * x(n, o, zz, yy, xn);
              }
            out(n, o, z, y, xx) = acc;
          }
  return out;
}

template <typename T>
LeanConv3dGrads<T> lean_conv3d_backward(const Tensor5<T>& x, const LeanConv3dWeights<T>& w, const Tensor5<T>& dy) {
  check_lean3d(x, w, "lean_conv3d_backward");
  const Shape5 s = x.shape();
  if (!(dy.shape() == Shape5{s.n, w.c_out(), s.d, s.h, s.w}))
    throw std::invalid_argument("lean_conv3d_backward: output gradient shape mismatch");
  LeanConv3dGrads<T> grads{Tensor5<T>(s), Matrix<T>(w.c_out(), w.c_in()), Matrix<T>(w.diag(), 6)};
  const idx D = static_cast<idx>(s.d), H = static_cast<idx>(s.h), W = static_cast<idx>(s.w);
  for (std::size_t n = 0; n < s.n; ++n)
    for (std::size_t o = 0; o < w.c_out(); ++o)
      for (idx z = 0; z < D; ++z)
        for (idx y = 0; y < H; ++y)
          for (idx xx = 0; xx < W; ++xx) {
            const T g = dy(n, o, z, y, xx);
            for (std::size_t i = 0; i < w.c_in(); ++i) {
              grads.dx(n, i, z, y, xx) += w.alpha(o, i) * g;
              grads.dalpha(o, i) += g * x(n, i, z, y, xx);
            }
            if (o < w.diag())
              for (std::size_t k = 0; k < 6; ++k) {
                const idx zz = z + kFaceOffsets[k][0], yy = y + kFaceOffsets[k][1], xn = xx + kFaceOffsets[k][2];
                if (zz < 0 || zz >= D || yy < 0 || yy >= H || xn < 0 || xn >= W) continue;
                grads.dx(n, o, zz, yy, xn) += w.stencil(o, k) * g;
                grads.dstencil(o, k) += g * x(n, o, zz, yy, xn);
              }
          }
  return grads;
}

std::uint64_t layer_flops(LayerKind kind, std::size_t c_in, std::size_t c_out, std::size_t h, std::size_t w) {
  const std::uint64_t ci = c_in, co = c_out, pixels = static_cast<std::uint64_t>(h) * w;
  const std::uint64_t d = std::min(ci, co);
  switch (kind) {
    case LayerKind::lean:
      return (2 * ci * co + 8 * d) * pixels;
    case LayerKind::dense3x3:
      return 18 * ci * co * pixels;
    case LayerKind::conv1x1:
      return 2 * ci * co * pixels;
    case LayerKind::depthwise4:
      return 8 * d * pixels;
  }
  return 0;
}

#define LEANRES_INSTANTIATE(T)                                                                              \
  template struct LeanConvWeights<T>;                                                                      \
  template struct DenseConvWeights<T>;                                                                     \
  template struct LeanConv3dWeights<T>;                                                                    \
  template Tensor4<T> lean_conv2d_fused(const Tensor4<T>&, const LeanConvWeights<T>&);                     \
  template Tensor4<T> lean_conv2d_reference(const Tensor4<T>&, const LeanConvWeights<T>&);                 \
  template LeanConvGrads<T> lean_conv2d_backward(const Tensor4<T>&, const LeanConvWeights<T>&,              \
                                                 const Tensor4<T>&);                                        \
  template Tensor4<T> conv1x1(const Tensor4<T>&, const Matrix<T>&, int);                                   \
  template Conv1x1Grads<T> conv1x1_backward(const Tensor4<T>&, const Matrix<T>&, const Tensor4<T>&, int);  \
  template Tensor4<T> depthwise4(const Tensor4<T>&, const Matrix<T>&);                                     \
  template Tensor4<T> dense_conv2d(const Tensor4<T>&, const DenseConvWeights<T>&);                         \
  template DenseConvGrads<T> dense_conv2d_backward(const Tensor4<T>&, const DenseConvWeights<T>&,           \
                                                   const Tensor4<T>&);                                      \
  template DenseConvWeights<T> lean_to_dense(const LeanConvWeights<T>&);                                   \
  template Tensor5<T> lean_conv3d(const Tensor5<T>&, const LeanConv3dWeights<T>&);                         \
  template LeanConv3dGrads<T> lean_conv3d_backward(const Tensor5<T>&, const LeanConv3dWeights<T>&,          \
                                                   const Tensor5<T>&);

LEANRES_INSTANTIATE(float)
LEANRES_INSTANTIATE(double)

}  // namespace leanres
