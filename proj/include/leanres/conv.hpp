#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "leanres/tensor.hpp"

namespace leanres {

// Column order of a lean stencil row.
enum StencilTap : std::size_t { kTop = 0, kLeft = 1, kRight = 2, kBottom = 3 };

// Column order of a 3D lean stencil row: -x, +x, -y, +y, -z, +z.
enum StencilTap3d : std::size_t { kXMinus = 0, kXPlus, kYMinus, kYPlus, kZMinus, kZPlus };

// Output extent under the "sample at even coordinates" rule: ceil(in / stride).
std::size_t conv_output_extent(std::size_t in, int stride);

/// Lean convolution: a c_out x c_in 1x1 mixing matrix whose diagonal entries
/// double as the center weight of a per-channel 4-point stencil. Stencils live
/// on the first d = min(c_in, c_out) diagonal blocks.
template <typename T>
struct LeanConvWeights {
  Matrix<T> alpha;    // c_out x c_in
  Matrix<T> stencil;  // d x 4, columns ordered as StencilTap
  int stride = 1;

  static LeanConvWeights zeros(std::size_t c_in, std::size_t c_out, int stride = 1);

  std::size_t c_in() const { return alpha.cols; }
  std::size_t c_out() const { return alpha.rows; }
  std::size_t diag() const { return alpha.rows < alpha.cols ? alpha.rows : alpha.cols; }
  std::size_t parameter_count() const { return alpha.size() + stencil.size(); }
  void validate() const;
};

template <typename T>
struct DenseConvWeights {
  std::size_t c_out = 0, c_in = 0, kh = 3, kw = 3;
  std::vector<T> kernel;  // c_out x c_in x kh x kw
  int stride = 1;

  static DenseConvWeights zeros(std::size_t c_in, std::size_t c_out, int stride = 1);

  T& at(std::size_t o, std::size_t i, std::size_t ky, std::size_t kx) {
    return kernel[((o * c_in + i) * kh + ky) * kw + kx];
  }
  const T& at(std::size_t o, std::size_t i, std::size_t ky, std::size_t kx) const {
    return kernel[((o * c_in + i) * kh + ky) * kw + kx];
  }
  std::size_t parameter_count() const { return kernel.size(); }
  void validate() const;
};

template <typename T>
struct LeanConv3dWeights {
  Matrix<T> alpha;    // c_out x c_in
  Matrix<T> stencil;  // d x 6, columns ordered as StencilTap3d

  static LeanConv3dWeights zeros(std::size_t c_in, std::size_t c_out);

  std::size_t c_in() const { return alpha.cols; }
  std::size_t c_out() const { return alpha.rows; }
  std::size_t diag() const { return alpha.rows < alpha.cols ? alpha.rows : alpha.cols; }
  std::size_t parameter_count() const { return alpha.size() + stencil.size(); }
};

template <typename T>
struct LeanConvGrads {
  Tensor4<T> dx;
  Matrix<T> dalpha;
  Matrix<T> dstencil;
};

template <typename T>
struct DenseConvGrads {
  Tensor4<T> dx;
  std::vector<T> dkernel;
};

template <typename T>
struct Conv1x1Grads {
  Tensor4<T> dx;
  Matrix<T> dalpha;
};

template <typename T>
struct LeanConv3dGrads {
  Tensor5<T> dx;
  Matrix<T> dalpha;
  Matrix<T> dstencil;
};

/// Single-pass lean convolution. Output rows are processed in tiles of up to
/// four output channels; for every input channel the tile's rows are read once
/// and feed both the 1x1 term and, on the diagonal, the 4-point stencil.
template <typename T>
Tensor4<T> lean_conv2d_fused(const Tensor4<T>& x, const LeanConvWeights<T>& w);

/// Unfused lean convolution: conv1x1 + depthwise4 at full resolution, summed,
/// then sampled at the stride. Two passes over the input.
template <typename T>
Tensor4<T> lean_conv2d_reference(const Tensor4<T>& x, const LeanConvWeights<T>& w);

template <typename T>
LeanConvGrads<T> lean_conv2d_backward(const Tensor4<T>& x, const LeanConvWeights<T>& w, const Tensor4<T>& dy);

template <typename T>
Tensor4<T> conv1x1(const Tensor4<T>& x, const Matrix<T>& alpha, int stride = 1);

template <typename T>
Conv1x1Grads<T> conv1x1_backward(const Tensor4<T>& x, const Matrix<T>& alpha, const Tensor4<T>& dy,
                                 int stride = 1);

// Depth-wise 4-point stencil, zero padded, no center term.
template <typename T>
Tensor4<T> depthwise4(const Tensor4<T>& x, const Matrix<T>& stencil);

template <typename T>
Tensor4<T> dense_conv2d(const Tensor4<T>& x, const DenseConvWeights<T>& w);

template <typename T>
DenseConvGrads<T> dense_conv2d_backward(const Tensor4<T>& x, const DenseConvWeights<T>& w, const Tensor4<T>& dy);

// Embeds a lean operator as the equivalent sparse 3x3 dense operator.
template <typename T>
DenseConvWeights<T> lean_to_dense(const LeanConvWeights<T>& w);

template <typename T>
Tensor5<T> lean_conv3d(const Tensor5<T>& x, const LeanConv3dWeights<T>& w);

template <typename T>
LeanConv3dGrads<T> lean_conv3d_backward(const Tensor5<T>& x, const LeanConv3dWeights<T>& w, const Tensor5<T>& dy);

enum class LayerKind { lean, dense3x3, conv1x1, depthwise4 };

// FLOPs of one layer on one image with an h x w output map; a multiply-add
// counts as two.
std::uint64_t layer_flops(LayerKind kind, std::size_t c_in, std::size_t c_out, std::size_t h, std::size_t w);

}  // namespace leanres
