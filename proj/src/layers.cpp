#include "leanres/layers.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace leanres {

template <typename T>
Tensor4<T> relu(const Tensor4<T>& x) {
  Tensor4<T> y(x.shape());
  auto src = x.data();
  auto dst = y.data();
  for (std::size_t i = 0; i < src.size(); ++i) dst[i] = src[i] > T(0) ? src[i] : T(0);
  return y;
}

template <typename T>
Tensor4<T> relu_backward(const Tensor4<T>& x, const Tensor4<T>& dy) {
  if (!(x.shape() == dy.shape())) throw std::invalid_argument("relu_backward: shape mismatch");
  Tensor4<T> dx(x.shape());
  auto xs = x.data();
  auto gs = dy.data();
  auto out = dx.data();
  for (std::size_t i = 0; i < xs.size(); ++i) out[i] = xs[i] > T(0) ? gs[i] : T(0);
  return dx;
}

template <typename T>
BatchNormParams<T> BatchNormParams<T>::make(std::size_t channels) {
  BatchNormParams p;
  p.scale.assign(channels, T(1));
  p.shift.assign(channels, T(0));
  p.running_mean.assign(channels, T(0));
  p.running_var.assign(channels, T(1));
  return p;
}

template <typename T>
Tensor4<T> batch_norm(const Tensor4<T>& x, BatchNormParams<T>& params, Mode mode, BatchNormCache<T>* cache) {
  const std::size_t C = x.channels(), N = x.batch(), plane = x.height() * x.width();
  if (params.channels() != C)
    throw std::invalid_argument("batch_norm: input has " + std::to_string(C) + " channels, parameters have " +
                                std::to_string(params.channels()));
  const std::size_t count = N * plane;
  if (mode == Mode::train && count < 2)
    throw std::invalid_argument("batch_norm: train mode needs batch*height*width >= 2");

  std::vector<T> mean(C), inv_std(C);
  std::vector<double> batch_var(C);
  if (mode == Mode::train) {
    for (std::size_t c = 0; c < C; ++c) {
      double sum = 0.0;
      for (std::size_t n = 0; n < N; ++n) {
        const T* p = x.plane(n, c);
        for (std::size_t k = 0; k < plane; ++k) sum += p[k];
      }
      const double mu = sum / static_cast<double>(count);
      double sq = 0.0;
      for (std::size_t n = 0; n < N; ++n) {
        const T* p = x.plane(n, c);
        for (std::size_t k = 0; k < plane; ++k) {
          const double dv = p[k] - mu;
          sq += dv * dv;
        }
      }
      batch_var[c] = sq / static_cast<double>(count);
      mean[c] = static_cast<T>(mu);
      inv_std[c] = static_cast<T>(1.0 / std::sqrt(batch_var[c] + params.epsilon));
    }
  } else {
    for (std::size_t c = 0; c < C; ++c) {
      mean[c] = params.running_mean[c];
      inv_std[c] = static_cast<T>(1.0 / std::sqrt(static_cast<double>(params.running_var[c]) + params.epsilon));
    }
  }

  Tensor4<T> y(x.shape());
  Tensor4<T> xhat;
  if (cache) xhat = Tensor4<T>(x.shape());
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t c = 0; c < C; ++c) {
      const T* src = x.plane(n, c);
      T* dst = y.plane(n, c);
      T* hat = cache ? xhat.plane(n, c) : nullptr;
      const T mu = mean[c], is = inv_std[c], g = params.scale[c], b = params.shift[c];
      for (std::size_t k = 0; k < plane; ++k) {
        const T h = (src[k] - mu) * is;
        if (hat) hat[k] = h;
        dst[k] = g * h + b;
      }
    }

  if (mode == Mode::train) {
    const double m = params.momentum;
    const double unbias = static_cast<double>(count) / static_cast<double>(count - 1);
    for (std::size_t c = 0; c < C; ++c) {
      params.running_mean[c] = static_cast<T>((1.0 - m) * params.running_mean[c] + m * mean[c]);
      params.running_var[c] = static_cast<T>((1.0 - m) * params.running_var[c] + m * batch_var[c] * unbias);
    }
  }
  if (cache) {
    cache->xhat = std::move(xhat);
    cache->inv_std = std::move(inv_std);
    cache->mode = mode;
  }
  return y;
}

template <typename T>
BatchNormGrads<T> batch_norm_backward(const BatchNormCache<T>& cache, const BatchNormParams<T>& params,
                                      const Tensor4<T>& dy) {
  const Tensor4<T>& xhat = cache.xhat;
  if (!(xhat.shape() == dy.shape())) throw std::invalid_argument("batch_norm_backward: shape mismatch");
  const std::size_t C = dy.channels(), N = dy.batch(), plane = dy.height() * dy.width();
  const double count = static_cast<double>(N * plane);
  BatchNormGrads<T> g{Tensor4<T>(dy.shape()), std::vector<T>(C), std::vector<T>(C)};
  for (std::size_t c = 0; c < C; ++c) {
    double sum_dy = 0.0, sum_dy_xhat = 0.0;
    for (std::size_t n = 0; n < N; ++n) {
      const T* gp = dy.plane(n, c);
      const T* hp = xhat.plane(n, c);
      for (std::size_t k = 0; k < plane; ++k) {
        sum_dy += gp[k];
        sum_dy_xhat += static_cast<double>(gp[k]) * hp[k];
      }
    }
    g.dscale[c] = static_cast<T>(sum_dy_xhat);
    g.dshift[c] = static_cast<T>(sum_dy);
    const T k_scale = params.scale[c] * cache.inv_std[c];
    if (cache.mode == Mode::train) {
      const T mean_dy = static_cast<T>(sum_dy / count), mean_dy_xhat = static_cast<T>(sum_dy_xhat / count);
      for (std::size_t n = 0; n < N; ++n) {
        const T* gp = dy.plane(n, c);
        const T* hp = xhat.plane(n, c);
        T* dx = g.dx.plane(n, c);
        for (std::size_t k = 0; k < plane; ++k) dx[k] = k_scale * (gp[k] - mean_dy - hp[k] * mean_dy_xhat);
      }
    } else {
      for (std::size_t n = 0; n < N; ++n) {
        const T* gp = dy.plane(n, c);
        T* dx = g.dx.plane(n, c);
        for (std::size_t k = 0; k < plane; ++k) dx[k] = k_scale * gp[k];
      }
    }
  }
  return g;
}

template <typename T>
Matrix<T> global_avg_pool(const Tensor4<T>& x) {
  const std::size_t plane = x.height() * x.width();
  Matrix<T> out(x.batch(), x.channels());
  for (std::size_t n = 0; n < x.batch(); ++n)
    for (std::size_t c = 0; c < x.channels(); ++c) {
      const T* p = x.plane(n, c);
      double sum = 0.0;
      for (std::size_t k = 0; k < plane; ++k) sum += p[k];
      out(n, c) = static_cast<T>(sum / static_cast<double>(plane));
    }
  return out;
}

template <typename T>
Tensor4<T> global_avg_pool_backward(const Matrix<T>& dy, const Shape4& input_shape) {
  if (dy.rows != input_shape.n || dy.cols != input_shape.c)
    throw std::invalid_argument("global_avg_pool_backward: gradient is not batch x channels");
  Tensor4<T> dx(input_shape);
  const std::size_t plane = input_shape.h * input_shape.w;
  const T inv = T(1) / static_cast<T>(plane);
  for (std::size_t n = 0; n < input_shape.n; ++n)
    for (std::size_t c = 0; c < input_shape.c; ++c) std::fill_n(dx.plane(n, c), plane, dy(n, c) * inv);
  return dx;
}

template <typename T>
LinearParams<T> LinearParams<T>::zeros(std::size_t features, std::size_t classes) {
  return {Matrix<T>(classes, features), std::vector<T>(classes, T(0))};
}

template <typename T>
Matrix<T> linear_forward(const Matrix<T>& features, const LinearParams<T>& params) {
  if (features.cols != params.features())
    throw std::invalid_argument("linear_forward: " + std::to_string(features.cols) + " features, classifier expects " +
                                std::to_string(params.features()));
  Matrix<T> logits(features.rows, params.classes());
  for (std::size_t n = 0; n < features.rows; ++n)
    for (std::size_t k = 0; k < params.classes(); ++k) {
      T acc = params.bias[k];
      const T* wr = params.weight.row(k);
      const T* fr = features.row(n);
      for (std::size_t f = 0; f < features.cols; ++f) acc += wr[f] * fr[f];
      logits(n, k) = acc;
    }
  return logits;
}

template <typename T>
LinearGrads<T> linear_backward(const Matrix<T>& features, const LinearParams<T>& params, const Matrix<T>& dlogits) {
  if (dlogits.rows != features.rows || dlogits.cols != params.classes())
    throw std::invalid_argument("linear_backward: gradient shape mismatch");
  LinearGrads<T> g{Matrix<T>(features.rows, features.cols), Matrix<T>(params.classes(), params.features()),
                   std::vector<T>(params.classes(), T(0))};
  for (std::size_t n = 0; n < features.rows; ++n)
    for (std::size_t k = 0; k < params.classes(); ++k) {
      const T d = dlogits(n, k);
      g.dbias[k] += d;
      const T* wr = params.weight.row(k);
      const T* fr = features.row(n);
      T* dwr = g.dweight.row(k);
      T* dfr = g.dfeatures.row(n);
      for (std::size_t f = 0; f < features.cols; ++f) {
        dwr[f] += d * fr[f];
        dfr[f] += d * wr[f];
      }
    }
  return g;
}

namespace {

void check_labels(std::span<const int> labels, std::size_t rows, std::size_t classes) {
  if (labels.size() != rows)
    throw std::invalid_argument("softmax_cross_entropy: " + std::to_string(labels.size()) + " labels for " +
                                std::to_string(rows) + " rows");
  for (std::size_t n = 0; n < labels.size(); ++n)
    if (labels[n] < 0 || static_cast<std::size_t>(labels[n]) >= classes)
      throw std::out_of_range("softmax_cross_entropy: label " + std::to_string(labels[n]) + " at row " +
                              std::to_string(n) + " outside [0, " + std::to_string(classes) + ")");
}

}  // namespace

template <typename T>
SoftmaxResult<T> softmax_cross_entropy(const Matrix<T>& logits, std::span<const int> labels) {
  check_labels(labels, logits.rows, logits.cols);
  SoftmaxResult<T> r;
  r.probs = Matrix<T>(logits.rows, logits.cols);
  double total = 0.0;
  for (std::size_t n = 0; n < logits.rows; ++n) {
    const T* z = logits.row(n);
    std::size_t arg = 0;
    for (std::size_t k = 1; k < logits.cols; ++k)
      if (z[k] > z[arg]) arg = k;
    const double zmax = z[arg];
    double sum = 0.0;
    for (std::size_t k = 0; k < logits.cols; ++k) sum += std::exp(static_cast<double>(z[k]) - zmax);
    const double lse = zmax + std::log(sum);
    for (std::size_t k = 0; k < logits.cols; ++k)
      r.probs(n, k) = static_cast<T>(std::exp(static_cast<double>(z[k]) - lse));
    total += lse - z[labels[n]];
    if (arg == static_cast<std::size_t>(labels[n])) ++r.correct;
  }
  const double rows = static_cast<double>(std::max<std::size_t>(logits.rows, 1));
  r.loss = total / rows;
  r.accuracy = static_cast<double>(r.correct) / rows;
  return r;
}

template <typename T>
Matrix<T> softmax_cross_entropy_backward(const SoftmaxResult<T>& result, std::span<const int> labels) {
  check_labels(labels, result.probs.rows, result.probs.cols);
  Matrix<T> d = result.probs;
  const T inv = T(1) / static_cast<T>(std::max<std::size_t>(d.rows, 1));
  for (std::size_t n = 0; n < d.rows; ++n) {
    d(n, static_cast<std::size_t>(labels[n])) -= T(1);
    T* row = d.row(n);
    for (std::size_t k = 0; k < d.cols; ++k) row[k] *= inv;
  }
  return d;
}

template <typename T>
SoftmaxResult<T> linear_softmax_ce(const Matrix<T>& features, std::span<const int> labels,
                                   const LinearParams<T>& params) {
  return softmax_cross_entropy(linear_forward(features, params), labels);
}

template <typename T>
LinearGrads<T> linear_softmax_ce_backward(const Matrix<T>& features, std::span<const int> labels,
                                          const LinearParams<T>& params, const SoftmaxResult<T>& result) {
  return linear_backward(features, params, softmax_cross_entropy_backward(result, labels));
}

template <typename T>
std::size_t ConvLayer<T>::c_in() const {
  return std::visit([](const auto& w) -> std::size_t {
    if constexpr (requires { w.alpha; })
      return w.c_in();
    else
      return w.c_in;
  }, weights);
}

template <typename T>
std::size_t ConvLayer<T>::c_out() const {
  return std::visit([](const auto& w) -> std::size_t {
    if constexpr (requires { w.alpha; })
      return w.c_out();
    else
      return w.c_out;
  }, weights);
}

template <typename T>
int ConvLayer<T>::stride() const {
  return std::visit([](const auto& w) { return w.stride; }, weights);
}

template <typename T>
std::size_t ConvLayer<T>::parameter_count() const {
  return std::visit([](const auto& w) { return w.parameter_count(); }, weights);
}

template <typename T>
ConvLayer<T> ConvLayer<T>::zeros_like() const {
  if (const auto* lean = std::get_if<LeanConvWeights<T>>(&weights))
    return ConvLayer{LeanConvWeights<T>::zeros(lean->c_in(), lean->c_out(), lean->stride)};
  const auto& dense = std::get<DenseConvWeights<T>>(weights);
  return ConvLayer{DenseConvWeights<T>::zeros(dense.c_in, dense.c_out, dense.stride)};
}

template <typename T>
Tensor4<T> ConvLayer<T>::forward(const Tensor4<T>& x) const {
  if (const auto* lean = std::get_if<LeanConvWeights<T>>(&weights)) return lean_conv2d_fused(x, *lean);
  return dense_conv2d(x, std::get<DenseConvWeights<T>>(weights));
}

template <typename T>
Tensor4<T> ConvLayer<T>::backward(const Tensor4<T>& x, const Tensor4<T>& dy, ConvLayer& grad) const {
  if (const auto* lean = std::get_if<LeanConvWeights<T>>(&weights)) {
    auto g = lean_conv2d_backward(x, *lean, dy);
    auto& acc = std::get<LeanConvWeights<T>>(grad.weights);
    for (std::size_t k = 0; k < g.dalpha.size(); ++k) acc.alpha.data[k] += g.dalpha.data[k];
    for (std::size_t k = 0; k < g.dstencil.size(); ++k) acc.stencil.data[k] += g.dstencil.data[k];
    return std::move(g.dx);
  }
  auto g = dense_conv2d_backward(x, std::get<DenseConvWeights<T>>(weights), dy);
  auto& acc = std::get<DenseConvWeights<T>>(grad.weights);
  for (std::size_t k = 0; k < g.dkernel.size(); ++k) acc.kernel[k] += g.dkernel[k];
  return std::move(g.dx);
}

template <typename T>
std::size_t StepWeights<T>::parameter_count() const {
  std::size_t total = conv1.parameter_count() + conv2.parameter_count();
  total += 2 * norm1.channels() + 2 * norm2.channels();
  if (shortcut) total += shortcut->alpha.size();
  return total;
}

template <typename T>
void StepWeights<T>::validate() const {
  if (norm1.channels() != conv1.c_in()) throw std::invalid_argument("StepWeights: norm1 width != conv1 input");
  if (norm2.channels() != conv1.c_out()) throw std::invalid_argument("StepWeights: norm2 width != conv1 output");
  if (conv2.c_in() != conv1.c_out()) throw std::invalid_argument("StepWeights: conv2 input != conv1 output");
  if (conv2.stride() != 1) throw std::invalid_argument("StepWeights: conv2 must have stride 1");
  if (shortcut) {
    if (shortcut->alpha.rows != c_out() || shortcut->alpha.cols != c_in() || shortcut->stride != conv1.stride())
      throw std::invalid_argument("StepWeights: shortcut projection does not match the step's shape change");
  } else if (c_in() != c_out() || conv1.stride() != 1) {
    throw std::invalid_argument("StepWeights: an identity step must keep channels and resolution");
  }
}

template <typename T>
StepWeights<T> StepWeights<T>::zeros_like() const {
  StepWeights g;
  g.conv1 = conv1.zeros_like();
  g.conv2 = conv2.zeros_like();
  g.norm1 = BatchNormParams<T>::make(norm1.channels());
  g.norm2 = BatchNormParams<T>::make(norm2.channels());
  std::fill(g.norm1.scale.begin(), g.norm1.scale.end(), T(0));
  std::fill(g.norm2.scale.begin(), g.norm2.scale.end(), T(0));
  if (shortcut) g.shortcut = Shortcut<T>{Matrix<T>(shortcut->alpha.rows, shortcut->alpha.cols), shortcut->stride};
  return g;
}

template <typename T>
Tensor4<T> resnet_step(const Tensor4<T>& y, StepWeights<T>& step, Mode mode, StepCache<T>* cache) {
  step.validate();
  if (y.channels() != step.c_in())
    throw std::invalid_argument("resnet_step: input has " + std::to_string(y.channels()) + " channels, step expects " +
                                std::to_string(step.c_in()));
  BatchNormCache<T>* bn1 = cache ? &cache->bn1 : nullptr;
  BatchNormCache<T>* bn2 = cache ? &cache->bn2 : nullptr;
  Tensor4<T> pre1 = batch_norm(y, step.norm1, mode, bn1);
  Tensor4<T> act1 = relu(pre1);
  Tensor4<T> mid = step.conv1.forward(act1);
  Tensor4<T> pre2 = batch_norm(mid, step.norm2, mode, bn2);
  Tensor4<T> act2 = relu(pre2);
  Tensor4<T> out = step.conv2.forward(act2);

  if (step.shortcut) {
    const Tensor4<T> proj = conv1x1(y, step.shortcut->alpha, step.shortcut->stride);
    auto o = out.data();
    auto p = proj.data();
    for (std::size_t k = 0; k < o.size(); ++k) o[k] += p[k];
  } else {
    auto o = out.data();
    auto p = y.data();
    for (std::size_t k = 0; k < o.size(); ++k) o[k] += p[k];
  }

  if (cache) {
    cache->input = y;
    cache->pre1 = std::move(pre1);
    cache->act1 = std::move(act1);
    cache->mid = std::move(mid);
    cache->pre2 = std::move(pre2);
    cache->act2 = std::move(act2);
  }
  return out;
}

template <typename T>
Tensor4<T> resnet_step_backward(const StepWeights<T>& step, const StepCache<T>& cache, const Tensor4<T>& dy,
                                StepWeights<T>& grads) {
  const Tensor4<T> dact2 = step.conv2.backward(cache.act2, dy, grads.conv2);
  const Tensor4<T> dpre2 = relu_backward(cache.pre2, dact2);
  const BatchNormGrads<T> g2 = batch_norm_backward(cache.bn2, step.norm2, dpre2);
  const Tensor4<T> dact1 = step.conv1.backward(cache.act1, g2.dx, grads.conv1);
  const Tensor4<T> dpre1 = relu_backward(cache.pre1, dact1);
  BatchNormGrads<T> g1 = batch_norm_backward(cache.bn1, step.norm1, dpre1);
  for (std::size_t c = 0; c < g2.dscale.size(); ++c) {
    grads.norm2.scale[c] += g2.dscale[c];
    grads.norm2.shift[c] += g2.dshift[c];
  }
  for (std::size_t c = 0; c < g1.dscale.size(); ++c) {
    grads.norm1.scale[c] += g1.dscale[c];
    grads.norm1.shift[c] += g1.dshift[c];
  }

  Tensor4<T> dx = std::move(g1.dx);
  auto out = dx.data();
  if (step.shortcut) {
    const Conv1x1Grads<T> sc = conv1x1_backward(cache.input, step.shortcut->alpha, dy, step.shortcut->stride);
    auto s = sc.dx.data();
    for (std::size_t k = 0; k < out.size(); ++k) out[k] += s[k];
    for (std::size_t k = 0; k < sc.dalpha.size(); ++k) grads.shortcut->alpha.data[k] += sc.dalpha.data[k];
  } else {
    auto s = dy.data();
    for (std::size_t k = 0; k < out.size(); ++k) out[k] += s[k];
  }
  return dx;
}

#define LEANRES_INSTANTIATE(T)                                                                                   \
  template Tensor4<T> relu(const Tensor4<T>&);                                                                  \
  template Tensor4<T> relu_backward(const Tensor4<T>&, const Tensor4<T>&);                                      \
  template struct BatchNormParams<T>;                                                                           \
  template Tensor4<T> batch_norm(const Tensor4<T>&, BatchNormParams<T>&, Mode, BatchNormCache<T>*);             \
  template BatchNormGrads<T> batch_norm_backward(const BatchNormCache<T>&, const BatchNormParams<T>&,           \
                                                 const Tensor4<T>&);                                             \
  template Matrix<T> global_avg_pool(const Tensor4<T>&);                                                        \
  template Tensor4<T> global_avg_pool_backward(const Matrix<T>&, const Shape4&);                                \
  template struct LinearParams<T>;                                                                              \
  template Matrix<T> linear_forward(const Matrix<T>&, const LinearParams<T>&);                                  \
  template LinearGrads<T> linear_backward(const Matrix<T>&, const LinearParams<T>&, const Matrix<T>&);          \
  template SoftmaxResult<T> softmax_cross_entropy(const Matrix<T>&, std::span<const int>);                      \
  template Matrix<T> softmax_cross_entropy_backward(const SoftmaxResult<T>&, std::span<const int>);             \
  template SoftmaxResult<T> linear_softmax_ce(const Matrix<T>&, std::span<const int>, const LinearParams<T>&);  \
  template LinearGrads<T> linear_softmax_ce_backward(const Matrix<T>&, std::span<const int>,                    \
                                                     const LinearParams<T>&, const SoftmaxResult<T>&);          \
  template struct ConvLayer<T>;                                                                                 \
  template struct StepWeights<T>;                                                                               \
  template Tensor4<T> resnet_step(const Tensor4<T>&, StepWeights<T>&, Mode, StepCache<T>*);                     \
  template Tensor4<T> resnet_step_backward(const StepWeights<T>&, const StepCache<T>&, const Tensor4<T>&,       \
                                           StepWeights<T>&);

LEANRES_INSTANTIATE(float)
LEANRES_INSTANTIATE(double)

}  // namespace leanres
