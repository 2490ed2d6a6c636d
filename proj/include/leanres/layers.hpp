#pragma once

#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "leanres/conv.hpp"
#include "leanres/tensor.hpp"

namespace leanres {

enum class Mode { train, eval };

// Which arrays a parameter visitor sees: trainable ones only, or also the
// batch-norm running statistics (checkpointing).
enum class Visit { trainable, all };

template <typename T>
Tensor4<T> relu(const Tensor4<T>& x);
template <typename T>
Tensor4<T> relu_backward(const Tensor4<T>& x, const Tensor4<T>& dy);

template <typename T>
struct BatchNormParams {
  std::vector<T> scale, shift;
  std::vector<T> running_mean, running_var;
  double epsilon = 1e-5;
  double momentum = 0.1;

  static BatchNormParams make(std::size_t channels);
  std::size_t channels() const { return scale.size(); }
};

template <typename T>
struct BatchNormCache {
  Tensor4<T> xhat;
  std::vector<T> inv_std;
  Mode mode = Mode::train;
};

template <typename T>
struct BatchNormGrads {
  Tensor4<T> dx;
  std::vector<T> dscale, dshift;
};

/// Per-channel normalization over (batch, height, width). Train mode uses
/// batch statistics and folds them into the running estimates (unbiased
/// variance) once the output is computed; eval mode uses the running
/// estimates and leaves `params` untouched.
template <typename T>
Tensor4<T> batch_norm(const Tensor4<T>& x, BatchNormParams<T>& params, Mode mode, BatchNormCache<T>* cache = nullptr);

template <typename T>
BatchNormGrads<T> batch_norm_backward(const BatchNormCache<T>& cache, const BatchNormParams<T>& params,
                                      const Tensor4<T>& dy);

// batch x channels matrix of per-map means.
template <typename T>
Matrix<T> global_avg_pool(const Tensor4<T>& x);
template <typename T>
Tensor4<T> global_avg_pool_backward(const Matrix<T>& dy, const Shape4& input_shape);

template <typename T>
struct LinearParams {
  Matrix<T> weight;  // classes x features
  std::vector<T> bias;

  static LinearParams zeros(std::size_t features, std::size_t classes);
  std::size_t classes() const { return weight.rows; }
  std::size_t features() const { return weight.cols; }
  std::size_t parameter_count() const { return weight.size() + bias.size(); }
};

template <typename T>
Matrix<T> linear_forward(const Matrix<T>& features, const LinearParams<T>& params);

template <typename T>
struct LinearGrads {
  Matrix<T> dfeatures;
  Matrix<T> dweight;
  std::vector<T> dbias;
};

template <typename T>
LinearGrads<T> linear_backward(const Matrix<T>& features, const LinearParams<T>& params, const Matrix<T>& dlogits);

template <typename T>
struct SoftmaxResult {
  double loss = 0.0;      // mean cross-entropy over the batch
  double accuracy = 0.0;  // fraction of rows whose argmax is the label
  std::size_t correct = 0;
  Matrix<T> probs;
};

template <typename T>
SoftmaxResult<T> softmax_cross_entropy(const Matrix<T>& logits, std::span<const int> labels);

// Gradient of the mean loss with respect to the logits.
template <typename T>
Matrix<T> softmax_cross_entropy_backward(const SoftmaxResult<T>& result, std::span<const int> labels);

template <typename T>
SoftmaxResult<T> linear_softmax_ce(const Matrix<T>& features, std::span<const int> labels,
                                   const LinearParams<T>& params);

template <typename T>
LinearGrads<T> linear_softmax_ce_backward(const Matrix<T>& features, std::span<const int> labels,
                                          const LinearParams<T>& params, const SoftmaxResult<T>& result);

// A convolution inside a residual step: lean or dense 3x3.
template <typename T>
struct ConvLayer {
  std::variant<LeanConvWeights<T>, DenseConvWeights<T>> weights;

  bool is_lean() const { return std::holds_alternative<LeanConvWeights<T>>(weights); }
  std::size_t c_in() const;
  std::size_t c_out() const;
  int stride() const;
  std::size_t parameter_count() const;

  ConvLayer zeros_like() const;
  Tensor4<T> forward(const Tensor4<T>& x) const;
  // Returns dx and accumulates weight gradients into `grad` (a zeros_like).
  Tensor4<T> backward(const Tensor4<T>& x, const Tensor4<T>& dy, ConvLayer& grad) const;
};

template <typename T>
struct Shortcut {
  Matrix<T> alpha;  // c_out x c_in projection
  int stride = 1;
};

/// Weights of one residual step y + K2 relu(N2(K1 relu(N1(y)))). A shortcut
/// projection is present only on dimension-changing steps.
template <typename T>
struct StepWeights {
  ConvLayer<T> conv1, conv2;
  BatchNormParams<T> norm1, norm2;
  std::optional<Shortcut<T>> shortcut;

  std::size_t c_in() const { return conv1.c_in(); }
  std::size_t c_out() const { return conv2.c_out(); }
  std::size_t parameter_count() const;
  void validate() const;
  StepWeights zeros_like() const;
};

template <typename T>
struct StepCache {
  Tensor4<T> input;
  BatchNormCache<T> bn1, bn2;
  Tensor4<T> pre1, act1, mid, pre2, act2;
};

template <typename T>
Tensor4<T> resnet_step(const Tensor4<T>& y, StepWeights<T>& step, Mode mode, StepCache<T>* cache = nullptr);

// Returns d(loss)/d(input); accumulates parameter gradients into `grads`.
template <typename T>
Tensor4<T> resnet_step_backward(const StepWeights<T>& step, const StepCache<T>& cache, const Tensor4<T>& dy,
                                StepWeights<T>& grads);

// Parameter visitation. The visitor is called as f(name, std::span<U>) in a
// fixed declaration order; U is const-qualified when the weights are.
template <typename Params, typename F>
void visit_batch_norm(Params& p, const std::string& prefix, Visit which, F&& f) {
  f(prefix + ".scale", std::span(p.scale));
  f(prefix + ".shift", std::span(p.shift));
  if (which == Visit::all) {
    f(prefix + ".running_mean", std::span(p.running_mean));
    f(prefix + ".running_var", std::span(p.running_var));
  }
}

template <typename Layer, typename F>
void visit_conv(Layer& c, const std::string& prefix, F&& f) {
  std::visit(
      [&](auto& w) {
        if constexpr (requires { w.alpha; }) {
          f(prefix + ".alpha", std::span(w.alpha.data));
          f(prefix + ".stencil", std::span(w.stencil.data));
        } else {
          f(prefix + ".kernel", std::span(w.kernel));
        }
      },
      c.weights);
}

template <typename Step, typename F>
void visit_step(Step& s, const std::string& prefix, Visit which, F&& f) {
  visit_batch_norm(s.norm1, prefix + ".norm1", which, f);
  visit_conv(s.conv1, prefix + ".conv1", f);
  visit_batch_norm(s.norm2, prefix + ".norm2", which, f);
  visit_conv(s.conv2, prefix + ".conv2", f);
  if (s.shortcut) f(prefix + ".shortcut", std::span(s.shortcut->alpha.data));
}

}  // namespace leanres
