#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "leanres/conv.hpp"
#include "leanres/network.hpp"
#include "leanres/tensor.hpp"

namespace leanres {

// ---------------------------------------------------------------------------
// Oracles. These take the slow, obvious route (per-pixel summation, explicit
// bounds tests) and share no code with the production kernels.

template <typename T>
Tensor4<T> naive_lean_conv2d(const Tensor4<T>& x, const LeanConvWeights<T>& w);

template <typename T>
Tensor4<T> naive_dense_conv2d(const Tensor4<T>& x, const DenseConvWeights<T>& w);

// 3D lean convolution evaluated as a 27-point dense convolution whose kernel
// is the 7-point embedding of the lean weights.
template <typename T>
Tensor5<T> naive_lean_conv3d(const Tensor5<T>& x, const LeanConv3dWeights<T>& w);

// Counts multiplies of a direct loop over every kernel tap (padding taps
// included), two FLOPs each.
std::uint64_t instrumented_flops(LayerKind kind, std::size_t c_in, std::size_t c_out, std::size_t h, std::size_t w);

// ---------------------------------------------------------------------------
// Central finite differences.

struct GradCheck {
  std::string name;
  double rel_error = 0.0;  // max |analytic - numeric| / max |numeric|
  std::size_t entries = 0;
  std::size_t skipped = 0;  // entries whose perturbation crossed a ReLU kink
  bool passed = false;
};

// Loss value plus a hash of the ReLU sign pattern seen while computing it
// (0 when the function has no kinks).
struct FdEval {
  double loss = 0.0;
  std::uint64_t pattern = 0;
};

std::uint64_t sign_pattern(const Tensor4<double>& pre, std::uint64_t h = 1469598103934665603ull);

inline constexpr double kFdStep = 1e-5;
inline constexpr double kFdTolerance = 1e-6;

/// Perturbs each entry of `params` by +-step, evaluates `loss`, and compares
/// the central difference with `analytic`. `params` is restored afterwards.
/// The error is normwise: max_i |a_i - n_i| / max_i |n_i|. Entries whose
/// +-step evaluations change the ReLU sign pattern are not differentiable
/// there and are skipped; more than a tenth skipped fails the check.
GradCheck check_gradient(const std::string& name, std::span<double> params, std::span<const double> analytic,
                         const std::function<FdEval()>& loss, double step = kFdStep, double tol = kFdTolerance);

// ---------------------------------------------------------------------------
// Randomized lean-convolution cases shared by the suite and the tests.

struct ConvCase {
  std::size_t n, c_in, c_out, h, w;
  int stride;
  std::uint64_t seed;
};

// Every (c_in, c_out) pair from {1, 3, 4, 16, 64} with both strides, cycled
// with random maps of 1..32 per side (the first rounds pin 1x1 and 32x32).
std::vector<ConvCase> equivalence_cases(std::size_t count, std::uint64_t seed);

template <typename T>
LeanConvWeights<T> random_lean_weights(std::size_t c_in, std::size_t c_out, int stride, std::uint64_t seed);

struct EquivalenceReport {
  std::size_t cases = 0;
  double fused_vs_reference = 0.0;
  double fused_vs_naive = 0.0;
  double dense_vs_fused = 0.0;  // dense_conv2d(lean_to_dense(w)) against fused
};

template <typename T>
EquivalenceReport run_equivalence(std::span<const ConvCase> cases);

// ---------------------------------------------------------------------------
// Invariant suite behind `leanres verify`.

struct CheckResult {
  std::string name;
  bool passed = false;
  std::string detail;
};

std::vector<CheckResult> run_verify_suite(std::uint64_t seed, std::ostream* log = nullptr);

// Full set of gradient checks (conv, norm, activation, pooling, classifier,
// residual steps, a two-block network, the 3D operator).
std::vector<GradCheck> run_gradient_checks(std::uint64_t seed);

// Parameter counts of the standard configurations against the published
// figures (+-15%).
struct ParamBand {
  ConfigKind kind;
  ConvKind conv;
  std::size_t classes;
  double published;
  std::size_t counted;
  bool passed;
};
std::vector<ParamBand> check_parameter_bands();

}  // namespace leanres
