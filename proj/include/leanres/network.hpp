#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "leanres/conv.hpp"
#include "leanres/layers.hpp"
#include "leanres/tensor.hpp"

namespace leanres {

enum class ConfigKind { A, B, C, D, E, F, custom };
enum class ConvKind { lean, dense };

std::string to_string(ConfigKind kind);
std::string to_string(ConvKind kind);
ConfigKind parse_config_kind(const std::string& s);
ConvKind parse_conv_kind(const std::string& s);

struct NetworkConfig {
  ConfigKind kind = ConfigKind::custom;
  std::vector<std::size_t> widths;
  std::vector<std::size_t> steps;
  ConvKind conv_kind = ConvKind::lean;
  std::size_t num_classes = 10;
  std::size_t in_channels = 3;
  std::size_t early_dense_blocks = 0;

  // Rows of the standard configuration table (types A-F).
  static NetworkConfig table(ConfigKind kind, ConvKind conv = ConvKind::lean, std::size_t classes = 10);
  static NetworkConfig custom(std::vector<std::size_t> widths, std::vector<std::size_t> steps,
                              ConvKind conv = ConvKind::lean, std::size_t classes = 10);

  void validate() const;
  // Whether residual block b uses lean convolutions.
  bool block_is_lean(std::size_t b) const { return conv_kind == ConvKind::lean && b >= early_dense_blocks; }
  bool operator==(const NetworkConfig&) const = default;
};

template <typename T>
struct NetworkWeights {
  NetworkConfig config;
  DenseConvWeights<T> opening;
  std::vector<std::vector<StepWeights<T>>> blocks;
  LinearParams<T> classifier;

  NetworkWeights zeros_like() const;
};

template <typename W, typename F>
void visit_network(W& net, Visit which, F&& f) {
  f(std::string("opening.kernel"), std::span(net.opening.kernel));
  for (std::size_t b = 0; b < net.blocks.size(); ++b)
    for (std::size_t s = 0; s < net.blocks[b].size(); ++s)
      visit_step(net.blocks[b][s], "block" + std::to_string(b) + ".step" + std::to_string(s), which, f);
  f(std::string("classifier.weight"), std::span(net.classifier.weight.data));
  f(std::string("classifier.bias"), std::span(net.classifier.bias));
}

/// Deterministic initialization: convolution and projection weights are drawn
/// from N(0, 1/fan_in) (fan-in 4 for stencil entries), normalization starts at
/// scale 1 / shift 0, classifier bias at 0.
template <typename T>
NetworkWeights<T> build_network(const NetworkConfig& config, std::uint64_t seed);

template <typename T>
struct NetworkCache {
  Tensor4<T> input;
  Tensor4<T> opening_out;
  std::vector<std::vector<StepCache<T>>> steps;
  Shape4 pooled_shape;
  Matrix<T> features;
};

template <typename T>
Matrix<T> net_forward(NetworkWeights<T>& net, const Tensor4<T>& x, Mode mode, NetworkCache<T>* cache = nullptr);

// Gradients of the loss with respect to every trainable array, congruent to
// `net` (running statistics in the result are meaningless).
template <typename T>
NetworkWeights<T> net_backward(const NetworkWeights<T>& net, const NetworkCache<T>& cache, const Matrix<T>& dlogits);

template <typename T>
struct LossAndGrad {
  SoftmaxResult<T> result;
  NetworkWeights<T> grads;
};

template <typename T>
LossAndGrad<T> net_loss_and_grad(NetworkWeights<T>& net, const Tensor4<T>& x, std::span<const int> labels,
                                 Mode mode = Mode::train);

// Trainable scalars: convolutions, projections, normalization scale/shift and
// the classifier. Running statistics are not counted.
template <typename T>
std::size_t count_params(const NetworkWeights<T>& net);
std::size_t count_params(const NetworkConfig& config);

struct LayerShape {
  LayerKind kind;
  std::size_t c_in, c_out, out_h, out_w;
};

// Every convolution of the network (opening, step convolutions, projection
// shortcuts) with its output resolution for an h x w input.
std::vector<LayerShape> layer_plan(const NetworkConfig& config, std::size_t h, std::size_t w);
std::uint64_t count_flops(std::span<const LayerShape> layers);
std::uint64_t count_flops(const NetworkConfig& config, std::size_t h, std::size_t w);

// Checkpoint format: "LRN1", then the configuration as length-prefixed fields
// (u32 LE byte length + payload), then every array in visit_network(Visit::all)
// order as a u64 LE element count followed by little-endian float32 values.
std::vector<std::uint8_t> encode_checkpoint(const NetworkWeights<float>& net);
NetworkWeights<float> decode_checkpoint(std::span<const std::uint8_t> bytes);
void save_checkpoint(const std::filesystem::path& path, const NetworkWeights<float>& net);
NetworkWeights<float> load_checkpoint(const std::filesystem::path& path);

}  // namespace leanres
