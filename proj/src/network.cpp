#include "leanres/network.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace leanres {

std::string to_string(ConfigKind kind) {
  switch (kind) {
    case ConfigKind::A: return "A";
    case ConfigKind::B: return "B";
    case ConfigKind::C: return "C";
    case ConfigKind::D: return "D";
    case ConfigKind::E: return "E";
    case ConfigKind::F: return "F";
    case ConfigKind::custom: return "custom";
  }
  return "custom";
}

std::string to_string(ConvKind kind) { return kind == ConvKind::lean ? "lean" : "dense"; }

ConfigKind parse_config_kind(const std::string& s) {
  if (s == "A") return ConfigKind::A;
  if (s == "B") return ConfigKind::B;
  if (s == "C") return ConfigKind::C;
  if (s == "D") return ConfigKind::D;
  if (s == "E") return ConfigKind::E;
  if (s == "F") return ConfigKind::F;
  if (s == "custom") return ConfigKind::custom;
  throw std::invalid_argument("unknown network configuration '" + s + "' (expected A-F or custom)");
}

ConvKind parse_conv_kind(const std::string& s) {
  if (s == "lean") return ConvKind::lean;
  if (s == "dense") return ConvKind::dense;
  throw std::invalid_argument("unknown convolution kind '" + s + "' (expected lean or dense)");
}

NetworkConfig NetworkConfig::table(ConfigKind kind, ConvKind conv, std::size_t classes) {
  NetworkConfig c;
  c.kind = kind;
  c.conv_kind = conv;
  c.num_classes = classes;
  switch (kind) {
    case ConfigKind::A: c.widths = {32, 64, 128, 256}; c.steps = {2, 3, 3, 3}; break;
    case ConfigKind::B: c.widths = {12, 24, 48, 96}; c.steps = {2, 3, 3, 3}; break;
    case ConfigKind::C: c.widths = {64, 128, 256, 512}; c.steps = {3, 5, 7, 4}; break;
    case ConfigKind::D: c.widths = {24, 48, 96, 192}; c.steps = {3, 5, 7, 4}; break;
    case ConfigKind::E: c.widths = {32, 64, 128, 256, 512}; c.steps = {2, 3, 3, 3, 3}; break;
    case ConfigKind::F: c.widths = {12, 24, 48, 96, 192}; c.steps = {2, 3, 3, 3, 3}; break;
    case ConfigKind::custom: throw std::invalid_argument("NetworkConfig::table: 'custom' has no table row");
  }
  return c;
}

NetworkConfig NetworkConfig::custom(std::vector<std::size_t> widths, std::vector<std::size_t> steps, ConvKind conv,
                                    std::size_t classes) {
  NetworkConfig c;
  c.widths = std::move(widths);
  c.steps = std::move(steps);
  c.conv_kind = conv;
  c.num_classes = classes;
  return c;
}

void NetworkConfig::validate() const {
  if (widths.empty()) throw std::invalid_argument("NetworkConfig: widths must not be empty");
  if (widths.size() != steps.size())
    throw std::invalid_argument("NetworkConfig: " + std::to_string(widths.size()) + " widths but " +
                                std::to_string(steps.size()) + " step counts");
  for (std::size_t b = 0; b < widths.size(); ++b) {
    if (widths[b] == 0) throw std::invalid_argument("NetworkConfig: block widths must be positive");
    if (b > 0 && steps[b] == 0)
      throw std::invalid_argument("NetworkConfig: block " + std::to_string(b) + " needs at least one step");
  }
  if (num_classes < 2) throw std::invalid_argument("NetworkConfig: num_classes must be >= 2");
  if (in_channels == 0) throw std::invalid_argument("NetworkConfig: in_channels must be positive");
}

namespace {

struct StepShape {
  std::size_t block, c_in, c_out;
  int stride;
  bool lean, projection;
};

std::vector<StepShape> step_shapes(const NetworkConfig& c) {
  std::vector<StepShape> out;
  for (std::size_t b = 0; b < c.widths.size(); ++b)
    for (std::size_t s = 0; s < c.steps[b]; ++s) {
      const bool changes = b > 0 && s == 0;
      out.push_back({b, changes ? c.widths[b - 1] : c.widths[b], c.widths[b], changes ? 2 : 1, c.block_is_lean(b),
                     changes});
    }
  return out;
}

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

// Hands out one independent stream per parameter array, in build order.
class SeedStream {
 public:
  explicit SeedStream(std::uint64_t root) : state_(splitmix64(root)) {}
  std::uint64_t next() { return state_ = splitmix64(state_); }

 private:
  std::uint64_t state_;
};

template <typename T>
void init_normal(std::span<T> v, double fan_in, SeedStream& seeds) {
  seeded_fill<T>(v, seeds.next(), Distribution::normal(1.0 / std::sqrt(fan_in)));
}

template <typename T>
ConvLayer<T> make_conv(std::size_t c_in, std::size_t c_out, int stride, bool lean, SeedStream& seeds) {
  if (lean) {
    auto w = LeanConvWeights<T>::zeros(c_in, c_out, stride);
    init_normal<T>(std::span(w.alpha.data), static_cast<double>(c_in), seeds);
    init_normal<T>(std::span(w.stencil.data), 4.0, seeds);
    return ConvLayer<T>{std::move(w)};
  }
  auto w = DenseConvWeights<T>::zeros(c_in, c_out, stride);
  init_normal<T>(std::span(w.kernel), static_cast<double>(c_in * 9), seeds);
  return ConvLayer<T>{std::move(w)};
}

}  // namespace

template <typename T>
NetworkWeights<T> NetworkWeights<T>::zeros_like() const {
  NetworkWeights g;
  g.config = config;
  g.opening = DenseConvWeights<T>::zeros(opening.c_in, opening.c_out, opening.stride);
  g.blocks.resize(blocks.size());
  for (std::size_t b = 0; b < blocks.size(); ++b)
    for (const auto& s : blocks[b]) g.blocks[b].push_back(s.zeros_like());
  g.classifier = LinearParams<T>::zeros(classifier.features(), classifier.classes());
  return g;
}

template <typename T>
NetworkWeights<T> build_network(const NetworkConfig& config, std::uint64_t seed) {
  config.validate();
  SeedStream seeds(seed);
  NetworkWeights<T> net;
  net.config = config;
  net.opening = DenseConvWeights<T>::zeros(config.in_channels, config.widths[0], 1);
  init_normal<T>(std::span(net.opening.kernel), static_cast<double>(config.in_channels * 9), seeds);

  net.blocks.resize(config.widths.size());
  for (const StepShape& sh : step_shapes(config)) {
    StepWeights<T> step;
    step.norm1 = BatchNormParams<T>::make(sh.c_in);
    step.conv1 = make_conv<T>(sh.c_in, sh.c_out, sh.stride, sh.lean, seeds);
    step.norm2 = BatchNormParams<T>::make(sh.c_out);
    step.conv2 = make_conv<T>(sh.c_out, sh.c_out, 1, sh.lean, seeds);
    if (sh.projection) {
      Shortcut<T> sc{Matrix<T>(sh.c_out, sh.c_in), sh.stride};
      init_normal<T>(std::span(sc.alpha.data), static_cast<double>(sh.c_in), seeds);
      step.shortcut = std::move(sc);
    }
    net.blocks[sh.block].push_back(std::move(step));
  }

  const std::size_t features = config.widths.back();
  net.classifier = LinearParams<T>::zeros(features, config.num_classes);
  init_normal<T>(std::span(net.classifier.weight.data), static_cast<double>(features), seeds);
  return net;
}

template <typename T>
Matrix<T> net_forward(NetworkWeights<T>& net, const Tensor4<T>& x, Mode mode, NetworkCache<T>* cache) {
  if (x.channels() != net.config.in_channels)
    throw std::invalid_argument("net_forward: input has " + std::to_string(x.channels()) +
                                " channels, network expects " + std::to_string(net.config.in_channels));
  Tensor4<T> h = dense_conv2d(x, net.opening);
  if (cache) {
    cache->input = x;
    cache->opening_out = h;
    cache->steps.assign(net.blocks.size(), {});
  }
  for (std::size_t b = 0; b < net.blocks.size(); ++b) {
    if (cache) cache->steps[b].resize(net.blocks[b].size());
    for (std::size_t s = 0; s < net.blocks[b].size(); ++s)
      h = resnet_step(h, net.blocks[b][s], mode, cache ? &cache->steps[b][s] : nullptr);
  }
  Matrix<T> features = global_avg_pool(h);
  Matrix<T> logits = linear_forward(features, net.classifier);
  if (cache) {
    cache->pooled_shape = h.shape();
    cache->features = std::move(features);
  }
  return logits;
}

template <typename T>
NetworkWeights<T> net_backward(const NetworkWeights<T>& net, const NetworkCache<T>& cache, const Matrix<T>& dlogits) {
  NetworkWeights<T> grads = net.zeros_like();
  LinearGrads<T> lg = linear_backward(cache.features, net.classifier, dlogits);
  grads.classifier.weight = std::move(lg.dweight);
  grads.classifier.bias = std::move(lg.dbias);
  Tensor4<T> dh = global_avg_pool_backward(lg.dfeatures, cache.pooled_shape);
  for (std::size_t b = net.blocks.size(); b-- > 0;)
    for (std::size_t s = net.blocks[b].size(); s-- > 0;)
      dh = resnet_step_backward(net.blocks[b][s], cache.steps[b][s], dh, grads.blocks[b][s]);
  DenseConvGrads<T> og = dense_conv2d_backward(cache.input, net.opening, dh);
  grads.opening.kernel = std::move(og.dkernel);
  return grads;
}

template <typename T>
LossAndGrad<T> net_loss_and_grad(NetworkWeights<T>& net, const Tensor4<T>& x, std::span<const int> labels,
                                 Mode mode) {
  NetworkCache<T> cache;
  const Matrix<T> logits = net_forward(net, x, mode, &cache);
  SoftmaxResult<T> result = softmax_cross_entropy(logits, labels);
  const Matrix<T> dlogits = softmax_cross_entropy_backward(result, labels);
  return {std::move(result), net_backward(net, cache, dlogits)};
}

template <typename T>
std::size_t count_params(const NetworkWeights<T>& net) {
  std::size_t total = 0;
  visit_network(net, Visit::trainable, [&](const std::string&, auto values) { total += values.size(); });
  return total;
}

std::size_t count_params(const NetworkConfig& config) {
  config.validate();
  std::size_t total = config.in_channels * config.widths[0] * 9;
  for (const StepShape& sh : step_shapes(config)) {
    auto conv = [&](std::size_t ci, std::size_t co) { return sh.lean ? ci * co + 4 * std::min(ci, co) : 9 * ci * co; };
    total += conv(sh.c_in, sh.c_out) + conv(sh.c_out, sh.c_out);
    total += 2 * sh.c_in + 2 * sh.c_out;
    if (sh.projection) total += sh.c_in * sh.c_out;
  }
  total += config.widths.back() * config.num_classes + config.num_classes;
  return total;
}

std::vector<LayerShape> layer_plan(const NetworkConfig& config, std::size_t h, std::size_t w) {
  config.validate();
  std::vector<LayerShape> plan;
  plan.push_back({LayerKind::dense3x3, config.in_channels, config.widths[0], h, w});
  for (const StepShape& sh : step_shapes(config)) {
    if (sh.stride == 2) {
      h = conv_output_extent(h, 2);
      w = conv_output_extent(w, 2);
    }
    const LayerKind kind = sh.lean ? LayerKind::lean : LayerKind::dense3x3;
    plan.push_back({kind, sh.c_in, sh.c_out, h, w});
    plan.push_back({kind, sh.c_out, sh.c_out, h, w});
    if (sh.projection) plan.push_back({LayerKind::conv1x1, sh.c_in, sh.c_out, h, w});
  }
  return plan;
}

std::uint64_t count_flops(std::span<const LayerShape> layers) {
  std::uint64_t total = 0;
  for (const auto& l : layers) total += layer_flops(l.kind, l.c_in, l.c_out, l.out_h, l.out_w);
  return total;
}

std::uint64_t count_flops(const NetworkConfig& config, std::size_t h, std::size_t w) {
  const auto plan = layer_plan(config, h, w);
  return count_flops(std::span<const LayerShape>(plan));
}

#define LEANRES_INSTANTIATE(T)                                                                              \
  template struct NetworkWeights<T>;                                                                       \
  template NetworkWeights<T> build_network(const NetworkConfig&, std::uint64_t);                            \
  template Matrix<T> net_forward(NetworkWeights<T>&, const Tensor4<T>&, Mode, NetworkCache<T>*);            \
  template NetworkWeights<T> net_backward(const NetworkWeights<T>&, const NetworkCache<T>&, const Matrix<T>&); \
  template LossAndGrad<T> net_loss_and_grad(NetworkWeights<T>&, const Tensor4<T>&, std::span<const int>, Mode); \
  template std::size_t count_params(const NetworkWeights<T>&);

LEANRES_INSTANTIATE(float)
LEANRES_INSTANTIATE(double)

}  // namespace leanres
