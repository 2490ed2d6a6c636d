#include "leanres/verify.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>
#include <ostream>
#include <random>
#include <sstream>
#include <stdexcept>

#include "leanres/data.hpp"
#include "leanres/layers.hpp"
#include "leanres/optim.hpp"

namespace leanres {

// ---------------------------------------------------------------------------
// Oracles

namespace {

using sidx = long long;

bool inside(sidx y, sidx x, std::size_t h, std::size_t w) {
  return y >= 0 && x >= 0 && y < static_cast<sidx>(h) && x < static_cast<sidx>(w);
}

std::size_t out_extent(std::size_t in, int stride) { return (in + static_cast<std::size_t>(stride) - 1) / stride; }

}  // namespace

template <typename T>
Tensor4<T> naive_lean_conv2d(const Tensor4<T>& x, const LeanConvWeights<T>& w) {
  const Shape4 s = x.shape();
  if (s.c != w.alpha.cols) throw std::invalid_argument("naive_lean_conv2d: channel mismatch");
  const std::size_t ho = out_extent(s.h, w.stride), wo = out_extent(s.w, w.stride);
  const std::size_t d = std::min(w.alpha.rows, w.alpha.cols);
  // top, left, right, bottom
  const sidx dy[4] = {-1, 0, 0, 1}, dx[4] = {0, -1, 1, 0};
  Tensor4<T> out(s.n, w.alpha.rows, ho, wo);
  for (std::size_t n = 0; n < s.n; ++n)
    for (std::size_t o = 0; o < w.alpha.rows; ++o)
      for (std::size_t oy = 0; oy < ho; ++oy)
        for (std::size_t ox = 0; ox < wo; ++ox) {
          const std::size_t y = oy * w.stride, xx = ox * w.stride;
          T acc = 0;
          for (std::size_t i = 0; i < s.c; ++i) acc += w.alpha(o, i) * x(n, i, y, xx);
          if (o < d)
            for (int k = 0; k < 4; ++k) {
              const sidx yy = static_cast<sidx>(y) + dy[k], xn = static_cast<sidx>(xx) + dx[k];
              if (inside(yy, xn, s.h, s.w)) acc += w.stencil(o, k) * x(n, o, yy, xn);
            }
          out(n, o, oy, ox) = acc;
        }
  return out;
}

template <typename T>
Tensor4<T> naive_dense_conv2d(const Tensor4<T>& x, const DenseConvWeights<T>& w) {
  const Shape4 s = x.shape();
  if (s.c != w.c_in) throw std::invalid_argument("naive_dense_conv2d: channel mismatch");
  const std::size_t ho = out_extent(s.h, w.stride), wo = out_extent(s.w, w.stride);
  const sidx ry = static_cast<sidx>(w.kh / 2), rx = static_cast<sidx>(w.kw / 2);
  Tensor4<T> out(s.n, w.c_out, ho, wo);
  for (std::size_t n = 0; n < s.n; ++n)
    for (std::size_t o = 0; o < w.c_out; ++o)
      for (std::size_t oy = 0; oy < ho; ++oy)
        for (std::size_t ox = 0; ox < wo; ++ox) {
          T acc = 0;
          for (std::size_t i = 0; i < w.c_in; ++i)
            for (std::size_t ky = 0; ky < w.kh; ++ky)
              for (std::size_t kx = 0; kx < w.kw; ++kx) {
                const sidx yy = static_cast<sidx>(oy * w.stride + ky) - ry;
                const sidx xn = static_cast<sidx>(ox * w.stride + kx) - rx;
                if (inside(yy, xn, s.h, s.w)) acc += w.at(o, i, ky, kx) * x(n, i, yy, xn);
              }
          out(n, o, oy, ox) = acc;
        }
  return out;
}

template <typename T>
Tensor5<T> naive_lean_conv3d(const Tensor5<T>& x, const LeanConv3dWeights<T>& w) {
  const Shape5 s = x.shape();
  const std::size_t ci = w.alpha.cols, co = w.alpha.rows, d = std::min(ci, co);
  if (s.c != ci) throw std::invalid_argument("naive_lean_conv3d: channel mismatch");
  // 27-point kernel, index (o, i, z+1, y+1, x+1).
  std::vector<T> k(co * ci * 27, T(0));
  auto at = [&](std::size_t o, std::size_t i, int z, int y, int xx) -> T& {
    return k[((o * ci + i) * 3 + (z + 1)) * 9 + (y + 1) * 3 + (xx + 1)];
  };
  for (std::size_t o = 0; o < co; ++o)
    for (std::size_t i = 0; i < ci; ++i) at(o, i, 0, 0, 0) = w.alpha(o, i);
  for (std::size_t c = 0; c < d; ++c) {
    at(c, c, 0, 0, -1) = w.stencil(c, kXMinus);
    at(c, c, 0, 0, 1) = w.stencil(c, kXPlus);
    at(c, c, 0, -1, 0) = w.stencil(c, kYMinus);
    at(c, c, 0, 1, 0) = w.stencil(c, kYPlus);
    at(c, c, -1, 0, 0) = w.stencil(c, kZMinus);
    at(c, c, 1, 0, 0) = w.stencil(c, kZPlus);
  }
  Tensor5<T> out(Shape5{s.n, co, s.d, s.h, s.w});
  for (std::size_t n = 0; n < s.n; ++n)
    for (std::size_t o = 0; o < co; ++o)
      for (std::size_t z = 0; z < s.d; ++z)
        for (std::size_t y = 0; y < s.h; ++y)
          for (std::size_t xx = 0; xx < s.w; ++xx) {
            T acc = 0;
            for (std::size_t i = 0; i < ci; ++i)
              for (int a = -1; a <= 1; ++a)
                for (int b = -1; b <= 1; ++b)
                  for (int c = -1; c <= 1; ++c) {
                    const sidx zz = static_cast<sidx>(z) + a, yy = static_cast<sidx>(y) + b,
                               xn = static_cast<sidx>(xx) + c;
                    if (zz < 0 || zz >= static_cast<sidx>(s.d) || !inside(yy, xn, s.h, s.w)) continue;
                    acc += at(o, i, a, b, c) * x(n, i, zz, yy, xn);
                  }
            out(n, o, z, y, xx) = acc;
          }
  return out;
}

std::uint64_t instrumented_flops(LayerKind kind, std::size_t c_in, std::size_t c_out, std::size_t h, std::size_t w) {
  std::uint64_t mults = 0;
  const std::size_t d = std::min(c_in, c_out);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t o = 0; o < c_out; ++o) {
        switch (kind) {
          case LayerKind::lean:
            for (std::size_t i = 0; i < c_in; ++i) ++mults;
            if (o < d)
              for (int k = 0; k < 4; ++k) ++mults;
            break;
          case LayerKind::dense3x3:
            for (std::size_t i = 0; i < c_in; ++i)
              for (int k = 0; k < 9; ++k) ++mults;
            break;
          case LayerKind::conv1x1:
            for (std::size_t i = 0; i < c_in; ++i) ++mults;
            break;
          case LayerKind::depthwise4:
            if (o < d)
              for (int k = 0; k < 4; ++k) ++mults;
            break;
        }
      }
  return 2 * mults;
}

// ---------------------------------------------------------------------------
// Finite differences

std::uint64_t sign_pattern(const Tensor4<double>& pre, std::uint64_t h) {
  for (double v : pre.data()) {
    h ^= v > 0.0 ? 1u : 0u;
    h *= 1099511628211ull;
  }
  return h;
}

GradCheck check_gradient(const std::string& name, std::span<double> params, std::span<const double> analytic,
                         const std::function<FdEval()>& loss, double step, double tol) {
  if (params.size() != analytic.size())
    throw std::invalid_argument("check_gradient: " + name + " has " + std::to_string(params.size()) +
                                " parameters but " + std::to_string(analytic.size()) + " gradient entries");
  GradCheck r{name, 0.0, params.size(), 0, false};
  const std::uint64_t base = loss().pattern;
  double max_diff = 0.0, max_num = 0.0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double keep = params[i];
    params[i] = keep + step;
    const FdEval plus = loss();
    params[i] = keep - step;
    const FdEval minus = loss();
    params[i] = keep;
    if (plus.pattern != base || minus.pattern != base) {
      ++r.skipped;
      continue;
    }
    const double numeric = (plus.loss - minus.loss) / (2.0 * step);
    max_diff = std::max(max_diff, std::abs(numeric - analytic[i]));
    max_num = std::max(max_num, std::abs(numeric));
  }
  r.rel_error = max_num > 0.0 ? max_diff / max_num : max_diff;
  r.passed = std::isfinite(r.rel_error) && r.rel_error <= tol && r.skipped * 10 <= r.entries &&
             r.skipped < r.entries;
  return r;
}

// ---------------------------------------------------------------------------
// Randomized cases

std::vector<ConvCase> equivalence_cases(std::size_t count, std::uint64_t seed) {
  static constexpr std::size_t kChannels[] = {1, 3, 4, 16, 64};
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> side(1, 32);
  std::vector<ConvCase> cases;
  cases.reserve(count);
  for (std::size_t round = 0; cases.size() < count; ++round)
    for (std::size_t ci : kChannels)
      for (std::size_t co : kChannels)
        for (int stride : {1, 2}) {
          if (cases.size() == count) return cases;
          std::size_t h = side(rng), w = side(rng);
          if (round == 0) h = w = 1;
          if (round == 1) h = w = 32;
          cases.push_back({2, ci, co, h, w, stride, rng()});
        }
  return cases;
}

template <typename T>
LeanConvWeights<T> random_lean_weights(std::size_t c_in, std::size_t c_out, int stride, std::uint64_t seed) {
  auto w = LeanConvWeights<T>::zeros(c_in, c_out, stride);
  seeded_fill<T>(std::span(w.alpha.data), seed, Distribution::normal(1.0 / std::sqrt(static_cast<double>(c_in))));
  seeded_fill<T>(std::span(w.stencil.data), seed + 1, Distribution::normal(0.5));
  return w;
}

template <typename T>
EquivalenceReport run_equivalence(std::span<const ConvCase> cases) {
  EquivalenceReport r;
  for (const ConvCase& c : cases) {
    const auto x = seeded_fill<T>(Shape4{c.n, c.c_in, c.h, c.w}, c.seed, Distribution::uniform(1.0));
    const auto w = random_lean_weights<T>(c.c_in, c.c_out, c.stride, c.seed + 7);
    const Tensor4<T> fused = lean_conv2d_fused(x, w);
    r.fused_vs_reference = std::max(r.fused_vs_reference, max_abs_diff(fused, lean_conv2d_reference(x, w)));
    r.fused_vs_naive = std::max(r.fused_vs_naive, max_abs_diff(fused, naive_lean_conv2d(x, w)));
    r.dense_vs_fused = std::max(r.dense_vs_fused, max_abs_diff(dense_conv2d(x, lean_to_dense(w)), fused));
    ++r.cases;
  }
  return r;
}

// ---------------------------------------------------------------------------
// Gradient checks

namespace {

using D = double;

D weighted_sum(const Tensor4<D>& y, const Tensor4<D>& r) { return inner_product<D>(y.data(), r.data()); }

Tensor4<D> probe_for(const Shape4& s, std::uint64_t seed) { return seeded_fill<D>(s, seed, Distribution::uniform(1.0)); }

std::span<const D> cspan(const std::vector<D>& v) { return v; }

void add(std::vector<GradCheck>& out, GradCheck g) { out.push_back(std::move(g)); }

void lean_conv_checks(std::vector<GradCheck>& out, std::size_t ci, std::size_t co, int stride, std::uint64_t seed) {
  const std::string tag = "lean_conv." + std::to_string(ci) + "to" + std::to_string(co) + ".s" + std::to_string(stride);
  auto x = seeded_fill<D>(Shape4{2, ci, 5, 6}, seed, Distribution::uniform(1.0));
  auto w = random_lean_weights<D>(ci, co, stride, seed + 1);
  const Tensor4<D> r = probe_for(lean_conv2d_fused(x, w).shape(), seed + 2);
  const LeanConvGrads<D> g = lean_conv2d_backward(x, w, r);
  auto f = [&] { return FdEval{weighted_sum(lean_conv2d_fused(x, w), r), 0}; };
  add(out, check_gradient(tag + ".dx", x.data(), g.dx.data(), f));
  add(out, check_gradient(tag + ".dalpha", w.alpha.data, cspan(g.dalpha.data), f));
  add(out, check_gradient(tag + ".dstencil", w.stencil.data, cspan(g.dstencil.data), f));
}

void dense_conv_checks(std::vector<GradCheck>& out, int stride, std::uint64_t seed) {
  const std::string tag = "dense_conv.s" + std::to_string(stride);
  auto x = seeded_fill<D>(Shape4{2, 3, 5, 4}, seed, Distribution::uniform(1.0));
  auto w = DenseConvWeights<D>::zeros(3, 2, stride);
  seeded_fill<D>(std::span(w.kernel), seed + 1, Distribution::normal(0.3));
  const Tensor4<D> r = probe_for(dense_conv2d(x, w).shape(), seed + 2);
  const DenseConvGrads<D> g = dense_conv2d_backward(x, w, r);
  auto f = [&] { return FdEval{weighted_sum(dense_conv2d(x, w), r), 0}; };
  add(out, check_gradient(tag + ".dx", x.data(), g.dx.data(), f));
  add(out, check_gradient(tag + ".dkernel", w.kernel, cspan(g.dkernel), f));
}

void conv1x1_checks(std::vector<GradCheck>& out, std::uint64_t seed) {
  auto x = seeded_fill<D>(Shape4{2, 3, 5, 5}, seed, Distribution::uniform(1.0));
  Matrix<D> a(4, 3);
  seeded_fill<D>(std::span(a.data), seed + 1, Distribution::normal(0.5));
  const Tensor4<D> r = probe_for(conv1x1(x, a, 2).shape(), seed + 2);
  const Conv1x1Grads<D> g = conv1x1_backward(x, a, r, 2);
  auto f = [&] { return FdEval{weighted_sum(conv1x1(x, a, 2), r), 0}; };
  add(out, check_gradient("conv1x1.s2.dx", x.data(), g.dx.data(), f));
  add(out, check_gradient("conv1x1.s2.dalpha", a.data, cspan(g.dalpha.data), f));
}

void batch_norm_checks(std::vector<GradCheck>& out, std::uint64_t seed) {
  auto x = seeded_fill<D>(Shape4{3, 2, 3, 4}, seed, Distribution::uniform(2.0));
  auto p = BatchNormParams<D>::make(2);
  seeded_fill<D>(std::span(p.scale), seed + 1, Distribution::uniform(1.5));
  seeded_fill<D>(std::span(p.shift), seed + 2, Distribution::uniform(1.0));
  const Tensor4<D> r = probe_for(x.shape(), seed + 3);
  BatchNormCache<D> cache;
  batch_norm(x, p, Mode::train, &cache);
  const BatchNormGrads<D> g = batch_norm_backward(cache, p, r);
  auto f = [&] { return FdEval{weighted_sum(batch_norm(x, p, Mode::train), r), 0}; };
  add(out, check_gradient("batch_norm.train.dx", x.data(), g.dx.data(), f));
  add(out, check_gradient("batch_norm.train.dscale", p.scale, cspan(g.dscale), f));
  add(out, check_gradient("batch_norm.train.dshift", p.shift, cspan(g.dshift), f));

  BatchNormCache<D> ecache;
  batch_norm(x, p, Mode::eval, &ecache);
  const BatchNormGrads<D> ge = batch_norm_backward(ecache, p, r);
  auto fe = [&] { return FdEval{weighted_sum(batch_norm(x, p, Mode::eval), r), 0}; };
  add(out, check_gradient("batch_norm.eval.dx", x.data(), ge.dx.data(), fe));
}

void relu_and_pool_checks(std::vector<GradCheck>& out, std::uint64_t seed) {
  // Inputs kept at least 0.1 away from the kink.
  auto x = seeded_fill<D>(Shape4{2, 3, 4, 4}, seed, Distribution::uniform(1.0));
  for (D& v : x.data()) v = v < 0 ? v - 0.1 : v + 0.1;
  const Tensor4<D> r = probe_for(x.shape(), seed + 1);
  const Tensor4<D> g = relu_backward(x, r);
  add(out, check_gradient("relu.dx", x.data(), g.data(), [&] {
    return FdEval{weighted_sum(relu(x), r), sign_pattern(x)};
  }));

  auto xp = seeded_fill<D>(Shape4{2, 3, 3, 5}, seed + 2, Distribution::uniform(1.0));
  Matrix<D> rp(2, 3);
  seeded_fill<D>(std::span(rp.data), seed + 3, Distribution::uniform(1.0));
  const Tensor4<D> gp = global_avg_pool_backward(rp, xp.shape());
  add(out, check_gradient("global_avg_pool.dx", xp.data(), gp.data(), [&] {
    const Matrix<D> m = global_avg_pool(xp);
    return FdEval{inner_product<D>(std::span<const D>(m.data), std::span<const D>(rp.data)), 0};
  }));
}

void classifier_checks(std::vector<GradCheck>& out, std::uint64_t seed) {
  Matrix<D> feat(4, 5);
  seeded_fill<D>(std::span(feat.data), seed, Distribution::uniform(1.0));
  auto p = LinearParams<D>::zeros(5, 3);
  seeded_fill<D>(std::span(p.weight.data), seed + 1, Distribution::normal(0.7));
  seeded_fill<D>(std::span(p.bias), seed + 2, Distribution::normal(0.3));
  const std::vector<int> labels{0, 2, 1, 2};
  const SoftmaxResult<D> res = linear_softmax_ce(feat, labels, p);
  const LinearGrads<D> g = linear_softmax_ce_backward(feat, labels, p, res);
  auto f = [&] { return FdEval{linear_softmax_ce(feat, labels, p).loss, 0}; };
  add(out, check_gradient("classifier.dfeatures", feat.data, cspan(g.dfeatures.data), f));
  add(out, check_gradient("classifier.dweight", p.weight.data, cspan(g.dweight.data), f));
  add(out, check_gradient("classifier.dbias", p.bias, cspan(g.dbias), f));
}

std::uint64_t step_pattern(const StepCache<D>& c, std::uint64_t h = 1469598103934665603ull) {
  return sign_pattern(c.pre2, sign_pattern(c.pre1, h));
}

// Residual step taken from a freshly built network so it carries the
// production initialization; scale/shift are randomized so the check does
// not sit at the symmetric starting point.
void step_checks(std::vector<GradCheck>& out, ConvKind kind, bool projection, std::uint64_t seed) {
  const NetworkConfig cfg = NetworkConfig::custom({2, 4}, {1, 1}, kind, 3);
  NetworkWeights<D> net = build_network<D>(cfg, seed);
  StepWeights<D> step = net.blocks[projection ? 1 : 0][0];
  std::size_t salt = 10;
  visit_step(step, "s", Visit::trainable, [&](const std::string& name, std::span<D> v) {
    if (name.find("norm") != std::string::npos) seeded_fill<D>(v, seed + salt, Distribution::uniform(1.0));
    ++salt;
  });
  for (D& v : step.norm1.scale) v += 1.0;
  for (D& v : step.norm2.scale) v += 1.0;

  const std::string tag = std::string("resnet_step.") + to_string(kind) + (projection ? ".projection" : ".identity");
  auto x = seeded_fill<D>(Shape4{3, step.c_in(), 6, 5}, seed + 1, Distribution::uniform(1.0));
  StepCache<D> cache;
  const Tensor4<D> y0 = resnet_step(x, step, Mode::train, &cache);
  const Tensor4<D> r = probe_for(y0.shape(), seed + 2);
  StepWeights<D> grads = step.zeros_like();
  const Tensor4<D> dx = resnet_step_backward(step, cache, r, grads);

  auto f = [&] {
    StepCache<D> c;
    const Tensor4<D> y = resnet_step(x, step, Mode::train, &c);
    return FdEval{weighted_sum(y, r), step_pattern(c)};
  };
  add(out, check_gradient(tag + ".dx", x.data(), dx.data(), f));
  std::vector<std::pair<std::string, std::span<D>>> params;
  visit_step(step, tag, Visit::trainable, [&](const std::string& name, std::span<D> v) { params.emplace_back(name, v); });
  std::size_t k = 0;
  visit_step(grads, tag, Visit::trainable, [&](const std::string&, std::span<D> g) {
    add(out, check_gradient(params[k].first, params[k].second, g, f));
    ++k;
  });
}

void network_checks(std::vector<GradCheck>& out, ConvKind kind, std::uint64_t seed) {
  const NetworkConfig cfg = NetworkConfig::custom({2, 4}, {1, 1}, kind, 3);
  NetworkWeights<D> net = build_network<D>(cfg, seed);
  const auto x = seeded_fill<D>(Shape4{4, 3, 6, 6}, seed + 1, Distribution::uniform(1.0));
  const std::vector<int> labels{0, 1, 2, 1};
  const LossAndGrad<D> lg = net_loss_and_grad(net, x, labels, Mode::train);
  auto f = [&] {
    NetworkCache<D> c;
    const Matrix<D> logits = net_forward(net, x, Mode::train, &c);
    std::uint64_t h = 1469598103934665603ull;
    for (const auto& block : c.steps)
      for (const auto& s : block) h = step_pattern(s, h);
    return FdEval{softmax_cross_entropy(logits, labels).loss, h};
  };
  const std::string tag = std::string("network.") + to_string(kind) + ".";
  std::vector<std::pair<std::string, std::span<D>>> params;
  visit_network(net, Visit::trainable, [&](const std::string& name, std::span<D> v) { params.emplace_back(name, v); });
  std::size_t k = 0;
  visit_network(lg.grads, Visit::trainable, [&](const std::string&, std::span<const D> g) {
    add(out, check_gradient(tag + params[k].first, params[k].second, g, f));
    ++k;
  });
}

void conv3d_checks(std::vector<GradCheck>& out, std::uint64_t seed) {
  auto x = seeded_fill<D>(Shape5{2, 3, 3, 4, 3}, seed, Distribution::uniform(1.0));
  auto w = LeanConv3dWeights<D>::zeros(3, 2);
  seeded_fill<D>(std::span(w.alpha.data), seed + 1, Distribution::normal(0.5));
  seeded_fill<D>(std::span(w.stencil.data), seed + 2, Distribution::normal(0.5));
  const Tensor5<D> y = lean_conv3d(x, w);
  const auto r = seeded_fill<D>(y.shape(), seed + 3, Distribution::uniform(1.0));
  const LeanConv3dGrads<D> g = lean_conv3d_backward(x, w, r);
  auto f = [&] {
    const Tensor5<D> out3 = lean_conv3d(x, w);
    return FdEval{inner_product<D>(out3.data(), r.data()), 0};
  };
  add(out, check_gradient("lean_conv3d.dx", x.data(), g.dx.data(), f));
  add(out, check_gradient("lean_conv3d.dalpha", w.alpha.data, cspan(g.dalpha.data), f));
  add(out, check_gradient("lean_conv3d.dstencil", w.stencil.data, cspan(g.dstencil.data), f));
}

}  // namespace

std::vector<GradCheck> run_gradient_checks(std::uint64_t seed) {
  std::vector<GradCheck> out;
  lean_conv_checks(out, 3, 3, 1, seed + 100);
  lean_conv_checks(out, 3, 4, 1, seed + 200);
  lean_conv_checks(out, 4, 3, 2, seed + 300);
  dense_conv_checks(out, 1, seed + 400);
  dense_conv_checks(out, 2, seed + 500);
  conv1x1_checks(out, seed + 600);
  batch_norm_checks(out, seed + 700);
  relu_and_pool_checks(out, seed + 800);
  classifier_checks(out, seed + 900);
  step_checks(out, ConvKind::lean, false, seed + 1000);
  step_checks(out, ConvKind::lean, true, seed + 1100);
  step_checks(out, ConvKind::dense, true, seed + 1200);
  network_checks(out, ConvKind::lean, seed + 1300);
  network_checks(out, ConvKind::dense, seed + 1400);
  conv3d_checks(out, seed + 1500);
  return out;
}

std::vector<ParamBand> check_parameter_bands() {
  struct Row {
    ConfigKind kind;
    std::size_t classes;
    double lean, dense;
  };
  // A on CIFAR-10, C on CIFAR-100, E on STL-10.
  const Row rows[] = {{ConfigKind::A, 10, 0.5e6, 4.3e6}, {ConfigKind::C, 100, 2.9e6, 27e6},
                      {ConfigKind::E, 10, 2.0e6, 17e6}};
  std::vector<ParamBand> out;
  for (const Row& r : rows)
    for (ConvKind conv : {ConvKind::lean, ConvKind::dense}) {
      const double published = conv == ConvKind::lean ? r.lean : r.dense;
      const NetworkConfig cfg = NetworkConfig::table(r.kind, conv, r.classes);
      const std::size_t counted = count_params(build_network<float>(cfg, 1));
      const double rel = std::abs(static_cast<double>(counted) - published) / published;
      out.push_back({r.kind, conv, r.classes, published, counted, rel <= 0.15});
    }
  return out;
}

// ---------------------------------------------------------------------------
// Suite

namespace {

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(3);
  os << v;
  return os.str();
}

template <typename Net>
std::vector<std::vector<float>> trainable_arrays(const Net& net) {
  std::vector<std::vector<float>> out;
  visit_network(net, Visit::trainable,
                [&](const std::string&, std::span<const float> v) { out.emplace_back(v.begin(), v.end()); });
  return out;
}

struct Suite {
  std::vector<CheckResult> results;
  std::ostream* log;

  void record(std::string name, bool passed, std::string detail) {
    if (log) *log << (passed ? "PASS " : "FAIL ") << name << (detail.empty() ? "" : ": " + detail) << '\n' << std::flush;
    results.push_back({std::move(name), passed, std::move(detail)});
  }

  // A check that throws is a failed check, not a crashed suite.
  template <typename F>
  void run(const std::string& name, F&& f) {
    try {
      f();
    } catch (const std::exception& e) {
      record(name, false, std::string("exception: ") + e.what());
    }
  }
};

void conv_suite(Suite& s, std::uint64_t seed) {
  const auto cases = equivalence_cases(200, seed);
  s.run("conv.equivalence.float", [&] {
    const auto r = run_equivalence<float>(cases);
    s.record("conv.fused_vs_reference.float", r.fused_vs_reference <= 1e-5,
             std::to_string(r.cases) + " cases, max diff " + fmt(r.fused_vs_reference));
  });
  s.run("conv.equivalence.double", [&] {
    const auto r = run_equivalence<double>(cases);
    s.record("conv.fused_vs_reference.double", r.fused_vs_reference <= 1e-12,
             std::to_string(r.cases) + " cases, max diff " + fmt(r.fused_vs_reference));
    s.record("conv.fused_vs_naive_oracle.double", r.fused_vs_naive <= 1e-12, "max diff " + fmt(r.fused_vs_naive));
    s.record("conv.dense_embedding.double", r.dense_vs_fused <= 1e-12, "max diff " + fmt(r.dense_vs_fused));
  });
  s.run("conv.dense_vs_naive_oracle", [&] {
    double worst = 0.0;
    for (int stride : {1, 2}) {
      const auto x = seeded_fill<double>(Shape4{2, 3, 7, 6}, seed + stride, Distribution::uniform(1.0));
      auto w = DenseConvWeights<double>::zeros(3, 5, stride);
      seeded_fill<double>(std::span(w.kernel), seed + 10 + stride, Distribution::normal(0.5));
      worst = std::max(worst, max_abs_diff(dense_conv2d(x, w), naive_dense_conv2d(x, w)));
    }
    s.record("conv.dense_vs_naive_oracle", worst <= 1e-12, "max diff " + fmt(worst));
  });
  s.run("conv.linearity", [&] {
    double worst = 0.0;
    for (int stride : {1, 2}) {
      const Shape4 sh{2, 4, 9, 8};
      const auto x1 = seeded_fill<double>(sh, seed + 20, Distribution::uniform(1.0));
      const auto x2 = seeded_fill<double>(sh, seed + 21, Distribution::uniform(1.0));
      const auto w = random_lean_weights<double>(4, 6, stride, seed + 22);
      const double a = 1.7, b = -0.6;
      Tensor4<double> mix(sh);
      for (std::size_t i = 0; i < mix.size(); ++i) mix.data()[i] = a * x1.data()[i] + b * x2.data()[i];
      const auto lhs = lean_conv2d_fused(mix, w);
      const auto y1 = lean_conv2d_fused(x1, w), y2 = lean_conv2d_fused(x2, w);
      Tensor4<double> rhs(lhs.shape());
      for (std::size_t i = 0; i < rhs.size(); ++i) rhs.data()[i] = a * y1.data()[i] + b * y2.data()[i];
      worst = std::max(worst, max_abs_diff(lhs, rhs));
    }
    s.record("conv.linearity", worst <= 1e-12, "max diff " + fmt(worst));
  });
  s.run("conv.adjoint", [&] {
    double worst = 0.0;
    for (int stride : {1, 2})
      for (auto [ci, co] : {std::pair<std::size_t, std::size_t>{3, 5}, {5, 3}, {4, 4}}) {
        const auto x = seeded_fill<double>(Shape4{2, ci, 7, 6}, seed + 30, Distribution::uniform(1.0));
        const auto w = random_lean_weights<double>(ci, co, stride, seed + 31);
        const auto y = lean_conv2d_fused(x, w);
        const auto dy = seeded_fill<double>(y.shape(), seed + 32, Distribution::uniform(1.0));
        const auto g = lean_conv2d_backward(x, w, dy);
        const double lhs = inner_product<double>(y.data(), dy.data());
        const double rhs = inner_product<double>(x.data(), g.dx.data());
        worst = std::max(worst, std::abs(lhs - rhs));
      }
    s.record("conv.adjoint", worst <= 1e-10, "max |<Kx,dy> - <x,K'dy>| " + fmt(worst));
  });
  s.run("conv.lean_parameter_count", [&] {
    bool ok = true;
    for (std::size_t c = 1; c <= 64; ++c) ok = ok && LeanConvWeights<float>::zeros(c, c).parameter_count() == c * c + 4 * c;
    s.record("conv.lean_parameter_count", ok, "c^2 + 4c for c = 1..64");
  });
  s.run("conv.flops_vs_instrumented", [&] {
    bool ok = true;
    for (LayerKind k : {LayerKind::lean, LayerKind::dense3x3, LayerKind::conv1x1, LayerKind::depthwise4})
      for (auto [ci, co] : {std::pair<std::size_t, std::size_t>{3, 5}, {5, 3}, {8, 8}, {1, 16}})
        ok = ok && layer_flops(k, ci, co, 7, 5) == instrumented_flops(k, ci, co, 7, 5);
    s.record("conv.flops_vs_instrumented", ok, "");
  });
  s.run("conv3d.oracle", [&] {
    const auto x = seeded_fill<double>(Shape5{2, 3, 4, 5, 3}, seed + 40, Distribution::uniform(1.0));
    auto w = LeanConv3dWeights<double>::zeros(3, 4);
    seeded_fill<double>(std::span(w.alpha.data), seed + 41, Distribution::normal(0.5));
    seeded_fill<double>(std::span(w.stencil.data), seed + 42, Distribution::normal(0.5));
    const double d = max_abs_diff(lean_conv3d(x, w), naive_lean_conv3d(x, w));
    s.record("conv3d.vs_27_point_oracle", d <= 1e-12, "max diff " + fmt(d));
  });
}

void gradient_suite(Suite& s, std::uint64_t seed) {
  s.run("gradients", [&] {
    for (const GradCheck& g : run_gradient_checks(seed))
      s.record("grad." + g.name, g.passed,
               "rel err " + fmt(g.rel_error) + " over " + std::to_string(g.entries - g.skipped) + " entries" +
                   (g.skipped ? ", " + std::to_string(g.skipped) + " at kinks" : ""));
  });
}

void layer_suite(Suite& s, std::uint64_t seed) {
  s.run("layers.zero_step_identity", [&] {
    bool ok = true;
    for (ConvKind kind : {ConvKind::lean, ConvKind::dense}) {
      NetworkWeights<double> net = build_network<double>(NetworkConfig::custom({4}, {2}, kind, 3), seed);
      StepWeights<double> step = net.blocks[0][0].zeros_like();
      step.norm1 = BatchNormParams<double>::make(4);
      step.norm2 = BatchNormParams<double>::make(4);
      const auto x = seeded_fill<double>(Shape4{2, 4, 5, 5}, seed + 1, Distribution::normal(1.0));
      for (Mode m : {Mode::train, Mode::eval}) ok = ok && max_abs_diff(resnet_step(x, step, m), x) == 0.0;
    }
    s.record("layers.zero_step_identity", ok, "exact");
  });
  s.run("layers.softmax_rows_sum_zero", [&] {
    Matrix<double> logits(6, 7);
    seeded_fill<double>(std::span(logits.data), seed + 2, Distribution::normal(3.0));
    const std::vector<int> labels{0, 6, 3, 3, 1, 5};
    const auto res = softmax_cross_entropy(logits, labels);
    const auto g = softmax_cross_entropy_backward(res, labels);
    double worst = 0.0;
    for (std::size_t r = 0; r < g.rows; ++r) {
      double sum = 0.0;
      for (std::size_t c = 0; c < g.cols; ++c) sum += g(r, c);
      worst = std::max(worst, std::abs(sum));
    }
    s.record("layers.softmax_rows_sum_zero", worst <= 1e-12, "max |row sum| " + fmt(worst));
  });
  s.run("layers.batch_norm_eval_affine", [&] {
    auto p = BatchNormParams<double>::make(3);
    seeded_fill<double>(std::span(p.scale), seed + 3, Distribution::uniform(2.0));
    seeded_fill<double>(std::span(p.shift), seed + 4, Distribution::uniform(1.0));
    seeded_fill<double>(std::span(p.running_mean), seed + 5, Distribution::uniform(1.0));
    seeded_fill<double>(std::span(p.running_var), seed + 6, Distribution::uniform(0.5));
    for (double& v : p.running_var) v += 1.0;
    const auto frozen = p;
    const auto x = seeded_fill<double>(Shape4{2, 3, 4, 4}, seed + 7, Distribution::normal(2.0));
    const auto twice = batch_norm(batch_norm(x, p, Mode::eval), p, Mode::eval);
    Tensor4<double> composed(x.shape());
    for (std::size_t n = 0; n < 2; ++n)
      for (std::size_t c = 0; c < 3; ++c) {
        const double a = p.scale[c] / std::sqrt(p.running_var[c] + p.epsilon);
        const double b = p.shift[c] - a * p.running_mean[c];
        // (a, b) after (a, b) is (a^2, a b + b)
        for (std::size_t i = 0; i < 16; ++i) composed.plane(n, c)[i] = a * a * x.plane(n, c)[i] + (a * b + b);
      }
    const double d = max_abs_diff(twice, composed);
    const bool untouched = p.running_mean == frozen.running_mean && p.running_var == frozen.running_var;
    s.record("layers.batch_norm_eval_affine", d <= 1e-12 && untouched,
             "max diff " + fmt(d) + (untouched ? "" : ", running stats modified"));
  });
  s.run("layers.step_directional_derivative", [&] {
    NetworkWeights<double> net = build_network<double>(NetworkConfig::custom({3, 6}, {2, 1}), seed + 8);
    double worst = 0.0;
    for (std::size_t b = 0; b < 2; ++b) {
      StepWeights<double>& step = net.blocks[b][0];
      const auto x = seeded_fill<double>(Shape4{2, step.c_in(), 6, 6}, seed + 9, Distribution::normal(1.0));
      const auto v = seeded_fill<double>(x.shape(), seed + 10, Distribution::normal(1.0));
      StepCache<double> cache;
      const auto y = resnet_step(x, step, Mode::eval, &cache);
      const auto dy = seeded_fill<double>(y.shape(), seed + 11, Distribution::normal(1.0));
      StepWeights<double> grads = step.zeros_like();
      const auto dx = resnet_step_backward(step, cache, dy, grads);
      const double t = 1e-6;
      Tensor4<double> xp(x.shape()), xm(x.shape());
      for (std::size_t i = 0; i < x.size(); ++i) {
        xp.data()[i] = x.data()[i] + t * v.data()[i];
        xm.data()[i] = x.data()[i] - t * v.data()[i];
      }
      const double lhs = (inner_product<double>(resnet_step(xp, step, Mode::eval).data(), dy.data()) -
                          inner_product<double>(resnet_step(xm, step, Mode::eval).data(), dy.data())) /
                         (2 * t);
      const double rhs = inner_product<double>(v.data(), dx.data());
      worst = std::max(worst, std::abs(lhs - rhs) / std::max(1.0, std::abs(rhs)));
    }
    s.record("layers.step_directional_derivative", worst <= 1e-6, "rel err " + fmt(worst));
  });
}

void network_suite(Suite& s, std::uint64_t seed) {
  s.run("network.table_encodings", [&] {
    struct Row {
      ConfigKind k;
      std::vector<std::size_t> widths, steps;
    };
    const Row rows[] = {{ConfigKind::A, {32, 64, 128, 256}, {2, 3, 3, 3}},
                        {ConfigKind::B, {12, 24, 48, 96}, {2, 3, 3, 3}},
                        {ConfigKind::C, {64, 128, 256, 512}, {3, 5, 7, 4}},
                        {ConfigKind::D, {24, 48, 96, 192}, {3, 5, 7, 4}},
                        {ConfigKind::E, {32, 64, 128, 256, 512}, {2, 3, 3, 3, 3}},
                        {ConfigKind::F, {12, 24, 48, 96, 192}, {2, 3, 3, 3, 3}}};
    for (const Row& r : rows) {
      const NetworkConfig c = NetworkConfig::table(r.k);
      s.record("network.table_encoding." + to_string(r.k), c.widths == r.widths && c.steps == r.steps, "");
    }
  });
  s.run("network.parameter_bands", [&] {
    for (const ParamBand& b : check_parameter_bands())
      s.record("network.parameter_band." + to_string(b.kind) + "." + to_string(b.conv), b.passed,
               std::to_string(b.counted) + " counted vs " + fmt(b.published) + " published (" +
                   std::to_string(b.classes) + " classes)");
  });
  s.run("network.lean_below_dense", [&] {
    bool ok = true;
    std::string detail;
    for (ConfigKind k : {ConfigKind::A, ConfigKind::B, ConfigKind::C, ConfigKind::D, ConfigKind::E, ConfigKind::F}) {
      const std::size_t lean = count_params(NetworkConfig::table(k, ConvKind::lean));
      const std::size_t dense = count_params(NetworkConfig::table(k, ConvKind::dense));
      ok = ok && lean < dense;
      detail += to_string(k) + " " + fmt(static_cast<double>(dense) / static_cast<double>(lean)) + "x ";
    }
    // Per-step ratio grows towards 9 with width.
    double prev = 0.0;
    for (std::size_t w : {16, 64, 256, 1024}) {
      const double ratio = static_cast<double>(count_params(NetworkConfig::custom({w}, {4}, ConvKind::dense))) /
                           static_cast<double>(count_params(NetworkConfig::custom({w}, {4}, ConvKind::lean)));
      ok = ok && ratio > prev && ratio < 9.0;
      prev = ratio;
    }
    ok = ok && prev > 8.5;
    s.record("network.lean_below_dense", ok, detail + "(width 1024: " + fmt(prev) + "x)");
  });
  s.run("network.count_formula", [&] {
    bool ok = true;
    for (ConfigKind k : {ConfigKind::A, ConfigKind::B, ConfigKind::C, ConfigKind::D, ConfigKind::E, ConfigKind::F})
      for (ConvKind conv : {ConvKind::lean, ConvKind::dense}) {
        const NetworkConfig c = NetworkConfig::table(k, conv);
        ok = ok && count_params(build_network<float>(c, seed)) == count_params(c);
      }
    s.record("network.count_formula_matches_built", ok, "");
  });
  s.run("network.build_deterministic", [&] {
    const NetworkConfig c = NetworkConfig::table(ConfigKind::B);
    const auto a = encode_checkpoint(build_network<float>(c, seed));
    const auto b = encode_checkpoint(build_network<float>(c, seed));
    const auto other = encode_checkpoint(build_network<float>(c, seed + 1));
    s.record("network.build_deterministic", a == b && a != other, "");
  });
  s.run("network.output_shape", [&] {
    bool ok = true;
    for (ConfigKind k : {ConfigKind::A, ConfigKind::B, ConfigKind::C, ConfigKind::D, ConfigKind::E, ConfigKind::F})
      for (std::size_t hw : {9, 32}) {
        NetworkWeights<float> net = build_network<float>(NetworkConfig::table(k, ConvKind::lean, 7), seed);
        const auto x = seeded_fill<float>(Shape4{2, 3, hw, hw}, seed, Distribution::normal(1.0));
        const Matrix<float> logits = net_forward(net, x, Mode::eval);
        ok = ok && logits.rows == 2 && logits.cols == 7;
      }
    s.record("network.output_shape", ok, "batch x classes for A-F at 9x9 and 32x32");
  });
  s.run("network.checkpoint_round_trip", [&] {
    NetworkWeights<float> net = build_network<float>(NetworkConfig::custom({4, 8}, {1, 2}), seed);
    const auto x = seeded_fill<float>(Shape4{4, 3, 8, 8}, seed, Distribution::normal(1.0));
    net_forward(net, x, Mode::train);  // move the running statistics off their defaults
    const auto bytes = encode_checkpoint(net);
    const auto back = decode_checkpoint(bytes);
    s.record("network.checkpoint_round_trip", encode_checkpoint(back) == bytes, std::to_string(bytes.size()) + " bytes");
  });
}

void optim_suite(Suite& s, std::uint64_t seed) {
  s.run("optim.schedule", [&] {
    const TrainPlan plan;
    bool ok = lr_at_epoch(plan, 0) == 0.1 && lr_at_epoch(plan, 75) == 0.05 && lr_at_epoch(plan, 150) == 0.025 &&
              lr_at_epoch(plan, 225) == 0.0125;
    std::size_t drops = 0;
    for (std::size_t e = 1; e < plan.epochs; ++e) {
      const double a = lr_at_epoch(plan, e - 1), b = lr_at_epoch(plan, e);
      if (b != a) ++drops;
      ok = ok && b <= a;
    }
    ok = ok && drops == plan.epochs / plan.decay_every - 1;
    s.record("optim.schedule", ok, std::to_string(drops) + " drops");
  });
  s.run("optim.adam_zero_gradient", [&] {
    NetworkWeights<float> net = build_network<float>(NetworkConfig::custom({4, 8}, {1, 1}), seed);
    const auto before = trainable_arrays(net);
    const NetworkWeights<float> zero = net.zeros_like();
    AdamState<float> state;
    for (int k = 0; k < 3; ++k) adam_step(net, zero, state, 0.1);
    s.record("optim.adam_zero_gradient_identity", trainable_arrays(net) == before, "3 steps at lr 0.1");
  });
  const LabeledImages data = synthetic_quadrants(40, 12, seed);
  s.run("optim.zero_lr_epoch", [&] {
    NetworkWeights<float> net = build_network<float>(NetworkConfig::custom({4, 8}, {1, 1}), seed);
    const auto before = trainable_arrays(net);
    TrainPlan plan;
    plan.lr0 = 0.0;
    plan.batch_size = 16;
    AdamState<float> state;
    std::mt19937_64 rng(seed);
    train_epoch(net, state, data, plan, 0, rng);
    s.record("optim.zero_lr_epoch_identity", trainable_arrays(net) == before, "weights only");
  });
  s.run("optim.determinism", [&] {
    auto run_once = [&] {
      NetworkWeights<float> net = build_network<float>(NetworkConfig::custom({4, 8}, {1, 1}), seed);
      std::ostringstream csv;
      TrainOptions opts;
      opts.plan.epochs = 2;
      opts.plan.batch_size = 16;
      opts.plan.lr0 = 0.01;
      opts.plan.seed = seed;
      opts.metrics_csv = &csv;
      train(net, data, data, opts);
      return csv.str();
    };
    s.record("optim.determinism", run_once() == run_once(), "two runs, same seed");
  });
}

}  // namespace

std::vector<CheckResult> run_verify_suite(std::uint64_t seed, std::ostream* log) {
  Suite s{{}, log};
  conv_suite(s, seed);
  gradient_suite(s, seed);
  layer_suite(s, seed);
  network_suite(s, seed);
  optim_suite(s, seed);
  return s.results;
}

template Tensor4<float> naive_lean_conv2d(const Tensor4<float>&, const LeanConvWeights<float>&);
template Tensor4<double> naive_lean_conv2d(const Tensor4<double>&, const LeanConvWeights<double>&);
template Tensor4<float> naive_dense_conv2d(const Tensor4<float>&, const DenseConvWeights<float>&);
template Tensor4<double> naive_dense_conv2d(const Tensor4<double>&, const DenseConvWeights<double>&);
template Tensor5<float> naive_lean_conv3d(const Tensor5<float>&, const LeanConv3dWeights<float>&);
template Tensor5<double> naive_lean_conv3d(const Tensor5<double>&, const LeanConv3dWeights<double>&);
template LeanConvWeights<float> random_lean_weights(std::size_t, std::size_t, int, std::uint64_t);
template LeanConvWeights<double> random_lean_weights(std::size_t, std::size_t, int, std::uint64_t);
template EquivalenceReport run_equivalence<float>(std::span<const ConvCase>);
template EquivalenceReport run_equivalence<double>(std::span<const ConvCase>);

}  // namespace leanres
