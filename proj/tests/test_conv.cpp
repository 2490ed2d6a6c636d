#include <random>

#include "doctest.h"
#include "leanres/conv.hpp"
#include "leanres/verify.hpp"
#include "oracles.hpp"

using namespace leanres;

namespace {

template <typename T>
LeanConvWeights<T> random_weights(std::size_t ci, std::size_t co, int stride, std::uint64_t seed) {
  auto w = LeanConvWeights<T>::zeros(ci, co, stride);
  oracle::randomize<T>(std::span(w.alpha.data), seed);
  oracle::randomize<T>(std::span(w.stencil.data), seed + 1);
  return w;
}

Tensor4<double> row(std::initializer_list<double> v) {
  Tensor4<double> t(1, 1, 1, v.size());
  std::size_t i = 0;
  for (double e : v) t(0, 0, 0, i++) = e;
  return t;
}

}  // namespace

TEST_CASE("lean conv examples") {
  SUBCASE("zero weights give zeros") {
    const auto x = oracle::random<float>(Shape4{2, 3, 5, 5}, 1);
    for (int s : {1, 2}) {
      const auto w = LeanConvWeights<float>::zeros(3, 4, s);
      for (const auto& y : {lean_conv2d_fused(x, w), lean_conv2d_reference(x, w)})
        for (float v : y.data()) CHECK(v == 0.0f);
    }
  }
  SUBCASE("identity alpha") {
    const auto x = oracle::random<float>(Shape4{2, 5, 7, 6}, 2);
    auto w = LeanConvWeights<float>::zeros(5, 5);
    w.alpha = Matrix<float>::identity(5);
    CHECK(max_abs_diff(lean_conv2d_fused(x, w), x) == 0.0);
    CHECK(max_abs_diff(lean_conv2d_reference(x, w), x) == 0.0);
  }
  SUBCASE("fused vs reference, 2x8x16x16, single precision") {
    const auto x = oracle::random<float>(Shape4{2, 8, 16, 16}, 3);
    const auto w = random_weights<float>(8, 8, 1, 4);
    CHECK(max_abs_diff(lean_conv2d_fused(x, w), lean_conv2d_reference(x, w)) <= 1e-5);
  }
  SUBCASE("left-neighbor shift") {
    auto w = LeanConvWeights<double>::zeros(1, 1);
    w.stencil(0, kLeft) = 1;
    const auto x = row({1, 2, 3});
    for (const auto& y : {lean_conv2d_fused(x, w), lean_conv2d_reference(x, w)}) {
      CHECK(y(0, 0, 0, 0) == 0);
      CHECK(y(0, 0, 0, 1) == 1);
      CHECK(y(0, 0, 0, 2) == 2);
    }
  }
  SUBCASE("stride 2 samples even coordinates") {
    Tensor4<double> x(1, 1, 4, 4);
    for (std::size_t i = 0; i < 16; ++i) x.data()[i] = static_cast<double>(i);
    auto w = LeanConvWeights<double>::zeros(1, 1, 2);
    w.alpha(0, 0) = 1;
    for (const auto& y : {lean_conv2d_fused(x, w), lean_conv2d_reference(x, w)}) {
      REQUIRE(y.shape() == Shape4{1, 1, 2, 2});
      CHECK(y(0, 0, 0, 0) == 0);
      CHECK(y(0, 0, 0, 1) == 2);
      CHECK(y(0, 0, 1, 0) == 8);
      CHECK(y(0, 0, 1, 1) == 10);
    }
    CHECK(lean_conv2d_fused(Tensor4<double>(1, 1, 5, 3), w).shape() == Shape4{1, 1, 3, 2});
  }
  SUBCASE("all-ones stencil on a constant image") {
    Tensor4<double> x(1, 1, 5, 5, 1.0);
    auto w = LeanConvWeights<double>::zeros(1, 1);
    for (std::size_t k = 0; k < 4; ++k) w.stencil(0, k) = 1;
    for (const auto& y : {lean_conv2d_fused(x, w), lean_conv2d_reference(x, w)}) {
      CHECK(y(0, 0, 2, 2) == 4);
      CHECK(y(0, 0, 0, 0) == 2);
      CHECK(y(0, 0, 0, 2) == 3);
    }
  }
  SUBCASE("errors") {
    const auto w = LeanConvWeights<float>::zeros(3, 4);
    CHECK_THROWS_AS(lean_conv2d_fused(Tensor4<float>(1, 2, 4, 4), w), std::invalid_argument);
    CHECK_THROWS_AS(lean_conv2d_reference(Tensor4<float>(1, 2, 4, 4), w), std::invalid_argument);
    CHECK_THROWS_AS(LeanConvWeights<float>::zeros(3, 3, 3), std::invalid_argument);
    auto bad = w;
    bad.stencil = Matrix<float>(4, 4);
    CHECK_THROWS_AS(lean_conv2d_fused(Tensor4<float>(1, 3, 4, 4), bad), std::invalid_argument);
  }
}

TEST_CASE("lean conv matches the test oracle over random shapes") {
  std::mt19937_64 rng(99);
  const std::size_t channels[] = {1, 3, 4, 16, 64};
  for (int trial = 0; trial < 60; ++trial) {
    const std::size_t ci = channels[rng() % 5], co = channels[rng() % 5];
    const int s = 1 + static_cast<int>(rng() % 2);
    const Shape4 sh{1 + rng() % 2, ci, 1 + rng() % 20, 1 + rng() % 20};
    const auto x = oracle::random<double>(sh, rng());
    const auto w = random_weights<double>(ci, co, s, rng());
    const auto want = oracle::lean(x, w);
    CAPTURE(ci);
    CAPTURE(co);
    CAPTURE(s);
    CHECK(max_abs_diff(lean_conv2d_fused(x, w), want) <= 1e-12);
    CHECK(max_abs_diff(lean_conv2d_reference(x, w), want) <= 1e-12);
    CHECK(max_abs_diff(dense_conv2d(x, lean_to_dense(w)), want) <= 1e-12);
  }
}

TEST_CASE("library verification helpers agree with the test oracle") {
  const auto cases = equivalence_cases(60, 5);
  CHECK(cases.size() == 60);
  CHECK(cases[0].h == 1);
  const auto rep = run_equivalence<double>(std::span(cases).first(20));
  CHECK(rep.cases == 20);
  CHECK(rep.fused_vs_reference <= 1e-12);
  CHECK(rep.dense_vs_fused <= 1e-12);
  const auto x = oracle::random<double>(Shape4{2, 3, 6, 5}, 7);
  const auto w = random_weights<double>(3, 4, 2, 8);
  CHECK(max_abs_diff(naive_lean_conv2d(x, w), oracle::lean(x, w)) <= 1e-14);
}

TEST_CASE("conv1x1 examples") {
  const auto x = oracle::random<double>(Shape4{2, 3, 4, 4}, 10);
  CHECK(max_abs_diff(conv1x1(x, Matrix<double>::identity(3)), x) == 0.0);

  Matrix<double> ones(1, 3, 1.0);
  const auto s = conv1x1(x, ones);
  for (std::size_t n = 0; n < 2; ++n)
    for (std::size_t p = 0; p < 16; ++p)
      CHECK(s.plane(n, 0)[p] == doctest::Approx(x.plane(n, 0)[p] + x.plane(n, 1)[p] + x.plane(n, 2)[p]));

  Tensor4<double> px(1, 2, 1, 1);
  px(0, 0, 0, 0) = 5;
  px(0, 1, 0, 0) = 6;
  Matrix<double> a(2, 2);
  a(0, 0) = 1, a(0, 1) = 2, a(1, 0) = 3, a(1, 1) = 4;
  const auto y = conv1x1(px, a);
  CHECK(y(0, 0, 0, 0) == 17);
  CHECK(y(0, 1, 0, 0) == 39);
  CHECK_THROWS_AS(conv1x1(px, Matrix<double>(2, 3)), std::invalid_argument);
}

TEST_CASE("depthwise4 examples") {
  const auto x = oracle::random<double>(Shape4{1, 2, 4, 4}, 11);
  const auto none = depthwise4(x, Matrix<double>(2, 4));
  for (double v : none.data()) CHECK(v == 0.0);

  Matrix<double> right(1, 4);
  right(0, kRight) = 1;
  const auto y = depthwise4(row({1, 2, 3}), right);
  CHECK(y(0, 0, 0, 0) == 2);
  CHECK(y(0, 0, 0, 1) == 3);
  CHECK(y(0, 0, 0, 2) == 0);

  Tensor4<double> c(1, 1, 4, 5, 3.0);
  const auto z = depthwise4(c, Matrix<double>(1, 4, 1.0));
  CHECK(z(0, 0, 1, 1) == 12);
  CHECK(z(0, 0, 0, 0) == 6);
  CHECK(z(0, 0, 3, 4) == 6);
  CHECK(z(0, 0, 0, 2) == 9);
  CHECK_THROWS_AS(depthwise4(c, Matrix<double>(2, 4)), std::invalid_argument);
}

TEST_CASE("lean conv backward") {
  SUBCASE("zero dy") {
    const auto x = oracle::random<double>(Shape4{1, 3, 4, 4}, 12);
    const auto w = random_weights<double>(3, 3, 1, 13);
    const auto g = lean_conv2d_backward(x, w, Tensor4<double>(1, 3, 4, 4));
    for (double v : g.dx.data()) CHECK(v == 0);
    for (double v : g.dalpha.data) CHECK(v == 0);
    for (double v : g.dstencil.data) CHECK(v == 0);
  }
  SUBCASE("identity adjoint") {
    auto w = LeanConvWeights<double>::zeros(4, 4);
    w.alpha = Matrix<double>::identity(4);
    const auto x = oracle::random<double>(Shape4{2, 4, 5, 5}, 14);
    const auto dy = oracle::random<double>(Shape4{2, 4, 5, 5}, 15);
    CHECK(max_abs_diff(lean_conv2d_backward(x, w, dy).dx, dy) == 0.0);
  }
  SUBCASE("finite differences, both strides, rectangular") {
    for (int s : {1, 2})
      for (auto [ci, co] : {std::pair<std::size_t, std::size_t>{2, 3}, {3, 2}, {3, 3}}) {
        auto x = oracle::random<double>(Shape4{2, ci, 5, 4}, 16);
        auto w = random_weights<double>(ci, co, s, 17);
        const auto r = oracle::random<double>(lean_conv2d_fused(x, w).shape(), 18);
        const auto g = lean_conv2d_backward(x, w, r);
        auto loss = [&] { return oracle::dot(lean_conv2d_fused(x, w), r); };
        CHECK(oracle::fd_rel_error(x.storage(), g.dx.data(), loss) <= 1e-6);
        CHECK(oracle::fd_rel_error(w.alpha.data, g.dalpha.data, loss) <= 1e-6);
        CHECK(oracle::fd_rel_error(w.stencil.data, g.dstencil.data, loss) <= 1e-6);
      }
  }
  SUBCASE("adjoint identity <Kx, dy> = <x, K'dy>") {
    std::mt19937_64 rng(19);
    for (int t = 0; t < 20; ++t) {
      const std::size_t ci = 1 + rng() % 6, co = 1 + rng() % 6;
      const int s = 1 + static_cast<int>(rng() % 2);
      const auto x = oracle::random<double>(Shape4{2, ci, 1 + rng() % 9, 1 + rng() % 9}, rng());
      const auto w = random_weights<double>(ci, co, s, rng());
      const auto y = lean_conv2d_fused(x, w);
      const auto dy = oracle::random<double>(y.shape(), rng());
      CHECK(std::abs(oracle::dot(y, dy) - oracle::dot(x, lean_conv2d_backward(x, w, dy).dx)) <= 1e-10);
    }
  }
  SUBCASE("dy shape mismatch") {
    const auto w = LeanConvWeights<double>::zeros(2, 2, 2);
    CHECK_THROWS_AS(lean_conv2d_backward(Tensor4<double>(1, 2, 4, 4), w, Tensor4<double>(1, 2, 4, 4)),
                    std::invalid_argument);
  }
}

TEST_CASE("linearity of the lean operator") {
  const auto x1 = oracle::random<double>(Shape4{2, 4, 6, 7}, 20), x2 = oracle::random<double>(Shape4{2, 4, 6, 7}, 21);
  const auto w = random_weights<double>(4, 5, 2, 22);
  Tensor4<double> mix(x1.shape());
  for (std::size_t i = 0; i < mix.size(); ++i) mix.data()[i] = 2.5 * x1.data()[i] - 0.75 * x2.data()[i];
  const auto y = lean_conv2d_fused(mix, w), y1 = lean_conv2d_fused(x1, w), y2 = lean_conv2d_fused(x2, w);
  for (std::size_t i = 0; i < y.size(); ++i) CHECK(y.data()[i] == doctest::Approx(2.5 * y1.data()[i] - 0.75 * y2.data()[i]).epsilon(1e-12));
}

TEST_CASE("dense conv") {
  SUBCASE("center delta on matched channels is the identity") {
    auto w = DenseConvWeights<double>::zeros(3, 3);
    for (std::size_t c = 0; c < 3; ++c) w.at(c, c, 1, 1) = 1;
    const auto x = oracle::random<double>(Shape4{2, 3, 5, 6}, 23);
    CHECK(max_abs_diff(dense_conv2d(x, w), x) == 0.0);
  }
  SUBCASE("matches six nested loops exactly") {
    for (int s : {1, 2}) {
      auto w = DenseConvWeights<double>::zeros(3, 4, s);
      oracle::randomize<double>(std::span(w.kernel), 24);
      const auto x = oracle::random<double>(Shape4{2, 3, 7, 5}, 25);
      CHECK(max_abs_diff(dense_conv2d(x, w), oracle::dense(x, w)) <= 1e-13);
    }
  }
  SUBCASE("backward vs finite differences") {
    for (int s : {1, 2}) {
      auto w = DenseConvWeights<double>::zeros(2, 3, s);
      oracle::randomize<double>(std::span(w.kernel), 26);
      auto x = oracle::random<double>(Shape4{2, 2, 5, 5}, 27);
      const auto r = oracle::random<double>(dense_conv2d(x, w).shape(), 28);
      const auto g = dense_conv2d_backward(x, w, r);
      auto loss = [&] { return oracle::dot(dense_conv2d(x, w), r); };
      CHECK(oracle::fd_rel_error(x.storage(), g.dx.data(), loss) <= 1e-6);
      CHECK(oracle::fd_rel_error(w.kernel, g.dkernel, loss) <= 1e-6);
    }
  }
  SUBCASE("errors") {
    const auto w = DenseConvWeights<double>::zeros(3, 3);
    CHECK_THROWS_AS(dense_conv2d(Tensor4<double>(1, 2, 3, 3), w), std::invalid_argument);
    CHECK_THROWS_AS(dense_conv2d_backward(Tensor4<double>(1, 3, 3, 3), w, Tensor4<double>(1, 3, 2, 3)),
                    std::invalid_argument);
  }
}

TEST_CASE("lean_to_dense embedding") {
  const auto zero = lean_to_dense(LeanConvWeights<double>::zeros(3, 5));
  for (double v : zero.kernel) CHECK(v == 0);

  auto w = random_weights<double>(4, 4, 1, 29);
  for (double& v : w.alpha.data) v += 2.0;  // keep every entry nonzero
  for (double& v : w.stencil.data) v += 2.0;
  const auto d = lean_to_dense(w);
  std::size_t nonzero = 0;
  for (double v : d.kernel) nonzero += v != 0;
  CHECK(nonzero == 32);
  for (std::size_t o = 0; o < 4; ++o)
    for (std::size_t i = 0; i < 4; ++i) {
      CHECK(d.at(o, i, 1, 1) == w.alpha(o, i));
      CHECK(d.at(o, i, 0, 0) == 0);
      CHECK(d.at(o, i, 2, 2) == 0);
    }
  CHECK(d.at(2, 2, 0, 1) == w.stencil(2, kTop));
  CHECK(d.at(2, 2, 1, 0) == w.stencil(2, kLeft));
  CHECK(d.at(2, 2, 1, 2) == w.stencil(2, kRight));
  CHECK(d.at(2, 2, 2, 1) == w.stencil(2, kBottom));

  for (int s : {1, 2}) {
    const auto ws = random_weights<double>(5, 3, s, 30);
    const auto x = oracle::random<double>(Shape4{2, 5, 9, 8}, 31);
    CHECK(max_abs_diff(dense_conv2d(x, lean_to_dense(ws)), lean_conv2d_fused(x, ws)) <= 1e-12);
  }
}

TEST_CASE("parameter counts") {
  for (std::size_t c = 1; c <= 64; ++c) CHECK(LeanConvWeights<float>::zeros(c, c).parameter_count() == c * c + 4 * c);
  CHECK(LeanConvWeights<float>::zeros(6, 2).parameter_count() == 12 + 8);
  CHECK(LeanConv3dWeights<float>::zeros(8, 8).parameter_count() == 112);
  CHECK(27 * 64 == 1728);
}

TEST_CASE("lean conv 3d") {
  auto w = LeanConv3dWeights<double>::zeros(3, 3);
  w.alpha = Matrix<double>::identity(3);
  Tensor5<double> x(Shape5{1, 3, 3, 4, 5});
  oracle::randomize<double>(x.data(), 32);
  CHECK(max_abs_diff(lean_conv3d(x, w), x) == 0.0);

  // Oracle: each face tap on its own, by coordinates.
  auto r = LeanConv3dWeights<double>::zeros(3, 2);
  oracle::randomize<double>(std::span(r.alpha.data), 33);
  oracle::randomize<double>(std::span(r.stencil.data), 34);
  const auto y = lean_conv3d(x, r);
  const int off[6][3] = {{0, 0, -1}, {0, 0, 1}, {0, -1, 0}, {0, 1, 0}, {-1, 0, 0}, {1, 0, 0}};
  double worst = 0;
  for (std::size_t o = 0; o < 2; ++o)
    for (int z = 0; z < 3; ++z)
      for (int yy = 0; yy < 4; ++yy)
        for (int xx = 0; xx < 5; ++xx) {
          double v = 0;
          for (std::size_t i = 0; i < 3; ++i) v += r.alpha(o, i) * x(0, i, z, yy, xx);
          for (int k = 0; k < 6; ++k) {
            const int a = z + off[k][0], b = yy + off[k][1], c = xx + off[k][2];
            if (a >= 0 && a < 3 && b >= 0 && b < 4 && c >= 0 && c < 5) v += r.stencil(o, k) * x(0, o, a, b, c);
          }
          worst = std::max(worst, std::abs(v - y(0, o, z, yy, xx)));
        }
  CHECK(worst <= 1e-15);
  CHECK(max_abs_diff(y, naive_lean_conv3d(x, r)) <= 1e-14);

  std::vector<double> xs(x.data().begin(), x.data().end());
  const auto dy = lean_conv3d(x, r);
  Tensor5<double> probe(dy.shape());
  oracle::randomize<double>(probe.data(), 35);
  const auto g = lean_conv3d_backward(x, r, probe);
  auto loss = [&] {
    Tensor5<double> xv(x.shape());
    std::copy(xs.begin(), xs.end(), xv.data().begin());
    return inner_product<double>(lean_conv3d(xv, r).data(), probe.data());
  };
  CHECK(oracle::fd_rel_error(xs, g.dx.data(), loss) <= 1e-6);
  CHECK_THROWS_AS(lean_conv3d(Tensor5<double>(Shape5{1, 2, 2, 2, 2}), r), std::invalid_argument);
}

TEST_CASE("layer flops") {
  CHECK(layer_flops(LayerKind::lean, 1, 1, 1, 1) == 10);
  const double ratio = static_cast<double>(layer_flops(LayerKind::dense3x3, 64, 64, 8, 8)) /
                       static_cast<double>(layer_flops(LayerKind::lean, 64, 64, 8, 8));
  CHECK(ratio == doctest::Approx(18.0 * 4096 / (2.0 * 4096 + 512)));
  CHECK(ratio == doctest::Approx(8.47).epsilon(0.01));

  // Counter incremented inside an actual naive convolution loop.
  auto counted = [](LayerKind k, std::size_t ci, std::size_t co, std::size_t h, std::size_t w) {
    std::uint64_t mults = 0;
    for (std::size_t o = 0; o < co; ++o)
      for (std::size_t p = 0; p < h * w; ++p) {
        const bool mixes = k != LayerKind::depthwise4, full = k == LayerKind::dense3x3;
        const bool stencil = (k == LayerKind::lean || k == LayerKind::depthwise4) && o < std::min(ci, co);
        if (mixes)
          for (std::size_t i = 0; i < ci; ++i) mults += full ? 9 : 1;
        if (stencil) mults += 4;
      }
    return 2 * mults;
  };
  for (LayerKind k : {LayerKind::lean, LayerKind::dense3x3, LayerKind::conv1x1, LayerKind::depthwise4})
    for (auto [ci, co] : {std::pair<std::size_t, std::size_t>{1, 1}, {3, 7}, {7, 3}, {16, 16}}) {
      CHECK(layer_flops(k, ci, co, 5, 6) == counted(k, ci, co, 5, 6));
      CHECK(layer_flops(k, ci, co, 5, 6) == instrumented_flops(k, ci, co, 5, 6));
    }
}
