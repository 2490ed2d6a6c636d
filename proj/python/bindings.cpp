#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <map>

#include "leanres/config.hpp"
#include "leanres/conv.hpp"
#include "leanres/data.hpp"
#include "leanres/network.hpp"
#include "leanres/optim.hpp"
#include "leanres/verify.hpp"

namespace py = pybind11;
using namespace leanres;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Tensor4<double> to_tensor(const Array& a) {
  if (a.ndim() != 4) throw std::invalid_argument("expected a 4-d array (batch, channels, height, width)");
  Tensor4<double> t(static_cast<std::size_t>(a.shape(0)), static_cast<std::size_t>(a.shape(1)),
                    static_cast<std::size_t>(a.shape(2)), static_cast<std::size_t>(a.shape(3)));
  std::copy(a.data(), a.data() + a.size(), t.data().begin());
  return t;
}

template <typename T>
Array to_array(const Tensor4<T>& t) {
  const auto s = t.shape();
  Array a({s.n, s.c, s.h, s.w});
  std::copy(t.data().begin(), t.data().end(), a.mutable_data());
  return a;
}

Matrix<double> to_matrix(const Array& a) {
  if (a.ndim() != 2) throw std::invalid_argument("expected a 2-d array");
  Matrix<double> m(static_cast<std::size_t>(a.shape(0)), static_cast<std::size_t>(a.shape(1)));
  std::copy(a.data(), a.data() + a.size(), m.data.begin());
  return m;
}

LeanConvWeights<double> lean_weights(const Array& alpha, const Array& stencil, int stride) {
  LeanConvWeights<double> w{to_matrix(alpha), to_matrix(stencil), stride};
  w.validate();
  return w;
}

NetworkConfig network(const std::string& config, const std::string& conv, std::size_t classes) {
  return NetworkConfig::table(parse_config_kind(config), parse_conv_kind(conv), classes);
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Lean residual network kernels";

  m.def(
      "lean_conv2d",
      [](const Array& x, const Array& alpha, const Array& stencil, int stride, bool fused) {
        const auto w = lean_weights(alpha, stencil, stride);
        const auto t = to_tensor(x);
        return to_array(fused ? lean_conv2d_fused(t, w) : lean_conv2d_reference(t, w));
      },
      py::arg("x"), py::arg("alpha"), py::arg("stencil"), py::arg("stride") = 1, py::arg("fused") = true,
      "alpha: (c_out, c_in); stencil: (min(c_in, c_out), 4) with taps top, left, right, bottom");

  m.def(
      "lean_to_dense",
      [](const Array& alpha, const Array& stencil) {
        const auto d = lean_to_dense(lean_weights(alpha, stencil, 1));
        Array k({d.c_out, d.c_in, d.kh, d.kw});
        std::copy(d.kernel.begin(), d.kernel.end(), k.mutable_data());
        return k;
      },
      py::arg("alpha"), py::arg("stencil"));

  m.def(
      "dense_conv2d",
      [](const Array& x, const Array& kernel, int stride) {
        if (kernel.ndim() != 4 || kernel.shape(2) != 3 || kernel.shape(3) != 3)
          throw std::invalid_argument("kernel must be (c_out, c_in, 3, 3)");
        auto w = DenseConvWeights<double>::zeros(static_cast<std::size_t>(kernel.shape(1)),
                                                 static_cast<std::size_t>(kernel.shape(0)), stride);
        std::copy(kernel.data(), kernel.data() + kernel.size(), w.kernel.begin());
        return to_array(dense_conv2d(to_tensor(x), w));
      },
      py::arg("x"), py::arg("kernel"), py::arg("stride") = 1);

  m.def(
      "layer_flops",
      [](const std::string& kind, std::size_t c_in, std::size_t c_out, std::size_t h, std::size_t w) {
        static const std::map<std::string, LayerKind> kinds{{"lean", LayerKind::lean},
                                                            {"dense3x3", LayerKind::dense3x3},
                                                            {"conv1x1", LayerKind::conv1x1},
                                                            {"depthwise4", LayerKind::depthwise4}};
        const auto it = kinds.find(kind);
        if (it == kinds.end()) throw std::invalid_argument("unknown layer kind '" + kind + "'");
        return layer_flops(it->second, c_in, c_out, h, w);
      },
      py::arg("kind"), py::arg("c_in"), py::arg("c_out"), py::arg("h"), py::arg("w"));

  m.def(
      "count_params",
      [](const std::string& config, const std::string& conv, std::size_t classes) {
        return count_params(network(config, conv, classes));
      },
      py::arg("config"), py::arg("conv") = "lean", py::arg("classes") = 10);

  m.def(
      "count_flops",
      [](const std::string& config, const std::string& conv, std::size_t size) {
        return count_flops(network(config, conv, 10), size, size);
      },
      py::arg("config"), py::arg("conv") = "lean", py::arg("size") = 32);

  m.def(
      "lr_at_epoch",
      [](std::size_t epoch, double lr0, double decay, std::size_t every, std::size_t epochs) {
        TrainPlan p;
        p.lr0 = lr0;
        p.decay_factor = decay;
        p.decay_every = every;
        p.epochs = epochs;
        return lr_at_epoch(p, epoch);
      },
      py::arg("epoch"), py::arg("lr0") = 0.1, py::arg("decay") = 0.5, py::arg("every") = 75,
      py::arg("epochs") = 300);

  m.def(
      "synthetic_quadrants",
      [](std::size_t n, std::size_t hw, std::uint64_t seed) {
        const auto d = synthetic_quadrants(n, hw, seed);
        return py::make_tuple(to_array(d.images), d.labels);
      },
      py::arg("n"), py::arg("hw") = 16, py::arg("seed") = 1);

  m.def(
      "verify",
      [](std::uint64_t seed) {
        std::vector<std::tuple<std::string, bool, std::string>> out;
        {
          py::gil_scoped_release release;
          for (const auto& r : run_verify_suite(seed)) out.emplace_back(r.name, r.passed, r.detail);
        }
        return out;
      },
      py::arg("seed") = 1, "Runs the invariant suite; returns (name, passed, detail) tuples");
}
