#include <filesystem>

#include "doctest.h"
#include "leanres/network.hpp"
#include "oracles.hpp"

using namespace leanres;

namespace {

template <typename T>
std::vector<std::vector<T>> arrays(const NetworkWeights<T>& net, Visit which) {
  std::vector<std::vector<T>> out;
  visit_network(net, which, [&](const std::string&, std::span<const T> v) { out.emplace_back(v.begin(), v.end()); });
  return out;
}

// Independent count: walk the built weights and sum the trainable arrays.
template <typename T>
std::size_t walk_count(const NetworkWeights<T>& net) {
  std::size_t n = 0;
  visit_network(net, Visit::trainable, [&](const std::string&, std::span<const T> v) { n += v.size(); });
  return n;
}

}  // namespace

TEST_CASE("table configurations") {
  const auto a = NetworkConfig::table(ConfigKind::A);
  CHECK(a.widths == std::vector<std::size_t>{32, 64, 128, 256});
  CHECK(a.steps == std::vector<std::size_t>{2, 3, 3, 3});
  const auto e = NetworkConfig::table(ConfigKind::E);
  CHECK(e.widths.size() == 5);
  CHECK(parse_config_kind("D") == ConfigKind::D);
  CHECK(parse_conv_kind("dense") == ConvKind::dense);
  CHECK_THROWS_AS(parse_config_kind("G"), std::invalid_argument);
  CHECK_THROWS_AS(parse_conv_kind("bogus"), std::invalid_argument);
  CHECK_THROWS_AS(NetworkConfig::table(ConfigKind::custom), std::invalid_argument);
  CHECK_THROWS_AS(build_network<float>(NetworkConfig::custom({}, {}), 1), std::invalid_argument);
  CHECK_THROWS_AS(NetworkConfig::custom({8, 16}, {1}).validate(), std::invalid_argument);
}

TEST_CASE("parameter counts against the published bands") {
  auto count = [](ConfigKind k, ConvKind c, std::size_t classes = 10) {
    return count_params(NetworkConfig::table(k, c, classes));
  };
  const std::size_t a_lean = count(ConfigKind::A, ConvKind::lean), a_dense = count(ConfigKind::A, ConvKind::dense);
  CHECK(a_lean >= 450000);
  CHECK(a_lean <= 600000);
  CHECK(a_dense >= 3900000);
  CHECK(a_dense <= 4800000);
  const std::size_t e_lean = count(ConfigKind::E, ConvKind::lean);
  CHECK(e_lean >= 1800000);
  CHECK(e_lean <= 2300000);
  const std::size_t d_dense = count(ConfigKind::D, ConvKind::dense);
  CHECK(d_dense >= 3200000);
  CHECK(d_dense <= 4400000);

  // Frozen exact values from the walk over built weights.
  CHECK(a_lean == 539178);
  CHECK(a_dense == 4346282);
  CHECK(count(ConfigKind::C, ConvKind::lean, 100) == 3309476);
  CHECK(count(ConfigKind::C, ConvKind::dense, 100) == 27522212);
  CHECK(e_lean == 2131498);
  CHECK(count(ConfigKind::E, ConvKind::dense) == 17461674);

  for (ConfigKind k : {ConfigKind::A, ConfigKind::B, ConfigKind::C, ConfigKind::D, ConfigKind::E, ConfigKind::F})
    CHECK(count(k, ConvKind::lean) < count(k, ConvKind::dense));
}

TEST_CASE("lean to dense parameter ratio approaches 9 at large width") {
  double last = 0;
  for (std::size_t c : {16, 64, 256, 1024}) {
    const auto lean = count_params(NetworkConfig::custom({c}, {4}, ConvKind::lean));
    const auto dense = count_params(NetworkConfig::custom({c}, {4}, ConvKind::dense));
    const double ratio = static_cast<double>(dense) / static_cast<double>(lean);
    CHECK(ratio > last);
    CHECK(ratio < 9.0);
    last = ratio;
  }
  CHECK(last > 8.5);
}

TEST_CASE("count_params from config equals a walk over the built weights") {
  for (ConfigKind k : {ConfigKind::A, ConfigKind::B, ConfigKind::D, ConfigKind::F})
    for (ConvKind c : {ConvKind::lean, ConvKind::dense}) {
      const auto cfg = NetworkConfig::table(k, c);
      const auto net = build_network<float>(cfg, 3);
      CHECK(count_params(net) == walk_count(net));
      CHECK(count_params(cfg) == walk_count(net));
    }
  auto mixed = NetworkConfig::table(ConfigKind::B);
  mixed.early_dense_blocks = 2;
  CHECK(count_params(mixed) == walk_count(build_network<float>(mixed, 1)));
}

TEST_CASE("single lean step parameter count") {
  const auto none = count_params(NetworkConfig::custom({32}, {0}));
  const auto one = count_params(NetworkConfig::custom({32}, {1}));
  CHECK(one - none == 2304 + 128);
}

TEST_CASE("zero-layer network is opening plus classifier") {
  const auto cfg = NetworkConfig::custom({16}, {0}, ConvKind::lean, 7);
  const auto net = build_network<float>(cfg, 1);
  CHECK(net.blocks.size() == 1);
  CHECK(net.blocks[0].empty());
  CHECK(count_params(net) - net.opening.kernel.size() == 7 * 16 + 7);
}

TEST_CASE("build_network is deterministic") {
  const auto cfg = NetworkConfig::custom({8, 16}, {1, 2});
  CHECK(arrays(build_network<float>(cfg, 5), Visit::all) == arrays(build_network<float>(cfg, 5), Visit::all));
  CHECK(arrays(build_network<float>(cfg, 5), Visit::all) != arrays(build_network<float>(cfg, 6), Visit::all));
}

TEST_CASE("forward shapes") {
  auto net = build_network<float>(NetworkConfig::table(ConfigKind::A), 1);
  const auto x = seeded_fill<float>(Shape4{100, 3, 32, 32}, 2, Distribution::normal(1.0));
  const auto logits = net_forward(net, x, Mode::eval);
  CHECK(logits.rows == 100);
  CHECK(logits.cols == 10);
  for (float v : logits.data) CHECK(std::isfinite(v));
  CHECK_THROWS_AS(net_forward(net, Tensor4<float>(2, 1, 32, 32), Mode::eval), std::invalid_argument);

  auto f = build_network<float>(NetworkConfig::table(ConfigKind::F, ConvKind::lean, 100), 1);
  CHECK(net_forward(f, Tensor4<float>(2, 3, 9, 9, 0.5f), Mode::train).cols == 100);
}

TEST_CASE("zero residual convolutions reduce to opening, pool and classifier") {
  auto net = build_network<double>(NetworkConfig::custom({4, 8}, {2, 1}), 7);
  for (auto& block : net.blocks)
    for (auto& step : block) step.conv2 = step.conv2.zeros_like();
  const auto x = oracle::random<double>(Shape4{3, 3, 8, 8}, 8);
  const auto logits = net_forward(net, x, Mode::eval);

  // By hand: opening, then projections only where the shape changes.
  auto h = oracle::dense(x, net.opening);
  for (auto& block : net.blocks)
    for (auto& step : block)
      if (step.shortcut) h = conv1x1(h, step.shortcut->alpha, step.shortcut->stride);
  const auto pooled = global_avg_pool(h);
  const auto want = linear_forward(pooled, net.classifier);
  double worst = 0;
  for (std::size_t i = 0; i < want.data.size(); ++i) worst = std::max(worst, std::abs(want.data[i] - logits.data[i]));
  CHECK(worst <= 1e-12);
}

TEST_CASE("network gradient vs finite differences") {
  for (ConvKind kind : {ConvKind::lean, ConvKind::dense}) {
    auto net = build_network<double>(NetworkConfig::custom({2, 4}, {1, 1}, kind, 3), 11);
    const auto x = oracle::random<double>(Shape4{4, 3, 6, 6}, 12);
    const std::vector<int> labels{0, 2, 1, 2};
    const auto lg = net_loss_and_grad(net, x, std::span<const int>(labels));
    auto loss = [&] {
      auto fresh = net;
      return net_loss_and_grad(fresh, x, std::span<const int>(labels)).result.loss;
    };
    std::vector<std::span<double>> params;
    std::vector<std::span<const double>> analytic;
    visit_network(net, Visit::trainable, [&](const std::string&, std::span<double> v) { params.push_back(v); });
    visit_network(std::as_const(lg.grads), Visit::trainable,
                  [&](const std::string&, std::span<const double> v) { analytic.push_back(v); });
    REQUIRE(params.size() == analytic.size());
    for (std::size_t k = 0; k < params.size(); ++k) {
      std::vector<double> copy(params[k].begin(), params[k].end());
      auto via = [&] {
        std::copy(copy.begin(), copy.end(), params[k].begin());
        return loss();
      };
      CAPTURE(k);
      CHECK(oracle::fd_rel_error(copy, analytic[k], via) <= 1e-6);
      std::copy(copy.begin(), copy.end(), params[k].begin());
    }
  }
}

TEST_CASE("flop counts") {
  const auto a_lean = count_flops(NetworkConfig::table(ConfigKind::A), 32, 32);
  const auto a_dense = count_flops(NetworkConfig::table(ConfigKind::A, ConvKind::dense), 32, 32);
  CHECK(static_cast<double>(a_dense) / static_cast<double>(a_lean) > 5.0);
  CHECK(count_flops(NetworkConfig::table(ConfigKind::A), 64, 64) == 4 * a_lean);

  const LayerShape one{LayerKind::lean, 8, 8, 1, 1};
  CHECK(count_flops(std::span(&one, 1)) == layer_flops(LayerKind::lean, 8, 8, 1, 1));

  std::uint64_t sum = 0;
  for (const auto& l : layer_plan(NetworkConfig::table(ConfigKind::B), 32, 32))
    sum += layer_flops(l.kind, l.c_in, l.c_out, l.out_h, l.out_w);
  CHECK(sum == count_flops(NetworkConfig::table(ConfigKind::B), 32, 32));
}

TEST_CASE("checkpoint round trip") {
  auto cfg = NetworkConfig::custom({4, 8}, {1, 2}, ConvKind::lean, 5);
  cfg.early_dense_blocks = 1;
  auto net = build_network<float>(cfg, 9);
  net_forward(net, seeded_fill<float>(Shape4{4, 3, 8, 8}, 1, Distribution::normal(1.0)), Mode::train);

  const auto bytes = encode_checkpoint(net);
  const auto back = decode_checkpoint(bytes);
  CHECK(back.config == net.config);
  CHECK(arrays(back, Visit::all) == arrays(net, Visit::all));

  const auto path = std::filesystem::temp_directory_path() / "leanres_test_ckpt.bin";
  save_checkpoint(path, net);
  CHECK(arrays(load_checkpoint(path), Visit::all) == arrays(net, Visit::all));
  std::filesystem::remove(path);

  auto bad = bytes;
  bad[0] = 'X';
  CHECK_THROWS_AS(decode_checkpoint(bad), std::runtime_error);
  CHECK_THROWS_AS(decode_checkpoint(std::span(bytes).first(bytes.size() - 3)), std::runtime_error);
  auto longer = bytes;
  longer.push_back(0);
  CHECK_THROWS_AS(decode_checkpoint(longer), std::runtime_error);
  CHECK_THROWS_AS(load_checkpoint("/nonexistent/ckpt.bin"), std::runtime_error);
}
