#include <cmath>
#include <sstream>

#include "doctest.h"
#include "leanres/optim.hpp"

using namespace leanres;

namespace {

std::vector<std::vector<float>> trainable(const NetworkWeights<float>& net) {
  std::vector<std::vector<float>> out;
  visit_network(net, Visit::trainable,
                [&](const std::string&, std::span<const float> v) { out.emplace_back(v.begin(), v.end()); });
  return out;
}

NetworkWeights<float> tiny_net(std::uint64_t seed) {
  return build_network<float>(NetworkConfig::custom({8, 16}, {1, 1}), seed);
}

}  // namespace

TEST_CASE("learning-rate schedule") {
  TrainPlan p;
  CHECK(lr_at_epoch(p, 0) == doctest::Approx(0.1));
  CHECK(lr_at_epoch(p, 74) == doctest::Approx(0.1));
  CHECK(lr_at_epoch(p, 75) == doctest::Approx(0.05));
  CHECK(lr_at_epoch(p, 225) == doctest::Approx(0.0125));
  CHECK(lr_at_epoch(p, 299) == doctest::Approx(0.0125));
  int drops = 0;
  for (std::size_t e = 1; e < p.epochs; ++e) drops += lr_at_epoch(p, e) != lr_at_epoch(p, e - 1);
  CHECK(drops == 3);
  CHECK_THROWS_AS(lr_at_epoch(p, 300), std::out_of_range);

  TrainPlan flat;
  flat.decay_factor = 1.0;
  for (std::size_t e = 0; e < flat.epochs; e += 37) CHECK(lr_at_epoch(flat, e) == 0.1);

  TrainPlan bad;
  bad.batch_size = 0;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}

TEST_CASE("adam on scalar problems") {
  SUBCASE("quadratic converges") {
    std::vector<double> x{5.0}, g(1);
    AdamState<double> st;
    for (int k = 0; k < 500; ++k) {
      g[0] = 2.0 * (x[0] - 1.5);
      const ParamGroup<double> group{"x", std::span(x), std::span<const double>(g)};
      adam_apply(std::span(&group, 1), st, 0.1);
    }
    CHECK(std::abs(x[0] - 1.5) < 1e-3);
    CHECK(st.step_count == 500);
  }
  SUBCASE("first step has magnitude lr") {
    for (double grad : {1e-3, 0.7, -42.0}) {
      std::vector<double> x{0.25}, g{grad};
      AdamState<double> st;
      const ParamGroup<double> group{"x", std::span(x), std::span<const double>(g)};
      adam_apply(std::span(&group, 1), st, 0.01);
      CHECK(std::abs(std::abs(x[0] - 0.25) - 0.01) < 1e-6);
      CHECK((x[0] < 0.25) == (grad > 0));
    }
  }
  SUBCASE("non-finite gradient names the group and leaves parameters alone") {
    std::vector<double> a{1.0}, b{2.0}, ga{0.5}, gb{std::nan("")};
    const ParamGroup<double> groups[] = {{"first", std::span(a), std::span<const double>(ga)},
                                         {"block1.step0.conv2.alpha", std::span(b), std::span<const double>(gb)}};
    AdamState<double> st;
    std::string message;
    try {
      adam_apply(std::span<const ParamGroup<double>>(groups), st, 0.1);
    } catch (const std::exception& e) {
      message = e.what();
    }
    CHECK(message.find("block1.step0.conv2.alpha") != std::string::npos);
    CHECK(a[0] == 1.0);
    CHECK(b[0] == 2.0);
  }
}

TEST_CASE("adam on a network") {
  auto net = tiny_net(1);
  const auto before = trainable(net);
  AdamState<float> st;
  for (int k = 0; k < 3; ++k) adam_step(net, net.zeros_like(), st, 0.1);
  CHECK(trainable(net) == before);

  auto grads = net.zeros_like();
  grads.classifier.bias[0] = 1.0f;
  adam_step(net, grads, st, 0.1);
  CHECK(net.classifier.bias[0] < before.back()[0]);
}

TEST_CASE("training loop") {
  const auto train_data = synthetic_quadrants(400, 16, 3);
  const auto val_data = synthetic_quadrants(200, 16, 4);
  AugmentOptions off;
  off.enabled = false;

  SUBCASE("lr 0 leaves trainable weights identical") {
    auto net = tiny_net(2);
    const auto before = trainable(net);
    TrainPlan plan;
    plan.lr0 = 0.0;
    plan.batch_size = 64;
    AdamState<float> st;
    std::mt19937_64 rng(5);
    train_epoch(net, st, train_data, plan, 0, rng, off);
    CHECK(trainable(net) == before);
  }
  SUBCASE("loss falls and runs are deterministic") {
    TrainPlan plan;
    plan.epochs = 5;
    plan.batch_size = 50;
    plan.seed = 9;
    TrainOptions opts;
    opts.plan = plan;
    opts.augment = off;
    std::ostringstream csv;
    opts.metrics_csv = &csv;
    auto net = tiny_net(2);
    const auto rows = train(net, train_data, val_data, opts);
    REQUIRE(rows.size() == 5);
    CHECK(rows[4].train.loss < rows[0].train.loss);
    CHECK(csv.str().rfind(kMetricsHeader, 0) == 0);
    std::size_t lines = 0;
    for (char c : csv.str()) lines += c == '\n';
    CHECK(lines == 6);

    opts.metrics_csv = nullptr;
    auto again = tiny_net(2);
    const auto rows2 = train(again, train_data, val_data, opts);
    for (std::size_t e = 0; e < 5; ++e) CHECK(rows2[e].train.loss == rows[e].train.loss);
    CHECK(trainable(again) == trainable(net));
  }
  SUBCASE("tiny network overfits a small training set") {
    const auto small = take_first(train_data, 100);
    TrainOptions opts;
    opts.plan.epochs = 40;
    opts.plan.batch_size = 25;
    opts.plan.lr0 = 0.01;
    opts.augment = off;
    auto net = tiny_net(7);
    const auto rows = train(net, small, small, opts);
    CHECK(rows.back().train.accuracy >= 0.99);
    CHECK(evaluate(net, small, 50).accuracy == 1.0);
  }
}

TEST_CASE("evaluate") {
  const auto data = synthetic_quadrants(1000, 16, 11);
  double mean = 0;
  for (std::uint64_t s = 1; s <= 5; ++s) {
    const auto net = build_network<float>(NetworkConfig::custom({8, 16}, {1, 1}), 100 + s);
    const auto a = evaluate(net, data, 100), b = evaluate(net, data, 100);
    CHECK(a.loss == b.loss);
    CHECK(a.accuracy == b.accuracy);
    CHECK(evaluate(net, data, 37).loss == doctest::Approx(a.loss).epsilon(1e-5));
    mean += a.accuracy / 5;
  }
  CHECK(std::abs(mean - 0.1) <= 0.05);
  CHECK(format_metrics_row({3, 0.05, {1.0, 0.5}, {2.0, 0.25}}).rfind("3,", 0) == 0);
}
