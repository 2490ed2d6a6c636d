#include "leanres/optim.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <ostream>
#include <stdexcept>

namespace leanres {

void TrainPlan::validate() const {
  if (epochs == 0 || batch_size == 0 || decay_every == 0)
    throw std::invalid_argument("TrainPlan: epochs, batch_size and decay_every must be positive");
  if (!(lr0 >= 0.0) || !(decay_factor > 0.0))
    throw std::invalid_argument("TrainPlan: lr0 must be >= 0 and decay_factor > 0");
}

double lr_at_epoch(const TrainPlan& plan, std::size_t epoch) {
  if (epoch >= plan.epochs)
    throw std::out_of_range("lr_at_epoch: epoch " + std::to_string(epoch) + " outside [0, " +
                            std::to_string(plan.epochs) + ")");
  return plan.lr0 * std::pow(plan.decay_factor, static_cast<double>(epoch / plan.decay_every));
}

template <typename T>
void adam_apply(std::span<const ParamGroup<T>> groups, AdamState<T>& state, double lr) {
  for (const auto& g : groups) {
    if (g.values.size() != g.grads.size())
      throw std::invalid_argument("adam: gradient for " + g.name + " has the wrong length");
    for (T v : g.grads)
      if (!std::isfinite(static_cast<double>(v)))
        throw std::runtime_error("adam: non-finite gradient in parameter group " + g.name);
  }
  if (state.first_moment.empty()) {
    for (const auto& g : groups) {
      state.first_moment.emplace_back(g.values.size(), T(0));
      state.second_moment.emplace_back(g.values.size(), T(0));
    }
  }
  if (state.first_moment.size() != groups.size())
    throw std::invalid_argument("adam: optimizer state does not match the parameter groups");

  ++state.step_count;
  const double t = static_cast<double>(state.step_count);
  const double c1 = 1.0 - std::pow(state.beta1, t), c2 = 1.0 - std::pow(state.beta2, t);
  const T b1 = static_cast<T>(state.beta1), b2 = static_cast<T>(state.beta2);
  for (std::size_t k = 0; k < groups.size(); ++k) {
    auto& m = state.first_moment[k];
    auto& v = state.second_moment[k];
    const auto& g = groups[k];
    for (std::size_t i = 0; i < g.values.size(); ++i) {
      const T grad = g.grads[i];
      m[i] = b1 * m[i] + (T(1) - b1) * grad;
      v[i] = b2 * v[i] + (T(1) - b2) * grad * grad;
      const double mhat = m[i] / c1, vhat = v[i] / c2;
      g.values[i] -= static_cast<T>(lr * mhat / (std::sqrt(vhat) + state.eps));
    }
  }
}

template <typename T>
void adam_step(NetworkWeights<T>& weights, const NetworkWeights<T>& grads, AdamState<T>& state, double lr) {
  std::vector<ParamGroup<T>> groups;
  visit_network(weights, Visit::trainable, [&](const std::string& name, std::span<T> values) {
    groups.push_back({name, values, {}});
  });
  std::size_t k = 0;
  visit_network(grads, Visit::trainable, [&](const std::string& name, std::span<const T> values) {
    if (k >= groups.size() || groups[k].name != name)
      throw std::invalid_argument("adam_step: gradients are not congruent with the weights at " + name);
    groups[k++].grads = values;
  });
  if (k != groups.size()) throw std::invalid_argument("adam_step: gradients are missing parameter groups");
  adam_apply<T>(groups, state, lr);
}

EpochStats train_epoch(NetworkWeights<float>& weights, AdamState<float>& state, const LabeledImages& data,
                       const TrainPlan& plan, std::size_t epoch, std::mt19937_64& rng,
                       const AugmentOptions& augment_opts) {
  plan.validate();
  if (data.size() == 0) throw std::invalid_argument("train_epoch: empty dataset");
  const double lr = lr_at_epoch(plan, epoch);
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::shuffle(order.begin(), order.end(), rng);

  double loss_sum = 0.0;
  std::size_t correct = 0;
  for (std::size_t start = 0; start < order.size(); start += plan.batch_size) {
    const std::size_t end = std::min(order.size(), start + plan.batch_size);
    LabeledImages batch = gather(data, std::span(order).subspan(start, end - start));
    const Tensor4<float> x = augment(batch.images, rng, augment_opts);
    LossAndGrad<float> lg = net_loss_and_grad(weights, x, batch.labels, Mode::train);
    adam_step(weights, lg.grads, state, lr);
    loss_sum += lg.result.loss * static_cast<double>(end - start);
    correct += lg.result.correct;
  }
  const double n = static_cast<double>(data.size());
  return {loss_sum / n, static_cast<double>(correct) / n};
}

EpochStats evaluate(const NetworkWeights<float>& weights, const LabeledImages& data, std::size_t batch_size) {
  if (data.size() == 0) throw std::invalid_argument("evaluate: empty dataset");
  if (batch_size == 0) throw std::invalid_argument("evaluate: batch_size must be positive");
  // Eval mode reads but never writes the normalization statistics; the copy
  // lets the forward pass take its usual mutable reference.
  NetworkWeights<float> net = weights;
  double loss_sum = 0.0;
  std::size_t correct = 0;
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < data.size(); start += batch_size) {
    const std::size_t end = std::min(data.size(), start + batch_size);
    idx.resize(end - start);
    std::iota(idx.begin(), idx.end(), start);
    const LabeledImages batch = gather(data, idx);
    const Matrix<float> logits = net_forward(net, batch.images, Mode::eval);
    const SoftmaxResult<float> r = softmax_cross_entropy(logits, batch.labels);
    loss_sum += r.loss * static_cast<double>(end - start);
    correct += r.correct;
  }
  const double n = static_cast<double>(data.size());
  return {loss_sum / n, static_cast<double>(correct) / n};
}

std::string format_metrics_row(const EpochRow& row) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%zu,%.9g,%.9g,%.9g,%.9g,%.9g", row.epoch, row.lr, row.train.loss,
                row.train.accuracy, row.val.loss, row.val.accuracy);
  return buf;
}

std::vector<EpochRow> train(NetworkWeights<float>& weights, const LabeledImages& train_data,
                            const LabeledImages& val_data, const TrainOptions& opts) {
  opts.plan.validate();
  std::mt19937_64 rng(opts.plan.seed);
  AdamState<float> state;
  std::vector<EpochRow> rows;
  if (opts.metrics_csv) *opts.metrics_csv << kMetricsHeader << '\n';
  for (std::size_t epoch = 0; epoch < opts.plan.epochs; ++epoch) {
    EpochRow row{epoch, lr_at_epoch(opts.plan, epoch), {}, {}};
    row.train = train_epoch(weights, state, train_data, opts.plan, epoch, rng, opts.augment);
    row.val = evaluate(weights, val_data, opts.plan.batch_size);
    rows.push_back(row);
    if (opts.metrics_csv) *opts.metrics_csv << format_metrics_row(row) << '\n' << std::flush;
    if (opts.on_epoch) opts.on_epoch(row);
    const bool last = epoch + 1 == opts.plan.epochs;
    if (opts.checkpoint_path && (last || (opts.checkpoint_every > 0 && (epoch + 1) % opts.checkpoint_every == 0)))
      save_checkpoint(*opts.checkpoint_path, weights);
  }
  return rows;
}

template void adam_apply(std::span<const ParamGroup<float>>, AdamState<float>&, double);
template void adam_apply(std::span<const ParamGroup<double>>, AdamState<double>&, double);
template void adam_step(NetworkWeights<float>&, const NetworkWeights<float>&, AdamState<float>&, double);
template void adam_step(NetworkWeights<double>&, const NetworkWeights<double>&, AdamState<double>&, double);

}  // namespace leanres
