#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "leanres/data.hpp"
#include "leanres/network.hpp"

namespace leanres {

struct TrainPlan {
  std::size_t epochs = 300;
  std::size_t batch_size = 100;
  double lr0 = 0.1;
  double decay_factor = 0.5;
  std::size_t decay_every = 75;
  std::uint64_t seed = 0;

  void validate() const;
};

// lr0 * decay_factor^floor(epoch / decay_every); epoch must be < plan.epochs.
double lr_at_epoch(const TrainPlan& plan, std::size_t epoch);

template <typename T>
struct AdamState {
  std::vector<std::vector<T>> first_moment, second_moment;
  std::uint64_t step_count = 0;
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
};

template <typename T>
struct ParamGroup {
  std::string name;
  std::span<T> values;
  std::span<const T> grads;
};

// Bias-corrected ADAM update over arbitrary parameter groups. Moments are
// allocated on first use. Throws before touching any parameter if a gradient
// is not finite, naming the offending group.
template <typename T>
void adam_apply(std::span<const ParamGroup<T>> groups, AdamState<T>& state, double lr);

template <typename T>
void adam_step(NetworkWeights<T>& weights, const NetworkWeights<T>& grads, AdamState<T>& state, double lr);

struct EpochStats {
  double loss = 0.0;
  double accuracy = 0.0;
};

/// One pass over `data` in a fresh random order drawn from `rng`: augment,
/// forward, loss, backward and an ADAM step per minibatch (the last partial
/// batch is kept). Returns sample-weighted mean loss and accuracy.
EpochStats train_epoch(NetworkWeights<float>& weights, AdamState<float>& state, const LabeledImages& data,
                       const TrainPlan& plan, std::size_t epoch, std::mt19937_64& rng,
                       const AugmentOptions& augment_opts = {});

// Eval-mode loss and accuracy over all samples; `weights` is not modified.
EpochStats evaluate(const NetworkWeights<float>& weights, const LabeledImages& data, std::size_t batch_size);

struct EpochRow {
  std::size_t epoch;
  double lr;
  EpochStats train, val;
};

inline constexpr const char* kMetricsHeader = "epoch,lr,train_loss,train_acc,val_loss,val_acc";
std::string format_metrics_row(const EpochRow& row);

struct TrainOptions {
  TrainPlan plan;
  AugmentOptions augment;
  std::ostream* metrics_csv = nullptr;  // header + one row per epoch
  std::optional<std::filesystem::path> checkpoint_path;
  std::size_t checkpoint_every = 0;  // 0: only after the final epoch
  std::function<void(const EpochRow&)> on_epoch;
};

// Full training run; the RNG for shuffling and augmentation is seeded from plan.seed.
std::vector<EpochRow> train(NetworkWeights<float>& weights, const LabeledImages& train_data,
                            const LabeledImages& val_data, const TrainOptions& opts);

}  // namespace leanres
