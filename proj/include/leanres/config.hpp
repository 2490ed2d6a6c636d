#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "leanres/bench.hpp"
#include "leanres/network.hpp"
#include "leanres/optim.hpp"

namespace leanres {

enum class Command { train, eval, bench, verify, params };
enum class Dataset { cifar10, cifar100, stl10, synthetic };

// Problems with the configuration itself; `key` names the offending entry.
class ConfigError : public std::runtime_error {
 public:
  ConfigError(std::string key, const std::string& message)
      : std::runtime_error(key + ": " + message), key_(std::move(key)) {}
  const std::string& key() const { return key_; }

 private:
  std::string key_;
};

struct RunConfig {
  Command command = Command::verify;
  std::optional<Dataset> dataset;
  std::string data_dir;
  std::optional<ConfigKind> config_kind;
  ConvKind conv_kind = ConvKind::lean;
  std::vector<std::size_t> widths, steps;  // config = custom
  std::size_t early_dense_blocks = 0;

  TrainPlan plan;  // epochs, batch, lr0, decay, decay_every
  std::uint64_t seed = 1;
  int threads = 1;
  std::optional<bool> augment;  // default: on for image datasets, off for synthetic

  std::string checkpoint;  // train: written; eval: read
  std::size_t checkpoint_every = 0;
  std::string metrics;  // train metrics CSV, stdout when empty
  std::string output;   // bench CSV, stdout when empty

  std::size_t train_samples = 0, val_samples = 0;  // 0: whole split
  std::size_t synthetic_train = 2000, synthetic_val = 500, image_size = 16;

  std::size_t bench_batch = 64, bench_reps = 10, bench_warmup = 3;
  std::vector<BenchLevel> bench_levels;  // empty: the default pyramid

  // Network configuration the command works on. Synthetic runs without an
  // explicit config use a small two-block lean network.
  NetworkConfig network_config() const;
  std::size_t class_count() const;
};

// Every accepted key, in the order `leanres --help` lists them.
const std::vector<std::string>& config_keys();

/// Parses `key = value` lines (`#` starts a comment), then applies the
/// overrides in order, then validates. Throws ConfigError naming the key.
RunConfig parse_config(std::string_view file_text, const std::vector<std::pair<std::string, std::string>>& overrides);

RunConfig parse_config_file(const std::string& path,
                            const std::vector<std::pair<std::string, std::string>>& overrides);

// Deterministic child seed k of the root seed.
std::uint64_t derive_seed(std::uint64_t root, std::uint64_t k);

/// Executes the command. Returns 0 on success, 1 on a failed check or a
/// runtime error (reported on `err`), 2 on a configuration error.
int run_command(const RunConfig& config, std::ostream& out, std::ostream& err);

}  // namespace leanres
