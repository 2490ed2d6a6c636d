#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace leanres {

struct TimingStats {
  double mean = 0.0, stddev = 0.0, median = 0.0;
};

// Runs `thunk` warmup times untimed, then reps timed runs. The thunk's return
// value is folded into a volatile sink so the work cannot be elided.
TimingStats time_kernel(const std::function<double()>& thunk, std::size_t warmup, std::size_t reps);

// Same, for several thunks timed round-robin within each repetition so that
// clock or thermal drift affects all of them alike.
std::vector<TimingStats> time_interleaved(std::span<const std::function<double()>> thunks, std::size_t warmup,
                                          std::size_t reps);

struct BenchLevel {
  std::size_t channels, map;
};

struct BenchSpec {
  std::size_t batch = 64;
  std::vector<BenchLevel> levels = default_levels();
  std::size_t repetitions = 10;
  std::size_t warmup = 3;
  std::uint64_t seed = 1;

  // 16 channels at 512x512 down to 512 channels at 16x16.
  static std::vector<BenchLevel> default_levels();
  void validate() const;
};

inline constexpr const char* kVariantDense = "dense3x3";
inline constexpr const char* kVariantUnfused = "unfused_square";
inline constexpr const char* kVariantLean = "lean_fused";
inline constexpr const char* kVariantSkipped = "skipped";

struct BenchRow {
  std::size_t channels, map;
  std::string variant;
  TimingStats time;
  double ratio_to_dense;
};

struct BenchResult {
  std::vector<BenchRow> rows;
  int threads = 1;

  const BenchRow* find(std::size_t channels, const std::string& variant) const;
};

/// For every level: builds one random input and one lean weight set, checks
/// that fused, unfused and dense-embedded outputs agree (max abs diff <= 1e-5,
/// otherwise the level fails with an exception), then times the three
/// variants round-robin. A level that cannot be allocated yields a
/// single "skipped" row.
BenchResult run_pyramid(const BenchSpec& spec, std::ostream* progress = nullptr);

inline constexpr const char* kBenchHeader = "channels,map,variant,mean_s,stddev_s,ratio_to_dense3x3";
void write_bench_csv(std::ostream& out, const BenchResult& result);
void write_bench_table(std::ostream& out, const BenchResult& result);

}  // namespace leanres
