#include "leanres/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <new>
#include <ostream>
#include <sstream>
#include <stdexcept>

#include "leanres/conv.hpp"
#include "leanres/parallel.hpp"
#include "leanres/tensor.hpp"

namespace leanres {

namespace {

volatile double g_sink = 0.0;

// MemAvailable from /proc/meminfo in bytes, or 0 when unknown.
std::size_t available_memory() {
  std::ifstream in("/proc/meminfo");
  std::string key;
  std::size_t kb = 0;
  std::string unit;
  while (in >> key >> kb >> unit)
    if (key == "MemAvailable:") return kb * 1024;
  return 0;
}

double checksum(const Tensor4<float>& t) {
  auto d = t.data();
  return static_cast<double>(d[0]) + static_cast<double>(d[d.size() - 1]);
}

}  // namespace

namespace {

TimingStats summarize(std::vector<double> samples) {
  const std::size_t reps = samples.size();
  TimingStats s;
  for (double v : samples) s.mean += v;
  s.mean /= static_cast<double>(reps);
  double sq = 0.0;
  for (double v : samples) sq += (v - s.mean) * (v - s.mean);
  s.stddev = std::sqrt(sq / static_cast<double>(reps - 1));
  std::sort(samples.begin(), samples.end());
  s.median = reps % 2 ? samples[reps / 2] : 0.5 * (samples[reps / 2 - 1] + samples[reps / 2]);
  return s;
}

}  // namespace

TimingStats time_kernel(const std::function<double()>& thunk, std::size_t warmup, std::size_t reps) {
  return time_interleaved(std::span(&thunk, 1), warmup, reps).front();
}

std::vector<TimingStats> time_interleaved(std::span<const std::function<double()>> thunks, std::size_t warmup,
                                          std::size_t reps) {
  if (reps < 3) throw std::invalid_argument("time_kernel: at least 3 repetitions are required");
  for (std::size_t k = 0; k < warmup; ++k)
    for (const auto& f : thunks) g_sink = g_sink + f();
  std::vector<std::vector<double>> samples(thunks.size());
  for (std::size_t k = 0; k < reps; ++k)
    for (std::size_t v = 0; v < thunks.size(); ++v) {
      const auto t0 = std::chrono::steady_clock::now();
      const double r = thunks[v]();
      const auto t1 = std::chrono::steady_clock::now();
      g_sink = g_sink + r;
      samples[v].push_back(std::chrono::duration<double>(t1 - t0).count());
    }
  std::vector<TimingStats> out;
  for (auto& s : samples) out.push_back(summarize(std::move(s)));
  return out;
}

std::vector<BenchLevel> BenchSpec::default_levels() {
  return {{16, 512}, {32, 256}, {64, 128}, {128, 64}, {256, 32}, {512, 16}};
}

void BenchSpec::validate() const {
  if (batch == 0) throw std::invalid_argument("BenchSpec: batch must be positive");
  if (repetitions < 3) throw std::invalid_argument("BenchSpec: repetitions must be >= 3");
  if (levels.empty()) throw std::invalid_argument("BenchSpec: no levels");
  for (const auto& l : levels)
    if (l.channels == 0 || l.map == 0) throw std::invalid_argument("BenchSpec: levels must be positive");
}

const BenchRow* BenchResult::find(std::size_t channels, const std::string& variant) const {
  for (const auto& r : rows)
    if (r.channels == channels && r.variant == variant) return &r;
  return nullptr;
}

BenchResult run_pyramid(const BenchSpec& spec, std::ostream* progress) {
  spec.validate();
  BenchResult result;
  result.threads = num_threads();
  for (const BenchLevel& level : spec.levels) {
    const Shape4 shape{spec.batch, level.channels, level.map, level.map};
    // Peak residency: input, fused output, reference output and its depth-wise temporary.
    const std::size_t need = 4 * shape.size() * sizeof(float);
    const std::size_t avail = available_memory();
    if (avail != 0 && need > avail) {
      if (progress)
        *progress << "warning: skipping " << level.channels << "@" << level.map << "x" << level.map << " (needs "
                  << need / (1 << 20) << " MiB, " << avail / (1 << 20) << " MiB available)\n";
      result.rows.push_back({level.channels, level.map, kVariantSkipped, {NAN, NAN, NAN}, NAN});
      continue;
    }
    try {
      const std::uint64_t seed = spec.seed + level.channels;
      const auto x = seeded_fill<float>(shape, seed, Distribution::uniform(1.0));
      auto w = LeanConvWeights<float>::zeros(level.channels, level.channels, 1);
      seeded_fill<float>(std::span(w.alpha.data), seed + 1,
                         Distribution::normal(1.0 / std::sqrt(static_cast<double>(level.channels))));
      seeded_fill<float>(std::span(w.stencil.data), seed + 2, Distribution::normal(0.5));
      const DenseConvWeights<float> dense = lean_to_dense(w);

      // Correctness gate: no timing for variants that disagree.
      {
        const Tensor4<float> fused = lean_conv2d_fused(x, w);
        const double d_ref = max_abs_diff(fused, lean_conv2d_reference(x, w));
        const double d_dense = max_abs_diff(fused, dense_conv2d(x, dense));
        if (!(d_ref <= 1e-5) || !(d_dense <= 1e-5)) {
          std::ostringstream os;
          os << "run_pyramid: variants disagree at " << level.channels << " channels (fused vs unfused " << d_ref
             << ", fused vs dense " << d_dense << ")";
          throw std::runtime_error(os.str());
        }
      }

      const std::function<double()> variants[] = {
          [&] { return checksum(dense_conv2d(x, dense)); },
          [&] { return checksum(lean_conv2d_reference(x, w)); },
          [&] { return checksum(lean_conv2d_fused(x, w)); },
      };
      const auto times = time_interleaved(variants, spec.warmup, spec.repetitions);
      const TimingStats &t_dense = times[0], &t_unfused = times[1], &t_lean = times[2];
      result.rows.push_back({level.channels, level.map, kVariantDense, t_dense, 1.0});
      result.rows.push_back({level.channels, level.map, kVariantUnfused, t_unfused, t_unfused.mean / t_dense.mean});
      result.rows.push_back({level.channels, level.map, kVariantLean, t_lean, t_lean.mean / t_dense.mean});
      if (progress)
        *progress << "level " << level.channels << "@" << level.map << ": dense " << t_dense.mean << " s, unfused "
                  << t_unfused.mean << " s, fused " << t_lean.mean << " s\n"
                  << std::flush;
    } catch (const std::bad_alloc&) {
      if (progress) *progress << "warning: allocation failed at " << level.channels << " channels, level skipped\n";
      result.rows.push_back({level.channels, level.map, kVariantSkipped, {NAN, NAN, NAN}, NAN});
    }
  }
  return result;
}

void write_bench_csv(std::ostream& out, const BenchResult& result) {
  out << kBenchHeader << '\n';
  char buf[256];
  for (const auto& r : result.rows) {
    std::snprintf(buf, sizeof buf, "%zu,%zu,%s,%.9g,%.9g,%.9g", r.channels, r.map, r.variant.c_str(), r.time.mean,
                  r.time.stddev, r.ratio_to_dense);
    out << buf << '\n';
  }
}

void write_bench_table(std::ostream& out, const BenchResult& result) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%8s %6s %-15s %12s %12s %12s %8s\n", "channels", "map", "variant", "mean_s",
                "median_s", "stddev_s", "ratio");
  out << "threads: " << result.threads << '\n' << buf;
  for (const auto& r : result.rows) {
    std::snprintf(buf, sizeof buf, "%8zu %6zu %-15s %12.6f %12.6f %12.6f %8.3f\n", r.channels, r.map,
                  r.variant.c_str(), r.time.mean, r.time.median, r.time.stddev, r.ratio_to_dense);
    out << buf;
  }
}

}  // namespace leanres
