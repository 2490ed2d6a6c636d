#include "leanres/config.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <ostream>
#include <sstream>

#include "leanres/bench.hpp"
#include "leanres/data.hpp"
#include "leanres/parallel.hpp"
#include "leanres/verify.hpp"

namespace leanres {

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

template <typename U>
U parse_unsigned(const std::string& key, const std::string& v) {
  U out{};
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) throw ConfigError(key, "expected a non-negative integer, got '" + v + "'");
  return out;
}

std::size_t parse_positive(const std::string& key, const std::string& v) {
  const auto n = parse_unsigned<std::size_t>(key, v);
  if (n == 0) throw ConfigError(key, "must be positive");
  return n;
}

double parse_double(const std::string& key, const std::string& v) {
  double out = 0.0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size() || !std::isfinite(out))
    throw ConfigError(key, "expected a number, got '" + v + "'");
  return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "on" || v == "yes" || v == "1") return true;
  if (v == "false" || v == "off" || v == "no" || v == "0") return false;
  throw ConfigError(key, "expected true or false, got '" + v + "'");
}

std::vector<std::size_t> parse_list(const std::string& key, const std::string& v) {
  std::vector<std::size_t> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_unsigned<std::size_t>(key, trim(item)));
  if (out.empty()) throw ConfigError(key, "expected a comma-separated list");
  return out;
}

// "16@512,32@256"
std::vector<BenchLevel> parse_levels(const std::string& key, const std::string& v) {
  std::vector<BenchLevel> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    const auto at = item.find('@');
    if (at == std::string::npos) throw ConfigError(key, "expected channels@map entries, got '" + item + "'");
    out.push_back({parse_positive(key, trim(item.substr(0, at))), parse_positive(key, trim(item.substr(at + 1)))});
  }
  if (out.empty()) throw ConfigError(key, "expected at least one level");
  return out;
}

Command parse_command(const std::string& v) {
  static const std::map<std::string, Command> m{{"train", Command::train},
                                                {"eval", Command::eval},
                                                {"bench", Command::bench},
                                                {"verify", Command::verify},
                                                {"params", Command::params}};
  const auto it = m.find(v);
  if (it == m.end()) throw ConfigError("command", "unknown command '" + v + "'");
  return it->second;
}

Dataset parse_dataset(const std::string& v) {
  static const std::map<std::string, Dataset> m{{"cifar10", Dataset::cifar10},
                                                {"cifar100", Dataset::cifar100},
                                                {"stl10", Dataset::stl10},
                                                {"synthetic", Dataset::synthetic}};
  const auto it = m.find(v);
  if (it == m.end()) throw ConfigError("dataset", "unknown dataset '" + v + "' (cifar10, cifar100, stl10, synthetic)");
  return it->second;
}

using Setter = std::function<void(RunConfig&, const std::string& key, const std::string& value)>;

const std::vector<std::pair<std::string, Setter>>& setters() {
  static const std::vector<std::pair<std::string, Setter>> table{
      {"command", [](RunConfig& c, const std::string&, const std::string& v) { c.command = parse_command(v); }},
      {"dataset", [](RunConfig& c, const std::string&, const std::string& v) { c.dataset = parse_dataset(v); }},
      {"data_dir", [](RunConfig& c, const std::string&, const std::string& v) { c.data_dir = v; }},
      {"config",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         try {
           c.config_kind = parse_config_kind(v);
         } catch (const std::invalid_argument& e) {
           throw ConfigError(k, e.what());
         }
       }},
      {"conv",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         try {
           c.conv_kind = parse_conv_kind(v);
         } catch (const std::invalid_argument& e) {
           throw ConfigError(k, e.what());
         }
       }},
      {"widths", [](RunConfig& c, const std::string& k, const std::string& v) { c.widths = parse_list(k, v); }},
      {"steps", [](RunConfig& c, const std::string& k, const std::string& v) { c.steps = parse_list(k, v); }},
      {"early_dense_blocks",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         c.early_dense_blocks = parse_unsigned<std::size_t>(k, v);
       }},
      {"epochs", [](RunConfig& c, const std::string& k, const std::string& v) { c.plan.epochs = parse_positive(k, v); }},
      {"batch",
       [](RunConfig& c, const std::string& k, const std::string& v) { c.plan.batch_size = parse_positive(k, v); }},
      {"lr0",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         c.plan.lr0 = parse_double(k, v);
         if (c.plan.lr0 < 0) throw ConfigError(k, "must be >= 0");
       }},
      {"decay",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         c.plan.decay_factor = parse_double(k, v);
         if (!(c.plan.decay_factor > 0)) throw ConfigError(k, "must be positive");
       }},
      {"decay_every",
       [](RunConfig& c, const std::string& k, const std::string& v) { c.plan.decay_every = parse_positive(k, v); }},
      {"seed",
       [](RunConfig& c, const std::string& k, const std::string& v) { c.seed = parse_unsigned<std::uint64_t>(k, v); }},
      {"threads",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         c.threads = static_cast<int>(parse_positive(k, v));
       }},
      {"augment", [](RunConfig& c, const std::string& k, const std::string& v) { c.augment = parse_bool(k, v); }},
      {"checkpoint", [](RunConfig& c, const std::string&, const std::string& v) { c.checkpoint = v; }},
      {"checkpoint_every",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         c.checkpoint_every = parse_unsigned<std::size_t>(k, v);
       }},
      {"metrics", [](RunConfig& c, const std::string&, const std::string& v) { c.metrics = v; }},
      {"output", [](RunConfig& c, const std::string&, const std::string& v) { c.output = v; }},
      {"train_samples",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         c.train_samples = parse_unsigned<std::size_t>(k, v);
       }},
      {"val_samples",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         c.val_samples = parse_unsigned<std::size_t>(k, v);
       }},
      {"synthetic_train",
       [](RunConfig& c, const std::string& k, const std::string& v) { c.synthetic_train = parse_positive(k, v); }},
      {"synthetic_val",
       [](RunConfig& c, const std::string& k, const std::string& v) { c.synthetic_val = parse_positive(k, v); }},
      {"image_size",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         c.image_size = parse_positive(k, v);
         if (c.image_size < 8) throw ConfigError(k, "must be at least 8");
       }},
      {"bench_batch",
       [](RunConfig& c, const std::string& k, const std::string& v) { c.bench_batch = parse_positive(k, v); }},
      {"bench_reps",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         c.bench_reps = parse_positive(k, v);
         if (c.bench_reps < 3) throw ConfigError(k, "must be at least 3");
       }},
      {"bench_warmup",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         c.bench_warmup = parse_unsigned<std::size_t>(k, v);
       }},
      {"bench_levels",
       [](RunConfig& c, const std::string& k, const std::string& v) { c.bench_levels = parse_levels(k, v); }},
  };
  return table;
}

void apply(RunConfig& c, const std::string& key, const std::string& value) {
  for (const auto& [k, set] : setters())
    if (k == key) return set(c, key, value);
  throw ConfigError(key, "unknown key");
}

void validate(const RunConfig& c) {
  const bool needs_data = c.command == Command::train || c.command == Command::eval;
  if (needs_data && !c.dataset) throw ConfigError("dataset", "required by the " + std::string(c.command == Command::train ? "train" : "eval") + " command");
  if (needs_data && *c.dataset != Dataset::synthetic && c.data_dir.empty())
    throw ConfigError("data_dir", "required for this dataset");
  if (c.command == Command::eval && c.checkpoint.empty()) throw ConfigError("checkpoint", "required by the eval command");
  if (c.command == Command::params && !c.config_kind) throw ConfigError("config", "required by the params command");
  if (c.command == Command::train && !c.config_kind && *c.dataset != Dataset::synthetic)
    throw ConfigError("config", "required by the train command");
  if (c.config_kind == ConfigKind::custom && (c.widths.empty() || c.steps.empty()))
    throw ConfigError(c.widths.empty() ? "widths" : "steps", "required when config = custom");
  if (c.config_kind && *c.config_kind != ConfigKind::custom && (!c.widths.empty() || !c.steps.empty()))
    throw ConfigError(c.widths.empty() ? "steps" : "widths", "only valid with config = custom");
  if (c.command == Command::train || c.command == Command::params || c.command == Command::eval) {
    if (!c.config_kind && !(c.dataset && *c.dataset == Dataset::synthetic)) return;
    try {
      c.network_config().validate();
    } catch (const std::invalid_argument& e) {
      throw ConfigError(c.config_kind == ConfigKind::custom ? "widths" : "config", e.what());
    }
  }
}

}  // namespace

NetworkConfig RunConfig::network_config() const {
  NetworkConfig cfg;
  if (!config_kind)
    cfg = NetworkConfig::custom({8, 16}, {1, 1}, conv_kind, class_count());
  else if (*config_kind == ConfigKind::custom)
    cfg = NetworkConfig::custom(widths, steps, conv_kind, class_count());
  else
    cfg = NetworkConfig::table(*config_kind, conv_kind, class_count());
  cfg.early_dense_blocks = early_dense_blocks;
  return cfg;
}

std::size_t RunConfig::class_count() const { return dataset == Dataset::cifar100 ? 100 : 10; }

const std::vector<std::string>& config_keys() {
  static const std::vector<std::string> keys = [] {
    std::vector<std::string> k;
    for (const auto& [name, set] : setters()) k.push_back(name);
    return k;
  }();
  return keys;
}

RunConfig parse_config(std::string_view file_text,
                       const std::vector<std::pair<std::string, std::string>>& overrides) {
  RunConfig c;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= file_text.size()) {
    const std::size_t nl = std::min(file_text.find('\n', pos), file_text.size());
    std::string_view line = file_text.substr(pos, nl - pos);
    pos = nl + 1;
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    const std::string text = trim(line);
    if (text.empty()) continue;
    const auto eq = text.find('=');
    if (eq == std::string::npos)
      throw ConfigError(text, "line " + std::to_string(line_no) + " is not of the form key = value");
    const std::string key = trim(text.substr(0, eq)), value = trim(text.substr(eq + 1));
    if (key.empty()) throw ConfigError("", "line " + std::to_string(line_no) + " has an empty key");
    if (value.empty()) throw ConfigError(key, "empty value on line " + std::to_string(line_no));
    apply(c, key, value);
  }
  for (const auto& [key, value] : overrides) apply(c, key, value);
  validate(c);
  return c;
}

RunConfig parse_config_file(const std::string& path,
                            const std::vector<std::pair<std::string, std::string>>& overrides) {
  std::ifstream in(path);
  if (!in) throw ConfigError("file", "cannot open '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), overrides);
}

std::uint64_t derive_seed(std::uint64_t root, std::uint64_t k) {
  std::uint64_t x = root + 0x9E3779B97F4A7C15ull * (k + 1);
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

namespace {

DatasetSplit load_dataset(const RunConfig& c) {
  DatasetSplit split;
  switch (*c.dataset) {
    case Dataset::cifar10: split = load_cifar10(c.data_dir); break;
    case Dataset::cifar100: split = load_cifar100(c.data_dir); break;
    case Dataset::stl10: split = load_stl10(c.data_dir); break;
    case Dataset::synthetic:
      split.train = synthetic_quadrants(c.synthetic_train, c.image_size, derive_seed(c.seed, 3));
      split.test = synthetic_quadrants(c.synthetic_val, c.image_size, derive_seed(c.seed, 4));
      break;
  }
  if (c.train_samples) split.train = take_first(split.train, std::min(c.train_samples, split.train.size()));
  if (c.val_samples) split.test = take_first(split.test, std::min(c.val_samples, split.test.size()));
  return split;
}

std::size_t input_size(const RunConfig& c) {
  if (!c.dataset) return 32;
  if (*c.dataset == Dataset::stl10) return 96;
  if (*c.dataset == Dataset::synthetic) return c.image_size;
  return 32;
}

int cmd_train(const RunConfig& c, std::ostream& out, std::ostream& err) {
  const DatasetSplit data = load_dataset(c);
  const NetworkConfig cfg = c.network_config();
  NetworkWeights<float> net = build_network<float>(cfg, derive_seed(c.seed, 1));
  err << "network " << to_string(cfg.kind) << "/" << to_string(cfg.conv_kind) << ": " << count_params(net)
      << " parameters; " << data.train.size() << " train / " << data.test.size() << " validation samples\n";

  TrainOptions opts;
  opts.plan = c.plan;
  opts.plan.seed = derive_seed(c.seed, 2);
  opts.augment.enabled = c.augment.value_or(*c.dataset != Dataset::synthetic);
  std::unique_ptr<std::ofstream> file;
  if (!c.metrics.empty()) {
    file = std::make_unique<std::ofstream>(c.metrics);
    if (!*file) throw std::runtime_error("cannot write metrics file '" + c.metrics + "'");
    opts.metrics_csv = file.get();
  } else {
    opts.metrics_csv = &out;
  }
  if (!c.checkpoint.empty()) opts.checkpoint_path = c.checkpoint;
  opts.checkpoint_every = c.checkpoint_every;
  std::ostream& log = c.metrics.empty() ? err : out;
  opts.on_epoch = [&](const EpochRow& r) {
    char buf[160];
    std::snprintf(buf, sizeof buf, "epoch %zu lr %.4g train loss %.4f acc %.4f | val loss %.4f acc %.4f\n", r.epoch,
                  r.lr, r.train.loss, r.train.accuracy, r.val.loss, r.val.accuracy);
    err << buf << std::flush;
  };
  const auto rows = train(net, data.train, data.test, opts);
  char buf[128];
  std::snprintf(buf, sizeof buf, "final validation accuracy %.4f (loss %.4f)\n", rows.back().val.accuracy,
                rows.back().val.loss);
  log << buf;
  return 0;
}

int cmd_eval(const RunConfig& c, std::ostream& out, std::ostream&) {
  const NetworkWeights<float> net = load_checkpoint(c.checkpoint);
  if (net.config.num_classes != c.class_count())
    throw std::runtime_error("checkpoint has " + std::to_string(net.config.num_classes) +
                             " classes, dataset has " + std::to_string(c.class_count()));
  const DatasetSplit data = load_dataset(c);
  const EpochStats s = evaluate(net, data.test, c.plan.batch_size);
  char buf[128];
  std::snprintf(buf, sizeof buf, "loss %.6f accuracy %.4f samples %zu\n", s.loss, s.accuracy, data.test.size());
  out << buf;
  return 0;
}

int cmd_bench(const RunConfig& c, std::ostream& out, std::ostream& err) {
  BenchSpec spec;
  spec.batch = c.bench_batch;
  spec.repetitions = c.bench_reps;
  spec.warmup = c.bench_warmup;
  spec.seed = c.seed;
  if (!c.bench_levels.empty()) spec.levels = c.bench_levels;
  const BenchResult r = run_pyramid(spec, &err);
  if (c.output.empty()) {
    write_bench_csv(out, r);
    write_bench_table(err, r);
  } else {
    std::ofstream f(c.output);
    if (!f) throw std::runtime_error("cannot write '" + c.output + "'");
    write_bench_csv(f, r);
    write_bench_table(out, r);
  }
  return 0;
}

int cmd_verify(const RunConfig& c, std::ostream& out) {
  const auto results = run_verify_suite(c.seed, &out);
  const auto failed = std::count_if(results.begin(), results.end(), [](const CheckResult& r) { return !r.passed; });
  out << results.size() - static_cast<std::size_t>(failed) << "/" << results.size() << " checks passed\n";
  return failed ? 1 : 0;
}

int cmd_params(const RunConfig& c, std::ostream& out) {
  const std::size_t hw = input_size(c);
  for (ConvKind kind : {ConvKind::lean, ConvKind::dense}) {
    RunConfig k = c;
    k.conv_kind = kind;
    const NetworkConfig cfg = k.network_config();
    char buf[200];
    std::snprintf(buf, sizeof buf, "%s %-5s params %zu (%.3fM) flops %llu at %zux%zu, %zu classes\n",
                  to_string(cfg.kind).c_str(), to_string(kind).c_str(), count_params(cfg),
                  static_cast<double>(count_params(cfg)) / 1e6,
                  static_cast<unsigned long long>(count_flops(cfg, hw, hw)), hw, hw, cfg.num_classes);
    out << buf;
  }
  return 0;
}

}  // namespace

int run_command(const RunConfig& config, std::ostream& out, std::ostream& err) {
  err << "seed " << config.seed << '\n';
  set_num_threads(config.threads);
  try {
    switch (config.command) {
      case Command::train: return cmd_train(config, out, err);
      case Command::eval: return cmd_eval(config, out, err);
      case Command::bench: return cmd_bench(config, out, err);
      case Command::verify: return cmd_verify(config, out);
      case Command::params: return cmd_params(config, out);
    }
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
  return 2;
}

}  // namespace leanres
