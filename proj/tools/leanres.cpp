#include <iostream>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "CLI11.hpp"
#include "leanres/config.hpp"

namespace {

const char* describe(const std::string& key) {
  static const std::map<std::string, const char*> help{
      {"dataset", "cifar10 | cifar100 | stl10 | synthetic"},
      {"data_dir", "directory holding the dataset binaries"},
      {"config", "network configuration: A-F or custom"},
      {"conv", "lean | dense"},
      {"widths", "custom widths, e.g. 16,32"},
      {"steps", "custom steps per block, e.g. 2,2"},
      {"early_dense_blocks", "leading blocks that keep dense 3x3 convolutions"},
      {"epochs", "training epochs (300)"},
      {"batch", "minibatch size (100)"},
      {"lr0", "initial learning rate (0.1)"},
      {"decay", "learning-rate factor per decay step (0.5)"},
      {"decay_every", "epochs between decays (75)"},
      {"seed", "root seed (1)"},
      {"threads", "kernel threads (1)"},
      {"augment", "true | false"},
      {"checkpoint", "checkpoint path (written by train, read by eval)"},
      {"checkpoint_every", "also checkpoint every N epochs"},
      {"metrics", "metrics CSV path (stdout when unset)"},
      {"output", "benchmark CSV path (stdout when unset)"},
      {"train_samples", "use only the first N training samples"},
      {"val_samples", "use only the first N validation samples"},
      {"synthetic_train", "synthetic training samples (2000)"},
      {"synthetic_val", "synthetic validation samples (500)"},
      {"image_size", "synthetic image side (16)"},
      {"bench_batch", "benchmark batch (64)"},
      {"bench_reps", "timed repetitions per variant (10)"},
      {"bench_warmup", "untimed warmup runs (3)"},
      {"bench_levels", "pyramid levels, e.g. 16@512,32@256"},
  };
  const auto it = help.find(key);
  return it == help.end() ? "" : it->second;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Lean residual networks: train, evaluate, verify and benchmark"};
  app.require_subcommand(1);

  const std::vector<std::string> commands{"train", "eval", "bench", "verify", "params"};
  std::string file;
  std::map<std::string, std::string> values;
  std::vector<std::pair<CLI::App*, std::vector<std::pair<std::string, CLI::Option*>>>> subs;
  for (const std::string& name : commands) {
    CLI::App* sub = app.add_subcommand(name);
    sub->add_option("-f,--file", file, "configuration file of key = value lines")->check(CLI::ExistingFile);
    std::vector<std::pair<std::string, CLI::Option*>> opts;
    for (const std::string& key : leanres::config_keys()) {
      if (key == "command") continue;
      std::string flag = "--" + key;
      if (key.find('_') != std::string::npos) {
        std::string dashed = key;
        for (char& ch : dashed)
          if (ch == '_') ch = '-';
        flag += ",--" + dashed;
      }
      opts.emplace_back(key, sub->add_option(flag, values[key], describe(key)));
    }
    subs.emplace_back(sub, std::move(opts));
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  std::vector<std::pair<std::string, std::string>> overrides;
  for (const auto& [sub, opts] : subs) {
    if (!sub->parsed()) continue;
    overrides.emplace_back("command", sub->get_name());
    for (const auto& [key, opt] : opts)
      if (opt->count() > 0) overrides.emplace_back(key, values[key]);
  }

  leanres::RunConfig config;
  try {
    config = file.empty() ? leanres::parse_config("", overrides) : leanres::parse_config_file(file, overrides);
  } catch (const leanres::ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return leanres::run_command(config, std::cout, std::cerr);
}
