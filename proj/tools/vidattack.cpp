// Command-line front end: one subcommand per experiment, all writing into
// --out-dir. Settings come from built-in defaults, then --config, then --set.

#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "vidattack/error.hpp"
#include "vidattack/harness.hpp"

namespace {

struct Common {
  std::uint64_t seed = 1;
  std::string out_dir = "out";
  std::string config_file;
  std::vector<std::string> sets;
  // Shortcut flags, each stored under its config key.
  std::map<std::string, std::string> shortcuts;
};

void add_shortcut(CLI::App* app, Common& c, const std::string& flag, const std::string& key, const std::string& help) {
  app->add_option_function<std::string>(flag, [&c, key](const std::string& v) { c.shortcuts[key] = v; }, help);
}

vidattack::KeyValueConfig overrides(const Common& c) {
  vidattack::KeyValueConfig kv;
  for (const auto& [k, v] : c.shortcuts) kv.set(k, v);
  for (const auto& s : c.sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos || eq == 0) throw vidattack::ConfigError("--set expects key=value, got '" + s + "'");
    kv.set(s.substr(0, eq), s.substr(eq + 1));
  }
  return kv;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Sparse adversarial perturbations for video classifiers"};
  app.require_subcommand(1);
  Common common;
  app.add_option("--seed", common.seed, "Seed for data, model init and training")->capture_default_str();
  app.add_option("--out-dir", common.out_dir, "Directory receiving every output file")->capture_default_str();
  app.add_option("--config", common.config_file, "Flat key = value config file")->check(CLI::ExistingFile);
  app.add_option("--set", common.sets, "Override one config key (key=value); repeatable");
  app.fallthrough();

  const std::vector<std::pair<std::string, std::string>> commands{
      {"gen-data", "Generate the synthetic moving-stripe dataset"},
      {"train", "Train all four heads and save model containers"},
      {"attack", "Attack one clip (single, masked, targeted) or a clip set (universal)"},
      {"sparsity-sweep", "Fooling rate and MAP over prefix masks"},
      {"propagation-report", "Per-frame MAP and label flips for l2,1 and l2 attacks"},
      {"splice-attack", "Optimize on the first N frames, paste into the full clip"},
      {"transfer-matrix", "Fooling rates of perturbations moved between heads"},
      {"universal", "One perturbation fitted on training clips, scored on test clips"},
      {"timing", "Seconds per optimization step on shortened clips"},
  };
  for (const auto& [name, help] : commands) {
    CLI::App* sub = app.add_subcommand(name, help);
    if (name == "gen-data") continue;
    add_shortcut(sub, common, "--dataset", "dataset", "Dataset directory from gen-data (default: generate in memory)");
    if (name == "train") continue;
    add_shortcut(sub, common, "--models-dir", "models_dir", "Directory with <Head>.vmdl files from train");
    add_shortcut(sub, common, "--model", "model", "A single model container");
    add_shortcut(sub, common, "--head", "head", "VanillaRNN, LSTM, GRU or AvgPool");
    add_shortcut(sub, common, "--video-id", "video_id", "Clip id to attack");
    add_shortcut(sub, common, "--lambda", "lambda", "Regularization weight");
    add_shortcut(sub, common, "--norm", "norm", "L2 or L21");
    add_shortcut(sub, common, "--iters", "iters", "Adam iterations");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    const std::string command = app.get_subcommands().front()->get_name();
    const vidattack::KeyValueConfig file =
        common.config_file.empty() ? vidattack::KeyValueConfig{} : vidattack::KeyValueConfig::load(common.config_file);
    const auto cfg = vidattack::ExperimentConfig::build(command, common.seed, common.out_dir, file, overrides(common));
    for (const auto& p : vidattack::run_command(cfg)) std::cout << p.string() << '\n';
  } catch (const vidattack::Error& e) {
    std::cerr << "vidattack: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "vidattack: unexpected error: " << e.what() << '\n';
    return 3;
  }
  return 0;
}
