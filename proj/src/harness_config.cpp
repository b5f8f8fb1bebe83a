#include <algorithm>
#include <charconv>
#include <map>
#include <sstream>

#include "vidattack/error.hpp"
#include "vidattack/harness.hpp"

namespace vidattack {

namespace {

// Settings each experiment starts from before file and --set values apply.
// The attack defaults follow AttackConfig; experiment rows only override
// what that study needs.
const std::map<std::string, std::string>& base_defaults() {
  static const std::map<std::string, std::string> d{
      {"T", "40"},
      {"W", "16"},
      {"H", "16"},
      {"C", "1"},
      {"num_classes", "8"},
      {"samples_per_class", "48"},
      {"noise_std", "0.02"},
      {"encoder_dim", "64"},
      {"hidden_dim", "64"},
      {"epochs", "30"},
      {"batch_size", "8"},
      {"train_lr", "0.003"},
      {"clip_norm", "1"},
      {"mode", "single"},
      {"norm", "L21"},
      {"lambda", "1"},
      {"lr", "0.01"},
      {"beta1", "0.9"},
      {"beta2", "0.999"},
      {"eps", "1e-08"},
      {"iters", "500"},
      {"init_scale", "0.0001"},
      {"clip_pixels", "true"},
      {"prob_clamp_eps", "1e-06"},
      {"zero_threshold", "0.0001"},
      {"head", "LSTM"},
      {"max_videos", "0"},
      {"mask_polluted", "0"},
      {"polluted", "40,8,4,1"},
      {"splice_frames", "1,5,10,20,40"},
      {"prop_polluted", "8"},
      {"transfer_polluted", "20"},
      {"universal_train_size", "20"},
      {"timing_iters", "50"},
      {"timing_warmup", "5"},
  };
  return d;
}

const std::map<std::string, std::map<std::string, std::string>>& command_defaults() {
  static const std::map<std::string, std::map<std::string, std::string>> d{
      {"sparsity-sweep", {{"mode", "masked"}, {"lambda", "0.0001"}, {"lr", "0.05"}}},
      {"propagation-report", {{"lambda", "0.0001"}, {"lr", "0.05"}}},
      {"splice-attack", {{"mode", "universal"}, {"norm", "L2"}, {"lambda", "0.0001"}, {"lr", "0.05"}}},
      {"transfer-matrix", {{"lambda", "0.0001"}, {"lr", "0.05"}}},
      {"universal", {{"mode", "universal"}, {"lambda", "0.0001"}, {"lr", "0.05"}}},
      {"timing", {{"mode", "universal"}, {"norm", "L2"}}},
  };
  return d;
}

// Keys that name inputs or tuning knobs which cannot change any output.
const std::vector<std::string>& unhashed_keys() {
  static const std::vector<std::string> k{"workers"};
  return k;
}

std::vector<std::size_t> parse_size_list(const std::string& key, const std::string& text) {
  std::vector<std::size_t> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item.erase(std::remove_if(item.begin(), item.end(), [](char c) { return c == ' ' || c == '\t'; }), item.end());
    if (item.empty()) continue;
    std::size_t v = 0;
    auto [ptr, ec] = std::from_chars(item.data(), item.data() + item.size(), v);
    if (ec != std::errc() || ptr != item.data() + item.size()) {
      throw ConfigError("config key '" + key + "': '" + item + "' is not a non-negative integer");
    }
    out.push_back(v);
  }
  if (out.empty()) throw ConfigError("config key '" + key + "' needs at least one value");
  return out;
}

}  // namespace

const std::vector<std::string>& known_config_keys() {
  static const std::vector<std::string> keys = [] {
    std::vector<std::string> k;
    for (const auto& [key, value] : base_defaults()) k.push_back(key);
    for (const char* extra : {"seed", "dataset", "models_dir", "model", "video_id", "target_label", "model_seed",
                              "train_seed", "workers"}) {
      k.emplace_back(extra);
    }
    std::sort(k.begin(), k.end());
    return k;
  }();
  return keys;
}

ExperimentConfig ExperimentConfig::build(const std::string& command, std::uint64_t seed, const fs::path& out_dir,
                                         const KeyValueConfig& file, const KeyValueConfig& overrides) {
  const auto& known = known_config_keys();
  for (const KeyValueConfig* src : {&file, &overrides}) {
    for (const auto& [key, value] : src->values()) {
      if (!std::binary_search(known.begin(), known.end(), key)) {
        throw ConfigError("unknown config key '" + key + "'");
      }
    }
  }

  KeyValueConfig kv;
  for (const auto& [key, value] : base_defaults()) kv.set(key, value);
  if (auto it = command_defaults().find(command); it != command_defaults().end()) {
    for (const auto& [key, value] : it->second) kv.set(key, value);
  }
  kv.set("seed", std::to_string(seed));
  for (const KeyValueConfig* src : {&file, &overrides}) {
    for (const auto& [key, value] : src->values()) kv.set(key, value);
  }

  ExperimentConfig cfg;
  cfg.command = command;
  cfg.out_dir = out_dir;
  cfg.seed = static_cast<std::uint64_t>(kv.get_int("seed", 1));

  cfg.data.frames = kv.get_size("T", 40);
  cfg.data.width = kv.get_size("W", 16);
  cfg.data.height = kv.get_size("H", 16);
  cfg.data.channels = kv.get_size("C", 1);
  cfg.data.num_classes = kv.get_size("num_classes", 8);
  cfg.data.samples_per_class = kv.get_size("samples_per_class", 48);
  cfg.data.noise_std = kv.get_double("noise_std", 0.02);
  cfg.data.seed = cfg.seed;

  if (auto v = kv.get("dataset")) cfg.dataset_dir = *v;
  if (auto v = kv.get("models_dir")) cfg.models_dir = *v;
  if (auto v = kv.get("model")) cfg.model_path = *v;
  cfg.head = parse_head_kind(kv.get_string("head", "LSTM"));
  cfg.encoder_dim = kv.get_size("encoder_dim", 64);
  cfg.hidden_dim = kv.get_size("hidden_dim", 64);

  cfg.train.epochs = kv.get_size("epochs", 30);
  cfg.train.batch_size = kv.get_size("batch_size", 8);
  cfg.train.adam.lr = kv.get_double("train_lr", 3e-3);
  cfg.train.clip_norm = kv.get_double("clip_norm", 1.0);
  cfg.train.seed = static_cast<std::uint64_t>(kv.get_int("train_seed", static_cast<std::int64_t>(cfg.seed + 6)));
  cfg.model_seed = static_cast<std::uint64_t>(kv.get_int("model_seed", static_cast<std::int64_t>(cfg.seed + 10)));

  AttackConfig& a = cfg.attack;
  a.mode = parse_attack_mode(kv.get_string("mode", "single"));
  a.norm = parse_norm(kv.get_string("norm", "L21"));
  a.lambda = kv.get_double("lambda", 1.0);
  a.adam.lr = kv.get_double("lr", 1e-2);
  a.adam.beta1 = kv.get_double("beta1", 0.9);
  a.adam.beta2 = kv.get_double("beta2", 0.999);
  a.adam.eps = kv.get_double("eps", 1e-8);
  a.iters = kv.get_size("iters", 500);
  a.init_scale = kv.get_double("init_scale", 1e-4);
  a.clip_pixels = kv.get_bool("clip_pixels", true);
  a.prob_clamp_eps = kv.get_double("prob_clamp_eps", 1e-6);
  a.zero_threshold = kv.get_double("zero_threshold", kZeroThreshold);
  if (auto v = kv.get("target_label")) a.target_label = kv.get_size("target_label", 0);

  cfg.max_videos = kv.get_size("max_videos", 0);
  if (auto v = kv.get("video_id")) cfg.video_id = *v;
  cfg.mask_polluted = kv.get_size("mask_polluted", 0);
  cfg.polluted = parse_size_list("polluted", kv.get_string("polluted", ""));
  cfg.splice_frames = parse_size_list("splice_frames", kv.get_string("splice_frames", ""));
  cfg.prop_polluted = kv.get_size("prop_polluted", 8);
  cfg.transfer_polluted = kv.get_size("transfer_polluted", 20);
  cfg.universal_train_size = kv.get_size("universal_train_size", 20);
  cfg.timing_iters = kv.get_size("timing_iters", 50);
  cfg.timing_warmup = kv.get_size("timing_warmup", 5);
  cfg.workers = kv.get_size("workers", 1);

  cfg.data.validate();
  if (a.lambda < 0) throw ConfigError("lambda must be >= 0");
  if (a.adam.lr <= 0) throw ConfigError("lr must be > 0");
  if (cfg.workers == 0) throw ConfigError("workers must be >= 1");

  kv.set("command", command);
  for (const auto& k : unhashed_keys()) {
    if (kv.has(k)) {
      KeyValueConfig trimmed;
      for (const auto& [key, value] : kv.values()) {
        if (key != k) trimmed.set(key, value);
      }
      kv = trimmed;
    }
  }
  cfg.resolved = kv;
  return cfg;
}

}  // namespace vidattack
