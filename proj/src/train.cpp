#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "vidattack/models.hpp"
#include "vidattack/vten.hpp"

namespace vidattack {

double accuracy(const ThreatModel& model, const std::vector<LabeledVideo>& clips) {
  if (clips.empty()) return 0.0;
  std::size_t hits = 0;
  for (const auto& clip : clips) hits += model.forward(clip.video).video_label == clip.label;
  return static_cast<double>(hits) / static_cast<double>(clips.size());
}

TrainResult train(const ThreatModel& initial, const std::vector<LabeledVideo>& train_set,
                  const std::vector<LabeledVideo>& test_set, const TrainConfig& cfg) {
  if (train_set.empty()) throw ConfigError("train: empty training set");
  const std::size_t K = initial.dims().num_classes;
  for (const auto& clip : train_set) {
    if (clip.label >= K) throw ConfigError("train: label " + std::to_string(clip.label) + " >= num_classes");
  }
  const std::size_t batch = std::max<std::size_t>(1, cfg.batch_size);

  TrainResult result;
  ThreatModel model = initial.clone();
  model.set_trainable(true);
  auto params = model.parameters();
  std::vector<AdamState> states;
  for (auto& [name, t] : params) states.emplace_back(t->numel());

  std::mt19937_64 rng(cfg.seed);
  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), 0);

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < order.size(); start += batch) {
      const std::size_t end = std::min(order.size(), start + batch);
      Tensor loss = Tensor::scalar(0.0);
      for (std::size_t i = start; i < end; ++i) {
        const auto& clip = train_set[order[i]];
        Tensor onehot({K});
        onehot.mutable_data()[clip.label] = 1.0;
        Tensor p = sum(model.forward_graph(clip.video).video_probs * onehot);
        loss = loss - log(clamp(p, 1e-12, 1.0));
      }
      loss = loss / static_cast<double>(end - start);
      if (!std::isfinite(loss.item())) {
        throw TrainingDivergedError("train: loss became " + std::to_string(loss.item()) + " at epoch " +
                                    std::to_string(epoch) + ", batch starting at " + std::to_string(start) +
                                    " (" + std::string(head_kind_name(model.head_kind())) + ")");
      }
      epoch_loss += loss.item() * static_cast<double>(end - start);
      backward(loss);
      std::vector<std::vector<double>> grads;
      double sq = 0.0;
      for (auto& [name, t] : params) {
        grads.push_back(t->grad());
        for (double g : grads.back()) sq += g * g;
        t->zero_grad();
      }
      const double norm = std::sqrt(sq);
      if (cfg.clip_norm > 0.0 && norm > cfg.clip_norm) {
        for (auto& g : grads) {
          for (auto& v : g) v *= cfg.clip_norm / norm;
        }
      }
      for (std::size_t k = 0; k < params.size(); ++k) {
        adam_step(states[k], params[k].second->mutable_data(), grads[k], cfg.adam);
      }
    }
    result.epoch_loss.push_back(epoch_loss / static_cast<double>(train_set.size()));
  }

  model.set_trainable(false);
  for (auto& [name, t] : model.parameters()) round_to_float32(*t);
  result.train_accuracy = accuracy(model, train_set);
  result.test_accuracy = accuracy(model, test_set);
  result.model = std::move(model);
  return result;
}

}  // namespace vidattack
