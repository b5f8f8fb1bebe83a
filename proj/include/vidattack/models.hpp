#pragma once

// Threat models: per-frame affine+tanh encoder, a temporal head, and a
// per-timestep classifier. The video-level prediction is the mean of the
// per-frame softmax vectors.

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "vidattack/data.hpp"
#include "vidattack/optim.hpp"
#include "vidattack/tensor.hpp"

namespace vidattack {

enum class HeadKind { VanillaRNN, LSTM, GRU, AvgPool };

inline constexpr std::array<HeadKind, 4> kAllHeads = {HeadKind::VanillaRNN, HeadKind::LSTM, HeadKind::GRU,
                                                      HeadKind::AvgPool};

std::string_view head_kind_name(HeadKind kind);
HeadKind parse_head_kind(std::string_view name);
bool is_recurrent(HeadKind kind);

struct ModelDims {
  std::size_t width = 16;
  std::size_t height = 16;
  std::size_t channels = 1;
  std::size_t encoder_dim = 64;
  std::size_t hidden_dim = 64;
  std::size_t num_classes = 8;

  std::size_t frame_size() const { return width * height * channels; }
  bool operator==(const ModelDims&) const = default;
};

// Recurrent cell weights. Gate blocks are laid out side by side:
//   VanillaRNN  input [d, h]   hidden [h, h]
//   LSTM        input [d, 4h]  hidden [h, 4h]  (i, f, g, o)
//   GRU         input [d, 3h]  hidden [h, 2h]  (z, r), candidate [h, h]
struct HeadParams {
  HeadKind kind = HeadKind::VanillaRNN;
  std::size_t hidden_dim = 0;
  Tensor input_weight;
  Tensor hidden_weight;
  Tensor bias;
  Tensor candidate_weight;  // GRU only
};

// h and c are [1, hidden]; c is only meaningful for LSTM.
struct RecurrentState {
  Tensor h;
  Tensor c;
};

RecurrentState zero_state(const HeadParams& params);

// One cell update from an encoded frame x of shape [1, d].
RecurrentState rnn_step(const HeadParams& params, const RecurrentState& prev, const Tensor& x);

// Differentiable outputs of one forward pass.
struct GraphOutput {
  Tensor frame_probs;  // [T, K]
  Tensor video_probs;  // [K]
};

struct Prediction {
  std::vector<std::vector<double>> frame_probs;
  std::vector<double> video_probs;
  std::vector<std::size_t> frame_labels;
  std::size_t video_label = 0;

  static Prediction from(const GraphOutput& out);
  bool operator==(const Prediction&) const = default;
};

// Index of the largest entry; ties go to the lowest index.
std::size_t argmax(std::span<const double> values);

class ThreatModel {
 public:
  ThreatModel() = default;

  // Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) init, rounded to float32.
  static ThreatModel create(HeadKind kind, const ModelDims& dims, std::uint64_t seed);

  HeadKind head_kind() const { return kind_; }
  const ModelDims& dims() const { return dims_; }

  GraphOutput forward_graph(const Tensor& video) const;
  Prediction forward(const Tensor& video) const;

  // Fixed order; this is also the on-disk order.
  std::vector<std::pair<std::string, Tensor*>> parameters();
  std::vector<std::pair<std::string, const Tensor*>> parameters() const;

  void set_trainable(bool on);
  ThreatModel clone() const;
  const HeadParams& head() const { return head_; }
  HeadParams& head() { return head_; }

 private:
  HeadKind kind_ = HeadKind::LSTM;
  ModelDims dims_;
  Tensor encoder_weight_;  // [F, d]
  Tensor encoder_bias_;    // [d]
  HeadParams head_;
  Tensor classifier_weight_;  // [h, K]; h = d for AvgPool
  Tensor classifier_bias_;    // [K]
};

// ---- training ---------------------------------------------------------------

struct TrainConfig {
  std::size_t epochs = 30;
  std::size_t batch_size = 8;
  AdamConfig adam{.lr = 3e-3};
  double clip_norm = 1.0;  // global gradient-norm clip; <= 0 disables
  std::uint64_t seed = 7;
};

struct TrainResult {
  ThreatModel model;
  double train_accuracy = 0.0;
  double test_accuracy = 0.0;
  std::vector<double> epoch_loss;
};

// Minimizes mean -log v_y over the training clips with minibatch Adam.
// Weights are rounded to float32 at the end so save/load is exact.
TrainResult train(const ThreatModel& initial, const std::vector<LabeledVideo>& train_set,
                  const std::vector<LabeledVideo>& test_set, const TrainConfig& cfg);

double accuracy(const ThreatModel& model, const std::vector<LabeledVideo>& clips);

// ---- container I/O ----------------------------------------------------------

void save_model(const std::filesystem::path& path, const ThreatModel& model);
ThreatModel load_model(const std::filesystem::path& path);

}  // namespace vidattack
