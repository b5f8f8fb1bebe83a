#include "vidattack/models.hpp"

#include <cmath>
#include <random>

#include "vidattack/vten.hpp"

namespace vidattack {

std::string_view head_kind_name(HeadKind kind) {
  switch (kind) {
    case HeadKind::VanillaRNN: return "VanillaRNN";
    case HeadKind::LSTM: return "LSTM";
    case HeadKind::GRU: return "GRU";
    case HeadKind::AvgPool: return "AvgPool";
  }
  return "?";
}

HeadKind parse_head_kind(std::string_view name) {
  for (HeadKind k : kAllHeads) {
    if (head_kind_name(k) == name) return k;
  }
  if (name == "Pooling" || name == "avgpool") return HeadKind::AvgPool;
  if (name == "lstm") return HeadKind::LSTM;
  if (name == "gru") return HeadKind::GRU;
  if (name == "vanilla" || name == "rnn") return HeadKind::VanillaRNN;
  throw ConfigError("unknown head kind '" + std::string(name) + "'");
}

bool is_recurrent(HeadKind kind) { return kind != HeadKind::AvgPool; }

std::size_t argmax(std::span<const double> values) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < values.size(); ++i) {
    if (values[i] > values[best]) best = i;
  }
  return best;
}

namespace {

std::size_t gate_count(HeadKind kind) {
  switch (kind) {
    case HeadKind::LSTM: return 4;
    case HeadKind::GRU: return 3;
    default: return 1;
  }
}

Tensor init_uniform(Shape shape, std::size_t fan_in, std::mt19937_64& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  Tensor t(std::move(shape));
  for (auto& v : t.mutable_data()) v = static_cast<double>(static_cast<float>(dist(rng)));
  return t;
}

// Cell update given the already projected input W_x x + b, shape [1, g*h].
RecurrentState cell(const HeadParams& p, const RecurrentState& prev, const Tensor& proj) {
  const std::size_t h = p.hidden_dim;
  switch (p.kind) {
    case HeadKind::VanillaRNN:
      return {tanh(proj + matmul(prev.h, p.hidden_weight)), Tensor()};
    case HeadKind::LSTM: {
      Tensor z = proj + matmul(prev.h, p.hidden_weight);
      Tensor i = sigmoid(slice_cols(z, 0, h));
      Tensor f = sigmoid(slice_cols(z, h, 2 * h));
      Tensor g = tanh(slice_cols(z, 2 * h, 3 * h));
      Tensor o = sigmoid(slice_cols(z, 3 * h, 4 * h));
      Tensor c = f * prev.c + i * g;
      return {o * tanh(c), c};
    }
    case HeadKind::GRU: {
      Tensor zr = slice_cols(proj, 0, 2 * h) + matmul(prev.h, p.hidden_weight);
      Tensor z = sigmoid(slice_cols(zr, 0, h));
      Tensor r = sigmoid(slice_cols(zr, h, 2 * h));
      Tensor n = tanh(slice_cols(proj, 2 * h, 3 * h) + matmul(r * prev.h, p.candidate_weight));
      return {(1.0 - z) * n + z * prev.h, Tensor()};
    }
    case HeadKind::AvgPool:
      break;
  }
  throw Error("rnn_step: AvgPool has no recurrent cell");
}

void check_state(const HeadParams& p, const RecurrentState& s) {
  const Shape want{1, p.hidden_dim};
  if (s.h.shape() != want) throw ShapeError("rnn_step: hidden state " + shape_str(s.h.shape()) + ", expected " + shape_str(want));
  if (p.kind == HeadKind::LSTM && s.c.shape() != want) {
    throw ShapeError("rnn_step: cell state " + shape_str(s.c.shape()) + ", expected " + shape_str(want));
  }
}

}  // namespace

RecurrentState zero_state(const HeadParams& params) {
  RecurrentState s{Tensor({1, params.hidden_dim}), Tensor()};
  if (params.kind == HeadKind::LSTM) s.c = Tensor({1, params.hidden_dim});
  return s;
}

RecurrentState rnn_step(const HeadParams& params, const RecurrentState& prev, const Tensor& x) {
  if (x.rank() != 2 || x.dim(0) != 1 || x.dim(1) != params.input_weight.dim(0)) {
    throw ShapeError("rnn_step: encoded frame " + shape_str(x.shape()) + " does not match input weight " +
                     shape_str(params.input_weight.shape()));
  }
  check_state(params, prev);
  return cell(params, prev, add_bias(matmul(x, params.input_weight), params.bias));
}

Prediction Prediction::from(const GraphOutput& out) {
  Prediction p;
  const std::size_t T = out.frame_probs.dim(0), K = out.frame_probs.dim(1);
  const auto fp = out.frame_probs.data();
  for (std::size_t t = 0; t < T; ++t) {
    p.frame_probs.emplace_back(fp.begin() + static_cast<std::ptrdiff_t>(t * K),
                               fp.begin() + static_cast<std::ptrdiff_t>((t + 1) * K));
    p.frame_labels.push_back(argmax(p.frame_probs.back()));
  }
  p.video_probs.assign(out.video_probs.data().begin(), out.video_probs.data().end());
  p.video_label = argmax(p.video_probs);
  return p;
}

ThreatModel ThreatModel::create(HeadKind kind, const ModelDims& dims, std::uint64_t seed) {
  if (dims.frame_size() == 0 || dims.encoder_dim == 0 || dims.num_classes == 0 ||
      (is_recurrent(kind) && dims.hidden_dim == 0)) {
    throw ShapeError("model dims must all be positive");
  }
  std::mt19937_64 rng(seed);
  ThreatModel m;
  m.kind_ = kind;
  m.dims_ = dims;
  const std::size_t F = dims.frame_size(), d = dims.encoder_dim, K = dims.num_classes;
  m.encoder_weight_ = init_uniform({F, d}, F, rng);
  m.encoder_bias_ = init_uniform({d}, F, rng);
  std::size_t feat = d;
  m.head_.kind = kind;
  if (is_recurrent(kind)) {
    const std::size_t h = dims.hidden_dim, g = gate_count(kind);
    m.head_.hidden_dim = h;
    m.head_.input_weight = init_uniform({d, g * h}, d, rng);
    m.head_.hidden_weight = init_uniform({h, (kind == HeadKind::GRU ? 2 : g) * h}, h, rng);
    m.head_.bias = init_uniform({g * h}, h, rng);
    if (kind == HeadKind::GRU) m.head_.candidate_weight = init_uniform({h, h}, h, rng);
    feat = h;
  } else {
    m.dims_.hidden_dim = d;
    m.head_.hidden_dim = d;
  }
  m.classifier_weight_ = init_uniform({feat, K}, feat, rng);
  m.classifier_bias_ = init_uniform({K}, feat, rng);
  return m;
}

GraphOutput ThreatModel::forward_graph(const Tensor& video) const {
  const Shape want{video.rank() == 4 ? video.dim(0) : 0, dims_.width, dims_.height, dims_.channels};
  if (video.rank() != 4 || video.shape() != want || video.dim(0) == 0) {
    throw ShapeError("model expects a T x " + std::to_string(dims_.width) + " x " + std::to_string(dims_.height) +
                     " x " + std::to_string(dims_.channels) + " video with T >= 1, got " + shape_str(video.shape()));
  }
  const std::size_t T = video.dim(0);
  Tensor frames = reshape(video, {T, dims_.frame_size()});
  Tensor encoded = tanh(add_bias(matmul(frames, encoder_weight_), encoder_bias_));

  Tensor features;
  if (kind_ == HeadKind::AvgPool) {
    features = encoded;
  } else {
    Tensor proj = add_bias(matmul(encoded, head_.input_weight), head_.bias);
    RecurrentState state = zero_state(head_);
    std::vector<Tensor> hidden;
    hidden.reserve(T);
    for (std::size_t t = 0; t < T; ++t) {
      state = cell(head_, state, slice_rows(proj, t, t + 1));
      hidden.push_back(state.h);
    }
    features = concat_rows(hidden);
  }
  Tensor logits = add_bias(matmul(features, classifier_weight_), classifier_bias_);
  Tensor frame_probs = softmax_rows(logits);
  return {frame_probs, mean_rows(frame_probs)};
}

Prediction ThreatModel::forward(const Tensor& video) const { return Prediction::from(forward_graph(video)); }

std::vector<std::pair<std::string, Tensor*>> ThreatModel::parameters() {
  std::vector<std::pair<std::string, Tensor*>> out{{"encoder.weight", &encoder_weight_},
                                                   {"encoder.bias", &encoder_bias_}};
  if (is_recurrent(kind_)) {
    out.emplace_back("head.input_weight", &head_.input_weight);
    out.emplace_back("head.hidden_weight", &head_.hidden_weight);
    out.emplace_back("head.bias", &head_.bias);
    if (kind_ == HeadKind::GRU) out.emplace_back("head.candidate_weight", &head_.candidate_weight);
  }
  out.emplace_back("classifier.weight", &classifier_weight_);
  out.emplace_back("classifier.bias", &classifier_bias_);
  return out;
}

std::vector<std::pair<std::string, const Tensor*>> ThreatModel::parameters() const {
  auto mut = const_cast<ThreatModel*>(this)->parameters();
  return {mut.begin(), mut.end()};
}

void ThreatModel::set_trainable(bool on) {
  for (auto& [name, t] : parameters()) t->set_requires_grad(on);
}

ThreatModel ThreatModel::clone() const {
  ThreatModel m = *this;
  for (auto& [name, t] : m.parameters()) *t = t->detach(t->requires_grad());
  return m;
}

}  // namespace vidattack
