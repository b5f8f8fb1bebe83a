#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iterator>

#include "doctest.h"
#include "test_util.hpp"
#include "vidattack/data.hpp"
#include "vidattack/models.hpp"

using namespace vidattack;
namespace fs = std::filesystem;

namespace {

ModelDims tiny_dims() {
  ModelDims d;
  d.width = 4;
  d.height = 4;
  d.channels = 1;
  d.encoder_dim = 5;
  d.hidden_dim = 3;
  d.num_classes = 4;
  return d;
}

HeadParams zero_head(HeadKind kind, std::size_t d, std::size_t h) {
  const std::size_t g = kind == HeadKind::LSTM ? 4 : kind == HeadKind::GRU ? 3 : 1;
  HeadParams p;
  p.kind = kind;
  p.hidden_dim = h;
  p.input_weight = Tensor({d, g * h});
  p.hidden_weight = Tensor({h, (kind == HeadKind::GRU ? 2 : g) * h});
  p.bias = Tensor({g * h});
  if (kind == HeadKind::GRU) p.candidate_weight = Tensor({h, h});
  return p;
}

std::vector<double> values(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

fs::path scratch(const std::string& name) {
  fs::path p = fs::temp_directory_path() / ("vidattack_models_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::vector<char> read_all(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

void write_all(const fs::path& p, const std::vector<char>& b) {
  std::ofstream out(p, std::ios::binary);
  out.write(b.data(), static_cast<std::streamsize>(b.size()));
}

}  // namespace

TEST_CASE("head names parse back, with aliases") {
  for (HeadKind k : kAllHeads) CHECK(parse_head_kind(head_kind_name(k)) == k);
  CHECK(parse_head_kind("Pooling") == HeadKind::AvgPool);
  CHECK(parse_head_kind("lstm") == HeadKind::LSTM);
  CHECK_THROWS_AS(parse_head_kind("Transformer"), ConfigError);
  CHECK_FALSE(is_recurrent(HeadKind::AvgPool));
}

TEST_CASE("argmax breaks ties toward the lowest index") {
  CHECK(argmax(std::vector<double>{0.2, 0.4, 0.4}) == 1);
  CHECK(argmax(std::vector<double>{0.5, 0.5}) == 0);
}

TEST_CASE("rnn_step with all-zero weights") {
  const Tensor x({1, 2}, {0.7, -0.3});
  SUBCASE("vanilla keeps a zero state") {
    const HeadParams p = zero_head(HeadKind::VanillaRNN, 2, 3);
    RecurrentState s = rnn_step(p, zero_state(p), x);
    CHECK(values(s.h) == std::vector<double>(3, 0.0));
  }
  SUBCASE("LSTM gates sit at one half and the candidate at zero") {
    const HeadParams p = zero_head(HeadKind::LSTM, 2, 3);
    RecurrentState prev{Tensor({1, 3}, {0.2, 0.4, -0.6}), Tensor({1, 3}, {1.0, -2.0, 0.5})};
    RecurrentState s = rnn_step(p, prev, x);
    for (std::size_t j = 0; j < 3; ++j) {
      const double c = 0.5 * prev.c.data()[j];
      CHECK(s.c.data()[j] == doctest::Approx(c));
      CHECK(s.h.data()[j] == doctest::Approx(0.5 * std::tanh(c)));
    }
  }
  SUBCASE("GRU halves the previous state") {
    const HeadParams p = zero_head(HeadKind::GRU, 2, 3);
    RecurrentState prev{Tensor({1, 3}, {0.2, 0.4, -0.6}), Tensor()};
    RecurrentState s = rnn_step(p, prev, x);
    for (std::size_t j = 0; j < 3; ++j) CHECK(s.h.data()[j] == doctest::Approx(0.5 * prev.h.data()[j]));
  }
}

TEST_CASE("vanilla rnn_step against a hand computation") {
  HeadParams p = zero_head(HeadKind::VanillaRNN, 2, 2);
  p.input_weight = Tensor({2, 2}, {1.0, 0.5, -1.0, 2.0});
  p.hidden_weight = Tensor({2, 2}, {0.1, 0.0, 0.0, 0.1});
  p.bias = Tensor({2}, {0.05, -0.05});
  RecurrentState prev{Tensor({1, 2}, {1.0, -1.0}), Tensor()};
  const Tensor x({1, 2}, {0.3, 0.2});
  RecurrentState s = rnn_step(p, prev, x);
  CHECK(s.h.data()[0] == doctest::Approx(std::tanh(0.3 - 0.2 + 0.05 + 0.1)));
  CHECK(s.h.data()[1] == doctest::Approx(std::tanh(0.15 + 0.4 - 0.05 - 0.1)));
}

TEST_CASE("rnn_step shape errors") {
  const HeadParams p = zero_head(HeadKind::LSTM, 2, 3);
  CHECK_THROWS_AS(rnn_step(p, zero_state(p), Tensor({1, 3})), ShapeError);
  RecurrentState bad{Tensor({1, 2}), Tensor({1, 3})};
  CHECK_THROWS_AS(rnn_step(p, bad, Tensor({1, 2})), ShapeError);
  const HeadParams pool = zero_head(HeadKind::AvgPool, 2, 2);
  CHECK_THROWS(rnn_step(pool, zero_state(pool), Tensor({1, 2})));
}

TEST_CASE("forward outputs are distributions and the video score is their mean") {
  for (HeadKind k : kAllHeads) {
    const ThreatModel m = ThreatModel::create(k, tiny_dims(), 5);
    const Tensor v = testutil::random_tensor({6, 4, 4, 1}, 9, 0, 1, false);
    const Prediction p = m.forward(v);
    REQUIRE(p.frame_probs.size() == 6);
    std::vector<double> mean(4, 0.0);
    for (const auto& row : p.frame_probs) {
      double s = 0;
      for (std::size_t c = 0; c < 4; ++c) {
        s += row[c];
        mean[c] += row[c] / 6.0;
      }
      CHECK(s == doctest::Approx(1.0));
    }
    for (std::size_t c = 0; c < 4; ++c) CHECK(p.video_probs[c] == doctest::Approx(mean[c]).epsilon(1e-12));
    CHECK(p.video_label == argmax(p.video_probs));
    CHECK_THROWS_AS(m.forward(Tensor({6, 5, 4, 1})), ShapeError);
    CHECK_THROWS_AS(m.forward(Tensor({0, 4, 4, 1})), ShapeError);
  }
}

TEST_CASE("pooling ignores frame order, recurrent heads do not") {
  const Tensor v = testutil::random_tensor({5, 4, 4, 1}, 21, 0, 1, false);
  const std::size_t per = 16;
  std::vector<double> rev(v.numel());
  for (std::size_t t = 0; t < 5; ++t) {
    std::copy_n(v.data().begin() + static_cast<std::ptrdiff_t>(t * per), per,
                rev.begin() + static_cast<std::ptrdiff_t>((4 - t) * per));
  }
  const Tensor reversed(v.shape(), rev);
  for (HeadKind k : kAllHeads) {
    const ThreatModel m = ThreatModel::create(k, tiny_dims(), 4);
    const auto a = m.forward(v).video_probs, b = m.forward(reversed).video_probs;
    double diff = 0;
    for (std::size_t c = 0; c < a.size(); ++c) diff = std::max(diff, std::abs(a[c] - b[c]));
    if (k == HeadKind::AvgPool) {
      CHECK(diff < 1e-12);
    } else {
      CHECK(diff > 1e-6);
    }
  }
}

TEST_CASE("per-frame outputs of a recurrent head depend only on the past") {
  const ThreatModel m = ThreatModel::create(HeadKind::GRU, tiny_dims(), 2);
  const Tensor v = testutil::random_tensor({5, 4, 4, 1}, 3, 0, 1, false);
  std::vector<double> changed(v.data().begin(), v.data().end());
  for (std::size_t i = 3 * 16; i < 4 * 16; ++i) changed[i] = 1.0 - changed[i];
  const Prediction a = m.forward(v), b = m.forward(Tensor(v.shape(), changed));
  for (std::size_t t = 0; t < 3; ++t) CHECK(a.frame_probs[t] == b.frame_probs[t]);
  CHECK(a.frame_probs[3] != b.frame_probs[3]);
}

TEST_CASE("parameter gradients match finite differences") {
  const Tensor v = testutil::random_tensor({3, 4, 4, 1}, 8, 0, 1, false);
  for (HeadKind k : kAllHeads) {
    ThreatModel m = ThreatModel::create(k, tiny_dims(), 6);
    for (auto& [name, param] : m.parameters()) {
      Tensor* slot = param;
      const Tensor saved = *slot;
      auto loss = [&](const Tensor& w) {
        *slot = w;
        Tensor p = m.forward_graph(v).video_probs;
        return -log(sum(p * Tensor({4}, {0.0, 1.0, 0.0, 0.0})));
      };
      const double err = testutil::grad_check(loss, saved, 1e-6);
      *slot = saved;
      INFO(head_kind_name(k) << " " << name);
      CHECK(err < 1e-5);
    }
  }
}

TEST_CASE("parameter order is fixed") {
  ThreatModel gru = ThreatModel::create(HeadKind::GRU, tiny_dims(), 1);
  std::vector<std::string> names;
  for (auto& [n, t] : gru.parameters()) names.push_back(n);
  CHECK(names == std::vector<std::string>{"encoder.weight", "encoder.bias", "head.input_weight", "head.hidden_weight",
                                          "head.bias", "head.candidate_weight", "classifier.weight", "classifier.bias"});
  ThreatModel pool = ThreatModel::create(HeadKind::AvgPool, tiny_dims(), 1);
  CHECK(pool.parameters().size() == 4);
  CHECK(pool.dims().hidden_dim == tiny_dims().encoder_dim);
}

TEST_CASE("init is deterministic per seed and float32-valued") {
  const ThreatModel a = ThreatModel::create(HeadKind::LSTM, tiny_dims(), 3);
  const ThreatModel b = ThreatModel::create(HeadKind::LSTM, tiny_dims(), 3);
  const ThreatModel c = ThreatModel::create(HeadKind::LSTM, tiny_dims(), 4);
  const auto pa = a.parameters(), pb = b.parameters(), pc = c.parameters();
  for (std::size_t i = 0; i < pa.size(); ++i) {
    CHECK(values(*pa[i].second) == values(*pb[i].second));
    for (double w : pa[i].second->data()) CHECK(static_cast<double>(static_cast<float>(w)) == w);
  }
  CHECK(values(*pa[0].second) != values(*pc[0].second));
}

TEST_CASE("model container round trip is exact") {
  const fs::path dir = scratch("roundtrip");
  const Tensor v = testutil::random_tensor({4, 4, 4, 1}, 12, 0, 1, false);
  for (HeadKind k : kAllHeads) {
    const ThreatModel m = ThreatModel::create(k, tiny_dims(), 7);
    const fs::path p = dir / (std::string(head_kind_name(k)) + ".vmdl");
    save_model(p, m);
    const ThreatModel back = load_model(p);
    CHECK(back.head_kind() == k);
    CHECK(back.dims() == m.dims());
    CHECK(back.forward(v) == m.forward(v));
    save_model(dir / "again.vmdl", back);
    CHECK(read_all(p) == read_all(dir / "again.vmdl"));
  }
}

TEST_CASE("model container errors") {
  const fs::path dir = scratch("errors");
  const fs::path p = dir / "m.vmdl";
  save_model(p, ThreatModel::create(HeadKind::GRU, tiny_dims(), 1));
  const auto good = read_all(p);

  auto truncated = good;
  truncated.resize(good.size() / 2);
  write_all(dir / "t.vmdl", truncated);
  CHECK_THROWS_AS(load_model(dir / "t.vmdl"), FormatError);

  auto version = good;
  version[4] = 9;
  write_all(dir / "v.vmdl", version);
  CHECK_THROWS_AS(load_model(dir / "v.vmdl"), UnsupportedVersionError);

  auto magic = good;
  magic[1] = 'X';
  write_all(dir / "g.vmdl", magic);
  CHECK_THROWS_AS(load_model(dir / "g.vmdl"), FormatError);

  CHECK_THROWS_AS(load_model(dir / "missing.vmdl"), FormatError);
}

namespace {

// Two-class set where the class is the brightness of every frame.
std::vector<LabeledVideo> brightness_set(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> jitter(-0.05, 0.05);
  std::vector<LabeledVideo> out;
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t label = i % 2;
    std::vector<double> px(3 * 16);
    for (auto& x : px) x = (label ? 0.7 : 0.3) + jitter(rng);
    out.push_back({Tensor({3, 4, 4, 1}, px), label, "b" + std::to_string(i)});
  }
  return out;
}

ModelDims binary_dims() {
  ModelDims d = tiny_dims();
  d.num_classes = 2;
  return d;
}

}  // namespace

TEST_CASE("training separates an easy set and is reproducible") {
  const auto train_set = brightness_set(24, 1), test_set = brightness_set(12, 2);
  TrainConfig cfg;
  cfg.epochs = 25;
  cfg.adam.lr = 0.02;
  for (HeadKind k : kAllHeads) {
    const ThreatModel init = ThreatModel::create(k, binary_dims(), 3);
    const TrainResult a = train(init, train_set, test_set, cfg);
    INFO(head_kind_name(k));
    CHECK(a.test_accuracy == 1.0);
    CHECK(a.epoch_loss.size() == 25);
    CHECK(a.epoch_loss.back() < a.epoch_loss.front());
    const TrainResult b = train(init, train_set, test_set, cfg);
    const auto pa = a.model.parameters(), pb = b.model.parameters();
    for (std::size_t i = 0; i < pa.size(); ++i) CHECK(values(*pa[i].second) == values(*pb[i].second));
  }
}

TEST_CASE("zero epochs returns the initial weights") {
  const auto train_set = brightness_set(4, 1);
  TrainConfig cfg;
  cfg.epochs = 0;
  const ThreatModel init = ThreatModel::create(HeadKind::LSTM, binary_dims(), 3);
  const TrainResult r = train(init, train_set, train_set, cfg);
  const auto pa = init.parameters(), pb = r.model.parameters();
  for (std::size_t i = 0; i < pa.size(); ++i) CHECK(values(*pa[i].second) == values(*pb[i].second));
  CHECK(r.epoch_loss.empty());
}

TEST_CASE("training input errors") {
  const ThreatModel init = ThreatModel::create(HeadKind::LSTM, binary_dims(), 3);
  CHECK_THROWS(train(init, {}, {}, TrainConfig{}));
  auto bad = brightness_set(2, 1);
  bad[0].label = 5;
  CHECK_THROWS(train(init, bad, {}, TrainConfig{}));
}
