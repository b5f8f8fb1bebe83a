#include "vidattack/harness.hpp"

#include <algorithm>
#include <cmath>

#include "vidattack/error.hpp"

namespace vidattack {

namespace {

ModelDims dims_for(const ExperimentConfig& cfg, const SyntheticSpec& spec) {
  ModelDims d;
  d.width = spec.width;
  d.height = spec.height;
  d.channels = spec.channels;
  d.encoder_dim = cfg.encoder_dim;
  d.hidden_dim = cfg.hidden_dim;
  d.num_classes = spec.num_classes;
  return d;
}

void check_compatible(const ThreatModel& model, const SyntheticSpec& spec) {
  const ModelDims& d = model.dims();
  if (d.width != spec.width || d.height != spec.height || d.channels != spec.channels ||
      d.num_classes != spec.num_classes) {
    throw ConfigError(std::string(head_kind_name(model.head_kind())) + " model expects " + std::to_string(d.width) +
                      "x" + std::to_string(d.height) + "x" + std::to_string(d.channels) + " frames and " +
                      std::to_string(d.num_classes) + " classes; dataset does not match");
  }
}

// Index of each clip within its class, used to interleave classes so that a
// max_videos cap still samples every class.
std::vector<const LabeledVideo*> interleaved(const std::vector<LabeledVideo>& clips) {
  std::vector<std::pair<std::size_t, const LabeledVideo*>> keyed;
  std::vector<std::size_t> seen;
  for (const auto& c : clips) {
    if (c.label >= seen.size()) seen.resize(c.label + 1, 0);
    keyed.emplace_back(seen[c.label]++, &c);
  }
  std::stable_sort(keyed.begin(), keyed.end(), [](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first < b.first;
    if (a.second->label != b.second->label) return a.second->label < b.second->label;
    return a.second->id < b.second->id;
  });
  std::vector<const LabeledVideo*> out;
  for (const auto& [rank, clip] : keyed) out.push_back(clip);
  return out;
}

Tensor leading_frames(const Tensor& video, std::size_t n) {
  Shape s = video.shape();
  const std::size_t per = video.numel() / s[0];
  s[0] = n;
  const auto d = video.data();
  return Tensor(s, std::vector<double>(d.begin(), d.begin() + static_cast<std::ptrdiff_t>(n * per)));
}

// Zero-pads a perturbation on the first frames out to T frames.
Tensor pad_frames(const Tensor& head, std::size_t T) {
  Shape s = head.shape();
  const std::size_t per = head.numel() / s[0];
  s[0] = T;
  std::vector<double> out(T * per, 0.0);
  std::copy(head.data().begin(), head.data().end(), out.begin());
  return Tensor(s, std::move(out));
}

// MAP over only the frames a mask leaves perturbable.
double polluted_map(const VideoOutcome& o, const TemporalMask& mask) {
  double total = 0.0;
  std::size_t n = 0;
  for (std::size_t t = 0; t < o.per_frame_map.size(); ++t) {
    if (!mask.keeps(t)) continue;
    total += o.per_frame_map[t];
    ++n;
  }
  return n ? total / static_cast<double>(n) : 0.0;
}

AttackConfig with_mode(const AttackConfig& base, AttackMode mode) {
  AttackConfig a = base;
  a.mode = mode;
  a.mask.reset();
  a.target_label.reset();
  return a;
}

}  // namespace

Dataset load_or_generate(const ExperimentConfig& cfg) {
  if (cfg.dataset_dir) {
    if (!fs::exists(*cfg.dataset_dir / "manifest")) {
      throw ConfigError("dataset directory " + cfg.dataset_dir->string() + " has no manifest");
    }
    return load_dataset(*cfg.dataset_dir);
  }
  return generate(cfg.data);
}

ThreatModel load_head(const ExperimentConfig& cfg, HeadKind kind) {
  fs::path path;
  if (cfg.model_path) {
    path = *cfg.model_path;
  } else if (cfg.models_dir) {
    path = *cfg.models_dir / (std::string(head_kind_name(kind)) + ".vmdl");
  } else {
    throw ConfigError("no trained model: set models_dir (from `vidattack train`) or model");
  }
  if (!fs::exists(path)) throw ConfigError("missing model file " + path.string() + "; run `vidattack train` first");
  ThreatModel m = load_model(path);
  if (cfg.model_path && m.head_kind() != kind && cfg.command != "attack") {
    throw ConfigError("model file " + path.string() + " holds a " + std::string(head_kind_name(m.head_kind())) +
                      " head, expected " + std::string(head_kind_name(kind)));
  }
  return m;
}

std::vector<ThreatModel> load_zoo(const ExperimentConfig& cfg) {
  if (!cfg.models_dir) throw ConfigError("transfer-matrix needs models_dir holding all four trained heads");
  ExperimentConfig c = cfg;
  c.model_path.reset();
  std::vector<ThreatModel> out;
  for (HeadKind k : kAllHeads) out.push_back(load_head(c, k));
  return out;
}

std::vector<const LabeledVideo*> correct_clips(const ThreatModel& model, const std::vector<LabeledVideo>& clips,
                                               std::size_t max_videos) {
  std::vector<const LabeledVideo*> out;
  for (const LabeledVideo* c : interleaved(clips)) {
    if (max_videos && out.size() >= max_videos) break;
    if (model.forward(c->video).video_label == c->label) out.push_back(c);
  }
  return out;
}

double clean_error(const ThreatModel& model, const std::vector<LabeledVideo>& clips) {
  if (clips.empty()) throw ConfigError("clean_error: no clips");
  return 1.0 - accuracy(model, clips);
}

// ---- train ------------------------------------------------------------------

std::vector<HeadAccuracy> run_train(const ExperimentConfig& cfg, const Dataset& data) {
  if (data.train.empty()) throw ConfigError("train: empty training split");
  const ModelDims dims = dims_for(cfg, data.spec);
  const fs::path dir = cfg.out_dir / "models";
  fs::create_directories(dir);
  std::vector<HeadKind> heads(kAllHeads.begin(), kAllHeads.end());
  return parallel_map<HeadAccuracy>(heads.size(), cfg.workers, [&](std::size_t i) {
    const HeadKind kind = heads[i];
    const ThreatModel init = ThreatModel::create(kind, dims, cfg.model_seed);
    TrainResult r = train(init, data.train, data.test, cfg.train);
    HeadAccuracy acc;
    acc.head = kind;
    acc.train_accuracy = r.train_accuracy;
    acc.test_accuracy = r.test_accuracy;
    acc.final_loss = r.epoch_loss.empty() ? 0.0 : r.epoch_loss.back();
    acc.epoch_loss = r.epoch_loss;
    acc.path = dir / (std::string(head_kind_name(kind)) + ".vmdl");
    save_model(acc.path, r.model);
    return acc;
  });
}

// ---- sparsity sweep ---------------------------------------------------------

SweepResult run_sparsity_sweep(const ThreatModel& model, const Dataset& data, const ExperimentConfig& cfg) {
  check_compatible(model, data.spec);
  const std::size_t T = data.spec.frames;
  for (std::size_t k : cfg.polluted) {
    if (k == 0 || k > T) throw ConfigError("polluted frame count " + std::to_string(k) + " outside [1, T]");
  }
  SweepResult out;
  out.head = model.head_kind();
  out.clean_error = clean_error(model, data.test);
  const auto clips = correct_clips(model, data.test, cfg.max_videos);
  if (clips.empty()) throw AttackError("sparsity-sweep: the model classifies no test clip correctly");

  for (std::size_t k : cfg.polluted) {
    AttackConfig a = with_mode(cfg.attack, AttackMode::Masked);
    a.mask = TemporalMask::prefix(T, k);
    struct One {
      bool fooled = false;
      double map = 0.0;
      double clip_map = 0.0;
    };
    auto runs = parallel_map<One>(clips.size(), cfg.workers, [&](std::size_t i) {
      AttackResult r = attack_masked(model, {clips[i]->video}, {clips[i]->label}, a);
      const VideoOutcome& o = r.report.videos[0];
      return One{o.success, polluted_map(o, *a.mask), o.perceptibility};
    });
    SweepRow row;
    row.polluted = k;
    row.clean = T - k;
    row.sparsity = a.mask->sparsity();
    row.videos = clips.size();
    for (const One& o : runs) {
      row.fooled += o.fooled;
      row.perceptibility += o.map / static_cast<double>(runs.size());
      row.clip_perceptibility += o.clip_map / static_cast<double>(runs.size());
    }
    row.fooling_rate = static_cast<double>(row.fooled) / static_cast<double>(row.videos);
    out.rows.push_back(row);
  }
  return out;
}

// ---- propagation ------------------------------------------------------------

PropagationReport run_propagation(const ThreatModel& model, const LabeledVideo& clip, const ExperimentConfig& cfg) {
  const Prediction before = model.forward(clip.video);
  if (before.video_label != clip.label) {
    throw AttackError("propagation-report: clip " + clip.id + " is misclassified before any attack (label " +
                      std::to_string(clip.label) + ", predicted " + std::to_string(before.video_label) + ")");
  }
  PropagationReport rep;
  rep.video_id = clip.id;
  rep.label = clip.label;
  rep.frame_labels_before = before.frame_labels;
  rep.video_label_before = before.video_label;
  for (NormKind norm : {NormKind::L21, NormKind::L2}) {
    AttackConfig a = with_mode(cfg.attack, AttackMode::Single);
    a.norm = norm;
    AttackResult r = attack_single(model, clip.video, clip.label, a);
    const VideoOutcome& o = r.report.videos[0];
    PropagationCurve c;
    c.norm = norm;
    c.success = o.success;
    c.per_frame_map = o.per_frame_map;
    c.frame_labels_after = o.frame_labels_after;
    c.video_label_after = o.video_label_after;
    for (std::size_t t = 0; t < c.per_frame_map.size(); ++t) {
      const bool quiet = c.per_frame_map[t] / kReportPixelScale < a.zero_threshold;
      c.propagated.push_back(quiet && o.frame_labels_after[t] != o.frame_labels_before[t]);
    }
    rep.curves.push_back(std::move(c));
  }
  return rep;
}

PropagationStats run_propagation_stats(const ThreatModel& model, const Dataset& data, const ExperimentConfig& cfg) {
  check_compatible(model, data.spec);
  const std::size_t T = data.spec.frames, K = cfg.prop_polluted;
  if (K == 0 || K >= T) throw ConfigError("prop_polluted must be in [1, T)");
  const auto clips = correct_clips(model, data.test, cfg.max_videos);
  AttackConfig a = with_mode(cfg.attack, AttackMode::Masked);
  a.mask = TemporalMask::prefix(T, K);
  struct One {
    bool success = false;
    bool propagated = false;
  };
  auto runs = parallel_map<One>(clips.size(), cfg.workers, [&](std::size_t i) {
    AttackResult r = attack_masked(model, {clips[i]->video}, {clips[i]->label}, a);
    const VideoOutcome& o = r.report.videos[0];
    One one{o.success, false};
    for (std::size_t t = K; t < T; ++t) one.propagated |= o.frame_labels_after[t] != o.frame_labels_before[t];
    return one;
  });
  PropagationStats s;
  s.head = model.head_kind();
  s.polluted = K;
  s.attacked = clips.size();
  for (const One& o : runs) {
    s.succeeded += o.success;
    s.propagated += o.success && o.propagated;
  }
  return s;
}

// ---- splice -----------------------------------------------------------------

std::vector<SpliceRow> run_splice(const ThreatModel& model, const Dataset& data, const ExperimentConfig& cfg) {
  check_compatible(model, data.spec);
  const std::size_t T = data.spec.frames;
  for (std::size_t n : cfg.splice_frames) {
    if (n == 0 || n > T) throw ConfigError("splice length " + std::to_string(n) + " outside [1, T]");
  }
  const auto clips = correct_clips(model, data.test, cfg.max_videos);
  if (clips.empty()) throw AttackError("splice-attack: the model classifies no test clip correctly");
  std::vector<SpliceRow> rows;
  for (std::size_t n : cfg.splice_frames) {
    for (NormKind norm : {NormKind::L2, NormKind::L21}) {
      // Universal mode on a single clip: the N-frame sub-clip may already be
      // misclassified, which attack_single would reject.
      AttackConfig a = with_mode(cfg.attack, AttackMode::Universal);
      a.norm = norm;
      struct One {
        bool fooled = false;
        double map = 0.0;
      };
      auto runs = parallel_map<One>(clips.size(), cfg.workers, [&](std::size_t i) {
        const Tensor sub = leading_frames(clips[i]->video, n);
        AttackResult r = attack_universal(model, {sub}, {clips[i]->label}, a);
        const Tensor full = pad_frames(r.perturbation.tensor(), T);
        Evaluation e = evaluate_perturbation(model, {clips[i]->video}, {clips[i]->label}, full, a.clip_pixels);
        const Tensor effective = adversarial_video(clips[i]->video, full, a.clip_pixels) - clips[i]->video;
        return One{e.fooled[0], map_perceptibility(effective)};
      });
      SpliceRow row;
      row.frames = n;
      row.norm = norm;
      row.videos = clips.size();
      for (const One& o : runs) {
        row.fooled += o.fooled;
        row.perceptibility += o.map / static_cast<double>(runs.size());
      }
      row.fooling_rate = static_cast<double>(row.fooled) / static_cast<double>(row.videos);
      rows.push_back(row);
    }
  }
  return rows;
}

// ---- transfer ---------------------------------------------------------------

double TransferMatrix::column_mean(std::size_t col) const {
  double s = 0.0;
  for (const auto& row : rate) s += row.at(col);
  return rate.empty() ? 0.0 : s / static_cast<double>(rate.size());
}

TransferMatrix run_transfer(const std::vector<ThreatModel>& models, const Dataset& data, const ExperimentConfig& cfg) {
  if (models.empty()) throw ConfigError("transfer-matrix: no models");
  for (const auto& m : models) check_compatible(m, data.spec);
  const std::size_t M = models.size();
  TransferMatrix out;
  for (const auto& m : models) out.heads.push_back(m.head_kind());
  out.rate.assign(M, std::vector<double>(M, 0.0));
  out.eligible.assign(M, std::vector<std::size_t>(M, 0));

  // Which models get each test clip right, computed once.
  std::vector<std::vector<bool>> right(M);
  for (std::size_t m = 0; m < M; ++m) {
    for (const auto& c : data.test) right[m].push_back(models[m].forward(c.video).video_label == c.label);
  }
  std::vector<std::size_t> index_of;
  const auto order = interleaved(data.test);
  for (const LabeledVideo* c : order) index_of.push_back(static_cast<std::size_t>(c - data.test.data()));

  const std::size_t T = data.spec.frames, K = cfg.transfer_polluted;
  if (K > T) throw ConfigError("transfer_polluted must be in [0, T]");
  AttackConfig a = with_mode(cfg.attack, K ? AttackMode::Masked : AttackMode::Single);
  if (K) a.mask = TemporalMask::prefix(T, K);
  for (std::size_t r = 0; r < M; ++r) {
    std::vector<std::size_t> picked;
    for (std::size_t idx : index_of) {
      if (cfg.max_videos && picked.size() >= cfg.max_videos) break;
      if (right[r][idx]) picked.push_back(idx);
    }
    auto fooled = parallel_map<std::vector<int>>(picked.size(), cfg.workers, [&](std::size_t i) {
      const LabeledVideo& clip = data.test[picked[i]];
      AttackResult res = K ? attack_masked(models[r], {clip.video}, {clip.label}, a)
                           : attack_single(models[r], clip.video, clip.label, a);
      std::vector<int> row(M, -1);  // -1: column model was wrong on the clean clip
      for (std::size_t c = 0; c < M; ++c) {
        if (!right[c][picked[i]]) continue;
        row[c] = evaluate_perturbation(models[c], {clip.video}, {clip.label}, res.perturbation.tensor(),
                                       a.clip_pixels).fooled[0];
      }
      return row;
    });
    for (std::size_t c = 0; c < M; ++c) {
      std::size_t hit = 0;
      for (const auto& row : fooled) {
        if (row[c] < 0) continue;
        ++out.eligible[r][c];
        hit += static_cast<std::size_t>(row[c]);
      }
      out.rate[r][c] = out.eligible[r][c] ? static_cast<double>(hit) / static_cast<double>(out.eligible[r][c]) : 0.0;
    }
  }
  return out;
}

// ---- universal --------------------------------------------------------------

UniversalResult run_universal(const ThreatModel& model, const Dataset& data, const ExperimentConfig& cfg) {
  check_compatible(model, data.spec);
  if (data.train.empty() || data.test.empty()) throw ConfigError("universal: needs nonempty train and test splits");
  const auto fit = correct_clips(model, data.train, cfg.universal_train_size);
  if (fit.empty()) throw AttackError("universal: the model classifies no training clip correctly");
  std::vector<Tensor> videos;
  std::vector<std::size_t> labels;
  for (const auto* c : fit) {
    videos.push_back(c->video);
    labels.push_back(c->label);
  }
  HeldOut held;
  for (const auto& c : data.test) {
    held.videos.push_back(c.video);
    held.labels.push_back(c.label);
  }
  const AttackConfig a = with_mode(cfg.attack, AttackMode::Universal);
  AttackResult r = attack_universal(model, videos, labels, a, &held);

  UniversalResult out;
  out.head = model.head_kind();
  out.train_videos = videos.size();
  out.test_videos = held.videos.size();
  out.train_fooling_rate = r.report.fooling_rate;
  out.test_fooling_rate = r.report.heldout_fooling_rate.value_or(0.0);
  out.clean_error = evaluate_perturbation(model, held.videos, held.labels, Tensor(data.spec.video_shape()),
                                          a.clip_pixels).fooling_rate;
  out.perceptibility = map_perceptibility(r.perturbation.tensor());
  out.perturbation = r.perturbation;
  return out;
}

// ---- timing -----------------------------------------------------------------

std::vector<TimingRow> run_timing(const ThreatModel& model, const Dataset& data, const ExperimentConfig& cfg) {
  check_compatible(model, data.spec);
  if (cfg.timing_iters == 0) throw ConfigError("timing_iters must be >= 1");
  const std::size_t T = data.spec.frames;
  const auto clips = correct_clips(model, data.test, 1);
  const LabeledVideo& clip = clips.empty() ? data.test.at(0) : *clips[0];
  std::vector<TimingRow> rows;
  for (double s : {0.0, 0.5, 0.75, 0.875, 0.975}) {
    const auto n = static_cast<std::size_t>(std::max(1.0, std::round(static_cast<double>(T) * (1.0 - s))));
    const Tensor sub = leading_frames(clip.video, n);
    AttackConfig a = with_mode(cfg.attack, AttackMode::Universal);
    a.iters = cfg.timing_warmup;
    if (a.iters) attack_universal(model, {sub}, {clip.label}, a);
    a.iters = cfg.timing_iters;
    AttackResult r = attack_universal(model, {sub}, {clip.label}, a);
    rows.push_back({1.0 - static_cast<double>(n) / static_cast<double>(T), n, a.iters, r.report.seconds_per_iteration});
  }
  return rows;
}

}  // namespace vidattack
