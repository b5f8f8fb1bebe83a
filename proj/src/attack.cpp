#include "vidattack/attack.hpp"

#include <algorithm>
#include <cmath>

#include <nlohmann/json.hpp>

namespace vidattack {

std::string_view attack_mode_name(AttackMode mode) {
  switch (mode) {
    case AttackMode::Single: return "single";
    case AttackMode::Universal: return "universal";
    case AttackMode::Masked: return "masked";
    case AttackMode::Targeted: return "targeted";
  }
  return "?";
}

AttackMode parse_attack_mode(std::string_view name) {
  for (auto m : {AttackMode::Single, AttackMode::Universal, AttackMode::Masked, AttackMode::Targeted}) {
    if (attack_mode_name(m) == name) return m;
  }
  throw ConfigError("unknown attack mode '" + std::string(name) + "'");
}

std::string_view norm_name(NormKind norm) { return norm == NormKind::L2 ? "L2" : "L21"; }

NormKind parse_norm(std::string_view name) {
  if (name == "L2" || name == "l2") return NormKind::L2;
  if (name == "L21" || name == "l21" || name == "L2,1" || name == "l2,1") return NormKind::L21;
  throw ConfigError("unknown norm '" + std::string(name) + "'");
}

// ---- mask -------------------------------------------------------------------

TemporalMask::TemporalMask(std::vector<std::uint8_t> bits) : bits_(std::move(bits)) {
  for (auto& b : bits_) b = b ? 1 : 0;
}

TemporalMask TemporalMask::all_ones(std::size_t frames) { return TemporalMask(std::vector<std::uint8_t>(frames, 1)); }

TemporalMask TemporalMask::prefix(std::size_t frames, std::size_t polluted) {
  if (polluted > frames) {
    throw ConfigError("prefix mask: " + std::to_string(polluted) + " polluted frames exceed T = " + std::to_string(frames));
  }
  std::vector<std::uint8_t> bits(frames, 0);
  std::fill_n(bits.begin(), polluted, 1);
  return TemporalMask(std::move(bits));
}

std::size_t TemporalMask::clean_frames() const {
  return static_cast<std::size_t>(std::count(bits_.begin(), bits_.end(), 0));
}

double TemporalMask::sparsity() const {
  return bits_.empty() ? 0.0 : static_cast<double>(clean_frames()) / static_cast<double>(bits_.size());
}

Tensor TemporalMask::broadcast(const Shape& shape) const {
  if (shape.empty() || shape[0] != bits_.size()) {
    throw ShapeError("mask of length " + std::to_string(bits_.size()) + " cannot cover " + shape_str(shape));
  }
  Tensor m(shape);
  auto d = m.mutable_data();
  const std::size_t per = bits_.empty() ? 0 : d.size() / bits_.size();
  for (std::size_t t = 0; t < bits_.size(); ++t) {
    std::fill_n(d.begin() + static_cast<std::ptrdiff_t>(t * per), per, bits_[t] ? 1.0 : 0.0);
  }
  return m;
}

Tensor TemporalMask::apply(const Tensor& perturbation) const { return perturbation * broadcast(perturbation.shape()); }

// ---- config / perturbation --------------------------------------------------

void AttackConfig::validate() const {
  if (!(lambda > 0.0)) throw ConfigError("attack: lambda must be > 0");
  if (!(init_scale > 0.0)) throw ConfigError("attack: init_scale must be > 0");
  if (!(adam.lr > 0.0)) throw ConfigError("attack: adam lr must be > 0");
  if (!(prob_clamp_eps > 0.0 && prob_clamp_eps < 0.5)) throw ConfigError("attack: prob_clamp_eps must be in (0, 0.5)");
  if (mode == AttackMode::Masked && !mask) throw ConfigError("attack: masked mode requires a mask");
  if (mode == AttackMode::Targeted && !target_label) throw ConfigError("attack: targeted mode requires target_label");
  if ((mode == AttackMode::Single || mode == AttackMode::Universal) && mask) {
    throw ConfigError("attack: a temporal mask is only used in masked or targeted mode");
  }
}

std::vector<double> Perturbation::per_frame_l2() const {
  const Tensor norms = frame_l2_norms(e_);
  return {norms.data().begin(), norms.data().end()};
}

// ---- objective --------------------------------------------------------------

Tensor surrogate_loss(const Tensor& onehot, const Tensor& probs, double clamp_eps) {
  if (onehot.rank() != 1 || onehot.shape() != probs.shape()) {
    throw ShapeError("surrogate_loss: one-hot " + shape_str(onehot.shape()) + " vs probabilities " +
                     shape_str(probs.shape()));
  }
  return log(1.0 - clamp(sum(onehot * probs), clamp_eps, 1.0 - clamp_eps));
}

Tensor norm_l21(const Tensor& perturbation) { return sum(frame_l2_norms(perturbation)); }

Tensor norm_l2(const Tensor& perturbation) { return l2_norm(perturbation); }

Tensor perturbation_norm(NormKind norm, const Tensor& perturbation) {
  return norm == NormKind::L21 ? norm_l21(perturbation) : norm_l2(perturbation);
}

Tensor clip_to_valid(const Tensor& adversarial) { return clamp(adversarial, 0.0, 1.0); }

Tensor adversarial_video(const Tensor& video, const Tensor& perturbation, bool clip_pixels) {
  Tensor x = video + perturbation;
  return clip_pixels ? clip_to_valid(x) : x;
}

namespace {

Tensor onehot(std::size_t k, std::size_t n) {
  Tensor u({n});
  u.mutable_data()[k] = 1.0;
  return u;
}

void check_batch(const ThreatModel& model, const std::vector<Tensor>& videos, const std::vector<std::size_t>& labels) {
  if (videos.empty()) throw AttackError("attack: no videos given");
  if (videos.size() != labels.size()) throw AttackError("attack: videos and labels differ in length");
  for (const auto& v : videos) {
    if (v.shape() != videos[0].shape()) {
      throw AttackError("attack: video shapes differ, " + shape_str(videos[0].shape()) + " vs " + shape_str(v.shape()));
    }
  }
  for (auto y : labels) {
    if (y >= model.dims().num_classes) throw AttackError("attack: label " + std::to_string(y) + " out of range");
  }
}

void check_mask(const TemporalMask& mask, const Shape& shape) {
  if (mask.length() != shape[0]) {
    throw AttackError("attack: mask length " + std::to_string(mask.length()) + " != T = " + std::to_string(shape[0]));
  }
  if (mask.clean_frames() == mask.length()) throw AttackError("attack: mask keeps no frame, nothing to optimize");
}

double scored_prob(const Prediction& p, std::size_t label) { return p.video_probs.at(label); }

AttackResult optimize(const ThreatModel& model, const std::vector<Tensor>& videos, const std::vector<std::size_t>& labels,
                      std::optional<std::size_t> target, const AttackConfig& cfg, const HeldOut* heldout) {
  const Shape shape = videos[0].shape();
  const std::size_t N = videos.size();
  std::vector<std::size_t> scored = target ? std::vector<std::size_t>(N, *target) : labels;

  Tensor E(shape, cfg.init_scale, true);
  AdamState state(E.numel());
  const bool project = cfg.clip_pixels && N == 1;

  double objective_initial = 0.0;
  const auto t0 = std::chrono::steady_clock::now();
  for (std::size_t it = 0; it < cfg.iters; ++it) {
    Tensor obj = attack_objective(model, videos, scored, E, cfg);
    if (it == 0) objective_initial = obj.item();
    backward(obj);
    const std::vector<double> g = E.grad();
    E.zero_grad();
    auto e = E.mutable_data();
    adam_step(state, e, g, cfg.adam);
    if (project) {
      const auto x = videos[0].data();
      for (std::size_t i = 0; i < e.size(); ++i) e[i] = std::clamp(x[i] + e[i], 0.0, 1.0) - x[i];
    }
  }
  const double elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  Tensor final_e = E.detach();
  const double objective_final = attack_objective(model, videos, scored, final_e, cfg).item();
  if (cfg.iters == 0) objective_initial = objective_final;
  Tensor masked = cfg.mask ? cfg.mask->apply(final_e) : final_e;

  AttackResult result{Perturbation(masked), {}};
  AttackReport& rep = result.report;
  rep.mode = cfg.mode;
  rep.norm = cfg.norm;
  rep.iterations = cfg.iters;
  rep.objective_initial = objective_initial;
  rep.objective_final = objective_final;
  rep.seconds_per_iteration = cfg.iters ? elapsed / static_cast<double>(cfg.iters) : 0.0;
  rep.per_frame_map.assign(shape[0], 0.0);

  std::vector<bool> fooled;
  for (std::size_t i = 0; i < N; ++i) {
    const Prediction before = model.forward(videos[i]);
    const Tensor adv = adversarial_video(videos[i], masked, cfg.clip_pixels);
    const Prediction after = model.forward(adv);
    const Tensor effective = adv - videos[i];

    VideoOutcome o;
    o.label = labels[i];
    o.video_label_before = before.video_label;
    o.video_label_after = after.video_label;
    o.success = target ? after.video_label == *target : after.video_label != labels[i];
    o.frame_labels_before = before.frame_labels;
    o.frame_labels_after = after.frame_labels;
    o.per_frame_map = per_frame_map(effective, kReportPixelScale);
    o.perceptibility = map_perceptibility(effective, kReportPixelScale);
    o.label_prob_before = scored_prob(before, scored[i]);
    o.label_prob_after = scored_prob(after, scored[i]);

    fooled.push_back(o.success);
    for (std::size_t t = 0; t < shape[0]; ++t) rep.per_frame_map[t] += o.per_frame_map[t] / static_cast<double>(N);
    rep.perceptibility_map += o.perceptibility / static_cast<double>(N);
    rep.label_prob_initial += o.label_prob_before / static_cast<double>(N);
    rep.label_prob_final += o.label_prob_after / static_cast<double>(N);
    rep.videos.push_back(std::move(o));
  }
  rep.fooling_rate = fooling_rate(fooled);
  rep.success = rep.fooling_rate == 1.0;
  std::vector<double> unit_map(rep.per_frame_map);
  for (auto& m : unit_map) m /= kReportPixelScale;
  rep.sparsity = sparsity(unit_map, cfg.zero_threshold);
  rep.frame_labels_before = rep.videos[0].frame_labels_before;
  rep.frame_labels_after = rep.videos[0].frame_labels_after;
  rep.video_label_before = rep.videos[0].video_label_before;
  rep.video_label_after = rep.videos[0].video_label_after;

  if (heldout) {
    rep.heldout_fooling_rate =
        evaluate_perturbation(model, heldout->videos, heldout->labels, masked, cfg.clip_pixels, target).fooling_rate;
  }
  return result;
}

}  // namespace

Tensor attack_objective(const ThreatModel& model, const std::vector<Tensor>& videos,
                        const std::vector<std::size_t>& targets, const Tensor& perturbation,
                        const AttackConfig& cfg) {
  if (videos.empty() || videos.size() != targets.size()) throw AttackError("attack_objective: bad batch");
  const std::size_t K = model.dims().num_classes;
  Tensor masked = cfg.mask ? cfg.mask->apply(perturbation) : perturbation;
  Tensor reg = perturbation_norm(cfg.norm, masked) * cfg.lambda;
  Tensor total = Tensor::scalar(0.0);
  for (std::size_t i = 0; i < videos.size(); ++i) {
    const Tensor probs = model.forward_graph(adversarial_video(videos[i], masked, cfg.clip_pixels)).video_probs;
    total = total + surrogate_loss(onehot(targets[i], K), probs, cfg.prob_clamp_eps);
  }
  Tensor mean = total / static_cast<double>(videos.size());
  return cfg.mode == AttackMode::Targeted ? reg + mean : reg - mean;
}

AttackResult attack_single(const ThreatModel& model, const Tensor& video, std::size_t label, const AttackConfig& cfg) {
  cfg.validate();
  if (cfg.mode != AttackMode::Single) throw ConfigError("attack_single: config mode must be single");
  check_batch(model, {video}, {label});
  const std::size_t predicted = model.forward(video).video_label;
  if (predicted != label) {
    throw AttackError("attack_single: clip is already misclassified (predicted " + std::to_string(predicted) +
                      ", label " + std::to_string(label) + ")");
  }
  return optimize(model, {video}, {label}, std::nullopt, cfg, nullptr);
}

AttackResult attack_universal(const ThreatModel& model, const std::vector<Tensor>& videos,
                              const std::vector<std::size_t>& labels, const AttackConfig& cfg, const HeldOut* heldout) {
  cfg.validate();
  if (cfg.mode != AttackMode::Universal) throw ConfigError("attack_universal: config mode must be universal");
  check_batch(model, videos, labels);
  return optimize(model, videos, labels, std::nullopt, cfg, heldout);
}

AttackResult attack_masked(const ThreatModel& model, const std::vector<Tensor>& videos,
                           const std::vector<std::size_t>& labels, const AttackConfig& cfg) {
  cfg.validate();
  if (cfg.mode != AttackMode::Masked) throw ConfigError("attack_masked: config mode must be masked");
  check_batch(model, videos, labels);
  check_mask(*cfg.mask, videos[0].shape());
  return optimize(model, videos, labels, std::nullopt, cfg, nullptr);
}

AttackResult attack_targeted(const ThreatModel& model, const std::vector<Tensor>& videos,
                             const std::vector<std::size_t>& labels, std::size_t target, const AttackConfig& cfg) {
  AttackConfig c = cfg;
  if (!c.target_label) c.target_label = target;
  c.validate();
  if (c.mode != AttackMode::Targeted) throw ConfigError("attack_targeted: config mode must be targeted");
  if (*c.target_label != target) throw ConfigError("attack_targeted: target differs from config target_label");
  check_batch(model, videos, labels);
  if (target >= model.dims().num_classes) throw AttackError("attack_targeted: target label out of range");
  for (auto y : labels) {
    if (y == target) throw AttackError("attack_targeted: target equals the true label " + std::to_string(y));
  }
  if (c.mask) check_mask(*c.mask, videos[0].shape());
  return optimize(model, videos, labels, target, c, nullptr);
}

Evaluation evaluate_perturbation(const ThreatModel& model, const std::vector<Tensor>& videos,
                                 const std::vector<std::size_t>& labels, const Tensor& perturbation, bool clip_pixels,
                                 std::optional<std::size_t> target) {
  if (videos.empty() || videos.size() != labels.size()) throw AttackError("evaluate_perturbation: bad batch");
  Evaluation ev;
  for (std::size_t i = 0; i < videos.size(); ++i) {
    if (videos[i].shape() != perturbation.shape()) {
      throw ShapeError("evaluate_perturbation: clip " + shape_str(videos[i].shape()) + " vs perturbation " +
                       shape_str(perturbation.shape()));
    }
    const auto label = model.forward(adversarial_video(videos[i], perturbation, clip_pixels)).video_label;
    ev.fooled.push_back(target ? label == *target : label != labels[i]);
  }
  ev.fooling_rate = fooling_rate(ev.fooled);
  return ev;
}

std::string AttackReport::to_json(bool include_timing) const {
  nlohmann::ordered_json j;
  j["success"] = success;
  j["fooling_rate"] = fooling_rate;
  j["perceptibility_map"] = perceptibility_map;
  j["sparsity"] = sparsity;
  j["per_frame_map"] = per_frame_map;
  j["frame_labels_before"] = frame_labels_before;
  j["frame_labels_after"] = frame_labels_after;
  j["video_label_before"] = video_label_before;
  j["video_label_after"] = video_label_after;
  if (include_timing) j["seconds_per_iteration"] = seconds_per_iteration;
  j["mode"] = std::string(attack_mode_name(mode));
  j["norm"] = std::string(norm_name(norm));
  j["iterations"] = iterations;
  j["objective_initial"] = objective_initial;
  j["objective_final"] = objective_final;
  j["label_prob_initial"] = label_prob_initial;
  j["label_prob_final"] = label_prob_final;
  if (heldout_fooling_rate) j["heldout_fooling_rate"] = *heldout_fooling_rate;
  j["videos"] = nlohmann::ordered_json::array();
  for (const auto& v : videos) {
    nlohmann::ordered_json o;
    o["label"] = v.label;
    o["success"] = v.success;
    o["video_label_before"] = v.video_label_before;
    o["video_label_after"] = v.video_label_after;
    o["perceptibility_map"] = v.perceptibility;
    o["label_prob_before"] = v.label_prob_before;
    o["label_prob_after"] = v.label_prob_after;
    j["videos"].push_back(std::move(o));
  }
  return j.dump(2);
}

}  // namespace vidattack
