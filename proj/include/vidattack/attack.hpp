#pragma once

// Sparse video perturbations by regularized optimization.
//
// Every attack minimizes, over one shared perturbation E,
//
//     lambda * ||M . E||_p  -/+  (1/N) sum_i l(1_{y_i}, J(X_i + M . E))
//
// with l(u, v) = log(1 - u . v). The minus sign drives each clip away from
// its label; the plus sign (targeted mode, y_i = target) pulls the target
// probability up. M is a per-frame 0/1 mask (all ones unless masked), and
// ||.||_p is either the Frobenius norm or the l2,1 norm sum_t ||E_t||_2.

#include <chrono>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "vidattack/data.hpp"
#include "vidattack/metrics.hpp"
#include "vidattack/models.hpp"
#include "vidattack/optim.hpp"
#include "vidattack/tensor.hpp"

namespace vidattack {

enum class AttackMode { Single, Universal, Masked, Targeted };
enum class NormKind { L2, L21 };

std::string_view attack_mode_name(AttackMode mode);
AttackMode parse_attack_mode(std::string_view name);
std::string_view norm_name(NormKind norm);
NormKind parse_norm(std::string_view name);

class TemporalMask {
 public:
  TemporalMask() = default;
  explicit TemporalMask(std::vector<std::uint8_t> bits);

  static TemporalMask all_ones(std::size_t frames);
  // Keeps the first `polluted` frames perturbable; the rest stay clean.
  static TemporalMask prefix(std::size_t frames, std::size_t polluted);

  std::size_t length() const { return bits_.size(); }
  std::size_t clean_frames() const;  // K
  double sparsity() const;           // K / T
  bool keeps(std::size_t frame) const { return bits_.at(frame) != 0; }
  const std::vector<std::uint8_t>& bits() const { return bits_; }

  // 0/1 tensor of `shape` (frames on axis 0).
  Tensor broadcast(const Shape& shape) const;
  // Differentiable M . E.
  Tensor apply(const Tensor& perturbation) const;

 private:
  std::vector<std::uint8_t> bits_;
};

struct AttackConfig {
  AttackMode mode = AttackMode::Single;
  NormKind norm = NormKind::L21;
  double lambda = 1.0;
  AdamConfig adam{};
  std::size_t iters = 500;
  double init_scale = 1e-4;
  std::optional<TemporalMask> mask;
  std::optional<std::size_t> target_label;
  bool clip_pixels = true;
  double prob_clamp_eps = 1e-6;
  double zero_threshold = kZeroThreshold;

  // Throws ConfigError on inconsistent settings.
  void validate() const;
};

class Perturbation {
 public:
  Perturbation() = default;
  explicit Perturbation(Tensor e) : e_(std::move(e)) {}

  const Tensor& tensor() const { return e_; }
  std::size_t frames() const { return e_.rank() ? e_.dim(0) : 0; }
  std::vector<double> per_frame_l2() const;

 private:
  Tensor e_;
};

struct VideoOutcome {
  std::size_t label = 0;
  std::size_t video_label_before = 0;
  std::size_t video_label_after = 0;
  bool success = false;
  std::vector<std::size_t> frame_labels_before;
  std::vector<std::size_t> frame_labels_after;
  std::vector<double> per_frame_map;  // effective perturbation, 0-255 units
  double perceptibility = 0.0;
  double label_prob_before = 0.0;  // probability of the attacked label (true or target)
  double label_prob_after = 0.0;
};

struct AttackReport {
  bool success = false;  // every attacked clip fooled
  double fooling_rate = 0.0;
  double perceptibility_map = 0.0;  // 0-255 units
  double sparsity = 0.0;
  std::vector<double> per_frame_map;  // 0-255 units, averaged over clips
  std::vector<std::size_t> frame_labels_before;  // first clip
  std::vector<std::size_t> frame_labels_after;
  std::size_t video_label_before = 0;
  std::size_t video_label_after = 0;
  double seconds_per_iteration = 0.0;

  AttackMode mode = AttackMode::Single;
  NormKind norm = NormKind::L21;
  std::size_t iterations = 0;
  double objective_initial = 0.0;
  double objective_final = 0.0;
  double label_prob_initial = 0.0;  // mean over clips
  double label_prob_final = 0.0;
  std::optional<double> heldout_fooling_rate;
  std::vector<VideoOutcome> videos;

  // Fixed field names; `include_timing` = false drops seconds_per_iteration
  // so the text is reproducible.
  std::string to_json(bool include_timing = true) const;
};

struct AttackResult {
  Perturbation perturbation;  // M . E, exactly zero on masked-out frames
  AttackReport report;
};

// ---- objective pieces -------------------------------------------------------

// log(1 - clamp(u . v, eps, 1 - eps)).
Tensor surrogate_loss(const Tensor& onehot, const Tensor& probs, double clamp_eps);
Tensor norm_l21(const Tensor& perturbation);
Tensor norm_l2(const Tensor& perturbation);
Tensor perturbation_norm(NormKind norm, const Tensor& perturbation);

// Values in [0, 1]; identity on in-range entries.
Tensor clip_to_valid(const Tensor& adversarial);

// The differentiable objective above, evaluated at `perturbation`.
// `targets` holds the label each term is scored on (true labels, or the
// target label in targeted mode).
Tensor attack_objective(const ThreatModel& model, const std::vector<Tensor>& videos,
                        const std::vector<std::size_t>& targets, const Tensor& perturbation,
                        const AttackConfig& cfg);

// ---- attacks ----------------------------------------------------------------

struct HeldOut {
  std::vector<Tensor> videos;
  std::vector<std::size_t> labels;
};

AttackResult attack_single(const ThreatModel& model, const Tensor& video, std::size_t label,
                           const AttackConfig& cfg);
AttackResult attack_universal(const ThreatModel& model, const std::vector<Tensor>& videos,
                              const std::vector<std::size_t>& labels, const AttackConfig& cfg,
                              const HeldOut* heldout = nullptr);
AttackResult attack_masked(const ThreatModel& model, const std::vector<Tensor>& videos,
                           const std::vector<std::size_t>& labels, const AttackConfig& cfg);
AttackResult attack_targeted(const ThreatModel& model, const std::vector<Tensor>& videos,
                             const std::vector<std::size_t>& labels, std::size_t target, const AttackConfig& cfg);

// X + E clipped (when requested) to [0, 1].
Tensor adversarial_video(const Tensor& video, const Tensor& perturbation, bool clip_pixels);

struct Evaluation {
  double fooling_rate = 0.0;
  std::vector<bool> fooled;
};

// Applies a fixed perturbation to clips of matching shape and checks which
// labels change (or, with a target, which reach the target).
Evaluation evaluate_perturbation(const ThreatModel& model, const std::vector<Tensor>& videos,
                                 const std::vector<std::size_t>& labels, const Tensor& perturbation,
                                 bool clip_pixels, std::optional<std::size_t> target = std::nullopt);

}  // namespace vidattack
