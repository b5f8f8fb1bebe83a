#pragma once

// Experiment drivers shared by the CLI and the acceptance suite. Each
// run_* function is pure compute over loaded models and clips; the write_*
// and cmd_* layers turn results into report.json / table.csv / curve.svg.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "vidattack/attack.hpp"
#include "vidattack/config.hpp"
#include "vidattack/data.hpp"
#include "vidattack/models.hpp"
#include "vidattack/parallel.hpp"

namespace vidattack {

namespace fs = std::filesystem;

struct ExperimentConfig {
  std::string command;
  std::uint64_t seed = 1;
  fs::path out_dir = "out";

  SyntheticSpec data;
  std::optional<fs::path> dataset_dir;  // load instead of generating
  std::optional<fs::path> models_dir;   // holds <Head>.vmdl
  std::optional<fs::path> model_path;   // single-model commands
  HeadKind head = HeadKind::LSTM;
  std::size_t encoder_dim = 64;
  std::size_t hidden_dim = 64;

  TrainConfig train;
  std::uint64_t model_seed = 11;
  AttackConfig attack;

  std::size_t max_videos = 0;  // 0 = every eligible clip
  std::optional<std::string> video_id;
  std::size_t mask_polluted = 0;  // attack command: prefix mask, 0 = none
  std::vector<std::size_t> polluted{40, 8, 4, 1};
  std::vector<std::size_t> splice_frames{1, 5, 10, 20, 40};
  std::size_t prop_polluted = 8;
  std::size_t transfer_polluted = 20;  // prefix mask for transfer perturbations, 0 = whole clip
  std::size_t universal_train_size = 20;
  std::size_t timing_iters = 50;
  std::size_t timing_warmup = 5;
  std::size_t workers = 1;

  // Every resolved setting as sorted key = value text. Hashing it gives the
  // config_hash stamped on every table.
  KeyValueConfig resolved;
  std::string config_hash() const { return fnv1a_hex(resolved.to_text()); }

  // Per-command defaults, then `file` values, then `overrides`.
  static ExperimentConfig build(const std::string& command, std::uint64_t seed, const fs::path& out_dir,
                                const KeyValueConfig& file, const KeyValueConfig& overrides);
};

// Keys accepted in config files and --set.
const std::vector<std::string>& known_config_keys();

// ---- inputs -----------------------------------------------------------------

Dataset load_or_generate(const ExperimentConfig& cfg);
ThreatModel load_head(const ExperimentConfig& cfg, HeadKind kind);
std::vector<ThreatModel> load_zoo(const ExperimentConfig& cfg);

// Test clips the model classifies correctly, in id order, capped by max_videos.
std::vector<const LabeledVideo*> correct_clips(const ThreatModel& model, const std::vector<LabeledVideo>& clips,
                                               std::size_t max_videos);
double clean_error(const ThreatModel& model, const std::vector<LabeledVideo>& clips);


// ---- experiments ------------------------------------------------------------

struct HeadAccuracy {
  HeadKind head = HeadKind::LSTM;
  double train_accuracy = 0.0;
  double test_accuracy = 0.0;
  double final_loss = 0.0;
  std::vector<double> epoch_loss;
  fs::path path;
};
std::vector<HeadAccuracy> run_train(const ExperimentConfig& cfg, const Dataset& data);

struct SweepRow {
  std::size_t polluted = 0;
  std::size_t clean = 0;
  double sparsity = 0.0;
  double fooling_rate = 0.0;
  // Both in 0-255 units, averaged over attacked clips: MAP over the polluted
  // frames only, and MAP over the whole clip.
  double perceptibility = 0.0;
  double clip_perceptibility = 0.0;
  std::size_t videos = 0;
  std::size_t fooled = 0;
};
struct SweepResult {
  HeadKind head = HeadKind::LSTM;
  double clean_error = 0.0;
  std::vector<SweepRow> rows;
};
SweepResult run_sparsity_sweep(const ThreatModel& model, const Dataset& data, const ExperimentConfig& cfg);

struct PropagationCurve {
  NormKind norm = NormKind::L21;
  bool success = false;
  std::vector<double> per_frame_map;  // 0-255 units
  std::vector<std::size_t> frame_labels_after;
  std::vector<bool> propagated;  // frame MAP below threshold, label flipped
  std::size_t video_label_after = 0;
};
struct PropagationReport {
  std::string video_id;
  std::size_t label = 0;
  std::vector<std::size_t> frame_labels_before;
  std::size_t video_label_before = 0;
  std::vector<PropagationCurve> curves;  // L21 then L2
};
PropagationReport run_propagation(const ThreatModel& model, const LabeledVideo& clip, const ExperimentConfig& cfg);

// Prefix-masked attacks over many clips; a successful clip "propagates"
// when some frame after the polluted prefix changes its frame-level label.
struct PropagationStats {
  HeadKind head = HeadKind::LSTM;
  std::size_t polluted = 0;
  std::size_t attacked = 0;
  std::size_t succeeded = 0;
  std::size_t propagated = 0;
  double fraction() const { return succeeded ? static_cast<double>(propagated) / static_cast<double>(succeeded) : 0.0; }
};
PropagationStats run_propagation_stats(const ThreatModel& model, const Dataset& data, const ExperimentConfig& cfg);

struct SpliceRow {
  std::size_t frames = 0;  // N
  NormKind norm = NormKind::L2;
  double fooling_rate = 0.0;
  double perceptibility = 0.0;
  std::size_t videos = 0;
  std::size_t fooled = 0;
};
// Optimizes on the first N frames only, pastes the result into the full
// clip and scores the full clip.
std::vector<SpliceRow> run_splice(const ThreatModel& model, const Dataset& data, const ExperimentConfig& cfg);

struct TransferMatrix {
  std::vector<HeadKind> heads;
  std::vector<std::vector<double>> rate;  // [generator][evaluator]
  std::vector<std::vector<std::size_t>> eligible;
  double column_mean(std::size_t col) const;
};
TransferMatrix run_transfer(const std::vector<ThreatModel>& models, const Dataset& data, const ExperimentConfig& cfg);

struct UniversalResult {
  HeadKind head = HeadKind::LSTM;
  std::size_t train_videos = 0;
  std::size_t test_videos = 0;
  double train_fooling_rate = 0.0;
  double test_fooling_rate = 0.0;
  double clean_error = 0.0;  // zero perturbation on the test clips
  double perceptibility = 0.0;
  Perturbation perturbation;
};
UniversalResult run_universal(const ThreatModel& model, const Dataset& data, const ExperimentConfig& cfg);

struct TimingRow {
  double sparsity = 0.0;
  std::size_t frames = 0;
  std::size_t iterations = 0;
  double seconds_per_iteration = 0.0;
};
std::vector<TimingRow> run_timing(const ThreatModel& model, const Dataset& data, const ExperimentConfig& cfg);

// ---- outputs ----------------------------------------------------------------

struct Series {
  std::string name;
  std::vector<double> x;
  std::vector<double> y;
};
struct LinePlot {
  std::string title;
  std::string x_label;
  std::string y_label;
  std::vector<Series> series;
};
// Fixed-size SVG with fixed-precision coordinates, so equal input gives
// equal bytes.
std::string render_svg(const LinePlot& plot);

// Minimal CSV writer: header row then rows, fields joined by ','.
class CsvTable {
 public:
  explicit CsvTable(std::vector<std::string> header) : header_(std::move(header)) {}
  void add(std::vector<std::string> row);
  std::string str() const;

 private:
  std::vector<std::string> header_;
  std::vector<std::vector<std::string>> rows_;
};

std::string fmt_real(double v);  // %.6f
void write_text(const fs::path& path, const std::string& text);

// Runs one subcommand end to end and writes its files under cfg.out_dir.
// Returns the paths written.
std::vector<fs::path> run_command(const ExperimentConfig& cfg);

}  // namespace vidattack
