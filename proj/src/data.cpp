#include "vidattack/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <random>
#include <sstream>

#include "vidattack/config.hpp"
#include "vidattack/vten.hpp"

namespace vidattack {

namespace {

constexpr double kTrainFraction = 0.7;

// Stripe offsets (along the motion axis) for each object shape.
const std::vector<std::vector<std::size_t>> kShapes = {{0, 1}, {0, 3}};

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

void SyntheticSpec::validate() const {
  if (width < 4 || height < 4) {
    throw ConfigError("synthetic spec: W and H must be >= 4, got " + std::to_string(width) + "x" +
                      std::to_string(height));
  }
  if (frames == 0) throw ConfigError("synthetic spec: T must be >= 1");
  if (channels == 0) throw ConfigError("synthetic spec: C must be >= 1");
  if (num_classes < 2 || num_classes > 4 * kShapes.size()) {
    throw ConfigError("synthetic spec: num_classes must be in [2, 8], got " + std::to_string(num_classes));
  }
  if (samples_per_class == 0) throw ConfigError("synthetic spec: samples_per_class must be >= 1");
  if (!(noise_std >= 0.0)) throw ConfigError("synthetic spec: noise_std must be >= 0");
}

Tensor render_clip(const SyntheticSpec& spec, std::size_t label, std::size_t start, double foreground,
                   double background, std::uint64_t noise_seed) {
  const std::size_t T = spec.frames, W = spec.width, H = spec.height, C = spec.channels;
  const Direction dir = label_direction(label);
  const auto& offsets = kShapes.at(label_shape(label));
  const bool horizontal = dir == Direction::Right || dir == Direction::Left;
  const std::size_t axis_len = horizontal ? W : H;
  const bool forward = dir == Direction::Right || dir == Direction::Down;

  std::mt19937_64 rng(noise_seed);
  std::normal_distribution<double> noise(0.0, spec.noise_std);

  std::vector<double> data(T * W * H * C, background);
  for (std::size_t t = 0; t < T; ++t) {
    const std::size_t step = t % axis_len;
    const std::size_t pos = forward ? (start + step) % axis_len : (start + axis_len - step) % axis_len;
    for (std::size_t off : offsets) {
      const std::size_t line = (pos + off) % axis_len;
      for (std::size_t k = 0; k < (horizontal ? H : W); ++k) {
        const std::size_t x = horizontal ? line : k;
        const std::size_t y = horizontal ? k : line;
        for (std::size_t c = 0; c < C; ++c) data[((t * W + x) * H + y) * C + c] = foreground;
      }
    }
  }
  for (auto& v : data) {
    if (spec.noise_std > 0.0) v += noise(rng);
    v = static_cast<double>(static_cast<float>(std::clamp(v, 0.0, 1.0)));
  }
  return Tensor(spec.video_shape(), std::move(data));
}

Dataset generate(const SyntheticSpec& spec) {
  spec.validate();
  Dataset out;
  out.spec = spec;
  std::mt19937_64 rng(spec.seed);
  std::uniform_real_distribution<double> fg(0.6, 0.9);
  std::uniform_real_distribution<double> bg(0.05, 0.25);
  const auto n_train = static_cast<std::size_t>(std::lround(kTrainFraction * static_cast<double>(spec.samples_per_class)));
  for (std::size_t label = 0; label < spec.num_classes; ++label) {
    const bool horizontal = label_direction(label) == Direction::Right || label_direction(label) == Direction::Left;
    std::uniform_int_distribution<std::size_t> start(0, (horizontal ? spec.width : spec.height) - 1);
    for (std::size_t i = 0; i < spec.samples_per_class; ++i) {
      const std::size_t s = start(rng);
      const double f = fg(rng);
      const double b = bg(rng);
      const std::uint64_t noise_seed = rng();
      char id[32];
      std::snprintf(id, sizeof id, "c%zu_%04zu", label, i);
      LabeledVideo clip{render_clip(spec, label, s, f, b, noise_seed), label, id};
      (i < n_train ? out.train : out.test).push_back(std::move(clip));
    }
  }
  return out;
}

void check_video(const Tensor& video) {
  if (video.rank() != 4) {
    throw FormatError("video must have rank 4 (T x W x H x C), got " + shape_str(video.shape()));
  }
  if (video.dim(0) == 0) throw FormatError("video has zero frames");
}

void save_video(const std::filesystem::path& path, const Tensor& video) {
  check_video(video);
  save_tensor(path, video);
}

Tensor load_video(const std::filesystem::path& path) {
  Tensor t = load_tensor(path);
  check_video(t);
  return t;
}

std::string spec_to_text(const SyntheticSpec& spec) {
  std::ostringstream os;
  os << "T = " << spec.frames << "\n"
     << "W = " << spec.width << "\n"
     << "H = " << spec.height << "\n"
     << "C = " << spec.channels << "\n"
     << "num_classes = " << spec.num_classes << "\n"
     << "samples_per_class = " << spec.samples_per_class << "\n"
     << "noise_std = " << format_double(spec.noise_std) << "\n"
     << "seed = " << spec.seed << "\n";
  return os.str();
}

void save_dataset(const std::filesystem::path& dir, const Dataset& data) {
  namespace fs = std::filesystem;
  fs::create_directories(dir / "train");
  fs::create_directories(dir / "test");
  std::ofstream manifest(dir / "manifest");
  if (!manifest) throw FormatError("cannot write manifest in " + dir.string());
  for (const char* split : {"train", "test"}) {
    const auto& clips = std::string(split) == "train" ? data.train : data.test;
    for (const auto& clip : clips) {
      const std::string rel = std::string(split) + "/" + clip.id + ".vten";
      save_video(dir / rel, clip.video);
      manifest << clip.id << ' ' << clip.label << ' ' << rel << '\n';
    }
  }
  std::ofstream cfg(dir / "dataset.cfg");
  cfg << spec_to_text(data.spec);
}

Dataset load_dataset(const std::filesystem::path& dir) {
  Dataset out;
  if (std::filesystem::exists(dir / "dataset.cfg")) {
    const auto cfg = KeyValueConfig::load(dir / "dataset.cfg");
    out.spec.frames = cfg.get_size("T", out.spec.frames);
    out.spec.width = cfg.get_size("W", out.spec.width);
    out.spec.height = cfg.get_size("H", out.spec.height);
    out.spec.channels = cfg.get_size("C", out.spec.channels);
    out.spec.num_classes = cfg.get_size("num_classes", out.spec.num_classes);
    out.spec.samples_per_class = cfg.get_size("samples_per_class", out.spec.samples_per_class);
    out.spec.noise_std = cfg.get_double("noise_std", out.spec.noise_std);
    out.spec.seed = static_cast<std::uint64_t>(cfg.get_int("seed", static_cast<std::int64_t>(out.spec.seed)));
  }
  std::ifstream manifest(dir / "manifest");
  if (!manifest) throw FormatError("no manifest in " + dir.string());
  std::string line;
  int lineno = 0;
  while (std::getline(manifest, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream ls(line);
    LabeledVideo clip;
    std::string rel;
    if (!(ls >> clip.id >> clip.label >> rel)) {
      throw FormatError("manifest line " + std::to_string(lineno) + ": expected 'id label path'");
    }
    if (clip.label >= out.spec.num_classes) {
      throw FormatError("manifest line " + std::to_string(lineno) + ": label out of range");
    }
    clip.video = load_video(dir / rel);
    if (clip.video.shape() != out.spec.video_shape()) {
      throw FormatError("clip " + clip.id + " has shape " + shape_str(clip.video.shape()) + ", expected " +
                        shape_str(out.spec.video_shape()));
    }
    (rel.rfind("test/", 0) == 0 ? out.test : out.train).push_back(std::move(clip));
  }
  return out;
}

}  // namespace vidattack
