#pragma once

// Seeded synthetic motion clips.
//
// Every clip shows one striped object sliding with wrap-around at one pixel
// per frame. Label = shape * 4 + direction, with directions
// {right, left, down, up}. A single frame (and the unordered bag of frames)
// reveals shape, axis and position, but not whether the object moves right
// or left (or down or up): start positions are uniform, so each direction
// pair label ^ 1 is only separable from frame order.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "vidattack/tensor.hpp"

namespace vidattack {

struct SyntheticSpec {
  std::size_t frames = 40;  // T
  std::size_t width = 16;   // W
  std::size_t height = 16;  // H
  std::size_t channels = 1; // C
  std::size_t num_classes = 8;
  std::size_t samples_per_class = 48;
  double noise_std = 0.02;
  std::uint64_t seed = 1;

  void validate() const;
  Shape video_shape() const { return {frames, width, height, channels}; }
};

struct LabeledVideo {
  Tensor video;  // [T, W, H, C], values in [0, 1]
  std::size_t label = 0;
  std::string id;
};

struct Dataset {
  SyntheticSpec spec;
  std::vector<LabeledVideo> train;
  std::vector<LabeledVideo> test;
};

enum class Direction { Right = 0, Left = 1, Down = 2, Up = 3 };

inline Direction label_direction(std::size_t label) { return static_cast<Direction>(label % 4); }
inline std::size_t label_shape(std::size_t label) { return label / 4; }
// The class with the same object moving the opposite way.
inline std::size_t paired_label(std::size_t label) { return label ^ 1U; }

// Renders one clip; deterministic in (label, start, fg, bg, noise draws).
Tensor render_clip(const SyntheticSpec& spec, std::size_t label, std::size_t start, double foreground,
                   double background, std::uint64_t noise_seed);

// 70/30 stratified split, deterministic per seed.
Dataset generate(const SyntheticSpec& spec);

// VTEN rank-4 clip files.
void save_video(const std::filesystem::path& path, const Tensor& video);
Tensor load_video(const std::filesystem::path& path);
void check_video(const Tensor& video);

// Directory layout: `manifest` (one "id label relative/path.vten" per line),
// `dataset.cfg` (generator settings), train/ and test/ clip files.
void save_dataset(const std::filesystem::path& dir, const Dataset& data);
Dataset load_dataset(const std::filesystem::path& dir);

// Fixed-order key=value text, the same flat format the CLI config uses.
std::string spec_to_text(const SyntheticSpec& spec);

}  // namespace vidattack
