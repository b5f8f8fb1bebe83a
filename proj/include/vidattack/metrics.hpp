#pragma once

#include <span>
#include <vector>

#include "vidattack/tensor.hpp"

namespace vidattack {

// MAP values are reported in 0-255 pixel units; tensors hold pixels in [0, 1].
inline constexpr double kReportPixelScale = 255.0;
// A frame whose MAP (0-1 units) is below this counts as clean.
inline constexpr double kZeroThreshold = 1e-4;

struct MetricSet {
  double fooling_rate = 0.0;
  double perceptibility = 0.0;
  double sparsity = 0.0;
  std::vector<double> per_frame_map;
};

// successes / total. Throws on an empty list.
double fooling_rate(const std::vector<bool>& successes);

// Mean absolute perturbation over every pixel of E (per-channel magnitudes
// averaged, so a uniform delta on each channel reports delta), times scale.
double map_perceptibility(const Tensor& perturbation, double pixel_scale = kReportPixelScale);

// MAP restricted to each frame (axis 0).
std::vector<double> per_frame_map(const Tensor& perturbation, double pixel_scale = 1.0);

// Fraction of frames whose MAP is below zero_threshold.
double sparsity(std::span<const double> frame_map, double zero_threshold = kZeroThreshold);

// Spearman rank correlation; ties receive average ranks.
double spearman(std::span<const double> x, std::span<const double> y);

}  // namespace vidattack
