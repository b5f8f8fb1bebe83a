#include "vidattack/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace vidattack {

double fooling_rate(const std::vector<bool>& successes) {
  if (successes.empty()) throw Error("fooling_rate of an empty result list");
  const auto hits = std::count(successes.begin(), successes.end(), true);
  return static_cast<double>(hits) / static_cast<double>(successes.size());
}

double map_perceptibility(const Tensor& perturbation, double pixel_scale) {
  if (perturbation.numel() == 0) return 0.0;
  double total = 0.0;
  for (double v : perturbation.data()) total += std::abs(v);
  return pixel_scale * total / static_cast<double>(perturbation.numel());
}

std::vector<double> per_frame_map(const Tensor& perturbation, double pixel_scale) {
  if (perturbation.rank() == 0) throw ShapeError("per_frame_map needs a frame axis");
  const std::size_t T = perturbation.dim(0);
  std::vector<double> out(T, 0.0);
  if (T == 0) return out;
  const std::size_t per = perturbation.numel() / T;
  const auto d = perturbation.data();
  for (std::size_t t = 0; t < T; ++t) {
    double total = 0.0;
    for (std::size_t i = 0; i < per; ++i) total += std::abs(d[t * per + i]);
    out[t] = per == 0 ? 0.0 : pixel_scale * total / static_cast<double>(per);
  }
  return out;
}

double sparsity(std::span<const double> frame_map, double zero_threshold) {
  if (frame_map.empty()) throw Error("sparsity of a zero-frame perturbation");
  const auto clean = std::count_if(frame_map.begin(), frame_map.end(), [&](double m) { return m < zero_threshold; });
  return static_cast<double>(clean) / static_cast<double>(frame_map.size());
}

namespace {

std::vector<double> ranks(std::span<const double> v) {
  std::vector<std::size_t> idx(v.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> r(v.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
    const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) r[idx[k]] = avg;
    i = j + 1;
  }
  return r;
}

}  // namespace

double spearman(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 2) throw Error("spearman needs two equal-length series of length >= 2");
  const auto rx = ranks(x), ry = ranks(y);
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / n;
  const double my = std::accumulate(ry.begin(), ry.end(), 0.0) / n;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) return 0.0;
  return sxy / std::sqrt(sxx * syy);
}

}  // namespace vidattack
