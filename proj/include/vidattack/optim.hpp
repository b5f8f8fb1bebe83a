#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace vidattack {

struct AdamConfig {
  double lr = 1e-2;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// First/second moment estimates for one parameter buffer.
struct AdamState {
  explicit AdamState(std::size_t n = 0) : m(n, 0.0), v(n, 0.0) {}
  std::vector<double> m;
  std::vector<double> v;
  std::size_t steps = 0;
};

// One bias-corrected Adam update of `params` in place.
void adam_step(AdamState& state, std::span<double> params, std::span<const double> grad, const AdamConfig& cfg);

}  // namespace vidattack
