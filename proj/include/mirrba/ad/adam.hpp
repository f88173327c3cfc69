#pragma once

#include <span>
#include <vector>

namespace mirrba::ad {

// Bias-corrected Adam over a fixed list of parameter buffers.
struct AdamState {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  long step_count = 0;
  // One buffer per parameter tensor; sized on the first step.
  std::vector<std::vector<double>> first_moment;
  std::vector<std::vector<double>> second_moment;
};

AdamState make_adam(double lr, double beta1 = 0.9, double beta2 = 0.999,
                    double epsilon = 1e-8);

// Applies one update in place. params[i] and grads[i] must have equal sizes,
// and the parameter list must keep its layout across calls.
void adam_step(std::span<const std::span<float>> params,
               std::span<const std::span<const float>> grads, AdamState& state);

}  // namespace mirrba::ad
