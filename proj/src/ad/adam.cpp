#include "mirrba/ad/adam.hpp"

#include <cmath>
#include <string>

#include "mirrba/error.hpp"

namespace mirrba::ad {

AdamState make_adam(double lr, double beta1, double beta2, double epsilon) {
  if (!(lr > 0.0)) throw ArgumentError("adam: lr must be > 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    throw ArgumentError("adam: betas must lie in [0, 1)");
  }
  if (!(epsilon > 0.0)) throw ArgumentError("adam: epsilon must be > 0");
  AdamState s;
  s.lr = lr;
  s.beta1 = beta1;
  s.beta2 = beta2;
  s.epsilon = epsilon;
  return s;
}

void adam_step(std::span<const std::span<float>> params,
               std::span<const std::span<const float>> grads, AdamState& state) {
  if (params.size() != grads.size()) {
    throw ShapeError("adam: " + std::to_string(params.size()) + " parameters but " +
                     std::to_string(grads.size()) + " gradients");
  }
  if (state.first_moment.empty()) {
    for (const auto& p : params) {
      state.first_moment.emplace_back(p.size(), 0.0);
      state.second_moment.emplace_back(p.size(), 0.0);
    }
  }
  if (state.first_moment.size() != params.size()) {
    throw ShapeError("adam: parameter list changed between steps");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i].size() != grads[i].size() ||
        params[i].size() != state.first_moment[i].size()) {
      throw ShapeError("adam: size mismatch on parameter " + std::to_string(i));
    }
  }

  ++state.step_count;
  const double t = static_cast<double>(state.step_count);
  const double c1 = 1.0 - std::pow(state.beta1, t);
  const double c2 = 1.0 - std::pow(state.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& m = state.first_moment[i];
    auto& v = state.second_moment[i];
    const auto g = grads[i];
    const auto p = params[i];
    for (std::size_t j = 0; j < p.size(); ++j) {
      const double gj = g[j];
      m[j] = state.beta1 * m[j] + (1.0 - state.beta1) * gj;
      v[j] = state.beta2 * v[j] + (1.0 - state.beta2) * gj * gj;
      const double update = state.lr * (m[j] / c1) / (std::sqrt(v[j] / c2) + state.epsilon);
      p[j] = static_cast<float>(p[j] - update);
    }
  }
}

}  // namespace mirrba::ad
