#pragma once

// Central finite-difference verification of tape gradients.
//
// The analytic gradient comes from the production 32-bit path; the finite
// differences re-evaluate the same graph in 64-bit.

#include <algorithm>
#include <cmath>
#include <vector>

#include "mirrba/ad/ops.hpp"

namespace mirrba::ad {

struct GradCheckInput {
  Shape shape;
  std::vector<double> values;
  bool differentiate = true;
};

struct GradCheckResult {
  double relative_error = 0.0;
  double analytic_norm = 0.0;
  std::size_t evaluations = 0;
};

namespace detail {

template <typename T, typename Fn>
Var<T> build(Tape<T>& tape, Fn& fn, const std::vector<GradCheckInput>& inputs,
             const std::vector<double>* override_values, std::size_t override_index,
             std::vector<Var<T>>& leaves) {
  leaves.clear();
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const auto& src =
        (override_values && i == override_index) ? *override_values : inputs[i].values;
    std::vector<T> vals(src.begin(), src.end());
    leaves.push_back(tape.leaf(inputs[i].shape, std::move(vals), inputs[i].differentiate));
  }
  return fn(tape, leaves);
}

}  // namespace detail

// fn is a generic callable (Tape<T>&, const std::vector<Var<T>>&) -> scalar
// Var<T>, invoked with T = float and T = double. The relative error is
// |g_analytic - g_fd| / max(|g_analytic|, |g_fd|) over all differentiated
// inputs, with Euclidean norms.
template <typename Fn>
GradCheckResult check_gradient(Fn&& fn, const std::vector<GradCheckInput>& inputs,
                               double step = 1e-5) {
  GradCheckResult result;
  std::vector<double> analytic;
  {
    Tape<float> tape;
    std::vector<Var<float>> leaves;
    auto loss = detail::build(tape, fn, inputs, nullptr, 0, leaves);
    tape.backward(loss);
    for (std::size_t i = 0; i < inputs.size(); ++i) {
      if (!inputs[i].differentiate) continue;
      for (float g : leaves[i].grad()) analytic.push_back(g);
    }
  }
  std::vector<double> numeric;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    if (!inputs[i].differentiate) continue;
    std::vector<double> perturbed = inputs[i].values;
    for (std::size_t j = 0; j < perturbed.size(); ++j) {
      const double x0 = perturbed[j];
      double f[2];
      for (int side = 0; side < 2; ++side) {
        perturbed[j] = x0 + (side == 0 ? step : -step);
        Tape<double> tape;
        std::vector<Var<double>> leaves;
        f[side] = detail::build(tape, fn, inputs, &perturbed, i, leaves).item();
        ++result.evaluations;
      }
      perturbed[j] = x0;
      numeric.push_back((f[0] - f[1]) / (2.0 * step));
    }
  }
  double diff = 0.0, na = 0.0, nn = 0.0;
  for (std::size_t k = 0; k < analytic.size(); ++k) {
    diff += (analytic[k] - numeric[k]) * (analytic[k] - numeric[k]);
    na += analytic[k] * analytic[k];
    nn += numeric[k] * numeric[k];
  }
  result.analytic_norm = std::sqrt(na);
  const double denom = std::max({std::sqrt(na), std::sqrt(nn), 1e-12});
  result.relative_error = std::sqrt(diff) / denom;
  return result;
}

// Reduces a tensor to a scalar through a fixed weighting, so that every
// output element contributes to the checked gradient.
template <typename T>
Var<T> project(const Var<T>& out, const std::vector<double>& weights) {
  std::vector<T> w(weights.begin(), weights.end());
  auto wv = out.tape().constant(out.shape(), std::move(w));
  return sum(mul(out, wv));
}

}  // namespace mirrba::ad
