#pragma once

// Registration objective: S(F, W) + l_smooth * R_smooth(phi) + l_diffeo * R_diffeo(phi)
// with S the negated local NCC. Penalties act on the displacement.

#include "mirrba/ad/tape.hpp"
#include "mirrba/field/volume.hpp"

namespace mirrba {

inline constexpr double kNccVarianceGuard = 1e-5;

struct LossWeights {
  double lambda_smooth = 0.1;
  double lambda_diffeo = 1.0;
  int ncc_window = 7;

  void validate() const;
};

struct LossBreakdown {
  double total = 0.0;
  double ncc = 0.0;
  double smooth = 0.0;
  double diffeo = 0.0;
};

// -mean_x NCC_x(f, w) over window^3 neighborhoods clipped to the grid.
double ncc_dissimilarity(const Volume& fixed, const Volume& warped, int window);

// Mean of squared forward differences: per axis averaged over valid sites and
// components, then averaged over the three axes.
double smoothness_penalty(const VectorField& phi);

// mean_x max(0, -det J(x))^2.
double negative_jacobian_penalty(const VectorField& phi);

// Exponentiates velocities first; displacements are used as given.
LossBreakdown total_loss(const Volume& fixed, const Volume& moving, const VectorField& field,
                         const LossWeights& weights, int squaring_steps = 7);

namespace ad {

// fixed and warped are (1, Z, Y, X); differentiable w.r.t. warped.
template <typename T>
Var<T> ncc_dissimilarity(const Var<T>& fixed, const Var<T>& warped, int window);

template <typename T>
Var<T> smoothness_penalty(const Var<T>& phi);

template <typename T>
Var<T> negative_jacobian_penalty(const Var<T>& phi);

template <typename T>
struct LossTerms {
  Var<T> total;
  Var<T> ncc;
  Var<T> smooth;
  Var<T> diffeo;
};

// W = moving sampled at x + phi(x); phi is a displacement (3, Z, Y, X).
template <typename T>
LossTerms<T> total_loss(const Var<T>& fixed, const Var<T>& moving, const Var<T>& phi,
                        const LossWeights& weights);

}  // namespace ad

}  // namespace mirrba
