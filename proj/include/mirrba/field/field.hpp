#pragma once

// Spatial transformer, scaling-and-squaring and Jacobian utilities.
//
// Displacements are in voxel units: W(x) = M(x + phi(x)). Samples outside
// the grid are clamped to the boundary. Each operation exists as a plain
// function on Volume/VectorField and as a tape operation on (C, Z, Y, X)
// tensors; both share one kernel.

#include "mirrba/ad/tape.hpp"
#include "mirrba/field/volume.hpp"

namespace mirrba {

inline constexpr int kDefaultSquaringSteps = 7;

Volume warp(const Volume& moving, const VectorField& phi);

// exp(v) by scaling and squaring: phi = v / 2^steps, then phi = phi o phi.
VectorField exp_velocity(const VectorField& velocity,
                         int squaring_steps = kDefaultSquaringSteps);

// result(x) = inner(x) + outer(x + inner(x)).
VectorField compose(const VectorField& outer, const VectorField& inner);

// Corner-aligned trilinear upsampling by 2 with vectors scaled by 2.
VectorField upsample_field(const VectorField& phi, int factor = 2);

// Trilinear resize of a volume by 0.25, 0.5 or 2 (corner aligned).
Volume resize_volume(const Volume& v, double factor);

// det(I + grad phi) per voxel; central differences inside, one-sided at the
// boundary.
Volume jacobian_determinant(const VectorField& phi);

namespace kernels {

// out[c] = src[c](x + disp(x)) for every channel of src.
template <typename T>
void sample_forward(const Grid& g, int channels, const T* src, const T* disp, T* out);

// Accumulates gradients of sample_forward into gsrc and/or gdisp (null to skip).
template <typename T>
void sample_backward(const Grid& g, int channels, const T* src, const T* disp,
                     const T* gout, T* gsrc, T* gdisp);

template <typename T>
void jacobian_det(const Grid& g, const T* phi, double* det);

// gphi += d(sum_v gdet[v] * det[v]) / d phi.
template <typename T>
void jacobian_det_backward(const Grid& g, const T* phi, const double* gdet, T* gphi);

}  // namespace kernels

namespace ad {

// src (C, Z, Y, X) sampled at x + disp(x); disp is (3, Z, Y, X).
template <typename T>
Var<T> sample(const Var<T>& src, const Var<T>& disp);

template <typename T>
Var<T> compose(const Var<T>& outer, const Var<T>& inner);

template <typename T>
Var<T> exp_velocity(const Var<T>& velocity, int squaring_steps = kDefaultSquaringSteps);

template <typename T>
Var<T> upsample_field(const Var<T>& phi);

}  // namespace ad

}  // namespace mirrba
