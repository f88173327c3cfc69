#pragma once

// The closed operator set used by the network and the losses.
//
// Tensors are (C, Z, Y, X) with X fastest. There is no broadcasting:
// elementwise operators require identical shapes.

#include "mirrba/ad/tape.hpp"

namespace mirrba::ad {

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b);
template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b);
template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b);
// Multiplication by a constant.
template <typename T>
Var<T> scale(const Var<T>& a, T factor);

// Reductions to a scalar; accumulation is 64-bit.
template <typename T>
Var<T> sum(const Var<T>& a);
template <typename T>
Var<T> mean(const Var<T>& a);

// x if x >= 0 else slope * x; slope in (0, 1).
template <typename T>
Var<T> leaky_relu(const Var<T>& x, T slope);

// 3D convolution. input (C_in, Z, Y, X), weight (C_out, C_in, k, k, k) with k
// odd, bias (C_out). Zero padding (k - 1) / 2; stride 1 or 2. Output extent
// per axis is ceil(extent / stride).
template <typename T>
Var<T> conv3(const Var<T>& input, const Var<T>& weight, const Var<T>& bias,
             int stride);

// Adjoint of a stride-2 conv3 with the same weight tensor. input (C_a, Z, Y,
// X), weight (C_a, C_b, k, k, k), output (C_b, 2Z, 2Y, 2X). Padding is
// (k - 1) / 2, so k = 2 gives the plain non-overlapping transpose.
template <typename T>
Var<T> conv3_transpose(const Var<T>& input, const Var<T>& weight, int stride);

// 2x2x2 max pooling; spatial extents must be even. Gradient goes to the
// first maximum in window order.
template <typename T>
Var<T> max_pool2(const Var<T>& input);

// Corner-aligned trilinear resampling by factor 0.25, 0.5 or 2. Output
// extent is round(extent * factor), at least 1.
template <typename T>
Var<T> trilinear_resize(const Var<T>& input, double factor);

int resized_extent(int extent, double factor);

}  // namespace mirrba::ad
