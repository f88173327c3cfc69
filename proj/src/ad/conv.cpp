#include <algorithm>

#include <Eigen/Core>

#include "mirrba/ad/ops.hpp"

namespace mirrba::ad {

namespace {

// Geometry of a strided convolution from an input grid (cin, z, y, x) to an
// output grid (cout, zo, yo, xo): out[o] = sum_k w[k] * in[o * s + k - p].
struct ConvGeom {
  int cin, cout, k, s, p;
  int z, y, x;
  int zo, yo, xo;

  std::size_t in_index(int c, int iz, int iy) const {
    return ((static_cast<std::size_t>(c) * z + iz) * y + iy) * x;
  }
  std::size_t out_index(int c, int oz, int oy) const {
    return ((static_cast<std::size_t>(c) * zo + oz) * yo + oy) * xo;
  }
  std::size_t w_index(int co, int ci, int kz, int ky) const {
    return ((static_cast<std::size_t>(co) * cin + ci) * k + kz) * k * k +
           static_cast<std::size_t>(ky) * k;
  }
  // Output positions o along an axis of input extent n, output extent no,
  // with 0 <= o * s + tap - p < n.
  void range(int tap, int n, int no, int& lo, int& hi) const {
    const int a = p - tap;
    lo = a > 0 ? (a + s - 1) / s : 0;
    const int b = n - 1 - tap + p;
    hi = b >= 0 ? std::min(no, b / s + 1) : 0;
  }
};

// Output voxels per im2col slab; bounds the column buffer to a few MB.
constexpr std::size_t kSlabVoxels = 8192;

template <typename T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>;
template <typename T>
using StridedMap = Eigen::Map<Mat<T>, 0, Eigen::OuterStride<>>;
template <typename T>
using ConstStridedMap = Eigen::Map<const Mat<T>, 0, Eigen::OuterStride<>>;

// Output planes [oz0, oz1) of one im2col slab.
struct Slab {
  int oz0, oz1;
  std::size_t voxels(const ConvGeom& g) const {
    return static_cast<std::size_t>(oz1 - oz0) * g.yo * g.xo;
  }
};

std::vector<Slab> slabs(const ConvGeom& g) {
  const std::size_t plane = static_cast<std::size_t>(g.yo) * g.xo;
  const int step = static_cast<int>(std::max<std::size_t>(1, kSlabVoxels / plane));
  std::vector<Slab> out;
  for (int oz = 0; oz < g.zo; oz += step) out.push_back({oz, std::min(g.zo, oz + step)});
  return out;
}

// cols (voxels x cin*k^3, column-major): column j holds input tap j for every
// output voxel of the slab, zero where the tap falls in the padding.
template <typename T>
void im2col(const ConvGeom& g, const Slab& sl, const T* in, T* cols) {
  const std::size_t nv = sl.voxels(g);
  int j = 0;
  for (int ci = 0; ci < g.cin; ++ci) {
    for (int kz = 0; kz < g.k; ++kz) {
      for (int ky = 0; ky < g.k; ++ky) {
        for (int kx = 0; kx < g.k; ++kx, ++j) {
          T* col = cols + static_cast<std::size_t>(j) * nv;
          int lo, hi;
          g.range(kx, g.x, g.xo, lo, hi);
          const int shift = kx - g.p;
          std::size_t r = 0;
          for (int oz = sl.oz0; oz < sl.oz1; ++oz) {
            const int iz = oz * g.s + kz - g.p;
            for (int oy = 0; oy < g.yo; ++oy, r += g.xo) {
              const int iy = oy * g.s + ky - g.p;
              T* dst = col + r;
              if (iz < 0 || iz >= g.z || iy < 0 || iy >= g.y || hi <= lo) {
                std::fill(dst, dst + g.xo, T(0));
                continue;
              }
              const T* irow = in + g.in_index(ci, iz, iy);
              std::fill(dst, dst + lo, T(0));
              if (g.s == 1) {
                std::copy(irow + lo + shift, irow + hi + shift, dst + lo);
              } else {
                for (int ox = lo; ox < hi; ++ox) dst[ox] = irow[ox * g.s + shift];
              }
              std::fill(dst + hi, dst + g.xo, T(0));
            }
          }
        }
      }
    }
  }
}

// Adjoint of im2col: scatter-adds the columns back onto the input grid.
template <typename T>
void col2im(const ConvGeom& g, const Slab& sl, const T* cols, T* gin) {
  const std::size_t nv = sl.voxels(g);
  int j = 0;
  for (int ci = 0; ci < g.cin; ++ci) {
    for (int kz = 0; kz < g.k; ++kz) {
      for (int ky = 0; ky < g.k; ++ky) {
        for (int kx = 0; kx < g.k; ++kx, ++j) {
          const T* col = cols + static_cast<std::size_t>(j) * nv;
          int lo, hi;
          g.range(kx, g.x, g.xo, lo, hi);
          if (hi <= lo) continue;
          const int shift = kx - g.p;
          std::size_t r = 0;
          for (int oz = sl.oz0; oz < sl.oz1; ++oz) {
            const int iz = oz * g.s + kz - g.p;
            for (int oy = 0; oy < g.yo; ++oy, r += g.xo) {
              const int iy = oy * g.s + ky - g.p;
              if (iz < 0 || iz >= g.z || iy < 0 || iy >= g.y) continue;
              T* irow = gin + g.in_index(ci, iz, iy);
              const T* src = col + r;
              if (g.s == 1) {
                for (int ox = lo; ox < hi; ++ox) irow[ox + shift] += src[ox];
              } else {
                for (int ox = lo; ox < hi; ++ox) irow[ox * g.s + shift] += src[ox];
              }
            }
          }
        }
      }
    }
  }
}

std::size_t taps(const ConvGeom& g) {
  return static_cast<std::size_t>(g.cin) * g.k * g.k * g.k;
}

std::size_t out_plane(const ConvGeom& g) {
  return static_cast<std::size_t>(g.zo) * g.yo * g.xo;
}

template <typename T>
void conv_forward(const ConvGeom& g, const T* in, const T* w, const T* bias, T* out) {
  const std::size_t kk = taps(g);
  const std::size_t plane = out_plane(g);
  const Eigen::Map<const Mat<T>> wm(w, static_cast<Eigen::Index>(kk), g.cout);
  std::vector<T> cols;
  for (const Slab& sl : slabs(g)) {
    const std::size_t nv = sl.voxels(g);
    cols.resize(nv * kk);
    im2col(g, sl, in, cols.data());
    const Eigen::Map<const Mat<T>> cm(cols.data(), static_cast<Eigen::Index>(nv),
                                      static_cast<Eigen::Index>(kk));
    StridedMap<T> om(out + g.out_index(0, sl.oz0, 0), static_cast<Eigen::Index>(nv), g.cout,
                     Eigen::OuterStride<>(static_cast<Eigen::Index>(plane)));
    om.noalias() = cm * wm;
    if (bias) {
      for (int co = 0; co < g.cout; ++co) om.col(co).array() += bias[co];
    }
  }
}

// gin += d(out)/d(in)^T gout
template <typename T>
void conv_input_grad(const ConvGeom& g, const T* gout, const T* w, T* gin) {
  const std::size_t kk = taps(g);
  const std::size_t plane = out_plane(g);
  const Eigen::Map<const Mat<T>> wm(w, static_cast<Eigen::Index>(kk), g.cout);
  Mat<T> cols;
  for (const Slab& sl : slabs(g)) {
    const std::size_t nv = sl.voxels(g);
    const ConstStridedMap<T> gm(gout + g.out_index(0, sl.oz0, 0),
                                static_cast<Eigen::Index>(nv), g.cout,
                                Eigen::OuterStride<>(static_cast<Eigen::Index>(plane)));
    cols.noalias() = gm * wm.transpose();
    col2im(g, sl, cols.data(), gin);
  }
}

// gw += im2col(in)^T gout, accumulated in 64-bit across slabs.
template <typename T>
void conv_weight_grad(const ConvGeom& g, const T* gout, const T* in,
                      std::vector<double>& gw) {
  const std::size_t kk = taps(g);
  const std::size_t plane = out_plane(g);
  std::vector<T> cols;
  Mat<T> partial;
  for (const Slab& sl : slabs(g)) {
    const std::size_t nv = sl.voxels(g);
    cols.resize(nv * kk);
    im2col(g, sl, in, cols.data());
    const Eigen::Map<const Mat<T>> cm(cols.data(), static_cast<Eigen::Index>(nv),
                                      static_cast<Eigen::Index>(kk));
    const ConstStridedMap<T> gm(gout + g.out_index(0, sl.oz0, 0),
                                static_cast<Eigen::Index>(nv), g.cout,
                                Eigen::OuterStride<>(static_cast<Eigen::Index>(plane)));
    partial.noalias() = cm.transpose() * gm;
    const T* p = partial.data();
    for (std::size_t i = 0; i < gw.size(); ++i) gw[i] += static_cast<double>(p[i]);
  }
}

std::string axis_name(int axis) {
  static const char* names[] = {"channel", "z", "y", "x"};
  return names[axis];
}

void check_kernel(const Shape& w, const char* op) {
  if (w.size() != 5 || w[2] != w[3] || w[3] != w[4] || w[2] < 1) {
    throw ShapeError(std::string(op) + ": weight must be (C_out, C_in, k, k, k), got " +
                     to_string(w));
  }
}

}  // namespace

template <typename T>
Var<T> conv3(const Var<T>& input, const Var<T>& weight, const Var<T>& bias,
             int stride) {
  const Shape& is = input.shape();
  const Shape& ws = weight.shape();
  if (is.size() != 4) {
    throw ShapeError("conv3: input must be (C, Z, Y, X), got " + to_string(is));
  }
  check_kernel(ws, "conv3");
  if (ws[2] % 2 == 0) {
    throw ShapeError("conv3: kernel size must be odd, got " + std::to_string(ws[2]));
  }
  if (ws[1] != is[0]) {
    throw ShapeError("conv3: " + axis_name(0) + " axis mismatch, input has " +
                     std::to_string(is[0]) + " channels, weight expects " +
                     std::to_string(ws[1]));
  }
  if (bias.shape() != Shape{ws[0]}) {
    throw ShapeError("conv3: bias must have shape (" + std::to_string(ws[0]) +
                     "), got " + to_string(bias.shape()));
  }
  if (stride != 1 && stride != 2) {
    throw ArgumentError("conv3: stride must be 1 or 2");
  }
  ConvGeom g{};
  g.cin = is[0];
  g.cout = ws[0];
  g.k = ws[2];
  g.s = stride;
  g.p = (g.k - 1) / 2;
  g.z = is[1];
  g.y = is[2];
  g.x = is[3];
  g.zo = (g.z + stride - 1) / stride;
  g.yo = (g.y + stride - 1) / stride;
  g.xo = (g.x + stride - 1) / stride;

  Shape os{g.cout, g.zo, g.yo, g.xo};
  std::vector<T> out(numel(os));
  conv_forward(g, input.value().data(), weight.value().data(),
               bias.value().data(), out.data());

  const int ii = input.id();
  const int iw = weight.id();
  const int ib = bias.id();
  return input.tape().record(
      std::move(os), std::move(out), {input, weight, bias},
      [g, ii, iw, ib](Tape<T>& t, int self) {
        const T* gout = t.grad(self).data();
        if (t.requires_grad(ii)) {
          conv_input_grad(g, gout, t.value(iw).data(), t.grad_buffer(ii).data());
        }
        if (t.requires_grad(iw)) {
          std::vector<double> gw(t.value(iw).size(), 0.0);
          conv_weight_grad(g, gout, t.value(ii).data(), gw);
          auto dst = t.grad_buffer(iw);
          for (std::size_t i = 0; i < gw.size(); ++i) dst[i] += static_cast<T>(gw[i]);
        }
        if (t.requires_grad(ib)) {
          auto dst = t.grad_buffer(ib);
          const std::size_t plane =
              static_cast<std::size_t>(g.zo) * g.yo * g.xo;
          for (int co = 0; co < g.cout; ++co) {
            double acc = 0.0;
            for (std::size_t i = 0; i < plane; ++i) acc += gout[co * plane + i];
            dst[co] += static_cast<T>(acc);
          }
        }
      });
}

template <typename T>
Var<T> conv3_transpose(const Var<T>& input, const Var<T>& weight, int stride) {
  const Shape& is = input.shape();
  const Shape& ws = weight.shape();
  if (is.size() != 4) {
    throw ShapeError("conv3_transpose: input must be (C, Z, Y, X), got " +
                     to_string(is));
  }
  check_kernel(ws, "conv3_transpose");
  if (ws[0] != is[0]) {
    throw ShapeError("conv3_transpose: " + axis_name(0) + " axis mismatch, input has " +
                     std::to_string(is[0]) + " channels, weight expects " +
                     std::to_string(ws[0]));
  }
  if (stride != 2) {
    throw ArgumentError("conv3_transpose: stride must be 2");
  }
  // Geometry of the forward convolution this operator is the adjoint of.
  ConvGeom g{};
  g.cout = ws[0];
  g.cin = ws[1];
  g.k = ws[2];
  g.s = stride;
  g.p = (g.k - 1) / 2;
  g.zo = is[1];
  g.yo = is[2];
  g.xo = is[3];
  g.z = is[1] * stride;
  g.y = is[2] * stride;
  g.x = is[3] * stride;

  Shape os{g.cin, g.z, g.y, g.x};
  std::vector<T> out(numel(os), T(0));
  conv_input_grad(g, input.value().data(), weight.value().data(), out.data());

  const int ii = input.id();
  const int iw = weight.id();
  return input.tape().record(
      std::move(os), std::move(out), {input, weight},
      [g, ii, iw](Tape<T>& t, int self) {
        const T* gout = t.grad(self).data();
        if (t.requires_grad(ii)) {
          std::vector<T> tmp(t.value(ii).size());
          conv_forward<T>(g, gout, t.value(iw).data(), nullptr, tmp.data());
          auto dst = t.grad_buffer(ii);
          for (std::size_t i = 0; i < tmp.size(); ++i) dst[i] += tmp[i];
        }
        if (t.requires_grad(iw)) {
          std::vector<double> gw(t.value(iw).size(), 0.0);
          conv_weight_grad(g, t.value(ii).data(), gout, gw);
          auto dst = t.grad_buffer(iw);
          for (std::size_t i = 0; i < gw.size(); ++i) dst[i] += static_cast<T>(gw[i]);
        }
      });
}

template Var<float> conv3(const Var<float>&, const Var<float>&, const Var<float>&, int);
template Var<double> conv3(const Var<double>&, const Var<double>&, const Var<double>&,
                           int);
template Var<float> conv3_transpose(const Var<float>&, const Var<float>&, int);
template Var<double> conv3_transpose(const Var<double>&, const Var<double>&, int);

}  // namespace mirrba::ad
