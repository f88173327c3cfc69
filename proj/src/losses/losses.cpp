#include "mirrba/losses/losses.hpp"

#include <algorithm>
#include <cmath>

#include "mirrba/ad/ops.hpp"
#include "mirrba/field/field.hpp"

namespace mirrba {

void LossWeights::validate() const {
  if (!(std::isfinite(lambda_smooth) && lambda_smooth >= 0.0) ||
      !(std::isfinite(lambda_diffeo) && lambda_diffeo >= 0.0)) {
    throw ArgumentError("loss weights must be finite and non-negative");
  }
  if (ncc_window < 1 || ncc_window % 2 == 0) {
    throw ArgumentError("ncc_window must be an odd integer >= 1, got " +
                        std::to_string(ncc_window));
  }
}

namespace {

// In-place sum over a (2r+1)^3 window clipped to the grid, separable.
void box_sum(const Grid& g, int radius, std::vector<double>& v) {
  std::vector<double> line, prefix;
  const int n[3] = {g.nx, g.ny, g.nz};
  const std::size_t stride[3] = {1, static_cast<std::size_t>(g.nx),
                                 static_cast<std::size_t>(g.nx) * g.ny};
  for (int axis = 0; axis < 3; ++axis) {
    const int len = n[axis];
    line.resize(len);
    prefix.resize(len + 1);
    const int a1 = (axis + 1) % 3, a2 = (axis + 2) % 3;
    for (int j = 0; j < n[a2]; ++j) {
      for (int i = 0; i < n[a1]; ++i) {
        const std::size_t base = i * stride[a1] + j * stride[a2];
        prefix[0] = 0.0;
        for (int k = 0; k < len; ++k) prefix[k + 1] = prefix[k] + v[base + k * stride[axis]];
        for (int k = 0; k < len; ++k) {
          const int lo = std::max(0, k - radius);
          const int hi = std::min(len, k + radius + 1);
          line[k] = prefix[hi] - prefix[lo];
        }
        for (int k = 0; k < len; ++k) v[base + k * stride[axis]] = line[k];
      }
    }
  }
}

// Number of grid voxels inside each clipped window.
std::vector<double> window_counts(const Grid& g, int radius) {
  std::vector<double> c(g.size(), 1.0);
  box_sum(g, radius, c);
  return c;
}

struct NccStats {
  std::vector<double> mean_f, mean_w, cross, var_f, var_w;
};

template <typename T>
NccStats ncc_stats(const Grid& g, const T* f, const T* w, int radius) {
  const std::size_t n = g.size();
  std::vector<double> sf(n), sw(n), sff(n), sww(n), sfw(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double a = f[i], b = w[i];
    sf[i] = a;
    sw[i] = b;
    sff[i] = a * a;
    sww[i] = b * b;
    sfw[i] = a * b;
  }
  for (auto* v : {&sf, &sw, &sff, &sww, &sfw}) box_sum(g, radius, *v);
  const auto count = window_counts(g, radius);
  NccStats s;
  s.mean_f.resize(n);
  s.mean_w.resize(n);
  s.cross.resize(n);
  s.var_f.resize(n);
  s.var_w.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double c = count[i];
    s.mean_f[i] = sf[i] / c;
    s.mean_w[i] = sw[i] / c;
    s.cross[i] = sfw[i] - sf[i] * sw[i] / c;
    s.var_f[i] = std::max(0.0, sff[i] - sf[i] * sf[i] / c) + kNccVarianceGuard;
    s.var_w[i] = std::max(0.0, sww[i] - sw[i] * sw[i] / c) + kNccVarianceGuard;
  }
  return s;
}

template <typename T>
double ncc_value(const Grid& g, const T* f, const T* w, int window) {
  const NccStats s = ncc_stats(g, f, w, window / 2);
  double acc = 0.0;
  for (std::size_t i = 0; i < g.size(); ++i) {
    acc += s.cross[i] / std::sqrt(s.var_f[i] * s.var_w[i]);
  }
  return -acc / static_cast<double>(g.size());
}

void require_extents(const Grid& g, int minimum, const char* op) {
  if (g.nx < minimum || g.ny < minimum || g.nz < minimum) {
    throw ShapeError(std::string(op) + ": extents must be >= " + std::to_string(minimum) +
                     ", got " + to_string(g));
  }
}

template <typename T>
double smooth_value(const Grid& g, const T* phi) {
  const int n[3] = {g.nx, g.ny, g.nz};
  const std::size_t stride[3] = {1, static_cast<std::size_t>(g.nx),
                                 static_cast<std::size_t>(g.nx) * g.ny};
  double total = 0.0;
  for (int axis = 0; axis < 3; ++axis) {
    double acc = 0.0;
    std::size_t sites = 0;
    for (int z = 0; z < g.nz; ++z)
      for (int y = 0; y < g.ny; ++y)
        for (int x = 0; x < g.nx; ++x) {
          const int p[3] = {x, y, z};
          if (p[axis] + 1 >= n[axis]) continue;
          const std::size_t v = g.index(x, y, z);
          ++sites;
          for (int c = 0; c < 3; ++c) {
            const T* comp = phi + c * g.size();
            const double d = static_cast<double>(comp[v + stride[axis]]) - comp[v];
            acc += d * d;
          }
        }
    total += acc / (3.0 * static_cast<double>(sites));
  }
  return total / 3.0;
}

template <typename T>
void smooth_backward(const Grid& g, const T* phi, double upstream, T* gphi) {
  const int n[3] = {g.nx, g.ny, g.nz};
  const std::size_t stride[3] = {1, static_cast<std::size_t>(g.nx),
                                 static_cast<std::size_t>(g.nx) * g.ny};
  for (int axis = 0; axis < 3; ++axis) {
    const std::size_t sites = static_cast<std::size_t>(n[axis] - 1) * g.size() / n[axis];
    const double scale = upstream * 2.0 / (9.0 * static_cast<double>(sites));
    for (int z = 0; z < g.nz; ++z)
      for (int y = 0; y < g.ny; ++y)
        for (int x = 0; x < g.nx; ++x) {
          const int p[3] = {x, y, z};
          if (p[axis] + 1 >= n[axis]) continue;
          const std::size_t v = g.index(x, y, z);
          for (int c = 0; c < 3; ++c) {
            const T* comp = phi + c * g.size();
            T* gc = gphi + c * g.size();
            const double d = static_cast<double>(comp[v + stride[axis]]) - comp[v];
            gc[v + stride[axis]] += static_cast<T>(scale * d);
            gc[v] -= static_cast<T>(scale * d);
          }
        }
  }
}

template <typename T>
double fold_value(const Grid& g, const T* phi, std::vector<double>& det) {
  det.resize(g.size());
  kernels::jacobian_det(g, phi, det.data());
  double acc = 0.0;
  for (double d : det) {
    const double h = std::max(0.0, -d);
    acc += h * h;
  }
  return acc / static_cast<double>(g.size());
}

}  // namespace

double ncc_dissimilarity(const Volume& fixed, const Volume& warped, int window) {
  if (!(fixed.grid == warped.grid)) {
    throw ShapeError("ncc_dissimilarity: extent mismatch " + to_string(fixed.grid) + " vs " +
                     to_string(warped.grid));
  }
  if (window < 1 || window % 2 == 0) {
    throw ArgumentError("ncc_dissimilarity: window must be odd");
  }
  return ncc_value(fixed.grid, fixed.data.data(), warped.data.data(), window);
}

double smoothness_penalty(const VectorField& phi) {
  require_extents(phi.grid, 2, "smoothness_penalty");
  return smooth_value(phi.grid, phi.data.data());
}

double negative_jacobian_penalty(const VectorField& phi) {
  require_extents(phi.grid, 3, "negative_jacobian_penalty");
  std::vector<double> det;
  return fold_value(phi.grid, phi.data.data(), det);
}

LossBreakdown total_loss(const Volume& fixed, const Volume& moving, const VectorField& field,
                         const LossWeights& weights, int squaring_steps) {
  weights.validate();
  const VectorField phi = field.role == FieldRole::kVelocity
                              ? exp_velocity(field, squaring_steps)
                              : field;
  LossBreakdown b;
  b.ncc = ncc_dissimilarity(fixed, warp(moving, phi), weights.ncc_window);
  b.smooth = smoothness_penalty(phi);
  b.diffeo = negative_jacobian_penalty(phi);
  b.total = b.ncc;
  if (weights.lambda_smooth != 0.0) b.total += weights.lambda_smooth * b.smooth;
  if (weights.lambda_diffeo != 0.0) b.total += weights.lambda_diffeo * b.diffeo;
  return b;
}

namespace ad {

template <typename T>
Var<T> ncc_dissimilarity(const Var<T>& fixed, const Var<T>& warped, int window) {
  if (fixed.shape() != warped.shape() || fixed.shape().size() != 4 || fixed.shape()[0] != 1) {
    throw ShapeError("ncc_dissimilarity: expected matching (1, Z, Y, X) shapes, got " +
                     to_string(fixed.shape()) + " and " + to_string(warped.shape()));
  }
  if (window < 1 || window % 2 == 0) {
    throw ArgumentError("ncc_dissimilarity: window must be odd");
  }
  const Grid g = Grid::from_shape(fixed.shape());
  const double value = ncc_value(g, fixed.value().data(), warped.value().data(), window);
  const int i_f = fixed.id();
  const int i_w = warped.id();
  return fixed.tape().record(
      {1}, {static_cast<T>(value)}, {fixed, warped},
      [g, window, i_f, i_w](Tape<T>& t, int self) {
        const bool need_f = t.requires_grad(i_f), need_w = t.requires_grad(i_w);
        if (!need_f && !need_w) return;
        const T* f = t.value(i_f).data();
        const T* w = t.value(i_w).data();
        const NccStats s = ncc_stats(g, f, w, window / 2);
        const std::size_t n = g.size();
        const double up = static_cast<double>(t.grad(self)[0]) / -static_cast<double>(n);
        // d ncc / d cross, d var_w and d var_f, then pulled back through the
        // window sums.
        std::vector<double> a(n), af(n), aw(n), b(n), bm(n), c(n), cm(n);
        for (std::size_t i = 0; i < n; ++i) {
          const double inv = 1.0 / std::sqrt(s.var_f[i] * s.var_w[i]);
          const double da = up * inv;
          const double db = -0.5 * up * s.cross[i] * inv / s.var_w[i];
          const double dc = -0.5 * up * s.cross[i] * inv / s.var_f[i];
          a[i] = da;
          af[i] = da * s.mean_f[i];
          aw[i] = da * s.mean_w[i];
          b[i] = db;
          bm[i] = db * s.mean_w[i];
          c[i] = dc;
          cm[i] = dc * s.mean_f[i];
        }
        const int r = window / 2;
        for (auto* v : {&a, &af, &aw, &b, &bm, &c, &cm}) box_sum(g, r, *v);
        if (need_w) {
          auto gw = t.grad_buffer(i_w);
          for (std::size_t j = 0; j < n; ++j) {
            const double d = static_cast<double>(f[j]) * a[j] - af[j] +
                             2.0 * (static_cast<double>(w[j]) * b[j] - bm[j]);
            gw[j] += static_cast<T>(d);
          }
        }
        if (need_f) {
          auto gf = t.grad_buffer(i_f);
          for (std::size_t j = 0; j < n; ++j) {
            const double d = static_cast<double>(w[j]) * a[j] - aw[j] +
                             2.0 * (static_cast<double>(f[j]) * c[j] - cm[j]);
            gf[j] += static_cast<T>(d);
          }
        }
      });
}

template <typename T>
Var<T> smoothness_penalty(const Var<T>& phi) {
  const Grid g = Grid::from_shape(phi.shape());
  require_extents(g, 2, "smoothness_penalty");
  const double value = smooth_value(g, phi.value().data());
  const int ip = phi.id();
  return phi.tape().record({1}, {static_cast<T>(value)}, {phi}, [g, ip](Tape<T>& t, int self) {
    smooth_backward(g, t.value(ip).data(), static_cast<double>(t.grad(self)[0]),
                    t.grad_buffer(ip).data());
  });
}

template <typename T>
Var<T> negative_jacobian_penalty(const Var<T>& phi) {
  const Grid g = Grid::from_shape(phi.shape());
  require_extents(g, 3, "negative_jacobian_penalty");
  std::vector<double> det;
  const double value = fold_value(g, phi.value().data(), det);
  const int ip = phi.id();
  return phi.tape().record(
      {1}, {static_cast<T>(value)}, {phi},
      [g, ip, det = std::move(det)](Tape<T>& t, int self) {
        const double up = static_cast<double>(t.grad(self)[0]) / static_cast<double>(g.size());
        std::vector<double> gdet(det.size());
        for (std::size_t i = 0; i < det.size(); ++i) {
          gdet[i] = det[i] < 0.0 ? up * 2.0 * det[i] : 0.0;
        }
        kernels::jacobian_det_backward(g, t.value(ip).data(), gdet.data(),
                                       t.grad_buffer(ip).data());
      });
}

template <typename T>
LossTerms<T> total_loss(const Var<T>& fixed, const Var<T>& moving, const Var<T>& phi,
                        const LossWeights& weights) {
  weights.validate();
  LossTerms<T> terms;
  terms.ncc = ncc_dissimilarity(fixed, sample(moving, phi), weights.ncc_window);
  terms.smooth = smoothness_penalty(phi);
  terms.diffeo = negative_jacobian_penalty(phi);
  terms.total = terms.ncc;
  if (weights.lambda_smooth != 0.0) {
    terms.total = add(terms.total, scale(terms.smooth, static_cast<T>(weights.lambda_smooth)));
  }
  if (weights.lambda_diffeo != 0.0) {
    terms.total = add(terms.total, scale(terms.diffeo, static_cast<T>(weights.lambda_diffeo)));
  }
  return terms;
}

#define MIRRBA_INSTANTIATE(T)                                                    \
  template Var<T> ncc_dissimilarity(const Var<T>&, const Var<T>&, int);          \
  template Var<T> smoothness_penalty(const Var<T>&);                             \
  template Var<T> negative_jacobian_penalty(const Var<T>&);                      \
  template LossTerms<T> total_loss(const Var<T>&, const Var<T>&, const Var<T>&, \
                                   const LossWeights&);

MIRRBA_INSTANTIATE(float)
MIRRBA_INSTANTIATE(double)
#undef MIRRBA_INSTANTIATE

}  // namespace ad

}  // namespace mirrba
