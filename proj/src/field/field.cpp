#include "mirrba/field/field.hpp"

#include <cmath>

#include "mirrba/ad/ops.hpp"

namespace mirrba {

namespace kernels {

namespace {

// Clamped linear interpolation stencil along one axis.
template <typename T>
struct AxisStencil {
  int i0, i1;
  T f;
  T dp;  // d(position)/d(displacement): 0 when clamped
};

template <typename T>
AxisStencil<T> locate(T p, int n) {
  AxisStencil<T> s{0, 0, T(0), T(1)};
  const T hi = static_cast<T>(n - 1);
  if (!(p >= T(0))) {
    p = T(0);
    s.dp = T(0);
  } else if (p > hi) {
    p = hi;
    s.dp = T(0);
  }
  int i0 = static_cast<int>(std::floor(p));
  if (i0 >= n - 1) {
    s.i0 = s.i1 = n - 1;
    s.f = T(0);
    return s;
  }
  s.i0 = i0;
  s.i1 = i0 + 1;
  s.f = p - static_cast<T>(i0);
  return s;
}

template <typename T>
inline T lerp(T a, T b, T f) {
  return a + f * (b - a);
}

}  // namespace

template <typename T>
void sample_forward(const Grid& g, int channels, const T* src, const T* disp, T* out) {
  const std::size_t n = g.size();
  const T* dx = disp;
  const T* dy = disp + n;
  const T* dz = disp + 2 * n;
  for (int z = 0; z < g.nz; ++z) {
    for (int y = 0; y < g.ny; ++y) {
      for (int x = 0; x < g.nx; ++x) {
        const std::size_t v = g.index(x, y, z);
        const auto sx = locate<T>(static_cast<T>(x) + dx[v], g.nx);
        const auto sy = locate<T>(static_cast<T>(y) + dy[v], g.ny);
        const auto sz = locate<T>(static_cast<T>(z) + dz[v], g.nz);
        const std::size_t r00 = g.index(0, sy.i0, sz.i0);
        const std::size_t r01 = g.index(0, sy.i1, sz.i0);
        const std::size_t r10 = g.index(0, sy.i0, sz.i1);
        const std::size_t r11 = g.index(0, sy.i1, sz.i1);
        for (int c = 0; c < channels; ++c) {
          const T* s = src + c * n;
          const T a = lerp(s[r00 + sx.i0], s[r00 + sx.i1], sx.f);
          const T b = lerp(s[r01 + sx.i0], s[r01 + sx.i1], sx.f);
          const T cc = lerp(s[r10 + sx.i0], s[r10 + sx.i1], sx.f);
          const T d = lerp(s[r11 + sx.i0], s[r11 + sx.i1], sx.f);
          out[c * n + v] = lerp(lerp(a, b, sy.f), lerp(cc, d, sy.f), sz.f);
        }
      }
    }
  }
}

template <typename T>
void sample_backward(const Grid& g, int channels, const T* src, const T* disp,
                     const T* gout, T* gsrc, T* gdisp) {
  const std::size_t n = g.size();
  const T* dx = disp;
  const T* dy = disp + n;
  const T* dz = disp + 2 * n;
  for (int z = 0; z < g.nz; ++z) {
    for (int y = 0; y < g.ny; ++y) {
      for (int x = 0; x < g.nx; ++x) {
        const std::size_t v = g.index(x, y, z);
        const auto sx = locate<T>(static_cast<T>(x) + dx[v], g.nx);
        const auto sy = locate<T>(static_cast<T>(y) + dy[v], g.ny);
        const auto sz = locate<T>(static_cast<T>(z) + dz[v], g.nz);
        const std::size_t r00 = g.index(0, sy.i0, sz.i0);
        const std::size_t r01 = g.index(0, sy.i1, sz.i0);
        const std::size_t r10 = g.index(0, sy.i0, sz.i1);
        const std::size_t r11 = g.index(0, sy.i1, sz.i1);
        const T wx[2] = {T(1) - sx.f, sx.f};
        const T wy[2] = {T(1) - sy.f, sy.f};
        const T wz[2] = {T(1) - sz.f, sz.f};
        T gx = T(0), gy = T(0), gz = T(0);
        for (int c = 0; c < channels; ++c) {
          const T go = gout[c * n + v];
          if (go == T(0)) continue;
          if (gsrc) {
            T* gs = gsrc + c * n;
            const std::size_t rows[4] = {r00, r01, r10, r11};
            for (int k = 0; k < 4; ++k) {
              const T w = go * wz[k >> 1] * wy[k & 1];
              gs[rows[k] + sx.i0] += w * wx[0];
              gs[rows[k] + sx.i1] += w * wx[1];
            }
          }
          if (gdisp) {
            const T* s = src + c * n;
            const T c000 = s[r00 + sx.i0], c001 = s[r00 + sx.i1];
            const T c010 = s[r01 + sx.i0], c011 = s[r01 + sx.i1];
            const T c100 = s[r10 + sx.i0], c101 = s[r10 + sx.i1];
            const T c110 = s[r11 + sx.i0], c111 = s[r11 + sx.i1];
            const T a = lerp(c000, c001, sx.f), b = lerp(c010, c011, sx.f);
            const T cc = lerp(c100, c101, sx.f), d = lerp(c110, c111, sx.f);
            const T dvdz = lerp(cc, d, sy.f) - lerp(a, b, sy.f);
            const T dvdy = wz[0] * (b - a) + wz[1] * (d - cc);
            const T dvdx = wz[0] * (wy[0] * (c001 - c000) + wy[1] * (c011 - c010)) +
                           wz[1] * (wy[0] * (c101 - c100) + wy[1] * (c111 - c110));
            gx += go * dvdx;
            gy += go * dvdy;
            gz += go * dvdz;
          }
        }
        if (gdisp) {
          gdisp[v] += gx * sx.dp;
          gdisp[n + v] += gy * sy.dp;
          gdisp[2 * n + v] += gz * sz.dp;
        }
      }
    }
  }
}

namespace {

// d phi_c / d axis at voxel (x, y, z), axis 0 = x, 1 = y, 2 = z.
template <typename T>
double derivative(const Grid& g, const T* comp, int x, int y, int z, int axis) {
  int pos[3] = {x, y, z};
  const int n[3] = {g.nx, g.ny, g.nz};
  const int i = pos[axis];
  if (n[axis] < 2) return 0.0;
  auto at = [&](int j) {
    int p[3] = {pos[0], pos[1], pos[2]};
    p[axis] = j;
    return static_cast<double>(comp[g.index(p[0], p[1], p[2])]);
  };
  if (i == 0) return at(1) - at(0);
  if (i == n[axis] - 1) return at(i) - at(i - 1);
  return 0.5 * (at(i + 1) - at(i - 1));
}

void jacobian_matrix(const Grid& g, const auto* phi, int x, int y, int z,
                     double j[3][3]) {
  for (int r = 0; r < 3; ++r) {
    const auto* comp = phi + r * g.size();
    for (int c = 0; c < 3; ++c) {
      j[r][c] = (r == c ? 1.0 : 0.0) + derivative(g, comp, x, y, z, c);
    }
  }
}

double det3(const double j[3][3]) {
  return j[0][0] * (j[1][1] * j[2][2] - j[1][2] * j[2][1]) -
         j[0][1] * (j[1][0] * j[2][2] - j[1][2] * j[2][0]) +
         j[0][2] * (j[1][0] * j[2][1] - j[1][1] * j[2][0]);
}

}  // namespace

template <typename T>
void jacobian_det(const Grid& g, const T* phi, double* det) {
  for (int z = 0; z < g.nz; ++z) {
    for (int y = 0; y < g.ny; ++y) {
      for (int x = 0; x < g.nx; ++x) {
        double j[3][3];
        jacobian_matrix(g, phi, x, y, z, j);
        det[g.index(x, y, z)] = det3(j);
      }
    }
  }
}

template <typename T>
void jacobian_det_backward(const Grid& g, const T* phi, const double* gdet, T* gphi) {
  const int n[3] = {g.nx, g.ny, g.nz};
  for (int z = 0; z < g.nz; ++z) {
    for (int y = 0; y < g.ny; ++y) {
      for (int x = 0; x < g.nx; ++x) {
        const std::size_t v = g.index(x, y, z);
        if (gdet[v] == 0.0) continue;
        double j[3][3];
        jacobian_matrix(g, phi, x, y, z, j);
        // Cofactors: d det / d j[r][c].
        double cof[3][3];
        for (int r = 0; r < 3; ++r) {
          for (int c = 0; c < 3; ++c) {
            const int r1 = (r + 1) % 3, r2 = (r + 2) % 3;
            const int c1 = (c + 1) % 3, c2 = (c + 2) % 3;
            cof[r][c] = j[r1][c1] * j[r2][c2] - j[r1][c2] * j[r2][c1];
          }
        }
        const int pos[3] = {x, y, z};
        for (int r = 0; r < 3; ++r) {
          T* comp = gphi + r * g.size();
          for (int c = 0; c < 3; ++c) {
            const double w = gdet[v] * cof[r][c];
            const int i = pos[c];
            if (n[c] < 2) continue;
            auto at = [&](int idx) -> T& {
              int p[3] = {pos[0], pos[1], pos[2]};
              p[c] = idx;
              return comp[g.index(p[0], p[1], p[2])];
            };
            if (i == 0) {
              at(1) += static_cast<T>(w);
              at(0) -= static_cast<T>(w);
            } else if (i == n[c] - 1) {
              at(i) += static_cast<T>(w);
              at(i - 1) -= static_cast<T>(w);
            } else {
              at(i + 1) += static_cast<T>(0.5 * w);
              at(i - 1) -= static_cast<T>(0.5 * w);
            }
          }
        }
      }
    }
  }
}

template void sample_forward(const Grid&, int, const float*, const float*, float*);
template void sample_forward(const Grid&, int, const double*, const double*, double*);
template void sample_backward(const Grid&, int, const float*, const float*, const float*,
                              float*, float*);
template void sample_backward(const Grid&, int, const double*, const double*,
                              const double*, double*, double*);
template void jacobian_det(const Grid&, const float*, double*);
template void jacobian_det(const Grid&, const double*, double*);
template void jacobian_det_backward(const Grid&, const float*, const double*, float*);
template void jacobian_det_backward(const Grid&, const double*, const double*, double*);

}  // namespace kernels

namespace ad {

template <typename T>
Var<T> sample(const Var<T>& src, const Var<T>& disp) {
  const Shape& ss = src.shape();
  const Shape& ds = disp.shape();
  if (ds.size() != 4 || ds[0] != 3) {
    throw ShapeError("sample: displacement must be (3, Z, Y, X), got " + to_string(ds));
  }
  if (ss.size() != 4 || ss[1] != ds[1] || ss[2] != ds[2] || ss[3] != ds[3]) {
    throw ShapeError("sample: source " + to_string(ss) + " does not match displacement " +
                     to_string(ds));
  }
  const Grid g = Grid::from_shape(ds);
  const int channels = ss[0];
  std::vector<T> out(src.size());
  kernels::sample_forward(g, channels, src.value().data(), disp.value().data(), out.data());
  const int is = src.id();
  const int id = disp.id();
  return src.tape().record(
      ss, std::move(out), {src, disp}, [g, channels, is, id](Tape<T>& t, int self) {
        T* gsrc = t.requires_grad(is) ? t.grad_buffer(is).data() : nullptr;
        T* gdisp = t.requires_grad(id) ? t.grad_buffer(id).data() : nullptr;
        kernels::sample_backward(g, channels, t.value(is).data(), t.value(id).data(),
                                 t.grad(self).data(), gsrc, gdisp);
      });
}

template <typename T>
Var<T> compose(const Var<T>& outer, const Var<T>& inner) {
  if (outer.shape() != inner.shape()) {
    throw ShapeError("compose: extent mismatch " + to_string(outer.shape()) + " vs " +
                     to_string(inner.shape()));
  }
  return add(inner, sample(outer, inner));
}

template <typename T>
Var<T> exp_velocity(const Var<T>& velocity, int squaring_steps) {
  if (squaring_steps < 1) {
    throw ArgumentError("exp_velocity: squaring_steps must be >= 1");
  }
  Var<T> phi = scale(velocity, static_cast<T>(std::ldexp(1.0, -squaring_steps)));
  for (int s = 0; s < squaring_steps; ++s) {
    phi = compose(phi, phi);
  }
  return phi;
}

template <typename T>
Var<T> upsample_field(const Var<T>& phi) {
  return scale(trilinear_resize(phi, 2.0), T(2));
}

template Var<float> sample(const Var<float>&, const Var<float>&);
template Var<double> sample(const Var<double>&, const Var<double>&);
template Var<float> compose(const Var<float>&, const Var<float>&);
template Var<double> compose(const Var<double>&, const Var<double>&);
template Var<float> exp_velocity(const Var<float>&, int);
template Var<double> exp_velocity(const Var<double>&, int);
template Var<float> upsample_field(const Var<float>&);
template Var<double> upsample_field(const Var<double>&);

}  // namespace ad

namespace {

void require_same_grid(const Grid& a, const Grid& b, const char* op) {
  if (!(a == b)) {
    throw ShapeError(std::string(op) + ": extent mismatch " + to_string(a) + " vs " +
                     to_string(b));
  }
}

}  // namespace

Volume warp(const Volume& moving, const VectorField& phi) {
  require_same_grid(moving.grid, phi.grid, "warp");
  Volume out{moving.grid, moving.spacing, std::vector<float>(moving.data.size())};
  kernels::sample_forward(moving.grid, 1, moving.data.data(), phi.data.data(),
                          out.data.data());
  return out;
}

VectorField compose(const VectorField& outer, const VectorField& inner) {
  require_same_grid(outer.grid, inner.grid, "compose");
  VectorField out{inner.grid, FieldRole::kDisplacement,
                  std::vector<float>(inner.data.size())};
  kernels::sample_forward(inner.grid, 3, outer.data.data(), inner.data.data(),
                          out.data.data());
  for (std::size_t i = 0; i < out.data.size(); ++i) {
    out.data[i] = inner.data[i] + out.data[i];
  }
  require_finite(out.data, "compose");
  return out;
}

VectorField exp_velocity(const VectorField& velocity, int squaring_steps) {
  if (squaring_steps < 1) {
    throw ArgumentError("exp_velocity: squaring_steps must be >= 1");
  }
  const float factor = static_cast<float>(std::ldexp(1.0, -squaring_steps));
  VectorField phi{velocity.grid, FieldRole::kDisplacement, velocity.data};
  for (float& v : phi.data) v *= factor;
  for (int s = 0; s < squaring_steps; ++s) {
    phi = compose(phi, phi);
  }
  return phi;
}

VectorField upsample_field(const VectorField& phi, int factor) {
  if (factor != 2) {
    throw ArgumentError("upsample_field: only factor 2 is supported");
  }
  ad::Tape<float> tape;
  auto in = tape.constant(phi.grid.shape(3), phi.data);
  auto out = ad::upsample_field(in);
  const auto v = out.value();
  return VectorField{Grid::from_shape(out.shape()), phi.role,
                     std::vector<float>(v.begin(), v.end())};
}

Volume resize_volume(const Volume& v, double factor) {
  ad::Tape<float> tape;
  auto in = tape.constant(v.grid.shape(1), v.data);
  auto out = ad::trilinear_resize(in, factor);
  const auto vals = out.value();
  Spacing spacing = v.spacing;
  const Grid g = Grid::from_shape(out.shape());
  const int in_n[3] = {v.grid.nx, v.grid.ny, v.grid.nz};
  const int out_n[3] = {g.nx, g.ny, g.nz};
  for (int a = 0; a < 3; ++a) {
    if (out_n[a] > 1 && in_n[a] > 1) {
      spacing[a] = v.spacing[a] * (in_n[a] - 1) / static_cast<double>(out_n[a] - 1);
    }
  }
  return Volume{g, spacing, std::vector<float>(vals.begin(), vals.end())};
}

Volume jacobian_determinant(const VectorField& phi) {
  std::vector<double> det(phi.grid.size());
  kernels::jacobian_det(phi.grid, phi.data.data(), det.data());
  Volume out = Volume::zeros(phi.grid);
  for (std::size_t i = 0; i < det.size(); ++i) out.data[i] = static_cast<float>(det[i]);
  return out;
}

}  // namespace mirrba
