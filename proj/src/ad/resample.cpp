#include <cmath>

#include "mirrba/ad/ops.hpp"

namespace mirrba::ad {

namespace {

void check_volume_shape(const Shape& s, const char* op) {
  if (s.size() != 4) {
    throw ShapeError(std::string(op) + ": input must be (C, Z, Y, X), got " +
                     to_string(s));
  }
}

// Per-output-sample source indices and weights along one axis.
struct AxisWeights {
  std::vector<int> i0, i1;
  std::vector<double> w1;
};

AxisWeights corner_aligned(int n_in, int n_out) {
  AxisWeights a;
  a.i0.resize(n_out);
  a.i1.resize(n_out);
  a.w1.resize(n_out);
  for (int o = 0; o < n_out; ++o) {
    if (n_in == 1 || n_out == 1) {
      a.i0[o] = a.i1[o] = 0;
      a.w1[o] = 0.0;
      continue;
    }
    // Integer numerator keeps corner samples exact.
    const long num = static_cast<long>(o) * (n_in - 1);
    const long den = n_out - 1;
    int i0 = static_cast<int>(num / den);
    double w1 = static_cast<double>(num % den) / static_cast<double>(den);
    if (i0 >= n_in - 1) {
      i0 = n_in - 1;
      w1 = 0.0;
    }
    a.i0[o] = i0;
    a.i1[o] = std::min(i0 + 1, n_in - 1);
    a.w1[o] = w1;
  }
  return a;
}

}  // namespace

int resized_extent(int extent, double factor) {
  if (factor != 0.25 && factor != 0.5 && factor != 2.0) {
    throw ArgumentError("trilinear_resize: unsupported factor " + std::to_string(factor) +
                        " (expected 0.25, 0.5 or 2)");
  }
  return std::max(1, static_cast<int>(std::lround(extent * factor)));
}

template <typename T>
Var<T> max_pool2(const Var<T>& input) {
  const Shape& s = input.shape();
  check_volume_shape(s, "max_pool2");
  static const char* axes[] = {"z", "y", "x"};
  for (int a = 1; a < 4; ++a) {
    if (s[a] % 2 != 0) {
      throw ShapeError(std::string("max_pool2: odd extent ") + std::to_string(s[a]) +
                       " on axis " + axes[a - 1]);
    }
  }
  const int c = s[0], z = s[1], y = s[2], x = s[3];
  const int zo = z / 2, yo = y / 2, xo = x / 2;
  Shape os{c, zo, yo, xo};
  std::vector<T> out(numel(os));
  std::vector<std::size_t> argmax(out.size());
  const auto in = input.value();
  std::size_t o = 0;
  for (int ch = 0; ch < c; ++ch) {
    for (int oz = 0; oz < zo; ++oz) {
      for (int oy = 0; oy < yo; ++oy) {
        for (int ox = 0; ox < xo; ++ox, ++o) {
          std::size_t best = 0;
          T best_v = T(0);
          bool first = true;
          // Window order is increasing linear index, so strict > keeps the
          // lowest index among ties.
          for (int dz = 0; dz < 2; ++dz) {
            for (int dy = 0; dy < 2; ++dy) {
              for (int dx = 0; dx < 2; ++dx) {
                const std::size_t i =
                    ((static_cast<std::size_t>(ch) * z + 2 * oz + dz) * y + 2 * oy + dy) *
                        x + 2 * ox + dx;
                if (first || in[i] > best_v) {
                  best = i;
                  best_v = in[i];
                  first = false;
                }
              }
            }
          }
          out[o] = best_v;
          argmax[o] = best;
        }
      }
    }
  }
  const int ii = input.id();
  return input.tape().record(std::move(os), std::move(out), {input},
                             [ii, argmax = std::move(argmax)](Tape<T>& t, int self) {
                               const auto g = t.grad(self);
                               auto gi = t.grad_buffer(ii);
                               for (std::size_t k = 0; k < g.size(); ++k) {
                                 gi[argmax[k]] += g[k];
                               }
                             });
}

template <typename T>
Var<T> trilinear_resize(const Var<T>& input, double factor) {
  const Shape& s = input.shape();
  check_volume_shape(s, "trilinear_resize");
  const int c = s[0], z = s[1], y = s[2], x = s[3];
  const int zo = resized_extent(z, factor);
  const int yo = resized_extent(y, factor);
  const int xo = resized_extent(x, factor);
  const AxisWeights wz = corner_aligned(z, zo);
  const AxisWeights wy = corner_aligned(y, yo);
  const AxisWeights wx = corner_aligned(x, xo);

  Shape os{c, zo, yo, xo};
  std::vector<T> out(numel(os));
  const auto in = input.value();
  auto at = [&](int ch, int iz, int iy, int ix) {
    return ((static_cast<std::size_t>(ch) * z + iz) * y + iy) * x + ix;
  };
  std::size_t o = 0;
  for (int ch = 0; ch < c; ++ch) {
    for (int oz = 0; oz < zo; ++oz) {
      const T fz = static_cast<T>(wz.w1[oz]);
      for (int oy = 0; oy < yo; ++oy) {
        const T fy = static_cast<T>(wy.w1[oy]);
        for (int ox = 0; ox < xo; ++ox, ++o) {
          const T fx = static_cast<T>(wx.w1[ox]);
          const int z0 = wz.i0[oz], z1 = wz.i1[oz];
          const int y0 = wy.i0[oy], y1 = wy.i1[oy];
          const int x0 = wx.i0[ox], x1 = wx.i1[ox];
          auto lerp_x = [&](int iz, int iy) {
            const T a = in[at(ch, iz, iy, x0)];
            return a + fx * (in[at(ch, iz, iy, x1)] - a);
          };
          // a + f * (b - a) reproduces constants exactly.
          const T a0 = lerp_x(z0, y0);
          const T c0 = a0 + fy * (lerp_x(z0, y1) - a0);
          const T a1 = lerp_x(z1, y0);
          const T c1 = a1 + fy * (lerp_x(z1, y1) - a1);
          out[o] = c0 + fz * (c1 - c0);
        }
      }
    }
  }

  const int ii = input.id();
  return input.tape().record(
      std::move(os), std::move(out), {input},
      [ii, c, z, y, x, zo, yo, xo, wz, wy, wx](Tape<T>& t, int self) {
        const auto g = t.grad(self);
        auto gi = t.grad_buffer(ii);
        auto at = [&](int ch, int iz, int iy, int ix) {
          return ((static_cast<std::size_t>(ch) * z + iz) * y + iy) * x + ix;
        };
        std::size_t o = 0;
        for (int ch = 0; ch < c; ++ch) {
          for (int oz = 0; oz < zo; ++oz) {
            const T fz = static_cast<T>(wz.w1[oz]);
            for (int oy = 0; oy < yo; ++oy) {
              const T fy = static_cast<T>(wy.w1[oy]);
              for (int ox = 0; ox < xo; ++ox, ++o) {
                const T fx = static_cast<T>(wx.w1[ox]);
                const T go = g[o];
                const int zs[2] = {wz.i0[oz], wz.i1[oz]};
                const int ys[2] = {wy.i0[oy], wy.i1[oy]};
                const int xs[2] = {wx.i0[ox], wx.i1[ox]};
                const T az[2] = {T(1) - fz, fz};
                const T ay[2] = {T(1) - fy, fy};
                const T ax[2] = {T(1) - fx, fx};
                for (int a = 0; a < 2; ++a) {
                  for (int b = 0; b < 2; ++b) {
                    for (int d = 0; d < 2; ++d) {
                      gi[at(ch, zs[a], ys[b], xs[d])] += go * az[a] * ay[b] * ax[d];
                    }
                  }
                }
              }
            }
          }
        }
      });
}

template Var<float> max_pool2(const Var<float>&);
template Var<double> max_pool2(const Var<double>&);
template Var<float> trilinear_resize(const Var<float>&, double);
template Var<double> trilinear_resize(const Var<double>&, double);

}  // namespace mirrba::ad
