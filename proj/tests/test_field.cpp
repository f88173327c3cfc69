#include <cmath>
#include <cstring>

#include "doctest.h"
#include "mirrba/ad/gradcheck.hpp"
#include "mirrba/field/field.hpp"
#include "test_util.hpp"

using namespace mirrba;

namespace {

// Smooth random field: a few low-frequency sinusoids per component.
VectorField smooth_field(const Grid& g, std::uint64_t seed, double amplitude) {
  const auto coef = testutil::uniform(3 * 4 * 4, seed);
  return testutil::field_from(g, [&](int c, int x, int y, int z) {
    double v = 0.0;
    for (int k = 0; k < 4; ++k) {
      const double* a = &coef[(c * 4 + k) * 4];
      v += a[0] * std::sin(2.0 * M_PI * (a[1] * x / g.nx + a[2] * y / g.ny + a[3] * z / g.nz) +
                           k);
    }
    return amplitude * v / 4.0;
  });
}

}  // namespace

TEST_CASE("warp with the zero field is the identity, bitwise") {
  const Grid g{9, 7, 5};
  const auto m = testutil::random_volume(g, 1);
  const auto w = warp(m, VectorField::zeros(g));
  CHECK(std::memcmp(w.data.data(), m.data.data(), m.data.size() * sizeof(float)) == 0);
}

TEST_CASE("warp reproduces integer translations with clamping") {
  const Grid g = Grid::cube(12);
  const auto m = testutil::random_volume(g, 2);
  auto clampi = [](int v, int n) { return std::min(std::max(v, 0), n - 1); };
  for (int axis = 0; axis < 3; ++axis) {
    for (int t = -4; t <= 4; ++t) {
      const auto phi = testutil::field_from(g, [&](int c, int, int, int) { return c == axis ? t : 0; });
      const auto w = warp(m, phi);
      bool ok = true;
      for (int z = 0; z < g.nz; ++z)
        for (int y = 0; y < g.ny; ++y)
          for (int x = 0; x < g.nx; ++x) {
            int p[3] = {x, y, z};
            p[axis] = clampi(p[axis] + t, 12);
            ok = ok && w.at(x, y, z) == m.at(p[0], p[1], p[2]);
          }
      CHECK(ok);
    }
  }
  auto impulse = Volume::zeros(g);
  impulse.at(5, 5, 5) = 1.0f;
  const auto phi = testutil::field_from(g, [](int c, int, int, int) { return c == 0 ? -2.0 : 0.0; });
  const auto w = warp(impulse, phi);
  CHECK(w.at(7, 5, 5) == 1.0f);
  CHECK(w.at(5, 5, 5) == 0.0f);
}

TEST_CASE("warp of a constant volume stays constant") {
  const Grid g = Grid::cube(10);
  Volume m = Volume::zeros(g);
  std::fill(m.data.begin(), m.data.end(), 2.5f);
  const auto w = warp(m, smooth_field(g, 3, 3.0));
  for (float v : w.data) CHECK(v == 2.5f);
  CHECK_THROWS_AS(warp(m, VectorField::zeros(Grid::cube(9))), ShapeError);
}

TEST_CASE("exp_velocity: zero and constant velocities") {
  const Grid g = Grid::cube(16);
  const auto zero = exp_velocity(VectorField::zeros(g, FieldRole::kVelocity));
  for (float v : zero.data) CHECK(v == 0.0f);
  CHECK(zero.role == FieldRole::kDisplacement);

  const auto v = testutil::field_from(g, [](int c, int, int, int) { return c == 0 ? 3.0 : 0.0; });
  const auto phi = exp_velocity(v, 7);
  for (int z = 4; z < 12; ++z)
    for (int y = 4; y < 12; ++y)
      for (int x = 4; x < 12; ++x) {
        const auto i = g.index(x, y, z);
        CHECK(std::abs(phi.component(0)[i] - 3.0f) <= 1e-5f);
        CHECK(std::abs(phi.component(1)[i]) <= 1e-5f);
      }
  CHECK_THROWS_AS(exp_velocity(v, 0), ArgumentError);
}

TEST_CASE("exp_velocity of a linear field matches the matrix exponential") {
  const Grid g = Grid::cube(24);
  const double a = 0.05, c0 = 11.5;
  const auto v = testutil::field_from(g, [&](int c, int x, int, int) { return c == 0 ? a * (x - c0) : 0.0; });
  const auto phi = exp_velocity(v);
  const double gain = std::exp(a) - 1.0;
  double worst = 0.0;
  for (int z = 4; z < 20; ++z)
    for (int y = 4; y < 20; ++y)
      for (int x = 4; x < 20; ++x) {
        const double expect = gain * (x - c0);
        worst = std::max(worst, std::abs(phi.component(0)[g.index(x, y, z)] - expect));
      }
  CHECK(worst <= 1e-2);
}

TEST_CASE("exp_velocity converges in the number of squaring steps") {
  const Grid g = Grid::cube(16);
  const auto v = smooth_field(g, 5, 1.5);
  const auto a = exp_velocity(v, 7);
  const auto b = exp_velocity(v, 8);
  double worst = 0.0;
  for (int c = 0; c < 3; ++c)
    for (int z = 3; z < 13; ++z)
      for (int y = 3; y < 13; ++y)
        for (int x = 3; x < 13; ++x) {
          const auto i = g.index(x, y, z);
          worst = std::max(worst, static_cast<double>(std::abs(a.component(c)[i] - b.component(c)[i])));
        }
  CHECK(worst <= 1e-3);
}

TEST_CASE("exp_velocity of smooth velocities has positive Jacobian determinant") {
  const Grid g = Grid::cube(16);
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    // Per-step displacement is |v| / 128, far below half a voxel.
    const auto phi = exp_velocity(smooth_field(g, 10 + seed, 4.0));
    const auto det = jacobian_determinant(phi);
    float lowest = 1e9f;
    for (int z = 1; z < 15; ++z)
      for (int y = 1; y < 15; ++y)
        for (int x = 1; x < 15; ++x) lowest = std::min(lowest, det.at(x, y, z));
    CHECK(lowest > 0.0f);
  }
}

TEST_CASE("compose identities and translation additivity") {
  const Grid g = Grid::cube(14);
  const auto phi = smooth_field(g, 7, 2.0);
  const auto zero = VectorField::zeros(g);
  const auto a = compose(zero, phi);
  const auto b = compose(phi, zero);
  CHECK(std::memcmp(a.data.data(), phi.data.data(), phi.data.size() * sizeof(float)) == 0);
  CHECK(std::memcmp(b.data.data(), phi.data.data(), phi.data.size() * sizeof(float)) == 0);

  const auto t1 = testutil::field_from(g, [](int c, int, int, int) { return c == 0 ? 1.5 : (c == 2 ? -0.5 : 0.0); });
  const auto t2 = testutil::field_from(g, [](int c, int, int, int) { return c == 1 ? 0.75 : (c == 0 ? 1.0 : 0.0); });
  const auto t12 = compose(t1, t2);
  const double expect[3] = {2.5, 0.75, -0.5};
  for (int c = 0; c < 3; ++c)
    for (int z = 4; z < 10; ++z)
      for (int y = 4; y < 10; ++y)
        for (int x = 4; x < 10; ++x) {
          CHECK(std::abs(t12.component(c)[g.index(x, y, z)] - expect[c]) <= 1e-6);
        }
  CHECK_THROWS_AS(compose(phi, VectorField::zeros(Grid::cube(5))), ShapeError);
}

TEST_CASE("compose with the negated field nearly cancels for small fields") {
  const Grid g = Grid::cube(16);
  const auto phi = smooth_field(g, 9, 0.5);
  auto neg = phi;
  for (float& v : neg.data) v = -v;
  const auto r = compose(phi, neg);
  double worst = 0.0;
  for (int z = 2; z < 14; ++z)
    for (int y = 2; y < 14; ++y)
      for (int x = 2; x < 14; ++x) {
        double m = 0.0;
        for (int c = 0; c < 3; ++c) m += std::pow(r.component(c)[g.index(x, y, z)], 2);
        worst = std::max(worst, std::sqrt(m));
      }
  CHECK(worst <= 0.1);
}

TEST_CASE("upsample_field doubles extent and magnitude") {
  const auto zero = upsample_field(VectorField::zeros(Grid::cube(8)));
  CHECK(zero.grid == Grid::cube(16));
  for (float v : zero.data) CHECK(v == 0.0f);

  const auto c = testutil::field_from(Grid::cube(8), [](int k, int, int, int) { return k == 0 ? 1.0 : 0.0; });
  const auto up = upsample_field(c);
  for (std::size_t i = 0; i < up.grid.size(); ++i) {
    CHECK(up.component(0)[i] == 2.0f);
    CHECK(up.component(1)[i] == 0.0f);
  }

  // A ramp lifted to the finer grid: corner samples land on the analytic ramp.
  const auto ramp = testutil::field_from(Grid::cube(8), [](int k, int x, int, int) { return k == 1 ? 0.5 * x : 0.0; });
  const auto lifted = upsample_field(ramp);
  for (int z : {0, 15})
    for (int y : {0, 15}) {
      CHECK(lifted.component(1)[lifted.grid.index(0, y, z)] == 0.0f);
      CHECK(lifted.component(1)[lifted.grid.index(15, y, z)] == doctest::Approx(2.0 * 0.5 * 7));
    }
  CHECK_THROWS_AS(upsample_field(c, 3), ArgumentError);
}

TEST_CASE("jacobian determinant examples") {
  const Grid g = Grid::cube(8);
  for (float v : jacobian_determinant(VectorField::zeros(g)).data) CHECK(v == 1.0f);
  const auto t = testutil::field_from(g, [](int c, int, int, int) { return 1.7 * (c + 1); });
  for (float v : jacobian_determinant(t).data) CHECK(v == 1.0f);
  const auto dil = testutil::field_from(g, [](int c, int x, int y, int z) {
    const int p[3] = {x, y, z};
    return 0.1 * p[c];
  });
  for (float v : jacobian_determinant(dil).data) CHECK(v == doctest::Approx(1.331).epsilon(1e-6));
}

TEST_CASE("sample gradients match finite differences") {
  const int n = 5;
  const std::size_t nv = n * n * n;
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    const auto src = testutil::uniform(2 * nv, 70 + seed);
    // Displacements keep sample positions inside the grid and away from
    // integer lattice kinks.
    auto disp = testutil::uniform(3 * nv, 80 + seed, 0.15, 0.85);
    for (std::size_t i = 0; i < disp.size(); ++i) {
      const int x = static_cast<int>((i % nv) % n);
      const int y = static_cast<int>((i % nv) / n % n);
      const int z = static_cast<int>((i % nv) / (n * n));
      const int p[3] = {x, y, z};
      if (p[i / nv] == n - 1) disp[i] -= 1.0;
    }
    auto r = ad::check_gradient(
        [&](auto& tape, const auto& v) {
          (void)tape;
          return ad::project(ad::sample(v[0], v[1]), testutil::uniform(2 * nv, 90 + seed));
        },
        {{{2, n, n, n}, src, true}, {{3, n, n, n}, disp, true}});
    CHECK(r.relative_error < 1e-3);
  }
}
