#include <cmath>
#include <cstring>

#include "doctest.h"
#include "mirrba/field/field.hpp"
#include "mirrba/phantom/phantom.hpp"
#include "test_util.hpp"

using namespace mirrba;

namespace {

double min_det(const VectorField& phi) {
  const auto det = jacobian_determinant(phi);
  return *std::min_element(det.data.begin(), det.data.end());
}

}  // namespace

TEST_CASE("zero deformation without noise gives identical images") {
  auto spec = default_phantom(3, 32);
  spec.bumps.clear();
  spec.noise_std = 0.0;
  for (auto& l : spec.lesions) l.evolution = Evolution::kStable;
  const auto c = generate(spec);
  CHECK(std::memcmp(c.fixed.data.data(), c.moving.data.data(), 4 * c.fixed.data.size()) == 0);
  for (const auto& l : c.masks.lesions) CHECK(l.fixed.data == l.moving.data);
}

TEST_CASE("generation is deterministic") {
  const auto a = generate(default_phantom(5, 32));
  const auto b = generate(default_phantom(5, 32));
  CHECK(std::memcmp(a.fixed.data.data(), b.fixed.data.data(), 4 * a.fixed.data.size()) == 0);
  CHECK(std::memcmp(a.moving.data.data(), b.moving.data.data(), 4 * a.moving.data.size()) == 0);
  CHECK(a.phi_gt.data == b.phi_gt.data);
  const auto c = generate(default_phantom(6, 32));
  CHECK(a.moving.data != c.moving.data);
}

TEST_CASE("default phantom is well posed") {
  const auto spec = default_phantom(0, 64);
  CHECK(spec.organs.size() == 2);
  CHECK(spec.lesions.size() == 4);
  CHECK(spec.bumps.size() == 6);
  const auto c = generate(spec);
  CHECK(min_det(c.phi_gt) > 0.0);

  double max_disp = 0.0;
  for (std::size_t i = 0; i < c.phi_gt.grid.size(); ++i)
    max_disp = std::max<double>(max_disp, std::hypot(c.phi_gt.component(0)[i], c.phi_gt.component(1)[i],
                                             c.phi_gt.component(2)[i]));
  CHECK(max_disp > 3.0);
  CHECK(max_disp < 6.0);

  // Warping the moving image by the ground truth recovers the fixed anatomy.
  const auto r = evaluate(c.masks, c.phi_gt);
  CHECK(r.dice_organs->mean > 0.95);
  const auto u = evaluate(c.masks, VectorField::zeros(c.fixed.grid));
  MESSAGE("unregistered organ dice " << u.dice_organs->mean << ", with ground truth "
                                     << r.dice_organs->mean);

  for (const auto& l : c.masks.lesions) {
    CHECK(l.moving.count() > 0);
    if (l.status == LesionStatus::kVanished) CHECK(l.fixed.count() == 0);
    else CHECK(l.fixed.count() > 0);
  }
  const auto& ls = spec.lesions;
  for (std::size_t k = 0; k < ls.size(); ++k) {
    const auto& m = c.masks.lesions[k];
    if (ls[k].evolution == Evolution::kShrink) CHECK(m.fixed.count() < m.moving.count());
    if (ls[k].evolution == Evolution::kGrow) CHECK(m.fixed.count() > m.moving.count());
  }
}

TEST_CASE("unregistered organ overlap stays in the pinned band") {
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    const auto c = generate(default_phantom(seed, 64));
    const auto u = evaluate(c.masks, VectorField::zeros(c.fixed.grid));
    CHECK(u.dice_organs->mean >= 0.4);
    CHECK(u.dice_organs->mean <= 0.8);
    CHECK(min_det(c.phi_gt) > 0.0);
  }
}

TEST_CASE("invalid specs are rejected") {
  auto s = default_phantom(1, 32);
  s.noise_std = -1.0;
  CHECK_THROWS_AS(generate(s), ArgumentError);
  s = default_phantom(1, 32);
  s.organs[0].center = {100, 0, 0};
  CHECK_THROWS_AS(generate(s), ArgumentError);
  s = default_phantom(1, 32);
  s.bumps[0].amplitude = {100, 0, 0};
  CHECK_THROWS_AS(generate(s), ArgumentError);
  CHECK_THROWS_AS(default_phantom(1, 8), ArgumentError);
}

TEST_CASE("field error examples") {
  const Grid g = Grid::cube(8);
  const auto gt = testutil::field_from(g, [](int c, int x, int y, int z) { return 0.1 * c * x - 0.2 * y + z; });
  Mask all = Mask::empty(g);
  std::fill(all.data.begin(), all.data.end(), 1);
  const auto same = field_error(gt, gt, all);
  CHECK(same->mean == 0.0);
  CHECK(same->p95 == 0.0);
  auto shifted = gt;
  for (float& v : shifted.component(0)) v += 1.0f;
  CHECK(field_error(shifted, gt, all)->mean == doctest::Approx(1.0).epsilon(1e-6));
  CHECK_FALSE(field_error(gt, gt, Mask::empty(g)).has_value());

  // |N(0, s^2 I_3)| has mean 2 s sqrt(2 / pi).
  const Grid big = Grid::cube(24);
  const double s = 0.05;
  std::mt19937_64 rng(9);
  std::normal_distribution<double> nd(0.0, s);
  auto zero = VectorField::zeros(big);
  auto noisy = zero;
  for (float& v : noisy.data) v = static_cast<float>(nd(rng));
  Mask m = Mask::empty(big);
  std::fill(m.data.begin(), m.data.end(), 1);
  CHECK(field_error(noisy, zero, m)->mean == doctest::Approx(2 * s * std::sqrt(2 / M_PI)).epsilon(0.05));
}
