#include "mirrba/phantom/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "mirrba/error.hpp"
#include "mirrba/field/field.hpp"

namespace mirrba {

std::string to_string(Evolution e) {
  switch (e) {
    case Evolution::kStable: return "stable";
    case Evolution::kShrink: return "shrink";
    case Evolution::kGrow: return "grow";
    case Evolution::kVanish: return "vanish";
  }
  return "?";
}

double LesionSpec::fixed_radius() const {
  switch (evolution) {
    case Evolution::kStable: return radius;
    case Evolution::kShrink:
    case Evolution::kGrow: return radius * factor;
    case Evolution::kVanish: return 0.0;
  }
  return radius;
}

namespace {

bool inside_grid(const Grid& g, const Vec3& p) {
  return p[0] >= 0 && p[1] >= 0 && p[2] >= 0 && p[0] <= g.nx - 1 && p[1] <= g.ny - 1 &&
         p[2] <= g.nz - 1;
}

double ellipsoid_distance(const Vec3& p, const Vec3& c, const Vec3& r) {
  double s = 0.0;
  for (int a = 0; a < 3; ++a) {
    const double t = (p[a] - c[a]) / r[a];
    s += t * t;
  }
  return std::sqrt(s);
}

// Smooth indicator: 1 inside, 0 outside, tanh ramp of about `edge` voxels.
double soft(double d, double mean_radius, double edge) {
  return 0.5 * (1.0 + std::tanh((1.0 - d) * mean_radius / edge));
}

double mean_radius(const Vec3& r) { return (r[0] + r[1] + r[2]) / 3.0; }

// Intensity of the anatomy at a continuous point; `fixed_time` selects the
// lesion radii.
double source(const PhantomSpec& s, const Vec3& p, bool fixed_time) {
  const double body = soft(ellipsoid_distance(p, s.body.center, s.body.radii),
                           mean_radius(s.body.radii), s.edge);
  double v = s.body.intensity * body;
  for (const Blob& o : s.organs)
    v += (o.intensity - s.body.intensity) *
         soft(ellipsoid_distance(p, o.center, o.radii), mean_radius(o.radii), s.edge);
  double tex = 0.0;
  for (const Blob& t : s.texture) {
    double q = 0.0;
    for (int a = 0; a < 3; ++a) q += std::pow((p[a] - t.center[a]) / t.radii[a], 2.0);
    tex += t.intensity * std::exp(-0.5 * q);
  }
  v += tex * body;
  for (const LesionSpec& l : s.lesions) {
    const double r = fixed_time ? l.fixed_radius() : l.radius;
    if (r <= 0.0) continue;
    v += l.intensity * soft(ellipsoid_distance(p, l.center, {r, r, r}), r, s.edge);
  }
  return v;
}

// Clamped trilinear sample of component c at a continuous point.
double sample_field(const VectorField& f, int c, const Vec3& p) {
  const Grid& g = f.grid;
  const int n[3] = {g.nx, g.ny, g.nz};
  int i0[3], i1[3];
  double t[3];
  for (int a = 0; a < 3; ++a) {
    const double q = std::clamp(p[a], 0.0, static_cast<double>(n[a] - 1));
    i0[a] = std::min(static_cast<int>(std::floor(q)), n[a] - 1);
    i1[a] = std::min(i0[a] + 1, n[a] - 1);
    t[a] = q - i0[a];
  }
  auto at = [&](int x, int y, int z) { return static_cast<double>(f.component(c)[g.index(x, y, z)]); };
  auto lerp = [](double a, double b, double w) { return a + w * (b - a); };
  const double c00 = lerp(at(i0[0], i0[1], i0[2]), at(i1[0], i0[1], i0[2]), t[0]);
  const double c10 = lerp(at(i0[0], i1[1], i0[2]), at(i1[0], i1[1], i0[2]), t[0]);
  const double c01 = lerp(at(i0[0], i0[1], i1[2]), at(i1[0], i0[1], i1[2]), t[0]);
  const double c11 = lerp(at(i0[0], i1[1], i1[2]), at(i1[0], i1[1], i1[2]), t[0]);
  return lerp(lerp(c00, c10, t[1]), lerp(c01, c11, t[1]), t[2]);
}

// psi(y): solves x + phi(x) = y by fixed-point iteration.
Vec3 invert_point(const VectorField& phi, const Vec3& y) {
  Vec3 x = y;
  for (int it = 0; it < 50; ++it) {
    Vec3 next;
    double change = 0.0;
    for (int a = 0; a < 3; ++a) {
      next[a] = y[a] - sample_field(phi, a, x);
      change = std::max(change, std::abs(next[a] - x[a]));
    }
    x = next;
    if (change < 1e-7) break;
  }
  return x;
}

void require(bool ok, const std::string& what) {
  if (!ok) throw ArgumentError("invalid phantom: " + what);
}

}  // namespace

void PhantomSpec::validate() const {
  require(grid.nx >= 4 && grid.ny >= 4 && grid.nz >= 4, "extents must be at least 4");
  require(edge > 0.0, "edge must be positive");
  require(noise_std >= 0.0, "noise_std must be non-negative");
  auto check_blob = [&](const Blob& b) {
    require(inside_grid(grid, b.center), "blob '" + b.name + "' centered outside the grid");
    for (double r : b.radii) require(r > 0.0, "blob '" + b.name + "' needs positive radii");
  };
  check_blob(body);
  for (const Blob& b : organs) check_blob(b);
  for (const Blob& b : texture) check_blob(b);
  for (std::size_t i = 0; i < lesions.size(); ++i) {
    const auto& l = lesions[i];
    require(inside_grid(grid, l.center), "lesion centered outside the grid");
    require(l.radius > 0.0, "lesion radius must be positive");
    require(l.factor > 0.0, "lesion factor must be positive");
    for (std::size_t j = 0; j < i; ++j) require(lesions[j].id != l.id, "duplicate lesion id");
  }
  double bound = 0.0;
  for (const VelocityBump& b : bumps) {
    require(b.width > 0.0, "bump width must be positive");
    bound += std::sqrt(b.amplitude[0] * b.amplitude[0] + b.amplitude[1] * b.amplitude[1] +
                       b.amplitude[2] * b.amplitude[2]);
  }
  // Keeps each scaling-and-squaring step at most half a voxel.
  require(bound / (1 << kDefaultSquaringSteps) <= 0.5, "velocity bumps too large");
}

VectorField bump_velocity(const PhantomSpec& s) {
  const Grid& g = s.grid;
  VectorField v = VectorField::zeros(g, FieldRole::kVelocity);
  for (int z = 0; z < g.nz; ++z)
    for (int y = 0; y < g.ny; ++y)
      for (int x = 0; x < g.nx; ++x) {
        double acc[3] = {0, 0, 0};
        for (const VelocityBump& b : s.bumps) {
          const double q = (std::pow(x - b.center[0], 2.0) + std::pow(y - b.center[1], 2.0) +
                            std::pow(z - b.center[2], 2.0)) /
                           (b.width * b.width);
          const double w = std::exp(-0.5 * q);
          for (int c = 0; c < 3; ++c) acc[c] += w * b.amplitude[c];
        }
        for (int c = 0; c < 3; ++c) v.component(c)[g.index(x, y, z)] = static_cast<float>(acc[c]);
      }
  return v;
}

PhantomSpec default_phantom(std::uint64_t seed, int extent, double max_velocity,
                            double noise_fraction) {
  if (extent < 16) throw ArgumentError("default phantom needs extent >= 16");
  const double n = extent;
  if (max_velocity < 0.0) max_velocity = n / 16.0;
  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);

  PhantomSpec s;
  s.grid = Grid::cube(extent);
  s.seed = seed;
  s.noise_std = noise_fraction * 1.0;
  const double c = (n - 1) / 2.0;
  auto jitter = [&](double amount) { return amount * n * u(rng); };

  s.body = Blob{"body", {c, c, c}, {0.32 * n, 0.26 * n, 0.45 * n}, 0.2};
  s.organs.push_back(Blob{"brain",
                          {c + jitter(0.03), c + jitter(0.03), c + 0.27 * n + jitter(0.02)},
                          {0.14 * n, 0.13 * n, 0.11 * n},
                          1.0});
  s.organs.push_back(Blob{"bladder",
                          {c + jitter(0.03), c + 0.03 * n + jitter(0.02), c - 0.26 * n + jitter(0.02)},
                          {0.09 * n, 0.08 * n, 0.07 * n},
                          0.8});

  auto in_body = [&](const Vec3& p, double limit) {
    return ellipsoid_distance(p, s.body.center, s.body.radii) < limit;
  };
  auto random_body_point = [&](double limit) {
    for (;;) {
      Vec3 p{c + u(rng) * s.body.radii[0], c + u(rng) * s.body.radii[1], c + u(rng) * s.body.radii[2]};
      if (in_body(p, limit)) return p;
    }
  };

  for (int i = 0; i < 30; ++i) {
    const double sigma = (0.03 + 0.03 * (0.5 + 0.5 * u(rng))) * n;
    s.texture.push_back(Blob{"texture", random_body_point(0.85), {sigma, sigma, sigma}, 0.12 * u(rng)});
  }

  const Evolution evolutions[4] = {Evolution::kStable, Evolution::kShrink, Evolution::kGrow,
                                   Evolution::kVanish};
  const double factors[4] = {1.0, 0.6, 1.4, 1.0};
  const double theta0 = M_PI * u(rng);
  for (int k = 0; k < 4; ++k) {
    LesionSpec l;
    l.id = k + 1;
    const double theta = theta0 + k * M_PI / 2.0;
    l.center = {c + 0.17 * n * std::cos(theta), c + 0.13 * n * std::sin(theta),
                c + (k - 1.5) * 0.07 * n};
    l.radius = (2.0 + 2.0 * (0.5 + 0.5 * u(rng))) * n / 64.0;
    l.intensity = 0.9;
    l.evolution = evolutions[k];
    l.factor = factors[k];
    s.lesions.push_back(l);
  }

  const double width = 0.15 * n;
  std::vector<Vec3> centers = {s.organs[0].center, s.organs[1].center};
  while (centers.size() < 6) centers.push_back(random_body_point(0.8));
  for (const Vec3& ctr : centers) {
    VelocityBump b;
    b.center = ctr;
    b.width = width;
    b.amplitude = {normal(rng), normal(rng), normal(rng)};
    s.bumps.push_back(b);
  }
  const VectorField v = bump_velocity(s);
  double vmax = 0.0;
  for (std::size_t i = 0; i < v.grid.size(); ++i) {
    const double m = std::sqrt(std::pow(v.component(0)[i], 2.0) + std::pow(v.component(1)[i], 2.0) +
                               std::pow(v.component(2)[i], 2.0));
    vmax = std::max(vmax, m);
  }
  if (vmax > 0.0)
    for (auto& b : s.bumps)
      for (double& a : b.amplitude) a *= max_velocity / vmax;
  return s;
}

PhantomCase generate(const PhantomSpec& spec) {
  spec.validate();
  const Grid& g = spec.grid;
  PhantomCase out;
  out.velocity_gt = bump_velocity(spec);
  out.phi_gt = exp_velocity(out.velocity_gt);
  out.phi_gt.role = FieldRole::kDisplacement;

  out.fixed = Volume::zeros(g, spec.spacing);
  out.moving = Volume::zeros(g, spec.spacing);
  out.body = Mask::empty(g, spec.spacing);

  auto& masks = out.masks;
  for (const Blob& o : spec.organs) {
    masks.organs_fixed.push_back({o.name, Mask::empty(g, spec.spacing)});
    masks.organs_moving.push_back({o.name, Mask::empty(g, spec.spacing)});
  }
  for (const LesionSpec& l : spec.lesions) {
    LesionPair p;
    p.id = l.id;
    p.status = l.evolution == Evolution::kVanish ? LesionStatus::kVanished : LesionStatus::kPresent;
    p.moving = Mask::empty(g, spec.spacing);
    p.fixed = Mask::empty(g, spec.spacing);
    masks.lesions.push_back(std::move(p));
  }

  for (int z = 0; z < g.nz; ++z)
    for (int y = 0; y < g.ny; ++y)
      for (int x = 0; x < g.nx; ++x) {
        const std::size_t i = g.index(x, y, z);
        const Vec3 p{double(x), double(y), double(z)};
        const Vec3 q = invert_point(out.phi_gt, p);
        out.fixed.data[i] = static_cast<float>(source(spec, p, true));
        out.moving.data[i] = static_cast<float>(source(spec, q, false));
        out.body.data[i] = ellipsoid_distance(p, spec.body.center, spec.body.radii) <= 1.0;
        for (std::size_t k = 0; k < spec.organs.size(); ++k) {
          const Blob& o = spec.organs[k];
          masks.organs_fixed[k].mask.data[i] = ellipsoid_distance(p, o.center, o.radii) <= 1.0;
          masks.organs_moving[k].mask.data[i] = ellipsoid_distance(q, o.center, o.radii) <= 1.0;
        }
        for (std::size_t k = 0; k < spec.lesions.size(); ++k) {
          const LesionSpec& l = spec.lesions[k];
          const double rf = l.fixed_radius();
          masks.lesions[k].fixed.data[i] = rf > 0.0 && ellipsoid_distance(p, l.center, {rf, rf, rf}) <= 1.0;
          masks.lesions[k].moving.data[i] =
              ellipsoid_distance(q, l.center, {l.radius, l.radius, l.radius}) <= 1.0;
        }
      }

  if (spec.noise_std > 0.0) {
    std::mt19937_64 rng(spec.seed);
    std::normal_distribution<double> noise(0.0, spec.noise_std);
    for (float& v : out.fixed.data) v += static_cast<float>(noise(rng));
    for (float& v : out.moving.data) v += static_cast<float>(noise(rng));
  }
  for (auto& l : masks.lesions)
    if (l.status == LesionStatus::kVanished) l.fixed = Mask::empty(g, spec.spacing);
  return out;
}

std::optional<FieldError> field_error(const VectorField& est, const VectorField& gt, const Mask& mask) {
  if (!(est.grid == gt.grid) || !(est.grid == mask.grid))
    throw ShapeError("field_error: extents differ");
  std::vector<double> e;
  for (std::size_t i = 0; i < mask.data.size(); ++i) {
    if (!mask.data[i]) continue;
    double s = 0.0;
    for (int c = 0; c < 3; ++c) {
      const double d = static_cast<double>(est.component(c)[i]) - gt.component(c)[i];
      s += d * d;
    }
    e.push_back(std::sqrt(s));
  }
  if (e.empty()) return std::nullopt;
  FieldError r;
  for (double v : e) r.mean += v;
  r.mean /= static_cast<double>(e.size());
  const std::size_t rank = static_cast<std::size_t>(std::ceil(0.95 * e.size())) - 1;
  std::nth_element(e.begin(), e.begin() + rank, e.end());
  r.p95 = e[rank];
  return r;
}

}  // namespace mirrba
