#pragma once

// Synthetic PET-like image pairs with a known deformation.
//
// Intensities are rendered analytically from ellipsoidal blobs. The fixed
// image shows the source S at x; the moving image shows S at psi(y), where
// psi inverts y = x + phi_gt(x). Warping the moving image with phi_gt
// therefore reproduces the fixed anatomy, so phi_gt is the displacement a
// registration should recover.

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "mirrba/field/volume.hpp"
#include "mirrba/metrics/metrics.hpp"

namespace mirrba {

using Vec3 = std::array<double, 3>;

struct Blob {
  std::string name;
  Vec3 center{};
  Vec3 radii{};
  double intensity = 1.0;
};

enum class Evolution { kStable, kShrink, kGrow, kVanish };

std::string to_string(Evolution e);

struct LesionSpec {
  int id = 0;
  Vec3 center{};
  // Radius at the moving (earlier) time point.
  double radius = 3.0;
  double intensity = 1.0;
  Evolution evolution = Evolution::kStable;
  // Radius ratio fixed / moving for shrink and grow.
  double factor = 1.0;

  double fixed_radius() const;
};

// Gaussian bump of the ground-truth velocity.
struct VelocityBump {
  Vec3 center{};
  double width = 8.0;
  Vec3 amplitude{};
};

struct PhantomSpec {
  Grid grid = Grid::cube(64);
  Spacing spacing{1.0, 1.0, 1.0};
  Blob body;
  std::vector<Blob> organs;
  // Faint structure inside the body so the interior is not featureless.
  std::vector<Blob> texture;
  std::vector<LesionSpec> lesions;
  std::vector<VelocityBump> bumps;
  // Edge width of the rendered blobs, voxels.
  double edge = 0.75;
  // Additive Gaussian noise std, absolute intensity units.
  double noise_std = 0.02;
  std::uint64_t seed = 0;

  void validate() const;
};

// Standard 64^3-style phantom: body, brain, bladder, four lesions (one per
// evolution), six velocity bumps scaled so max |v| = max_velocity voxels.
// Positions and bumps are jittered from `seed`.
PhantomSpec default_phantom(std::uint64_t seed, int extent = 64, double max_velocity = 4.0,
                            double noise_fraction = 0.02);

struct PhantomCase {
  Volume fixed;
  Volume moving;
  LabeledMasks masks;
  // Body outline in the fixed frame, where displacements live.
  Mask body;
  VectorField velocity_gt;
  VectorField phi_gt;
};

PhantomCase generate(const PhantomSpec& spec);

// Ground-truth velocity sampled on the grid.
VectorField bump_velocity(const PhantomSpec& spec);

struct FieldError {
  double mean = 0.0;
  double p95 = 0.0;
};

// Endpoint error |phi_est - phi_gt| over the mask; empty mask gives nullopt.
std::optional<FieldError> field_error(const VectorField& est, const VectorField& gt, const Mask& mask);

}  // namespace mirrba
