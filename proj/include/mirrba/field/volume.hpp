#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "mirrba/ad/tape.hpp"

namespace mirrba {

// Voxel grid extents. Storage order is x fastest, then y, then z.
struct Grid {
  int nx = 1;
  int ny = 1;
  int nz = 1;

  std::size_t size() const {
    return static_cast<std::size_t>(nx) * ny * nz;
  }
  std::size_t index(int x, int y, int z) const {
    return (static_cast<std::size_t>(z) * ny + y) * nx + x;
  }
  bool contains(int x, int y, int z) const {
    return x >= 0 && y >= 0 && z >= 0 && x < nx && y < ny && z < nz;
  }
  ad::Shape shape(int channels) const { return {channels, nz, ny, nx}; }
  static Grid from_shape(const ad::Shape& s);
  static Grid cube(int n) { return {n, n, n}; }

  bool operator==(const Grid&) const = default;
};

std::string to_string(const Grid& g);

using Spacing = std::array<double, 3>;

// Scalar image on a grid.
struct Volume {
  Grid grid;
  Spacing spacing{1.0, 1.0, 1.0};
  std::vector<float> data;

  static Volume zeros(const Grid& g, const Spacing& spacing = {1.0, 1.0, 1.0});
  float& at(int x, int y, int z) { return data[grid.index(x, y, z)]; }
  float at(int x, int y, int z) const { return data[grid.index(x, y, z)]; }
};

// Binary mask; any non-zero byte is inside.
struct Mask {
  Grid grid;
  Spacing spacing{1.0, 1.0, 1.0};
  std::vector<std::uint8_t> data;

  static Mask empty(const Grid& g, const Spacing& spacing = {1.0, 1.0, 1.0});
  std::size_t count() const;
  bool at(int x, int y, int z) const { return data[grid.index(x, y, z)] != 0; }
};

enum class FieldRole { kVelocity, kDisplacement };

// Three planar components (dx, dy, dz) in voxel units.
struct VectorField {
  Grid grid;
  FieldRole role = FieldRole::kDisplacement;
  std::vector<float> data;

  static VectorField zeros(const Grid& g, FieldRole role = FieldRole::kDisplacement);
  std::span<float> component(int c) {
    return std::span<float>(data).subspan(c * grid.size(), grid.size());
  }
  std::span<const float> component(int c) const {
    return std::span<const float>(data).subspan(c * grid.size(), grid.size());
  }
};

// Throws ArgumentError if any value is NaN or infinite.
void require_finite(std::span<const float> values, const char* what);

}  // namespace mirrba
