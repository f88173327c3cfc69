#include "mirrba/field/volume.hpp"

#include <algorithm>
#include <cmath>

namespace mirrba {

Grid Grid::from_shape(const ad::Shape& s) {
  if (s.size() != 4) {
    throw ShapeError("expected a (C, Z, Y, X) shape, got " + ad::to_string(s));
  }
  return {s[3], s[2], s[1]};
}

std::string to_string(const Grid& g) {
  return std::to_string(g.nx) + "x" + std::to_string(g.ny) + "x" + std::to_string(g.nz);
}

Volume Volume::zeros(const Grid& g, const Spacing& spacing) {
  return Volume{g, spacing, std::vector<float>(g.size(), 0.0f)};
}

Mask Mask::empty(const Grid& g, const Spacing& spacing) {
  return Mask{g, spacing, std::vector<std::uint8_t>(g.size(), 0)};
}

std::size_t Mask::count() const {
  return static_cast<std::size_t>(
      std::count_if(data.begin(), data.end(), [](std::uint8_t v) { return v != 0; }));
}

VectorField VectorField::zeros(const Grid& g, FieldRole role) {
  return VectorField{g, role, std::vector<float>(3 * g.size(), 0.0f)};
}

void require_finite(std::span<const float> values, const char* what) {
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!std::isfinite(values[i])) {
      throw ArgumentError(std::string(what) + ": non-finite value at element " +
                          std::to_string(i));
    }
  }
}

}  // namespace mirrba
