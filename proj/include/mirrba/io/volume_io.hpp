#pragma once

// "NVOL1" volume files:
//
//   NVOL1
//   dims: X Y Z
//   spacing: sx sy sz
//   channels: c
//   data: f32-le | u8
//   <blank line>
//   raw values, x fastest, channel planar
//
// Volumes have one channel, displacement fields three; masks use u8.

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "mirrba/field/volume.hpp"

namespace mirrba::io {

enum class DataType { kF32, kU8 };

struct RawVolume {
  Grid grid;
  Spacing spacing{1.0, 1.0, 1.0};
  int channels = 1;
  DataType type = DataType::kF32;
  std::vector<float> f32;
  std::vector<std::uint8_t> u8;
};

void write_raw(std::ostream& os, const RawVolume& v);
RawVolume read_raw(std::istream& is);

void write_volume(std::ostream& os, const Volume& v);
void write_field(std::ostream& os, const VectorField& f, const Spacing& spacing = {1.0, 1.0, 1.0});
void write_mask(std::ostream& os, const Mask& m);
Volume read_volume(std::istream& is);
VectorField read_field(std::istream& is);
Mask read_mask(std::istream& is);

void write_volume(const std::filesystem::path& p, const Volume& v);
void write_field(const std::filesystem::path& p, const VectorField& f,
                 const Spacing& spacing = {1.0, 1.0, 1.0});
void write_mask(const std::filesystem::path& p, const Mask& m);
Volume read_volume(const std::filesystem::path& p);
VectorField read_field(const std::filesystem::path& p);
Mask read_mask(const std::filesystem::path& p);

enum class NormalizeMode { kMinMax, kZScore, kNone };

NormalizeMode parse_normalize_mode(const std::string& s);
std::string to_string(NormalizeMode m);

// minmax maps onto [0, 1], zscore to zero mean and unit population std;
// constant volumes become all zeros under both.
Volume normalize_intensity(const Volume& v, NormalizeMode mode);

// Mid-slice overlays (axial, coronal, sagittal) as binary PPM files named
// <prefix>_axial.ppm etc. Fixed goes to the green channel, warped to red and
// blue. Returns the written paths.
std::vector<std::filesystem::path> write_overlays(const std::filesystem::path& prefix,
                                                  const Volume& fixed, const Volume& warped);

}  // namespace mirrba::io
