#pragma once

// Phantom case directories:
//
//   fixed.nvol  moving.nvol  phi_gt.nvol  velocity_gt.nvol  body.nvol
//   masks/index.txt            "organ <name>" / "lesion <id> present|vanished"
//   masks/organ_<name>_fixed.nvol, organ_<name>_moving.nvol
//   masks/lesion_<id>_moving.nvol, lesion_<id>_fixed.nvol (present lesions)

#include <filesystem>
#include <optional>

#include "mirrba/metrics/metrics.hpp"
#include "mirrba/phantom/phantom.hpp"

namespace mirrba::io {

void write_case(const std::filesystem::path& dir, const PhantomCase& c);

LabeledMasks read_masks(const std::filesystem::path& dir);

struct CaseTruth {
  VectorField phi_gt;
  Mask body;
};

// Ground truth of a case directory, if present.
std::optional<CaseTruth> read_truth(const std::filesystem::path& dir);

}  // namespace mirrba::io
