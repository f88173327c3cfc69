#pragma once

// Evaluation of a registration from masks and the displacement: organ and
// lesion Dice, lesion detection and disappearing rates, SDJDet.

#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "mirrba/field/volume.hpp"

namespace mirrba {

enum class LesionStatus { kPresent, kVanished };

struct NamedMask {
  std::string name;
  Mask mask;
};

// A lesion followed across time points. `fixed` is empty when vanished.
struct LesionPair {
  int id = 0;
  LesionStatus status = LesionStatus::kPresent;
  Mask moving;
  Mask fixed;
};

struct LabeledMasks {
  std::vector<NamedMask> organs_fixed;
  std::vector<NamedMask> organs_moving;
  std::vector<LesionPair> lesions;

  void validate(const Grid& grid) const;
};

// Denominator of the lesion overlap ratio.
enum class OverlapBase { kFixed, kWarped, kUnion };

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;
};

struct EvalReport {
  std::optional<MeanStd> dice_organs;
  std::optional<MeanStd> dice_lesions;
  // Percent; empty when no lesion qualifies.
  std::optional<double> detection_rate;
  std::optional<double> disappearing_rate;
  double sdjdet = 0.0;
};

// 2|a & b| / (|a| + |b|); 1 when both are empty.
double dice(const Mask& a, const Mask& b);

// Trilinear warp of the 0/1 mask, then value >= 0.5.
Mask warp_mask(const Mask& mask, const VectorField& phi);

// |warped & fixed| / base.
double lesion_overlap(const Mask& fixed, const Mask& warped, OverlapBase base = OverlapBase::kFixed);

struct DetectionPair {
  const Mask* fixed;
  const Mask* warped;
};

// Percent of pairs with overlap strictly above 0.5.
std::optional<double> detection_rate(const std::vector<DetectionPair>& pairs,
                                     OverlapBase base = OverlapBase::kFixed);

struct VanishedPair {
  const Mask* moving;
  const Mask* warped;
};

// 100 * mean over lesions of max(0, 1 - |warped| / |moving|). Lesions with an
// empty moving mask are skipped and counted in `skipped`.
std::optional<double> disappearing_rate(const std::vector<VanishedPair>& pairs,
                                        int* skipped = nullptr);

// Population standard deviation of det(I + grad phi).
double sdjdet(const VectorField& phi);

EvalReport evaluate(const LabeledMasks& masks, const VectorField& phi,
                    OverlapBase base = OverlapBase::kFixed);

MeanStd mean_std(const std::vector<double>& values);

// Header plus one row; missing values are written as NA.
void write_report_csv(std::ostream& os, const EvalReport& report);

}  // namespace mirrba
