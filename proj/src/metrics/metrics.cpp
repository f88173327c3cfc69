#include "mirrba/metrics/metrics.hpp"

#include <cmath>
#include <cstdio>
#include <iostream>
#include <ostream>

#include "mirrba/error.hpp"
#include "mirrba/field/field.hpp"

namespace mirrba {

namespace {

void require_grid(const Grid& a, const Grid& b, const char* what) {
  if (!(a == b))
    throw ShapeError(std::string(what) + ": extents differ (" + to_string(a) + " vs " +
                     to_string(b) + ")");
}

std::size_t intersection(const Mask& a, const Mask& b) {
  std::size_t n = 0;
  for (std::size_t i = 0; i < a.data.size(); ++i) n += (a.data[i] != 0 && b.data[i] != 0);
  return n;
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

}  // namespace

void LabeledMasks::validate(const Grid& grid) const {
  if (organs_fixed.size() != organs_moving.size())
    throw ArgumentError("organ masks must be given at both time points");
  for (std::size_t i = 0; i < organs_fixed.size(); ++i) {
    require_grid(organs_fixed[i].mask.grid, grid, "organ mask");
    require_grid(organs_moving[i].mask.grid, grid, "organ mask");
  }
  for (std::size_t i = 0; i < lesions.size(); ++i) {
    for (std::size_t j = 0; j < i; ++j)
      if (lesions[j].id == lesions[i].id)
        throw ArgumentError("duplicate lesion id " + std::to_string(lesions[i].id));
    require_grid(lesions[i].moving.grid, grid, "lesion mask");
    if (lesions[i].status == LesionStatus::kPresent) require_grid(lesions[i].fixed.grid, grid, "lesion mask");
  }
}

double dice(const Mask& a, const Mask& b) {
  require_grid(a.grid, b.grid, "dice");
  const std::size_t na = a.count(), nb = b.count();
  if (na + nb == 0) return 1.0;
  return 2.0 * static_cast<double>(intersection(a, b)) / static_cast<double>(na + nb);
}

Mask warp_mask(const Mask& mask, const VectorField& phi) {
  require_grid(mask.grid, phi.grid, "warp_mask");
  Volume v = Volume::zeros(mask.grid, mask.spacing);
  for (std::size_t i = 0; i < v.data.size(); ++i) v.data[i] = mask.data[i] != 0 ? 1.0f : 0.0f;
  const Volume w = warp(v, phi);
  Mask out = Mask::empty(mask.grid, mask.spacing);
  for (std::size_t i = 0; i < w.data.size(); ++i) out.data[i] = w.data[i] >= 0.5f ? 1 : 0;
  return out;
}

double lesion_overlap(const Mask& fixed, const Mask& warped, OverlapBase base) {
  require_grid(fixed.grid, warped.grid, "lesion_overlap");
  const double inter = static_cast<double>(intersection(fixed, warped));
  double denom = 0.0;
  switch (base) {
    case OverlapBase::kFixed: denom = static_cast<double>(fixed.count()); break;
    case OverlapBase::kWarped: denom = static_cast<double>(warped.count()); break;
    case OverlapBase::kUnion: denom = static_cast<double>(fixed.count() + warped.count()) - inter; break;
  }
  return denom > 0.0 ? inter / denom : 0.0;
}

std::optional<double> detection_rate(const std::vector<DetectionPair>& pairs, OverlapBase base) {
  if (pairs.empty()) return std::nullopt;
  int detected = 0;
  for (const auto& p : pairs) detected += lesion_overlap(*p.fixed, *p.warped, base) > 0.5;
  return 100.0 * detected / static_cast<double>(pairs.size());
}

std::optional<double> disappearing_rate(const std::vector<VanishedPair>& pairs, int* skipped) {
  double acc = 0.0;
  int used = 0, missing = 0;
  for (const auto& p : pairs) {
    require_grid(p.moving->grid, p.warped->grid, "disappearing_rate");
    const std::size_t nm = p.moving->count();
    if (nm == 0) {
      ++missing;
      std::cerr << "warning: vanished lesion with an empty moving mask skipped\n";
      continue;
    }
    acc += std::max(0.0, 1.0 - static_cast<double>(p.warped->count()) / static_cast<double>(nm));
    ++used;
  }
  if (skipped) *skipped = missing;
  if (used == 0) return std::nullopt;
  return 100.0 * acc / used;
}

MeanStd mean_std(const std::vector<double>& values) {
  MeanStd r;
  if (values.empty()) return r;
  for (double v : values) r.mean += v;
  r.mean /= static_cast<double>(values.size());
  double ss = 0.0;
  for (double v : values) ss += (v - r.mean) * (v - r.mean);
  r.std = std::sqrt(ss / static_cast<double>(values.size()));
  return r;
}

double sdjdet(const VectorField& phi) {
  const Volume det = jacobian_determinant(phi);
  std::vector<double> values(det.data.begin(), det.data.end());
  return mean_std(values).std;
}

EvalReport evaluate(const LabeledMasks& masks, const VectorField& phi, OverlapBase base) {
  masks.validate(phi.grid);
  EvalReport r;
  std::vector<double> organ;
  for (std::size_t i = 0; i < masks.organs_fixed.size(); ++i)
    organ.push_back(dice(masks.organs_fixed[i].mask, warp_mask(masks.organs_moving[i].mask, phi)));
  if (!organ.empty()) r.dice_organs = mean_std(organ);

  std::vector<Mask> warped;
  warped.reserve(masks.lesions.size());
  for (const auto& l : masks.lesions) warped.push_back(warp_mask(l.moving, phi));

  std::vector<double> lesion;
  std::vector<DetectionPair> present;
  std::vector<VanishedPair> vanished;
  for (std::size_t i = 0; i < masks.lesions.size(); ++i) {
    const auto& l = masks.lesions[i];
    if (l.status == LesionStatus::kPresent) {
      lesion.push_back(dice(l.fixed, warped[i]));
      present.push_back({&l.fixed, &warped[i]});
    } else {
      vanished.push_back({&l.moving, &warped[i]});
    }
  }
  if (!lesion.empty()) r.dice_lesions = mean_std(lesion);
  r.detection_rate = detection_rate(present, base);
  r.disappearing_rate = disappearing_rate(vanished);
  r.sdjdet = sdjdet(phi);
  return r;
}

void write_report_csv(std::ostream& os, const EvalReport& r) {
  auto opt = [](const std::optional<double>& v) { return v ? fmt(*v) : std::string("NA"); };
  os << "dice_organs_mean,dice_organs_std,dice_lesions_mean,dice_lesions_std,"
        "detection_rate,disappearing_rate,sdjdet\n";
  os << (r.dice_organs ? fmt(r.dice_organs->mean) : "NA") << ','
     << (r.dice_organs ? fmt(r.dice_organs->std) : "NA") << ','
     << (r.dice_lesions ? fmt(r.dice_lesions->mean) : "NA") << ','
     << (r.dice_lesions ? fmt(r.dice_lesions->std) : "NA") << ',' << opt(r.detection_rate) << ','
     << opt(r.disappearing_rate) << ',' << fmt(r.sdjdet) << '\n';
}

}  // namespace mirrba
