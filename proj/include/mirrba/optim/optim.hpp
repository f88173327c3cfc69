#pragma once

// Registration drivers: coarse-to-fine optimization of a per-pair network,
// direct optimization of a velocity field, and warm-started refinement.

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <vector>

#include "mirrba/field/volume.hpp"
#include "mirrba/losses/losses.hpp"
#include "mirrba/metrics/metrics.hpp"
#include "mirrba/net/net.hpp"

namespace mirrba {

struct ScheduleConfig {
  // One entry per network level, coarsest first.
  std::vector<int> iters_per_level{1000, 1000, 2000};
  double lr = 1e-4;
  // Share of each level's budget during which coarser levels stay frozen.
  double freeze_fraction = 0.2;
  LossWeights weights;
  int squaring_steps = 7;
  std::uint64_t seed = 0;

  void validate(int depth) const;
  int total_iterations() const;
};

// Budgets extending the published depth-3 pattern: 1000 per coarse level,
// 2000 on the finest.
std::vector<int> default_level_budget(int depth, int coarse = 1000, int finest = 2000);

struct TraceRow {
  int iteration = 0;
  // 1-based, coarsest first.
  int level = 1;
  double total = 0.0;
  double ncc = 0.0;
  double smooth = 0.0;
  double diffeo = 0.0;
};

struct RegistrationResult {
  VectorField displacement;
  Volume warped;
  std::vector<TraceRow> loss_trace;
  // Full-resolution displacement as it stood at the end of each level.
  std::vector<VectorField> level_fields;
  std::optional<EvalReport> metrics;
  double wall_time = 0.0;
};

using IterationHook = std::function<void(const TraceRow&)>;

// Optimizes `net` in place. With `init`, the moving image is first warped by
// it and the result is init composed after the refinement, so that
// W(x) = M(x + result(x)).
RegistrationResult register_mirrba(const Volume& fixed, const Volume& moving, Network& net,
                                   const ScheduleConfig& schedule,
                                   const VectorField* init = nullptr,
                                   const IterationHook& hook = {});

RegistrationResult register_mirrba(const Volume& fixed, const Volume& moving,
                                   const NetConfig& net_config, const ScheduleConfig& schedule,
                                   const VectorField* init = nullptr,
                                   const IterationHook& hook = {});

inline constexpr double kDirectInitStd = 0.0316227766016838;  // sqrt(0.001)

// Velocity leaf with i.i.d. N(0, 0.001) entries.
VectorField direct_initial_velocity(const Grid& grid, std::uint64_t seed);

// Optimizes a full-resolution velocity for the summed iteration budget.
RegistrationResult register_direct(const Volume& fixed, const Volume& moving,
                                   const ScheduleConfig& schedule, const IterationHook& hook = {});

struct LevelSummary {
  int level = 1;
  int first_iteration = 0;
  int iterations = 0;
  double start_loss = 0.0;
  double end_loss = 0.0;
  double best_loss = 0.0;
  int best_iteration = 0;
};

std::vector<LevelSummary> loss_trace_report(const std::vector<TraceRow>& trace);

void write_trace_csv(std::ostream& os, const std::vector<TraceRow>& trace);

}  // namespace mirrba
