#pragma once

// Configuration lattices evaluated over phantom seeds.

#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "mirrba/metrics/metrics.hpp"
#include "mirrba/net/net.hpp"
#include "mirrba/optim/optim.hpp"
#include "mirrba/phantom/phantom.hpp"

namespace mirrba::io {

enum class Method { kMirrba, kDirect };

struct AblationConfig {
  std::string id;
  Method method = Method::kMirrba;
  NetConfig net;
  ScheduleConfig schedule;
  // When > 0, this row reuses the run of `source` and reports the field it
  // held after this many levels.
  int truncate_level = 0;
  std::string source;
};

using ScheduleFor = std::function<ScheduleConfig(int depth)>;

// "depth": depths 1-4. "table": the reference network, without
// regularization, as a direct field, at depths 1, 2 and 4, truncated after
// levels 1 and 2, with max pooling, with trilinear upsampling, without
// residual connections, and at depth 4 with both pooling and upsampling.
// "lattice": depth x residual x down mode x up mode.
std::vector<AblationConfig> ablation_set(const std::string& name, const NetConfig& base,
                                         const ScheduleFor& schedule_for);

struct AblationRun {
  std::string config_id;
  std::uint64_t seed = 0;
  bool diverged = false;
  std::string message;
  EvalReport report;
  std::optional<FieldError> field_error;
  double ncc = 0.0;
  int iterations = 0;
  double seconds = 0.0;
};

using CaseFor = std::function<PhantomCase(std::uint64_t seed)>;

// Runs every (config, seed) pair on `workers` threads. Results are ordered by
// config then seed and do not depend on the worker count.
std::vector<AblationRun> run_ablation(const std::vector<AblationConfig>& configs,
                                      const std::vector<std::uint64_t>& seeds, const CaseFor& case_for,
                                      int workers = 1,
                                      const std::function<void(const AblationRun&)>& on_run = {});

// One row per config: config_id, dice_organs_mean, dice_organs_std,
// dice_lesions_mean, dice_lesions_std, detection_rate, disappearing_rate,
// sdjdet, iterations, seconds.
void write_ablation_csv(std::ostream& os, const std::vector<AblationConfig>& configs,
                        const std::vector<AblationRun>& runs);

// One row per run.
void write_runs_csv(std::ostream& os, const std::vector<AblationRun>& runs);

}  // namespace mirrba::io
