#include "mirrba/optim/optim.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <ostream>
#include <random>

#include "mirrba/ad/adam.hpp"
#include "mirrba/ad/ops.hpp"
#include "mirrba/error.hpp"
#include "mirrba/field/field.hpp"

namespace mirrba {

void ScheduleConfig::validate(int depth) const {
  if (static_cast<int>(iters_per_level.size()) != depth)
    throw ArgumentError("iters_per_level has " + std::to_string(iters_per_level.size()) +
                        " entries for a depth-" + std::to_string(depth) + " network");
  for (int n : iters_per_level)
    if (n < 0) throw ArgumentError("iteration counts must be non-negative");
  if (!(lr > 0.0)) throw ArgumentError("lr must be positive");
  if (!(freeze_fraction >= 0.0 && freeze_fraction <= 1.0))
    throw ArgumentError("freeze_fraction must be in [0, 1]");
  if (squaring_steps < 0 || squaring_steps > 20) throw ArgumentError("squaring_steps must be in [0, 20]");
  weights.validate();
}

int ScheduleConfig::total_iterations() const {
  int n = 0;
  for (int k : iters_per_level) n += k;
  return n;
}

std::vector<int> default_level_budget(int depth, int coarse, int finest) {
  std::vector<int> v(std::max(depth, 0), coarse);
  if (!v.empty()) v.back() = finest;
  return v;
}

namespace {

// Smallest per-axis extent of the coarsest level; the Jacobian penalty needs
// three samples and the level network halves its input once.
constexpr int kMinLevelExtent = 4;

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

void require_pair(const Volume& f, const Volume& m, const VectorField* init) {
  if (!(f.grid == m.grid))
    throw ShapeError("fixed " + to_string(f.grid) + " and moving " + to_string(m.grid) +
                     " extents differ");
  if (init && !(init->grid == f.grid))
    throw ShapeError("initial field " + to_string(init->grid) + " does not match image extents " +
                     to_string(f.grid));
  require_finite(f.data, "fixed image");
  require_finite(m.data, "moving image");
}

TraceRow make_row(int iteration, int level, const ad::LossTerms<float>& t) {
  return TraceRow{iteration, level, t.total.item(), t.ncc.item(), t.smooth.item(), t.diffeo.item()};
}

void check_finite(const TraceRow& row) {
  if (!std::isfinite(row.total) || !std::isfinite(row.ncc) || !std::isfinite(row.smooth) ||
      !std::isfinite(row.diffeo)) {
    throw DivergenceError("non-finite loss at level " + std::to_string(row.level) + ", iteration " +
                              std::to_string(row.iteration),
                          row.level, row.iteration);
  }
}

std::vector<float> level_input(const NetConfig& c, const Volume& fixed, const Volume& warped) {
  if (!c.two_channel_input) return warped.data;
  std::vector<float> data = fixed.data;
  data.insert(data.end(), warped.data.begin(), warped.data.end());
  return data;
}

VectorField to_field(const ad::Var<float>& v, const Grid& g, FieldRole role) {
  VectorField out{g, role, {}};
  out.data.assign(v.value().begin(), v.value().end());
  return out;
}

void finish(RegistrationResult& r, const Volume& moving, const VectorField* init) {
  if (init) {
    for (auto& f : r.level_fields) f = compose(*init, f);
    r.displacement = compose(*init, r.displacement);
  }
  r.displacement.role = FieldRole::kDisplacement;
  r.warped = warp(moving, r.displacement);
}

}  // namespace

RegistrationResult register_mirrba(const Volume& fixed, const Volume& moving, Network& net,
                                   const ScheduleConfig& schedule, const VectorField* init,
                                   const IterationHook& hook) {
  const auto t0 = Clock::now();
  require_pair(fixed, moving, init);
  const NetConfig& cfg = net.config();
  const int depth = net.depth();
  schedule.validate(depth);
  const Grid full = fixed.grid;
  const int unit = 1 << depth;
  if (full.nx % unit || full.ny % unit || full.nz % unit)
    throw ShapeError("extents " + to_string(full) + " must be divisible by " + std::to_string(unit) +
                     " for a depth-" + std::to_string(depth) + " network");
  const Grid coarsest = level_grid(full, depth, 0);
  if (coarsest.nx < kMinLevelExtent || coarsest.ny < kMinLevelExtent || coarsest.nz < kMinLevelExtent)
    throw ShapeError("extents " + to_string(full) + " are too small for a depth-" + std::to_string(depth) +
                     " network: the coarsest level would be " + to_string(coarsest) + ", below " +
                     std::to_string(kMinLevelExtent) + " per axis");

  const Volume start = init ? warp(moving, *init) : moving;

  std::vector<Volume> fs(depth), ms(depth);
  fs[depth - 1] = fixed;
  ms[depth - 1] = start;
  for (int i = depth - 2; i >= 0; --i) {
    fs[i] = resize_volume(fs[i + 1], 0.5);
    ms[i] = resize_volume(ms[i + 1], 0.5);
  }

  std::vector<ad::AdamState> adam;
  for (int i = 0; i < depth; ++i) adam.push_back(ad::make_adam(schedule.lr));

  RegistrationResult result;
  int global = 0;

  for (int L = 0; L < depth; ++L) {
    const int budget = schedule.iters_per_level[L];
    const int frozen_iters = L > 0 ? static_cast<int>(std::lround(schedule.freeze_fraction * budget)) : 0;
    // Coarse displacement upsampled to level L, fixed while lower levels are frozen.
    std::optional<VectorField> frozen_prior;

    for (int it = 0; it < budget; ++it, ++global) {
      const bool lower_frozen = it < frozen_iters;
      for (int i = 0; i < L; ++i) net.level(i).frozen = lower_frozen;
      net.level(L).frozen = false;
      if (lower_frozen && !frozen_prior && L > 0) {
        frozen_prior = upsample_field(
            pyramid_chain(net, ms, cfg.two_channel_input ? &fs : nullptr, L, schedule.squaring_steps));
      }

      ad::Tape<float> tape;
      std::vector<std::vector<ad::Var<float>>> bound(L + 1);
      ad::Var<float> phi;
      const int first = lower_frozen ? L : 0;
      if (lower_frozen) phi = tape.constant(frozen_prior->grid.shape(3), frozen_prior->data);
      for (int i = first; i <= L; ++i) {
        const Grid g = fs[i].grid;
        bound[i] = ad::bind_level(tape, net.level(i), true);
        Volume warped_in = ms[i];
        if (i > 0) {
          if (i > first) phi = ad::upsample_field(phi);
          // The warped input is treated as data; gradients reach coarser
          // levels through the composition below.
          warped_in = warp(ms[i], to_field(phi, g, FieldRole::kDisplacement));
        }
        auto x = tape.constant(g.shape(cfg.input_channels()), level_input(cfg, fs[i], warped_in));
        auto v = ad::forward_level(cfg, bound[i], x);
        auto r = ad::exp_velocity(v, schedule.squaring_steps);
        phi = i == 0 ? r : ad::compose(phi, r);
      }

      auto f = tape.constant(fs[L].grid.shape(1), fs[L].data);
      auto m = tape.constant(ms[L].grid.shape(1), ms[L].data);
      auto terms = ad::total_loss(f, m, phi, schedule.weights);
      const TraceRow row = make_row(global, L + 1, terms);
      check_finite(row);
      result.loss_trace.push_back(row);
      if (hook) hook(row);

      tape.backward(terms.total);
      for (int i = first; i <= L; ++i) {
        auto& params = net.level(i).params;
        std::vector<std::span<float>> ps;
        std::vector<std::span<const float>> gs;
        for (std::size_t k = 0; k < params.size(); ++k) {
          ps.emplace_back(params[k].value);
          gs.push_back(bound[i][k].grad());
        }
        ad::adam_step(ps, gs, adam[i]);
      }
    }
    for (int i = 0; i < depth; ++i) net.level(i).frozen = false;

    VectorField snap = pyramid_field(net, start, L + 1, schedule.squaring_steps,
                                     cfg.two_channel_input ? &fixed : nullptr);
    require_finite(snap.data, "displacement");
    result.level_fields.push_back(std::move(snap));
  }

  result.displacement = result.level_fields.back();
  finish(result, moving, init);
  result.wall_time = seconds_since(t0);
  return result;
}

RegistrationResult register_mirrba(const Volume& fixed, const Volume& moving,
                                   const NetConfig& net_config, const ScheduleConfig& schedule,
                                   const VectorField* init, const IterationHook& hook) {
  Network net = Network::build(net_config);
  return register_mirrba(fixed, moving, net, schedule, init, hook);
}

VectorField direct_initial_velocity(const Grid& grid, std::uint64_t seed) {
  VectorField v = VectorField::zeros(grid, FieldRole::kVelocity);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd(0.0, kDirectInitStd);
  for (float& x : v.data) x = static_cast<float>(nd(rng));
  return v;
}

RegistrationResult register_direct(const Volume& fixed, const Volume& moving,
                                   const ScheduleConfig& schedule, const IterationHook& hook) {
  const auto t0 = Clock::now();
  require_pair(fixed, moving, nullptr);
  schedule.validate(static_cast<int>(schedule.iters_per_level.size()));
  const Grid g = fixed.grid;
  VectorField v = direct_initial_velocity(g, schedule.seed);
  ad::AdamState adam = ad::make_adam(schedule.lr);
  RegistrationResult result;
  const int total = schedule.total_iterations();
  for (int it = 0; it < total; ++it) {
    ad::Tape<float> tape;
    auto leaf = tape.leaf(g.shape(3), v.data);
    auto phi = ad::exp_velocity(leaf, schedule.squaring_steps);
    auto f = tape.constant(g.shape(1), fixed.data);
    auto m = tape.constant(g.shape(1), moving.data);
    auto terms = ad::total_loss(f, m, phi, schedule.weights);
    const TraceRow row = make_row(it, 1, terms);
    check_finite(row);
    result.loss_trace.push_back(row);
    if (hook) hook(row);
    tape.backward(terms.total);
    std::span<float> p(v.data);
    std::span<const float> gr = leaf.grad();
    ad::adam_step(std::span<const std::span<float>>(&p, 1), std::span<const std::span<const float>>(&gr, 1),
                  adam);
  }
  result.displacement = exp_velocity(v, schedule.squaring_steps);
  require_finite(result.displacement.data, "displacement");
  result.level_fields.push_back(result.displacement);
  finish(result, moving, nullptr);
  result.wall_time = seconds_since(t0);
  return result;
}

std::vector<LevelSummary> loss_trace_report(const std::vector<TraceRow>& trace) {
  std::vector<LevelSummary> out;
  for (const TraceRow& r : trace) {
    if (out.empty() || out.back().level != r.level) {
      LevelSummary s;
      s.level = r.level;
      s.first_iteration = r.iteration;
      s.start_loss = r.total;
      s.best_loss = r.total;
      s.best_iteration = r.iteration;
      out.push_back(s);
    }
    LevelSummary& s = out.back();
    ++s.iterations;
    s.end_loss = r.total;
    if (r.total < s.best_loss) {
      s.best_loss = r.total;
      s.best_iteration = r.iteration;
    }
  }
  return out;
}

void write_trace_csv(std::ostream& os, const std::vector<TraceRow>& trace) {
  os << "iteration,level,total,ncc,smooth,diffeo\n";
  char buf[160];
  for (const TraceRow& r : trace) {
    std::snprintf(buf, sizeof buf, "%d,%d,%.9g,%.9g,%.9g,%.9g\n", r.iteration, r.level, r.total, r.ncc,
                  r.smooth, r.diffeo);
    os << buf;
  }
}

}  // namespace mirrba
