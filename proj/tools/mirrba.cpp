#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include <CLI11.hpp>

#include "mirrba/error.hpp"
#include "mirrba/field/field.hpp"
#include "mirrba/gradsuite.hpp"
#include "mirrba/io/ablate.hpp"
#include "mirrba/io/case_io.hpp"
#include "mirrba/io/config.hpp"
#include "mirrba/io/volume_io.hpp"
#include "mirrba/metrics/metrics.hpp"
#include "mirrba/optim/optim.hpp"

namespace fs = std::filesystem;
using namespace mirrba;

namespace {

constexpr int kExitUsage = 1;
constexpr int kExitFormat = 2;
constexpr int kExitDivergence = 3;
constexpr int kExitGradcheck = 4;

struct Common {
  std::string config;
  std::vector<std::string> sets;
  int workers = 1;
};

io::RunConfig resolve(const Common& c) {
  io::RunConfig cfg;
  if (!c.config.empty()) cfg.load_file(c.config);
  for (const auto& s : c.sets) cfg.set_assignment(s);
  return cfg;
}

fs::path require_path(const io::RunConfig& cfg, const std::string& key) {
  if (!cfg.has_value(key)) throw ArgumentError("missing required setting '" + key + "'");
  return cfg.get(key);
}

fs::path out_dir(const io::RunConfig& cfg) {
  fs::path out = require_path(cfg, "out");
  fs::create_directories(out);
  cfg.write_file(out / "config.txt");
  return out;
}

// Image path from an explicit key or from the case directory.
fs::path image_path(const io::RunConfig& cfg, const std::string& key) {
  if (cfg.has_value(key)) return cfg.get(key);
  if (cfg.has_value("case")) return fs::path(cfg.get("case")) / (key + ".nvol");
  throw ArgumentError("missing required setting '" + key + "' (or 'case')");
}

std::ofstream open_out(const fs::path& p) {
  std::ofstream os(p);
  if (!os) throw std::runtime_error("cannot write " + p.string());
  return os;
}

void write_field_error(const fs::path& p, const std::optional<FieldError>& e) {
  auto os = open_out(p);
  os << "epe_mean,epe_p95\n";
  if (e) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.6f,%.6f\n", e->mean, e->p95);
    os << buf;
  } else {
    os << "NA,NA\n";
  }
}

int cmd_phantom(const io::RunConfig& cfg) {
  const fs::path out = out_dir(cfg);
  const PhantomCase pc = generate(cfg.phantom());
  io::write_case(out, pc);
  const EvalReport unregistered = evaluate(pc.masks, VectorField::zeros(pc.fixed.grid));
  std::cout << "case written to " << out.string() << '\n';
  if (unregistered.dice_organs)
    std::printf("unregistered organ dice %.4f\n", unregistered.dice_organs->mean);
  return 0;
}

int cmd_register(const io::RunConfig& cfg) {
  const Volume fixed_raw = io::read_volume(image_path(cfg, "fixed"));
  const Volume moving_raw = io::read_volume(image_path(cfg, "moving"));
  if (!(fixed_raw.grid == moving_raw.grid)) throw ShapeError("fixed and moving extents differ");
  const auto mode = io::parse_normalize_mode(cfg.get("normalize"));
  const Volume fixed = io::normalize_intensity(fixed_raw, mode);
  const Volume moving = io::normalize_intensity(moving_raw, mode);
  std::optional<VectorField> init;
  if (cfg.has_value("init")) init = io::read_field(cfg.get("init"));
  const std::string method = cfg.get("method");
  if (method != "mirrba" && method != "direct")
    throw ArgumentError("method must be mirrba or direct, got '" + method + "'");
  if (method == "direct" && init) throw ArgumentError("init is only supported with method=mirrba");

  const fs::path out = out_dir(cfg);
  const ScheduleConfig sched = cfg.schedule();
  auto hook = [](const TraceRow& r) {
    if (r.iteration % 10 == 0)
      std::fprintf(stderr, "it %5d level %d loss %.6f ncc %.6f\n", r.iteration, r.level, r.total, r.ncc);
  };

  RegistrationResult res;
  if (method == "direct") {
    res = register_direct(fixed, moving, sched, hook);
  } else {
    Network net = Network::build(cfg.net());
    res = register_mirrba(fixed, moving, net, sched, init ? &*init : nullptr, hook);
    auto os = open_out(out / "network.nprm");
    net.save(os);
  }

  io::write_field(out / "displacement.nvol", res.displacement, fixed_raw.spacing);
  io::write_volume(out / "warped.nvol", warp(moving_raw, res.displacement));
  for (std::size_t k = 0; k < res.level_fields.size(); ++k)
    io::write_field(out / ("displacement_level" + std::to_string(k + 1) + ".nvol"), res.level_fields[k],
                    fixed_raw.spacing);
  {
    auto os = open_out(out / "loss.csv");
    write_trace_csv(os, res.loss_trace);
  }
  {
    auto os = open_out(out / "levels.csv");
    os << "level,first_iteration,iterations,start_loss,end_loss,best_loss,best_iteration\n";
    for (const auto& s : loss_trace_report(res.loss_trace)) {
      char buf[160];
      std::snprintf(buf, sizeof buf, "%d,%d,%d,%.9g,%.9g,%.9g,%d\n", s.level, s.first_iteration, s.iterations,
                    s.start_loss, s.end_loss, s.best_loss, s.best_iteration);
      os << buf;
    }
  }
  if (cfg.has_value("case")) {
    const fs::path dir = cfg.get("case");
    const EvalReport report = evaluate(io::read_masks(dir), res.displacement);
    auto os = open_out(out / "report.csv");
    write_report_csv(os, report);
    if (auto truth = io::read_truth(dir))
      write_field_error(out / "field_error.csv", field_error(res.displacement, truth->phi_gt, truth->body));
  } else {
    EvalReport report;
    report.sdjdet = sdjdet(res.displacement);
    auto os = open_out(out / "report.csv");
    write_report_csv(os, report);
  }
  std::printf("%zu iterations in %.1f s, results in %s\n", res.loss_trace.size(), res.wall_time,
              out.string().c_str());
  return 0;
}

int cmd_eval(const io::RunConfig& cfg) {
  const fs::path dir = require_path(cfg, "case");
  const LabeledMasks masks = io::read_masks(dir);
  const std::string field = require_path(cfg, "field").string();
  const VectorField phi = field == "zero" ? VectorField::zeros(masks.organs_fixed.at(0).mask.grid)
                                          : io::read_field(field);
  const EvalReport report = evaluate(masks, phi);
  write_report_csv(std::cout, report);
  if (cfg.has_value("out")) {
    const fs::path out = out_dir(cfg);
    auto os = open_out(out / "report.csv");
    write_report_csv(os, report);
    if (auto truth = io::read_truth(dir))
      write_field_error(out / "field_error.csv", field_error(phi, truth->phi_gt, truth->body));
  }
  return 0;
}

int cmd_gradcheck(int seeds, double tolerance) {
  const GradSuiteReport report = run_gradient_suite(seeds, tolerance, [](const GradSuiteEntry& e) {
    std::printf("%-22s worst %.3e  %s\n", e.name.c_str(), e.worst_error, e.passed ? "ok" : "FAIL");
    std::fflush(stdout);
  });
  std::printf("%zu checks, %d seeds, %.1f s: %s\n", report.entries.size(), seeds, report.seconds,
              report.passed() ? "passed" : "FAILED");
  return report.passed() ? 0 : kExitGradcheck;
}

int cmd_ablate(const io::RunConfig& cfg, int workers) {
  const fs::path out = out_dir(cfg);
  const auto mode = io::parse_normalize_mode(cfg.get("normalize"));
  auto schedule_for = [&](int depth) {
    io::RunConfig c = cfg;
    c.set("depth", std::to_string(depth));
    c.set("method", "mirrba");
    return c.schedule();
  };
  const auto configs = io::ablation_set(cfg.get("ablate_set"), cfg.net(), schedule_for);
  const int count = cfg.get_int("ablate_seeds");
  if (count < 1) throw ArgumentError("ablate_seeds must be positive");
  std::vector<std::uint64_t> seeds;
  for (int i = 0; i < count; ++i) seeds.push_back(cfg.get_u64("phantom_seed") + i);
  auto case_for = [&](std::uint64_t seed) {
    io::RunConfig c = cfg;
    c.set("phantom_seed", std::to_string(seed));
    PhantomCase pc = generate(c.phantom());
    pc.fixed = io::normalize_intensity(pc.fixed, mode);
    pc.moving = io::normalize_intensity(pc.moving, mode);
    return pc;
  };
  std::fprintf(stderr, "%zu configurations x %d seeds on %d workers\n", configs.size(), count, workers);
  const auto runs = io::run_ablation(configs, seeds, case_for, workers, [](const io::AblationRun& r) {
    if (r.diverged)
      std::fprintf(stderr, "%s seed %llu diverged: %s\n", r.config_id.c_str(),
                   static_cast<unsigned long long>(r.seed), r.message.c_str());
    else
      std::fprintf(stderr, "%s seed %llu dice %.4f sdjdet %.4f (%.1f s)\n", r.config_id.c_str(),
                   static_cast<unsigned long long>(r.seed),
                   r.report.dice_organs ? r.report.dice_organs->mean : NAN, r.report.sdjdet, r.seconds);
  });
  {
    auto os = open_out(out / "ablation.csv");
    io::write_ablation_csv(os, configs, runs);
  }
  {
    auto os = open_out(out / "runs.csv");
    io::write_runs_csv(os, runs);
  }
  io::write_ablation_csv(std::cout, configs, runs);
  return 0;
}

int cmd_overlay(const io::RunConfig& cfg) {
  const Volume fixed = io::read_volume(image_path(cfg, "fixed"));
  Volume warped;
  if (cfg.has_value("warped")) {
    warped = io::read_volume(cfg.get("warped"));
  } else if (cfg.has_value("field")) {
    warped = warp(io::read_volume(image_path(cfg, "moving")), io::read_field(cfg.get("field")));
  } else {
    warped = io::read_volume(image_path(cfg, "moving"));
  }
  const fs::path prefix = require_path(cfg, "out");
  if (prefix.has_parent_path()) fs::create_directories(prefix.parent_path());
  for (const auto& p : io::write_overlays(prefix, fixed, warped)) std::cout << p.string() << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Registration by multi-level untrained networks"};
  app.require_subcommand(1);
  Common common;
  int seeds = 10;
  double tolerance = 1e-3;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", common.config, "key=value configuration file");
    sub->add_option("--set", common.sets, "override a setting, key=value (repeatable)");
  };
  auto* phantom = app.add_subcommand("phantom", "write a synthetic case directory to 'out'");
  auto* reg = app.add_subcommand("register", "register moving onto fixed, results in 'out'");
  auto* eval = app.add_subcommand("eval", "evaluate 'field' (or zero) against the masks of 'case'");
  auto* grad = app.add_subcommand("gradcheck", "finite-difference check of all operators");
  auto* ablate = app.add_subcommand("ablate", "run a configuration set over phantom seeds");
  auto* overlay = app.add_subcommand("overlay", "mid-slice overlays of fixed and warped images");
  for (auto* s : {phantom, reg, eval, ablate, overlay}) add_common(s);
  ablate->add_option("--workers", common.workers, "parallel runs")->check(CLI::PositiveNumber);
  grad->add_option("--seeds", seeds, "random draws per check")->check(CLI::PositiveNumber);
  grad->add_option("--tolerance", tolerance, "maximum relative error");
  app.add_subcommand("keys", "list configuration keys and defaults");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : kExitUsage;
  }

  try {
    if (grad->parsed()) return cmd_gradcheck(seeds, tolerance);
    if (app.got_subcommand("keys")) {
      for (const auto& k : io::config_keys())
        std::printf("%-26s %-14s %s\n", k.key.c_str(), k.default_value.empty() ? "-" : k.default_value.c_str(),
                    k.help.c_str());
      return 0;
    }
    const io::RunConfig cfg = resolve(common);
    if (phantom->parsed()) return cmd_phantom(cfg);
    if (reg->parsed()) return cmd_register(cfg);
    if (eval->parsed()) return cmd_eval(cfg);
    if (ablate->parsed()) return cmd_ablate(cfg, common.workers);
    if (overlay->parsed()) return cmd_overlay(cfg);
  } catch (const ArgumentError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const DivergenceError& e) {
    std::cerr << "diverged: " << e.what() << '\n';
    return kExitDivergence;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitFormat;
  }
  return kExitUsage;
}
