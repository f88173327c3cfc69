// Acceptance gate: one PASS/FAIL line per criterion, nonzero exit if any fail.
//
//   acceptance --cli path/to/mirrba [--only 1,4,9] [--seeds 10] [--extent 32]

#include <Eigen/Dense>
#include <unsupported/Eigen/MatrixFunctions>
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "mirrba/field/field.hpp"
#include "mirrba/gradsuite.hpp"
#include "mirrba/io/ablate.hpp"
#include "mirrba/io/config.hpp"
#include "mirrba/io/volume_io.hpp"
#include "mirrba/metrics/metrics.hpp"
#include "mirrba/optim/optim.hpp"
#include "mirrba/phantom/phantom.hpp"

namespace fs = std::filesystem;
using namespace mirrba;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double a) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

Outcome gradient_suite() {
  double worst = 0.0;
  const auto r = run_gradient_suite(10, 1e-3, [&](const GradSuiteEntry& e) {
    worst = std::max(worst, e.worst_error);
    if (!e.passed) std::printf("    %s: relative error %.3e\n", e.name.c_str(), e.worst_error);
  });
  return {r.passed() && r.seconds < 120.0,
          std::to_string(r.entries.size()) + " checks x 10 seeds, worst " + fmt("%.2e", worst) + ", " +
              fmt("%.1f", r.seconds) + " s"};
}

Outcome exp_map_oracle() {
  const Grid g = Grid::cube(24);
  const double c0 = 11.5;
  const int margin = 5;
  std::mt19937_64 rng(42);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  double worst_linear = 0.0;
  for (int trial = 0; trial < 8; ++trial) {
    Eigen::Matrix3d A;
    for (int i = 0; i < 9; ++i) A(i / 3, i % 3) = u(rng);
    A *= 0.1 / A.norm();  // Frobenius norm bounds the operator norm
    const Eigen::Matrix3d E = A.exp() - Eigen::Matrix3d::Identity();
    VectorField v = VectorField::zeros(g, FieldRole::kVelocity);
    for (int z = 0; z < g.nz; ++z)
      for (int y = 0; y < g.ny; ++y)
        for (int x = 0; x < g.nx; ++x) {
          const Eigen::Vector3d p(x - c0, y - c0, z - c0);
          const Eigen::Vector3d w = A * p;
          for (int c = 0; c < 3; ++c) v.component(c)[g.index(x, y, z)] = static_cast<float>(w[c]);
        }
    const VectorField phi = exp_velocity(v, 7);
    for (int z = margin; z < g.nz - margin; ++z)
      for (int y = margin; y < g.ny - margin; ++y)
        for (int x = margin; x < g.nx - margin; ++x) {
          const Eigen::Vector3d expect = E * Eigen::Vector3d(x - c0, y - c0, z - c0);
          for (int c = 0; c < 3; ++c)
            worst_linear = std::max(worst_linear, std::abs(phi.component(c)[g.index(x, y, z)] - expect[c]));
        }
  }
  double worst_const = 0.0;
  for (const auto& t : std::vector<std::array<double, 3>>{{1.5, -0.75, 2.25}, {-3.0, 0.5, 0.0}, {0.3, 0.3, -0.3}}) {
    VectorField v = VectorField::zeros(g, FieldRole::kVelocity);
    for (int c = 0; c < 3; ++c) std::fill(v.component(c).begin(), v.component(c).end(), static_cast<float>(t[c]));
    const VectorField phi = exp_velocity(v, 7);
    for (int z = 4; z < g.nz - 4; ++z)
      for (int y = 4; y < g.ny - 4; ++y)
        for (int x = 4; x < g.nx - 4; ++x)
          for (int c = 0; c < 3; ++c)
            worst_const = std::max(worst_const, std::abs(phi.component(c)[g.index(x, y, z)] - t[c]));
  }
  return {worst_linear <= 1e-2 && worst_const <= 1e-5,
          "linear max error " + fmt("%.2e", worst_linear) + " vox, translation max error " + fmt("%.2e", worst_const)};
}

int run(const std::string& cmd) {
  const int rc = std::system((cmd + " > /dev/null 2>&1").c_str());
  return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  return std::string((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
}

std::map<std::string, std::string> read_csv_row(const fs::path& p) {
  std::ifstream is(p);
  std::string head, row;
  std::getline(is, head);
  std::getline(is, row);
  std::map<std::string, std::string> out;
  std::stringstream hs(head), rs(row);
  for (std::string k, v; std::getline(hs, k, ',') && std::getline(rs, v, ',');) out[k] = v;
  return out;
}

Outcome identity_eval(const std::string& cli, const fs::path& work) {
  const fs::path cdir = work / "c3_case", edir = work / "c3_eval";
  if (run(cli + " phantom --set out=" + cdir.string()) != 0) return {false, "phantom command failed"};
  if (run(cli + " eval --set case=" + cdir.string() + " --set field=zero --set out=" + edir.string()) != 0)
    return {false, "eval command failed"};
  auto row = read_csv_row(edir / "report.csv");
  // The in-memory report must hold exact zeros, not merely values that print as zero.
  const PhantomCase pc = generate(io::RunConfig().phantom());
  const EvalReport rep = evaluate(pc.masks, VectorField::zeros(pc.fixed.grid));
  const bool exact = rep.sdjdet == 0.0 && rep.disappearing_rate && *rep.disappearing_rate == 0.0;
  const bool printed = row["sdjdet"] == "0.000000" && row["disappearing_rate"] == "0.000000";
  return {exact && printed, "sdjdet " + row["sdjdet"] + ", disappearing_rate " + row["disappearing_rate"] +
                                ", organ dice " + row["dice_organs_mean"] + ", detection " + row["detection_rate"]};
}

Outcome phantom_recovery() {
  const io::RunConfig cfg;
  const auto mode = io::parse_normalize_mode(cfg.get("normalize"));
  const PhantomCase pc = generate(cfg.phantom());
  const Volume f = io::normalize_intensity(pc.fixed, mode), m = io::normalize_intensity(pc.moving, mode);
  const double unreg = evaluate(pc.masks, VectorField::zeros(pc.fixed.grid)).dice_organs->mean;
  const auto t0 = std::chrono::steady_clock::now();
  const auto res = register_mirrba(f, m, cfg.net(), cfg.schedule());
  const double secs = seconds_since(t0);
  const EvalReport rep = evaluate(pc.masks, res.displacement);
  const auto fe = field_error(res.displacement, pc.phi_gt, pc.body);
  const Volume det = jacobian_determinant(res.displacement);
  const long folds = std::count_if(det.data.begin(), det.data.end(), [](float d) { return d <= 0.0f; });
  const double dice = rep.dice_organs->mean;
  return {unreg <= 0.80 && dice >= 0.90 && fe && fe->mean <= 1.0 && folds == 0 && secs <= 600.0,
          "dice " + fmt("%.4f", unreg) + " -> " + fmt("%.4f", dice) + ", epe " + fmt("%.3f", fe ? fe->mean : NAN) +
              " vox, folds " + std::to_string(folds) + ", " + fmt("%.0f", secs) + " s"};
}

struct SeedSuite {
  std::vector<std::uint64_t> seeds;
  std::map<std::string, std::vector<io::AblationRun>> by_config;
  std::vector<double> warm_dice, gt_dice, warm_epe;
  std::string error;
};

SeedSuite run_seed_suite(int nseeds, int extent, const std::set<std::string>& wanted, bool warm) {
  SeedSuite s;
  io::RunConfig cfg;
  cfg.set("phantom_extent", std::to_string(extent));
  const auto mode = io::parse_normalize_mode(cfg.get("normalize"));
  for (int i = 0; i < nseeds; ++i) s.seeds.push_back(static_cast<std::uint64_t>(i));
  auto schedule_for = [&](int depth) {
    io::RunConfig c = cfg;
    c.set("depth", std::to_string(depth));
    return c.schedule();
  };
  auto case_for = [&](std::uint64_t seed) {
    io::RunConfig c = cfg;
    c.set("phantom_seed", std::to_string(seed));
    PhantomCase pc = generate(c.phantom());
    pc.fixed = io::normalize_intensity(pc.fixed, mode);
    pc.moving = io::normalize_intensity(pc.moving, mode);
    return pc;
  };
  std::vector<io::AblationConfig> configs;
  for (auto& c : io::ablation_set("table", cfg.net(), schedule_for))
    if (wanted.count(c.id)) configs.push_back(c);
  const auto t0 = std::chrono::steady_clock::now();
  const auto runs = io::run_ablation(configs, s.seeds, case_for, 1, [&](const io::AblationRun& r) {
    std::printf("    %-15s seed %llu dice %.4f sdjdet %.4f ncc %.4f epe %.3f%s\n", r.config_id.c_str(),
                static_cast<unsigned long long>(r.seed), r.report.dice_organs ? r.report.dice_organs->mean : NAN,
                r.report.sdjdet, r.ncc, r.field_error ? r.field_error->mean : NAN, r.diverged ? " diverged" : "");
    std::fflush(stdout);
  });
  for (const auto& r : runs) s.by_config[r.config_id].push_back(r);

  const NetConfig net = cfg.net();
  const ScheduleConfig sched = cfg.schedule();
  for (auto seed : s.seeds) {
    if (!warm) break;
    const PhantomCase pc = case_for(seed);
    const auto res = register_mirrba(pc.fixed, pc.moving, net, sched, &pc.phi_gt);
    s.warm_dice.push_back(evaluate(pc.masks, res.displacement).dice_organs->mean);
    s.gt_dice.push_back(evaluate(pc.masks, pc.phi_gt).dice_organs->mean);
    s.warm_epe.push_back(field_error(res.displacement, pc.phi_gt, pc.body)->mean);
    std::printf("    warm_start      seed %llu dice %.4f (truth %.4f) epe %.3f\n",
                static_cast<unsigned long long>(seed), s.warm_dice.back(), s.gt_dice.back(), s.warm_epe.back());
    std::fflush(stdout);
  }
  std::printf("    seed suite: %zu seeds at %d^3 in %.0f s\n", s.seeds.size(), extent, seconds_since(t0));
  return s;
}

double dice_of(const io::AblationRun& r) {
  return r.diverged || !r.report.dice_organs ? -1.0 : r.report.dice_organs->mean;
}

int count_wins(const std::vector<io::AblationRun>& a, const std::vector<io::AblationRun>& b,
               const std::function<bool(const io::AblationRun&, const io::AblationRun&)>& wins) {
  int n = 0;
  for (std::size_t i = 0; i < a.size() && i < b.size(); ++i) n += wins(a[i], b[i]);
  return n;
}

std::string of(int k, std::size_t n) { return std::to_string(k) + "/" + std::to_string(n); }

int needed(double fraction, std::size_t n) { return static_cast<int>(std::ceil(fraction * static_cast<double>(n) - 1e-9)); }

Outcome architecture_prior(const SeedSuite& s) {
  const auto& m = s.by_config.at("mirrba");
  const auto& d = s.by_config.at("mirrba_wo_archi");
  const int k = count_wins(m, d, [](auto& a, auto& b) { return dice_of(a) > dice_of(b); });
  return {k >= needed(0.8, m.size()), "network beats direct field on organ dice in " + of(k, m.size()) + " seeds"};
}

Outcome depth_ordering(const SeedSuite& s) {
  const auto& d4 = s.by_config.at("mirrba_depth_4");
  const auto& d1 = s.by_config.at("mirrba_depth_1");
  const auto& full = s.by_config.at("mirrba");
  const auto& l1 = s.by_config.at("mirrba_level_1");
  auto better = [](auto& a, auto& b) { return dice_of(a) > dice_of(b); };
  const int k1 = count_wins(d4, d1, better), k2 = count_wins(full, l1, better);
  const int need = needed(0.9, full.size());
  return {k1 >= need && k2 >= need,
          "depth 4 > depth 1 in " + of(k1, d4.size()) + ", full > level-1 truncation in " + of(k2, full.size())};
}

Outcome regularization(const SeedSuite& s) {
  const auto& m = s.by_config.at("mirrba");
  const auto& w = s.by_config.at("mirrba_wo_regu");
  const int k = count_wins(w, m, [](auto& a, auto& b) { return !a.diverged && a.report.sdjdet > b.report.sdjdet; });
  double ncc_m = 0.0, ncc_w = 0.0;
  for (std::size_t i = 0; i < m.size(); ++i) {
    ncc_m += m[i].ncc;
    ncc_w += w[i].ncc;
  }
  ncc_m /= m.size();
  ncc_w /= w.size();
  // NCC dissimilarity: lower is better; "comparable" allows 0.01.
  const bool ncc_ok = ncc_w <= ncc_m + 0.01;
  return {k >= needed(0.8, m.size()) && ncc_ok,
          "larger sdjdet without regularization in " + of(k, m.size()) + ", mean ncc " + fmt("%.4f", ncc_w) +
              " vs " + fmt("%.4f", ncc_m)};
}

Outcome warm_start(const SeedSuite& s) {
  const auto& cold = s.by_config.at("mirrba");
  int kept = 0, improved = 0;
  double worst_drop = 0.0;
  for (std::size_t i = 0; i < s.seeds.size(); ++i) {
    const double drop = s.gt_dice[i] - s.warm_dice[i];
    worst_drop = std::max(worst_drop, drop);
    kept += drop <= 0.01;
    improved += cold[i].field_error && s.warm_epe[i] < cold[i].field_error->mean;
  }
  const std::size_t n = s.seeds.size();
  return {kept == static_cast<int>(n) && improved >= needed(0.8, n),
          "dice within 0.01 of truth in " + of(kept, n) + " (worst drop " + fmt("%.4f", worst_drop) +
              "), epe better than cold start in " + of(improved, n)};
}

// Files of `a` and `b` must match bitwise; for CSVs, columns named in
// `skip_columns` are ignored.
bool same_outputs(const fs::path& a, const fs::path& b, const std::set<std::string>& skip_columns,
                  std::vector<std::string>& diffs) {
  std::set<std::string> names;
  for (const auto& root : {a, b})
    for (const auto& e : fs::recursive_directory_iterator(root))
      if (e.is_regular_file()) names.insert(fs::relative(e.path(), root).string());
  bool ok = true;
  for (const auto& n : names) {
    std::string x = slurp(a / n), y = slurp(b / n);
    if (n == "config.txt") {
      // The echoed output location is the one setting that differs by design.
      auto drop_out = [](const std::string& text) {
        std::stringstream is(text), os;
        for (std::string line; std::getline(is, line);)
          if (line.rfind("out=", 0) != 0) os << line << '\n';
        return os.str();
      };
      x = drop_out(x);
      y = drop_out(y);
    }
    if (!skip_columns.empty() && fs::path(n).extension() == ".csv") {
      auto strip = [&](const std::string& text) {
        std::stringstream is(text), os;
        std::string line;
        std::vector<bool> keep;
        bool header = true;
        while (std::getline(is, line)) {
          std::stringstream ls(line);
          std::string cell;
          std::size_t col = 0;
          while (std::getline(ls, cell, ',')) {
            if (header) keep.push_back(!skip_columns.count(cell));
            if (col < keep.size() && keep[col]) os << cell << ',';
            ++col;
          }
          os << '\n';
          header = false;
        }
        return os.str();
      };
      x = strip(x);
      y = strip(y);
    }
    if (x != y) {
      ok = false;
      diffs.push_back(n);
    }
  }
  return ok;
}

Outcome determinism(const std::string& cli, const fs::path& work) {
  std::vector<std::string> diffs;
  bool ok = true;
  int commands = 0;
  auto twice = [&](const std::string& name, const std::function<std::string(const fs::path&)>& cmd,
                   const std::set<std::string>& skip = {}) {
    const fs::path a = work / ("c9_" + name + "_a"), b = work / ("c9_" + name + "_b");
    const int ra = run(cmd(a)), rb = run(cmd(b));
    ++commands;
    if (ra != 0 || rb != 0) {
      ok = false;
      diffs.push_back(name + " exit " + std::to_string(ra) + "/" + std::to_string(rb));
      return;
    }
    std::vector<std::string> d;
    if (!same_outputs(a, b, skip, d)) {
      ok = false;
      for (auto& x : d) diffs.push_back(name + ":" + x);
    }
  };
  const std::string small = " --set phantom_extent=16 --set iters_per_level=4";
  const fs::path cdir = work / "c9_case";
  run(cli + " phantom --set out=" + cdir.string() + small);
  twice("phantom", [&](const fs::path& o) { return cli + " phantom --set out=" + o.string() + small; });
  twice("register", [&](const fs::path& o) {
    return cli + " register --set case=" + cdir.string() + " --set out=" + o.string() + small;
  });
  twice("register_direct", [&](const fs::path& o) {
    return cli + " register --set method=direct --set case=" + cdir.string() + " --set out=" + o.string() + small;
  });
  twice("eval", [&](const fs::path& o) {
    return cli + " eval --set case=" + cdir.string() + " --set field=" + (cdir / "phi_gt.nvol").string() +
           " --set out=" + o.string();
  });
  twice("overlay", [&](const fs::path& o) {
    return cli + " overlay --set case=" + cdir.string() + " --set out=" + (o / "ov").string();
  });
  twice("gradcheck", [&](const fs::path& o) {
    fs::create_directories(o);
    return cli + " gradcheck --seeds 2 | grep -v ' s: ' > " + (o / "stdout.txt").string() + " #";
  });
  // Worker counts 1, 2 and 3 must agree; wall-clock seconds are the only
  // column allowed to differ.
  for (int w : {1, 2, 3}) {
    const fs::path o = work / ("c9_ablate_w" + std::to_string(w));
    ++commands;
    if (run(cli + " ablate --workers " + std::to_string(w) +
            " --set ablate_set=depth --set ablate_seeds=2 --set phantom_extent=32 --set iters_per_level=2 --set out=" +
            o.string()) != 0) {
      ok = false;
      diffs.push_back("ablate exit");
    }
  }
  for (int w : {2, 3}) {
    std::vector<std::string> d;
    if (!same_outputs(work / "c9_ablate_w1", work / ("c9_ablate_w" + std::to_string(w)), {"seconds"}, d)) {
      ok = false;
      for (auto& x : d) diffs.push_back("ablate workers " + std::to_string(w) + ":" + x);
    }
  }
  std::string detail = std::to_string(commands) + " command runs";
  if (!diffs.empty()) {
    detail += ", differences:";
    for (auto& d : diffs) detail += " " + d;
  } else {
    detail += ", all outputs bitwise identical";
  }
  return {ok, detail};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance criteria"};
  std::string cli;
  std::vector<int> only;
  int seeds = 10, extent = 64;
  app.add_option("--cli", cli, "path to the mirrba executable")->required();
  app.add_option("--only", only, "criteria to run")->delimiter(',');
  app.add_option("--seeds", seeds, "phantom seeds for criteria 5-8");
  app.add_option("--extent", extent, "phantom extent for criteria 5-8");
  CLI11_PARSE(app, argc, argv);

  const fs::path work = fs::temp_directory_path() / "mirrba_acceptance";
  fs::remove_all(work);
  fs::create_directories(work);
  auto wanted = [&](int k) { return only.empty() || std::count(only.begin(), only.end(), k); };

  int failed = 0;
  auto report = [&](int k, const char* name, const Outcome& o) {
    std::printf("criterion %d %s: %s (%s)\n", k, o.pass ? "PASS" : "FAIL", name, o.detail.c_str());
    std::fflush(stdout);
    failed += !o.pass;
  };

  if (wanted(1)) report(1, "gradient suite", gradient_suite());
  if (wanted(2)) report(2, "exponential map oracle", exp_map_oracle());
  if (wanted(3)) report(3, "identity evaluation", identity_eval(cli, work));
  if (wanted(4)) report(4, "phantom recovery", phantom_recovery());
  if (wanted(5) || wanted(6) || wanted(7) || wanted(8)) {
    std::set<std::string> configs{"mirrba"};
    if (wanted(5)) configs.insert("mirrba_wo_archi");
    if (wanted(6)) configs.insert({"mirrba_level_1", "mirrba_depth_1", "mirrba_depth_4"});
    if (wanted(7)) configs.insert("mirrba_wo_regu");
    const SeedSuite s = run_seed_suite(seeds, extent, configs, wanted(8));
    if (wanted(5)) report(5, "architecture prior ordering", architecture_prior(s));
    if (wanted(6)) report(6, "depth ordering", depth_ordering(s));
    if (wanted(7)) report(7, "regularization effect", regularization(s));
    if (wanted(8)) report(8, "warm start", warm_start(s));
  }
  if (wanted(9)) report(9, "determinism", determinism(cli, work));
  fs::remove_all(work);
  return failed == 0 ? 0 : 1;
}
