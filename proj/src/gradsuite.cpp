#include "mirrba/gradsuite.hpp"

#include <chrono>
#include <random>

#include "mirrba/ad/gradcheck.hpp"
#include "mirrba/field/field.hpp"
#include "mirrba/losses/losses.hpp"
#include "mirrba/net/net.hpp"

namespace mirrba {

bool GradSuiteReport::passed() const {
  for (const auto& e : entries)
    if (!e.passed) return false;
  return !entries.empty();
}

namespace {

using ad::check_gradient;
using ad::GradCheckInput;
using ad::GradCheckResult;
using ad::Shape;

std::vector<double> uniform(std::size_t n, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> d(lo, hi);
  std::vector<double> v(n);
  for (double& x : v) x = d(rng);
  return v;
}

// Values bounded away from zero, for checks through leaky_relu kinks.
std::vector<double> away_from_zero(std::size_t n, std::uint64_t seed) {
  auto v = uniform(n, seed, 0.1, 1.0);
  std::mt19937_64 rng(seed ^ 0x5bd1e995);
  for (double& x : v)
    if (rng() & 1) x = -x;
  return v;
}

// Displacements whose sample positions stay inside an n^3 grid and keep
// fractional parts in [0.15, 0.85].
std::vector<double> safe_displacement(int n, std::uint64_t seed) {
  const std::size_t nv = static_cast<std::size_t>(n) * n * n;
  auto d = uniform(3 * nv, seed, 0.15, 0.85);
  for (std::size_t i = 0; i < d.size(); ++i) {
    const std::size_t v = i % nv;
    const int p[3] = {static_cast<int>(v % n), static_cast<int>(v / n % n), static_cast<int>(v / (n * n))};
    if (p[i / nv] == n - 1) d[i] -= 1.0;
  }
  return d;
}

Shape cube(int c, int n) { return {c, n, n, n}; }

using Check = std::function<GradCheckResult(std::uint64_t seed)>;

struct Named {
  std::string name;
  Check run;
};

std::vector<Named> checks() {
  std::vector<Named> c;
  const int n = 5;
  const std::size_t nv = 125;

  auto elementwise = [&](const std::string& name, auto op) {
    c.push_back({name, [op](std::uint64_t s) {
                   return check_gradient(
                       [&](auto&, const auto& v) { return ad::project(op(v[0], v[1]), uniform(60, s + 3)); },
                       {{{3, 4, 5}, uniform(60, s), true}, {{3, 4, 5}, uniform(60, s + 1), true}});
                 }});
  };
  elementwise("add", [](const auto& a, const auto& b) { return ad::add(a, b); });
  elementwise("sub", [](const auto& a, const auto& b) { return ad::sub(a, b); });
  elementwise("mul", [](const auto& a, const auto& b) { return ad::mul(a, b); });
  c.push_back({"scale", [](std::uint64_t s) {
                 return check_gradient(
                     [&](auto&, const auto& v) {
                       using T = typename std::decay_t<decltype(v[0].value())>::element_type;
                       return ad::project(ad::scale(v[0], static_cast<T>(-1.7)), uniform(60, s + 1));
                     },
                     {{{60}, uniform(60, s), true}});
               }});
  c.push_back({"sum", [](std::uint64_t s) {
                 return check_gradient([](auto&, const auto& v) { return ad::sum(v[0]); },
                                       {{{2, 3, 4}, uniform(24, s), true}});
               }});
  c.push_back({"mean", [](std::uint64_t s) {
                 return check_gradient([](auto&, const auto& v) { return ad::mean(v[0]); },
                                       {{{2, 3, 4}, uniform(24, s), true}});
               }});
  c.push_back({"leaky_relu", [](std::uint64_t s) {
                 return check_gradient(
                     [&](auto&, const auto& v) {
                       using T = typename std::decay_t<decltype(v[0].value())>::element_type;
                       return ad::project(ad::leaky_relu(v[0], static_cast<T>(0.2)), uniform(64, s + 1));
                     },
                     {{{1, 4, 4, 4}, away_from_zero(64, s), true}});
               }});
  for (int stride : {1, 2}) {
    c.push_back({"conv3_stride" + std::to_string(stride), [stride](std::uint64_t s) {
                   const int out = stride == 1 ? 6 : 3;
                   return check_gradient(
                       [&](auto&, const auto& v) {
                         return ad::project(ad::conv3(v[0], v[1], v[2], stride),
                                            uniform(3 * out * out * out, s + 9));
                       },
                       {{cube(2, 6), uniform(2 * 216, s), true},
                        {{3, 2, 3, 3, 3}, uniform(162, s + 1, -0.5, 0.5), true},
                        {{3}, uniform(3, s + 2), true}});
                 }});
  }
  c.push_back({"conv3_transpose", [](std::uint64_t s) {
                 return check_gradient(
                     [&](auto&, const auto& v) {
                       return ad::project(ad::conv3_transpose(v[0], v[1], 2), uniform(2 * 216, s + 9));
                     },
                     {{cube(3, 3), uniform(81, s), true}, {{3, 2, 2, 2, 2}, uniform(48, s + 1), true}});
               }});
  c.push_back({"conv3_transpose_k3", [](std::uint64_t s) {
                 return check_gradient(
                     [&](auto&, const auto& v) {
                       return ad::project(ad::conv3_transpose(v[0], v[1], 2), uniform(2 * 216, s + 9));
                     },
                     {{cube(2, 3), uniform(54, s), true}, {{2, 2, 3, 3, 3}, uniform(108, s + 1), true}});
               }});
  c.push_back({"max_pool2", [](std::uint64_t s) {
                 return check_gradient(
                     [&](auto&, const auto& v) { return ad::project(ad::max_pool2(v[0]), uniform(54, s + 1)); },
                     {{cube(2, 6), uniform(432, s), true}});
               }});
  for (double f : {2.0, 0.5}) {
    c.push_back({f > 1 ? "trilinear_up2" : "trilinear_down2", [f](std::uint64_t s) {
                   const int in = f > 1 ? 3 : 6;
                   const int out = f > 1 ? 6 : 3;
                   return check_gradient(
                       [&](auto&, const auto& v) {
                         return ad::project(ad::trilinear_resize(v[0], f), uniform(2 * out * out * out, s + 1));
                       },
                       {{cube(2, in), uniform(2 * in * in * in, s), true}});
                 }});
  }
  c.push_back({"sample", [=](std::uint64_t s) {
                 return check_gradient(
                     [&](auto&, const auto& v) { return ad::project(ad::sample(v[0], v[1]), uniform(2 * nv, s + 2)); },
                     {{cube(2, n), uniform(2 * nv, s), true}, {cube(3, n), safe_displacement(n, s + 1), true}});
               }});
  c.push_back({"compose", [=](std::uint64_t s) {
                 return check_gradient(
                     [&](auto&, const auto& v) { return ad::project(ad::compose(v[0], v[1]), uniform(3 * nv, s + 2)); },
                     {{cube(3, n), uniform(3 * nv, s, -0.5, 0.5), true},
                      {cube(3, n), safe_displacement(n, s + 1), true}});
               }});
  c.push_back({"exp_velocity", [=](std::uint64_t s) {
                 return check_gradient(
                     [&](auto&, const auto& v) {
                       return ad::project(ad::exp_velocity(v[0], 4), uniform(3 * nv, s + 2));
                     },
                     {{cube(3, n), uniform(3 * nv, s, -0.6, 0.6), true}});
               }});
  c.push_back({"upsample_field", [](std::uint64_t s) {
                 return check_gradient(
                     [&](auto&, const auto& v) { return ad::project(ad::upsample_field(v[0]), uniform(3 * 216, s + 1)); },
                     {{cube(3, 3), uniform(81, s), true}});
               }});
  c.push_back({"ncc", [](std::uint64_t s) {
                 return check_gradient(
                     [](auto&, const auto& v) { return ad::ncc_dissimilarity(v[0], v[1], 3); },
                     {{cube(1, 6), uniform(216, s, 0.0, 1.0), false}, {cube(1, 6), uniform(216, s + 1, 0.0, 1.0), true}});
               }});
  c.push_back({"ncc_window5", [](std::uint64_t s) {
                 return check_gradient(
                     [](auto&, const auto& v) { return ad::ncc_dissimilarity(v[0], v[1], 5); },
                     {{cube(1, 6), uniform(216, s, 0.0, 1.0), true}, {cube(1, 6), uniform(216, s + 1, 0.0, 1.0), true}});
               }});
  c.push_back({"smoothness", [](std::uint64_t s) {
                 return check_gradient([](auto&, const auto& v) { return ad::smoothness_penalty(v[0]); },
                                       {{cube(3, 6), uniform(648, s, -0.6, 0.6), true}});
               }});
  c.push_back({"negative_jacobian", [](std::uint64_t s) {
                 return check_gradient([](auto&, const auto& v) { return ad::negative_jacobian_penalty(v[0]); },
                                       {{cube(3, 6), uniform(648, s, -1.5, 1.5), true}});
               }});
  c.push_back({"total_loss", [=](std::uint64_t s) {
                 return check_gradient(
                     [](auto&, const auto& v) {
                       return ad::total_loss(v[0], v[1], v[2], LossWeights{0.1, 1.0, 3}).total;
                     },
                     {{cube(1, n), uniform(nv, s, 0.0, 1.0), false},
                      {cube(1, n), uniform(nv, s + 1, 0.0, 1.0), true},
                      {cube(3, n), safe_displacement(n, s + 2), true}});
               }});
  c.push_back({"network_level", [](std::uint64_t s) {
                 NetConfig cfg;
                 cfg.depth = 1;
                 cfg.base_channels = 2;
                 cfg.residual_blocks_per_level = 1;
                 cfg.seed = s;
                 Network net = Network::build(cfg);
                 std::vector<GradCheckInput> in;
                 in.push_back({cube(1, 4), uniform(64, s, 0.0, 1.0), false});
                 std::uint64_t k = 0;
                 for (const auto& p : net.level(0).params) {
                   std::vector<double> vals(p.value.begin(), p.value.end());
                   if (p.name.rfind("head.", 0) == 0) vals = uniform(vals.size(), s + 100 + k, -0.1, 0.1);
                   in.push_back({p.shape, vals, true});
                   ++k;
                 }
                 return check_gradient(
                     [&](auto&, const auto& v) {
                       using V = std::decay_t<decltype(v[0])>;
                       std::vector<V> ps(v.begin() + 1, v.end());
                       return ad::project(ad::forward_level(cfg, ps, v[0]), uniform(192, s + 7));
                     },
                     in);
               }});
  return c;
}

}  // namespace

std::vector<std::string> gradient_suite_names() {
  std::vector<std::string> out;
  for (const auto& c : checks()) out.push_back(c.name);
  return out;
}

GradSuiteReport run_gradient_suite(int seeds, double tolerance,
                                   const std::function<void(const GradSuiteEntry&)>& on_entry) {
  const auto t0 = std::chrono::steady_clock::now();
  GradSuiteReport report;
  for (const auto& c : checks()) {
    GradSuiteEntry e;
    e.name = c.name;
    e.seeds = seeds;
    e.tolerance = tolerance;
    for (int s = 0; s < seeds; ++s) {
      const auto r = c.run(1000 + 17 * static_cast<std::uint64_t>(s));
      e.worst_error = std::max(e.worst_error, r.relative_error);
    }
    e.passed = e.worst_error <= tolerance;
    if (on_entry) on_entry(e);
    report.entries.push_back(e);
  }
  report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return report;
}

}  // namespace mirrba
