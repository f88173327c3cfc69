#include "mirrba/io/ablate.hpp"

#include <atomic>
#include <cmath>
#include <cstdio>
#include <exception>
#include <map>
#include <mutex>
#include <ostream>
#include <thread>

#include "mirrba/error.hpp"
#include "mirrba/field/field.hpp"
#include "mirrba/losses/losses.hpp"

namespace mirrba::io {

std::vector<AblationConfig> ablation_set(const std::string& name, const NetConfig& base,
                                         const ScheduleFor& schedule_for) {
  std::vector<AblationConfig> out;
  auto mirrba = [&](const std::string& id, NetConfig net) {
    AblationConfig c;
    c.id = id;
    c.net = net;
    c.schedule = schedule_for(net.depth);
    out.push_back(c);
    return &out.back();
  };

  if (name == "depth") {
    for (int d = 1; d <= 4; ++d) {
      NetConfig n = base;
      n.depth = d;
      mirrba("mirrba_depth_" + std::to_string(d), n);
    }
  } else if (name == "lattice") {
    for (int d = 1; d <= 4; ++d)
      for (bool res : {true, false})
        for (auto down : {DownMode::kStridedConv, DownMode::kMaxPool})
          for (auto up : {UpMode::kTransposeConv, UpMode::kTrilinear}) {
            NetConfig n = base;
            n.depth = d;
            n.use_residual_connections = res;
            n.down_mode = down;
            n.up_mode = up;
            mirrba("d" + std::to_string(d) + (res ? "_res" : "_nores") + "_" + to_string(down) + "_" +
                       to_string(up),
                   n);
          }
  } else if (name == "table") {
    NetConfig ref = base;
    ref.depth = 3;
    mirrba("mirrba", ref);
    {
      AblationConfig* c = mirrba("mirrba_wo_regu", ref);
      c->schedule.weights.lambda_smooth = 0.0;
      c->schedule.weights.lambda_diffeo = 0.0;
    }
    {
      AblationConfig c;
      c.id = "mirrba_wo_archi";
      c.method = Method::kDirect;
      c.net = ref;
      c.schedule = schedule_for(ref.depth);
      out.push_back(c);
    }
    for (int d : {1, 2, 4}) {
      NetConfig n = ref;
      n.depth = d;
      mirrba("mirrba_depth_" + std::to_string(d), n);
    }
    for (int k = 1; k < ref.depth; ++k) {
      AblationConfig t = out.front();
      t.id = "mirrba_level_" + std::to_string(k);
      t.truncate_level = k;
      t.source = "mirrba";
      out.push_back(t);
    }
    NetConfig pool = ref;
    pool.down_mode = DownMode::kMaxPool;
    mirrba("mirrba_max", pool);
    NetConfig up = ref;
    up.up_mode = UpMode::kTrilinear;
    mirrba("mirrba_up", up);
    NetConfig nores = ref;
    nores.use_residual_connections = false;
    mirrba("mirrba_wo_rb", nores);
    NetConfig deep = pool;
    deep.depth = 4;
    deep.up_mode = UpMode::kTrilinear;
    mirrba("mirrba_depth_4_max_up", deep);
  } else {
    throw ArgumentError("unknown ablation set '" + name + "' (depth | table | lattice)");
  }
  return out;
}

namespace {

struct Job {
  std::size_t config;
  std::size_t seed;
};

AblationRun evaluate_field(const AblationConfig& c, std::uint64_t seed, const PhantomCase& pc,
                           const VectorField& phi, int iterations, double seconds) {
  AblationRun r;
  r.config_id = c.id;
  r.seed = seed;
  r.report = evaluate(pc.masks, phi);
  r.field_error = field_error(phi, pc.phi_gt, pc.body);
  r.ncc = ncc_dissimilarity(pc.fixed, warp(pc.moving, phi), c.schedule.weights.ncc_window);
  r.iterations = iterations;
  r.seconds = seconds;
  return r;
}

std::string num(double v) {
  if (!std::isfinite(v)) return "NA";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

}  // namespace

std::vector<AblationRun> run_ablation(const std::vector<AblationConfig>& configs,
                                      const std::vector<std::uint64_t>& seeds, const CaseFor& case_for,
                                      int workers, const std::function<void(const AblationRun&)>& on_run) {
  std::map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < configs.size(); ++i) {
    if (!index.emplace(configs[i].id, i).second)
      throw ArgumentError("duplicate ablation config id '" + configs[i].id + "'");
  }
  std::vector<bool> keep_levels(configs.size(), false);
  for (const auto& c : configs) {
    if (c.truncate_level <= 0) continue;
    auto it = index.find(c.source);
    if (it == index.end() || configs[it->second].truncate_level > 0)
      throw ArgumentError("truncated config '" + c.id + "' needs a full run as source");
    if (c.truncate_level > configs[it->second].net.depth)
      throw ArgumentError("truncated config '" + c.id + "' exceeds its source depth");
    keep_levels[it->second] = true;
  }

  std::vector<PhantomCase> cases(seeds.size());
  std::vector<Job> jobs;
  for (std::size_t c = 0; c < configs.size(); ++c)
    if (configs[c].truncate_level == 0)
      for (std::size_t s = 0; s < seeds.size(); ++s) jobs.push_back({c, s});

  const std::size_t nc = configs.size(), ns = seeds.size();
  std::vector<AblationRun> runs(nc * ns);
  std::vector<std::vector<VectorField>> levels(nc * ns);
  std::vector<double> wall(nc * ns, 0.0);

  std::atomic<std::size_t> next_case{0}, next_job{0};
  std::mutex report_mutex;
  std::exception_ptr failure;
  std::atomic<bool> stop{false};
  // Any error other than divergence aborts the whole run; the first one is
  // rethrown on the calling thread.
  auto guarded = [&](auto body) {
    return [&, body]() {
      try {
        body();
      } catch (...) {
        std::lock_guard<std::mutex> lock(report_mutex);
        if (!failure) failure = std::current_exception();
        stop = true;
      }
    };
  };
  auto worker = guarded([&]() {
    for (std::size_t s; !stop && (s = next_case++) < ns;) cases[s] = case_for(seeds[s]);
  });
  auto run_jobs = guarded([&]() {
    for (std::size_t j; !stop && (j = next_job++) < jobs.size();) {
      const auto [ci, si] = jobs[j];
      const AblationConfig& c = configs[ci];
      const PhantomCase& pc = cases[si];
      AblationRun r;
      try {
        RegistrationResult res = c.method == Method::kDirect
                                     ? register_direct(pc.fixed, pc.moving, c.schedule)
                                     : register_mirrba(pc.fixed, pc.moving, c.net, c.schedule);
        r = evaluate_field(c, seeds[si], pc, res.displacement, c.schedule.total_iterations(), res.wall_time);
        if (keep_levels[ci]) levels[ci * ns + si] = std::move(res.level_fields);
        wall[ci * ns + si] = res.wall_time;
      } catch (const DivergenceError& e) {
        r.config_id = c.id;
        r.seed = seeds[si];
        r.diverged = true;
        r.message = e.what();
        r.iterations = c.schedule.total_iterations();
      }
      runs[ci * ns + si] = r;
      if (on_run) {
        std::lock_guard<std::mutex> lock(report_mutex);
        on_run(r);
      }
    }
  });
  auto parallel = [&](auto fn) {
    const int n = std::max(1, workers);
    std::vector<std::thread> pool;
    for (int i = 1; i < n; ++i) pool.emplace_back(fn);
    fn();
    for (auto& t : pool) t.join();
  };
  parallel(worker);
  if (failure) std::rethrow_exception(failure);
  parallel(run_jobs);
  if (failure) std::rethrow_exception(failure);

  for (std::size_t ci = 0; ci < nc; ++ci) {
    const AblationConfig& c = configs[ci];
    if (c.truncate_level == 0) continue;
    const std::size_t src = index.at(c.source);
    int iters = 0;
    for (int k = 0; k < c.truncate_level; ++k) iters += configs[src].schedule.iters_per_level[k];
    for (std::size_t si = 0; si < ns; ++si) {
      const auto& lv = levels[src * ns + si];
      AblationRun r;
      if (runs[src * ns + si].diverged || lv.size() < static_cast<std::size_t>(c.truncate_level)) {
        r.config_id = c.id;
        r.seed = seeds[si];
        r.diverged = true;
        r.message = "source run diverged";
        r.iterations = iters;
      } else {
        r = evaluate_field(c, seeds[si], cases[si], lv[c.truncate_level - 1], iters, wall[src * ns + si]);
      }
      runs[ci * ns + si] = r;
      if (on_run) on_run(r);
    }
  }
  return runs;
}

void write_ablation_csv(std::ostream& os, const std::vector<AblationConfig>& configs,
                        const std::vector<AblationRun>& runs) {
  os << "config_id,dice_organs_mean,dice_organs_std,dice_lesions_mean,dice_lesions_std,"
        "detection_rate,disappearing_rate,sdjdet,iterations,seconds\n";
  for (const auto& c : configs) {
    std::vector<double> organ, lesion, detection, disappearing, sdj, secs;
    int iterations = 0;
    for (const auto& r : runs) {
      if (r.config_id != c.id) continue;
      iterations = r.iterations;
      if (r.diverged) continue;
      if (r.report.dice_organs) organ.push_back(r.report.dice_organs->mean);
      if (r.report.dice_lesions) lesion.push_back(r.report.dice_lesions->mean);
      if (r.report.detection_rate) detection.push_back(*r.report.detection_rate);
      if (r.report.disappearing_rate) disappearing.push_back(*r.report.disappearing_rate);
      sdj.push_back(r.report.sdjdet);
      secs.push_back(r.seconds);
    }
    auto ms = [](const std::vector<double>& v) {
      return v.empty() ? MeanStd{NAN, NAN} : mean_std(v);
    };
    const MeanStd o = ms(organ), l = ms(lesion);
    os << c.id << ',' << num(o.mean) << ',' << num(o.std) << ',' << num(l.mean) << ',' << num(l.std)
       << ',' << num(ms(detection).mean) << ',' << num(ms(disappearing).mean) << ','
       << num(ms(sdj).mean) << ',' << iterations << ',' << num(ms(secs).mean) << '\n';
  }
}

void write_runs_csv(std::ostream& os, const std::vector<AblationRun>& runs) {
  os << "config_id,seed,status,dice_organs,dice_lesions,detection_rate,disappearing_rate,sdjdet,"
        "epe_mean,epe_p95,ncc,iterations,seconds\n";
  for (const auto& r : runs) {
    const auto& e = r.report;
    os << r.config_id << ',' << r.seed << ',' << (r.diverged ? "diverged" : "ok") << ','
       << num(r.diverged || !e.dice_organs ? NAN : e.dice_organs->mean) << ','
       << num(r.diverged || !e.dice_lesions ? NAN : e.dice_lesions->mean) << ','
       << num(r.diverged || !e.detection_rate ? NAN : *e.detection_rate) << ','
       << num(r.diverged || !e.disappearing_rate ? NAN : *e.disappearing_rate) << ','
       << num(r.diverged ? NAN : e.sdjdet) << ','
       << num(r.field_error ? r.field_error->mean : NAN) << ','
       << num(r.field_error ? r.field_error->p95 : NAN) << ',' << num(r.diverged ? NAN : r.ncc) << ','
       << r.iterations << ',' << num(r.diverged ? NAN : r.seconds) << '\n';
  }
}

}  // namespace mirrba::io
