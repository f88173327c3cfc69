#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "mirrba/error.hpp"
#include "mirrba/io/ablate.hpp"
#include "mirrba/io/case_io.hpp"
#include "mirrba/io/config.hpp"
#include "mirrba/io/volume_io.hpp"
#include "test_util.hpp"

using namespace mirrba;
namespace fs = std::filesystem;

namespace {

std::string header(const std::string& dims, int channels, const std::string& type = "f32-le") {
  return "NVOL1\ndims: " + dims + "\nspacing: 1 1 1\nchannels: " + std::to_string(channels) +
         "\ndata: " + type + "\n\n";
}

std::string payload_floats(std::size_t n) { return std::string(n * 4, '\0'); }

template <typename Fn>
std::string error_of(Fn fn) {
  try {
    fn();
  } catch (const FormatError& e) {
    return e.what();
  }
  return "";
}

fs::path scratch_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("mirrba_test_io_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

}  // namespace

TEST_CASE("volume, field and mask round trips are bitwise") {
  const Grid g{5, 3, 4};
  Volume v = testutil::random_volume(g, 1, -3.0, 3.0);
  v.spacing = {0.5, 1.25, 2.0};
  v.data[3] = -0.0f;
  v.data[4] = 1e-40f;  // subnormal
  std::stringstream ss;
  io::write_volume(ss, v);
  const Volume r = io::read_volume(ss);
  CHECK(r.grid == g);
  CHECK(r.spacing == v.spacing);
  CHECK(std::memcmp(r.data.data(), v.data.data(), v.data.size() * 4) == 0);

  VectorField f = VectorField::zeros(g);
  f.data = testutil::uniformf(3 * g.size(), 2, -5, 5);
  std::stringstream fs_;
  io::write_field(fs_, f);
  const VectorField rf = io::read_field(fs_);
  CHECK(rf.grid == g);
  CHECK(std::memcmp(rf.data.data(), f.data.data(), f.data.size() * 4) == 0);

  Mask m = Mask::empty(g);
  for (std::size_t i = 0; i < m.data.size(); i += 3) m.data[i] = 1;
  std::stringstream ms;
  io::write_mask(ms, m);
  CHECK(io::read_mask(ms).data == m.data);
}

TEST_CASE("file layout") {
  Volume v = Volume::zeros(Grid{1, 1, 1});
  std::stringstream ss;
  io::write_volume(ss, v);
  const std::string s = ss.str();
  const auto blank = s.find("\n\n");
  REQUIRE(blank != std::string::npos);
  CHECK(s.substr(0, blank + 2) == "NVOL1\ndims: 1 1 1\nspacing: 1 1 1\nchannels: 1\ndata: f32-le\n\n");
  CHECK(s.size() - (blank + 2) == 4);
  CHECK(s.substr(blank + 2) == std::string(4, '\0'));

  // x fastest, little endian.
  Volume w = Volume::zeros(Grid{2, 1, 1});
  w.data = {1.0f, 2.0f};
  std::stringstream ws;
  io::write_volume(ws, w);
  const std::string p = ws.str().substr(ws.str().size() - 8);
  const unsigned char one[4] = {0x00, 0x00, 0x80, 0x3f};
  CHECK(std::memcmp(p.data(), one, 4) == 0);
}

TEST_CASE("malformed headers are rejected with diagnostics") {
  auto read = [](const std::string& text) {
    std::stringstream ss(text);
    return io::read_raw(ss);
  };
  CHECK(error_of([&] { read("NVOL2\n"); }).find("line 1") != std::string::npos);
  CHECK(error_of([&] { read("NVOL1\ndims: 2 2\n"); }).find("line 2") != std::string::npos);
  CHECK(error_of([&] { read("NVOL1\ndims: 2 2 2\nspacing: 1 1 x\n"); }).find("line 3") != std::string::npos);
  CHECK(error_of([&] { read("NVOL1\ndims: 2 2 2\nspacing: 1 1 1\nchannels: 2\n"); }) != "");
  CHECK(error_of([&] { read("NVOL1\ndims: 2 2 2\nspacing: 1 1 1\nchannels: 1\ndata: f64\n\n"); }) != "");
  CHECK(error_of([&] { read("NVOL1\ndims: 0 2 2\nspacing: 1 1 1\nchannels: 1\ndata: f32-le\n\n"); }) != "");
  CHECK(error_of([&] { read("NVOL1\ndims: 100000 100000 100000\nspacing: 1 1 1\nchannels: 3\ndata: f32-le\n\n"); })
            .find("overflow") != std::string::npos);
  // Field order is fixed: a repeated or swapped line is an error.
  CHECK(error_of([&] { read("NVOL1\ndims: 2 2 2\ndims: 2 2 2\n"); }) != "");

  const std::string truncated = error_of([&] { read(header("2 2 2", 1) + payload_floats(7)); });
  CHECK(truncated.find("offset") != std::string::npos);
  CHECK(error_of([&] { read(header("2 2 2", 1) + payload_floats(8) + "x"); }) != "");
  CHECK_NOTHROW(read(header("2 2 2", 1) + payload_floats(8)));
}

TEST_CASE("channel counts are checked against the requested kind") {
  // A three-channel header with a single-channel payload is truncated.
  std::stringstream short_field(header("2 2 2", 3) + payload_floats(8));
  CHECK_THROWS_AS(io::read_field(short_field), FormatError);

  std::stringstream volume_as_field(header("2 2 2", 1) + payload_floats(8));
  CHECK_THROWS_AS(io::read_field(volume_as_field), FormatError);
  std::stringstream field_as_volume(header("2 2 2", 3) + payload_floats(24));
  CHECK_THROWS_AS(io::read_volume(field_as_volume), FormatError);
  std::stringstream float_as_mask(header("2 2 2", 1) + payload_floats(8));
  CHECK_THROWS_AS(io::read_mask(float_as_mask), FormatError);
  std::stringstream mask(header("2 2 2", 1, "u8") + std::string(8, '\1'));
  CHECK(io::read_mask(mask).count() == 8);

  CHECK_THROWS_AS(io::read_volume(fs::path("/nonexistent/volume.nvol")), std::exception);
}

TEST_CASE("intensity normalization") {
  const Grid g{4, 1, 1};
  Volume c = Volume::zeros(g);
  c.data = {3, 3, 3, 3};
  for (auto mode : {io::NormalizeMode::kMinMax, io::NormalizeMode::kZScore})
    CHECK(io::normalize_intensity(c, mode).data == std::vector<float>(4, 0.0f));

  Volume two = Volume::zeros(Grid{2, 1, 1});
  two.data = {0, 10};
  CHECK(io::normalize_intensity(two, io::NormalizeMode::kMinMax).data == std::vector<float>{0, 1});
  CHECK(io::normalize_intensity(two, io::NormalizeMode::kNone).data == two.data);

  const Volume r = testutil::random_volume(Grid::cube(12), 4, -7, 20);
  const Volume z = io::normalize_intensity(r, io::NormalizeMode::kZScore);
  double sum = 0, sq = 0;
  for (float v : z.data) sum += v;
  const double mean = sum / z.data.size();
  for (float v : z.data) sq += (v - mean) * (v - mean);
  CHECK(std::abs(mean) < 1e-6);
  CHECK(std::abs(std::sqrt(sq / z.data.size()) - 1.0) < 1e-6);

  const Volume mm = io::normalize_intensity(r, io::NormalizeMode::kMinMax);
  CHECK(*std::min_element(mm.data.begin(), mm.data.end()) == 0.0f);
  CHECK(*std::max_element(mm.data.begin(), mm.data.end()) == 1.0f);

  CHECK(io::parse_normalize_mode("zscore") == io::NormalizeMode::kZScore);
  CHECK(io::to_string(io::parse_normalize_mode("minmax")) == "minmax");
  CHECK_THROWS_AS(io::parse_normalize_mode("suv"), ArgumentError);
}

TEST_CASE("run configuration") {
  io::RunConfig cfg;
  CHECK(cfg.get_int("depth") == 3);
  CHECK_THROWS_AS(cfg.set("depht", "2"), ArgumentError);
  CHECK_THROWS_AS(cfg.set_assignment("depth"), ArgumentError);
  cfg.set_assignment(" depth = 2 ");
  cfg.set("iters_per_level", "7");
  const ScheduleConfig s = cfg.schedule();
  CHECK(s.iters_per_level == std::vector<int>{7, 7});
  CHECK(cfg.net().depth == 2);

  cfg.set("iters_per_level", "3, 4");
  CHECK(cfg.schedule().iters_per_level == std::vector<int>{3, 4});
  cfg.set("iters_per_level", "3,x");
  CHECK_THROWS_AS(cfg.schedule(), ArgumentError);
  cfg.set("iters_per_level", "1,2,3");
  CHECK_THROWS_AS(cfg.schedule(), ArgumentError);
  cfg.set("iters_per_level", "auto");
  CHECK(cfg.schedule().iters_per_level == io::preset_budget("desk", 2));
  CHECK(io::preset_budget("paper", 3) == std::vector<int>{1000, 1000, 2000});
  CHECK_THROWS_AS(io::preset_budget("huge", 3), ArgumentError);

  cfg.set("down_mode", "max_pool");
  cfg.set("lambda_smooth", "0.25");
  std::stringstream out;
  cfg.write(out);
  io::RunConfig back;
  back.load(out, "echo");
  std::stringstream again;
  back.write(again);
  CHECK(again.str() == out.str());
  CHECK(back.net().down_mode == DownMode::kMaxPool);
  CHECK(back.weights().lambda_smooth == 0.25);

  std::stringstream bad("depth = 2\n# comment\n\nnonsense = 1\n");
  try {
    io::RunConfig x;
    x.load(bad, "run.cfg");
    FAIL("unknown key accepted");
  } catch (const ArgumentError& e) {
    CHECK(std::string(e.what()).find("run.cfg:4") != std::string::npos);
  }
  io::RunConfig typed;
  typed.set("depth", "two");
  CHECK_THROWS_AS(typed.get_int("depth"), ArgumentError);
  typed.set("use_residual_connections", "maybe");
  CHECK_THROWS_AS(typed.get_bool("use_residual_connections"), ArgumentError);
}

TEST_CASE("case directories and overlays") {
  const fs::path dir = scratch_dir("case");
  const PhantomCase pc = generate(default_phantom(2, 16));
  io::write_case(dir, pc);
  for (const char* f : {"fixed.nvol", "moving.nvol", "phi_gt.nvol", "velocity_gt.nvol", "body.nvol", "masks/index.txt"})
    CHECK(fs::exists(dir / f));
  const LabeledMasks m = io::read_masks(dir);
  REQUIRE(m.organs_fixed.size() == pc.masks.organs_fixed.size());
  REQUIRE(m.lesions.size() == pc.masks.lesions.size());
  for (std::size_t i = 0; i < m.organs_fixed.size(); ++i) {
    CHECK(m.organs_fixed[i].name == pc.masks.organs_fixed[i].name);
    CHECK(m.organs_fixed[i].mask.data == pc.masks.organs_fixed[i].mask.data);
    CHECK(m.organs_moving[i].mask.data == pc.masks.organs_moving[i].mask.data);
  }
  for (std::size_t i = 0; i < m.lesions.size(); ++i) {
    CHECK(m.lesions[i].status == pc.masks.lesions[i].status);
    CHECK(m.lesions[i].moving.data == pc.masks.lesions[i].moving.data);
  }
  const auto truth = io::read_truth(dir);
  REQUIRE(truth.has_value());
  CHECK(truth->phi_gt.data == pc.phi_gt.data);
  CHECK(io::read_volume(dir / "fixed.nvol").data == pc.fixed.data);

  const auto written = io::write_overlays(dir / "ov", pc.fixed, pc.moving);
  REQUIRE(written.size() == 3);
  for (const auto& p : written) {
    std::ifstream is(p, std::ios::binary);
    std::string magic;
    int w = 0, h = 0, maxval = 0;
    is >> magic >> w >> h >> maxval;
    is.get();
    CHECK(magic == "P6");
    CHECK(maxval == 255);
    std::string pixels((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    CHECK(pixels.size() == static_cast<std::size_t>(3 * w * h));
  }
  CHECK(written[0].filename() == "ov_axial.ppm");
  // Identical inputs render grey: red, green and blue agree.
  const auto same = io::write_overlays(dir / "same", pc.fixed, pc.fixed);
  std::ifstream is(same[0], std::ios::binary);
  std::string magic;
  int w = 0, h = 0, maxval = 0;
  is >> magic >> w >> h >> maxval;
  is.get();
  std::string px((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  bool grey = true;
  for (std::size_t i = 0; i + 2 < px.size(); i += 3) grey &= px[i] == px[i + 1] && px[i + 1] == px[i + 2];
  CHECK(grey);
  fs::remove_all(dir);
}

TEST_CASE("ablation sets and aggregation") {
  auto sched = [](int depth) {
    ScheduleConfig s;
    s.iters_per_level.assign(depth, 1);
    return s;
  };
  const auto table = io::ablation_set("table", NetConfig{}, sched);
  REQUIRE(table.size() == 12);
  CHECK(table[0].id == "mirrba");
  const std::vector<std::string> ids{"mirrba",          "mirrba_wo_regu", "mirrba_wo_archi", "mirrba_depth_1",
                                     "mirrba_depth_2",  "mirrba_depth_4", "mirrba_level_1",  "mirrba_level_2",
                                     "mirrba_max",      "mirrba_up",      "mirrba_wo_rb",    "mirrba_depth_4_max_up"};
  for (std::size_t i = 0; i < ids.size(); ++i) CHECK(table[i].id == ids[i]);
  CHECK(table[6].truncate_level == 1);
  CHECK(table[6].source == "mirrba");
  CHECK(table[1].schedule.weights.lambda_smooth == 0.0);
  CHECK(table[1].schedule.weights.lambda_diffeo == 0.0);
  CHECK(table[11].net.depth == 4);
  CHECK(table[11].net.down_mode == DownMode::kMaxPool);
  CHECK(table[11].net.up_mode == UpMode::kTrilinear);
  CHECK_FALSE(table[10].net.use_residual_connections);
  int direct = 0;
  for (const auto& c : table) direct += c.method == io::Method::kDirect;
  CHECK(direct == 1);
  CHECK(io::ablation_set("depth", NetConfig{}, sched).size() == 4);
  CHECK(io::ablation_set("lattice", NetConfig{}, sched).size() == 32);
  CHECK_THROWS_AS(io::ablation_set("everything", NetConfig{}, sched), ArgumentError);

  NetConfig tiny;
  tiny.base_channels = 2;
  tiny.residual_blocks_per_level = 1;
  const auto all = io::ablation_set("table", tiny, sched);
  const std::vector<io::AblationConfig> configs{all[0], all[6], all[7]};  // mirrba and its truncations
  auto case_for = [](std::uint64_t seed) { return generate(default_phantom(seed, 16)); };
  const auto one = io::run_ablation(configs, {0, 1}, case_for, 1);
  const auto two = io::run_ablation(configs, {0, 1}, case_for, 2);
  REQUIRE(one.size() == 6);
  CHECK(one[0].config_id == "mirrba");
  CHECK(one[1].seed == 1);
  CHECK(one[2].config_id == "mirrba_level_1");
  CHECK(one[2].iterations == 1);
  CHECK(one[0].iterations == 3);
  for (std::size_t i = 0; i < one.size(); ++i) {
    CHECK(one[i].report.sdjdet == two[i].report.sdjdet);
    CHECK(one[i].report.dice_organs->mean == two[i].report.dice_organs->mean);
  }
  std::stringstream csv;
  io::write_ablation_csv(csv, configs, one);
  std::string line;
  std::getline(csv, line);
  CHECK(line ==
        "config_id,dice_organs_mean,dice_organs_std,dice_lesions_mean,dice_lesions_std,"
        "detection_rate,disappearing_rate,sdjdet,iterations,seconds");
  int rows = 0;
  while (std::getline(csv, line)) ++rows;
  CHECK(rows == 3);

  auto orphan = configs;
  orphan[1].source = "missing";
  CHECK_THROWS_AS(io::run_ablation(orphan, {0}, case_for, 1), ArgumentError);
}
