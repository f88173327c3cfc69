#include "mirrba/io/config.hpp"

#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

#include "mirrba/error.hpp"

namespace mirrba::io {

namespace {

// Desk schedule: iterations per coarse level and on the finest level.
constexpr int kDeskCoarse = 100;
constexpr int kDeskFinest = 200;

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace

const std::vector<KeyInfo>& config_keys() {
  static const std::vector<KeyInfo> keys = {
      {"depth", "3", "number of pyramid levels (1-4)"},
      {"base_channels", "8", "feature channels per convolution"},
      {"residual_blocks_per_level", "4", "residual blocks at the reduced resolution"},
      {"use_residual_connections", "true", "identity skip inside residual blocks"},
      {"down_mode", "strided_conv", "strided_conv | max_pool"},
      {"up_mode", "transpose_conv", "transpose_conv | trilinear"},
      {"activation_slope", "0.2", "leaky ReLU negative slope"},
      {"two_channel_input", "false", "condition levels on (fixed, moving) instead of moving"},
      {"seed", "0", "network initialization and direct-field noise seed"},
      {"method", "mirrba", "mirrba | direct"},
      {"schedule", "desk", "iteration preset used when iters_per_level is auto: desk | paper"},
      {"iters_per_level", "auto", "comma-separated iterations per level, coarsest first"},
      {"lr", "1e-4", "Adam learning rate"},
      {"freeze_fraction", "0.2", "share of a level's budget with coarser levels frozen"},
      {"lambda_smooth", "0.1", "smoothness weight"},
      {"lambda_diffeo", "1.0", "negative-Jacobian weight"},
      {"ncc_window", "7", "local NCC window (odd)"},
      {"squaring_steps", "7", "scaling-and-squaring steps"},
      {"normalize", "minmax", "input intensity normalization: minmax | zscore | none"},
      {"phantom_extent", "64", "phantom grid extent per axis"},
      {"phantom_seed", "0", "phantom geometry, deformation and noise seed"},
      {"phantom_max_velocity", "auto", "peak ground-truth velocity in voxels (auto = extent / 16)"},
      {"phantom_noise", "0.02", "noise std as a fraction of peak intensity"},
      {"ablate_set", "table", "depth | table | lattice"},
      {"ablate_seeds", "10", "phantom seeds per ablation configuration"},
      {"fixed", "", "fixed image path"},
      {"moving", "", "moving image path"},
      {"init", "", "initial displacement path (warm start)"},
      {"case", "", "phantom case directory providing masks and ground truth"},
      {"field", "", "displacement path for eval"},
      {"warped", "", "warped image path for overlay"},
      {"out", "", "output directory or prefix"},
  };
  return keys;
}

RunConfig::RunConfig() {
  for (const auto& k : config_keys()) values_[k.key] = k.default_value;
}

void RunConfig::set(const std::string& key, const std::string& value) {
  auto it = values_.find(key);
  if (it == values_.end()) throw ArgumentError("unknown configuration key '" + key + "'");
  it->second = value;
}

void RunConfig::set_assignment(const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos)
    throw ArgumentError("expected key=value, got '" + assignment + "'");
  set(trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)));
}

void RunConfig::load(std::istream& is, const std::string& source) {
  std::string line;
  int n = 0;
  while (std::getline(is, line)) {
    ++n;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    try {
      set_assignment(t);
    } catch (const ArgumentError& e) {
      throw ArgumentError(source + ":" + std::to_string(n) + ": " + e.what());
    }
  }
}

void RunConfig::load_file(const std::filesystem::path& p) {
  std::ifstream f(p);
  if (!f) throw ArgumentError("cannot open config '" + p.string() + "'");
  load(f, p.string());
}

const std::string& RunConfig::get(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) throw ArgumentError("unknown configuration key '" + key + "'");
  return it->second;
}

int RunConfig::get_int(const std::string& key) const {
  const std::string& v = get(key);
  try {
    std::size_t used = 0;
    const int out = std::stoi(v, &used);
    if (used == v.size()) return out;
  } catch (const std::logic_error&) {
  }
  throw ArgumentError(key + ": expected an integer, got '" + v + "'");
}

std::uint64_t RunConfig::get_u64(const std::string& key) const {
  const std::string& v = get(key);
  try {
    std::size_t used = 0;
    if (!v.empty() && v[0] != '-') {
      const std::uint64_t out = std::stoull(v, &used);
      if (used == v.size()) return out;
    }
  } catch (const std::logic_error&) {
  }
  throw ArgumentError(key + ": expected a non-negative integer, got '" + v + "'");
}

double RunConfig::get_double(const std::string& key) const {
  const std::string& v = get(key);
  try {
    std::size_t used = 0;
    const double out = std::stod(v, &used);
    if (used == v.size()) return out;
  } catch (const std::logic_error&) {
  }
  throw ArgumentError(key + ": expected a number, got '" + v + "'");
}

bool RunConfig::get_bool(const std::string& key) const {
  const std::string& v = get(key);
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ArgumentError(key + ": expected true or false, got '" + v + "'");
}

void RunConfig::write(std::ostream& os) const {
  for (const auto& [k, v] : values_) os << k << '=' << v << '\n';
}

void RunConfig::write_file(const std::filesystem::path& p) const {
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
  std::ofstream f(p);
  if (!f) throw FormatError("cannot write '" + p.string() + "'");
  write(f);
}

NetConfig RunConfig::net() const {
  NetConfig c;
  c.depth = get_int("depth");
  c.base_channels = get_int("base_channels");
  c.residual_blocks_per_level = get_int("residual_blocks_per_level");
  c.use_residual_connections = get_bool("use_residual_connections");
  c.down_mode = parse_down_mode(get("down_mode"));
  c.up_mode = parse_up_mode(get("up_mode"));
  c.activation_slope = get_double("activation_slope");
  c.two_channel_input = get_bool("two_channel_input");
  c.seed = get_u64("seed");
  c.validate();
  return c;
}

LossWeights RunConfig::weights() const {
  LossWeights w;
  w.lambda_smooth = get_double("lambda_smooth");
  w.lambda_diffeo = get_double("lambda_diffeo");
  w.ncc_window = get_int("ncc_window");
  w.validate();
  return w;
}

std::vector<int> preset_budget(const std::string& preset, int depth) {
  if (preset == "desk") return default_level_budget(depth, kDeskCoarse, kDeskFinest);
  if (preset == "paper") return default_level_budget(depth, 1000, 2000);
  throw ArgumentError("unknown schedule preset '" + preset + "' (desk | paper)");
}

ScheduleConfig RunConfig::schedule() const {
  ScheduleConfig s;
  const int depth = get_int("depth");
  const std::string iters = get("iters_per_level");
  if (iters == "auto") {
    s.iters_per_level = preset_budget(get("schedule"), depth);
  } else {
    s.iters_per_level.clear();
    std::stringstream ss(iters);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
      try {
        std::size_t used = 0;
        const std::string t = trim(tok);
        const int v = std::stoi(t, &used);
        if (used != t.size()) throw std::invalid_argument(t);
        s.iters_per_level.push_back(v);
      } catch (const std::logic_error&) {
        throw ArgumentError("iters_per_level: malformed entry '" + tok + "'");
      }
    }
    // A single entry applies to every level.
    if (s.iters_per_level.size() == 1 && depth > 1)
      s.iters_per_level.assign(depth, s.iters_per_level[0]);
  }
  s.lr = get_double("lr");
  s.freeze_fraction = get_double("freeze_fraction");
  s.weights = weights();
  s.squaring_steps = get_int("squaring_steps");
  s.seed = get_u64("seed");
  if (get("method") != "direct") s.validate(depth);
  return s;
}

PhantomSpec RunConfig::phantom() const {
  const std::string mv = get("phantom_max_velocity");
  double max_velocity = -1.0;
  if (mv != "auto") max_velocity = get_double("phantom_max_velocity");
  return default_phantom(get_u64("phantom_seed"), get_int("phantom_extent"), max_velocity,
                         get_double("phantom_noise"));
}

}  // namespace mirrba::io
