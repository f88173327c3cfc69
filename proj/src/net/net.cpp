#include "mirrba/net/net.hpp"

#include <cmath>
#include <cstring>
#include <istream>
#include <ostream>
#include <random>
#include <sstream>

#include "mirrba/ad/ops.hpp"
#include "mirrba/error.hpp"
#include "mirrba/field/field.hpp"

namespace mirrba {

void NetConfig::validate() const {
  if (depth < 1 || depth > 4)
    throw ArgumentError("depth must be in [1, 4], got " + std::to_string(depth));
  if (base_channels < 1) throw ArgumentError("base_channels must be >= 1");
  if (residual_blocks_per_level < 1) throw ArgumentError("residual_blocks_per_level must be >= 1");
  if (!(activation_slope > 0.0 && activation_slope < 1.0))
    throw ArgumentError("activation_slope must be in (0, 1)");
}

std::string to_string(DownMode m) {
  return m == DownMode::kStridedConv ? "strided_conv" : "max_pool";
}

std::string to_string(UpMode m) {
  return m == UpMode::kTransposeConv ? "transpose_conv" : "trilinear";
}

DownMode parse_down_mode(const std::string& s) {
  if (s == "strided_conv") return DownMode::kStridedConv;
  if (s == "max_pool") return DownMode::kMaxPool;
  throw ArgumentError("unknown down_mode '" + s + "' (strided_conv | max_pool)");
}

UpMode parse_up_mode(const std::string& s) {
  if (s == "transpose_conv") return UpMode::kTransposeConv;
  if (s == "trilinear") return UpMode::kTrilinear;
  throw ArgumentError("unknown up_mode '" + s + "' (transpose_conv | trilinear)");
}

Grid level_grid(const Grid& full, int depth, int level) {
  if (level < 0 || level >= depth)
    throw ArgumentError("level " + std::to_string(level) + " outside a depth-" +
                        std::to_string(depth) + " network");
  Grid g = full;
  for (int i = level; i < depth - 1; ++i)
    g = Grid{ad::resized_extent(g.nx, 0.5), ad::resized_extent(g.ny, 0.5),
             ad::resized_extent(g.nz, 0.5)};
  return g;
}

namespace {

// Parameter layout of one level, shared by build, bind and forward.
struct Layout {
  std::vector<Param> params;
  void add(std::string name, ad::Shape shape) {
    params.push_back(Param{std::move(name), shape, std::vector<float>(ad::numel(shape), 0.0f)});
  }
};

std::vector<Param> level_layout(const NetConfig& c) {
  const int ch = c.base_channels;
  Layout l;
  l.add("enc.w", {ch, c.input_channels(), 3, 3, 3});
  l.add("enc.b", {ch});
  l.add("down.w", {ch, ch, 3, 3, 3});
  l.add("down.b", {ch});
  for (int b = 0; b < c.residual_blocks_per_level; ++b) {
    const std::string p = "res" + std::to_string(b);
    l.add(p + ".w1", {ch, ch, 3, 3, 3});
    l.add(p + ".b1", {ch});
    l.add(p + ".w2", {ch, ch, 3, 3, 3});
    l.add(p + ".b2", {ch});
  }
  if (c.up_mode == UpMode::kTransposeConv) {
    l.add("up.w", {ch, ch, 2, 2, 2});
  } else {
    l.add("up.w", {ch, ch, 3, 3, 3});
    l.add("up.b", {ch});
  }
  l.add("head.w", {3, ch, 3, 3, 3});
  l.add("head.b", {3});
  return std::move(l.params);
}

void he_init(std::vector<Param>& params, double slope, std::mt19937_64& rng) {
  const double gain = std::sqrt(2.0 / (1.0 + slope * slope));
  for (Param& p : params) {
    if (p.shape.size() != 5 || p.name.rfind("head.", 0) == 0) continue;
    // Fan-in is taken along the axis that feeds each output; for the
    // transpose weight (C_a, C_b, k^3) that is C_a.
    const double fan_in = static_cast<double>(p.shape[1]) * p.shape[2] * p.shape[3] * p.shape[4];
    const double fan = p.name == "up.w" && p.shape[2] == 2 ? p.shape[0] : fan_in;
    std::normal_distribution<double> dist(0.0, gain / std::sqrt(fan));
    for (float& v : p.value) v = static_cast<float>(dist(rng));
  }
}

constexpr const char* kMagic = "NPRM1";

void write_config(std::ostream& os, const NetConfig& c) {
  os << "depth=" << c.depth << '\n'
     << "base_channels=" << c.base_channels << '\n'
     << "residual_blocks_per_level=" << c.residual_blocks_per_level << '\n'
     << "use_residual_connections=" << (c.use_residual_connections ? 1 : 0) << '\n'
     << "down_mode=" << to_string(c.down_mode) << '\n'
     << "up_mode=" << to_string(c.up_mode) << '\n';
  std::ostringstream slope;
  slope.precision(17);
  slope << c.activation_slope;
  os << "activation_slope=" << slope.str() << '\n'
     << "seed=" << c.seed << '\n'
     << "two_channel_input=" << (c.two_channel_input ? 1 : 0) << '\n';
}

}  // namespace

Network Network::build(const NetConfig& config) {
  config.validate();
  Network net;
  net.config_ = config;
  for (int i = 0; i < config.depth; ++i) {
    Level level;
    level.params = level_layout(config);
    std::mt19937_64 rng(config.seed * 1000003ULL + static_cast<std::uint64_t>(i));
    he_init(level.params, config.activation_slope, rng);
    net.levels_.push_back(std::move(level));
  }
  return net;
}

std::size_t Network::parameter_count(int level) const {
  std::size_t n = 0;
  for (const Param& p : levels_.at(level).params) n += p.value.size();
  return n;
}

std::size_t Network::parameter_count() const {
  std::size_t n = 0;
  for (int i = 0; i < depth(); ++i) n += parameter_count(i);
  return n;
}

std::string Network::census() const {
  std::ostringstream os;
  for (int i = 0; i < depth(); ++i)
    os << "level " << i + 1 << ": " << parameter_count(i) << " parameters in "
       << levels_[i].params.size() << " tensors\n";
  os << "total: " << parameter_count() << " parameters\n";
  return os.str();
}

void Network::save(std::ostream& os) const {
  os << kMagic << '\n';
  write_config(os, config_);
  os << "parameters=" << parameter_count() << '\n' << '\n';
  for (const Level& level : levels_)
    for (const Param& p : level.params)
      for (float v : p.value) {
        std::uint32_t bits;
        std::memcpy(&bits, &v, 4);
        const unsigned char b[4] = {static_cast<unsigned char>(bits), static_cast<unsigned char>(bits >> 8),
                                    static_cast<unsigned char>(bits >> 16),
                                    static_cast<unsigned char>(bits >> 24)};
        os.write(reinterpret_cast<const char*>(b), 4);
      }
  if (!os) throw FormatError("failed to write network checkpoint");
}

Network Network::load(std::istream& is) {
  std::string line;
  if (!std::getline(is, line) || line != kMagic)
    throw FormatError("not a network checkpoint (missing NPRM1 magic)");
  NetConfig c;
  std::size_t declared = 0;
  bool have_count = false;
  while (std::getline(is, line) && !line.empty()) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw FormatError("malformed checkpoint header line '" + line + "'");
    const std::string key = line.substr(0, eq);
    const std::string val = line.substr(eq + 1);
    try {
      if (key == "depth") c.depth = std::stoi(val);
      else if (key == "base_channels") c.base_channels = std::stoi(val);
      else if (key == "residual_blocks_per_level") c.residual_blocks_per_level = std::stoi(val);
      else if (key == "use_residual_connections") c.use_residual_connections = val == "1";
      else if (key == "down_mode") c.down_mode = parse_down_mode(val);
      else if (key == "up_mode") c.up_mode = parse_up_mode(val);
      else if (key == "activation_slope") c.activation_slope = std::stod(val);
      else if (key == "seed") c.seed = std::stoull(val);
      else if (key == "two_channel_input") c.two_channel_input = val == "1";
      else if (key == "parameters") { declared = std::stoull(val); have_count = true; }
      else throw FormatError("unknown checkpoint key '" + key + "'");
    } catch (const std::invalid_argument&) {
      throw FormatError("bad value for checkpoint key '" + key + "'");
    } catch (const ArgumentError& e) {
      throw FormatError(e.what());
    }
  }
  if (!have_count) throw FormatError("checkpoint header lacks a parameter count");
  Network net = build(c);
  if (net.parameter_count() != declared)
    throw FormatError("checkpoint declares " + std::to_string(declared) +
                      " parameters, configuration implies " + std::to_string(net.parameter_count()));
  for (Level& level : net.levels_)
    for (Param& p : level.params)
      for (float& v : p.value) {
        unsigned char b[4];
        if (!is.read(reinterpret_cast<char*>(b), 4)) throw FormatError("truncated checkpoint");
        const std::uint32_t bits = b[0] | (b[1] << 8) | (b[2] << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
        std::memcpy(&v, &bits, 4);
      }
  if (is.peek() != std::char_traits<char>::eof()) throw FormatError("trailing bytes after checkpoint");
  return net;
}

namespace ad {

template <typename T>
std::vector<Var<T>> bind_level(Tape<T>& tape, const Level& level, bool trainable) {
  std::vector<Var<T>> out;
  out.reserve(level.params.size());
  for (const Param& p : level.params)
    out.push_back(tape.leaf(p.shape, std::vector<T>(p.value.begin(), p.value.end()), trainable));
  return out;
}

template <typename T>
Var<T> forward_level(const NetConfig& c, const std::vector<Var<T>>& params, const Var<T>& input) {
  const Shape& in = input.shape();
  if (in.size() != 4 || in[0] != c.input_channels())
    throw ShapeError("level input must be (" + std::to_string(c.input_channels()) +
                     ", Z, Y, X), got " + to_string(in));
  for (int a = 1; a < 4; ++a)
    if (in[a] % 2 != 0)
      throw ShapeError("level grid extents must be even, got " + to_string(in));
  const T slope = static_cast<T>(c.activation_slope);
  std::size_t k = 0;
  auto next = [&]() -> const Var<T>& { return params.at(k++); };

  const auto& enc_w = next();
  const auto& enc_b = next();
  Var<T> e0 = leaky_relu(conv3(input, enc_w, enc_b, 1), slope);

  const auto& down_w = next();
  const auto& down_b = next();
  Var<T> h = c.down_mode == DownMode::kStridedConv
                 ? leaky_relu(conv3(e0, down_w, down_b, 2), slope)
                 : leaky_relu(conv3(max_pool2(e0), down_w, down_b, 1), slope);

  for (int b = 0; b < c.residual_blocks_per_level; ++b) {
    const auto& w1 = next();
    const auto& b1 = next();
    const auto& w2 = next();
    const auto& b2 = next();
    Var<T> r = conv3(leaky_relu(conv3(h, w1, b1, 1), slope), w2, b2, 1);
    h = leaky_relu(c.use_residual_connections ? add(h, r) : r, slope);
  }

  Var<T> up;
  if (c.up_mode == UpMode::kTransposeConv) {
    const auto& w = next();
    up = leaky_relu(conv3_transpose(h, w, 2), slope);
  } else {
    const auto& w = next();
    const auto& b = next();
    up = leaky_relu(conv3(trilinear_resize(h, 2.0), w, b, 1), slope);
  }
  Var<T> d = add(up, e0);

  const auto& head_w = next();
  const auto& head_b = next();
  if (k != params.size()) throw ShapeError("parameter list does not match the level layout");
  return conv3(d, head_w, head_b, 1);
}

template std::vector<Var<float>> bind_level(Tape<float>&, const Level&, bool);
template std::vector<Var<double>> bind_level(Tape<double>&, const Level&, bool);
template Var<float> forward_level(const NetConfig&, const std::vector<Var<float>>&, const Var<float>&);
template Var<double> forward_level(const NetConfig&, const std::vector<Var<double>>&, const Var<double>&);

}  // namespace ad

namespace {

std::vector<float> level_input(const NetConfig& c, const Volume& moving, const Volume* fixed) {
  if (!c.two_channel_input) return moving.data;
  if (fixed == nullptr) throw ArgumentError("two-channel network needs the fixed image");
  if (!(fixed->grid == moving.grid)) throw ShapeError("fixed and moving extents differ");
  std::vector<float> data = fixed->data;
  data.insert(data.end(), moving.data.begin(), moving.data.end());
  return data;
}

}  // namespace

VectorField forward_level(const Network& net, int level, const Volume& input,
                          const Volume* fixed_at_level) {
  ad::Tape<float> tape;
  auto params = ad::bind_level(tape, net.level(level), false);
  const NetConfig& c = net.config();
  auto x = tape.constant(input.grid.shape(c.input_channels()), level_input(c, input, fixed_at_level));
  auto v = ad::forward_level(c, params, x);
  VectorField out{input.grid, FieldRole::kVelocity, {}};
  out.data.assign(v.value().begin(), v.value().end());
  return out;
}

VectorField pyramid_chain(const Network& net, const std::vector<Volume>& ms,
                          const std::vector<Volume>* fs, int levels_used, int squaring_steps) {
  if (levels_used < 1 || levels_used > net.depth() || static_cast<int>(ms.size()) < levels_used)
    throw ArgumentError("levels_used must be in [1, " + std::to_string(net.depth()) + "]");
  VectorField phi;
  for (int i = 0; i < levels_used; ++i) {
    const Volume* f = fs ? &(*fs)[i] : nullptr;
    if (i == 0) {
      phi = exp_velocity(forward_level(net, 0, ms[0], f), squaring_steps);
    } else {
      phi = upsample_field(phi);
      const auto r = exp_velocity(forward_level(net, i, warp(ms[i], phi), f), squaring_steps);
      phi = compose(phi, r);
    }
  }
  phi.role = FieldRole::kDisplacement;
  return phi;
}

VectorField pyramid_field(const Network& net, const Volume& moving, int levels_used,
                          int squaring_steps, const Volume* fixed) {
  const int depth = net.depth();
  if (levels_used < 0) levels_used = depth;
  if (levels_used < 1 || levels_used > depth)
    throw ArgumentError("levels_used must be in [1, " + std::to_string(depth) + "]");

  // Image pyramid by repeated halving, finest last.
  std::vector<Volume> ms(depth), fs(depth);
  ms[depth - 1] = moving;
  if (fixed) fs[depth - 1] = *fixed;
  for (int i = depth - 2; i >= 0; --i) {
    ms[i] = resize_volume(ms[i + 1], 0.5);
    if (fixed) fs[i] = resize_volume(fs[i + 1], 0.5);
  }
  VectorField phi = pyramid_chain(net, ms, fixed ? &fs : nullptr, levels_used, squaring_steps);
  for (int i = levels_used; i < depth; ++i) phi = upsample_field(phi);
  phi.role = FieldRole::kDisplacement;
  return phi;
}

}  // namespace mirrba
