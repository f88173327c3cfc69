#include "mirrba/io/volume_io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <functional>
#include <limits>
#include <sstream>

#include "mirrba/error.hpp"

namespace mirrba::io {

namespace {

constexpr const char* kMagic = "NVOL1";
constexpr std::uint64_t kMaxPayload = std::uint64_t{1} << 34;

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

struct HeaderReader {
  std::istream& is;
  int line_no = 0;

  std::string next(const char* expect) {
    std::string line;
    ++line_no;
    if (!std::getline(is, line))
      throw FormatError("header line " + std::to_string(line_no) + ": expected '" + expect +
                        "', reached end of file");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    return line;
  }

  // Returns the text after "key: ".
  std::string field(const std::string& key) {
    const std::string line = next(key.c_str());
    const std::string prefix = key + ": ";
    if (line.rfind(prefix, 0) != 0)
      throw FormatError("header line " + std::to_string(line_no) + ": expected '" + key +
                        ": ...', got '" + line + "'");
    return line.substr(prefix.size());
  }

  [[noreturn]] void fail(const std::string& what) const {
    throw FormatError("header line " + std::to_string(line_no) + ": " + what);
  }
};

template <typename T, std::size_t N>
std::array<T, N> parse_numbers(HeaderReader& h, const std::string& text) {
  std::istringstream ss(text);
  std::array<T, N> out{};
  for (std::size_t i = 0; i < N; ++i) {
    std::string tok;
    if (!(ss >> tok)) h.fail("expected " + std::to_string(N) + " values in '" + text + "'");
    try {
      std::size_t used = 0;
      if constexpr (std::is_integral_v<T>) {
        const long long v = std::stoll(tok, &used);
        if (v < std::numeric_limits<T>::min() || v > std::numeric_limits<T>::max())
          h.fail("value out of range: '" + tok + "'");
        out[i] = static_cast<T>(v);
      } else {
        out[i] = static_cast<T>(std::stod(tok, &used));
      }
      if (used != tok.size()) h.fail("malformed number '" + tok + "'");
    } catch (const std::logic_error&) {
      h.fail("malformed number '" + tok + "'");
    }
  }
  std::string extra;
  if (ss >> extra) h.fail("unexpected trailing value '" + extra + "'");
  return out;
}

std::ifstream open_in(const std::filesystem::path& p) {
  std::ifstream f(p, std::ios::binary);
  if (!f) throw FormatError("cannot open '" + p.string() + "' for reading");
  return f;
}

std::ofstream open_out(const std::filesystem::path& p) {
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
  std::ofstream f(p, std::ios::binary);
  if (!f) throw FormatError("cannot open '" + p.string() + "' for writing");
  return f;
}

}  // namespace

void write_raw(std::ostream& os, const RawVolume& v) {
  const std::size_t n = v.grid.size() * static_cast<std::size_t>(v.channels);
  const std::size_t have = v.type == DataType::kF32 ? v.f32.size() : v.u8.size();
  if (have != n)
    throw ShapeError("payload holds " + std::to_string(have) + " values, header implies " +
                     std::to_string(n));
  os << kMagic << '\n'
     << "dims: " << v.grid.nx << ' ' << v.grid.ny << ' ' << v.grid.nz << '\n'
     << "spacing: " << fmt_double(v.spacing[0]) << ' ' << fmt_double(v.spacing[1]) << ' '
     << fmt_double(v.spacing[2]) << '\n'
     << "channels: " << v.channels << '\n'
     << "data: " << (v.type == DataType::kF32 ? "f32-le" : "u8") << '\n'
     << '\n';
  if (v.type == DataType::kU8) {
    os.write(reinterpret_cast<const char*>(v.u8.data()), static_cast<std::streamsize>(n));
  } else {
    std::vector<unsigned char> buf(4 * n);
    for (std::size_t i = 0; i < n; ++i) {
      std::uint32_t bits;
      std::memcpy(&bits, &v.f32[i], 4);
      for (int b = 0; b < 4; ++b) buf[4 * i + b] = static_cast<unsigned char>(bits >> (8 * b));
    }
    os.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  }
  if (!os) throw FormatError("write failed");
}

RawVolume read_raw(std::istream& is) {
  HeaderReader h{is};
  if (h.next(kMagic) != kMagic) h.fail("missing NVOL1 magic");
  RawVolume v;
  const auto dims = parse_numbers<int, 3>(h, h.field("dims"));
  for (int d : dims)
    if (d < 1) h.fail("extents must be positive");
  v.grid = Grid{dims[0], dims[1], dims[2]};
  const auto sp = parse_numbers<double, 3>(h, h.field("spacing"));
  for (double s : sp)
    if (!(s > 0.0) || !std::isfinite(s)) h.fail("spacing must be positive and finite");
  v.spacing = {sp[0], sp[1], sp[2]};
  v.channels = parse_numbers<int, 1>(h, h.field("channels"))[0];
  if (v.channels < 1) h.fail("channels must be positive");
  const std::string type = h.field("data");
  if (type == "f32-le") v.type = DataType::kF32;
  else if (type == "u8") v.type = DataType::kU8;
  else h.fail("unknown data type '" + type + "' (f32-le | u8)");
  if (!h.next("").empty()) h.fail("expected a blank line before the payload");

  const std::uint64_t elem = v.type == DataType::kF32 ? 4 : 1;
  std::uint64_t count = 1;
  for (std::uint64_t d : {std::uint64_t(dims[0]), std::uint64_t(dims[1]), std::uint64_t(dims[2]),
                          std::uint64_t(v.channels)}) {
    if (count > kMaxPayload / d) h.fail("extents overflow the supported payload size");
    count *= d;
  }
  if (count > kMaxPayload / elem) h.fail("extents overflow the supported payload size");
  const std::uint64_t bytes = count * elem;

  const std::streamoff offset = is.tellg();
  std::vector<unsigned char> buf(bytes);
  is.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(bytes));
  const auto got = static_cast<std::uint64_t>(is.gcount());
  if (got != bytes)
    throw FormatError("truncated payload at byte offset " + std::to_string(offset + static_cast<std::streamoff>(got)) +
                      ": expected " + std::to_string(bytes) + " bytes, found " + std::to_string(got));
  if (is.peek() != std::char_traits<char>::eof())
    throw FormatError("payload longer than the " + std::to_string(bytes) +
                      " bytes declared by the header");
  if (v.type == DataType::kU8) {
    v.u8.assign(buf.begin(), buf.end());
  } else {
    v.f32.resize(count);
    for (std::size_t i = 0; i < count; ++i) {
      std::uint32_t bits = 0;
      for (int b = 0; b < 4; ++b) bits |= static_cast<std::uint32_t>(buf[4 * i + b]) << (8 * b);
      std::memcpy(&v.f32[i], &bits, 4);
    }
  }
  return v;
}

void write_volume(std::ostream& os, const Volume& v) {
  RawVolume r{v.grid, v.spacing, 1, DataType::kF32, v.data, {}};
  write_raw(os, r);
}

void write_field(std::ostream& os, const VectorField& f, const Spacing& spacing) {
  RawVolume r{f.grid, spacing, 3, DataType::kF32, f.data, {}};
  write_raw(os, r);
}

void write_mask(std::ostream& os, const Mask& m) {
  RawVolume r{m.grid, m.spacing, 1, DataType::kU8, {}, m.data};
  for (auto& b : r.u8) b = b != 0;
  write_raw(os, r);
}

Volume read_volume(std::istream& is) {
  RawVolume r = read_raw(is);
  if (r.channels != 1 || r.type != DataType::kF32)
    throw FormatError("expected a single-channel f32-le volume, found " + std::to_string(r.channels) +
                      " channel(s) of " + (r.type == DataType::kF32 ? "f32-le" : "u8"));
  return Volume{r.grid, r.spacing, std::move(r.f32)};
}

VectorField read_field(std::istream& is) {
  RawVolume r = read_raw(is);
  if (r.channels != 3 || r.type != DataType::kF32)
    throw FormatError("expected a 3-channel f32-le field, found " + std::to_string(r.channels) +
                      " channel(s)");
  return VectorField{r.grid, FieldRole::kDisplacement, std::move(r.f32)};
}

Mask read_mask(std::istream& is) {
  RawVolume r = read_raw(is);
  if (r.channels != 1 || r.type != DataType::kU8)
    throw FormatError("expected a single-channel u8 mask");
  return Mask{r.grid, r.spacing, std::move(r.u8)};
}

void write_volume(const std::filesystem::path& p, const Volume& v) {
  auto f = open_out(p);
  write_volume(f, v);
}

void write_field(const std::filesystem::path& p, const VectorField& fld, const Spacing& spacing) {
  auto f = open_out(p);
  write_field(f, fld, spacing);
}

void write_mask(const std::filesystem::path& p, const Mask& m) {
  auto f = open_out(p);
  write_mask(f, m);
}

template <typename Fn>
auto read_path(const std::filesystem::path& p, Fn fn) {
  auto f = open_in(p);
  try {
    return fn(f);
  } catch (const FormatError& e) {
    throw FormatError(p.string() + ": " + e.what());
  }
}

Volume read_volume(const std::filesystem::path& p) {
  return read_path(p, [](std::istream& is) { return read_volume(is); });
}

VectorField read_field(const std::filesystem::path& p) {
  return read_path(p, [](std::istream& is) { return read_field(is); });
}

Mask read_mask(const std::filesystem::path& p) {
  return read_path(p, [](std::istream& is) { return read_mask(is); });
}

NormalizeMode parse_normalize_mode(const std::string& s) {
  if (s == "minmax") return NormalizeMode::kMinMax;
  if (s == "zscore") return NormalizeMode::kZScore;
  if (s == "none") return NormalizeMode::kNone;
  throw ArgumentError("unknown normalization '" + s + "' (minmax | zscore | none)");
}

std::string to_string(NormalizeMode m) {
  switch (m) {
    case NormalizeMode::kMinMax: return "minmax";
    case NormalizeMode::kZScore: return "zscore";
    case NormalizeMode::kNone: return "none";
  }
  return "?";
}

Volume normalize_intensity(const Volume& v, NormalizeMode mode) {
  Volume out = v;
  if (mode == NormalizeMode::kNone || v.data.empty()) return out;
  if (mode == NormalizeMode::kMinMax) {
    const auto [lo, hi] = std::minmax_element(v.data.begin(), v.data.end());
    const double a = *lo, range = static_cast<double>(*hi) - *lo;
    for (std::size_t i = 0; i < v.data.size(); ++i)
      out.data[i] = range > 0.0 ? static_cast<float>((v.data[i] - a) / range) : 0.0f;
    return out;
  }
  double mean = 0.0;
  for (float x : v.data) mean += x;
  mean /= static_cast<double>(v.data.size());
  double ss = 0.0;
  for (float x : v.data) ss += (x - mean) * (x - mean);
  const double sd = std::sqrt(ss / static_cast<double>(v.data.size()));
  for (std::size_t i = 0; i < v.data.size(); ++i)
    out.data[i] = sd > 0.0 ? static_cast<float>((v.data[i] - mean) / sd) : 0.0f;
  return out;
}

std::vector<std::filesystem::path> write_overlays(const std::filesystem::path& prefix,
                                                  const Volume& fixed, const Volume& warped) {
  if (!(fixed.grid == warped.grid)) throw ShapeError("overlay: fixed and warped extents differ");
  const Grid& g = fixed.grid;
  float lo = std::numeric_limits<float>::max(), hi = std::numeric_limits<float>::lowest();
  for (const auto* v : {&fixed, &warped})
    for (float x : v->data) {
      lo = std::min(lo, x);
      hi = std::max(hi, x);
    }
  const double range = hi > lo ? static_cast<double>(hi) - lo : 1.0;
  auto byte = [&](float x) {
    return static_cast<unsigned char>(std::lround(255.0 * std::clamp((x - lo) / range, 0.0, 1.0)));
  };

  struct View {
    const char* name;
    int w, h;
    std::function<std::size_t(int, int)> index;
  };
  const int mx = g.nx / 2, my = g.ny / 2, mz = g.nz / 2;
  // Rows run top to bottom; z is drawn upward in the coronal and sagittal views.
  const View views[3] = {
      {"axial", g.nx, g.ny, [&](int c, int r) { return g.index(c, r, mz); }},
      {"coronal", g.nx, g.nz, [&](int c, int r) { return g.index(c, my, g.nz - 1 - r); }},
      {"sagittal", g.ny, g.nz, [&](int c, int r) { return g.index(mx, c, g.nz - 1 - r); }},
  };
  std::vector<std::filesystem::path> written;
  for (const View& v : views) {
    std::filesystem::path p = prefix;
    p += std::string("_") + v.name + ".ppm";
    auto f = open_out(p);
    f << "P6\n" << v.w << ' ' << v.h << "\n255\n";
    std::vector<unsigned char> px(3 * static_cast<std::size_t>(v.w) * v.h);
    for (int r = 0; r < v.h; ++r)
      for (int c = 0; c < v.w; ++c) {
        const std::size_t i = v.index(c, r);
        const std::size_t o = 3 * (static_cast<std::size_t>(r) * v.w + c);
        const unsigned char wv = byte(warped.data[i]);
        px[o] = wv;
        px[o + 1] = byte(fixed.data[i]);
        px[o + 2] = wv;
      }
    f.write(reinterpret_cast<const char*>(px.data()), static_cast<std::streamsize>(px.size()));
    if (!f) throw FormatError("failed writing '" + p.string() + "'");
    written.push_back(p);
  }
  return written;
}

}  // namespace mirrba::io
