#pragma once

// Pyramidal network used as the deformation prior.
//
// Level i of N (1-based, coarsest first) runs on the full grid scaled by
// 0.5^(N-i). Each level is an encoder (full-res conv, one stride-2 reduction),
// a stack of residual blocks at half resolution, a decoder (upsampling plus a
// skip connection from the first encoder feature map) and a zero-initialized
// 3-channel head producing a stationary velocity in level voxel units.

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "mirrba/ad/tape.hpp"
#include "mirrba/field/volume.hpp"

namespace mirrba {

enum class DownMode { kStridedConv, kMaxPool };
enum class UpMode { kTransposeConv, kTrilinear };

struct NetConfig {
  int depth = 3;
  int base_channels = 8;
  int residual_blocks_per_level = 4;
  bool use_residual_connections = true;
  DownMode down_mode = DownMode::kStridedConv;
  UpMode up_mode = UpMode::kTransposeConv;
  double activation_slope = 0.2;
  std::uint64_t seed = 0;
  // Feed (fixed, moving) instead of the moving image alone.
  bool two_channel_input = false;

  void validate() const;
  int input_channels() const { return two_channel_input ? 2 : 1; }
};

std::string to_string(DownMode m);
std::string to_string(UpMode m);
DownMode parse_down_mode(const std::string& s);
UpMode parse_up_mode(const std::string& s);

struct Param {
  std::string name;
  ad::Shape shape;
  std::vector<float> value;
};

struct Level {
  std::vector<Param> params;
  bool frozen = false;
};

// Grid of level `level` (0-based, coarsest = 0) for a network of `depth`.
Grid level_grid(const Grid& full, int depth, int level);

class Network {
 public:
  static Network build(const NetConfig& config);

  const NetConfig& config() const { return config_; }
  int depth() const { return static_cast<int>(levels_.size()); }
  Level& level(int i) { return levels_.at(i); }
  const Level& level(int i) const { return levels_.at(i); }

  std::size_t parameter_count() const;
  std::size_t parameter_count(int level) const;
  // One line per level plus a total.
  std::string census() const;

  // Checkpoint "NPRM1": magic line, config echo, then raw little-endian
  // float32 parameters level by level in build order.
  void save(std::ostream& os) const;
  static Network load(std::istream& is);

 private:
  NetConfig config_;
  std::vector<Level> levels_;
};

namespace ad {

// Parameters of one level placed on a tape, in build order.
template <typename T>
std::vector<Var<T>> bind_level(Tape<T>& tape, const Level& level, bool trainable);

// Velocity (3, Z, Y, X) on the grid of `input` (C, Z, Y, X).
template <typename T>
Var<T> forward_level(const NetConfig& config, const std::vector<Var<T>>& params,
                     const Var<T>& input);

}  // namespace ad

// Evaluates a single level without recording gradients.
VectorField forward_level(const Network& net, int level, const Volume& input,
                          const Volume* fixed_at_level = nullptr);

// Coarse-to-fine displacement from levels [0, levels_used), returned on the
// grid of level levels_used - 1. `moving` and `fixed` hold one image per level,
// coarsest first; `fixed` may be null unless the network takes two channels.
VectorField pyramid_chain(const Network& net, const std::vector<Volume>& moving,
                          const std::vector<Volume>* fixed, int levels_used,
                          int squaring_steps = 7);

// Coarse-to-fine displacement on the full grid using levels [0, levels_used).
// Finer levels see the moving image warped by the upsampled coarser field and
// predict a residual composed on top of it.
VectorField pyramid_field(const Network& net, const Volume& moving, int levels_used = -1,
                          int squaring_steps = 7, const Volume* fixed = nullptr);

}  // namespace mirrba
