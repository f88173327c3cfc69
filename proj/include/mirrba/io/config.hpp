#pragma once

// Flat key=value run configuration shared by all CLI commands.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "mirrba/losses/losses.hpp"
#include "mirrba/net/net.hpp"
#include "mirrba/optim/optim.hpp"
#include "mirrba/phantom/phantom.hpp"

namespace mirrba::io {

struct KeyInfo {
  std::string key;
  std::string default_value;
  std::string help;
};

// Every accepted key with its default.
const std::vector<KeyInfo>& config_keys();

class RunConfig {
 public:
  RunConfig();

  // Unknown keys raise ArgumentError.
  void set(const std::string& key, const std::string& value);
  // "key=value".
  void set_assignment(const std::string& assignment);
  // One assignment per line; blank lines and '#' comments are ignored.
  void load(std::istream& is, const std::string& source = "config");
  void load_file(const std::filesystem::path& p);

  const std::string& get(const std::string& key) const;
  int get_int(const std::string& key) const;
  double get_double(const std::string& key) const;
  bool get_bool(const std::string& key) const;
  std::uint64_t get_u64(const std::string& key) const;
  bool has_value(const std::string& key) const { return !get(key).empty(); }

  // Sorted key=value lines; loading the output reproduces this config.
  void write(std::ostream& os) const;
  void write_file(const std::filesystem::path& p) const;

  NetConfig net() const;
  LossWeights weights() const;
  ScheduleConfig schedule() const;
  PhantomSpec phantom() const;

 private:
  std::map<std::string, std::string> values_;
};

// Iteration budget per level for a preset: "desk" or "paper".
std::vector<int> preset_budget(const std::string& preset, int depth);

}  // namespace mirrba::io
