#include "mirrba/io/case_io.hpp"

#include <fstream>
#include <sstream>

#include "mirrba/error.hpp"
#include "mirrba/io/volume_io.hpp"

namespace mirrba::io {

namespace fs = std::filesystem;

void write_case(const fs::path& dir, const PhantomCase& c) {
  fs::create_directories(dir / "masks");
  write_volume(dir / "fixed.nvol", c.fixed);
  write_volume(dir / "moving.nvol", c.moving);
  write_field(dir / "phi_gt.nvol", c.phi_gt, c.fixed.spacing);
  write_field(dir / "velocity_gt.nvol", c.velocity_gt, c.fixed.spacing);
  write_mask(dir / "body.nvol", c.body);

  std::ofstream index(dir / "masks" / "index.txt");
  if (!index) throw FormatError("cannot write '" + (dir / "masks" / "index.txt").string() + "'");
  const auto& m = c.masks;
  for (std::size_t i = 0; i < m.organs_fixed.size(); ++i) {
    const std::string& name = m.organs_fixed[i].name;
    index << "organ " << name << '\n';
    write_mask(dir / "masks" / ("organ_" + name + "_fixed.nvol"), m.organs_fixed[i].mask);
    write_mask(dir / "masks" / ("organ_" + name + "_moving.nvol"), m.organs_moving[i].mask);
  }
  for (const auto& l : m.lesions) {
    const std::string id = std::to_string(l.id);
    const bool present = l.status == LesionStatus::kPresent;
    index << "lesion " << id << ' ' << (present ? "present" : "vanished") << '\n';
    write_mask(dir / "masks" / ("lesion_" + id + "_moving.nvol"), l.moving);
    if (present) write_mask(dir / "masks" / ("lesion_" + id + "_fixed.nvol"), l.fixed);
  }
}

LabeledMasks read_masks(const fs::path& dir) {
  const fs::path mdir = dir / "masks";
  std::ifstream index(mdir / "index.txt");
  if (!index) throw FormatError("cannot open '" + (mdir / "index.txt").string() + "'");
  LabeledMasks m;
  std::string line;
  int n = 0;
  while (std::getline(index, line)) {
    ++n;
    if (line.empty()) continue;
    std::istringstream ss(line);
    std::string kind, name, status;
    ss >> kind >> name;
    if (kind == "organ" && !name.empty()) {
      m.organs_fixed.push_back({name, read_mask(mdir / ("organ_" + name + "_fixed.nvol"))});
      m.organs_moving.push_back({name, read_mask(mdir / ("organ_" + name + "_moving.nvol"))});
    } else if (kind == "lesion" && (ss >> status) && (status == "present" || status == "vanished")) {
      LesionPair p;
      try {
        p.id = std::stoi(name);
      } catch (const std::logic_error&) {
        throw FormatError("masks/index.txt:" + std::to_string(n) + ": bad lesion id '" + name + "'");
      }
      p.status = status == "present" ? LesionStatus::kPresent : LesionStatus::kVanished;
      p.moving = read_mask(mdir / ("lesion_" + name + "_moving.nvol"));
      if (p.status == LesionStatus::kPresent) p.fixed = read_mask(mdir / ("lesion_" + name + "_fixed.nvol"));
      m.lesions.push_back(std::move(p));
    } else {
      throw FormatError("masks/index.txt:" + std::to_string(n) + ": cannot parse '" + line + "'");
    }
  }
  return m;
}

std::optional<CaseTruth> read_truth(const fs::path& dir) {
  if (!fs::exists(dir / "phi_gt.nvol") || !fs::exists(dir / "body.nvol")) return std::nullopt;
  return CaseTruth{read_field(dir / "phi_gt.nvol"), read_mask(dir / "body.nvol")};
}

}  // namespace mirrba::io
