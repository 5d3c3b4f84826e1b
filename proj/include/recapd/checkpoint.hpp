#pragma once

// Checkpoint layout (all integers little-endian):
//
//   8 bytes   magic "RECAPDCK"
//   u32       format version (1)
//   u64       FNV-1a hash of ModelConfig::architecture_string()
//   u32       parameter count
//   per parameter:
//     u32 name length, name bytes
//     u32 rank, rank x u32 extents
//     prod(extents) x f64 values

#include <cstring>
#include <filesystem>

#include "recapd/binary_io.hpp"
#include "recapd/model.hpp"

namespace recapd {

inline constexpr char kCheckpointMagic[8] = {'R', 'E', 'C', 'A', 'P', 'D', 'C', 'K'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

inline std::uint64_t config_hash(const ModelConfig& cfg) { return binary::fnv1a(cfg.architecture_string()); }

inline void save_params(const std::filesystem::path& path, const ModelConfig& cfg, const ModelParams& params) {
  binary::Writer w;
  w.bytes(kCheckpointMagic, sizeof kCheckpointMagic);
  w.u32(kCheckpointVersion);
  w.u64(config_hash(cfg));
  const auto plist = params.parameters();
  w.u32(static_cast<std::uint32_t>(plist.size()));
  for (const Parameter* p : plist) {
    w.str(p->name);
    w.u32(static_cast<std::uint32_t>(p->value.rank()));
    for (std::size_t e : p->value.shape()) w.u32(static_cast<std::uint32_t>(e));
    for (double v : p->value.data()) w.f64(v);
  }
  w.save(path);
}

/// Loads parameters saved for an identical architecture. Any mismatch in
/// version, architecture hash, names or shapes is an error.
inline ModelParams load_params(const std::filesystem::path& path, const ModelConfig& cfg) {
  binary::Reader r = binary::Reader::open(path);
  if (r.size() == 0) r.fail("empty checkpoint file");
  char magic[8];
  r.bytes(magic, sizeof magic);
  if (std::memcmp(magic, kCheckpointMagic, sizeof magic) != 0) r.fail("bad checkpoint magic");
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) r.fail("unsupported checkpoint version " + std::to_string(version));
  const std::uint64_t hash = r.u64();
  if (hash != config_hash(cfg)) {
    throw ConfigError(path.string() + ": checkpoint was saved for a different model configuration (expected " +
                      cfg.architecture_string() + ")");
  }
  ModelParams params = init_params(cfg);
  auto plist = params.parameters();
  const std::uint32_t count = r.u32();
  if (count != plist.size()) {
    r.fail("checkpoint holds " + std::to_string(count) + " parameters, model has " + std::to_string(plist.size()));
  }
  for (Parameter* p : plist) {
    const std::string name = r.str();
    if (name != p->name) r.fail("expected parameter '" + p->name + "', found '" + name + "'");
    const std::uint32_t rank = r.u32();
    Shape shape(rank);
    for (auto& e : shape) e = r.u32();
    if (shape != p->value.shape()) {
      r.fail("parameter '" + name + "' has shape " + shape_string(shape) + ", expected " +
             shape_string(p->value.shape()));
    }
    for (double& v : p->value.data()) v = r.f64();
  }
  if (r.remaining() != 0) r.fail("trailing bytes after last parameter");
  return params;
}

}  // namespace recapd
