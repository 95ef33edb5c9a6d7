#pragma once

#include "subnetens/trainer.hpp"

#include <string>
#include <vector>

namespace subnetens {

inline constexpr char kCheckpointMagic[10] = {'S', 'U', 'B', 'N', 'E', 'T', 'E', 'N', 'S', '\0'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

/// File layout: magic, format version, fnv1a-64 checksum of the payload, payload.
/// Tensors are little-endian 32-bit floats; masks are packed 64-bit words with a
/// per-layer popcount header. The checksum is validated before any payload field
/// is read. Writes go through a temp file and a rename.
void save_checkpoint(const std::vector<ModelBundle>& bundles, const std::string& path);
void save_checkpoint(const ModelBundle& bundle, const std::string& path);

std::vector<ModelBundle> load_checkpoint(const std::string& path);

/// In-memory forms used by save/load and by round-trip audits.
std::string serialize_checkpoint(const std::vector<ModelBundle>& bundles);
std::vector<ModelBundle> deserialize_checkpoint(const std::string& bytes);

}  // namespace subnetens
