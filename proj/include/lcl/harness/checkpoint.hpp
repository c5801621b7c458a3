#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "lcl/harness/run.hpp"

namespace lcl {

/// Checkpoint layout (little-endian):
///
///   "LCKP" | u32 version | u32 section count
///   section*: 4-byte tag | u64 payload length | payload
///   u64 FNV-1a over every preceding byte
///
/// Sections: "META" (JSON: backbone config, per-site experts with their
/// estimator statistics, head rows, concept names), "CONC" (concept
/// embeddings) and "PARM" (every model parameter in Model::parameters()
/// order: name, frozen flag, shape, raw doubles).
inline constexpr std::uint32_t kCheckpointVersion = 1;

std::string serialize_model(const Model& model);
/// Rebuilds a model from checkpoint bytes. The structure (expert counts,
/// head rows, backbone dimensions) comes from the checkpoint itself.
/// Throws CheckpointError: BadMagic, VersionMismatch or Corrupt.
Model deserialize_model(const std::string& bytes);

void save_checkpoint(const Model& model, const std::filesystem::path& path);
Model load_checkpoint(const std::filesystem::path& path);

}  // namespace lcl
