#pragma once

#include <filesystem>
#include <string>

#include "calclab/model.hpp"

namespace calclab {

// Checkpoint file layout:
//   magic "CBCH" | u16 version (LE) | u32 header length (LE) | JSON header | payload
// The header carries the model config and a tensor manifest (name, shape,
// offset into the payload, dtype). Payloads are raw little-endian values.
// dtype "f64" round-trips bit-exactly; "f32" is a storage option.
constexpr std::uint16_t kCheckpointVersion = 1;

void save_checkpoint(const ModelState& state, const std::filesystem::path& path, const std::string& dtype = "f64");
ModelState load_checkpoint(const std::filesystem::path& path);

}  // namespace calclab
