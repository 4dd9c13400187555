#pragma once

#include <filesystem>

#include "json.hpp"
#include "voxseg/network.hpp"

namespace voxseg {

// Checkpoint: `<base>.json` holds the format tag, version, dtype, model
// config, free-form metadata and a manifest of (name, shape, offset,
// trainable) per tensor; `<base>.raw` holds the little-endian values in
// manifest order. Offsets are in bytes.

inline constexpr int kCheckpointVersion = 1;

template <typename T>
void save_checkpoint(const Model<T>& model, const std::filesystem::path& base,
                     const nlohmann::json& meta = nlohmann::json::object());

/// Loads any stored dtype, converting values to T.
template <typename T>
Model<T> load_checkpoint(const std::filesystem::path& base, nlohmann::json* meta = nullptr);

}  // namespace voxseg
