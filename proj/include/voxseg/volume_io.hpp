#pragma once

#include <filesystem>
#include <variant>

#include "voxseg/volume.hpp"

namespace voxseg {

// Container format: `<base>.json` holds
//   {"dim":[D,H,W],"dtype":"f32"|"u8","voxel_mm":[a,b,c]}
// (plus "channels":C for stacked volumes) and `<base>.raw` holds the
// little-endian payload, row-major with W fastest, channel-major when
// stacked. `base` carries no extension.

using AnyVolume = std::variant<Volume, LabelVolume, MultiChannelVolume>;

void write_volume(const Volume& v, const std::filesystem::path& base);
void write_volume(const LabelVolume& v, const std::filesystem::path& base);
void write_volume(const MultiChannelVolume& v, const std::filesystem::path& base);

AnyVolume read_volume(const std::filesystem::path& base);
Volume read_scalar_volume(const std::filesystem::path& base);
LabelVolume read_label_volume(const std::filesystem::path& base);
MultiChannelVolume read_multichannel_volume(const std::filesystem::path& base);

/// True when both halves of a container exist.
bool container_exists(const std::filesystem::path& base);

// Little-endian helpers shared with the checkpoint and patch archive formats.
void write_f32_le(std::ostream& os, std::span<const float> values);
void read_f32_le(std::istream& is, std::span<float> values);

}  // namespace voxseg
