#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "voxseg/volume.hpp"

namespace voxseg {

struct Patch {
  Index channels = 0;
  Index size = 0;                // P
  std::vector<float> data;       // [channels, P, P, P]
  std::vector<std::uint8_t> label;  // [P, P, P]
  Dims center{};
  Dims start{};
  std::string source_id;
};

struct SamplerConfig {
  Index patch_size = 24;
  double lesion_fraction = 0.6;
  Index count = 40;
  std::uint64_t seed = 0;

  void validate() const;
  /// round(lesion_fraction * count), with halves rounded up.
  Index lesion_count() const;
};

// Lesion-centred patches come first, then background-centred ones. Centres
// are drawn uniformly from the mask-positive (resp. negative) voxels and the
// window start center - P/2 is shifted to lie inside the volume.
std::vector<Patch> sample_patches(const MultiChannelVolume& mcv, const LabelVolume& mask, const SamplerConfig& cfg,
                                  const std::string& source_id = "");

/// Copies the P^3 window at `start`; voxels outside the volume read as zero.
Patch extract_patch(const MultiChannelVolume& mcv, const LabelVolume* mask, const Dims& start, Index patch_size);

struct TilePlan {
  Dims dims{};
  Dims padded{};
  Index patch_size = 0;
  std::vector<Dims> windows;  // start corners, z-major order
};

/// Non-overlapping P^3 tiling of the volume zero-padded to a multiple of P.
TilePlan tile_plan(const Dims& dims, Index patch_size);

// Archive of sampled patches: `<base>.json` manifest plus `<base>.raw`
// holding, per patch, C*P^3 little-endian f32 values followed by P^3 u8
// label bytes.
void write_patch_archive(const std::vector<Patch>& patches, const std::filesystem::path& base);
std::vector<Patch> read_patch_archive(const std::filesystem::path& base);

}  // namespace voxseg
