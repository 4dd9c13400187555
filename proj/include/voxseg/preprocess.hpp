#pragma once

#include <array>

#include "voxseg/volume.hpp"

namespace voxseg {

struct ClaheParams {
  double clip_limit = 2.0;
  std::array<int, 2> tiles{8, 8};  // rows, columns of each axial slice
};

enum class Support { all, nonzero };

/// Min-max rescale to [0, 1]. A constant volume maps to all zeros.
Volume rescale_unit(const Volume& v);

// Contrast-limited adaptive histogram equalization, applied independently
// to every axial slice (fixed z). Values are binned into 256 levels over
// [0, 1]; inputs outside that range are clamped for binning. Constant
// slices are copied unchanged.
Volume clahe(const Volume& v, const ClaheParams& params = {});

/// 6-neighbour discrete Laplacian with replicated borders.
Volume laplacian3d(const Volume& v);

/// (v - mean) / std with moments taken over the support, applied everywhere.
Volume zscore_normalize(const Volume& v, Support support = Support::all);
Volume zscore_normalize(const Volume& v, std::span<const std::uint8_t> support_mask);

/// Channel 0: enhanced image. Channel 1: Laplacian of the enhanced image.
/// Both are z-scored over the nonzero voxels of `v`.
MultiChannelVolume build_channels(const Volume& v, const ClaheParams& params = {});

}  // namespace voxseg
