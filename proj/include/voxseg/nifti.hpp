#pragma once

#include <filesystem>

#include "voxseg/volume.hpp"

namespace voxseg {

// Reads an uncompressed single-file NIfTI-1 image (magic "n+1"). Supported
// datatypes: uint8, int16, float32; either byte order. dim[0] must be 3.
// NIfTI's x axis varies fastest, so dims are returned as
// [dim[3], dim[2], dim[1]] and voxel_mm as [pixdim[3], pixdim[2], pixdim[1]],
// which keeps the payload order unchanged. scl_slope/scl_inter are applied
// when scl_slope is nonzero.
Volume read_nifti1_minimal(const std::filesystem::path& path);

}  // namespace voxseg
