#pragma once

#include <cstdint>
#include <vector>

#include "voxseg/volume.hpp"

namespace voxseg {

struct SynthSpec {
  Dims dims{48, 48, 48};
  int n_lesions = 5;
  double radius_min = 3.0;
  double radius_max = 5.0;
  double lesion_intensity = 1.8;  // multiplier applied inside lesions
  double noise_sigma = 0.02;
  std::uint64_t seed = 0;

  void validate() const;
};

struct Ellipsoid {
  std::array<double, 3> center;  // voxel coordinates (z, y, x)
  std::array<double, 3> radii;

  bool contains(Index z, Index y, Index x) const;
};

struct SynthSubject {
  Volume image;
  LabelVolume mask;
  std::vector<Ellipsoid> lesions;
};

// Background: uniform noise, box-blurred (3 passes, radius 2, clamped
// borders) along each axis, min-max stretched and mapped to [0.3, 0.5].
// Lesions are ellipsoids with centers at least radius_max from every
// border; voxels inside are multiplied by lesion_intensity. Gaussian noise
// of noise_sigma is added last and the result clamped to [0, 1].
SynthSubject generate_synthetic(const SynthSpec& spec);

}  // namespace voxseg
