#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "voxseg/tensor.hpp"

namespace voxseg {

/// Spatial extents [D, H, W]; W varies fastest in memory.
using Dims = std::array<Index, 3>;
using Spacing = std::array<double, 3>;

inline Index voxel_count(const Dims& d) { return d[0] * d[1] * d[2]; }

inline Index flat_index(const Dims& d, Index z, Index y, Index x) { return (z * d[1] + y) * d[2] + x; }

struct Volume {
  Dims dims{};
  Spacing voxel_mm{1.0, 1.0, 1.0};
  std::vector<float> data;

  Volume() = default;
  Volume(Dims d, float fill = 0.0f) : dims(d), data(static_cast<std::size_t>(voxel_count(d)), fill) {}

  float at(Index z, Index y, Index x) const { return data[static_cast<std::size_t>(flat_index(dims, z, y, x))]; }
  float& at(Index z, Index y, Index x) { return data[static_cast<std::size_t>(flat_index(dims, z, y, x))]; }
};

/// Binary mask, values in {0, 1}.
struct LabelVolume {
  Dims dims{};
  Spacing voxel_mm{1.0, 1.0, 1.0};
  std::vector<std::uint8_t> data;

  LabelVolume() = default;
  LabelVolume(Dims d, std::uint8_t fill = 0)
      : dims(d), data(static_cast<std::size_t>(voxel_count(d)), fill) {}

  std::uint8_t at(Index z, Index y, Index x) const {
    return data[static_cast<std::size_t>(flat_index(dims, z, y, x))];
  }
  std::uint8_t& at(Index z, Index y, Index x) { return data[static_cast<std::size_t>(flat_index(dims, z, y, x))]; }
  Index count() const;
};

/// Channel-stacked volume, layout [C, D, H, W].
struct MultiChannelVolume {
  Index channels = 0;
  Dims dims{};
  Spacing voxel_mm{1.0, 1.0, 1.0};
  std::vector<float> data;

  MultiChannelVolume() = default;
  MultiChannelVolume(Index c, Dims d)
      : channels(c), dims(d), data(static_cast<std::size_t>(c * voxel_count(d)), 0.0f) {}

  std::span<const float> channel(Index c) const {
    const auto n = static_cast<std::size_t>(voxel_count(dims));
    return std::span<const float>(data).subspan(static_cast<std::size_t>(c) * n, n);
  }
  std::span<float> channel(Index c) {
    const auto n = static_cast<std::size_t>(voxel_count(dims));
    return std::span<float>(data).subspan(static_cast<std::size_t>(c) * n, n);
  }
};

/// Throws InvariantViolation when any voxel is outside {0, 1}.
void require_binary(const LabelVolume& mask);

}  // namespace voxseg
