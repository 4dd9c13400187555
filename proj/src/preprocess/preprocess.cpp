#include "voxseg/preprocess.hpp"

#include <algorithm>
#include <cmath>

#include "voxseg/errors.hpp"
#include "voxseg/parallel.hpp"

namespace voxseg {

namespace {

constexpr int kBins = 256;

int bin_of(float v) {
  const float c = std::clamp(v, 0.0f, 1.0f);
  return std::min(kBins - 1, static_cast<int>(std::floor(c * kBins)));
}

// Clipped, renormalized cumulative histogram of one rectangular region.
std::array<float, kBins> tile_mapping(const float* slice, Index width, Index y0, Index y1, Index x0, Index x1,
                                      double clip_limit) {
  std::array<double, kBins> hist{};
  for (Index y = y0; y < y1; ++y)
    for (Index x = x0; x < x1; ++x) hist[static_cast<std::size_t>(bin_of(slice[y * width + x]))] += 1.0;
  const double npix = static_cast<double>((y1 - y0) * (x1 - x0));
  const double limit = clip_limit * npix / kBins;
  double excess = 0.0;
  for (double& h : hist) {
    if (h > limit) {
      excess += h - limit;
      h = limit;
    }
  }
  const double bonus = excess / kBins;
  std::array<float, kBins> map{};
  double acc = 0.0;
  for (int b = 0; b < kBins; ++b) {
    acc += hist[static_cast<std::size_t>(b)] + bonus;
    map[static_cast<std::size_t>(b)] = static_cast<float>(std::min(1.0, acc / npix));
  }
  return map;
}

// Tile index below `pos` and the interpolation weight toward the next one,
// with tile centres at (t + 0.5) * extent / tiles - 0.5.
std::pair<int, float> locate(Index pos, Index extent, int tiles) {
  const double step = static_cast<double>(extent) / tiles;
  const double f = (static_cast<double>(pos) + 0.5) / step - 0.5;
  if (f <= 0.0) return {0, 0.0f};
  if (f >= tiles - 1) return {tiles - 1, 0.0f};
  const int t = static_cast<int>(std::floor(f));
  return {t, static_cast<float>(f - t)};
}

void clahe_slice(const float* in, float* out, Index height, Index width, const ClaheParams& p) {
  const auto [lo, hi] = std::minmax_element(in, in + height * width);
  if (*lo == *hi) {
    std::copy(in, in + height * width, out);
    return;
  }
  const int ty = static_cast<int>(std::min<Index>(p.tiles[0], height));
  const int tx = static_cast<int>(std::min<Index>(p.tiles[1], width));
  std::vector<std::array<float, kBins>> maps(static_cast<std::size_t>(ty * tx));
  for (int i = 0; i < ty; ++i)
    for (int j = 0; j < tx; ++j)
      maps[static_cast<std::size_t>(i * tx + j)] =
          tile_mapping(in, width, i * height / ty, (i + 1) * height / ty, j * width / tx, (j + 1) * width / tx,
                       p.clip_limit);
  for (Index y = 0; y < height; ++y) {
    const auto [i0, wy] = locate(y, height, ty);
    const int i1 = std::min(i0 + 1, ty - 1);
    for (Index x = 0; x < width; ++x) {
      const auto [j0, wx] = locate(x, width, tx);
      const int j1 = std::min(j0 + 1, tx - 1);
      const auto b = static_cast<std::size_t>(bin_of(in[y * width + x]));
      auto m = [&](int i, int j) { return maps[static_cast<std::size_t>(i * tx + j)][b]; };
      const float top = (1 - wx) * m(i0, j0) + wx * m(i0, j1);
      const float bottom = (1 - wx) * m(i1, j0) + wx * m(i1, j1);
      out[y * width + x] = std::clamp((1 - wy) * top + wy * bottom, 0.0f, 1.0f);
    }
  }
}

}  // namespace

Volume rescale_unit(const Volume& v) {
  Volume out = v;
  if (v.data.empty()) return out;
  const auto [lo, hi] = std::minmax_element(v.data.begin(), v.data.end());
  const float a = *lo, b = *hi;
  if (a == b) {
    std::fill(out.data.begin(), out.data.end(), 0.0f);
    return out;
  }
  for (float& x : out.data) x = (x - a) / (b - a);
  return out;
}

Volume clahe(const Volume& v, const ClaheParams& params) {
  if (!(params.clip_limit > 0.0)) throw ConfigError("clahe: clip_limit must be positive");
  if (params.tiles[0] < 1 || params.tiles[1] < 1) throw ConfigError("clahe: tile counts must be at least 1");
  Volume out = v;
  const Index h = v.dims[1], w = v.dims[2];
  parallel_for(v.dims[0], [&](Index z) {
    clahe_slice(v.data.data() + z * h * w, out.data.data() + z * h * w, h, w, params);
  });
  return out;
}

Volume laplacian3d(const Volume& v) {
  const auto [d, h, w] = v.dims;
  Volume out = v;
  parallel_for(d, [&](Index z) {
    const Index zm = std::max<Index>(z - 1, 0), zp = std::min(z + 1, d - 1);
    for (Index y = 0; y < h; ++y) {
      const Index ym = std::max<Index>(y - 1, 0), yp = std::min(y + 1, h - 1);
      for (Index x = 0; x < w; ++x) {
        const Index xm = std::max<Index>(x - 1, 0), xp = std::min(x + 1, w - 1);
        out.at(z, y, x) = v.at(zm, y, x) + v.at(zp, y, x) + v.at(z, ym, x) + v.at(z, yp, x) + v.at(z, y, xm) +
                          v.at(z, y, xp) - 6.0f * v.at(z, y, x);
      }
    }
  });
  return out;
}

Volume zscore_normalize(const Volume& v, std::span<const std::uint8_t> support_mask) {
  if (support_mask.size() != v.data.size()) throw ShapeError("zscore_normalize: support mask size mismatch");
  double sum = 0.0;
  Index n = 0;
  for (std::size_t i = 0; i < v.data.size(); ++i) {
    if (support_mask[i]) {
      sum += v.data[i];
      ++n;
    }
  }
  if (n < 2) throw DegenerateInput("zscore_normalize: support has fewer than 2 voxels");
  const double mean = sum / static_cast<double>(n);
  double ss = 0.0;
  for (std::size_t i = 0; i < v.data.size(); ++i) {
    if (support_mask[i]) ss += (v.data[i] - mean) * (v.data[i] - mean);
  }
  const double sd = std::sqrt(ss / static_cast<double>(n));
  if (!(sd > 1e-12 * std::max(1.0, std::abs(mean)))) {
    throw DegenerateInput("zscore_normalize: zero variance over the normalization support");
  }
  Volume out = v;
  for (float& x : out.data) x = static_cast<float>((x - mean) / sd);
  return out;
}

Volume zscore_normalize(const Volume& v, Support support) {
  std::vector<std::uint8_t> mask(v.data.size(), 1);
  if (support == Support::nonzero) {
    for (std::size_t i = 0; i < v.data.size(); ++i) mask[i] = v.data[i] != 0.0f;
  }
  return zscore_normalize(v, mask);
}

MultiChannelVolume build_channels(const Volume& v, const ClaheParams& params) {
  std::vector<std::uint8_t> support(v.data.size());
  for (std::size_t i = 0; i < v.data.size(); ++i) support[i] = v.data[i] != 0.0f;
  const Volume enhanced = clahe(rescale_unit(v), params);
  const Volume c0 = zscore_normalize(enhanced, support);
  const Volume c1 = zscore_normalize(laplacian3d(enhanced), support);
  MultiChannelVolume out(2, v.dims);
  out.voxel_mm = v.voxel_mm;
  std::copy(c0.data.begin(), c0.data.end(), out.channel(0).begin());
  std::copy(c1.data.begin(), c1.data.end(), out.channel(1).begin());
  return out;
}

}  // namespace voxseg
