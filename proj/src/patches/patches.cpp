#include "voxseg/patches.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "json.hpp"
#include "voxseg/errors.hpp"
#include "voxseg/log.hpp"
#include "voxseg/random.hpp"
#include "voxseg/volume_io.hpp"

namespace voxseg {

namespace fs = std::filesystem;
using nlohmann::json;

void SamplerConfig::validate() const {
  if (patch_size < 1) throw ConfigError("sampler: patch_size must be at least 1");
  if (!(lesion_fraction >= 0.0 && lesion_fraction <= 1.0)) {
    throw ConfigError("sampler: lesion_fraction must lie in [0, 1]");
  }
  if (count < 0) throw ConfigError("sampler: count must be non-negative");
}

Index SamplerConfig::lesion_count() const {
  return static_cast<Index>(std::floor(lesion_fraction * static_cast<double>(count) + 0.5));
}

Patch extract_patch(const MultiChannelVolume& mcv, const LabelVolume* mask, const Dims& start, Index p) {
  Patch out;
  out.channels = mcv.channels;
  out.size = p;
  out.start = start;
  out.data.assign(static_cast<std::size_t>(mcv.channels * p * p * p), 0.0f);
  out.label.assign(static_cast<std::size_t>(p * p * p), 0);
  const Dims& d = mcv.dims;
  const Index n = voxel_count(d);
  for (Index z = 0; z < p; ++z) {
    const Index sz = start[0] + z;
    if (sz < 0 || sz >= d[0]) continue;
    for (Index y = 0; y < p; ++y) {
      const Index sy = start[1] + y;
      if (sy < 0 || sy >= d[1]) continue;
      const Index x0 = std::max<Index>(0, -start[2]);
      const Index x1 = std::min(p, d[2] - start[2]);
      if (x1 <= x0) continue;
      const Index src = flat_index(d, sz, sy, start[2] + x0);
      const Index dst = (z * p + y) * p + x0;
      for (Index c = 0; c < mcv.channels; ++c) {
        std::copy_n(mcv.data.begin() + c * n + src, x1 - x0, out.data.begin() + c * p * p * p + dst);
      }
      if (mask) std::copy_n(mask->data.begin() + src, x1 - x0, out.label.begin() + dst);
    }
  }
  return out;
}

std::vector<Patch> sample_patches(const MultiChannelVolume& mcv, const LabelVolume& mask, const SamplerConfig& cfg,
                                  const std::string& source_id) {
  cfg.validate();
  if (mask.dims != mcv.dims) throw ShapeError("sample_patches: mask and image dims differ");
  const Index p = cfg.patch_size;
  for (Index extent : mcv.dims) {
    if (extent < p) {
      throw ShapeError("sample_patches: volume extent " + std::to_string(extent) + " is smaller than patch size " +
                       std::to_string(p));
    }
  }
  std::vector<Patch> out;
  if (cfg.count == 0) return out;

  std::vector<Index> positive, negative;
  for (Index i = 0; i < static_cast<Index>(mask.data.size()); ++i) {
    (mask.data[static_cast<std::size_t>(i)] ? positive : negative).push_back(i);
  }
  Index n_lesion = cfg.lesion_count();
  if (positive.empty() && n_lesion > 0) {
    emit_warning("empty_mask", "subject '" + source_id + "' has an empty mask; all " + std::to_string(cfg.count) +
                                   " patches are background-centred");
    n_lesion = 0;
  }
  if (negative.empty() && n_lesion < cfg.count) {
    throw DegenerateInput("sample_patches: no background voxels to centre patches on");
  }

  Rng rng(cfg.seed);
  const Dims& d = mcv.dims;
  out.reserve(static_cast<std::size_t>(cfg.count));
  for (Index k = 0; k < cfg.count; ++k) {
    const auto& pool = k < n_lesion ? positive : negative;
    const Index flat = pool[static_cast<std::size_t>(rng.below(pool.size()))];
    const Dims center{flat / (d[1] * d[2]), (flat / d[2]) % d[1], flat % d[2]};
    Dims start;
    for (std::size_t a = 0; a < 3; ++a) start[a] = std::clamp<Index>(center[a] - p / 2, 0, d[a] - p);
    Patch patch = extract_patch(mcv, &mask, start, p);
    patch.center = center;
    patch.source_id = source_id;
    out.push_back(std::move(patch));
  }
  return out;
}

TilePlan tile_plan(const Dims& dims, Index p) {
  if (p < 1) throw ConfigError("tile_plan: patch size must be at least 1");
  TilePlan plan;
  plan.dims = dims;
  plan.patch_size = p;
  for (std::size_t a = 0; a < 3; ++a) plan.padded[a] = (dims[a] + p - 1) / p * p;
  for (Index z = 0; z < plan.padded[0]; z += p)
    for (Index y = 0; y < plan.padded[1]; y += p)
      for (Index x = 0; x < plan.padded[2]; x += p) plan.windows.push_back({z, y, x});
  return plan;
}

void write_patch_archive(const std::vector<Patch>& patches, const fs::path& base) {
  if (base.has_parent_path()) fs::create_directories(base.parent_path());
  json manifest{{"format", "voxseg-patches"}, {"version", 1}, {"count", patches.size()}};
  json entries = json::array();
  std::ofstream raw(base.string() + ".raw", std::ios::binary);
  if (!raw) throw IoError("cannot open " + base.string() + ".raw for writing");
  std::uint64_t offset = 0;
  for (const auto& pt : patches) {
    entries.push_back({{"source_id", pt.source_id},
                       {"channels", pt.channels},
                       {"size", pt.size},
                       {"center", pt.center},
                       {"start", pt.start},
                       {"offset", offset}});
    write_f32_le(raw, pt.data);
    raw.write(reinterpret_cast<const char*>(pt.label.data()), static_cast<std::streamsize>(pt.label.size()));
    offset += pt.data.size() * 4 + pt.label.size();
  }
  if (!raw) throw IoError("failed writing " + base.string() + ".raw");
  manifest["patches"] = std::move(entries);
  std::ofstream js(base.string() + ".json");
  js << manifest.dump(1) << '\n';
  if (!js) throw IoError("failed writing " + base.string() + ".json");
}

std::vector<Patch> read_patch_archive(const fs::path& base) {
  const fs::path jp = base.string() + ".json", rp = base.string() + ".raw";
  std::ifstream js(jp);
  if (!js) throw IoError("cannot open " + jp.string());
  json manifest;
  try {
    manifest = json::parse(js);
  } catch (const json::exception& e) {
    throw CorruptContainer("corrupt container " + jp.string() + ": " + e.what());
  }
  if (manifest.value("format", "") != "voxseg-patches") {
    throw UnsupportedFormat(jp.string() + " is not a patch archive");
  }
  std::ifstream raw(rp, std::ios::binary);
  if (!raw) throw IoError("cannot open " + rp.string());
  const auto raw_size = fs::file_size(rp);
  std::vector<Patch> out;
  std::uint64_t expected = 0;
  for (const auto& e : manifest.at("patches")) {
    Patch pt;
    pt.source_id = e.at("source_id").get<std::string>();
    pt.channels = e.at("channels").get<Index>();
    pt.size = e.at("size").get<Index>();
    pt.center = e.at("center").get<Dims>();
    pt.start = e.at("start").get<Dims>();
    const Index n = pt.size * pt.size * pt.size;
    const std::uint64_t bytes = static_cast<std::uint64_t>(n * pt.channels * 4 + n);
    if (e.at("offset").get<std::uint64_t>() != expected || expected + bytes > raw_size) {
      throw CorruptContainer("corrupt container " + rp.string() + ": patch payload out of range");
    }
    pt.data.resize(static_cast<std::size_t>(n * pt.channels));
    pt.label.resize(static_cast<std::size_t>(n));
    read_f32_le(raw, pt.data);
    raw.read(reinterpret_cast<char*>(pt.label.data()), static_cast<std::streamsize>(n));
    expected += bytes;
    out.push_back(std::move(pt));
  }
  if (expected != raw_size) throw CorruptContainer("corrupt container " + rp.string() + ": trailing bytes");
  return out;
}

}  // namespace voxseg
