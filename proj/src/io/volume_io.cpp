#include "voxseg/volume_io.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>

#include "json.hpp"
#include "voxseg/errors.hpp"

namespace voxseg {

namespace fs = std::filesystem;
using nlohmann::json;

Index LabelVolume::count() const {
  return static_cast<Index>(std::count_if(data.begin(), data.end(), [](std::uint8_t v) { return v != 0; }));
}

void require_binary(const LabelVolume& mask) {
  for (std::size_t i = 0; i < mask.data.size(); ++i) {
    if (mask.data[i] > 1) {
      throw InvariantViolation("label volume violates the binary invariant: value " +
                               std::to_string(mask.data[i]) + " at voxel " + std::to_string(i));
    }
  }
}

namespace {

fs::path header_path(const fs::path& base) { return fs::path(base.string() + ".json"); }
fs::path payload_path(const fs::path& base) { return fs::path(base.string() + ".raw"); }

void write_header(const fs::path& base, const json& header) {
  if (base.has_parent_path()) fs::create_directories(base.parent_path());
  std::ofstream os(header_path(base));
  if (!os) throw IoError("cannot open " + header_path(base).string() + " for writing");
  os << header.dump() << '\n';
  if (!os) throw IoError("failed writing " + header_path(base).string());
}

json make_header(const Dims& dims, const Spacing& mm, const char* dtype) {
  return json{{"dim", {dims[0], dims[1], dims[2]}}, {"dtype", dtype}, {"voxel_mm", {mm[0], mm[1], mm[2]}}};
}

std::ofstream open_payload(const fs::path& base) {
  std::ofstream os(payload_path(base), std::ios::binary);
  if (!os) throw IoError("cannot open " + payload_path(base).string() + " for writing");
  return os;
}

}  // namespace

void write_f32_le(std::ostream& os, std::span<const float> values) {
  if constexpr (std::endian::native == std::endian::little) {
    os.write(reinterpret_cast<const char*>(values.data()), static_cast<std::streamsize>(values.size_bytes()));
  } else {
    for (float v : values) {
      auto bits = std::bit_cast<std::uint32_t>(v);
      char b[4] = {static_cast<char>(bits), static_cast<char>(bits >> 8), static_cast<char>(bits >> 16),
                   static_cast<char>(bits >> 24)};
      os.write(b, 4);
    }
  }
}

void read_f32_le(std::istream& is, std::span<float> values) {
  is.read(reinterpret_cast<char*>(values.data()), static_cast<std::streamsize>(values.size_bytes()));
  if constexpr (std::endian::native != std::endian::little) {
    for (float& v : values) {
      auto bits = std::bit_cast<std::uint32_t>(v);
      bits = ((bits & 0xFFu) << 24) | ((bits & 0xFF00u) << 8) | ((bits >> 8) & 0xFF00u) | (bits >> 24);
      v = std::bit_cast<float>(bits);
    }
  }
}

void write_volume(const Volume& v, const fs::path& base) {
  write_header(base, make_header(v.dims, v.voxel_mm, "f32"));
  auto os = open_payload(base);
  write_f32_le(os, v.data);
  if (!os) throw IoError("failed writing " + payload_path(base).string());
}

void write_volume(const LabelVolume& v, const fs::path& base) {
  write_header(base, make_header(v.dims, v.voxel_mm, "u8"));
  auto os = open_payload(base);
  os.write(reinterpret_cast<const char*>(v.data.data()), static_cast<std::streamsize>(v.data.size()));
  if (!os) throw IoError("failed writing " + payload_path(base).string());
}

void write_volume(const MultiChannelVolume& v, const fs::path& base) {
  json header = make_header(v.dims, v.voxel_mm, "f32");
  header["channels"] = v.channels;
  write_header(base, header);
  auto os = open_payload(base);
  write_f32_le(os, v.data);
  if (!os) throw IoError("failed writing " + payload_path(base).string());
}

bool container_exists(const fs::path& base) {
  return fs::exists(header_path(base)) && fs::exists(payload_path(base));
}

AnyVolume read_volume(const fs::path& base) {
  const fs::path hp = header_path(base), pp = payload_path(base);
  std::ifstream hs(hp);
  if (!hs) throw IoError("cannot open " + hp.string());
  json header;
  try {
    header = json::parse(hs);
  } catch (const json::exception& e) {
    throw CorruptContainer("corrupt container header " + hp.string() + ": " + e.what());
  }
  Dims dims{};
  Spacing mm{1.0, 1.0, 1.0};
  std::string dtype;
  Index channels = 0;
  try {
    auto d = header.at("dim").get<std::vector<Index>>();
    if (d.size() != 3) throw CorruptContainer("corrupt container " + hp.string() + ": dim must have 3 entries");
    for (int i = 0; i < 3; ++i) {
      if (d[static_cast<std::size_t>(i)] <= 0) throw CorruptContainer("corrupt container " + hp.string() + ": non-positive dim");
      dims[static_cast<std::size_t>(i)] = d[static_cast<std::size_t>(i)];
    }
    dtype = header.at("dtype").get<std::string>();
    if (header.contains("voxel_mm")) {
      auto v = header.at("voxel_mm").get<std::vector<double>>();
      if (v.size() != 3) throw CorruptContainer("corrupt container " + hp.string() + ": voxel_mm must have 3 entries");
      std::copy(v.begin(), v.end(), mm.begin());
    }
    if (header.contains("channels")) channels = header.at("channels").get<Index>();
  } catch (const json::exception& e) {
    throw CorruptContainer("corrupt container header " + hp.string() + ": " + e.what());
  }

  std::size_t elem = 0;
  if (dtype == "f32") {
    elem = 4;
  } else if (dtype == "u8") {
    elem = 1;
  } else {
    throw UnsupportedFormat("unknown dtype \"" + dtype + "\" in " + hp.string());
  }
  if (channels < 0 || (channels > 0 && dtype != "f32")) {
    throw CorruptContainer("corrupt container " + hp.string() + ": invalid channel count");
  }
  const auto voxels = static_cast<std::uintmax_t>(voxel_count(dims) * std::max<Index>(channels, 1));
  std::error_code ec;
  const auto bytes = fs::file_size(pp, ec);
  if (ec) throw IoError("cannot stat " + pp.string() + ": " + ec.message());
  if (bytes != voxels * elem) {
    throw CorruptContainer("corrupt container " + base.string() + ": header describes " +
                           std::to_string(voxels) + " voxels of " + dtype + " (" +
                           std::to_string(voxels * elem) + " bytes) but payload has " +
                           std::to_string(bytes) + " bytes");
  }
  std::ifstream ps(pp, std::ios::binary);
  if (!ps) throw IoError("cannot open " + pp.string());

  if (dtype == "u8") {
    LabelVolume v(dims);
    v.voxel_mm = mm;
    ps.read(reinterpret_cast<char*>(v.data.data()), static_cast<std::streamsize>(v.data.size()));
    if (!ps) throw IoError("failed reading " + pp.string());
    require_binary(v);
    return v;
  }
  if (channels > 0) {
    MultiChannelVolume v(channels, dims);
    v.voxel_mm = mm;
    read_f32_le(ps, v.data);
    if (!ps) throw IoError("failed reading " + pp.string());
    return v;
  }
  Volume v(dims);
  v.voxel_mm = mm;
  read_f32_le(ps, v.data);
  if (!ps) throw IoError("failed reading " + pp.string());
  return v;
}

namespace {

template <typename V>
V read_as(const fs::path& base, const char* what) {
  auto any = read_volume(base);
  if (auto* v = std::get_if<V>(&any)) return std::move(*v);
  throw UnsupportedFormat(base.string() + " is not a " + what);
}

}  // namespace

Volume read_scalar_volume(const fs::path& base) { return read_as<Volume>(base, "scalar f32 volume"); }
LabelVolume read_label_volume(const fs::path& base) { return read_as<LabelVolume>(base, "u8 label volume"); }
MultiChannelVolume read_multichannel_volume(const fs::path& base) {
  return read_as<MultiChannelVolume>(base, "multi-channel f32 volume");
}

}  // namespace voxseg
