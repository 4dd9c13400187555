#include "voxseg/nifti.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>

#include "voxseg/errors.hpp"

namespace voxseg {

namespace {

constexpr std::size_t kHeaderSize = 348;
constexpr std::int16_t kUint8 = 2;
constexpr std::int16_t kInt16 = 4;
constexpr std::int16_t kFloat32 = 16;

// Field reader over the raw header honoring the file's byte order.
class HeaderView {
 public:
  HeaderView(const std::vector<unsigned char>& bytes, bool swap) : bytes_(bytes), swap_(swap) {}

  template <typename U>
  U get(std::size_t offset) const {
    unsigned char buf[sizeof(U)];
    std::memcpy(buf, bytes_.data() + offset, sizeof(U));
    if (swap_) std::reverse(std::begin(buf), std::end(buf));
    U out;
    std::memcpy(&out, buf, sizeof(U));
    return out;
  }

 private:
  const std::vector<unsigned char>& bytes_;
  bool swap_;
};

template <typename U>
U swapped(U v) {
  unsigned char buf[sizeof(U)];
  std::memcpy(buf, &v, sizeof(U));
  std::reverse(std::begin(buf), std::end(buf));
  std::memcpy(&v, buf, sizeof(U));
  return v;
}

}  // namespace

Volume read_nifti1_minimal(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  if (bytes.size() < kHeaderSize) {
    throw UnsupportedFormat(path.string() + ": file shorter than the 348-byte NIfTI-1 header");
  }

  std::int32_t sizeof_hdr;
  std::memcpy(&sizeof_hdr, bytes.data(), 4);
  bool swap = false;
  if (sizeof_hdr != 348) {
    if (swapped(sizeof_hdr) != 348) {
      throw UnsupportedFormat(path.string() + ": sizeof_hdr is " + std::to_string(sizeof_hdr) + ", expected 348");
    }
    swap = true;
  }
  const HeaderView h(bytes, swap);

  const char* magic = reinterpret_cast<const char*>(bytes.data() + 344);
  if (std::memcmp(magic, "n+1\0", 4) != 0) {
    if (std::memcmp(magic, "ni1\0", 4) == 0) {
      throw UnsupportedFormat(path.string() + ": magic \"ni1\" (detached header/image pair) is not supported");
    }
    throw UnsupportedFormat(path.string() + ": bad magic, expected \"n+1\"");
  }

  const auto ndim = h.get<std::int16_t>(40);
  if (ndim != 3) throw UnsupportedFormat(path.string() + ": dim[0] is " + std::to_string(ndim) + ", expected 3");
  Dims dims{};
  Spacing mm{};
  for (int i = 0; i < 3; ++i) {
    const auto d = h.get<std::int16_t>(40 + 2 * static_cast<std::size_t>(i + 1));
    if (d <= 0) throw UnsupportedFormat(path.string() + ": dim[" + std::to_string(i + 1) + "] is not positive");
    dims[static_cast<std::size_t>(2 - i)] = d;
    mm[static_cast<std::size_t>(2 - i)] = std::abs(h.get<float>(76 + 4 * static_cast<std::size_t>(i + 1)));
  }

  const auto datatype = h.get<std::int16_t>(70);
  std::size_t elem = 0;
  switch (datatype) {
    case kUint8: elem = 1; break;
    case kInt16: elem = 2; break;
    case kFloat32: elem = 4; break;
    default:
      throw UnsupportedFormat(path.string() + ": datatype " + std::to_string(datatype) +
                              " unsupported (uint8, int16, float32 only)");
  }

  const float vox_offset_f = h.get<float>(108);
  const auto offset = static_cast<std::size_t>(std::max(352.0f, vox_offset_f));
  const float slope = h.get<float>(112);
  const float inter = h.get<float>(116);

  const auto n = static_cast<std::size_t>(voxel_count(dims));
  if (bytes.size() < offset + n * elem) {
    throw CorruptContainer(path.string() + ": payload truncated, need " + std::to_string(n * elem) +
                           " bytes at offset " + std::to_string(offset));
  }

  Volume v(dims);
  v.voxel_mm = mm;
  const HeaderView payload(bytes, swap);
  const bool rescale = slope != 0.0f && std::isfinite(slope);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t at = offset + i * elem;
    double value = 0.0;
    switch (datatype) {
      case kUint8: value = bytes[at]; break;
      case kInt16: value = payload.get<std::int16_t>(at); break;
      default: value = payload.get<float>(at); break;
    }
    if (rescale) value = value * slope + inter;
    v.data[i] = static_cast<float>(value);
  }
  return v;
}

}  // namespace voxseg
