#include "voxseg/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "voxseg/errors.hpp"

namespace voxseg {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

template <typename T>
constexpr const char* dtype_name() {
  return sizeof(T) == 4 ? "f32" : "f64";
}

template <typename U>
U byteswap_if_big(U v) {
  if constexpr (std::endian::native == std::endian::big) {
    U r = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) r = (r << 8) | ((v >> (8 * i)) & 0xFF);
    return r;
  }
  return v;
}

template <typename T>
void write_values(std::ostream& os, std::span<const T> values) {
  using Bits = std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>;
  std::vector<Bits> buf(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) buf[i] = byteswap_if_big(std::bit_cast<Bits>(values[i]));
  os.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size() * sizeof(Bits)));
}

template <typename S>
std::vector<S> read_values(std::istream& is, std::size_t n) {
  using Bits = std::conditional_t<sizeof(S) == 4, std::uint32_t, std::uint64_t>;
  std::vector<Bits> buf(n);
  is.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(n * sizeof(Bits)));
  std::vector<S> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = std::bit_cast<S>(byteswap_if_big(buf[i]));
  return out;
}

}  // namespace

template <typename T>
void save_checkpoint(const Model<T>& model, const fs::path& base, const json& meta) {
  if (base.has_parent_path()) fs::create_directories(base.parent_path());
  const fs::path jp = base.string() + ".json", rp = base.string() + ".raw";
  std::ofstream raw(rp, std::ios::binary);
  if (!raw) throw IoError("cannot open " + rp.string() + " for writing");
  json tensors = json::array();
  std::uint64_t offset = 0;
  for (const auto& e : model.params().entries()) {
    tensors.push_back({{"name", e.name}, {"shape", e.tensor.shape()}, {"offset", offset}, {"trainable", e.trainable}});
    write_values<T>(raw, e.tensor.data());
    offset += static_cast<std::uint64_t>(e.tensor.numel()) * sizeof(T);
  }
  raw.close();
  if (!raw) throw IoError("failed writing " + rp.string());
  json header{{"format", "voxseg-checkpoint"},
              {"version", kCheckpointVersion},
              {"dtype", dtype_name<T>()},
              {"config", to_json(model.config())},
              {"meta", meta},
              {"tensors", tensors}};
  std::ofstream js(jp);
  js << header.dump(1) << '\n';
  if (!js) throw IoError("failed writing " + jp.string());
}

template <typename T>
Model<T> load_checkpoint(const fs::path& base, json* meta) {
  const fs::path jp = base.string() + ".json", rp = base.string() + ".raw";
  std::ifstream js(jp);
  if (!js) throw IoError("cannot open checkpoint " + jp.string());
  json header;
  try {
    header = json::parse(js);
  } catch (const json::exception& e) {
    throw CorruptContainer("corrupt container " + jp.string() + ": " + e.what());
  }
  if (header.value("format", "") != "voxseg-checkpoint") throw UnsupportedFormat(jp.string() + " is not a checkpoint");
  if (header.value("version", 0) != kCheckpointVersion) {
    throw UnsupportedFormat(jp.string() + ": unsupported checkpoint version " + header.value("version", json()).dump());
  }
  const std::string dtype = header.value("dtype", "");
  if (dtype != "f32" && dtype != "f64") throw UnsupportedFormat(jp.string() + ": unsupported dtype '" + dtype + "'");
  const std::size_t width = dtype == "f32" ? 4 : 8;
  ModelConfig cfg = model_config_from_json(header.at("config"));

  std::ifstream raw(rp, std::ios::binary);
  if (!raw) throw IoError("cannot open checkpoint payload " + rp.string());
  const auto raw_size = fs::file_size(rp);
  ParamSet<T> params;
  std::uint64_t expected = 0;
  for (const auto& t : header.at("tensors")) {
    const Shape shape = t.at("shape").get<Shape>();
    const auto n = static_cast<std::size_t>(shape_numel(shape));
    if (t.at("offset").get<std::uint64_t>() != expected || expected + n * width > raw_size) {
      throw CorruptContainer("corrupt container " + rp.string() + ": tensor '" + t.at("name").get<std::string>() +
                             "' out of range");
    }
    std::vector<T> values(n);
    if (width == 4) {
      auto v = read_values<float>(raw, n);
      std::copy(v.begin(), v.end(), values.begin());
    } else {
      auto v = read_values<double>(raw, n);
      std::transform(v.begin(), v.end(), values.begin(), [](double x) { return static_cast<T>(x); });
    }
    params.add(t.at("name").get<std::string>(), Tensor<T>(shape, std::move(values)), t.at("trainable").get<bool>());
    expected += n * width;
  }
  if (expected != raw_size) throw CorruptContainer("corrupt container " + rp.string() + ": size mismatch");
  if (meta) *meta = header.value("meta", json::object());
  return Model<T>(std::move(cfg), std::move(params));
}

template void save_checkpoint(const Model<float>&, const fs::path&, const json&);
template void save_checkpoint(const Model<double>&, const fs::path&, const json&);
template Model<float> load_checkpoint(const fs::path&, json*);
template Model<double> load_checkpoint(const fs::path&, json*);

}  // namespace voxseg
