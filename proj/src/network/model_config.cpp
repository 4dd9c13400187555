#include "voxseg/model_config.hpp"

#include "voxseg/errors.hpp"

namespace voxseg {

using nlohmann::json;

namespace {

ModelConfig canonical(Index div) {
  ModelConfig c;
  const Index a = 32 / div, b = 64 / div;
  c.trunk = {
      {LayerKind::conv, a, 1},       {LayerKind::conv, a, 1},       {LayerKind::conv, b, 2},
      {LayerKind::sca_voxres, b, 1}, {LayerKind::sca_voxres, b, 1}, {LayerKind::conv, b, 2},
      {LayerKind::sca_voxres, b, 1}, {LayerKind::sca_voxres, b, 1}, {LayerKind::conv, b, 2},
      {LayerKind::sca_voxres, b, 1}, {LayerKind::sca_voxres, b, 1},
  };
  c.taps = {{3, 1, a}, {5, 1, b}, {12, 2, b}, {17, 3, b}};
  return c;
}

}  // namespace

ModelConfig ModelConfig::paper() {
  ModelConfig c = canonical(1);
  c.name = "paper";
  c.reduction = 8;
  return c;
}

ModelConfig ModelConfig::toy() {
  ModelConfig c = canonical(8);
  c.name = "toy";
  c.reduction = 4;
  return c;
}

ModelConfig ModelConfig::preset(const std::string& name) {
  if (name == "paper") return paper();
  if (name == "toy") return toy();
  throw ConfigError("unknown model preset '" + name + "' (expected paper or toy)");
}

Index ModelConfig::tap_channels() const {
  Index s = 0;
  for (const auto& t : taps) s += t.channels;
  return s;
}

Index ModelConfig::patch_multiple() const {
  Index m = 1;
  for (const auto& l : trunk) {
    if (l.stride == 2) m *= 2;
  }
  return m;
}

ConfigReport describe(const ModelConfig& cfg) {
  ConfigReport r;
  for (const auto& l : cfg.trunk) {
    if (l.kind == LayerKind::sca_voxres) {
      r.trunk_conv_layers += 2;
      ++r.sca_blocks;
    } else {
      r.trunk_conv_layers += 1;
      if (l.stride == 2) ++r.stride2_convs;
    }
  }
  for (const auto& t : cfg.taps) {
    r.deconv_layers += t.deconvs;
    r.tap_layers.push_back(t.after_layer);
  }
  r.deconv_layers *= cfg.paths;
  r.trunk_conv_layers *= cfg.paths;
  r.tap_channels = cfg.tap_channels();
  r.total_layers = r.trunk_conv_layers + r.deconv_layers + r.head_layers;
  return r;
}

void validate(const ModelConfig& cfg) {
  auto fail = [&](const std::string& msg) { throw ConfigError("model config '" + cfg.name + "': " + msg); };
  if (cfg.in_channels < 1) fail("in_channels must be positive");
  if (cfg.num_classes != 2) fail("the segmentation head has exactly 2 classes");
  if (cfg.paths != 1 && cfg.paths != 2) fail("paths must be 1 or 2");
  if (cfg.trunk.empty()) fail("empty trunk");
  if (cfg.taps.empty()) fail("no taps");
  if (cfg.reduction < 1) fail("reduction must be positive");
  if (cfg.attention_limit < 1) fail("attention_limit must be positive");

  // Walk the trunk recording the channel count and downsampling level at
  // every layer boundary.
  std::vector<Index> channels_at{cfg.in_channels};
  std::vector<int> level_at{0};
  Index channels = cfg.in_channels;
  int level = 0;
  std::vector<bool> boundary{true};
  for (std::size_t i = 0; i < cfg.trunk.size(); ++i) {
    const auto& l = cfg.trunk[i];
    const std::string where = "trunk entry " + std::to_string(i);
    if (l.channels < 1) fail(where + ": channels must be positive");
    if (l.stride != 1 && l.stride != 2) fail(where + ": stride must be 1 or 2");
    if (l.kind == LayerKind::sca_voxres) {
      if (l.stride != 1) fail(where + ": sca_voxres blocks have stride 1");
      if (l.channels != channels) fail(where + ": sca_voxres must keep the channel count");
      if (l.channels % cfg.reduction != 0) {
        fail(where + ": channels " + std::to_string(l.channels) + " not divisible by reduction " +
             std::to_string(cfg.reduction));
      }
      channels_at.push_back(channels);
      level_at.push_back(level);
      boundary.push_back(false);
    }
    channels = l.channels;
    if (l.stride == 2) ++level;
    channels_at.push_back(channels);
    level_at.push_back(level);
    boundary.push_back(true);
  }
  const int n_layers = static_cast<int>(channels_at.size()) - 1;
  for (std::size_t t = 0; t < cfg.taps.size(); ++t) {
    const auto& tap = cfg.taps[t];
    const std::string where = "tap " + std::to_string(t);
    if (tap.after_layer < 1 || tap.after_layer > n_layers) fail(where + ": layer index out of range");
    if (!boundary[static_cast<std::size_t>(tap.after_layer)]) fail(where + ": taps must sit on a block boundary");
    if (tap.channels < 1) fail(where + ": channels must be positive");
    const int lv = level_at[static_cast<std::size_t>(tap.after_layer)];
    if (tap.deconvs != lv) {
      fail(where + " after layer " + std::to_string(tap.after_layer) + " is at 1/" + std::to_string(1 << lv) +
           " resolution but has " + std::to_string(tap.deconvs) + " stride-2 deconvs; it must return to input resolution");
    }
  }
}

void validate_paper_layout(const ModelConfig& cfg) {
  validate(cfg);
  const ConfigReport r = describe(cfg);
  auto expect = [&](const char* what, long got, long want) {
    if (got != want) {
      throw ConfigError("model config '" + cfg.name + "': " + what + " is " + std::to_string(got) + ", expected " +
                        std::to_string(want));
    }
  };
  expect("conv/deconv layer count", r.total_layers, 25);
  expect("SCA-VoxRes module count", r.sca_blocks, 6);
  expect("stride-2 conv count", r.stride2_convs, 3);
  expect("tap channel sum", static_cast<long>(r.tap_channels), 224);
}

json to_json(const ModelConfig& cfg) {
  json trunk = json::array();
  for (const auto& l : cfg.trunk) {
    trunk.push_back({{"kind", l.kind == LayerKind::conv ? "conv" : "sca_voxres"},
                     {"channels", l.channels},
                     {"stride", l.stride}});
  }
  json taps = json::array();
  for (const auto& t : cfg.taps) {
    taps.push_back({{"after_layer", t.after_layer}, {"deconvs", t.deconvs}, {"channels", t.channels}});
  }
  return {{"name", cfg.name},
          {"in_channels", cfg.in_channels},
          {"trunk", trunk},
          {"taps", taps},
          {"num_classes", cfg.num_classes},
          {"reduction", cfg.reduction},
          {"omega_init", cfg.omega_init},
          {"attention_limit", cfg.attention_limit},
          {"paths", cfg.paths}};
}

ModelConfig model_config_from_json(const json& j) {
  try {
    ModelConfig c;
    c.name = j.at("name").get<std::string>();
    c.in_channels = j.at("in_channels").get<Index>();
    for (const auto& l : j.at("trunk")) {
      const auto kind = l.at("kind").get<std::string>();
      if (kind != "conv" && kind != "sca_voxres") throw ConfigError("unknown layer kind '" + kind + "'");
      c.trunk.push_back({kind == "conv" ? LayerKind::conv : LayerKind::sca_voxres, l.at("channels").get<Index>(),
                         l.at("stride").get<int>()});
    }
    for (const auto& t : j.at("taps")) {
      c.taps.push_back({t.at("after_layer").get<int>(), t.at("deconvs").get<int>(), t.at("channels").get<Index>()});
    }
    c.num_classes = j.at("num_classes").get<Index>();
    c.reduction = j.at("reduction").get<Index>();
    c.omega_init = j.at("omega_init").get<double>();
    c.attention_limit = j.at("attention_limit").get<Index>();
    c.paths = j.at("paths").get<int>();
    validate(c);
    return c;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed model config: ") + e.what());
  }
}

}  // namespace voxseg
