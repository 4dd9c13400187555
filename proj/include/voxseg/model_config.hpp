#pragma once

#include <string>
#include <vector>

#include "json.hpp"
#include "voxseg/tensor.hpp"

namespace voxseg {

enum class LayerKind { conv, sca_voxres };

// One trunk entry. A conv is a single 3x3x3 conv -> BN -> ReLU layer; an
// sca_voxres block holds two 3x3x3 convs and counts as two layers.
struct LayerSpec {
  LayerKind kind = LayerKind::conv;
  Index channels = 0;
  int stride = 1;
};

// A trunk feature map taken after layer `after_layer` (1-based layer
// numbering, blocks counting two) and brought back to input resolution by
// `deconvs` stride-2 transposed convs, each followed by BN/ReLU.
struct TapSpec {
  int after_layer = 0;
  int deconvs = 0;
  Index channels = 0;
};

struct ModelConfig {
  std::string name = "custom";
  Index in_channels = 2;
  std::vector<LayerSpec> trunk;
  std::vector<TapSpec> taps;
  Index num_classes = 2;
  Index reduction = 8;           // channel-attention bottleneck ratio
  double omega_init = 0.0;
  Index attention_limit = 4096;  // largest N = D*H*W for spatial attention
  int paths = 1;                 // 2 for the two-modality fusion variant

  /// Full-width network used in the paper (P = 80).
  static ModelConfig paper();
  /// Same layout with every width divided by 8; desk-scale training.
  static ModelConfig toy();
  static ModelConfig preset(const std::string& name);

  Index tap_channels() const;
  /// Channels entering the head: tap_channels() per path.
  Index feature_channels() const { return tap_channels() * paths; }
  /// Required divisor of the patch size (2^number of stride-2 convs).
  Index patch_multiple() const;
};

struct ConfigReport {
  int trunk_conv_layers = 0;
  int deconv_layers = 0;
  int head_layers = 1;
  int total_layers = 0;  // trunk + deconv + head
  int sca_blocks = 0;
  int stride2_convs = 0;
  Index tap_channels = 0;
  std::vector<int> tap_layers;
};

ConfigReport describe(const ModelConfig& cfg);

/// Structural checks; throws ConfigError naming the first violation.
void validate(const ModelConfig& cfg);
/// validate() plus the published counts: 25 layers, 6 blocks, 3 stride-2
/// convs and 224 tap channels.
void validate_paper_layout(const ModelConfig& cfg);

nlohmann::json to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const nlohmann::json& j);

}  // namespace voxseg
