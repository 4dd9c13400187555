#pragma once

#include <map>
#include <string>
#include <vector>

#include "voxseg/model_config.hpp"
#include "voxseg/ops.hpp"
#include "voxseg/random.hpp"

namespace voxseg {

// Ordered, named parameter storage. Batch-norm running statistics live here
// too (non-trainable) so that checkpoints capture the complete model state.
template <typename T>
class ParamSet {
 public:
  struct Entry {
    std::string name;
    Tensor<T> tensor;
    bool trainable = true;
  };

  Tensor<T> add(const std::string& name, Tensor<T> tensor, bool trainable = true);
  Tensor<T> at(const std::string& name) const;
  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  const std::vector<Entry>& entries() const { return entries_; }
  std::vector<Entry> trainable() const;
  Index trainable_count() const;

  void zero_grad() const;
  /// Deep copy with identical names and flags.
  ParamSet clone() const;
  /// Copies every value from `other`, which must have the same layout.
  void assign(const ParamSet& other);

 private:
  std::vector<Entry> entries_;
  std::map<std::string, std::size_t> index_;
};

// Parameter initialisation: kernels and biases uniform in +-1/sqrt(fan_in),
// BN gamma = 1 and beta = 0.
template <typename T>
struct ParamInit {
  Rng& rng;
  ParamSet<T>& params;

  void conv(const std::string& name, Index c_out, Index c_in, Index k, bool bias = true);
  void deconv(const std::string& name, Index c_in, Index c_out, Index k);
  void batch_norm(const std::string& name, Index channels);
  void linear(const std::string& name, Index out, Index in);
  void scalar(const std::string& name, T value);
};

/// Read-only view of the batch-norm entries of `name` in `params`.
template <typename T>
BatchNormState<T> bn_state(const ParamSet<T>& params, const std::string& name);

template <typename T>
Tensor<T> bn_apply(const ParamSet<T>& params, const std::string& name, const Tensor<T>& x, BnMode mode);

// X = sigmoid(FC2(relu(FC1(gap(F))))); output[c] = X[c] * F[c].
// Parameters: <name>.fc1.{w,b}, <name>.fc2.{w,b}.
template <typename T>
void init_channel_attention(ParamInit<T>& init, const std::string& name, Index channels, Index reduction);
template <typename T>
Tensor<T> channel_attention(const Tensor<T>& f, const ParamSet<T>& params, const std::string& name);

// A, B, Cmap are 1x1x1 projections of F viewed as [C, N]. E = softmax over
// i of S[i][j] = B_i . A_j, O_j = omega * sum_i E[i][j] Cmap_i + F_j.
// Parameters: <name>.{a,b,c}.{w,b}, <name>.omega.
template <typename T>
void init_spatial_attention(ParamInit<T>& init, const std::string& name, Index channels, double omega);

template <typename T>
Tensor<T> spatial_attention(const Tensor<T>& f, const ParamSet<T>& params, const std::string& name, Index limit,
                            Tensor<T>* energy = nullptr);

// y = x + SCA(conv_b(BN/ReLU(conv_a(BN/ReLU(x))))), SCA = spatial(channel(.)).
template <typename T>
void init_sca_voxres(ParamInit<T>& init, const std::string& name, Index channels, Index reduction, double omega);
template <typename T>
Tensor<T> sca_voxres(const Tensor<T>& x, const ParamSet<T>& params, const std::string& name, BnMode mode,
                     Index limit);

// Segmentation network: one base model per path (taps concatenated to
// tap_channels() features), then a 1x1x1 conv head and a softmax over the
// class axis. Inputs are [in_channels, P, P, P], one per path.
template <typename T>
class Model {
 public:
  Model(ModelConfig cfg, std::uint64_t seed);
  Model(ModelConfig cfg, ParamSet<T> params);

  const ModelConfig& config() const { return cfg_; }
  ParamSet<T>& params() { return params_; }
  const ParamSet<T>& params() const { return params_; }

  /// Concatenated tap features of one path, [tap_channels, P, P, P].
  Tensor<T> features(const Tensor<T>& x, BnMode mode, int path = 0) const;
  /// Class probabilities [2, P, P, P]; channel 1 is the lesion class.
  Tensor<T> forward(const std::vector<Tensor<T>>& inputs, BnMode mode) const;
  Tensor<T> forward(const Tensor<T>& x, BnMode mode) const { return forward(std::vector<Tensor<T>>{x}, mode); }

  void check_input(const Tensor<T>& x) const;

 private:
  ModelConfig cfg_;
  ParamSet<T> params_;
};

/// Head alone: 1x1x1 conv `head.{w,b}` then softmax over classes.
template <typename T>
Tensor<T> segmentation_head(const Tensor<T>& features, const ParamSet<T>& params);

/// Trainable parameter count implied by a config (excludes BN statistics).
Index parameter_count(const ModelConfig& cfg);

extern template class ParamSet<float>;
extern template class ParamSet<double>;
extern template class Model<float>;
extern template class Model<double>;

}  // namespace voxseg
