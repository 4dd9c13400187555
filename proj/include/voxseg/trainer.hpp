#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "voxseg/losses.hpp"
#include "voxseg/network.hpp"
#include "voxseg/patches.hpp"

namespace voxseg {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Adam with bias correction over the trainable entries of a ParamSet.
// Tensors without a gradient buffer count as zero gradients.
template <typename T>
class Adam {
 public:
  Adam(const ParamSet<T>& params, AdamConfig cfg = {});

  /// Throws TrainingDiverged naming the first parameter with a non-finite
  /// gradient; nothing is updated in that case.
  void step(double lr);
  Index steps() const { return t_; }

 private:
  struct Slot {
    std::string name;
    Tensor<T> param;
    std::vector<double> m, v;
  };
  AdamConfig cfg_;
  std::vector<Slot> slots_;
  Index t_ = 0;
};

struct TrainConfig {
  int epochs = 30;
  double lr0 = 1e-4;
  double decay = 0.97;
  int batch_size = 4;
  std::uint64_t seed = 0;
  AdamConfig adam;
  /// Base path of the best-validation checkpoint; empty disables saving.
  std::filesystem::path checkpoint;

  void validate() const;
};

double lr_at_epoch(const TrainConfig& cfg, int epoch);

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0;
  double val_loss = 0;
  double lr = 0;
};

struct TrainState {
  std::vector<EpochRecord> history;
  int best_epoch = -1;
  double best_val_loss = 0;
  Index steps = 0;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

// Per epoch: seeded shuffle, mini-batches scored by the batch-level focal
// Tversky loss, one Adam step per batch, then the validation loss in eval
// mode. A strictly better validation loss saves a checkpoint. On return
// the model holds the best parameters (the initial ones when epochs = 0).
// A non-finite loss or gradient restores the best parameters and throws
// TrainingDiverged.
TrainState train(Model<float>& model, const std::vector<Patch>& train_set, const std::vector<Patch>& val_set,
                 const TrainConfig& cfg, const LossConfig& loss_cfg, const EpochCallback& on_epoch = {});

/// Mean batch loss over `patches` in order, eval mode, no gradients.
double evaluate_loss(const Model<float>& model, const std::vector<Patch>& patches, int batch_size,
                     const LossConfig& loss_cfg);

void write_history_csv(const TrainState& state, const std::filesystem::path& path);
std::vector<EpochRecord> read_history_csv(const std::filesystem::path& path);

/// Lesion probability per voxel from non-overlapping P^3 tiles.
Volume predict_probabilities(const Model<float>& model, const std::vector<MultiChannelVolume>& inputs, Index patch_size);
/// predict_probabilities thresholded strictly above 0.5.
LabelVolume predict_volume(const Model<float>& model, const std::vector<MultiChannelVolume>& inputs, Index patch_size);
LabelVolume predict_volume(const Model<float>& model, const MultiChannelVolume& input, Index patch_size);

/// Voxelwise logical or of two rater masks.
LabelVolume mask_union(const LabelVolume& a, const LabelVolume& b);

}  // namespace voxseg
