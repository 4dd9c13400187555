#pragma once

#include <span>

#include "voxseg/tensor.hpp"

namespace voxseg {

struct LossConfig {
  double alpha = 0.7;  // weight of false negatives
  double beta = 0.3;   // weight of false positives
  double gamma = 4.0 / 3.0;
  double epsilon = 1e-6;

  void validate() const;
};

// Both losses take class probabilities p and one-hot targets g shaped
// [2, ...] (channel 1 = lesion) and sum over the two classes. Given several
// tensors, the sums TP, FN and FP run over all of them, so a mini-batch is
// scored as one region.
//
//   TI_c = (TP_c + eps) / (TP_c + alpha FN_c + beta FP_c + eps)
//   tversky = sum_c (1 - TI_c),   focal = sum_c (1 - TI_c)^gamma
//
// Gradients flow to p only.
template <typename T>
Tensor<T> tversky_loss(std::span<const Tensor<T>> p, std::span<const Tensor<T>> g, const LossConfig& cfg);
template <typename T>
Tensor<T> focal_tversky_loss(std::span<const Tensor<T>> p, std::span<const Tensor<T>> g, const LossConfig& cfg);

template <typename T>
Tensor<T> tversky_loss(const Tensor<T>& p, const Tensor<T>& g, const LossConfig& cfg) {
  return tversky_loss<T>(std::span<const Tensor<T>>(&p, 1), std::span<const Tensor<T>>(&g, 1), cfg);
}
template <typename T>
Tensor<T> focal_tversky_loss(const Tensor<T>& p, const Tensor<T>& g, const LossConfig& cfg) {
  return focal_tversky_loss<T>(std::span<const Tensor<T>>(&p, 1), std::span<const Tensor<T>>(&g, 1), cfg);
}

/// Tversky index of class `cls` (no gradient).
template <typename T>
double tversky_index(const Tensor<T>& p, const Tensor<T>& g, int cls, const LossConfig& cfg);

/// One-hot [2, ...] target from a binary label array.
template <typename T>
Tensor<T> one_hot(std::span<const std::uint8_t> label, const Shape& spatial);

}  // namespace voxseg
