#pragma once

#include <cstdint>
#include <vector>

#include "voxseg/tensor.hpp"

namespace voxseg {

// Forward operations over Tensor<T>. Every function records a backward rule
// on the active tape when one of its inputs requires gradients. Volumes use
// the [C, D, H, W] layout; convolution is correlation with zero padding.

/// Output extent of a strided convolution along one axis.
Index conv_out_extent(Index in, Index kernel, Index stride, Index pad);
/// Output extent of a transposed convolution along one axis.
Index deconv_out_extent(Index in, Index kernel, Index stride, Index pad, Index output_pad = 0);

/// kernel [C_out, C_in, k, k, k]; bias [C_out] or undefined.
template <typename T>
Tensor<T> conv3d(const Tensor<T>& input, const Tensor<T>& kernel, const Tensor<T>& bias,
                 int stride, int pad);

/// Adjoint of conv3d: kernel [C_in, C_out, k, k, k] shares the conv3d layout.
template <typename T>
Tensor<T> conv_transpose3d(const Tensor<T>& input, const Tensor<T>& kernel, int stride, int pad,
                           int output_pad = 0);

enum class BnMode { train, eval };

// Running statistics of one batch-norm layer. `tracked` counts train-mode
// calls and is stored as a tensor so checkpoints carry it.
template <typename T>
struct BatchNormState {
  Tensor<T> running_mean;
  Tensor<T> running_var;
  Tensor<T> tracked;

  static BatchNormState fresh(Index channels);
  bool initialized() const { return tracked.defined() && tracked.item() > T(0); }
};

/// Per-channel normalization over spatial positions of a [C, ...] tensor.
template <typename T>
Tensor<T> batch_norm(const Tensor<T>& input, const Tensor<T>& gamma, const Tensor<T>& beta,
                     BatchNormState<T>& state, BnMode mode, double eps = 1e-5,
                     double momentum = 0.1);

template <typename T>
Tensor<T> relu(const Tensor<T>& x);
template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x);
template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
/// x * c for a constant c.
template <typename T>
Tensor<T> scale(const Tensor<T>& x, T c);
/// x * s for a learnable single-element tensor s.
template <typename T>
Tensor<T> scale_by(const Tensor<T>& x, const Tensor<T>& s);
/// out[c, ...] = x[c, ...] * s[c].
template <typename T>
Tensor<T> scale_channels(const Tensor<T>& x, const Tensor<T>& s);

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);
/// Transpose of a rank-2 tensor.
template <typename T>
Tensor<T> transpose(const Tensor<T>& a);
/// Max-shifted softmax along `axis`.
template <typename T>
Tensor<T> softmax(const Tensor<T>& x, int axis);

/// [C, ...] -> [C], mean over all non-channel positions.
template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& x);
template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape);
/// Concatenation along axis 0; remaining extents must agree.
template <typename T>
Tensor<T> concat_channels(const std::vector<Tensor<T>>& parts);
/// weight [out, in] * x [in] + bias [out].
template <typename T>
Tensor<T> fully_connected(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias);
/// Sum of all elements, shape [1].
template <typename T>
Tensor<T> sum(const Tensor<T>& x);

// Hashes the sign pattern of every relu input evaluated on this thread while
// alive. Finite-difference checks compare signatures to skip coordinates
// whose perturbation crosses a relu kink.
class ReluSignRecorder {
 public:
  ReluSignRecorder();
  ~ReluSignRecorder();
  ReluSignRecorder(const ReluSignRecorder&) = delete;
  ReluSignRecorder& operator=(const ReluSignRecorder&) = delete;

  std::uint64_t signature() const { return hash_; }
  void mix(std::uint64_t word);
  static ReluSignRecorder* active();

 private:
  std::uint64_t hash_ = 1469598103934665603ULL;
  ReluSignRecorder* previous_ = nullptr;
};

}  // namespace voxseg
