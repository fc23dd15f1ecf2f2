#pragma once

#include <span>
#include <string>
#include <vector>

#include "fuseret/tensor.hpp"

namespace fuseret {

// Differentiable primitives. Every op validates shapes, fails fast on
// non-finite output, and records a backward node when an input needs grad.
// Templates are instantiated for float and double.

template <typename Scalar>
Tensor<Scalar> add(const Tensor<Scalar>& a, const Tensor<Scalar>& b);

template <typename Scalar>
Tensor<Scalar> mul(const Tensor<Scalar>& a, const Tensor<Scalar>& b);

template <typename Scalar>
Tensor<Scalar> scale(const Tensor<Scalar>& a, Scalar factor);

template <typename Scalar>
Tensor<Scalar> sum(const Tensor<Scalar>& a);

template <typename Scalar>
Tensor<Scalar> relu(const Tensor<Scalar>& a);

template <typename Scalar>
Tensor<Scalar> sigmoid(const Tensor<Scalar>& a);

/// 2D convolution, input [N,C,H,W], weight [K,C,kh,kw], optional bias [K].
/// Output extent per axis: floor((in + 2*padding - kernel) / stride) + 1.
template <typename Scalar>
Tensor<Scalar> conv2d(const Tensor<Scalar>& input, const Tensor<Scalar>& weight,
                      const Tensor<Scalar>& bias, int stride, int padding);

/// 3D convolution, input [N,C,D,H,W], weight [K,C,kd,kh,kw], optional bias [K].
template <typename Scalar>
Tensor<Scalar> conv3d(const Tensor<Scalar>& input, const Tensor<Scalar>& weight,
                      const Tensor<Scalar>& bias, int stride, int padding);

/// Dispatches to conv2d or conv3d by input rank.
template <typename Scalar>
Tensor<Scalar> conv(const Tensor<Scalar>& input, const Tensor<Scalar>& weight,
                    const Tensor<Scalar>& bias, int stride, int padding);

enum class NormMode { train, eval };

template <typename Scalar>
struct BatchNormStats {
  Tensor<Scalar> running_mean;
  Tensor<Scalar> running_var;

  explicit BatchNormStats(Index channels = 0)
      : running_mean(Tensor<Scalar>::zeros({channels})),
        running_var(Tensor<Scalar>::ones({channels})) {}
};

inline constexpr double kBatchNormEps = 1e-5;
inline constexpr double kBatchNormMomentum = 0.1;

/// Per-channel normalization over the batch and spatial axes (channel axis 1).
/// Train mode uses batch statistics and updates `stats` (unbiased variance
/// for the running estimate); eval mode reads `stats` only.
template <typename Scalar>
Tensor<Scalar> batch_norm(const Tensor<Scalar>& input, const Tensor<Scalar>& gamma,
                          const Tensor<Scalar>& beta, BatchNormStats<Scalar>& stats, NormMode mode,
                          double eps = kBatchNormEps, double momentum = kBatchNormMomentum);

/// Mean over every axis after the channel axis: [N,C,...] -> [N,C].
template <typename Scalar>
Tensor<Scalar> global_avg_pool(const Tensor<Scalar>& input);

/// input [N,F] times weight[G,F] transposed, plus optional bias [G].
template <typename Scalar>
Tensor<Scalar> linear(const Tensor<Scalar>& input, const Tensor<Scalar>& weight,
                      const Tensor<Scalar>& bias);

/// Scales features [N,C,...] by per-sample channel gates [N,C].
template <typename Scalar>
Tensor<Scalar> channel_scale(const Tensor<Scalar>& features, const Tensor<Scalar>& gates);

/// Column concatenation of [N,F1] and [N,F2] into [N,F1+F2].
template <typename Scalar>
Tensor<Scalar> concat_features(const Tensor<Scalar>& left, const Tensor<Scalar>& right);

/// Row k of the result is weight*z[k] + (1-weight)*z[pair[k]].
template <typename Scalar>
Tensor<Scalar> mix_rows(const Tensor<Scalar>& z, std::span<const Index> pair, double weight);

/// Mean over rows of -sum_c target[c] * log_softmax(logits)[c]. Each target
/// row must sum to 1 within 1e-6.
template <typename Scalar>
Tensor<Scalar> softmax_cross_entropy(const Tensor<Scalar>& logits, const Tensor<Scalar>& target);

/// Row-wise softmax without graph recording.
template <typename Scalar>
Tensor<Scalar> softmax(const Tensor<Scalar>& logits);

/// Test hook: backward passes through ops named `op` are scaled by 1.25.
/// An empty string disables it; names outside recorded_ops() throw.
void set_gradient_corruption(std::string op);
const std::vector<std::string>& recorded_ops();
const std::string& gradient_corruption_target();

}  // namespace fuseret
