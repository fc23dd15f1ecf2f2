#pragma once

#include <optional>
#include <vector>

#include "fuseret/ops.hpp"
#include "fuseret/random.hpp"

namespace fuseret {

inline constexpr double kDefaultMixupAlpha = 0.2;

/// Manifold mixup at the fusion layer. One lambda per batch, drawn from
/// Beta(alpha, alpha); rows are paired by a uniform in-batch shuffle
/// (self-pairs allowed).
struct MixupConfig {
  bool enabled = true;
  double alpha = kDefaultMixupAlpha;
  /// Overrides the Beta draw; used to pin degenerate cases in tests.
  std::optional<double> fixed_lambda;

  void validate() const;
};

/// Beta(alpha, alpha) draw via two gamma variates in log space, which stays
/// finite for small alpha where the variates themselves underflow.
double sample_lambda(const MixupConfig& cfg, Rng& rng);

/// Uniformly random permutation of [0, n).
std::vector<Index> sample_pairing(Index n, Rng& rng);

bool is_permutation_of_range(std::span<const Index> pair);

template <typename Scalar>
struct MixedBatch {
  double lambda = 1.0;
  std::vector<Index> pair_index;
  Tensor<Scalar> mixed;     // z' = lambda * z + (1 - lambda) * z[pair]
  Tensor<Scalar> labels_i;  // one-hot, original order
  Tensor<Scalar> labels_j;  // one-hot, rows gathered by pair_index
};

template <typename Scalar>
MixedBatch<Scalar> mix_features(const Tensor<Scalar>& z, const Tensor<Scalar>& labels,
                                double lambda, std::vector<Index> pair_index);

/// lambda * CE(logits, y_i) + (1 - lambda) * CE(logits, y_j).
template <typename Scalar>
Tensor<Scalar> mixed_loss(const Tensor<Scalar>& logits, const Tensor<Scalar>& labels_i,
                          const Tensor<Scalar>& labels_j, double lambda);

/// The label-mixing form: CE(logits, lambda * y_i + (1 - lambda) * y_j).
template <typename Scalar>
Tensor<Scalar> mixed_label_loss(const Tensor<Scalar>& logits, const Tensor<Scalar>& labels_i,
                                const Tensor<Scalar>& labels_j, double lambda);

template <typename Scalar>
Tensor<Scalar> one_hot(std::span<const int> grades, int num_classes);

}  // namespace fuseret
