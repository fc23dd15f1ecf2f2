#include "fuseret/mixup.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace fuseret {

namespace {

// log of a Gamma(shape, 1) variate. For shape < 1 uses
// Gamma(shape) = Gamma(shape + 1) * U^(1/shape).
double log_gamma_variate(double shape, Rng& rng) {
  if (shape >= 1.0) {
    std::gamma_distribution<double> g(shape, 1.0);
    return std::log(g(rng));
  }
  std::gamma_distribution<double> g(shape + 1.0, 1.0);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  double uniform = u(rng);
  while (uniform <= 0.0) uniform = u(rng);
  return std::log(g(rng)) + std::log(uniform) / shape;
}

void check_lambda(double lambda) {
  if (!(lambda >= 0.0 && lambda <= 1.0)) {
    throw std::invalid_argument("mixup lambda must lie in [0,1], got " + std::to_string(lambda));
  }
}

}  // namespace

void MixupConfig::validate() const {
  if (!(alpha > 0.0) || !std::isfinite(alpha)) {
    throw std::invalid_argument("mixup alpha must be positive, got " + std::to_string(alpha));
  }
  if (fixed_lambda) check_lambda(*fixed_lambda);
}

double sample_lambda(const MixupConfig& cfg, Rng& rng) {
  cfg.validate();
  if (cfg.fixed_lambda) return *cfg.fixed_lambda;
  const double log_x = log_gamma_variate(cfg.alpha, rng);
  const double log_y = log_gamma_variate(cfg.alpha, rng);
  // x / (x + y) = 1 / (1 + exp(log_y - log_x))
  const double lambda = 1.0 / (1.0 + std::exp(log_y - log_x));
  return std::clamp(lambda, 0.0, 1.0);
}

std::vector<Index> sample_pairing(Index n, Rng& rng) {
  std::vector<Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Index{0});
  // Fisher-Yates
  for (Index i = n - 1; i > 0; --i) {
    std::uniform_int_distribution<Index> pick(0, i);
    std::swap(order[static_cast<std::size_t>(i)], order[static_cast<std::size_t>(pick(rng))]);
  }
  return order;
}

bool is_permutation_of_range(std::span<const Index> pair) {
  std::vector<bool> seen(pair.size(), false);
  for (Index k : pair) {
    if (k < 0 || k >= static_cast<Index>(pair.size()) || seen[static_cast<std::size_t>(k)]) {
      return false;
    }
    seen[static_cast<std::size_t>(k)] = true;
  }
  return true;
}

template <typename Scalar>
MixedBatch<Scalar> mix_features(const Tensor<Scalar>& z, const Tensor<Scalar>& labels,
                                double lambda, std::vector<Index> pair_index) {
  check_lambda(lambda);
  if (z.ndim() != 2 || labels.ndim() != 2 || labels.dim(0) != z.dim(0)) {
    throw DimensionError("mix_features: features " + shape_str(z.shape()) + " vs labels " +
                         shape_str(labels.shape()));
  }
  if (static_cast<Index>(pair_index.size()) != z.dim(0) || !is_permutation_of_range(pair_index)) {
    throw std::invalid_argument("mix_features: pair_index is not a permutation of the batch");
  }
  const Index n = labels.dim(0);
  const Index c = labels.dim(1);
  Tensor<Scalar> gathered({n, c});
  for (Index k = 0; k < n; ++k) {
    const Index j = pair_index[static_cast<std::size_t>(k)];
    std::copy_n(labels.data().data() + j * c, c, gathered.data().data() + k * c);
  }
  MixedBatch<Scalar> out;
  out.lambda = lambda;
  out.mixed = mix_rows(z, pair_index, lambda);
  out.pair_index = std::move(pair_index);
  out.labels_i = labels;
  out.labels_j = gathered;
  return out;
}

template <typename Scalar>
Tensor<Scalar> mixed_loss(const Tensor<Scalar>& logits, const Tensor<Scalar>& labels_i,
                          const Tensor<Scalar>& labels_j, double lambda) {
  check_lambda(lambda);
  auto loss_i = softmax_cross_entropy(logits, labels_i);
  auto loss_j = softmax_cross_entropy(logits, labels_j);
  const auto lam = static_cast<Scalar>(lambda);
  return add(scale(loss_i, lam), scale(loss_j, Scalar(1) - lam));
}

template <typename Scalar>
Tensor<Scalar> mixed_label_loss(const Tensor<Scalar>& logits, const Tensor<Scalar>& labels_i,
                                const Tensor<Scalar>& labels_j, double lambda) {
  check_lambda(lambda);
  if (labels_i.shape() != labels_j.shape()) {
    throw DimensionError("mixed_label_loss: label shapes differ");
  }
  Tensor<Scalar> target(labels_i.shape());
  const auto lam = static_cast<Scalar>(lambda);
  for (Index k = 0; k < target.numel(); ++k) {
    target[k] = lam * labels_i[k] + (Scalar(1) - lam) * labels_j[k];
  }
  return softmax_cross_entropy(logits, target);
}

template <typename Scalar>
Tensor<Scalar> one_hot(std::span<const int> grades, int num_classes) {
  const auto n = static_cast<Index>(grades.size());
  Tensor<Scalar> out({n, num_classes}, Scalar(0));
  for (Index i = 0; i < n; ++i) {
    const int g = grades[static_cast<std::size_t>(i)];
    if (g < 0 || g >= num_classes) {
      throw std::invalid_argument("one_hot: class " + std::to_string(g) + " out of range");
    }
    out.at({i, g}) = Scalar(1);
  }
  return out;
}

#define FUSERET_INSTANTIATE_MIXUP(S)                                                          \
  template MixedBatch<S> mix_features(const Tensor<S>&, const Tensor<S>&, double,             \
                                      std::vector<Index>);                                    \
  template Tensor<S> mixed_loss(const Tensor<S>&, const Tensor<S>&, const Tensor<S>&, double); \
  template Tensor<S> mixed_label_loss(const Tensor<S>&, const Tensor<S>&, const Tensor<S>&,   \
                                      double);                                                \
  template Tensor<S> one_hot(std::span<const int>, int);

FUSERET_INSTANTIATE_MIXUP(float)
FUSERET_INSTANTIATE_MIXUP(double)

#undef FUSERET_INSTANTIATE_MIXUP

}  // namespace fuseret
