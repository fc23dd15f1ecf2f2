#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "fuseret/ops.hpp"

namespace fuseret {

namespace {

std::string g_corrupt_op;

template <typename Scalar>
void require_same_shape(std::string_view op, const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
}

template <typename Scalar>
void require_rank(std::string_view op, const Tensor<Scalar>& t, int rank, std::string_view what) {
  if (t.ndim() != rank) {
    throw DimensionError(std::string(op) + ": " + std::string(what) + " must have rank " +
                         std::to_string(rank) + ", got " + shape_str(t.shape()));
  }
}

}  // namespace

const std::vector<std::string>& recorded_ops() {
  static const std::vector<std::string> names{
      "add",         "mul",         "scale",           "sum",       "relu",
      "sigmoid",     "conv2d",      "conv3d",          "batch_norm", "global_avg_pool",
      "linear",      "channel_scale", "concat_features", "mix_rows", "softmax_cross_entropy",
      "reshape"};
  return names;
}

void set_gradient_corruption(std::string op) {
  const auto& names = recorded_ops();
  if (!op.empty() && std::find(names.begin(), names.end(), op) == names.end()) {
    throw std::invalid_argument("unknown op '" + op + "'");
  }
  g_corrupt_op = std::move(op);
}
const std::string& gradient_corruption_target() { return g_corrupt_op; }

template <typename Scalar>
Tensor<Scalar> add(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  require_same_shape("add", a, b);
  std::vector<Scalar> out(a.data().begin(), a.data().end());
  auto bs = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bs[i];
  detail::OpBuilder<Scalar> op("add", {&a, &b});
  return op.finish(a.shape(), std::move(out), [a, b](std::span<const Scalar> g) {
    for (const auto* t : {&a, &b}) {
      if (!t->requires_grad()) continue;
      auto dst = detail::grad_of(*t);
      for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
    }
  });
}

template <typename Scalar>
Tensor<Scalar> mul(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  require_same_shape("mul", a, b);
  std::vector<Scalar> out(a.data().begin(), a.data().end());
  auto bs = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bs[i];
  detail::OpBuilder<Scalar> op("mul", {&a, &b});
  return op.finish(a.shape(), std::move(out), [a, b](std::span<const Scalar> g) {
    if (a.requires_grad()) {
      auto dst = detail::grad_of(a);
      auto other = b.data();
      for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i] * other[i];
    }
    if (b.requires_grad()) {
      auto dst = detail::grad_of(b);
      auto other = a.data();
      for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i] * other[i];
    }
  });
}

template <typename Scalar>
Tensor<Scalar> scale(const Tensor<Scalar>& a, Scalar factor) {
  std::vector<Scalar> out(a.data().begin(), a.data().end());
  for (auto& v : out) v *= factor;
  detail::OpBuilder<Scalar> op("scale", {&a});
  return op.finish(a.shape(), std::move(out), [a, factor](std::span<const Scalar> g) {
    auto dst = detail::grad_of(a);
    for (std::size_t i = 0; i < g.size(); ++i) dst[i] += factor * g[i];
  });
}

template <typename Scalar>
Tensor<Scalar> sum(const Tensor<Scalar>& a) {
  double total = 0.0;
  for (Scalar v : a.data()) total += v;
  detail::OpBuilder<Scalar> op("sum", {&a});
  return op.finish(Shape{}, {static_cast<Scalar>(total)}, [a](std::span<const Scalar> g) {
    auto dst = detail::grad_of(a);
    for (auto& v : dst) v += g[0];
  });
}

template <typename Scalar>
Tensor<Scalar> relu(const Tensor<Scalar>& a) {
  std::vector<Scalar> out(a.data().begin(), a.data().end());
  for (auto& v : out) v = v > Scalar(0) ? v : Scalar(0);
  detail::OpBuilder<Scalar> op("relu", {&a});
  return op.finish(a.shape(), std::move(out), [a](std::span<const Scalar> g) {
    auto dst = detail::grad_of(a);
    auto x = a.data();
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (x[i] > Scalar(0)) dst[i] += g[i];
    }
  });
}

template <typename Scalar>
Tensor<Scalar> sigmoid(const Tensor<Scalar>& a) {
  std::vector<Scalar> out(a.data().begin(), a.data().end());
  for (auto& v : out) v = Scalar(1) / (Scalar(1) + std::exp(-v));
  detail::OpBuilder<Scalar> op("sigmoid", {&a});
  const bool records = op.records();
  std::vector<Scalar> saved = records ? out : std::vector<Scalar>{};
  return op.finish(a.shape(), std::move(out),
                   [a, saved = std::move(saved)](std::span<const Scalar> g) {
                     auto dst = detail::grad_of(a);
                     for (std::size_t i = 0; i < g.size(); ++i) {
                       dst[i] += g[i] * saved[i] * (Scalar(1) - saved[i]);
                     }
                   });
}

template <typename Scalar>
Tensor<Scalar> global_avg_pool(const Tensor<Scalar>& input) {
  if (input.ndim() < 3) {
    throw DimensionError("global_avg_pool: need [N,C,spatial...], got " +
                         shape_str(input.shape()));
  }
  const Index n = input.dim(0);
  const Index c = input.dim(1);
  const Index spatial = input.numel() / std::max<Index>(1, n * c);
  std::vector<Scalar> out(static_cast<std::size_t>(n * c));
  auto x = input.data();
  for (Index i = 0; i < n * c; ++i) {
    double acc = 0.0;
    const Scalar* row = x.data() + i * spatial;
    for (Index s = 0; s < spatial; ++s) acc += row[s];
    out[static_cast<std::size_t>(i)] = static_cast<Scalar>(acc / static_cast<double>(spatial));
  }
  detail::OpBuilder<Scalar> op("global_avg_pool", {&input});
  return op.finish({n, c}, std::move(out), [input, n, c, spatial](std::span<const Scalar> g) {
    auto dst = detail::grad_of(input);
    const Scalar inv = Scalar(1) / static_cast<Scalar>(spatial);
    for (Index i = 0; i < n * c; ++i) {
      const Scalar v = g[static_cast<std::size_t>(i)] * inv;
      Scalar* row = dst.data() + i * spatial;
      for (Index s = 0; s < spatial; ++s) row[s] += v;
    }
  });
}

template <typename Scalar>
Tensor<Scalar> linear(const Tensor<Scalar>& input, const Tensor<Scalar>& weight,
                      const Tensor<Scalar>& bias) {
  require_rank("linear", input, 2, "input");
  require_rank("linear", weight, 2, "weight");
  const Index n = input.dim(0);
  const Index f = input.dim(1);
  const Index g_out = weight.dim(0);
  if (weight.dim(1) != f) {
    throw DimensionError("linear: input features " + std::to_string(f) + " vs weight " +
                         shape_str(weight.shape()));
  }
  if (bias.defined() && (bias.ndim() != 1 || bias.dim(0) != g_out)) {
    throw DimensionError("linear: bias shape " + shape_str(bias.shape()) + " vs " +
                         std::to_string(g_out) + " outputs");
  }
  std::vector<Scalar> out(static_cast<std::size_t>(n * g_out));
  ConstMatrixMap<Scalar> x(input.data().data(), n, f);
  ConstMatrixMap<Scalar> w(weight.data().data(), g_out, f);
  MatrixMap<Scalar> y(out.data(), n, g_out);
  y.noalias() = x * w.transpose();
  if (bias.defined()) {
    Eigen::Map<const Eigen::Matrix<Scalar, 1, Eigen::Dynamic>> b(bias.data().data(), g_out);
    y.rowwise() += b;
  }
  detail::OpBuilder<Scalar> op("linear", {&input, &weight, &bias});
  return op.finish({n, g_out}, std::move(out),
                   [input, weight, bias, n, f, g_out](std::span<const Scalar> g) {
                     ConstMatrixMap<Scalar> dy(g.data(), n, g_out);
                     if (input.requires_grad()) {
                       MatrixMap<Scalar> dx(detail::grad_of(input).data(), n, f);
                       ConstMatrixMap<Scalar> w(weight.data().data(), g_out, f);
                       dx.noalias() += dy * w;
                     }
                     if (weight.requires_grad()) {
                       MatrixMap<Scalar> dw(detail::grad_of(weight).data(), g_out, f);
                       ConstMatrixMap<Scalar> x(input.data().data(), n, f);
                       dw.noalias() += dy.transpose() * x;
                     }
                     if (bias.defined() && bias.requires_grad()) {
                       auto db = detail::grad_of(bias);
                       for (Index i = 0; i < n; ++i) {
                         for (Index j = 0; j < g_out; ++j) db[j] += dy(i, j);
                       }
                     }
                   });
}

template <typename Scalar>
Tensor<Scalar> channel_scale(const Tensor<Scalar>& features, const Tensor<Scalar>& gates) {
  if (features.ndim() < 2) {
    throw DimensionError("channel_scale: features need [N,C,...], got " +
                         shape_str(features.shape()));
  }
  const Index n = features.dim(0);
  const Index c = features.dim(1);
  if (gates.shape() != Shape{n, c}) {
    throw DimensionError("channel_scale: gates " + shape_str(gates.shape()) + " vs features " +
                         shape_str(features.shape()));
  }
  const Index spatial = features.numel() / std::max<Index>(1, n * c);
  std::vector<Scalar> out(features.data().begin(), features.data().end());
  auto gs = gates.data();
  for (Index i = 0; i < n * c; ++i) {
    Scalar* row = out.data() + i * spatial;
    for (Index s = 0; s < spatial; ++s) row[s] *= gs[static_cast<std::size_t>(i)];
  }
  detail::OpBuilder<Scalar> op("channel_scale", {&features, &gates});
  return op.finish(features.shape(), std::move(out),
                   [features, gates, n, c, spatial](std::span<const Scalar> g) {
                     auto x = features.data();
                     auto gate = gates.data();
                     if (features.requires_grad()) {
                       auto dx = detail::grad_of(features);
                       for (Index i = 0; i < n * c; ++i) {
                         for (Index s = 0; s < spatial; ++s) {
                           dx[i * spatial + s] += g[i * spatial + s] * gate[i];
                         }
                       }
                     }
                     if (gates.requires_grad()) {
                       auto dgate = detail::grad_of(gates);
                       for (Index i = 0; i < n * c; ++i) {
                         double acc = 0.0;
                         for (Index s = 0; s < spatial; ++s) {
                           acc += g[i * spatial + s] * x[i * spatial + s];
                         }
                         dgate[i] += static_cast<Scalar>(acc);
                       }
                     }
                   });
}

template <typename Scalar>
Tensor<Scalar> concat_features(const Tensor<Scalar>& left, const Tensor<Scalar>& right) {
  require_rank("concat_features", left, 2, "left");
  require_rank("concat_features", right, 2, "right");
  const Index n = left.dim(0);
  if (right.dim(0) != n) {
    throw DimensionError("concat_features: batch mismatch " + shape_str(left.shape()) + " vs " +
                         shape_str(right.shape()));
  }
  const Index f1 = left.dim(1);
  const Index f2 = right.dim(1);
  std::vector<Scalar> out(static_cast<std::size_t>(n * (f1 + f2)));
  auto a = left.data();
  auto b = right.data();
  for (Index i = 0; i < n; ++i) {
    std::copy_n(a.data() + i * f1, f1, out.data() + i * (f1 + f2));
    std::copy_n(b.data() + i * f2, f2, out.data() + i * (f1 + f2) + f1);
  }
  detail::OpBuilder<Scalar> op("concat_features", {&left, &right});
  return op.finish({n, f1 + f2}, std::move(out),
                   [left, right, n, f1, f2](std::span<const Scalar> g) {
                     if (left.requires_grad()) {
                       auto d = detail::grad_of(left);
                       for (Index i = 0; i < n; ++i) {
                         for (Index j = 0; j < f1; ++j) d[i * f1 + j] += g[i * (f1 + f2) + j];
                       }
                     }
                     if (right.requires_grad()) {
                       auto d = detail::grad_of(right);
                       for (Index i = 0; i < n; ++i) {
                         for (Index j = 0; j < f2; ++j) {
                           d[i * f2 + j] += g[i * (f1 + f2) + f1 + j];
                         }
                       }
                     }
                   });
}

template <typename Scalar>
Tensor<Scalar> mix_rows(const Tensor<Scalar>& z, std::span<const Index> pair, double weight) {
  require_rank("mix_rows", z, 2, "z");
  const Index n = z.dim(0);
  const Index f = z.dim(1);
  if (static_cast<Index>(pair.size()) != n) {
    throw DimensionError("mix_rows: pairing has " + std::to_string(pair.size()) +
                         " entries for batch of " + std::to_string(n));
  }
  for (Index k : pair) {
    if (k < 0 || k >= n) throw std::invalid_argument("mix_rows: pair index out of range");
  }
  const auto lam = static_cast<Scalar>(weight);
  const Scalar rest = Scalar(1) - lam;
  std::vector<Scalar> out(static_cast<std::size_t>(n * f));
  auto x = z.data();
  for (Index k = 0; k < n; ++k) {
    const Index j = pair[static_cast<std::size_t>(k)];
    for (Index c = 0; c < f; ++c) out[k * f + c] = lam * x[k * f + c] + rest * x[j * f + c];
  }
  std::vector<Index> pairing(pair.begin(), pair.end());
  detail::OpBuilder<Scalar> op("mix_rows", {&z});
  return op.finish({n, f}, std::move(out),
                   [z, pairing = std::move(pairing), lam, rest, n, f](std::span<const Scalar> g) {
                     auto d = detail::grad_of(z);
                     for (Index k = 0; k < n; ++k) {
                       const Index j = pairing[static_cast<std::size_t>(k)];
                       for (Index c = 0; c < f; ++c) {
                         d[k * f + c] += lam * g[k * f + c];
                         d[j * f + c] += rest * g[k * f + c];
                       }
                     }
                   });
}

template <typename Scalar>
Tensor<Scalar> softmax(const Tensor<Scalar>& logits) {
  require_rank("softmax", logits, 2, "logits");
  const Index n = logits.dim(0);
  const Index c = logits.dim(1);
  std::vector<Scalar> out(static_cast<std::size_t>(n * c));
  auto x = logits.data();
  for (Index i = 0; i < n; ++i) {
    const Scalar* row = x.data() + i * c;
    const Scalar peak = *std::max_element(row, row + c);
    double total = 0.0;
    for (Index j = 0; j < c; ++j) total += std::exp(static_cast<double>(row[j] - peak));
    for (Index j = 0; j < c; ++j) {
      out[i * c + j] = static_cast<Scalar>(std::exp(static_cast<double>(row[j] - peak)) / total);
    }
  }
  return Tensor<Scalar>({n, c}, std::move(out));
}

template <typename Scalar>
Tensor<Scalar> softmax_cross_entropy(const Tensor<Scalar>& logits, const Tensor<Scalar>& target) {
  require_rank("softmax_cross_entropy", logits, 2, "logits");
  require_same_shape("softmax_cross_entropy", logits, target);
  const Index n = logits.dim(0);
  const Index c = logits.dim(1);
  if (n == 0) throw DimensionError("softmax_cross_entropy: empty batch");
  auto x = logits.data();
  auto t = target.data();
  std::vector<Scalar> probs(static_cast<std::size_t>(n * c));
  std::vector<Scalar> target_mass(static_cast<std::size_t>(n));
  double loss = 0.0;
  for (Index i = 0; i < n; ++i) {
    const Scalar* row = x.data() + i * c;
    const Scalar* trow = t.data() + i * c;
    double mass = 0.0;
    for (Index j = 0; j < c; ++j) mass += trow[j];
    if (std::abs(mass - 1.0) > 1e-6) {
      throw std::invalid_argument("softmax_cross_entropy: target row " + std::to_string(i) +
                                  " sums to " + std::to_string(mass));
    }
    target_mass[static_cast<std::size_t>(i)] = static_cast<Scalar>(mass);
    const double peak = *std::max_element(row, row + c);
    double total = 0.0;
    for (Index j = 0; j < c; ++j) total += std::exp(row[j] - peak);
    const double lse = peak + std::log(total);
    double row_loss = 0.0;
    for (Index j = 0; j < c; ++j) {
      row_loss += trow[j] * (lse - row[j]);
      probs[i * c + j] = static_cast<Scalar>(std::exp(row[j] - peak) / total);
    }
    loss += row_loss;
  }
  loss /= static_cast<double>(n);
  detail::OpBuilder<Scalar> op("softmax_cross_entropy", {&logits});
  return op.finish(
      Shape{}, {static_cast<Scalar>(loss)},
      [logits, target, probs = std::move(probs), target_mass = std::move(target_mass), n,
       c](std::span<const Scalar> g) {
        auto d = detail::grad_of(logits);
        auto tt = target.data();
        const Scalar factor = g[0] / static_cast<Scalar>(n);
        for (Index i = 0; i < n; ++i) {
          for (Index j = 0; j < c; ++j) {
            d[i * c + j] += factor * (probs[i * c + j] * target_mass[i] - tt[i * c + j]);
          }
        }
      });
}

#define FUSERET_INSTANTIATE_BASIC(S)                                                       \
  template Tensor<S> add(const Tensor<S>&, const Tensor<S>&);                              \
  template Tensor<S> mul(const Tensor<S>&, const Tensor<S>&);                              \
  template Tensor<S> scale(const Tensor<S>&, S);                                           \
  template Tensor<S> sum(const Tensor<S>&);                                                \
  template Tensor<S> relu(const Tensor<S>&);                                               \
  template Tensor<S> sigmoid(const Tensor<S>&);                                            \
  template Tensor<S> global_avg_pool(const Tensor<S>&);                                    \
  template Tensor<S> linear(const Tensor<S>&, const Tensor<S>&, const Tensor<S>&);         \
  template Tensor<S> channel_scale(const Tensor<S>&, const Tensor<S>&);                    \
  template Tensor<S> concat_features(const Tensor<S>&, const Tensor<S>&);                  \
  template Tensor<S> mix_rows(const Tensor<S>&, std::span<const Index>, double);           \
  template Tensor<S> softmax(const Tensor<S>&);                                            \
  template Tensor<S> softmax_cross_entropy(const Tensor<S>&, const Tensor<S>&);

FUSERET_INSTANTIATE_BASIC(float)
FUSERET_INSTANTIATE_BASIC(double)

#undef FUSERET_INSTANTIATE_BASIC

}  // namespace fuseret
