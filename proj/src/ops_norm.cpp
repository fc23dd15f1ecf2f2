#include <cmath>

#include "fuseret/ops.hpp"

namespace fuseret {

template <typename Scalar>
Tensor<Scalar> batch_norm(const Tensor<Scalar>& input, const Tensor<Scalar>& gamma,
                          const Tensor<Scalar>& beta, BatchNormStats<Scalar>& stats, NormMode mode,
                          double eps, double momentum) {
  if (input.ndim() < 2) {
    throw DimensionError("batch_norm: input needs a channel axis, got " +
                         shape_str(input.shape()));
  }
  const Index n = input.dim(0);
  const Index c = input.dim(1);
  const Shape channel_shape{c};
  if (gamma.shape() != channel_shape || beta.shape() != channel_shape ||
      stats.running_mean.shape() != channel_shape || stats.running_var.shape() != channel_shape) {
    throw DimensionError("batch_norm: " + std::to_string(c) + " channels in " +
                         shape_str(input.shape()) + " but gamma " + shape_str(gamma.shape()) +
                         ", beta " + shape_str(beta.shape()));
  }
  const Index spatial = input.numel() / std::max<Index>(1, n * c);
  const Index count = n * spatial;
  auto x = input.data();
  auto gm = gamma.data();
  auto bt = beta.data();

  std::vector<Scalar> mean(static_cast<std::size_t>(c));
  std::vector<Scalar> inv_std(static_cast<std::size_t>(c));
  if (mode == NormMode::train) {
    if (count < 1) throw DimensionError("batch_norm: empty batch");
    auto rm = stats.running_mean.data();
    auto rv = stats.running_var.data();
    for (Index ch = 0; ch < c; ++ch) {
      double acc = 0.0;
      for (Index i = 0; i < n; ++i) {
        const Scalar* row = x.data() + (i * c + ch) * spatial;
        for (Index s = 0; s < spatial; ++s) acc += row[s];
      }
      const double mu = acc / static_cast<double>(count);
      double sq = 0.0;
      for (Index i = 0; i < n; ++i) {
        const Scalar* row = x.data() + (i * c + ch) * spatial;
        for (Index s = 0; s < spatial; ++s) {
          const double d = row[s] - mu;
          sq += d * d;
        }
      }
      const double var = sq / static_cast<double>(count);
      mean[ch] = static_cast<Scalar>(mu);
      inv_std[ch] = static_cast<Scalar>(1.0 / std::sqrt(var + eps));
      const double unbiased = count > 1 ? sq / static_cast<double>(count - 1) : var;
      rm[ch] = static_cast<Scalar>((1.0 - momentum) * rm[ch] + momentum * mu);
      rv[ch] = static_cast<Scalar>((1.0 - momentum) * rv[ch] + momentum * unbiased);
    }
  } else {
    auto rm = stats.running_mean.data();
    auto rv = stats.running_var.data();
    for (Index ch = 0; ch < c; ++ch) {
      mean[ch] = rm[ch];
      inv_std[ch] = static_cast<Scalar>(1.0 / std::sqrt(static_cast<double>(rv[ch]) + eps));
    }
  }

  std::vector<Scalar> out(x.begin(), x.end());
  std::vector<Scalar> xhat;
  detail::OpBuilder<Scalar> op("batch_norm", {&input, &gamma, &beta});
  if (op.records()) xhat.resize(out.size());
  for (Index i = 0; i < n; ++i) {
    for (Index ch = 0; ch < c; ++ch) {
      const Index base = (i * c + ch) * spatial;
      const Scalar mu = mean[ch];
      const Scalar is = inv_std[ch];
      const Scalar gv = gm[ch];
      const Scalar bv = bt[ch];
      for (Index s = 0; s < spatial; ++s) {
        const Scalar h = (x[base + s] - mu) * is;
        if (!xhat.empty()) xhat[base + s] = h;
        out[base + s] = h * gv + bv;
      }
    }
  }

  return op.finish(
      input.shape(), std::move(out),
      [input, gamma, beta, mode, n, c, spatial, count, inv_std = std::move(inv_std),
       xhat = std::move(xhat)](std::span<const Scalar> g) {
        auto gm = gamma.data();
        std::vector<double> sum_dy(static_cast<std::size_t>(c), 0.0);
        std::vector<double> sum_dy_xhat(static_cast<std::size_t>(c), 0.0);
        for (Index i = 0; i < n; ++i) {
          for (Index ch = 0; ch < c; ++ch) {
            const Index base = (i * c + ch) * spatial;
            double a = 0.0, b = 0.0;
            for (Index s = 0; s < spatial; ++s) {
              a += g[base + s];
              b += g[base + s] * xhat[base + s];
            }
            sum_dy[ch] += a;
            sum_dy_xhat[ch] += b;
          }
        }
        if (gamma.requires_grad()) {
          auto d = detail::grad_of(gamma);
          for (Index ch = 0; ch < c; ++ch) d[ch] += static_cast<Scalar>(sum_dy_xhat[ch]);
        }
        if (beta.requires_grad()) {
          auto d = detail::grad_of(beta);
          for (Index ch = 0; ch < c; ++ch) d[ch] += static_cast<Scalar>(sum_dy[ch]);
        }
        if (!input.requires_grad()) return;
        auto dx = detail::grad_of(input);
        const double inv_count = 1.0 / static_cast<double>(count);
        for (Index i = 0; i < n; ++i) {
          for (Index ch = 0; ch < c; ++ch) {
            const Index base = (i * c + ch) * spatial;
            const Scalar scale_in = gm[ch] * inv_std[ch];
            if (mode == NormMode::eval) {
              for (Index s = 0; s < spatial; ++s) dx[base + s] += g[base + s] * scale_in;
              continue;
            }
            const auto mean_dy = static_cast<Scalar>(sum_dy[ch] * inv_count);
            const auto mean_dy_xhat = static_cast<Scalar>(sum_dy_xhat[ch] * inv_count);
            for (Index s = 0; s < spatial; ++s) {
              dx[base + s] +=
                  scale_in * (g[base + s] - mean_dy - xhat[base + s] * mean_dy_xhat);
            }
          }
        }
      });
}

template Tensor<float> batch_norm(const Tensor<float>&, const Tensor<float>&, const Tensor<float>&,
                                  BatchNormStats<float>&, NormMode, double, double);
template Tensor<double> batch_norm(const Tensor<double>&, const Tensor<double>&,
                                   const Tensor<double>&, BatchNormStats<double>&, NormMode, double,
                                   double);

}  // namespace fuseret
