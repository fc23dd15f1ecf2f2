#include <algorithm>
#include <array>
#include <cstring>

#include "fuseret/ops.hpp"

namespace fuseret {

namespace {

// 2D convolutions run through the same kernel with a unit depth axis.
struct ConvGeometry {
  Index batch = 0, channels = 0, kernels = 0;
  std::array<Index, 3> in{};      // D, H, W
  std::array<Index, 3> kernel{};  // kd, kh, kw
  std::array<Index, 3> stride{};
  std::array<Index, 3> pad{};
  std::array<Index, 3> out{};

  Index in_volume() const { return in[0] * in[1] * in[2]; }
  Index out_volume() const { return out[0] * out[1] * out[2]; }
  Index patch() const { return channels * kernel[0] * kernel[1] * kernel[2]; }
  bool pointwise() const {
    return kernel == std::array<Index, 3>{1, 1, 1} && stride == std::array<Index, 3>{1, 1, 1} &&
           pad == std::array<Index, 3>{0, 0, 0};
  }
};

template <typename Scalar>
ConvGeometry make_geometry(std::string_view op, int spatial, const Tensor<Scalar>& input,
                           const Tensor<Scalar>& weight, const Tensor<Scalar>& bias, int stride,
                           int padding) {
  const int rank = spatial + 2;
  const std::string name(op);
  if (input.ndim() != rank) {
    throw DimensionError(name + ": input must have rank " + std::to_string(rank) + ", got " +
                         shape_str(input.shape()));
  }
  if (weight.ndim() != rank) {
    throw DimensionError(name + ": weight must have rank " + std::to_string(rank) + ", got " +
                         shape_str(weight.shape()));
  }
  if (stride < 1) throw DimensionError(name + ": stride must be >= 1");
  if (padding < 0) throw DimensionError(name + ": padding must be >= 0");
  if (weight.dim(1) != input.dim(1)) {
    throw DimensionError(name + ": channel axis 1 mismatch, input " + shape_str(input.shape()) +
                         " vs weight " + shape_str(weight.shape()));
  }
  ConvGeometry geo;
  geo.batch = input.dim(0);
  geo.channels = input.dim(1);
  geo.kernels = weight.dim(0);
  const int offset = 3 - spatial;
  for (int a = 0; a < 3; ++a) {
    if (a < offset) {
      geo.in[a] = geo.kernel[a] = geo.stride[a] = 1;
      geo.pad[a] = 0;
    } else {
      geo.in[a] = input.dim(2 + a - offset);
      geo.kernel[a] = weight.dim(2 + a - offset);
      geo.stride[a] = stride;
      geo.pad[a] = padding;
    }
    const Index span = geo.in[a] + 2 * geo.pad[a];
    if (geo.kernel[a] > span) {
      throw DimensionError(name + ": kernel extent " + std::to_string(geo.kernel[a]) +
                           " exceeds padded input extent " + std::to_string(span) + " on axis " +
                           std::to_string(2 + a - offset) + " of " + shape_str(input.shape()));
    }
    geo.out[a] = (span - geo.kernel[a]) / geo.stride[a] + 1;
  }
  if (bias.defined() && (bias.ndim() != 1 || bias.dim(0) != geo.kernels)) {
    throw DimensionError(name + ": bias shape " + shape_str(bias.shape()) + " vs " +
                         std::to_string(geo.kernels) + " kernels");
  }
  return geo;
}

// Unfold one sample [C, D, H, W] into columns [C*kd*kh*kw, Do*Ho*Wo].
template <typename Scalar>
void im2col(const ConvGeometry& g, const Scalar* x, Scalar* col) {
  const Index plane = g.out_volume();
  Index row = 0;
  for (Index c = 0; c < g.channels; ++c) {
    const Scalar* xc = x + c * g.in_volume();
    for (Index a = 0; a < g.kernel[0]; ++a) {
      for (Index b = 0; b < g.kernel[1]; ++b) {
        for (Index e = 0; e < g.kernel[2]; ++e, ++row) {
          Scalar* dst = col + row * plane;
          for (Index od = 0; od < g.out[0]; ++od) {
            const Index id = od * g.stride[0] - g.pad[0] + a;
            for (Index oh = 0; oh < g.out[1]; ++oh) {
              const Index ih = oh * g.stride[1] - g.pad[1] + b;
              Scalar* out_row = dst + (od * g.out[1] + oh) * g.out[2];
              if (id < 0 || id >= g.in[0] || ih < 0 || ih >= g.in[1]) {
                std::fill_n(out_row, g.out[2], Scalar(0));
                continue;
              }
              const Scalar* in_row = xc + (id * g.in[1] + ih) * g.in[2];
              for (Index ow = 0; ow < g.out[2]; ++ow) {
                const Index iw = ow * g.stride[2] - g.pad[2] + e;
                out_row[ow] = (iw >= 0 && iw < g.in[2]) ? in_row[iw] : Scalar(0);
              }
            }
          }
        }
      }
    }
  }
}

// Adjoint of im2col: scatter-add columns back into one sample's gradient.
template <typename Scalar>
void col2im(const ConvGeometry& g, const Scalar* col, Scalar* dx) {
  const Index plane = g.out_volume();
  Index row = 0;
  for (Index c = 0; c < g.channels; ++c) {
    Scalar* dxc = dx + c * g.in_volume();
    for (Index a = 0; a < g.kernel[0]; ++a) {
      for (Index b = 0; b < g.kernel[1]; ++b) {
        for (Index e = 0; e < g.kernel[2]; ++e, ++row) {
          const Scalar* src = col + row * plane;
          for (Index od = 0; od < g.out[0]; ++od) {
            const Index id = od * g.stride[0] - g.pad[0] + a;
            if (id < 0 || id >= g.in[0]) continue;
            for (Index oh = 0; oh < g.out[1]; ++oh) {
              const Index ih = oh * g.stride[1] - g.pad[1] + b;
              if (ih < 0 || ih >= g.in[1]) continue;
              const Scalar* in_row = src + (od * g.out[1] + oh) * g.out[2];
              Scalar* out_row = dxc + (id * g.in[1] + ih) * g.in[2];
              for (Index ow = 0; ow < g.out[2]; ++ow) {
                const Index iw = ow * g.stride[2] - g.pad[2] + e;
                if (iw >= 0 && iw < g.in[2]) out_row[iw] += in_row[ow];
              }
            }
          }
        }
      }
    }
  }
}

template <typename Scalar>
Tensor<Scalar> conv_impl(std::string_view name, int spatial, const Tensor<Scalar>& input,
                         const Tensor<Scalar>& weight, const Tensor<Scalar>& bias, int stride,
                         int padding) {
  const ConvGeometry g = make_geometry(name, spatial, input, weight, bias, stride, padding);
  const Index patch = g.patch();
  const Index plane = g.out_volume();
  const Index in_sample = g.channels * g.in_volume();
  const Index out_sample = g.kernels * plane;

  Shape out_shape{g.batch, g.kernels};
  for (int a = 3 - spatial; a < 3; ++a) out_shape.push_back(g.out[a]);

  detail::OpBuilder<Scalar> op(std::string(name), {&input, &weight, &bias});
  const bool keep_cols = op.records() && weight.requires_grad() && !g.pointwise();

  std::vector<Scalar> out(static_cast<std::size_t>(g.batch * out_sample));
  std::vector<Scalar> cols;
  if (!g.pointwise()) {
    cols.resize(static_cast<std::size_t>((keep_cols ? g.batch : 1) * patch * plane));
  }
  ConstMatrixMap<Scalar> w(weight.data().data(), g.kernels, patch);
  auto x = input.data();
  for (Index n = 0; n < g.batch; ++n) {
    const Scalar* col_ptr = x.data() + n * in_sample;
    if (!g.pointwise()) {
      Scalar* dst = cols.data() + (keep_cols ? n * patch * plane : 0);
      im2col(g, x.data() + n * in_sample, dst);
      col_ptr = dst;
    }
    ConstMatrixMap<Scalar> col(col_ptr, patch, plane);
    MatrixMap<Scalar> y(out.data() + n * out_sample, g.kernels, plane);
    y.noalias() = w * col;
    if (bias.defined()) {
      auto b = bias.data();
      for (Index k = 0; k < g.kernels; ++k) y.row(k).array() += b[k];
    }
  }
  if (!keep_cols) cols.clear();

  return op.finish(
      std::move(out_shape), std::move(out),
      [input, weight, bias, g, cols = std::move(cols)](std::span<const Scalar> grad) {
        const Index patch = g.patch();
        const Index plane = g.out_volume();
        const Index in_sample = g.channels * g.in_volume();
        const Index out_sample = g.kernels * plane;
        ConstMatrixMap<Scalar> w(weight.data().data(), g.kernels, patch);
        auto x = input.data();
        std::vector<Scalar> scratch;
        if (input.requires_grad() && !g.pointwise()) {
          scratch.resize(static_cast<std::size_t>(patch * plane));
        }
        std::vector<Scalar> recomputed;
        for (Index n = 0; n < g.batch; ++n) {
          ConstMatrixMap<Scalar> dy(grad.data() + n * out_sample, g.kernels, plane);
          if (weight.requires_grad()) {
            const Scalar* col_ptr = x.data() + n * in_sample;
            if (!g.pointwise()) {
              if (!cols.empty()) {
                col_ptr = cols.data() + n * patch * plane;
              } else {
                recomputed.resize(static_cast<std::size_t>(patch * plane));
                im2col(g, x.data() + n * in_sample, recomputed.data());
                col_ptr = recomputed.data();
              }
            }
            ConstMatrixMap<Scalar> col(col_ptr, patch, plane);
            MatrixMap<Scalar> dw(detail::grad_of(weight).data(), g.kernels, patch);
            dw.noalias() += dy * col.transpose();
          }
          if (bias.defined() && bias.requires_grad()) {
            auto db = detail::grad_of(bias);
            for (Index k = 0; k < g.kernels; ++k) db[k] += dy.row(k).sum();
          }
          if (input.requires_grad()) {
            Scalar* dx = detail::grad_of(input).data() + n * in_sample;
            if (g.pointwise()) {
              MatrixMap<Scalar> dcol(dx, patch, plane);
              dcol.noalias() += w.transpose() * dy;
            } else {
              MatrixMap<Scalar> dcol(scratch.data(), patch, plane);
              dcol.noalias() = w.transpose() * dy;
              col2im(g, scratch.data(), dx);
            }
          }
        }
      });
}

}  // namespace

template <typename Scalar>
Tensor<Scalar> conv2d(const Tensor<Scalar>& input, const Tensor<Scalar>& weight,
                      const Tensor<Scalar>& bias, int stride, int padding) {
  return conv_impl("conv2d", 2, input, weight, bias, stride, padding);
}

template <typename Scalar>
Tensor<Scalar> conv3d(const Tensor<Scalar>& input, const Tensor<Scalar>& weight,
                      const Tensor<Scalar>& bias, int stride, int padding) {
  return conv_impl("conv3d", 3, input, weight, bias, stride, padding);
}

template <typename Scalar>
Tensor<Scalar> conv(const Tensor<Scalar>& input, const Tensor<Scalar>& weight,
                    const Tensor<Scalar>& bias, int stride, int padding) {
  if (input.ndim() == 4) return conv2d(input, weight, bias, stride, padding);
  if (input.ndim() == 5) return conv3d(input, weight, bias, stride, padding);
  throw DimensionError("conv: input must be [N,C,H,W] or [N,C,D,H,W], got " +
                       shape_str(input.shape()));
}

#define FUSERET_INSTANTIATE_CONV(S)                                                    \
  template Tensor<S> conv2d(const Tensor<S>&, const Tensor<S>&, const Tensor<S>&, int, int); \
  template Tensor<S> conv3d(const Tensor<S>&, const Tensor<S>&, const Tensor<S>&, int, int); \
  template Tensor<S> conv(const Tensor<S>&, const Tensor<S>&, const Tensor<S>&, int, int);

FUSERET_INSTANTIATE_CONV(float)
FUSERET_INSTANTIATE_CONV(double)

#undef FUSERET_INSTANTIATE_CONV

}  // namespace fuseret
