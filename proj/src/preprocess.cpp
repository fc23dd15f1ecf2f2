#include "fuseret/preprocess.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace fuseret {

namespace {

void check_volume(const Shape& shape, Extent3 size, const char* op) {
  if (shape.size() != 4) {
    throw DimensionError(std::string(op) + ": expected [C,D,H,W], got " + shape_str(shape));
  }
  for (int a = 0; a < 3; ++a) {
    if (size[a] < 1 || size[a] > shape[a + 1]) {
      throw DimensionError(std::string(op) + ": crop " + std::to_string(size[a]) + " on axis " +
                           std::to_string(a + 1) + " of " + shape_str(shape));
    }
  }
}

}  // namespace

template <typename Scalar>
Tensor<Scalar> center_crop2d(const Tensor<Scalar>& image, Index size) {
  if (image.ndim() != 3) {
    throw DimensionError("center_crop2d: expected [C,H,W], got " + shape_str(image.shape()));
  }
  const Index C = image.dim(0), H = image.dim(1), W = image.dim(2);
  if (size < 1 || size > H || size > W) {
    throw DimensionError("center_crop2d: size " + std::to_string(size) + " exceeds " +
                         shape_str(image.shape()));
  }
  const Index oh = (H - size) / 2, ow = (W - size) / 2;
  Tensor<Scalar> out({C, size, size});
  const Scalar* src = image.data().data();
  Scalar* dst = out.data().data();
  for (Index c = 0; c < C; ++c)
    for (Index i = 0; i < size; ++i)
      std::copy_n(src + (c * H + oh + i) * W + ow, size, dst + (c * size + i) * size);
  return out;
}

template <typename Scalar>
Tensor<Scalar> resize2d(const Tensor<Scalar>& image, Index out) {
  if (out < 1) throw std::invalid_argument("resize2d: output size must be >= 1");
  if (image.ndim() != 3 || image.dim(1) < 1 || image.dim(2) < 1) {
    throw DimensionError("resize2d: expected [C,H,W], got " + shape_str(image.shape()));
  }
  const Index C = image.dim(0), H = image.dim(1), W = image.dim(2);
  auto coords = [out](Index extent) {
    std::vector<std::pair<Index, double>> table(static_cast<std::size_t>(out));
    for (Index i = 0; i < out; ++i) {
      const double s = out == 1 ? 0.0
                                : static_cast<double>(i) * static_cast<double>(extent - 1) /
                                      static_cast<double>(out - 1);
      const Index lo = std::min<Index>(static_cast<Index>(std::floor(s)), extent - 1);
      table[static_cast<std::size_t>(i)] = {lo, s - static_cast<double>(lo)};
    }
    return table;
  };
  const auto ys = coords(H), xs = coords(W);
  Tensor<Scalar> result({C, out, out});
  for (Index c = 0; c < C; ++c) {
    const Scalar* plane = image.data().data() + c * H * W;
    for (Index i = 0; i < out; ++i) {
      const auto [y0, fy] = ys[static_cast<std::size_t>(i)];
      const Index y1 = std::min(y0 + 1, H - 1);
      for (Index j = 0; j < out; ++j) {
        const auto [x0, fx] = xs[static_cast<std::size_t>(j)];
        const Index x1 = std::min(x0 + 1, W - 1);
        const double top = (1.0 - fx) * plane[y0 * W + x0] + fx * plane[y0 * W + x1];
        const double bottom = (1.0 - fx) * plane[y1 * W + x0] + fx * plane[y1 * W + x1];
        result.at({c, i, j}) = static_cast<Scalar>((1.0 - fy) * top + fy * bottom);
      }
    }
  }
  return result;
}

template <typename Scalar>
Tensor<Scalar> stack_structure_flow(const Tensor<Scalar>& structure, const Tensor<Scalar>& flow) {
  if (structure.ndim() != 3 || structure.shape() != flow.shape()) {
    throw DimensionError("stack_structure_flow: structure " + shape_str(structure.shape()) +
                         " vs flow " + shape_str(flow.shape()));
  }
  Shape shape{2};
  shape.insert(shape.end(), structure.shape().begin(), structure.shape().end());
  Tensor<Scalar> out(shape);
  auto dst = out.data();
  std::copy(structure.data().begin(), structure.data().end(), dst.begin());
  std::copy(flow.data().begin(), flow.data().end(), dst.begin() + structure.numel());
  return out;
}

template <typename Scalar>
Tensor<Scalar> crop3d(const Tensor<Scalar>& volume, Extent3 size, Extent3 offset) {
  check_volume(volume.shape(), size, "crop3d");
  const Index C = volume.dim(0), D = volume.dim(1), H = volume.dim(2), W = volume.dim(3);
  for (int a = 0; a < 3; ++a) {
    if (offset[a] < 0 || offset[a] + size[a] > volume.dim(a + 1)) {
      throw DimensionError("crop3d: offset out of range on axis " + std::to_string(a + 1));
    }
  }
  const auto [d, h, w] = size;
  Tensor<Scalar> out({C, d, h, w});
  const Scalar* src = volume.data().data();
  Scalar* dst = out.data().data();
  for (Index c = 0; c < C; ++c)
    for (Index z = 0; z < d; ++z)
      for (Index y = 0; y < h; ++y) {
        const Index from = ((c * D + offset[0] + z) * H + offset[1] + y) * W + offset[2];
        std::copy_n(src + from, w, dst + ((c * d + z) * h + y) * w);
      }
  return out;
}

Extent3 draw_crop_offsets(const Shape& volume_shape, Extent3 size, Rng& rng) {
  check_volume(volume_shape, size, "random_crop3d");
  Extent3 offset{};
  for (int a = 0; a < 3; ++a) {
    std::uniform_int_distribution<Index> pick(0, volume_shape[a + 1] - size[a]);
    offset[a] = pick(rng);
  }
  return offset;
}

#define FUSERET_INSTANTIATE_PREPROCESS(S)                                  \
  template Tensor<S> center_crop2d(const Tensor<S>&, Index);               \
  template Tensor<S> resize2d(const Tensor<S>&, Index);                    \
  template Tensor<S> stack_structure_flow(const Tensor<S>&, const Tensor<S>&); \
  template Tensor<S> crop3d(const Tensor<S>&, Extent3, Extent3);

FUSERET_INSTANTIATE_PREPROCESS(float)
FUSERET_INSTANTIATE_PREPROCESS(double)

#undef FUSERET_INSTANTIATE_PREPROCESS

}  // namespace fuseret
