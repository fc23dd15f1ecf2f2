#pragma once

#include <array>

#include "fuseret/random.hpp"
#include "fuseret/tensor.hpp"

namespace fuseret {

using Extent3 = std::array<Index, 3>;

/// [C,H,W] -> [C,size,size]; offsets are floor((extent - size) / 2).
template <typename Scalar>
Tensor<Scalar> center_crop2d(const Tensor<Scalar>& image, Index size);

/// Bilinear resize of [C,H,W] to [C,out,out] with corners aligned: output
/// pixel i samples source coordinate i * (H - 1) / (out - 1). A 1-pixel
/// output samples the source origin.
template <typename Scalar>
Tensor<Scalar> resize2d(const Tensor<Scalar>& image, Index out);

/// Channel 0 = structure, channel 1 = flow.
template <typename Scalar>
Tensor<Scalar> stack_structure_flow(const Tensor<Scalar>& structure, const Tensor<Scalar>& flow);

/// Copy of volume[:, o0:o0+d, o1:o1+h, o2:o2+w].
template <typename Scalar>
Tensor<Scalar> crop3d(const Tensor<Scalar>& volume, Extent3 size, Extent3 offset);

/// Offsets drawn uniformly per axis; one draw per axis even when the axis is
/// not cropped, so the stream position does not depend on the geometry.
Extent3 draw_crop_offsets(const Shape& volume_shape, Extent3 size, Rng& rng);

template <typename Scalar>
Tensor<Scalar> random_crop3d(const Tensor<Scalar>& volume, Extent3 size, Rng& rng) {
  return crop3d(volume, size, draw_crop_offsets(volume.shape(), size, rng));
}

}  // namespace fuseret
