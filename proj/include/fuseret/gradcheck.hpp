#pragma once

#include <functional>

#include "fuseret/tensor.hpp"

namespace fuseret {

inline constexpr double kGradcheckStep = 1e-4;

/// Compares the autodiff gradient of `fn` at `point` against central
/// differences. Returns the largest
///   |analytic - numeric| / max(1, |analytic|, |numeric|)
/// over all coordinates of `point`. `point` is restored on return.
double gradcheck(const std::function<TensorD(const TensorD&)>& fn, TensorD point,
                 double step = kGradcheckStep);

}  // namespace fuseret
