#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "fuseret/tensor.hpp"

namespace fuseret {

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-4;  // decoupled
};

/// Moments are held in double regardless of the parameter scalar.
struct OptimizerState {
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
  std::int64_t t = 0;
};

/// theta <- theta - lr*wd*theta - lr * m_hat / (sqrt(v_hat) + eps).
/// A parameter without a gradient is treated as having a zero gradient.
/// Throws NonFiniteError naming the parameter index before touching any state.
template <typename Scalar>
void adamw_step(std::span<Tensor<Scalar>> params, OptimizerState& state, double lr,
                const AdamWConfig& cfg);

struct OneCycleConfig {
  double pct_start = 0.3;
  double div_factor = 25.0;
  double final_div_factor = 1e4;

  void validate() const;
};

/// Index of the step that receives lr_max: round(pct_start * total) - 1,
/// kept inside [1, total - 2] when total >= 3.
std::int64_t onecycle_peak_step(std::int64_t total_steps, const OneCycleConfig& cfg);

/// Cosine one-cycle: lr_max / div_factor at step 0, lr_max at the peak step,
/// lr_max / final_div_factor at the last step.
double onecycle_lr(std::int64_t step, std::int64_t total_steps, double lr_max,
                   const OneCycleConfig& cfg);

}  // namespace fuseret
