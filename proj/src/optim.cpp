#include "fuseret/optim.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

namespace fuseret {

template <typename Scalar>
void adamw_step(std::span<Tensor<Scalar>> params, OptimizerState& state, double lr,
                const AdamWConfig& cfg) {
  if (state.m.empty()) {
    for (const auto& p : params) {
      state.m.emplace_back(static_cast<std::size_t>(p.numel()), 0.0);
      state.v.emplace_back(static_cast<std::size_t>(p.numel()), 0.0);
    }
  }
  if (state.m.size() != params.size()) {
    throw std::invalid_argument("adamw_step: parameter count changed between steps");
  }
  std::vector<std::vector<Scalar>> grads(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (state.m[i].size() != static_cast<std::size_t>(params[i].numel())) {
      throw DimensionError("adamw_step: parameter " + std::to_string(i) + " changed shape");
    }
    grads[i] = params[i].has_grad() ? params[i].grad()
                                    : std::vector<Scalar>(state.m[i].size(), Scalar(0));
    for (Scalar g : grads[i]) {
      if (!std::isfinite(static_cast<double>(g))) {
        throw NonFiniteError("adamw_step: non-finite gradient in parameter " + std::to_string(i));
      }
    }
  }

  ++state.t;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto theta = params[i].data();
    auto& m = state.m[i];
    auto& v = state.v[i];
    const auto& g = grads[i];
    for (std::size_t j = 0; j < m.size(); ++j) {
      const double gj = static_cast<double>(g[j]);
      double th = static_cast<double>(theta[j]);
      th -= lr * cfg.weight_decay * th;
      m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * gj;
      v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * gj * gj;
      const double m_hat = m[j] / bc1;
      const double v_hat = v[j] / bc2;
      theta[j] = static_cast<Scalar>(th - lr * m_hat / (std::sqrt(v_hat) + cfg.eps));
    }
  }
}

template void adamw_step(std::span<Tensor<float>>, OptimizerState&, double, const AdamWConfig&);
template void adamw_step(std::span<Tensor<double>>, OptimizerState&, double, const AdamWConfig&);

void OneCycleConfig::validate() const {
  if (!(pct_start > 0.0 && pct_start < 1.0)) {
    throw std::invalid_argument("onecycle: pct_start must lie in (0,1)");
  }
  if (!(div_factor > 0.0) || !(final_div_factor > 0.0)) {
    throw std::invalid_argument("onecycle: div factors must be positive");
  }
}

std::int64_t onecycle_peak_step(std::int64_t total_steps, const OneCycleConfig& cfg) {
  auto peak = static_cast<std::int64_t>(
                  std::llround(cfg.pct_start * static_cast<double>(total_steps))) - 1;
  if (total_steps >= 3) return std::clamp<std::int64_t>(peak, 1, total_steps - 2);
  return std::clamp<std::int64_t>(peak, 0, total_steps - 1);
}

double onecycle_lr(std::int64_t step, std::int64_t total_steps, double lr_max,
                   const OneCycleConfig& cfg) {
  cfg.validate();
  if (total_steps < 1 || step < 0 || step >= total_steps) {
    throw std::out_of_range("onecycle_lr: step " + std::to_string(step) + " of " +
                            std::to_string(total_steps));
  }
  const double initial = lr_max / cfg.div_factor;
  const double final_lr = lr_max / cfg.final_div_factor;
  const std::int64_t peak = onecycle_peak_step(total_steps, cfg);
  // Phase endpoints are returned exactly.
  if (step == peak) return lr_max;
  if (step == 0) return initial;
  if (step == total_steps - 1) return final_lr;
  auto anneal = [](double from, double to, double frac) {
    return to + (from - to) * 0.5 * (1.0 + std::cos(std::numbers::pi * frac));
  };
  if (step < peak) {
    return anneal(initial, lr_max, static_cast<double>(step) / static_cast<double>(peak));
  }
  return anneal(lr_max, final_lr,
                static_cast<double>(step - peak) / static_cast<double>(total_steps - 1 - peak));
}

}  // namespace fuseret
