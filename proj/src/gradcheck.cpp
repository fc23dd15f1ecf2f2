#include "fuseret/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace fuseret {

namespace {

double evaluate(const std::function<TensorD(const TensorD&)>& fn, const TensorD& point) {
  NoGradGuard guard;
  const double value = fn(point).item();
  if (!std::isfinite(value)) throw NonFiniteError("gradcheck: function returned " +
                                                  std::to_string(value));
  return value;
}

}  // namespace

double gradcheck(const std::function<TensorD(const TensorD&)>& fn, TensorD point, double step) {
  if (!point.is_leaf()) point = point.detach();
  point.zero_grad();
  point.set_requires_grad(true);
  TensorD loss = fn(point);
  if (loss.numel() != 1) throw DimensionError("gradcheck: function must return a scalar");
  if (!std::isfinite(loss.item())) throw NonFiniteError("gradcheck: non-finite function output");
  loss.backward();
  const std::vector<double> analytic = point.grad();

  double worst = 0.0;
  auto values = point.data();
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double saved = values[i];
    values[i] = saved + step;
    const double up = evaluate(fn, point);
    values[i] = saved - step;
    const double down = evaluate(fn, point);
    values[i] = saved;
    const double numeric = (up - down) / (2.0 * step);
    const double denom = std::max({1.0, std::abs(analytic[i]), std::abs(numeric)});
    worst = std::max(worst, std::abs(analytic[i] - numeric) / denom);
  }
  point.zero_grad();
  return worst;
}

}  // namespace fuseret
