#include "fuseret/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <unordered_set>

#include "fuseret/ops.hpp"

namespace fuseret {

namespace {

thread_local bool g_grad_enabled = true;

}  // namespace

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

bool grad_mode_enabled() { return g_grad_enabled; }

Index shape_numel(const Shape& shape) {
  Index n = 1;
  for (Index e : shape) {
    if (e < 0) throw DimensionError("negative extent in shape " + shape_str(shape));
    n *= e;
  }
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) out << (i ? "," : "") << shape[i];
  out << ']';
  return out.str();
}

template <typename Scalar>
Tensor<Scalar>::Tensor(Shape shape, Scalar fill)
    : impl_(std::make_shared<detail::TensorImpl<Scalar>>()) {
  const auto n = static_cast<std::size_t>(shape_numel(shape));
  impl_->shape = std::move(shape);
  impl_->data.assign(n, fill);
}

template <typename Scalar>
Tensor<Scalar>::Tensor(Shape shape, std::vector<Scalar> values)
    : impl_(std::make_shared<detail::TensorImpl<Scalar>>()) {
  if (shape_numel(shape) != static_cast<Index>(values.size())) {
    throw DimensionError("shape " + shape_str(shape) + " does not match " +
                         std::to_string(values.size()) + " values");
  }
  impl_->shape = std::move(shape);
  impl_->data = std::move(values);
}

template <typename Scalar>
detail::TensorImpl<Scalar>& Tensor<Scalar>::impl() {
  if (!impl_) throw std::logic_error("use of undefined tensor");
  return *impl_;
}

template <typename Scalar>
const detail::TensorImpl<Scalar>& Tensor<Scalar>::impl() const {
  if (!impl_) throw std::logic_error("use of undefined tensor");
  return *impl_;
}

template <typename Scalar>
Tensor<Scalar> Tensor<Scalar>::from_impl(std::shared_ptr<detail::TensorImpl<Scalar>> impl) {
  Tensor t;
  t.impl_ = std::move(impl);
  return t;
}

template <typename Scalar>
Index Tensor<Scalar>::dim(int axis) const {
  const int n = ndim();
  if (axis < 0) axis += n;
  if (axis < 0 || axis >= n) {
    throw DimensionError("axis " + std::to_string(axis) + " out of range for shape " +
                         shape_str(shape()));
  }
  return impl().shape[static_cast<std::size_t>(axis)];
}

template <typename Scalar>
Scalar& Tensor<Scalar>::at(std::initializer_list<Index> index) {
  const auto& s = shape();
  if (index.size() != s.size()) throw DimensionError("index rank mismatch for " + shape_str(s));
  Index flat = 0;
  std::size_t axis = 0;
  for (Index i : index) {
    if (i < 0 || i >= s[axis]) throw DimensionError("index out of range for " + shape_str(s));
    flat = flat * s[axis] + i;
    ++axis;
  }
  return impl().data[static_cast<std::size_t>(flat)];
}

template <typename Scalar>
Scalar Tensor<Scalar>::at(std::initializer_list<Index> index) const {
  return const_cast<Tensor*>(this)->at(index);
}

template <typename Scalar>
Scalar Tensor<Scalar>::item() const {
  if (numel() != 1) throw DimensionError("item() on tensor of shape " + shape_str(shape()));
  return impl().data[0];
}

template <typename Scalar>
Tensor<Scalar>& Tensor<Scalar>::set_requires_grad(bool flag) {
  if (!is_leaf()) throw std::logic_error("requires_grad can only be set on leaf tensors");
  impl().requires_grad = flag;
  return *this;
}

template <typename Scalar>
std::vector<Scalar> Tensor<Scalar>::grad() const {
  if (impl().grad.empty()) return std::vector<Scalar>(impl().data.size(), Scalar(0));
  return impl().grad;
}

template <typename Scalar>
Tensor<Scalar> Tensor<Scalar>::clone() const {
  return Tensor(shape(), impl().data);
}

template <typename Scalar>
Tensor<Scalar> Tensor<Scalar>::reshape(Shape new_shape) const {
  if (shape_numel(new_shape) != numel()) {
    throw DimensionError("cannot reshape " + shape_str(shape()) + " to " + shape_str(new_shape));
  }
  detail::OpBuilder<Scalar> op("reshape", {this});
  Tensor self = *this;
  return op.finish(std::move(new_shape), impl().data, [self](std::span<const Scalar> g) {
    auto dst = detail::grad_of(self);
    for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
  });
}

template <typename Scalar>
const std::string& Tensor<Scalar>::op_name() const {
  static const std::string leaf = "leaf";
  return impl().grad_fn ? impl().grad_fn->op : leaf;
}

template <typename Scalar>
void Tensor<Scalar>::backward() const {
  if (numel() != 1) {
    throw DimensionError("backward() requires a scalar, got shape " + shape_str(shape()));
  }
  using ImplPtr = detail::TensorImpl<Scalar>*;

  // Iterative post-order DFS gives a topological order of the reachable graph.
  std::vector<ImplPtr> order;
  std::unordered_set<ImplPtr> visited;
  std::vector<std::pair<ImplPtr, std::size_t>> stack;
  auto* root = impl_.get();
  stack.emplace_back(root, 0);
  visited.insert(root);
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    const auto& fn = node->grad_fn;
    if (fn && next < fn->inputs.size()) {
      auto* child = fn->inputs[next++].get();
      if (child->requires_grad && visited.insert(child).second) stack.emplace_back(child, 0);
      continue;
    }
    order.push_back(node);
    stack.pop_back();
  }

  // Intermediate buffers restart from zero; leaves accumulate.
  for (auto* t : order) {
    if (t->grad_fn) t->grad.assign(t->data.size(), Scalar(0));
  }
  root->grad_buffer()[0] += Scalar(1);

  const std::string& corrupt = gradient_corruption_target();
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    auto* t = *it;
    if (!t->grad_fn || !t->grad_fn->backward) continue;
    std::span<const Scalar> g = t->grad;
    std::vector<Scalar> corrupted;
    if (!corrupt.empty() && t->grad_fn->op == corrupt) {
      corrupted.assign(g.begin(), g.end());
      for (auto& v : corrupted) v *= Scalar(1.25);
      g = corrupted;
    }
    t->grad_fn->backward(g);
    for (auto& input : t->grad_fn->inputs) {
      if (input->requires_grad && !input->grad.empty()) {
        detail::check_finite<Scalar>(t->grad_fn->op + " (backward)", input->grad);
      }
    }
  }
}

namespace detail {

template <typename Scalar>
OpBuilder<Scalar>::OpBuilder(std::string op, std::initializer_list<const Tensor<Scalar>*> inputs)
    : op_(std::move(op)) {
  if (!grad_mode_enabled()) return;
  for (const auto* t : inputs) {
    if (t && t->defined() && t->requires_grad()) records_ = true;
  }
  if (records_) {
    for (const auto* t : inputs) {
      if (t && t->defined()) inputs_.push_back(t->impl_ptr());
    }
  }
}

template <typename Scalar>
Tensor<Scalar> OpBuilder<Scalar>::finish(Shape shape, std::vector<Scalar> values,
                                         std::function<void(std::span<const Scalar>)> backward) {
  check_finite<Scalar>(op_, values);
  Tensor<Scalar> out(std::move(shape), std::move(values));
  if (records_ && backward) {
    auto node = std::make_shared<Node<Scalar>>();
    node->op = op_;
    node->inputs = std::move(inputs_);
    node->backward = std::move(backward);
    out.impl().grad_fn = std::move(node);
    out.impl().requires_grad = true;
  }
  return out;
}

template <typename Scalar>
void check_finite(std::string_view op, std::span<const Scalar> values) {
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!std::isfinite(values[i])) {
      throw NonFiniteError("non-finite value " + std::to_string(values[i]) + " at element " +
                           std::to_string(i) + " produced by " + std::string(op));
    }
  }
}

template class OpBuilder<float>;
template class OpBuilder<double>;
template void check_finite<float>(std::string_view, std::span<const float>);
template void check_finite<double>(std::string_view, std::span<const double>);

}  // namespace detail

template class Tensor<float>;
template class Tensor<double>;

}  // namespace fuseret
