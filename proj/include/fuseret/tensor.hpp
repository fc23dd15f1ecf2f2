#pragma once

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace fuseret {

using Index = std::int64_t;
using Shape = std::vector<Index>;

/// Raised when tensor extents do not fit an operation.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised when a forward or backward pass produces NaN or Inf.
class NonFiniteError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

Index shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

template <typename Scalar>
using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Scalar>
using MatrixMap = Eigen::Map<RowMatrix<Scalar>>;
template <typename Scalar>
using ConstMatrixMap = Eigen::Map<const RowMatrix<Scalar>>;
template <typename Scalar>
using VectorMap = Eigen::Map<Eigen::Array<Scalar, Eigen::Dynamic, 1>>;
template <typename Scalar>
using ConstVectorMap = Eigen::Map<const Eigen::Array<Scalar, Eigen::Dynamic, 1>>;

namespace detail {

template <typename Scalar>
struct TensorImpl;

// One recorded operation. The node is owned by the tensor it produced and
// keeps its inputs alive; backward receives the gradient of that output.
template <typename Scalar>
struct Node {
  std::string op;
  std::vector<std::shared_ptr<TensorImpl<Scalar>>> inputs;
  std::function<void(std::span<const Scalar> grad_out)> backward;
};

template <typename Scalar>
struct TensorImpl {
  Shape shape;
  std::vector<Scalar> data;
  std::vector<Scalar> grad;
  bool requires_grad = false;
  std::shared_ptr<Node<Scalar>> grad_fn;

  std::vector<Scalar>& grad_buffer() {
    if (grad.empty()) grad.assign(data.size(), Scalar(0));
    return grad;
  }
};

}  // namespace detail

/// Disables graph recording on the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_mode_enabled();

/// Dense row-major n-dimensional array with reverse-mode autodiff.
///
/// A Tensor is a shared handle: copies alias the same storage, matching how
/// parameters are passed around and updated in place by the optimizer.
/// Use clone() for an independent copy. Channels live on axis 1 for every
/// batched image or volume ([N, C, ...]).
template <typename Scalar>
class Tensor {
 public:
  using scalar_type = Scalar;

  Tensor() = default;
  explicit Tensor(Shape shape, Scalar fill = Scalar(0));
  Tensor(Shape shape, std::vector<Scalar> values);

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape), Scalar(0)); }
  static Tensor ones(Shape shape) { return Tensor(std::move(shape), Scalar(1)); }
  static Tensor scalar(Scalar value) { return Tensor(Shape{}, value); }

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl().shape; }
  Index dim(int axis) const;
  int ndim() const { return static_cast<int>(impl().shape.size()); }
  Index numel() const { return static_cast<Index>(impl().data.size()); }

  std::span<Scalar> data() { return impl().data; }
  std::span<const Scalar> data() const { return impl().data; }
  Scalar& operator[](Index i) { return impl().data[static_cast<std::size_t>(i)]; }
  Scalar operator[](Index i) const { return impl().data[static_cast<std::size_t>(i)]; }
  Scalar& at(std::initializer_list<Index> index);
  Scalar at(std::initializer_list<Index> index) const;
  Scalar item() const;

  VectorMap<Scalar> array() { return {impl().data.data(), numel()}; }
  ConstVectorMap<Scalar> array() const { return {impl().data.data(), numel()}; }

  bool requires_grad() const { return impl().requires_grad; }
  Tensor& set_requires_grad(bool flag);
  bool is_leaf() const { return impl().grad_fn == nullptr; }
  bool has_grad() const { return !impl().grad.empty(); }
  /// Gradient values; all zeros when no backward pass has reached this tensor.
  std::vector<Scalar> grad() const;
  std::span<Scalar> grad_span() { return impl().grad_buffer(); }
  Tensor grad_tensor() const { return Tensor(shape(), grad()); }
  void zero_grad() { impl().grad.clear(); }

  /// Reverse-mode pass from this scalar. Leaf gradients accumulate across calls.
  void backward() const;

  Tensor clone() const;
  Tensor detach() const { return clone(); }
  Tensor reshape(Shape shape) const;

  const std::string& op_name() const;

  detail::TensorImpl<Scalar>& impl();
  const detail::TensorImpl<Scalar>& impl() const;
  const std::shared_ptr<detail::TensorImpl<Scalar>>& impl_ptr() const { return impl_; }

  static Tensor from_impl(std::shared_ptr<detail::TensorImpl<Scalar>> impl);

 private:
  std::shared_ptr<detail::TensorImpl<Scalar>> impl_;
};

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

template <typename To, typename From>
Tensor<To> cast(const Tensor<From>& t) {
  std::vector<To> values(t.data().begin(), t.data().end());
  return Tensor<To>(t.shape(), std::move(values));
}

namespace detail {

// Build the result of an op. When grad mode is on and any input needs a
// gradient, the output carries a node named `op` whose backward is supplied
// by the caller through attach().
template <typename Scalar>
class OpBuilder {
 public:
  OpBuilder(std::string op, std::initializer_list<const Tensor<Scalar>*> inputs);

  bool records() const { return records_; }
  Tensor<Scalar> finish(Shape shape, std::vector<Scalar> values,
                        std::function<void(std::span<const Scalar>)> backward = {});

 private:
  std::string op_;
  std::vector<std::shared_ptr<TensorImpl<Scalar>>> inputs_;
  bool records_ = false;
};

template <typename Scalar>
void check_finite(std::string_view op, std::span<const Scalar> values);

// Accumulate into an input's gradient buffer (allocated on first use).
template <typename Scalar>
std::span<Scalar> grad_of(const Tensor<Scalar>& t) {
  return const_cast<Tensor<Scalar>&>(t).grad_span();
}

}  // namespace detail

}  // namespace fuseret
