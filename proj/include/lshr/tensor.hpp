#pragma once

#include <atomic>
#include <type_traits>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <sstream>
#include <unordered_map>
#include <vector>

#include "lshr/errors.hpp"

namespace lshr {

// Canonical image layout is batch x channels x height x width.
using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << "]";
  return os.str();
}

namespace detail {

std::uint64_t next_tensor_id();

template <typename T>
struct TensorImpl {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;  // allocated lazily by Tape::backward
  bool requires_grad = false;
  std::uint64_t id = next_tensor_id();
};

}  // namespace detail

// Dense tensor handle with shared storage. Copies alias the same buffer;
// use clone() for a deep copy. Tensors produced by ops are treated as
// immutable; parameter tensors are mutated in place by the optimizer
// between tapes.
template <typename T>
class Tensor {
 public:
  using Impl = detail::TensorImpl<T>;

  Tensor() = default;

  explicit Tensor(Shape shape, T fill = T(0)) : impl_(std::make_shared<Impl>()) {
    validate_shape(shape);
    impl_->shape = std::move(shape);
    impl_->data.assign(shape_numel(impl_->shape), fill);
  }

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape), T(0)); }
  static Tensor full(Shape shape, T v) { return Tensor(std::move(shape), v); }

  static Tensor from_vector(Shape shape, std::vector<T> values) {
    if (shape_numel(shape) != values.size()) {
      throw ShapeError("from_vector: shape " + shape_str(shape) + " wants " +
                       std::to_string(shape_numel(shape)) + " values, got " +
                       std::to_string(values.size()));
    }
    Tensor t;
    t.impl_ = std::make_shared<Impl>();
    validate_shape(shape);
    t.impl_->shape = std::move(shape);
    t.impl_->data = std::move(values);
    return t;
  }

  bool defined() const { return impl_ != nullptr; }

  const Shape& shape() const { return impl_->shape; }
  std::size_t rank() const { return impl_->shape.size(); }
  std::size_t dim(std::size_t i) const { return impl_->shape.at(i); }
  std::size_t size() const { return impl_->data.size(); }

  T* data() { return impl_->data.data(); }
  const T* data() const { return impl_->data.data(); }
  std::vector<T>& vec() { return impl_->data; }
  const std::vector<T>& vec() const { return impl_->data; }

  T& operator[](std::size_t i) { return impl_->data[i]; }
  const T& operator[](std::size_t i) const { return impl_->data[i]; }

  // 4-d convenience accessor for the canonical layout.
  T& at(std::size_t b, std::size_t c, std::size_t y, std::size_t x) {
    const Shape& s = impl_->shape;
    return impl_->data[((b * s[1] + c) * s[2] + y) * s[3] + x];
  }
  const T& at(std::size_t b, std::size_t c, std::size_t y, std::size_t x) const {
    const Shape& s = impl_->shape;
    return impl_->data[((b * s[1] + c) * s[2] + y) * s[3] + x];
  }

  bool requires_grad() const { return impl_ && impl_->requires_grad; }
  Tensor& set_requires_grad(bool rg) {
    impl_->requires_grad = rg;
    return *this;
  }

  std::uint64_t id() const { return impl_->id; }

  bool has_grad() const { return impl_ && !impl_->grad.empty(); }

  // Copy of the gradient accumulated by the last backward pass.
  Tensor grad() const {
    if (!has_grad()) return Tensor();
    return from_vector(impl_->shape, impl_->grad);
  }

  // Deep copy with fresh identity.
  Tensor clone() const {
    Tensor t = from_vector(impl_->shape, impl_->data);
    t.impl_->requires_grad = impl_->requires_grad;
    return t;
  }

  std::shared_ptr<Impl> impl() const { return impl_; }

 private:
  static void validate_shape(const Shape& shape) {
    for (std::size_t i = 0; i < shape.size(); ++i) {
      if (shape[i] == 0)
        throw ShapeError("tensor extent " + std::to_string(i) + " must be >= 1");
    }
  }

  std::shared_ptr<Impl> impl_;
};

template <typename T>
using GradientMap = std::unordered_map<std::uint64_t, Tensor<T>>;

// Ordered record of the differentiable ops executed during one forward
// pass. A tape lives for exactly one training step; backward visits each
// recorded op once, in reverse execution order, accumulating gradients
// into every input (which is what makes shared weights sum their
// contributions across use sites).
template <typename T>
class Tape {
 public:
  using ImplPtr = std::shared_ptr<detail::TensorImpl<T>>;

  void record(std::vector<ImplPtr> inputs, ImplPtr output, std::function<void()> backward) {
    nodes_.push_back(Node{std::move(inputs), std::move(output), std::move(backward)});
  }

  std::size_t size() const { return nodes_.size(); }
  void clear() { nodes_.clear(); }

  // Runs reverse-mode accumulation from a scalar loss. Returns the
  // gradients of every requires_grad leaf (tensor id -> gradient).
  // Gradients also stay readable through Tensor::grad() until the next
  // backward call touching the same tensors.
  GradientMap<T> backward(const Tensor<T>& loss);

 private:
  struct Node {
    std::vector<ImplPtr> inputs;
    ImplPtr output;
    std::function<void()> backward;
  };
  std::vector<Node> nodes_;
};

template <typename T>
GradientMap<T> Tape<T>::backward(const Tensor<T>& loss) {
  if (nodes_.empty()) throw UsageError("backward on an empty tape");
  if (!loss.defined() || loss.size() != 1)
    throw UsageError("backward requires a scalar loss, got " +
                     (loss.defined() ? shape_str(loss.shape()) : std::string("undefined")));

  // Fresh gradient buffers for every tensor this tape touches.
  std::unordered_map<detail::TensorImpl<T>*, ImplPtr> touched;
  for (const Node& n : nodes_) {
    touched.emplace(n.output.get(), n.output);
    for (const ImplPtr& in : n.inputs) touched.emplace(in.get(), in);
  }
  for (auto& [ptr, impl] : touched) impl->grad.assign(impl->data.size(), T(0));

  auto loss_impl = loss.impl();
  if (!touched.count(loss_impl.get()))
    throw UsageError("loss tensor was not produced by an op recorded on this tape");
  loss_impl->grad.assign(1, T(1));

  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) it->backward();

  std::unordered_map<detail::TensorImpl<T>*, bool> produced;
  for (const Node& n : nodes_) produced[n.output.get()] = true;

  GradientMap<T> grads;
  for (const Node& n : nodes_) {
    for (const ImplPtr& in : n.inputs) {
      if (!in->requires_grad || produced.count(in.get())) continue;
      if (!grads.count(in->id))
        grads.emplace(in->id, Tensor<T>::from_vector(in->shape, in->grad));
    }
  }
  return grads;
}

// When enabled, every forward op checks its output for NaN/Inf and
// throws. Off by default; verification suites switch it on.
void set_verify_finite(bool on);
bool verify_finite_enabled();

}  // namespace lshr
