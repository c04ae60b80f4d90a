#pragma once

#include <functional>
#include <initializer_list>
#include <memory>
#include <sstream>
#include <string>
#include <unordered_set>
#include <vector>

#include "graspdet/common.hpp"

namespace graspdet {

struct Shape {
  std::vector<int> d;

  Shape() = default;
  Shape(std::initializer_list<int> dims) : d(dims) {}
  explicit Shape(std::vector<int> dims) : d(std::move(dims)) {}

  int ndim() const { return static_cast<int>(d.size()); }
  int operator[](int i) const { return d[static_cast<std::size_t>(i)]; }

  long long count() const {
    long long n = 1;
    for (int v : d) n *= v;
    return n;
  }

  bool operator==(const Shape& o) const { return d == o.d; }
  bool operator!=(const Shape& o) const { return d != o.d; }

  std::string str() const {
    std::ostringstream os;
    for (std::size_t i = 0; i < d.size(); ++i) {
      if (i) os << "x";
      os << d[i];
    }
    return os.str();
  }
};

namespace detail {

template <typename S>
struct TensorImpl {
  Shape shape;
  ArrayX<S> value;
  ArrayX<S> grad;  // empty until first accumulation
  bool requires_grad = false;

  // Reverse-mode bookkeeping. parents keep the upstream subgraph alive;
  // backward_fn reads this->grad and accumulates into the parents' grads.
  std::vector<std::shared_ptr<TensorImpl<S>>> parents;
  std::function<void(TensorImpl<S>&)> backward_fn;

  ArrayX<S>& grad_buffer() {
    if (grad.size() == 0) grad = ArrayX<S>::Zero(value.size());
    return grad;
  }
};

// Thread-local autograd switch. Inference paths disable recording so that
// concurrent forward passes never touch shared graph state.
inline bool& grad_enabled_flag() {
  thread_local bool enabled = true;
  return enabled;
}

}  // namespace detail

struct NoGradGuard {
  NoGradGuard() : prev_(detail::grad_enabled_flag()) { detail::grad_enabled_flag() = false; }
  ~NoGradGuard() { detail::grad_enabled_flag() = prev_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

inline bool grad_enabled() { return detail::grad_enabled_flag(); }

// Dense NCHW tensor, scalar-templated. float is the training type; the same
// graph can be instantiated with double for finite-difference verification.
// A Tensor is a cheap shared handle: ops produce fresh tensors and treat
// their inputs as immutable; only leaf parameters are mutated in place (by
// the optimizer, through value()).
template <typename S>
class Tensor {
 public:
  using Scalar = S;

  Tensor() = default;

  static Tensor zeros(const Shape& shape, bool requires_grad = false) {
    return from_array(shape, ArrayX<S>::Zero(shape.count()), requires_grad);
  }

  static Tensor full(const Shape& shape, S v, bool requires_grad = false) {
    return from_array(shape, ArrayX<S>::Constant(shape.count(), v), requires_grad);
  }

  static Tensor scalar(S v, bool requires_grad = false) { return full(Shape{1}, v, requires_grad); }

  static Tensor from_array(const Shape& shape, ArrayX<S> data, bool requires_grad = false) {
    if (data.size() != shape.count())
      throw ShapeError("tensor data length " + std::to_string(data.size()) +
                       " does not match shape " + shape.str());
    auto impl = std::make_shared<detail::TensorImpl<S>>();
    impl->shape = shape;
    impl->value = std::move(data);
    impl->requires_grad = requires_grad;
    Tensor t;
    t.impl_ = std::move(impl);
    return t;
  }

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  long long size() const { return impl_->value.size(); }

  ArrayX<S>& value() { return impl_->value; }
  const ArrayX<S>& value() const { return impl_->value; }

  bool has_grad() const { return impl_->grad.size() != 0; }
  ArrayX<S>& grad() { return impl_->grad_buffer(); }
  const ArrayX<S>& grad() const { return const_cast<detail::TensorImpl<S>*>(impl_.get())->grad_buffer(); }
  void zero_grad() { if (impl_->grad.size() != 0) impl_->grad.setZero(); }

  bool requires_grad() const { return impl_->requires_grad; }
  void set_requires_grad(bool b) { impl_->requires_grad = b; }

  S item() const {
    if (size() != 1) throw ShapeError("item() on non-scalar tensor of shape " + shape().str());
    return impl_->value[0];
  }

  // Value copy with no graph attached.
  Tensor detached() const { return from_array(shape(), impl_->value, false); }

  template <typename T>
  Tensor<T> cast() const {
    return Tensor<T>::from_array(shape(), impl_->value.template cast<T>(), false);
  }

  std::shared_ptr<detail::TensorImpl<S>>& impl() { return impl_; }
  const std::shared_ptr<detail::TensorImpl<S>>& impl() const { return impl_; }

 private:
  std::shared_ptr<detail::TensorImpl<S>> impl_;
};

using Tensorf = Tensor<float>;
using Tensord = Tensor<double>;

namespace detail {

// Attaches graph metadata to an op output when recording is on and at least
// one input takes gradients.
template <typename S>
void record(Tensor<S>& out, std::vector<Tensor<S>> inputs,
            std::function<void(TensorImpl<S>&)> backward_fn) {
  if (!grad_enabled_flag()) return;
  bool any = false;
  for (const auto& t : inputs) any = any || t.requires_grad();
  if (!any) return;
  auto& impl = *out.impl();
  impl.requires_grad = true;
  impl.parents.reserve(inputs.size());
  for (auto& t : inputs) impl.parents.push_back(t.impl());
  impl.backward_fn = std::move(backward_fn);
}

template <typename S>
void accumulate(TensorImpl<S>& node, const ArrayX<S>& contribution) {
  if (!node.requires_grad) return;
  node.grad_buffer() += contribution;
}

}  // namespace detail

// Reverse pass from a scalar loss. Gradients accumulate into every tensor on
// the path whose requires_grad is set; calling backward twice without
// zero_grad adds the contributions.
template <typename S>
void backward(const Tensor<S>& loss) {
  if (loss.size() != 1)
    throw ShapeError("backward expects a scalar loss, got shape " + loss.shape().str());

  using Impl = detail::TensorImpl<S>;
  // Iterative post-order DFS over the recorded graph.
  std::vector<Impl*> order;
  std::unordered_set<Impl*> seen;
  struct Frame {
    Impl* node;
    std::size_t next_child;
  };
  std::vector<Frame> stack;
  Impl* root = loss.impl().get();
  if (seen.insert(root).second) stack.push_back({root, 0});
  while (!stack.empty()) {
    Frame& f = stack.back();
    if (f.next_child < f.node->parents.size()) {
      Impl* child = f.node->parents[f.next_child++].get();
      if (seen.insert(child).second) stack.push_back({child, 0});
    } else {
      order.push_back(f.node);
      stack.pop_back();
    }
  }

  root->grad_buffer()[0] += S(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Impl* node = *it;
    if (node->backward_fn && node->requires_grad) node->backward_fn(*node);
  }
}

}  // namespace graspdet
