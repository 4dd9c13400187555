#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace voxseg {

using Index = std::int64_t;
using Shape = std::vector<Index>;

Index shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {

template <typename T>
struct TensorData {
  Shape shape;
  std::vector<T> values;
  std::vector<T> grad;  // empty until first accumulation
  bool requires_grad = false;
  bool produced_on_tape = false;
};

}  // namespace detail

// Dense row-major tensor with shared ownership. Copies alias the same
// storage; use clone() for a deep copy.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T(0));
  Tensor(Shape shape, std::vector<T> values);

  static Tensor scalar(T value) { return Tensor(Shape{1}, std::vector<T>{value}); }

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  Index dim(std::size_t axis) const { return impl_->shape.at(axis); }
  std::size_t rank() const { return impl_->shape.size(); }
  Index numel() const { return static_cast<Index>(impl_->values.size()); }

  std::span<const T> data() const { return impl_->values; }
  std::span<T> mutable_data() { return impl_->values; }
  T item() const;
  T operator[](Index i) const { return impl_->values[static_cast<std::size_t>(i)]; }

  bool requires_grad() const { return impl_->requires_grad; }
  Tensor& set_requires_grad(bool on = true);

  bool has_grad() const { return !impl_->grad.empty(); }
  std::span<const T> grad() const { return impl_->grad; }
  // Grad buffer, allocated (zero) on first use. Const because a tensor is a
  // handle and gradient accumulation is the one permitted mutation.
  std::span<T> mutable_grad() const;
  void zero_grad() const;

  Tensor clone() const;
  bool same_storage(const Tensor& other) const { return impl_ == other.impl_; }

  detail::TensorData<T>* impl() const { return impl_.get(); }

 private:
  std::shared_ptr<detail::TensorData<T>> impl_;
};

// Ordered record of differentiable operations. A tape becomes the active
// tape of the constructing thread and stops recording when destroyed.
// Operations whose inputs require gradients append a backward rule.
template <typename T>
class Tape {
 public:
  using Rule = std::function<void()>;

  Tape();
  ~Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  static Tape* active();

  /// Appends an operation; `output` is marked as requiring gradients.
  void record(std::vector<Tensor<T>> inputs, Tensor<T> output, Rule rule);

  // Seeds d(loss)/d(loss) = 1 and sweeps the tape once in reverse order.
  // Leaf gradients accumulate across calls; intermediate gradients are
  // reset at the start of every sweep.
  void backward(const Tensor<T>& loss);

  std::size_t size() const { return nodes_.size(); }
  void clear() { nodes_.clear(); }

 private:
  struct Node {
    std::vector<Tensor<T>> inputs;
    Tensor<T> output;
    Rule rule;
  };
  std::vector<Node> nodes_;
  Tape* previous_ = nullptr;
};

/// True when an active tape exists and any input requires gradients.
template <typename T>
bool should_record(std::initializer_list<const Tensor<T>*> inputs);

extern template class Tensor<float>;
extern template class Tensor<double>;
extern template class Tape<float>;
extern template class Tape<double>;

}  // namespace voxseg
