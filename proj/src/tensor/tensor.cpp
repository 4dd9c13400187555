#include "voxseg/tensor.hpp"

#include <algorithm>
#include <sstream>

#include "voxseg/errors.hpp"

namespace voxseg {

Index shape_numel(const Shape& shape) {
  Index n = 1;
  for (Index d : shape) {
    if (d <= 0) throw ShapeError("non-positive extent in shape " + shape_str(shape));
    n *= d;
  }
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

template <typename T>
Tensor<T>::Tensor(Shape shape, T fill) : impl_(std::make_shared<detail::TensorData<T>>()) {
  const Index n = shape_numel(shape);
  impl_->shape = std::move(shape);
  impl_->values.assign(static_cast<std::size_t>(n), fill);
}

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> values)
    : impl_(std::make_shared<detail::TensorData<T>>()) {
  const Index n = shape_numel(shape);
  if (static_cast<Index>(values.size()) != n) {
    throw ShapeError("tensor data length " + std::to_string(values.size()) +
                     " does not match shape " + shape_str(shape));
  }
  impl_->shape = std::move(shape);
  impl_->values = std::move(values);
}

template <typename T>
T Tensor<T>::item() const {
  if (numel() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape()));
  return impl_->values[0];
}

template <typename T>
Tensor<T>& Tensor<T>::set_requires_grad(bool on) {
  impl_->requires_grad = on;
  return *this;
}

template <typename T>
std::span<T> Tensor<T>::mutable_grad() const {
  if (impl_->grad.empty()) impl_->grad.assign(impl_->values.size(), T(0));
  return impl_->grad;
}

template <typename T>
void Tensor<T>::zero_grad() const {
  std::fill(impl_->grad.begin(), impl_->grad.end(), T(0));
}

template <typename T>
Tensor<T> Tensor<T>::clone() const {
  Tensor out(impl_->shape, impl_->values);
  out.impl_->requires_grad = impl_->requires_grad;
  return out;
}

namespace {

template <typename T>
Tape<T>*& active_tape() {
  thread_local Tape<T>* tape = nullptr;
  return tape;
}

}  // namespace

template <typename T>
Tape<T>::Tape() : previous_(active_tape<T>()) {
  active_tape<T>() = this;
}

template <typename T>
Tape<T>::~Tape() {
  active_tape<T>() = previous_;
}

template <typename T>
Tape<T>* Tape<T>::active() {
  return active_tape<T>();
}

template <typename T>
void Tape<T>::record(std::vector<Tensor<T>> inputs, Tensor<T> output, Rule rule) {
  output.impl()->requires_grad = true;
  output.impl()->produced_on_tape = true;
  nodes_.push_back(Node{std::move(inputs), std::move(output), std::move(rule)});
}

template <typename T>
void Tape<T>::backward(const Tensor<T>& loss) {
  if (!loss.defined() || loss.numel() != 1) {
    throw ShapeError("backward requires a scalar loss, got shape " +
                     (loss.defined() ? shape_str(loss.shape()) : std::string("<undefined>")));
  }
  for (auto& node : nodes_) {
    auto& g = node.output.impl()->grad;
    std::fill(g.begin(), g.end(), T(0));
  }
  Tensor<T> seed = loss;
  if (loss.impl()->produced_on_tape) {
    seed.mutable_grad()[0] = T(1);
  } else if (loss.requires_grad()) {
    seed.mutable_grad()[0] += T(1);
    return;
  } else {
    throw Error("backward: loss does not depend on any tensor requiring gradients");
  }
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    if (!it->output.has_grad()) continue;
    it->rule();
  }
}

template <typename T>
bool should_record(std::initializer_list<const Tensor<T>*> inputs) {
  if (Tape<T>::active() == nullptr) return false;
  for (const Tensor<T>* t : inputs) {
    if (t != nullptr && t->defined() && t->requires_grad()) return true;
  }
  return false;
}

template class Tensor<float>;
template class Tensor<double>;
template class Tape<float>;
template class Tape<double>;
template bool should_record<float>(std::initializer_list<const Tensor<float>*>);
template bool should_record<double>(std::initializer_list<const Tensor<double>*>);

}  // namespace voxseg
