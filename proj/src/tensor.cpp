#include "surfuse/tensor.hpp"

#include <algorithm>
#include <sstream>

namespace surfuse {

Index numel(const Shape& shape) {
  Index n = 1;
  for (Index d : shape) n *= d;
  return n;
}

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

namespace {

void check_shape(const Shape& shape) {
  if (shape.empty()) throw DimensionError("tensor shape must have at least one axis");
  for (Index d : shape) {
    if (d <= 0) throw DimensionError("tensor extents must be positive, got " + to_string(shape));
  }
}

template <typename Scalar>
Tape<Scalar>*& active_slot() {
  thread_local Tape<Scalar>* slot = nullptr;
  return slot;
}

}  // namespace

template <typename Scalar>
Tensor<Scalar>::Tensor(Shape shape) : s_(std::make_shared<Storage>()) {
  check_shape(shape);
  s_->data.assign(static_cast<std::size_t>(numel(shape)), Scalar(0));
  s_->shape = std::move(shape);
}

template <typename Scalar>
Tensor<Scalar>::Tensor(Shape shape, std::vector<Scalar> values, bool requires_grad)
    : s_(std::make_shared<Storage>()) {
  check_shape(shape);
  if (numel(shape) != static_cast<Index>(values.size())) {
    throw DimensionError("shape " + to_string(shape) + " does not match " + std::to_string(values.size()) +
                         " values");
  }
  s_->shape = std::move(shape);
  s_->data.assign(values.begin(), values.end());
  set_requires_grad(requires_grad);
}

template <typename Scalar>
Tensor<Scalar> Tensor<Scalar>::full(Shape shape, Scalar value) {
  Tensor t(std::move(shape));
  std::fill(t.s_->data.begin(), t.s_->data.end(), value);
  return t;
}

template <typename Scalar>
Index Tensor<Scalar>::dim(Index axis) const {
  const Index r = rank();
  if (axis < 0) axis += r;
  if (axis < 0 || axis >= r) throw DimensionError("axis out of range for shape " + to_string(shape()));
  return s_->shape[static_cast<std::size_t>(axis)];
}

template <typename Scalar>
Scalar Tensor<Scalar>::item() const {
  if (size() != 1) throw DimensionError("item() on tensor of shape " + to_string(shape()));
  return s_->data[0];
}

template <typename Scalar>
void Tensor<Scalar>::set_requires_grad(bool on) {
  s_->requires_grad = on;
  if (on && s_->grad.size() != s_->data.size()) s_->grad.assign(s_->data.size(), Scalar(0));
  if (!on) s_->grad.clear();
}

template <typename Scalar>
void Tensor<Scalar>::zero_grad() const {
  std::fill(s_->grad.begin(), s_->grad.end(), Scalar(0));
  s_->grad_touched = false;
}

template <typename Scalar>
void Tensor<Scalar>::accumulate_grad(std::span<const Scalar> g) const {
  if (!s_->requires_grad) throw UsageError("accumulate_grad on a tensor that does not require grad");
  if (g.size() != s_->grad.size()) throw DimensionError("gradient size mismatch for " + to_string(shape()));
  for (std::size_t i = 0; i < g.size(); ++i) s_->grad[i] += g[i];
  s_->grad_touched = true;
}

template <typename Scalar>
MatrixMap<Scalar> Tensor<Scalar>::matrix(Index cols) {
  return MatrixMap<Scalar>(s_->data.data(), size() / cols, cols);
}

template <typename Scalar>
ConstMatrixMap<Scalar> Tensor<Scalar>::matrix(Index cols) const {
  return ConstMatrixMap<Scalar>(s_->data.data(), size() / cols, cols);
}

template <typename Scalar>
MatrixMap<Scalar> Tensor<Scalar>::grad_matrix(Index cols) const {
  s_->grad_touched = true;
  return MatrixMap<Scalar>(s_->grad.data(), size() / cols, cols);
}

template <typename Scalar>
Tensor<Scalar> Tensor<Scalar>::clone() const {
  Tensor t(shape(), std::vector<Scalar>(s_->data.begin(), s_->data.end()), s_->requires_grad);
  if (s_->requires_grad) t.s_->grad = s_->grad;
  return t;
}

template <typename Scalar>
Tape<Scalar>::Tape() : previous_(active_slot<Scalar>()) {
  active_slot<Scalar>() = this;
}

template <typename Scalar>
Tape<Scalar>::~Tape() {
  active_slot<Scalar>() = previous_;
}

template <typename Scalar>
Tape<Scalar>* Tape<Scalar>::active() {
  return active_slot<Scalar>();
}

template <typename Scalar>
void Tape<Scalar>::record(std::vector<Tensor<Scalar>> inputs, Tensor<Scalar>& output, BackwardFn fn) {
  output.set_requires_grad(true);
  output.set_producer(this, nodes_.size());
  nodes_.push_back(Node{std::move(inputs), output, std::move(fn)});
}

template <typename Scalar>
bool should_record(std::initializer_list<const Tensor<Scalar>*> inputs) {
  if (Tape<Scalar>::active() == nullptr) return false;
  return std::any_of(inputs.begin(), inputs.end(),
                     [](const Tensor<Scalar>* t) { return t != nullptr && t->defined() && t->requires_grad(); });
}

template <typename Scalar>
void backward(const Tensor<Scalar>& loss, Tape<Scalar>& tape) {
  if (!loss.defined() || loss.size() != 1) throw UsageError("backward() needs a scalar loss");
  const std::size_t start = loss.producer_node();
  if (loss.producer_tape() != &tape || start >= tape.size() ||
      !tape.node(start).output.same_storage(loss)) {
    throw UsageError("loss was not recorded on this tape");
  }
  Tensor<Scalar> seed = loss;
  seed.grad()[0] += Scalar(1);
  seed.mark_grad_touched();
  for (std::size_t i = start + 1; i-- > 0;) {
    const auto& node = tape.node(i);
    if (node.output.grad_touched()) node.backward();
  }
}

template class Tensor<float>;
template class Tensor<double>;
template class Tape<float>;
template class Tape<double>;
template bool should_record<float>(std::initializer_list<const Tensor<float>*>);
template bool should_record<double>(std::initializer_list<const Tensor<double>*>);
template void backward<float>(const Tensor<float>&, Tape<float>&);
template void backward<double>(const Tensor<double>&, Tape<double>&);

}  // namespace surfuse
