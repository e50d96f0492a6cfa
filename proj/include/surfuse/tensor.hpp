#pragma once

#include <Eigen/Core>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "surfuse/error.hpp"

namespace surfuse {

using Index = Eigen::Index;
using Shape = std::vector<Index>;

Index numel(const Shape& shape);
std::string to_string(const Shape& shape);

template <typename Scalar>
using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Scalar>
using MatrixMap = Eigen::Map<RowMatrix<Scalar>>;
template <typename Scalar>
using ConstMatrixMap = Eigen::Map<const RowMatrix<Scalar>>;

template <typename Scalar>
class Tape;

/// Dense row-major array with optional gradient. Copies are shallow handles onto the
/// same storage, which is how parameters and layer views share values; use clone()
/// for a value copy.
template <typename Scalar>
class Tensor {
 public:
  Tensor() = default;

  /// Zero-filled. No requires_grad flag here: with one, Tensor({1}, {v}) would bind
  /// {v} to the bool and silently build a zero tensor.
  explicit Tensor(Shape shape);
  Tensor(Shape shape, std::vector<Scalar> values, bool requires_grad = false);

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
  static Tensor full(Shape shape, Scalar value);
  static Tensor scalar(Scalar value) { return full({1}, value); }

  bool defined() const { return static_cast<bool>(s_); }
  const Shape& shape() const { return s_->shape; }
  Index rank() const { return static_cast<Index>(s_->shape.size()); }
  Index dim(Index axis) const;
  Index size() const { return static_cast<Index>(s_->data.size()); }

  std::span<Scalar> data() { return s_->data; }
  std::span<const Scalar> data() const { return s_->data; }
  Scalar* ptr() { return s_->data.data(); }
  const Scalar* ptr() const { return s_->data.data(); }
  Scalar& operator[](Index i) { return s_->data[static_cast<std::size_t>(i)]; }
  Scalar operator[](Index i) const { return s_->data[static_cast<std::size_t>(i)]; }
  Scalar item() const;

  bool requires_grad() const { return s_ && s_->requires_grad; }
  void set_requires_grad(bool on);
  bool has_grad() const { return s_ && !s_->grad.empty(); }
  // Gradient buffers are bookkeeping on the shared storage, so they stay writable
  // through const handles (backward rules capture their inputs by value).
  std::span<Scalar> grad() const { return s_->grad; }
  void zero_grad() const;

  /// Adds g into the gradient buffer; the tensor must require grad.
  void accumulate_grad(std::span<const Scalar> g) const;
  Scalar* grad_ptr() const { return s_->grad.data(); }
  bool grad_touched() const { return s_->grad_touched; }
  void mark_grad_touched() const { s_->grad_touched = true; }

  /// View the data as a (size / cols) x cols row-major matrix.
  MatrixMap<Scalar> matrix(Index cols);
  ConstMatrixMap<Scalar> matrix(Index cols) const;
  MatrixMap<Scalar> grad_matrix(Index cols) const;

  Tensor clone() const;
  /// Value copy that never participates in gradients.
  Tensor detach() const { return Tensor(shape(), std::vector<Scalar>(s_->data.begin(), s_->data.end())); }
  bool same_storage(const Tensor& other) const { return s_ == other.s_; }

  // Tape bookkeeping.
  const void* producer_tape() const { return s_->tape; }
  std::size_t producer_node() const { return s_->node; }
  void set_producer(const void* tape, std::size_t node) {
    s_->tape = tape;
    s_->node = node;
  }

 private:
  // Eigen's vector kernels peel a scalar head up to the first aligned address, which
  // changes the summation order. Aligned buffers make that split the same every run.
  using Buffer = std::vector<Scalar, Eigen::aligned_allocator<Scalar>>;
  struct Storage {
    Shape shape;
    Buffer data;
    Buffer grad;
    bool requires_grad = false;
    bool grad_touched = false;
    const void* tape = nullptr;
    std::size_t node = 0;
  };
  std::shared_ptr<Storage> s_;
};

/// Append-only record of differentiable operations. Constructing a tape makes it the
/// active tape of the calling thread until it is destroyed; ops whose inputs require
/// grad record onto the active tape, and record nothing when no tape is active.
template <typename Scalar>
class Tape {
 public:
  using BackwardFn = std::function<void()>;

  struct Node {
    std::vector<Tensor<Scalar>> inputs;
    Tensor<Scalar> output;
    BackwardFn backward;
  };

  Tape();
  ~Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  static Tape* active();

  void record(std::vector<Tensor<Scalar>> inputs, Tensor<Scalar>& output, BackwardFn fn);
  std::size_t size() const { return nodes_.size(); }
  const Node& node(std::size_t i) const { return nodes_[i]; }
  void clear() { nodes_.clear(); }

 private:
  std::vector<Node> nodes_;
  Tape* previous_ = nullptr;
};

/// True when at least one input requires grad and a tape is active.
template <typename Scalar>
bool should_record(std::initializer_list<const Tensor<Scalar>*> inputs);

/// Reverse sweep from a scalar loss. Gradients accumulate; zero them between steps.
template <typename Scalar>
void backward(const Tensor<Scalar>& loss, Tape<Scalar>& tape);

extern template class Tensor<float>;
extern template class Tensor<double>;
extern template class Tape<float>;
extern template class Tape<double>;

}  // namespace surfuse
