#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <limits>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

namespace sar {

using Shape = std::vector<std::size_t>;
using NodeId = std::size_t;
inline constexpr NodeId kNoNode = std::numeric_limits<NodeId>::max();

std::size_t shape_size(const Shape& shape);
std::string shape_string(const Shape& shape);

class Tape;

// Dense row-major array of doubles. A Tensor is plain data unless it was
// produced on a Tape, in which case it also carries the id of its node.
// Rank 0 is a scalar, rank 1 a vector, rank 2 a matrix.
class Tensor {
 public:
  Tensor();
  Tensor(Shape shape, std::vector<double> data);

  static Tensor scalar(double value);
  static Tensor vector(std::vector<double> values);
  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> values);
  static Tensor zeros(Shape shape);

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  // Rank-2 dimensions. A vector is treated as a single row.
  std::size_t rows() const;
  std::size_t cols() const;

  std::span<const double> data() const { return data_; }
  std::span<double> mutable_data();
  const std::vector<double>& values() const { return data_; }

  double item() const;
  double operator[](std::size_t i) const { return data_[i]; }
  double at(std::size_t row, std::size_t col) const { return data_[row * cols() + col]; }
  std::span<const double> row(std::size_t r) const;

  bool requires_grad() const { return requires_grad_; }
  bool tracked() const { return tape_ != nullptr; }
  Tape* tape() const { return tape_; }
  NodeId node() const { return node_; }

  // Same values, no tape participation.
  Tensor detach() const;

 private:
  friend class Tape;

  Shape shape_;
  std::vector<double> data_;
  Tape* tape_ = nullptr;
  NodeId node_ = kNoNode;
  bool requires_grad_ = false;
};

// Accumulation buffers handed to backward closures during Tape::backward.
class GradSink {
 public:
  // Gradient buffer of a node, or an empty span for kNoNode.
  std::span<double> at(NodeId id);

 private:
  friend class Tape;
  explicit GradSink(Tape& tape) : tape_(tape) {}
  Tape& tape_;
};

class Gradients {
 public:
  // Gradient with respect to a leaf created by Tape::leaf. Leaves that the
  // loss does not depend on get zeros.
  Tensor of(const Tensor& leaf) const;

 private:
  friend class Tape;
  std::unordered_map<NodeId, Tensor> grads_;
};

// Append-only record of differentiable operations. Node ids follow insertion
// order, so the reverse pass walks the node list backwards. A tape and the
// tensors on it belong to one thread.
class Tape {
 public:
  using Backward = std::function<void(std::span<const double> out_grad, GradSink& sink)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Registers a copy of `value` as a requires_grad leaf.
  Tensor leaf(const Tensor& value);

  // Records an operation result. Ops call this; user code normally doesn't.
  Tensor record(Tensor value, Backward backward);

  // Reverse-mode pass from a scalar loss. A tape supports one backward pass;
  // call reset() before reusing it.
  Gradients backward(const Tensor& loss);

  void reset();
  std::size_t size() const { return nodes_.size(); }

 private:
  friend class GradSink;

  struct Node {
    Shape shape;
    Backward backward;
    bool leaf = false;
  };

  std::vector<Node> nodes_;
  std::vector<std::vector<double>> grads_;
  bool consumed_ = false;
};

// Returns the tape shared by the tracked operands, or nullptr if none is
// tracked. Operands on different tapes are a DimensionError.
Tape* common_tape(std::initializer_list<const Tensor*> operands);

}  // namespace sar
