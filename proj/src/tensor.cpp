#include "sar/tensor.hpp"

#include <sstream>
#include <utility>

#include "sar/errors.hpp"

namespace sar {

std::size_t shape_size(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Tensor::Tensor() : shape_{}, data_(1, 0.0) {}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
  if (shape_.size() > 2) throw DimensionError("tensor rank above 2 is not supported: " + shape_string(shape_));
  if (shape_size(shape_) != data_.size()) {
    throw DimensionError("tensor shape " + shape_string(shape_) + " does not match " +
                         std::to_string(data_.size()) + " values");
  }
}

Tensor Tensor::scalar(double value) { return Tensor({}, {value}); }

Tensor Tensor::vector(std::vector<double> values) {
  const auto n = values.size();
  return Tensor({n}, std::move(values));
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::vector<double> values) {
  return Tensor({rows, cols}, std::move(values));
}

Tensor Tensor::zeros(Shape shape) {
  const auto n = shape_size(shape);
  return Tensor(std::move(shape), std::vector<double>(n, 0.0));
}

std::size_t Tensor::rows() const {
  if (rank() == 2) return shape_[0];
  return 1;
}

std::size_t Tensor::cols() const {
  if (rank() == 2) return shape_[1];
  if (rank() == 1) return shape_[0];
  return 1;
}

std::span<double> Tensor::mutable_data() {
  if (tracked()) throw Error("cannot mutate a tensor recorded on a tape");
  return data_;
}

double Tensor::item() const {
  if (data_.size() != 1) throw DimensionError("item() on tensor of shape " + shape_string(shape_));
  return data_[0];
}

std::span<const double> Tensor::row(std::size_t r) const {
  const auto c = cols();
  return std::span<const double>(data_).subspan(r * c, c);
}

Tensor Tensor::detach() const { return Tensor(shape_, data_); }

std::span<double> GradSink::at(NodeId id) {
  if (id == kNoNode) return {};
  auto& g = tape_.grads_[id];
  if (g.empty()) g.assign(shape_size(tape_.nodes_[id].shape), 0.0);
  return g;
}

Tensor Gradients::of(const Tensor& leaf) const {
  if (!leaf.requires_grad()) throw Error("gradient requested for a tensor that is not a leaf");
  auto it = grads_.find(leaf.node());
  if (it == grads_.end()) return Tensor::zeros(leaf.shape());
  return it->second;
}

Tensor Tape::leaf(const Tensor& value) {
  if (consumed_) throw Error("tape already ran backward; reset() before recording");
  Tensor t(value.shape(), value.values());
  t.tape_ = this;
  t.node_ = nodes_.size();
  t.requires_grad_ = true;
  nodes_.push_back(Node{t.shape(), nullptr, true});
  return t;
}

Tensor Tape::record(Tensor value, Backward backward) {
  if (consumed_) throw Error("tape already ran backward; reset() before recording");
  value.tape_ = this;
  value.node_ = nodes_.size();
  value.requires_grad_ = false;
  nodes_.push_back(Node{value.shape(), std::move(backward), false});
  return value;
}

Gradients Tape::backward(const Tensor& loss) {
  if (consumed_) throw Error("backward already called on this tape; call reset() first");
  if (loss.tape() != this) throw Error("loss is not recorded on this tape");
  if (loss.size() != 1 || loss.rank() != 0) {
    throw DimensionError("backward needs a scalar loss, got shape " + shape_string(loss.shape()));
  }
  consumed_ = true;
  grads_.assign(nodes_.size(), {});
  grads_[loss.node()] = {1.0};

  GradSink sink(*this);
  for (NodeId id = loss.node() + 1; id-- > 0;) {
    if (grads_[id].empty() || !nodes_[id].backward) continue;
    // Parents always precede their children, so the sink never touches
    // grads_[id] while the closure reads it.
    nodes_[id].backward(grads_[id], sink);
  }

  Gradients result;
  for (NodeId id = 0; id < nodes_.size(); ++id) {
    if (!nodes_[id].leaf || grads_[id].empty()) continue;
    result.grads_.emplace(id, Tensor(nodes_[id].shape, std::move(grads_[id])));
  }
  grads_.clear();
  return result;
}

void Tape::reset() {
  nodes_.clear();
  grads_.clear();
  consumed_ = false;
}

Tape* common_tape(std::initializer_list<const Tensor*> operands) {
  Tape* tape = nullptr;
  for (const Tensor* t : operands) {
    if (!t->tracked()) continue;
    if (tape != nullptr && tape != t->tape()) throw DimensionError("operands live on different tapes");
    tape = t->tape();
  }
  return tape;
}

}  // namespace sar
