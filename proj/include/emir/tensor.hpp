#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <vector>

#include "emir/common.hpp"

namespace emir {

using Shape = std::vector<std::int64_t>;

std::int64_t numel_of(const Shape& s);
std::string shape_str(const Shape& s);

// One tape node: holds the value buffer, the (lazily allocated) gradient
// buffer, and the closure that pushes this node's gradient into its inputs.
struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void()> backprop;  // may be empty for leaves

  std::int64_t numel() const { return static_cast<std::int64_t>(value.size()); }
  void ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
  }
};

// Value-semantic handle to a tape node.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<Node> n) : node_(std::move(n)) {}

  static Tensor zeros(const Shape& s, bool requires_grad = false);
  static Tensor full(const Shape& s, double v, bool requires_grad = false);
  static Tensor from(const Shape& s, std::vector<double> data,
                     bool requires_grad = false);
  static Tensor scalar(double v, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::int64_t numel() const { return node_->numel(); }
  std::int64_t dim(int i) const { return node_->shape[i]; }
  int rank() const { return static_cast<int>(node_->shape.size()); }

  std::vector<double>& data() { return node_->value; }
  const std::vector<double>& data() const { return node_->value; }
  std::vector<double>& grad() {
    node_->ensure_grad();
    return node_->grad;
  }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  void set_requires_grad(bool b) {
    node_->requires_grad = b;
    if (b) node_->ensure_grad();
  }
  void zero_grad() {
    if (node_->requires_grad) node_->grad.assign(node_->value.size(), 0.0);
  }

  double item() const;

  std::shared_ptr<Node> node() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

// Builds the output node of an op; requires_grad is inherited from inputs.
// The caller assigns out.node()->backprop afterwards (capture raw Node*
// for the output to avoid a shared_ptr cycle through the closure).
Tensor make_op(const Shape& shape, std::vector<double> value,
               const std::vector<Tensor>& inputs);

// Reverse-mode sweep from a scalar loss. Each reachable node's backprop runs
// exactly once, in reverse topological order. Leaf gradients accumulate
// across calls until zeroed.
void backward(const Tensor& loss);

}  // namespace emir
