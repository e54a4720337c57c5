#include "emir/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <unordered_set>

namespace emir {

std::int64_t numel_of(const Shape& s) {
  std::int64_t n = 1;
  for (auto d : s) {
    check(d > 0, "shape extents must be positive");
    n *= d;
  }
  return n;
}

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << "]";
  return os.str();
}

Tensor Tensor::zeros(const Shape& s, bool requires_grad) {
  return full(s, 0.0, requires_grad);
}

Tensor Tensor::full(const Shape& s, double v, bool requires_grad) {
  auto n = std::make_shared<Node>();
  n->shape = s;
  n->value.assign(numel_of(s), v);
  n->requires_grad = requires_grad;
  if (requires_grad) n->ensure_grad();
  return Tensor(n);
}

Tensor Tensor::from(const Shape& s, std::vector<double> data,
                    bool requires_grad) {
  check(numel_of(s) == static_cast<std::int64_t>(data.size()),
        "Tensor::from: data length does not match shape " + shape_str(s));
  auto n = std::make_shared<Node>();
  n->shape = s;
  n->value = std::move(data);
  n->requires_grad = requires_grad;
  if (requires_grad) n->ensure_grad();
  return Tensor(n);
}

Tensor Tensor::scalar(double v, bool requires_grad) {
  return from({1}, {v}, requires_grad);
}

double Tensor::item() const {
  check(numel() == 1, "item() on non-scalar tensor " + shape_str(shape()));
  return node_->value[0];
}

Tensor make_op(const Shape& shape, std::vector<double> value,
               const std::vector<Tensor>& inputs) {
  auto n = std::make_shared<Node>();
  n->shape = shape;
  check(numel_of(shape) == static_cast<std::int64_t>(value.size()),
        "make_op: value length mismatch for " + shape_str(shape));
  n->value = std::move(value);
  for (const auto& t : inputs) {
    n->inputs.push_back(t.node());
    if (t.requires_grad()) n->requires_grad = true;
  }
  return Tensor(n);
}

void backward(const Tensor& loss) {
  check(loss.defined() && loss.numel() == 1, "backward: loss must be scalar");
  Node* root = loss.node().get();
  if (!root->requires_grad) return;

  // iterative post-order DFS over requires_grad nodes
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  struct Frame {
    Node* n;
    size_t next_input;
  };
  std::vector<Frame> stack;
  stack.push_back({root, 0});
  visited.insert(root);
  while (!stack.empty()) {
    Frame& f = stack.back();
    if (f.next_input < f.n->inputs.size()) {
      Node* in = f.n->inputs[f.next_input++].get();
      if (in->requires_grad && !visited.count(in)) {
        visited.insert(in);
        stack.push_back({in, 0});
      }
    } else {
      order.push_back(f.n);
      stack.pop_back();
    }
  }

  root->ensure_grad();
  root->grad[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backprop) n->backprop();
  }
  // intermediate grads are scratch; drop them so repeated backward calls
  // accumulate only into leaves
  for (Node* n : order) {
    if (n->backprop) n->grad.clear();
  }
}

}  // namespace emir
