#pragma once

// Dense tensors with a dynamically built reverse-mode tape. Each op result
// holds shared ownership of its parents and a closure that pushes its
// gradient into them; Tensor::backward() walks the graph in reverse
// topological order.

#include <cassert>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

namespace sdr::ad {

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (std::size_t k = 0; k < s.size(); ++k) out += (k ? "," : "") + std::to_string(s[k]);
  return out + "]";
}

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

namespace detail {

template <typename T>
struct Node {
  Shape shape;
  std::vector<T> value;
  std::vector<T> grad;  // allocated on first accumulation
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  std::vector<T>& grad_buffer() {
    if (grad.empty()) grad.assign(value.size(), T{0});
    return grad;
  }
};

}  // namespace detail

template <typename T>
class Tensor {
 public:
  using Node = detail::Node<T>;

  Tensor() = default;

  Tensor(Shape shape, std::vector<T> values, bool requires_grad = false) : node_(std::make_shared<Node>()) {
    if (values.size() != numel(shape)) {
      throw ShapeError("tensor values (" + std::to_string(values.size()) + ") do not match shape " + shape_str(shape));
    }
    for (auto d : shape)
      if (d == 0) throw ShapeError("tensor dimensions must be positive");
    node_->shape = std::move(shape);
    node_->value = std::move(values);
    node_->requires_grad = requires_grad;
  }

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    const auto count = numel(shape);
    return Tensor(std::move(shape), std::vector<T>(count, T{0}), requires_grad);
  }

  static Tensor scalar(T v, bool requires_grad = false) { return Tensor({1}, {v}, requires_grad); }

  /// Result of an op. The closure receives the result node and must add
  /// into parents that require grad.
  static Tensor from_op(Shape shape, std::vector<T> values, std::vector<Tensor> parents,
                        std::function<void(Node&)> backward) {
    Tensor out(std::move(shape), std::move(values));
    for (const auto& p : parents) {
      if (p.requires_grad()) out.node_->requires_grad = true;
    }
    if (out.node_->requires_grad) {
      for (auto& p : parents) out.node_->parents.push_back(p.node_);
      out.node_->backward = std::move(backward);
    }
    return out;
  }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t dim(std::size_t k) const { return node_->shape.at(k); }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t size() const { return node_->value.size(); }
  bool requires_grad() const { return node_->requires_grad; }

  std::span<const T> values() const { return node_->value; }
  /// In-place access for leaves (parameters, inputs under perturbation).
  std::span<T> mutable_values() { return node_->value; }

  bool has_grad() const { return !node_->grad.empty(); }
  std::span<const T> grad() const { return node_->grad; }
  std::vector<T>& grad_buffer() { return node_->grad_buffer(); }
  void zero_grad() { node_->grad.clear(); }

  T item() const {
    if (size() != 1) throw ShapeError("item() needs a single-element tensor");
    return node_->value[0];
  }

  /// Seeds d(this)/d(this) = 1 and propagates. Only valid for scalars.
  void backward() {
    if (size() != 1) throw ShapeError("backward() needs a scalar tensor");
    if (!requires_grad()) return;
    std::vector<Node*> order;
    std::unordered_set<Node*> visited;
    // Iterative post-order DFS: deep U-Net graphs would otherwise recurse.
    std::vector<std::pair<Node*, std::size_t>> stack{{node_.get(), 0}};
    visited.insert(node_.get());
    while (!stack.empty()) {
      auto& [node, next] = stack.back();
      if (next < node->parents.size()) {
        Node* p = node->parents[next++].get();
        if (p->requires_grad && visited.insert(p).second) stack.emplace_back(p, 0);
      } else {
        order.push_back(node);
        stack.pop_back();
      }
    }
    node_->grad_buffer()[0] += T{1};
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
      Node* n = *it;
      if (n->backward && !n->grad.empty()) n->backward(*n);
    }
  }

  /// Copy with the same values, detached from any graph.
  Tensor detach() const { return Tensor(shape(), node_->value, false); }

  template <typename U>
  Tensor<U> cast() const {
    std::vector<U> v(node_->value.begin(), node_->value.end());
    return Tensor<U>(shape(), std::move(v), requires_grad());
  }

  Node& node() { return *node_; }
  const Node& node() const { return *node_; }

 private:
  std::shared_ptr<Node> node_;
};

/// Adds g into the parent's gradient buffer.
template <typename T>
inline void accumulate(detail::Node<T>& parent, std::span<const T> g) {
  if (!parent.requires_grad) return;
  auto& buf = parent.grad_buffer();
  for (std::size_t k = 0; k < g.size(); ++k) buf[k] += g[k];
}

}  // namespace sdr::ad
