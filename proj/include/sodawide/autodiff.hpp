#pragma once

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "sodawide/tensor.hpp"

namespace sodawide {

// Reverse-mode differentiation over a dynamically recorded tape. Every op
// result is a node that remembers its inputs and a backward closure; node
// sequence numbers are strictly increasing, so creation order is a valid
// topological order of the tape.

template <class T>
struct Node {
  Tensor<T> value;
  Tensor<T> grad;  // empty until something flows into it
  bool requires_grad = false;
  std::uint64_t seq = 0;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward_fn;

  bool is_leaf() const { return inputs.empty(); }

  void accumulate(const Tensor<T>& g) {
    if (grad.empty()) {
      grad = g;
    } else {
      grad += g;
    }
  }

  void accumulate(Tensor<T>&& g) {
    if (grad.empty()) {
      grad = std::move(g);
    } else {
      grad += g;
    }
  }
};

namespace detail {
inline std::uint64_t next_seq() {
  static std::atomic<std::uint64_t> counter{0};
  return ++counter;
}

inline bool& grad_enabled_flag() {
  thread_local bool enabled = true;
  return enabled;
}

// Activation patterns of the piecewise ops (relu masks, max-pool winners).
// In record mode each such op appends its pattern; in replay mode it reuses
// the recorded one in call order and counts any pattern that would differ.
struct PatternTape {
  enum class Mode { off, record, replay };
  Mode mode = Mode::off;
  std::vector<std::vector<std::size_t>> patterns;
  std::size_t cursor = 0;
  std::size_t changed = 0;
};

inline PatternTape& pattern_tape() {
  thread_local PatternTape tape;
  return tape;
}

/// Records or replays `pattern` depending on the tape mode.
inline void sync_pattern(std::vector<std::size_t>& pattern) {
  PatternTape& tape = pattern_tape();
  if (tape.mode == PatternTape::Mode::record) {
    tape.patterns.push_back(pattern);
  } else if (tape.mode == PatternTape::Mode::replay) {
    if (tape.cursor >= tape.patterns.size() || tape.patterns[tape.cursor].size() != pattern.size()) {
      throw std::logic_error("pattern replay out of step with the recorded forward pass");
    }
    const auto& recorded = tape.patterns[tape.cursor++];
    if (recorded != pattern) ++tape.changed;
    pattern = recorded;
  }
}
}  // namespace detail

inline bool grad_enabled() { return detail::grad_enabled_flag(); }

/// Disables tape recording on this thread for the guard's lifetime.
class NoGradGuard {
 public:
  NoGradGuard() : previous_(detail::grad_enabled_flag()) { detail::grad_enabled_flag() = false; }
  ~NoGradGuard() { detail::grad_enabled_flag() = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

/// Handle to a node on the tape. Copies share the node.
template <class T>
class Var {
 public:
  Var() = default;

  explicit Var(Tensor<T> value, bool requires_grad = false) : node_(std::make_shared<Node<T>>()) {
    node_->value = std::move(value);
    node_->requires_grad = requires_grad;
    node_->seq = detail::next_seq();
  }

  explicit Var(std::shared_ptr<Node<T>> node) : node_(std::move(node)) {}

  bool defined() const { return static_cast<bool>(node_); }
  const Tensor<T>& value() const { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  bool requires_grad() const { return node_->requires_grad; }
  const Tensor<T>& grad() const { return node_->grad; }
  bool has_grad() const { return !node_->grad.empty(); }
  const char* op() const { return node_->op; }

  void zero_grad() { node_->grad = Tensor<T>(); }

  /// Replaces the value of a leaf (parameters and buffers only).
  void set_value(Tensor<T> value) {
    if (!node_->is_leaf()) throw std::logic_error("set_value on non-leaf tensor");
    if (!node_->value.empty() && value.shape() != node_->value.shape()) {
      throw ShapeError("set_value shape mismatch: " + node_->value.shape().str() + " vs " +
                       value.shape().str());
    }
    node_->value = std::move(value);
  }

  /// In-place access for optimizers; only valid on leaves.
  Tensor<T>& mutable_value() {
    if (!node_->is_leaf()) throw std::logic_error("mutable_value on non-leaf tensor");
    return node_->value;
  }

  Node<T>* node() const { return node_.get(); }
  const std::shared_ptr<Node<T>>& node_ptr() const { return node_; }

 private:
  std::shared_ptr<Node<T>> node_;
};

/// Records an op result. `backward` receives the result node; it reads
/// node.grad and accumulates into node.inputs[i] when that input requires grad.
/// When recording is off or no input requires grad the result is a constant.
template <class T, class Backward>
Var<T> record(const char* op, Tensor<T> value, std::vector<Var<T>> inputs, Backward&& backward) {
  const bool needs = grad_enabled() &&
                     std::any_of(inputs.begin(), inputs.end(), [](const Var<T>& v) { return v.requires_grad(); });
  auto node = std::make_shared<Node<T>>();
  node->value = std::move(value);
  node->seq = detail::next_seq();
  node->op = op;
  if (needs) {
    node->requires_grad = true;
    node->inputs.reserve(inputs.size());
    for (auto& in : inputs) node->inputs.push_back(in.node_ptr());
    node->backward_fn = std::forward<Backward>(backward);
  }
  return Var<T>(std::move(node));
}

/// Runs reverse accumulation from a scalar loss. Leaf gradients accumulate
/// across calls until zero_grad(); intermediate gradients and closures are
/// released afterwards.
template <class T>
void backward(const Var<T>& loss) {
  if (!loss.defined()) throw std::invalid_argument("backward on undefined tensor");
  if (loss.value().numel() != 1) {
    throw ShapeError("backward requires a scalar loss, got " + loss.shape().str());
  }
  if (!loss.requires_grad()) {
    throw std::invalid_argument("backward: loss is not on the tape (no input requires grad)");
  }

  // Owning pointers keep every node alive while the graph is torn down below.
  std::vector<std::shared_ptr<Node<T>>> order;
  std::unordered_set<Node<T>*> seen;
  std::vector<std::shared_ptr<Node<T>>> stack{loss.node_ptr()};
  seen.insert(loss.node());
  while (!stack.empty()) {
    std::shared_ptr<Node<T>> n = std::move(stack.back());
    stack.pop_back();
    for (auto& in : n->inputs) {
      if (in->requires_grad && seen.insert(in.get()).second) stack.push_back(in);
    }
    order.push_back(std::move(n));
  }
  std::sort(order.begin(), order.end(), [](const auto& a, const auto& b) { return a->seq > b->seq; });

  loss.node()->accumulate(Tensor<T>::ones(loss.shape()));
  for (auto& n : order) {
    if (n->is_leaf() || n->grad.empty()) continue;
    n->backward_fn(*n);
  }
  for (auto& n : order) {
    if (!n->is_leaf()) {
      n->grad = Tensor<T>();
      n->backward_fn = nullptr;
      n->inputs.clear();
      n->requires_grad = false;
    }
  }
}

}  // namespace sodawide
