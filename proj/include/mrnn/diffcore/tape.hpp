#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "mrnn/diffcore/array.hpp"

namespace mrnn {

class Tape;

/// Handle to a node recorded on a Tape. Cheap to copy; valid while the tape
/// lives.
struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;

  const Array& value() const;
  const Shape& shape() const { return value().shape(); }
  bool requires_grad() const;
};

/// Reverse-mode recording of one computation. Nodes are appended in
/// evaluation order, so node ids form a topological order and backward is a
/// single descending sweep.
class Tape {
 public:
  /// Receives the gradient flowing into the node's output and accumulates
  /// into its inputs through Tape::grad_buffer.
  using Backprop = std::function<void(Tape&, std::span<const double>)>;

  struct Node {
    std::string op;
    std::vector<std::size_t> inputs;
    Array value;
    bool requires_grad = false;
    Backprop backprop;
  };

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Array value) { return leaf(std::move(value), false, "constant"); }
  Var parameter(Array value) { return leaf(std::move(value), true, "parameter"); }

  /// Appends an operation node. Inputs must already live on this tape.
  Var record(std::string op, const std::vector<Var>& inputs, Array value, Backprop backprop) {
    check_values(value, op);
    Node node;
    node.op = std::move(op);
    node.value = std::move(value);
    for (const Var& in : inputs) {
      if (in.tape != this || in.id >= nodes_.size()) {
        throw UsageError("operation '" + node.op + "' received a value from another tape");
      }
      node.inputs.push_back(in.id);
      node.requires_grad = node.requires_grad || nodes_[in.id].requires_grad;
    }
    if (node.requires_grad) node.backprop = std::move(backprop);
    nodes_.push_back(std::move(node));
    return Var{this, nodes_.size() - 1};
  }

  const Array& value(std::size_t id) const { return nodes_.at(id).value; }
  const Node& node(std::size_t id) const { return nodes_.at(id); }
  std::size_t size() const noexcept { return nodes_.size(); }

  /// Mutable gradient accumulator of a node, or an empty span when no
  /// gradient is needed for it.
  std::span<double> grad_buffer(std::size_t id) {
    if (!nodes_[id].requires_grad || !in_backward_) return {};
    auto& g = grads_[id];
    if (g.empty()) g.assign(nodes_[id].value.size(), 0.0);
    return g;
  }

  /// Runs the reverse sweep from a scalar node. Gradients from a previous
  /// sweep are discarded.
  void backward(Var loss) {
    if (loss.tape != this) throw UsageError("backward: loss belongs to another tape");
    if (nodes_.at(loss.id).value.size() != 1) {
      throw UsageError("backward: loss must be scalar, got shape " +
                       shape_string(nodes_[loss.id].value.shape()));
    }
    grads_.assign(nodes_.size(), {});
    in_backward_ = true;
    if (nodes_[loss.id].requires_grad) {
      grads_[loss.id].assign(1, 1.0);
      for (std::size_t id = loss.id + 1; id-- > 0;) {
        Node& n = nodes_[id];
        if (!n.backprop || grads_[id].empty()) continue;
        // grads_ is pre-sized, so this reference survives accumulation into inputs.
        const std::vector<double>& gout = grads_[id];
        n.backprop(*this, gout);
      }
    }
    in_backward_ = false;
  }

  /// Gradient of the last backward's loss w.r.t. a node. Zero-filled when the
  /// node had no path to the loss.
  Array grad(Var v) const {
    const Array& val = nodes_.at(v.id).value;
    if (v.id < grads_.size() && !grads_[v.id].empty()) return Array(val.shape(), grads_[v.id]);
    return Array(val.shape());
  }

 private:
  Var leaf(Array value, bool requires_grad, std::string op) {
    check_values(value, op);
    Node node;
    node.op = std::move(op);
    node.value = std::move(value);
    node.requires_grad = requires_grad;
    nodes_.push_back(std::move(node));
    return Var{this, nodes_.size() - 1};
  }

  static void check_values(const Array& value, const std::string& op) {
    if (!value.all_finite()) throw DomainError("non-finite value produced by '" + op + "'");
  }

  std::deque<Node> nodes_;  // deque: references from value() survive later records
  std::vector<std::vector<double>> grads_;
  bool in_backward_ = false;
};

inline const Array& Var::value() const { return tape->value(id); }
inline bool Var::requires_grad() const { return tape->node(id).requires_grad; }

}  // namespace mrnn
