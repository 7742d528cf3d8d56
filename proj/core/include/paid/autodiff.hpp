#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string_view>
#include <vector>

#include "paid/tensor.hpp"

namespace paid {

/// Operation recorded on a tape node.
enum class OpKind : std::uint8_t {
  leaf,
  add,
  sub,
  mul,
  matmul,
  conv2d,
  relu,
  max_pool2,
  flatten,
  add_bias,
  scale,
  log_softmax,
  mean,
  sum,
  exp,
  clamp_min,
};

[[nodiscard]] std::string_view to_string(OpKind kind) noexcept;

using NodeId = std::uint32_t;

class Tape;

/// Handle to a node of a Tape. Cheap to copy; valid while the tape lives and
/// has not been moved.
struct Var {
  Tape* tape = nullptr;
  NodeId id = 0;

  [[nodiscard]] const Tensor& value() const;
  [[nodiscard]] const Shape& shape() const { return value().shape(); }
  [[nodiscard]] bool requires_grad() const;
};

/// Append-only record of a forward computation supporting reverse-mode
/// differentiation.
///
/// Every node stores its forward value, the ids of its inputs (always smaller
/// than its own id) and whatever the backward rule needs. A node requires a
/// gradient when it is a leaf created with requires_grad or any of its inputs
/// requires one; constants never receive gradients.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  Tape(Tape&&) noexcept = default;
  Tape& operator=(Tape&&) noexcept = default;

  Var leaf(Tensor value, bool requires_grad);
  Var variable(Tensor value) { return leaf(std::move(value), true); }
  Var constant(Tensor value) { return leaf(std::move(value), false); }
  /// Copy of `v`'s value cut off from the graph (stop-gradient).
  Var detach(Var v) { return constant(v.value()); }

  [[nodiscard]] const Tensor& value(Var v) const;
  [[nodiscard]] bool requires_grad(Var v) const;
  [[nodiscard]] OpKind kind(Var v) const;
  [[nodiscard]] std::span<const NodeId> inputs(Var v) const;
  [[nodiscard]] std::size_t size() const noexcept { return nodes_.size(); }

  /// Reverse sweep from a single-element output. Clears gradients left by a
  /// previous sweep first. Throws ContractError for non-scalar outputs.
  void backward(Var output, Real seed = Real{1});

  /// Gradient accumulated by the last backward(); zeros when the node
  /// received none. Throws ContractError for nodes without requires_grad.
  [[nodiscard]] Tensor grad(Var v) const;
  /// Number of nodes whose backward rule ran in the last sweep.
  [[nodiscard]] std::size_t last_backward_visits() const noexcept { return visits_; }

 private:
  friend struct OpBuilder;

  struct Node {
    OpKind kind = OpKind::leaf;
    std::array<NodeId, 2> in{};
    std::uint8_t arity = 0;
    bool requires_grad = false;
    Real param = 0;
    Tensor value;
    std::vector<std::size_t> index;
    std::vector<Real> grad;
  };

  Var push(Node node);
  const Node& node(Var v) const;
  void backprop_node(NodeId id);
  std::vector<Real>& grad_buffer(NodeId id);

  std::vector<Node> nodes_;
  std::size_t visits_ = 0;
};

// Recorded operations. All inputs must live on the same tape. Shapes never
// broadcast except where documented.

Var add(Var a, Var b);
Var sub(Var a, Var b);
/// Element-wise product.
Var mul(Var a, Var b);
/// [n, k] x [k, m] -> [n, m].
Var matmul(Var a, Var b);
/// 3x3 convolution, stride 1, zero padding 1: input [n, c, h, w], weight
/// [o, c, 3, 3] -> [n, o, h, w]. No bias; use add_bias.
Var conv2d(Var input, Var weight);
Var relu(Var x);
/// 2x2 max pooling with stride 2 over [n, c, h, w]; odd trailing rows and
/// columns are dropped. Ties resolve to the first maximum in scan order.
Var max_pool2(Var x);
/// [n, ...] -> [n, prod(...)].
Var flatten(Var x);
/// Adds bias [c] along axis 1 of a [n, c] or [n, c, h, w] input.
Var add_bias(Var x, Var bias);
Var scale(Var x, Real factor);
/// Row-wise log(softmax(x / temperature)) of a [n, k] input, computed with
/// max subtraction. Throws ParameterError when temperature <= 0.
Var log_softmax(Var x, Real temperature = Real{1});
/// Mean of all elements -> shape [1].
Var mean(Var x);
/// Sum of all elements -> shape [1].
Var sum(Var x);
Var exp(Var x);
/// max(x, floor) element-wise; gradient passes where x > floor.
Var clamp_min(Var x, Real floor);

/// Central-difference gradient of a scalar function:
/// (f(x + h e_i) - f(x - h e_i)) / (2h) for every coordinate.
/// Throws ParameterError when h <= 0.
[[nodiscard]] Tensor finite_diff_grad(const std::function<Real(const Tensor&)>& loss_fn, const Tensor& x, Real h);

}  // namespace paid
