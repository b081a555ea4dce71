#pragma once

// Define-by-run reverse-mode differentiation. Every backward rule is written in
// terms of the same recorded primitives, so with higher_order=true the returned
// gradients are themselves nodes on the tape and can be differentiated again.

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string_view>
#include <vector>

#include "divdir/tensor.hpp"

namespace divdir {

enum class OpKind {
  leaf,
  constant,
  add,
  sub,
  mul,
  div,
  scale,
  negate,
  matmul,
  transpose,
  conv2d,
  conv2d_weight_grad,
  flip_kernel,
  avgpool2,
  avgpool2_adjoint,
  relu,
  softplus,
  sigmoid,
  exp,
  log,
  square,
  sqrt,
  abs,
  clip,
  sum,
  sum_to,
  broadcast_to,
  min_last,
  log_softmax,
  reshape,
};

std::string_view op_name(OpKind kind);

class Var;

// Receives the node's inputs, the adjoint of its output, and which inputs need an
// adjoint; returns one entry per input (undefined where not needed).
using BackwardFn =
    std::function<std::vector<Var>(std::span<const Var> inputs, const Var& grad, const std::vector<bool>& needs)>;

struct Node {
  OpKind kind = OpKind::constant;
  Tensor value;
  std::vector<Var> inputs;
  BackwardFn backward;
  bool requires_grad = false;
  // Set on values produced by a first-order gradient call (and everything computed
  // from them); such values cannot be differentiated again.
  bool first_order_gradient = false;
  std::uint64_t seq = 0;
};

class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  bool defined() const { return node_ != nullptr; }
  const Tensor& value() const { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  std::size_t numel() const { return node_->value.numel(); }
  bool requires_grad() const { return node_->requires_grad; }
  OpKind kind() const { return node_->kind; }
  const Node* node() const { return node_.get(); }
  const std::vector<Var>& inputs() const { return node_->inputs; }
  double item() const { return node_->value.item(); }

 private:
  friend Var make_node(OpKind, Tensor, std::vector<Var>, BackwardFn);
  friend std::vector<Var> gradient(const Var&, std::span<const Var>, bool);
  friend Var mark_first_order(Var);
  std::shared_ptr<Node> node_;
};

// Trainable or differentiable input.
Var leaf(Tensor value, bool requires_grad = true);
Var constant(Tensor value);

// Records a node when recording is enabled and some input requires a gradient;
// otherwise returns a constant holding the value.
Var make_node(OpKind kind, Tensor value, std::vector<Var> inputs, BackwardFn backward);

// While alive, operations on this thread produce constants instead of tape nodes.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_recording();

// d output / d w for each w in wrt. `output` must hold a single element.
// Inputs that do not influence the output receive zero-filled gradients.
std::vector<Var> gradient(const Var& output, std::span<const Var> wrt, bool higher_order = false);
Var gradient(const Var& output, const Var& wrt, bool higher_order = false);

// Elementwise arithmetic with numpy-style broadcasting.
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var div(const Var& a, const Var& b);
Var scale(const Var& a, double factor);
Var negate(const Var& a);

Var operator+(const Var& a, const Var& b);
Var operator-(const Var& a, const Var& b);
Var operator*(const Var& a, const Var& b);
Var operator/(const Var& a, const Var& b);
Var operator-(const Var& a);
Var operator*(const Var& a, double s);
Var operator*(double s, const Var& a);
Var operator+(const Var& a, double s);
Var operator-(double s, const Var& a);

// [M,K] x [K,N] -> [M,N]
Var matmul(const Var& a, const Var& b);
Var transpose(const Var& a);

// Stride 1, odd square kernel, zero padding that preserves H and W.
// x: [N,C,H,W], w: [O,C,k,k] -> [N,O,H,W]
Var conv2d(const Var& x, const Var& w);
// Adjoint of conv2d with respect to its kernel: x [N,C,H,W], gy [N,O,H,W] -> [O,C,k,k].
Var conv2d_weight_grad(const Var& x, const Var& gy, std::size_t kernel);
// [O,C,k,k] -> [C,O,k,k], spatially reversed. Turns conv2d into its input adjoint.
Var flip_kernel(const Var& w);

// 2x2 average pooling over the last two axes of [N,C,H,W] (H, W even), and its adjoint.
Var avgpool2(const Var& x);
Var avgpool2_adjoint(const Var& g);

Var relu(const Var& x);
Var softplus(const Var& x);
Var sigmoid(const Var& x);
Var exp(const Var& x);
Var log(const Var& x);
Var square(const Var& x);
Var sqrt(const Var& x);
Var abs(const Var& x);
Var clip(const Var& x, double lo, double hi);

Var sum(const Var& x);
Var mean(const Var& x);
// Reduce by summation to `shape`, which must broadcast to x's shape.
Var sum_to(const Var& x, const Shape& shape);
Var broadcast_to(const Var& x, const Shape& shape);
// Reductions over the last axis, dropping it.
Var sum_last(const Var& x);
Var mean_last(const Var& x);
Var min_last(const Var& x);

Var log_softmax(const Var& x);
Var softmax(const Var& x);
Var reshape(const Var& x, const Shape& shape);

// Shape that a and b broadcast to; throws naming `op` and both shapes on mismatch.
Shape broadcast_shape(const Shape& a, const Shape& b, std::string_view op);

}  // namespace divdir
