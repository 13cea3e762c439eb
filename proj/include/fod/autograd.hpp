// SPDX-License-Identifier: Apache-2.0
//
// Reverse-mode differentiation over dense tensors.
//
// Every op returns a Var whose node remembers its inputs and a backward
// closure. backward(root) walks the graph in reverse topological order and
// accumulates into Node::grad. Leaf grads accumulate across backward calls;
// interior grads are reset at the start of each call, so one graph can be
// differentiated several times with different roots.

#pragma once

#include <functional>
#include <memory>
#include <span>
#include <vector>

#include "fod/tensor.hpp"

namespace fod {

struct Node;
using NodePtr = std::shared_ptr<Node>;
using BackwardFn = std::function<void(Node& self)>;

struct Node {
  Tensor value;
  Tensor grad;  // empty until something flows into it
  std::vector<NodePtr> inputs;
  BackwardFn backward;
  bool requires_grad = false;

  bool is_leaf() const noexcept { return inputs.empty(); }
};

class Var {
 public:
  Var() = default;
  explicit Var(NodePtr node) : node_(std::move(node)) {}

  const Tensor& value() const& { return node_->value; }
  // Rvalues return copies so `f(x).value()` never dangles in a range-for.
  Tensor value() && { return node_->value; }
  const Tensor& grad() const& { return node_->grad; }
  Tensor grad() && { return node_->grad; }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  const Shape& shape() const { return node_->value.shape(); }
  /// Value of a single-element tensor.
  double item() const;

  Node* node() const noexcept { return node_.get(); }
  const NodePtr& ptr() const noexcept { return node_; }
  explicit operator bool() const noexcept { return static_cast<bool>(node_); }

 private:
  NodePtr node_;
};

Var constant(Tensor value);
/// Trainable leaf; gradients accumulate into it.
Var leaf(Tensor value);

/// Builds an op node. When no input requires a gradient the closure is dropped.
Var make_node(Tensor value, std::vector<Var> inputs, BackwardFn backward);
/// Adds g into n.grad (allocating on first use); no-op when n needs no gradient.
void accumulate(Node& n, const Tensor& g);
void accumulate(Node& n, Tensor&& g);

/// Reverse pass from a single-element root.
void backward(const Var& root);

// Linear algebra
Var matmul(const Var& a, const Var& b);
/// a * b^T
Var matmul_nt(const Var& a, const Var& b);

// Elementwise
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var div(const Var& a, const Var& b);
Var scale(const Var& a, double c);
Var add_scalar(const Var& a, double c);
Var exp(const Var& a);
Var gelu(const Var& a);
/// log(max(a, floor)); derivative is zero where a <= floor.
Var log_clamped(const Var& a, double floor);
Var clamp_min(const Var& a, double floor);
/// a[n,m] + bias broadcast over rows; bias has m elements.
Var add_row(const Var& a, const Var& bias);

// Reductions
Var sum(const Var& a);
Var mean(const Var& a);
/// Row sums of a[n,m] -> [n].
Var row_sum(const Var& a);
/// Row-wise dot products of two [n,m] tensors -> [n].
Var row_dot(const Var& a, const Var& b);
/// Row-wise Euclidean norms -> [n]; the derivative at a zero row is taken as zero.
Var row_norm(const Var& a);

// Structural
Var softmax_rows(const Var& a);
/// Per-row normalization (population variance, epsilon 1e-5) followed by gamma*x + beta.
Var layer_norm(const Var& x, const Var& gamma, const Var& beta);
Var concat_cols(std::span<const Var> parts);
/// Elementwise arithmetic mean of equally shaped inputs.
Var average(std::span<const Var> parts);
Var gather_rows(const Var& a, std::span<const std::size_t> rows);

inline constexpr double kLayerNormEps = 1e-5;

/// Value passthrough with a zero derivative.
///
/// Inside a StopGradientFreeze in replay mode the returned value is the one
/// recorded during the matching call of the recording pass, so that finite
/// differences see the blocked quantity as a constant.
Var stop_gradient(const Var& x);

class StopGradientFreeze {
 public:
  enum class Mode { record, replay };
  StopGradientFreeze();
  ~StopGradientFreeze();
  StopGradientFreeze(const StopGradientFreeze&) = delete;
  StopGradientFreeze& operator=(const StopGradientFreeze&) = delete;

  void set_mode(Mode m);
  Mode mode() const noexcept { return mode_; }
  std::size_t recorded() const noexcept { return tape_.size(); }

 private:
  friend Var stop_gradient(const Var& x);
  Mode mode_ = Mode::record;
  std::vector<Tensor> tape_;
  std::size_t cursor_ = 0;
  StopGradientFreeze* previous_;
};

inline Var operator+(const Var& a, const Var& b) { return add(a, b); }
inline Var operator-(const Var& a, const Var& b) { return sub(a, b); }
inline Var operator*(const Var& a, const Var& b) { return mul(a, b); }
inline Var operator*(double c, const Var& a) { return scale(a, c); }
inline Var operator*(const Var& a, double c) { return scale(a, c); }
inline Var operator-(const Var& a) { return scale(a, -1.0); }

}  // namespace fod
