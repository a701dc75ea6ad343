#pragma once

// Reverse-mode automatic differentiation over Tensors.
//
// An Expr is an immutable node in an acyclic expression graph. Leaves are
// named inputs, named parameters, or constants. Evaluating a graph binds the
// leaf names to tensors; gradients are returned for every parameter leaf and
// for every input leaf whose bound tensor has requires_grad set.
//
// All reductions run in a fixed order, so repeated evaluation of the same
// graph on the same bindings is bit-identical.

#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "nimaenh/kernels.hpp"
#include "nimaenh/tensor.hpp"

namespace nimaenh::ad {

class Node;

class Expr {
 public:
  explicit Expr(std::shared_ptr<const Node> node) : node_(std::move(node)) {}

  const Node& node() const { return *node_; }
  const std::shared_ptr<const Node>& ptr() const { return node_; }
  // "<op>#<id>" or "<op>:<name>#<id>" for leaves; used in error messages.
  std::string label() const;

 private:
  std::shared_ptr<const Node> node_;
};

using Bindings = std::map<std::string, Tensor>;
using Gradients = std::map<std::string, Tensor>;

// Leaves.
Expr input(std::string name);
Expr parameter(std::string name);
Expr constant(Tensor value);

// Elementwise; operands must have identical shapes.
Expr add(Expr a, Expr b);
Expr sub(Expr a, Expr b);
Expr mul(Expr a, Expr b);
Expr scale(Expr a, double factor);
Expr add_scalar(Expr a, double offset);
Expr square(Expr a);
Expr abs(Expr a);  // derivative 0 at 0
Expr huber(Expr a, double delta);
Expr leaky_relu(Expr a, double slope);  // derivative at 0 is `slope`

// Reductions to a scalar, summed left to right.
Expr sum(Expr a);
Expr mean(Expr a);

// Running sum along a rank-1 tensor.
Expr cumsum(Expr a);

// Numerically stable (max-subtracted) softmax over a rank-1 tensor.
Expr softmax(Expr logits);

struct ConvOptions {
  std::size_t dilation = 1;
  std::size_t stride = 1;
  kernels::Padding padding = kernels::Padding::symmetric;
};

// x: [H, W, Cin], weights: [kh, kw, Cin, Cout], bias: [Cout].
Expr conv2d(Expr x, Expr weights, Expr bias, ConvOptions options = {});
// [H, W, C] -> [C]
Expr global_average_pool(Expr x);
// x: [C], weights: [C, M], bias: [M] -> [M]
Expr fully_connected(Expr x, Expr weights, Expr bias);

inline Expr operator+(Expr a, Expr b) { return add(std::move(a), std::move(b)); }
inline Expr operator-(Expr a, Expr b) { return sub(std::move(a), std::move(b)); }
inline Expr operator*(Expr a, Expr b) { return mul(std::move(a), std::move(b)); }
inline Expr operator*(double k, Expr a) { return scale(std::move(a), k); }

// One forward pass. Holds every intermediate value so a backward pass can
// follow; the graph itself is never modified.
class Evaluation {
 public:
  Evaluation(const Expr& root, const Bindings& bindings);
  ~Evaluation();
  Evaluation(Evaluation&&) noexcept;
  Evaluation& operator=(Evaluation&&) noexcept;

  const Tensor& value() const;
  // Forward value of any node reachable from the root.
  const Tensor& value_of(const Expr& e) const;

  // d(root)/d(leaf) for every differentiable leaf. Root must be a scalar.
  Gradients backward() const;

 private:
  struct State;
  std::unique_ptr<State> state_;
};

Tensor evaluate(const Expr& root, const Bindings& bindings);
Gradients gradient(const Expr& root, const Bindings& bindings);

// Largest |analytic - central difference| / max(|analytic|, |numeric|, 1e-8)
// over every entry of every differentiable leaf.
double grad_check(const Expr& root, const Bindings& bindings, double step);

}  // namespace nimaenh::ad
