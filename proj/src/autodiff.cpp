#include "nimaenh/autodiff.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <span>
#include <unordered_map>

#include "nimaenh/error.hpp"

namespace nimaenh::ad {

enum class LeafKind { none, input, parameter, constant };

class Node {
 public:
  Node(std::string op, std::vector<Expr> operands)
      : op_(std::move(op)), operands_(std::move(operands)), id_(next_id()) {}
  virtual ~Node() = default;

  const std::string& op() const { return op_; }
  const std::vector<Expr>& operands() const { return operands_; }
  std::uint64_t id() const { return id_; }

  virtual LeafKind leaf_kind() const { return LeafKind::none; }
  virtual std::string label() const { return op_ + "#" + std::to_string(id_); }

  // `aux` is per-evaluation scratch the op may fill for its backward pass.
  virtual Tensor forward(std::span<const Tensor* const> args, Tensor& aux) const = 0;

  // Accumulates into grads[k]; grads[k] is null when operand k needs no gradient.
  virtual void backward(std::span<const Tensor* const> args, const Tensor& out, const Tensor& aux,
                        const Tensor& grad_out, std::span<Tensor* const> grads) const = 0;

 protected:
  [[noreturn]] void shape_error(const std::string& what) const {
    throw ShapeError("shape mismatch at node " + label() + ": " + what);
  }
  void expect_rank(const Tensor& t, std::size_t rank, const char* role) const {
    if (t.rank() != rank) {
      shape_error(std::string(role) + " must have rank " + std::to_string(rank) + ", got " +
                  to_string(t.shape()));
    }
  }

 private:
  static std::uint64_t next_id() {
    static std::atomic<std::uint64_t> counter{0};
    return counter.fetch_add(1, std::memory_order_relaxed);
  }

  std::string op_;
  std::vector<Expr> operands_;
  std::uint64_t id_;
};

std::string Expr::label() const { return node_->label(); }

namespace {

class LeafNode final : public Node {
 public:
  LeafNode(LeafKind kind, std::string name, Tensor value = {})
      : Node(kind == LeafKind::input ? "input"
             : kind == LeafKind::parameter ? "parameter"
                                           : "constant",
             {}),
        kind_(kind),
        name_(std::move(name)),
        value_(std::move(value)) {}

  LeafKind leaf_kind() const override { return kind_; }
  const std::string& name() const { return name_; }
  const Tensor& constant_value() const { return value_; }
  std::string label() const override {
    if (kind_ == LeafKind::constant) return Node::label();
    return op() + ":" + name_ + "#" + std::to_string(id());
  }

  Tensor forward(std::span<const Tensor* const>, Tensor&) const override { return value_; }
  void backward(std::span<const Tensor* const>, const Tensor&, const Tensor&, const Tensor&,
                std::span<Tensor* const>) const override {}

 private:
  LeafKind kind_;
  std::string name_;
  Tensor value_;
};

// ---- elementwise -----------------------------------------------------------

enum class BinaryKind { add, sub, mul };

class BinaryNode final : public Node {
 public:
  BinaryNode(BinaryKind kind, Expr a, Expr b)
      : Node(kind == BinaryKind::add ? "add" : kind == BinaryKind::sub ? "sub" : "mul",
             {std::move(a), std::move(b)}),
        kind_(kind) {}

  Tensor forward(std::span<const Tensor* const> args, Tensor&) const override {
    const Tensor& a = *args[0];
    const Tensor& b = *args[1];
    if (a.shape() != b.shape()) shape_error(to_string(a.shape()) + " vs " + to_string(b.shape()));
    Tensor out = Tensor::uninitialized(a.shape());
    for (std::size_t i = 0; i < a.size(); ++i) {
      switch (kind_) {
        case BinaryKind::add: out[i] = a[i] + b[i]; break;
        case BinaryKind::sub: out[i] = a[i] - b[i]; break;
        case BinaryKind::mul: out[i] = a[i] * b[i]; break;
      }
    }
    return out;
  }

  void backward(std::span<const Tensor* const> args, const Tensor&, const Tensor&,
                const Tensor& g, std::span<Tensor* const> grads) const override {
    const Tensor& a = *args[0];
    const Tensor& b = *args[1];
    for (std::size_t i = 0; i < g.size(); ++i) {
      switch (kind_) {
        case BinaryKind::add:
          if (grads[0]) (*grads[0])[i] += g[i];
          if (grads[1]) (*grads[1])[i] += g[i];
          break;
        case BinaryKind::sub:
          if (grads[0]) (*grads[0])[i] += g[i];
          if (grads[1]) (*grads[1])[i] -= g[i];
          break;
        case BinaryKind::mul:
          if (grads[0]) (*grads[0])[i] += g[i] * b[i];
          if (grads[1]) (*grads[1])[i] += g[i] * a[i];
          break;
      }
    }
  }

 private:
  BinaryKind kind_;
};

enum class UnaryKind { scale, add_scalar, square, abs, huber, leaky_relu };

class UnaryNode final : public Node {
 public:
  UnaryNode(UnaryKind kind, std::string op, Expr a, double param)
      : Node(std::move(op), {std::move(a)}), kind_(kind), param_(param) {}

  Tensor forward(std::span<const Tensor* const> args, Tensor&) const override {
    const Tensor& a = *args[0];
    Tensor out = Tensor::uninitialized(a.shape());
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = apply(a[i]);
    return out;
  }

  void backward(std::span<const Tensor* const> args, const Tensor&, const Tensor&,
                const Tensor& g, std::span<Tensor* const> grads) const override {
    if (!grads[0]) return;
    const Tensor& a = *args[0];
    Tensor& ga = *grads[0];
    for (std::size_t i = 0; i < a.size(); ++i) ga[i] += g[i] * derivative(a[i]);
  }

 private:
  double apply(double x) const {
    switch (kind_) {
      case UnaryKind::scale: return param_ * x;
      case UnaryKind::add_scalar: return x + param_;
      case UnaryKind::square: return x * x;
      case UnaryKind::abs: return std::abs(x);
      case UnaryKind::huber: {
        const double ax = std::abs(x);
        return ax <= param_ ? 0.5 * x * x : param_ * (ax - 0.5 * param_);
      }
      case UnaryKind::leaky_relu: return x > 0.0 ? x : param_ * x;
    }
    return x;
  }

  double derivative(double x) const {
    switch (kind_) {
      case UnaryKind::scale: return param_;
      case UnaryKind::add_scalar: return 1.0;
      case UnaryKind::square: return 2.0 * x;
      case UnaryKind::abs: return x > 0.0 ? 1.0 : x < 0.0 ? -1.0 : 0.0;
      case UnaryKind::huber:
        return std::abs(x) <= param_ ? x : (x > 0.0 ? param_ : -param_);
      case UnaryKind::leaky_relu: return x > 0.0 ? 1.0 : param_;
    }
    return 1.0;
  }

  UnaryKind kind_;
  double param_;
};

// ---- reductions -------------------------------------------------------------

class ReduceNode final : public Node {
 public:
  ReduceNode(bool mean, Expr a) : Node(mean ? "mean" : "sum", {std::move(a)}), mean_(mean) {}

  Tensor forward(std::span<const Tensor* const> args, Tensor&) const override {
    const Tensor& a = *args[0];
    double acc = 0.0;
    for (double v : a.values()) acc += v;
    if (mean_) acc /= static_cast<double>(a.size());
    return Tensor::scalar(acc);
  }

  void backward(std::span<const Tensor* const> args, const Tensor&, const Tensor&,
                const Tensor& g, std::span<Tensor* const> grads) const override {
    if (!grads[0]) return;
    const double scale = mean_ ? g[0] / static_cast<double>(args[0]->size()) : g[0];
    for (double& v : grads[0]->values()) v += scale;
  }

 private:
  bool mean_;
};

class CumsumNode final : public Node {
 public:
  explicit CumsumNode(Expr a) : Node("cumsum", {std::move(a)}) {}

  Tensor forward(std::span<const Tensor* const> args, Tensor&) const override {
    const Tensor& a = *args[0];
    expect_rank(a, 1, "operand");
    Tensor out = Tensor::uninitialized(a.shape());
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = (acc += a[i]);
    return out;
  }

  void backward(std::span<const Tensor* const>, const Tensor&, const Tensor&, const Tensor& g,
                std::span<Tensor* const> grads) const override {
    if (!grads[0]) return;
    double acc = 0.0;
    for (std::size_t i = g.size(); i-- > 0;) {
      acc += g[i];
      (*grads[0])[i] += acc;
    }
  }
};

class SoftmaxNode final : public Node {
 public:
  explicit SoftmaxNode(Expr a) : Node("softmax", {std::move(a)}) {}

  Tensor forward(std::span<const Tensor* const> args, Tensor&) const override {
    const Tensor& z = *args[0];
    expect_rank(z, 1, "logits");
    const double peak = *std::max_element(z.values().begin(), z.values().end());
    Tensor out(z.shape());
    double total = 0.0;
    for (std::size_t i = 0; i < z.size(); ++i) total += (out[i] = std::exp(z[i] - peak));
    for (double& v : out.values()) v /= total;
    return out;
  }

  void backward(std::span<const Tensor* const>, const Tensor& y, const Tensor&, const Tensor& g,
                std::span<Tensor* const> grads) const override {
    if (!grads[0]) return;
    double dot = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) dot += g[i] * y[i];
    for (std::size_t i = 0; i < y.size(); ++i) (*grads[0])[i] += y[i] * (g[i] - dot);
  }
};

// ---- layers -----------------------------------------------------------------

class Conv2dNode final : public Node {
 public:
  Conv2dNode(Expr x, Expr w, Expr b, ConvOptions options)
      : Node("conv2d", {std::move(x), std::move(w), std::move(b)}), options_(options) {}

  Tensor forward(std::span<const Tensor* const> args, Tensor& aux) const override {
    const auto g = geometry(args);
    aux = Tensor::uninitialized(Shape{g.padded_h, g.padded_w, g.in_channels});
    kernels::pad(g, args[0]->values(), aux.values());
    Tensor out = Tensor::uninitialized(Shape{g.out_h, g.out_w, g.out_channels});
    kernels::conv_forward(g, aux.values(), args[1]->values(), args[2]->values(), out.values());
    return out;
  }

  void backward(std::span<const Tensor* const> args, const Tensor&, const Tensor& aux,
                const Tensor& grad_out, std::span<Tensor* const> grads) const override {
    const auto g = geometry(args);
    if (grads[1] || grads[2]) {
      Tensor scratch_w, scratch_b;
      Tensor& gw = grads[1] ? *grads[1] : (scratch_w = Tensor(args[1]->shape()));
      Tensor& gb = grads[2] ? *grads[2] : (scratch_b = Tensor(args[2]->shape()));
      kernels::conv_backward_params(g, aux.values(), grad_out.values(), gw.values(), gb.values());
    }
    if (grads[0]) {
      kernels::conv_backward_input_folded(g, grad_out.values(), args[1]->values(),
                                          grads[0]->values());
    }
  }

 private:
  kernels::ConvGeometry geometry(std::span<const Tensor* const> args) const {
    const Tensor& x = *args[0];
    const Tensor& w = *args[1];
    const Tensor& b = *args[2];
    expect_rank(x, 3, "input");
    expect_rank(w, 4, "weights");
    expect_rank(b, 1, "bias");
    if (w.dim(2) != x.dim(2)) {
      shape_error("input has " + std::to_string(x.dim(2)) + " channels but weights expect " +
                  std::to_string(w.dim(2)));
    }
    if (b.dim(0) != w.dim(3)) {
      shape_error("bias " + to_string(b.shape()) + " does not match weights " +
                  to_string(w.shape()));
    }
    try {
      return kernels::make_geometry(x.dim(0), x.dim(1), x.dim(2), w.dim(3), w.dim(0), w.dim(1),
                                    options_.dilation, options_.stride, options_.padding);
    } catch (const InvalidArgument& e) {
      throw InvalidArgument("at node " + label() + ": " + e.what());
    }
  }

  ConvOptions options_;
};

class GlobalPoolNode final : public Node {
 public:
  explicit GlobalPoolNode(Expr x) : Node("global_average_pool", {std::move(x)}) {}

  Tensor forward(std::span<const Tensor* const> args, Tensor&) const override {
    const Tensor& x = *args[0];
    expect_rank(x, 3, "input");
    const std::size_t pixels = x.dim(0) * x.dim(1), c = x.dim(2);
    Tensor out(Shape{c});
    for (std::size_t p = 0; p < pixels; ++p)
      for (std::size_t k = 0; k < c; ++k) out[k] += x[p * c + k];
    for (double& v : out.values()) v /= static_cast<double>(pixels);
    return out;
  }

  void backward(std::span<const Tensor* const> args, const Tensor&, const Tensor&,
                const Tensor& g, std::span<Tensor* const> grads) const override {
    if (!grads[0]) return;
    const Tensor& x = *args[0];
    const std::size_t pixels = x.dim(0) * x.dim(1), c = x.dim(2);
    const double inv = 1.0 / static_cast<double>(pixels);
    for (std::size_t p = 0; p < pixels; ++p)
      for (std::size_t k = 0; k < c; ++k) (*grads[0])[p * c + k] += g[k] * inv;
  }
};

class FullyConnectedNode final : public Node {
 public:
  FullyConnectedNode(Expr x, Expr w, Expr b)
      : Node("fully_connected", {std::move(x), std::move(w), std::move(b)}) {}

  Tensor forward(std::span<const Tensor* const> args, Tensor&) const override {
    const Tensor& x = *args[0];
    const Tensor& w = *args[1];
    const Tensor& b = *args[2];
    expect_rank(x, 1, "input");
    expect_rank(w, 2, "weights");
    expect_rank(b, 1, "bias");
    if (w.dim(0) != x.dim(0) || w.dim(1) != b.dim(0)) {
      shape_error("input " + to_string(x.shape()) + ", weights " + to_string(w.shape()) +
                  ", bias " + to_string(b.shape()));
    }
    const std::size_t c = x.dim(0), m = w.dim(1);
    Tensor out(Shape{m});
    for (std::size_t k = 0; k < c; ++k)
      for (std::size_t j = 0; j < m; ++j) out[j] += x[k] * w[k * m + j];
    for (std::size_t j = 0; j < m; ++j) out[j] += b[j];
    return out;
  }

  void backward(std::span<const Tensor* const> args, const Tensor&, const Tensor&,
                const Tensor& g, std::span<Tensor* const> grads) const override {
    const Tensor& x = *args[0];
    const Tensor& w = *args[1];
    const std::size_t c = x.dim(0), m = w.dim(1);
    if (grads[0]) {
      for (std::size_t k = 0; k < c; ++k) {
        double acc = 0.0;
        for (std::size_t j = 0; j < m; ++j) acc += g[j] * w[k * m + j];
        (*grads[0])[k] += acc;
      }
    }
    if (grads[1]) {
      for (std::size_t k = 0; k < c; ++k)
        for (std::size_t j = 0; j < m; ++j) (*grads[1])[k * m + j] += x[k] * g[j];
    }
    if (grads[2]) {
      for (std::size_t j = 0; j < m; ++j) (*grads[2])[j] += g[j];
    }
  }
};

template <class N, class... Args>
Expr make(Args&&... args) {
  return Expr(std::make_shared<const N>(std::forward<Args>(args)...));
}

}  // namespace

Expr input(std::string name) { return make<LeafNode>(LeafKind::input, std::move(name)); }
Expr parameter(std::string name) { return make<LeafNode>(LeafKind::parameter, std::move(name)); }
Expr constant(Tensor value) { return make<LeafNode>(LeafKind::constant, "", std::move(value)); }

Expr add(Expr a, Expr b) { return make<BinaryNode>(BinaryKind::add, std::move(a), std::move(b)); }
Expr sub(Expr a, Expr b) { return make<BinaryNode>(BinaryKind::sub, std::move(a), std::move(b)); }
Expr mul(Expr a, Expr b) { return make<BinaryNode>(BinaryKind::mul, std::move(a), std::move(b)); }
Expr scale(Expr a, double factor) {
  return make<UnaryNode>(UnaryKind::scale, "scale", std::move(a), factor);
}
Expr add_scalar(Expr a, double offset) {
  return make<UnaryNode>(UnaryKind::add_scalar, "add_scalar", std::move(a), offset);
}
Expr square(Expr a) { return make<UnaryNode>(UnaryKind::square, "square", std::move(a), 0.0); }
Expr abs(Expr a) { return make<UnaryNode>(UnaryKind::abs, "abs", std::move(a), 0.0); }
Expr huber(Expr a, double delta) {
  if (!(delta > 0.0)) throw InvalidArgument("huber delta must be positive");
  return make<UnaryNode>(UnaryKind::huber, "huber", std::move(a), delta);
}
Expr leaky_relu(Expr a, double slope) {
  if (!(slope >= 0.0 && slope < 1.0)) {
    throw InvalidArgument("leaky relu slope must lie in [0, 1), got " + std::to_string(slope));
  }
  return make<UnaryNode>(UnaryKind::leaky_relu, "leaky_relu", std::move(a), slope);
}
Expr sum(Expr a) { return make<ReduceNode>(false, std::move(a)); }
Expr mean(Expr a) { return make<ReduceNode>(true, std::move(a)); }
Expr cumsum(Expr a) { return make<CumsumNode>(std::move(a)); }
Expr softmax(Expr logits) { return make<SoftmaxNode>(std::move(logits)); }
Expr conv2d(Expr x, Expr weights, Expr bias, ConvOptions options) {
  return make<Conv2dNode>(std::move(x), std::move(weights), std::move(bias), options);
}
Expr global_average_pool(Expr x) { return make<GlobalPoolNode>(std::move(x)); }
Expr fully_connected(Expr x, Expr weights, Expr bias) {
  return make<FullyConnectedNode>(std::move(x), std::move(weights), std::move(bias));
}

// ---- evaluation -------------------------------------------------------------

struct Evaluation::State {
  std::vector<const Node*> order;  // operands before users
  std::unordered_map<const Node*, std::size_t> index;
  std::vector<std::vector<std::size_t>> operand_index;
  std::vector<Tensor> values;
  std::vector<Tensor> aux;
  std::vector<bool> needs_grad;
  std::shared_ptr<const Node> root;  // keeps the graph alive
};

Evaluation::Evaluation(const Expr& root, const Bindings& bindings)
    : state_(std::make_unique<State>()) {
  State& s = *state_;
  s.root = root.ptr();

  // Iterative post-order DFS; operands are visited left to right.
  std::vector<std::pair<const Node*, std::size_t>> stack{{&root.node(), 0}};
  std::unordered_map<const Node*, bool> on_stack{{&root.node(), true}};
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->operands().size()) {
      const Node* child = &node->operands()[next++].node();
      if (s.index.count(child)) continue;
      if (on_stack[child]) throw InvalidArgument("expression graph contains a cycle");
      on_stack[child] = true;
      stack.emplace_back(child, 0);
      continue;
    }
    on_stack[node] = false;
    s.index.emplace(node, s.order.size());
    s.order.push_back(node);
    stack.pop_back();
  }

  const std::size_t n = s.order.size();
  s.operand_index.resize(n);
  s.values.resize(n);
  s.aux.resize(n);
  s.needs_grad.assign(n, false);

  for (std::size_t k = 0; k < n; ++k) {
    const Node* node = s.order[k];
    switch (node->leaf_kind()) {
      case LeafKind::input:
      case LeafKind::parameter: {
        const auto& leaf = static_cast<const LeafNode&>(*node);
        auto it = bindings.find(leaf.name());
        if (it == bindings.end()) {
          throw UnboundInputError("no binding for " + leaf.label());
        }
        s.values[k] = it->second;
        s.needs_grad[k] =
            node->leaf_kind() == LeafKind::parameter || it->second.requires_grad();
        continue;
      }
      case LeafKind::constant:
        s.values[k] = static_cast<const LeafNode&>(*node).constant_value();
        continue;
      case LeafKind::none:
        break;
    }
    std::vector<const Tensor*> args;
    for (const auto& operand : node->operands()) {
      const std::size_t j = s.index.at(&operand.node());
      s.operand_index[k].push_back(j);
      args.push_back(&s.values[j]);
      if (s.needs_grad[j]) s.needs_grad[k] = true;
    }
    s.values[k] = node->forward(args, s.aux[k]);
  }
}

Evaluation::~Evaluation() = default;
Evaluation::Evaluation(Evaluation&&) noexcept = default;
Evaluation& Evaluation::operator=(Evaluation&&) noexcept = default;

const Tensor& Evaluation::value() const { return state_->values.back(); }

const Tensor& Evaluation::value_of(const Expr& e) const {
  auto it = state_->index.find(&e.node());
  if (it == state_->index.end()) {
    throw InvalidArgument(e.label() + " is not part of this evaluation");
  }
  return state_->values[it->second];
}

Gradients Evaluation::backward() const {
  const State& s = *state_;
  const std::size_t n = s.order.size();
  if (s.values.back().size() != 1) {
    throw ShapeError("gradient needs a scalar root, got shape " +
                     to_string(s.values.back().shape()));
  }

  std::vector<Tensor> grads(n);
  std::vector<bool> has_grad(n, false);
  auto ensure = [&](std::size_t k) -> Tensor& {
    if (!has_grad[k]) {
      grads[k] = Tensor(s.values[k].shape());
      has_grad[k] = true;
    }
    return grads[k];
  };

  if (s.needs_grad[n - 1]) ensure(n - 1).fill(1.0);

  for (std::size_t k = n; k-- > 0;) {
    if (!has_grad[k] || !s.needs_grad[k]) continue;
    const Node* node = s.order[k];
    if (node->leaf_kind() != LeafKind::none) continue;
    std::vector<const Tensor*> args;
    std::vector<Tensor*> operand_grads;
    for (std::size_t j : s.operand_index[k]) {
      args.push_back(&s.values[j]);
      operand_grads.push_back(s.needs_grad[j] ? &ensure(j) : nullptr);
    }
    node->backward(args, s.values[k], s.aux[k], grads[k], operand_grads);
  }

  Gradients out;
  for (std::size_t k = 0; k < n; ++k) {
    const Node* node = s.order[k];
    if (node->leaf_kind() != LeafKind::input && node->leaf_kind() != LeafKind::parameter) continue;
    if (!s.needs_grad[k]) continue;
    const auto& name = static_cast<const LeafNode&>(*node).name();
    Tensor g = has_grad[k] ? grads[k] : Tensor(s.values[k].shape());
    auto [it, inserted] = out.try_emplace(name, g);
    if (!inserted) {
      for (std::size_t i = 0; i < g.size(); ++i) it->second[i] += g[i];
    }
  }
  return out;
}

Tensor evaluate(const Expr& root, const Bindings& bindings) {
  return Evaluation(root, bindings).value();
}

Gradients gradient(const Expr& root, const Bindings& bindings) {
  return Evaluation(root, bindings).backward();
}

double grad_check(const Expr& root, const Bindings& bindings, double step) {
  if (!(step > 0.0)) throw InvalidArgument("grad_check step must be positive");
  const Gradients analytic = gradient(root, bindings);
  Bindings probe = bindings;
  double worst = 0.0;
  for (const auto& [name, grad] : analytic) {
    Tensor& target = probe.at(name);
    for (std::size_t i = 0; i < target.size(); ++i) {
      const double saved = target[i];
      target[i] = saved + step;
      const double up = evaluate(root, probe).item();
      target[i] = saved - step;
      const double down = evaluate(root, probe).item();
      target[i] = saved;
      const double numeric = (up - down) / (2.0 * step);
      const double a = grad[i];
      const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
      worst = std::max(worst, std::abs(a - numeric) / denom);
    }
  }
  return worst;
}

}  // namespace nimaenh::ad
