// SPDX-License-Identifier: Apache-2.0
#include "dam/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "dam/error.hpp"

namespace dam {

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;
  bool requires_grad = false;
  bool leaf = true;
  std::vector<std::shared_ptr<Node>> inputs;
  BackwardFn backward;

  std::vector<double>& grad_buffer() {
    if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
    return grad;
  }
};

}  // namespace detail

namespace {

thread_local Graph* t_active_graph = nullptr;

std::shared_ptr<detail::Node> make_node(Shape shape, std::vector<double> values) {
  if (shape_size(shape) != values.size()) {
    throw ShapeError("tensor data length " + std::to_string(values.size()) +
                     " does not match shape " + shape_string(shape));
  }
  for (std::size_t extent : shape) {
    if (extent == 0) throw ShapeError("tensor extents must be positive: " + shape_string(shape));
  }
  auto node = std::make_shared<detail::Node>();
  node->shape = std::move(shape);
  node->value = std::move(values);
  return node;
}

void require_same_shape(std::string_view op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                     shape_string(b.shape()));
  }
}

void require_rank(std::string_view op, const Tensor& x, std::size_t rank) {
  if (x.rank() != rank) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                     shape_string(x.shape()));
  }
}

bool is_vector(const Tensor& x) { return x.rank() == 1; }

double sigmoid_value(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double softplus_value(double x) {
  return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

template <class F, class D>
Tensor unary(std::string_view name, const Tensor& x, F&& forward, D&& derivative) {
  const auto in = x.values();
  std::vector<double> out(in.size());
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = forward(in[i]);
  return custom_op(name, x.shape(), out, {x},
                   [x, derivative](std::span<const double> g, std::span<const std::span<double>> gi) {
                     const auto xv = x.values();
                     for (std::size_t i = 0; i < g.size(); ++i) gi[0][i] += g[i] * derivative(xv[i]);
                   });
}

// Unary op whose derivative is cheapest in terms of its output.
template <class F, class D>
Tensor unary_from_output(std::string_view name, const Tensor& x, F&& forward, D&& derivative) {
  const auto in = x.values();
  std::vector<double> out(in.size());
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = forward(in[i]);
  auto saved = std::make_shared<std::vector<double>>(out);
  return custom_op(name, x.shape(), std::move(out), {x},
                   [saved, derivative](std::span<const double> g,
                                       std::span<const std::span<double>> gi) {
                     const auto& y = *saved;
                     for (std::size_t i = 0; i < g.size(); ++i) gi[0][i] += g[i] * derivative(y[i]);
                   });
}

}  // namespace

std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

// --------------------------------------------------------------------- Tensor

Tensor Tensor::zeros(Shape shape) { return full(std::move(shape), 0.0); }

Tensor Tensor::full(Shape shape, double value) {
  const std::size_t n = shape_size(shape);
  return Tensor(make_node(std::move(shape), std::vector<double>(n, value)));
}

Tensor Tensor::from(Shape shape, std::vector<double> values) {
  return Tensor(make_node(std::move(shape), std::move(values)));
}

Tensor Tensor::vector(std::vector<double> values) {
  const std::size_t n = values.size();
  return Tensor(make_node({n}, std::move(values)));
}

Tensor Tensor::scalar(double value) { return Tensor(make_node({}, {value})); }

Tensor Tensor::parameter(Shape shape, std::vector<double> values) {
  auto node = make_node(std::move(shape), std::move(values));
  node->requires_grad = true;
  return Tensor(std::move(node));
}

const Shape& Tensor::shape() const { return node_->shape; }
std::size_t Tensor::size() const { return node_->value.size(); }
std::span<const double> Tensor::values() const { return node_->value; }

double Tensor::item() const {
  if (size() != 1) throw ShapeError("item() on tensor of shape " + shape_string(shape()));
  return node_->value[0];
}

bool Tensor::requires_grad() const { return node_->requires_grad; }
bool Tensor::is_leaf() const { return node_->leaf; }

std::vector<double> Tensor::grad() const {
  if (node_->grad.size() != node_->value.size()) return std::vector<double>(size(), 0.0);
  return node_->grad;
}

void Tensor::zero_grad() { std::fill(node_->grad.begin(), node_->grad.end(), 0.0); }

std::span<double> Tensor::mutable_values() {
  if (!node_->leaf) throw GraphError("in-place mutation of a non-leaf tensor");
  return node_->value;
}

std::span<double> Tensor::mutable_grad() {
  if (!node_->leaf) throw GraphError("in-place gradient access on a non-leaf tensor");
  return node_->grad_buffer();
}

Tensor Tensor::detach() const { return Tensor(make_node(node_->shape, node_->value)); }

Tensor custom_op(std::string_view name, Shape shape, std::vector<double> values,
                 std::vector<Tensor> inputs, BackwardFn backward) {
  for (double v : values) {
    if (!std::isfinite(v)) throw NumericError(std::string(name) + ": non-finite value produced");
  }
  auto node = make_node(std::move(shape), std::move(values));
  node->leaf = false;
  Graph* graph = t_active_graph;
  if (graph != nullptr) {
    const bool tracked =
        std::any_of(inputs.begin(), inputs.end(), [](const Tensor& t) { return t.requires_grad(); });
    if (tracked) {
      node->requires_grad = true;
      node->inputs.reserve(inputs.size());
      for (auto& t : inputs) node->inputs.push_back(t.node_);
      node->backward = std::move(backward);
      graph->record(node);
    }
  }
  return Tensor(std::move(node));
}

// ---------------------------------------------------------------------- Graph

void Graph::record(std::shared_ptr<detail::Node> node) {
  if (backward_done_) throw GraphError("recording onto a graph after backward; call reset() first");
  nodes_.push_back(std::move(node));
}

void Graph::backward(const Tensor& loss) {
  if (backward_done_) throw GraphError("backward called twice without reset");
  if (loss.size() != 1) throw GraphError("backward requires a scalar loss, got " + shape_string(loss.shape()));
  if (!loss.requires_grad()) throw GraphError("loss does not depend on any tracked tensor");
  backward_done_ = true;
  auto root = loss.node();
  root->grad_buffer()[0] += 1.0;
  if (root->leaf) return;

  std::vector<std::span<double>> grad_in;
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    detail::Node& node = **it;
    if (node.grad.size() != node.value.size()) continue;  // unreached
    grad_in.clear();
    for (auto& input : node.inputs) {
      if (input->requires_grad) {
        grad_in.emplace_back(input->grad_buffer());
      } else {
        grad_in.emplace_back();
      }
    }
    node.backward(node.grad, grad_in);
  }
}

void Graph::reset() {
  nodes_.clear();
  backward_done_ = false;
}

GraphScope::GraphScope(Graph& graph) : previous_(t_active_graph) { t_active_graph = &graph; }
GraphScope::~GraphScope() { t_active_graph = previous_; }

Graph* active_graph() { return t_active_graph; }

// ---------------------------------------------------------------- elementwise

namespace {

Tensor binary(OpKind kind, const Tensor& a, const Tensor& b) {
  const bool a_scalar = a.size() == 1 && b.size() != 1;
  const bool b_scalar = b.size() == 1 && a.size() != 1;
  if (!a_scalar && !b_scalar) require_same_shape("elementwise", a, b);
  const Shape& shape = a_scalar ? b.shape() : a.shape();
  const std::size_t n = shape_size(shape);
  const auto av = a.values();
  const auto bv = b.values();
  auto at = [&](std::span<const double> v, bool s, std::size_t i) { return s ? v[0] : v[i]; };

  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double x = at(av, a_scalar, i);
    const double y = at(bv, b_scalar, i);
    switch (kind) {
      case OpKind::kAdd: out[i] = x + y; break;
      case OpKind::kSub: out[i] = x - y; break;
      case OpKind::kMul: out[i] = x * y; break;
      case OpKind::kDiv: out[i] = x / y; break;
      default: throw Error("elementwise: not a binary op kind");
    }
  }
  return custom_op("elementwise", shape, std::move(out), {a, b},
                   [kind, a, b, a_scalar, b_scalar](std::span<const double> g,
                                                    std::span<const std::span<double>> gi) {
                     const auto av = a.values();
                     const auto bv = b.values();
                     auto ga = gi[0];
                     auto gb = gi[1];
                     for (std::size_t i = 0; i < g.size(); ++i) {
                       const std::size_t ia = a_scalar ? 0 : i;
                       const std::size_t ib = b_scalar ? 0 : i;
                       double da = 0, db = 0;
                       switch (kind) {
                         case OpKind::kAdd: da = g[i]; db = g[i]; break;
                         case OpKind::kSub: da = g[i]; db = -g[i]; break;
                         case OpKind::kMul: da = g[i] * bv[ib]; db = g[i] * av[ia]; break;
                         case OpKind::kDiv:
                           da = g[i] / bv[ib];
                           db = -g[i] * av[ia] / (bv[ib] * bv[ib]);
                           break;
                         default: break;
                       }
                       if (!ga.empty()) ga[ia] += da;
                       if (!gb.empty()) gb[ib] += db;
                     }
                   });
}

}  // namespace

Tensor elementwise(OpKind kind, const Tensor& a, const std::optional<Tensor>& b) {
  switch (kind) {
    case OpKind::kAdd:
    case OpKind::kSub:
    case OpKind::kMul:
    case OpKind::kDiv:
      if (!b) throw ShapeError("elementwise: binary op kind needs two operands");
      return binary(kind, a, *b);
    case OpKind::kNeg:
      return unary("neg", a, [](double x) { return -x; }, [](double) { return -1.0; });
    case OpKind::kSigmoid:
      return unary_from_output("sigmoid", a, sigmoid_value, [](double y) { return y * (1 - y); });
    case OpKind::kTanh:
      return unary_from_output("tanh", a, [](double x) { return std::tanh(x); },
                               [](double y) { return 1 - y * y; });
    case OpKind::kExp:
      return unary_from_output("exp", a, [](double x) { return std::exp(x); },
                               [](double y) { return y; });
    case OpKind::kLog:
      return unary("log", a, [](double x) { return std::log(x); }, [](double x) { return 1 / x; });
    case OpKind::kRelu:
      return unary("relu", a, [](double x) { return x > 0 ? x : 0.0; },
                   [](double x) { return x > 0 ? 1.0 : 0.0; });
  }
  throw Error("elementwise: unknown op kind");
}

Tensor add(const Tensor& a, const Tensor& b) { return binary(OpKind::kAdd, a, b); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary(OpKind::kSub, a, b); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary(OpKind::kMul, a, b); }
Tensor div(const Tensor& a, const Tensor& b) { return binary(OpKind::kDiv, a, b); }
Tensor neg(const Tensor& x) { return elementwise(OpKind::kNeg, x); }
Tensor sigmoid(const Tensor& x) { return elementwise(OpKind::kSigmoid, x); }
Tensor tanh(const Tensor& x) { return elementwise(OpKind::kTanh, x); }
Tensor exp(const Tensor& x) { return elementwise(OpKind::kExp, x); }
Tensor log(const Tensor& x) { return elementwise(OpKind::kLog, x); }
Tensor relu(const Tensor& x) { return elementwise(OpKind::kRelu, x); }

Tensor scale(const Tensor& x, double factor) {
  return unary("scale", x, [factor](double v) { return v * factor; },
               [factor](double) { return factor; });
}

Tensor add_scalar(const Tensor& x, double offset) {
  return unary("add_scalar", x, [offset](double v) { return v + offset; },
               [](double) { return 1.0; });
}

Tensor one_minus(const Tensor& x) {
  return unary("one_minus", x, [](double v) { return 1.0 - v; }, [](double) { return -1.0; });
}

Tensor softplus(const Tensor& x) { return unary("softplus", x, softplus_value, sigmoid_value); }

Tensor oneplus(const Tensor& x) {
  return unary("oneplus", x, [](double v) { return 1.0 + softplus_value(v); }, sigmoid_value);
}

// ------------------------------------------------------------------ structure

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_size(shape) != x.size()) {
    throw ShapeError("reshape: " + shape_string(x.shape()) + " -> " + shape_string(shape));
  }
  std::vector<double> out(x.values().begin(), x.values().end());
  return custom_op("reshape", std::move(shape), std::move(out), {x},
                   [](std::span<const double> g, std::span<const std::span<double>> gi) {
                     for (std::size_t i = 0; i < g.size(); ++i) gi[0][i] += g[i];
                   });
}

Tensor slice(const Tensor& x, std::size_t offset, std::size_t length) {
  if (length == 0 || offset + length > x.size()) {
    throw ShapeError("slice: [" + std::to_string(offset) + ", +" + std::to_string(length) +
                     ") out of range for " + shape_string(x.shape()));
  }
  const auto v = x.values();
  std::vector<double> out(v.begin() + static_cast<std::ptrdiff_t>(offset),
                          v.begin() + static_cast<std::ptrdiff_t>(offset + length));
  return custom_op("slice", {length}, std::move(out), {x},
                   [offset](std::span<const double> g, std::span<const std::span<double>> gi) {
                     for (std::size_t i = 0; i < g.size(); ++i) gi[0][offset + i] += g[i];
                   });
}

Tensor concat(std::span<const Tensor> parts) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  std::vector<double> out;
  std::vector<std::size_t> offsets;
  for (const auto& p : parts) {
    offsets.push_back(out.size());
    out.insert(out.end(), p.values().begin(), p.values().end());
  }
  const std::size_t n = out.size();
  return custom_op("concat", {n}, std::move(out), std::vector<Tensor>(parts.begin(), parts.end()),
                   [offsets](std::span<const double> g, std::span<const std::span<double>> gi) {
                     for (std::size_t p = 0; p < gi.size(); ++p) {
                       auto dst = gi[p];
                       for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += g[offsets[p] + i];
                     }
                   });
}

Tensor concat(std::initializer_list<Tensor> parts) {
  return concat(std::span<const Tensor>(parts.begin(), parts.size()));
}

Tensor stack_rows(std::span<const Tensor> rows) {
  if (rows.empty()) throw ShapeError("stack_rows: no inputs");
  const std::size_t width = rows[0].size();
  for (const auto& r : rows) {
    if (r.size() != width) throw ShapeError("stack_rows: rows of unequal length");
  }
  auto flat = concat(rows);
  return reshape(flat, {rows.size(), width});
}

Tensor row(const Tensor& matrix, std::size_t index) {
  require_rank("row", matrix, 2);
  const std::size_t cols = matrix.dim(1);
  if (index >= matrix.dim(0)) {
    throw ShapeError("row: index " + std::to_string(index) + " out of range for " +
                     shape_string(matrix.shape()));
  }
  const auto v = matrix.values();
  const std::size_t base = index * cols;
  std::vector<double> out(v.begin() + static_cast<std::ptrdiff_t>(base),
                          v.begin() + static_cast<std::ptrdiff_t>(base + cols));
  return custom_op("row", {cols}, std::move(out), {matrix},
                   [base](std::span<const double> g, std::span<const std::span<double>> gi) {
                     for (std::size_t i = 0; i < g.size(); ++i) gi[0][base + i] += g[i];
                   });
}

Tensor transpose(const Tensor& matrix) {
  require_rank("transpose", matrix, 2);
  const std::size_t m = matrix.dim(0), n = matrix.dim(1);
  const auto v = matrix.values();
  std::vector<double> out(m * n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = v[i * n + j];
  return custom_op("transpose", {n, m}, std::move(out), {matrix},
                   [m, n](std::span<const double> g, std::span<const std::span<double>> gi) {
                     for (std::size_t i = 0; i < m; ++i)
                       for (std::size_t j = 0; j < n; ++j) gi[0][i * n + j] += g[j * m + i];
                   });
}

// ------------------------------------------------------------- linear algebra

Tensor matmul(const Tensor& a, const Tensor& b) {
  // Vectors are promoted: a[k] -> [1,k], b[k] -> [k,1].
  const bool a_vec = is_vector(a);
  const bool b_vec = is_vector(b);
  if ((!a_vec && a.rank() != 2) || (!b_vec && b.rank() != 2) || (a_vec && b_vec)) {
    throw ShapeError("matmul: unsupported operand ranks " + shape_string(a.shape()) + " x " +
                     shape_string(b.shape()));
  }
  const std::size_t m = a_vec ? 1 : a.dim(0);
  const std::size_t k = a_vec ? a.dim(0) : a.dim(1);
  const std::size_t kb = b_vec ? b.dim(0) : b.dim(0);
  const std::size_t n = b_vec ? 1 : b.dim(1);
  if (k != kb) {
    throw ShapeError("matmul: inner extents differ " + shape_string(a.shape()) + " x " +
                     shape_string(b.shape()));
  }
  const auto av = a.values();
  const auto bv = b.values();
  std::vector<double> out(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = av[i * k + p];
      if (aip == 0.0) continue;
      const double* brow = bv.data() + p * n;
      double* orow = out.data() + i * n;
      for (std::size_t j = 0; j < n; ++j) orow[j] += aip * brow[j];
    }
  }
  Shape shape;
  if (a_vec) {
    shape = {n};
  } else if (b_vec) {
    shape = {m};
  } else {
    shape = {m, n};
  }
  return custom_op("matmul", std::move(shape), std::move(out), {a, b},
                   [a, b, m, k, n](std::span<const double> g, std::span<const std::span<double>> gi) {
                     const auto av = a.values();
                     const auto bv = b.values();
                     auto ga = gi[0];
                     auto gb = gi[1];
                     // dA = G Bᵀ, dB = Aᵀ G
                     if (!ga.empty()) {
                       for (std::size_t i = 0; i < m; ++i) {
                         const double* grow = g.data() + i * n;
                         for (std::size_t p = 0; p < k; ++p) {
                           const double* brow = bv.data() + p * n;
                           double acc = 0;
                           for (std::size_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
                           ga[i * k + p] += acc;
                         }
                       }
                     }
                     if (!gb.empty()) {
                       for (std::size_t i = 0; i < m; ++i) {
                         const double* grow = g.data() + i * n;
                         for (std::size_t p = 0; p < k; ++p) {
                           const double aip = av[i * k + p];
                           if (aip == 0.0) continue;
                           double* gbrow = gb.data() + p * n;
                           for (std::size_t j = 0; j < n; ++j) gbrow[j] += aip * grow[j];
                         }
                       }
                     }
                   });
}

Tensor outer(const Tensor& a, const Tensor& b) {
  require_rank("outer", a, 1);
  require_rank("outer", b, 1);
  const std::size_t m = a.size(), n = b.size();
  const auto av = a.values();
  const auto bv = b.values();
  std::vector<double> out(m * n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = av[i] * bv[j];
  return custom_op("outer", {m, n}, std::move(out), {a, b},
                   [a, b, m, n](std::span<const double> g, std::span<const std::span<double>> gi) {
                     const auto av = a.values();
                     const auto bv = b.values();
                     for (std::size_t i = 0; i < m; ++i) {
                       for (std::size_t j = 0; j < n; ++j) {
                         const double gij = g[i * n + j];
                         if (!gi[0].empty()) gi[0][i] += gij * bv[j];
                         if (!gi[1].empty()) gi[1][j] += gij * av[i];
                       }
                     }
                   });
}

Tensor sum(const Tensor& x) {
  const auto v = x.values();
  const double s = std::accumulate(v.begin(), v.end(), 0.0);
  return custom_op("sum", {}, {s}, {x},
                   [](std::span<const double> g, std::span<const std::span<double>> gi) {
                     for (double& d : gi[0]) d += g[0];
                   });
}

Tensor dot(const Tensor& a, const Tensor& b) {
  require_same_shape("dot", a, b);
  const auto av = a.values();
  const auto bv = b.values();
  double s = 0;
  for (std::size_t i = 0; i < av.size(); ++i) s += av[i] * bv[i];
  return custom_op("dot", {}, {s}, {a, b},
                   [a, b](std::span<const double> g, std::span<const std::span<double>> gi) {
                     const auto av = a.values();
                     const auto bv = b.values();
                     for (std::size_t i = 0; i < av.size(); ++i) {
                       if (!gi[0].empty()) gi[0][i] += g[0] * bv[i];
                       if (!gi[1].empty()) gi[1][i] += g[0] * av[i];
                     }
                   });
}

// --------------------------------------------------------------------- neural

Tensor softmax(const Tensor& x) {
  require_rank("softmax", x, 1);
  const auto v = x.values();
  const double mx = *std::max_element(v.begin(), v.end());
  std::vector<double> out(v.size());
  double z = 0;
  for (std::size_t i = 0; i < v.size(); ++i) z += (out[i] = std::exp(v[i] - mx));
  for (double& o : out) o /= z;
  auto saved = std::make_shared<std::vector<double>>(out);
  return custom_op("softmax", x.shape(), std::move(out), {x},
                   [saved](std::span<const double> g, std::span<const std::span<double>> gi) {
                     const auto& y = *saved;
                     double gy = 0;
                     for (std::size_t i = 0; i < y.size(); ++i) gy += g[i] * y[i];
                     for (std::size_t i = 0; i < y.size(); ++i) gi[0][i] += y[i] * (g[i] - gy);
                   });
}

namespace {

// Value and partial derivatives of k·m / (|k||m| + eps) for one pair.
struct CosineParts {
  double value;
  double num, nk, nm, den;
};

CosineParts cosine_parts(const double* k, const double* m, std::size_t n) {
  double num = 0, kk = 0, mm = 0;
  for (std::size_t i = 0; i < n; ++i) {
    num += k[i] * m[i];
    kk += k[i] * k[i];
    mm += m[i] * m[i];
  }
  const double nk = std::sqrt(kk), nm = std::sqrt(mm);
  const double den = nk * nm + kCosineEpsilon;
  return {num / den, num, nk, nm, den};
}

// Accumulates g * dD/dk into dk and g * dD/dm into dm.
void cosine_backward(const CosineParts& c, double g, const double* k, const double* m,
                     std::size_t n, double* dk, double* dm) {
  const double inv_den = 1.0 / c.den;
  const double coef = c.num * inv_den * inv_den;
  const double k_scale = c.nk > 0 ? coef * c.nm / c.nk : 0.0;
  const double m_scale = c.nm > 0 ? coef * c.nk / c.nm : 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (dk) dk[i] += g * (m[i] * inv_den - k_scale * k[i]);
    if (dm) dm[i] += g * (k[i] * inv_den - m_scale * m[i]);
  }
}

}  // namespace

Tensor cosine_similarity(const Tensor& k, const Tensor& m) {
  require_rank("cosine_similarity", k, 1);
  require_same_shape("cosine_similarity", k, m);
  const std::size_t n = k.size();
  const auto c = cosine_parts(k.values().data(), m.values().data(), n);
  return custom_op("cosine_similarity", {}, {c.value}, {k, m},
                   [k, m, c, n](std::span<const double> g, std::span<const std::span<double>> gi) {
                     cosine_backward(c, g[0], k.values().data(), m.values().data(), n,
                                     gi[0].empty() ? nullptr : gi[0].data(),
                                     gi[1].empty() ? nullptr : gi[1].data());
                   });
}

Tensor cosine_similarity_rows(const Tensor& matrix, const Tensor& key) {
  require_rank("cosine_similarity_rows", matrix, 2);
  require_rank("cosine_similarity_rows", key, 1);
  const std::size_t rows = matrix.dim(0), cols = matrix.dim(1);
  if (key.size() != cols) {
    throw ShapeError("cosine_similarity_rows: key " + shape_string(key.shape()) + " vs matrix " +
                     shape_string(matrix.shape()));
  }
  const auto mv = matrix.values();
  const auto kv = key.values();
  auto parts = std::make_shared<std::vector<CosineParts>>(rows);
  std::vector<double> out(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    (*parts)[r] = cosine_parts(kv.data(), mv.data() + r * cols, cols);
    out[r] = (*parts)[r].value;
  }
  return custom_op("cosine_similarity_rows", {rows}, std::move(out), {matrix, key},
                   [matrix, key, parts, rows, cols](std::span<const double> g,
                                                    std::span<const std::span<double>> gi) {
                     const auto mv = matrix.values();
                     const auto kv = key.values();
                     for (std::size_t r = 0; r < rows; ++r) {
                       cosine_backward((*parts)[r], g[r], kv.data(), mv.data() + r * cols, cols,
                                       gi[1].empty() ? nullptr : gi[1].data(),
                                       gi[0].empty() ? nullptr : gi[0].data() + r * cols);
                     }
                   });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias) {
  require_rank("layer_norm", x, 1);
  require_same_shape("layer_norm", x, gain);
  require_same_shape("layer_norm", x, bias);
  const std::size_t n = x.size();
  if (n < 2) throw ShapeError("layer_norm: needs at least 2 elements");
  const auto xv = x.values();
  double mean = 0;
  for (double v : xv) mean += v;
  mean /= static_cast<double>(n);
  double var = 0;
  for (double v : xv) var += (v - mean) * (v - mean);
  var /= static_cast<double>(n);
  const double inv_std = 1.0 / std::sqrt(var + kLayerNormEpsilon);
  auto normalized = std::make_shared<std::vector<double>>(n);
  std::vector<double> out(n);
  const auto gv = gain.values();
  const auto bv = bias.values();
  for (std::size_t i = 0; i < n; ++i) {
    (*normalized)[i] = (xv[i] - mean) * inv_std;
    out[i] = (*normalized)[i] * gv[i] + bv[i];
  }
  return custom_op("layer_norm", {n}, std::move(out), {x, gain, bias},
                   [gain, normalized, inv_std, n](std::span<const double> g,
                                                  std::span<const std::span<double>> gi) {
                     const auto& xh = *normalized;
                     const auto gv = gain.values();
                     if (!gi[0].empty()) {
                       double mean_d = 0, mean_dx = 0;
                       for (std::size_t i = 0; i < n; ++i) {
                         const double d = g[i] * gv[i];
                         mean_d += d;
                         mean_dx += d * xh[i];
                       }
                       mean_d /= static_cast<double>(n);
                       mean_dx /= static_cast<double>(n);
                       for (std::size_t i = 0; i < n; ++i) {
                         gi[0][i] += inv_std * (g[i] * gv[i] - mean_d - xh[i] * mean_dx);
                       }
                     }
                     for (std::size_t i = 0; i < n; ++i) {
                       if (!gi[1].empty()) gi[1][i] += g[i] * xh[i];
                       if (!gi[2].empty()) gi[2][i] += g[i];
                     }
                   });
}

Tensor dropout(const Tensor& x, double p, bool training, Rng& rng) {
  if (p < 0 || p >= 1) throw Error("dropout: probability must be in [0, 1)");
  if (!training || p == 0) return x;
  const double keep_scale = 1.0 / (1.0 - p);
  auto mask = std::make_shared<std::vector<double>>(x.size());
  for (double& m : *mask) m = rng.uniform() < p ? 0.0 : keep_scale;
  const auto xv = x.values();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[i] * (*mask)[i];
  return custom_op("dropout", x.shape(), std::move(out), {x},
                   [mask](std::span<const double> g, std::span<const std::span<double>> gi) {
                     for (std::size_t i = 0; i < g.size(); ++i) gi[0][i] += g[i] * (*mask)[i];
                   });
}

// --------------------------------------------------------------------- losses

Tensor sigmoid_cross_entropy(const Tensor& logits, const Tensor& targets) {
  require_same_shape("sigmoid_cross_entropy", logits, targets);
  const auto z = logits.values();
  const auto t = targets.values();
  double loss = 0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    loss += std::max(z[i], 0.0) - z[i] * t[i] + std::log1p(std::exp(-std::abs(z[i])));
  }
  return custom_op("sigmoid_cross_entropy", {}, {loss}, {logits, targets},
                   [logits, targets](std::span<const double> g,
                                     std::span<const std::span<double>> gi) {
                     const auto z = logits.values();
                     const auto t = targets.values();
                     for (std::size_t i = 0; i < z.size(); ++i) {
                       if (!gi[0].empty()) gi[0][i] += g[0] * (sigmoid_value(z[i]) - t[i]);
                       if (!gi[1].empty()) gi[1][i] -= g[0] * z[i];
                     }
                   });
}

Tensor softmax_cross_entropy(const Tensor& logits, std::size_t target) {
  require_rank("softmax_cross_entropy", logits, 1);
  if (target >= logits.size()) {
    throw ShapeError("softmax_cross_entropy: class " + std::to_string(target) + " out of range " +
                     shape_string(logits.shape()));
  }
  const auto z = logits.values();
  const double mx = *std::max_element(z.begin(), z.end());
  auto probs = std::make_shared<std::vector<double>>(z.size());
  double s = 0;
  for (std::size_t i = 0; i < z.size(); ++i) s += ((*probs)[i] = std::exp(z[i] - mx));
  for (double& p : *probs) p /= s;
  const double loss = mx + std::log(s) - z[target];
  return custom_op("softmax_cross_entropy", {}, {loss}, {logits},
                   [probs, target](std::span<const double> g, std::span<const std::span<double>> gi) {
                     for (std::size_t i = 0; i < probs->size(); ++i) {
                       gi[0][i] += g[0] * ((*probs)[i] - (i == target ? 1.0 : 0.0));
                     }
                   });
}

Tensor squared_error(const Tensor& prediction, const Tensor& target) {
  require_same_shape("squared_error", prediction, target);
  const auto p = prediction.values();
  const auto t = target.values();
  double loss = 0;
  for (std::size_t i = 0; i < p.size(); ++i) loss += (p[i] - t[i]) * (p[i] - t[i]);
  return custom_op("squared_error", {}, {loss}, {prediction, target},
                   [prediction, target](std::span<const double> g,
                                        std::span<const std::span<double>> gi) {
                     const auto p = prediction.values();
                     const auto t = target.values();
                     for (std::size_t i = 0; i < p.size(); ++i) {
                       const double d = 2.0 * g[0] * (p[i] - t[i]);
                       if (!gi[0].empty()) gi[0][i] += d;
                       if (!gi[1].empty()) gi[1][i] -= d;
                     }
                   });
}

}  // namespace dam
