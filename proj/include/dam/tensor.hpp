// SPDX-License-Identifier: Apache-2.0
//
// Dense f64 tensors with tape-based reverse-mode differentiation.
//
// A Tensor is a cheap handle onto an immutable node. Operations record onto
// the Graph that is active on the calling thread (see GraphScope) whenever at
// least one input is tracked; with no active graph they just compute values.
// Parameters are tracked leaves and the only tensors whose values may be
// mutated in place (by the optimizer, between steps).
#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "dam/rng.hpp"

namespace dam {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_string(const Shape& shape);

namespace detail {
struct Node;
}

class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, double value);
  static Tensor from(Shape shape, std::vector<double> values);
  static Tensor vector(std::vector<double> values);
  static Tensor scalar(double value);
  /// Tracked leaf; receives gradients on backward.
  static Tensor parameter(Shape shape, std::vector<double> values);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const { return shape().at(axis); }
  std::size_t size() const;

  std::span<const double> values() const;
  double operator[](std::size_t i) const { return values()[i]; }
  double item() const;

  bool requires_grad() const;
  bool is_leaf() const;
  /// Gradient accumulated by the last backward pass; zeros if none reached it.
  std::vector<double> grad() const;
  void zero_grad();

  /// Leaf-only in-place access for optimizers and finite-difference probes.
  std::span<double> mutable_values();
  std::span<double> mutable_grad();

  /// Untracked copy of the values.
  Tensor detach() const;

  std::shared_ptr<detail::Node> node() const { return node_; }

 private:
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
  std::shared_ptr<detail::Node> node_;

  friend Tensor custom_op(std::string_view, Shape, std::vector<double>, std::vector<Tensor>,
                          std::function<void(std::span<const double>,
                                             std::span<const std::span<double>>)>);
};

/// Backward callback: receives the output gradient and one span per input
/// (empty when that input is not tracked) into which it accumulates.
using BackwardFn =
    std::function<void(std::span<const double> grad_out, std::span<const std::span<double>> grad_in)>;

/// Builds an op result and, when a graph is active and any input is tracked,
/// records it. Throws NumericError if any value is non-finite.
Tensor custom_op(std::string_view name, Shape shape, std::vector<double> values,
                 std::vector<Tensor> inputs, BackwardFn backward);

/// Execution-ordered tape of recorded nodes.
class Graph {
 public:
  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  /// Propagates d(loss)/d(.) to every tracked tensor, visiting nodes in
  /// exact reverse recording order.
  void backward(const Tensor& loss);
  /// Drops recorded nodes so the graph can be reused.
  void reset();
  std::size_t size() const { return nodes_.size(); }

  void record(std::shared_ptr<detail::Node> node);

 private:
  std::vector<std::shared_ptr<detail::Node>> nodes_;
  bool backward_done_ = false;
};

/// Makes `graph` the active recording target for this thread.
class GraphScope {
 public:
  explicit GraphScope(Graph& graph);
  ~GraphScope();
  GraphScope(const GraphScope&) = delete;
  GraphScope& operator=(const GraphScope&) = delete;

 private:
  Graph* previous_;
};

Graph* active_graph();

// ---------------------------------------------------------------- elementwise

enum class OpKind { kAdd, kSub, kMul, kDiv, kNeg, kSigmoid, kTanh, kExp, kLog, kRelu };

/// Binary kinds require equal shapes, or one operand of size 1 (scalar).
Tensor elementwise(OpKind kind, const Tensor& a, const std::optional<Tensor>& b = std::nullopt);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor neg(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor tanh(const Tensor& x);
Tensor exp(const Tensor& x);
Tensor log(const Tensor& x);
Tensor relu(const Tensor& x);

Tensor scale(const Tensor& x, double factor);
Tensor add_scalar(const Tensor& x, double offset);
/// 1 - x
Tensor one_minus(const Tensor& x);
/// log(1 + e^x), overflow-safe.
Tensor softplus(const Tensor& x);
/// 1 + softplus(x); always >= 1.
Tensor oneplus(const Tensor& x);

// ----------------------------------------------------------------- structure

Tensor reshape(const Tensor& x, Shape shape);
/// Contiguous run of the flattened values, returned as a vector.
Tensor slice(const Tensor& x, std::size_t offset, std::size_t length);
/// Concatenation of flattened inputs into one vector.
Tensor concat(std::span<const Tensor> parts);
Tensor concat(std::initializer_list<Tensor> parts);
/// Stacks equal-size vectors as rows of a matrix.
Tensor stack_rows(std::span<const Tensor> rows);
/// Row `index` of a matrix; gradient scatters back into that row.
Tensor row(const Tensor& matrix, std::size_t index);
Tensor transpose(const Tensor& matrix);

// ------------------------------------------------------------ linear algebra

/// [m,k]x[k,n], [m,k]x[k] or [k]x[k,n].
Tensor matmul(const Tensor& a, const Tensor& b);
/// a bᵀ for vectors a[m], b[n].
Tensor outer(const Tensor& a, const Tensor& b);
Tensor sum(const Tensor& x);
Tensor dot(const Tensor& a, const Tensor& b);

// ------------------------------------------------------------------- neural

inline constexpr double kCosineEpsilon = 1e-6;
inline constexpr double kLayerNormEpsilon = 1e-5;

/// Max-subtracted softmax over a vector.
Tensor softmax(const Tensor& x);
/// k·m / (|k||m| + 1e-6), as a scalar tensor.
Tensor cosine_similarity(const Tensor& k, const Tensor& m);
/// Cosine similarity of `key` against every row of `matrix`.
Tensor cosine_similarity_rows(const Tensor& matrix, const Tensor& key);
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias);
/// Inverted dropout; identity when not training or p == 0.
Tensor dropout(const Tensor& x, double p, bool training, Rng& rng);

// ------------------------------------------------------------------- losses

/// Σ BCE(σ(logits), targets), computed from logits.
Tensor sigmoid_cross_entropy(const Tensor& logits, const Tensor& targets);
/// -log softmax(logits)[target].
Tensor softmax_cross_entropy(const Tensor& logits, std::size_t target);
/// Σ (prediction - target)².
Tensor squared_error(const Tensor& prediction, const Tensor& target);

}  // namespace dam
