#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <deque>
#include <functional>
#include <initializer_list>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace clusterseq {

using Scalar = double;
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

/// Vectors are stored as n x 1 matrices throughout.
std::string shape_string(const Matrix& m);

enum class Activation { identity, relu, sigmoid, tanh };

Activation parse_activation(std::string_view name);
std::string_view to_string(Activation kind);

class Tape;

/// Handle to a node recorded on a Tape. Cheap to copy; only valid while the
/// owning tape is alive.
class Var {
 public:
  Var() = default;

  const Matrix& value() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  /// Value of a 1x1 node.
  Scalar scalar() const;
  bool requires_grad() const;

  Tape* tape() const { return tape_; }
  std::size_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Linear record of forward operations. Nodes are appended in evaluation
/// order, so the record is topologically sorted by construction and a
/// reverse sweep visits every node reachable from the seeds exactly once.
class Tape {
 public:
  /// Called with the node's accumulated gradient available via grad(self).
  using BackwardFn = std::function<void(Tape&, std::size_t self)>;

  struct Seed {
    Var node;
    Matrix grad;
  };

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var leaf(Matrix value, bool requires_grad = true);
  Var constant(Matrix value) { return leaf(std::move(value), false); }

  /// Records an op result. The node requires a gradient iff any input does;
  /// otherwise the backward rule is dropped.
  Var record(Matrix value, std::initializer_list<Var> inputs, BackwardFn backward);
  Var record(Matrix value, std::span<const Var> inputs, BackwardFn backward);

  const Matrix& value(std::size_t id) const { return nodes_[id].value; }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }

  /// Gradient accumulated at a node, or an empty matrix when nothing reached it.
  const Matrix& grad(std::size_t id) const { return nodes_[id].grad; }
  bool has_grad(std::size_t id) const { return nodes_[id].has_grad; }

  /// Adds `contribution` into the gradient of `id` if it requires one.
  void accumulate(std::size_t id, const Matrix& contribution);

  /// Reverse sweep from a scalar loss with seed 1.
  void backward(Var loss);
  /// Reverse sweep from several seeded nodes at once.
  void backward(std::span<const Seed> seeds);

  /// Gradient of a node, zeros of the node's shape if untouched.
  Matrix gradient(Var v) const;

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    BackwardFn backward;
    bool requires_grad = false;
    bool has_grad = false;
  };

  void check_owner(Var v) const;
  void sweep(std::size_t top);

  // deque: references to node values stay valid while the tape grows
  std::deque<Node> nodes_;
};

// Differentiable ops. Shapes are explicit: no broadcasting except where noted.

Var matmul(Var a, Var b);
Var transpose(Var a);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var hadamard(Var a, Var b);
Var scale(Var a, Scalar factor);
/// Adds a constant to every element.
Var shift(Var a, Scalar offset);
Var sum(Var a);

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }

/// Elementwise activation. relu'(0) is taken as 0.
Var activate(Var v, Activation kind);
inline Var relu(Var v) { return activate(v, Activation::relu); }
inline Var sigmoid(Var v) { return activate(v, Activation::sigmoid); }
inline Var tanh(Var v) { return activate(v, Activation::tanh); }

/// Softmax over a column vector, or over each row of a matrix with more than
/// one column.
Var softmax(Var v);

/// Stacks rows of a on top of rows of b (column counts must match).
Var concat(Var a, Var b);

/// Euclidean distance between equally shaped arrays, as a 1x1 node.
/// The gradient at a == b is taken as 0.
Var l2_distance(Var a, Var b);

inline constexpr Scalar kKlEpsilon = 1e-10;

/// sum p * ln(p / max(q, eps)) over all entries, with 0 ln 0 = 0. For a
/// matrix of row distributions this is the sum of the per-row divergences.
Var kl_divergence(Var p, Var q, Scalar eps = kKlEpsilon);

/// Row `id` of `table` as a column vector. Gradients land only in that row.
Var lookup_embedding(Var table, Eigen::Index id);

Var slice_rows(Var v, Eigen::Index start, Eigen::Index count);
/// Row `i` of a matrix as a column vector.
Var row(Var m, Eigen::Index i);
/// Column vectors side by side: n vectors of length d give a d x n matrix.
Var stack_columns(std::span<const Var> columns);
/// Column vectors as rows: n vectors of length d give an n x d matrix.
Var stack_rows(std::span<const Var> rows);

/// Same value, cut from the gradient flow.
Var detach(Var v);

/// W x + b for a column vector x.
inline Var affine(Var weight, Var bias, Var x) { return add(matmul(weight, x), bias); }

}  // namespace clusterseq
