#pragma once

// Minimal tape-based reverse-mode differentiation over dense double matrices.
//
// A Graph records every operation applied to its Vars. Rows are examples and
// columns are features throughout. Binary elementwise ops broadcast a 1xC row,
// an Nx1 column or a 1x1 scalar against an NxC operand. A Graph is single-owner
// and must not be shared across threads.

#include <Eigen/Dense>

#include <functional>
#include <string>
#include <vector>

#include "ceb/error.hpp"

namespace ceb::ad {

using Matrix = Eigen::MatrixXd;
using Index = Eigen::Index;

/// A trainable tensor. Gradients accumulate into `grad` across backward passes
/// until the optimizer clears them.
struct Parameter {
  std::string name;
  Matrix value;
  Matrix grad;

  Parameter() = default;
  Parameter(std::string n, Matrix v) : name(std::move(n)), value(std::move(v)), grad(Matrix::Zero(value.rows(), value.cols())) {}
  void zero_grad() { grad.setZero(value.rows(), value.cols()); }
};

class Graph;

class Var {
 public:
  Var() = default;
  Var(Graph* g, int id) : graph_(g), id_(id) {}

  Graph* graph() const { return graph_; }
  int id() const { return id_; }
  bool valid() const { return graph_ != nullptr; }
  const Matrix& value() const;
  Index rows() const { return value().rows(); }
  Index cols() const { return value().cols(); }
  double scalar() const;

 private:
  Graph* graph_ = nullptr;
  int id_ = -1;
};

class Graph {
 public:
  using BackwardFn = std::function<void(Graph&, const Matrix& upstream)>;

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  /// Leaf that never receives gradient.
  Var constant(Matrix value);
  /// Leaf whose gradient can be read with grad() after backward().
  Var input(Matrix value);
  /// Leaf bound to a Parameter; backward() adds into parameter.grad.
  Var parameter(Parameter& p);

  /// Reverse pass from a 1x1 loss. Throws ValidationError for a non-scalar.
  void backward(Var loss);

  /// Gradient of the last backward() w.r.t. v (zeros if unreached).
  Matrix grad(Var v) const;

  // Operation plumbing for op implementations.
  Var record(Matrix value, bool needs_grad, BackwardFn fn);
  const Matrix& value(int id) const { return nodes_[id].value; }
  bool needs_grad(int id) const { return nodes_[id].needs_grad; }
  void accumulate(int id, const Matrix& g);
  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    bool needs_grad = false;
    Parameter* param = nullptr;
    BackwardFn backward;
  };
  std::vector<Node> nodes_;
};

// Elementwise with broadcasting.
Var operator+(Var a, Var b);
Var operator-(Var a, Var b);
Var operator*(Var a, Var b);
Var operator/(Var a, Var b);
Var operator-(Var a);
Var operator+(Var a, double c);
Var operator+(double c, Var a);
Var operator-(Var a, double c);
Var operator-(double c, Var a);
Var operator*(Var a, double c);
Var operator*(double c, Var a);

Var exp(Var a);
Var log(Var a);
Var square(Var a);
Var elu(Var a);
Var softplus(Var a);
/// Clamp with zero gradient outside [lo, hi].
Var clamp(Var a, double lo, double hi);

Var matmul(Var a, Var b);
Var transpose(Var a);

Var sum(Var a);
Var mean(Var a);
Var row_sum(Var a);
Var logsumexp_rows(Var a);
Var log_softmax_rows(Var a);

Var slice_cols(Var a, Index start, Index count);
Var concat_cols(const std::vector<Var>& parts);
Var gather_rows(Var a, const std::vector<int>& rows);
/// out(i) = a(i, columns[i]) as an Nx1 column.
Var pick(Var a, const std::vector<int>& columns);
/// Copy of the value with the gradient path cut.
Var detach(Var a);

/// log N(z_i; mean_k, diag(exp(log_variance_k))) for every pair (i, k); the
/// result is rows(z) x rows(mean).
Var pairwise_diag_gaussian_log_prob(Var z, Var mean, Var log_variance);

}  // namespace ceb::ad
