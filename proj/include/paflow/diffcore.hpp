#pragma once

// Reverse-mode differentiation over dense matrices.
//
// A Tape records every operation in evaluation order. Values are computed
// eagerly; backward() walks the tape in reverse and accumulates adjoints only
// along nodes that depend on an input marked as requiring gradients.

#include "paflow/common.hpp"

#include <functional>
#include <span>
#include <string>
#include <vector>

namespace paflow::diff {

enum class OpKind {
  leaf,
  matmul,
  add,
  sub,
  hadamard,
  scale,
  add_scalar,
  add_row,
  mul_col,
  relu,
  shifted_softplus,
  sigmoid,
  tanh,
  exp,
  log_floor,
  square,
  sin,
  clip,
  softmax_rows,
  layer_norm_rows,
  segment_softmax,
  gather_rows,
  scatter_add_rows,
  concat_cols,
  concat_rows,
  slice_cols,
  slice_rows,
  row_norm,
  rbf,
  edge_type_expand,
  mul_heads,
  sum,
  mean,
  row_sum,
  mean_rows,
};

std::string to_string(OpKind kind);

class Tape;

/// Handle to a node on a tape. Cheap to copy; valid while the tape lives.
struct Var {
  Tape* tape = nullptr;
  int id = -1;

  const Matrix& value() const;
  Index rows() const { return value().rows(); }
  Index cols() const { return value().cols(); }
  double scalar() const;
};

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Leaf that never receives an adjoint.
  Var constant(Matrix value);
  /// Leaf whose adjoint is accumulated by backward().
  Var variable(Matrix value);
  /// Leaf referencing externally owned storage (no copy). The referenced
  /// matrix must outlive the tape.
  Var parameter(const Matrix& value, bool requires_grad = true);

  /// Seeds d(out)/d(out) = 1 and propagates adjoints. `out` must be 1 x 1.
  void backward(Var out);

  /// Adjoint of a node after backward(); zero matrix of the node's shape if
  /// nothing flowed into it.
  Matrix grad(Var v) const;

  const Matrix& value(int id) const;
  bool needs_grad(int id) const { return nodes_[static_cast<std::size_t>(id)].needs_grad; }
  std::size_t size() const { return nodes_.size(); }

  // Used by op implementations.
  using Backward = std::function<void(Tape&, const Matrix& adjoint)>;
  Var push(OpKind kind, Matrix value, std::initializer_list<Var> inputs, Backward backward);
  void accumulate(int id, const Matrix& adjoint);
  Matrix& adjoint_slot(int id);

 private:
  struct Node {
    OpKind kind = OpKind::leaf;
    Matrix value;
    const Matrix* external = nullptr;
    bool needs_grad = false;
    Backward backward;
  };

  std::vector<Node> nodes_;
  std::vector<Matrix> adjoints_;
};

// Linear algebra.
Var matmul(Var a, Var b);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var hadamard(Var a, Var b);
Var scale(Var a, double factor);
Var add_scalar(Var a, double offset);
/// a (n x q) + row (1 x q) broadcast over rows.
Var add_row(Var a, Var row);
/// Row i of a (n x q) scaled by col(i) (n x 1).
Var mul_col(Var a, Var col);

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }

// Elementwise nonlinearities.
Var relu(Var a);
/// log(1 + e^x) - log 2.
Var shifted_softplus(Var a);
Var sigmoid(Var a);
Var tanh(Var a);
Var exp(Var a);
/// log(max(x, floor)); adjoint is zero where the floor is active.
Var log_floor(Var a, double floor = 1e-12);
Var square(Var a);
Var sin(Var a);
Var clip(Var a, double lo, double hi);

// Row-wise normalizations.
Var softmax_rows(Var a);
Var layer_norm_rows(Var a, double eps = 1e-5);
/// Softmax over the rows sharing a segment id, independently per column.
Var segment_softmax(Var scores, std::span<const int> segment, Index segment_count);

// Indexing.
Var gather_rows(Var a, std::span<const int> index);
Var scatter_add_rows(Var a, std::span<const int> index, Index rows_out);
Var concat_cols(std::initializer_list<Var> parts);
Var concat_rows(std::initializer_list<Var> parts);
Var slice_cols(Var a, Index start, Index count);
Var slice_rows(Var a, Index start, Index count);

// Geometry.
/// Euclidean norm of each row (n x 1). The adjoint at a zero row is zero.
Var row_norm(Var a);
/// Gaussian expansion exp(-(d - mu_m)^2 / (2 sigma^2)) of a column of distances.
Var rbf(Var distances, std::span<const double> centers, double sigma);
/// Places row e of `features` into column block type[e] of a zero matrix
/// with type_count blocks (outer product with a one-hot edge type).
Var edge_type_expand(Var features, std::span<const int> type, int type_count);
/// values (n x H) with each block of H/heads columns scaled by weights(:, h).
Var mul_heads(Var values, Var weights);

// Reductions.
Var sum(Var a);
Var mean(Var a);
Var row_sum(Var a);
/// Column-wise mean over rows (1 x q).
Var mean_rows(Var a);

/// A differentiable scalar program: builds its output from the given inputs.
using Program = std::function<Var(Tape&, std::span<const Var> inputs)>;

struct GradientReport {
  std::vector<Matrix> gradients;  // one per selected input, same shape as the input
};

struct Evaluation {
  double value = 0.0;
  GradientReport report;
};

/// Runs the program on fresh leaves and returns the scalar value together with
/// adjoints for every input whose `wrt` flag is set (empty `wrt` = all).
/// Throws ContractError if the output is not 1 x 1, NumericError on NaN.
Evaluation evaluate_with_gradient(const Program& program, std::span<const Matrix> inputs,
                                  std::span<const bool> wrt = {});

double evaluate(const Program& program, std::span<const Matrix> inputs);

struct GradientCheck {
  bool passed = false;
  double worst_relative_error = 0.0;
  std::size_t worst_input = 0;
  Index worst_row = 0;
  Index worst_col = 0;
  double analytic_at_worst = 0.0;
  double numeric_at_worst = 0.0;
};

/// Compares every adjoint component with a central difference of the given
/// step. Relative error is |g - fd| / max(|g|, |fd|, abs_floor).
GradientCheck check_gradient(const Program& program, std::span<const Matrix> inputs, double step,
                             double tolerance, double abs_floor = 1e-6);

}  // namespace paflow::diff
