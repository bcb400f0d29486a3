#include "paflow/diffcore.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

namespace paflow::diff {

std::string to_string(OpKind kind) {
  switch (kind) {
    case OpKind::leaf: return "leaf";
    case OpKind::matmul: return "matmul";
    case OpKind::add: return "add";
    case OpKind::sub: return "sub";
    case OpKind::hadamard: return "hadamard";
    case OpKind::scale: return "scale";
    case OpKind::add_scalar: return "add_scalar";
    case OpKind::add_row: return "add_row";
    case OpKind::mul_col: return "mul_col";
    case OpKind::relu: return "relu";
    case OpKind::shifted_softplus: return "shifted_softplus";
    case OpKind::sigmoid: return "sigmoid";
    case OpKind::tanh: return "tanh";
    case OpKind::exp: return "exp";
    case OpKind::log_floor: return "log_floor";
    case OpKind::square: return "square";
    case OpKind::sin: return "sin";
    case OpKind::clip: return "clip";
    case OpKind::softmax_rows: return "softmax_rows";
    case OpKind::layer_norm_rows: return "layer_norm_rows";
    case OpKind::segment_softmax: return "segment_softmax";
    case OpKind::gather_rows: return "gather_rows";
    case OpKind::scatter_add_rows: return "scatter_add_rows";
    case OpKind::concat_cols: return "concat_cols";
    case OpKind::concat_rows: return "concat_rows";
    case OpKind::slice_cols: return "slice_cols";
    case OpKind::slice_rows: return "slice_rows";
    case OpKind::row_norm: return "row_norm";
    case OpKind::rbf: return "rbf";
    case OpKind::edge_type_expand: return "edge_type_expand";
    case OpKind::mul_heads: return "mul_heads";
    case OpKind::sum: return "sum";
    case OpKind::mean: return "mean";
    case OpKind::row_sum: return "row_sum";
    case OpKind::mean_rows: return "mean_rows";
  }
  return "unknown";
}

const Matrix& Var::value() const { return tape->value(id); }

double Var::scalar() const {
  const Matrix& v = value();
  require(v.rows() == 1 && v.cols() == 1, "Var::scalar: value is not 1 x 1");
  return v(0, 0);
}

Var Tape::constant(Matrix value) { return push(OpKind::leaf, std::move(value), {}, nullptr); }

Var Tape::variable(Matrix value) {
  Var v = push(OpKind::leaf, std::move(value), {}, nullptr);
  nodes_.back().needs_grad = true;
  return v;
}

Var Tape::parameter(const Matrix& value, bool requires_grad) {
  Node node;
  node.kind = OpKind::leaf;
  node.external = &value;
  node.needs_grad = requires_grad;
  nodes_.push_back(std::move(node));
  return Var{this, static_cast<int>(nodes_.size()) - 1};
}

const Matrix& Tape::value(int id) const {
  const Node& n = nodes_[static_cast<std::size_t>(id)];
  return n.external != nullptr ? *n.external : n.value;
}

Var Tape::push(OpKind kind, Matrix value, std::initializer_list<Var> inputs, Backward backward) {
  if (value.hasNaN()) throw NumericError("NaN produced by op '" + to_string(kind) + "'");
  Node node;
  node.kind = kind;
  node.value = std::move(value);
  for (const Var& in : inputs) {
    if (in.tape != this) throw ContractError("op '" + to_string(kind) + "' mixes tapes");
    node.needs_grad = node.needs_grad || needs_grad(in.id);
  }
  if (node.needs_grad) node.backward = std::move(backward);
  nodes_.push_back(std::move(node));
  return Var{this, static_cast<int>(nodes_.size()) - 1};
}

Matrix& Tape::adjoint_slot(int id) {
  Matrix& slot = adjoints_[static_cast<std::size_t>(id)];
  if (slot.size() == 0) {
    const Matrix& v = value(id);
    slot = Matrix::Zero(v.rows(), v.cols());
  }
  return slot;
}

void Tape::accumulate(int id, const Matrix& adjoint) {
  if (!needs_grad(id)) return;
  adjoint_slot(id) += adjoint;
}

void Tape::backward(Var out) {
  const Matrix& v = value(out.id);
  if (v.rows() != 1 || v.cols() != 1) {
    throw ContractError("backward: output must be a scalar, got " + std::to_string(v.rows()) + " x " +
                        std::to_string(v.cols()));
  }
  adjoints_.assign(nodes_.size(), Matrix());
  adjoints_[static_cast<std::size_t>(out.id)] = Matrix::Ones(1, 1);
  for (int i = out.id; i >= 0; --i) {
    Node& n = nodes_[static_cast<std::size_t>(i)];
    const Matrix& adj = adjoints_[static_cast<std::size_t>(i)];
    if (!n.needs_grad || !n.backward || adj.size() == 0) continue;
    n.backward(*this, adj);
  }
}

Matrix Tape::grad(Var v) const {
  const auto idx = static_cast<std::size_t>(v.id);
  if (idx < adjoints_.size() && adjoints_[idx].size() != 0) return adjoints_[idx];
  const Matrix& val = value(v.id);
  return Matrix::Zero(val.rows(), val.cols());
}

namespace {

void require_same_shape(Var a, Var b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ContractError(std::string(op) + ": shape mismatch " + std::to_string(a.rows()) + "x" +
                        std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" +
                        std::to_string(b.cols()));
  }
}

template <typename F, typename D>
Var unary(OpKind kind, Var a, F forward, D derivative) {
  Matrix out = a.value().unaryExpr(forward);
  const int ia = a.id;
  return a.tape->push(kind, std::move(out), {a}, [ia, derivative](Tape& t, const Matrix& g) {
    Matrix& slot = t.adjoint_slot(ia);
    slot.array() += g.array() * t.value(ia).unaryExpr(derivative).array();
  });
}

double logistic(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

Var matmul(Var a, Var b) {
  if (a.cols() != b.rows()) {
    throw ContractError("matmul: inner dimensions differ (" + std::to_string(a.cols()) + " vs " +
                        std::to_string(b.rows()) + ")");
  }
  Matrix out = a.value() * b.value();
  const int ia = a.id;
  const int ib = b.id;
  return a.tape->push(OpKind::matmul, std::move(out), {a, b}, [ia, ib](Tape& t, const Matrix& g) {
    if (t.needs_grad(ia)) t.adjoint_slot(ia).noalias() += g * t.value(ib).transpose();
    if (t.needs_grad(ib)) t.adjoint_slot(ib).noalias() += t.value(ia).transpose() * g;
  });
}

Var add(Var a, Var b) {
  require_same_shape(a, b, "add");
  const int ia = a.id;
  const int ib = b.id;
  return a.tape->push(OpKind::add, a.value() + b.value(), {a, b}, [ia, ib](Tape& t, const Matrix& g) {
    t.accumulate(ia, g);
    t.accumulate(ib, g);
  });
}

Var sub(Var a, Var b) {
  require_same_shape(a, b, "sub");
  const int ia = a.id;
  const int ib = b.id;
  return a.tape->push(OpKind::sub, a.value() - b.value(), {a, b}, [ia, ib](Tape& t, const Matrix& g) {
    t.accumulate(ia, g);
    if (t.needs_grad(ib)) t.adjoint_slot(ib) -= g;
  });
}

Var hadamard(Var a, Var b) {
  require_same_shape(a, b, "hadamard");
  const int ia = a.id;
  const int ib = b.id;
  Matrix out = a.value().cwiseProduct(b.value());
  return a.tape->push(OpKind::hadamard, std::move(out), {a, b}, [ia, ib](Tape& t, const Matrix& g) {
    if (t.needs_grad(ia)) t.adjoint_slot(ia).array() += g.array() * t.value(ib).array();
    if (t.needs_grad(ib)) t.adjoint_slot(ib).array() += g.array() * t.value(ia).array();
  });
}

Var scale(Var a, double factor) {
  const int ia = a.id;
  return a.tape->push(OpKind::scale, a.value() * factor, {a},
                      [ia, factor](Tape& t, const Matrix& g) { t.adjoint_slot(ia) += factor * g; });
}

Var add_scalar(Var a, double offset) {
  const int ia = a.id;
  Matrix out = a.value().array() + offset;
  return a.tape->push(OpKind::add_scalar, std::move(out), {a},
                      [ia](Tape& t, const Matrix& g) { t.adjoint_slot(ia) += g; });
}

Var add_row(Var a, Var row) {
  if (row.rows() != 1 || row.cols() != a.cols()) throw ContractError("add_row: row must be 1 x cols(a)");
  const int ia = a.id;
  const int ir = row.id;
  Matrix out = a.value();
  out.rowwise() += row.value().row(0);
  return a.tape->push(OpKind::add_row, std::move(out), {a, row}, [ia, ir](Tape& t, const Matrix& g) {
    t.accumulate(ia, g);
    if (t.needs_grad(ir)) t.adjoint_slot(ir) += g.colwise().sum();
  });
}

Var mul_col(Var a, Var col) {
  if (col.cols() != 1 || col.rows() != a.rows()) throw ContractError("mul_col: col must be rows(a) x 1");
  const int ia = a.id;
  const int ic = col.id;
  Matrix out = a.value().array().colwise() * col.value().col(0).array();
  return a.tape->push(OpKind::mul_col, std::move(out), {a, col}, [ia, ic](Tape& t, const Matrix& g) {
    if (t.needs_grad(ia)) t.adjoint_slot(ia).array() += g.array().colwise() * t.value(ic).col(0).array();
    if (t.needs_grad(ic)) {
      t.adjoint_slot(ic).col(0) += (g.array() * t.value(ia).array()).rowwise().sum().matrix();
    }
  });
}

Var relu(Var a) {
  return unary(
      OpKind::relu, a, [](double x) { return x > 0.0 ? x : 0.0; }, [](double x) { return x > 0.0 ? 1.0 : 0.0; });
}

Var shifted_softplus(Var a) {
  return unary(
      OpKind::shifted_softplus, a,
      [](double x) {
        const double sp = x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
        return sp - std::numbers::ln2;
      },
      [](double x) { return logistic(x); });
}

Var sigmoid(Var a) {
  return unary(
      OpKind::sigmoid, a, [](double x) { return logistic(x); },
      [](double x) {
        const double s = logistic(x);
        return s * (1.0 - s);
      });
}

Var tanh(Var a) {
  return unary(
      OpKind::tanh, a, [](double x) { return std::tanh(x); },
      [](double x) {
        const double th = std::tanh(x);
        return 1.0 - th * th;
      });
}

Var exp(Var a) {
  return unary(
      OpKind::exp, a, [](double x) { return std::exp(x); }, [](double x) { return std::exp(x); });
}

Var log_floor(Var a, double floor) {
  return unary(
      OpKind::log_floor, a, [floor](double x) { return std::log(std::max(x, floor)); },
      [floor](double x) { return x > floor ? 1.0 / x : 0.0; });
}

Var square(Var a) {
  return unary(
      OpKind::square, a, [](double x) { return x * x; }, [](double x) { return 2.0 * x; });
}

Var sin(Var a) {
  return unary(
      OpKind::sin, a, [](double x) { return std::sin(x); }, [](double x) { return std::cos(x); });
}

Var clip(Var a, double lo, double hi) {
  return unary(
      OpKind::clip, a, [lo, hi](double x) { return std::clamp(x, lo, hi); },
      [lo, hi](double x) { return (x > lo && x < hi) ? 1.0 : 0.0; });
}

Var softmax_rows(Var a) {
  const Matrix& x = a.value();
  Matrix out(x.rows(), x.cols());
  for (Index i = 0; i < x.rows(); ++i) {
    const double m = x.row(i).maxCoeff();
    out.row(i) = (x.row(i).array() - m).exp().matrix();
    out.row(i) /= out.row(i).sum();
  }
  const int ia = a.id;
  const int self = static_cast<int>(a.tape->size());
  return a.tape->push(OpKind::softmax_rows, std::move(out), {a}, [ia, self](Tape& t, const Matrix& g) {
    const Matrix& y = t.value(self);
    const Eigen::VectorXd dot = (g.array() * y.array()).rowwise().sum();
    t.adjoint_slot(ia).array() += y.array() * (g.array().colwise() - dot.array());
  });
}

Var layer_norm_rows(Var a, double eps) {
  const Matrix& x = a.value();
  const auto n = static_cast<double>(x.cols());
  Matrix out(x.rows(), x.cols());
  Eigen::VectorXd inv_std(x.rows());
  for (Index i = 0; i < x.rows(); ++i) {
    const double mu = x.row(i).mean();
    const double var = (x.row(i).array() - mu).square().sum() / n;
    inv_std(i) = 1.0 / std::sqrt(var + eps);
    out.row(i) = (x.row(i).array() - mu) * inv_std(i);
  }
  const int ia = a.id;
  const int self = static_cast<int>(a.tape->size());
  return a.tape->push(OpKind::layer_norm_rows, std::move(out), {a},
                      [ia, self, inv_std, n](Tape& t, const Matrix& g) {
                        const Matrix& y = t.value(self);
                        Matrix& slot = t.adjoint_slot(ia);
                        for (Index i = 0; i < y.rows(); ++i) {
                          const double gm = g.row(i).mean();
                          const double gy = g.row(i).dot(y.row(i)) / n;
                          slot.row(i).array() += inv_std(i) * (g.row(i).array() - gm - y.row(i).array() * gy);
                        }
                      });
}

Var segment_softmax(Var scores, std::span<const int> segment, Index segment_count) {
  const Matrix& s = scores.value();
  require(static_cast<Index>(segment.size()) == s.rows(), "segment_softmax: one segment id per row");
  const Index cols = s.cols();
  Matrix seg_max = Matrix::Constant(segment_count, cols, -std::numeric_limits<double>::infinity());
  for (Index e = 0; e < s.rows(); ++e) {
    const int k = segment[static_cast<std::size_t>(e)];
    require(k >= 0 && k < segment_count, "segment_softmax: segment id out of range");
    seg_max.row(k) = seg_max.row(k).cwiseMax(s.row(e));
  }
  Matrix out(s.rows(), cols);
  Matrix seg_sum = Matrix::Zero(segment_count, cols);
  for (Index e = 0; e < s.rows(); ++e) {
    const int k = segment[static_cast<std::size_t>(e)];
    out.row(e) = (s.row(e) - seg_max.row(k)).array().exp().matrix();
    seg_sum.row(k) += out.row(e);
  }
  for (Index e = 0; e < s.rows(); ++e) {
    out.row(e).array() /= seg_sum.row(segment[static_cast<std::size_t>(e)]).array();
  }
  std::vector<int> seg(segment.begin(), segment.end());
  const int ia = scores.id;
  const int self = static_cast<int>(scores.tape->size());
  return scores.tape->push(OpKind::segment_softmax, std::move(out), {scores},
                           [ia, self, seg = std::move(seg), segment_count](Tape& t, const Matrix& g) {
                             const Matrix& y = t.value(self);
                             Matrix dot = Matrix::Zero(segment_count, y.cols());
                             for (std::size_t e = 0; e < seg.size(); ++e) {
                               const auto row = static_cast<Index>(e);
                               dot.row(seg[e]).array() += g.row(row).array() * y.row(row).array();
                             }
                             Matrix& slot = t.adjoint_slot(ia);
                             for (std::size_t e = 0; e < seg.size(); ++e) {
                               const auto row = static_cast<Index>(e);
                               slot.row(row).array() +=
                                   y.row(row).array() * (g.row(row).array() - dot.row(seg[e]).array());
                             }
                           });
}

Var gather_rows(Var a, std::span<const int> index) {
  const Matrix& x = a.value();
  Matrix out(static_cast<Index>(index.size()), x.cols());
  for (std::size_t e = 0; e < index.size(); ++e) {
    require(index[e] >= 0 && index[e] < x.rows(), "gather_rows: index out of range");
    out.row(static_cast<Index>(e)) = x.row(index[e]);
  }
  std::vector<int> idx(index.begin(), index.end());
  const int ia = a.id;
  return a.tape->push(OpKind::gather_rows, std::move(out), {a}, [ia, idx = std::move(idx)](Tape& t, const Matrix& g) {
    Matrix& slot = t.adjoint_slot(ia);
    for (std::size_t e = 0; e < idx.size(); ++e) slot.row(idx[e]) += g.row(static_cast<Index>(e));
  });
}

Var scatter_add_rows(Var a, std::span<const int> index, Index rows_out) {
  const Matrix& x = a.value();
  require(static_cast<Index>(index.size()) == x.rows(), "scatter_add_rows: one index per row");
  Matrix out = Matrix::Zero(rows_out, x.cols());
  for (std::size_t e = 0; e < index.size(); ++e) {
    require(index[e] >= 0 && index[e] < rows_out, "scatter_add_rows: index out of range");
    out.row(index[e]) += x.row(static_cast<Index>(e));
  }
  std::vector<int> idx(index.begin(), index.end());
  const int ia = a.id;
  return a.tape->push(OpKind::scatter_add_rows, std::move(out), {a},
                      [ia, idx = std::move(idx)](Tape& t, const Matrix& g) {
                        Matrix& slot = t.adjoint_slot(ia);
                        for (std::size_t e = 0; e < idx.size(); ++e) slot.row(static_cast<Index>(e)) += g.row(idx[e]);
                      });
}

Var concat_cols(std::initializer_list<Var> parts) {
  require(parts.size() > 0, "concat_cols: no inputs");
  const Index rows = parts.begin()->rows();
  Index cols = 0;
  std::vector<int> ids;
  std::vector<Index> widths;
  for (const Var& p : parts) {
    require(p.rows() == rows, "concat_cols: row counts differ");
    ids.push_back(p.id);
    widths.push_back(p.cols());
    cols += p.cols();
  }
  Matrix out(rows, cols);
  Index offset = 0;
  for (const Var& p : parts) {
    out.middleCols(offset, p.cols()) = p.value();
    offset += p.cols();
  }
  Tape* tape = parts.begin()->tape;
  Var v = tape->push(OpKind::concat_cols, std::move(out), parts,
                     [ids, widths](Tape& t, const Matrix& g) {
                       Index off = 0;
                       for (std::size_t k = 0; k < ids.size(); ++k) {
                         if (t.needs_grad(ids[k])) t.adjoint_slot(ids[k]) += g.middleCols(off, widths[k]);
                         off += widths[k];
                       }
                     });
  return v;
}

Var concat_rows(std::initializer_list<Var> parts) {
  require(parts.size() > 0, "concat_rows: no inputs");
  const Index cols = parts.begin()->cols();
  Index rows = 0;
  std::vector<int> ids;
  std::vector<Index> heights;
  for (const Var& p : parts) {
    require(p.cols() == cols, "concat_rows: column counts differ");
    ids.push_back(p.id);
    heights.push_back(p.rows());
    rows += p.rows();
  }
  Matrix out(rows, cols);
  Index offset = 0;
  for (const Var& p : parts) {
    out.middleRows(offset, p.rows()) = p.value();
    offset += p.rows();
  }
  Tape* tape = parts.begin()->tape;
  return tape->push(OpKind::concat_rows, std::move(out), parts, [ids, heights](Tape& t, const Matrix& g) {
    Index off = 0;
    for (std::size_t k = 0; k < ids.size(); ++k) {
      if (t.needs_grad(ids[k])) t.adjoint_slot(ids[k]) += g.middleRows(off, heights[k]);
      off += heights[k];
    }
  });
}

Var slice_cols(Var a, Index start, Index count) {
  require(start >= 0 && count >= 0 && start + count <= a.cols(), "slice_cols: range out of bounds");
  const int ia = a.id;
  return a.tape->push(OpKind::slice_cols, a.value().middleCols(start, count), {a},
                      [ia, start, count](Tape& t, const Matrix& g) {
                        t.adjoint_slot(ia).middleCols(start, count) += g;
                      });
}

Var slice_rows(Var a, Index start, Index count) {
  require(start >= 0 && count >= 0 && start + count <= a.rows(), "slice_rows: range out of bounds");
  const int ia = a.id;
  return a.tape->push(OpKind::slice_rows, a.value().middleRows(start, count), {a},
                      [ia, start, count](Tape& t, const Matrix& g) {
                        t.adjoint_slot(ia).middleRows(start, count) += g;
                      });
}

Var row_norm(Var a) {
  Matrix out = a.value().rowwise().norm();
  const int ia = a.id;
  const int self = static_cast<int>(a.tape->size());
  return a.tape->push(OpKind::row_norm, std::move(out), {a}, [ia, self](Tape& t, const Matrix& g) {
    const Matrix& x = t.value(ia);
    const Matrix& n = t.value(self);
    Matrix& slot = t.adjoint_slot(ia);
    for (Index i = 0; i < x.rows(); ++i) {
      if (n(i, 0) > 0.0) slot.row(i) += (g(i, 0) / n(i, 0)) * x.row(i);
    }
  });
}

Var rbf(Var distances, std::span<const double> centers, double sigma) {
  require(distances.cols() == 1, "rbf: distances must be a column");
  const Matrix& d = distances.value();
  const auto m = static_cast<Index>(centers.size());
  const double inv = 1.0 / (2.0 * sigma * sigma);
  Matrix out(d.rows(), m);
  for (Index e = 0; e < d.rows(); ++e) {
    for (Index k = 0; k < m; ++k) {
      const double diff = d(e, 0) - centers[static_cast<std::size_t>(k)];
      out(e, k) = std::exp(-diff * diff * inv);
    }
  }
  std::vector<double> mu(centers.begin(), centers.end());
  const int ia = distances.id;
  const int self = static_cast<int>(distances.tape->size());
  return distances.tape->push(OpKind::rbf, std::move(out), {distances},
                              [ia, self, mu = std::move(mu), sigma](Tape& t, const Matrix& g) {
                                const Matrix& dv = t.value(ia);
                                const Matrix& y = t.value(self);
                                Matrix& slot = t.adjoint_slot(ia);
                                const double inv_s2 = 1.0 / (sigma * sigma);
                                for (Index e = 0; e < dv.rows(); ++e) {
                                  double acc = 0.0;
                                  for (std::size_t k = 0; k < mu.size(); ++k) {
                                    const auto kk = static_cast<Index>(k);
                                    acc += g(e, kk) * y(e, kk) * (-(dv(e, 0) - mu[k]) * inv_s2);
                                  }
                                  slot(e, 0) += acc;
                                }
                              });
}

Var edge_type_expand(Var features, std::span<const int> type, int type_count) {
  const Matrix& f = features.value();
  require(static_cast<Index>(type.size()) == f.rows(), "edge_type_expand: one type per row");
  const Index m = f.cols();
  Matrix out = Matrix::Zero(f.rows(), m * type_count);
  for (Index e = 0; e < f.rows(); ++e) {
    const int k = type[static_cast<std::size_t>(e)];
    require(k >= 0 && k < type_count, "edge_type_expand: type out of range");
    out.block(e, k * m, 1, m) = f.row(e);
  }
  std::vector<int> ty(type.begin(), type.end());
  const int ia = features.id;
  return features.tape->push(OpKind::edge_type_expand, std::move(out), {features},
                             [ia, ty = std::move(ty), m](Tape& t, const Matrix& g) {
                               Matrix& slot = t.adjoint_slot(ia);
                               for (std::size_t e = 0; e < ty.size(); ++e) {
                                 const auto row = static_cast<Index>(e);
                                 slot.row(row) += g.block(row, ty[e] * m, 1, m);
                               }
                             });
}

Var mul_heads(Var values, Var weights) {
  const Matrix& v = values.value();
  const Matrix& w = weights.value();
  require(v.rows() == w.rows(), "mul_heads: row counts differ");
  require(w.cols() > 0 && v.cols() % w.cols() == 0, "mul_heads: head count must divide width");
  const Index heads = w.cols();
  const Index dh = v.cols() / heads;
  Matrix out(v.rows(), v.cols());
  for (Index h = 0; h < heads; ++h) {
    out.middleCols(h * dh, dh) = v.middleCols(h * dh, dh).array().colwise() * w.col(h).array();
  }
  const int iv = values.id;
  const int iw = weights.id;
  return values.tape->push(OpKind::mul_heads, std::move(out), {values, weights},
                           [iv, iw, heads, dh](Tape& t, const Matrix& g) {
                             const Matrix& vv = t.value(iv);
                             const Matrix& ww = t.value(iw);
                             if (t.needs_grad(iv)) {
                               Matrix& slot = t.adjoint_slot(iv);
                               for (Index h = 0; h < heads; ++h) {
                                 slot.middleCols(h * dh, dh).array() +=
                                     g.middleCols(h * dh, dh).array().colwise() * ww.col(h).array();
                               }
                             }
                             if (t.needs_grad(iw)) {
                               Matrix& slot = t.adjoint_slot(iw);
                               for (Index h = 0; h < heads; ++h) {
                                 slot.col(h) += (g.middleCols(h * dh, dh).array() * vv.middleCols(h * dh, dh).array())
                                                    .rowwise()
                                                    .sum()
                                                    .matrix();
                               }
                             }
                           });
}

Var sum(Var a) {
  const int ia = a.id;
  return a.tape->push(OpKind::sum, Matrix::Constant(1, 1, a.value().sum()), {a},
                      [ia](Tape& t, const Matrix& g) { t.adjoint_slot(ia).array() += g(0, 0); });
}

Var mean(Var a) {
  const int ia = a.id;
  const auto n = static_cast<double>(a.value().size());
  return a.tape->push(OpKind::mean, Matrix::Constant(1, 1, a.value().mean()), {a},
                      [ia, n](Tape& t, const Matrix& g) { t.adjoint_slot(ia).array() += g(0, 0) / n; });
}

Var row_sum(Var a) {
  const int ia = a.id;
  Matrix out = a.value().rowwise().sum();
  return a.tape->push(OpKind::row_sum, std::move(out), {a}, [ia](Tape& t, const Matrix& g) {
    t.adjoint_slot(ia).array().colwise() += g.col(0).array();
  });
}

Var mean_rows(Var a) {
  const int ia = a.id;
  const auto n = static_cast<double>(a.rows());
  Matrix out = a.value().colwise().mean();
  return a.tape->push(OpKind::mean_rows, std::move(out), {a}, [ia, n](Tape& t, const Matrix& g) {
    t.adjoint_slot(ia).rowwise() += g.row(0) / n;
  });
}

Evaluation evaluate_with_gradient(const Program& program, std::span<const Matrix> inputs, std::span<const bool> wrt) {
  require(wrt.empty() || wrt.size() == inputs.size(), "evaluate_with_gradient: wrt must match inputs");
  Tape tape;
  std::vector<Var> leaves;
  leaves.reserve(inputs.size());
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const bool selected = wrt.empty() || wrt[i];
    leaves.push_back(selected ? tape.variable(inputs[i]) : tape.constant(inputs[i]));
  }
  Var out = program(tape, leaves);
  const Matrix& v = out.value();
  if (v.rows() != 1 || v.cols() != 1) {
    throw ContractError("evaluate_with_gradient: program output is " + std::to_string(v.rows()) + " x " +
                        std::to_string(v.cols()) + ", expected a scalar");
  }
  Evaluation result;
  result.value = v(0, 0);
  tape.backward(out);
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    if (wrt.empty() || wrt[i]) result.report.gradients.push_back(tape.grad(leaves[i]));
  }
  return result;
}

double evaluate(const Program& program, std::span<const Matrix> inputs) {
  Tape tape;
  std::vector<Var> leaves;
  leaves.reserve(inputs.size());
  for (const Matrix& m : inputs) leaves.push_back(tape.constant(m));
  Var out = program(tape, leaves);
  return out.scalar();
}

GradientCheck check_gradient(const Program& program, std::span<const Matrix> inputs, double step, double tolerance,
                             double abs_floor) {
  require(step > 0.0, "check_gradient: step must be positive");
  const Evaluation analytic = evaluate_with_gradient(program, inputs);
  std::vector<Matrix> probe(inputs.begin(), inputs.end());
  GradientCheck report;
  for (std::size_t i = 0; i < probe.size(); ++i) {
    for (Index c = 0; c < probe[i].cols(); ++c) {
      for (Index r = 0; r < probe[i].rows(); ++r) {
        const double x = probe[i](r, c);
        probe[i](r, c) = x + step;
        const double up = evaluate(program, probe);
        probe[i](r, c) = x - step;
        const double down = evaluate(program, probe);
        probe[i](r, c) = x;
        const double numeric = (up - down) / (2.0 * step);
        const double g = analytic.report.gradients[i](r, c);
        const double denom = std::max({std::abs(g), std::abs(numeric), abs_floor});
        const double rel = std::abs(g - numeric) / denom;
        if (rel > report.worst_relative_error || (i == 0 && r == 0 && c == 0)) {
          report.worst_relative_error = rel;
          report.worst_input = i;
          report.worst_row = r;
          report.worst_col = c;
          report.analytic_at_worst = g;
          report.numeric_at_worst = numeric;
        }
      }
    }
  }
  report.passed = report.worst_relative_error < tolerance;
  return report;
}

}  // namespace paflow::diff
