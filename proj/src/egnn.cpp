#include "paflow/egnn.hpp"

#include <cmath>

namespace paflow {

using diff::Var;

namespace {

// Tensor layout.
constexpr int kEmbedTensors = 4;  // protein W, b; ligand W, b
constexpr int kLayerTensors = 14;
constexpr int kHeadTensors = 8;  // type W1, b1, W2, b2; affinity W1, b1, W2, b2

enum LayerSlot : int {
  msg_dst = 0,
  msg_src,
  msg_edge,
  msg_bias,
  msg_out,
  msg_out_bias,
  node_out,
  node_out_bias,
  crd_dst,
  crd_src,
  crd_edge,
  crd_bias,
  crd_out,
  crd_out_bias,
};

constexpr int kEdgeFeatureDim = kRbfCount * kEdgeTypes;

int layer_base(int layer) { return kEmbedTensors + layer * kLayerTensors; }
int head_base(const EgnnConfig& c) { return kEmbedTensors + c.layers * kLayerTensors; }

struct Shape {
  Index rows;
  Index cols;
  double init_scale;  // std of the normal init; 0 for zero init
};

std::vector<Shape> layout(const EgnnConfig& c) {
  const Index h = c.hidden;
  const Index heads = c.heads;
  auto dense = [](Index in, Index out) { return Shape{in, out, 1.0 / std::sqrt(static_cast<double>(in))}; };
  auto bias = [](Index out) { return Shape{1, out, 0.0}; };
  std::vector<Shape> s;
  s.push_back(dense(c.pocket_feature_dim, h));
  s.push_back(bias(h));
  s.push_back(dense(c.type_count + 1, h));
  s.push_back(bias(h));
  for (int l = 0; l < c.layers; ++l) {
    s.push_back(dense(h, h));
    s.push_back(dense(h, h));
    s.push_back(dense(kEdgeFeatureDim, h));
    s.push_back(bias(h));
    s.push_back(dense(h, heads + h));
    s.push_back(bias(heads + h));
    s.push_back(Shape{h, h, 0.5 / std::sqrt(static_cast<double>(h))});
    s.push_back(bias(h));
    s.push_back(dense(h, h));
    s.push_back(dense(h, h));
    s.push_back(dense(kEdgeFeatureDim, h));
    s.push_back(bias(h));
    // Small gates at init keep early coordinate updates near the identity.
    s.push_back(Shape{h, 2 * heads, 0.01 / std::sqrt(static_cast<double>(h))});
    s.push_back(bias(2 * heads));
  }
  s.push_back(dense(h, h));
  s.push_back(bias(h));
  s.push_back(dense(h, c.type_count));
  s.push_back(bias(c.type_count));
  s.push_back(dense(h, h));
  s.push_back(bias(h));
  s.push_back(dense(h, 1));
  s.push_back(bias(1));
  return s;
}

Var linear(Var x, Var w, Var b) { return diff::add_row(diff::matmul(x, w), b); }

// Pre-activation of an edge perceptron from destination, source and edge terms.
Var edge_hidden(Var h, std::span<const int> dst, std::span<const int> src, Var edge_features, Var w_dst, Var w_src,
                Var w_edge, Var b) {
  Var hd = diff::matmul(h, w_dst);
  Var hs = diff::matmul(h, w_src);
  Var pre = diff::gather_rows(hd, dst) + diff::gather_rows(hs, src) + diff::matmul(edge_features, w_edge);
  return diff::relu(diff::layer_norm_rows(diff::add_row(pre, b)));
}

Var edge_features_of(Var rel, std::span<const int> edge_type) {
  const auto& centers = rbf_centers();
  Var d = diff::row_norm(rel);
  return diff::edge_type_expand(diff::rbf(d, centers, rbf_sigma()), edge_type, kEdgeTypes);
}

}  // namespace

void EgnnConfig::validate() const {
  require(hidden >= 1 && heads >= 1 && layers >= 0, "egnn: hidden, heads must be positive and layers >= 0");
  require(hidden % heads == 0, "egnn: hidden width must be divisible by the head count");
  require(knn_k >= 1, "egnn: knn_k must be >= 1");
  require(type_count >= 2, "egnn: type_count must be >= 2");
  require(pocket_feature_dim >= 1, "egnn: pocket_feature_dim must be >= 1");
  require(gate_clip > 0.0, "egnn: gate_clip must be positive");
}

EgnnParams EgnnParams::init(const EgnnConfig& config, std::uint64_t seed) {
  config.validate();
  EgnnParams p;
  p.config = config;
  Rng rng(mix_seed(seed, 0xE6));
  for (const Shape& s : layout(config)) {
    if (s.init_scale == 0.0) p.tensors.push_back(Matrix::Zero(s.rows, s.cols));
    else p.tensors.push_back(s.init_scale * standard_normal(s.rows, s.cols, rng));
  }
  return p;
}

std::size_t EgnnParams::scalar_count() const {
  std::size_t n = 0;
  for (const Matrix& m : tensors) n += static_cast<std::size_t>(m.size());
  return n;
}

void EgnnParams::validate() const {
  config.validate();
  const auto shapes = layout(config);
  require(shapes.size() == tensors.size(), "egnn: tensor count does not match the configuration");
  for (std::size_t i = 0; i < shapes.size(); ++i) {
    require(tensors[i].rows() == shapes[i].rows && tensors[i].cols() == shapes[i].cols,
            "egnn: tensor " + std::to_string(i) + " has the wrong shape");
    require(tensors[i].allFinite(), "egnn: tensor " + std::to_string(i) + " is not finite");
  }
}

std::vector<Var> weight_leaves(diff::Tape& tape, const EgnnParams& params, bool requires_grad) {
  std::vector<Var> w;
  w.reserve(params.tensors.size());
  for (const Matrix& m : params.tensors) w.push_back(tape.parameter(m, requires_grad));
  return w;
}

LayerVars layer_forward(diff::Tape& tape, const EgnnParams& params, std::span<const Var> weights, int layer, Var h,
                        const Matrix& protein_coords, Var x_ligand, const KnnEdges& edges) {
  const EgnnConfig& c = params.config;
  require(layer >= 0 && layer < c.layers, "layer_forward: layer index out of range");
  require(h.cols() == c.hidden, "layer_forward: node embedding width mismatch");
  const Index np = protein_coords.rows();
  const Index nm = x_ligand.rows();
  const Index n = np + nm;
  require(h.rows() == n, "layer_forward: one embedding row per node");
  auto w = [&](int slot) { return weights[static_cast<std::size_t>(layer_base(layer) + slot)]; };

  Var x_all = diff::concat_rows({tape.constant(protein_coords), x_ligand});

  // Feature update over every edge.
  Var rel = diff::gather_rows(x_all, edges.dst) - diff::gather_rows(x_all, edges.src);
  Var ef = edge_features_of(rel, edges.edge_type);
  Var hid = edge_hidden(h, edges.dst, edges.src, ef, w(msg_dst), w(msg_src), w(msg_edge), w(msg_bias));
  Var out = linear(hid, w(msg_out), w(msg_out_bias));
  Var att = diff::segment_softmax(diff::slice_cols(out, 0, c.heads), edges.dst, n);
  Var values = diff::mul_heads(diff::slice_cols(out, c.heads, c.hidden), att);
  Var agg = diff::scatter_add_rows(values, edges.dst, n);
  Var h_new = h + linear(agg, w(node_out), w(node_out_bias));

  // Coordinate update over edges into ligand nodes only; protein rows are fixed.
  std::vector<int> cdst, csrc, ctype, cseg;
  for (std::size_t e = 0; e < edges.dst.size(); ++e) {
    if (edges.dst[e] < np) continue;
    cdst.push_back(edges.dst[e]);
    csrc.push_back(edges.src[e]);
    ctype.push_back(edges.edge_type[e]);
    cseg.push_back(edges.dst[e] - static_cast<int>(np));
  }
  if (cdst.empty()) return LayerVars{h_new, x_ligand};
  Var crel = diff::gather_rows(x_all, cdst) - diff::gather_rows(x_all, csrc);
  Var cef = edge_features_of(crel, ctype);
  Var chid = edge_hidden(h_new, cdst, csrc, cef, w(crd_dst), w(crd_src), w(crd_edge), w(crd_bias));
  Var cout = linear(chid, w(crd_out), w(crd_out_bias));
  Var catt = diff::segment_softmax(diff::slice_cols(cout, 0, c.heads), cseg, nm);
  Var gate = diff::clip(diff::slice_cols(cout, c.heads, c.heads), -c.gate_clip, c.gate_clip);
  Var f = diff::scale(diff::row_sum(diff::hadamard(catt, gate)), 1.0 / c.heads);
  Var delta = diff::scatter_add_rows(diff::mul_col(crel, f), cseg, nm);
  return LayerVars{h_new, x_ligand + delta};
}

EgnnVars forward_on_tape(diff::Tape& tape, const EgnnParams& params, std::span<const Var> weights,
                         const EgnnInput& input, Var ligand_coords) {
  const EgnnConfig& c = params.config;
  require(weights.size() == params.tensors.size(), "egnn forward: weight count mismatch");
  require(input.t >= 0.0 && input.t <= 1.0, "egnn forward: t must lie in [0, 1]");
  const Index np = input.protein_coords.rows();
  const Index nm = input.ligand_types.rows();
  require(np >= 1 && nm >= 1, "egnn forward: need at least one protein and one ligand atom");
  require(input.protein_coords.cols() == 3 && input.protein_features.rows() == np &&
              input.protein_features.cols() == c.pocket_feature_dim,
          "egnn forward: protein coordinates/features shape mismatch");
  require(ligand_coords.rows() == nm && ligand_coords.cols() == 3 && input.ligand_types.cols() == c.type_count,
          "egnn forward: ligand coordinates/types shape mismatch");

  Var hp = linear(tape.constant(input.protein_features), weights[0], weights[1]);
  Matrix lig_in(nm, c.type_count + 1);
  lig_in << input.ligand_types, Matrix::Constant(nm, 1, input.t);
  Var hl = linear(tape.constant(lig_in), weights[2], weights[3]);
  Var h = diff::concat_rows({hp, hl});
  Var x = ligand_coords;
  for (int l = 0; l < c.layers; ++l) {
    const KnnEdges edges = knn_edges(input.protein_coords, x.value(), c.knn_k);
    LayerVars next = layer_forward(tape, params, weights, l, h, input.protein_coords, x, edges);
    h = next.h;
    x = next.x_ligand;
  }

  const auto hb = static_cast<std::size_t>(head_base(c));
  auto w = [&](std::size_t i) { return weights[hb + i]; };
  Var h_lig = diff::slice_rows(h, np, nm);
  Var type_logits = linear(diff::relu(linear(h_lig, w(0), w(1))), w(2), w(3));
  Var aff = diff::sigmoid(linear(diff::shifted_softplus(linear(h_lig, w(4), w(5))), w(6), w(7)));
  EgnnVars out;
  out.x_hat1 = x;
  out.a_hat1 = diff::softmax_rows(type_logits);
  out.y_hat = diff::mean_rows(aff);
  out.h_final = h;
  return out;
}

namespace {

EgnnOutput collect(const EgnnVars& v) {
  EgnnOutput out;
  out.x_hat1 = v.x_hat1.value();
  out.a_hat1 = v.a_hat1.value();
  out.y_hat = v.y_hat.scalar();
  out.h_final = v.h_final.value();
  return out;
}

}  // namespace

EgnnOutput forward(const EgnnParams& params, const EgnnInput& input) {
  diff::Tape tape;
  const auto weights = weight_leaves(tape, params, false);
  return collect(forward_on_tape(tape, params, weights, input, tape.constant(input.ligand_coords)));
}

GuidedEvaluation forward_with_affinity_gradient(const EgnnParams& params, const EgnnInput& input) {
  diff::Tape tape;
  const auto weights = weight_leaves(tape, params, false);
  Var x = tape.variable(input.ligand_coords);
  const EgnnVars v = forward_on_tape(tape, params, weights, input, x);
  // -(y_hat - 1)^2
  Var logp = diff::scale(diff::sum(diff::square(diff::add_scalar(v.y_hat, -1.0))), -1.0);
  tape.backward(logp);
  GuidedEvaluation g;
  g.output = collect(v);
  g.grad_logp = tape.grad(x);
  return g;
}

Matrix affinity_gradient(const EgnnParams& params, const EgnnInput& input) {
  return forward_with_affinity_gradient(params, input).grad_logp;
}

}  // namespace paflow
