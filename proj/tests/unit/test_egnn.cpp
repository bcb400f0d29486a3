#include "paflow/egnn.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <algorithm>
#include <numeric>

using namespace paflow;
using diff::Var;

namespace {

EgnnConfig small_config() {
  EgnnConfig c;
  c.hidden = 16;
  c.heads = 4;
  c.layers = 2;
  c.knn_k = 8;
  return c;
}

// A centered pocket of n_p atoms and a ligand of n_m atoms near the origin.
EgnnInput random_input(Index n_p, Index n_m, Rng& rng, int type_count = kDefaultLigandTypes) {
  EgnnInput in;
  PocketCloud pocket;
  pocket.coords = 3.0 * standard_normal(n_p, 3, rng);
  pocket.coords.rowwise() -= pocket.coords.colwise().mean();
  for (Index i = 0; i < n_p; ++i) pocket.labels.push_back(static_cast<int>(rng() % kPocketLabels));
  in.protein_coords = pocket.coords;
  in.protein_features = pocket.features();
  in.ligand_coords = 1.5 * standard_normal(n_m, 3, rng);
  std::vector<int> labels;
  for (Index i = 0; i < n_m; ++i) labels.push_back(static_cast<int>(rng() % static_cast<unsigned>(type_count)));
  in.ligand_types = one_hot(labels, type_count);
  in.t = 0.3;
  return in;
}

// Trained-looking weights: larger gates than the init so coordinates move.
EgnnParams lively_params(const EgnnConfig& c, std::uint64_t seed) {
  EgnnParams p = EgnnParams::init(c, seed);
  Rng rng(seed + 1);
  for (Matrix& m : p.tensors) m += 0.3 * standard_normal(m.rows(), m.cols(), rng);
  return p;
}

double max_abs(const Matrix& m) { return m.size() == 0 ? 0.0 : m.cwiseAbs().maxCoeff(); }

}  // namespace

TEST(Egnn, ParamsLayoutValidates) {
  const auto p = EgnnParams::init(small_config(), 1);
  EXPECT_NO_THROW(p.validate());
  EXPECT_GT(p.scalar_count(), 0u);
  EgnnConfig bad = small_config();
  bad.heads = 3;
  EXPECT_THROW(EgnnParams::init(bad, 1), ContractError);
  EgnnParams broken = p;
  broken.tensors[3] = Matrix::Zero(2, 2);
  EXPECT_THROW(broken.validate(), ContractError);
}

TEST(Egnn, OutputsAreWellFormed) {
  Rng rng(2);
  const auto params = lively_params(small_config(), 2);
  for (int trial = 0; trial < 10; ++trial) {
    const auto in = random_input(20, 6, rng);
    const auto out = forward(params, in);
    ASSERT_EQ(out.x_hat1.rows(), 6);
    EXPECT_LT((out.a_hat1.rowwise().sum().array() - 1.0).abs().maxCoeff(), 1e-12);
    EXPECT_GE(out.y_hat, 0.0);
    EXPECT_LE(out.y_hat, 1.0);
    EXPECT_EQ(out.h_final.rows(), 26);
  }
}

TEST(Egnn, ZeroCoordinateGatesKeepCoordinates) {
  const EgnnConfig c = small_config();
  auto params = lively_params(c, 3);
  // Zero the coordinate output layer of every layer: gates vanish.
  for (int l = 0; l < c.layers; ++l) {
    params.tensors[static_cast<std::size_t>(4 + l * 14 + 12)].setZero();
    params.tensors[static_cast<std::size_t>(4 + l * 14 + 13)].setZero();
  }
  Rng rng(3);
  const auto in = random_input(15, 5, rng);
  EXPECT_EQ(forward(params, in).x_hat1, in.ligand_coords);
}

TEST(Egnn, LayerLeavesProteinFixed) {
  const EgnnConfig c = small_config();
  const auto params = lively_params(c, 4);
  Rng rng(4);
  const auto in = random_input(10, 4, rng);
  diff::Tape tape;
  const auto w = weight_leaves(tape, params, false);
  Var h = tape.constant(standard_normal(14, c.hidden, rng));
  const Matrix protein_before = in.protein_coords;
  const auto edges = knn_edges(in.protein_coords, in.ligand_coords, c.knn_k);
  const auto out = layer_forward(tape, params, w, 0, h, in.protein_coords, tape.constant(in.ligand_coords), edges);
  EXPECT_EQ(in.protein_coords, protein_before);
  EXPECT_EQ(out.x_ligand.rows(), 4);
  EXPECT_GT(max_abs(out.x_ligand.value() - in.ligand_coords), 0.0);
  EXPECT_THROW(layer_forward(tape, params, w, 5, h, in.protein_coords, tape.constant(in.ligand_coords), edges),
               ContractError);
}

namespace {

// Scalar re-implementation of one layer on a protein atom (node 0) and a
// ligand atom (node 1) with hidden width 2 and one head. Each node has a
// single incoming edge, so every attention weight is 1.
double rbf_value(double d, int m) {
  const double mu = 10.0 * m / 19.0;
  const double s = 10.0 / 19.0;
  return std::exp(-(d - mu) * (d - mu) / (2 * s * s));
}

// Layer tensor slots, in the order the network stores them.
constexpr int kMsgDst = 0, kMsgSrc = 1, kMsgEdge = 2, kMsgBias = 3, kMsgOut = 4, kMsgOutBias = 5, kNodeOut = 6,
              kNodeOutBias = 7, kCrdDst = 8, kCrdSrc = 9, kCrdEdge = 10, kCrdBias = 11, kCrdOut = 12,
              kCrdOutBias = 13;

std::vector<double> edge_hidden_ref(const EgnnParams& p, int slot0, const double hd[2], const double hs[2], double d,
                                    int type) {
  auto w = [&](int slot) -> const Matrix& { return p.tensors[static_cast<std::size_t>(4 + slot0 + slot)]; };
  double pre[2];
  for (int k = 0; k < 2; ++k) {
    double v = w(3)(0, k);
    for (int a = 0; a < 2; ++a) v += hd[a] * w(0)(a, k) + hs[a] * w(1)(a, k);
    for (int m = 0; m < 20; ++m) v += rbf_value(d, m) * w(2)(type * 20 + m, k);
    pre[k] = v;
  }
  const double mean = 0.5 * (pre[0] + pre[1]);
  const double var = 0.5 * ((pre[0] - mean) * (pre[0] - mean) + (pre[1] - mean) * (pre[1] - mean));
  std::vector<double> out(2);
  for (int k = 0; k < 2; ++k) out[static_cast<std::size_t>(k)] = std::max(0.0, (pre[k] - mean) / std::sqrt(var + 1e-5));
  return out;
}

struct TwoNode {
  double h[2][2];
  double x_ligand[3];
};

TwoNode two_node_reference(const EgnnParams& p, const Matrix& h_in, const Vec3& xp, const Vec3& xl) {
  auto w = [&](int slot) -> const Matrix& { return p.tensors[static_cast<std::size_t>(4 + slot)]; };
  const double d = (xl - xp).norm();
  TwoNode r{};
  for (int i = 0; i < 2; ++i) {
    const int j = 1 - i;
    const int type = i == 0 ? 3 : 2;  // ligand->protein into node 0, protein->ligand into node 1
    const double hd[2] = {h_in(i, 0), h_in(i, 1)};
    const double hs[2] = {h_in(j, 0), h_in(j, 1)};
    const auto hid = edge_hidden_ref(p, kMsgDst, hd, hs, d, type);
    double vals[2];
    for (int c = 0; c < 2; ++c) {
      // Column 0 of the output is the attention score; values follow.
      vals[c] = w(kMsgOutBias)(0, 1 + c) + hid[0] * w(kMsgOut)(0, 1 + c) + hid[1] * w(kMsgOut)(1, 1 + c);
    }
    for (int k = 0; k < 2; ++k) {
      r.h[i][k] = h_in(i, k) + w(kNodeOutBias)(0, k) + vals[0] * w(kNodeOut)(0, k) + vals[1] * w(kNodeOut)(1, k);
    }
  }
  const double hd[2] = {r.h[1][0], r.h[1][1]};
  const double hs[2] = {r.h[0][0], r.h[0][1]};
  const auto chid = edge_hidden_ref(p, kCrdDst, hd, hs, d, 2);
  double gate = w(kCrdOutBias)(0, 1) + chid[0] * w(kCrdOut)(0, 1) + chid[1] * w(kCrdOut)(1, 1);
  gate = std::clamp(gate, -10.0, 10.0);
  for (int a = 0; a < 3; ++a) r.x_ligand[a] = xl(a) + (xl(a) - xp(a)) * gate;
  return r;
}

}  // namespace

TEST(Egnn, TwoNodeLayerMatchesScalarReference) {
  EgnnConfig c;
  c.hidden = 2;
  c.heads = 1;
  c.layers = 1;
  c.knn_k = 4;
  Rng rng(5);
  for (int trial = 0; trial < 5; ++trial) {
    EgnnParams p = EgnnParams::init(c, 100 + trial);
    for (Matrix& m : p.tensors) m = 0.1 * standard_normal(m.rows(), m.cols(), rng);
    const Vec3 xp(0.3, -0.2, 0.1);
    const Vec3 xl(1.2, 0.7, -0.4);
    const Matrix h = 0.5 * standard_normal(2, 2, rng);
    diff::Tape tape;
    const auto w = weight_leaves(tape, p, false);
    const Matrix prot = xp.transpose();
    const Matrix lig = xl.transpose();
    const auto edges = knn_edges(prot, lig, c.knn_k);
    const auto out = layer_forward(tape, p, w, 0, tape.constant(h), prot, tape.constant(lig), edges);
    const TwoNode ref = two_node_reference(p, h, xp, xl);
    for (int i = 0; i < 2; ++i) {
      for (int k = 0; k < 2; ++k) EXPECT_NEAR(out.h.value()(i, k), ref.h[i][k], 1e-12);
    }
    for (int a = 0; a < 3; ++a) EXPECT_NEAR(out.x_ligand.value()(0, a), ref.x_ligand[a], 1e-12);
  }
}

TEST(Egnn, RotationEquivariance) {
  Rng rng(6);
  const auto params = lively_params(small_config(), 6);
  const auto in = random_input(24, 7, rng);
  const auto base = forward(params, in);
  double worst_x = 0.0, worst_inv = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const Mat3 r = random_rotation(rng);
    EgnnInput rot = in;
    rot.protein_coords = in.protein_coords * r.transpose();
    rot.ligand_coords = in.ligand_coords * r.transpose();
    const auto out = forward(params, rot);
    worst_x = std::max(worst_x, max_abs(out.x_hat1 - base.x_hat1 * r.transpose()));
    worst_inv = std::max({worst_inv, max_abs(out.a_hat1 - base.a_hat1), std::abs(out.y_hat - base.y_hat)});
  }
  EXPECT_LT(worst_x, 1e-6);
  EXPECT_LT(worst_inv, 1e-9);
}

TEST(Egnn, TranslationRemovedByCentering) {
  Rng rng(7);
  const auto params = lively_params(small_config(), 7);
  EgnnInput raw = random_input(20, 5, rng);
  PocketCloud pocket;
  pocket.coords = raw.protein_coords.rowwise() + Eigen::RowVector3d(4.0, -1.0, 2.5);
  pocket.labels.assign(20, 0);
  const Matrix lig = raw.ligand_coords.rowwise() + Eigen::RowVector3d(4.0, -1.0, 2.5);
  auto run = [&](const Vec3& shift) {
    PocketCloud p = pocket;
    p.coords.rowwise() += shift.transpose();
    Matrix l = lig.rowwise() + shift.transpose();
    const auto centered = shift_to_protein_com(p, l);
    EgnnInput in = raw;
    in.protein_coords = centered.pocket.coords;
    in.ligand_coords = centered.ligand_coords;
    auto out = forward(params, in);
    out.x_hat1.rowwise() -= centered.offset.transpose();
    return out;
  };
  const auto a = run(Vec3::Zero());
  for (int trial = 0; trial < 10; ++trial) {
    const Vec3 shift = 20.0 * Vec3::Random();
    const auto b = run(shift);
    EXPECT_LT(max_abs(b.x_hat1 - shift.transpose().replicate(5, 1) - a.x_hat1), 1e-9);
    EXPECT_LT(max_abs(b.a_hat1 - a.a_hat1), 1e-9);
    EXPECT_LT(std::abs(b.y_hat - a.y_hat), 1e-9);
  }
}

TEST(Egnn, LigandPermutationEquivariance) {
  Rng rng(8);
  const auto params = lively_params(small_config(), 8);
  const auto in = random_input(18, 6, rng);
  const auto base = forward(params, in);
  std::vector<int> perm(6);
  std::iota(perm.begin(), perm.end(), 0);
  for (int trial = 0; trial < 10; ++trial) {
    std::shuffle(perm.begin(), perm.end(), rng);
    EgnnInput p = in;
    for (int i = 0; i < 6; ++i) {
      p.ligand_coords.row(i) = in.ligand_coords.row(perm[static_cast<std::size_t>(i)]);
      p.ligand_types.row(i) = in.ligand_types.row(perm[static_cast<std::size_t>(i)]);
    }
    const auto out = forward(params, p);
    for (int i = 0; i < 6; ++i) {
      const int src = perm[static_cast<std::size_t>(i)];
      EXPECT_LT(max_abs(out.x_hat1.row(i) - base.x_hat1.row(src)), 1e-9);
      EXPECT_LT(max_abs(out.a_hat1.row(i) - base.a_hat1.row(src)), 1e-9);
    }
    EXPECT_NEAR(out.y_hat, base.y_hat, 1e-12);
  }
}

TEST(Egnn, Deterministic) {
  Rng rng(9);
  const auto a = lively_params(small_config(), 9);
  const auto b = lively_params(small_config(), 9);
  const auto in = random_input(16, 5, rng);
  const auto oa = forward(a, in);
  const auto ob = forward(b, in);
  EXPECT_EQ(oa.x_hat1, ob.x_hat1);
  EXPECT_EQ(oa.a_hat1, ob.a_hat1);
  EXPECT_EQ(oa.y_hat, ob.y_hat);
}

TEST(Egnn, RiggedPerfectAffinityHasZeroGradient) {
  const EgnnConfig c = small_config();
  auto params = lively_params(c, 10);
  const auto hb = static_cast<std::size_t>(4 + c.layers * 14);
  params.tensors[hb + 6].setZero();
  params.tensors[hb + 7].setConstant(40.0);
  Rng rng(10);
  const auto g = forward_with_affinity_gradient(params, random_input(14, 4, rng));
  EXPECT_EQ(g.output.y_hat, 1.0);
  EXPECT_EQ(max_abs(g.grad_logp), 0.0);
}

TEST(Egnn, AffinityGradientMatchesFiniteDifferences) {
  Rng rng(11);
  const auto params = lively_params(small_config(), 11);
  for (int trial = 0; trial < 5; ++trial) {
    const auto in = random_input(8, 4, rng);
    const diff::Program logp = [&](diff::Tape& tape, std::span<const diff::Var> x) {
      const auto w = weight_leaves(tape, params, false);
      const auto v = forward_on_tape(tape, params, w, in, x[0]);
      return diff::scale(diff::sum(diff::square(diff::add_scalar(v.y_hat, -1.0))), -1.0);
    };
    const std::vector<Matrix> inputs{in.ligand_coords};
    const auto report = diff::check_gradient(logp, inputs, 1e-5, 1e-4);
    EXPECT_TRUE(report.passed) << report.worst_relative_error;
    const Matrix g = affinity_gradient(params, in);
    const auto eval = diff::evaluate_with_gradient(logp, inputs);
    EXPECT_LT(max_abs(g - eval.report.gradients[0]), 1e-14);
  }
}

TEST(Egnn, AffinityGradientRotates) {
  Rng rng(12);
  const auto params = lively_params(small_config(), 12);
  const auto in = random_input(20, 5, rng);
  const Matrix g = affinity_gradient(params, in);
  for (int trial = 0; trial < 10; ++trial) {
    const Mat3 r = random_rotation(rng);
    EgnnInput rot = in;
    rot.protein_coords = in.protein_coords * r.transpose();
    rot.ligand_coords = in.ligand_coords * r.transpose();
    EXPECT_LT(max_abs(affinity_gradient(params, rot) - g * r.transpose()), 1e-9);
  }
}

TEST(Egnn, RejectsBadShapes) {
  Rng rng(13);
  const auto params = lively_params(small_config(), 13);
  auto in = random_input(10, 3, rng);
  in.ligand_types = Matrix::Zero(3, 5);
  EXPECT_THROW(forward(params, in), ContractError);
  in = random_input(10, 3, rng);
  in.t = 1.5;
  EXPECT_THROW(forward(params, in), ContractError);
}
