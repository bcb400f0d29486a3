#pragma once

// SE(3)-equivariant attention network over the protein-ligand knn graph.
// Predicts denoised ligand coordinates, type probabilities and an affinity
// score in [0, 1] from the current complex state.

#include "paflow/common.hpp"
#include "paflow/diffcore.hpp"
#include "paflow/geomdata.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace paflow {

struct EgnnConfig {
  int hidden = 128;
  int heads = 16;
  int layers = 9;
  int knn_k = 32;
  int type_count = kDefaultLigandTypes;
  int pocket_feature_dim = kPocketFeatureDim;
  /// Per-edge bound on the coordinate gate.
  double gate_clip = 10.0;

  void validate() const;
};

/// All network weights in a fixed order (see egnn.cpp for the layout).
struct EgnnParams {
  EgnnConfig config;
  std::vector<Matrix> tensors;

  static EgnnParams init(const EgnnConfig& config, std::uint64_t seed);
  std::size_t scalar_count() const;
  /// Shape check against the layout implied by config.
  void validate() const;
};

/// Inputs in the protein-centered frame.
struct EgnnInput {
  Matrix protein_coords;    // N_P x 3
  Matrix protein_features;  // N_P x pocket_feature_dim
  Matrix ligand_coords;     // N_M x 3
  Matrix ligand_types;      // N_M x K, one-hot
  double t = 0.0;
};

struct EgnnOutput {
  Matrix x_hat1;   // N_M x 3
  Matrix a_hat1;   // N_M x K
  double y_hat = 0.0;
  Matrix h_final;  // (N_P + N_M) x hidden
};

/// Handles to the network outputs on a tape.
struct EgnnVars {
  diff::Var x_hat1;
  diff::Var a_hat1;
  diff::Var y_hat;  // 1 x 1
  diff::Var h_final;
};

/// One message-passing layer. `x_ligand` holds the ligand rows only; protein
/// coordinates never move. `edges` must be built from these coordinates.
struct LayerVars {
  diff::Var h;
  diff::Var x_ligand;
};

LayerVars layer_forward(diff::Tape& tape, const EgnnParams& params, std::span<const diff::Var> weights, int layer,
                        diff::Var h, const Matrix& protein_coords, diff::Var x_ligand, const KnnEdges& edges);

/// Records the full forward pass. `weights` are tape leaves for
/// params.tensors (same order); ligand coordinates are given as a Var so the
/// caller decides whether they are differentiated.
EgnnVars forward_on_tape(diff::Tape& tape, const EgnnParams& params, std::span<const diff::Var> weights,
                         const EgnnInput& input, diff::Var ligand_coords);

/// Leaves referencing params.tensors (no copy).
std::vector<diff::Var> weight_leaves(diff::Tape& tape, const EgnnParams& params, bool requires_grad);

EgnnOutput forward(const EgnnParams& params, const EgnnInput& input);

struct GuidedEvaluation {
  EgnnOutput output;
  /// d/d(ligand coords) of -(y_hat - 1)^2.
  Matrix grad_logp;
};

GuidedEvaluation forward_with_affinity_gradient(const EgnnParams& params, const EgnnInput& input);
Matrix affinity_gradient(const EgnnParams& params, const EgnnInput& input);

}  // namespace paflow
