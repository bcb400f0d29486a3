#pragma once

// Pockets, ligands and complexes: centering, knn graphs, synthetic data and
// the line-oriented complex file format.

#include "paflow/common.hpp"

#include <array>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

namespace paflow {

// Pocket atom label = element + 4 * (residue_class + 5 * backbone).
inline constexpr int kPocketElements = 4;
inline constexpr int kResidueClasses = 5;
inline constexpr int kPocketLabels = kPocketElements * kResidueClasses * 2;
inline constexpr int kPocketFeatureDim = kPocketElements + kResidueClasses + 1;
inline constexpr int kDefaultLigandTypes = 8;

inline constexpr int kRbfCount = 20;
inline constexpr double kRbfMax = 10.0;
inline constexpr int kEdgeTypes = 4;

enum EdgeType : int { protein_protein = 0, ligand_ligand = 1, protein_to_ligand = 2, ligand_to_protein = 3 };

struct PocketCloud {
  Matrix coords;            // N_P x 3
  std::vector<int> labels;  // N_P pocket labels

  Index size() const { return coords.rows(); }
  /// One-hot element, residue class and backbone flag (N_P x kPocketFeatureDim).
  Matrix features() const;
};

int pocket_label(int element, int residue_class, bool backbone);
int pocket_element(int label);

struct LigandState {
  Matrix coords;        // N_M x 3
  Matrix types_onehot;  // N_M x K
  Matrix type_probs;    // N_M x K, rows on the simplex
  double t = 1.0;

  Index size() const { return coords.rows(); }
  Index type_count() const { return types_onehot.cols(); }
  std::vector<int> labels() const;

  /// Data-end state: one-hot types, probabilities equal to the one-hot rows.
  static LigandState from_labels(Matrix coords, const std::vector<int>& labels, int type_count);
};

Matrix one_hot(const std::vector<int>& labels, int classes);

struct ComplexRecord {
  PocketCloud pocket;
  LigandState ligand;
  double affinity = 0.0;
};

struct CenteredComplex {
  PocketCloud pocket;
  Matrix ligand_coords;
  /// Added to every coordinate; subtract it to map back to the input frame.
  Vec3 offset = Vec3::Zero();
};

CenteredComplex shift_to_protein_com(const PocketCloud& pocket, const Matrix& ligand_coords);

/// Orthonormal axes (columns) of a centered point cloud: principal directions
/// with each sign chosen so the third moment along it is positive. Rotating
/// the cloud by R maps the frame F to R F, so `coords * F` is rotation
/// invariant for clouds with distinct principal moments.
Mat3 canonical_frame(const Matrix& centered_coords);

/// Gaussian expansion of a distance onto kRbfCount centers on [0, kRbfMax].
std::array<double, kRbfCount> rbf_expand(double distance);
const std::array<double, kRbfCount>& rbf_centers();
double rbf_sigma();

/// Directed knn graph over protein nodes [0, N_P) followed by ligand nodes.
/// Edge e runs src[e] -> dst[e]; every node receives edges from its k nearest
/// other nodes.
struct ComplexGraph {
  Index node_count = 0;
  Index protein_count = 0;
  std::vector<int> src;
  std::vector<int> dst;
  std::vector<int> edge_type;
  Matrix distances;      // E x 1
  Matrix edge_features;  // E x (kRbfCount * kEdgeTypes)
  std::vector<bool> ligand_mask;

  std::size_t edge_count() const { return src.size(); }
};

/// Neighbour lists only (no features); shared by the network, which computes
/// distance features on its own tape.
struct KnnEdges {
  std::vector<int> src;
  std::vector<int> dst;
  std::vector<int> edge_type;
};

KnnEdges knn_edges(const Matrix& protein_coords, const Matrix& ligand_coords, int k);
ComplexGraph build_knn_graph(const Matrix& protein_coords, const Matrix& ligand_coords, int k);

struct SyntheticDataset {
  std::vector<ComplexRecord> records;
  /// Volume of the ball the ligand size was drawn from, per record (A^3).
  std::vector<double> true_volume;
};

SyntheticDataset generate_synthetic_dataset(int n_complexes, std::uint64_t seed, int type_count = kDefaultLigandTypes);

// Complex file format.
inline constexpr const char* kComplexHeader = "#paflow-complex v1";

void write_complexes(std::ostream& out, const std::vector<ComplexRecord>& records);
void write_complexes(const std::string& path, const std::vector<ComplexRecord>& records);
std::vector<ComplexRecord> read_complexes(std::istream& in, int type_count = kDefaultLigandTypes);
std::vector<ComplexRecord> read_complexes(const std::string& path, int type_count = kDefaultLigandTypes);

/// Ligand-only files (generated molecules) and trajectories (`FRAME t` before
/// each LIGAND block).
void write_ligands(const std::string& path, const std::vector<LigandState>& ligands);
std::vector<LigandState> read_ligands(const std::string& path, int type_count = kDefaultLigandTypes);
void write_trajectory(const std::string& path, const std::vector<LigandState>& frames);

/// Rounds to the 9 significant digits used by the file format.
double quantize(double value);

}  // namespace paflow
