#pragma once

// Pocket descriptors (atom count, cavity volume, cavity area, space size) and
// the perceptron that predicts the ligand atom count from them.

#include "paflow/common.hpp"
#include "paflow/geomdata.hpp"

#include <array>
#include <cstdint>
#include <functional>
#include <vector>

namespace paflow {

inline constexpr double kCavityClearance = 2.0;
inline constexpr double kCavityEnclosureRadius = 6.0;
inline constexpr int kCavityEnclosureCount = 4;

struct PocketDescriptors {
  double n_p = 0.0;
  double volume = 0.0;      // A^3
  double area = 0.0;        // A^2
  double space_size = 0.0;  // A
  /// Fewer than four atoms or a flat pocket: volume and area are zero.
  bool degenerate = false;

  std::array<double, 4> as_array() const { return {n_p, volume, area, space_size}; }
};

/// Convex hull as outward facets (unit normal n, offset d: n.x <= d inside).
struct ConvexHull {
  std::vector<Vec3> normals;
  std::vector<double> offsets;
  bool degenerate = true;

  bool contains(const Vec3& p, double tol = 1e-9) const;
  std::size_t facet_count() const { return normals.size(); }
};

ConvexHull convex_hull(const Matrix& points);

/// Median of the ten largest pairwise distances (all pairs if fewer).
double space_size(const Matrix& coords);

PocketDescriptors pocket_descriptors(const PocketCloud& pocket, double grid_step = 0.5);
PocketDescriptors pocket_descriptors(const Matrix& coords, double grid_step = 0.5);

struct SizerConfig {
  std::array<int, 3> hidden = {128, 256, 128};
  double dropout = 0.1;
  double lr = 5e-4;
  double beta1 = 0.95;
  double beta2 = 0.999;
  int batch_size = 256;
  double decay = 0.8;
  int patience = 5;
  double min_lr = 1e-5;
  double validation_fraction = 0.2;
  double delta = 0.01;
};

struct SizerParams {
  /// W1, b1, ..., W4, b4 of the 4 -> h1 -> h2 -> h3 -> 1 perceptron.
  std::vector<Matrix> tensors;
  double dropout = 0.1;
  std::array<double, 4> feature_mean{};
  std::array<double, 4> feature_std{1.0, 1.0, 1.0, 1.0};
  double n_min = 0.0;
  double n_max = 1.0;
  double delta = 0.01;

  std::vector<double> train_loss;
  std::vector<double> validation_loss;
  double validation_r2 = 0.0;

  static SizerParams init(const SizerConfig& config, std::uint64_t seed);
  void validate() const;
};

struct SizerSample {
  PocketDescriptors descriptors;
  int n_atoms = 0;
};

/// Network output in normalized label space (no noise, dropout off).
double predict_normalized(const SizerParams& params, const PocketDescriptors& descriptors);
/// predict_normalized plus tau ~ N(0, delta^2) drawn from seed.
double noisy_normalized(const SizerParams& params, const PocketDescriptors& descriptors, double delta,
                        std::uint64_t seed);
/// clamp(round(n * (n_max - n_min) + n_min), 1, n_max) of the noisy output.
int predict_atom_count(const SizerParams& params, const PocketDescriptors& descriptors, double delta,
                       std::uint64_t seed);

SizerParams train_sizer(const std::vector<SizerSample>& dataset, int epochs, std::uint64_t seed,
                        const SizerConfig& config = {});

struct NoiseBenefit {
  double estimate = 0.0;
  double standard_error = 0.0;
  double analytic = 0.0;
};

/// Monte-Carlo E[f(n + tau)] - f(n) with tau ~ N(0, delta^2), next to the
/// second-order prediction f''(n) delta^2 / 2 (f'' by central difference).
NoiseBenefit noise_benefit_probe(const std::function<double(double)>& f, double n, double delta, int samples,
                                 std::uint64_t seed = 0);

}  // namespace paflow
