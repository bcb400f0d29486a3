#pragma once

// Guided Euler integration from the prior (t = 0) to a generated ligand
// (t = 1) inside a pocket.

#include "paflow/common.hpp"
#include "paflow/egnn.hpp"
#include "paflow/geomdata.hpp"
#include "paflow/guidance.hpp"
#include "paflow/schedule.hpp"
#include "paflow/sizer.hpp"

#include <cstdint>
#include <optional>
#include <vector>

namespace paflow {

struct SamplerConfig {
  int steps = 50;
  double gamma = 350.0;
  double delta = 0.01;
  std::uint64_t seed = 0;
  bool record_trajectory = false;
  /// Draw the final types from c instead of taking the argmax.
  bool stochastic_final = false;
  /// Draw new Gumbel noise at every step instead of once per atom.
  bool fresh_type_noise = false;
  /// Use this many atoms instead of asking the sizer (0 = ask the sizer).
  int n_atoms = 0;

  void validate() const;
};

struct Schedules {
  VarianceSchedule coords;
  VarianceSchedule types;

  static Schedules defaults();
};

/// Prior state for a CoM-shifted pocket: coordinates are standard normal,
/// drawn in the pocket's canonical frame so that rotating the pocket rotates
/// the draw; c rows are uniform; types come from `gumbel` (Gumbel-max on c).
LigandState init_state(const PocketCloud& centered_pocket, int n_atoms, std::uint64_t seed, int type_count,
                       Matrix* gumbel = nullptr);

/// One explicit Euler step of size dt from state.t using the network outputs
/// evaluated at that state. grad_logp may be empty when gamma is zero.
LigandState euler_step(const LigandState& state, const EgnnOutput& net, const Matrix& grad_logp,
                       const Schedules& schedules, const GuidanceConfig& guidance, double dt, const Matrix& gumbel,
                       int step_index = 0);

struct SampleResult {
  LigandState ligand;  // original pocket frame, t = 1
  std::vector<LigandState> trajectory;
  int n_atoms = 0;
  /// Affinity head on the final molecule.
  double final_y_hat = 0.0;
};

SampleResult sample(const EgnnParams& params, const SizerParams* sizer, const PocketCloud& pocket,
                    const SamplerConfig& config, const Schedules& schedules = Schedules::defaults());

}  // namespace paflow
