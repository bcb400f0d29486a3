#pragma once

// Desk-scale quality metrics for generated molecules and the report format.

#include "paflow/common.hpp"
#include "paflow/egnn.hpp"
#include "paflow/geomdata.hpp"
#include "paflow/sampler.hpp"

#include <string>
#include <vector>

namespace paflow {

/// Affinity head on a finished molecule (t = 1, protein CoM frame).
double score_molecule(const EgnnParams& params, const PocketCloud& pocket, const LigandState& ligand);

/// Mean distance of pocket atoms to their centroid.
double pocket_radius(const PocketCloud& pocket);

/// Share of ligand atoms within pocket_radius + margin of the pocket centroid.
double in_pocket_fraction(const PocketCloud& pocket, const LigandState& ligand, double margin = 2.0);

/// Mean pairwise total-variation distance between per-molecule type
/// histograms (0 for fewer than two molecules).
double type_diversity(const std::vector<LigandState>& molecules);

/// Largest coordinate deviation between sample(R p + b) and R sample(p) + b,
/// plus 1 if the types differ.
double equivariance_error(const EgnnParams& params, const SizerParams* sizer, const PocketCloud& pocket,
                          const SamplerConfig& config, const Schedules& schedules, std::uint64_t rotation_seed);

struct PocketMetrics {
  int pocket = 0;
  int molecules = 0;
  int reference_atoms = 0;
  double mean_atoms = 0.0;
  double mean_y_hat = 0.0;
  double median_y_hat = 0.0;
  double in_pocket_fraction = 0.0;
  double size_match_error = 0.0;
  double type_diversity = 0.0;
};

struct EvalReport {
  std::vector<PocketMetrics> pockets;
  int molecules = 0;
  double mean_y_hat = 0.0;
  double median_y_hat = 0.0;
  double in_pocket_fraction = 0.0;
  double size_match_error = 0.0;
  double type_diversity = 0.0;
  double equivariance_error = 0.0;
  double sampling_seconds_per_100 = -1.0;  // negative when unknown
  double runtime_seconds = 0.0;
};

/// molecules[p] are the generated ligands for references[p].
EvalReport evaluate_molecules(const EgnnParams& params, const std::vector<ComplexRecord>& references,
                              const std::vector<std::vector<LigandState>>& molecules);

/// Human-readable summary, then `key=value` lines (including the resolved
/// configuration as `config.<key>=<value>`).
std::string format_report(const EvalReport& report, const std::string& config_text);

}  // namespace paflow
