#pragma once

// Adam with global-norm clipping and plateau learning-rate decay.

#include "paflow/common.hpp"

#include <cstdint>
#include <vector>

namespace paflow {

struct AdamConfig {
  double lr = 5e-4;
  double beta1 = 0.95;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  std::vector<Matrix> m;
  std::vector<Matrix> v;
  std::int64_t step = 0;

  static AdamState zeros_like(const std::vector<Matrix>& params);
};

/// One bias-corrected Adam update of `params` in place.
void adam_update(std::vector<Matrix>& params, const std::vector<Matrix>& grads, AdamState& state,
                 const AdamConfig& config);

double global_norm(const std::vector<Matrix>& grads);

/// Rescales grads so their global norm is at most max_norm; returns the norm
/// before clipping. max_norm <= 0 disables clipping.
double clip_global_norm(std::vector<Matrix>& grads, double max_norm);

/// Multiplies the learning rate by `factor` whenever the monitored loss has
/// not improved for `patience` consecutive evaluations, never below min_lr.
struct PlateauDecay {
  double factor = 0.95;
  int patience = 15;
  double min_lr = 1e-6;

  double best = 0.0;
  bool has_best = false;
  int stale = 0;

  /// Returns the learning rate to use after observing `loss`.
  double observe(double loss, double lr);
};

}  // namespace paflow
