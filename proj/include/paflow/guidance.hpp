#pragma once

// Predictor guidance of the coordinate field toward high predicted affinity.

#include "paflow/common.hpp"
#include "paflow/schedule.hpp"

namespace paflow {

struct GuidanceConfig {
  double gamma = 350.0;
  bool enabled = true;

  double effective_gamma() const { return enabled ? gamma : 0.0; }
};

/// abar' / (2 abar) at flow time t.
double guidance_coefficient(const VarianceSchedule& sched, double t);
double guidance_coefficient_with(const ScheduleSlice& slice);

/// The two coefficients of the guided Gaussian-path field, computed separately
/// from mu = sqrt(abar), sigma = sqrt(1 - abar) and their time derivatives.
struct GuidanceCoefficients {
  double a = 0.0;  // mu' / mu
  double b = 0.0;  // (mu' sigma - mu sigma') sigma / mu
};

GuidanceCoefficients guidance_coefficients_from_path(const ScheduleSlice& slice);

/// v + gamma * coefficient * grad_logp. gamma == 0 returns v unchanged.
Matrix guided_coordinate_field(const Matrix& v, const Matrix& grad_logp, const VarianceSchedule& sched, double t,
                               double gamma);
Matrix guided_coordinate_field_with(const Matrix& v, const Matrix& grad_logp, const ScheduleSlice& slice,
                                    double gamma);

/// -(y_hat - 1)^2: log of the unnormalized likelihood of y = 1.
double log_likelihood(double y_hat);

}  // namespace paflow
