#include "paflow/guidance.hpp"

#include <cmath>

namespace paflow {

double guidance_coefficient_with(const ScheduleSlice& slice) { return slice.d_alpha_bar / (2.0 * slice.alpha_bar); }

double guidance_coefficient(const VarianceSchedule& sched, double t) { return guidance_coefficient_with(sched.at(t)); }

GuidanceCoefficients guidance_coefficients_from_path(const ScheduleSlice& slice) {
  const double mu = std::sqrt(slice.alpha_bar);
  const double sigma = std::sqrt(slice.complement);
  const double d_mu = slice.d_alpha_bar / (2.0 * mu);
  const double d_sigma = -slice.d_alpha_bar / (2.0 * sigma);
  GuidanceCoefficients c;
  c.a = d_mu / mu;
  c.b = (d_mu * sigma - mu * d_sigma) * sigma / mu;
  return c;
}

Matrix guided_coordinate_field_with(const Matrix& v, const Matrix& grad_logp, const ScheduleSlice& slice,
                                    double gamma) {
  require(gamma >= 0.0, "guided_coordinate_field: gamma must be nonnegative");
  require(v.rows() == grad_logp.rows() && v.cols() == grad_logp.cols(), "guided_coordinate_field: shape mismatch");
  if (gamma == 0.0) return v;
  return v + (gamma * guidance_coefficient_with(slice)) * grad_logp;
}

Matrix guided_coordinate_field(const Matrix& v, const Matrix& grad_logp, const VarianceSchedule& sched, double t,
                               double gamma) {
  return guided_coordinate_field_with(v, grad_logp, sched.at(t), gamma);
}

double log_likelihood(double y_hat) { return -(y_hat - 1.0) * (y_hat - 1.0); }

}  // namespace paflow
