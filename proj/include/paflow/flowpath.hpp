#pragma once

// Conditional probability paths for coordinates (variance preserving) and
// types (categorical mixing toward the uniform row), their target fields and
// the training losses.

#include "paflow/common.hpp"
#include "paflow/diffcore.hpp"
#include "paflow/schedule.hpp"

#include <cstdint>

namespace paflow {

/// x_t = sqrt(abar) x1 + sqrt(1 - abar) noise, abar = alpha_bar_{1-t}.
Matrix corrupt_coordinates(const Matrix& x1, double t, const VarianceSchedule& sched, const Matrix& noise);

/// c = abar a1 + (1 - abar) / K.
Matrix mix_types(const Matrix& a1, double t, const VarianceSchedule& sched);
Matrix mix_types_with(const Matrix& a1, double alpha_bar);

/// Standard Gumbel(0, 1) draws.
Matrix gumbel_noise(Index rows, Index cols, Rng& rng);
/// Row-wise one_hot(argmax(gumbel + log max(c, 1e-12))).
Matrix gumbel_argmax(const Matrix& c, const Matrix& gumbel);
Matrix gumbel_sample_types(const Matrix& c, std::uint64_t seed);

/// ((sqrt abar)' / (1 - abar)) (x1 - sqrt(abar) x). This is the derivative of
/// the flow sqrt(abar) x1 + sqrt(1 - abar) x0 expressed in terms of x.
Matrix target_vf_coords(const Matrix& x, const Matrix& x1, double t, const VarianceSchedule& sched);
Matrix target_vf_coords_with(const Matrix& x, const Matrix& x1, const ScheduleSlice& slice);

/// abar' (a1 - uniform). Rows sum to zero.
Matrix target_vf_types(const Matrix& a1, double t, const VarianceSchedule& sched);
Matrix target_vf_types_with(const Matrix& a1, double d_alpha_bar);

/// Field of the affine flow r_t x + s_t with r_t = 1 - abar, s_t = abar a1:
/// (r'/r)(x - s) + s', evaluated at a point x on the simplex.
Matrix affine_flow_field(const Matrix& x, const Matrix& a1, double alpha_bar, double d_alpha_bar);

inline constexpr double kProbabilityFloor = 1e-12;

/// Mean over atoms of the squared Euclidean coordinate error.
double loss_coords(const Matrix& x1, const Matrix& x_hat1);
/// Mean over atoms of KL(c_true || c_pred), both floored at 1e-12.
double loss_types(const Matrix& c_true, const Matrix& c_pred);
double loss_affinity(double y, double y_hat);

namespace diff {
Var loss_coords(Var x1, Var x_hat1);
/// c_true is treated as data (no adjoint).
Var loss_types(Var c_true, Var c_pred);
Var loss_affinity(Var y, Var y_hat);
}  // namespace diff

}  // namespace paflow
