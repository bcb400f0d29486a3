#include "paflow/flowpath.hpp"

#include <cmath>
#include <limits>

namespace paflow {

Matrix corrupt_coordinates(const Matrix& x1, double t, const VarianceSchedule& sched, const Matrix& noise) {
  require(noise.rows() == x1.rows() && noise.cols() == x1.cols(), "corrupt_coordinates: noise shape must match x1");
  const double abar = sched.alpha_bar_reversed(t);
  return std::sqrt(abar) * x1 + std::sqrt(std::max(1.0 - abar, 0.0)) * noise;
}

Matrix mix_types_with(const Matrix& a1, double alpha_bar) {
  const auto k = static_cast<double>(a1.cols());
  return (alpha_bar * a1).array() + (1.0 - alpha_bar) / k;
}

Matrix mix_types(const Matrix& a1, double t, const VarianceSchedule& sched) {
  return mix_types_with(a1, sched.alpha_bar_reversed(t));
}

Matrix gumbel_noise(Index rows, Index cols, Rng& rng) {
  // Open interval (0, 1) so both logs stay finite.
  std::uniform_real_distribution<double> u(std::numeric_limits<double>::min(), 1.0);
  Matrix g(rows, cols);
  for (Index i = 0; i < rows; ++i) {
    for (Index j = 0; j < cols; ++j) {
      double v = u(rng);
      while (v >= 1.0) v = u(rng);
      g(i, j) = -std::log(-std::log(v));
    }
  }
  return g;
}

Matrix gumbel_argmax(const Matrix& c, const Matrix& gumbel) {
  require(c.rows() == gumbel.rows() && c.cols() == gumbel.cols(), "gumbel_argmax: shape mismatch");
  Matrix out = Matrix::Zero(c.rows(), c.cols());
  for (Index i = 0; i < c.rows(); ++i) {
    Index best = 0;
    double best_score = -std::numeric_limits<double>::infinity();
    for (Index j = 0; j < c.cols(); ++j) {
      const double score = gumbel(i, j) + std::log(std::max(c(i, j), kProbabilityFloor));
      if (score > best_score) {
        best_score = score;
        best = j;
      }
    }
    out(i, best) = 1.0;
  }
  return out;
}

Matrix gumbel_sample_types(const Matrix& c, std::uint64_t seed) {
  Rng rng(seed);
  return gumbel_argmax(c, gumbel_noise(c.rows(), c.cols(), rng));
}

Matrix target_vf_coords_with(const Matrix& x, const Matrix& x1, const ScheduleSlice& slice) {
  require(x.rows() == x1.rows() && x.cols() == x1.cols(), "target_vf_coords: shape mismatch");
  const double coef = slice.d_sqrt_alpha_bar() / slice.complement;
  return coef * (x1 - slice.sqrt_alpha_bar() * x);
}

Matrix target_vf_coords(const Matrix& x, const Matrix& x1, double t, const VarianceSchedule& sched) {
  return target_vf_coords_with(x, x1, sched.at(t));
}

Matrix target_vf_types_with(const Matrix& a1, double d_alpha_bar) {
  const auto k = static_cast<double>(a1.cols());
  return d_alpha_bar * (a1.array() - 1.0 / k).matrix();
}

Matrix target_vf_types(const Matrix& a1, double t, const VarianceSchedule& sched) {
  return target_vf_types_with(a1, sched.d_alpha_bar_reversed(t));
}

Matrix affine_flow_field(const Matrix& x, const Matrix& a1, double alpha_bar, double d_alpha_bar) {
  const double r = 1.0 - alpha_bar;
  const double dr = -d_alpha_bar;
  const Matrix s = alpha_bar * a1;
  const Matrix ds = d_alpha_bar * a1;
  return (dr / r) * (x - s) + ds;
}

double loss_coords(const Matrix& x1, const Matrix& x_hat1) {
  require(x1.rows() == x_hat1.rows() && x1.cols() == x_hat1.cols(), "loss_coords: shape mismatch");
  return (x1 - x_hat1).squaredNorm() / static_cast<double>(x1.rows());
}

double loss_types(const Matrix& c_true, const Matrix& c_pred) {
  require(c_true.rows() == c_pred.rows() && c_true.cols() == c_pred.cols(), "loss_types: shape mismatch");
  const Matrix p = c_true.cwiseMax(kProbabilityFloor);
  const Matrix q = c_pred.cwiseMax(kProbabilityFloor);
  return (p.array() * (p.array().log() - q.array().log())).sum() / static_cast<double>(c_true.rows());
}

double loss_affinity(double y, double y_hat) { return (y - y_hat) * (y - y_hat); }

namespace diff {

Var loss_coords(Var x1, Var x_hat1) {
  return scale(sum(square(sub(x1, x_hat1))), 1.0 / static_cast<double>(x1.rows()));
}

Var loss_types(Var c_true, Var c_pred) {
  // The target distribution is data: no adjoint flows into it.
  Tape& t = *c_true.tape;
  const Matrix p = c_true.value().cwiseMax(kProbabilityFloor);
  Var log_ratio = sub(t.constant(p.array().log().matrix()), log_floor(c_pred, kProbabilityFloor));
  return scale(sum(hadamard(t.constant(p), log_ratio)), 1.0 / static_cast<double>(p.rows()));
}

Var loss_affinity(Var y, Var y_hat) { return sum(square(sub(y, y_hat))); }

}  // namespace diff

}  // namespace paflow
