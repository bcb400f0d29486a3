#pragma once

#include <span>
#include <string>
#include <vector>

namespace paflow {

enum class ScheduleKind { sigmoid, cosine };

std::string to_string(ScheduleKind kind);
ScheduleKind parse_schedule_kind(const std::string& text);

/// Construction parameters for a discretized variance schedule.
///
/// Diffusion time s runs from 0 (data) to 1 (prior); the flow time used by the
/// sampler is t = 1 - s.
struct ScheduleParams {
  ScheduleKind kind = ScheduleKind::sigmoid;
  int grid_size = 1000;
  double beta_lo = 1e-7;
  double beta_hi = 2e-3;
  /// Multiplies every sigmoid beta. 1.0 reproduces the literal limits; the
  /// default drives alpha_bar(1) below 1e-3 so the prior end is N(0, I).
  double beta_scale = 8.0;
  double s_offset = 0.01;
  double clamp_eps = 1e-5;

  static ScheduleParams coordinate_default();
  static ScheduleParams type_default();
  static ScheduleParams literal_coordinates();
};

/// Schedule quantities at one flow time t, everything already reversed
/// (alpha_bar means alpha_bar_{1-t}, d_alpha_bar means d/dt alpha_bar_{1-t}).
struct ScheduleSlice {
  double alpha_bar = 1.0;
  /// 1 - alpha_bar, floored at clamp_eps.
  double complement = 1.0;
  double d_alpha_bar = 0.0;

  double sqrt_alpha_bar() const;
  double d_sqrt_alpha_bar() const;
};

class VarianceSchedule {
 public:
  /// Throws ContractError on invalid parameters.
  static VarianceSchedule build(const ScheduleParams& params);

  /// Wraps an explicit table of alpha_bar at grid_size+1 uniform diffusion
  /// times. Values are floored at clamp_eps; monotonicity is not required.
  static VarianceSchedule from_table(std::vector<double> table, double clamp_eps = 1e-5);

  double alpha_bar_at(double s) const;
  double d_alpha_bar_ds(double s) const;

  double alpha_bar_reversed(double t) const;
  double complement_reversed(double t) const;
  double d_alpha_bar_reversed(double t) const;
  double d_sqrt_alpha_bar_reversed(double t) const;
  ScheduleSlice at(double t) const;

  std::span<const double> table() const { return table_; }
  int grid_size() const { return static_cast<int>(table_.size()) - 1; }
  double clamp_eps() const { return clamp_eps_; }
  const ScheduleParams& params() const { return params_; }

 private:
  VarianceSchedule() = default;
  std::size_t cell_of(double s) const;

  ScheduleParams params_{};
  std::vector<double> table_;
  double clamp_eps_ = 1e-5;
};

}  // namespace paflow
