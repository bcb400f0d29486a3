#include "paflow/schedule.hpp"

#include "paflow/common.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

namespace paflow {

std::string to_string(ScheduleKind kind) {
  return kind == ScheduleKind::sigmoid ? "sigmoid" : "cosine";
}

ScheduleKind parse_schedule_kind(const std::string& text) {
  if (text == "sigmoid") return ScheduleKind::sigmoid;
  if (text == "cosine") return ScheduleKind::cosine;
  throw ConfigError("unknown schedule kind '" + text + "' (expected sigmoid or cosine)");
}

ScheduleParams ScheduleParams::coordinate_default() { return ScheduleParams{}; }

ScheduleParams ScheduleParams::type_default() {
  ScheduleParams p;
  p.kind = ScheduleKind::cosine;
  return p;
}

ScheduleParams ScheduleParams::literal_coordinates() {
  ScheduleParams p;
  p.beta_scale = 1.0;
  return p;
}

double ScheduleSlice::sqrt_alpha_bar() const { return std::sqrt(alpha_bar); }

double ScheduleSlice::d_sqrt_alpha_bar() const { return d_alpha_bar / (2.0 * std::sqrt(alpha_bar)); }

namespace {

double logistic(double u) { return 1.0 / (1.0 + std::exp(-u)); }

std::vector<double> raw_sigmoid_table(const ScheduleParams& p) {
  const int n = p.grid_size;
  std::vector<double> table(n + 1);
  table[0] = 1.0;
  double prod = 1.0;
  for (int i = 1; i <= n; ++i) {
    const double u = -6.0 + 12.0 * static_cast<double>(i - 1) / static_cast<double>(n - 1);
    const double beta = p.beta_scale * (p.beta_lo + (p.beta_hi - p.beta_lo) * logistic(u));
    prod *= 1.0 - beta;
    table[i] = prod;
  }
  return table;
}

std::vector<double> raw_cosine_table(const ScheduleParams& p) {
  const int n = p.grid_size;
  auto f = [&](double s) {
    const double c = std::cos((s + p.s_offset) / (1.0 + p.s_offset) * std::numbers::pi / 2.0);
    return c * c;
  };
  const double f0 = f(0.0);
  std::vector<double> table(n + 1);
  for (int i = 0; i <= n; ++i) {
    const double s = static_cast<double>(i) / static_cast<double>(n);
    // cos^2 at exactly pi/2 evaluates to ~1e-33 in floating point; pin it.
    table[i] = i == n ? 0.0 : f(s) / f0;
  }
  return table;
}

}  // namespace

VarianceSchedule VarianceSchedule::build(const ScheduleParams& params) {
  require(params.grid_size >= 2, "schedule: grid_size must be >= 2");
  require(params.clamp_eps > 0.0 && params.clamp_eps < 1e-2, "schedule: clamp_eps must lie in (0, 1e-2)");
  std::vector<double> raw;
  if (params.kind == ScheduleKind::sigmoid) {
    require(params.beta_lo > 0.0, "schedule: beta_lo must be positive");
    if (params.beta_lo > params.beta_hi) {
      std::ostringstream os;
      os << "schedule: beta_lo (" << params.beta_lo << ") exceeds beta_hi (" << params.beta_hi << ")";
      throw ContractError(os.str());
    }
    require(params.beta_scale > 0.0, "schedule: beta_scale must be positive");
    require(params.beta_hi * params.beta_scale < 1.0, "schedule: scaled beta_hi must be < 1");
    raw = raw_sigmoid_table(params);
  } else {
    require(params.s_offset > 0.0 && params.s_offset < 1.0, "schedule: s_offset must lie in (0, 1)");
    raw = raw_cosine_table(params);
  }
  for (std::size_t i = 0; i < raw.size(); ++i) {
    if (!std::isfinite(raw[i]) || raw[i] < 0.0 || raw[i] > 1.0) {
      std::ostringstream os;
      os << "schedule: alpha_bar at index " << i << " is " << raw[i] << ", outside [0, 1]";
      throw ContractError(os.str());
    }
  }
  VarianceSchedule out;
  out.params_ = params;
  out.clamp_eps_ = params.clamp_eps;
  out.table_.resize(raw.size());
  // Affine floor keeps the table strictly decreasing while mapping 0 to clamp_eps.
  for (std::size_t i = 0; i < raw.size(); ++i) {
    out.table_[i] = params.clamp_eps + (1.0 - params.clamp_eps) * raw[i];
  }
  return out;
}

VarianceSchedule VarianceSchedule::from_table(std::vector<double> table, double clamp_eps) {
  require(table.size() >= 3, "schedule: table needs at least 3 entries");
  require(clamp_eps > 0.0, "schedule: clamp_eps must be positive");
  for (double& v : table) {
    require(std::isfinite(v) && v <= 1.0, "schedule: table entries must be finite and <= 1");
    v = std::max(v, clamp_eps);
  }
  VarianceSchedule out;
  out.params_.grid_size = static_cast<int>(table.size()) - 1;
  out.params_.clamp_eps = clamp_eps;
  out.clamp_eps_ = clamp_eps;
  out.table_ = std::move(table);
  return out;
}

std::size_t VarianceSchedule::cell_of(double s) const {
  const auto n = static_cast<std::size_t>(grid_size());
  const auto cell = static_cast<std::size_t>(std::floor(s * static_cast<double>(n)));
  return std::min(cell, n - 1);
}

double VarianceSchedule::alpha_bar_at(double s) const {
  require(s >= 0.0 && s <= 1.0, "alpha_bar_at: s must lie in [0, 1]");
  const std::size_t i = cell_of(s);
  const double n = static_cast<double>(grid_size());
  const double frac = s * n - static_cast<double>(i);
  if (frac == 0.0) return table_[i];
  return table_[i] + (table_[i + 1] - table_[i]) * frac;
}

double VarianceSchedule::d_alpha_bar_ds(double s) const {
  require(s >= 0.0 && s <= 1.0, "d_alpha_bar_ds: s must lie in [0, 1]");
  const std::size_t i = cell_of(s);
  return (table_[i + 1] - table_[i]) * static_cast<double>(grid_size());
}

double VarianceSchedule::alpha_bar_reversed(double t) const {
  require(t >= 0.0 && t <= 1.0, "alpha_bar_reversed: t must lie in [0, 1]");
  return alpha_bar_at(1.0 - t);
}

double VarianceSchedule::complement_reversed(double t) const {
  return std::max(1.0 - alpha_bar_reversed(t), clamp_eps_);
}

double VarianceSchedule::d_alpha_bar_reversed(double t) const {
  require(t >= 0.0 && t <= 1.0, "d_alpha_bar_reversed: t must lie in [0, 1]");
  return -d_alpha_bar_ds(1.0 - t);
}

double VarianceSchedule::d_sqrt_alpha_bar_reversed(double t) const {
  return d_alpha_bar_reversed(t) / (2.0 * std::sqrt(alpha_bar_reversed(t)));
}

ScheduleSlice VarianceSchedule::at(double t) const {
  ScheduleSlice slice;
  slice.alpha_bar = alpha_bar_reversed(t);
  slice.complement = std::max(1.0 - slice.alpha_bar, clamp_eps_);
  slice.d_alpha_bar = d_alpha_bar_reversed(t);
  return slice;
}

}  // namespace paflow
