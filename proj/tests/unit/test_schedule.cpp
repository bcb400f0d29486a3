#include "paflow/schedule.hpp"

#include "oracles.hpp"
#include "paflow/common.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <random>

using namespace paflow;

namespace {

VarianceSchedule cosine_default() { return VarianceSchedule::build(ScheduleParams::type_default()); }
VarianceSchedule sigmoid_default() { return VarianceSchedule::build(ScheduleParams::coordinate_default()); }

// A time whose +-h stencil stays inside one interpolation cell.
bool stencil_in_one_cell(double s, double h, int n) {
  return std::floor((s - h) * n) == std::floor((s + h) * n);
}

}  // namespace

TEST(Schedule, CosineEndpoints) {
  const auto sched = cosine_default();
  EXPECT_DOUBLE_EQ(sched.alpha_bar_at(0.0), 1.0);
  EXPECT_DOUBLE_EQ(sched.alpha_bar_at(1.0), sched.clamp_eps());
}

TEST(Schedule, DefaultsStartNearOne) {
  EXPECT_GE(cosine_default().alpha_bar_at(0.0), 1.0 - 1e-3);
  EXPECT_GE(sigmoid_default().alpha_bar_at(0.0), 1.0 - 1e-3);
  EXPECT_GE(VarianceSchedule::build(ScheduleParams::literal_coordinates()).alpha_bar_at(0.0), 1.0 - 1e-3);
}

TEST(Schedule, ScaledSigmoidReachesPrior) {
  EXPECT_LE(sigmoid_default().alpha_bar_at(1.0), 1e-3);
}

TEST(Schedule, TablesStrictlyDecreasingWithinBounds) {
  for (const auto& params :
       {ScheduleParams::coordinate_default(), ScheduleParams::type_default(), ScheduleParams::literal_coordinates()}) {
    const auto sched = VarianceSchedule::build(params);
    const auto table = sched.table();
    ASSERT_EQ(static_cast<int>(table.size()), params.grid_size + 1);
    for (std::size_t i = 0; i < table.size(); ++i) {
      EXPECT_GE(table[i], sched.clamp_eps());
      EXPECT_LE(table[i], 1.0);
      if (i > 0) EXPECT_LT(table[i], table[i - 1]) << "index " << i << " kind " << to_string(params.kind);
    }
  }
}

TEST(Schedule, SigmoidTableMatchesDirectProduct) {
  ScheduleParams p = ScheduleParams::literal_coordinates();
  p.grid_size = 10;
  const auto sched = VarianceSchedule::build(p);
  double prod = 1.0;
  for (int i = 1; i <= 10; ++i) {
    const double u = -6.0 + 12.0 * (i - 1) / 9.0;
    const double beta = 1e-7 + (2e-3 - 1e-7) / (1.0 + std::exp(-u));
    prod *= 1.0 - beta;
    const double expected = p.clamp_eps + (1.0 - p.clamp_eps) * prod;
    EXPECT_NEAR(sched.table()[static_cast<std::size_t>(i)], expected, 1e-15);
  }
}

TEST(Schedule, InterpolationAtNodesAndMidpoints) {
  const auto sched = cosine_default();
  const auto table = sched.table();
  const int n = sched.grid_size();
  for (int i : {0, 1, 17, 500, 999}) {
    EXPECT_EQ(sched.alpha_bar_at(static_cast<double>(i) / n), table[static_cast<std::size_t>(i)]);
    const double mid = (i + 0.5) / n;
    EXPECT_NEAR(sched.alpha_bar_at(mid), 0.5 * (table[static_cast<std::size_t>(i)] + table[static_cast<std::size_t>(i) + 1]),
                1e-14);
  }
}

TEST(Schedule, RejectsOutOfRangeTimes) {
  const auto sched = cosine_default();
  EXPECT_THROW((void)sched.alpha_bar_at(-0.01), ContractError);
  EXPECT_THROW((void)sched.alpha_bar_at(1.01), ContractError);
  EXPECT_THROW((void)sched.d_alpha_bar_reversed(1.5), ContractError);
  EXPECT_THROW((void)sched.d_alpha_bar_reversed(-1e-9), ContractError);
}

TEST(Schedule, RejectsInvertedBetaLimits) {
  ScheduleParams p;
  p.beta_lo = 1e-3;
  p.beta_hi = 1e-4;
  try {
    (void)VarianceSchedule::build(p);
    FAIL() << "expected ContractError";
  } catch (const ContractError& e) {
    EXPECT_NE(std::string(e.what()).find("beta_lo"), std::string::npos);
  }
}

TEST(Schedule, RejectsBadParameters) {
  ScheduleParams p;
  p.grid_size = 1;
  EXPECT_THROW((void)VarianceSchedule::build(p), ContractError);
  p = ScheduleParams::type_default();
  p.s_offset = 0.0;
  EXPECT_THROW((void)VarianceSchedule::build(p), ContractError);
  p.s_offset = 1.0;
  EXPECT_THROW((void)VarianceSchedule::build(p), ContractError);
  p = ScheduleParams{};
  p.beta_scale = 600.0;  // scaled beta_hi > 1 would push alpha_bar negative
  EXPECT_THROW((void)VarianceSchedule::build(p), ContractError);
  EXPECT_THROW(parse_schedule_kind("linear"), ConfigError);
}

TEST(Schedule, DerivativeMatchesFiniteDifferences) {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(0.001, 0.999);
  const double h = 1e-6;
  for (const auto& sched : {cosine_default(), sigmoid_default()}) {
    int checked = 0;
    while (checked < 100) {
      const double t = u(rng);
      if (!stencil_in_one_cell(1.0 - t, h, sched.grid_size())) continue;
      const double fd = oracle::central_difference([&](double tt) { return sched.alpha_bar_at(1.0 - tt); }, t, h);
      const double analytic = sched.d_alpha_bar_reversed(t);
      EXPECT_NEAR(analytic, fd, 1e-4 * std::abs(fd)) << "t=" << t;
      const double fd_sqrt =
          oracle::central_difference([&](double tt) { return std::sqrt(sched.alpha_bar_at(1.0 - tt)); }, t, h);
      EXPECT_NEAR(sched.d_sqrt_alpha_bar_reversed(t), fd_sqrt, 1e-4 * std::abs(fd_sqrt));
      ++checked;
    }
  }
}

TEST(Schedule, FlatTableHasZeroDerivative) {
  const auto sched = VarianceSchedule::from_table(std::vector<double>(11, 0.5));
  for (double t : {0.0, 0.13, 0.5, 0.77, 1.0}) EXPECT_EQ(sched.d_alpha_bar_reversed(t), 0.0);
}

TEST(Schedule, DerivativePositiveInside) {
  EXPECT_GT(cosine_default().d_alpha_bar_reversed(0.5), 0.0);
  EXPECT_GT(sigmoid_default().d_alpha_bar_reversed(0.5), 0.0);
}

TEST(Schedule, MonotoneInFlowTime) {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (const auto& sched : {cosine_default(), sigmoid_default()}) {
    for (int i = 0; i < 200; ++i) {
      double t1 = u(rng), t2 = u(rng);
      if (t1 > t2) std::swap(t1, t2);
      // Strict decrease of the table gives strict increase whenever the two
      // times are not inside the same flat-free cell at identical positions.
      if (t2 - t1 < 1e-12) continue;
      EXPECT_LT(sched.alpha_bar_reversed(t1), sched.alpha_bar_reversed(t2));
    }
  }
}

TEST(Schedule, ClampSafety) {
  for (const auto& sched : {cosine_default(), sigmoid_default()}) {
    for (int i = 0; i <= 2000; ++i) {
      const double t = i / 2000.0;
      const auto slice = sched.at(t);
      EXPECT_TRUE(std::isfinite(1.0 / slice.complement)) << t;
      EXPECT_TRUE(std::isfinite(1.0 / slice.alpha_bar)) << t;
      EXPECT_GT(slice.complement, 0.0);
      EXPECT_TRUE(std::isfinite(slice.d_sqrt_alpha_bar()));
    }
  }
}

TEST(Schedule, SliceAgreesWithAccessors) {
  const auto sched = sigmoid_default();
  const auto slice = sched.at(0.3);
  EXPECT_EQ(slice.alpha_bar, sched.alpha_bar_reversed(0.3));
  EXPECT_EQ(slice.d_alpha_bar, sched.d_alpha_bar_reversed(0.3));
  EXPECT_DOUBLE_EQ(slice.d_sqrt_alpha_bar(), sched.d_sqrt_alpha_bar_reversed(0.3));
}
