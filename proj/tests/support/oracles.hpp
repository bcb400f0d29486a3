#pragma once

// Independent reference computations used by the unit and acceptance tests.
// Nothing here calls into the library code it is used to check.

#include "paflow/common.hpp"

#include <functional>
#include <set>
#include <utility>
#include <vector>

namespace oracle {

using paflow::Index;
using paflow::Matrix;

double central_difference(const std::function<double(double)>& f, double x, double h);

/// Two-sided p-value of the one-sample Kolmogorov-Smirnov test against N(0, 1).
double ks_standard_normal_pvalue(std::vector<double> samples);

struct Correlation {
  double r = 0.0;
  double p_value = 1.0;
};

/// Pearson correlation with a two-sided p-value from the t distribution.
Correlation pearson(const std::vector<double>& x, const std::vector<double>& y);

/// Edge set {(src, dst)} where each dst connects to its k nearest other
/// nodes, ties broken by lower index, found by sorting all pairs.
std::set<std::pair<int, int>> brute_force_knn(const Matrix& coords, int k);

struct MeanStats {
  double mean = 0.0;
  double std_error = 0.0;
  std::size_t n = 0;
};

MeanStats mean_stats(const std::vector<double>& values);

/// One-sided Welch test that mean(a) > mean(b); returns the p-value.
double welch_greater_pvalue(const std::vector<double>& a, const std::vector<double>& b);

/// Two-sided Student t quantile for the given confidence and degrees of freedom.
double t_quantile(double confidence, double dof);

}  // namespace oracle
