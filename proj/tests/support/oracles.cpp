#include "oracles.hpp"

#include <boost/math/distributions/students_t.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>

namespace oracle {

double central_difference(const std::function<double(double)>& f, double x, double h) {
  return (f(x + h) - f(x - h)) / (2.0 * h);
}

namespace {

double kolmogorov_survival(double lambda) {
  if (lambda < 1e-3) return 1.0;
  double sum = 0.0;
  for (int k = 1; k <= 200; ++k) {
    const double term = std::exp(-2.0 * k * k * lambda * lambda);
    sum += (k % 2 == 1 ? 2.0 : -2.0) * term;
    if (term < 1e-16) break;
  }
  return std::clamp(sum, 0.0, 1.0);
}

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

}  // namespace

double ks_standard_normal_pvalue(std::vector<double> samples) {
  std::sort(samples.begin(), samples.end());
  const auto n = static_cast<double>(samples.size());
  double d = 0.0;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const double cdf = normal_cdf(samples[i]);
    d = std::max({d, cdf - static_cast<double>(i) / n, static_cast<double>(i + 1) / n - cdf});
  }
  const double sqrt_n = std::sqrt(n);
  return kolmogorov_survival((sqrt_n + 0.12 + 0.11 / sqrt_n) * d);
}

Correlation pearson(const std::vector<double>& x, const std::vector<double>& y) {
  const auto n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  Correlation c;
  c.r = sxy / std::sqrt(sxx * syy);
  const double dof = n - 2.0;
  const double r2 = std::min(c.r * c.r, 1.0 - 1e-16);
  const double t = std::abs(c.r) * std::sqrt(dof / (1.0 - r2));
  boost::math::students_t dist(dof);
  c.p_value = 2.0 * boost::math::cdf(boost::math::complement(dist, t));
  return c;
}

std::set<std::pair<int, int>> brute_force_knn(const Matrix& coords, int k) {
  std::set<std::pair<int, int>> edges;
  const auto n = static_cast<int>(coords.rows());
  for (int i = 0; i < n; ++i) {
    std::vector<std::pair<double, int>> all;
    for (int j = 0; j < n; ++j) {
      if (j != i) all.emplace_back((coords.row(i) - coords.row(j)).squaredNorm(), j);
    }
    std::sort(all.begin(), all.end());
    for (int m = 0; m < std::min<int>(k, static_cast<int>(all.size())); ++m) edges.emplace(all[m].second, i);
  }
  return edges;
}

MeanStats mean_stats(const std::vector<double>& values) {
  MeanStats s;
  s.n = values.size();
  const auto n = static_cast<double>(values.size());
  s.mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
  double ss = 0.0;
  for (double v : values) ss += (v - s.mean) * (v - s.mean);
  s.std_error = values.size() > 1 ? std::sqrt(ss / (n - 1.0) / n) : 0.0;
  return s;
}

double welch_greater_pvalue(const std::vector<double>& a, const std::vector<double>& b) {
  const MeanStats sa = mean_stats(a);
  const MeanStats sb = mean_stats(b);
  const double va = sa.std_error * sa.std_error;
  const double vb = sb.std_error * sb.std_error;
  const double se = std::sqrt(va + vb);
  if (se == 0.0) return sa.mean > sb.mean ? 0.0 : 1.0;
  const double t = (sa.mean - sb.mean) / se;
  const double dof = (va + vb) * (va + vb) /
                     (va * va / (static_cast<double>(sa.n) - 1.0) + vb * vb / (static_cast<double>(sb.n) - 1.0));
  boost::math::students_t dist(std::max(dof, 1.0));
  return boost::math::cdf(boost::math::complement(dist, t));
}

double t_quantile(double confidence, double dof) {
  boost::math::students_t dist(dof);
  return boost::math::quantile(dist, 0.5 + confidence / 2.0);
}

}  // namespace oracle
