#include "paflow/optim.hpp"

#include <algorithm>
#include <cmath>

namespace paflow {

AdamState AdamState::zeros_like(const std::vector<Matrix>& params) {
  AdamState s;
  for (const auto& p : params) {
    s.m.push_back(Matrix::Zero(p.rows(), p.cols()));
    s.v.push_back(Matrix::Zero(p.rows(), p.cols()));
  }
  return s;
}

void adam_update(std::vector<Matrix>& params, const std::vector<Matrix>& grads, AdamState& state,
                 const AdamConfig& config) {
  require(params.size() == grads.size() && params.size() == state.m.size() && params.size() == state.v.size(),
          "adam_update: parameter, gradient and moment counts differ");
  require(config.lr > 0 && config.beta1 >= 0 && config.beta1 < 1 && config.beta2 >= 0 && config.beta2 < 1,
          "adam_update: invalid hyperparameters");
  ++state.step;
  const double c1 = 1.0 - std::pow(config.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(config.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    require(grads[i].rows() == params[i].rows() && grads[i].cols() == params[i].cols(),
            "adam_update: gradient shape mismatch at tensor " + std::to_string(i));
    state.m[i] = config.beta1 * state.m[i] + (1.0 - config.beta1) * grads[i];
    state.v[i] = config.beta2 * state.v[i] + (1.0 - config.beta2) * grads[i].cwiseProduct(grads[i]);
    params[i].array() -= config.lr * (state.m[i].array() / c1) / ((state.v[i].array() / c2).sqrt() + config.eps);
  }
}

double global_norm(const std::vector<Matrix>& grads) {
  double sq = 0.0;
  for (const auto& g : grads) sq += g.squaredNorm();
  return std::sqrt(sq);
}

double clip_global_norm(std::vector<Matrix>& grads, double max_norm) {
  const double norm = global_norm(grads);
  if (!std::isfinite(norm)) throw NumericError("clip_global_norm: non-finite gradient norm");
  if (max_norm > 0 && norm > max_norm) {
    const double s = max_norm / norm;
    for (auto& g : grads) g *= s;
  }
  return norm;
}

double PlateauDecay::observe(double loss, double lr) {
  if (!has_best || loss < best) {
    best = loss;
    has_best = true;
    stale = 0;
    return lr;
  }
  if (++stale >= patience) {
    stale = 0;
    return std::max(min_lr, lr * factor);
  }
  return lr;
}

}  // namespace paflow
