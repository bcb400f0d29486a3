#include "paflow/sampler.hpp"

#include "paflow/flowpath.hpp"

#include <cmath>

namespace paflow {

namespace {

constexpr std::uint64_t kInitStream = 0x5A1;
constexpr std::uint64_t kGumbelStream = 0x5A2;
constexpr std::uint64_t kFreshGumbelStream = 0x5A3;
constexpr std::uint64_t kSizerStream = 0x5A4;
constexpr std::uint64_t kFinalStream = 0x5A5;

Matrix argmax_rows(const Matrix& c) {
  Matrix out = Matrix::Zero(c.rows(), c.cols());
  for (Index i = 0; i < c.rows(); ++i) {
    Index best = 0;
    c.row(i).maxCoeff(&best);
    out(i, best) = 1.0;
  }
  return out;
}

LigandState shifted(const LigandState& s, const Vec3& offset) {
  LigandState out = s;
  out.coords.rowwise() -= offset.transpose();
  return out;
}

}  // namespace

void SamplerConfig::validate() const {
  require(steps >= 1, "sampler: steps must be >= 1");
  require(gamma >= 0 && std::isfinite(gamma), "sampler: gamma must be finite and nonnegative");
  require(delta >= 0 && std::isfinite(delta), "sampler: delta must be finite and nonnegative");
  require(n_atoms >= 0, "sampler: n_atoms must be nonnegative");
}

Schedules Schedules::defaults() {
  return {VarianceSchedule::build(ScheduleParams::coordinate_default()),
          VarianceSchedule::build(ScheduleParams::type_default())};
}

LigandState init_state(const PocketCloud& centered_pocket, int n_atoms, std::uint64_t seed, int type_count,
                       Matrix* gumbel) {
  require(n_atoms >= 1, "init_state: n_atoms must be >= 1");
  require(type_count >= 2, "init_state: need at least two atom types");
  require(centered_pocket.size() >= 1, "init_state: empty pocket");
  Rng rng(mix_seed(seed, kInitStream));
  const Mat3 frame = canonical_frame(centered_pocket.coords);
  LigandState s;
  s.coords = standard_normal(n_atoms, 3, rng) * frame.transpose();
  s.type_probs = Matrix::Constant(n_atoms, type_count, 1.0 / type_count);
  Rng grng(mix_seed(seed, kGumbelStream));
  Matrix g = gumbel_noise(n_atoms, type_count, grng);
  s.types_onehot = gumbel_argmax(s.type_probs, g);
  s.t = 0.0;
  if (gumbel) *gumbel = std::move(g);
  return s;
}

LigandState euler_step(const LigandState& state, const EgnnOutput& net, const Matrix& grad_logp,
                       const Schedules& schedules, const GuidanceConfig& guidance, double dt, const Matrix& gumbel,
                       int step_index) {
  require(dt >= 0, "euler_step: dt must be nonnegative");
  require(net.x_hat1.rows() == state.size() && net.a_hat1.rows() == state.size() &&
              net.a_hat1.cols() == state.type_count(),
          "euler_step: network outputs do not match the state");
  LigandState next = state;
  if (dt == 0) return next;

  const ScheduleSlice xs = schedules.coords.at(state.t);
  const Matrix v = target_vf_coords_with(state.coords, net.x_hat1, xs);
  const double gamma = guidance.effective_gamma();
  const Matrix field = gamma == 0 ? v : guided_coordinate_field_with(v, grad_logp, xs, gamma);
  next.coords = state.coords + field * dt;

  const ScheduleSlice ts = schedules.types.at(state.t);
  next.type_probs = state.type_probs + target_vf_types_with(net.a_hat1, ts.d_alpha_bar) * dt;
  if (!next.coords.allFinite() || !next.type_probs.allFinite()) {
    throw NumericError("euler_step: non-finite update at step " + std::to_string(step_index));
  }
  next.type_probs = next.type_probs.cwiseMax(0.0);
  for (Index i = 0; i < next.type_probs.rows(); ++i) {
    const double total = next.type_probs.row(i).sum();
    if (total > 0) {
      next.type_probs.row(i) /= total;
    } else {
      next.type_probs.row(i).setConstant(1.0 / next.type_probs.cols());
    }
  }
  next.types_onehot = gumbel_argmax(next.type_probs, gumbel);
  next.t = state.t + dt;
  return next;
}

SampleResult sample(const EgnnParams& params, const SizerParams* sizer, const PocketCloud& pocket,
                    const SamplerConfig& config, const Schedules& schedules) {
  config.validate();
  params.validate();
  require(pocket.size() >= 1, "sample: empty pocket");

  SampleResult result;
  if (config.n_atoms > 0) {
    result.n_atoms = config.n_atoms;
  } else {
    require(sizer != nullptr, "sample: no atom count given and no sizer available");
    result.n_atoms =
        predict_atom_count(*sizer, pocket_descriptors(pocket), config.delta, mix_seed(config.seed, kSizerStream));
  }

  const CenteredComplex centered = shift_to_protein_com(pocket, Matrix(0, 3));
  const Matrix features = centered.pocket.features();
  const int k = params.config.type_count;
  Matrix gumbel;
  LigandState state = init_state(centered.pocket, result.n_atoms, config.seed, k, &gumbel);
  GuidanceConfig guidance{config.gamma, config.gamma > 0};
  const double dt = 1.0 / config.steps;
  if (config.record_trajectory) result.trajectory.push_back(shifted(state, centered.offset));

  for (int step = 0; step < config.steps; ++step) {
    state.t = static_cast<double>(step) / config.steps;
    const EgnnInput input{centered.pocket.coords, features, state.coords, state.types_onehot, state.t};
    EgnnOutput net;
    Matrix grad;
    if (guidance.effective_gamma() > 0) {
      GuidedEvaluation g = forward_with_affinity_gradient(params, input);
      net = std::move(g.output);
      grad = std::move(g.grad_logp);
    } else {
      net = forward(params, input);
    }
    if (config.fresh_type_noise) {
      Rng grng(mix_seed(config.seed, kFreshGumbelStream, static_cast<std::uint64_t>(step)));
      gumbel = gumbel_noise(state.size(), k, grng);
    }
    state = euler_step(state, net, grad, schedules, guidance, dt, gumbel, step);
    if (config.record_trajectory) result.trajectory.push_back(shifted(state, centered.offset));
  }
  state.t = 1.0;
  if (config.stochastic_final) {
    state.types_onehot = gumbel_sample_types(state.type_probs, mix_seed(config.seed, kFinalStream));
  } else {
    state.types_onehot = argmax_rows(state.type_probs);
  }
  const EgnnInput final_input{centered.pocket.coords, features, state.coords, state.types_onehot, 1.0};
  result.final_y_hat = forward(params, final_input).y_hat;
  result.ligand = shifted(state, centered.offset);
  return result;
}

}  // namespace paflow
