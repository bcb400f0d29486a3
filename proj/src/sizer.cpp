#include "paflow/sizer.hpp"

#include "paflow/diffcore.hpp"
#include "paflow/optim.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <utility>

namespace paflow {

using diff::Var;

// ---------------------------------------------------------------- hull

bool ConvexHull::contains(const Vec3& p, double tol) const {
  if (degenerate) return false;
  for (std::size_t f = 0; f < normals.size(); ++f) {
    if (normals[f].dot(p) - offsets[f] > tol) return false;
  }
  return true;
}

namespace {

struct Facet {
  int a, b, c;
  Vec3 normal;
  double offset;
  bool alive = true;
};

Facet make_facet(const Matrix& pts, int a, int b, int c) {
  const Vec3 pa = pts.row(a).transpose();
  const Vec3 pb = pts.row(b).transpose();
  const Vec3 pc = pts.row(c).transpose();
  Vec3 n = (pb - pa).cross(pc - pa);
  n.normalize();
  return Facet{a, b, c, n, n.dot(pa), true};
}

}  // namespace

ConvexHull convex_hull(const Matrix& points) {
  require(points.cols() == 3, "convex_hull: points must be N x 3");
  ConvexHull hull;
  const Index n = points.rows();
  if (n < 4) return hull;

  const Vec3 lo = points.colwise().minCoeff().transpose();
  const Vec3 hi = points.colwise().maxCoeff().transpose();
  const double scale = std::max((hi - lo).norm(), 1e-12);
  const double eps = 1e-10 * scale;
  auto row = [&](Index i) -> Vec3 { return points.row(i).transpose(); };

  // Initial tetrahedron from extreme points.
  int i0 = 0, i1 = 0, i2 = 0, i3 = 0;
  double best = -1;
  for (Index i = 1; i < n; ++i) {
    const double d = (row(i) - row(i0)).squaredNorm();
    if (d > best) best = d, i1 = static_cast<int>(i);
  }
  if (best <= eps * eps) return hull;
  const Vec3 axis = (row(i1) - row(i0)).normalized();
  best = -1;
  for (Index i = 0; i < n; ++i) {
    const Vec3 r = row(i) - row(i0);
    const double d = (r - axis * axis.dot(r)).norm();
    if (d > best) best = d, i2 = static_cast<int>(i);
  }
  if (best <= eps) return hull;
  const Vec3 plane = (row(i1) - row(i0)).cross(row(i2) - row(i0)).normalized();
  best = -1;
  for (Index i = 0; i < n; ++i) {
    const double d = std::abs(plane.dot(row(i) - row(i0)));
    if (d > best) best = d, i3 = static_cast<int>(i);
  }
  if (best <= eps) return hull;

  const Vec3 inner = (row(i0) + row(i1) + row(i2) + row(i3)) / 4.0;
  std::vector<Facet> facets;
  auto add_oriented = [&](int a, int b, int c) {
    Facet f = make_facet(points, a, b, c);
    if (f.normal.dot(inner) - f.offset > 0) f = make_facet(points, a, c, b);
    facets.push_back(f);
  };
  add_oriented(i0, i1, i2);
  add_oriented(i0, i1, i3);
  add_oriented(i0, i2, i3);
  add_oriented(i1, i2, i3);

  std::vector<char> used(static_cast<std::size_t>(n), 0);
  for (int i : {i0, i1, i2, i3}) used[static_cast<std::size_t>(i)] = 1;

  for (Index p = 0; p < n; ++p) {
    if (used[static_cast<std::size_t>(p)]) continue;
    const Vec3 q = row(p);
    std::vector<std::size_t> visible;
    for (std::size_t f = 0; f < facets.size(); ++f) {
      if (facets[f].alive && facets[f].normal.dot(q) - facets[f].offset > eps) visible.push_back(f);
    }
    if (visible.empty()) continue;
    std::map<std::pair<int, int>, int> edges;
    for (std::size_t f : visible) {
      const Facet& v = facets[f];
      edges[{v.a, v.b}]++;
      edges[{v.b, v.c}]++;
      edges[{v.c, v.a}]++;
    }
    for (std::size_t f : visible) facets[f].alive = false;
    for (const auto& [edge, count] : edges) {
      (void)count;
      if (edges.count({edge.second, edge.first})) continue;
      facets.push_back(make_facet(points, edge.first, edge.second, static_cast<int>(p)));
    }
  }

  hull.degenerate = false;
  for (const Facet& f : facets) {
    if (!f.alive) continue;
    hull.normals.push_back(f.normal);
    hull.offsets.push_back(f.offset);
  }
  return hull;
}

// ---------------------------------------------------------------- descriptors

double space_size(const Matrix& coords) {
  const Index n = coords.rows();
  if (n < 2) return 0.0;
  std::vector<double> d;
  d.reserve(static_cast<std::size_t>(n * (n - 1) / 2));
  for (Index i = 0; i < n; ++i) {
    for (Index j = i + 1; j < n; ++j) d.push_back((coords.row(i) - coords.row(j)).norm());
  }
  const std::size_t top = std::min<std::size_t>(10, d.size());
  std::partial_sort(d.begin(), d.begin() + static_cast<std::ptrdiff_t>(top), d.end(), std::greater<>());
  d.resize(top);
  std::sort(d.begin(), d.end());
  return top % 2 == 1 ? d[top / 2] : 0.5 * (d[top / 2 - 1] + d[top / 2]);
}

PocketDescriptors pocket_descriptors(const PocketCloud& pocket, double grid_step) {
  return pocket_descriptors(pocket.coords, grid_step);
}

PocketDescriptors pocket_descriptors(const Matrix& coords, double grid_step) {
  require(grid_step > 0, "pocket_descriptors: grid_step must be positive");
  require(coords.cols() == 3 && coords.rows() >= 1, "pocket_descriptors: need an N x 3 pocket with N >= 1");
  PocketDescriptors out;
  out.n_p = static_cast<double>(coords.rows());
  out.space_size = space_size(coords);

  // Grid in the canonical frame around the centroid so the proxy does not
  // depend on the pocket's orientation.
  Matrix local = coords.rowwise() - coords.colwise().mean();
  local = local * canonical_frame(local);
  const ConvexHull hull = convex_hull(local);
  if (hull.degenerate) {
    out.degenerate = true;
    return out;
  }

  const Vec3 lo = local.colwise().minCoeff().transpose();
  const Vec3 hi = local.colwise().maxCoeff().transpose();
  // Cell i along an axis has center (i + 0.5) * step; one padding cell each side.
  std::array<int, 3> first{}, count{};
  for (int a = 0; a < 3; ++a) {
    first[a] = static_cast<int>(std::floor(lo[a] / grid_step)) - 1;
    count[a] = static_cast<int>(std::ceil(hi[a] / grid_step)) + 1 - first[a] + 1;
  }
  const std::size_t cells = static_cast<std::size_t>(count[0]) * count[1] * count[2];
  auto flat = [&](int i, int j, int k) {
    return (static_cast<std::size_t>(i) * count[1] + j) * count[2] + k;
  };
  auto center = [&](int i, int j, int k) {
    return Vec3((first[0] + i + 0.5) * grid_step, (first[1] + j + 0.5) * grid_step, (first[2] + k + 0.5) * grid_step);
  };

  std::vector<int> neighbours(cells, 0);
  std::vector<char> clash(cells, 0);
  const double r_enc2 = kCavityEnclosureRadius * kCavityEnclosureRadius;
  const double r_clr2 = kCavityClearance * kCavityClearance;
  for (Index atom = 0; atom < local.rows(); ++atom) {
    const Vec3 p = local.row(atom).transpose();
    std::array<int, 3> lo_idx{}, hi_idx{};
    for (int a = 0; a < 3; ++a) {
      lo_idx[a] = std::max(0, static_cast<int>(std::floor((p[a] - kCavityEnclosureRadius) / grid_step)) - first[a] - 1);
      hi_idx[a] = std::min(count[a] - 1,
                           static_cast<int>(std::ceil((p[a] + kCavityEnclosureRadius) / grid_step)) - first[a] + 1);
    }
    for (int i = lo_idx[0]; i <= hi_idx[0]; ++i) {
      for (int j = lo_idx[1]; j <= hi_idx[1]; ++j) {
        for (int k = lo_idx[2]; k <= hi_idx[2]; ++k) {
          const double d2 = (center(i, j, k) - p).squaredNorm();
          if (d2 > r_enc2) continue;
          const std::size_t c = flat(i, j, k);
          ++neighbours[c];
          if (d2 < r_clr2) clash[c] = 1;
        }
      }
    }
  }

  std::vector<char> cavity(cells, 0);
  std::size_t cavity_count = 0;
  for (int i = 0; i < count[0]; ++i) {
    for (int j = 0; j < count[1]; ++j) {
      for (int k = 0; k < count[2]; ++k) {
        const std::size_t c = flat(i, j, k);
        if (clash[c] || neighbours[c] < kCavityEnclosureCount) continue;
        if (!hull.contains(center(i, j, k))) continue;
        cavity[c] = 1;
        ++cavity_count;
      }
    }
  }

  std::size_t faces = 0;
  for (int i = 0; i < count[0]; ++i) {
    for (int j = 0; j < count[1]; ++j) {
      for (int k = 0; k < count[2]; ++k) {
        if (!cavity[flat(i, j, k)]) continue;
        // Padding guarantees cavity cells are interior to the grid.
        faces += !cavity[flat(i - 1, j, k)] + !cavity[flat(i + 1, j, k)] + !cavity[flat(i, j - 1, k)] +
                 !cavity[flat(i, j + 1, k)] + !cavity[flat(i, j, k - 1)] + !cavity[flat(i, j, k + 1)];
      }
    }
  }
  out.volume = static_cast<double>(cavity_count) * grid_step * grid_step * grid_step;
  out.area = static_cast<double>(faces) * grid_step * grid_step;
  return out;
}

// ---------------------------------------------------------------- perceptron

namespace {

constexpr int kSizerLayers = 4;

std::vector<std::pair<Index, Index>> sizer_shapes(const std::array<int, 3>& hidden) {
  const std::array<Index, 5> dims = {4, hidden[0], hidden[1], hidden[2], 1};
  std::vector<std::pair<Index, Index>> s;
  for (int l = 0; l < kSizerLayers; ++l) {
    s.emplace_back(dims[l], dims[l + 1]);
    s.emplace_back(1, dims[l + 1]);
  }
  return s;
}

Matrix standardize(const SizerParams& params, const std::vector<const PocketDescriptors*>& rows) {
  Matrix x(static_cast<Index>(rows.size()), 4);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const auto v = rows[r]->as_array();
    for (int c = 0; c < 4; ++c) x(static_cast<Index>(r), c) = (v[c] - params.feature_mean[c]) / params.feature_std[c];
  }
  return x;
}

/// masks: one per hidden layer (rows x width, already scaled by 1/(1-p)), or
/// empty for inference.
Var mlp(diff::Tape& tape, const std::vector<Var>& w, Var x, const std::vector<Matrix>& masks) {
  Var h = x;
  for (int l = 0; l < kSizerLayers; ++l) {
    h = diff::add_row(diff::matmul(h, w[2 * l]), w[2 * l + 1]);
    if (l + 1 < kSizerLayers) {
      h = diff::shifted_softplus(h);
      if (!masks.empty()) h = diff::hadamard(h, tape.constant(masks[static_cast<std::size_t>(l)]));
    }
  }
  return h;
}

Matrix mlp_value(const SizerParams& params, const Matrix& x) {
  diff::Tape tape;
  std::vector<Var> w;
  for (const auto& m : params.tensors) w.push_back(tape.parameter(m, false));
  return mlp(tape, w, tape.constant(x), {}).value();
}

}  // namespace

SizerParams SizerParams::init(const SizerConfig& config, std::uint64_t seed) {
  require(config.dropout >= 0 && config.dropout < 1, "SizerParams: dropout must be in [0, 1)");
  require(config.delta >= 0, "SizerParams: delta must be nonnegative");
  SizerParams p;
  p.dropout = config.dropout;
  p.delta = config.delta;
  Rng rng(mix_seed(seed, 0x512E));
  for (const auto& [rows, cols] : sizer_shapes(config.hidden)) {
    if (rows == 1) {
      p.tensors.push_back(Matrix::Zero(1, cols));
    } else {
      p.tensors.push_back(standard_normal(rows, cols, rng) / std::sqrt(static_cast<double>(rows)));
    }
  }
  return p;
}

void SizerParams::validate() const {
  require(tensors.size() == 2 * kSizerLayers, "SizerParams: expected 8 tensors");
  require(tensors.front().rows() == 4 && tensors.back().cols() == 1, "SizerParams: input 4, output 1 expected");
  for (int l = 0; l < kSizerLayers; ++l) {
    const Matrix& w = tensors[2 * static_cast<std::size_t>(l)];
    const Matrix& b = tensors[2 * static_cast<std::size_t>(l) + 1];
    require(b.rows() == 1 && b.cols() == w.cols(), "SizerParams: bias shape mismatch at layer " + std::to_string(l));
    if (l > 0) {
      require(w.rows() == tensors[2 * static_cast<std::size_t>(l) - 2].cols(),
              "SizerParams: layer widths do not chain at layer " + std::to_string(l));
    }
  }
  require(n_min < n_max, "SizerParams: n_min must be below n_max");
  require(delta >= 0, "SizerParams: delta must be nonnegative");
  for (double s : feature_std) require(s > 0, "SizerParams: feature std must be positive");
}

double predict_normalized(const SizerParams& params, const PocketDescriptors& descriptors) {
  const auto v = descriptors.as_array();
  for (double x : v) require(std::isfinite(x), "predict_atom_count: descriptors must be finite");
  return mlp_value(params, standardize(params, {&descriptors}))(0, 0);
}

double noisy_normalized(const SizerParams& params, const PocketDescriptors& descriptors, double delta,
                        std::uint64_t seed) {
  require(delta >= 0, "predict_atom_count: delta must be nonnegative");
  const double base = predict_normalized(params, descriptors);
  if (delta == 0) return base;
  Rng rng(mix_seed(seed, 0x7A0));
  return base + delta * std::normal_distribution<double>(0.0, 1.0)(rng);
}

int predict_atom_count(const SizerParams& params, const PocketDescriptors& descriptors, double delta,
                       std::uint64_t seed) {
  const double n = noisy_normalized(params, descriptors, delta, seed);
  const double count = std::round(n * (params.n_max - params.n_min) + params.n_min);
  return static_cast<int>(std::clamp(count, 1.0, params.n_max));
}

SizerParams train_sizer(const std::vector<SizerSample>& dataset, int epochs, std::uint64_t seed,
                        const SizerConfig& config) {
  require(epochs >= 1, "train_sizer: epochs must be >= 1");
  require(dataset.size() >= 2, "train_sizer: need at least two samples");
  SizerParams params = SizerParams::init(config, seed);

  double lo = dataset.front().n_atoms, hi = lo;
  for (const auto& s : dataset) {
    lo = std::min(lo, static_cast<double>(s.n_atoms));
    hi = std::max(hi, static_cast<double>(s.n_atoms));
  }
  if (lo == hi) throw ContractError("train_sizer: all atom counts are equal; normalization is degenerate");
  params.n_min = lo;
  params.n_max = hi;

  // Seeded validation split.
  std::vector<std::size_t> order(dataset.size());
  std::iota(order.begin(), order.end(), 0);
  Rng split_rng(mix_seed(seed, 0x5B1));
  std::shuffle(order.begin(), order.end(), split_rng);
  std::size_t n_val = static_cast<std::size_t>(std::round(config.validation_fraction * dataset.size()));
  n_val = std::clamp<std::size_t>(n_val, 1, dataset.size() - 1);
  const std::vector<std::size_t> val(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_val));
  std::vector<std::size_t> train(order.begin() + static_cast<std::ptrdiff_t>(n_val), order.end());

  std::array<double, 4> sum{}, sq{};
  for (std::size_t i : train) {
    const auto v = dataset[i].descriptors.as_array();
    for (int c = 0; c < 4; ++c) sum[c] += v[c], sq[c] += v[c] * v[c];
  }
  const double nt = static_cast<double>(train.size());
  for (int c = 0; c < 4; ++c) {
    params.feature_mean[c] = sum[c] / nt;
    const double var = std::max(0.0, sq[c] / nt - params.feature_mean[c] * params.feature_mean[c]);
    params.feature_std[c] = var > 1e-24 ? std::sqrt(var) : 1.0;
  }

  auto batch_of = [&](const std::vector<std::size_t>& idx, std::size_t begin, std::size_t end) {
    std::vector<const PocketDescriptors*> rows;
    Matrix y(static_cast<Index>(end - begin), 1);
    for (std::size_t r = begin; r < end; ++r) {
      rows.push_back(&dataset[idx[r]].descriptors);
      y(static_cast<Index>(r - begin), 0) = (dataset[idx[r]].n_atoms - lo) / (hi - lo);
    }
    return std::make_pair(standardize(params, rows), y);
  };
  const auto [x_val, y_val] = batch_of(val, 0, val.size());
  auto validation_loss = [&](const SizerParams& p) { return (mlp_value(p, x_val) - y_val).squaredNorm() / y_val.rows(); };

  AdamState adam = AdamState::zeros_like(params.tensors);
  AdamConfig adam_cfg{config.lr, config.beta1, config.beta2, 1e-8};
  PlateauDecay decay{config.decay, config.patience, config.min_lr};
  Rng rng(mix_seed(seed, 0x5B2));
  const double keep = 1.0 - params.dropout;

  SizerParams best_params = params;
  double best_val = validation_loss(params);
  const std::size_t batch = static_cast<std::size_t>(std::max(1, config.batch_size));
  for (int epoch = 0; epoch < epochs; ++epoch) {
    std::shuffle(train.begin(), train.end(), rng);
    double epoch_loss = 0.0;
    for (std::size_t begin = 0; begin < train.size(); begin += batch) {
      const std::size_t end = std::min(train.size(), begin + batch);
      const auto [x, y] = batch_of(train, begin, end);
      std::vector<Matrix> masks;
      if (params.dropout > 0) {
        std::bernoulli_distribution bern(keep);
        for (int l = 0; l + 1 < kSizerLayers; ++l) {
          Matrix m(x.rows(), params.tensors[2 * static_cast<std::size_t>(l)].cols());
          for (Index i = 0; i < m.size(); ++i) m.data()[i] = bern(rng) ? 1.0 / keep : 0.0;
          masks.push_back(std::move(m));
        }
      }
      diff::Tape tape;
      std::vector<Var> w;
      for (const auto& m : params.tensors) w.push_back(tape.parameter(m, true));
      Var loss = diff::mean(diff::square(diff::sub(mlp(tape, w, tape.constant(x), masks), tape.constant(y))));
      tape.backward(loss);
      std::vector<Matrix> grads;
      for (const Var& v : w) grads.push_back(tape.grad(v));
      adam_update(params.tensors, grads, adam, adam_cfg);
      epoch_loss += loss.scalar() * static_cast<double>(end - begin);
    }
    params.train_loss.push_back(epoch_loss / nt);
    const double v = validation_loss(params);
    params.validation_loss.push_back(v);
    if (v < best_val) {
      best_val = v;
      best_params.tensors = params.tensors;
    }
    adam_cfg.lr = decay.observe(v, adam_cfg.lr);
  }

  params.tensors = best_params.tensors;
  const double mean_y = y_val.mean();
  const double ss_tot = (y_val.array() - mean_y).square().sum();
  const double ss_res = (mlp_value(params, x_val) - y_val).squaredNorm();
  params.validation_r2 = ss_tot > 0 ? 1.0 - ss_res / ss_tot : 0.0;
  return params;
}

NoiseBenefit noise_benefit_probe(const std::function<double(double)>& f, double n, double delta, int samples,
                                 std::uint64_t seed) {
  require(samples >= 2, "noise_benefit_probe: need at least two samples");
  require(delta >= 0, "noise_benefit_probe: delta must be nonnegative");
  Rng rng(mix_seed(seed, 0x0B5));
  std::normal_distribution<double> normal(0.0, 1.0);
  const double base = f(n);
  double mean = 0.0, m2 = 0.0;
  for (int i = 0; i < samples; ++i) {
    const double gain = f(n + delta * normal(rng)) - base;
    const double d = gain - mean;
    mean += d / (i + 1);
    m2 += d * (gain - mean);
  }
  NoiseBenefit out;
  out.estimate = mean;
  out.standard_error = std::sqrt(m2 / (samples - 1) / samples);
  const double h = 1e-4 * std::max(1.0, std::abs(n));
  const double second = (f(n + h) - 2.0 * base + f(n - h)) / (h * h);
  out.analytic = 0.5 * second * delta * delta;
  return out;
}

}  // namespace paflow
