#include "paflow/eval.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <sstream>

namespace paflow {

double score_molecule(const EgnnParams& params, const PocketCloud& pocket, const LigandState& ligand) {
  require(ligand.size() >= 1, "score_molecule: empty ligand");
  const CenteredComplex cc = shift_to_protein_com(pocket, ligand.coords);
  const EgnnInput input{cc.pocket.coords, cc.pocket.features(), cc.ligand_coords, ligand.types_onehot, 1.0};
  return forward(params, input).y_hat;
}

double pocket_radius(const PocketCloud& pocket) {
  require(pocket.size() >= 1, "pocket_radius: empty pocket");
  const Eigen::RowVector3d c = pocket.coords.colwise().mean();
  return (pocket.coords.rowwise() - c).rowwise().norm().mean();
}

double in_pocket_fraction(const PocketCloud& pocket, const LigandState& ligand, double margin) {
  if (ligand.size() == 0) return 0.0;
  const Eigen::RowVector3d c = pocket.coords.colwise().mean();
  const double limit = pocket_radius(pocket) + margin;
  const Vector d = (ligand.coords.rowwise() - c).rowwise().norm();
  return static_cast<double>((d.array() <= limit).count()) / static_cast<double>(ligand.size());
}

double type_diversity(const std::vector<LigandState>& molecules) {
  if (molecules.size() < 2) return 0.0;
  std::vector<Vector> hist;
  for (const auto& m : molecules) {
    Vector h = m.types_onehot.colwise().sum().transpose();
    hist.push_back(h / std::max(1.0, h.sum()));
  }
  double total = 0.0;
  int pairs = 0;
  for (std::size_t i = 0; i < hist.size(); ++i) {
    for (std::size_t j = i + 1; j < hist.size(); ++j) {
      require(hist[i].size() == hist[j].size(), "type_diversity: molecules use different type counts");
      total += 0.5 * (hist[i] - hist[j]).cwiseAbs().sum();
      ++pairs;
    }
  }
  return total / pairs;
}

double equivariance_error(const EgnnParams& params, const SizerParams* sizer, const PocketCloud& pocket,
                          const SamplerConfig& config, const Schedules& schedules, std::uint64_t rotation_seed) {
  Rng rng(rotation_seed);
  const Mat3 rot = random_rotation(rng);
  std::uniform_real_distribution<double> u(-10.0, 10.0);
  const Vec3 shift(u(rng), u(rng), u(rng));
  PocketCloud moved = pocket;
  moved.coords = transform_rows(pocket.coords, rot, shift);
  const SampleResult a = sample(params, sizer, pocket, config, schedules);
  const SampleResult b = sample(params, sizer, moved, config, schedules);
  if (a.ligand.size() != b.ligand.size()) return INFINITY;
  double err = (transform_rows(a.ligand.coords, rot, shift) - b.ligand.coords).cwiseAbs().maxCoeff();
  if (a.ligand.types_onehot != b.ligand.types_onehot) err += 1.0;
  return err;
}

namespace {

double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace

EvalReport evaluate_molecules(const EgnnParams& params, const std::vector<ComplexRecord>& references,
                              const std::vector<std::vector<LigandState>>& molecules) {
  require(references.size() == molecules.size(), "evaluate_molecules: one molecule list per pocket expected");
  const auto start = std::chrono::steady_clock::now();
  EvalReport report;
  std::vector<double> all_y;
  double in_pocket = 0.0, size_err = 0.0, diversity = 0.0;
  int pockets_with_molecules = 0;
  for (std::size_t p = 0; p < references.size(); ++p) {
    const auto& mols = molecules[p];
    if (mols.empty()) continue;
    PocketMetrics m;
    m.pocket = static_cast<int>(p);
    m.molecules = static_cast<int>(mols.size());
    m.reference_atoms = static_cast<int>(references[p].ligand.size());
    std::vector<double> ys;
    for (const auto& mol : mols) {
      const double y = score_molecule(params, references[p].pocket, mol);
      ys.push_back(y);
      all_y.push_back(y);
      m.mean_atoms += static_cast<double>(mol.size());
      m.in_pocket_fraction += in_pocket_fraction(references[p].pocket, mol);
      m.size_match_error += std::abs(static_cast<double>(mol.size()) - m.reference_atoms);
    }
    const double n = static_cast<double>(mols.size());
    m.mean_atoms /= n;
    m.in_pocket_fraction /= n;
    m.size_match_error /= n;
    for (double y : ys) m.mean_y_hat += y / n;
    m.median_y_hat = median(ys);
    m.type_diversity = type_diversity(mols);
    in_pocket += m.in_pocket_fraction * n;
    size_err += m.size_match_error * n;
    diversity += m.type_diversity;
    ++pockets_with_molecules;
    report.molecules += m.molecules;
    report.pockets.push_back(m);
  }
  require(report.molecules > 0, "evaluate_molecules: no molecules to evaluate");
  for (double y : all_y) report.mean_y_hat += y / static_cast<double>(all_y.size());
  report.median_y_hat = median(all_y);
  report.in_pocket_fraction = in_pocket / report.molecules;
  report.size_match_error = size_err / report.molecules;
  report.type_diversity = diversity / pockets_with_molecules;
  report.runtime_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return report;
}

std::string format_report(const EvalReport& r, const std::string& config_text) {
  std::ostringstream out;
  char buf[256];
  out << "paflow evaluation\n";
  std::snprintf(buf, sizeof buf, "  molecules            %d over %zu pockets\n", r.molecules, r.pockets.size());
  out << buf;
  std::snprintf(buf, sizeof buf, "  affinity score       mean %.4f  median %.4f\n", r.mean_y_hat, r.median_y_hat);
  out << buf;
  std::snprintf(buf, sizeof buf, "  in-pocket fraction   %.4f\n", r.in_pocket_fraction);
  out << buf;
  std::snprintf(buf, sizeof buf, "  size-match error     %.4f atoms\n", r.size_match_error);
  out << buf;
  std::snprintf(buf, sizeof buf, "  type diversity       %.4f\n", r.type_diversity);
  out << buf;
  std::snprintf(buf, sizeof buf, "  equivariance error   %.3e\n", r.equivariance_error);
  out << buf;
  if (r.sampling_seconds_per_100 >= 0) {
    std::snprintf(buf, sizeof buf, "  sampling time        %.2f s per 100 molecules\n", r.sampling_seconds_per_100);
    out << buf;
  }
  out << "  per pocket:\n";
  for (const auto& p : r.pockets) {
    std::snprintf(buf, sizeof buf, "    pocket %3d  n=%-3d atoms %.1f (ref %d)  y %.4f  in-pocket %.3f  diversity %.3f\n",
                  p.pocket, p.molecules, p.mean_atoms, p.reference_atoms, p.mean_y_hat, p.in_pocket_fraction,
                  p.type_diversity);
    out << buf;
  }

  out << "\n# machine-readable\n";
  auto kv = [&](const std::string& key, double v) {
    std::snprintf(buf, sizeof buf, "%s=%.9g\n", key.c_str(), v);
    out << buf;
  };
  kv("molecules", r.molecules);
  kv("pockets", static_cast<double>(r.pockets.size()));
  kv("mean_y_hat", r.mean_y_hat);
  kv("median_y_hat", r.median_y_hat);
  kv("in_pocket_fraction", r.in_pocket_fraction);
  kv("size_match_error", r.size_match_error);
  kv("type_diversity", r.type_diversity);
  kv("equivariance_error", r.equivariance_error);
  kv("sampling_seconds_per_100", r.sampling_seconds_per_100);
  kv("runtime_seconds", r.runtime_seconds);
  for (const auto& p : r.pockets) {
    const std::string k = "pocket." + std::to_string(p.pocket) + ".";
    kv(k + "molecules", p.molecules);
    kv(k + "mean_y_hat", p.mean_y_hat);
    kv(k + "median_y_hat", p.median_y_hat);
    kv(k + "in_pocket_fraction", p.in_pocket_fraction);
    kv(k + "size_match_error", p.size_match_error);
    kv(k + "type_diversity", p.type_diversity);
  }
  std::istringstream cfg(config_text);
  std::string line;
  while (std::getline(cfg, line)) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    auto trim = [](std::string s) {
      const auto b = s.find_first_not_of(" \t");
      const auto e = s.find_last_not_of(" \t");
      return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    };
    out << "config." << trim(line.substr(0, eq)) << "=" << trim(line.substr(eq + 1)) << "\n";
  }
  return out.str();
}

}  // namespace paflow
