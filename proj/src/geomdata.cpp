#include "paflow/geomdata.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <sstream>

namespace paflow {

int pocket_label(int element, int residue_class, bool backbone) {
  require(element >= 0 && element < kPocketElements, "pocket_label: element out of range");
  require(residue_class >= 0 && residue_class < kResidueClasses, "pocket_label: residue class out of range");
  return element + kPocketElements * (residue_class + kResidueClasses * (backbone ? 1 : 0));
}

int pocket_element(int label) { return label % kPocketElements; }

Matrix PocketCloud::features() const {
  Matrix f = Matrix::Zero(size(), kPocketFeatureDim);
  for (Index i = 0; i < size(); ++i) {
    const int label = labels[static_cast<std::size_t>(i)];
    const int element = label % kPocketElements;
    const int residue = (label / kPocketElements) % kResidueClasses;
    const int backbone = label / (kPocketElements * kResidueClasses);
    f(i, element) = 1.0;
    f(i, kPocketElements + residue) = 1.0;
    if (backbone != 0) f(i, kPocketElements + kResidueClasses) = 1.0;
  }
  return f;
}

Matrix one_hot(const std::vector<int>& labels, int classes) {
  Matrix m = Matrix::Zero(static_cast<Index>(labels.size()), classes);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    require(labels[i] >= 0 && labels[i] < classes, "one_hot: label out of range");
    m(static_cast<Index>(i), labels[i]) = 1.0;
  }
  return m;
}

std::vector<int> LigandState::labels() const {
  std::vector<int> out(static_cast<std::size_t>(size()));
  for (Index i = 0; i < size(); ++i) {
    Index arg = 0;
    types_onehot.row(i).maxCoeff(&arg);
    out[static_cast<std::size_t>(i)] = static_cast<int>(arg);
  }
  return out;
}

LigandState LigandState::from_labels(Matrix coords, const std::vector<int>& labels, int type_count) {
  require(coords.rows() == static_cast<Index>(labels.size()), "LigandState: one label per atom");
  LigandState s;
  s.coords = std::move(coords);
  s.types_onehot = one_hot(labels, type_count);
  s.type_probs = s.types_onehot;
  s.t = 1.0;
  return s;
}

CenteredComplex shift_to_protein_com(const PocketCloud& pocket, const Matrix& ligand_coords) {
  require(pocket.size() >= 1, "shift_to_protein_com: empty pocket");
  CenteredComplex out;
  out.offset = -pocket.coords.colwise().mean().transpose();
  out.pocket = pocket;
  out.pocket.coords.rowwise() += out.offset.transpose();
  out.ligand_coords = ligand_coords;
  if (out.ligand_coords.size() > 0) out.ligand_coords.rowwise() += out.offset.transpose();
  return out;
}

Mat3 canonical_frame(const Matrix& centered_coords) {
  require(centered_coords.cols() == 3, "canonical_frame: coordinates must be N x 3");
  if (centered_coords.rows() == 0) return Mat3::Identity();
  const Mat3 cov = centered_coords.transpose() * centered_coords;
  Eigen::SelfAdjointEigenSolver<Mat3> eig(cov);
  Mat3 frame = eig.eigenvectors();
  for (int axis = 0; axis < 3; ++axis) {
    const double third = (centered_coords * frame.col(axis)).array().cube().sum();
    if (third < 0) frame.col(axis) *= -1.0;
  }
  return frame;
}

const std::array<double, kRbfCount>& rbf_centers() {
  static const std::array<double, kRbfCount> centers = [] {
    std::array<double, kRbfCount> c{};
    for (int m = 0; m < kRbfCount; ++m) c[static_cast<std::size_t>(m)] = kRbfMax * m / (kRbfCount - 1);
    return c;
  }();
  return centers;
}

double rbf_sigma() { return kRbfMax / (kRbfCount - 1); }

std::array<double, kRbfCount> rbf_expand(double distance) {
  require(distance >= 0.0, "rbf_expand: distance must be nonnegative");
  std::array<double, kRbfCount> out{};
  const double sigma = rbf_sigma();
  for (std::size_t m = 0; m < out.size(); ++m) {
    const double diff = distance - rbf_centers()[m];
    out[m] = std::exp(-diff * diff / (2.0 * sigma * sigma));
  }
  return out;
}

KnnEdges knn_edges(const Matrix& protein_coords, const Matrix& ligand_coords, int k) {
  require(k >= 1, "build_knn_graph: k must be >= 1");
  require(protein_coords.cols() == 3 && (ligand_coords.size() == 0 || ligand_coords.cols() == 3),
          "build_knn_graph: coordinates must have 3 columns");
  require(protein_coords.allFinite() && ligand_coords.allFinite(), "build_knn_graph: non-finite coordinates");
  const Index np = protein_coords.rows();
  const Index n = np + ligand_coords.rows();
  Matrix all(n, 3);
  all.topRows(np) = protein_coords;
  if (n > np) all.bottomRows(n - np) = ligand_coords;

  KnnEdges edges;
  const auto per_node = static_cast<std::size_t>(std::min<Index>(k, n - 1));
  edges.src.reserve(static_cast<std::size_t>(n) * per_node);
  std::vector<std::pair<double, int>> cand(static_cast<std::size_t>(n > 0 ? n - 1 : 0));
  for (Index i = 0; i < n; ++i) {
    std::size_t c = 0;
    for (Index j = 0; j < n; ++j) {
      if (j == i) continue;
      cand[c++] = {(all.row(i) - all.row(j)).squaredNorm(), static_cast<int>(j)};
    }
    // Pair ordering compares distance, then index: ties go to the lower index.
    std::partial_sort(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(per_node), cand.end());
    const bool dst_ligand = i >= np;
    for (std::size_t m = 0; m < per_node; ++m) {
      const int j = cand[m].second;
      const bool src_ligand = j >= np;
      int type = 0;
      if (!src_ligand && !dst_ligand) type = protein_protein;
      else if (src_ligand && dst_ligand) type = ligand_ligand;
      else if (!src_ligand) type = protein_to_ligand;
      else type = ligand_to_protein;
      edges.src.push_back(j);
      edges.dst.push_back(static_cast<int>(i));
      edges.edge_type.push_back(type);
    }
  }
  return edges;
}

ComplexGraph build_knn_graph(const Matrix& protein_coords, const Matrix& ligand_coords, int k) {
  KnnEdges e = knn_edges(protein_coords, ligand_coords, k);
  ComplexGraph g;
  g.protein_count = protein_coords.rows();
  g.node_count = protein_coords.rows() + ligand_coords.rows();
  g.src = std::move(e.src);
  g.dst = std::move(e.dst);
  g.edge_type = std::move(e.edge_type);
  const auto edges = static_cast<Index>(g.src.size());
  g.distances.resize(edges, 1);
  g.edge_features = Matrix::Zero(edges, kRbfCount * kEdgeTypes);
  auto node = [&](int idx) -> Vec3 {
    return idx < g.protein_count ? Vec3(protein_coords.row(idx).transpose())
                                 : Vec3(ligand_coords.row(idx - g.protein_count).transpose());
  };
  for (Index e2 = 0; e2 < edges; ++e2) {
    const auto ei = static_cast<std::size_t>(e2);
    const double d = (node(g.dst[ei]) - node(g.src[ei])).norm();
    g.distances(e2, 0) = d;
    const auto r = rbf_expand(d);
    for (int m = 0; m < kRbfCount; ++m) g.edge_features(e2, g.edge_type[ei] * kRbfCount + m) = r[static_cast<std::size_t>(m)];
  }
  g.ligand_mask.assign(static_cast<std::size_t>(g.node_count), false);
  for (Index i = g.protein_count; i < g.node_count; ++i) g.ligand_mask[static_cast<std::size_t>(i)] = true;
  return g;
}

double quantize(double value) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.9g", value);
  return std::strtod(buf, nullptr);
}

// ---------------------------------------------------------------------------
// Synthetic data

namespace {

constexpr double kContactRadius = 3.5;
constexpr double kElementProbs[kPocketElements] = {0.5, 0.2, 0.25, 0.05};

// Ligand type preference given the pocket element composition (rows: types).
constexpr double kCompositionAffinity[kDefaultLigandTypes][kPocketElements] = {
    {1.5, 0.0, 0.0, 0.0},  {0.8, 0.6, 0.0, 0.0}, {0.0, 1.2, 0.4, 0.0}, {0.0, 0.0, 1.5, 0.0},
    {0.4, 0.0, 0.8, 0.0},  {0.0, 0.0, 0.0, 3.0}, {0.6, 0.6, 0.6, 0.0}, {0.2, 0.0, 0.0, 1.5},
};
// Ligand type preference given the element of the nearest pocket atom.
constexpr double kContactAffinity[kPocketElements][kDefaultLigandTypes] = {
    {1.0, 0.5, 0.0, 0.0, 0.2, 0.0, 0.3, 0.0},
    {0.0, 0.3, 1.0, 0.5, 0.0, 0.0, 0.2, 0.0},
    {0.0, 0.0, 0.5, 1.0, 0.6, 0.0, 0.2, 0.0},
    {0.0, 0.0, 0.0, 0.0, 0.0, 1.2, 0.0, 0.8},
};

int sample_categorical(const std::vector<double>& weights, Rng& rng) {
  std::discrete_distribution<int> d(weights.begin(), weights.end());
  return d(rng);
}

Vec3 random_unit(Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Vec3 v;
  do {
    v = Vec3(normal(rng), normal(rng), normal(rng));
  } while (v.norm() < 1e-12);
  return v.normalized();
}

Vec3 uniform_in_ball(double radius, Rng& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  return random_unit(rng) * radius * std::cbrt(u(rng));
}

ComplexRecord synthesize_record(Rng& rng, int type_count, double& true_volume) {
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);

  const double radius = 4.0 + 5.0 * uni(rng);
  const double area = 4.0 * std::numbers::pi * radius * radius;
  const int n_pocket =
      std::clamp(static_cast<int>(std::lround(0.12 * area * (0.85 + 0.3 * uni(rng)))), 40, 120);

  ComplexRecord rec;
  rec.pocket.coords.resize(n_pocket, 3);
  rec.pocket.labels.resize(static_cast<std::size_t>(n_pocket));
  std::vector<double> elem_w(std::begin(kElementProbs), std::end(kElementProbs));
  std::vector<double> composition(kPocketElements, 0.0);
  for (int i = 0; i < n_pocket; ++i) {
    const double r = radius + std::abs(0.5 * normal(rng));
    rec.pocket.coords.row(i) = (random_unit(rng) * r).transpose();
    const int element = sample_categorical(elem_w, rng);
    const int residue = static_cast<int>(uni(rng) * kResidueClasses) % kResidueClasses;
    const bool backbone = uni(rng) < 0.3;
    rec.pocket.labels[static_cast<std::size_t>(i)] = pocket_label(element, residue, backbone);
    composition[static_cast<std::size_t>(element)] += 1.0 / n_pocket;
  }

  const double inner = radius - 2.0;
  true_volume = 4.0 / 3.0 * std::numbers::pi * inner * inner * inner;
  const int n_ligand = std::clamp(static_cast<int>(std::lround(0.03 * true_volume + normal(rng))), 4, 40);

  // Random-walk chain inside a ball around the cavity center.
  const double rho = (radius - 1.5) * (0.4 + 0.6 * uni(rng));
  Matrix lig(n_ligand, 3);
  Vec3 cursor = uniform_in_ball(0.5 * rho, rng);
  for (int a = 0; a < n_ligand; ++a) {
    Vec3 placed = cursor;
    bool ok = a == 0;
    for (int attempt = 0; attempt < 100 && !ok; ++attempt) {
      const Vec3 cand = cursor + 1.5 * random_unit(rng);
      if (cand.norm() > rho) continue;
      bool clear = true;
      for (int b = 0; b < a && clear; ++b) clear = (lig.row(b).transpose() - cand).norm() >= 1.2;
      if (clear) {
        placed = cand;
        ok = true;
      }
    }
    if (!ok) placed = uniform_in_ball(rho, rng);
    lig.row(a) = placed.transpose();
    cursor = placed;
  }

  std::vector<int> lig_labels(static_cast<std::size_t>(n_ligand));
  int contacts = 0;
  for (int a = 0; a < n_ligand; ++a) {
    int nearest = 0;
    double best = 1e300;
    int close = 0;
    for (int i = 0; i < n_pocket; ++i) {
      const double d = (rec.pocket.coords.row(i) - lig.row(a)).norm();
      if (d < best) {
        best = d;
        nearest = i;
      }
      if (d <= kContactRadius) ++close;
    }
    if (close >= 3) ++contacts;
    const int near_elem = pocket_element(rec.pocket.labels[static_cast<std::size_t>(nearest)]);
    std::vector<double> w(static_cast<std::size_t>(type_count));
    for (int k = 0; k < type_count; ++k) {
      const int base = k % kDefaultLigandTypes;
      double logit = 0.0;
      for (int e = 0; e < kPocketElements; ++e) logit += 3.0 * kCompositionAffinity[base][e] * composition[static_cast<std::size_t>(e)];
      logit += kContactAffinity[near_elem][base];
      w[static_cast<std::size_t>(k)] = std::exp(logit);
    }
    lig_labels[static_cast<std::size_t>(a)] = sample_categorical(w, rng);
  }
  const double frac = static_cast<double>(contacts) / n_ligand;
  rec.affinity = quantize(1.0 / (1.0 + std::exp(-8.0 * (frac - 0.2))));

  const Mat3 rot = random_rotation(rng);
  const Vec3 shift(20.0 * uni(rng) - 10.0, 20.0 * uni(rng) - 10.0, 20.0 * uni(rng) - 10.0);
  rec.pocket.coords = transform_rows(rec.pocket.coords, rot, shift).unaryExpr([](double v) { return quantize(v); });
  Matrix lig_world = transform_rows(lig, rot, shift).unaryExpr([](double v) { return quantize(v); });
  rec.ligand = LigandState::from_labels(std::move(lig_world), lig_labels, type_count);
  return rec;
}

}  // namespace

SyntheticDataset generate_synthetic_dataset(int n_complexes, std::uint64_t seed, int type_count) {
  require(n_complexes >= 1, "generate_synthetic_dataset: n_complexes must be >= 1");
  require(type_count >= 2, "generate_synthetic_dataset: need at least 2 ligand types");
  SyntheticDataset ds;
  ds.records.resize(static_cast<std::size_t>(n_complexes));
  ds.true_volume.resize(static_cast<std::size_t>(n_complexes));
  for (int i = 0; i < n_complexes; ++i) {
    Rng rng(mix_seed(seed, 1, static_cast<std::uint64_t>(i)));
    ds.records[static_cast<std::size_t>(i)] = synthesize_record(rng, type_count, ds.true_volume[static_cast<std::size_t>(i)]);
  }
  return ds;
}

// ---------------------------------------------------------------------------
// File format

namespace {

void write_atoms(std::ostream& out, const Matrix& coords, const std::vector<int>& labels) {
  char buf[128];
  for (Index i = 0; i < coords.rows(); ++i) {
    std::snprintf(buf, sizeof buf, "%.9g %.9g %.9g %d\n", coords(i, 0), coords(i, 1), coords(i, 2),
                  labels[static_cast<std::size_t>(i)]);
    out << buf;
  }
}

std::ofstream open_out(const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot open '" + path + "' for writing");
  return out;
}

std::ifstream open_in(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open '" + path + "' for reading");
  return in;
}

class LineReader {
 public:
  explicit LineReader(std::istream& in) : in_(in) {}

  // Next non-blank line; false at end of input.
  bool next(std::string& line) {
    while (std::getline(in_, line)) {
      ++line_no_;
      if (line.find_first_not_of(" \t\r") != std::string::npos) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        return true;
      }
    }
    return false;
  }

  [[noreturn]] void fail(const std::string& field, const std::string& what) const {
    throw ParseError("line " + std::to_string(line_no_) + ", field '" + field + "': " + what);
  }

  [[noreturn]] void fail_eof(const std::string& expected) const {
    throw ParseError("line " + std::to_string(line_no_ + 1) + ", field '" + expected +
                     "': unexpected end of file (truncated?)");
  }

  int line_no() const { return line_no_; }

 private:
  std::istream& in_;
  int line_no_ = 0;
};

double parse_double(const std::string& token, const LineReader& r, const std::string& field) {
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(token, &used);
  } catch (const std::exception&) {
    r.fail(field, "not a number: '" + token + "'");
  }
  if (used != token.size()) r.fail(field, "not a number: '" + token + "'");
  if (!std::isfinite(v)) r.fail(field, "non-finite value");
  return v;
}

long parse_int(const std::string& token, const LineReader& r, const std::string& field) {
  std::size_t used = 0;
  long v = 0;
  try {
    v = std::stol(token, &used);
  } catch (const std::exception&) {
    r.fail(field, "not an integer: '" + token + "'");
  }
  if (used != token.size()) r.fail(field, "not an integer: '" + token + "'");
  return v;
}

std::vector<std::string> split(const std::string& line) {
  std::istringstream ss(line);
  std::vector<std::string> out;
  std::string tok;
  while (ss >> tok) out.push_back(tok);
  return out;
}

void read_header(LineReader& r) {
  std::string line;
  if (!r.next(line)) r.fail_eof("header");
  const auto tok = split(line);
  if (tok.size() != 2 || tok[0] != "#paflow-complex") r.fail("header", "expected '" + std::string(kComplexHeader) + "'");
  if (tok[1] != "v1") r.fail("version", "unsupported version '" + tok[1] + "', expected v1");
}

long read_block_count(LineReader& r, const std::string& line, const std::string& keyword) {
  const auto tok = split(line);
  if (tok.empty() || tok[0] != keyword) r.fail("block", "expected '" + keyword + " n'");
  if (tok.size() != 2) r.fail(keyword, "expected exactly one count");
  const long n = parse_int(tok[1], r, keyword + " count");
  if (n < 0) r.fail(keyword + " count", "negative count");
  return n;
}

void read_atoms(LineReader& r, long n, int label_limit, const std::string& block, Matrix& coords,
                std::vector<int>& labels) {
  coords.resize(n, 3);
  labels.resize(static_cast<std::size_t>(n));
  static const char* names[] = {"x", "y", "z", "label"};
  std::string line;
  for (long i = 0; i < n; ++i) {
    if (!r.next(line)) r.fail_eof(block + " atom " + std::to_string(i));
    const auto tok = split(line);
    if (tok.size() != 4) r.fail(block + " atom", "expected 'x y z label', got " + std::to_string(tok.size()) + " fields");
    for (int c = 0; c < 3; ++c) coords(i, c) = parse_double(tok[static_cast<std::size_t>(c)], r, names[c]);
    const long label = parse_int(tok[3], r, names[3]);
    if (label < 0 || label >= label_limit) {
      r.fail(names[3], "label " + std::to_string(label) + " outside [0, " + std::to_string(label_limit) + ")");
    }
    labels[static_cast<std::size_t>(i)] = static_cast<int>(label);
  }
}

}  // namespace

void write_complexes(std::ostream& out, const std::vector<ComplexRecord>& records) {
  out << kComplexHeader << '\n';
  char buf[64];
  for (const ComplexRecord& rec : records) {
    out << "POCKET " << rec.pocket.size() << '\n';
    write_atoms(out, rec.pocket.coords, rec.pocket.labels);
    out << "LIGAND " << rec.ligand.size() << '\n';
    write_atoms(out, rec.ligand.coords, rec.ligand.labels());
    std::snprintf(buf, sizeof buf, "AFFINITY %.9g\n", rec.affinity);
    out << buf;
  }
}

void write_complexes(const std::string& path, const std::vector<ComplexRecord>& records) {
  auto out = open_out(path);
  write_complexes(out, records);
  if (!out) throw ConfigError("write failed for '" + path + "'");
}

std::vector<ComplexRecord> read_complexes(std::istream& in, int type_count) {
  LineReader r(in);
  read_header(r);
  std::vector<ComplexRecord> records;
  std::string line;
  while (r.next(line)) {
    ComplexRecord rec;
    const long np = read_block_count(r, line, "POCKET");
    if (np < 1) r.fail("POCKET count", "a pocket needs at least one atom");
    read_atoms(r, np, kPocketLabels, "POCKET", rec.pocket.coords, rec.pocket.labels);
    if (!r.next(line)) r.fail_eof("LIGAND");
    const long nm = read_block_count(r, line, "LIGAND");
    Matrix lig;
    std::vector<int> labels;
    read_atoms(r, nm, type_count, "LIGAND", lig, labels);
    rec.ligand = LigandState::from_labels(std::move(lig), labels, type_count);
    if (!r.next(line)) r.fail_eof("AFFINITY");
    const auto tok = split(line);
    if (tok.size() != 2 || tok[0] != "AFFINITY") r.fail("AFFINITY", "expected 'AFFINITY y'");
    rec.affinity = parse_double(tok[1], r, "AFFINITY");
    if (rec.affinity < 0.0 || rec.affinity > 1.0) r.fail("AFFINITY", "value outside [0, 1]");
    records.push_back(std::move(rec));
  }
  return records;
}

std::vector<ComplexRecord> read_complexes(const std::string& path, int type_count) {
  auto in = open_in(path);
  try {
    return read_complexes(in, type_count);
  } catch (const ParseError& e) {
    throw ParseError(path + ": " + e.what());
  }
}

void write_ligands(const std::string& path, const std::vector<LigandState>& ligands) {
  auto out = open_out(path);
  out << kComplexHeader << '\n';
  for (const LigandState& lig : ligands) {
    out << "LIGAND " << lig.size() << '\n';
    write_atoms(out, lig.coords, lig.labels());
  }
  if (!out) throw ConfigError("write failed for '" + path + "'");
}

void write_trajectory(const std::string& path, const std::vector<LigandState>& frames) {
  auto out = open_out(path);
  out << kComplexHeader << '\n';
  char buf[64];
  for (const LigandState& f : frames) {
    std::snprintf(buf, sizeof buf, "FRAME %.9g\n", f.t);
    out << buf << "LIGAND " << f.size() << '\n';
    write_atoms(out, f.coords, f.labels());
  }
  if (!out) throw ConfigError("write failed for '" + path + "'");
}

std::vector<LigandState> read_ligands(const std::string& path, int type_count) {
  auto in = open_in(path);
  LineReader r(in);
  try {
    read_header(r);
    std::vector<LigandState> out;
    std::string line;
    double t = 1.0;
    while (r.next(line)) {
      const auto tok = split(line);
      if (!tok.empty() && tok[0] == "FRAME") {
        if (tok.size() != 2) r.fail("FRAME", "expected 'FRAME t'");
        t = parse_double(tok[1], r, "FRAME");
        continue;
      }
      const long n = read_block_count(r, line, "LIGAND");
      Matrix coords;
      std::vector<int> labels;
      read_atoms(r, n, type_count, "LIGAND", coords, labels);
      out.push_back(LigandState::from_labels(std::move(coords), labels, type_count));
      out.back().t = t;
    }
    return out;
  } catch (const ParseError& e) {
    throw ParseError(path + ": " + e.what());
  }
}

}  // namespace paflow
