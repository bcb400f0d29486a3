#include "paflow/geomdata.hpp"

#include "oracles.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <map>
#include <set>
#include <sstream>

using namespace paflow;

namespace {

PocketCloud random_pocket(Index n, Rng& rng) {
  PocketCloud p;
  p.coords = 4.0 * standard_normal(n, 3, rng);
  p.labels.assign(static_cast<std::size_t>(n), 0);
  for (Index i = 0; i < n; ++i) p.labels[static_cast<std::size_t>(i)] = static_cast<int>(rng() % kPocketLabels);
  return p;
}

std::set<std::pair<int, int>> edge_set(const KnnEdges& e) {
  std::set<std::pair<int, int>> s;
  for (std::size_t i = 0; i < e.src.size(); ++i) s.emplace(e.src[i], e.dst[i]);
  return s;
}

bool records_equal(const ComplexRecord& a, const ComplexRecord& b) {
  return a.pocket.coords == b.pocket.coords && a.pocket.labels == b.pocket.labels &&
         a.ligand.coords == b.ligand.coords && a.ligand.types_onehot == b.ligand.types_onehot &&
         a.affinity == b.affinity;
}

}  // namespace

TEST(Geomdata, FeatureRowsCountActiveGroups) {
  PocketCloud p;
  p.coords = Matrix::Zero(3, 3);
  p.labels = {pocket_label(0, 0, false), pocket_label(3, 4, true), pocket_label(2, 1, true)};
  const Matrix f = p.features();
  ASSERT_EQ(f.cols(), kPocketFeatureDim);
  EXPECT_EQ(f.row(0).sum(), 2.0);
  EXPECT_EQ(f.row(1).sum(), 3.0);
  EXPECT_EQ(f(1, 3), 1.0);
  EXPECT_EQ(f(1, kPocketElements + 4), 1.0);
  EXPECT_EQ(f(1, kPocketFeatureDim - 1), 1.0);
  EXPECT_EQ(pocket_element(p.labels[2]), 2);
}

TEST(Geomdata, ShiftAlreadyCentered) {
  PocketCloud p;
  p.coords.resize(2, 3);
  p.coords << 1, 0, 0, -1, 0, 0;
  p.labels = {0, 0};
  const Matrix lig = Matrix::Constant(1, 3, 0.5);
  const auto c = shift_to_protein_com(p, lig);
  EXPECT_EQ(c.offset, Vec3::Zero());
  EXPECT_EQ(c.pocket.coords, p.coords);
  EXPECT_EQ(c.ligand_coords, lig);
}

TEST(Geomdata, ShiftSingleAtom) {
  PocketCloud p;
  p.coords.resize(1, 3);
  p.coords << 1, 2, 3;
  p.labels = {0};
  Matrix lig(1, 3);
  lig << 1, 2, 3;
  const auto c = shift_to_protein_com(p, lig);
  EXPECT_EQ(c.offset, Vec3(-1, -2, -3));
  EXPECT_EQ(c.pocket.coords, Matrix::Zero(1, 3));
  EXPECT_EQ(c.ligand_coords, Matrix::Zero(1, 3));
}

TEST(Geomdata, ShiftRandomPocketCentersMean) {
  Rng rng(2);
  PocketCloud p = random_pocket(50, rng);
  p.coords.rowwise() += Eigen::RowVector3d(30.0, -12.0, 7.5);
  const auto c = shift_to_protein_com(p, standard_normal(5, 3, rng));
  const Eigen::RowVector3d mean = c.pocket.coords.colwise().mean();
  for (int k = 0; k < 3; ++k) EXPECT_LT(std::abs(mean(k)), 1e-9);
  EXPECT_THROW(shift_to_protein_com(PocketCloud{}, Matrix()), ContractError);
}

TEST(Geomdata, KnnTieGoesToLowerIndex) {
  Matrix pts(3, 3);
  pts << 0, 0, 0, 1, 0, 0, 2, 0, 0;
  const auto e = knn_edges(pts, Matrix(0, 3), 1);
  ASSERT_EQ(e.src.size(), 3u);
  // The middle node (1) receives from its nearest neighbour; 0 and 2 tie.
  EXPECT_EQ(e.dst[1], 1);
  EXPECT_EQ(e.src[1], 0);
}

TEST(Geomdata, KnnLargeKGivesCompleteGraph) {
  Rng rng(3);
  const Matrix prot = standard_normal(3, 3, rng);
  const Matrix lig = standard_normal(2, 3, rng);
  const auto e = knn_edges(prot, lig, 50);
  EXPECT_EQ(e.src.size(), 20u);
  for (std::size_t i = 0; i < e.src.size(); ++i) EXPECT_NE(e.src[i], e.dst[i]);
}

TEST(Geomdata, KnnMatchesBruteForce) {
  Rng rng(4);
  for (int trial = 0; trial < 30; ++trial) {
    const Index np = 1 + static_cast<Index>(rng() % 40);
    const Index nl = static_cast<Index>(rng() % 24);
    const int k = 1 + static_cast<int>(rng() % 12);
    const Matrix prot = 3.0 * standard_normal(np, 3, rng);
    const Matrix lig = 3.0 * standard_normal(nl, 3, rng);
    Matrix all(np + nl, 3);
    all << prot, lig;
    EXPECT_EQ(edge_set(knn_edges(prot, lig, k)), oracle::brute_force_knn(all, k)) << "trial " << trial;
  }
  // The stated 10-node, k = 3 case.
  const Matrix ten = standard_normal(10, 3, rng);
  EXPECT_EQ(edge_set(knn_edges(ten.topRows(6), ten.bottomRows(4), 3)), oracle::brute_force_knn(ten, 3));
}

TEST(Geomdata, GraphStructure) {
  Rng rng(5);
  const Matrix prot = 3.0 * standard_normal(12, 3, rng);
  const Matrix lig = standard_normal(5, 3, rng);
  const auto g = build_knn_graph(prot, lig, 4);
  ASSERT_EQ(g.node_count, 17);
  std::map<int, int> indegree;
  for (std::size_t e = 0; e < g.edge_count(); ++e) {
    EXPECT_NE(g.src[e], g.dst[e]);
    ++indegree[g.dst[e]];
    const bool sl = g.src[e] >= 12, dl = g.dst[e] >= 12;
    const int expected = !sl && !dl ? protein_protein : sl && dl ? ligand_ligand : !sl ? protein_to_ligand : ligand_to_protein;
    EXPECT_EQ(g.edge_type[e], expected);
    const auto rbf = rbf_expand(g.distances(static_cast<Index>(e), 0));
    for (int t = 0; t < kEdgeTypes; ++t) {
      for (int m = 0; m < kRbfCount; ++m) {
        const double want = t == g.edge_type[e] ? rbf[static_cast<std::size_t>(m)] : 0.0;
        EXPECT_EQ(g.edge_features(static_cast<Index>(e), t * kRbfCount + m), want);
      }
    }
  }
  for (const auto& [node, deg] : indegree) EXPECT_LE(deg, 4) << node;
  for (Index i = 0; i < g.node_count; ++i) EXPECT_EQ(g.ligand_mask[static_cast<std::size_t>(i)], i >= 12);
  EXPECT_THROW(build_knn_graph(prot, lig, 0), ContractError);
  Matrix bad = lig;
  bad(0, 0) = INFINITY;
  EXPECT_THROW(build_knn_graph(prot, bad, 3), ContractError);
}

TEST(Geomdata, GraphInvariantUnderRotation) {
  Rng rng(6);
  for (int trial = 0; trial < 20; ++trial) {
    const Matrix prot = 4.0 * standard_normal(20, 3, rng);
    const Matrix lig = 2.0 * standard_normal(7, 3, rng);
    const Mat3 r = random_rotation(rng);
    const Vec3 b = 5.0 * Vec3::Random();
    const auto g1 = build_knn_graph(prot, lig, 6);
    const auto g2 = build_knn_graph(transform_rows(prot, r, b), transform_rows(lig, r, b), 6);
    std::map<std::pair<int, int>, Index> idx;
    for (std::size_t e = 0; e < g2.edge_count(); ++e) idx[{g2.src[e], g2.dst[e]}] = static_cast<Index>(e);
    ASSERT_EQ(g1.edge_count(), g2.edge_count());
    for (std::size_t e = 0; e < g1.edge_count(); ++e) {
      auto it = idx.find({g1.src[e], g1.dst[e]});
      ASSERT_NE(it, idx.end());
      EXPECT_LT((g1.edge_features.row(static_cast<Index>(e)) - g2.edge_features.row(it->second)).cwiseAbs().maxCoeff(),
                1e-9);
    }
  }
}

TEST(Geomdata, RbfValues) {
  const auto at0 = rbf_expand(0.0);
  EXPECT_DOUBLE_EQ(at0[0], 1.0);
  const auto at10 = rbf_expand(10.0);
  EXPECT_DOUBLE_EQ(at10[kRbfCount - 1], 1.0);
  const auto at5 = rbf_expand(5.0);
  const double sigma = 10.0 / 19.0;
  for (int m = 0; m < kRbfCount; ++m) {
    const double mu = 10.0 * m / 19.0;
    EXPECT_NEAR(at5[static_cast<std::size_t>(m)], std::exp(-(5.0 - mu) * (5.0 - mu) / (2.0 * sigma * sigma)), 1e-15);
  }
  EXPECT_THROW(rbf_expand(-1.0), ContractError);
}

TEST(Geomdata, SyntheticDeterministic) {
  const auto a = generate_synthetic_dataset(12, 99);
  const auto b = generate_synthetic_dataset(12, 99);
  std::ostringstream sa, sb;
  write_complexes(sa, a.records);
  write_complexes(sb, b.records);
  EXPECT_EQ(sa.str(), sb.str());
  EXPECT_EQ(a.true_volume, b.true_volume);
  const auto c = generate_synthetic_dataset(12, 100);
  std::ostringstream sc;
  write_complexes(sc, c.records);
  EXPECT_NE(sa.str(), sc.str());
}

TEST(Geomdata, SyntheticRecordsSatisfyContract) {
  const auto ds = generate_synthetic_dataset(200, 5);
  for (const auto& rec : ds.records) {
    EXPECT_GE(rec.pocket.size(), 40);
    EXPECT_LE(rec.pocket.size(), 120);
    EXPECT_GE(rec.ligand.size(), 4);
    EXPECT_LE(rec.ligand.size(), 40);
    EXPECT_GE(rec.affinity, 0.0);
    EXPECT_LE(rec.affinity, 1.0);
    const Eigen::RowVector3d center = rec.pocket.coords.colwise().mean();
    const double bound = (rec.pocket.coords.rowwise() - center).rowwise().norm().maxCoeff();
    const Eigen::RowVector3d lig_center = rec.ligand.coords.colwise().mean();
    EXPECT_LT((lig_center - center).norm(), bound);
    EXPECT_EQ(rec.ligand.type_count(), kDefaultLigandTypes);
  }
}

TEST(Geomdata, SyntheticVolumeCorrelatesWithLigandSize) {
  const auto ds = generate_synthetic_dataset(1000, 2024);
  std::vector<double> n;
  for (const auto& r : ds.records) n.push_back(static_cast<double>(r.ligand.size()));
  const auto c = oracle::pearson(ds.true_volume, n);
  EXPECT_GT(c.r, 0.0);
  EXPECT_LT(c.p_value, 0.05);
}

TEST(Geomdata, RoundTripExact) {
  const auto ds = generate_synthetic_dataset(25, 17);
  std::stringstream ss;
  write_complexes(ss, ds.records);
  const auto back = read_complexes(ss);
  ASSERT_EQ(back.size(), ds.records.size());
  for (std::size_t i = 0; i < back.size(); ++i) EXPECT_TRUE(records_equal(back[i], ds.records[i])) << i;
}

TEST(Geomdata, EmptyListRoundTrip) {
  std::stringstream ss;
  write_complexes(ss, {});
  EXPECT_EQ(ss.str(), std::string(kComplexHeader) + "\n");
  EXPECT_TRUE(read_complexes(ss).empty());
}

TEST(Geomdata, FileRoundTripAndLigands) {
  const auto dir = std::filesystem::temp_directory_path() / "paflow_geomdata_test";
  std::filesystem::create_directories(dir);
  const auto ds = generate_synthetic_dataset(3, 8);
  write_complexes((dir / "c.txt").string(), ds.records);
  const auto back = read_complexes((dir / "c.txt").string());
  for (std::size_t i = 0; i < back.size(); ++i) EXPECT_TRUE(records_equal(back[i], ds.records[i]));
  std::vector<LigandState> ligs;
  for (const auto& r : ds.records) ligs.push_back(r.ligand);
  write_ligands((dir / "l.txt").string(), ligs);
  const auto lb = read_ligands((dir / "l.txt").string());
  ASSERT_EQ(lb.size(), 3u);
  EXPECT_EQ(lb[1].coords, ligs[1].coords);
  ligs[0].t = 0.25;
  write_trajectory((dir / "t.txt").string(), ligs);
  const auto tb = read_ligands((dir / "t.txt").string());
  EXPECT_EQ(tb[0].t, 0.25);
  std::filesystem::remove_all(dir);
  EXPECT_THROW(read_complexes((dir / "missing.txt").string()), ConfigError);
}

TEST(Geomdata, TruncatedFileNamesLine) {
  const auto ds = generate_synthetic_dataset(1, 3);
  std::ostringstream full;
  write_complexes(full, ds.records);
  const std::string text = full.str();
  // Cut inside the pocket block: header, POCKET line, 5 atoms.
  std::size_t pos = 0;
  for (int i = 0; i < 7; ++i) pos = text.find('\n', pos) + 1;
  std::istringstream cut(text.substr(0, pos));
  try {
    read_complexes(cut);
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_NE(std::string(e.what()).find("line 8"), std::string::npos) << e.what();
  }
}

TEST(Geomdata, MalformedFieldNamed) {
  std::istringstream bad("#paflow-complex v1\nPOCKET 1\n0 0 zz 1\n");
  try {
    read_complexes(bad);
    FAIL();
  } catch (const ParseError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("line 3"), std::string::npos) << msg;
    EXPECT_NE(msg.find("'z'"), std::string::npos) << msg;
  }
  std::istringstream label("#paflow-complex v1\nPOCKET 1\n0 0 0 1\nLIGAND 1\n0 0 0 9\nAFFINITY 0.5\n");
  EXPECT_THROW(read_complexes(label), ParseError);
  std::istringstream aff("#paflow-complex v1\nPOCKET 1\n0 0 0 1\nLIGAND 0\nAFFINITY 1.5\n");
  EXPECT_THROW(read_complexes(aff), ParseError);
}

TEST(Geomdata, VersionMismatchNamesExpected) {
  std::istringstream v2("#paflow-complex v2\n");
  try {
    read_complexes(v2);
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_NE(std::string(e.what()).find("expected v1"), std::string::npos) << e.what();
  }
}
