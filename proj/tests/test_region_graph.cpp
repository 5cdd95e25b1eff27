#include "darkspot/region_graph.hpp"
#include "oracles.hpp"

#include <gtest/gtest.h>

#include <random>
#include <set>

using namespace darkspot;

namespace {

LabelMap from_rows(const std::vector<std::vector<int>>& rows) {
  LabelMap m;
  m.height = static_cast<int>(rows.size());
  m.width = static_cast<int>(rows[0].size());
  int k = 0;
  for (const auto& row : rows) {
    for (int v : row) {
      m.labels.push_back(v);
      k = std::max(k, v + 1);
    }
  }
  m.count = k;
  return m;
}

}  // namespace

TEST(RegionGraph, TwoPixels) {
  const RegionGraph g = build_graph(from_rows({{0, 1}}));
  EXPECT_EQ(g.node_count, 2);
  ASSERT_EQ(g.edges.size(), 1u);
  EXPECT_EQ(g.edges[0], std::make_pair(0, 1));
  EXPECT_EQ(g.edge_boundary[0], 1);
}

TEST(RegionGraph, SingleLabel) {
  const RegionGraph g = build_graph(from_rows({{0, 0, 0}, {0, 0, 0}}));
  EXPECT_EQ(g.node_count, 1);
  EXPECT_TRUE(g.edges.empty());
  EXPECT_EQ(g.area(0), 6);
}

TEST(RegionGraph, DiagonalContactIsNotAnEdge) {
  const RegionGraph g = build_graph(from_rows({{0, 1}, {1, 0}}));
  // Labels 0 and 1 are each split, but every 0 pixel touches a 1 pixel.
  EXPECT_EQ(g.edges.size(), 1u);
  const RegionGraph h = build_graph(from_rows({{0, 2}, {2, 1}}));
  const std::set<std::pair<int, int>> want{{0, 2}, {1, 2}};
  const std::set<std::pair<int, int>> got(h.edges.begin(), h.edges.end());
  EXPECT_EQ(got, want);
}

TEST(RegionGraph, SentinelPixelsContributeNothing) {
  const RegionGraph g = build_graph(from_rows({{0, -1, 1}, {0, -1, 1}}));
  EXPECT_EQ(g.node_count, 2);
  EXPECT_TRUE(g.edges.empty());
  EXPECT_EQ(g.area(0) + g.area(1), 4);
}

TEST(RegionGraph, MatchesBruteForceOracle) {
  std::mt19937_64 rng(21);
  for (int trial = 0; trial < 10; ++trial) {
    const LabelMap m = oracle::random_label_map(32, 32, 10, rng);
    const RegionGraph g = build_graph(m);
    const oracle::BruteGraph want = oracle::brute_force_graph(m);
    EXPECT_EQ(g.node_count, m.count);
    const std::set<std::pair<int, int>> got(g.edges.begin(), g.edges.end());
    EXPECT_EQ(got, want.edges);
    EXPECT_EQ(got.size(), g.edges.size()) << "duplicate edges";
    long shared_sum = 0;
    for (std::size_t e = 0; e < g.edges.size(); ++e) {
      EXPECT_LT(g.edges[e].first, g.edges[e].second);
      EXPECT_EQ(g.edge_boundary[e], want.shared.at(g.edges[e]));
      shared_sum += g.edge_boundary[e];
    }
    EXPECT_EQ(shared_sum, want.heterolabel_pairs);
    for (int v = 0; v < g.node_count; ++v) {
      for (int u : g.neighbors[v]) EXPECT_TRUE(want.edges.count({std::min(u, v), std::max(u, v)}));
    }
  }
}

TEST(RegionGraph, NodeBoundaryLength) {
  // 3x3 block of label 0 inside a 5x5 frame of label 1.
  std::vector<std::vector<int>> rows(5, std::vector<int>(5, 1));
  for (int r = 1; r < 4; ++r) {
    for (int c = 1; c < 4; ++c) rows[r][c] = 0;
  }
  const RegionGraph g = build_graph(from_rows(rows));
  EXPECT_EQ(g.node_boundary_len[0], 8);
  // Every frame pixel touches either the tile edge or the block.
  EXPECT_EQ(g.node_boundary_len[1], 16);
  EXPECT_EQ(g.edge_boundary[0], 12);
}

TEST(LabelNodes, CoverageThreshold) {
  // Node 0: 10 pixels, 6 marked. Node 1: 5 pixels, none marked. Node 2: all.
  LabelMap m;
  m.width = 20;
  m.height = 1;
  m.count = 3;
  for (int i = 0; i < 10; ++i) m.labels.push_back(0);
  for (int i = 0; i < 5; ++i) m.labels.push_back(1);
  for (int i = 0; i < 5; ++i) m.labels.push_back(2);
  BinaryMask truth(20, 1);
  for (int i = 0; i < 6; ++i) truth.bits[i] = 1;
  for (int i = 15; i < 20; ++i) truth.bits[i] = 1;
  const RegionGraph g = build_graph(m);
  EXPECT_EQ(label_nodes(g, truth, 0.5), (NodeLabeling{1, 0, 1}));
  EXPECT_EQ(label_nodes(g, truth, 0.7), (NodeLabeling{0, 0, 1}));
  EXPECT_EQ(node_marked_pixels(g, truth), (std::vector<int>{6, 0, 5}));
  EXPECT_THROW(label_nodes(g, BinaryMask(19, 1), 0.5), ValidationError);
}

TEST(Rasterize, AllZeroAllOneAndLookup) {
  std::mt19937_64 rng(4);
  LabelMap m = oracle::random_label_map(24, 18, 9, rng);
  for (int c = 0; c < 24; ++c) m.labels[m.index(0, c)] = LabelMap::kInvalidLabel;
  densify_labels(m);
  const RegionGraph g = build_graph(m);

  EXPECT_EQ(rasterize_prediction(g, NodeLabeling(g.node_count, 0), m).count(), 0u);

  const BinaryMask ones = rasterize_prediction(g, NodeLabeling(g.node_count, 1), m);
  for (std::size_t i = 0; i < m.labels.size(); ++i) EXPECT_EQ(ones.bits[i], m.labels[i] >= 0 ? 1 : 0);

  NodeLabeling mixed(g.node_count);
  for (int v = 0; v < g.node_count; ++v) mixed[v] = static_cast<std::uint8_t>(rng() & 1);
  const BinaryMask got = rasterize_prediction(g, mixed, m);
  for (std::size_t i = 0; i < m.labels.size(); ++i) {
    EXPECT_EQ(got.bits[i], m.labels[i] >= 0 ? mixed[m.labels[i]] : 0);
  }
}

TEST(Rasterize, PureSuperpixelsRoundTripTruth) {
  std::mt19937_64 rng(9);
  const LabelMap m = oracle::random_label_map(20, 20, 8, rng);
  BinaryMask truth(20, 20);
  for (std::size_t i = 0; i < truth.bits.size(); ++i) truth.bits[i] = m.labels[i] % 3 == 0;
  const RegionGraph g = build_graph(m);
  EXPECT_EQ(rasterize_prediction(g, label_nodes(g, truth, 0.5), m), truth);
}

TEST(GraphText, EdgeListAndNodeCsv) {
  const RegionGraph g = build_graph(from_rows({{0, 1, 1}, {2, 2, 1}}));
  const std::string text = edge_list_text(g);
  EXPECT_EQ(parse_edge_list(text), g.edges);
  const std::string csv = node_attributes_csv(g, NodeLabeling{1, 0, 0});
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "node_id,area,label");
  EXPECT_NE(csv.find("\n0,1,1\n"), std::string::npos);
  EXPECT_NE(csv.find("\n1,3,0\n"), std::string::npos);
}
