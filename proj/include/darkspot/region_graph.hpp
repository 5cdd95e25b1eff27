#pragma once

#include "darkspot/raster.hpp"
#include "darkspot/superpixel.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

namespace darkspot {

struct PixelCoord {
  int row = 0;
  int col = 0;
  friend bool operator==(const PixelCoord&, const PixelCoord&) = default;
};

/// Undirected region-adjacency graph of one tile's superpixels.
///
/// Edges connect 4-adjacent regions and are stored once with u < v, sorted.
/// `edge_boundary[e]` counts the 4-adjacent pixel pairs shared by the edge's
/// endpoints. A node's boundary pixels are those with at least one 4-neighbor
/// outside the node (off-tile and invalid neighbors included).
struct RegionGraph {
  int width = 0;
  int height = 0;
  int node_count = 0;
  std::vector<std::pair<int, int>> edges;
  std::vector<int> edge_boundary;
  std::vector<std::vector<PixelCoord>> node_pixels;
  std::vector<int> node_boundary_len;
  std::vector<std::vector<int>> neighbors;  // sorted ascending

  [[nodiscard]] int degree(int node) const { return static_cast<int>(neighbors[node].size()); }
  [[nodiscard]] int area(int node) const { return static_cast<int>(node_pixels[node].size()); }
};

/// Per-node class: 0 = sea, 1 = dark spot.
using NodeLabeling = std::vector<std::uint8_t>;

RegionGraph build_graph(const LabelMap& labels);

/// Node is dark spot iff the marked fraction of its pixels is >= threshold.
NodeLabeling label_nodes(const RegionGraph& graph, const BinaryMask& truth, double threshold = 0.5);

/// Number of truth-marked pixels per node.
std::vector<int> node_marked_pixels(const RegionGraph& graph, const BinaryMask& truth);

/// Paints every pixel with its node's class; pixels outside any node get 0.
BinaryMask rasterize_prediction(const RegionGraph& graph, const NodeLabeling& classes, const LabelMap& labels);

/// Plain-text edge list: one "u v boundary" line per edge.
std::string edge_list_text(const RegionGraph& graph);
/// CSV with header "node_id,area,label".
std::string node_attributes_csv(const RegionGraph& graph, const NodeLabeling& labels);

/// Reads the adjacency back from an edge list (boundary column optional).
std::vector<std::pair<int, int>> parse_edge_list(const std::string& text);

}  // namespace darkspot
