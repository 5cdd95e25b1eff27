#include "darkspot/region_graph.hpp"

#include "darkspot/util.hpp"

#include <fmt/core.h>

#include <algorithm>
#include <map>
#include <sstream>

namespace darkspot {

RegionGraph build_graph(const LabelMap& labels) {
  RegionGraph g;
  g.width = labels.width;
  g.height = labels.height;
  g.node_count = labels.count;
  g.node_pixels.resize(labels.count);
  g.node_boundary_len.assign(labels.count, 0);
  g.neighbors.resize(labels.count);

  std::map<std::pair<int, int>, int> shared;
  for (int r = 0; r < labels.height; ++r) {
    for (int c = 0; c < labels.width; ++c) {
      const int l = labels.at(r, c);
      if (l < 0) continue;
      g.node_pixels[l].push_back({r, c});
      bool on_boundary = false;
      constexpr int kDr[4] = {-1, 1, 0, 0};
      constexpr int kDc[4] = {0, 0, -1, 1};
      for (int k = 0; k < 4; ++k) {
        const int rr = r + kDr[k];
        const int cc = c + kDc[k];
        if (rr < 0 || cc < 0 || rr >= labels.height || cc >= labels.width || labels.at(rr, cc) != l) {
          on_boundary = true;
        }
      }
      if (on_boundary) ++g.node_boundary_len[l];
      // Count each heterolabel pair once via the right and down neighbors.
      if (c + 1 < labels.width) {
        const int o = labels.at(r, c + 1);
        if (o >= 0 && o != l) ++shared[{std::min(l, o), std::max(l, o)}];
      }
      if (r + 1 < labels.height) {
        const int o = labels.at(r + 1, c);
        if (o >= 0 && o != l) ++shared[{std::min(l, o), std::max(l, o)}];
      }
    }
  }
  g.edges.reserve(shared.size());
  g.edge_boundary.reserve(shared.size());
  for (const auto& [edge, len] : shared) {
    g.edges.push_back(edge);
    g.edge_boundary.push_back(len);
    g.neighbors[edge.first].push_back(edge.second);
    g.neighbors[edge.second].push_back(edge.first);
  }
  for (auto& nb : g.neighbors) std::sort(nb.begin(), nb.end());
  return g;
}

std::vector<int> node_marked_pixels(const RegionGraph& graph, const BinaryMask& truth) {
  if (truth.width != graph.width || truth.height != graph.height) {
    throw ValidationError(fmt::format("truth mask is {}x{} but label map is {}x{}", truth.width, truth.height,
                                      graph.width, graph.height));
  }
  std::vector<int> marked(graph.node_count, 0);
  for (int v = 0; v < graph.node_count; ++v) {
    for (const auto& p : graph.node_pixels[v]) marked[v] += truth.at(p.row, p.col) ? 1 : 0;
  }
  return marked;
}

NodeLabeling label_nodes(const RegionGraph& graph, const BinaryMask& truth, double threshold) {
  const auto marked = node_marked_pixels(graph, truth);
  NodeLabeling out(graph.node_count, 0);
  for (int v = 0; v < graph.node_count; ++v) {
    const double area = static_cast<double>(graph.area(v));
    out[v] = area > 0 && static_cast<double>(marked[v]) >= threshold * area ? 1 : 0;
  }
  return out;
}

BinaryMask rasterize_prediction(const RegionGraph& graph, const NodeLabeling& classes, const LabelMap& labels) {
  if (static_cast<int>(classes.size()) != graph.node_count || labels.count != graph.node_count) {
    throw ValidationError("rasterize_prediction: node count mismatch");
  }
  BinaryMask out(labels.width, labels.height);
  for (std::size_t p = 0; p < labels.labels.size(); ++p) {
    const auto l = labels.labels[p];
    if (l >= 0) out.bits[p] = classes[l] ? 1 : 0;
  }
  return out;
}

std::string edge_list_text(const RegionGraph& graph) {
  std::string out;
  for (std::size_t e = 0; e < graph.edges.size(); ++e) {
    out += fmt::format("{} {} {}\n", graph.edges[e].first, graph.edges[e].second, graph.edge_boundary[e]);
  }
  return out;
}

std::string node_attributes_csv(const RegionGraph& graph, const NodeLabeling& labels) {
  std::string out = "node_id,area,label\n";
  for (int v = 0; v < graph.node_count; ++v) {
    out += fmt::format("{},{},{}\n", v, graph.area(v), v < static_cast<int>(labels.size()) ? labels[v] : 0);
  }
  return out;
}

std::vector<std::pair<int, int>> parse_edge_list(const std::string& text) {
  std::vector<std::pair<int, int>> edges;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    std::istringstream ls(line);
    int u = 0;
    int v = 0;
    if (!(ls >> u >> v)) throw ValidationError(fmt::format("malformed edge line '{}'", line));
    edges.emplace_back(u, v);
  }
  return edges;
}

}  // namespace darkspot
