#include "darkspot/superpixel.hpp"

#include "darkspot/util.hpp"

#include <fmt/core.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>

namespace darkspot {

namespace {

constexpr int kDr[4] = {-1, 1, 0, 0};
constexpr int kDc[4] = {0, 0, -1, 1};

struct Center {
  double intensity = 0.0;
  double row = 0.0;
  double col = 0.0;
};

// Connected components (4-connectivity) of equal labels over valid pixels.
struct Components {
  std::vector<std::int32_t> id;          // per pixel, -1 for invalid
  std::vector<std::int32_t> source;      // per component, the label it came from
  std::vector<std::int64_t> size;
  std::vector<double> sum;               // normalized intensity sum
  std::vector<std::vector<std::int32_t>> neighbors;
};

Components label_components(const std::vector<std::int32_t>& labels, const std::vector<std::uint8_t>& valid,
                            const std::vector<double>& intensity, int width, int height) {
  Components comps;
  const std::size_t n = labels.size();
  comps.id.assign(n, -1);
  std::vector<std::size_t> stack;
  for (std::size_t start = 0; start < n; ++start) {
    if (!valid[start] || comps.id[start] >= 0) continue;
    const auto cid = static_cast<std::int32_t>(comps.size.size());
    comps.source.push_back(labels[start]);
    comps.size.push_back(0);
    comps.sum.push_back(0.0);
    comps.id[start] = cid;
    stack.assign(1, start);
    while (!stack.empty()) {
      const std::size_t p = stack.back();
      stack.pop_back();
      ++comps.size[cid];
      comps.sum[cid] += intensity[p];
      const int r = static_cast<int>(p / width);
      const int c = static_cast<int>(p % width);
      for (int k = 0; k < 4; ++k) {
        const int rr = r + kDr[k];
        const int cc = c + kDc[k];
        if (rr < 0 || cc < 0 || rr >= height || cc >= width) continue;
        const std::size_t q = static_cast<std::size_t>(rr) * width + cc;
        if (!valid[q] || comps.id[q] >= 0 || labels[q] != labels[start]) continue;
        comps.id[q] = cid;
        stack.push_back(q);
      }
    }
  }
  comps.neighbors.resize(comps.size.size());
  for (std::size_t p = 0; p < n; ++p) {
    if (comps.id[p] < 0) continue;
    const int r = static_cast<int>(p / width);
    const int c = static_cast<int>(p % width);
    if (c + 1 < width && comps.id[p + 1] >= 0 && comps.id[p + 1] != comps.id[p]) {
      comps.neighbors[comps.id[p]].push_back(comps.id[p + 1]);
      comps.neighbors[comps.id[p + 1]].push_back(comps.id[p]);
    }
    if (r + 1 < height && comps.id[p + width] >= 0 && comps.id[p + width] != comps.id[p]) {
      comps.neighbors[comps.id[p]].push_back(comps.id[p + width]);
      comps.neighbors[comps.id[p + width]].push_back(comps.id[p]);
    }
  }
  for (auto& nb : comps.neighbors) {
    std::sort(nb.begin(), nb.end());
    nb.erase(std::unique(nb.begin(), nb.end()), nb.end());
  }
  return comps;
}

// Union-find over components. Every set is a union of connected components
// chained by adjacency, so every set stays 4-connected. The root of a set is
// always its smallest component id, which makes tie-breaks reproducible.
class RegionMerger {
 public:
  explicit RegionMerger(const Components& comps)
      : parent_(comps.size.size()), size_(comps.size), sum_(comps.sum), neighbors_(comps.neighbors) {
    std::iota(parent_.begin(), parent_.end(), 0);
  }

  std::int32_t find(std::int32_t x) {
    while (parent_[x] != x) {
      parent_[x] = parent_[parent_[x]];
      x = parent_[x];
    }
    return x;
  }

  [[nodiscard]] std::int64_t size(std::int32_t root) const { return size_[root]; }
  [[nodiscard]] double mean(std::int32_t root) const { return sum_[root] / static_cast<double>(size_[root]); }

  /// Most similar adjacent set by mean intensity; ties go to the smaller root.
  /// Returns -1 when the set has no neighbors.
  std::int32_t best_neighbor(std::int32_t root) {
    auto& nb = neighbors_[root];
    for (auto& x : nb) x = find(x);
    std::sort(nb.begin(), nb.end());
    nb.erase(std::unique(nb.begin(), nb.end()), nb.end());
    nb.erase(std::remove(nb.begin(), nb.end(), root), nb.end());
    std::int32_t best = -1;
    double best_diff = std::numeric_limits<double>::infinity();
    const double m = mean(root);
    for (std::int32_t other : nb) {
      const double d = std::abs(mean(other) - m);
      if (d < best_diff) {
        best_diff = d;
        best = other;
      }
    }
    return best;
  }

  std::int32_t merge(std::int32_t a, std::int32_t b) {
    a = find(a);
    b = find(b);
    if (a == b) return a;
    if (b < a) std::swap(a, b);
    parent_[b] = a;
    size_[a] += size_[b];
    sum_[a] += sum_[b];
    auto& dst = neighbors_[a];
    dst.insert(dst.end(), neighbors_[b].begin(), neighbors_[b].end());
    neighbors_[b].clear();
    neighbors_[b].shrink_to_fit();
    return a;
  }

  std::vector<std::int32_t> roots() {
    std::vector<std::int32_t> out;
    for (std::int32_t i = 0; i < static_cast<std::int32_t>(parent_.size()); ++i) {
      if (find(i) == i) out.push_back(i);
    }
    return out;
  }

 private:
  std::vector<std::int32_t> parent_;
  std::vector<std::int64_t> size_;
  std::vector<double> sum_;
  std::vector<std::vector<std::int32_t>> neighbors_;
};

// Makes every label 4-connected: the largest component of each label keeps
// it, every other component is absorbed by its most similar neighbor. When
// `tiny_divisor` > 0, regions smaller than mean_area / tiny_divisor are then
// absorbed as well. Labels in the result are component roots (not dense).
void enforce_connectivity(std::vector<std::int32_t>& labels, const std::vector<std::uint8_t>& valid,
                          const std::vector<double>& intensity, int width, int height, double tiny_divisor) {
  const Components comps = label_components(labels, valid, intensity, width, height);
  const auto ncomp = static_cast<std::int32_t>(comps.size.size());
  if (ncomp == 0) return;

  // Largest component per source label is the keeper; unassigned pixels
  // (source < 0) never keep.
  std::vector<std::uint8_t> keeper(ncomp, 0);
  {
    std::vector<std::int32_t> order(ncomp);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::int32_t a, std::int32_t b) {
      if (comps.source[a] != comps.source[b]) return comps.source[a] < comps.source[b];
      return comps.size[a] > comps.size[b];
    });
    std::int32_t last = std::numeric_limits<std::int32_t>::min();
    for (std::int32_t c : order) {
      if (comps.source[c] != last) {
        last = comps.source[c];
        if (comps.source[c] >= 0) keeper[c] = 1;
      }
    }
  }

  RegionMerger merger(comps);
  std::vector<std::uint8_t> has_keeper(keeper);
  bool absorbed = true;
  while (absorbed) {
    absorbed = false;
    for (std::int32_t c = 0; c < ncomp; ++c) {
      const std::int32_t root = merger.find(c);
      if (root != c || has_keeper[root]) continue;
      const std::int32_t target = merger.best_neighbor(root);
      if (target < 0) {
        has_keeper[root] = 1;  // isolated island: becomes its own region
        continue;
      }
      const std::int32_t merged = merger.merge(root, target);
      has_keeper[merged] = has_keeper[root] || has_keeper[target];
      absorbed = true;
    }
  }

  if (tiny_divisor > 0.0) {
    std::int64_t total = 0;
    for (auto s : comps.size) total += s;
    bool changed = true;
    while (changed) {
      changed = false;
      auto roots = merger.roots();
      if (roots.size() < 2) break;
      const double threshold = static_cast<double>(total) / static_cast<double>(roots.size()) / tiny_divisor;
      std::stable_sort(roots.begin(), roots.end(),
                       [&](std::int32_t a, std::int32_t b) { return merger.size(a) < merger.size(b); });
      for (std::int32_t r : roots) {
        if (merger.find(r) != r) continue;
        if (static_cast<double>(merger.size(r)) >= threshold) break;
        const std::int32_t target = merger.best_neighbor(r);
        if (target < 0) continue;
        merger.merge(r, target);
        changed = true;
      }
    }
  }

  for (std::size_t p = 0; p < labels.size(); ++p) {
    labels[p] = comps.id[p] >= 0 ? merger.find(comps.id[p]) : LabelMap::kInvalidLabel;
  }
}

// Splits `region` in two halves at the median of its principal-axis
// projection.
void split_region(std::vector<std::int32_t>& labels, std::int32_t region, std::int32_t new_label, int width) {
  std::vector<std::size_t> pixels;
  double mr = 0.0;
  double mc = 0.0;
  for (std::size_t p = 0; p < labels.size(); ++p) {
    if (labels[p] != region) continue;
    pixels.push_back(p);
    mr += static_cast<double>(p / width);
    mc += static_cast<double>(p % width);
  }
  const double n = static_cast<double>(pixels.size());
  mr /= n;
  mc /= n;
  double srr = 0.0;
  double scc = 0.0;
  double src = 0.0;
  for (std::size_t p : pixels) {
    const double dr = static_cast<double>(p / width) - mr;
    const double dc = static_cast<double>(p % width) - mc;
    srr += dr * dr;
    scc += dc * dc;
    src += dr * dc;
  }
  // Major eigenvector of [[srr, src], [src, scc]].
  const double theta = 0.5 * std::atan2(2.0 * src, srr - scc);
  const double ur = std::cos(theta);
  const double uc = std::sin(theta);
  std::vector<std::pair<double, std::size_t>> proj;
  proj.reserve(pixels.size());
  for (std::size_t p : pixels) {
    proj.emplace_back((static_cast<double>(p / width) - mr) * ur + (static_cast<double>(p % width) - mc) * uc, p);
  }
  std::sort(proj.begin(), proj.end());
  for (std::size_t i = proj.size() / 2; i < proj.size(); ++i) labels[proj[i].second] = new_label;
}

}  // namespace

void densify_labels(LabelMap& map) {
  std::int32_t next = 0;
  std::vector<std::int32_t> lookup;
  std::int32_t max_label = -1;
  for (auto l : map.labels) max_label = std::max(max_label, l);
  lookup.assign(static_cast<std::size_t>(max_label + 1), -1);
  for (auto& l : map.labels) {
    if (l < 0) continue;
    if (lookup[l] < 0) lookup[l] = next++;
    l = lookup[l];
  }
  map.count = next;
}

LabelMap LocalKMeansSuperpixels::segment(const RasterGrid& tile, const SuperpixelParams& params) const {
  if (params.n_init < 1) throw ValidationError("segment: n_init must be >= 1");
  if (params.max_iters < 0) throw ValidationError("segment: max_iters must be >= 0");
  if (!(params.spatial_weight >= 0.0)) throw ValidationError("segment: spatial_weight must be >= 0");
  const std::size_t valid_count = tile.valid_count();
  if (valid_count == 0) throw ValidationError("segment: tile has no valid pixels");

  const int width = tile.width;
  const int height = tile.height;
  const std::size_t npix = tile.size();
  const int target = static_cast<int>(std::min<std::size_t>(static_cast<std::size_t>(params.n_init), valid_count));

  double lo = std::numeric_limits<double>::infinity();
  double hi = -lo;
  for (std::size_t p = 0; p < npix; ++p) {
    if (!tile.valid[p]) continue;
    lo = std::min(lo, tile.values[p]);
    hi = std::max(hi, tile.values[p]);
  }
  const double range = hi > lo ? hi - lo : 1.0;
  std::vector<double> intensity(npix, 0.0);
  for (std::size_t p = 0; p < npix; ++p) {
    if (tile.valid[p]) intensity[p] = (tile.values[p] - lo) / range;
  }

  // Seed grid with at most `target` cells.
  const double step = std::sqrt(static_cast<double>(valid_count) / target);
  int nx = std::max(1, static_cast<int>(std::lround(width / step)));
  int ny = std::max(1, static_cast<int>(std::lround(height / step)));
  nx = std::min(nx, width);
  ny = std::min(ny, height);
  while (static_cast<long>(nx) * ny > target) {
    if (nx >= ny && nx > 1) {
      --nx;
    } else {
      --ny;
    }
  }
  std::vector<Center> centers;
  for (int gy = 0; gy < ny; ++gy) {
    const int r0 = gy * height / ny;
    const int r1 = (gy + 1) * height / ny;
    for (int gx = 0; gx < nx; ++gx) {
      const int c0 = gx * width / nx;
      const int c1 = (gx + 1) * width / nx;
      const double cr = 0.5 * (r0 + r1 - 1);
      const double cc = 0.5 * (c0 + c1 - 1);
      double best = std::numeric_limits<double>::infinity();
      std::size_t best_p = npix;
      for (int r = r0; r < r1; ++r) {
        for (int c = c0; c < c1; ++c) {
          const std::size_t p = tile.index(r, c);
          if (!tile.valid[p]) continue;
          const double d = (r - cr) * (r - cr) + (c - cc) * (c - cc);
          if (d < best) {
            best = d;
            best_p = p;
          }
        }
      }
      if (best_p == npix) continue;
      centers.push_back({intensity[best_p], static_cast<double>(best_p / width), static_cast<double>(best_p % width)});
    }
  }

  const double cell = std::max(static_cast<double>(height) / ny, static_cast<double>(width) / nx);
  const int reach = static_cast<int>(std::ceil(cell));
  const double spatial = params.spatial_weight * params.spatial_weight / (cell * cell);

  std::vector<std::int32_t> labels(npix, -1);
  std::vector<double> dist(npix);
  std::vector<double> acc_i(centers.size());
  std::vector<double> acc_r(centers.size());
  std::vector<double> acc_c(centers.size());
  std::vector<std::int64_t> acc_n(centers.size());
  for (int iter = 0; iter < std::max(1, params.max_iters); ++iter) {
    std::fill(dist.begin(), dist.end(), std::numeric_limits<double>::infinity());
    std::vector<std::int32_t> next(npix, -1);
    for (std::size_t k = 0; k < centers.size(); ++k) {
      const Center& ctr = centers[k];
      const int rlo = std::max(0, static_cast<int>(std::floor(ctr.row)) - reach);
      const int rhi = std::min(height - 1, static_cast<int>(std::ceil(ctr.row)) + reach);
      const int clo = std::max(0, static_cast<int>(std::floor(ctr.col)) - reach);
      const int chi = std::min(width - 1, static_cast<int>(std::ceil(ctr.col)) + reach);
      for (int r = rlo; r <= rhi; ++r) {
        for (int c = clo; c <= chi; ++c) {
          const std::size_t p = tile.index(r, c);
          if (!tile.valid[p]) continue;
          const double di = intensity[p] - ctr.intensity;
          const double dr = r - ctr.row;
          const double dc = c - ctr.col;
          const double d = di * di + spatial * (dr * dr + dc * dc);
          if (d < dist[p]) {
            dist[p] = d;
            next[p] = static_cast<std::int32_t>(k);
          }
        }
      }
    }
    std::size_t changed = 0;
    for (std::size_t p = 0; p < npix; ++p) {
      if (next[p] < 0) next[p] = labels[p];  // out of every window: keep
      if (next[p] != labels[p]) ++changed;
    }
    labels.swap(next);
    if (changed == 0) break;
    std::fill(acc_i.begin(), acc_i.end(), 0.0);
    std::fill(acc_r.begin(), acc_r.end(), 0.0);
    std::fill(acc_c.begin(), acc_c.end(), 0.0);
    std::fill(acc_n.begin(), acc_n.end(), 0);
    for (std::size_t p = 0; p < npix; ++p) {
      const auto k = labels[p];
      if (k < 0) continue;
      acc_i[k] += intensity[p];
      acc_r[k] += static_cast<double>(p / width);
      acc_c[k] += static_cast<double>(p % width);
      ++acc_n[k];
    }
    for (std::size_t k = 0; k < centers.size(); ++k) {
      if (acc_n[k] == 0) continue;
      const double inv = 1.0 / static_cast<double>(acc_n[k]);
      centers[k] = {acc_i[k] * inv, acc_r[k] * inv, acc_c[k] * inv};
    }
  }

  enforce_connectivity(labels, tile.valid, intensity, width, height, params.tiny_divisor);

  // Split oversize regions while staying within the region budget.
  LabelMap out{width, height, std::move(labels), 0};
  densify_labels(out);
  for (int guard = 0; guard < target; ++guard) {
    if (out.count >= target) break;
    std::vector<std::int64_t> area(out.count, 0);
    for (auto l : out.labels) {
      if (l >= 0) ++area[l];
    }
    const auto largest = static_cast<std::int32_t>(std::max_element(area.begin(), area.end()) - area.begin());
    const double mean_area = static_cast<double>(valid_count) / out.count;
    if (static_cast<double>(area[largest]) <= params.max_area_ratio * mean_area) break;
    split_region(out.labels, largest, out.count, width);
    enforce_connectivity(out.labels, tile.valid, intensity, width, height, 0.0);
    densify_labels(out);
  }
  return out;
}

LabelMap segment(const RasterGrid& tile, const SuperpixelParams& params) {
  return LocalKMeansSuperpixels{}.segment(tile, params);
}

BinaryMask boundary_map(const LabelMap& map) {
  BinaryMask out(map.width, map.height);
  for (int r = 0; r < map.height; ++r) {
    for (int c = 0; c < map.width; ++c) {
      const auto l = map.at(r, c);
      for (int k = 0; k < 4; ++k) {
        const int rr = r + kDr[k];
        const int cc = c + kDc[k];
        if (rr < 0 || cc < 0 || rr >= map.height || cc >= map.width) continue;
        if (map.at(rr, cc) != l) {
          out.bits[out.index(r, c)] = 1;
          break;
        }
      }
    }
  }
  return out;
}

void save_label_map(const LabelMap& map, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error(fmt::format("cannot write {}", path.string()));
  le::write(out, static_cast<std::uint32_t>(map.width));
  le::write(out, static_cast<std::uint32_t>(map.height));
  le::write(out, static_cast<std::uint32_t>(map.count));
  for (auto l : map.labels) le::write(out, l);
  if (!out) throw std::runtime_error(fmt::format("write failed: {}", path.string()));
}

LabelMap load_label_map(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error(fmt::format("cannot open {}", path.string()));
  std::uint32_t w = 0;
  std::uint32_t h = 0;
  std::uint32_t k = 0;
  if (!le::read(in, w) || !le::read(in, h) || !le::read(in, k)) {
    throw ValidationError(fmt::format("{}: malformed label map header", path.string()));
  }
  if (std::filesystem::file_size(path) != 12 + 4ULL * w * h) {
    throw ValidationError(fmt::format("{}: label map payload size mismatch", path.string()));
  }
  LabelMap map{static_cast<int>(w), static_cast<int>(h), std::vector<std::int32_t>(static_cast<std::size_t>(w) * h),
               static_cast<int>(k)};
  for (auto& l : map.labels) {
    le::read(in, l);
    if (l < LabelMap::kInvalidLabel || l >= static_cast<std::int32_t>(k)) {
      throw ValidationError(fmt::format("{}: label out of range", path.string()));
    }
  }
  return map;
}

}  // namespace darkspot
