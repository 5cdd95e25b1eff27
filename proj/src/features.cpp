#include "darkspot/features.hpp"

#include "darkspot/shape.hpp"
#include "darkspot/util.hpp"

#include <fmt/core.h>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <limits>
#include <map>
#include <numbers>
#include <sstream>

namespace darkspot {

std::string_view category_name(FeatureCategory category) {
  switch (category) {
    case FeatureCategory::kGeometrical:
      return "geometrical";
    case FeatureCategory::kPhysical:
      return "physical";
    case FeatureCategory::kTextural:
      return "textural";
  }
  return "unknown";
}

std::vector<FeatureSpec> feature_catalogue(const FeatureOptions& options) {
  using C = FeatureCategory;
  const C g = C::kGeometrical;
  const C p = C::kPhysical;
  const C t = C::kTextural;
  return {
      {"A", "Area", g, 1},
      {"P", "Perimeter", g, 1},
      {"P/A", "Perimeter to area ratio", g, 1},
      {"A/P", "Area to perimeter ratio", g, 1},
      {"E", "Elongation", g, 1},
      {"Maxx/P", "Major axis to perimeter ratio", g, 1},
      {"Cp1", "Complexity1", g, 1},
      {"Cp2", "Complexity2", g, 1},
      {"C", "Circularity", g, 1},
      {"S", "Spreading", g, 1},
      {"Sw", "Superpixel width", g, 1},
      {"Cu", "Curvature", g, 1},
      {"Hu", "Hu moments", g, 7},
      {"Fs", "Flusser and Suk moments", g, 4},
      {"T", "Thickness", g, 1},
      {"Shc", "Shape connectivity", g, 1},
      {"Ff", "Form factor", g, 1},
      {"L/W", "Length to width ratio", g, 1},
      {"Si", "Shape index", g, 1},
      {"N", "Narrowness", g, 1},
      {"Rs", "Rectangular saturation", g, 1},
      {"Mr", "Marking ratio", g, 1},
      {"Sd", "Solidity", g, 1},
      {"IABPm", "Mean of the interior angles based on bounding polygons", g, 1},
      {"Vas", "Var_area_superpixel", t, 1},
      {"H", "Mean Haralick", t, 6},
      {"Om", "Object mean", p, 1},
      {"Osd", "Object standard deviation", p, 1},
      {"Bm", "Background mean", p, 1},
      {"Bsd", "Background standard deviation", p, 1},
      {"Crm", "Mean of the contrast ratio", p, 1},
      {"Crstd", "Standard deviation of the contrast ratio", p, 1},
      {"Opm", "Object power to mean", p, 1},
      {"Bpm", "Background power to mean", p, 1},
      {"Opm/Bpm", "Ratio of the power to mean ratios", p, 1},
      {"Cmax", "Max contrast", p, 1},
      {"Cm", "Mean contrast", p, 1},
      {"RISDI", "RISDI", p, 1},
      {"RISDO", "RISDO", p, 1},
      {"IOR", "IOR", p, 1},
      {"Gm", "Gradient mean", p, 1},
      {"Gsd", "Gradient standard deviation", p, 1},
      {"Gmax", "Max. gradient", p, 1},
      {"Obg", "Object border gradient", p, 1},
      {"Spm", "Surrounding Power-to-mean ratio", p, 1},
      {"RIIA", "RIIA", p, 1},
      {"EFD", "Elliptic Fourier Descriptors", g, 2 * options.efd_harmonics},
      {"IABPsd", "Standard deviation of the interior angles based on bounding polygons", g, 1},
  };
}

int feature_dimension(const FeatureOptions& options) {
  int d = 0;
  for (const auto& spec : feature_catalogue(options)) d += spec.dims;
  return d;
}

std::vector<std::string> feature_column_names(const FeatureOptions& options) {
  std::vector<std::string> names;
  for (const auto& spec : feature_catalogue(options)) {
    for (int i = 0; i < spec.dims; ++i) names.push_back(fmt::format("{}[{}]", spec.code, i));
  }
  return names;
}

FeatureCategory column_category(std::string_view column, const FeatureOptions& options) {
  const auto bracket = column.find('[');
  const std::string_view code = column.substr(0, bracket);
  for (const auto& spec : feature_catalogue(options)) {
    if (spec.code == code) return spec.category;
  }
  throw ValidationError(fmt::format("unknown feature column '{}'", column));
}

namespace {

struct Stats {
  double mean = 0.0;
  double std = 0.0;
  std::size_t n = 0;
};

template <typename Range, typename Fn>
Stats two_pass(const Range& items, Fn value) {
  Stats s;
  for (const auto& it : items) {
    s.mean += value(it);
    ++s.n;
  }
  if (s.n == 0) return s;
  s.mean /= static_cast<double>(s.n);
  double var = 0.0;
  for (const auto& it : items) {
    const double d = value(it) - s.mean;
    var += d * d;
  }
  s.std = std::sqrt(var / static_cast<double>(s.n));
  return s;
}

double safe_ratio(double num, double den, FeatureDiagnostics* diag) {
  if (den == 0.0) {
    if (diag) ++diag->zero_mean;
    return 0.0;
  }
  return num / den;
}

}  // namespace

std::vector<double> sobel_magnitude(const RasterGrid& image) {
  std::vector<double> out(image.size(), 0.0);
  for (int r = 0; r < image.height; ++r) {
    for (int c = 0; c < image.width; ++c) {
      if (!image.is_valid(r, c)) continue;
      const double centre = image.at(r, c);
      auto v = [&](int dr, int dc) {
        const int rr = r + dr;
        const int cc = c + dc;
        return image.contains(rr, cc) && image.is_valid(rr, cc) ? image.at(rr, cc) : centre;
      };
      const double gx = (v(-1, 1) + 2.0 * v(0, 1) + v(1, 1)) - (v(-1, -1) + 2.0 * v(0, -1) + v(1, -1));
      const double gy = (v(1, -1) + 2.0 * v(1, 0) + v(1, 1)) - (v(-1, -1) + 2.0 * v(-1, 0) + v(-1, 1));
      out[image.index(r, c)] = std::sqrt(gx * gx + gy * gy);
    }
  }
  return out;
}

TileContext make_tile_context(const RasterGrid& image) {
  TileContext ctx;
  ctx.image = &image;
  ctx.gradient = sobel_magnitude(image);
  ctx.lo = std::numeric_limits<double>::infinity();
  ctx.hi = -ctx.lo;
  std::vector<double> vals;
  for (std::size_t i = 0; i < image.size(); ++i) {
    if (!image.valid[i]) continue;
    ctx.lo = std::min(ctx.lo, image.values[i]);
    ctx.hi = std::max(ctx.hi, image.values[i]);
    vals.push_back(image.values[i]);
  }
  if (vals.empty()) ctx.lo = ctx.hi = 0.0;
  const Stats s = two_pass(vals, [](double x) { return x; });
  ctx.tile_mean = s.mean;
  ctx.tile_std = s.std;
  return ctx;
}

FeatureList compute_geometric(std::span<const PixelCoord> pixels, const FeatureOptions& options) {
  const shape::RegionMask mask = shape::rasterize(pixels);
  const double area = static_cast<double>(pixels.size());
  const double perim = static_cast<double>(shape::boundary_pixels(mask).size());
  const shape::Moments mom = shape::central_moments(mask);
  const shape::Ellipse ell = shape::moment_ellipse(mom);
  const auto contour = shape::outer_contour(mask);
  const auto hull = shape::convex_hull_of_pixels(mask);
  const double hull_area = 0.5 * static_cast<double>(std::abs(shape::twice_area(hull)));
  const auto angles = shape::interior_angles(hull);
  const Stats angle_stats = two_pass(angles, [](double x) { return x; });

  // Extents along the principal axes.
  double umin = std::numeric_limits<double>::infinity();
  double umax = -umin;
  double vmin = umin;
  double vmax = -umin;
  const double ca = std::cos(ell.angle);
  const double sa = std::sin(ell.angle);
  int rmin = std::numeric_limits<int>::max();
  int rmax = std::numeric_limits<int>::min();
  int cmin = rmin;
  int cmax = rmax;
  for (int r = 0; r < mask.rows; ++r) {
    for (int c = 0; c < mask.cols; ++c) {
      if (!mask.at(r, c)) continue;
      const double u = c * ca + r * sa;
      const double v = -c * sa + r * ca;
      umin = std::min(umin, u);
      umax = std::max(umax, u);
      vmin = std::min(vmin, v);
      vmax = std::max(vmax, v);
      rmin = std::min(rmin, r);
      rmax = std::max(rmax, r);
      cmin = std::min(cmin, c);
      cmax = std::max(cmax, c);
    }
  }
  const double len_u = umax - umin + 1.0;
  const double len_v = vmax - vmin + 1.0;
  const double bbox_area = static_cast<double>(rmax - rmin + 1) * static_cast<double>(cmax - cmin + 1);

  const auto hu = shape::hu_invariants(mom);
  const auto fs = shape::affine_invariants(mom);
  const double pi = std::numbers::pi;

  return {
      {"A", {area}},
      {"P", {perim}},
      {"P/A", {perim / area}},
      {"A/P", {area / perim}},
      {"E", {ell.major / ell.minor}},
      {"Maxx/P", {ell.major / perim}},
      {"Cp1", {perim / (2.0 * std::sqrt(pi * area))}},
      {"Cp2", {perim * perim / area}},
      {"C", {4.0 * pi * area / (perim * perim)}},
      {"S", {ell.minor / ell.major}},
      {"Sw", {2.0 * area / perim}},
      {"Cu", {shape::mean_turning_angle(contour)}},
      {"Hu", {hu.begin(), hu.end()}},
      {"Fs", {fs.begin(), fs.end()}},
      {"T", {2.0 * shape::max_inscribed_radius(mask)}},
      {"Shc", {area / (area - perim + 1.0)}},
      {"Ff", {perim * perim / (4.0 * pi * area)}},
      {"L/W", {std::max(len_u, len_v) / std::min(len_u, len_v)}},
      {"Si", {perim / (4.0 * std::sqrt(area))}},
      {"N", {area / (ell.major * ell.major)}},
      {"Rs", {area / bbox_area}},
      {"Mr", {area / static_cast<double>(shape::closing_area(mask))}},
      {"Sd", {hull_area > 0.0 ? area / hull_area : 1.0}},
      {"IABPm", {angle_stats.mean}},
      {"EFD", shape::elliptic_fourier_amplitudes(contour, options.efd_harmonics)},
      {"IABPsd", {angle_stats.std}},
  };
}

FeatureList compute_physical(int node, const RegionGraph& graph, const TileContext& ctx, FeatureDiagnostics* diag) {
  const RasterGrid& img = *ctx.image;
  const auto& pixels = graph.node_pixels.at(node);
  auto value = [&](const PixelCoord& p) { return img.at(p.row, p.col); };
  auto grad = [&](const PixelCoord& p) { return ctx.gradient[img.index(p.row, p.col)]; };

  const Stats obj = two_pass(pixels, value);
  double region_min = std::numeric_limits<double>::infinity();
  for (const auto& p : pixels) region_min = std::min(region_min, value(p));

  Stats bg;
  if (graph.neighbors[node].empty()) {
    if (diag) ++diag->isolated;
    bg.mean = ctx.tile_mean;
    bg.std = ctx.tile_std;
  } else {
    double sum = 0.0;
    std::size_t n = 0;
    for (int u : graph.neighbors[node]) {
      for (const auto& p : graph.node_pixels[u]) {
        sum += value(p);
        ++n;
      }
    }
    bg.mean = sum / static_cast<double>(n);
    double var = 0.0;
    for (int u : graph.neighbors[node]) {
      for (const auto& p : graph.node_pixels[u]) var += (value(p) - bg.mean) * (value(p) - bg.mean);
    }
    bg.std = std::sqrt(var / static_cast<double>(n));
    bg.n = n;
  }

  // Per-pixel contrast ratio background / object.
  std::vector<double> ratios;
  for (const auto& p : pixels) {
    if (value(p) > 0.0) ratios.push_back(bg.mean / value(p));
  }
  if (ratios.empty() && diag) ++diag->zero_mean;
  const Stats cr = two_pass(ratios, [](double x) { return x; });

  const Stats g = two_pass(pixels, grad);
  double gmax = 0.0;
  for (const auto& p : pixels) gmax = std::max(gmax, grad(p));

  // Boundary pixels of the region and the one-pixel outer ring around it.
  const shape::RegionMask mask = shape::rasterize(pixels);
  std::vector<double> border_grad;
  std::vector<double> ring;
  std::vector<std::uint8_t> seen(mask.bits.size(), 0);
  constexpr int kDr[4] = {-1, 1, 0, 0};
  constexpr int kDc[4] = {0, 0, -1, 1};
  for (const auto& p : pixels) {
    const int mr = p.row - mask.row0 + 1;
    const int mc = p.col - mask.col0 + 1;
    bool border = false;
    for (int k = 0; k < 4; ++k) {
      if (mask.at(mr + kDr[k], mc + kDc[k])) continue;
      border = true;
      const int tr = p.row + kDr[k];
      const int tc = p.col + kDc[k];
      auto& s = seen[static_cast<std::size_t>(mr + kDr[k]) * mask.cols + (mc + kDc[k])];
      if (s || !img.contains(tr, tc) || !img.is_valid(tr, tc)) continue;
      s = 1;
      ring.push_back(img.at(tr, tc));
    }
    if (border) border_grad.push_back(grad(p));
  }
  const Stats border = two_pass(border_grad, [](double x) { return x; });
  Stats surround = two_pass(ring, [](double x) { return x; });
  if (ring.empty()) {
    surround.mean = ctx.tile_mean;
    surround.std = ctx.tile_std;
  }

  const double opm = safe_ratio(obj.std, obj.mean, diag);
  const double bpm = safe_ratio(bg.std, bg.mean, diag);
  return {
      {"Om", {obj.mean}},
      {"Osd", {obj.std}},
      {"Bm", {bg.mean}},
      {"Bsd", {bg.std}},
      {"Crm", {cr.mean}},
      {"Crstd", {cr.std}},
      {"Opm", {opm}},
      {"Bpm", {bpm}},
      {"Opm/Bpm", {safe_ratio(opm, bpm, diag)}},
      {"Cmax", {bg.mean - region_min}},
      {"Cm", {bg.mean - obj.mean}},
      {"RISDI", {safe_ratio(obj.std, obj.mean, diag)}},
      {"RISDO", {safe_ratio(bg.std, obj.mean, diag)}},
      {"IOR", {safe_ratio(obj.mean, bg.mean, diag)}},
      {"Gm", {g.mean}},
      {"Gsd", {g.std}},
      {"Gmax", {gmax}},
      {"Obg", {border.mean}},
      {"Spm", {safe_ratio(surround.std, surround.mean, diag)}},
      {"RIIA", {safe_ratio(bg.mean - obj.mean, bg.mean, diag)}},
  };
}

int quantize(double value, double lo, double hi, int n_levels) {
  if (!(hi > lo)) return 0;
  const int q = static_cast<int>(std::floor(n_levels * (value - lo) / (hi - lo)));
  return std::clamp(q, 0, n_levels - 1);
}

bool cooccurrence(std::span<const PixelCoord> pixels, std::span<const int> levels, int width, int height,
                  int n_levels, int dr, int dc, std::vector<double>& glcm) {
  glcm.assign(static_cast<std::size_t>(n_levels) * n_levels, 0.0);
  const shape::RegionMask mask = shape::rasterize(pixels);
  std::size_t pairs = 0;
  for (const auto& p : pixels) {
    const int rr = p.row + dr;
    const int cc = p.col + dc;
    if (rr < 0 || cc < 0 || rr >= height || cc >= width) continue;
    if (!mask.at(rr - mask.row0 + 1, cc - mask.col0 + 1)) continue;
    const int a = levels[static_cast<std::size_t>(p.row) * width + p.col];
    const int b = levels[static_cast<std::size_t>(rr) * width + cc];
    glcm[static_cast<std::size_t>(a) * n_levels + b] += 1.0;
    glcm[static_cast<std::size_t>(b) * n_levels + a] += 1.0;
    ++pairs;
  }
  if (pairs == 0) return false;
  const double total = 2.0 * static_cast<double>(pairs);
  for (double& v : glcm) v /= total;
  return true;
}

FeatureList compute_textural(int node, const RegionGraph& graph, const TileContext& ctx, const FeatureOptions& options,
                             FeatureDiagnostics* diag) {
  const RasterGrid& img = *ctx.image;
  const auto& pixels = graph.node_pixels.at(node);

  std::vector<double> areas{static_cast<double>(graph.area(node))};
  for (int u : graph.neighbors[node]) areas.push_back(static_cast<double>(graph.area(u)));
  const Stats area_stats = two_pass(areas, [](double x) { return x; });

  std::vector<double> haralick(6, 0.0);
  const int q = options.glcm_levels;
  bool any = false;
  if (pixels.size() >= 2) {
    // Levels are only needed on the region's pixels.
    std::vector<int> levels(img.size(), 0);
    for (const auto& p : pixels) levels[img.index(p.row, p.col)] = quantize(img.at(p.row, p.col), ctx.lo, ctx.hi, q);
    constexpr int kOffsets[4][2] = {{0, 1}, {1, 0}, {1, 1}, {1, -1}};
    std::vector<double> glcm;
    int used = 0;
    for (const auto& off : kOffsets) {
      if (!cooccurrence(pixels, levels, img.width, img.height, q, off[0], off[1], glcm)) continue;
      ++used;
      double mu = 0.0;
      for (int i = 0; i < q; ++i) {
        for (int j = 0; j < q; ++j) mu += i * glcm[static_cast<std::size_t>(i) * q + j];
      }
      double var = 0.0;
      for (int i = 0; i < q; ++i) {
        for (int j = 0; j < q; ++j) var += (i - mu) * (i - mu) * glcm[static_cast<std::size_t>(i) * q + j];
      }
      double contrast = 0.0, cov = 0.0, energy = 0.0, entropy = 0.0, homog = 0.0, dissim = 0.0;
      for (int i = 0; i < q; ++i) {
        for (int j = 0; j < q; ++j) {
          const double pij = glcm[static_cast<std::size_t>(i) * q + j];
          if (pij == 0.0) continue;
          const double d = i - j;
          contrast += d * d * pij;
          cov += (i - mu) * (j - mu) * pij;
          energy += pij * pij;
          entropy -= pij * std::log(pij);
          homog += pij / (1.0 + d * d);
          dissim += std::abs(d) * pij;
        }
      }
      // A single-level matrix has zero variance; it is perfectly correlated.
      const double corr = var > 1e-15 ? cov / var : 1.0;
      haralick[0] += contrast;
      haralick[1] += corr;
      haralick[2] += energy;
      haralick[3] += entropy;
      haralick[4] += homog;
      haralick[5] += dissim;
    }
    if (used > 0) {
      any = true;
      for (double& h : haralick) h /= used;
    }
  }
  if (!any) {
    std::fill(haralick.begin(), haralick.end(), 0.0);
    if (diag) ++diag->texture_fallback;
  }
  return {
      {"Vas", {area_stats.std * area_stats.std}},
      {"H", haralick},
  };
}

FeatureMatrix assemble_matrix(const RegionGraph& graph, const RasterGrid& image, const FeatureOptions& options,
                              FeatureDiagnostics* diag) {
  if (image.width != graph.width || image.height != graph.height) {
    throw ValidationError("assemble_matrix: image and graph dimensions differ");
  }
  const auto catalogue = feature_catalogue(options);
  FeatureMatrix m;
  m.names = feature_column_names(options);
  m.rows = static_cast<std::size_t>(graph.node_count);
  m.cols = m.names.size();
  m.values.reserve(m.rows * m.cols);
  const TileContext ctx = make_tile_context(image);
  for (int v = 0; v < graph.node_count; ++v) {
    std::map<std::string, std::vector<double>, std::less<>> by_code;
    for (auto& f : compute_geometric(graph.node_pixels[v], options)) by_code[f.code] = std::move(f.values);
    for (auto& f : compute_textural(v, graph, ctx, options, diag)) by_code[f.code] = std::move(f.values);
    for (auto& f : compute_physical(v, graph, ctx, diag)) by_code[f.code] = std::move(f.values);
    for (const auto& spec : catalogue) {
      const auto it = by_code.find(spec.code);
      if (it == by_code.end() || static_cast<int>(it->second.size()) != spec.dims) {
        throw std::logic_error(fmt::format("feature {} missing or wrong size", spec.code));
      }
      for (double x : it->second) m.values.push_back(std::isfinite(x) ? x : 0.0);
    }
  }
  return m;
}

Normalizer fit_normalizer(const FeatureMatrix& train) { return fit_normalizer(std::span<const FeatureMatrix>(&train, 1)); }

Normalizer fit_normalizer(std::span<const FeatureMatrix> train) {
  if (train.empty()) throw ValidationError("fit_normalizer: no training data");
  Normalizer s;
  s.names = train.front().names;
  const std::size_t cols = train.front().cols;
  s.min.assign(cols, std::numeric_limits<double>::infinity());
  s.max.assign(cols, -std::numeric_limits<double>::infinity());
  std::size_t rows = 0;
  for (const auto& m : train) {
    if (m.cols != cols) throw ValidationError("fit_normalizer: column count mismatch");
    rows += m.rows;
    for (std::size_t r = 0; r < m.rows; ++r) {
      for (std::size_t c = 0; c < cols; ++c) {
        s.min[c] = std::min(s.min[c], m.at(r, c));
        s.max[c] = std::max(s.max[c], m.at(r, c));
      }
    }
  }
  if (rows == 0) throw ValidationError("fit_normalizer: no training rows");
  return s;
}

FeatureMatrix apply_normalizer(const FeatureMatrix& matrix, const Normalizer& stats) {
  if (stats.min.size() != matrix.cols) throw ValidationError("apply_normalizer: column count mismatch");
  FeatureMatrix out = matrix;
  for (std::size_t r = 0; r < out.rows; ++r) {
    for (std::size_t c = 0; c < out.cols; ++c) {
      const double span = stats.max[c] - stats.min[c];
      double& x = out.at(r, c);
      x = span > 0.0 ? std::clamp((x - stats.min[c]) / span, 0.0, 1.0) : 0.0;
    }
  }
  return out;
}

FeatureMatrix select_columns(const FeatureMatrix& matrix, std::span<const std::size_t> columns) {
  FeatureMatrix out;
  out.rows = matrix.rows;
  out.cols = columns.size();
  out.values.reserve(out.rows * out.cols);
  for (std::size_t c : columns) out.names.push_back(matrix.names.at(c));
  for (std::size_t r = 0; r < matrix.rows; ++r) {
    for (std::size_t c : columns) out.values.push_back(matrix.at(r, c));
  }
  return out;
}

std::vector<std::size_t> column_indices(const FeatureMatrix& matrix, std::span<const std::string> names) {
  std::vector<std::size_t> out;
  for (const auto& n : names) {
    const auto it = std::find(matrix.names.begin(), matrix.names.end(), n);
    if (it == matrix.names.end()) throw ValidationError(fmt::format("feature column '{}' not found", n));
    out.push_back(static_cast<std::size_t>(it - matrix.names.begin()));
  }
  return out;
}

namespace {

double parse_double(const std::string& field) {
  double v = 0.0;
  const char* end = field.data() + field.size();
  const auto res = std::from_chars(field.data(), end, v);
  if (res.ec != std::errc() || res.ptr != end) throw ValidationError(fmt::format("bad number '{}'", field));
  return v;
}

std::vector<std::string> csv_lines(const std::string& text) {
  std::vector<std::string> lines;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty()) lines.push_back(line);
  }
  return lines;
}

}  // namespace

std::string feature_matrix_csv(const FeatureMatrix& matrix) {
  std::string out;
  for (std::size_t c = 0; c < matrix.cols; ++c) {
    out += c ? "," : "";
    out += matrix.names[c];
  }
  out += '\n';
  for (std::size_t r = 0; r < matrix.rows; ++r) {
    for (std::size_t c = 0; c < matrix.cols; ++c) {
      out += c ? "," : "";
      out += fmt::format("{}", matrix.at(r, c));
    }
    out += '\n';
  }
  return out;
}

FeatureMatrix parse_feature_matrix_csv(const std::string& text) {
  const auto lines = csv_lines(text);
  if (lines.empty()) throw ValidationError("feature CSV: missing header");
  FeatureMatrix m;
  m.names = split(lines[0], ',');
  m.cols = m.names.size();
  for (std::size_t i = 1; i < lines.size(); ++i) {
    const auto fields = split(lines[i], ',');
    if (fields.size() != m.cols) throw ValidationError(fmt::format("feature CSV: row {} has wrong width", i));
    for (const auto& f : fields) m.values.push_back(parse_double(f));
    ++m.rows;
  }
  return m;
}

std::string normalizer_csv(const Normalizer& stats) {
  std::string out = "stat";
  for (const auto& n : stats.names) out += "," + n;
  out += "\nmin";
  for (double v : stats.min) out += fmt::format(",{}", v);
  out += "\nmax";
  for (double v : stats.max) out += fmt::format(",{}", v);
  out += '\n';
  return out;
}

Normalizer parse_normalizer_csv(const std::string& text) {
  const auto lines = csv_lines(text);
  if (lines.size() != 3) throw ValidationError("normalizer CSV: expected header, min and max rows");
  Normalizer s;
  auto header = split(lines[0], ',');
  auto mins = split(lines[1], ',');
  auto maxs = split(lines[2], ',');
  if (header.size() != mins.size() || header.size() != maxs.size() || mins[0] != "min" || maxs[0] != "max") {
    throw ValidationError("normalizer CSV: malformed rows");
  }
  s.names.assign(header.begin() + 1, header.end());
  for (std::size_t i = 1; i < mins.size(); ++i) {
    s.min.push_back(parse_double(mins[i]));
    s.max.push_back(parse_double(maxs[i]));
  }
  return s;
}

}  // namespace darkspot
