#pragma once

#include "darkspot/raster.hpp"
#include "darkspot/region_graph.hpp"

#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace darkspot {

enum class FeatureCategory { kGeometrical, kPhysical, kTextural };

std::string_view category_name(FeatureCategory category);

/// One row of the superpixel feature catalogue.
struct FeatureSpec {
  std::string_view code;
  std::string_view name;
  FeatureCategory category;
  int dims;
};

struct FeatureOptions {
  /// Grey levels for the co-occurrence matrices.
  int glcm_levels = 8;
  /// Elliptic Fourier harmonics; each contributes two columns.
  int efd_harmonics = 5;
};

/// The 48-entry catalogue in column order. Multi-valued entries (Hu, Fs, H,
/// EFD) expand into `dims` columns named "code[i]".
std::vector<FeatureSpec> feature_catalogue(const FeatureOptions& options = {});
int feature_dimension(const FeatureOptions& options = {});
std::vector<std::string> feature_column_names(const FeatureOptions& options = {});
/// Category of an expanded column name such as "Hu[3]".
FeatureCategory column_category(std::string_view column, const FeatureOptions& options = {});

struct NamedFeature {
  std::string code;
  std::vector<double> values;
};
using FeatureList = std::vector<NamedFeature>;

/// Counts of regions that hit a documented fallback.
struct FeatureDiagnostics {
  int zero_mean = 0;         // power-to-mean or ratio with zero denominator
  int isolated = 0;          // no neighbors: background = whole tile
  int texture_fallback = 0;  // < 2 pixels or no co-occurring pairs
};

/// Per-tile data shared by all nodes: image, Sobel magnitude, intensity range
/// and whole-tile statistics.
struct TileContext {
  const RasterGrid* image = nullptr;
  std::vector<double> gradient;
  double lo = 0.0;
  double hi = 0.0;
  double tile_mean = 0.0;
  double tile_std = 0.0;
};

TileContext make_tile_context(const RasterGrid& image);

/// Sobel gradient magnitude. Off-tile and invalid neighbors take the centre
/// pixel's value.
std::vector<double> sobel_magnitude(const RasterGrid& image);

/// Shape features; depend only on the pixel set.
FeatureList compute_geometric(std::span<const PixelCoord> pixels, const FeatureOptions& options = {});

/// Intensity features. Background is the union of the pixels of all
/// graph-adjacent nodes (whole valid tile for isolated nodes).
FeatureList compute_physical(int node, const RegionGraph& graph, const TileContext& ctx,
                             FeatureDiagnostics* diag = nullptr);

/// Vas (variance of node and neighbor areas) and the six direction-averaged
/// Haralick statistics: contrast, correlation, energy, entropy, homogeneity,
/// dissimilarity.
FeatureList compute_textural(int node, const RegionGraph& graph, const TileContext& ctx,
                             const FeatureOptions& options = {}, FeatureDiagnostics* diag = nullptr);

/// Symmetric, normalized grey-level co-occurrence matrix of quantized levels
/// for pixel pairs (p, p + offset) with both ends inside the region.
/// Returns false if no pair exists.
bool cooccurrence(std::span<const PixelCoord> pixels, std::span<const int> levels, int width, int height,
                  int n_levels, int dr, int dc, std::vector<double>& glcm);

/// Quantizes a value into [0, n_levels) over [lo, hi].
int quantize(double value, double lo, double hi, int n_levels);

struct FeatureMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> values;
  std::vector<std::string> names;

  [[nodiscard]] double at(std::size_t r, std::size_t c) const { return values[r * cols + c]; }
  double& at(std::size_t r, std::size_t c) { return values[r * cols + c]; }
  [[nodiscard]] std::span<const double> row(std::size_t r) const { return {values.data() + r * cols, cols}; }
};

FeatureMatrix assemble_matrix(const RegionGraph& graph, const RasterGrid& image, const FeatureOptions& options = {},
                              FeatureDiagnostics* diag = nullptr);

/// Column-wise min/max from training data.
struct Normalizer {
  std::vector<std::string> names;
  std::vector<double> min;
  std::vector<double> max;
};

Normalizer fit_normalizer(const FeatureMatrix& train);
Normalizer fit_normalizer(std::span<const FeatureMatrix> train);
/// (x - min) / (max - min), clamped to [0, 1]; constant columns map to 0.
FeatureMatrix apply_normalizer(const FeatureMatrix& matrix, const Normalizer& stats);

FeatureMatrix select_columns(const FeatureMatrix& matrix, std::span<const std::size_t> columns);
/// Column indices of `names` in `matrix`; throws if any is missing.
std::vector<std::size_t> column_indices(const FeatureMatrix& matrix, std::span<const std::string> names);

/// CSV with a header row of column names; values printed round-trip exact.
std::string feature_matrix_csv(const FeatureMatrix& matrix);
FeatureMatrix parse_feature_matrix_csv(const std::string& text);
/// Header row of names, then a "min" row and a "max" row.
std::string normalizer_csv(const Normalizer& stats);
Normalizer parse_normalizer_csv(const std::string& text);

}  // namespace darkspot
