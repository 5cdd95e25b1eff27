#pragma once

#include "darkspot/raster.hpp"

#include <cstdint>
#include <filesystem>
#include <memory>
#include <vector>

namespace darkspot {

/// Per-pixel superpixel ids. Valid pixels carry dense ids in [0, count);
/// invalid pixels carry kInvalidLabel and belong to no region.
struct LabelMap {
  static constexpr std::int32_t kInvalidLabel = -1;

  int width = 0;
  int height = 0;
  std::vector<std::int32_t> labels;
  int count = 0;

  [[nodiscard]] std::size_t index(int row, int col) const {
    return static_cast<std::size_t>(row) * static_cast<std::size_t>(width) +
           static_cast<std::size_t>(col);
  }
  [[nodiscard]] std::int32_t at(int row, int col) const { return labels[index(row, col)]; }

  friend bool operator==(const LabelMap&, const LabelMap&) = default;
};

struct SuperpixelParams {
  int n_init = 3000;
  int max_iters = 250;
  std::uint64_t seed = 0;
  /// Weight of the spatial term relative to normalized intensity.
  double spatial_weight = 0.2;
  /// Regions smaller than mean_area / tiny_divisor are absorbed by a neighbor.
  double tiny_divisor = 16.0;
  /// Regions larger than max_area_ratio * mean_area are split.
  double max_area_ratio = 3.0;
};

/// Contract for superpixel algorithms. Implementations must return a LabelMap
/// whose regions are 4-connected, dense, and cover exactly the valid pixels,
/// with count <= n_init, and must be deterministic in (tile, params).
class SuperpixelAlgorithm {
 public:
  virtual ~SuperpixelAlgorithm() = default;
  [[nodiscard]] virtual LabelMap segment(const RasterGrid& tile, const SuperpixelParams& params) const = 0;
};

/// Default: grid-seeded local k-means in (intensity, row, col) followed by
/// connectivity enforcement, tiny-region absorption and oversize splitting.
/// The algorithm itself is deterministic and draws no random numbers; `seed`
/// is accepted for contract compatibility with stochastic implementations.
class LocalKMeansSuperpixels final : public SuperpixelAlgorithm {
 public:
  [[nodiscard]] LabelMap segment(const RasterGrid& tile, const SuperpixelParams& params) const override;
};

/// Segments with the default algorithm.
LabelMap segment(const RasterGrid& tile, const SuperpixelParams& params = {});

/// Marks every pixel that has a 4-neighbor with a different label.
BinaryMask boundary_map(const LabelMap& labels);

/// Binary layout: u32 width, u32 height, u32 count, then i32 labels (all
/// little-endian).
void save_label_map(const LabelMap& labels, const std::filesystem::path& path);
LabelMap load_label_map(const std::filesystem::path& path);

/// Relabels to dense ids in order of first appearance in raster order.
/// Negative labels are left untouched.
void densify_labels(LabelMap& labels);

}  // namespace darkspot
