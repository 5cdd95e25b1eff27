#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

namespace darkspot {

/// Raised when an input violates a documented precondition (bad window size,
/// malformed file header, out-of-range config value). The CLI maps it to exit
/// code 2.
class ValidationError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Row-major intensity field with a per-pixel validity mask.
///
/// Values at valid pixels are finite and non-negative. Invalid pixels mark
/// land, no-data, or tile padding and are ignored by every downstream stage.
struct RasterGrid {
  int width = 0;
  int height = 0;
  std::vector<double> values;
  std::vector<std::uint8_t> valid;

  RasterGrid() = default;
  RasterGrid(int w, int h, double fill = 0.0, bool all_valid = true);

  [[nodiscard]] std::size_t size() const { return values.size(); }
  [[nodiscard]] bool empty() const { return values.empty(); }
  [[nodiscard]] std::size_t index(int row, int col) const {
    return static_cast<std::size_t>(row) * static_cast<std::size_t>(width) +
           static_cast<std::size_t>(col);
  }
  [[nodiscard]] double at(int row, int col) const { return values[index(row, col)]; }
  [[nodiscard]] bool is_valid(int row, int col) const { return valid[index(row, col)] != 0; }
  [[nodiscard]] bool contains(int row, int col) const {
    return row >= 0 && col >= 0 && row < height && col < width;
  }
  [[nodiscard]] std::size_t valid_count() const;

  /// Throws ValidationError if sizes disagree or a valid value is negative or
  /// non-finite.
  void check_invariants() const;

  friend bool operator==(const RasterGrid&, const RasterGrid&) = default;
};

/// Per-pixel binary raster (0/1). Used for truth masks, predictions and
/// boundary maps.
struct BinaryMask {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> bits;

  BinaryMask() = default;
  BinaryMask(int w, int h, std::uint8_t fill = 0)
      : width(w), height(h), bits(static_cast<std::size_t>(w) * static_cast<std::size_t>(h), fill) {}

  [[nodiscard]] std::size_t index(int row, int col) const {
    return static_cast<std::size_t>(row) * static_cast<std::size_t>(width) +
           static_cast<std::size_t>(col);
  }
  [[nodiscard]] bool at(int row, int col) const { return bits[index(row, col)] != 0; }
  [[nodiscard]] std::size_t count() const;

  friend bool operator==(const BinaryMask&, const BinaryMask&) = default;
};

enum class RasterFormat { kPgm16, kF32Raw };

/// Parses "pgm16" / "f32raw".
RasterFormat parse_raster_format(const std::string& name);

/// Loads a raster. If a sidecar mask `<stem>.mask` exists next to `path` it is
/// read as PGM and pixels with value 0 are marked invalid.
RasterGrid load_grid(const std::filesystem::path& path, RasterFormat format);

/// Writes `u32 width, u32 height` (little-endian) followed by the values as
/// little-endian f32. The validity mask is not stored.
void save_f32raw(const RasterGrid& grid, const std::filesystem::path& path);

/// Writes values as binary P5 with maxval 65535; values are rounded and
/// clamped to [0, 65535].
void save_pgm16(const RasterGrid& grid, const std::filesystem::path& path);

/// Sidecar mask path for a raster file: same directory and stem, `.mask`.
std::filesystem::path sidecar_mask_path(const std::filesystem::path& raster_path);

/// Writes a P5 PGM with maxval 255: 0 = sea, 255 = dark spot.
void write_mask(const BinaryMask& mask, const std::filesystem::path& path);

/// Reads any 8- or 16-bit P5 PGM as a binary mask (non-zero = set).
BinaryMask read_mask(const std::filesystem::path& path);

struct LeeParams {
  int window = 3;
  /// Coefficient of variation of the multiplicative noise.
  double noise_cv = 0.25;
};

/// Multiplicative-noise Lee filter.
///
/// For every valid pixel with at least two valid pixels in its window:
/// out = m + W (in - m) with W = max(0, v - (cu m)^2) / v, where m and v are
/// the mean and population variance over the valid window pixels (W = 0 when
/// v == 0). Invalid pixels pass through unchanged.
RasterGrid lee_filter(const RasterGrid& grid, const LeeParams& params = {});

/// Fixed-size crop of a parent grid. Padding beyond the parent is zero and
/// invalid.
struct Tile {
  int row = 0;
  int col = 0;
  RasterGrid grid;
};

std::vector<Tile> tile_grid(const RasterGrid& grid, int size = 256);

/// Places tiles back into a `width` x `height` grid, dropping padding.
RasterGrid stitch_tiles(const std::vector<Tile>& tiles, int width, int height);

/// Crops a mask with the same placement rules as tile_grid (padding = 0).
BinaryMask crop_mask(const BinaryMask& mask, int row, int col, int size);

}  // namespace darkspot
