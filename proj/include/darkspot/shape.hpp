#pragma once

#include "darkspot/region_graph.hpp"

#include <array>
#include <cstdint>
#include <span>
#include <vector>

// Binary-shape measurements on a single region. Every function works in
// coordinates local to the region's bounding box, so results are bit-identical
// for translated copies of a region.
namespace darkspot::shape {

/// Region rasterized into its bounding box plus a one-pixel empty frame.
struct RegionMask {
  int row0 = 0;  // tile row of mask row 1 (mask row 0 is the frame)
  int col0 = 0;
  int rows = 0;  // including frame
  int cols = 0;
  std::vector<std::uint8_t> bits;

  [[nodiscard]] bool at(int r, int c) const {
    return r >= 0 && c >= 0 && r < rows && c < cols && bits[static_cast<std::size_t>(r) * cols + c] != 0;
  }
};

RegionMask rasterize(std::span<const PixelCoord> pixels);

/// Pixels of the region with at least one 4-neighbor outside it, in mask
/// coordinates.
std::vector<PixelCoord> boundary_pixels(const RegionMask& mask);

struct Moments {
  double m00 = 0.0;
  double mu20 = 0.0, mu02 = 0.0, mu11 = 0.0;
  double mu30 = 0.0, mu03 = 0.0, mu21 = 0.0, mu12 = 0.0;
};

/// Central moments with x = column, y = row at pixel centers.
Moments central_moments(const RegionMask& mask);

std::array<double, 7> hu_invariants(const Moments& m);

/// The four Flusser-Suk affine moment invariants.
std::array<double, 4> affine_invariants(const Moments& m);

/// Second-moment ellipse. Pixels are treated as unit squares, which adds 1/12
/// to each covariance eigenvalue; a single pixel is then a unit circle-ish
/// blob with elongation 1.
struct Ellipse {
  double major = 0.0;  // full axis length, 4 * sqrt(lambda)
  double minor = 0.0;
  double angle = 0.0;  // radians, major axis direction, x = column
};
Ellipse moment_ellipse(const Moments& m);

struct Vertex {
  std::int64_t x = 0;
  std::int64_t y = 0;
  friend bool operator==(const Vertex&, const Vertex&) = default;
};

/// Outer boundary along pixel edges, traced clockwise (y down) starting at
/// the top-left corner of the first pixel in raster order. Consecutive
/// vertices differ by one unit step; the closing step back to the first
/// vertex is implicit.
std::vector<Vertex> outer_contour(const RegionMask& mask);

/// Convex hull of pixel corners, counter-clockwise in (x, y-down) with
/// collinear points removed.
std::vector<Vertex> convex_hull_of_pixels(const RegionMask& mask);

/// Twice the signed shoelace area of a closed polygon.
std::int64_t twice_area(std::span<const Vertex> poly);

/// Interior angles (radians) of a convex polygon.
std::vector<double> interior_angles(std::span<const Vertex> hull);

/// Mean absolute turning angle per vertex of a closed unit-step contour.
double mean_turning_angle(std::span<const Vertex> contour);

/// Elliptic Fourier harmonics 1..n of a closed unit-step contour, reduced to
/// the semi-axes of each harmonic ellipse and scaled by the first harmonic's
/// semi-major axis: [major_1, minor_1, major_2, minor_2, ...].
std::vector<double> elliptic_fourier_amplitudes(std::span<const Vertex> contour, int harmonics);

/// Largest distance from a region pixel centre to the nearest pixel centre
/// outside the region.
double max_inscribed_radius(const RegionMask& mask);

/// Area after a 3x3 morphological closing.
std::int64_t closing_area(const RegionMask& mask);

}  // namespace darkspot::shape
