#include "darkspot/shape.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

namespace darkspot::shape {

RegionMask rasterize(std::span<const PixelCoord> pixels) {
  RegionMask m;
  if (pixels.empty()) return m;
  int rmin = std::numeric_limits<int>::max();
  int cmin = rmin;
  int rmax = std::numeric_limits<int>::min();
  int cmax = rmax;
  for (const auto& p : pixels) {
    rmin = std::min(rmin, p.row);
    rmax = std::max(rmax, p.row);
    cmin = std::min(cmin, p.col);
    cmax = std::max(cmax, p.col);
  }
  m.row0 = rmin;
  m.col0 = cmin;
  m.rows = rmax - rmin + 3;
  m.cols = cmax - cmin + 3;
  m.bits.assign(static_cast<std::size_t>(m.rows) * m.cols, 0);
  for (const auto& p : pixels) {
    m.bits[static_cast<std::size_t>(p.row - rmin + 1) * m.cols + (p.col - cmin + 1)] = 1;
  }
  return m;
}

std::vector<PixelCoord> boundary_pixels(const RegionMask& mask) {
  std::vector<PixelCoord> out;
  for (int r = 1; r + 1 < mask.rows; ++r) {
    for (int c = 1; c + 1 < mask.cols; ++c) {
      if (!mask.at(r, c)) continue;
      if (!mask.at(r - 1, c) || !mask.at(r + 1, c) || !mask.at(r, c - 1) || !mask.at(r, c + 1)) {
        out.push_back({r, c});
      }
    }
  }
  return out;
}

Moments central_moments(const RegionMask& mask) {
  Moments m;
  double sx = 0.0;
  double sy = 0.0;
  for (int r = 0; r < mask.rows; ++r) {
    for (int c = 0; c < mask.cols; ++c) {
      if (!mask.at(r, c)) continue;
      m.m00 += 1.0;
      sx += c;
      sy += r;
    }
  }
  if (m.m00 == 0.0) return m;
  const double cx = sx / m.m00;
  const double cy = sy / m.m00;
  for (int r = 0; r < mask.rows; ++r) {
    for (int c = 0; c < mask.cols; ++c) {
      if (!mask.at(r, c)) continue;
      const double x = c - cx;
      const double y = r - cy;
      m.mu20 += x * x;
      m.mu02 += y * y;
      m.mu11 += x * y;
      m.mu30 += x * x * x;
      m.mu03 += y * y * y;
      m.mu21 += x * x * y;
      m.mu12 += x * y * y;
    }
  }
  return m;
}

std::array<double, 7> hu_invariants(const Moments& m) {
  if (m.m00 <= 0.0) return {};
  const double n2 = std::pow(m.m00, 2.0);
  const double n3 = std::pow(m.m00, 2.5);
  const double e20 = m.mu20 / n2;
  const double e02 = m.mu02 / n2;
  const double e11 = m.mu11 / n2;
  const double e30 = m.mu30 / n3;
  const double e03 = m.mu03 / n3;
  const double e21 = m.mu21 / n3;
  const double e12 = m.mu12 / n3;
  const double a = e30 + e12;
  const double b = e21 + e03;
  const double c = e30 - 3.0 * e12;
  const double d = 3.0 * e21 - e03;
  return {
      e20 + e02,
      (e20 - e02) * (e20 - e02) + 4.0 * e11 * e11,
      c * c + d * d,
      a * a + b * b,
      c * a * (a * a - 3.0 * b * b) + d * b * (3.0 * a * a - b * b),
      (e20 - e02) * (a * a - b * b) + 4.0 * e11 * a * b,
      d * a * (a * a - 3.0 * b * b) - c * b * (3.0 * a * a - b * b),
  };
}

std::array<double, 4> affine_invariants(const Moments& m) {
  if (m.m00 <= 0.0) return {};
  const double u00 = m.m00;
  const double u20 = m.mu20, u02 = m.mu02, u11 = m.mu11;
  const double u30 = m.mu30, u03 = m.mu03, u21 = m.mu21, u12 = m.mu12;
  const double i1 = (u20 * u02 - u11 * u11) / std::pow(u00, 4);
  const double i2 = (u30 * u30 * u03 * u03 - 6.0 * u30 * u21 * u12 * u03 + 4.0 * u30 * u12 * u12 * u12 +
                     4.0 * u21 * u21 * u21 * u03 - 3.0 * u21 * u21 * u12 * u12) /
                    std::pow(u00, 10);
  const double i3 = (u20 * (u21 * u03 - u12 * u12) - u11 * (u30 * u03 - u21 * u12) + u02 * (u30 * u12 - u21 * u21)) /
                    std::pow(u00, 7);
  const double i4 =
      (u20 * u20 * u20 * u03 * u03 - 6.0 * u20 * u20 * u11 * u12 * u03 - 6.0 * u20 * u20 * u02 * u21 * u03 +
       9.0 * u20 * u20 * u02 * u12 * u12 + 12.0 * u20 * u11 * u11 * u21 * u03 +
       6.0 * u20 * u11 * u02 * u30 * u03 - 18.0 * u20 * u11 * u02 * u21 * u12 -
       8.0 * u11 * u11 * u11 * u30 * u03 - 6.0 * u20 * u02 * u02 * u30 * u12 + 9.0 * u20 * u02 * u02 * u21 * u21 +
       12.0 * u11 * u11 * u02 * u30 * u12 - 6.0 * u11 * u02 * u02 * u30 * u21 + u02 * u02 * u02 * u30 * u30) /
      std::pow(u00, 11);
  return {i1, i2, i3, i4};
}

Ellipse moment_ellipse(const Moments& m) {
  if (m.m00 <= 0.0) return {};
  constexpr double kPixelVar = 1.0 / 12.0;
  const double a = m.mu20 / m.m00 + kPixelVar;
  const double c = m.mu02 / m.m00 + kPixelVar;
  const double b = m.mu11 / m.m00;
  const double half_tr = 0.5 * (a + c);
  const double disc = std::sqrt(0.25 * (a - c) * (a - c) + b * b);
  const double l1 = half_tr + disc;
  const double l2 = std::max(half_tr - disc, kPixelVar * 1e-6);
  return {4.0 * std::sqrt(l1), 4.0 * std::sqrt(l2), 0.5 * std::atan2(2.0 * b, a - c)};
}

namespace {

struct Dir {
  int dx;
  int dy;
};

Dir right_of(Dir d) { return {-d.dy, d.dx}; }
Dir left_of(Dir d) { return {d.dy, -d.dx}; }

// Pixel whose square touches vertex (x, y) in the quadrant spanned by a and b.
bool quadrant_pixel(const RegionMask& mask, std::int64_t x, std::int64_t y, Dir a, Dir b) {
  const std::int64_t col = x + std::min(0, a.dx) + std::min(0, b.dx);
  const std::int64_t row = y + std::min(0, a.dy) + std::min(0, b.dy);
  return mask.at(static_cast<int>(row), static_cast<int>(col));
}

}  // namespace

std::vector<Vertex> outer_contour(const RegionMask& mask) {
  std::vector<Vertex> out;
  int r0 = -1;
  int c0 = -1;
  for (int r = 0; r < mask.rows && r0 < 0; ++r) {
    for (int c = 0; c < mask.cols; ++c) {
      if (mask.at(r, c)) {
        r0 = r;
        c0 = c;
        break;
      }
    }
  }
  if (r0 < 0) return out;
  // Region is kept on the right-hand side (clockwise with y pointing down).
  const Vertex start{c0, r0};
  const Dir start_dir{1, 0};
  Vertex v = start;
  Dir d = start_dir;
  do {
    out.push_back(v);
    v.x += d.dx;
    v.y += d.dy;
    const Dir r = right_of(d);
    const Dir l = left_of(d);
    const bool ahead_right = quadrant_pixel(mask, v.x, v.y, d, r);
    const bool ahead_left = quadrant_pixel(mask, v.x, v.y, d, l);
    if (!ahead_right) {
      d = r;
    } else if (ahead_left) {
      d = l;
    }
  } while (!(v == start && d.dx == start_dir.dx && d.dy == start_dir.dy));
  return out;
}

namespace {

std::int64_t cross(const Vertex& o, const Vertex& a, const Vertex& b) {
  return (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x);
}

}  // namespace

std::vector<Vertex> convex_hull_of_pixels(const RegionMask& mask) {
  std::vector<Vertex> pts;
  for (const auto& p : boundary_pixels(mask)) {
    pts.push_back({p.col, p.row});
    pts.push_back({p.col + 1, p.row});
    pts.push_back({p.col, p.row + 1});
    pts.push_back({p.col + 1, p.row + 1});
  }
  std::sort(pts.begin(), pts.end(), [](const Vertex& a, const Vertex& b) { return a.x != b.x ? a.x < b.x : a.y < b.y; });
  pts.erase(std::unique(pts.begin(), pts.end()), pts.end());
  if (pts.size() < 3) return pts;
  std::vector<Vertex> hull(2 * pts.size());
  std::size_t k = 0;
  for (const auto& p : pts) {
    while (k >= 2 && cross(hull[k - 2], hull[k - 1], p) <= 0) --k;
    hull[k++] = p;
  }
  for (std::size_t i = pts.size() - 1, t = k + 1; i-- > 0;) {
    while (k >= t && cross(hull[k - 2], hull[k - 1], pts[i]) <= 0) --k;
    hull[k++] = pts[i];
  }
  hull.resize(k - 1);
  return hull;
}

std::int64_t twice_area(std::span<const Vertex> poly) {
  std::int64_t s = 0;
  for (std::size_t i = 0; i < poly.size(); ++i) {
    const auto& a = poly[i];
    const auto& b = poly[(i + 1) % poly.size()];
    s += a.x * b.y - b.x * a.y;
  }
  return s;
}

std::vector<double> interior_angles(std::span<const Vertex> hull) {
  std::vector<double> out;
  const std::size_t n = hull.size();
  if (n < 3) return out;
  for (std::size_t i = 0; i < n; ++i) {
    const auto& prev = hull[(i + n - 1) % n];
    const auto& cur = hull[i];
    const auto& next = hull[(i + 1) % n];
    const double ax = static_cast<double>(prev.x - cur.x);
    const double ay = static_cast<double>(prev.y - cur.y);
    const double bx = static_cast<double>(next.x - cur.x);
    const double by = static_cast<double>(next.y - cur.y);
    out.push_back(std::atan2(std::abs(ax * by - ay * bx), ax * bx + ay * by));
  }
  return out;
}

double mean_turning_angle(std::span<const Vertex> contour) {
  const std::size_t n = contour.size();
  if (n < 3) return 0.0;
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const auto& prev = contour[(i + n - 1) % n];
    const auto& cur = contour[i];
    const auto& next = contour[(i + 1) % n];
    const double ax = static_cast<double>(cur.x - prev.x);
    const double ay = static_cast<double>(cur.y - prev.y);
    const double bx = static_cast<double>(next.x - cur.x);
    const double by = static_cast<double>(next.y - cur.y);
    total += std::abs(std::atan2(ax * by - ay * bx, ax * bx + ay * by));
  }
  return total / static_cast<double>(n);
}

std::vector<double> elliptic_fourier_amplitudes(std::span<const Vertex> contour, int harmonics) {
  std::vector<double> out(2 * static_cast<std::size_t>(std::max(0, harmonics)), 0.0);
  const std::size_t k = contour.size();
  if (k < 2 || harmonics <= 0) return out;
  const double period = static_cast<double>(k);
  double scale = 0.0;
  for (int n = 1; n <= harmonics; ++n) {
    double a = 0.0, b = 0.0, c = 0.0, d = 0.0;
    const double w = 2.0 * std::numbers::pi * n / period;
    for (std::size_t p = 0; p < k; ++p) {
      const auto& from = contour[p];
      const auto& to = contour[(p + 1) % k];
      const double dx = static_cast<double>(to.x - from.x);
      const double dy = static_cast<double>(to.y - from.y);
      const double t1 = static_cast<double>(p + 1);
      const double t0 = static_cast<double>(p);
      const double dcos = std::cos(w * t1) - std::cos(w * t0);
      const double dsin = std::sin(w * t1) - std::sin(w * t0);
      a += dx * dcos;
      b += dx * dsin;
      c += dy * dcos;
      d += dy * dsin;
    }
    const double f = period / (2.0 * n * n * std::numbers::pi * std::numbers::pi);
    a *= f;
    b *= f;
    c *= f;
    d *= f;
    // Singular values of [[a, b], [c, d]] are the harmonic's semi-axes.
    const double s = a * a + b * b + c * c + d * d;
    const double det = a * d - b * c;
    const double root = std::sqrt(std::max(0.0, s * s - 4.0 * det * det));
    const double major = std::sqrt(std::max(0.0, 0.5 * (s + root)));
    const double minor = std::sqrt(std::max(0.0, 0.5 * (s - root)));
    if (n == 1) scale = major;
    out[2 * (n - 1)] = major;
    out[2 * (n - 1) + 1] = minor;
  }
  if (scale > 1e-12) {
    for (double& v : out) v /= scale;
  } else {
    std::fill(out.begin(), out.end(), 0.0);
  }
  return out;
}

double max_inscribed_radius(const RegionMask& mask) {
  std::vector<PixelCoord> ring;
  for (int r = 0; r < mask.rows; ++r) {
    for (int c = 0; c < mask.cols; ++c) {
      if (mask.at(r, c)) continue;
      if (mask.at(r - 1, c) || mask.at(r + 1, c) || mask.at(r, c - 1) || mask.at(r, c + 1)) ring.push_back({r, c});
    }
  }
  double best = 0.0;
  for (int r = 0; r < mask.rows; ++r) {
    for (int c = 0; c < mask.cols; ++c) {
      if (!mask.at(r, c)) continue;
      std::int64_t nearest = std::numeric_limits<std::int64_t>::max();
      for (const auto& q : ring) {
        const std::int64_t dr = q.row - r;
        const std::int64_t dc = q.col - c;
        nearest = std::min(nearest, dr * dr + dc * dc);
        if (nearest == 1) break;
      }
      best = std::max(best, std::sqrt(static_cast<double>(nearest)));
    }
  }
  return best;
}

std::int64_t closing_area(const RegionMask& mask) {
  std::vector<std::uint8_t> dilated(mask.bits.size(), 0);
  for (int r = 0; r < mask.rows; ++r) {
    for (int c = 0; c < mask.cols; ++c) {
      bool hit = false;
      for (int dr = -1; dr <= 1 && !hit; ++dr) {
        for (int dc = -1; dc <= 1; ++dc) {
          if (mask.at(r + dr, c + dc)) {
            hit = true;
            break;
          }
        }
      }
      dilated[static_cast<std::size_t>(r) * mask.cols + c] = hit ? 1 : 0;
    }
  }
  auto dil = [&](int r, int c) {
    return r >= 0 && c >= 0 && r < mask.rows && c < mask.cols && dilated[static_cast<std::size_t>(r) * mask.cols + c];
  };
  std::int64_t area = 0;
  for (int r = 0; r < mask.rows; ++r) {
    for (int c = 0; c < mask.cols; ++c) {
      bool keep = true;
      for (int dr = -1; dr <= 1 && keep; ++dr) {
        for (int dc = -1; dc <= 1; ++dc) {
          if (!dil(r + dr, c + dc)) {
            keep = false;
            break;
          }
        }
      }
      if (keep) ++area;
    }
  }
  return area;
}

}  // namespace darkspot::shape
