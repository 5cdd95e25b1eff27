#pragma once

#include "darkspot/raster.hpp"

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace darkspot {

/// Pixel counts; positive = dark spot.
struct Confusion {
  std::uint64_t tp = 0;
  std::uint64_t tn = 0;
  std::uint64_t fp = 0;
  std::uint64_t fn = 0;

  [[nodiscard]] std::uint64_t total() const { return tp + tn + fp + fn; }
  Confusion& operator+=(const Confusion& o) {
    tp += o.tp;
    tn += o.tn;
    fp += o.fp;
    fn += o.fn;
    return *this;
  }
  friend bool operator==(const Confusion&, const Confusion&) = default;
};

/// Counts over pixels where `valid` is set (all pixels if `valid` is empty).
Confusion confusion(const BinaryMask& pred, const BinaryMask& truth, std::span<const std::uint8_t> valid = {});

/// Missed-oil counts: MO = oil pixels predicted as sea, AO = all oil pixels.
struct OilCounts {
  bool available = false;
  std::uint64_t missed = 0;
  std::uint64_t total = 0;
};

OilCounts oil_counts(const BinaryMask& pred, const BinaryMask& oil, std::span<const std::uint8_t> valid = {});

/// Percentages; std::nullopt marks a zero denominator.
struct MetricsReport {
  Confusion counts;
  std::optional<double> p_d;
  std::optional<double> p_f;
  std::optional<double> p_acc;
  std::optional<double> p_m;
  bool p_m_available = false;
};

MetricsReport compute_metrics(const Confusion& c, const OilCounts& oil = {});

/// F1 of the dark-spot class in [0, 1]; nullopt when TP + FP + FN = 0.
std::optional<double> f1_of(const Confusion& c);

/// "90.00", "undefined" or "n/a".
std::string format_percent(const std::optional<double>& value, bool available = true);

struct TileReport {
  std::string name;
  MetricsReport report;
};

/// One row per tile, then a "total" row from the summed counts and a "mean"
/// row averaging only the defined per-tile values.
std::string metrics_csv(std::span<const TileReport> tiles, const MetricsReport& total);
std::string metrics_table(std::span<const TileReport> tiles, const MetricsReport& total);

inline constexpr int kHistogramBins = 256;

/// Bin of `value` on a 256-bin histogram over [lo, hi].
int histogram_bin(double value, double lo, double hi);

struct OtsuResult {
  BinaryMask mask;
  /// Pixels in bins below this cut are dark spots; 0 when degenerate.
  int cut = 0;
  double threshold = 0.0;
  bool degenerate = false;
  std::string warning;
};

/// Global Otsu threshold over valid pixels. Between-class variances are
/// compared exactly; ties go to the lower cut.
OtsuResult otsu_baseline(const RasterGrid& grid);

}  // namespace darkspot
