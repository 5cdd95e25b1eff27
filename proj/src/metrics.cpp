#include "darkspot/metrics.hpp"

#include <fmt/core.h>

#include <algorithm>
#include <cmath>
#include <limits>

namespace darkspot {

namespace {

void check_same_shape(const BinaryMask& a, const BinaryMask& b, std::span<const std::uint8_t> valid) {
  if (a.width != b.width || a.height != b.height) {
    throw ValidationError(
        fmt::format("mask dimensions differ: {}x{} vs {}x{}", a.width, a.height, b.width, b.height));
  }
  if (!valid.empty() && valid.size() != a.bits.size()) throw ValidationError("valid mask has the wrong size");
}

std::optional<double> percent(std::uint64_t num, std::uint64_t den) {
  if (den == 0) return std::nullopt;
  return 100.0 * static_cast<double>(num) / static_cast<double>(den);
}

}  // namespace

Confusion confusion(const BinaryMask& pred, const BinaryMask& truth, std::span<const std::uint8_t> valid) {
  check_same_shape(pred, truth, valid);
  Confusion c;
  for (std::size_t i = 0; i < pred.bits.size(); ++i) {
    if (!valid.empty() && !valid[i]) continue;
    const bool p = pred.bits[i] != 0;
    const bool t = truth.bits[i] != 0;
    if (p && t) ++c.tp;
    else if (!p && !t) ++c.tn;
    else if (p) ++c.fp;
    else ++c.fn;
  }
  return c;
}

OilCounts oil_counts(const BinaryMask& pred, const BinaryMask& oil, std::span<const std::uint8_t> valid) {
  check_same_shape(pred, oil, valid);
  OilCounts o;
  o.available = true;
  for (std::size_t i = 0; i < pred.bits.size(); ++i) {
    if (!valid.empty() && !valid[i]) continue;
    if (!oil.bits[i]) continue;
    ++o.total;
    if (!pred.bits[i]) ++o.missed;
  }
  return o;
}

MetricsReport compute_metrics(const Confusion& c, const OilCounts& oil) {
  MetricsReport r;
  r.counts = c;
  r.p_d = percent(c.tp, c.tp + c.fn);
  r.p_f = percent(c.fp, c.tp + c.fp);
  r.p_acc = percent(c.tp + c.tn, c.total());
  r.p_m_available = oil.available;
  if (oil.available) r.p_m = percent(oil.missed, oil.total);
  return r;
}

std::optional<double> f1_of(const Confusion& c) {
  const std::uint64_t den = 2 * c.tp + c.fp + c.fn;
  if (den == 0) return std::nullopt;
  return 2.0 * static_cast<double>(c.tp) / static_cast<double>(den);
}

std::string format_percent(const std::optional<double>& value, bool available) {
  if (!available) return "n/a";
  if (!value) return "undefined";
  return fmt::format("{:.2f}", *value);
}

namespace {

struct Row {
  std::string name;
  std::string tp, tn, fp, fn, p_d, p_f, p_acc, p_m;
};

Row make_row(const std::string& name, const MetricsReport& r) {
  return {name,
          std::to_string(r.counts.tp),
          std::to_string(r.counts.tn),
          std::to_string(r.counts.fp),
          std::to_string(r.counts.fn),
          format_percent(r.p_d),
          format_percent(r.p_f),
          format_percent(r.p_acc),
          format_percent(r.p_m, r.p_m_available)};
}

std::optional<double> mean_defined(std::span<const TileReport> tiles, std::optional<double> MetricsReport::*field) {
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& t : tiles) {
    if (const auto& v = t.report.*field) {
      sum += *v;
      ++n;
    }
  }
  if (n == 0) return std::nullopt;
  return sum / static_cast<double>(n);
}

std::vector<Row> all_rows(std::span<const TileReport> tiles, const MetricsReport& total) {
  std::vector<Row> rows;
  for (const auto& t : tiles) rows.push_back(make_row(t.name, t.report));
  rows.push_back(make_row("total", total));
  const bool pm = total.p_m_available;
  rows.push_back({"mean", "", "", "", "", format_percent(mean_defined(tiles, &MetricsReport::p_d)),
                  format_percent(mean_defined(tiles, &MetricsReport::p_f)),
                  format_percent(mean_defined(tiles, &MetricsReport::p_acc)),
                  format_percent(mean_defined(tiles, &MetricsReport::p_m), pm)});
  return rows;
}

}  // namespace

std::string metrics_csv(std::span<const TileReport> tiles, const MetricsReport& total) {
  std::string out = "tile,TP,TN,FP,FN,P_d,P_f,P_acc,P_m\n";
  for (const auto& r : all_rows(tiles, total)) {
    out += fmt::format("{},{},{},{},{},{},{},{},{}\n", r.name, r.tp, r.tn, r.fp, r.fn, r.p_d, r.p_f, r.p_acc, r.p_m);
  }
  return out;
}

std::string metrics_table(std::span<const TileReport> tiles, const MetricsReport& total) {
  const auto rows = all_rows(tiles, total);
  std::size_t name_w = 4;
  for (const auto& r : rows) name_w = std::max(name_w, r.name.size());
  std::string out = fmt::format("{:<{}}  {:>10} {:>10} {:>10} {:>10}  {:>9} {:>9} {:>9} {:>9}\n", "tile", name_w, "TP",
                                "TN", "FP", "FN", "P_d", "P_f", "P_acc", "P_m");
  for (const auto& r : rows) {
    out += fmt::format("{:<{}}  {:>10} {:>10} {:>10} {:>10}  {:>9} {:>9} {:>9} {:>9}\n", r.name, name_w, r.tp, r.tn,
                       r.fp, r.fn, r.p_d, r.p_f, r.p_acc, r.p_m);
  }
  return out;
}

int histogram_bin(double value, double lo, double hi) {
  if (!(hi > lo)) return 0;
  const double pos = std::floor(kHistogramBins * (value - lo) / (hi - lo));
  return static_cast<int>(std::clamp(pos, 0.0, static_cast<double>(kHistogramBins - 1)));
}

OtsuResult otsu_baseline(const RasterGrid& grid) {
  OtsuResult res;
  res.mask = BinaryMask(grid.width, grid.height);
  double lo = std::numeric_limits<double>::infinity();
  double hi = -lo;
  for (std::size_t i = 0; i < grid.size(); ++i) {
    if (!grid.valid[i]) continue;
    lo = std::min(lo, grid.values[i]);
    hi = std::max(hi, grid.values[i]);
  }
  if (!(hi > lo)) {
    res.degenerate = true;
    res.warning = "otsu: fewer than two distinct valid intensities; predicting all sea";
    return res;
  }
  std::array<std::uint64_t, kHistogramBins> hist{};
  for (std::size_t i = 0; i < grid.size(); ++i) {
    if (grid.valid[i]) ++hist[histogram_bin(grid.values[i], lo, hi)];
  }
  // With n0 pixels and bin-sum s0 below the cut, N and S overall, the
  // between-class variance is (S n0 - N s0)^2 / (N^2 n0 n1). Candidates are
  // compared as exact fractions num / (n0 n1).
  using Wide = unsigned __int128;
  std::uint64_t total_n = 0;
  std::uint64_t total_s = 0;
  for (int b = 0; b < kHistogramBins; ++b) {
    total_n += hist[b];
    total_s += hist[b] * static_cast<std::uint64_t>(b);
  }
  auto score = [&](std::uint64_t n0, std::uint64_t s0, Wide& num, Wide& den) {
    const __int128 diff = static_cast<__int128>(total_s) * n0 - static_cast<__int128>(total_n) * s0;
    const Wide mag = static_cast<Wide>(diff < 0 ? -diff : diff);
    num = mag * mag;
    den = static_cast<Wide>(n0) * (total_n - n0);
  };
  // Exact comparison needs num * den to fit in 128 bits; beyond that fall back
  // to long double.
  const bool exact = total_n <= (std::uint64_t{1} << 18);
  std::uint64_t n0 = 0;
  std::uint64_t s0 = 0;
  int best_cut = 0;
  Wide best_num = 0, best_den = 1;
  long double best_ld = -1.0L;
  for (int t = 1; t < kHistogramBins; ++t) {
    n0 += hist[t - 1];
    s0 += hist[t - 1] * static_cast<std::uint64_t>(t - 1);
    if (n0 == 0 || n0 == total_n) continue;
    Wide num = 0, den = 1;
    score(n0, s0, num, den);
    bool better = false;
    if (exact) {
      better = best_cut == 0 || num * best_den > best_num * den;
    } else {
      const long double v = static_cast<long double>(num) / static_cast<long double>(den);
      better = best_cut == 0 || v > best_ld;
      if (better) best_ld = v;
    }
    if (better) {
      best_cut = t;
      best_num = num;
      best_den = den;
    }
  }
  res.cut = best_cut;
  res.threshold = lo + (hi - lo) * best_cut / kHistogramBins;
  for (std::size_t i = 0; i < grid.size(); ++i) {
    if (grid.valid[i] && histogram_bin(grid.values[i], lo, hi) < best_cut) res.mask.bits[i] = 1;
  }
  return res;
}

}  // namespace darkspot
