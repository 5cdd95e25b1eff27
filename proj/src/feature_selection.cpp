#include "darkspot/feature_selection.hpp"

#include "darkspot/raster.hpp"
#include "darkspot/util.hpp"

#include <fmt/core.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace darkspot {

namespace {

double sign_of(std::uint8_t label) { return label ? 1.0 : -1.0; }

void check_inputs(const FeatureMatrix& x, std::span<const std::uint8_t> y) {
  if (x.rows != y.size()) throw ValidationError("svm: label count does not match row count");
  if (x.rows == 0) throw ValidationError("svm: no samples");
  const auto pos = std::count_if(y.begin(), y.end(), [](std::uint8_t v) { return v != 0; });
  if (pos == 0 || pos == static_cast<std::ptrdiff_t>(y.size())) {
    throw ValidationError("svm: both classes must be present");
  }
}

}  // namespace

double LinearSvm::decision(std::span<const double> x) const {
  double s = b;
  for (std::size_t j = 0; j < w.size(); ++j) s += w[j] * x[j];
  return s;
}

double svm_objective(const FeatureMatrix& x, std::span<const std::uint8_t> y, std::span<const double> w, double b,
                     double c) {
  const double n = static_cast<double>(x.rows);
  const double lambda = 1.0 / (c * n);
  double hinge = 0.0;
  for (std::size_t i = 0; i < x.rows; ++i) {
    const auto row = x.row(i);
    double s = b;
    for (std::size_t j = 0; j < x.cols; ++j) s += w[j] * row[j];
    hinge += std::max(0.0, 1.0 - sign_of(y[i]) * s);
  }
  double norm2 = 0.0;
  for (double v : w) norm2 += v * v;
  return 0.5 * lambda * norm2 + hinge / n;
}

LinearSvm train_linear_svm(const FeatureMatrix& x, std::span<const std::uint8_t> y, const SvmParams& params) {
  check_inputs(x, y);
  if (!(params.c > 0.0)) throw ValidationError("svm: C must be positive");
  if (!(params.initial_step > 0.0)) throw ValidationError("svm: initial step must be positive");
  const double n = static_cast<double>(x.rows);
  const double lambda = 1.0 / (params.c * n);
  LinearSvm svm;
  svm.w.assign(x.cols, 0.0);

  std::vector<double> w(x.cols, 0.0);
  double b = 0.0;
  std::vector<double> gw(x.cols);
  double best = INFINITY;
  for (int epoch = 0;; ++epoch) {
    // One pass gives both the objective and a subgradient at (w, b).
    for (std::size_t j = 0; j < x.cols; ++j) gw[j] = lambda * w[j];
    double gb = 0.0;
    double hinge = 0.0;
    for (std::size_t i = 0; i < x.rows; ++i) {
      const auto row = x.row(i);
      const double yi = sign_of(y[i]);
      double s = b;
      for (std::size_t j = 0; j < x.cols; ++j) s += w[j] * row[j];
      hinge += std::max(0.0, 1.0 - yi * s);
      if (yi * s >= 1.0) continue;
      for (std::size_t j = 0; j < x.cols; ++j) gw[j] -= yi * row[j] / n;
      gb -= yi / n;
    }
    double norm2 = 0.0;
    for (double v : w) norm2 += v * v;
    const double loss = 0.5 * lambda * norm2 + hinge / n;
    if (loss < best) {
      best = loss;
      svm.w = w;
      svm.b = b;
      svm.loss_history.push_back(loss);
    }
    if (epoch == params.epochs) break;
    const double step = params.initial_step / std::sqrt(static_cast<double>(epoch) + 1.0);
    for (std::size_t j = 0; j < x.cols; ++j) w[j] -= step * gw[j];
    b -= step * gb;
  }
  return svm;
}

std::vector<std::uint8_t> svm_predict_all(const LinearSvm& svm, const FeatureMatrix& x) {
  std::vector<std::uint8_t> out(x.rows);
  for (std::size_t i = 0; i < x.rows; ++i) out[i] = svm.predict(x.row(i));
  return out;
}

double f1_score(std::span<const std::uint8_t> truth, std::span<const std::uint8_t> predicted) {
  if (truth.size() != predicted.size()) throw ValidationError("f1_score: length mismatch");
  std::size_t tp = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (truth[i] && predicted[i]) ++tp;
    if (!truth[i] && predicted[i]) ++fp;
    if (truth[i] && !predicted[i]) ++fn;
  }
  const std::size_t den = 2 * tp + fp + fn;
  return den == 0 ? 0.0 : 2.0 * static_cast<double>(tp) / static_cast<double>(den);
}

Ranking rfe_rank(const FeatureMatrix& x, std::span<const std::uint8_t> y, const SvmParams& params) {
  check_inputs(x, y);
  std::vector<std::size_t> alive(x.cols);
  std::iota(alive.begin(), alive.end(), 0);
  std::vector<std::size_t> eliminated;
  Ranking ranking;
  while (alive.size() > 1) {
    const FeatureMatrix sub = select_columns(x, alive);
    const LinearSvm svm = train_linear_svm(sub, y, params);
    std::vector<double> snapshot(x.cols, 0.0);
    std::size_t worst = 0;
    for (std::size_t j = 0; j < alive.size(); ++j) {
      snapshot[alive[j]] = svm.w[j];
      // alive is ascending, so strict < keeps the lower column index on ties.
      if (std::abs(svm.w[j]) < std::abs(svm.w[worst])) worst = j;
    }
    ranking.weights.push_back(std::move(snapshot));
    eliminated.push_back(alive[worst]);
    alive.erase(alive.begin() + static_cast<std::ptrdiff_t>(worst));
  }
  if (!alive.empty()) eliminated.push_back(alive.front());
  ranking.order.assign(eliminated.rbegin(), eliminated.rend());
  return ranking;
}

std::vector<std::size_t> top_k_columns(const Ranking& ranking, std::size_t k) {
  if (k > ranking.order.size()) throw ValidationError("top_k_columns: k exceeds column count");
  std::vector<std::size_t> cols(ranking.order.begin(), ranking.order.begin() + static_cast<std::ptrdiff_t>(k));
  std::sort(cols.begin(), cols.end());
  return cols;
}

F1Curve f1_curve(const Ranking& ranking, const FeatureMatrix& x_train, std::span<const std::uint8_t> y_train,
                 const FeatureMatrix& x_val, std::span<const std::uint8_t> y_val, const SvmParams& params,
                 double tolerance) {
  F1Curve curve;
  curve.tolerance = tolerance;
  for (std::size_t k = 1; k <= ranking.order.size(); ++k) {
    const auto cols = top_k_columns(ranking, k);
    const LinearSvm svm = train_linear_svm(select_columns(x_train, cols), y_train, params);
    curve.f1.push_back(f1_score(y_val, svm_predict_all(svm, select_columns(x_val, cols))));
  }
  const double best = curve.f1.empty() ? 0.0 : *std::max_element(curve.f1.begin(), curve.f1.end());
  for (std::size_t k = 1; k <= curve.f1.size(); ++k) {
    if (curve.f1[k - 1] >= best - tolerance) {
      curve.selected_k = k;
      break;
    }
  }
  return curve;
}

std::string ranking_csv(const Ranking& ranking, std::span<const std::string> names) {
  std::string out = "rank,column,name\n";
  for (std::size_t r = 0; r < ranking.order.size(); ++r) {
    const std::size_t c = ranking.order[r];
    out += fmt::format("{},{},{}\n", r + 1, c, c < names.size() ? names[c] : std::string());
  }
  return out;
}

std::string f1_curve_csv(const F1Curve& curve) {
  std::string out = "k,f1,selected\n";
  for (std::size_t k = 1; k <= curve.f1.size(); ++k) {
    out += fmt::format("{},{},{}\n", k, curve.f1[k - 1], k == curve.selected_k ? 1 : 0);
  }
  return out;
}

std::string selected_names_text(const Ranking& ranking, std::size_t k, std::span<const std::string> names) {
  std::string out;
  for (std::size_t c : top_k_columns(ranking, k)) out += names[c] + "\n";
  return out;
}

std::vector<std::string> parse_selected_names(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    const std::string t = trim(line);
    if (!t.empty()) out.push_back(t);
  }
  return out;
}

}  // namespace darkspot
