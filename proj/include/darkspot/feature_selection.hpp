#pragma once

#include "darkspot/features.hpp"

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace darkspot {

struct SvmParams {
  double c = 1.0;
  int epochs = 1000;
  double initial_step = 8.0;
};

/// Linear SVM trained on the L2-regularized mean hinge loss
///   lambda/2 |w|^2 + 1/n sum max(0, 1 - y_i (w.x_i + b)),  lambda = 1/(C n)
/// with labels mapped to {-1, +1}. Training is full-batch subgradient descent
/// from zero with step initial_step / sqrt(t + 1). Subgradient steps may raise
/// the loss, so the best iterate is kept and loss_history records each new
/// best. No randomness.
struct LinearSvm {
  std::vector<double> w;
  double b = 0.0;
  std::vector<double> loss_history;

  [[nodiscard]] double decision(std::span<const double> x) const;
  [[nodiscard]] std::uint8_t predict(std::span<const double> x) const { return decision(x) > 0.0 ? 1 : 0; }
};

LinearSvm train_linear_svm(const FeatureMatrix& x, std::span<const std::uint8_t> y, const SvmParams& params = {});

double svm_objective(const FeatureMatrix& x, std::span<const std::uint8_t> y, std::span<const double> w, double b,
                     double c);

/// F1 of the positive class; 0 when there are no positives in either vector.
double f1_score(std::span<const std::uint8_t> truth, std::span<const std::uint8_t> predicted);

std::vector<std::uint8_t> svm_predict_all(const LinearSvm& svm, const FeatureMatrix& x);

struct Ranking {
  /// Column indices, best first.
  std::vector<std::size_t> order;
  /// Weight vector of each elimination round over all columns (0 for columns
  /// already removed).
  std::vector<std::vector<double>> weights;
};

/// Recursive feature elimination, one column per round: the surviving column
/// with the smallest |w| is dropped, ties to the lower column index.
Ranking rfe_rank(const FeatureMatrix& x, std::span<const std::uint8_t> y, const SvmParams& params = {});

struct F1Curve {
  std::vector<double> f1;  // f1[k - 1] for the top-k subset
  std::size_t selected_k = 0;
  double tolerance = 0.0;
};

/// Top-k columns of a ranking in ascending column order.
std::vector<std::size_t> top_k_columns(const Ranking& ranking, std::size_t k);

/// Retrains on the top-k columns for every k and scores on validation data.
/// The selected k is the smallest with F1 >= max F1 - tolerance.
F1Curve f1_curve(const Ranking& ranking, const FeatureMatrix& x_train, std::span<const std::uint8_t> y_train,
                 const FeatureMatrix& x_val, std::span<const std::uint8_t> y_val, const SvmParams& params = {},
                 double tolerance = 0.005);

std::string ranking_csv(const Ranking& ranking, std::span<const std::string> names);
std::string f1_curve_csv(const F1Curve& curve);
/// One column name per line.
std::string selected_names_text(const Ranking& ranking, std::size_t k, std::span<const std::string> names);
std::vector<std::string> parse_selected_names(const std::string& text);

}  // namespace darkspot
