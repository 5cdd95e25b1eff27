#pragma once

#include "darkspot/metrics.hpp"
#include "darkspot/region_graph.hpp"

#include <array>
#include <concepts>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace darkspot {

inline constexpr double kMessageEpsilon = 1e-7;
inline constexpr double kLayerNormEpsilon = 1e-5;

enum class Aggregator { kSoftmax, kPowerMean, kSum };

std::string_view aggregator_name(Aggregator agg);
Aggregator parse_aggregator(std::string_view name);

/// Undirected graph in compressed adjacency form.
struct NodeGraph {
  int node_count = 0;
  std::vector<int> offsets{0};
  std::vector<int> adjacency;

  static NodeGraph from_edges(int node_count, std::span<const std::pair<int, int>> edges);
  static NodeGraph from_region_graph(const RegionGraph& graph);

  [[nodiscard]] int degree(int v) const { return offsets[v + 1] - offsets[v]; }
  [[nodiscard]] std::span<const int> neighbors(int v) const {
    return {adjacency.data() + offsets[v], static_cast<std::size_t>(degree(v))};
  }
};

/// Disjoint union; node ids of graph i are shifted by the node counts before it.
NodeGraph concatenate(std::span<const NodeGraph* const> graphs);

// Building blocks, exposed for testing. Messages are row-major
// (count x channels).

/// ReLU(h + e) + epsilon; `edge` may be empty.
template <std::floating_point Real>
std::vector<Real> message(std::span<const Real> h, std::span<const Real> edge = {});

/// Per-channel softmax-weighted sum over the message list. Empty list -> zeros.
template <std::floating_point Real>
std::vector<Real> softmax_agg(std::span<const Real> messages, std::size_t channels, Real beta);

/// Per-channel power mean ((1/n) sum m^p)^(1/p). Messages must be positive;
/// p = 0 is rejected. Empty list -> zeros.
template <std::floating_point Real>
std::vector<Real> powermean_agg(std::span<const Real> messages, std::size_t channels, Real p);

struct GcnConfig {
  int input_dim = 0;
  int hidden = 128;
  int layers = 28;
  Aggregator aggregator = Aggregator::kSoftmax;
  double dropout = 0.2;
  double beta_init = 1.0;  // temperature, or the power p for kPowerMean
  double s_init = 1.0;
  double y_init = 0.0;
  friend bool operator==(const GcnConfig&, const GcnConfig&) = default;
};

/// Offsets of each parameter block in the flat parameter vector.
struct LayerOffsets {
  std::size_t norm_gain, norm_shift, w1, b1, w2, b2, beta, s, y;
};

struct ParamLayout {
  std::size_t enc_w = 0, enc_b = 0;
  std::vector<LayerOffsets> layers;
  std::size_t final_gain = 0, final_shift = 0, dec_w = 0, dec_b = 0;
  std::size_t total = 0;

  explicit ParamLayout(const GcnConfig& config);
};

/// Parameters in declaration order: encoder weight (hidden x input) and bias;
/// per layer norm gain, norm shift, MLP weights/biases, beta, s, y; final norm
/// gain and shift; decoder weight (2 x hidden) and bias.
template <std::floating_point Real>
struct GcnModel {
  GcnConfig config;
  std::vector<Real> params;

  [[nodiscard]] ParamLayout layout() const { return ParamLayout(config); }
  friend bool operator==(const GcnModel&, const GcnModel&) = default;
};

/// Linear weights ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)), biases likewise, norm
/// gains 1, shifts 0, beta/s/y from the config.
template <std::floating_point Real>
GcnModel<Real> init_model(const GcnConfig& config, std::uint64_t seed);

template <std::floating_point Real>
GcnModel<Real> convert_model(const GcnModel<double>& model);

struct ForwardOptions {
  bool training = false;  // enables dropout
  std::uint64_t dropout_seed = 0;
};

/// Per-node logits, row-major (nodes x 2). `features` is nodes x input_dim.
template <std::floating_point Real>
std::vector<Real> forward(const GcnModel<Real>& model, const NodeGraph& graph, std::span<const Real> features,
                          const ForwardOptions& options = {});

/// Output of one Res+ block for given node states (nodes x hidden).
template <std::floating_point Real>
std::vector<Real> resplus_block(const GcnModel<Real>& model, int layer, const NodeGraph& graph,
                                std::span<const Real> states, const ForwardOptions& options = {});

inline constexpr std::uint8_t kUnlabeled = 255;

template <std::floating_point Real>
struct LossAndGradient {
  Real loss = 0;
  std::vector<Real> gradient;  // same layout as params
};

/// Class-weighted mean cross-entropy over labeled nodes and its gradient with
/// respect to every parameter. Nodes labelled kUnlabeled are skipped.
template <std::floating_point Real>
LossAndGradient<Real> loss_and_gradients(const GcnModel<Real>& model, const NodeGraph& graph,
                                         std::span<const Real> features, std::span<const std::uint8_t> labels,
                                         std::span<const double, 2> class_weights, const ForwardOptions& options = {});

template <std::floating_point Real>
struct AdamState {
  std::vector<Real> m;
  std::vector<Real> v;
  std::uint64_t step = 0;
  friend bool operator==(const AdamState&, const AdamState&) = default;
};

struct AdamParams {
  double lr = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <std::floating_point Real>
void adam_step(std::vector<Real>& params, std::span<const Real> gradient, AdamState<Real>& state,
               const AdamParams& hp = {});

/// argmax of eval-mode logits; ties go to class 0.
template <std::floating_point Real>
NodeLabeling predict(const GcnModel<Real>& model, const NodeGraph& graph, std::span<const Real> features);

// Training.

/// One graph with its features, node labels and the pixel counts needed for
/// pixel-level validation scores.
struct GraphSample {
  NodeGraph graph;
  std::vector<float> features;  // nodes x input_dim
  NodeLabeling labels;
  std::vector<std::uint64_t> area;
  std::vector<std::uint64_t> truth_pixels;
};

struct TrainConfig {
  double learning_rate = 0.001;
  int batch_size = 16;
  int epochs = 100;
  std::uint64_t seed = 0;
  bool class_weighted = true;
};

struct TrainState {
  GcnModel<float> model;
  AdamState<float> adam;
  int epoch = 0;  // completed epochs
  friend bool operator==(const TrainState&, const TrainState&) = default;
};

struct HistoryRow {
  int epoch = 0;
  double train_loss = 0.0;
  MetricsReport val;
  std::optional<double> val_f1;
};

struct TrainResult {
  TrainState last;
  GcnModel<float> best;
  int best_epoch = 0;
  std::vector<HistoryRow> history;
};

/// w_c = N / (2 N_c) over labeled training nodes (1 for an absent class).
std::array<double, 2> class_weights(std::span<const GraphSample> samples);

/// Pixel confusion from node predictions via per-node area and truth counts.
Confusion node_confusion(const GraphSample& sample, const NodeLabeling& predicted);

/// Runs epochs state.epoch + 1 .. config.epochs (or `max_epochs` of them).
/// Each epoch shuffles the training graphs with a seed derived from
/// (config.seed, epoch), so a run resumed from a saved state continues
/// exactly. The best checkpoint maximizes validation F1, then accuracy,
/// earliest epoch on ties.
TrainResult train(TrainState state, std::span<const GraphSample> train_set, std::span<const GraphSample> val_set,
                  const TrainConfig& config, int max_epochs = -1);

/// Mini-batch of graphs concatenated into one disconnected graph.
GraphSample concatenate_samples(std::span<const GraphSample* const> samples);

std::string history_csv(std::span<const HistoryRow> history);

/// Versioned little-endian checkpoint: header, float parameters, then the
/// optimizer section.
void save_checkpoint(const std::filesystem::path& path, const TrainState& state);
TrainState load_checkpoint(const std::filesystem::path& path);

}  // namespace darkspot
