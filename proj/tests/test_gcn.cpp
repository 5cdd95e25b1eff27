#include "darkspot/features.hpp"
#include "darkspot/gcn.hpp"
#include "darkspot/superpixel.hpp"
#include "darkspot/synth.hpp"
#include "darkspot/util.hpp"
#include "gcn_oracle.hpp"
#include "scratch_dir.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>

using namespace darkspot;

namespace {

constexpr std::array<double, 2> kUnitWeights{1.0, 1.0};

GcnConfig tiny_config(int input_dim, int hidden, int layers, Aggregator agg = Aggregator::kSoftmax) {
  GcnConfig c;
  c.input_dim = input_dim;
  c.hidden = hidden;
  c.layers = layers;
  c.aggregator = agg;
  c.beta_init = agg == Aggregator::kPowerMean ? 2.0 : 1.0;
  return c;
}

void expect_close(const oracle::Mat& want, const std::vector<double>& got, double tol) {
  const std::size_t cols = want.empty() ? 0 : want[0].size();
  ASSERT_EQ(got.size(), want.size() * cols);
  for (std::size_t v = 0; v < want.size(); ++v) {
    for (std::size_t c = 0; c < cols; ++c) {
      const double w = static_cast<double>(want[v][c]);
      EXPECT_NEAR(got[v * cols + c], w, tol * std::max(1.0, std::abs(w))) << "node " << v << " channel " << c;
    }
  }
}

oracle::Mat rows_of(const std::vector<double>& flat, std::size_t cols) {
  oracle::Mat m;
  for (std::size_t i = 0; i < flat.size(); i += cols) m.emplace_back(flat.begin() + i, flat.begin() + i + cols);
  return m;
}

std::vector<double> random_values(std::size_t n, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> out(n);
  for (auto& v : out) v = u(rng);
  return out;
}

void zero_block(std::vector<double>& p, std::size_t start, std::size_t count) {
  std::fill_n(p.begin() + static_cast<std::ptrdiff_t>(start), count, 0.0);
}

// Ten small synthetic scenes turned into node-classification samples.
std::vector<GraphSample> synth_samples(int count, std::uint64_t seed) {
  SceneDistribution dist;
  dist.size = 64;
  dist.min_axis = 6;
  dist.max_axis = 14;
  std::vector<RegionGraph> graphs;
  std::vector<FeatureMatrix> mats;
  std::vector<BinaryMask> truths;
  for (int i = 0; i < count; ++i) {
    const Scene scene = generate(sample_scene(dist, mix_seed(seed, static_cast<std::uint64_t>(i))));
    SuperpixelParams sp;
    sp.n_init = 60;
    const LabelMap labels = segment(scene.grid, sp);
    graphs.push_back(build_graph(labels));
    mats.push_back(assemble_matrix(graphs.back(), scene.grid));
    truths.push_back(scene.truth);
  }
  const Normalizer norm = fit_normalizer(std::span<const FeatureMatrix>(mats));
  std::vector<GraphSample> out;
  for (int i = 0; i < count; ++i) {
    GraphSample s;
    s.graph = NodeGraph::from_region_graph(graphs[i]);
    const FeatureMatrix m = apply_normalizer(mats[i], norm);
    s.features.assign(m.values.begin(), m.values.end());
    s.labels = label_nodes(graphs[i], truths[i], 0.5);
    const auto marked = node_marked_pixels(graphs[i], truths[i]);
    for (int v = 0; v < graphs[i].node_count; ++v) {
      s.area.push_back(static_cast<std::uint64_t>(graphs[i].area(v)));
      s.truth_pixels.push_back(static_cast<std::uint64_t>(marked[v]));
    }
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace

TEST(Message, ReluPlusEpsilon) {
  const std::vector<double> h{-1.0, 2.0};
  const auto m = message<double>(h);
  EXPECT_EQ(m[0], 1e-7);
  EXPECT_EQ(m[1], 2.0 + 1e-7);
  const std::vector<double> zero(3, 0.0);
  for (double v : message<double>(zero)) EXPECT_EQ(v, 1e-7);
  const std::vector<double> hu{3.0};
  const std::vector<double> he{-5.0};
  EXPECT_EQ(message<double>(hu, he), std::vector<double>{1e-7});
}

TEST(SoftmaxAgg, Limits) {
  const std::vector<double> m{1.0, 3.0};
  EXPECT_EQ(softmax_agg<double>(m, 1, 0.0)[0], 2.0);
  EXPECT_NEAR(softmax_agg<double>(m, 1, 100.0)[0], 3.0, 1e-6);
  EXPECT_NEAR(softmax_agg<double>(m, 1, -100.0)[0], 1.0, 1e-6);
  EXPECT_EQ(softmax_agg<double>(std::vector<double>{}, 2, 1.0), (std::vector<double>{0.0, 0.0}));
}

TEST(SoftmaxAgg, BetaZeroIsExactMeanOnDyadicValues) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t n = 1 + rng() % 8;
    const std::size_t ch = 1 + rng() % 4;
    std::vector<double> m(n * ch);
    for (auto& v : m) v = static_cast<double>(rng() % 64) / 8.0;
    const auto got = softmax_agg<double>(m, ch, 0.0);
    const auto pm = powermean_agg<double>(std::vector<double>(m.size(), 1.0), ch, 1.0);
    for (std::size_t c = 0; c < ch; ++c) {
      double s = 0.0;
      for (std::size_t i = 0; i < n; ++i) s += m[i * ch + c];
      EXPECT_EQ(got[c], s / static_cast<double>(n));
      EXPECT_EQ(pm[c], 1.0);
    }
  }
}

TEST(PowerMeanAgg, Examples) {
  const std::vector<double> m{2.0, 4.0};
  EXPECT_EQ(powermean_agg<double>(m, 1, 1.0)[0], 3.0);
  // ((2^p + 4^p) / 2)^(1/p) = 4 (1 + 2^-p)^(1/p) / 2^(1/p), which tends to 4
  // only as 2^(-1/p).
  EXPECT_NEAR(powermean_agg<double>(m, 1, 64.0)[0], 4.0 * std::pow(2.0, -1.0 / 64.0), 1e-12);
  EXPECT_NEAR(powermean_agg<double>(m, 1, 1024.0)[0], 4.0, 1e-2);
  EXPECT_NEAR(powermean_agg<double>(m, 1, -1024.0)[0], 2.0, 1e-2);
  for (double p : {-3.0, 0.5, 1.0, 7.0}) {
    EXPECT_NEAR(powermean_agg<double>(std::vector<double>{5.0}, 1, p)[0], 5.0, 1e-12) << p;
  }
  EXPECT_THROW(powermean_agg<double>(m, 1, 0.0), ValidationError);
  EXPECT_THROW(powermean_agg<double>(std::vector<double>{1.0, -1.0}, 1, 2.0), ValidationError);
}

TEST(Aggregators, PermutationInvariantBitForBit) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 2 + rng() % 9;
    const std::size_t ch = 1 + rng() % 5;
    const auto m = random_values(n * ch, rng, 1e-7, 5.0);
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    std::vector<double> pm(m.size());
    for (std::size_t i = 0; i < n; ++i) {
      std::copy_n(m.begin() + perm[i] * ch, ch, pm.begin() + i * ch);
    }
    for (double beta : {-2.5, 0.3, 1.0, 4.0}) {
      EXPECT_EQ(softmax_agg<double>(m, ch, beta), softmax_agg<double>(pm, ch, beta));
    }
    for (double p : {-1.5, 0.5, 2.0, 6.0}) {
      EXPECT_EQ(powermean_agg<double>(m, ch, p), powermean_agg<double>(pm, ch, p));
    }
    const std::vector<float> mf(m.begin(), m.end());
    const std::vector<float> pmf(pm.begin(), pm.end());
    EXPECT_EQ(softmax_agg<float>(mf, ch, 1.5f), softmax_agg<float>(pmf, ch, 1.5f));
  }
}

TEST(Aggregators, OutputWithinMessageRange) {
  std::mt19937_64 rng(12);
  for (int trial = 0; trial < 40; ++trial) {
    const std::size_t n = 1 + rng() % 7;
    const std::size_t ch = 1 + rng() % 4;
    const auto m = random_values(n * ch, rng, 1e-7, 10.0);
    for (double beta : {-1000.0, -3.0, 0.0, 0.7, 50.0, 1000.0}) {
      const auto sm = softmax_agg<double>(m, ch, beta);
      const auto pw = powermean_agg<double>(m, ch, beta == 0.0 ? 1.0 : beta / 10.0);
      for (std::size_t c = 0; c < ch; ++c) {
        double lo = INFINITY, hi = -INFINITY;
        for (std::size_t i = 0; i < n; ++i) {
          lo = std::min(lo, m[i * ch + c]);
          hi = std::max(hi, m[i * ch + c]);
        }
        EXPECT_GE(sm[c], lo);
        EXPECT_LE(sm[c], hi);
        EXPECT_GE(pw[c], lo * (1 - 1e-12));
        EXPECT_LE(pw[c], hi * (1 + 1e-12));
      }
    }
  }
}

TEST(GraphConv, IsolatedNodeAndZeroScaleReduceToMlp) {
  std::mt19937_64 rng(5);
  const GcnConfig cfg = tiny_config(3, 4, 1);
  GcnModel<double> model = init_model<double>(cfg, 1);
  const std::vector<std::pair<int, int>> edges{{0, 1}, {1, 2}};
  const NodeGraph g = NodeGraph::from_edges(4, edges);  // node 3 is isolated
  const auto h = random_values(16, rng);
  const oracle::GcnParams P(cfg, model.params);
  const auto& L = P.layers[0];

  auto mlp_only = [&](std::size_t v) {
    std::vector<oracle::LD> row(h.begin() + v * 4, h.begin() + v * 4 + 4);
    return oracle::mlp(L, oracle::relu(oracle::layer_norm(row, L.gain, L.shift)));
  };

  const auto out = resplus_block<double>(model, 0, g, h);
  const auto iso = mlp_only(3);
  for (int c = 0; c < 4; ++c) EXPECT_NEAR(out[12 + c] - h[12 + c], static_cast<double>(iso[c]), 1e-12);

  model.params[ParamLayout(cfg).layers[0].s] = 0.0;
  const auto flat = resplus_block<double>(model, 0, g, h);
  for (std::size_t v = 0; v < 4; ++v) {
    const auto want = mlp_only(v);
    for (int c = 0; c < 4; ++c) EXPECT_NEAR(flat[v * 4 + c] - h[v * 4 + c], static_cast<double>(want[c]), 1e-12);
  }
}

TEST(GraphConv, HandTraceOnTwoNodePath) {
  // Width 2, unit norm gains, identity MLP weights, s = 1, y = 0.
  GcnConfig cfg = tiny_config(2, 2, 1);
  GcnModel<double> model = init_model<double>(cfg, 0);
  const ParamLayout lay(cfg);
  const auto& o = lay.layers[0];
  auto& p = model.params;
  zero_block(p, o.norm_shift, 2);
  zero_block(p, o.w1, 4);
  zero_block(p, o.b1, 2);
  zero_block(p, o.w2, 4);
  zero_block(p, o.b2, 2);
  p[o.w1] = p[o.w1 + 3] = 1.0;
  p[o.w2] = p[o.w2 + 3] = 1.0;
  const std::vector<std::pair<int, int>> edges{{0, 1}};
  const NodeGraph g = NodeGraph::from_edges(2, edges);
  const std::vector<double> h{1.0, 3.0, 4.0, 0.0};
  const auto out = resplus_block<double>(model, 0, g, h);

  // Node 0: norm (1, 3) -> (-a, a), a = 1/sqrt(1 + 1e-5); ReLU -> (0, a).
  // Node 1: norm (4, 0) -> (b, -b), b = 2/sqrt(4 + 1e-5); ReLU -> (b, 0).
  const double a = 1.0 / std::sqrt(1.0 + 1e-5);
  const double b = 2.0 / std::sqrt(4.0 + 1e-5);
  const double e = 1e-7;
  // Node 0 receives (b + e, e); |x_0| = a.
  const double n0 = std::hypot(b + e, e);
  const double z00 = 0.0 + a * (b + e) / n0;
  const double z01 = a + a * e / n0;
  // Node 1 receives (e, a + e); |x_1| = b.
  const double n1 = std::hypot(e, a + e);
  const double z10 = b + b * e / n1;
  const double z11 = 0.0 + b * (a + e) / n1;
  EXPECT_NEAR(out[0], 1.0 + z00, 1e-12);
  EXPECT_NEAR(out[1], 3.0 + z01, 1e-12);
  EXPECT_NEAR(out[2], 4.0 + z10, 1e-12);
  EXPECT_NEAR(out[3], 0.0 + z11, 1e-12);
}

TEST(ResPlus, ZeroWeightMlpIsIdentity) {
  std::mt19937_64 rng(6);
  const GcnConfig cfg = tiny_config(3, 5, 2);
  GcnModel<double> model = init_model<double>(cfg, 4);
  const ParamLayout lay(cfg);
  for (const auto& o : lay.layers) {
    zero_block(model.params, o.w1, 25);
    zero_block(model.params, o.b1, 5);
    zero_block(model.params, o.w2, 25);
    zero_block(model.params, o.b2, 5);
  }
  const std::vector<std::pair<int, int>> edges{{0, 1}, {1, 2}, {0, 2}};
  const NodeGraph g = NodeGraph::from_edges(3, edges);
  const auto h = random_values(15, rng);
  EXPECT_EQ(resplus_block<double>(model, 1, g, h), h);
}

TEST(ResPlus, TriangleMatchesComposition) {
  std::mt19937_64 rng(7);
  for (Aggregator agg : {Aggregator::kSoftmax, Aggregator::kPowerMean, Aggregator::kSum}) {
    const GcnConfig cfg = tiny_config(3, 4, 1, agg);
    GcnModel<double> model = init_model<double>(cfg, 9);
    const ParamLayout lay(cfg);
    model.params[lay.layers[0].y] = 0.6;
    model.params[lay.layers[0].s] = 1.3;
    for (int c = 0; c < 4; ++c) model.params[lay.layers[0].norm_shift + c] = 0.2 * c - 0.1;
    const std::vector<std::pair<int, int>> edges{{0, 1}, {1, 2}, {0, 2}};
    const NodeGraph g = NodeGraph::from_edges(3, edges);
    const auto h = random_values(12, rng, -2.0, 2.0);
    const oracle::GcnParams P(cfg, model.params);
    const auto want = oracle::resplus(P.layers[0], agg, rows_of(h, 4), oracle::adjacency(3, edges));
    expect_close(want, resplus_block<double>(model, 0, g, h), 1e-12);
  }
}

TEST(ResPlus, DropoutIsSeededAndOffInEval) {
  std::mt19937_64 rng(8);
  GcnConfig cfg = tiny_config(3, 8, 1);
  cfg.dropout = 0.5;
  const GcnModel<double> model = init_model<double>(cfg, 2);
  const std::vector<std::pair<int, int>> edges{{0, 1}, {1, 2}};
  const NodeGraph g = NodeGraph::from_edges(3, edges);
  const auto h = random_values(24, rng);
  const ForwardOptions t1{.training = true, .dropout_seed = 5};
  const ForwardOptions t2{.training = true, .dropout_seed = 6};
  EXPECT_EQ(resplus_block<double>(model, 0, g, h, t1), resplus_block<double>(model, 0, g, h, t1));
  EXPECT_NE(resplus_block<double>(model, 0, g, h, t1), resplus_block<double>(model, 0, g, h, t2));
  EXPECT_EQ(resplus_block<double>(model, 0, g, h), resplus_block<double>(model, 0, g, h, ForwardOptions{}));
  const oracle::GcnParams P(cfg, model.params);
  expect_close(oracle::resplus(P.layers[0], cfg.aggregator, rows_of(h, 8), oracle::adjacency(3, edges)),
               resplus_block<double>(model, 0, g, h), 1e-12);
}

TEST(Forward, MatchesStraightLineOracle) {
  std::mt19937_64 rng(9);
  const std::vector<std::pair<int, int>> edges{{0, 1}, {1, 2}, {2, 3}, {0, 2}};
  const NodeGraph g = NodeGraph::from_edges(4, edges);
  for (Aggregator agg : {Aggregator::kSoftmax, Aggregator::kPowerMean, Aggregator::kSum}) {
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
      const GcnConfig cfg = tiny_config(5, 4, 2, agg);
      const GcnModel<double> model = init_model<double>(cfg, seed);
      ASSERT_EQ(oracle::GcnParams(cfg, model.params).consumed, model.params.size());
      const auto x = random_values(20, rng);
      expect_close(oracle::gcn_forward(model, 4, edges, x), forward<double>(model, g, x), 1e-10);
    }
  }
}

TEST(Forward, SingleNodeAndDimensionCheck) {
  const GcnConfig cfg = tiny_config(3, 4, 2);
  const GcnModel<double> model = init_model<double>(cfg, 1);
  const NodeGraph g = NodeGraph::from_edges(1, {});
  const std::vector<double> x{0.1, 0.2, 0.3};
  const auto logits = forward<double>(model, g, x);
  ASSERT_EQ(logits.size(), 2u);
  EXPECT_TRUE(std::isfinite(logits[0]) && std::isfinite(logits[1]));
  EXPECT_THROW(forward<double>(model, g, std::vector<double>{0.1, 0.2}), ValidationError);
}

TEST(Forward, NodeRelabelingPermutesRows) {
  std::mt19937_64 rng(10);
  const int n = 12;
  std::vector<std::pair<int, int>> edges;
  for (int a = 0; a < n; ++a) {
    for (int b = a + 1; b < n; ++b) {
      if (rng() % 4 == 0) edges.emplace_back(a, b);
    }
  }
  const GcnConfig cfg = tiny_config(4, 6, 3);
  const GcnModel<double> model = init_model<double>(cfg, 3);
  const auto x = random_values(n * 4, rng);
  std::vector<int> perm(n);  // old id -> new id
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  std::vector<std::pair<int, int>> pedges;
  for (auto [a, b] : edges) pedges.emplace_back(perm[a], perm[b]);
  std::vector<double> px(x.size());
  for (int v = 0; v < n; ++v) std::copy_n(x.begin() + v * 4, 4, px.begin() + perm[v] * 4);
  const auto a = forward<double>(model, NodeGraph::from_edges(n, edges), x);
  const auto b = forward<double>(model, NodeGraph::from_edges(n, pedges), px);
  for (int v = 0; v < n; ++v) {
    EXPECT_EQ(a[2 * v], b[2 * perm[v]]);
    EXPECT_EQ(a[2 * v + 1], b[2 * perm[v] + 1]);
  }
  const auto pa = predict<double>(model, NodeGraph::from_edges(n, edges), x);
  const auto pb = predict<double>(model, NodeGraph::from_edges(n, pedges), px);
  for (int v = 0; v < n; ++v) EXPECT_EQ(pa[v], pb[perm[v]]);
}

TEST(Layout, DeclarationOrder) {
  const GcnConfig cfg = tiny_config(3, 4, 2);
  const ParamLayout lay(cfg);
  EXPECT_EQ(lay.enc_w, 0u);
  EXPECT_EQ(lay.enc_b, 12u);
  EXPECT_EQ(lay.layers[0].norm_gain, 16u);
  EXPECT_EQ(lay.layers[0].w1, 24u);
  EXPECT_EQ(lay.layers[0].beta, 64u);
  EXPECT_EQ(lay.layers[1].norm_gain, 67u);
  EXPECT_EQ(lay.final_gain, 118u);
  EXPECT_EQ(lay.dec_w, 126u);
  EXPECT_EQ(lay.dec_b, 134u);
  EXPECT_EQ(lay.total, 136u);
}

TEST(Gradients, MatchFiniteDifferences) {
  for (Aggregator agg : {Aggregator::kSoftmax, Aggregator::kPowerMean, Aggregator::kSum}) {
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
      const auto p = oracle::random_grad_problem(seed, 5, 3, 4, 2, agg);
      const auto r = oracle::gradient_check(p.model, p.graph, p.features, p.labels, {0.8, 1.7});
      EXPECT_LE(r.max_rel_error, 1e-4) << aggregator_name(agg) << " seed " << seed << " param " << r.worst_index;
    }
  }
}

TEST(Gradients, DegreeExponentGradientVanishes) {
  // The normalized message term divides out the degree scale, so the loss
  // does not depend on y.
  const auto p = oracle::random_grad_problem(4, 6, 3, 4, 2, Aggregator::kSoftmax);
  const auto r = oracle::gradient_check(p.model, p.graph, p.features, p.labels, kUnitWeights);
  EXPECT_LE(r.y_gradient_max, 1e-12);
}

TEST(Loss, UniformLogitsGiveLnTwo) {
  const GcnConfig cfg = tiny_config(2, 3, 1);
  GcnModel<double> model = init_model<double>(cfg, 0);
  const ParamLayout lay(cfg);
  zero_block(model.params, lay.dec_w, 6);
  zero_block(model.params, lay.dec_b, 2);
  const NodeGraph g = NodeGraph::from_edges(3, std::vector<std::pair<int, int>>{{0, 1}});
  const std::vector<double> x{0.1, 0.2, 0.3, 0.4, 0.5, 0.6};
  const std::vector<std::uint8_t> y{0, 1, 1};
  EXPECT_NEAR(loss_and_gradients<double>(model, g, x, y, std::array{0.9, 0.3}).loss, std::log(2.0), 1e-15);
}

TEST(Loss, SaturatedLogits) {
  const GcnConfig cfg = tiny_config(2, 3, 1);
  GcnModel<double> model = init_model<double>(cfg, 0);
  const ParamLayout lay(cfg);
  zero_block(model.params, lay.dec_w, 6);
  model.params[lay.dec_b] = -10.0;
  model.params[lay.dec_b + 1] = 10.0;
  const NodeGraph g = NodeGraph::from_edges(2, std::vector<std::pair<int, int>>{{0, 1}});
  const std::vector<double> x{0.1, 0.2, 0.3, 0.4};
  const std::vector<std::uint8_t> y{1, 1};
  const auto r = loss_and_gradients<double>(model, g, x, y, kUnitWeights);
  EXPECT_LT(r.loss, 1e-3);
  double norm = 0.0;
  for (double v : r.gradient) norm += v * v;
  EXPECT_LT(std::sqrt(norm), 1e-2);
}

TEST(Loss, RejectsNoLabeledNodes) {
  const GcnConfig cfg = tiny_config(2, 3, 1);
  const GcnModel<double> model = init_model<double>(cfg, 0);
  const NodeGraph g = NodeGraph::from_edges(2, {});
  const std::vector<double> x{0.1, 0.2, 0.3, 0.4};
  const std::vector<std::uint8_t> y{kUnlabeled, kUnlabeled};
  EXPECT_THROW(loss_and_gradients<double>(model, g, x, y, kUnitWeights), ValidationError);
}

TEST(Loss, ClassWeightsNormalizeOverLabeledNodes) {
  // Logits are constant, so the loss is a weighted mean of two constants.
  const GcnConfig cfg = tiny_config(2, 3, 1);
  GcnModel<double> model = init_model<double>(cfg, 0);
  const ParamLayout lay(cfg);
  zero_block(model.params, lay.dec_w, 6);
  model.params[lay.dec_b] = 0.0;
  model.params[lay.dec_b + 1] = 1.0;
  const NodeGraph g = NodeGraph::from_edges(3, {});
  const std::vector<double> x(6, 0.5);
  const std::vector<std::uint8_t> y{0, 1, kUnlabeled};
  const double l0 = std::log(1.0 + std::exp(1.0));   // -log softmax_0
  const double l1 = std::log(1.0 + std::exp(-1.0));  // -log softmax_1
  const double want = (2.0 * l0 + 3.0 * l1) / 5.0;
  EXPECT_NEAR(loss_and_gradients<double>(model, g, x, y, std::array{2.0, 3.0}).loss, want, 1e-14);
}

TEST(Adam, ZeroGradientLeavesParameters) {
  std::vector<double> p{1.0, -2.0, 3.5};
  const std::vector<double> g(3, 0.0);
  AdamState<double> s;
  for (int i = 0; i < 3; ++i) adam_step<double>(p, g, s);
  EXPECT_EQ(p, (std::vector<double>{1.0, -2.0, 3.5}));
}

TEST(Adam, FirstStepClosedForm) {
  // m = (1 - b1) g, v = (1 - b2) g^2; after bias correction the step is
  // lr * g / (|g| + eps).
  const std::vector<double> g{0.5, -3.0, 1e-3};
  std::vector<double> p{0.0, 0.0, 0.0};
  AdamState<double> s;
  adam_step<double>(p, g, s, AdamParams{.lr = 0.01});
  for (std::size_t i = 0; i < g.size(); ++i) {
    EXPECT_NEAR(p[i], -0.01 * g[i] / (std::abs(g[i]) + 1e-8), 1e-15);
  }
  EXPECT_EQ(s.step, 1u);
}

TEST(Adam, Deterministic) {
  std::mt19937_64 rng(13);
  const auto g1 = random_values(10, rng);
  const auto g2 = random_values(10, rng);
  auto run = [&] {
    std::vector<float> p(10, 0.5f);
    AdamState<float> s;
    const std::vector<float> a(g1.begin(), g1.end());
    const std::vector<float> b(g2.begin(), g2.end());
    adam_step<float>(p, a, s);
    adam_step<float>(p, b, s);
    return p;
  };
  EXPECT_EQ(run(), run());
}

TEST(Predict, TiesGoToSea) {
  const GcnConfig cfg = tiny_config(2, 3, 1);
  GcnModel<double> model = init_model<double>(cfg, 0);
  const ParamLayout lay(cfg);
  zero_block(model.params, lay.dec_w, 6);
  zero_block(model.params, lay.dec_b, 2);
  const NodeGraph g = NodeGraph::from_edges(2, std::vector<std::pair<int, int>>{{0, 1}});
  EXPECT_EQ(predict<double>(model, g, std::vector<double>{1, 2, 3, 4}), (NodeLabeling{0, 0}));
}

TEST(Predict, SaturatedModelRecoversPlantedLabels) {
  // Encoder copies feature 0 into channel 0; blocks are identities; the
  // decoder scores channel 0 for oil and channel 1 for sea.
  const GcnConfig cfg = tiny_config(2, 4, 2);
  GcnModel<double> model = init_model<double>(cfg, 0);
  const ParamLayout lay(cfg);
  auto& p = model.params;
  zero_block(p, lay.enc_w, 8);
  zero_block(p, lay.enc_b, 4);
  p[lay.enc_w] = 1.0;
  for (const auto& o : lay.layers) {
    zero_block(p, o.w1, 16);
    zero_block(p, o.b1, 4);
    zero_block(p, o.w2, 16);
    zero_block(p, o.b2, 4);
  }
  zero_block(p, lay.dec_w, 8);
  zero_block(p, lay.dec_b, 2);
  p[lay.dec_w + 1] = 10.0;      // logit 0 <- channel 1
  p[lay.dec_w + 4 + 0] = 10.0;  // logit 1 <- channel 0
  std::mt19937_64 rng(14);
  const int n = 20;
  std::vector<double> x;
  NodeLabeling planted;
  for (int v = 0; v < n; ++v) {
    const double f = (v % 3 == 0 ? 1.0 : -1.0) * (0.5 + static_cast<double>(rng() % 100) / 100.0);
    x.push_back(f);
    x.push_back(0.3);
    planted.push_back(f > 0 ? 1 : 0);
  }
  std::vector<std::pair<int, int>> edges;
  for (int v = 0; v + 1 < n; ++v) edges.emplace_back(v, v + 1);
  EXPECT_EQ(predict<double>(model, NodeGraph::from_edges(n, edges), x), planted);
}

TEST(Predict, AgreesWithForwardArgmax) {
  std::mt19937_64 rng(15);
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const GcnConfig cfg = tiny_config(3, 6, 2);
    const GcnModel<float> model = init_model<float>(cfg, seed);
    std::vector<std::pair<int, int>> edges{{0, 1}, {1, 2}, {2, 3}, {3, 4}, {4, 0}, {5, 6}};
    const NodeGraph g = NodeGraph::from_edges(8, edges);
    const auto xd = random_values(24, rng);
    const std::vector<float> x(xd.begin(), xd.end());
    const auto logits = forward<float>(model, g, x);
    const auto got = predict<float>(model, g, x);
    for (int v = 0; v < 8; ++v) EXPECT_EQ(got[v], logits[2 * v + 1] > logits[2 * v] ? 1 : 0);
  }
}

TEST(Checkpoint, RoundTripIsBitExact) {
  ScratchDir dir;
  const GcnConfig cfg = tiny_config(5, 6, 3, Aggregator::kPowerMean);
  TrainState state{init_model<float>(cfg, 8), {}, 7};
  std::mt19937_64 rng(16);
  const auto g = random_values(state.model.params.size(), rng);
  const std::vector<float> gf(g.begin(), g.end());
  adam_step<float>(state.model.params, gf, state.adam);
  save_checkpoint(dir / "a.ckpt", state);
  EXPECT_EQ(load_checkpoint(dir / "a.ckpt"), state);
}

TEST(Checkpoint, RejectsCorruptFiles) {
  ScratchDir dir;
  {
    std::ofstream out(dir / "bad.ckpt", std::ios::binary);
    out << "not a checkpoint";
  }
  EXPECT_ANY_THROW(load_checkpoint(dir / "bad.ckpt"));
  EXPECT_ANY_THROW(load_checkpoint(dir / "missing.ckpt"));
}

class TrainingTest : public ::testing::Test {
 protected:
  static void SetUpTestSuite() { samples_ = new std::vector<GraphSample>(synth_samples(10, 42)); }
  static void TearDownTestSuite() {
    delete samples_;
    samples_ = nullptr;
  }
  static TrainState fresh_state() {
    GcnConfig cfg = tiny_config(static_cast<int>((*samples_)[0].features.size() / (*samples_)[0].labels.size()), 16, 2);
    return TrainState{init_model<float>(cfg, 1), {}, 0};
  }
  static std::span<const GraphSample> train_set() { return std::span<const GraphSample>(*samples_).first(8); }
  static std::span<const GraphSample> val_set() { return std::span<const GraphSample>(*samples_).last(2); }
  static std::vector<GraphSample>* samples_;
};

std::vector<GraphSample>* TrainingTest::samples_ = nullptr;

TEST_F(TrainingTest, OneEpochLeavesOneHistoryRow) {
  TrainConfig tc;
  tc.epochs = 1;
  tc.batch_size = 4;
  const TrainResult r = train(fresh_state(), train_set(), val_set(), tc);
  ASSERT_EQ(r.history.size(), 1u);
  EXPECT_EQ(r.history[0].epoch, 1);
  EXPECT_EQ(r.last.epoch, 1);
  EXPECT_EQ(r.best_epoch, 1);
  EXPECT_NE(history_csv(r.history).find("epoch,train_loss"), std::string::npos);
}

TEST_F(TrainingTest, LossDropsOverThirtyEpochs) {
  TrainConfig tc;
  tc.epochs = 30;
  tc.batch_size = 16;
  const TrainResult r = train(fresh_state(), std::span<const GraphSample>(*samples_), val_set(), tc);
  ASSERT_EQ(r.history.size(), 30u);
  EXPECT_LE(r.history.back().train_loss, 0.8 * r.history.front().train_loss)
      << r.history.front().train_loss << " -> " << r.history.back().train_loss;
  for (float v : r.last.model.params) ASSERT_TRUE(std::isfinite(v));
}

TEST_F(TrainingTest, ResumeFromCheckpointIsExact) {
  ScratchDir dir;
  TrainConfig tc;
  tc.epochs = 3;
  tc.batch_size = 3;
  tc.seed = 5;
  const TrainResult full = train(fresh_state(), train_set(), val_set(), tc);
  const TrainResult part = train(fresh_state(), train_set(), val_set(), tc, 2);
  EXPECT_EQ(part.last.epoch, 2);
  save_checkpoint(dir / "e2.ckpt", part.last);
  const TrainResult rest = train(load_checkpoint(dir / "e2.ckpt"), train_set(), val_set(), tc);
  EXPECT_EQ(rest.last, full.last);
  ASSERT_EQ(rest.history.size(), 1u);
  EXPECT_EQ(rest.history[0].train_loss, full.history[2].train_loss);
}

TEST_F(TrainingTest, DeterministicAcrossRuns) {
  TrainConfig tc;
  tc.epochs = 2;
  tc.batch_size = 4;
  const TrainResult a = train(fresh_state(), train_set(), val_set(), tc);
  const TrainResult b = train(fresh_state(), train_set(), val_set(), tc);
  EXPECT_EQ(a.last, b.last);
  EXPECT_EQ(a.best, b.best);
}

TEST_F(TrainingTest, ClassWeightsInverseFrequency) {
  const auto w = class_weights(train_set());
  std::uint64_t n0 = 0, n1 = 0;
  for (const auto& s : train_set()) {
    for (auto y : s.labels) (y ? n1 : n0) += 1;
  }
  const double n = static_cast<double>(n0 + n1);
  EXPECT_DOUBLE_EQ(w[0], n / (2.0 * static_cast<double>(n0)));
  EXPECT_DOUBLE_EQ(w[1], n / (2.0 * static_cast<double>(n1)));
}

TEST(Samples, NodeConfusionAndConcatenation) {
  GraphSample a;
  a.graph = NodeGraph::from_edges(2, std::vector<std::pair<int, int>>{{0, 1}});
  a.features = {1, 2};
  a.labels = {0, 1};
  a.area = {10, 5};
  a.truth_pixels = {2, 5};
  const Confusion c = node_confusion(a, NodeLabeling{0, 1});
  EXPECT_EQ(c, (Confusion{5, 8, 0, 2}));
  GraphSample b = a;
  const GraphSample* both[] = {&a, &b};
  const GraphSample cat = concatenate_samples(both);
  EXPECT_EQ(cat.graph.node_count, 4);
  EXPECT_EQ(cat.labels, (NodeLabeling{0, 1, 0, 1}));
  EXPECT_EQ(std::vector<int>(cat.graph.neighbors(2).begin(), cat.graph.neighbors(2).end()), std::vector<int>{3});
}
