#include "darkspot/gcn.hpp"

#include "darkspot/util.hpp"

#include <fmt/core.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <random>
#include <stdexcept>

namespace darkspot {

std::string_view aggregator_name(Aggregator agg) {
  switch (agg) {
    case Aggregator::kSoftmax:
      return "softmax";
    case Aggregator::kPowerMean:
      return "powermean";
    case Aggregator::kSum:
      return "sum";
  }
  return "unknown";
}

Aggregator parse_aggregator(std::string_view name) {
  if (name == "softmax") return Aggregator::kSoftmax;
  if (name == "powermean") return Aggregator::kPowerMean;
  if (name == "sum") return Aggregator::kSum;
  throw ValidationError(fmt::format("unknown aggregator '{}' (expected softmax, powermean or sum)", name));
}

NodeGraph NodeGraph::from_edges(int node_count, std::span<const std::pair<int, int>> edges) {
  std::vector<std::vector<int>> adj(node_count);
  for (const auto& [u, v] : edges) {
    if (u < 0 || v < 0 || u >= node_count || v >= node_count) {
      throw ValidationError(fmt::format("edge ({}, {}) out of range for {} nodes", u, v, node_count));
    }
    if (u == v) continue;
    adj[u].push_back(v);
    adj[v].push_back(u);
  }
  NodeGraph g;
  g.node_count = node_count;
  g.offsets.assign(1, 0);
  for (auto& nb : adj) {
    std::sort(nb.begin(), nb.end());
    nb.erase(std::unique(nb.begin(), nb.end()), nb.end());
    g.adjacency.insert(g.adjacency.end(), nb.begin(), nb.end());
    g.offsets.push_back(static_cast<int>(g.adjacency.size()));
  }
  return g;
}

NodeGraph NodeGraph::from_region_graph(const RegionGraph& graph) {
  return from_edges(graph.node_count, graph.edges);
}

NodeGraph concatenate(std::span<const NodeGraph* const> graphs) {
  NodeGraph out;
  out.offsets.assign(1, 0);
  for (const NodeGraph* g : graphs) {
    const int shift = out.node_count;
    for (int v = 0; v < g->node_count; ++v) {
      for (int u : g->neighbors(v)) out.adjacency.push_back(u + shift);
      out.offsets.push_back(static_cast<int>(out.adjacency.size()));
    }
    out.node_count += g->node_count;
  }
  return out;
}

ParamLayout::ParamLayout(const GcnConfig& config) {
  const auto d = static_cast<std::size_t>(config.input_dim);
  const auto h = static_cast<std::size_t>(config.hidden);
  std::size_t at = 0;
  auto take = [&at](std::size_t n) {
    const std::size_t start = at;
    at += n;
    return start;
  };
  enc_w = take(h * d);
  enc_b = take(h);
  for (int l = 0; l < config.layers; ++l) {
    LayerOffsets o{};
    o.norm_gain = take(h);
    o.norm_shift = take(h);
    o.w1 = take(h * h);
    o.b1 = take(h);
    o.w2 = take(h * h);
    o.b2 = take(h);
    o.beta = take(1);
    o.s = take(1);
    o.y = take(1);
    layers.push_back(o);
  }
  final_gain = take(h);
  final_shift = take(h);
  dec_w = take(2 * h);
  dec_b = take(2);
  total = at;
}

namespace {

void check_config(const GcnConfig& c) {
  if (c.input_dim <= 0) throw ValidationError("gcn: input_dim must be positive");
  if (c.hidden <= 0) throw ValidationError("gcn: hidden width must be positive");
  if (c.layers < 0) throw ValidationError("gcn: layer count must be non-negative");
  if (!(c.dropout >= 0.0 && c.dropout < 1.0)) throw ValidationError("gcn: dropout must be in [0, 1)");
  if (c.aggregator == Aggregator::kPowerMean && c.beta_init == 0.0) {
    throw ValidationError("gcn: power mean exponent must be non-zero");
  }
}

// Aggregation of the messages of `nbrs` (rows of m) into out[0..H). Each
// channel's values are sorted before reducing so the result does not depend
// on neighbor order, bit for bit.
template <typename Real>
void aggregate_node(Aggregator kind, const Real* m, std::size_t h, std::span<const int> nbrs, Real param, Real* out) {
  if (nbrs.empty()) {
    std::fill_n(out, h, Real(0));
    return;
  }
  const auto n = static_cast<Real>(nbrs.size());
  std::vector<Real> vals(nbrs.size());
  for (std::size_t c = 0; c < h; ++c) {
    for (std::size_t i = 0; i < nbrs.size(); ++i) vals[i] = m[static_cast<std::size_t>(nbrs[i]) * h + c];
    std::sort(vals.begin(), vals.end());
    switch (kind) {
      case Aggregator::kSoftmax: {
        Real mx = -std::numeric_limits<Real>::infinity();
        for (Real v : vals) mx = std::max(mx, param * v);
        Real sw = 0;
        Real swm = 0;
        for (Real v : vals) {
          const Real w = std::exp(param * v - mx);
          sw += w;
          swm += w * v;
        }
        out[c] = swm / sw;
        break;
      }
      case Aggregator::kPowerMean: {
        if (param == Real(1)) {
          Real sum = 0;
          for (Real v : vals) sum += v;
          out[c] = sum / n;
          break;
        }
        Real mx = -std::numeric_limits<Real>::infinity();
        for (Real v : vals) mx = std::max(mx, param * std::log(v));
        Real s = 0;
        for (Real v : vals) s += std::exp(param * std::log(v) - mx);
        out[c] = std::exp((mx + std::log(s) - std::log(n)) / param);
        break;
      }
      case Aggregator::kSum: {
        Real sum = 0;
        for (Real v : vals) sum += v;
        out[c] = sum;
        break;
      }
    }
  }
}

// Accumulates d(out)/d(m) into dm and d(out)/d(param) into dparam.
template <typename Real>
void aggregate_node_backward(Aggregator kind, const Real* m, std::size_t h, std::span<const int> nbrs, Real param,
                             const Real* a, const Real* da, Real* dm, Real& dparam) {
  if (nbrs.empty()) return;
  for (std::size_t c = 0; c < h; ++c) {
    const Real g = da[c];
    if (g == Real(0)) continue;
    switch (kind) {
      case Aggregator::kSoftmax: {
        Real mx = -std::numeric_limits<Real>::infinity();
        for (int u : nbrs) mx = std::max(mx, param * m[u * h + c]);
        Real sw = 0;
        for (int u : nbrs) sw += std::exp(param * m[u * h + c] - mx);
        Real dp = 0;
        for (int u : nbrs) {
          const Real mu = m[u * h + c];
          const Real w = std::exp(param * mu - mx) / sw;
          dm[u * h + c] += g * w * (Real(1) + param * (mu - a[c]));
          dp += w * mu * (mu - a[c]);
        }
        dparam += g * dp;
        break;
      }
      case Aggregator::kPowerMean: {
        Real mx = -std::numeric_limits<Real>::infinity();
        for (int u : nbrs) mx = std::max(mx, param * std::log(m[u * h + c]));
        Real s = 0;
        for (int u : nbrs) s += std::exp(param * std::log(m[u * h + c]) - mx);
        Real wlog = 0;
        for (int u : nbrs) {
          const Real mu = m[u * h + c];
          const Real w = std::exp(param * std::log(mu) - mx) / s;
          dm[u * h + c] += g * a[c] * w / mu;
          wlog += w * std::log(mu);
        }
        dparam += g * a[c] / param * (wlog - std::log(a[c]));
        break;
      }
      case Aggregator::kSum:
        for (int u : nbrs) dm[u * h + c] += g;
        break;
    }
  }
}

// out (n x m) = in (n x k) * W^T + b, W is m x k.
template <typename Real>
void linear(const Real* in, std::size_t n, std::size_t k, const Real* w, const Real* b, std::size_t m, Real* out) {
  for (std::size_t i = 0; i < n; ++i) {
    const Real* x = in + i * k;
    for (std::size_t j = 0; j < m; ++j) {
      const Real* wr = w + j * k;
      Real acc = b[j];
      for (std::size_t t = 0; t < k; ++t) acc += wr[t] * x[t];
      out[i * m + j] = acc;
    }
  }
}

template <typename Real>
void linear_backward(const Real* in, std::size_t n, std::size_t k, const Real* w, std::size_t m, const Real* dout,
                     Real* din, Real* dw, Real* db) {
  for (std::size_t i = 0; i < n; ++i) {
    const Real* x = in + i * k;
    for (std::size_t j = 0; j < m; ++j) {
      const Real g = dout[i * m + j];
      if (g == Real(0)) continue;
      db[j] += g;
      Real* dwr = dw + j * k;
      const Real* wr = w + j * k;
      for (std::size_t t = 0; t < k; ++t) dwr[t] += g * x[t];
      if (din) {
        Real* dx = din + i * k;
        for (std::size_t t = 0; t < k; ++t) dx[t] += g * wr[t];
      }
    }
  }
}

template <typename Real>
void layer_norm(const Real* in, std::size_t n, std::size_t h, const Real* gain, const Real* shift, Real* out,
                Real* xhat, Real* inv_std) {
  for (std::size_t i = 0; i < n; ++i) {
    const Real* x = in + i * h;
    Real mean = 0;
    for (std::size_t c = 0; c < h; ++c) mean += x[c];
    mean /= static_cast<Real>(h);
    Real var = 0;
    for (std::size_t c = 0; c < h; ++c) var += (x[c] - mean) * (x[c] - mean);
    var /= static_cast<Real>(h);
    const Real is = Real(1) / std::sqrt(var + static_cast<Real>(kLayerNormEpsilon));
    inv_std[i] = is;
    for (std::size_t c = 0; c < h; ++c) {
      const Real xh = (x[c] - mean) * is;
      xhat[i * h + c] = xh;
      out[i * h + c] = gain[c] * xh + shift[c];
    }
  }
}

template <typename Real>
void layer_norm_backward(const Real* xhat, const Real* inv_std, std::size_t n, std::size_t h, const Real* gain,
                         const Real* dout, Real* din, Real* dgain, Real* dshift) {
  std::vector<Real> dx(h);
  for (std::size_t i = 0; i < n; ++i) {
    Real sum_dx = 0;
    Real sum_dx_xh = 0;
    for (std::size_t c = 0; c < h; ++c) {
      const Real g = dout[i * h + c];
      const Real xh = xhat[i * h + c];
      dgain[c] += g * xh;
      dshift[c] += g;
      dx[c] = g * gain[c];
      sum_dx += dx[c];
      sum_dx_xh += dx[c] * xh;
    }
    const Real hn = static_cast<Real>(h);
    for (std::size_t c = 0; c < h; ++c) {
      din[i * h + c] += inv_std[i] / hn * (hn * dx[c] - sum_dx - xhat[i * h + c] * sum_dx_xh);
    }
  }
}

template <typename Real>
struct BlockCache {
  std::vector<Real> xhat, inv_std, r, m, agg, scale, gnorm, rnorm, z, q, qd, drop;
};

template <typename Real>
struct Tape {
  std::vector<BlockCache<Real>> blocks;
  std::vector<Real> final_xhat, final_inv_std, final_r;
};

// Res+ block: h_out = h_in + conv(ReLU(LayerNorm(h_in))).
template <typename Real>
void block_forward(const GcnModel<Real>& model, const ParamLayout& lay, int layer, const NodeGraph& graph,
                   const Real* h_in, const ForwardOptions& opt, BlockCache<Real>& k, Real* h_out) {
  const auto n = static_cast<std::size_t>(graph.node_count);
  const auto h = static_cast<std::size_t>(model.config.hidden);
  const auto& o = lay.layers[layer];
  const Real* p = model.params.data();
  const Real beta = p[o.beta];
  const Real s = p[o.s];
  const Real y = p[o.y];

  k.xhat.resize(n * h);
  k.inv_std.resize(n);
  k.r.resize(n * h);
  layer_norm(h_in, n, h, p + o.norm_gain, p + o.norm_shift, k.r.data(), k.xhat.data(), k.inv_std.data());
  for (auto& v : k.r) v = std::max(v, Real(0));

  // Edge features are absent, so each message is ReLU(h_u) + epsilon.
  k.m.resize(n * h);
  for (std::size_t i = 0; i < n * h; ++i) k.m[i] = std::max(k.r[i], Real(0)) + static_cast<Real>(kMessageEpsilon);

  k.agg.assign(n * h, 0);
  k.scale.assign(n, 0);
  k.gnorm.assign(n, 0);
  k.rnorm.assign(n, 0);
  k.z.resize(n * h);
  for (std::size_t v = 0; v < n; ++v) {
    const auto nbrs = graph.neighbors(static_cast<int>(v));
    const Real* rv = k.r.data() + v * h;
    Real* zv = k.z.data() + v * h;
    Real rn = 0;
    for (std::size_t c = 0; c < h; ++c) rn += rv[c] * rv[c];
    k.rnorm[v] = std::sqrt(rn);
    std::copy(rv, rv + h, zv);
    if (nbrs.empty()) continue;
    Real* av = k.agg.data() + v * h;
    aggregate_node(model.config.aggregator, k.m.data(), h, nbrs, beta, av);
    const Real scale = std::exp(y * std::log(static_cast<Real>(nbrs.size())));
    k.scale[v] = scale;
    Real gn = 0;
    for (std::size_t c = 0; c < h; ++c) gn += (scale * av[c]) * (scale * av[c]);
    gn = std::sqrt(gn);
    k.gnorm[v] = gn;
    if (gn > Real(0)) {
      const Real f = s * k.rnorm[v] / gn;
      for (std::size_t c = 0; c < h; ++c) zv[c] += f * scale * av[c];
    }
  }

  k.q.resize(n * h);
  linear(k.z.data(), n, h, p + o.w1, p + o.b1, h, k.q.data());
  k.qd.resize(n * h);
  for (std::size_t i = 0; i < n * h; ++i) k.qd[i] = std::max(k.q[i], Real(0));
  const double rate = model.config.dropout;
  if (opt.training && rate > 0.0) {
    std::mt19937_64 engine(mix_seed(opt.dropout_seed, static_cast<std::uint64_t>(layer) + 1));
    const Real keep_scale = static_cast<Real>(1.0 / (1.0 - rate));
    k.drop.resize(n * h);
    for (std::size_t i = 0; i < n * h; ++i) {
      k.drop[i] = unit_uniform(engine()) < rate ? Real(0) : keep_scale;
      k.qd[i] *= k.drop[i];
    }
  } else {
    k.drop.clear();
  }
  linear(k.qd.data(), n, h, p + o.w2, p + o.b2, h, h_out);
  for (std::size_t i = 0; i < n * h; ++i) h_out[i] += h_in[i];
}

template <typename Real>
void block_backward(const GcnModel<Real>& model, const ParamLayout& lay, int layer, const NodeGraph& graph,
                    const BlockCache<Real>& k, Real* dh, Real* grad) {
  const auto n = static_cast<std::size_t>(graph.node_count);
  const auto h = static_cast<std::size_t>(model.config.hidden);
  const auto& o = lay.layers[layer];
  const Real* p = model.params.data();
  const Real beta = p[o.beta];
  const Real s = p[o.s];

  // dh holds d(loss)/d(h_out); the residual path passes it through unchanged.
  std::vector<Real> dqd(n * h, 0);
  linear_backward(k.qd.data(), n, h, p + o.w2, h, dh, dqd.data(), grad + o.w2, grad + o.b2);
  for (std::size_t i = 0; i < n * h; ++i) {
    if (!k.drop.empty()) dqd[i] *= k.drop[i];
    if (!(k.q[i] > Real(0))) dqd[i] = 0;
  }
  std::vector<Real> dz(n * h, 0);
  linear_backward(k.z.data(), n, h, p + o.w1, h, dqd.data(), dz.data(), grad + o.w1, grad + o.b1);

  std::vector<Real> dr(dz);
  std::vector<Real> dm(n * h, 0);
  std::vector<Real> da(h);
  std::vector<Real> ghat(h);
  Real dbeta = 0;
  Real ds = 0;
  Real dy = 0;
  for (std::size_t v = 0; v < n; ++v) {
    const auto nbrs = graph.neighbors(static_cast<int>(v));
    const Real gn = k.gnorm[v];
    if (nbrs.empty() || !(gn > Real(0))) continue;
    const Real* av = k.agg.data() + v * h;
    const Real* dzv = dz.data() + v * h;
    const Real* rv = k.r.data() + v * h;
    const Real scale = k.scale[v];
    const Real rn = k.rnorm[v];
    Real dz_ghat = 0;
    for (std::size_t c = 0; c < h; ++c) {
      ghat[c] = scale * av[c] / gn;
      dz_ghat += dzv[c] * ghat[c];
    }
    ds += rn * dz_ghat;
    if (rn > Real(0)) {
      const Real t = s * dz_ghat / rn;
      for (std::size_t c = 0; c < h; ++c) dr[v * h + c] += t * rv[c];
    }
    // d/dg of g / |g| applied to s |r| dz.
    Real proj = 0;
    for (std::size_t c = 0; c < h; ++c) proj += ghat[c] * s * rn * dzv[c];
    Real dg_a = 0;
    for (std::size_t c = 0; c < h; ++c) {
      const Real dg = (s * rn * dzv[c] - ghat[c] * proj) / gn;
      da[c] = scale * dg;
      dg_a += dg * av[c];
    }
    dy += dg_a * scale * std::log(static_cast<Real>(nbrs.size()));
    aggregate_node_backward(model.config.aggregator, k.m.data(), h, nbrs, beta, av, da.data(), dm.data(), dbeta);
  }
  grad[o.beta] += dbeta;
  grad[o.s] += ds;
  grad[o.y] += dy;
  for (std::size_t i = 0; i < n * h; ++i) {
    if (k.r[i] > Real(0)) dr[i] += dm[i];
    else dr[i] = 0;  // r = ReLU(norm output); its gradient stops where r = 0
  }
  layer_norm_backward(k.xhat.data(), k.inv_std.data(), n, h, p + o.norm_gain, dr.data(), dh, grad + o.norm_gain,
                      grad + o.norm_shift);
}

template <typename Real>
std::vector<Real> forward_impl(const GcnModel<Real>& model, const NodeGraph& graph, std::span<const Real> features,
                               const ForwardOptions& opt, Tape<Real>* tape, std::vector<Real>* final_h) {
  const auto n = static_cast<std::size_t>(graph.node_count);
  const auto d = static_cast<std::size_t>(model.config.input_dim);
  const auto h = static_cast<std::size_t>(model.config.hidden);
  if (features.size() != n * d) {
    throw ValidationError(
        fmt::format("feature matrix has {} values, expected {} nodes x {} features", features.size(), n, d));
  }
  const ParamLayout lay(model.config);
  if (model.params.size() != lay.total) throw ValidationError("gcn: parameter vector does not match configuration");
  const Real* p = model.params.data();

  std::vector<Real> cur(n * h);
  linear(features.data(), n, d, p + lay.enc_w, p + lay.enc_b, h, cur.data());
  std::vector<Real> next(n * h);
  BlockCache<Real> scratch;
  if (tape) tape->blocks.resize(model.config.layers);
  for (int l = 0; l < model.config.layers; ++l) {
    BlockCache<Real>& k = tape ? tape->blocks[l] : scratch;
    block_forward(model, lay, l, graph, cur.data(), opt, k, next.data());
    cur.swap(next);
  }
  std::vector<Real> xhat(n * h), inv_std(n), r(n * h);
  layer_norm(cur.data(), n, h, p + lay.final_gain, p + lay.final_shift, r.data(), xhat.data(), inv_std.data());
  for (auto& v : r) v = std::max(v, Real(0));
  std::vector<Real> logits(n * 2);
  linear(r.data(), n, h, p + lay.dec_w, p + lay.dec_b, 2, logits.data());
  if (tape) {
    tape->final_xhat = std::move(xhat);
    tape->final_inv_std = std::move(inv_std);
    tape->final_r = std::move(r);
  }
  if (final_h) *final_h = std::move(cur);
  return logits;
}

}  // namespace

template <std::floating_point Real>
std::vector<Real> message(std::span<const Real> h, std::span<const Real> edge) {
  if (!edge.empty() && edge.size() != h.size()) throw ValidationError("message: edge vector has the wrong size");
  std::vector<Real> out(h.size());
  for (std::size_t c = 0; c < h.size(); ++c) {
    const Real x = edge.empty() ? h[c] : h[c] + edge[c];
    out[c] = std::max(x, Real(0)) + static_cast<Real>(kMessageEpsilon);
  }
  return out;
}

namespace {

template <typename Real>
std::vector<Real> aggregate_list(Aggregator kind, std::span<const Real> messages, std::size_t channels, Real param) {
  if (channels == 0 || messages.size() % channels != 0) throw ValidationError("aggregate: ragged message list");
  std::vector<int> idx(messages.size() / channels);
  std::iota(idx.begin(), idx.end(), 0);
  std::vector<Real> out(channels, 0);
  aggregate_node(kind, messages.data(), channels, std::span<const int>(idx), param, out.data());
  return out;
}

}  // namespace

template <std::floating_point Real>
std::vector<Real> softmax_agg(std::span<const Real> messages, std::size_t channels, Real beta) {
  return aggregate_list(Aggregator::kSoftmax, messages, channels, beta);
}

template <std::floating_point Real>
std::vector<Real> powermean_agg(std::span<const Real> messages, std::size_t channels, Real p) {
  if (p == Real(0)) throw ValidationError("powermean_agg: p must be non-zero");
  for (Real m : messages) {
    if (!(m > Real(0))) throw ValidationError("powermean_agg: messages must be positive");
  }
  return aggregate_list(Aggregator::kPowerMean, messages, channels, p);
}

template <std::floating_point Real>
GcnModel<Real> init_model(const GcnConfig& config, std::uint64_t seed) {
  check_config(config);
  const ParamLayout lay(config);
  GcnModel<Real> model;
  model.config = config;
  model.params.assign(lay.total, Real(0));
  std::mt19937_64 engine(seed);
  auto fill_uniform = [&](std::size_t start, std::size_t count, std::size_t fan_in) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (std::size_t i = 0; i < count; ++i) {
      model.params[start + i] = static_cast<Real>((2.0 * unit_uniform(engine()) - 1.0) * bound);
    }
  };
  const auto d = static_cast<std::size_t>(config.input_dim);
  const auto h = static_cast<std::size_t>(config.hidden);
  fill_uniform(lay.enc_w, h * d, d);
  fill_uniform(lay.enc_b, h, d);
  for (const auto& o : lay.layers) {
    std::fill_n(model.params.begin() + static_cast<std::ptrdiff_t>(o.norm_gain), h, Real(1));
    fill_uniform(o.w1, h * h, h);
    fill_uniform(o.b1, h, h);
    fill_uniform(o.w2, h * h, h);
    fill_uniform(o.b2, h, h);
    model.params[o.beta] = static_cast<Real>(config.beta_init);
    model.params[o.s] = static_cast<Real>(config.s_init);
    model.params[o.y] = static_cast<Real>(config.y_init);
  }
  std::fill_n(model.params.begin() + static_cast<std::ptrdiff_t>(lay.final_gain), h, Real(1));
  fill_uniform(lay.dec_w, 2 * h, h);
  fill_uniform(lay.dec_b, 2, h);
  return model;
}

template <std::floating_point Real>
GcnModel<Real> convert_model(const GcnModel<double>& model) {
  GcnModel<Real> out;
  out.config = model.config;
  out.params.assign(model.params.begin(), model.params.end());
  return out;
}

template <std::floating_point Real>
std::vector<Real> forward(const GcnModel<Real>& model, const NodeGraph& graph, std::span<const Real> features,
                          const ForwardOptions& options) {
  return forward_impl<Real>(model, graph, features, options, nullptr, nullptr);
}

template <std::floating_point Real>
std::vector<Real> resplus_block(const GcnModel<Real>& model, int layer, const NodeGraph& graph,
                                std::span<const Real> states, const ForwardOptions& options) {
  const ParamLayout lay(model.config);
  if (layer < 0 || layer >= model.config.layers) throw ValidationError("resplus_block: layer out of range");
  const auto n = static_cast<std::size_t>(graph.node_count);
  const auto h = static_cast<std::size_t>(model.config.hidden);
  if (states.size() != n * h) throw ValidationError("resplus_block: state matrix has the wrong size");
  BlockCache<Real> cache;
  std::vector<Real> out(n * h);
  block_forward(model, lay, layer, graph, states.data(), options, cache, out.data());
  return out;
}

template <std::floating_point Real>
LossAndGradient<Real> loss_and_gradients(const GcnModel<Real>& model, const NodeGraph& graph,
                                         std::span<const Real> features, std::span<const std::uint8_t> labels,
                                         std::span<const double, 2> class_weights, const ForwardOptions& options) {
  const auto n = static_cast<std::size_t>(graph.node_count);
  const auto d = static_cast<std::size_t>(model.config.input_dim);
  const auto h = static_cast<std::size_t>(model.config.hidden);
  if (labels.size() != n) throw ValidationError("loss: label count does not match node count");
  Tape<Real> tape;
  std::vector<Real> final_h;
  const auto logits = forward_impl<Real>(model, graph, features, options, &tape, &final_h);

  double weight_sum = 0.0;
  for (auto y : labels) {
    if (y == kUnlabeled) continue;
    if (y > 1) throw ValidationError("loss: labels must be 0, 1 or unlabeled");
    weight_sum += class_weights[y];
  }
  if (!(weight_sum > 0.0)) throw ValidationError("loss: no labeled nodes");

  LossAndGradient<Real> out;
  std::vector<Real> dlogits(n * 2, 0);
  double loss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const auto y = labels[i];
    if (y == kUnlabeled) continue;
    const Real l0 = logits[2 * i];
    const Real l1 = logits[2 * i + 1];
    const Real mx = std::max(l0, l1);
    const Real e0 = std::exp(l0 - mx);
    const Real e1 = std::exp(l1 - mx);
    const Real lse = mx + std::log(e0 + e1);
    const double w = class_weights[y] / weight_sum;
    loss += w * static_cast<double>(lse - (y ? l1 : l0));
    const Real p1 = e1 / (e0 + e1);
    const Real p0 = e0 / (e0 + e1);
    dlogits[2 * i] = static_cast<Real>(w) * (p0 - (y == 0 ? Real(1) : Real(0)));
    dlogits[2 * i + 1] = static_cast<Real>(w) * (p1 - (y == 1 ? Real(1) : Real(0)));
  }
  out.loss = static_cast<Real>(loss);

  const ParamLayout lay(model.config);
  const Real* p = model.params.data();
  out.gradient.assign(lay.total, Real(0));
  Real* grad = out.gradient.data();
  std::vector<Real> dr(n * h, 0);
  linear_backward(tape.final_r.data(), n, h, p + lay.dec_w, 2, dlogits.data(), dr.data(), grad + lay.dec_w,
                  grad + lay.dec_b);
  for (std::size_t i = 0; i < n * h; ++i) {
    if (!(tape.final_r[i] > Real(0))) dr[i] = 0;
  }
  std::vector<Real> dh(n * h, 0);
  layer_norm_backward(tape.final_xhat.data(), tape.final_inv_std.data(), n, h, p + lay.final_gain, dr.data(),
                      dh.data(), grad + lay.final_gain, grad + lay.final_shift);
  for (int l = model.config.layers - 1; l >= 0; --l) {
    block_backward(model, lay, l, graph, tape.blocks[l], dh.data(), grad);
  }
  linear_backward(features.data(), n, d, p + lay.enc_w, h, dh.data(), static_cast<Real*>(nullptr), grad + lay.enc_w,
                  grad + lay.enc_b);
  return out;
}

template <std::floating_point Real>
void adam_step(std::vector<Real>& params, std::span<const Real> gradient, AdamState<Real>& state,
               const AdamParams& hp) {
  if (gradient.size() != params.size()) throw ValidationError("adam: gradient size mismatch");
  if (state.m.empty()) {
    state.m.assign(params.size(), Real(0));
    state.v.assign(params.size(), Real(0));
  }
  if (state.m.size() != params.size()) throw ValidationError("adam: optimizer state size mismatch");
  ++state.step;
  const double t = static_cast<double>(state.step);
  const Real c1 = static_cast<Real>(1.0 - std::pow(hp.beta1, t));
  const Real c2 = static_cast<Real>(1.0 - std::pow(hp.beta2, t));
  const Real b1 = static_cast<Real>(hp.beta1);
  const Real b2 = static_cast<Real>(hp.beta2);
  const Real lr = static_cast<Real>(hp.lr);
  const Real eps = static_cast<Real>(hp.eps);
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Real g = gradient[i];
    state.m[i] = b1 * state.m[i] + (Real(1) - b1) * g;
    state.v[i] = b2 * state.v[i] + (Real(1) - b2) * g * g;
    const Real mhat = state.m[i] / c1;
    const Real vhat = state.v[i] / c2;
    params[i] -= lr * mhat / (std::sqrt(vhat) + eps);
  }
}

template <std::floating_point Real>
NodeLabeling predict(const GcnModel<Real>& model, const NodeGraph& graph, std::span<const Real> features) {
  const auto logits = forward(model, graph, features);
  NodeLabeling out(static_cast<std::size_t>(graph.node_count));
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = logits[2 * i + 1] > logits[2 * i] ? 1 : 0;
  return out;
}

#define DARKSPOT_INSTANTIATE(Real)                                                                                   \
  template std::vector<Real> message<Real>(std::span<const Real>, std::span<const Real>);                            \
  template std::vector<Real> softmax_agg<Real>(std::span<const Real>, std::size_t, Real);                            \
  template std::vector<Real> powermean_agg<Real>(std::span<const Real>, std::size_t, Real);                          \
  template GcnModel<Real> init_model<Real>(const GcnConfig&, std::uint64_t);                                          \
  template GcnModel<Real> convert_model<Real>(const GcnModel<double>&);                                               \
  template std::vector<Real> forward<Real>(const GcnModel<Real>&, const NodeGraph&, std::span<const Real>,           \
                                           const ForwardOptions&);                                                   \
  template std::vector<Real> resplus_block<Real>(const GcnModel<Real>&, int, const NodeGraph&,                       \
                                                 std::span<const Real>, const ForwardOptions&);                      \
  template LossAndGradient<Real> loss_and_gradients<Real>(const GcnModel<Real>&, const NodeGraph&,                   \
                                                          std::span<const Real>, std::span<const std::uint8_t>,      \
                                                          std::span<const double, 2>, const ForwardOptions&);        \
  template void adam_step<Real>(std::vector<Real>&, std::span<const Real>, AdamState<Real>&, const AdamParams&);     \
  template NodeLabeling predict<Real>(const GcnModel<Real>&, const NodeGraph&, std::span<const Real>);

DARKSPOT_INSTANTIATE(float)
DARKSPOT_INSTANTIATE(double)
#undef DARKSPOT_INSTANTIATE

// Training.

std::array<double, 2> class_weights(std::span<const GraphSample> samples) {
  std::array<std::uint64_t, 2> count{0, 0};
  for (const auto& s : samples) {
    for (auto y : s.labels) {
      if (y <= 1) ++count[y];
    }
  }
  const double total = static_cast<double>(count[0] + count[1]);
  std::array<double, 2> w{1.0, 1.0};
  for (int c = 0; c < 2; ++c) {
    if (count[c] > 0) w[c] = total / (2.0 * static_cast<double>(count[c]));
  }
  return w;
}

Confusion node_confusion(const GraphSample& sample, const NodeLabeling& predicted) {
  Confusion c;
  for (std::size_t v = 0; v < predicted.size(); ++v) {
    const std::uint64_t t = sample.truth_pixels[v];
    const std::uint64_t f = sample.area[v] - t;
    if (predicted[v]) {
      c.tp += t;
      c.fp += f;
    } else {
      c.fn += t;
      c.tn += f;
    }
  }
  return c;
}

GraphSample concatenate_samples(std::span<const GraphSample* const> samples) {
  GraphSample out;
  std::vector<const NodeGraph*> graphs;
  for (const GraphSample* s : samples) {
    graphs.push_back(&s->graph);
    out.features.insert(out.features.end(), s->features.begin(), s->features.end());
    out.labels.insert(out.labels.end(), s->labels.begin(), s->labels.end());
    out.area.insert(out.area.end(), s->area.begin(), s->area.end());
    out.truth_pixels.insert(out.truth_pixels.end(), s->truth_pixels.begin(), s->truth_pixels.end());
  }
  out.graph = concatenate(graphs);
  return out;
}

namespace {

void assert_finite(const std::vector<float>& params, int epoch) {
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!std::isfinite(params[i])) {
      throw std::runtime_error(fmt::format("non-finite parameter {} after an optimizer step in epoch {}", i, epoch));
    }
  }
}

}  // namespace

TrainResult train(TrainState state, std::span<const GraphSample> train_set, std::span<const GraphSample> val_set,
                  const TrainConfig& config, int max_epochs) {
  if (train_set.empty()) throw ValidationError("train: empty training split");
  if (config.batch_size <= 0) throw ValidationError("train: batch_size must be positive");
  if (!(config.learning_rate > 0.0)) throw ValidationError("train: learning_rate must be positive");
  if (state.model.params.empty()) throw ValidationError("train: model is not initialized");
  const std::array<double, 2> weights = config.class_weighted ? class_weights(train_set) : std::array{1.0, 1.0};
  const AdamParams hp{.lr = config.learning_rate};

  int last_epoch = config.epochs;
  if (max_epochs >= 0) last_epoch = std::min(last_epoch, state.epoch + max_epochs);

  TrainResult result;
  result.best = state.model;
  result.best_epoch = state.epoch;
  double best_f1 = -std::numeric_limits<double>::infinity();
  double best_acc = -std::numeric_limits<double>::infinity();

  for (int epoch = state.epoch + 1; epoch <= last_epoch; ++epoch) {
    const std::uint64_t epoch_seed = mix_seed(config.seed, static_cast<std::uint64_t>(epoch));
    std::vector<std::size_t> order(train_set.size());
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 engine(epoch_seed);
    portable_shuffle(order, engine);

    double loss_sum = 0.0;
    int batches = 0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(config.batch_size)) {
      const std::size_t stop = std::min(order.size(), start + static_cast<std::size_t>(config.batch_size));
      std::vector<const GraphSample*> members;
      for (std::size_t i = start; i < stop; ++i) members.push_back(&train_set[order[i]]);
      const GraphSample batch = concatenate_samples(members);
      const ForwardOptions fo{.training = true, .dropout_seed = mix_seed(epoch_seed, static_cast<std::uint64_t>(batches) + 1)};
      const auto lg = loss_and_gradients<float>(state.model, batch.graph, batch.features, batch.labels,
                                                std::span<const double, 2>(weights), fo);
      adam_step<float>(state.model.params, lg.gradient, state.adam, hp);
      assert_finite(state.model.params, epoch);
      loss_sum += lg.loss;
      ++batches;
    }

    Confusion val;
    for (const auto& s : val_set) val += node_confusion(s, predict<float>(state.model, s.graph, s.features));
    HistoryRow row;
    row.epoch = epoch;
    row.train_loss = loss_sum / batches;
    row.val = compute_metrics(val);
    row.val_f1 = f1_of(val);
    result.history.push_back(row);
    state.epoch = epoch;

    const double f1 = row.val_f1.value_or(-1.0);
    const double acc = row.val.p_acc.value_or(-1.0);
    if (f1 > best_f1 || (f1 == best_f1 && acc > best_acc)) {
      best_f1 = f1;
      best_acc = acc;
      result.best = state.model;
      result.best_epoch = epoch;
    }
  }
  result.last = std::move(state);
  return result;
}

std::string history_csv(std::span<const HistoryRow> history) {
  std::string out = "epoch,train_loss,val_P_d,val_P_f,val_P_acc,val_F1\n";
  for (const auto& r : history) {
    out += fmt::format("{},{:.6f},{},{},{},{}\n", r.epoch, r.train_loss, format_percent(r.val.p_d),
                       format_percent(r.val.p_f), format_percent(r.val.p_acc),
                       r.val_f1 ? fmt::format("{:.6f}", *r.val_f1) : std::string("undefined"));
  }
  return out;
}

namespace {

constexpr char kMagic[8] = {'D', 'S', 'G', 'C', 'N', 'C', 'K', '\n'};
constexpr std::uint32_t kCheckpointVersion = 1;
constexpr char kAdamTag[4] = {'A', 'D', 'A', 'M'};

void write_floats(std::ostream& out, const std::vector<float>& v) {
  le::write<std::uint64_t>(out, v.size());
  for (float x : v) le::write(out, x);
}

std::vector<float> read_floats(std::istream& in, const std::string& what) {
  std::uint64_t n = 0;
  if (!le::read(in, n)) throw ValidationError(fmt::format("checkpoint: truncated {} count", what));
  if (n > (std::uint64_t{1} << 32)) throw ValidationError(fmt::format("checkpoint: implausible {} count", what));
  std::vector<float> v(n);
  for (auto& x : v) {
    if (!le::read(in, x)) throw ValidationError(fmt::format("checkpoint: truncated {}", what));
  }
  return v;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const TrainState& state) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error(fmt::format("cannot write checkpoint {}", path.string()));
  const GcnConfig& c = state.model.config;
  out.write(kMagic, sizeof(kMagic));
  le::write(out, kCheckpointVersion);
  le::write<std::uint32_t>(out, static_cast<std::uint32_t>(c.layers));
  le::write<std::uint32_t>(out, static_cast<std::uint32_t>(c.input_dim));
  le::write<std::uint32_t>(out, static_cast<std::uint32_t>(c.hidden));
  le::write<std::uint32_t>(out, static_cast<std::uint32_t>(c.aggregator));
  le::write(out, c.dropout);
  le::write(out, c.beta_init);
  le::write(out, c.s_init);
  le::write(out, c.y_init);
  le::write<std::uint32_t>(out, static_cast<std::uint32_t>(state.epoch));
  write_floats(out, state.model.params);
  out.write(kAdamTag, sizeof(kAdamTag));
  le::write<std::uint64_t>(out, state.adam.step);
  write_floats(out, state.adam.m);
  write_floats(out, state.adam.v);
  if (!out) throw std::runtime_error(fmt::format("failed writing checkpoint {}", path.string()));
}

TrainState load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError(fmt::format("cannot open checkpoint {}", path.string()));
  char magic[8];
  if (!in.read(magic, sizeof(magic)) || !std::equal(magic, magic + 8, kMagic)) {
    throw ValidationError(fmt::format("{} is not a checkpoint file", path.string()));
  }
  std::uint32_t version = 0, layers = 0, input_dim = 0, hidden = 0, agg = 0, epoch = 0;
  if (!le::read(in, version) || version != kCheckpointVersion) {
    throw ValidationError(fmt::format("unsupported checkpoint version {}", version));
  }
  TrainState s;
  GcnConfig& c = s.model.config;
  if (!le::read(in, layers) || !le::read(in, input_dim) || !le::read(in, hidden) || !le::read(in, agg) ||
      !le::read(in, c.dropout) || !le::read(in, c.beta_init) || !le::read(in, c.s_init) || !le::read(in, c.y_init) ||
      !le::read(in, epoch)) {
    throw ValidationError("checkpoint: truncated header");
  }
  if (agg > static_cast<std::uint32_t>(Aggregator::kSum)) throw ValidationError("checkpoint: bad aggregator");
  c.layers = static_cast<int>(layers);
  c.input_dim = static_cast<int>(input_dim);
  c.hidden = static_cast<int>(hidden);
  c.aggregator = static_cast<Aggregator>(agg);
  s.epoch = static_cast<int>(epoch);
  check_config(c);
  s.model.params = read_floats(in, "parameters");
  if (s.model.params.size() != ParamLayout(c).total) throw ValidationError("checkpoint: parameter count mismatch");
  char tag[4];
  if (!in.read(tag, sizeof(tag)) || !std::equal(tag, tag + 4, kAdamTag)) {
    throw ValidationError("checkpoint: missing optimizer section");
  }
  if (!le::read(in, s.adam.step)) throw ValidationError("checkpoint: truncated optimizer section");
  s.adam.m = read_floats(in, "optimizer moments");
  s.adam.v = read_floats(in, "optimizer moments");
  if (!s.adam.m.empty() && (s.adam.m.size() != s.model.params.size() || s.adam.v.size() != s.model.params.size())) {
    throw ValidationError("checkpoint: optimizer state size mismatch");
  }
  return s;
}

}  // namespace darkspot
