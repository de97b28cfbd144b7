#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "gmae/graph.hpp"
#include "gmae/ops.hpp"
#include "gmae/optim.hpp"

// Graph transformer building blocks: centrality encoding on the inputs,
// spatial + edge encodings as attention biases, and pre-norm layers.

namespace gmae {

/// Weight-matrix initialization: normal(0, std) truncated at +-2 std.
inline Tensor init_normal(Shape shape, std::mt19937_64& rng, double stddev = 0.02) {
  Tensor t(std::move(shape));
  std::normal_distribution<double> dist(0.0, stddev);
  for (double& x : t.data()) {
    do {
      x = dist(rng);
    } while (std::abs(x) > 2.0 * stddev);
  }
  return t;
}

struct StackConfig {
  std::size_t layers = 1;
  std::size_t hidden = 80;
  std::size_t heads = 8;
  std::size_t ffn_mult = 4;
  std::size_t max_degree = 64;
  std::size_t max_spd = 20;
  std::size_t num_edge_classes = 0;  // 0: no edge encoding
  std::size_t edge_dim = 8;
};

struct LayerParams {
  Tensor ln1_gain, ln1_bias;
  Tensor w_q, w_k, w_v, w_o;  // d x d, head a owns columns [a*d_head, (a+1)*d_head)
  Tensor ln2_gain, ln2_bias;
  Tensor w_1, b_1, w_2, b_2;

  static LayerParams init(const StackConfig& cfg, std::mt19937_64& rng) {
    const std::size_t d = cfg.hidden, f = cfg.ffn_mult * cfg.hidden;
    LayerParams p;
    p.ln1_gain = Tensor({1, d}, 1.0);
    p.ln1_bias = Tensor({1, d});
    p.w_q = init_normal({d, d}, rng);
    p.w_k = init_normal({d, d}, rng);
    p.w_v = init_normal({d, d}, rng);
    p.w_o = init_normal({d, d}, rng);
    p.ln2_gain = Tensor({1, d}, 1.0);
    p.ln2_bias = Tensor({1, d});
    p.w_1 = init_normal({d, f}, rng);
    p.b_1 = Tensor({1, f});
    p.w_2 = init_normal({f, d}, rng);
    p.b_2 = Tensor({1, d});
    return p;
  }

  void collect(ParamList& out, const std::string& prefix) const {
    out.push_back({prefix + "ln1.gain", ln1_gain, false});
    out.push_back({prefix + "ln1.bias", ln1_bias, false});
    out.push_back({prefix + "attn.w_q", w_q, true});
    out.push_back({prefix + "attn.w_k", w_k, true});
    out.push_back({prefix + "attn.w_v", w_v, true});
    out.push_back({prefix + "attn.w_o", w_o, true});
    out.push_back({prefix + "ln2.gain", ln2_gain, false});
    out.push_back({prefix + "ln2.bias", ln2_bias, false});
    out.push_back({prefix + "ffn.w_1", w_1, true});
    out.push_back({prefix + "ffn.b_1", b_1, false});
    out.push_back({prefix + "ffn.w_2", w_2, true});
    out.push_back({prefix + "ffn.b_2", b_2, false});
  }
};

/// Learnable positional tables of one transformer stack.
struct EncodingTables {
  Tensor centrality;      // (max_degree + 1) x d
  Tensor spatial;         // heads x (max_spd + 2); last column is the unreachable entry
  Tensor edge_embedding;  // num_edge_classes x edge_dim, undefined without edge labels
  Tensor hop_weights;     // max_spd x (heads * edge_dim), undefined without edge labels

  std::size_t heads() const { return spatial.rows(); }
  std::size_t max_degree() const { return centrality.rows() - 1; }
  std::size_t max_spd() const { return spatial.cols() - 2; }
  std::size_t unreachable_index() const { return spatial.cols() - 1; }
  bool has_edges() const { return edge_embedding.defined(); }
  std::size_t edge_dim() const { return has_edges() ? edge_embedding.cols() : 0; }

  static EncodingTables init(const StackConfig& cfg, std::mt19937_64& rng) {
    EncodingTables t;
    t.centrality = init_normal({cfg.max_degree + 1, cfg.hidden}, rng);
    t.spatial = Tensor({cfg.heads, cfg.max_spd + 2});
    if (cfg.num_edge_classes > 0) {
      t.edge_embedding = init_normal({cfg.num_edge_classes, cfg.edge_dim}, rng);
      t.hop_weights = init_normal({cfg.max_spd, cfg.heads * cfg.edge_dim}, rng);
    }
    return t;
  }

  void collect(ParamList& out, const std::string& prefix) const {
    out.push_back({prefix + "centrality", centrality, false});
    out.push_back({prefix + "spatial", spatial, false});
    if (has_edges()) {
      out.push_back({prefix + "edge_embedding", edge_embedding, false});
      out.push_back({prefix + "hop_weights", hop_weights, false});
    }
  }
};

/// h0 + centrality[min(degree, max_degree)] row by row.
inline Tensor centrality_encode(const Tensor& h0, std::span<const std::uint32_t> degrees, const Tensor& table) {
  if (degrees.size() != h0.rows()) {
    throw ShapeError("centrality_encode: " + std::to_string(degrees.size()) + " degrees for " +
                     std::to_string(h0.rows()) + " rows");
  }
  const std::size_t cap = table.rows() - 1;
  std::vector<std::size_t> ids(degrees.size());
  for (std::size_t i = 0; i < ids.size(); ++i) ids[i] = std::min<std::size_t>(degrees[i], cap);
  return add(h0, embedding_lookup(table, ids));
}

/// One graph's contribution to a bias batch. `subset` lists the node ids (in
/// order) whose attention submatrix is needed; empty means all nodes.
struct BiasRequest {
  const Graph* graph = nullptr;
  const EncodedGraph* encoded = nullptr;
  std::span<const std::size_t> subset;

  std::size_t size() const { return subset.empty() ? encoded->num_nodes : subset.size(); }
  std::size_t node(std::size_t i) const { return subset.empty() ? i : subset[i]; }
};

/// Attention bias {B, heads, n_max, n_max}:
///   spatial[head][spd index] + (1/L) * sum_t <edge_embedding[label(e_t)], hop_weights[t][head]>
/// over the stored shortest path e_1..e_L (no edge term on the diagonal, for
/// unreachable pairs, or without edge tables). Entries to or from padding rows
/// are -inf. Distances come from the full graph even when a subset is taken.
inline Tensor build_batch_bias(std::span<const BiasRequest> requests, const EncodingTables& tables,
                               std::size_t n_max) {
  const std::size_t batch = requests.size(), heads = tables.heads();
  const std::size_t max_spd = tables.max_spd(), unreachable = tables.unreachable_index();
  const bool edges = tables.has_edges();
  const std::size_t de = tables.edge_dim();
  const std::size_t classes = edges ? tables.edge_embedding.rows() : 0;
  for (const auto& r : requests) {
    if (r.size() > n_max) throw ShapeError("build_bias: graph larger than batch width");
    if (r.encoded->max_spd > max_spd) {
      throw ShapeError("build_bias: encodings use max_spd " + std::to_string(r.encoded->max_spd) +
                       " but tables cover " + std::to_string(max_spd));
    }
    for (auto s : r.subset) {
      if (s >= r.encoded->num_nodes) throw IndexError("build_bias: subset index " + std::to_string(s) + " out of range");
    }
  }

  // per-entry spatial index (-1 marks padding) and path label runs
  const std::size_t entries = batch * n_max * n_max;
  std::vector<std::int32_t> spatial_idx(entries, -1);
  std::vector<std::uint32_t> path_offset(entries + 1, 0);
  std::vector<std::uint16_t> path_labels;
  for (std::size_t b = 0; b < batch; ++b) {
    const auto& r = requests[b];
    const std::size_t k = r.size();
    for (std::size_t i = 0; i < n_max; ++i) {
      for (std::size_t j = 0; j < n_max; ++j) {
        const std::size_t e = (b * n_max + i) * n_max + j;
        if (i < k && j < k) {
          const std::size_t gi = r.node(i), gj = r.node(j);
          const std::uint32_t dist = r.encoded->distance(gi, gj);
          spatial_idx[e] = static_cast<std::int32_t>(dist == kUnreachable ? unreachable : dist);
          if (edges && gi != gj && dist != kUnreachable) {
            for (auto edge : r.encoded->path(gi, gj)) {
              const auto label = static_cast<std::size_t>(r.graph->edge_labels.at(edge));
              if (label >= classes) throw IndexError("build_bias: edge label " + std::to_string(label) + " out of range");
              path_labels.push_back(static_cast<std::uint16_t>(label));
            }
          }
        }
        path_offset[e + 1] = static_cast<std::uint32_t>(path_labels.size());
      }
    }
  }

  // hop_dot[(c * max_spd + t) * heads + a] = <edge_embedding[c], hop_weights[t][a]>
  std::vector<double> hop_dot(classes * max_spd * heads, 0.0);
  if (edges) {
    for (std::size_t c = 0; c < classes; ++c)
      for (std::size_t t = 0; t < max_spd; ++t)
        for (std::size_t a = 0; a < heads; ++a) {
          double s = 0.0;
          for (std::size_t x = 0; x < de; ++x)
            s += tables.edge_embedding[c * de + x] * tables.hop_weights[t * heads * de + a * de + x];
          hop_dot[(c * max_spd + t) * heads + a] = s;
        }
  }

  constexpr double neg_inf = -std::numeric_limits<double>::infinity();
  Tensor out({batch, heads, n_max, n_max});
  const std::size_t sp_cols = tables.spatial.cols();
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t i = 0; i < n_max; ++i) {
      for (std::size_t j = 0; j < n_max; ++j) {
        const std::size_t e = (b * n_max + i) * n_max + j;
        const std::size_t len = path_offset[e + 1] - path_offset[e];
        for (std::size_t a = 0; a < heads; ++a) {
          double& dst = out[((b * heads + a) * n_max + i) * n_max + j];
          if (spatial_idx[e] < 0) {
            dst = neg_inf;
            continue;
          }
          double val = tables.spatial[a * sp_cols + static_cast<std::size_t>(spatial_idx[e])];
          if (len > 0) {
            double s = 0.0;
            for (std::size_t t = 0; t < len; ++t) s += hop_dot[(path_labels[path_offset[e] + t] * max_spd + t) * heads + a];
            val += s / static_cast<double>(len);
          }
          dst = val;
        }
      }
    }
  }

  const Tensor& sp = tables.spatial;
  const Tensor& emb = tables.edge_embedding;
  const Tensor& hop = tables.hop_weights;
  detail::record(out, {&sp, &emb, &hop},
                 [on = out.node(), spn = sp.node(), embn = edges ? emb.node() : nullptr,
                  hopn = edges ? hop.node() : nullptr, spatial_idx = std::move(spatial_idx),
                  path_offset = std::move(path_offset), path_labels = std::move(path_labels), batch, heads, n_max,
                  max_spd, classes, de, sp_cols] {
                   const double* g = on->grad.data();
                   double* gsp = detail::grad_ptr(spn);
                   std::vector<double> dhop(classes * max_spd * heads, 0.0);
                   for (std::size_t b = 0; b < batch; ++b)
                     for (std::size_t i = 0; i < n_max; ++i)
                       for (std::size_t j = 0; j < n_max; ++j) {
                         const std::size_t e = (b * n_max + i) * n_max + j;
                         if (spatial_idx[e] < 0) continue;
                         const std::size_t len = path_offset[e + 1] - path_offset[e];
                         for (std::size_t a = 0; a < heads; ++a) {
                           const double ge = g[((b * heads + a) * n_max + i) * n_max + j];
                           if (gsp) gsp[a * sp_cols + static_cast<std::size_t>(spatial_idx[e])] += ge;
                           if (len == 0) continue;
                           const double share = ge / static_cast<double>(len);
                           for (std::size_t t = 0; t < len; ++t)
                             dhop[(path_labels[path_offset[e] + t] * max_spd + t) * heads + a] += share;
                         }
                       }
                   if (!embn) return;
                   double* gemb = detail::grad_ptr(embn);
                   double* ghop = detail::grad_ptr(hopn);
                   const double* ev = embn->value.data();
                   const double* hv = hopn->value.data();
                   for (std::size_t c = 0; c < classes; ++c)
                     for (std::size_t t = 0; t < max_spd; ++t)
                       for (std::size_t a = 0; a < heads; ++a) {
                         const double d = dhop[(c * max_spd + t) * heads + a];
                         if (d == 0.0) continue;
                         for (std::size_t x = 0; x < de; ++x) {
                           if (gemb) gemb[c * de + x] += d * hv[t * heads * de + a * de + x];
                           if (ghop) ghop[t * heads * de + a * de + x] += d * ev[c * de + x];
                         }
                       }
                 });
  return out;
}

/// Single-graph bias {1, heads, k, k} over `subset` (all nodes when empty).
inline Tensor build_bias(const Graph& g, const EncodedGraph& enc, const EncodingTables& tables,
                         std::span<const std::size_t> subset = {}) {
  const BiasRequest req{&g, &enc, subset};
  return build_batch_bias(std::span<const BiasRequest>(&req, 1), tables, req.size());
}

/// Multi-head self-attention: per head softmax(Q K^T / sqrt(d_head) + bias) V,
/// heads concatenated and projected by W_O.
inline Tensor attention(const Tensor& h, const LayerParams& p, const Tensor& bias, std::size_t heads) {
  const Tensor q = matmul(h, p.w_q);
  const Tensor k = matmul(h, p.w_k);
  const Tensor v = matmul(h, p.w_v);
  return matmul(attention_core(q, k, v, bias, heads), p.w_o);
}

struct LayerOptions {
  double dropout = 0.0;
  std::mt19937_64* rng = nullptr;
};

/// Pre-norm residual block:
///   h1 = h + attention(LN(h)); out = h1 + W_2 relu(W_1 LN(h1) + b_1) + b_2
inline Tensor transformer_layer(const Tensor& h, const LayerParams& p, const Tensor& bias, std::size_t heads,
                                const LayerOptions& opt = {}) {
  Tensor attn = attention(layer_norm(h, p.ln1_gain, p.ln1_bias), p, bias, heads);
  if (opt.dropout > 0.0 && opt.rng) attn = dropout(attn, opt.dropout, *opt.rng);
  const Tensor h1 = add(h, attn);
  Tensor ffn = linear(relu(linear(layer_norm(h1, p.ln2_gain, p.ln2_bias), p.w_1, p.b_1)), p.w_2, p.b_2);
  if (opt.dropout > 0.0 && opt.rng) ffn = dropout(ffn, opt.dropout, *opt.rng);
  return add(h1, ffn);
}

/// A stack of layers with its own positional tables and a final layer norm.
struct TransformerStack {
  StackConfig config;
  EncodingTables tables;
  std::vector<LayerParams> layers;
  Tensor final_gain, final_bias;

  static TransformerStack init(const StackConfig& cfg, std::mt19937_64& rng) {
    TransformerStack s;
    s.config = cfg;
    s.tables = EncodingTables::init(cfg, rng);
    for (std::size_t l = 0; l < cfg.layers; ++l) s.layers.push_back(LayerParams::init(cfg, rng));
    s.final_gain = Tensor({1, cfg.hidden}, 1.0);
    s.final_bias = Tensor({1, cfg.hidden});
    return s;
  }

  Tensor run(Tensor x, const Tensor& bias, const LayerOptions& opt = {}) const {
    for (const auto& layer : layers) x = transformer_layer(x, layer, bias, config.heads, opt);
    return layer_norm(x, final_gain, final_bias);
  }

  void collect(ParamList& out, const std::string& prefix) const {
    tables.collect(out, prefix + "tables.");
    for (std::size_t l = 0; l < layers.size(); ++l) layers[l].collect(out, prefix + "layer" + std::to_string(l) + ".");
    out.push_back({prefix + "final_ln.gain", final_gain, false});
    out.push_back({prefix + "final_ln.bias", final_bias, false});
  }
};

}  // namespace gmae
