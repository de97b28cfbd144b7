#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "gmae/graph.hpp"
#include "gmae/graphormer.hpp"
#include "gmae/ops.hpp"
#include "gmae/optim.hpp"

namespace gmae {

struct GmaeConfig {
  std::size_t enc_layers = 12;
  std::size_t dec_layers = 2;
  std::size_t hidden = 80;
  std::size_t heads = 8;
  double mask_ratio = 0.5;
  std::size_t max_spd = 20;
  std::size_t max_degree = 64;
  std::size_t ffn_mult = 4;
  std::size_t edge_dim = 8;
  double dropout = 0.0;

  void validate() const {
    if (enc_layers < 1) throw ConfigError("enc_layers must be >= 1");
    if (dec_layers < 1) throw ConfigError("dec_layers must be >= 1");
    if (hidden < 1 || heads < 1 || hidden % heads != 0) {
      throw ConfigError("hidden (" + std::to_string(hidden) + ") must be a positive multiple of heads (" +
                        std::to_string(heads) + ")");
    }
    if (!(mask_ratio > 0.0 && mask_ratio < 1.0)) {
      throw ConfigError("mask_ratio must lie in (0, 1), got " + std::to_string(mask_ratio));
    }
    if (max_spd < 1) throw ConfigError("max_spd must be >= 1");
    if (ffn_mult < 1 || edge_dim < 1) throw ConfigError("ffn_mult and edge_dim must be >= 1");
    if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("dropout must lie in [0, 1)");
  }

  friend bool operator==(const GmaeConfig&, const GmaeConfig&) = default;
};

/// Node-feature schema the model was built for.
struct FeatureSchema {
  std::size_t num_node_classes = 0;
  std::size_t node_attr_dim = 0;
  std::size_t num_edge_classes = 0;

  static FeatureSchema of(const GraphDataset& ds) {
    return {ds.num_node_classes, ds.node_attr_dim, ds.num_edge_classes};
  }
  bool categorical() const { return num_node_classes > 0; }
  std::size_t output_dim() const { return categorical() ? num_node_classes : node_attr_dim; }
  friend bool operator==(const FeatureSchema&, const FeatureSchema&) = default;
};

// ---------------------------------------------------------------------------
// Masking

struct MaskPlan {
  std::vector<std::size_t> visible;
  std::vector<std::size_t> masked;
  std::size_t num_nodes() const { return visible.size() + masked.size(); }
};

/// clamp(round_half_up(r * n), 1, n - 1)
inline std::size_t masked_count(std::size_t n, double ratio) {
  if (n < 2) throw ArgumentError("masking needs at least 2 nodes, got " + std::to_string(n));
  const double raw = std::floor(ratio * static_cast<double>(n) + 0.5 + 1e-9);
  const auto k = static_cast<std::size_t>(std::max(0.0, raw));
  return std::clamp<std::size_t>(k, 1, n - 1);
}

/// Uniform sample of masked_count(n, r) nodes without replacement.
inline MaskPlan sample_mask(std::size_t n, double ratio, std::mt19937_64& rng) {
  const std::size_t k = masked_count(n, ratio);
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  for (std::size_t i = 0; i < k; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, n - 1);
    std::swap(order[i], order[pick(rng)]);
  }
  MaskPlan plan;
  plan.masked.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k));
  plan.visible.assign(order.begin() + static_cast<std::ptrdiff_t>(k), order.end());
  std::sort(plan.masked.begin(), plan.masked.end());
  std::sort(plan.visible.begin(), plan.visible.end());
  return plan;
}

/// A plan that hides nothing (inference path).
inline MaskPlan full_plan(std::size_t n) {
  MaskPlan plan;
  plan.visible.resize(n);
  for (std::size_t i = 0; i < n; ++i) plan.visible[i] = i;
  return plan;
}

// ---------------------------------------------------------------------------
// Parameters

struct ModelParams {
  GmaeConfig config;
  FeatureSchema schema;
  Tensor node_embedding;             // categorical features: classes x d
  Tensor attr_weight, attr_bias;     // continuous features: d_V x d, 1 x d
  TransformerStack encoder, decoder;
  Tensor mask_token;                 // 1 x d
  Tensor head_weight, head_bias;     // d x output_dim, 1 x output_dim

  static ModelParams init(const GmaeConfig& cfg, const FeatureSchema& schema, std::uint64_t seed) {
    cfg.validate();
    if (!schema.categorical() && schema.node_attr_dim == 0) throw ConfigError("schema has no node features");
    std::mt19937_64 rng(seed);
    ModelParams p;
    p.config = cfg;
    p.schema = schema;
    const std::size_t d = cfg.hidden;
    if (schema.categorical()) {
      p.node_embedding = init_normal({schema.num_node_classes, d}, rng);
    } else {
      p.attr_weight = init_normal({schema.node_attr_dim, d}, rng);
      p.attr_bias = Tensor({1, d});
    }
    p.encoder = TransformerStack::init(stack_config(cfg, schema, cfg.enc_layers), rng);
    p.decoder = TransformerStack::init(stack_config(cfg, schema, cfg.dec_layers), rng);
    p.mask_token = init_normal({1, d}, rng);
    p.head_weight = init_normal({d, schema.output_dim()}, rng);
    p.head_bias = Tensor({1, schema.output_dim()});
    return p;
  }

  static StackConfig stack_config(const GmaeConfig& cfg, const FeatureSchema& schema, std::size_t layers) {
    StackConfig s;
    s.layers = layers;
    s.hidden = cfg.hidden;
    s.heads = cfg.heads;
    s.ffn_mult = cfg.ffn_mult;
    s.max_degree = cfg.max_degree;
    s.max_spd = cfg.max_spd;
    s.num_edge_classes = schema.num_edge_classes;
    s.edge_dim = cfg.edge_dim;
    return s;
  }

  /// Featurizer and encoder: what survives after pretraining.
  ParamList encoder_parameters() const {
    ParamList out;
    if (schema.categorical()) {
      out.push_back({"featurizer.node_embedding", node_embedding, false});
    } else {
      out.push_back({"featurizer.attr_weight", attr_weight, true});
      out.push_back({"featurizer.attr_bias", attr_bias, false});
    }
    encoder.collect(out, "encoder.");
    return out;
  }

  ParamList parameters() const {
    ParamList out = encoder_parameters();
    decoder.collect(out, "decoder.");
    out.push_back({"mask_token", mask_token, false});
    out.push_back({"head.weight", head_weight, true});
    out.push_back({"head.bias", head_bias, false});
    return out;
  }

  /// Deep copy with fresh storage.
  ModelParams clone() const {
    ModelParams p = *this;
    p.rebind([](Tensor& t) {
      if (t.defined()) t = t.clone();
    });
    return p;
  }

 private:
  template <typename Fn>
  void rebind(Fn&& fn) {
    fn(node_embedding);
    fn(attr_weight);
    fn(attr_bias);
    for (auto* s : {&encoder, &decoder}) {
      fn(s->tables.centrality);
      fn(s->tables.spatial);
      fn(s->tables.edge_embedding);
      fn(s->tables.hop_weights);
      for (auto& l : s->layers) {
        for (auto* t : {&l.ln1_gain, &l.ln1_bias, &l.w_q, &l.w_k, &l.w_v, &l.w_o, &l.ln2_gain, &l.ln2_bias, &l.w_1,
                        &l.b_1, &l.w_2, &l.b_2})
          fn(*t);
      }
      fn(s->final_gain);
      fn(s->final_bias);
    }
    fn(mask_token);
    fn(head_weight);
    fn(head_bias);
  }
};

/// Copies values between two parameter lists with identical names and shapes.
inline void copy_parameter_values(std::span<const Parameter> from, std::span<Parameter> to) {
  if (from.size() != to.size()) throw ShapeError("copy_parameter_values: parameter count mismatch");
  for (std::size_t i = 0; i < from.size(); ++i) {
    if (from[i].name != to[i].name || from[i].tensor.shape() != to[i].tensor.shape()) {
      throw ShapeError("copy_parameter_values: mismatch at " + from[i].name);
    }
    std::copy(from[i].tensor.data().begin(), from[i].tensor.data().end(), to[i].tensor.data().begin());
  }
}

// ---------------------------------------------------------------------------
// Forward passes

/// A graph with its precomputed structure.
struct GraphRef {
  const Graph* graph = nullptr;
  const EncodedGraph* encoded = nullptr;
  std::size_t num_nodes() const { return graph->num_nodes; }
};

namespace detail {

/// Input features of the listed nodes of several graphs, stacked: [sum |nodes| x d].
inline Tensor featurize(const ModelParams& p, std::span<const GraphRef> graphs,
                        std::span<const std::vector<std::size_t>> nodes) {
  std::size_t total = 0;
  for (const auto& v : nodes) total += v.size();
  if (p.schema.categorical()) {
    std::vector<std::size_t> ids;
    ids.reserve(total);
    for (std::size_t b = 0; b < graphs.size(); ++b) {
      const Graph& g = *graphs[b].graph;
      if (!g.has_node_labels()) throw ArgumentError("model expects categorical node labels");
      for (auto i : nodes[b]) {
        const auto label = static_cast<std::size_t>(g.node_labels[i]);
        if (label >= p.schema.num_node_classes) {
          throw IndexError("node label " + std::to_string(label) + " outside the model's " +
                           std::to_string(p.schema.num_node_classes) + " classes");
        }
        ids.push_back(label);
      }
    }
    return embedding_lookup(p.node_embedding, ids);
  }
  const std::size_t dv = p.schema.node_attr_dim;
  Tensor x({total, dv});
  std::size_t row = 0;
  for (std::size_t b = 0; b < graphs.size(); ++b) {
    const Graph& g = *graphs[b].graph;
    if (g.attr_dim != dv) throw ArgumentError("model expects node attributes of width " + std::to_string(dv));
    for (auto i : nodes[b]) {
      const auto a = g.attributes_of(i);
      std::copy(a.begin(), a.end(), x.ptr() + (row++) * dv);
    }
  }
  return linear(x, p.attr_weight, p.attr_bias);
}

inline std::vector<std::size_t> all_nodes(std::size_t n) {
  std::vector<std::size_t> v(n);
  for (std::size_t i = 0; i < n; ++i) v[i] = i;
  return v;
}

/// Centrality-encoded rows for several graphs scattered into a padded
/// [B * width x d] layout. `subsets[b]` empty means all nodes. Without `base`
/// the rows are featurized; with it, centrality is added onto base's real rows.
inline Tensor padded_inputs(const ModelParams& p, const TransformerStack& stack, std::span<const GraphRef> graphs,
                            std::span<const std::vector<std::size_t>> subsets, std::size_t width,
                            const Tensor& base = {}) {
  std::vector<std::vector<std::size_t>> nodes(graphs.size());
  std::vector<std::size_t> positions;
  std::vector<std::uint32_t> degrees;
  for (std::size_t b = 0; b < graphs.size(); ++b) {
    nodes[b] = subsets[b].empty() ? all_nodes(graphs[b].num_nodes()) : subsets[b];
    if (nodes[b].size() > width) throw ShapeError("padded width smaller than a graph");
    for (std::size_t i = 0; i < nodes[b].size(); ++i) {
      positions.push_back(b * width + i);
      degrees.push_back(graphs[b].encoded->degrees[nodes[b][i]]);
    }
  }
  const std::size_t out_rows = graphs.size() * width;
  if (!base.defined()) {
    const Tensor x = centrality_encode(featurize(p, graphs, nodes), degrees, stack.tables.centrality);
    return scatter_rows(x, positions, out_rows);
  }
  const std::size_t cap = stack.tables.centrality.rows() - 1;
  std::vector<std::size_t> ids(degrees.size());
  for (std::size_t i = 0; i < ids.size(); ++i) ids[i] = std::min<std::size_t>(degrees[i], cap);
  return add(base, scatter_rows(embedding_lookup(stack.tables.centrality, ids), positions, out_rows));
}

inline std::vector<BiasRequest> bias_requests(std::span<const GraphRef> graphs,
                                              std::span<const std::vector<std::size_t>> subsets) {
  std::vector<BiasRequest> out;
  out.reserve(graphs.size());
  for (std::size_t b = 0; b < graphs.size(); ++b) {
    out.push_back({graphs[b].graph, graphs[b].encoded, std::span<const std::size_t>(subsets[b])});
  }
  return out;
}

}  // namespace detail

struct ForwardOptions {
  double dropout = 0.0;
  std::mt19937_64* rng = nullptr;
  std::size_t min_width = 0;  // pad batches to at least this many rows per graph
};

/// Encoder over the node subsets of several graphs. Returns the padded
/// [B * width x d] output; row b*width + i belongs to subsets[b][i].
inline Tensor encode_batch(const ModelParams& p, std::span<const GraphRef> graphs,
                           std::span<const std::vector<std::size_t>> subsets, std::size_t width,
                           const ForwardOptions& opt = {}) {
  const Tensor x = detail::padded_inputs(p, p.encoder, graphs, subsets, width);
  const auto requests = detail::bias_requests(graphs, subsets);
  const Tensor bias = build_batch_bias(requests, p.encoder.tables, width);
  return p.encoder.run(x, bias, {opt.dropout, opt.rng});
}

/// Encoder output X_e for the visible nodes of one graph, rows in plan.visible order.
inline Tensor encode(const ModelParams& p, const Graph& g, const EncodedGraph& enc, const MaskPlan& plan) {
  if (plan.num_nodes() != g.num_nodes || plan.visible.empty()) throw ArgumentError("encode: plan does not fit graph");
  const GraphRef ref{&g, &enc};
  const std::vector<std::vector<std::size_t>> subsets{plan.visible};
  return encode_batch(p, std::span<const GraphRef>(&ref, 1), subsets, plan.visible.size());
}

/// Decoder input X_e': encoder rows at visible positions, the shared mask token
/// at masked positions, in original node order.
inline Tensor assemble_decoder_input(const Tensor& x_e, const MaskPlan& plan, const Tensor& mask_token) {
  if (x_e.rows() != plan.visible.size()) {
    throw ShapeError("assemble_decoder_input: " + std::to_string(x_e.rows()) + " encoder rows for " +
                     std::to_string(plan.visible.size()) + " visible nodes");
  }
  std::vector<std::int64_t> sources(plan.num_nodes(), kTokenRow);
  for (std::size_t r = 0; r < plan.visible.size(); ++r) sources[plan.visible[r]] = static_cast<std::int64_t>(r);
  return compose_rows(x_e, mask_token, sources);
}

/// Decoder over full graphs laid out as [B * width x d]; returns per-row
/// predictions [B * width x output_dim].
inline Tensor decode_batch(const ModelParams& p, const Tensor& x_prime, std::span<const GraphRef> graphs,
                           std::size_t width, const ForwardOptions& opt = {}) {
  const std::vector<std::vector<std::size_t>> all(graphs.size());
  const Tensor x = detail::padded_inputs(p, p.decoder, graphs, all, width, x_prime);
  const auto requests = detail::bias_requests(graphs, all);
  const Tensor bias = build_batch_bias(requests, p.decoder.tables, width);
  const Tensor h = p.decoder.run(x, bias, {opt.dropout, opt.rng});
  return linear(h, p.head_weight, p.head_bias);
}

/// Predictions for every node of one graph: [n x C] logits or [n x d_V].
inline Tensor decode(const ModelParams& p, const Tensor& x_prime, const Graph& g, const EncodedGraph& enc) {
  const GraphRef ref{&g, &enc};
  return decode_batch(p, x_prime, std::span<const GraphRef>(&ref, 1), g.num_nodes);
}

/// Loss over the masked rows only: cross-entropy on node labels or MSE on
/// node attributes. `row_offset` locates the graph's rows in a padded batch;
/// `weight` scales the per-graph mean.
inline Tensor reconstruction_loss(const Tensor& pred, const Graph& g, const MaskPlan& plan,
                                  std::size_t row_offset = 0, double weight = 1.0) {
  if (plan.masked.empty()) throw ArgumentError("reconstruction_loss: nothing masked");
  std::vector<std::size_t> rows(plan.masked.size());
  for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = row_offset + plan.masked[i];
  const Tensor picked = gather_rows(pred, rows);
  std::vector<double> w(rows.size(), weight / static_cast<double>(rows.size()));
  if (g.has_node_labels()) {
    std::vector<std::size_t> labels(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) labels[i] = static_cast<std::size_t>(g.node_labels[plan.masked[i]]);
    return loss_cross_entropy(picked, labels, std::move(w));
  }
  Tensor target({rows.size(), g.attr_dim});
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto a = g.attributes_of(plan.masked[i]);
    std::copy(a.begin(), a.end(), target.ptr() + i * g.attr_dim);
  }
  return loss_mse(picked, target, std::move(w));
}

/// Forward pass of one masked-autoencoding step over a batch. The loss is the
/// mean over graphs of each graph's masked-row mean loss.
inline Tensor pretrain_forward(const ModelParams& p, std::span<const GraphRef> graphs, std::span<const MaskPlan> plans,
                               const ForwardOptions& opt = {}) {
  const std::size_t batch = graphs.size();
  std::size_t enc_width = opt.min_width, width = opt.min_width;
  std::vector<std::vector<std::size_t>> visible(batch);
  for (std::size_t b = 0; b < batch; ++b) {
    if (plans[b].num_nodes() != graphs[b].num_nodes()) throw ArgumentError("pretrain: plan does not fit graph");
    visible[b] = plans[b].visible;
    enc_width = std::max(enc_width, visible[b].size());
    width = std::max(width, graphs[b].num_nodes());
  }
  const Tensor x_e = encode_batch(p, graphs, visible, enc_width, opt);

  std::vector<std::int64_t> sources(batch * width, kZeroRow);
  for (std::size_t b = 0; b < batch; ++b) {
    for (auto m : plans[b].masked) sources[b * width + m] = kTokenRow;
    for (std::size_t r = 0; r < visible[b].size(); ++r) {
      sources[b * width + visible[b][r]] = static_cast<std::int64_t>(b * enc_width + r);
    }
  }
  const Tensor x_prime = compose_rows(x_e, p.mask_token, sources);
  const Tensor pred = decode_batch(p, x_prime, graphs, width, opt);

  Tensor loss;
  const double w = 1.0 / static_cast<double>(batch);
  for (std::size_t b = 0; b < batch; ++b) {
    Tensor lb = reconstruction_loss(pred, *graphs[b].graph, plans[b], b * width, w);
    loss = loss.defined() ? add(loss, lb) : lb;
  }
  return loss;
}

struct StepResult {
  double loss = 0.0;
  std::vector<MaskPlan> plans;
};

/// sample masks -> encode -> assemble -> decode -> loss -> backward.
/// Gradients are accumulated on the model's parameter tensors.
inline StepResult pretrain_step(const ModelParams& p, std::span<const GraphRef> graphs, std::mt19937_64& rng,
                                const ForwardOptions& opt = {}) {
  StepResult result;
  for (const auto& ref : graphs) result.plans.push_back(sample_mask(ref.num_nodes(), p.config.mask_ratio, rng));
  for (auto& prm : p.parameters()) prm.tensor.set_requires_grad(true);
  Tape tape;
  Tensor loss;
  {
    TapeScope scope(tape);
    ForwardOptions o = opt;
    if (p.config.dropout > 0.0 && !o.rng) {
      o.dropout = p.config.dropout;
      o.rng = &rng;
    }
    loss = pretrain_forward(p, graphs, result.plans, o);
  }
  tape.backward(loss);
  result.loss = loss.item();
  return result;
}

inline StepResult pretrain_step(const ModelParams& p, const Graph& g, const EncodedGraph& enc, std::mt19937_64& rng) {
  const GraphRef ref{&g, &enc};
  return pretrain_step(p, std::span<const GraphRef>(&ref, 1), rng);
}

/// Encoder over whole graphs (no masking); returns node embeddings padded to
/// [B * width x d].
inline Tensor embed_nodes_batch(const ModelParams& p, std::span<const GraphRef> graphs, std::size_t min_width = 0) {
  std::size_t width = min_width;
  for (const auto& g : graphs) width = std::max(width, g.num_nodes());
  const std::vector<std::vector<std::size_t>> all(graphs.size());
  return encode_batch(p, graphs, all, width);
}

/// Mean-pooled graph embeddings [B x d] (padding excluded).
inline Tensor embed_graphs_batch(const ModelParams& p, std::span<const GraphRef> graphs, std::size_t min_width = 0) {
  std::size_t width = min_width;
  std::vector<std::size_t> counts;
  for (const auto& g : graphs) {
    width = std::max(width, g.num_nodes());
    counts.push_back(g.num_nodes());
  }
  return segment_mean(embed_nodes_batch(p, graphs, width), width, counts);
}

struct Embedding {
  Tensor nodes;  // n x d
  Tensor graph;  // 1 x d
};

/// Inference: whole graph through the encoder, mean pooling; decoder unused.
inline Embedding embed(const ModelParams& p, const Graph& g, const EncodedGraph& enc) {
  const GraphRef ref{&g, &enc};
  const Tensor nodes = embed_nodes_batch(p, std::span<const GraphRef>(&ref, 1));
  return {nodes, mean_rows(nodes)};
}

/// Conventional end-to-end transformer step used as the memory baseline: the
/// encoder sees every node and the output head predicts every node's features.
inline double full_graph_step(const ModelParams& p, const Graph& g, const EncodedGraph& enc) {
  for (auto& prm : p.parameters()) prm.tensor.set_requires_grad(true);
  const GraphRef ref{&g, &enc};
  Tape tape;
  Tensor loss;
  {
    TapeScope scope(tape);
    const Tensor h = embed_nodes_batch(p, std::span<const GraphRef>(&ref, 1));
    const Tensor pred = linear(h, p.head_weight, p.head_bias);
    MaskPlan everything;
    everything.masked = detail::all_nodes(g.num_nodes);
    loss = reconstruction_loss(pred, g, everything);
  }
  tape.backward(loss);
  return loss.item();
}

}  // namespace gmae
