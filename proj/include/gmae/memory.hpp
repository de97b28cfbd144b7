#pragma once

#include <cstdint>
#include <random>
#include <string>

#include "gmae/model.hpp"

namespace gmae {

enum class MemMode { gmae, full };

inline const char* mem_mode_name(MemMode m) { return m == MemMode::gmae ? "gmae" : "full"; }

// Calibration against the engine's own allocation policy (every tape output
// and its gradient stay live until the tape is dropped):
//   kActivationPerRow  values + grads per transformer layer and row, in units
//                      of d: LN1 (out, xhat), Q, K, V, attention out, W_O out,
//                      residual, LN2 (out, xhat), FFN hidden (4d) and its ReLU
//                      (4d), W_2 out, residual = 20 values, 18 of which get a
//                      gradient.
//   kStackIoPerRow     per stack and row, in units of d: featurize/centrality
//                      lookups, scatter into the padded layout, final LN.
//   attention          one retained probability matrix per layer and head.
//   bias               one bias tensor per stack plus its gradient.
inline constexpr double kActivationPerRow = 38.0;
inline constexpr double kStackIoPerRow = 10.0;

/// Analytic peak live doubles of one training step on a graph of n nodes.
struct MemEstimate {
  std::size_t n = 0;
  std::size_t n_o = 0;  // rows seen by the encoder
  MemMode mode = MemMode::gmae;
  double attention_enc = 0, attention_dec = 0;
  double bias_enc = 0, bias_dec = 0;
  double activation_enc = 0, activation_dec = 0;
  double parameters = 0;

  double attention() const { return attention_enc + attention_dec; }
  double total() const {
    return attention_enc + attention_dec + bias_enc + bias_dec + activation_enc + activation_dec + parameters;
  }
};

/// Parameter count of the tensors a step in the given mode touches.
inline std::size_t used_parameters(const ModelParams& p, MemMode mode) {
  if (mode == MemMode::gmae) return count_parameters(p.parameters());
  return count_parameters(p.encoder_parameters()) + p.head_weight.size() + p.head_bias.size();
}

/// attention = heads * (enc_layers * n_o^2 + dec_layers * n^2),
/// activation = c_act * d * (enc_layers * n_o + dec_layers * n) plus stack I/O,
/// parameters counted twice (values and gradients). Full mode: n_o = n and no
/// decoder.
inline MemEstimate estimate_peak_floats(std::size_t n, const GmaeConfig& cfg, std::size_t num_parameters,
                                        MemMode mode = MemMode::gmae) {
  cfg.validate();
  MemEstimate e;
  e.n = n;
  e.mode = mode;
  const bool full = mode == MemMode::full;
  e.n_o = full ? n : n - masked_count(n, cfg.mask_ratio);
  const double h = static_cast<double>(cfg.heads), d = static_cast<double>(cfg.hidden);
  const double no = static_cast<double>(e.n_o), nn = static_cast<double>(n);
  const double enc = static_cast<double>(cfg.enc_layers), dec = full ? 0.0 : static_cast<double>(cfg.dec_layers);
  e.attention_enc = h * enc * no * no;
  e.attention_dec = h * dec * nn * nn;
  e.bias_enc = 2.0 * h * no * no;
  e.bias_dec = full ? 0.0 : 2.0 * h * nn * nn;
  e.activation_enc = kActivationPerRow * d * enc * no + kStackIoPerRow * d * no;
  e.activation_dec = full ? 0.0 : kActivationPerRow * d * dec * nn + kStackIoPerRow * d * nn;
  e.parameters = 2.0 * static_cast<double>(num_parameters);
  return e;
}

inline MemEstimate estimate_peak_floats(std::size_t n, const GmaeConfig& cfg, const ModelParams& p,
                                        MemMode mode = MemMode::gmae) {
  return estimate_peak_floats(n, cfg, used_parameters(p, mode), mode);
}

/// Limit of the GMAE / full attention-term ratio as n grows:
/// (enc_layers * (1 - r)^2 + dec_layers) / enc_layers.
inline double attention_ratio_limit(const GmaeConfig& cfg) {
  const double keep = 1.0 - cfg.mask_ratio;
  return (static_cast<double>(cfg.enc_layers) * keep * keep + static_cast<double>(cfg.dec_layers)) /
         static_cast<double>(cfg.enc_layers);
}

/// Erdos-Renyi graph with edge probability min(1, avg_degree / n), uniform
/// node labels and edge labels.
inline Graph random_graph(std::size_t n, std::uint64_t seed, std::size_t node_classes = 8,
                          std::size_t edge_classes = 4, double avg_degree = 3.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::uniform_int_distribution<std::int32_t> nl(0, static_cast<std::int32_t>(node_classes) - 1);
  std::uniform_int_distribution<std::int32_t> el(0, static_cast<std::int32_t>(edge_classes) - 1);
  const double p = std::min(1.0, avg_degree / static_cast<double>(n));
  Graph g;
  g.num_nodes = n;
  for (std::size_t i = 0; i < n; ++i) g.node_labels.push_back(nl(rng));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j)
      if (u(rng) < p) {
        g.edges.push_back({static_cast<std::uint32_t>(i), static_cast<std::uint32_t>(j)});
        if (edge_classes > 0) g.edge_labels.push_back(el(rng));
      }
  return g;
}

/// Peak live doubles during one instrumented forward + backward step,
/// including the parameter values the step uses.
inline std::size_t measure_peak_floats(const ModelParams& p, const Graph& g, const EncodedGraph& enc, MemMode mode,
                                       std::uint64_t seed = 0) {
  if (!memory_tracking_enabled()) throw StateError("measure_peak_floats: live-float tracking is disabled");
  auto params = p.parameters();
  zero_grads(params);
  std::int64_t peak = 0;
  {
    MemoryScope scope;
    if (mode == MemMode::gmae) {
      std::mt19937_64 rng(seed);
      pretrain_step(p, g, enc, rng);
    } else {
      full_graph_step(p, g, enc);
    }
    peak = scope.peak();
  }
  zero_grads(params);
  return static_cast<std::size_t>(peak) + used_parameters(p, mode);
}

/// Configuration used for memory profiling: a deep encoder, shallow decoder
/// and high mask ratio at a small width so large n stays affordable.
inline GmaeConfig memprofile_config() {
  GmaeConfig c;
  c.enc_layers = 12;
  c.dec_layers = 2;
  c.hidden = 16;
  c.heads = 8;
  c.mask_ratio = 0.7;
  return c;
}

inline FeatureSchema memprofile_schema() { return {8, 0, 4}; }

}  // namespace gmae
