#pragma once

#include <algorithm>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <unordered_set>
#include <utility>
#include <variant>
#include <vector>

#include "gmae/error.hpp"
#include "gmae/log.hpp"

namespace gmae {

struct Edge {
  std::uint32_t u = 0;
  std::uint32_t v = 0;
  friend bool operator==(const Edge&, const Edge&) = default;
};

/// Graph-level target: class index, regression value, or nothing.
using GraphTarget = std::variant<std::monostate, std::int64_t, double>;

enum class TargetKind { none, classification, regression };

/// One undirected graph with either categorical node labels or float node
/// attributes (row-major, `attr_dim` values per node).
struct Graph {
  std::size_t num_nodes = 0;
  std::vector<Edge> edges;
  std::vector<std::int32_t> node_labels;
  std::vector<double> node_attributes;
  std::size_t attr_dim = 0;
  std::vector<std::int32_t> edge_labels;
  GraphTarget target;

  bool has_node_labels() const { return !node_labels.empty(); }
  bool has_edge_labels() const { return !edge_labels.empty(); }
  std::span<const double> attributes_of(std::size_t node) const {
    return {node_attributes.data() + node * attr_dim, attr_dim};
  }
  friend bool operator==(const Graph&, const Graph&) = default;
};

struct GraphDataset {
  std::string name;
  std::vector<Graph> graphs;
  std::size_t num_node_classes = 0;  // 0 when node features are attributes
  std::size_t node_attr_dim = 0;     // 0 when node features are labels
  std::size_t num_edge_classes = 0;  // 0 when edges carry no labels
  TargetKind target_kind = TargetKind::none;
  std::size_t num_target_classes = 0;

  std::size_t size() const { return graphs.size(); }
  bool categorical_nodes() const { return num_node_classes > 0; }

  double mean_node_count() const {
    if (graphs.empty()) return 0.0;
    double total = 0.0;
    for (const auto& g : graphs) total += static_cast<double>(g.num_nodes);
    return total / static_cast<double>(graphs.size());
  }

  std::vector<std::int64_t> class_labels() const {
    std::vector<std::int64_t> out;
    out.reserve(graphs.size());
    for (const auto& g : graphs) {
      if (const auto* c = std::get_if<std::int64_t>(&g.target)) {
        out.push_back(*c);
      } else {
        throw ArgumentError("dataset '" + name + "' has non-class targets");
      }
    }
    return out;
  }

  std::vector<double> regression_targets() const {
    std::vector<double> out;
    out.reserve(graphs.size());
    for (const auto& g : graphs) {
      if (const auto* r = std::get_if<double>(&g.target)) {
        out.push_back(*r);
      } else if (const auto* c = std::get_if<std::int64_t>(&g.target)) {
        out.push_back(static_cast<double>(*c));
      } else {
        throw ArgumentError("dataset '" + name + "' has no targets");
      }
    }
    return out;
  }

  friend bool operator==(const GraphDataset&, const GraphDataset&) = default;
};

struct EdgeCleanup {
  std::size_t self_loops = 0;
  std::size_t duplicates = 0;
};

/// Drops self-loops and repeated undirected edges in place, keeping the first
/// occurrence (and its label). Edges are stored with u < v.
inline EdgeCleanup normalize_edges(Graph& g) {
  EdgeCleanup report;
  std::vector<Edge> edges;
  std::vector<std::int32_t> labels;
  edges.reserve(g.edges.size());
  std::unordered_set<std::uint64_t> seen;
  seen.reserve(g.edges.size());
  for (std::size_t e = 0; e < g.edges.size(); ++e) {
    const auto [a, b] = g.edges[e];
    if (a == b) {
      ++report.self_loops;
      continue;
    }
    const Edge canon{std::min(a, b), std::max(a, b)};
    if (!seen.insert((static_cast<std::uint64_t>(canon.u) << 32) | canon.v).second) {
      ++report.duplicates;
      continue;
    }
    edges.push_back(canon);
    if (g.has_edge_labels()) labels.push_back(g.edge_labels[e]);
  }
  g.edges = std::move(edges);
  if (g.has_edge_labels()) g.edge_labels = std::move(labels);
  return report;
}

/// Checks the per-graph invariants; `what` prefixes error messages.
inline void validate_graph(const Graph& g, const std::string& what) {
  if (g.num_nodes == 0) throw DataError(what + ": graph has no nodes");
  for (const auto& [u, v] : g.edges) {
    if (u >= g.num_nodes || v >= g.num_nodes) {
      throw DataError(what + ": edge (" + std::to_string(u) + ", " + std::to_string(v) +
                      ") out of range for " + std::to_string(g.num_nodes) + " nodes");
    }
    if (u == v) throw DataError(what + ": self-loop on node " + std::to_string(u));
  }
  if (g.has_node_labels() && g.node_labels.size() != g.num_nodes) {
    throw DataError(what + ": node label count does not match node count");
  }
  if (!g.node_attributes.empty() && g.node_attributes.size() != g.num_nodes * g.attr_dim) {
    throw DataError(what + ": node attribute count does not match node count");
  }
  if (g.has_edge_labels() && g.edge_labels.size() != g.edges.size()) {
    throw DataError(what + ": edge label count does not match edge count");
  }
}

// ---------------------------------------------------------------------------
// Structural encodings

inline constexpr std::uint32_t kUnreachable = std::numeric_limits<std::uint32_t>::max();

/// Degrees, clamped shortest-path distances and one stored shortest path per
/// ordered reachable pair. Paths hold edge indices into `Graph::edges`, in
/// walking order from the source, truncated to `max_spd` hops.
struct EncodedGraph {
  std::size_t num_nodes = 0;
  std::size_t max_spd = 0;
  std::vector<std::uint32_t> degrees;
  std::vector<std::uint32_t> spd;
  std::vector<std::uint32_t> path_offsets;
  std::vector<std::uint32_t> path_edges;

  std::uint32_t distance(std::size_t i, std::size_t j) const { return spd[i * num_nodes + j]; }
  bool reachable(std::size_t i, std::size_t j) const { return distance(i, j) != kUnreachable; }
  std::span<const std::uint32_t> path(std::size_t i, std::size_t j) const {
    const std::size_t k = i * num_nodes + j;
    return {path_edges.data() + path_offsets[k], path_offsets[k + 1] - path_offsets[k]};
  }
};

/// BFS from every node. Neighbors are expanded lowest index first so stored
/// paths are deterministic.
inline EncodedGraph compute_encodings(const Graph& g, std::size_t max_spd = 20) {
  if (max_spd == 0) throw ArgumentError("compute_encodings: max_spd must be >= 1");
  const std::size_t n = g.num_nodes;
  EncodedGraph enc;
  enc.num_nodes = n;
  enc.max_spd = max_spd;
  enc.degrees.assign(n, 0);
  enc.spd.assign(n * n, kUnreachable);
  enc.path_offsets.assign(n * n + 1, 0);

  // adjacency sorted by neighbor index: (neighbor, edge index)
  std::vector<std::vector<std::pair<std::uint32_t, std::uint32_t>>> adj(n);
  for (std::uint32_t e = 0; e < g.edges.size(); ++e) {
    const auto [u, v] = g.edges[e];
    adj[u].emplace_back(v, e);
    adj[v].emplace_back(u, e);
  }
  for (std::size_t i = 0; i < n; ++i) {
    std::sort(adj[i].begin(), adj[i].end());
    enc.degrees[i] = static_cast<std::uint32_t>(adj[i].size());
  }

  std::vector<std::uint32_t> dist(n);
  std::vector<std::uint32_t> parent_edge(n);
  std::vector<std::uint32_t> parent_node(n);
  std::vector<std::uint32_t> queue(n);
  std::vector<std::uint32_t> scratch;
  for (std::size_t s = 0; s < n; ++s) {
    std::fill(dist.begin(), dist.end(), kUnreachable);
    dist[s] = 0;
    std::size_t head = 0, tail = 0;
    queue[tail++] = static_cast<std::uint32_t>(s);
    while (head < tail) {
      const std::uint32_t x = queue[head++];
      for (const auto& [y, e] : adj[x]) {
        if (dist[y] != kUnreachable) continue;
        dist[y] = dist[x] + 1;
        parent_edge[y] = e;
        parent_node[y] = x;
        queue[tail++] = y;
      }
    }
    for (std::size_t t = 0; t < n; ++t) {
      const std::size_t k = s * n + t;
      if (dist[t] == kUnreachable) {
        enc.path_offsets[k + 1] = static_cast<std::uint32_t>(enc.path_edges.size());
        continue;
      }
      enc.spd[k] = std::min<std::uint32_t>(dist[t], static_cast<std::uint32_t>(max_spd));
      scratch.clear();
      for (std::uint32_t x = static_cast<std::uint32_t>(t); x != s; x = parent_node[x]) {
        scratch.push_back(parent_edge[x]);
      }
      std::reverse(scratch.begin(), scratch.end());
      if (scratch.size() > max_spd) scratch.resize(max_spd);
      enc.path_edges.insert(enc.path_edges.end(), scratch.begin(), scratch.end());
      enc.path_offsets[k + 1] = static_cast<std::uint32_t>(enc.path_edges.size());
    }
  }
  return enc;
}

inline std::vector<EncodedGraph> compute_encodings(const GraphDataset& ds, std::size_t max_spd = 20) {
  std::vector<EncodedGraph> out;
  out.reserve(ds.size());
  for (const auto& g : ds.graphs) out.push_back(compute_encodings(g, max_spd));
  return out;
}

// ---------------------------------------------------------------------------
// Cross-validation folds

struct Fold {
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
};

/// Shuffled partition of 0..n-1 into k test folds whose sizes differ by at most
/// one; the larger folds come first.
inline std::vector<Fold> split_kfold(std::size_t n, std::size_t k, std::uint64_t seed) {
  if (k < 2) throw ArgumentError("split_kfold: k must be >= 2, got " + std::to_string(k));
  if (k > n) {
    throw ArgumentError("split_kfold: k = " + std::to_string(k) + " exceeds dataset size " +
                        std::to_string(n));
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);

  std::vector<Fold> folds(k);
  std::vector<std::size_t> fold_of(n);
  std::size_t pos = 0;
  for (std::size_t f = 0; f < k; ++f) {
    const std::size_t size = n / k + (f < n % k ? 1 : 0);
    for (std::size_t i = 0; i < size; ++i) fold_of[order[pos + i]] = f;
    folds[f].test.assign(order.begin() + static_cast<std::ptrdiff_t>(pos),
                         order.begin() + static_cast<std::ptrdiff_t>(pos + size));
    std::sort(folds[f].test.begin(), folds[f].test.end());
    pos += size;
  }
  for (std::size_t f = 0; f < k; ++f) {
    folds[f].train.reserve(n - folds[f].test.size());
    for (std::size_t i = 0; i < n; ++i) {
      if (fold_of[i] != f) folds[f].train.push_back(i);
    }
  }
  return folds;
}

inline std::vector<Fold> split_kfold(const GraphDataset& ds, std::size_t k, std::uint64_t seed) {
  return split_kfold(ds.size(), k, seed);
}

/// The listed graphs with the parent's schema.
inline GraphDataset subset(const GraphDataset& ds, std::span<const std::size_t> ids) {
  GraphDataset out = ds;
  out.graphs.clear();
  for (auto i : ids) {
    if (i >= ds.size()) throw IndexError("subset: graph " + std::to_string(i) + " out of range");
    out.graphs.push_back(ds.graphs[i]);
  }
  return out;
}

/// Fills the dataset-level schema (class counts, target kind) from its graphs
/// and validates every graph against it.
inline void finalize_schema(GraphDataset& ds) {
  std::int64_t max_node_label = -1, max_edge_label = -1, max_class = -1;
  bool any_labels = false, any_attrs = false, any_float = false, any_class = false;
  std::size_t attr_dim = 0;
  for (std::size_t i = 0; i < ds.graphs.size(); ++i) {
    const auto& g = ds.graphs[i];
    validate_graph(g, "graph " + std::to_string(i));
    if (g.has_node_labels()) {
      any_labels = true;
      for (auto l : g.node_labels) {
        if (l < 0) throw DataError("graph " + std::to_string(i) + ": negative node label");
        max_node_label = std::max<std::int64_t>(max_node_label, l);
      }
    }
    if (!g.node_attributes.empty()) {
      if (any_attrs && g.attr_dim != attr_dim) {
        throw DataError("graph " + std::to_string(i) + ": inconsistent node attribute dimension");
      }
      any_attrs = true;
      attr_dim = g.attr_dim;
    }
    for (auto l : g.edge_labels) {
      if (l < 0) throw DataError("graph " + std::to_string(i) + ": negative edge label");
      max_edge_label = std::max<std::int64_t>(max_edge_label, l);
    }
    if (const auto* c = std::get_if<std::int64_t>(&g.target)) {
      any_class = true;
      max_class = std::max(max_class, *c);
    } else if (std::holds_alternative<double>(g.target)) {
      any_float = true;
    }
  }
  if (any_labels && any_attrs) {
    throw DataError("dataset mixes categorical node labels and node attributes");
  }
  if (any_labels) {
    for (std::size_t i = 0; i < ds.graphs.size(); ++i) {
      if (!ds.graphs[i].has_node_labels()) {
        throw DataError("graph " + std::to_string(i) + ": missing node labels");
      }
    }
  }
  ds.num_node_classes = any_labels ? static_cast<std::size_t>(max_node_label + 1) : 0;
  ds.node_attr_dim = any_attrs ? attr_dim : 0;
  ds.num_edge_classes = max_edge_label >= 0 ? static_cast<std::size_t>(max_edge_label + 1) : 0;
  if (ds.num_edge_classes > 0) {
    for (std::size_t i = 0; i < ds.graphs.size(); ++i) {
      const auto& g = ds.graphs[i];
      if (!g.edges.empty() && !g.has_edge_labels()) {
        throw DataError("graph " + std::to_string(i) + ": missing edge labels");
      }
    }
  }
  if (any_float) {
    ds.target_kind = TargetKind::regression;
    ds.num_target_classes = 0;
    for (auto& g : ds.graphs) {
      if (const auto* c = std::get_if<std::int64_t>(&g.target)) g.target = static_cast<double>(*c);
    }
  } else if (any_class) {
    ds.target_kind = TargetKind::classification;
    ds.num_target_classes = static_cast<std::size_t>(max_class + 1);
  } else {
    ds.target_kind = TargetKind::none;
    ds.num_target_classes = 0;
  }
}

}  // namespace gmae
