#pragma once

#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "gmae/graph.hpp"

namespace gmae {

namespace detail {

inline std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return s.substr(first, last - first + 1);
}

inline std::vector<std::string_view> split_commas(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto comma = line.find(',', start);
    out.push_back(trim(line.substr(start, comma - start)));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

struct LineFile {
  std::string path;
  std::vector<std::string> lines;  // non-blank lines
  std::vector<std::size_t> numbers;  // 1-based source line numbers
};

inline LineFile read_lines(const std::filesystem::path& path, bool mandatory) {
  LineFile f;
  f.path = path.filename().string();
  std::ifstream in(path);
  if (!in) {
    if (mandatory) throw FormatError("missing required file " + path.string());
    return f;
  }
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (trim(line).empty()) continue;
    f.lines.push_back(line);
    f.numbers.push_back(number);
  }
  return f;
}

inline std::int64_t parse_int(std::string_view tok, const LineFile& f, std::size_t row) {
  std::int64_t value = 0;
  const auto* end = tok.data() + tok.size();
  auto [ptr, ec] = std::from_chars(tok.data(), end, value);
  if (tok.empty() || ec != std::errc() || ptr != end) {
    throw ParseError(f.path, f.numbers[row], "expected integer, got '" + std::string(tok) + "'");
  }
  return value;
}

inline double parse_double(std::string_view tok, const LineFile& f, std::size_t row) {
  double value = 0.0;
  const auto* end = tok.data() + tok.size();
  auto [ptr, ec] = std::from_chars(tok.data(), end, value);
  if (tok.empty() || ec != std::errc() || ptr != end || !std::isfinite(value)) {
    throw ParseError(f.path, f.numbers[row], "expected number, got '" + std::string(tok) + "'");
  }
  return value;
}

}  // namespace detail

/// Reads a dataset in the TU Dortmund multi-file text format from
/// `directory/{name}_*.txt`.
inline GraphDataset parse_tu_dataset(const std::filesystem::path& directory, const std::string& name) {
  using detail::read_lines;
  const auto file = [&](const char* suffix) { return directory / (name + suffix); };
  const auto a_file = read_lines(file("_A.txt"), true);
  const auto indicator = read_lines(file("_graph_indicator.txt"), true);
  const auto graph_labels = read_lines(file("_graph_labels.txt"), true);
  const auto node_labels = read_lines(file("_node_labels.txt"), false);
  const auto edge_labels = read_lines(file("_edge_labels.txt"), false);
  const auto node_attrs = read_lines(file("_node_attributes.txt"), false);

  const std::size_t num_graphs = graph_labels.lines.size();
  const std::size_t num_nodes = indicator.lines.size();

  GraphDataset ds;
  ds.name = name;
  ds.graphs.resize(num_graphs);

  // node -> (graph, local index)
  std::vector<std::uint32_t> graph_of(num_nodes), local_of(num_nodes);
  for (std::size_t i = 0; i < num_nodes; ++i) {
    const auto gid = detail::parse_int(detail::trim(indicator.lines[i]), indicator, i);
    if (gid < 1 || static_cast<std::size_t>(gid) > num_graphs) {
      throw IntegrityError(indicator.path, indicator.numbers[i],
                           "graph id " + std::to_string(gid) + " outside 1.." + std::to_string(num_graphs));
    }
    graph_of[i] = static_cast<std::uint32_t>(gid - 1);
    local_of[i] = static_cast<std::uint32_t>(ds.graphs[gid - 1].num_nodes++);
  }

  const bool use_labels = !node_labels.lines.empty();
  const bool use_attrs = !use_labels && !node_attrs.lines.empty();
  if (use_labels && !node_attrs.lines.empty()) {
    log::info(name, ": both node labels and attributes present; using labels");
  }
  if (!use_labels && !use_attrs) {
    throw FormatError("dataset " + name + " has neither " + name + "_node_labels.txt nor " + name +
                      "_node_attributes.txt");
  }
  if (use_labels) {
    if (node_labels.lines.size() != num_nodes) {
      throw IntegrityError(node_labels.path, node_labels.lines.size(),
                           "expected " + std::to_string(num_nodes) + " node labels");
    }
    for (auto& g : ds.graphs) g.node_labels.reserve(g.num_nodes);
    for (std::size_t i = 0; i < num_nodes; ++i) {
      const auto toks = detail::split_commas(node_labels.lines[i]);
      const auto label = detail::parse_int(toks.front(), node_labels, i);
      if (label < 0) throw ParseError(node_labels.path, node_labels.numbers[i], "negative node label");
      ds.graphs[graph_of[i]].node_labels.push_back(static_cast<std::int32_t>(label));
    }
  } else {
    if (node_attrs.lines.size() != num_nodes) {
      throw IntegrityError(node_attrs.path, node_attrs.lines.size(),
                           "expected " + std::to_string(num_nodes) + " attribute rows");
    }
    std::size_t dim = 0;
    for (std::size_t i = 0; i < num_nodes; ++i) {
      const auto toks = detail::split_commas(node_attrs.lines[i]);
      if (i == 0) dim = toks.size();
      if (toks.size() != dim) {
        throw ParseError(node_attrs.path, node_attrs.numbers[i],
                         "expected " + std::to_string(dim) + " attributes");
      }
      auto& g = ds.graphs[graph_of[i]];
      g.attr_dim = dim;
      for (auto tok : toks) g.node_attributes.push_back(detail::parse_double(tok, node_attrs, i));
    }
  }

  const bool has_edge_labels = !edge_labels.lines.empty();
  if (has_edge_labels && edge_labels.lines.size() != a_file.lines.size()) {
    throw IntegrityError(edge_labels.path, edge_labels.lines.size(),
                         "edge label count differs from " + a_file.path);
  }
  for (std::size_t e = 0; e < a_file.lines.size(); ++e) {
    const auto toks = detail::split_commas(a_file.lines[e]);
    if (toks.size() != 2) throw ParseError(a_file.path, a_file.numbers[e], "expected 'u, v'");
    const auto u = detail::parse_int(toks[0], a_file, e);
    const auto v = detail::parse_int(toks[1], a_file, e);
    for (auto x : {u, v}) {
      if (x < 1 || static_cast<std::size_t>(x) > num_nodes) {
        throw IntegrityError(a_file.path, a_file.numbers[e], "node id " + std::to_string(x) + " out of range");
      }
    }
    const auto gu = graph_of[u - 1], gv = graph_of[v - 1];
    if (gu != gv) {
      throw IntegrityError(a_file.path, a_file.numbers[e],
                           "edge (" + std::to_string(u) + ", " + std::to_string(v) + ") joins graphs " +
                               std::to_string(gu + 1) + " and " + std::to_string(gv + 1));
    }
    auto& g = ds.graphs[gu];
    g.edges.push_back({local_of[u - 1], local_of[v - 1]});
    if (has_edge_labels) {
      const auto toks_l = detail::split_commas(edge_labels.lines[e]);
      const auto label = detail::parse_int(toks_l.front(), edge_labels, e);
      if (label < 0) throw ParseError(edge_labels.path, edge_labels.numbers[e], "negative edge label");
      g.edge_labels.push_back(static_cast<std::int32_t>(label));
    }
  }

  std::map<std::int64_t, std::int64_t> remap;
  std::vector<std::int64_t> raw(num_graphs);
  for (std::size_t gi = 0; gi < num_graphs; ++gi) {
    raw[gi] = detail::parse_int(detail::trim(graph_labels.lines[gi]), graph_labels, gi);
    remap.emplace(raw[gi], 0);
  }
  std::int64_t next = 0;
  for (auto& [orig, mapped] : remap) mapped = next++;

  EdgeCleanup dropped;
  for (std::size_t gi = 0; gi < num_graphs; ++gi) {
    auto& g = ds.graphs[gi];
    if (g.num_nodes == 0) {
      throw IntegrityError(indicator.path, 0, "graph " + std::to_string(gi + 1) + " has no nodes");
    }
    g.target = remap.at(raw[gi]);
    const auto r = normalize_edges(g);
    dropped.self_loops += r.self_loops;
    dropped.duplicates += r.duplicates;
  }
  if (dropped.self_loops > 0) log::info(name, ": dropped ", dropped.self_loops, " self-loops");
  log::debug(name, ": merged ", dropped.duplicates, " duplicate undirected edges");
  finalize_schema(ds);
  return ds;
}

// ---------------------------------------------------------------------------
// JSONL

namespace detail {

inline std::int64_t json_int(const nlohmann::json& j, std::size_t record, const char* what) {
  if (!j.is_number_integer()) {
    throw ParseError("jsonl record", record, std::string(what) + " must be an integer");
  }
  return j.get<std::int64_t>();
}

inline Graph graph_from_json(const nlohmann::json& rec, std::size_t record) {
  const auto fail = [&](const std::string& msg) { throw ParseError("jsonl record", record, msg); };
  if (!rec.is_object()) fail("record is not an object");
  for (const auto& [key, _] : rec.items()) {
    if (key != "n" && key != "edges" && key != "node_labels" && key != "node_attrs" &&
        key != "edge_labels" && key != "target") {
      fail("unknown key '" + key + "'");
    }
  }
  if (!rec.contains("n")) fail("missing key 'n'");
  const auto n = json_int(rec["n"], record, "n");
  if (n < 1) fail("n must be >= 1");

  Graph g;
  g.num_nodes = static_cast<std::size_t>(n);
  if (rec.contains("edges")) {
    const auto& edges = rec["edges"];
    if (!edges.is_array()) fail("edges must be a list");
    for (const auto& e : edges) {
      if (!e.is_array() || e.size() != 2) fail("each edge must be [u, v]");
      const auto u = json_int(e[0], record, "edge endpoint");
      const auto v = json_int(e[1], record, "edge endpoint");
      if (u < 0 || v < 0 || u >= n || v >= n) {
        fail("edge [" + std::to_string(u) + ", " + std::to_string(v) + "] out of range for n = " +
             std::to_string(n));
      }
      g.edges.push_back({static_cast<std::uint32_t>(u), static_cast<std::uint32_t>(v)});
    }
  }
  if (rec.contains("node_labels")) {
    const auto& labels = rec["node_labels"];
    if (!labels.is_array() || labels.size() != g.num_nodes) fail("node_labels must have n entries");
    for (const auto& l : labels) {
      const auto v = json_int(l, record, "node label");
      if (v < 0) fail("negative node label");
      g.node_labels.push_back(static_cast<std::int32_t>(v));
    }
  }
  if (rec.contains("node_attrs")) {
    const auto& attrs = rec["node_attrs"];
    if (!attrs.is_array() || attrs.size() != g.num_nodes) fail("node_attrs must have n rows");
    for (const auto& row : attrs) {
      if (!row.is_array()) fail("node_attrs rows must be lists");
      if (&row == &attrs.front()) g.attr_dim = row.size();
      if (row.size() != g.attr_dim) fail("node_attrs rows differ in length");
      for (const auto& x : row) {
        if (!x.is_number()) fail("node_attrs entries must be numbers");
        g.node_attributes.push_back(x.get<double>());
      }
    }
  }
  if (g.has_node_labels() && !g.node_attributes.empty()) fail("node_labels and node_attrs are exclusive");
  if (rec.contains("edge_labels")) {
    const auto& labels = rec["edge_labels"];
    if (!labels.is_array() || labels.size() != g.edges.size()) fail("edge_labels must align with edges");
    for (const auto& l : labels) {
      const auto v = json_int(l, record, "edge label");
      if (v < 0) fail("negative edge label");
      g.edge_labels.push_back(static_cast<std::int32_t>(v));
    }
  }
  if (rec.contains("target")) {
    const auto& t = rec["target"];
    if (t.is_number_integer()) {
      const auto c = t.get<std::int64_t>();
      if (c < 0) fail("class targets must be >= 0");
      g.target = c;
    } else if (t.is_number_float()) {
      g.target = t.get<double>();
    } else {
      fail("target must be a number");
    }
  }
  normalize_edges(g);
  return g;
}

}  // namespace detail

/// Newline-delimited JSON, one graph per line. Integer targets are class
/// indices used as given; float targets make the dataset a regression set.
inline GraphDataset parse_jsonl_graphs(std::istream& in, const std::string& name = "jsonl") {
  GraphDataset ds;
  ds.name = name;
  std::string line;
  std::size_t record = 0;
  while (std::getline(in, line)) {
    ++record;
    if (detail::trim(line).empty()) continue;
    nlohmann::json rec;
    try {
      rec = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw ParseError("jsonl record", record, e.what());
    }
    ds.graphs.push_back(detail::graph_from_json(rec, record));
  }
  finalize_schema(ds);
  return ds;
}

inline GraphDataset parse_jsonl_graphs(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open " + path.string());
  return parse_jsonl_graphs(in, path.stem().string());
}

inline void write_jsonl_graphs(std::ostream& out, const GraphDataset& ds) {
  for (const auto& g : ds.graphs) {
    nlohmann::ordered_json rec;
    rec["n"] = g.num_nodes;
    auto edges = nlohmann::ordered_json::array();
    for (const auto& e : g.edges) edges.push_back({e.u, e.v});
    rec["edges"] = std::move(edges);
    if (g.has_node_labels()) rec["node_labels"] = g.node_labels;
    if (!g.node_attributes.empty()) {
      auto rows = nlohmann::ordered_json::array();
      for (std::size_t i = 0; i < g.num_nodes; ++i) {
        const auto a = g.attributes_of(i);
        rows.push_back(std::vector<double>(a.begin(), a.end()));
      }
      rec["node_attrs"] = std::move(rows);
    }
    if (g.has_edge_labels()) rec["edge_labels"] = g.edge_labels;
    if (const auto* c = std::get_if<std::int64_t>(&g.target)) rec["target"] = *c;
    if (const auto* r = std::get_if<double>(&g.target)) rec["target"] = *r;
    out << rec.dump() << '\n';
  }
}

/// Loads a dataset by format name ("tu" or "jsonl").
inline GraphDataset load_dataset(const std::string& format, const std::filesystem::path& path,
                                 const std::string& name) {
  if (format == "tu") return parse_tu_dataset(path, name.empty() ? path.filename().string() : name);
  if (format == "jsonl") {
    auto ds = parse_jsonl_graphs(path);
    if (!name.empty()) ds.name = name;
    return ds;
  }
  throw ArgumentError("unknown dataset format '" + format + "' (expected tu or jsonl)");
}

}  // namespace gmae
