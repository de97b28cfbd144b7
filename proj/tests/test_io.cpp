#include <gtest/gtest.h>

#include <fstream>
#include <sstream>

#include "test_util.hpp"

using namespace gmae;
namespace fs = std::filesystem;

namespace {

void write(const fs::path& p, const std::string& text) {
  std::ofstream out(p);
  out << text;
}

/// Triangle (nodes 1-3, labels 0,1,0) and a single edge (nodes 4-5); graph
/// labels 1 and -1.
fs::path tiny_tu(const std::string& dir_name) {
  const auto dir = testutil::scratch_dir(dir_name);
  write(dir / "T_A.txt", "1, 2\n2, 1\n2, 3\n3, 2\n1, 3\n3, 1\n4, 5\n5, 4\n");
  write(dir / "T_graph_indicator.txt", "1\n1\n1\n2\n2\n");
  write(dir / "T_graph_labels.txt", "1\n-1\n");
  write(dir / "T_node_labels.txt", "0\n1\n0\n1\n0\n");
  return dir;
}

}  // namespace

TEST(TuFormat, TinyFixture) {
  const auto ds = parse_tu_dataset(tiny_tu("tu_tiny"), "T");
  ASSERT_EQ(ds.size(), 2u);
  EXPECT_EQ(ds.num_node_classes, 2u);
  EXPECT_EQ(ds.target_kind, TargetKind::classification);
  EXPECT_EQ(ds.num_target_classes, 2u);
  EXPECT_EQ(ds.graphs[0].num_nodes, 3u);
  EXPECT_EQ(ds.graphs[0].edges.size(), 3u);  // both directions collapse
  EXPECT_EQ(ds.graphs[0].node_labels, (std::vector<std::int32_t>{0, 1, 0}));
  EXPECT_EQ(ds.graphs[1].num_nodes, 2u);
  EXPECT_EQ(ds.graphs[1].edges, (std::vector<Edge>{{0, 1}}));
  // sorted originals {-1, 1} -> {0, 1}
  EXPECT_EQ(std::get<std::int64_t>(ds.graphs[0].target), 1);
  EXPECT_EQ(std::get<std::int64_t>(ds.graphs[1].target), 0);
}

TEST(TuFormat, EdgeAcrossGraphsIsIntegrityError) {
  const auto dir = tiny_tu("tu_cross");
  write(dir / "T_A.txt", "1, 2\n2, 1\n3, 4\n");
  try {
    parse_tu_dataset(dir, "T");
    FAIL() << "expected IntegrityError";
  } catch (const IntegrityError& e) {
    EXPECT_EQ(e.line(), 3u);
  }
}

TEST(TuFormat, MissingMandatoryFileIsNamed) {
  const auto dir = tiny_tu("tu_missing");
  fs::remove(dir / "T_graph_indicator.txt");
  try {
    parse_tu_dataset(dir, "T");
    FAIL() << "expected FormatError";
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("T_graph_indicator.txt"), std::string::npos);
  }
}

TEST(TuFormat, NonIntegerTokenReportsLine) {
  const auto dir = tiny_tu("tu_parse");
  write(dir / "T_node_labels.txt", "0\n1\nx\n1\n0\n");
  try {
    parse_tu_dataset(dir, "T");
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 3u);
  }
}

TEST(TuFormat, EdgeLabelsFollowALines) {
  const auto dir = tiny_tu("tu_edge_labels");
  write(dir / "T_edge_labels.txt", "2\n2\n0\n0\n1\n1\n3\n3\n");
  const auto ds = parse_tu_dataset(dir, "T");
  EXPECT_EQ(ds.num_edge_classes, 4u);
  EXPECT_EQ(ds.graphs[0].edge_labels, (std::vector<std::int32_t>{2, 0, 1}));
  EXPECT_EQ(ds.graphs[1].edge_labels, (std::vector<std::int32_t>{3}));
}

TEST(TuFormat, AttributesWhenNoLabels) {
  const auto dir = tiny_tu("tu_attrs");
  fs::remove(dir / "T_node_labels.txt");
  write(dir / "T_node_attributes.txt", "0.5, 1\n1,2\n  3 ,4\n5,6\n7,8\n");
  const auto ds = parse_tu_dataset(dir, "T");
  EXPECT_EQ(ds.num_node_classes, 0u);
  EXPECT_EQ(ds.node_attr_dim, 2u);
  EXPECT_EQ(ds.graphs[0].node_attributes, (std::vector<double>{0.5, 1, 1, 2, 3, 4}));
}

TEST(TuFormat, Mutag) {
  const auto ds = testutil::mutag();
  EXPECT_EQ(ds.size(), 188u);
  EXPECT_NEAR(ds.mean_node_count(), 17.93, 0.005);
  EXPECT_EQ(ds.num_node_classes, 7u);
  EXPECT_EQ(ds.num_edge_classes, 4u);
  const auto labels = ds.class_labels();
  EXPECT_EQ(std::count(labels.begin(), labels.end(), 1), 125);
  EXPECT_EQ(std::count(labels.begin(), labels.end(), 0), 63);
}

TEST(Jsonl, PathRecord) {
  std::istringstream in(R"({"n":3,"edges":[[0,1],[1,2]],"node_labels":[0,0,1],"target":1})");
  const auto ds = parse_jsonl_graphs(in);
  ASSERT_EQ(ds.size(), 1u);
  EXPECT_EQ(ds.graphs[0].edges, (std::vector<Edge>{{0, 1}, {1, 2}}));
  EXPECT_EQ(std::get<std::int64_t>(ds.graphs[0].target), 1);
  EXPECT_EQ(ds.target_kind, TargetKind::classification);
}

TEST(Jsonl, EmptyFileIsEmptyDataset) {
  std::istringstream in("");
  EXPECT_EQ(parse_jsonl_graphs(in).size(), 0u);
}

TEST(Jsonl, OutOfRangeEdgeNamesRecord) {
  std::istringstream in(R"({"n":3,"edges":[[0,3]],"node_labels":[0,0,1]})");
  try {
    parse_jsonl_graphs(in);
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 1u);
  }
}

TEST(Jsonl, UnknownKeyRejected) {
  std::istringstream in("{\"n\":2,\"edges\":[]}\n{\"n\":2,\"edges\":[],\"colour\":1}\n");
  try {
    parse_jsonl_graphs(in);
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 2u);
  }
}

TEST(Jsonl, RoundTrip) {
  std::mt19937_64 rng(2);
  GraphDataset ds;
  for (int i = 0; i < 12; ++i) {
    Graph g = testutil::random_graph(2 + rng() % 8, 0.4, rng, 0, 3);
    g.attr_dim = 2;
    for (std::size_t v = 0; v < g.num_nodes * 2; ++v) g.node_attributes.push_back(std::ldexp(double(rng() % 1000), -7) + 0.1);
    g.target = 0.1 * i - 0.35;
    ds.graphs.push_back(g);
  }
  finalize_schema(ds);
  std::ostringstream out;
  write_jsonl_graphs(out, ds);
  std::istringstream in(out.str());
  const auto back = parse_jsonl_graphs(in);
  EXPECT_EQ(back.graphs, ds.graphs);
  EXPECT_EQ(back.node_attr_dim, 2u);
  EXPECT_EQ(back.target_kind, TargetKind::regression);
  std::ostringstream again;
  write_jsonl_graphs(again, back);
  EXPECT_EQ(again.str(), out.str());
}
