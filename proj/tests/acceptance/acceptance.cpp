// Acceptance run: one PASS/FAIL line per criterion. Pass criterion numbers as
// arguments to run a subset.

#include <chrono>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include "../test_util.hpp"

using namespace gmae;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;

  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      detail += (detail.empty() ? "" : "; ") + what;
    }
  }
};

std::string fmt(double x, int digits = 4) {
  std::ostringstream os;
  os.precision(digits);
  os << x;
  return os.str();
}

// ---------------------------------------------------------------------------
// 1. Gradient suite

double op_gradients() {
  std::mt19937_64 rng(1);
  auto T = [&](Shape s) { return testutil::random_tensor(std::move(s), rng); };
  double worst = 0.0;
  auto check = [&](const std::function<Tensor()>& f, std::vector<Tensor> in) {
    worst = std::max(worst, grad_check(f, std::move(in), 1e-6).max_rel_error);
  };
  Tensor a = T({4, 3}), b = T({3, 5}), row = T({1, 5}), r45 = T({4, 5}), r43 = T({4, 3});
  Tensor bias = T({1, 2, 4, 4}), q = T({4, 4}), k = T({4, 4}), v = T({4, 4}), tok = T({1, 3}), g = T({1, 3});
  const Tensor r33 = T({3, 3}), r63 = T({6, 3}), r53 = T({5, 3}), r23 = T({2, 3}), r13 = T({1, 3}), r44 = T({4, 4});
  const std::vector<std::size_t> labels{0, 2, 1, 2}, ids{3, 0, 0};
  check([&] { return loss_mse(matmul(a, b), r45); }, {a, b});
  check([&] { return loss_mse(linear(a, b, row), r45); }, {a, b, row});
  check([&] { return loss_mse(add(matmul(a, b), row), r45); }, {a, b, row});
  check([&] { return loss_mse(scale(a, -1.3), r43); }, {a});
  check([&] { return loss_mse(relu(a), r43); }, {a});
  check([&] { return loss_mse(layer_norm(a, g, tok), r43); }, {a, g, tok});
  check([&] { return loss_mse(softmax_lastdim(a), r43); }, {a});
  check([&] { return loss_mse(gather_rows(a, ids), r33); }, {a});
  check([&] { return loss_mse(embedding_lookup(a, ids), r33); }, {a});
  check([&] { return loss_mse(scatter_rows(a, std::vector<std::size_t>{5, 1, 2, 0}, 6), r63); }, {a});
  const std::vector<std::int64_t> src{2, kTokenRow, kZeroRow, 0, kTokenRow};
  check([&] { return loss_mse(compose_rows(a, tok, src), r53); }, {a, tok});
  check([&] { return loss_mse(segment_mean(a, 2, std::vector<std::size_t>{2, 1}), r23); }, {a});
  check([&] { return loss_mse(mean_rows(a), r13); }, {a});
  check([&] { return sum(a); }, {a});
  check([&] { return weighted_sum(a, std::vector<double>(12, 0.7)); }, {a});
  const std::uint64_t dseed = rng();
  check(
      [&] {
        std::mt19937_64 local(dseed);
        return loss_mse(dropout(a, 0.3, local), r43);
      },
      {a});
  check([&] { return loss_mse(attention_core(q, k, v, bias, 2), r44); }, {q, k, v, bias});
  check([&] { return loss_l1(a, r43); }, {a});
  check([&] { return loss_cross_entropy(a, labels); }, {a});
  // encoding tables
  Graph gr = testutil::path_graph(5);
  gr.edges.push_back({0, 4});
  gr.edge_labels = {0, 1, 0, 1, 1};
  const auto enc = compute_encodings(gr, 4);
  StackConfig sc;
  sc.hidden = 4;
  sc.heads = 2;
  sc.max_spd = 4;
  sc.max_degree = 3;
  sc.num_edge_classes = 2;
  sc.edge_dim = 3;
  std::mt19937_64 trng(2);
  auto tables = EncodingTables::init(sc, trng);
  for (auto* t : {&tables.spatial, &tables.edge_embedding, &tables.hop_weights})
    for (auto& x : t->data()) x = std::normal_distribution<double>(0.0, 1.0)(rng);
  const Tensor w = T({1, 2, 5, 5});
  const std::vector<double> wv(w.data().begin(), w.data().end());
  check([&] { return weighted_sum(build_bias(gr, enc, tables), wv); },
        {tables.spatial, tables.edge_embedding, tables.hop_weights});
  Tensor x0 = T({5, 4});
  const Tensor r54 = T({5, 4});
  check([&] { return loss_mse(centrality_encode(x0, enc.degrees, tables.centrality), r54); },
        {x0, tables.centrality});
  return worst;
}

Outcome criterion_gradients() {
  Outcome o;
  const double ops = op_gradients();
  GmaeConfig cfg;
  cfg.enc_layers = 2;
  cfg.dec_layers = 1;
  cfg.hidden = 16;
  cfg.heads = 2;
  cfg.max_spd = 6;
  cfg.max_degree = 6;
  const FeatureSchema schema{3, 0, 2};
  const auto params = ModelParams::init(cfg, schema, 3);
  testutil::randomize(params, 4, 0.3);
  std::mt19937_64 rng(5);
  const Graph g = testutil::random_graph(6, 0.5, rng, 3, 2);
  const auto enc = compute_encodings(g, cfg.max_spd);
  const GraphRef ref{&g, &enc};
  const MaskPlan plan = sample_mask(6, 0.5, rng);
  std::vector<Tensor> inputs;
  for (const auto& p : params.parameters()) inputs.push_back(p.tensor);
  const auto model = grad_check(
      [&] { return pretrain_forward(params, std::span<const GraphRef>(&ref, 1), std::span<const MaskPlan>(&plan, 1)); },
      inputs, 1e-6);
  // Some attention weight gradients sit near 1e-10, below what a central
  // difference at h = 1e-6 can resolve; their relative error is measured
  // against a denominator floored at resolution / 1e-4.
  o.detail = "ops max rel err " + fmt(ops, 3) + ", 2-layer model " + fmt(model.max_resolved_error, 3) +
             " (raw " + fmt(model.max_rel_error, 3) + ", fd resolution " + fmt(model.resolution, 3) + ")";
  o.require(ops < 1e-4, "op gradient check");
  o.require(model.max_resolved_error < 1e-4, "model gradient check");
  return o;
}

// ---------------------------------------------------------------------------
// 2. Oracle equivalence

Outcome criterion_oracles() {
  Outcome o;
  std::mt19937_64 rng(11);
  std::size_t spd_mismatch = 0;
  for (int t = 0; t < 200; ++t) {
    const std::size_t n = 1 + rng() % 12;
    const double p = std::uniform_real_distribution<double>(0.05, 0.6)(rng);
    const Graph g = testutil::random_graph(n, p, rng, 0);
    const auto enc = compute_encodings(g, 64);
    const std::size_t inf = 1u << 20;
    std::vector<std::size_t> d(n * n, inf);
    for (std::size_t i = 0; i < n; ++i) d[i * n + i] = 0;
    for (const auto& e : g.edges) d[e.u * n + e.v] = d[e.v * n + e.u] = 1;
    for (std::size_t m = 0; m < n; ++m)
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) d[i * n + j] = std::min(d[i * n + j], d[i * n + m] + d[m * n + j]);
    for (std::size_t i = 0; i < n * n; ++i) {
      const std::uint32_t got = enc.spd[i];
      spd_mismatch += d[i] == inf ? got != kUnreachable : got != d[i];
    }
  }
  double attn_err = 0.0;
  for (int t = 0; t < 50; ++t) {
    const std::size_t n = 1 + rng() % 7, heads = 1 + rng() % 3, dh = 1 + rng() % 4, dm = heads * dh;
    const Tensor q = testutil::random_tensor({n, dm}, rng), k = testutil::random_tensor({n, dm}, rng);
    const Tensor v = testutil::random_tensor({n, dm}, rng), bias = testutil::random_tensor({1, heads, n, n}, rng);
    const Tensor out = attention_core(q, k, v, bias, heads);
    for (std::size_t a = 0; a < heads; ++a)
      for (std::size_t i = 0; i < n; ++i) {
        std::vector<double> s(n);
        double mx = -1e300, z = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
          double dot = 0.0;
          for (std::size_t c = 0; c < dh; ++c) dot += q.at(i, a * dh + c) * k.at(j, a * dh + c);
          s[j] = dot / std::sqrt(static_cast<double>(dh)) + bias[(a * n + i) * n + j];
          mx = std::max(mx, s[j]);
        }
        for (auto& x : s) z += (x = std::exp(x - mx));
        for (std::size_t c = 0; c < dh; ++c) {
          double acc = 0.0;
          for (std::size_t j = 0; j < n; ++j) acc += s[j] / z * v.at(j, a * dh + c);
          attn_err = std::max(attn_err, std::abs(acc - out.at(i, a * dh + c)));
        }
      }
  }
  o.detail = "SPD mismatches " + std::to_string(spd_mismatch) + "/200 graphs, attention max err " + fmt(attn_err, 3);
  o.require(spd_mismatch == 0, "BFS differs from Floyd-Warshall");
  o.require(attn_err <= 1e-12, "attention differs from naive loop");
  return o;
}

// ---------------------------------------------------------------------------
// 3. Invariant suite

Outcome criterion_invariants() {
  Outcome o;
  std::mt19937_64 rng(21);
  GmaeConfig cfg = testutil::small_model();
  cfg.hidden = 8;
  const auto params = ModelParams::init(cfg, {3, 0, 0}, 21);
  testutil::randomize(params, 22, 0.4);

  // masked-loss locality
  {
    const Graph g = testutil::random_graph(7, 0.4, rng, 3);
    const auto plan = sample_mask(7, 0.5, rng);
    Tensor pred = testutil::random_tensor({7, 3}, rng).set_requires_grad();
    Tape tape;
    Tensor loss;
    {
      TapeScope s(tape);
      loss = reconstruction_loss(pred, g, plan);
    }
    tape.backward(loss);
    double leak = 0.0;
    for (auto v : plan.visible)
      for (std::size_t c = 0; c < 3; ++c) leak = std::max(leak, std::abs(pred.grad()[v * 3 + c]));
    o.require(leak == 0.0, "visible rows receive gradient");
  }
  // mask-token gradient summation
  {
    const MaskPlan plan{{0, 3}, {1, 2, 4}};
    const Tensor xe = testutil::random_tensor({2, 3}, rng);
    Tensor tok = testutil::random_tensor({1, 3}, rng).set_requires_grad();
    const Tensor w = testutil::random_tensor({5, 3}, rng);
    Tape tape;
    Tensor y;
    {
      TapeScope s(tape);
      y = weighted_sum(assemble_decoder_input(xe, plan, tok), std::vector<double>(w.data().begin(), w.data().end()));
    }
    tape.backward(y);
    double err = 0.0;
    for (std::size_t c = 0; c < 3; ++c) err = std::max(err, std::abs(tok.grad()[c] - (w.at(1, c) + w.at(2, c) + w.at(4, c))));
    o.require(err < 1e-14, "mask-token gradient is not the masked-row sum");
  }
  // permutation equivariance / invariance
  {
    double node_err = 0.0, graph_err = 0.0;
    for (int t = 0; t < 20; ++t) {
      const Graph g = testutil::random_graph(9, 0.35, rng, 3);
      const auto perm = testutil::random_permutation(9, rng);
      const Graph pg = testutil::permute(g, perm);
      const auto a = embed(params, g, compute_encodings(g, cfg.max_spd));
      const auto b = embed(params, pg, compute_encodings(pg, cfg.max_spd));
      for (std::size_t v = 0; v < 9; ++v)
        for (std::size_t c = 0; c < cfg.hidden; ++c) node_err = std::max(node_err, std::abs(a.nodes.at(v, c) - b.nodes.at(perm[v], c)));
      graph_err = std::max(graph_err, testutil::max_abs_diff(a.graph.data(), b.graph.data()));
      // visible-subset encoder
      const auto plan = sample_mask(9, 0.5, rng);
      MaskPlan pplan;
      for (auto v : plan.visible) pplan.visible.push_back(perm[v]);
      for (auto v : plan.masked) pplan.masked.push_back(perm[v]);
      std::sort(pplan.visible.begin(), pplan.visible.end());
      std::sort(pplan.masked.begin(), pplan.masked.end());
      const Tensor xa = encode(params, g, compute_encodings(g, cfg.max_spd), plan);
      const Tensor xb = encode(params, pg, compute_encodings(pg, cfg.max_spd), pplan);
      for (std::size_t r = 0; r < plan.visible.size(); ++r) {
        const auto target = std::lower_bound(pplan.visible.begin(), pplan.visible.end(), perm[plan.visible[r]]) -
                            pplan.visible.begin();
        for (std::size_t c = 0; c < cfg.hidden; ++c)
          node_err = std::max(node_err, std::abs(xa.at(r, c) - xb.at(static_cast<std::size_t>(target), c)));
      }
    }
    o.require(node_err <= 1e-10, "encode/embed not permutation equivariant (" + fmt(node_err, 3) + ")");
    o.require(graph_err <= 1e-10, "pooled embedding not permutation invariant (" + fmt(graph_err, 3) + ")");
  }
  // mask count law
  {
    std::size_t bad = 0;
    for (std::size_t n = 2; n <= 50; ++n)
      for (int tenth = 1; tenth <= 9; ++tenth) {
        // round half up of n * tenth / 10 in integers
        const std::size_t expect = std::clamp<std::size_t>((n * static_cast<std::size_t>(tenth) * 2 + 10) / 20, 1, n - 1);
        const auto plan = sample_mask(n, tenth / 10.0, rng);
        bad += plan.masked.size() != expect || masked_count(n, tenth / 10.0) != expect;
      }
    o.require(bad == 0, std::to_string(bad) + " mask counts off the law");
  }
  // schedule endpoints with the default configuration
  {
    TrainConfig t;
    t.total_steps = 100000;
    o.require(std::abs(lr_at(t.warmup_steps, t) - 1e-4) < 1e-18, "lr_at(warmup) != 1e-4");
    o.require(std::abs(lr_at(t.total_steps, t) - 1e-9) < 1e-21, "lr_at(total) != 1e-9");
  }
  // softmax row sums and shift invariance
  {
    const Tensor x = testutil::random_tensor({6, 9}, rng, 4.0);
    Tensor shifted = x.clone();
    for (auto& v : shifted.data()) v -= 250.0;
    const Tensor a = softmax_lastdim(x), b = softmax_lastdim(shifted);
    double row_err = 0.0;
    for (std::size_t r = 0; r < 6; ++r) {
      double s = 0.0;
      for (std::size_t c = 0; c < 9; ++c) s += a.at(r, c);
      row_err = std::max(row_err, std::abs(s - 1.0));
    }
    o.require(row_err < 1e-12, "softmax rows do not sum to 1");
    o.require(testutil::max_abs_diff(a.data(), b.data()) < 1e-12, "softmax not shift invariant");
  }
  // padding neutrality
  {
    std::vector<Graph> graphs;
    for (std::size_t n : {4, 9, 2, 6}) graphs.push_back(testutil::random_graph(n, 0.5, rng, 3));
    std::vector<EncodedGraph> encs;
    for (const auto& g : graphs) encs.push_back(compute_encodings(g, cfg.max_spd));
    std::vector<GraphRef> refs;
    for (std::size_t i = 0; i < graphs.size(); ++i) refs.push_back({&graphs[i], &encs[i]});
    const Tensor batch = embed_graphs_batch(params, refs, 12);
    double err = 0.0;
    for (std::size_t i = 0; i < graphs.size(); ++i) {
      const auto single = embed(params, graphs[i], encs[i]);
      for (std::size_t c = 0; c < cfg.hidden; ++c) err = std::max(err, std::abs(batch.at(i, c) - single.graph[c]));
    }
    o.require(err < 1e-12, "padding changes embeddings (" + fmt(err, 3) + ")");
  }
  if (o.pass) o.detail = "locality, mask token, equivariance, count law, schedule, softmax, padding";
  return o;
}

// ---------------------------------------------------------------------------
// 4. Overfit check

// five small graphs whose node labels follow from the degree
GraphDataset overfit_graphs() {
  GraphDataset ds;
  ds.name = "overfit";
  auto add = [&](std::size_t n, std::vector<Edge> edges) {
    Graph g;
    g.num_nodes = n;
    g.edges = std::move(edges);
    std::vector<std::int32_t> deg(n, 0);
    for (const auto& e : g.edges) ++deg[e.u], ++deg[e.v];
    for (auto d : deg) g.node_labels.push_back(std::min(d, 3));
    ds.graphs.push_back(g);
  };
  add(5, {{0, 1}, {1, 2}, {2, 3}, {3, 4}});
  add(6, {{0, 1}, {0, 2}, {0, 3}, {0, 4}, {0, 5}});
  add(6, {{0, 1}, {1, 2}, {2, 3}, {3, 4}, {4, 5}, {5, 0}});
  add(7, {{0, 1}, {1, 2}, {2, 0}, {2, 3}, {3, 4}, {4, 5}, {4, 6}});
  add(4, {{0, 1}, {1, 2}, {2, 3}, {3, 0}, {0, 2}});
  finalize_schema(ds);
  return ds;
}

// paths and stars of 3..12 nodes with a target fixed by the size
GraphDataset regression_graphs() {
  GraphDataset ds;
  ds.name = "regression";
  for (std::size_t n = 3; n <= 12; ++n)
    for (int star = 0; star < 2; ++star) {
      Graph g;
      g.num_nodes = n;
      for (std::uint32_t v = 1; v < n; ++v) g.edges.push_back(star ? Edge{0, v} : Edge{v - 1, v});
      g.node_labels.assign(n, 0);
      g.target = 0.1 * static_cast<double>(n) + (star ? 0.5 : 0.0);
      ds.graphs.push_back(g);
    }
  finalize_schema(ds);
  return ds;
}

Outcome criterion_overfit() {
  Outcome o;
  const auto ds = overfit_graphs();
  GmaeConfig model;
  model.enc_layers = 2;
  model.dec_layers = 1;
  model.hidden = 32;
  model.heads = 4;
  model.max_spd = 8;
  model.max_degree = 8;
  TrainConfig train;
  train.batch_size = 5;  // one step per epoch
  train.max_epochs = 2000;
  train.warmup_steps = 100;
  train.peak_lr = 1e-3;
  train.patience = 2000;
  train.seed = 1;
  Pretrainer trainer(ds, model, train);
  double best = std::numeric_limits<double>::infinity();
  std::uint64_t reached = 0;
  trainer.run(2000, [&](const EpochRecord& r) {
    if (r.loss < 1e-2 && reached == 0) reached = r.step;
    best = std::min(best, r.loss);
  });
  o.require(reached > 0, "pretraining loss stayed at " + fmt(best) + " after 2000 steps");

  const auto reg = regression_graphs();
  GmaeConfig rmodel = testutil::small_model();
  rmodel.hidden = 32;
  rmodel.heads = 4;
  rmodel.max_spd = 12;
  rmodel.max_degree = 12;
  const auto params = ModelParams::init(rmodel, FeatureSchema::of(reg), 2);
  FinetuneConfig ft;
  ft.epochs = 300;
  ft.lr = 1e-3;
  ft.batch_size = 20;
  const auto r = finetune(params, reg, TaskHead::for_dataset(reg, rmodel.hidden, 2), ft);
  double mae = std::numeric_limits<double>::infinity();
  for (const auto& rec : r.history) mae = std::min(mae, rec.train_metric);
  o.require(mae < 0.05, "fine-tuning train MAE " + fmt(mae));
  o.detail = "pretrain loss < 1e-2 at step " + std::to_string(reached) + ", fine-tune best train MAE " + fmt(mae);
  return o;
}

// ---------------------------------------------------------------------------
// 5. MUTAG desk scale

Outcome criterion_mutag() {
  Outcome o;
  const auto ds = testutil::mutag();
  std::size_t positives = 0;
  for (const auto& g : ds.graphs) positives += std::get<std::int64_t>(g.target) == 1;
  const double majority = static_cast<double>(std::max(positives, ds.size() - positives)) / static_cast<double>(ds.size());
  const double threshold = majority + 0.05;

  GmaeConfig model;
  model.enc_layers = 4;
  model.dec_layers = 2;
  model.hidden = 80;
  model.heads = 8;
  model.mask_ratio = 0.5;
  std::size_t passed = 0;
  std::string accs;
  for (std::uint64_t seed : {0, 1, 2}) {
    TrainConfig train;
    train.max_epochs = 100;
    train.warmup_steps = 60;  // 10% of the 600 steps of a 100-epoch run
    train.peak_lr = 1e-4;
    train.seed = seed;
    const auto [params, history] = pretrain(ds, model, train);
    const auto table = embed_dataset(ds, params);
    const auto cv = kfold_evaluate(table, {10, 5, seed});
    passed += cv.mean >= threshold;
    accs += (accs.empty() ? "" : ", ") + fmt(cv.mean) + "+-" + fmt(cv.std, 2) + " (" +
            std::to_string(history.size()) + " ep)";
  }
  o.detail = "accuracy " + accs + "; threshold " + fmt(threshold);
  o.require(passed >= 2, std::to_string(passed) + "/3 seeds reach the threshold");
  return o;
}

// ---------------------------------------------------------------------------
// 6. Memory trend

Outcome criterion_memory() {
  Outcome o;
  const auto cfg = memprofile_config();
  const auto params = ModelParams::init(cfg, memprofile_schema(), 0);
  std::string points;
  for (std::size_t n : {64, 128, 256}) {
    const Graph g = random_graph(n, n);
    const auto enc = compute_encodings(g, cfg.max_spd);
    double measured[2], estimated[2];
    int i = 0;
    for (auto mode : {MemMode::gmae, MemMode::full}) {
      measured[i] = static_cast<double>(measure_peak_floats(params, g, enc, mode, 1));
      estimated[i] = estimate_peak_floats(n, cfg, params, mode).total();
      o.require(std::abs(estimated[i] / measured[i] - 1.0) <= 0.25,
                "estimate off by more than 25% at n=" + std::to_string(n) + " " + mem_mode_name(mode));
      ++i;
    }
    const double ratio = measured[0] / measured[1];
    o.require(ratio < 0.5, "GMAE/full ratio " + fmt(ratio) + " at n=" + std::to_string(n));
    points += (points.empty() ? "" : ", ") + std::string("n=") + std::to_string(n) + " " + fmt(ratio, 3);
  }
  // (12 * 0.3^2 + 2) / 12 derived by hand
  const double limit = 3.08 / 12.0;
  const auto big_g = estimate_peak_floats(1u << 16, cfg, 0), big_f = estimate_peak_floats(1u << 16, cfg, 0, MemMode::full);
  const double asym = big_g.attention() / big_f.attention();
  o.require(std::abs(asym - limit) < 1e-3, "attention-term ratio " + fmt(asym));
  o.detail = "measured GMAE/full " + points + "; attention-term ratio " + fmt(asym, 4);
  return o;
}

// ---------------------------------------------------------------------------
// 7. Reproducibility

int run_cli(const std::string& args) {
  const std::string cmd = std::string(GMAE_CLI_PATH) + " " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

Outcome criterion_reproducibility() {
  Outcome o;
  const auto root = testutil::scratch_dir("acceptance_repro");
  {
    std::ofstream out(root / "toy.jsonl");
    write_jsonl_graphs(out, testutil::rings_and_stars(24));
  }
  const std::string data = " --format jsonl --data " + (root / "toy.jsonl").string();
  const std::string model = " --enc-layers 2 --dec-layers 1 --hidden 16 --heads 2 --epochs 5 --warmup 3 --batch-size 8";
  const std::string probe = " --folds 4 --repeats 2 --probe-epochs 30";
  const std::string ck = (root / "a_pretrain" / "checkpoint.gmae").string();
  const std::vector<std::pair<std::string, std::string>> runs = {
      {"a_pretrain", "pretrain" + data + model + " --seed 3"},
      {"a_embed", "embed" + data + " --checkpoint " + ck},
      {"a_eval", "eval --embeddings " + (root / "a_embed" / "embeddings.csv").string() + probe},
      {"a_finetune", "finetune" + data + " --checkpoint " + ck + " --epochs 4"},
      {"a_sweep_mask", "sweep-mask" + data + model + probe + " --ratios 0.25,0.75 --jobs 2"},
      {"a_sweep_decoder", "sweep-decoder" + data + model + probe + " --depths 1,2"},
      {"a_memprofile", "memprofile --sizes 16,48"},
  };
  std::size_t files = 0;
  for (const auto& [dir, args] : runs) {
    const auto first = root / dir;
    if (run_cli(args + " --out " + first.string()) != 0) {
      o.require(false, dir + " failed");
      continue;
    }
    const auto second = root / ("b" + dir.substr(1));
    if (run_cli("run --manifest " + (first / "manifest.json").string() + " --out " + second.string()) != 0) {
      o.require(false, dir + " re-run failed");
      continue;
    }
    for (const auto& entry : fs::recursive_directory_iterator(first)) {
      if (!entry.is_regular_file() || entry.path().filename() == "manifest.json") continue;
      const auto rel = fs::relative(entry.path(), first);
      ++files;
      o.require(slurp(entry.path()) == slurp(second / rel), dir + "/" + rel.string() + " differs");
    }
  }
  o.detail = std::to_string(runs.size()) + " commands, " + std::to_string(files) + " output files compared";
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"gradient suite", criterion_gradients},
      {"oracle equivalence", criterion_oracles},
      {"invariant suite", criterion_invariants},
      {"overfit check", criterion_overfit},
      {"MUTAG desk scale", criterion_mutag},
      {"memory trend", criterion_memory},
      {"reproducibility", criterion_reproducibility},
  };
  std::vector<std::size_t> selected;
  for (int i = 1; i < argc; ++i) selected.push_back(std::stoul(argv[i]));
  if (selected.empty())
    for (std::size_t i = 1; i <= criteria.size(); ++i) selected.push_back(i);

  bool all = true;
  for (auto id : selected) {
    if (id < 1 || id > criteria.size()) {
      std::cerr << "unknown criterion " << id << '\n';
      return 2;
    }
    const auto& [name, fn] = criteria[id - 1];
    const auto start = std::chrono::steady_clock::now();
    Outcome out;
    try {
      out = fn();
    } catch (const std::exception& e) {
      out = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    all = all && out.pass;
    std::cout << (out.pass ? "PASS" : "FAIL") << " criterion " << id << " (" << name << "): " << out.detail << " ["
              << fmt(secs, 3) << " s]" << std::endl;
  }
  return all ? 0 : 1;
}
