// Command-line front end: pretraining, fine-tuning, embedding export, linear
// evaluation, the mask-ratio and decoder-depth sweeps, and memory profiling.

#include <atomic>
#include <charconv>
#include <chrono>
#include <ctime>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "gmae/gmae.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

using namespace gmae;

/// Fully resolved description of one invocation; written as manifest.json.
struct RunSpec {
  std::string command;
  std::string format = "tu";
  std::string data;
  std::string name;
  GmaeConfig model;
  TrainConfig train;
  std::string out = "out";
  std::uint64_t seed = 0;
  std::size_t jobs = 1;
  std::string checkpoint;
  std::string resume;
  std::string embeddings;
  std::size_t folds = 10;
  std::size_t repeats = 5;
  std::size_t probe_epochs = 100;
  std::vector<double> ratios;
  std::vector<std::size_t> depths;
  std::vector<std::size_t> sizes;
  std::size_t ft_epochs = 300;
  double ft_lr = 1e-3;
  std::size_t ft_batch = 32;
  bool freeze = false;
  double val_fraction = 0.1;
};

json to_json(const RunSpec& s) {
  json j;
  j["command"] = s.command;
  j["dataset"] = {{"format", s.format}, {"path", s.data}, {"name", s.name}};
  j["model"] = gmae::to_json(s.model);
  j["train"] = gmae::to_json(s.train);
  j["out"] = s.out;
  j["seed"] = s.seed;
  j["jobs"] = s.jobs;
  j["checkpoint"] = s.checkpoint;
  j["resume"] = s.resume;
  j["embeddings"] = s.embeddings;
  j["eval"] = {{"folds", s.folds}, {"repeats", s.repeats}, {"probe_epochs", s.probe_epochs}};
  j["ratios"] = s.ratios;
  j["depths"] = s.depths;
  j["sizes"] = s.sizes;
  j["finetune"] = {{"epochs", s.ft_epochs},
                   {"lr", s.ft_lr},
                   {"batch_size", s.ft_batch},
                   {"freeze_encoder", s.freeze},
                   {"val_fraction", s.val_fraction}};
  return j;
}

RunSpec spec_from_json(const json& j) {
  RunSpec s;
  try {
    s.command = j.at("command");
    s.format = j.at("dataset").at("format");
    s.data = j.at("dataset").at("path");
    s.name = j.at("dataset").at("name");
    s.model = gmae_config_from_json(j.at("model"));
    s.train = train_config_from_json(j.at("train"));
    s.out = j.at("out");
    s.seed = j.at("seed");
    s.jobs = j.at("jobs");
    s.checkpoint = j.at("checkpoint");
    s.resume = j.at("resume");
    s.embeddings = j.at("embeddings");
    s.folds = j.at("eval").at("folds");
    s.repeats = j.at("eval").at("repeats");
    s.probe_epochs = j.at("eval").at("probe_epochs");
    s.ratios = j.at("ratios").get<std::vector<double>>();
    s.depths = j.at("depths").get<std::vector<std::size_t>>();
    s.sizes = j.at("sizes").get<std::vector<std::size_t>>();
    const auto& f = j.at("finetune");
    s.ft_epochs = f.at("epochs");
    s.ft_lr = f.at("lr");
    s.ft_batch = f.at("batch_size");
    s.freeze = f.at("freeze_encoder");
    s.val_fraction = f.at("val_fraction");
  } catch (const json::exception& e) {
    throw ArgumentError(std::string("malformed manifest: ") + e.what());
  }
  return s;
}

std::string shortest(double x) {
  char buf[32];
  const auto r = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, r.ptr);
}

std::ofstream open_csv(const fs::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write " + path.string());
  return out;
}

void write_manifest(const RunSpec& s) {
  fs::create_directories(s.out);
  json j = to_json(s);
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  char stamp[32];
  std::strftime(stamp, sizeof stamp, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&now));
  j["created"] = stamp;
  std::ofstream out(fs::path(s.out) / "manifest.json", std::ios::binary);
  out << j.dump(2) << '\n';
}

void check_spec(const RunSpec& s) {
  const auto& m = s.model;
  if (!(m.mask_ratio > 0.0 && m.mask_ratio < 1.0)) {
    throw ArgumentError("--mask-ratio must lie in (0, 1), got " + shortest(m.mask_ratio));
  }
  if (m.enc_layers < 1) throw ArgumentError("--enc-layers must be >= 1");
  if (m.dec_layers < 1) throw ArgumentError("--dec-layers must be >= 1");
  if (m.heads < 1 || m.hidden % m.heads != 0) throw ArgumentError("--hidden must be a multiple of --heads");
  if (s.train.batch_size < 1) throw ArgumentError("--batch-size must be >= 1");
  if (s.jobs < 1) throw ArgumentError("--jobs must be >= 1");
  for (double r : s.ratios)
    if (!(r > 0.0 && r < 1.0)) throw ArgumentError("--ratios entries must lie in (0, 1), got " + shortest(r));
  for (auto d : s.depths)
    if (d < 1) throw ArgumentError("--depths entries must be >= 1");
  for (auto n : s.sizes)
    if (n < 2) throw ArgumentError("--sizes entries must be >= 2");
  m.validate();
}

GraphDataset load(const RunSpec& s) {
  if (s.data.empty()) throw ArgumentError("--data is required");
  return load_dataset(s.format, s.data, s.name);
}

Checkpoint load_existing_checkpoint(const std::string& path) {
  if (path.empty()) throw ArgumentError("--checkpoint is required");
  if (!fs::exists(path)) throw ArgumentError("--checkpoint: no such file " + path);
  return load_checkpoint(path);
}

void write_history(const fs::path& path, const std::vector<EpochRecord>& history) {
  auto out = open_csv(path);
  out << "epoch,step,loss,lr\n";
  for (const auto& r : history) out << r.epoch << ',' << r.step << ',' << shortest(r.loss) << ',' << shortest(r.lr) << '\n';
}

void report_epoch(const EpochRecord& r) {
  log::info("epoch ", r.epoch, " step ", r.step, " loss ", shortest(r.loss), " lr ", shortest(r.lr));
}

/// Pretrains on `ds` with the spec's configs; returns the final state.
PretrainState pretrain_run(const GraphDataset& ds, const GmaeConfig& model, TrainConfig train) {
  Pretrainer trainer(ds, model, train);
  trainer.run(std::numeric_limits<std::size_t>::max(), report_epoch);
  return trainer.state();
}

CvResult evaluate_table(const EmbeddingTable& table, const RunSpec& s, std::uint64_t seed) {
  ProbeConfig probe;
  probe.epochs = s.probe_epochs;
  return kfold_evaluate(table, KfoldConfig{s.folds, s.repeats, seed}, probe);
}

// ---------------------------------------------------------------------------
// Commands

void cmd_pretrain(const RunSpec& s) {
  const GraphDataset ds = load(s);
  PretrainState state;
  if (!s.resume.empty()) {
    Checkpoint ck = load_existing_checkpoint(s.resume);
    Pretrainer trainer(ds, std::move(ck.state));
    trainer.run(std::numeric_limits<std::size_t>::max(), report_epoch);
    state = trainer.state();
  } else {
    state = pretrain_run(ds, s.model, s.train);
  }
  Checkpoint ck{state, std::nullopt, {{"dataset", ds.name}}};
  save_checkpoint(fs::path(s.out) / "checkpoint.gmae", ck);
  write_history(fs::path(s.out) / "history.csv", state.history);
  std::cout << "pretrained " << state.history.size() << " epochs, best loss " << shortest(state.stopper.best) << '\n';
}

void cmd_finetune(const RunSpec& s) {
  Checkpoint ck = load_existing_checkpoint(s.checkpoint);
  const GraphDataset ds = load(s);
  if (!(s.val_fraction >= 0.0 && s.val_fraction < 1.0)) throw ArgumentError("--val-fraction must lie in [0, 1)");
  std::vector<std::size_t> order(ds.size());
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(s.seed);
  std::shuffle(order.begin(), order.end(), rng);
  const auto n_val = static_cast<std::size_t>(std::floor(s.val_fraction * static_cast<double>(ds.size())));
  std::vector<std::size_t> val_ids(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_val));
  std::vector<std::size_t> train_ids(order.begin() + static_cast<std::ptrdiff_t>(n_val), order.end());
  std::sort(val_ids.begin(), val_ids.end());
  std::sort(train_ids.begin(), train_ids.end());
  const GraphDataset train = subset(ds, train_ids);
  const GraphDataset val = subset(ds, val_ids);

  FinetuneConfig cfg;
  cfg.epochs = s.ft_epochs;
  cfg.lr = s.ft_lr;
  cfg.batch_size = s.ft_batch;
  cfg.freeze_encoder = s.freeze;
  cfg.seed = s.seed;
  const ModelParams& params = ck.state.best_params;
  TaskHead head = TaskHead::for_dataset(ds, params.config.hidden, s.seed);
  auto result = finetune(params, train, head, cfg, n_val ? &val : nullptr);

  const bool reg = head.kind == HeadKind::regression;
  auto out = open_csv(fs::path(s.out) / "metrics.csv");
  out << (reg ? "epoch,train_loss,train_mae,val_mae\n" : "epoch,train_loss,train_accuracy,val_accuracy\n");
  for (const auto& r : result.history) {
    out << r.epoch << ',' << shortest(r.train_loss) << ',' << shortest(r.train_metric) << ','
        << (std::isnan(r.val_metric) ? std::string() : shortest(r.val_metric)) << '\n';
    log::info("finetune epoch ", r.epoch, " loss ", shortest(r.train_loss));
  }
  Checkpoint tuned = ck;
  tuned.state.params = result.params;
  tuned.state.best_params = result.params;
  tuned.head = result.head;
  tuned.extra["finetuned_on"] = ds.name;
  save_checkpoint(fs::path(s.out) / "finetuned.gmae", tuned);
  const auto& last = result.history.back();
  std::cout << (reg ? "train_mae," : "train_accuracy,") << shortest(last.train_metric);
  if (!std::isnan(last.val_metric)) std::cout << (reg ? ",val_mae," : ",val_accuracy,") << shortest(last.val_metric);
  std::cout << '\n';
}

void cmd_embed(const RunSpec& s) {
  const Checkpoint ck = load_existing_checkpoint(s.checkpoint);
  const GraphDataset ds = load(s);
  EmbeddingTable table = embed_dataset(ds, ck.state.best_params);
  table.checkpoint = s.checkpoint;
  write_embeddings_csv(fs::path(s.out) / "embeddings.csv", table);
  std::cout << "embedded " << table.size() << " graphs\n";
}

void cmd_eval(const RunSpec& s) {
  if (s.embeddings.empty()) throw ArgumentError("--embeddings is required");
  if (!fs::exists(s.embeddings)) throw ArgumentError("--embeddings: no such file " + s.embeddings);
  EmbeddingTable table = read_embeddings_csv(s.embeddings);
  if (!s.data.empty()) {
    // labels from the dataset take precedence over the CSV's target column
    const GraphDataset ds = load(s);
    if (ds.size() != table.size()) {
      throw IntegrityError(s.embeddings, 0,
                           std::to_string(table.size()) + " embedding rows for " + std::to_string(ds.size()) + " graphs");
    }
    const auto labels = ds.class_labels();
    table.targets.assign(labels.begin(), labels.end());
    table.kind = TargetKind::classification;
  }
  if (table.kind != TargetKind::classification) throw ArgumentError("eval needs class labels");
  const CvResult r = evaluate_table(table, s, s.seed);
  auto out = open_csv(fs::path(s.out) / "eval.csv");
  out << "metric,mean,std\naccuracy," << shortest(r.mean) << ',' << shortest(r.std) << '\n';
  std::cout << "accuracy," << shortest(r.mean) << ',' << shortest(r.std) << '\n';
}

/// Runs `count` independent jobs on up to `jobs` threads; rethrows the first
/// failure in job order.
void parallel_points(std::size_t count, std::size_t jobs, const std::function<void(std::size_t)>& fn) {
  std::vector<std::exception_ptr> errors(count);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < count; i = next++) {
      try {
        fn(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  std::vector<std::thread> pool;
  for (std::size_t t = 1; t < std::min(jobs, count); ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

struct SweepPoint {
  double mean = 0.0, std = 0.0;
};

/// One full pretrain + linear evaluation with overridden model settings.
SweepPoint sweep_point(const GraphDataset& ds, const RunSpec& s, const GmaeConfig& model, std::uint64_t seed,
                       const fs::path& dir) {
  TrainConfig train = s.train;
  train.seed = seed;
  const PretrainState state = pretrain_run(ds, model, train);
  fs::create_directories(dir);
  write_history(dir / "history.csv", state.history);
  const EmbeddingTable table = embed_dataset(ds, state.best_params);
  write_embeddings_csv(dir / "embeddings.csv", table);
  const CvResult r = evaluate_table(table, s, seed);
  return {r.mean, r.std};
}

void cmd_sweep_mask(const RunSpec& s) {
  const GraphDataset ds = load(s);
  std::vector<double> ratios = s.ratios;
  std::sort(ratios.begin(), ratios.end());
  std::vector<SweepPoint> points(ratios.size());
  parallel_points(ratios.size(), s.jobs, [&](std::size_t i) {
    GmaeConfig m = s.model;
    m.mask_ratio = ratios[i];
    points[i] = sweep_point(ds, s, m, s.seed + i, fs::path(s.out) / ("ratio_" + shortest(ratios[i])));
  });
  auto out = open_csv(fs::path(s.out) / "sweep_mask.csv");
  out << "ratio,metric_mean,metric_std\n";
  for (std::size_t i = 0; i < ratios.size(); ++i) {
    out << shortest(ratios[i]) << ',' << shortest(points[i].mean) << ',' << shortest(points[i].std) << '\n';
  }
}

void cmd_sweep_decoder(const RunSpec& s) {
  const GraphDataset ds = load(s);
  std::vector<std::size_t> depths = s.depths;
  std::sort(depths.begin(), depths.end());
  std::vector<SweepPoint> points(depths.size());
  parallel_points(depths.size(), s.jobs, [&](std::size_t i) {
    GmaeConfig m = s.model;
    m.dec_layers = depths[i];
    points[i] = sweep_point(ds, s, m, s.seed + i, fs::path(s.out) / ("depth_" + std::to_string(depths[i])));
  });
  auto out = open_csv(fs::path(s.out) / "sweep_decoder.csv");
  out << "depth,metric_mean,metric_std\n";
  for (std::size_t i = 0; i < depths.size(); ++i) {
    out << depths[i] << ',' << shortest(points[i].mean) << ',' << shortest(points[i].std) << '\n';
  }
}

void cmd_memprofile(const RunSpec& s) {
  const ModelParams params = ModelParams::init(s.model, memprofile_schema(), s.seed);
  std::vector<std::size_t> sizes = s.sizes;
  std::sort(sizes.begin(), sizes.end());
  auto out = open_csv(fs::path(s.out) / "memprofile.csv");
  out << "n,mode,estimated_floats,measured_floats\n";
  for (auto n : sizes) {
    const Graph g = random_graph(n, s.seed + n, memprofile_schema().num_node_classes,
                                 memprofile_schema().num_edge_classes);
    const EncodedGraph enc = compute_encodings(g, s.model.max_spd);
    for (MemMode mode : {MemMode::gmae, MemMode::full}) {
      const auto est = estimate_peak_floats(n, s.model, params, mode);
      const auto measured = measure_peak_floats(params, g, enc, mode, s.seed);
      out << n << ',' << mem_mode_name(mode) << ',' << static_cast<std::uint64_t>(est.total()) << ',' << measured
          << '\n';
      log::info("memprofile n=", n, " ", mem_mode_name(mode), " measured ", measured);
    }
  }
}

void execute(const RunSpec& s) {
  check_spec(s);
  write_manifest(s);
  if (s.command == "pretrain") return cmd_pretrain(s);
  if (s.command == "finetune") return cmd_finetune(s);
  if (s.command == "embed") return cmd_embed(s);
  if (s.command == "eval") return cmd_eval(s);
  if (s.command == "sweep-mask") return cmd_sweep_mask(s);
  if (s.command == "sweep-decoder") return cmd_sweep_decoder(s);
  if (s.command == "memprofile") return cmd_memprofile(s);
  throw ArgumentError("unknown command '" + s.command + "'");
}

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const ArgumentError*>(&e)) return 2;
  if (dynamic_cast<const DataError*>(&e)) return 3;
  return 4;
}

// ---------------------------------------------------------------------------
// Flag wiring

void add_data_options(CLI::App* sub, RunSpec& s) {
  sub->add_option("--format", s.format, "Dataset format")->check(CLI::IsMember({"tu", "jsonl"}))->capture_default_str();
  sub->add_option("--data", s.data, "Dataset directory (tu) or file (jsonl)");
  sub->add_option("--name", s.name, "Dataset name (tu file prefix)");
}

void add_model_options(CLI::App* sub, RunSpec& s) {
  sub->add_option("--mask-ratio", s.model.mask_ratio, "Fraction of nodes hidden from the encoder")->capture_default_str();
  sub->add_option("--enc-layers", s.model.enc_layers, "Encoder depth")->capture_default_str();
  sub->add_option("--dec-layers", s.model.dec_layers, "Decoder depth")->capture_default_str();
  sub->add_option("--hidden", s.model.hidden, "Hidden width")->capture_default_str();
  sub->add_option("--heads", s.model.heads, "Attention heads")->capture_default_str();
  sub->add_option("--max-spd", s.model.max_spd, "Largest distinguished shortest-path distance")->capture_default_str();
  sub->add_option("--dropout", s.model.dropout, "Dropout rate")->capture_default_str();
}

void add_train_options(CLI::App* sub, RunSpec& s) {
  sub->add_option("--peak-lr", s.train.peak_lr, "Peak learning rate")->capture_default_str();
  sub->add_option("--end-lr", s.train.end_lr, "Final learning rate")->capture_default_str();
  sub->add_option("--warmup", s.train.warmup_steps, "Warmup steps")->capture_default_str();
  sub->add_option("--epochs", s.train.max_epochs, "Maximum pretraining epochs")->capture_default_str();
  sub->add_option("--patience", s.train.patience, "Early-stopping patience in epochs")->capture_default_str();
  sub->add_option("--batch-size", s.train.batch_size, "Graphs per batch")->capture_default_str();
}

void add_eval_options(CLI::App* sub, RunSpec& s) {
  sub->add_option("--folds", s.folds, "Cross-validation folds")->capture_default_str();
  sub->add_option("--repeats", s.repeats, "Cross-validation repeats")->capture_default_str();
  sub->add_option("--probe-epochs", s.probe_epochs, "SVM probe epochs")->capture_default_str();
}

void add_common(CLI::App* sub, RunSpec& s) {
  sub->add_option("--seed", s.seed, "Random seed")->capture_default_str();
  sub->add_option("--out", s.out, "Output directory")->capture_default_str();
  sub->add_option("--jobs", s.jobs, "Parallel sweep points")->capture_default_str();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Masked graph autoencoder: pretraining, evaluation and profiling"};
  app.require_subcommand(1);
  bool verbose = false;
  app.add_flag("-v,--verbose", verbose, "Log progress to standard error");

  RunSpec pre, ft, emb, ev, sm, sd, mp;
  std::string manifest_path, manifest_out;

  auto* p = app.add_subcommand("pretrain", "Masked-autoencoder pretraining");
  add_data_options(p, pre);
  add_model_options(p, pre);
  add_train_options(p, pre);
  add_common(p, pre);
  p->add_option("--resume", pre.resume, "Continue from a pretraining checkpoint");

  auto* f = app.add_subcommand("finetune", "Fine-tune the encoder with a task head");
  add_data_options(f, ft);
  add_common(f, ft);
  f->add_option("--checkpoint", ft.checkpoint, "Pretrained checkpoint");
  f->add_option("--epochs", ft.ft_epochs, "Fine-tuning epochs")->capture_default_str();
  f->add_option("--lr", ft.ft_lr, "Learning rate")->capture_default_str();
  f->add_option("--batch-size", ft.ft_batch, "Graphs per batch")->capture_default_str();
  f->add_option("--val-fraction", ft.val_fraction, "Held-out fraction for validation")->capture_default_str();
  f->add_flag("--freeze-encoder", ft.freeze, "Train only the head");

  auto* e = app.add_subcommand("embed", "Export pooled graph embeddings");
  add_data_options(e, emb);
  add_common(e, emb);
  e->add_option("--checkpoint", emb.checkpoint, "Checkpoint to embed with");

  auto* v = app.add_subcommand("eval", "Linear-probe k-fold accuracy of exported embeddings");
  add_data_options(v, ev);
  add_eval_options(v, ev);
  add_common(v, ev);
  v->add_option("--embeddings", ev.embeddings, "Embeddings CSV");

  sm.ratios = {0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9};
  auto* msk = app.add_subcommand("sweep-mask", "Accuracy against mask ratio");
  add_data_options(msk, sm);
  add_model_options(msk, sm);
  add_train_options(msk, sm);
  add_eval_options(msk, sm);
  add_common(msk, sm);
  msk->add_option("--ratios", sm.ratios, "Mask ratios")->delimiter(',')->capture_default_str();

  sd.depths = {1, 2, 3, 4, 6, 8};
  auto* dec = app.add_subcommand("sweep-decoder", "Accuracy against decoder depth");
  add_data_options(dec, sd);
  add_model_options(dec, sd);
  add_train_options(dec, sd);
  add_eval_options(dec, sd);
  add_common(dec, sd);
  dec->add_option("--depths", sd.depths, "Decoder depths")->delimiter(',')->capture_default_str();

  mp.model = memprofile_config();
  mp.sizes = {32, 64, 128, 256};
  auto* mem = app.add_subcommand("memprofile", "Peak live floats of GMAE and full-graph steps");
  add_model_options(mem, mp);
  add_common(mem, mp);
  mem->add_option("--sizes", mp.sizes, "Graph sizes")->delimiter(',')->capture_default_str();

  auto* run = app.add_subcommand("run", "Re-execute a manifest");
  run->add_option("--manifest", manifest_path, "manifest.json of an earlier run")->required();
  run->add_option("--out", manifest_out, "Write outputs here instead of the manifest's directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    const int code = app.exit(err);
    return code == 0 ? 0 : 2;
  }
  if (verbose) log::set_level(log::Level::info);

  try {
    RunSpec spec;
    if (run->parsed()) {
      std::ifstream in(manifest_path);
      if (!in) throw ArgumentError("--manifest: cannot read " + manifest_path);
      json j;
      try {
        j = json::parse(in);
      } catch (const json::exception& ex) {
        throw ArgumentError(std::string("--manifest: ") + ex.what());
      }
      spec = spec_from_json(j);
      if (!manifest_out.empty()) spec.out = manifest_out;
    } else {
      const std::pair<CLI::App*, RunSpec*> table[] = {{p, &pre}, {f, &ft}, {e, &emb}, {v, &ev},
                                                      {msk, &sm}, {dec, &sd}, {mem, &mp}};
      for (const auto& [sub, s] : table) {
        if (sub->parsed()) {
          spec = *s;
          spec.command = sub->get_name();
        }
      }
      spec.train.seed = spec.seed;
    }
    execute(spec);
  } catch (const std::exception& ex) {
    std::cerr << "gmae: error: " << ex.what() << '\n';
    return exit_code_for(ex);
  }
  return 0;
}
