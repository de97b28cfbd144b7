#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "gmae/train.hpp"

namespace gmae {

static_assert(std::endian::native == std::endian::little, "checkpoint IO assumes a little-endian host");

inline constexpr char kCheckpointMagic[4] = {'G', 'M', 'A', 'E'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

/// A named tensor as stored on disk.
struct TensorRecord {
  std::string name;
  Shape shape;
  std::vector<double> values;
};

/// Saved training state. `head` is present for fine-tuned checkpoints.
struct Checkpoint {
  PretrainState state;
  std::optional<TaskHead> head;
  nlohmann::json extra = nlohmann::json::object();  // free-form provenance (dataset name, ...)
};

// ---------------------------------------------------------------------------
// JSON views of the configs

inline nlohmann::json to_json(const GmaeConfig& c) {
  return {{"enc_layers", c.enc_layers}, {"dec_layers", c.dec_layers}, {"hidden", c.hidden},
          {"heads", c.heads},           {"mask_ratio", c.mask_ratio}, {"max_spd", c.max_spd},
          {"max_degree", c.max_degree}, {"ffn_mult", c.ffn_mult},     {"edge_dim", c.edge_dim},
          {"dropout", c.dropout}};
}

inline GmaeConfig gmae_config_from_json(const nlohmann::json& j) {
  GmaeConfig c;
  c.enc_layers = j.at("enc_layers");
  c.dec_layers = j.at("dec_layers");
  c.hidden = j.at("hidden");
  c.heads = j.at("heads");
  c.mask_ratio = j.at("mask_ratio");
  c.max_spd = j.at("max_spd");
  c.max_degree = j.at("max_degree");
  c.ffn_mult = j.at("ffn_mult");
  c.edge_dim = j.at("edge_dim");
  c.dropout = j.at("dropout");
  return c;
}

inline nlohmann::json to_json(const TrainConfig& c) {
  return {{"peak_lr", c.peak_lr},
          {"end_lr", c.end_lr},
          {"warmup_steps", c.warmup_steps},
          {"total_steps", c.total_steps},
          {"batch_size", c.batch_size},
          {"max_epochs", c.max_epochs},
          {"patience", c.patience},
          {"seed", c.seed},
          {"weight_decay", c.weight_decay},
          {"clip_norm", c.clip_norm},
          {"min_rel_improvement", c.min_rel_improvement}};
}

inline TrainConfig train_config_from_json(const nlohmann::json& j) {
  TrainConfig c;
  c.peak_lr = j.at("peak_lr");
  c.end_lr = j.at("end_lr");
  c.warmup_steps = j.at("warmup_steps");
  c.total_steps = j.at("total_steps");
  c.batch_size = j.at("batch_size");
  c.max_epochs = j.at("max_epochs");
  c.patience = j.at("patience");
  c.seed = j.at("seed");
  c.weight_decay = j.at("weight_decay");
  c.clip_norm = j.at("clip_norm");
  c.min_rel_improvement = j.at("min_rel_improvement");
  return c;
}

inline nlohmann::json to_json(const FeatureSchema& s) {
  return {{"num_node_classes", s.num_node_classes},
          {"node_attr_dim", s.node_attr_dim},
          {"num_edge_classes", s.num_edge_classes}};
}

inline FeatureSchema schema_from_json(const nlohmann::json& j) {
  return {j.at("num_node_classes"), j.at("node_attr_dim"), j.at("num_edge_classes")};
}

namespace detail {

// JSON has no infinity; an unset best loss is stored as null.
inline nlohmann::json finite_or_null(double x) { return std::isfinite(x) ? nlohmann::json(x) : nlohmann::json(); }

inline double null_as_inf(const nlohmann::json& j) {
  return j.is_null() ? std::numeric_limits<double>::infinity() : j.get<double>();
}

class Writer {
 public:
  explicit Writer(std::vector<char>& out) : out_(out) {}
  template <typename T>
  void pod(T v) {
    const char* p = reinterpret_cast<const char*>(&v);
    out_.insert(out_.end(), p, p + sizeof(T));
  }
  void bytes(const void* data, std::size_t n) {
    const char* p = static_cast<const char*>(data);
    out_.insert(out_.end(), p, p + n);
  }
  void record(const std::string& name, const Shape& shape, std::span<const double> values) {
    pod<std::uint32_t>(static_cast<std::uint32_t>(name.size()));
    bytes(name.data(), name.size());
    pod<std::uint32_t>(static_cast<std::uint32_t>(shape.size()));
    for (auto d : shape) pod<std::uint64_t>(d);
    bytes(values.data(), values.size() * sizeof(double));
  }

 private:
  std::vector<char>& out_;
};

class Reader {
 public:
  Reader(const std::vector<char>& in, std::string path) : in_(in), path_(std::move(path)) {}
  template <typename T>
  T pod() {
    T v;
    take(&v, sizeof(T));
    return v;
  }
  void take(void* dst, std::size_t n) {
    if (n > in_.size() - pos_) throw CheckpointError(path_ + ": truncated checkpoint");
    std::memcpy(dst, in_.data() + pos_, n);
    pos_ += n;
  }
  std::string string(std::size_t n) {
    std::string s(n, '\0');
    take(s.data(), n);
    return s;
  }
  TensorRecord record() {
    TensorRecord r;
    r.name = string(pod<std::uint32_t>());
    const auto ndim = pod<std::uint32_t>();
    if (ndim > 8) throw CheckpointError(path_ + ": implausible tensor rank in record " + r.name);
    std::size_t count = 1;
    for (std::uint32_t i = 0; i < ndim; ++i) {
      r.shape.push_back(static_cast<std::size_t>(pod<std::uint64_t>()));
      count *= r.shape.back();
    }
    if (count > (in_.size() - pos_) / sizeof(double)) throw CheckpointError(path_ + ": truncated checkpoint");
    r.values.resize(count);
    take(r.values.data(), count * sizeof(double));
    return r;
  }
  bool done() const { return pos_ == in_.size(); }

 private:
  const std::vector<char>& in_;
  std::size_t pos_ = 0;
  std::string path_;
};

inline void load_into(std::span<Parameter> params, const std::vector<TensorRecord>& records, std::size_t& cursor,
                      const std::string& prefix, const std::string& path) {
  for (auto& p : params) {
    if (cursor >= records.size()) throw CheckpointError(path + ": missing tensor " + prefix + p.name);
    const auto& r = records[cursor++];
    if (r.name != prefix + p.name || r.shape != p.tensor.shape()) {
      throw CheckpointError(path + ": expected tensor " + prefix + p.name + " " + shape_str(p.tensor.shape()) +
                            ", found " + r.name + " " + shape_str(r.shape));
    }
    std::copy(r.values.begin(), r.values.end(), p.tensor.data().begin());
  }
}

}  // namespace detail

/// Serializes a checkpoint: magic, u32 version, u64 metadata length, metadata
/// JSON, u64 record count, tensor records. Little-endian throughout.
inline std::vector<char> serialize_checkpoint(const Checkpoint& ck) {
  const auto& s = ck.state;
  nlohmann::json meta;
  meta["model"] = to_json(s.params.config);
  meta["schema"] = to_json(s.params.schema);
  meta["train"] = to_json(s.train);
  meta["step"] = s.step;
  meta["epoch"] = s.epoch;
  meta["finished"] = s.finished;
  meta["rng"] = rng_state(s.rng);
  meta["optimizer"] = {{"step", s.optimizer.step},
                       {"beta1", s.optimizer.hyper.beta1},
                       {"beta2", s.optimizer.hyper.beta2},
                       {"eps", s.optimizer.hyper.eps},
                       {"weight_decay", s.optimizer.hyper.weight_decay}};
  meta["early_stop"] = {{"patience", s.stopper.patience},
                        {"min_rel_improvement", s.stopper.min_rel_improvement},
                        {"best", detail::finite_or_null(s.stopper.best)},
                        {"best_epoch", s.stopper.best_epoch},
                        {"last_epoch", s.stopper.last_epoch},
                        {"seen_any", s.stopper.seen_any}};
  auto& hist = meta["history"] = nlohmann::json::array();
  for (const auto& r : s.history) hist.push_back({r.epoch, r.step, r.loss, r.lr});
  meta["head"] = ck.head ? nlohmann::json(head_kind_name(ck.head->kind)) : nlohmann::json();
  meta["extra"] = ck.extra;
  const std::string text = meta.dump();

  std::vector<char> out;
  detail::Writer w(out);
  w.bytes(kCheckpointMagic, 4);
  w.pod<std::uint32_t>(kCheckpointVersion);
  w.pod<std::uint64_t>(text.size());
  w.bytes(text.data(), text.size());

  const auto params = s.params.parameters();
  const auto best = s.best_params.parameters();
  std::uint64_t count = params.size() * 4 + (ck.head ? 2 : 0);
  w.pod<std::uint64_t>(count);
  for (const auto& p : params) w.record("param/" + p.name, p.tensor.shape(), p.tensor.data());
  for (const auto& p : best) w.record("best/" + p.name, p.tensor.shape(), p.tensor.data());
  for (std::size_t k = 0; k < params.size(); ++k) {
    // never-updated parameters have empty moments
    const bool has = k < s.optimizer.m.size() && !s.optimizer.m[k].empty();
    const Shape shape = has ? params[k].tensor.shape() : Shape{0};
    w.record("adam_m/" + params[k].name, shape, has ? std::span<const double>(s.optimizer.m[k]) : std::span<const double>());
    w.record("adam_v/" + params[k].name, shape, has ? std::span<const double>(s.optimizer.v[k]) : std::span<const double>());
  }
  if (ck.head) {
    for (const auto& p : ck.head->parameters()) w.record(p.name, p.tensor.shape(), p.tensor.data());
  }
  return out;
}

inline void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
  const auto bytes = serialize_checkpoint(ck);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError("cannot open " + path.string() + " for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw CheckpointError("failed writing " + path.string());
}

inline Checkpoint deserialize_checkpoint(const std::vector<char>& bytes, const std::string& where) {
  detail::Reader r(bytes, where);
  char magic[4];
  r.take(magic, 4);
  if (std::memcmp(magic, kCheckpointMagic, 4) != 0) throw CheckpointError(where + ": not a checkpoint (bad magic)");
  const auto version = r.pod<std::uint32_t>();
  if (version != kCheckpointVersion) {
    throw CheckpointError(where + ": unsupported checkpoint version " + std::to_string(version) + " (expected " +
                          std::to_string(kCheckpointVersion) + ")");
  }
  const auto meta_len = r.pod<std::uint64_t>();
  if (meta_len > bytes.size()) throw CheckpointError(where + ": truncated checkpoint");
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(r.string(meta_len));
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(where + ": corrupt metadata: " + e.what());
  }

  Checkpoint ck;
  auto& s = ck.state;
  try {
    const GmaeConfig model = gmae_config_from_json(meta.at("model"));
    const FeatureSchema schema = schema_from_json(meta.at("schema"));
    s.params = ModelParams::init(model, schema, 0);
    s.best_params = ModelParams::init(model, schema, 0);
    s.train = train_config_from_json(meta.at("train"));
    s.step = meta.at("step");
    s.epoch = meta.at("epoch");
    s.finished = meta.at("finished");
    s.rng = rng_from_state(meta.at("rng").get<std::string>());
    const auto& o = meta.at("optimizer");
    s.optimizer.step = o.at("step");
    s.optimizer.hyper = {o.at("beta1"), o.at("beta2"), o.at("eps"), o.at("weight_decay")};
    const auto& es = meta.at("early_stop");
    s.stopper.patience = es.at("patience");
    s.stopper.min_rel_improvement = es.at("min_rel_improvement");
    s.stopper.best = detail::null_as_inf(es.at("best"));
    s.stopper.best_epoch = es.at("best_epoch");
    s.stopper.last_epoch = es.at("last_epoch");
    s.stopper.seen_any = es.at("seen_any");
    for (const auto& h : meta.at("history")) s.history.push_back({h.at(0), h.at(1), h.at(2), h.at(3)});
    if (!meta.at("head").is_null()) {
      const std::string kind = meta.at("head");
      if (kind != "regression" && kind != "classification") throw CheckpointError(where + ": unknown head " + kind);
      ck.head = TaskHead{kind == "regression" ? HeadKind::regression : HeadKind::classification, {}, {}};
    }
    ck.extra = meta.at("extra");
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(where + ": incomplete metadata: " + e.what());
  } catch (const ConfigError& e) {
    throw CheckpointError(where + ": invalid stored config: " + e.what());
  }

  const auto count = r.pod<std::uint64_t>();
  auto params = s.params.parameters();
  auto best = s.best_params.parameters();
  if (count != params.size() * 4 + (ck.head ? 2 : 0)) throw CheckpointError(where + ": unexpected tensor count");
  std::vector<TensorRecord> records;
  for (std::uint64_t i = 0; i < count; ++i) records.push_back(r.record());
  if (!r.done()) throw CheckpointError(where + ": trailing bytes after the last tensor");

  std::size_t cursor = 0;
  detail::load_into(params, records, cursor, "param/", where);
  detail::load_into(best, records, cursor, "best/", where);
  s.optimizer.m.resize(params.size());
  s.optimizer.v.resize(params.size());
  for (std::size_t k = 0; k < params.size(); ++k) {
    for (auto* dst : {&s.optimizer.m[k], &s.optimizer.v[k]}) {
      const auto& rec = records[cursor++];
      const bool empty = rec.shape == Shape{0};
      if (!empty && rec.shape != params[k].tensor.shape()) {
        throw CheckpointError(where + ": optimizer moment shape mismatch for " + params[k].name);
      }
      dst->assign(rec.values.begin(), rec.values.end());
    }
  }
  if (ck.head) {
    const auto& w = records[cursor++];
    const auto& b = records[cursor++];
    if (w.name != "task_head.weight" || b.name != "task_head.bias" || w.shape.size() != 2 ||
        w.shape[0] != s.params.config.hidden || b.shape != Shape{1, w.shape[1]}) {
      throw CheckpointError(where + ": malformed task head");
    }
    ck.head->weight = Tensor(w.shape, w.values);
    ck.head->bias = Tensor(b.shape, b.values);
  }
  return ck;
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
  std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize_checkpoint(bytes, path.string());
}

}  // namespace gmae
