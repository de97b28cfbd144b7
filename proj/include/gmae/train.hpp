#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "gmae/graph.hpp"
#include "gmae/log.hpp"
#include "gmae/model.hpp"
#include "gmae/optim.hpp"

namespace gmae {

struct TrainConfig {
  double peak_lr = 1e-4;
  double end_lr = 1e-9;
  std::uint64_t warmup_steps = 40000;
  std::uint64_t total_steps = 0;  // 0: max_epochs * ceil(|dataset| / batch_size)
  std::size_t batch_size = 32;
  std::size_t max_epochs = 10000;
  std::size_t patience = 50;
  std::uint64_t seed = 0;
  double weight_decay = 0.01;
  double clip_norm = 5.0;
  double min_rel_improvement = 1e-6;

  /// Fills in total_steps for a dataset of the given size and validates.
  TrainConfig resolved(std::size_t dataset_size) const {
    TrainConfig c = *this;
    if (c.batch_size == 0) throw ConfigError("batch_size must be >= 1");
    if (c.total_steps == 0) {
      c.total_steps = static_cast<std::uint64_t>(c.max_epochs) *
                      ((std::max<std::size_t>(dataset_size, 1) + c.batch_size - 1) / c.batch_size);
    }
    c.validate();
    return c;
  }

  void validate() const {
    if (!(peak_lr > 0.0 && end_lr > 0.0 && end_lr <= peak_lr)) {
      throw ConfigError("learning rates need 0 < end_lr <= peak_lr");
    }
    if (batch_size == 0) throw ConfigError("batch_size must be >= 1");
    if (max_epochs == 0) throw ConfigError("epochs must be >= 1");
    if (warmup_steps == 0) throw ConfigError("warmup must be >= 1");
    if (warmup_steps >= total_steps) {
      throw ConfigError("warmup (" + std::to_string(warmup_steps) + " steps) must be shorter than training (" +
                        std::to_string(total_steps) + " steps); lower --warmup or raise --epochs");
    }
    if (weight_decay < 0.0 || clip_norm < 0.0) throw ConfigError("weight_decay and clip_norm must be >= 0");
  }

  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

/// Linear warmup to peak_lr, then linear decay to end_lr at total_steps.
inline double lr_at(std::uint64_t step, const TrainConfig& cfg) {
  const auto w = static_cast<double>(cfg.warmup_steps);
  if (step < cfg.warmup_steps) return cfg.peak_lr * (static_cast<double>(step) + 1.0) / w;
  if (step >= cfg.total_steps) return cfg.end_lr;
  const double frac = (static_cast<double>(step) - w) / (static_cast<double>(cfg.total_steps) - w);
  return cfg.peak_lr + (cfg.end_lr - cfg.peak_lr) * frac;
}

/// Stops once the epoch loss has not improved on the best by the relative
/// threshold for `patience` epochs.
struct EarlyStopper {
  std::size_t patience = 50;
  double min_rel_improvement = 1e-6;
  double best = std::numeric_limits<double>::infinity();
  std::size_t best_epoch = 0;
  std::size_t last_epoch = 0;
  bool seen_any = false;

  /// Records an epoch's loss; returns true when it is the new best.
  bool update(std::size_t epoch, double loss) {
    last_epoch = epoch;
    const bool better = !seen_any || loss < best - min_rel_improvement * std::abs(best);
    seen_any = true;
    if (better) {
      best = loss;
      best_epoch = epoch;
    }
    return better;
  }

  bool should_stop() const { return seen_any && last_epoch >= best_epoch + patience; }
};

struct EpochRecord {
  std::size_t epoch = 0;
  std::uint64_t step = 0;  // optimizer steps completed at the end of the epoch
  double loss = 0.0;
  double lr = 0.0;  // learning rate of the epoch's last step
  friend bool operator==(const EpochRecord&, const EpochRecord&) = default;
};

/// Graph structure shared by every pass over a dataset.
struct EncodedDataset {
  const GraphDataset* data = nullptr;
  std::vector<EncodedGraph> encodings;

  EncodedDataset() = default;
  EncodedDataset(const GraphDataset& ds, std::size_t max_spd)
      : data(&ds), encodings(compute_encodings(ds, max_spd)) {}

  std::size_t size() const { return encodings.size(); }
  GraphRef ref(std::size_t i) const { return {&data->graphs[i], &encodings[i]}; }
  std::vector<GraphRef> refs(std::span<const std::size_t> ids) const {
    std::vector<GraphRef> out;
    out.reserve(ids.size());
    for (auto i : ids) out.push_back(ref(i));
    return out;
  }
};

inline std::string rng_state(const std::mt19937_64& rng) {
  std::ostringstream os;
  os << rng;
  return os.str();
}

inline std::mt19937_64 rng_from_state(const std::string& state) {
  std::mt19937_64 rng;
  std::istringstream is(state);
  is >> rng;
  if (!is) throw CheckpointError("malformed rng state");
  return rng;
}

/// Everything needed to continue pretraining bit-exactly.
struct PretrainState {
  TrainConfig train;
  ModelParams params;
  ModelParams best_params;
  OptimizerState optimizer;
  std::mt19937_64 rng;
  std::uint64_t step = 0;
  std::size_t epoch = 0;  // next epoch to run
  EarlyStopper stopper;
  std::vector<EpochRecord> history;
  bool finished = false;
};

/// Masked-autoencoder pretraining loop: shuffled padded batches, AdamW with
/// the warmup/decay schedule, global-norm clipping, early stopping on the
/// epoch mean loss. Keeps the best-loss parameters.
class Pretrainer {
 public:
  Pretrainer(const GraphDataset& ds, const GmaeConfig& model, const TrainConfig& train)
      : data_(ds, model.max_spd) {
    select_graphs();
    state_.train = train.resolved(usable_.size());
    state_.params = ModelParams::init(model, FeatureSchema::of(ds), train.seed);
    state_.best_params = state_.params.clone();
    state_.optimizer.hyper.weight_decay = state_.train.weight_decay;
    state_.rng.seed(train.seed ^ 0x9e3779b97f4a7c15ULL);
    state_.stopper.patience = state_.train.patience;
    state_.stopper.min_rel_improvement = state_.train.min_rel_improvement;
  }

  /// Resume from a saved state.
  Pretrainer(const GraphDataset& ds, PretrainState state) : data_(ds, state.params.config.max_spd) {
    select_graphs();
    if (!(FeatureSchema::of(ds) == state.params.schema)) {
      throw ConfigError("dataset schema differs from the checkpoint's");
    }
    state_ = std::move(state);
  }

  const PretrainState& state() const { return state_; }
  PretrainState& state() { return state_; }
  const EncodedDataset& data() const { return data_; }
  bool finished() const { return state_.finished; }

  /// Runs one epoch. Returns false once training has stopped.
  bool run_epoch() {
    if (state_.finished) return false;
    auto& s = state_;
    std::vector<std::size_t> order = usable_;
    std::shuffle(order.begin(), order.end(), s.rng);

    auto params = s.params.parameters();
    double weighted = 0.0;
    double lr = 0.0;
    for (std::size_t start = 0; start < order.size(); start += s.train.batch_size) {
      const std::size_t stop = std::min(order.size(), start + s.train.batch_size);
      const auto refs = data_.refs(std::span<const std::size_t>(order.data() + start, stop - start));
      zero_grads(params);
      const StepResult r = pretrain_step(s.params, refs, s.rng);
      if (!std::isfinite(r.loss)) throw NumericError("non-finite loss at step " + std::to_string(s.step));
      clip_grad_norm(params, s.train.clip_norm);
      lr = lr_at(s.step, s.train);
      adamw_step(params, s.optimizer, lr);
      ++s.step;
      weighted += r.loss * static_cast<double>(refs.size());
    }
    zero_grads(params);
    const double loss = weighted / static_cast<double>(order.size());
    s.history.push_back({s.epoch, s.step, loss, lr});
    log::debug("epoch " + std::to_string(s.epoch) + " loss " + std::to_string(loss));
    if (s.stopper.update(s.epoch, loss)) {
      auto best = s.best_params.parameters();
      copy_parameter_values(params, best);
    }
    ++s.epoch;
    if (s.epoch >= s.train.max_epochs || s.stopper.should_stop()) s.finished = true;
    return !s.finished;
  }

  /// Runs until stopped, or at most `epochs` more epochs.
  void run(std::size_t epochs = std::numeric_limits<std::size_t>::max(),
           const std::function<void(const EpochRecord&)>& on_epoch = {}) {
    for (std::size_t e = 0; e < epochs && !state_.finished; ++e) {
      run_epoch();
      if (on_epoch) on_epoch(state_.history.back());
    }
  }

 private:
  void select_graphs() {
    for (std::size_t i = 0; i < data_.size(); ++i) {
      if (data_.data->graphs[i].num_nodes >= 2) {
        usable_.push_back(i);
      } else {
        log::warn("graph " + std::to_string(i) + " has fewer than 2 nodes; skipped for pretraining");
      }
    }
    if (usable_.empty()) throw ArgumentError("no graph with at least 2 nodes to pretrain on");
  }

  EncodedDataset data_;
  std::vector<std::size_t> usable_;
  PretrainState state_;
};

/// Convenience wrapper: trains to completion and returns the best parameters.
inline std::pair<ModelParams, std::vector<EpochRecord>> pretrain(const GraphDataset& ds, const GmaeConfig& model,
                                                                 const TrainConfig& train) {
  Pretrainer trainer(ds, model, train);
  trainer.run();
  return {trainer.state().best_params, trainer.state().history};
}

// ---------------------------------------------------------------------------
// Fine-tuning

enum class HeadKind { regression, classification };

inline const char* head_kind_name(HeadKind k) { return k == HeadKind::regression ? "regression" : "classification"; }

/// Linear projection on the pooled graph embedding.
struct TaskHead {
  HeadKind kind = HeadKind::regression;
  Tensor weight;  // d x out
  Tensor bias;    // 1 x out

  static TaskHead init(HeadKind kind, std::size_t hidden, std::size_t outputs, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    return {kind, init_normal({hidden, outputs}, rng), Tensor({1, outputs})};
  }

  /// Head matching a dataset's targets.
  static TaskHead for_dataset(const GraphDataset& ds, std::size_t hidden, std::uint64_t seed) {
    if (ds.target_kind == TargetKind::regression) return init(HeadKind::regression, hidden, 1, seed);
    if (ds.target_kind == TargetKind::classification) {
      return init(HeadKind::classification, hidden, ds.num_target_classes, seed);
    }
    throw ConfigError("dataset has no graph targets to fine-tune on");
  }

  std::size_t outputs() const { return weight.cols(); }

  ParamList parameters() const { return {{"task_head.weight", weight, true}, {"task_head.bias", bias, false}}; }
};

struct FinetuneConfig {
  std::size_t epochs = 300;
  double lr = 1e-3;
  std::size_t batch_size = 32;
  bool freeze_encoder = false;
  double weight_decay = 0.01;
  double clip_norm = 5.0;
  std::uint64_t seed = 0;
};

struct FinetuneRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double train_metric = 0.0;  // MAE or accuracy
  double val_metric = std::numeric_limits<double>::quiet_NaN();
};

struct FinetuneResult {
  ModelParams params;
  TaskHead head;
  std::vector<FinetuneRecord> history;
};

namespace detail {

inline void check_head(const TaskHead& head, const GraphDataset& ds, std::size_t hidden) {
  if (head.weight.shape() != Shape{hidden, head.outputs()}) throw ConfigError("task head width differs from the encoder");
  if (head.kind == HeadKind::regression) {
    if (ds.target_kind != TargetKind::regression || head.outputs() != 1) {
      throw ConfigError("regression head needs a dataset with scalar float targets");
    }
  } else if (ds.target_kind != TargetKind::classification || head.outputs() != ds.num_target_classes) {
    throw ConfigError("classification head needs " + std::to_string(head.outputs()) +
                      " target classes; dataset has " + std::to_string(ds.num_target_classes));
  }
}

inline Tensor head_loss(const TaskHead& head, const Tensor& out, const GraphDataset& ds,
                        std::span<const std::size_t> ids) {
  if (head.kind == HeadKind::regression) {
    Tensor target({ids.size(), 1});
    for (std::size_t i = 0; i < ids.size(); ++i) target[i] = std::get<double>(ds.graphs[ids[i]].target);
    return loss_l1(out, target);
  }
  std::vector<std::size_t> labels(ids.size());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    labels[i] = static_cast<std::size_t>(std::get<std::int64_t>(ds.graphs[ids[i]].target));
  }
  return loss_cross_entropy(out, labels);
}

}  // namespace detail

/// Head outputs for every graph of a dataset: [|ds| x outputs].
inline Tensor predict(const ModelParams& params, const TaskHead& head, const EncodedDataset& data,
                      std::size_t batch_size = 32) {
  NoGradScope no_grad;
  Tensor out({data.size(), head.outputs()});
  std::vector<std::size_t> ids;
  for (std::size_t start = 0; start < data.size(); start += batch_size) {
    ids.clear();
    for (std::size_t i = start; i < std::min(data.size(), start + batch_size); ++i) ids.push_back(i);
    const Tensor y = linear(embed_graphs_batch(params, data.refs(ids)), head.weight, head.bias);
    std::copy(y.data().begin(), y.data().end(), out.ptr() + start * head.outputs());
  }
  return out;
}

/// MAE for regression heads, accuracy for classification heads.
inline double head_metric(const TaskHead& head, const Tensor& out, const GraphDataset& ds) {
  double acc = 0.0;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    if (head.kind == HeadKind::regression) {
      acc += std::abs(out[i] - std::get<double>(ds.graphs[i].target));
    } else {
      const double* row = out.ptr() + i * head.outputs();
      const auto pred = static_cast<std::int64_t>(std::max_element(row, row + head.outputs()) - row);
      acc += pred == std::get<std::int64_t>(ds.graphs[i].target) ? 1.0 : 0.0;
    }
  }
  return acc / static_cast<double>(ds.size());
}

/// Decoder discarded; whole graphs through the encoder, mean pooling, linear
/// head. L1 loss for regression, cross-entropy for classification, constant
/// learning rate.
/// The inputs are left untouched; the result holds trained copies.
inline FinetuneResult finetune(const ModelParams& base, const GraphDataset& train, const TaskHead& init_head,
                               const FinetuneConfig& cfg = {}, const GraphDataset* val = nullptr) {
  ModelParams params = base.clone();
  TaskHead head{init_head.kind, init_head.weight.clone(), init_head.bias.clone()};
  detail::check_head(head, train, params.config.hidden);
  if (val) detail::check_head(head, *val, params.config.hidden);
  if (train.size() == 0) throw ArgumentError("fine-tuning needs at least one graph");
  if (cfg.batch_size == 0 || cfg.epochs == 0 || !(cfg.lr > 0.0)) throw ConfigError("invalid fine-tuning config");

  const EncodedDataset data(train, params.config.max_spd);
  const EncodedDataset val_data = val ? EncodedDataset(*val, params.config.max_spd) : EncodedDataset();

  ParamList trainable = head.parameters();
  if (!cfg.freeze_encoder) {
    auto enc = params.encoder_parameters();
    trainable.insert(trainable.end(), enc.begin(), enc.end());
  }
  for (auto& p : trainable) p.tensor.set_requires_grad(true);

  // frozen encoder: embeddings never change, compute them once
  Tensor frozen;
  if (cfg.freeze_encoder) {
    NoGradScope no_grad;
    std::vector<std::size_t> all(train.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    frozen = embed_graphs_batch(params, data.refs(all)).detach();
  }

  OptimizerState opt;
  opt.hyper.weight_decay = cfg.weight_decay;
  std::mt19937_64 rng(cfg.seed);
  std::vector<std::size_t> order(train.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  FinetuneResult result{params, head, {}};
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double weighted = 0.0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::span<const std::size_t> ids(order.data() + start, std::min(order.size(), start + cfg.batch_size) - start);
      zero_grads(trainable);
      Tape tape;
      Tensor loss;
      {
        TapeScope scope(tape);
        const Tensor pooled = cfg.freeze_encoder ? gather_rows(frozen, ids) : embed_graphs_batch(params, data.refs(ids));
        loss = detail::head_loss(head, linear(pooled, head.weight, head.bias), train, ids);
      }
      tape.backward(loss);
      if (!std::isfinite(loss.item())) throw NumericError("non-finite fine-tuning loss");
      clip_grad_norm(trainable, cfg.clip_norm);
      adamw_step(trainable, opt, cfg.lr);
      weighted += loss.item() * static_cast<double>(ids.size());
    }
    zero_grads(trainable);
    FinetuneRecord rec;
    rec.epoch = epoch;
    rec.train_loss = weighted / static_cast<double>(order.size());
    rec.train_metric = head_metric(head, predict(params, head, data), train);
    if (val) rec.val_metric = head_metric(head, predict(params, head, val_data), *val);
    result.history.push_back(rec);
  }
  for (auto& p : trainable) p.tensor.set_requires_grad(false);
  result.params = params;
  result.head = head;
  return result;
}

}  // namespace gmae
