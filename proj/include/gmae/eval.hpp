#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "gmae/io.hpp"
#include "gmae/train.hpp"

namespace gmae {

using Features = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Pooled graph embeddings with their aligned targets.
struct EmbeddingTable {
  Features values;             // graphs x d
  std::vector<double> targets;  // class index (as a double) or regression value
  TargetKind kind = TargetKind::none;
  std::string dataset;
  std::string checkpoint;

  std::size_t size() const { return static_cast<std::size_t>(values.rows()); }
  std::size_t dim() const { return static_cast<std::size_t>(values.cols()); }

  std::vector<std::size_t> class_labels() const {
    if (kind != TargetKind::classification) throw ArgumentError("embedding table has no class labels");
    std::vector<std::size_t> out(targets.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<std::size_t>(targets[i]);
    return out;
  }

  void validate() const {
    if (targets.size() != size()) throw IntegrityError("embeddings", 0, "target count differs from row count");
    if (!values.allFinite()) throw NumericError("embedding table has non-finite entries");
  }
};

/// Frozen encoder over every graph (no masking), mean pooling.
inline EmbeddingTable embed_dataset(const GraphDataset& ds, const ModelParams& params, std::size_t batch_size = 32) {
  const EncodedDataset data(ds, params.config.max_spd);
  EmbeddingTable table;
  table.dataset = ds.name;
  table.kind = ds.target_kind;
  table.values.resize(static_cast<Eigen::Index>(ds.size()), static_cast<Eigen::Index>(params.config.hidden));
  NoGradScope no_grad;
  std::vector<std::size_t> ids;
  for (std::size_t start = 0; start < ds.size(); start += batch_size) {
    ids.clear();
    for (std::size_t i = start; i < std::min(ds.size(), start + batch_size); ++i) ids.push_back(i);
    const Tensor pooled = embed_graphs_batch(params, data.refs(ids));
    std::copy(pooled.data().begin(), pooled.data().end(), table.values.data() + start * params.config.hidden);
  }
  for (const auto& g : ds.graphs) {
    if (const auto* c = std::get_if<std::int64_t>(&g.target)) table.targets.push_back(static_cast<double>(*c));
    else if (const auto* r = std::get_if<double>(&g.target)) table.targets.push_back(*r);
    else table.targets.push_back(std::numeric_limits<double>::quiet_NaN());
  }
  return table;
}

// ---------------------------------------------------------------------------
// CSV exchange

inline std::string format_double(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

/// Header `graph_id,target,e0..e{d-1}`; class targets are written as integers.
inline void write_embeddings_csv(std::ostream& out, const EmbeddingTable& t) {
  out << "graph_id,target";
  for (std::size_t j = 0; j < t.dim(); ++j) out << ",e" << j;
  out << '\n';
  for (std::size_t i = 0; i < t.size(); ++i) {
    out << i << ',';
    if (t.kind == TargetKind::classification) out << static_cast<std::int64_t>(t.targets[i]);
    else if (std::isfinite(t.targets[i])) out << format_double(t.targets[i]);
    for (std::size_t j = 0; j < t.dim(); ++j) out << ',' << format_double(t.values(i, j));
    out << '\n';
  }
}

inline void write_embeddings_csv(const std::filesystem::path& path, const EmbeddingTable& t) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write " + path.string());
  write_embeddings_csv(out, t);
}

/// Reads an embeddings CSV. Integer-valued targets are read as class labels,
/// anything else as regression targets; empty targets mean none.
inline EmbeddingTable read_embeddings_csv(const std::filesystem::path& path) {
  const auto file = detail::read_lines(path, true);
  if (file.lines.empty()) throw FormatError(path.string() + ": empty embeddings file");
  const auto header = detail::split_commas(file.lines[0]);
  if (header.size() < 3 || header[0] != "graph_id" || header[1] != "target") {
    throw ParseError(path.string(), 1, "expected header graph_id,target,e0,...");
  }
  for (std::size_t j = 2; j < header.size(); ++j) {
    if (header[j] != "e" + std::to_string(j - 2)) throw ParseError(path.string(), 1, "bad column name");
  }
  const std::size_t d = header.size() - 2;
  EmbeddingTable t;
  t.values.resize(static_cast<Eigen::Index>(file.lines.size() - 1), static_cast<Eigen::Index>(d));
  bool all_int = true, any_missing = false;
  for (std::size_t i = 1; i < file.lines.size(); ++i) {
    const auto cells = detail::split_commas(file.lines[i]);
    if (cells.size() != header.size()) throw ParseError(path.string(), i + 1, "wrong number of columns");
    if (detail::parse_int(cells[0], file, i) != static_cast<std::int64_t>(i - 1)) {
      throw IntegrityError(path.string(), i + 1, "graph_id out of sequence");
    }
    if (cells[1].empty()) {
      any_missing = true;
      t.targets.push_back(std::numeric_limits<double>::quiet_NaN());
    } else {
      const double y = detail::parse_double(cells[1], file, i);
      all_int = all_int && cells[1].find_first_of(".eE") == std::string_view::npos;
      t.targets.push_back(y);
    }
    for (std::size_t j = 0; j < d; ++j) t.values(i - 1, j) = detail::parse_double(cells[j + 2], file, i);
  }
  t.kind = any_missing ? TargetKind::none : (all_int ? TargetKind::classification : TargetKind::regression);
  if (t.kind == TargetKind::classification) {
    for (double y : t.targets)
      if (y < 0) throw IntegrityError(path.string(), 0, "negative class label");
  }
  return t;
}

// ---------------------------------------------------------------------------
// Linear SVM probe

struct ProbeModel {
  std::size_t classes = 0;
  Features weights;            // classes x d
  std::vector<double> bias;    // classes
  double c_reg = 1.0;
  std::vector<double> trace;   // summed objective of the kept iterates, per epoch

  std::vector<std::size_t> predict(const Features& x) const {
    const Features scores = (x * weights.transpose()).rowwise() + Eigen::Map<const Eigen::RowVectorXd>(bias.data(), bias.size());
    std::vector<std::size_t> out(static_cast<std::size_t>(x.rows()));
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      Eigen::Index best;
      scores.row(i).maxCoeff(&best);
      out[static_cast<std::size_t>(i)] = static_cast<std::size_t>(best);
    }
    return out;
  }
};

namespace detail {

/// lambda/2 |w|^2 + mean hinge(y (w.x + b)); bias unregularized.
inline double svm_objective(const Features& x, std::span<const double> y, const Eigen::RowVectorXd& w, double b,
                            double lambda) {
  double hinge = 0.0;
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    hinge += std::max(0.0, 1.0 - y[static_cast<std::size_t>(i)] * (x.row(i).dot(w) + b));
  }
  return 0.5 * lambda * w.squaredNorm() + hinge / static_cast<double>(x.rows());
}

}  // namespace detail

/// One-vs-rest soft-margin linear SVM trained by stochastic subgradient
/// descent (step 1 / (lambda t + 1), lambda = 1 / (C m)) on averaged iterates.
/// Per class the averaged iterate with the lowest objective seen at an epoch
/// boundary is kept, so the trace never increases.
inline ProbeModel train_svm_probe(const Features& x, std::span<const std::size_t> labels, double c_reg,
                                  std::size_t epochs = 100, std::uint64_t seed = 0) {
  const auto m = static_cast<std::size_t>(x.rows());
  if (labels.size() != m) throw ShapeError("train_svm_probe: label count differs from row count");
  if (m == 0) throw ArgumentError("train_svm_probe: no training rows");
  if (!(c_reg > 0.0)) throw ArgumentError("train_svm_probe: C must be positive");
  const std::size_t classes = *std::max_element(labels.begin(), labels.end()) + 1;
  std::vector<std::size_t> present(labels.begin(), labels.end());
  std::sort(present.begin(), present.end());
  if (std::unique(present.begin(), present.end()) - present.begin() < 2) {
    throw ArgumentError("train_svm_probe: need at least 2 classes, got 1");
  }

  const double lambda = 1.0 / (c_reg * static_cast<double>(m));
  ProbeModel model;
  model.classes = classes;
  model.c_reg = c_reg;
  model.weights = Features::Zero(static_cast<Eigen::Index>(classes), x.cols());
  model.bias.assign(classes, 0.0);
  std::vector<std::vector<double>> traces(classes);

  std::mt19937_64 rng(seed);
  std::vector<std::size_t> order(m);
  std::iota(order.begin(), order.end(), 0);
  std::vector<std::vector<std::size_t>> orders(epochs);
  for (auto& o : orders) {
    std::shuffle(order.begin(), order.end(), rng);
    o = order;
  }

  for (std::size_t c = 0; c < classes; ++c) {
    std::vector<double> y(m);
    for (std::size_t i = 0; i < m; ++i) y[i] = labels[i] == c ? 1.0 : -1.0;
    Eigen::RowVectorXd w = Eigen::RowVectorXd::Zero(x.cols()), w_avg = w;
    double b = 0.0, b_avg = 0.0;
    double best = detail::svm_objective(x, y, w, b, lambda);
    Eigen::RowVectorXd w_best = w;
    double b_best = b;
    std::uint64_t t = 0;
    for (std::size_t e = 0; e < epochs; ++e) {
      for (std::size_t i : orders[e]) {
        ++t;
        const double eta = 1.0 / (lambda * static_cast<double>(t) + 1.0);
        const auto xi = x.row(static_cast<Eigen::Index>(i));
        const bool violated = y[i] * (xi.dot(w) + b) < 1.0;
        w *= 1.0 - eta * lambda;
        if (violated) {
          w += eta * y[i] * xi;
          b += eta * y[i];
        }
        const double k = 1.0 / static_cast<double>(t);
        w_avg += k * (w - w_avg);
        b_avg += k * (b - b_avg);
      }
      const double obj = detail::svm_objective(x, y, w_avg, b_avg, lambda);
      if (obj < best) {
        best = obj;
        w_best = w_avg;
        b_best = b_avg;
      }
      traces[c].push_back(best);
    }
    model.weights.row(static_cast<Eigen::Index>(c)) = w_best;
    model.bias[c] = b_best;
  }
  model.trace.assign(epochs, 0.0);
  for (const auto& tr : traces)
    for (std::size_t e = 0; e < epochs; ++e) model.trace[e] += tr[e];
  return model;
}

inline double accuracy(std::span<const std::size_t> pred, std::span<const std::size_t> truth) {
  if (pred.size() != truth.size() || pred.empty()) throw ArgumentError("accuracy: length mismatch or empty");
  std::size_t hit = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) hit += pred[i] == truth[i];
  return static_cast<double>(hit) / static_cast<double>(pred.size());
}

inline double mae_metric(std::span<const double> preds, std::span<const double> targets) {
  if (preds.size() != targets.size()) {
    throw ArgumentError("mae_metric: " + std::to_string(preds.size()) + " predictions for " +
                        std::to_string(targets.size()) + " targets");
  }
  if (preds.empty()) throw ArgumentError("mae_metric: empty input");
  double s = 0.0;
  for (std::size_t i = 0; i < preds.size(); ++i) s += std::abs(preds[i] - targets[i]);
  return s / static_cast<double>(preds.size());
}

/// Per-column z-scoring fitted on training rows; constant columns keep scale 1.
struct Standardizer {
  Eigen::RowVectorXd mean, scale;

  static Standardizer fit(const Features& x) {
    Standardizer s;
    s.mean = x.colwise().mean();
    s.scale = ((x.rowwise() - s.mean).array().square().colwise().sum() / static_cast<double>(x.rows())).sqrt();
    for (Eigen::Index j = 0; j < s.scale.size(); ++j)
      if (!(s.scale[j] > 1e-12)) s.scale[j] = 1.0;
    return s;
  }
  Features apply(const Features& x) const {
    return ((x.rowwise() - mean).array().rowwise() / scale.array()).matrix();
  }
};

inline Features take_rows(const Features& x, std::span<const std::size_t> ids) {
  Features out(static_cast<Eigen::Index>(ids.size()), x.cols());
  for (std::size_t i = 0; i < ids.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = x.row(static_cast<Eigen::Index>(ids[i]));
  return out;
}

template <typename T>
std::vector<T> take(std::span<const T> v, std::span<const std::size_t> ids) {
  std::vector<T> out(ids.size());
  for (std::size_t i = 0; i < ids.size(); ++i) out[i] = v[ids[i]];
  return out;
}

struct ProbeConfig {
  std::vector<double> c_grid{0.01, 0.1, 1.0, 10.0};
  std::size_t inner_folds = 3;
  std::size_t epochs = 100;
};

/// Standardize on the training rows, pick C by inner k-fold accuracy, refit
/// on all training rows, predict the test rows.
struct SvmProbeTrainer {
  ProbeConfig config;

  std::vector<std::size_t> operator()(const Features& x_train, std::span<const std::size_t> y_train,
                                      const Features& x_test, std::uint64_t seed) const {
    const Standardizer z = Standardizer::fit(x_train);
    const Features xs = z.apply(x_train);
    double best_c = config.c_grid.front();
    if (config.c_grid.size() > 1 && x_train.rows() >= static_cast<Eigen::Index>(config.inner_folds)) {
      const auto inner = split_kfold(static_cast<std::size_t>(x_train.rows()), config.inner_folds, seed + 7919);
      double best_acc = -1.0;
      for (double c : config.c_grid) {
        double acc = 0.0;
        for (const auto& f : inner) {
          const auto ytr = take(y_train, f.train);
          const auto yte = take(y_train, f.test);
          if (std::adjacent_find(ytr.begin(), ytr.end(), std::not_equal_to<>()) == ytr.end()) {
            // single class in the inner split: the constant predictor
            acc += accuracy(std::vector<std::size_t>(yte.size(), ytr.front()), yte);
            continue;
          }
          const auto probe = train_svm_probe(take_rows(xs, f.train), ytr, c, config.epochs, seed);
          acc += accuracy(probe.predict(take_rows(xs, f.test)), yte);
        }
        if (acc > best_acc + 1e-12) {
          best_acc = acc;
          best_c = c;
        }
      }
    }
    const auto probe = train_svm_probe(xs, y_train, best_c, config.epochs, seed);
    return probe.predict(z.apply(x_test));
  }
};

/// Predicts the most frequent training label (smallest label on ties).
struct MajorityTrainer {
  std::vector<std::size_t> operator()(const Features&, std::span<const std::size_t> y_train, const Features& x_test,
                                      std::uint64_t) const {
    std::vector<std::size_t> counts;
    for (auto y : y_train) {
      if (y >= counts.size()) counts.resize(y + 1, 0);
      ++counts[y];
    }
    const auto label = static_cast<std::size_t>(std::max_element(counts.begin(), counts.end()) - counts.begin());
    return std::vector<std::size_t>(static_cast<std::size_t>(x_test.rows()), label);
  }
};

struct KfoldConfig {
  std::size_t folds = 10;
  std::size_t repeats = 5;
  std::uint64_t seed = 0;
};

struct CvResult {
  double mean = 0.0;
  double std = 0.0;  // population standard deviation over repeats
  std::vector<double> per_repeat;
};

/// Repeated k-fold accuracy. Repeat r splits with seed + r; each repeat's
/// accuracy is the mean over its folds.
template <typename Trainer>
CvResult kfold_evaluate(const EmbeddingTable& emb, const KfoldConfig& cfg, const Trainer& trainer) {
  emb.validate();
  const auto labels = emb.class_labels();
  if (cfg.repeats == 0) throw ArgumentError("repeats must be >= 1");
  CvResult out;
  for (std::size_t r = 0; r < cfg.repeats; ++r) {
    const auto folds = split_kfold(emb.size(), cfg.folds, cfg.seed + r);
    double acc = 0.0;
    for (std::size_t f = 0; f < folds.size(); ++f) {
      const auto& fold = folds[f];
      const auto pred = trainer(take_rows(emb.values, fold.train), take(std::span<const std::size_t>(labels), fold.train),
                                take_rows(emb.values, fold.test), cfg.seed + r * 1000 + f);
      acc += accuracy(pred, take(std::span<const std::size_t>(labels), fold.test));
    }
    out.per_repeat.push_back(acc / static_cast<double>(folds.size()));
  }
  const double n = static_cast<double>(out.per_repeat.size());
  out.mean = std::accumulate(out.per_repeat.begin(), out.per_repeat.end(), 0.0) / n;
  double var = 0.0;
  for (double a : out.per_repeat) var += (a - out.mean) * (a - out.mean);
  out.std = std::sqrt(var / n);
  return out;
}

inline CvResult kfold_evaluate(const EmbeddingTable& emb, const KfoldConfig& cfg = {}, const ProbeConfig& probe = {}) {
  return kfold_evaluate(emb, cfg, SvmProbeTrainer{probe});
}

}  // namespace gmae
