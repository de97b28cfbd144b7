#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "gmae/error.hpp"

namespace gmae {

// ---------------------------------------------------------------------------
// Live-float accounting
//
// Every tensor buffer is allocated through CountingAllocator. While a
// MemoryScope is open on a thread, allocations made on that thread are charged
// to the scope's counter (and released from it on deallocation, whichever
// thread frees them), so `peak()` is the largest number of doubles the scope's
// work held at once.

class MemoryCounter {
 public:
  void add(std::int64_t n) {
    const auto now = live_.fetch_add(n) + n;
    auto prev = peak_.load();
    while (now > prev && !peak_.compare_exchange_weak(prev, now)) {
    }
  }
  void sub(std::int64_t n) { live_.fetch_sub(n); }
  std::int64_t live() const { return live_.load(); }
  std::int64_t peak() const { return peak_.load(); }

 private:
  std::atomic<std::int64_t> live_{0};
  std::atomic<std::int64_t> peak_{0};
};

namespace detail {
inline thread_local std::shared_ptr<MemoryCounter> t_counter;
inline std::atomic<bool>& tracking_flag() {
  static std::atomic<bool> flag{true};
  return flag;
}
}  // namespace detail

inline void set_memory_tracking(bool enabled) { detail::tracking_flag().store(enabled); }
inline bool memory_tracking_enabled() { return detail::tracking_flag().load(); }

class MemoryScope {
 public:
  MemoryScope() {
    if (!memory_tracking_enabled()) throw StateError("live-float tracking is disabled");
    previous_ = detail::t_counter;
    counter_ = std::make_shared<MemoryCounter>();
    detail::t_counter = counter_;
  }
  ~MemoryScope() { detail::t_counter = previous_; }
  MemoryScope(const MemoryScope&) = delete;
  MemoryScope& operator=(const MemoryScope&) = delete;

  std::int64_t live() const { return counter_->live(); }
  std::int64_t peak() const { return counter_->peak(); }

 private:
  std::shared_ptr<MemoryCounter> counter_;
  std::shared_ptr<MemoryCounter> previous_;
};

template <typename T>
class CountingAllocator {
 public:
  using value_type = T;
  using propagate_on_container_move_assignment = std::true_type;
  using propagate_on_container_swap = std::true_type;

  CountingAllocator() noexcept : counter_(detail::t_counter) {}
  template <typename U>
  CountingAllocator(const CountingAllocator<U>& other) noexcept : counter_(other.counter()) {}

  T* allocate(std::size_t n) {
    T* p = std::allocator<T>{}.allocate(n);
    if (counter_) counter_->add(static_cast<std::int64_t>(n));
    return p;
  }
  void deallocate(T* p, std::size_t n) noexcept {
    if (counter_) counter_->sub(static_cast<std::int64_t>(n));
    std::allocator<T>{}.deallocate(p, n);
  }
  // copies are charged to whichever scope is open where the copy happens
  CountingAllocator select_on_container_copy_construction() const { return CountingAllocator(); }

  const std::shared_ptr<MemoryCounter>& counter() const noexcept { return counter_; }

  template <typename U>
  bool operator==(const CountingAllocator<U>& other) const noexcept {
    return counter_ == other.counter();
  }

 private:
  std::shared_ptr<MemoryCounter> counter_;
};

using Buffer = std::vector<double, CountingAllocator<double>>;
using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream oss;
  oss << '[';
  for (std::size_t i = 0; i < s.size(); ++i) oss << (i ? "x" : "") << s[i];
  oss << ']';
  return oss.str();
}

// ---------------------------------------------------------------------------
// Tensor

struct TensorNode {
  Shape shape;
  Buffer value;
  Buffer grad;  // empty until materialized
  bool requires_grad = false;
};

/// Dense row-major double tensor with shared ownership. Copies alias the same
/// storage; use `clone()` for a deep copy.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0) : node_(std::make_shared<TensorNode>()) {
    node_->value.assign(shape_size(shape), fill);
    node_->shape = std::move(shape);
  }
  Tensor(Shape shape, std::span<const double> values) : node_(std::make_shared<TensorNode>()) {
    if (values.size() != shape_size(shape)) {
      throw ShapeError("tensor of shape " + shape_str(shape) + " given " + std::to_string(values.size()) +
                       " values");
    }
    node_->value.assign(values.begin(), values.end());
    node_->shape = std::move(shape);
  }
  Tensor(Shape shape, std::initializer_list<double> values)
      : Tensor(std::move(shape), std::span<const double>(values.begin(), values.size())) {}

  static Tensor from_rows(std::initializer_list<std::initializer_list<double>> rows) {
    const std::size_t r = rows.size();
    const std::size_t c = r ? rows.begin()->size() : 0;
    Tensor t({r, c});
    std::size_t i = 0;
    for (const auto& row : rows) {
      if (row.size() != c) throw ShapeError("from_rows: ragged rows");
      for (double x : row) t.node_->value[i++] = x;
    }
    return t;
  }
  static Tensor scalar(double x) { return Tensor({1, 1}, {x}); }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t dim() const { return node_->shape.size(); }
  std::size_t size() const { return node_->value.size(); }
  std::size_t cols() const { return node_->shape.empty() ? 1 : node_->shape.back(); }
  std::size_t rows() const { return cols() == 0 ? 0 : size() / cols(); }

  std::span<double> data() { return node_->value; }
  std::span<const double> data() const { return node_->value; }
  double* ptr() { return node_->value.data(); }
  const double* ptr() const { return node_->value.data(); }
  double operator[](std::size_t i) const { return node_->value[i]; }
  double& operator[](std::size_t i) { return node_->value[i]; }
  double at(std::size_t r, std::size_t c) const { return node_->value[r * cols() + c]; }
  double item() const {
    if (size() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape()));
    return node_->value[0];
  }

  bool requires_grad() const { return node_->requires_grad; }
  Tensor& set_requires_grad(bool on = true) {
    node_->requires_grad = on;
    return *this;
  }
  bool has_grad() const { return !node_->grad.empty(); }
  std::span<const double> grad() const { return node_->grad; }
  /// Gradient buffer, allocated (zeroed) on first use.
  std::span<double> mutable_grad() {
    if (node_->grad.empty()) node_->grad = Buffer(size(), 0.0);
    return node_->grad;
  }
  /// Gradient as a fresh tensor; zeros when never materialized.
  Tensor grad_tensor() const {
    Tensor g(shape());
    if (has_grad()) std::copy(node_->grad.begin(), node_->grad.end(), g.node_->value.begin());
    return g;
  }
  void zero_grad() { Buffer().swap(node_->grad); }

  Tensor clone() const {
    Tensor t(shape(), data());
    t.node_->requires_grad = node_->requires_grad;
    return t;
  }
  Tensor detach() const { return Tensor(shape(), data()); }

  const std::shared_ptr<TensorNode>& node() const { return node_; }
  bool same_storage(const Tensor& other) const { return node_ == other.node_; }

 private:
  std::shared_ptr<TensorNode> node_;
};

// ---------------------------------------------------------------------------
// Tape

/// Ordered record of differentiable operations. `backward` replays the
/// recorded rules in exact reverse order.
class Tape {
 public:
  using Rule = std::function<void()>;

  void record(std::shared_ptr<TensorNode> output, Rule rule) {
    records_.push_back({std::move(output), std::move(rule)});
  }

  void backward(const Tensor& root) {
    if (!root.defined() || root.size() != 1) {
      throw ArgumentError("backward: root must be a scalar, got shape " +
                          (root.defined() ? shape_str(root.shape()) : std::string("<undefined>")));
    }
    if (!root.requires_grad()) return;
    auto& g = root.node()->grad;
    if (g.empty()) g = Buffer(1, 0.0);
    g[0] += 1.0;
    for (auto it = records_.rbegin(); it != records_.rend(); ++it) {
      if (!it->output->grad.empty()) it->rule();
    }
  }

  std::size_t size() const { return records_.size(); }
  void clear() { records_.clear(); }

 private:
  struct Record {
    std::shared_ptr<TensorNode> output;
    Rule rule;
  };
  std::vector<Record> records_;
};

namespace detail {
inline thread_local Tape* t_tape = nullptr;
}

/// Makes `tape` the recording target on this thread for the scope's lifetime.
class TapeScope {
 public:
  explicit TapeScope(Tape& tape) : previous_(detail::t_tape) { detail::t_tape = &tape; }
  ~TapeScope() { detail::t_tape = previous_; }
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* previous_;
};

/// Suspends recording (e.g. for finite-difference probes).
class NoGradScope {
 public:
  NoGradScope() : previous_(detail::t_tape) { detail::t_tape = nullptr; }
  ~NoGradScope() { detail::t_tape = previous_; }
  NoGradScope(const NoGradScope&) = delete;
  NoGradScope& operator=(const NoGradScope&) = delete;

 private:
  Tape* previous_;
};

inline Tape* current_tape() { return detail::t_tape; }

namespace detail {

inline bool any_requires_grad(std::initializer_list<const Tensor*> inputs) {
  for (const auto* t : inputs) {
    if (t && t->defined() && t->requires_grad()) return true;
  }
  return false;
}

/// Registers `rule` for `out` when recording and some input needs a gradient.
/// Returns true when recorded.
template <typename Rule>
bool record(Tensor& out, std::initializer_list<const Tensor*> inputs, Rule&& rule) {
  Tape* tape = t_tape;
  if (!tape || !any_requires_grad(inputs)) return false;
  out.set_requires_grad(true);
  tape->record(out.node(), std::forward<Rule>(rule));
  return true;
}

/// Gradient buffer of an input, or nullptr when it does not need one.
inline double* grad_ptr(const std::shared_ptr<TensorNode>& n) {
  if (!n->requires_grad) return nullptr;
  // a fresh buffer, so the allocation is charged to the scope open now
  if (n->grad.empty()) n->grad = Buffer(n->value.size(), 0.0);
  return n->grad.data();
}

}  // namespace detail

}  // namespace gmae
