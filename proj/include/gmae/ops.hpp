#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "gmae/kernels.hpp"
#include "gmae/tensor.hpp"

// Differentiable operations. Every op computes its value eagerly and, when a
// tape is recording and some input requires a gradient, registers a backward
// rule that accumulates into the inputs' gradient buffers.

namespace gmae {

namespace detail {

inline void require_matrix(const Tensor& t, const char* op) {
  if (!t.defined() || t.dim() != 2) {
    throw ShapeError(std::string(op) + ": expected a matrix, got " +
                     (t.defined() ? shape_str(t.shape()) : std::string("<undefined>")));
  }
}

inline void require_row_vector(const Tensor& t, std::size_t cols, const char* op) {
  if (!t.defined() || t.size() != cols || t.cols() != cols) {
    throw ShapeError(std::string(op) + ": expected a 1x" + std::to_string(cols) + " row, got " +
                     (t.defined() ? shape_str(t.shape()) : std::string("<undefined>")));
  }
}

inline void require_finite_or_neg_inf(double x, const char* op) {
  if (std::isnan(x) || x == std::numeric_limits<double>::infinity()) {
    throw NumericError(std::string(op) + ": non-finite input");
  }
}

}  // namespace detail

/// a[m x k] * b[k x n]
inline Tensor matmul(const Tensor& a, const Tensor& b) {
  detail::require_matrix(a, "matmul");
  detail::require_matrix(b, "matmul");
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul: shape mismatch " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  }
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  Tensor out({m, n});
  kernels::gemm_nn(a.ptr(), b.ptr(), out.ptr(), m, k, n, false);
  detail::record(out, {&a, &b}, [an = a.node(), bn = b.node(), on = out.node(), m, k, n] {
    const double* g = on->grad.data();
    if (double* ga = detail::grad_ptr(an)) kernels::gemm_nt_acc(g, bn->value.data(), ga, m, n, k);
    if (double* gb = detail::grad_ptr(bn)) kernels::gemm_tn_acc(an->value.data(), g, gb, m, k, n);
  });
  return out;
}

/// x * w + b, with b a 1 x n row (optional).
inline Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b = {}) {
  detail::require_matrix(x, "linear");
  detail::require_matrix(w, "linear");
  if (x.cols() != w.rows()) {
    throw ShapeError("linear: shape mismatch " + shape_str(x.shape()) + " x " + shape_str(w.shape()));
  }
  const std::size_t m = x.rows(), k = x.cols(), n = w.cols();
  if (b.defined()) detail::require_row_vector(b, n, "linear");
  Tensor out({m, n});
  if (b.defined()) {
    for (std::size_t i = 0; i < m; ++i) std::copy(b.ptr(), b.ptr() + n, out.ptr() + i * n);
  }
  kernels::gemm_nn(x.ptr(), w.ptr(), out.ptr(), m, k, n, b.defined());
  detail::record(out, {&x, &w, &b},
                 [xn = x.node(), wn = w.node(), bn = b.defined() ? b.node() : nullptr, on = out.node(), m, k, n] {
                   const double* g = on->grad.data();
                   if (double* gx = detail::grad_ptr(xn)) kernels::gemm_nt_acc(g, wn->value.data(), gx, m, n, k);
                   if (double* gw = detail::grad_ptr(wn)) kernels::gemm_tn_acc(xn->value.data(), g, gw, m, k, n);
                   if (bn) {
                     if (double* gb = detail::grad_ptr(bn)) {
                       for (std::size_t i = 0; i < m; ++i)
                         for (std::size_t j = 0; j < n; ++j) gb[j] += g[i * n + j];
                     }
                   }
                 });
  return out;
}

/// Elementwise a + b; b may also be a 1 x cols row broadcast over a's rows.
inline Tensor add(const Tensor& a, const Tensor& b) {
  const bool same = a.shape() == b.shape();
  const bool row_bias = !same && b.size() == a.cols() && b.cols() == a.cols();
  if (!same && !row_bias) {
    throw ShapeError("add: incompatible shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
  }
  Tensor out(a.shape());
  const std::size_t n = a.size(), c = a.cols();
  for (std::size_t i = 0; i < n; ++i) out[i] = a[i] + (same ? b[i] : b[i % c]);
  detail::record(out, {&a, &b}, [an = a.node(), bn = b.node(), on = out.node(), same, n, c] {
    const double* g = on->grad.data();
    if (double* ga = detail::grad_ptr(an))
      for (std::size_t i = 0; i < n; ++i) ga[i] += g[i];
    if (double* gb = detail::grad_ptr(bn))
      for (std::size_t i = 0; i < n; ++i) gb[same ? i : i % c] += g[i];
  });
  return out;
}

inline Tensor scale(const Tensor& x, double c) {
  Tensor out(x.shape());
  const std::size_t n = x.size();
  for (std::size_t i = 0; i < n; ++i) out[i] = x[i] * c;
  detail::record(out, {&x}, [xn = x.node(), on = out.node(), n, c] {
    const double* g = on->grad.data();
    if (double* gx = detail::grad_ptr(xn))
      for (std::size_t i = 0; i < n; ++i) gx[i] += c * g[i];
  });
  return out;
}

inline Tensor relu(const Tensor& x) {
  Tensor out(x.shape());
  const std::size_t n = x.size();
  for (std::size_t i = 0; i < n; ++i) out[i] = x[i] > 0.0 ? x[i] : 0.0;
  detail::record(out, {&x}, [xn = x.node(), on = out.node(), n] {
    const double* g = on->grad.data();
    const double* xv = xn->value.data();
    if (double* gx = detail::grad_ptr(xn))
      for (std::size_t i = 0; i < n; ++i)
        if (xv[i] > 0.0) gx[i] += g[i];
  });
  return out;
}

/// Row-wise layer normalization with 1 x cols gain and bias.
inline Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-5) {
  const std::size_t r = x.rows(), c = x.cols();
  detail::require_row_vector(gain, c, "layer_norm");
  detail::require_row_vector(bias, c, "layer_norm");
  Tensor out(x.shape());
  Buffer xhat(r * c);
  Buffer rstd(r);
  for (std::size_t i = 0; i < r; ++i) {
    const double* xr = x.ptr() + i * c;
    double mean = 0.0;
    for (std::size_t j = 0; j < c; ++j) mean += xr[j];
    mean /= static_cast<double>(c);
    double var = 0.0;
    for (std::size_t j = 0; j < c; ++j) var += (xr[j] - mean) * (xr[j] - mean);
    var /= static_cast<double>(c);
    const double s = 1.0 / std::sqrt(var + eps);
    rstd[i] = s;
    for (std::size_t j = 0; j < c; ++j) {
      const double h = (xr[j] - mean) * s;
      xhat[i * c + j] = h;
      out[i * c + j] = h * gain[j] + bias[j];
    }
  }
  if (detail::any_requires_grad({&x, &gain, &bias}) && current_tape()) {
    detail::record(out, {&x, &gain, &bias},
                   [xn = x.node(), gn = gain.node(), bn = bias.node(), on = out.node(), xhat = std::move(xhat),
                    rstd = std::move(rstd), r, c] {
                     const double* g = on->grad.data();
                     const double* gv = gn->value.data();
                     double* gx = detail::grad_ptr(xn);
                     double* gg = detail::grad_ptr(gn);
                     double* gb = detail::grad_ptr(bn);
                     const double inv_c = 1.0 / static_cast<double>(c);
                     for (std::size_t i = 0; i < r; ++i) {
                       const double* gr = g + i * c;
                       const double* hr = xhat.data() + i * c;
                       if (gg)
                         for (std::size_t j = 0; j < c; ++j) gg[j] += gr[j] * hr[j];
                       if (gb)
                         for (std::size_t j = 0; j < c; ++j) gb[j] += gr[j];
                       if (gx) {
                         double mean_d = 0.0, mean_dh = 0.0;
                         for (std::size_t j = 0; j < c; ++j) {
                           const double d = gr[j] * gv[j];
                           mean_d += d;
                           mean_dh += d * hr[j];
                         }
                         mean_d *= inv_c;
                         mean_dh *= inv_c;
                         for (std::size_t j = 0; j < c; ++j) {
                           gx[i * c + j] += rstd[i] * (gr[j] * gv[j] - mean_d - hr[j] * mean_dh);
                         }
                       }
                     }
                   });
  }
  return out;
}

/// Rows of x selected by ids (repeats allowed); gradients scatter back.
inline Tensor gather_rows(const Tensor& x, std::span<const std::size_t> ids) {
  detail::require_matrix(x, "gather_rows");
  const std::size_t rows = x.rows(), c = x.cols();
  for (auto id : ids) {
    if (id >= rows) {
      throw IndexError("gather_rows: index " + std::to_string(id) + " out of range for " + std::to_string(rows) +
                       " rows");
    }
  }
  Tensor out({ids.size(), c});
  for (std::size_t i = 0; i < ids.size(); ++i) std::copy_n(x.ptr() + ids[i] * c, c, out.ptr() + i * c);
  detail::record(out, {&x}, [xn = x.node(), on = out.node(), idv = std::vector<std::size_t>(ids.begin(), ids.end()), c] {
    const double* g = on->grad.data();
    if (double* gx = detail::grad_ptr(xn)) {
      for (std::size_t i = 0; i < idv.size(); ++i)
        for (std::size_t j = 0; j < c; ++j) gx[idv[i] * c + j] += g[i * c + j];
    }
  });
  return out;
}

/// Table rows for each id.
inline Tensor embedding_lookup(const Tensor& table, std::span<const std::size_t> ids) {
  return gather_rows(table, ids);
}

/// Inverse of gather: out has `out_rows` rows, row ids[i] = x row i, others 0.
inline Tensor scatter_rows(const Tensor& x, std::span<const std::size_t> ids, std::size_t out_rows) {
  detail::require_matrix(x, "scatter_rows");
  if (ids.size() != x.rows()) {
    throw ShapeError("scatter_rows: " + std::to_string(ids.size()) + " ids for " + std::to_string(x.rows()) + " rows");
  }
  const std::size_t c = x.cols();
  std::vector<bool> used(out_rows, false);
  for (auto id : ids) {
    if (id >= out_rows) throw IndexError("scatter_rows: index " + std::to_string(id) + " out of range");
    if (used[id]) throw IndexError("scatter_rows: duplicate index " + std::to_string(id));
    used[id] = true;
  }
  Tensor out({out_rows, c});
  for (std::size_t i = 0; i < ids.size(); ++i) std::copy_n(x.ptr() + i * c, c, out.ptr() + ids[i] * c);
  detail::record(out, {&x}, [xn = x.node(), on = out.node(), idv = std::vector<std::size_t>(ids.begin(), ids.end()), c] {
    const double* g = on->grad.data();
    if (double* gx = detail::grad_ptr(xn)) {
      for (std::size_t i = 0; i < idv.size(); ++i)
        for (std::size_t j = 0; j < c; ++j) gx[i * c + j] += g[idv[i] * c + j];
    }
  });
  return out;
}

inline constexpr std::int64_t kTokenRow = -1;
inline constexpr std::int64_t kZeroRow = -2;

/// Row i of the result is x[sources[i]] when sources[i] >= 0, a copy of the
/// 1 x d `token` when sources[i] == kTokenRow, and zeros for kZeroRow.
inline Tensor compose_rows(const Tensor& x, const Tensor& token, std::span<const std::int64_t> sources) {
  detail::require_matrix(x, "compose_rows");
  const std::size_t c = x.cols();
  detail::require_row_vector(token, c, "compose_rows");
  for (auto s : sources) {
    if (s >= static_cast<std::int64_t>(x.rows()) || s < kZeroRow) {
      throw IndexError("compose_rows: source " + std::to_string(s) + " out of range");
    }
  }
  Tensor out({sources.size(), c});
  for (std::size_t i = 0; i < sources.size(); ++i) {
    if (sources[i] >= 0) {
      std::copy_n(x.ptr() + static_cast<std::size_t>(sources[i]) * c, c, out.ptr() + i * c);
    } else if (sources[i] == kTokenRow) {
      std::copy_n(token.ptr(), c, out.ptr() + i * c);
    }
  }
  detail::record(out, {&x, &token},
                 [xn = x.node(), tn = token.node(), on = out.node(),
                  src = std::vector<std::int64_t>(sources.begin(), sources.end()), c] {
                   const double* g = on->grad.data();
                   double* gx = detail::grad_ptr(xn);
                   double* gt = detail::grad_ptr(tn);
                   for (std::size_t i = 0; i < src.size(); ++i) {
                     double* dst = src[i] >= 0 ? (gx ? gx + static_cast<std::size_t>(src[i]) * c : nullptr)
                                               : (src[i] == kTokenRow ? gt : nullptr);
                     if (!dst) continue;
                     for (std::size_t j = 0; j < c; ++j) dst[j] += g[i * c + j];
                   }
                 });
  return out;
}

/// Means over consecutive row blocks of `block` rows, using only the first
/// counts[b] rows of block b. Result is counts.size() x cols.
inline Tensor segment_mean(const Tensor& x, std::size_t block, std::span<const std::size_t> counts) {
  detail::require_matrix(x, "segment_mean");
  if (block * counts.size() != x.rows()) {
    throw ShapeError("segment_mean: " + std::to_string(counts.size()) + " blocks of " + std::to_string(block) +
                     " rows do not cover " + shape_str(x.shape()));
  }
  const std::size_t c = x.cols();
  Tensor out({counts.size(), c});
  for (std::size_t b = 0; b < counts.size(); ++b) {
    if (counts[b] == 0 || counts[b] > block) throw ShapeError("segment_mean: invalid segment length");
    const double inv = 1.0 / static_cast<double>(counts[b]);
    for (std::size_t i = 0; i < counts[b]; ++i)
      for (std::size_t j = 0; j < c; ++j) out[b * c + j] += x[(b * block + i) * c + j];
    for (std::size_t j = 0; j < c; ++j) out[b * c + j] *= inv;
  }
  detail::record(out, {&x}, [xn = x.node(), on = out.node(), cnt = std::vector<std::size_t>(counts.begin(), counts.end()), block, c] {
    const double* g = on->grad.data();
    if (double* gx = detail::grad_ptr(xn)) {
      for (std::size_t b = 0; b < cnt.size(); ++b) {
        const double inv = 1.0 / static_cast<double>(cnt[b]);
        for (std::size_t i = 0; i < cnt[b]; ++i)
          for (std::size_t j = 0; j < c; ++j) gx[(b * block + i) * c + j] += g[b * c + j] * inv;
      }
    }
  });
  return out;
}

/// Column means: [n x d] -> [1 x d].
inline Tensor mean_rows(const Tensor& x) {
  detail::require_matrix(x, "mean_rows");
  const std::size_t n = x.rows();
  return segment_mean(x, n, std::vector<std::size_t>{n});
}

inline Tensor sum(const Tensor& x) {
  Tensor out({1, 1});
  double s = 0.0;
  for (double v : x.data()) s += v;
  out[0] = s;
  detail::record(out, {&x}, [xn = x.node(), on = out.node()] {
    const double g = on->grad[0];
    if (double* gx = detail::grad_ptr(xn))
      for (std::size_t i = 0; i < xn->value.size(); ++i) gx[i] += g;
  });
  return out;
}

/// sum(x * weights) with constant weights of the same size.
inline Tensor weighted_sum(const Tensor& x, std::span<const double> weights) {
  if (weights.size() != x.size()) throw ShapeError("weighted_sum: weight count mismatch");
  Tensor out({1, 1});
  double s = 0.0;
  for (std::size_t i = 0; i < weights.size(); ++i) s += x[i] * weights[i];
  out[0] = s;
  detail::record(out, {&x}, [xn = x.node(), on = out.node(), w = std::vector<double>(weights.begin(), weights.end())] {
    const double g = on->grad[0];
    if (double* gx = detail::grad_ptr(xn))
      for (std::size_t i = 0; i < w.size(); ++i) gx[i] += g * w[i];
  });
  return out;
}

/// Softmax over the last dimension with max subtraction. Entries equal to
/// -inf get zero weight; a slice that is entirely -inf maps to zeros.
inline Tensor softmax_lastdim(const Tensor& x) {
  const std::size_t n = x.cols();
  if (n == 0) throw ShapeError("softmax_lastdim: empty last dimension");
  const std::size_t rows = x.size() / n;
  Tensor out(x.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = x.ptr() + r * n;
    double* yr = out.ptr() + r * n;
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < n; ++j) {
      detail::require_finite_or_neg_inf(xr[j], "softmax_lastdim");
      mx = std::max(mx, xr[j]);
    }
    if (mx == -std::numeric_limits<double>::infinity()) continue;
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      yr[j] = std::exp(xr[j] - mx);
      z += yr[j];
    }
    for (std::size_t j = 0; j < n; ++j) yr[j] /= z;
  }
  detail::record(out, {&x}, [xn = x.node(), on = out.node(), rows, n] {
    const double* g = on->grad.data();
    const double* y = on->value.data();
    if (double* gx = detail::grad_ptr(xn)) {
      for (std::size_t r = 0; r < rows; ++r) {
        double dot = 0.0;
        for (std::size_t j = 0; j < n; ++j) dot += g[r * n + j] * y[r * n + j];
        for (std::size_t j = 0; j < n; ++j) gx[r * n + j] += y[r * n + j] * (g[r * n + j] - dot);
      }
    }
  });
  return out;
}

/// Inverted dropout; identity when rate is 0.
inline Tensor dropout(const Tensor& x, double rate, std::mt19937_64& rng) {
  if (rate <= 0.0) return x;
  if (rate >= 1.0) throw ArgumentError("dropout: rate must be < 1");
  const std::size_t n = x.size();
  Buffer mask(n);
  std::bernoulli_distribution keep(1.0 - rate);
  const double s = 1.0 / (1.0 - rate);
  Tensor out(x.shape());
  for (std::size_t i = 0; i < n; ++i) {
    mask[i] = keep(rng) ? s : 0.0;
    out[i] = x[i] * mask[i];
  }
  detail::record(out, {&x}, [xn = x.node(), on = out.node(), mask = std::move(mask), n] {
    const double* g = on->grad.data();
    if (double* gx = detail::grad_ptr(xn))
      for (std::size_t i = 0; i < n; ++i) gx[i] += g[i] * mask[i];
  });
  return out;
}

/// Multi-head scaled dot-product attention with an additive bias.
///
/// q, k, v are [B*n x d] with heads stored as contiguous column groups of
/// d/heads; bias has shape {B, heads, n, n} and is added after the 1/sqrt(d_head)
/// scaling. Only the attention probabilities are kept for the backward pass.
inline Tensor attention_core(const Tensor& q, const Tensor& k, const Tensor& v, const Tensor& bias,
                             std::size_t heads) {
  detail::require_matrix(q, "attention");
  if (k.shape() != q.shape() || v.shape() != q.shape()) {
    throw ShapeError("attention: q/k/v shapes differ: " + shape_str(q.shape()) + ", " + shape_str(k.shape()) + ", " +
                     shape_str(v.shape()));
  }
  const std::size_t d = q.cols();
  if (heads == 0 || d % heads != 0) throw ShapeError("attention: width " + std::to_string(d) + " not divisible by heads");
  if (!bias.defined() || bias.dim() != 4 || bias.shape()[1] != heads || bias.shape()[2] != bias.shape()[3] ||
      bias.shape()[0] * bias.shape()[2] != q.rows()) {
    throw ShapeError("attention: bias " + (bias.defined() ? shape_str(bias.shape()) : std::string("<undefined>")) +
                     " does not match " + std::to_string(heads) + " heads over " + std::to_string(q.rows()) + " rows");
  }
  const std::size_t batch = bias.shape()[0], n = bias.shape()[2], dh = d / heads;
  const double sc = 1.0 / std::sqrt(static_cast<double>(dh));
  constexpr double neg_inf = -std::numeric_limits<double>::infinity();

  Tensor out({batch * n, d});
  Buffer probs(batch * heads * n * n);
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t a = 0; a < heads; ++a) {
      const std::size_t col = a * dh;
      for (std::size_t i = 0; i < n; ++i) {
        double* p = probs.data() + ((b * heads + a) * n + i) * n;
        const double* brow = bias.ptr() + ((b * heads + a) * n + i) * n;
        const double* qi = q.ptr() + (b * n + i) * d + col;
        double mx = neg_inf;
        for (std::size_t j = 0; j < n; ++j) {
          const double* kj = k.ptr() + (b * n + j) * d + col;
          double s = 0.0;
          for (std::size_t c = 0; c < dh; ++c) s += qi[c] * kj[c];
          s = s * sc + brow[j];
          detail::require_finite_or_neg_inf(s, "attention");
          p[j] = s;
          mx = std::max(mx, s);
        }
        if (mx == neg_inf) {
          std::fill(p, p + n, 0.0);
          continue;
        }
        double z = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
          p[j] = std::exp(p[j] - mx);
          z += p[j];
        }
        double* oi = out.ptr() + (b * n + i) * d + col;
        for (std::size_t j = 0; j < n; ++j) {
          p[j] /= z;
          const double* vj = v.ptr() + (b * n + j) * d + col;
          for (std::size_t c = 0; c < dh; ++c) oi[c] += p[j] * vj[c];
        }
      }
    }
  }
  detail::record(out, {&q, &k, &v, &bias},
                 [qn = q.node(), kn = k.node(), vn = v.node(), bn = bias.node(), on = out.node(),
                  probs = std::move(probs), batch, heads, n, d, dh, sc] {
                   const double* g = on->grad.data();
                   const double* qv = qn->value.data();
                   const double* kv = kn->value.data();
                   const double* vv = vn->value.data();
                   double* gq = detail::grad_ptr(qn);
                   double* gk = detail::grad_ptr(kn);
                   double* gv = detail::grad_ptr(vn);
                   double* gb = detail::grad_ptr(bn);
                   std::vector<double> dp(n);
                   for (std::size_t b = 0; b < batch; ++b) {
                     for (std::size_t a = 0; a < heads; ++a) {
                       const std::size_t col = a * dh;
                       for (std::size_t i = 0; i < n; ++i) {
                         const double* p = probs.data() + ((b * heads + a) * n + i) * n;
                         const double* gi = g + (b * n + i) * d + col;
                         double dot = 0.0;
                         for (std::size_t j = 0; j < n; ++j) {
                           const double* vj = vv + (b * n + j) * d + col;
                           double s = 0.0;
                           for (std::size_t c = 0; c < dh; ++c) s += gi[c] * vj[c];
                           dp[j] = s;
                           dot += s * p[j];
                           if (gv && p[j] != 0.0) {
                             double* gvj = gv + (b * n + j) * d + col;
                             for (std::size_t c = 0; c < dh; ++c) gvj[c] += p[j] * gi[c];
                           }
                         }
                         double* gbrow = gb ? gb + ((b * heads + a) * n + i) * n : nullptr;
                         const double* qi = qv + (b * n + i) * d + col;
                         double* gqi = gq ? gq + (b * n + i) * d + col : nullptr;
                         for (std::size_t j = 0; j < n; ++j) {
                           const double ds = p[j] * (dp[j] - dot);
                           if (ds == 0.0) continue;
                           if (gbrow) gbrow[j] += ds;
                           const double* kj = kv + (b * n + j) * d + col;
                           if (gqi)
                             for (std::size_t c = 0; c < dh; ++c) gqi[c] += sc * ds * kj[c];
                           if (gk) {
                             double* gkj = gk + (b * n + j) * d + col;
                             for (std::size_t c = 0; c < dh; ++c) gkj[c] += sc * ds * qi[c];
                           }
                         }
                       }
                     }
                   }
                 });
  return out;
}

// ---------------------------------------------------------------------------
// Losses (scalar, mean-reduced unless explicit row weights are given)

namespace detail {

inline std::vector<double> uniform_weights(std::size_t rows) {
  return std::vector<double>(rows, rows ? 1.0 / static_cast<double>(rows) : 0.0);
}

template <typename ElementLoss, typename ElementGrad>
Tensor rowwise_regression_loss(const Tensor& pred, const Tensor& target, std::vector<double> w, const char* op,
                               ElementLoss&& loss, ElementGrad&& dloss) {
  if (pred.shape() != target.shape()) {
    throw ShapeError(std::string(op) + ": shapes differ " + shape_str(pred.shape()) + " vs " +
                     shape_str(target.shape()));
  }
  const std::size_t r = pred.rows(), c = pred.cols();
  if (w.size() != r) throw ShapeError(std::string(op) + ": row weight count mismatch");
  Tensor out({1, 1});
  double total = 0.0;
  for (std::size_t i = 0; i < r; ++i) {
    double row = 0.0;
    for (std::size_t j = 0; j < c; ++j) row += loss(pred[i * c + j] - target[i * c + j]);
    total += w[i] * row / static_cast<double>(c);
  }
  out[0] = total;
  record(out, {&pred, &target},
         [pn = pred.node(), tn = target.node(), on = out.node(), w = std::move(w), r, c, dloss] {
           const double g = on->grad[0];
           double* gp = grad_ptr(pn);
           double* gt = grad_ptr(tn);
           for (std::size_t i = 0; i < r; ++i) {
             const double s = g * w[i] / static_cast<double>(c);
             for (std::size_t j = 0; j < c; ++j) {
               const double d = s * dloss(pn->value[i * c + j] - tn->value[i * c + j]);
               if (gp) gp[i * c + j] += d;
               if (gt) gt[i * c + j] -= d;
             }
           }
         });
  return out;
}

}  // namespace detail

inline Tensor loss_mse(const Tensor& pred, const Tensor& target, std::vector<double> row_weights) {
  return detail::rowwise_regression_loss(
      pred, target, std::move(row_weights), "loss_mse", [](double e) { return e * e; },
      [](double e) { return 2.0 * e; });
}

inline Tensor loss_mse(const Tensor& pred, const Tensor& target) {
  return loss_mse(pred, target, detail::uniform_weights(pred.rows()));
}

/// Mean absolute error; the subgradient at zero error is 0.
inline Tensor loss_l1(const Tensor& pred, const Tensor& target, std::vector<double> row_weights) {
  return detail::rowwise_regression_loss(
      pred, target, std::move(row_weights), "loss_l1", [](double e) { return std::abs(e); },
      [](double e) { return e > 0.0 ? 1.0 : (e < 0.0 ? -1.0 : 0.0); });
}

inline Tensor loss_l1(const Tensor& pred, const Tensor& target) {
  return loss_l1(pred, target, detail::uniform_weights(pred.rows()));
}

/// sum_r w_r * (logsumexp(logits_r) - logits_r[label_r])
inline Tensor loss_cross_entropy(const Tensor& logits, std::span<const std::size_t> labels,
                                 std::vector<double> row_weights) {
  detail::require_matrix(logits, "loss_cross_entropy");
  const std::size_t m = logits.rows(), classes = logits.cols();
  if (labels.size() != m || row_weights.size() != m) {
    throw ShapeError("loss_cross_entropy: " + std::to_string(labels.size()) + " labels for " + std::to_string(m) +
                     " rows");
  }
  for (auto l : labels) {
    if (l >= classes) {
      throw IndexError("loss_cross_entropy: label " + std::to_string(l) + " >= class count " + std::to_string(classes));
    }
  }
  Buffer probs(m * classes);
  double total = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    const double* z = logits.ptr() + i * classes;
    double mx = z[0];
    for (std::size_t c = 0; c < classes; ++c) {
      if (!std::isfinite(z[c])) throw NumericError("loss_cross_entropy: non-finite logit");
      mx = std::max(mx, z[c]);
    }
    double s = 0.0;
    for (std::size_t c = 0; c < classes; ++c) s += std::exp(z[c] - mx);
    const double lse = mx + std::log(s);
    for (std::size_t c = 0; c < classes; ++c) probs[i * classes + c] = std::exp(z[c] - lse);
    total += row_weights[i] * (lse - z[labels[i]]);
  }
  Tensor out = Tensor::scalar(total);
  detail::record(out, {&logits},
                 [ln = logits.node(), on = out.node(), probs = std::move(probs),
                  lab = std::vector<std::size_t>(labels.begin(), labels.end()), w = std::move(row_weights), m, classes] {
                   const double g = on->grad[0];
                   if (double* gl = detail::grad_ptr(ln)) {
                     for (std::size_t i = 0; i < m; ++i) {
                       const double s = g * w[i];
                       for (std::size_t c = 0; c < classes; ++c) {
                         gl[i * classes + c] += s * (probs[i * classes + c] - (c == lab[i] ? 1.0 : 0.0));
                       }
                     }
                   }
                 });
  return out;
}

inline Tensor loss_cross_entropy(const Tensor& logits, std::span<const std::size_t> labels) {
  return loss_cross_entropy(logits, labels, detail::uniform_weights(logits.rows()));
}

}  // namespace gmae
