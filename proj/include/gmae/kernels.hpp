#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdlib>
#include <string>
#include <thread>
#include <vector>

#include <Eigen/Core>

namespace gmae::kernels {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMatrix>;
using MutMap = Eigen::Map<RowMatrix>;

/// Worker bound for kernels, read once from GMAE_THREADS (default 1).
inline std::size_t thread_limit() {
  static const std::size_t limit = [] {
    const char* env = std::getenv("GMAE_THREADS");
    if (!env) return std::size_t{1};
    try {
      const long v = std::stol(env);
      return v > 0 ? static_cast<std::size_t>(v) : std::size_t{1};
    } catch (...) {
      return std::size_t{1};
    }
  }();
  return limit;
}

/// Runs fn(begin, end) over [0, rows) split in contiguous blocks. Each output
/// row is owned by exactly one worker, so results do not depend on timing.
template <typename Fn>
void parallel_rows(std::size_t rows, std::size_t work, Fn&& fn) {
  const std::size_t workers = std::min(thread_limit(), rows);
  if (workers <= 1 || work < (1u << 20)) {
    fn(std::size_t{0}, rows);
    return;
  }
  std::vector<std::thread> pool;
  const std::size_t chunk = (rows + workers - 1) / workers;
  for (std::size_t w = 0; w < workers; ++w) {
    const std::size_t b = w * chunk, e = std::min(rows, b + chunk);
    if (b >= e) break;
    pool.emplace_back([&fn, b, e] { fn(b, e); });
  }
  for (auto& t : pool) t.join();
}

/// c[m x n] (+)= a[m x k] * b[k x n]
inline void gemm_nn(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n,
                    bool accumulate) {
  ConstMap A(a, static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(k));
  ConstMap B(b, static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(n));
  MutMap C(c, static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(n));
  parallel_rows(m, m * k * n, [&](std::size_t r0, std::size_t r1) {
    const auto rows = static_cast<Eigen::Index>(r1 - r0);
    auto block = C.middleRows(static_cast<Eigen::Index>(r0), rows);
    if (accumulate) {
      block.noalias() += A.middleRows(static_cast<Eigen::Index>(r0), rows) * B;
    } else {
      block.noalias() = A.middleRows(static_cast<Eigen::Index>(r0), rows) * B;
    }
  });
}

/// c[m x k] += g[m x n] * b[k x n]^T
inline void gemm_nt_acc(const double* g, const double* b, double* c, std::size_t m, std::size_t n,
                        std::size_t k) {
  ConstMap G(g, static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(n));
  ConstMap B(b, static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(n));
  MutMap C(c, static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(k));
  parallel_rows(m, m * k * n, [&](std::size_t r0, std::size_t r1) {
    const auto rows = static_cast<Eigen::Index>(r1 - r0);
    C.middleRows(static_cast<Eigen::Index>(r0), rows).noalias() +=
        G.middleRows(static_cast<Eigen::Index>(r0), rows) * B.transpose();
  });
}

/// c[k x n] += a[m x k]^T * g[m x n]
inline void gemm_tn_acc(const double* a, const double* g, double* c, std::size_t m, std::size_t k,
                        std::size_t n) {
  ConstMap A(a, static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(k));
  ConstMap G(g, static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(n));
  MutMap C(c, static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(n));
  parallel_rows(k, m * k * n, [&](std::size_t r0, std::size_t r1) {
    const auto rows = static_cast<Eigen::Index>(r1 - r0);
    C.middleRows(static_cast<Eigen::Index>(r0), rows).noalias() +=
        A.middleCols(static_cast<Eigen::Index>(r0), rows).transpose() * G;
  });
}

}  // namespace gmae::kernels
