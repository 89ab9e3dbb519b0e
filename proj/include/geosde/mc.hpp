#pragma once

#include <atomic>
#include <cstdint>
#include <exception>
#include <functional>
#include <stdexcept>
#include <thread>
#include <vector>

#include "geosde/core.hpp"
#include "geosde/driver.hpp"

namespace geosde {

/// Monte Carlo estimate: componentwise mean and standard error of the mean.
struct McEstimate {
  Vec mean;
  Vec stderr_of_mean;
  long long n_paths = 0;
  std::uint64_t seed = 0;
  double t = 0.0;
  double dt = 0.0;
  Mat basis;  // tangent identification for vector-valued estimates (may be empty)

  double scalar() const { return mean[0]; }
  double scalar_stderr() const { return stderr_of_mean[0]; }
};

struct McRunOptions {
  long long n_paths = 10000;
  double dt = 1e-3;
  std::uint64_t seed = 0;
  int workers = 0;            // 0 = hardware concurrency
  bool deterministic = true;  // two-pass ordered reduction, bit-exact across worker counts
  bool antithetic = false;    // pair path 2j/2j+1 on one Brownian stream with flipped signs
  int n_sub = 4;
};

/// Driver for one Monte Carlo path index under the run options. Antithetic
/// runs share a Brownian stream between indices 2j and 2j+1 with the sign
/// flipped on the odd leg.
inline DrivingPath mc_driver(const McRunOptions& mc, int n, double horizon,
                             std::uint64_t path_index) {
  if (!mc.antithetic) return sample_driver(n, horizon, mc.dt, mc.seed, path_index);
  DrivingPath d = sample_driver(n, horizon, mc.dt, mc.seed, path_index >> 1);
  if (path_index & 1) d.negate();
  return d;
}

/// Runs `fn(path_index)` over [0, n) on a worker pool. Work is handed out in
/// chunks through an atomic counter; any slot-indexed writes the callback does
/// are race-free because each index is visited exactly once.
inline void parallel_paths(long long n, int workers,
                           const std::function<void(std::uint64_t)>& fn) {
  if (workers < 1) workers = static_cast<int>(std::thread::hardware_concurrency());
  if (workers < 1) workers = 1;
  if (static_cast<long long>(workers) > n) workers = static_cast<int>(n);
  std::exception_ptr error;
  std::atomic<bool> failed{false};
  std::atomic<long long> next{0};
  constexpr long long kChunk = 16;
  auto work = [&]() {
    try {
      for (;;) {
        const long long lo = next.fetch_add(kChunk);
        if (lo >= n || failed.load(std::memory_order_relaxed)) break;
        const long long hi = std::min(lo + kChunk, n);
        for (long long i = lo; i < hi; ++i) fn(static_cast<std::uint64_t>(i));
      }
    } catch (...) {
      if (!failed.exchange(true)) error = std::current_exception();
    }
  };
  std::vector<std::thread> pool;
  pool.reserve(static_cast<std::size_t>(workers));
  for (int t = 0; t < workers; ++t) pool.emplace_back(work);
  for (auto& th : pool) th.join();
  if (failed) std::rethrow_exception(error);
}

/// Runs `sample` over path indices [0, n_paths) on a worker pool and reduces
/// to mean and standard error.
///
/// Path indices, not workers, own the random streams, so the set of samples
/// is independent of the worker count. In deterministic mode every sample is
/// stored in its path slot and the reduction runs sequentially in path order,
/// which makes the estimate bit-identical for any worker count; the streaming
/// mode keeps only per-worker partial sums (for runs too large to store) and
/// is deterministic only for a fixed worker count.
inline McEstimate run_monte_carlo(int dim, const McRunOptions& opts,
                                  const std::function<void(std::uint64_t, Vec&)>& sample) {
  if (opts.n_paths < 2) throw std::invalid_argument("run_monte_carlo: need n_paths >= 2");
  if (dim < 1) throw std::invalid_argument("run_monte_carlo: need dim >= 1");
  const long long n = opts.n_paths;
  int workers = opts.workers > 0 ? opts.workers
                                 : static_cast<int>(std::thread::hardware_concurrency());
  if (workers < 1) workers = 1;
  if (static_cast<long long>(workers) > n) workers = static_cast<int>(n);

  McEstimate est;
  est.n_paths = n;
  est.seed = opts.seed;
  est.dt = opts.dt;

  std::exception_ptr error;
  std::atomic<bool> failed{false};

  if (opts.deterministic) {
    std::vector<double> slots(static_cast<std::size_t>(n) * static_cast<std::size_t>(dim));
    parallel_paths(n, workers, [&](std::uint64_t i) {
      thread_local Vec out;
      out.resize(dim);
      sample(i, out);
      for (int c = 0; c < dim; ++c) {
        slots[static_cast<std::size_t>(i) * dim + static_cast<std::size_t>(c)] = out[c];
      }
    });

    Vec mean = Vec::Zero(dim);
    for (long long i = 0; i < n; ++i) {
      for (int c = 0; c < dim; ++c) mean[c] += slots[static_cast<std::size_t>(i) * dim + c];
    }
    mean /= static_cast<double>(n);
    Vec var = Vec::Zero(dim);
    for (long long i = 0; i < n; ++i) {
      for (int c = 0; c < dim; ++c) {
        const double d = slots[static_cast<std::size_t>(i) * dim + c] - mean[c];
        var[c] += d * d;
      }
    }
    var /= static_cast<double>(n - 1);
    est.mean = mean;
    est.stderr_of_mean = (var / static_cast<double>(n)).cwiseSqrt();
    return est;
  }

  // Streaming reduction: per-worker partial sums merged in worker order.
  std::vector<Vec> sums(static_cast<std::size_t>(workers), Vec::Zero(dim));
  std::vector<Vec> sq_sums(static_cast<std::size_t>(workers), Vec::Zero(dim));
  std::atomic<long long> next{0};
  constexpr long long kChunk = 64;
  auto work = [&](int wid) {
    Vec out(dim);
    try {
      for (;;) {
        const long long lo = next.fetch_add(kChunk);
        if (lo >= n || failed.load(std::memory_order_relaxed)) break;
        const long long hi = std::min(lo + kChunk, n);
        for (long long i = lo; i < hi; ++i) {
          sample(static_cast<std::uint64_t>(i), out);
          sums[static_cast<std::size_t>(wid)] += out;
          sq_sums[static_cast<std::size_t>(wid)] += out.cwiseProduct(out);
        }
      }
    } catch (...) {
      if (!failed.exchange(true)) error = std::current_exception();
    }
  };
  std::vector<std::thread> pool;
  pool.reserve(static_cast<std::size_t>(workers));
  for (int t = 0; t < workers; ++t) pool.emplace_back(work, t);
  for (auto& th : pool) th.join();
  if (failed) std::rethrow_exception(error);

  Vec sum = Vec::Zero(dim), sq = Vec::Zero(dim);
  for (int t = 0; t < workers; ++t) {
    sum += sums[static_cast<std::size_t>(t)];
    sq += sq_sums[static_cast<std::size_t>(t)];
  }
  est.mean = sum / static_cast<double>(n);
  Vec var = (sq - static_cast<double>(n) * est.mean.cwiseProduct(est.mean)) /
            static_cast<double>(n - 1);
  var = var.cwiseMax(0.0);
  est.stderr_of_mean = (var / static_cast<double>(n)).cwiseSqrt();
  return est;
}

}  // namespace geosde
