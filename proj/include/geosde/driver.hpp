#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <vector>

#include "geosde/core.hpp"

namespace geosde {

/// Piecewise-linear Cameron-Martin shift, given by its value function;
/// slopes are taken per grid interval.
using CameronMartinShift = std::function<Vec(double)>;

/// Euclidean Brownian increments on a uniform grid, reproducible from
/// (master seed, path index). With a Cameron-Martin shift h the increments of
/// h are added, i.e. the driver becomes B + h.
struct DrivingPath {
  int dim = 0;
  double dt = 0.0;
  double horizon = 0.0;
  std::vector<Vec> increments;  // steps() entries in R^dim
  std::uint64_t seed = 0;
  std::uint64_t path_index = 0;

  std::size_t steps() const { return increments.size(); }
  double time(std::size_t k) const { return static_cast<double>(k) * dt; }

  /// Cumulative path B(t_k), k = 0..steps().
  std::vector<Vec> cumulative() const {
    std::vector<Vec> b;
    b.reserve(steps() + 1);
    Vec acc = Vec::Zero(dim);
    b.push_back(acc);
    for (const Vec& inc : increments) {
      acc += inc;
      b.push_back(acc);
    }
    return b;
  }

  void negate() {
    for (Vec& inc : increments) inc = -inc;
  }
};

inline std::size_t grid_steps(double horizon, double dt) {
  if (dt <= 0 || horizon <= 0) {
    throw std::invalid_argument("driver: horizon and dt must be positive");
  }
  const double ratio = horizon / dt;
  const auto k = static_cast<std::size_t>(std::llround(ratio));
  if (k < 1 || std::abs(ratio - static_cast<double>(k)) > 1e-9 * ratio) {
    throw std::invalid_argument("driver: dt must divide the horizon");
  }
  return k;
}

inline DrivingPath sample_driver(int n, double horizon, double dt, std::uint64_t seed,
                                 std::uint64_t path_index,
                                 const CameronMartinShift& shift = nullptr) {
  if (n < 1) throw std::invalid_argument("driver: dimension must be positive");
  const std::size_t k = grid_steps(horizon, dt);
  DrivingPath out;
  out.dim = n;
  out.dt = dt;
  out.horizon = horizon;
  out.seed = seed;
  out.path_index = path_index;
  out.increments.resize(k);
  NormalSampler normal(stream_seed(seed, path_index));
  const double sigma = std::sqrt(dt);
  for (std::size_t i = 0; i < k; ++i) {
    Vec inc(n);
    for (int j = 0; j < n; ++j) inc[j] = sigma * normal();
    out.increments[i] = std::move(inc);
  }
  if (shift) {
    for (std::size_t i = 0; i < k; ++i) {
      out.increments[i] += shift((i + 1) * dt) - shift(i * dt);
    }
  }
  return out;
}

/// Coarsens a driver by summing groups of `factor` increments; used by the
/// strong-order study, where all grids must share one underlying Brownian
/// path.
inline DrivingPath coarsen_driver(const DrivingPath& fine, int factor) {
  if (factor < 1 || fine.steps() % static_cast<std::size_t>(factor) != 0) {
    throw std::invalid_argument("coarsen_driver: factor must divide the step count");
  }
  DrivingPath out;
  out.dim = fine.dim;
  out.dt = fine.dt * factor;
  out.horizon = fine.horizon;
  out.seed = fine.seed;
  out.path_index = fine.path_index;
  out.increments.reserve(fine.steps() / static_cast<std::size_t>(factor));
  for (std::size_t i = 0; i < fine.steps(); i += static_cast<std::size_t>(factor)) {
    Vec acc = fine.increments[i];
    for (int j = 1; j < factor; ++j) acc += fine.increments[i + static_cast<std::size_t>(j)];
    out.increments.push_back(std::move(acc));
  }
  return out;
}

}  // namespace geosde
