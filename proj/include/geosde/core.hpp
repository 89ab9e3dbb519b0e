#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace geosde {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

inline constexpr double kPi = 3.14159265358979323846;

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t& state) {
  state += 0x9e3779b97f4a7c15ULL;
  std::uint64_t z = state;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace detail

/// Derives an independent generator seed for one Monte Carlo path, so that
/// path streams do not depend on which worker executes them.
inline std::uint64_t stream_seed(std::uint64_t master_seed, std::uint64_t path_index) {
  std::uint64_t s = master_seed;
  std::uint64_t a = detail::splitmix64(s);
  s ^= path_index * 0xd1342543de82ef95ULL + 0x2545f4914f6cdd1dULL;
  std::uint64_t b = detail::splitmix64(s);
  return a ^ (b + 0x9e3779b97f4a7c15ULL);
}

/// Standard normal sampler on top of mt19937_64 using the basic Box-Muller
/// transform. Consumption per pair of variates is fixed (two uniforms), which
/// keeps streams reproducible independent of the standard library in use.
class NormalSampler {
 public:
  explicit NormalSampler(std::uint64_t seed) : engine_(seed) {}

  double operator()() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    const double u1 = uniform_open();
    const double u2 = uniform_open();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * kPi * u2;
    spare_ = r * std::sin(theta);
    have_spare_ = true;
    return r * std::cos(theta);
  }

 private:
  // Uniform on (0,1]; never returns 0 so log() is safe.
  double uniform_open() {
    const std::uint64_t x = engine_();
    return (static_cast<double>(x >> 11) + 1.0) * 0x1p-53;
  }

  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool have_spare_ = false;
};

/// Orthonormal basis of the range of a symmetric projection matrix P with
/// trace d, via pivoted modified Gram-Schmidt on the columns of P. The pivot
/// is the column of largest remaining norm, ties broken by column index, which
/// makes the basis deterministic.
inline Mat projection_basis(const Mat& P, int d) {
  const int n = static_cast<int>(P.rows());
  Mat work = P;
  Mat basis(n, d);
  std::vector<bool> used(static_cast<std::size_t>(n), false);
  for (int k = 0; k < d; ++k) {
    int pivot = -1;
    double best = -1.0;
    for (int j = 0; j < n; ++j) {
      if (used[static_cast<std::size_t>(j)]) continue;
      const double nrm = work.col(j).norm();
      if (nrm > best + 1e-14) {
        best = nrm;
        pivot = j;
      }
    }
    if (pivot < 0 || best < 1e-10) {
      throw std::runtime_error("projection_basis: projection has rank below " +
                               std::to_string(d));
    }
    used[static_cast<std::size_t>(pivot)] = true;
    basis.col(k) = work.col(pivot) / best;
    for (int j = 0; j < n; ++j) {
      if (used[static_cast<std::size_t>(j)]) continue;
      work.col(j) -= basis.col(k).dot(work.col(j)) * basis.col(k);
    }
  }
  return basis;
}

/// Nearest orthogonal matrix in Frobenius norm (polar factor via SVD).
inline Mat polar_orthogonalize(const Mat& u) {
  Eigen::JacobiSVD<Mat> svd(u, Eigen::ComputeThinU | Eigen::ComputeThinV);
  return svd.matrixU() * svd.matrixV().transpose();
}

/// Rotation angle in (-pi, pi] of a 2x2 special orthogonal matrix.
inline double rotation_angle(const Eigen::Matrix2d& r) {
  return std::atan2(r(1, 0), r(0, 0));
}

/// Least-squares slope of y against x. Used by the convergence-order fits.
inline double fit_slope(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2) {
    throw std::invalid_argument("fit_slope: need at least two points");
  }
  const double n = static_cast<double>(x.size());
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sx += x[i];
    sy += y[i];
    sxx += x[i] * x[i];
    sxy += x[i] * y[i];
  }
  return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

}  // namespace geosde
