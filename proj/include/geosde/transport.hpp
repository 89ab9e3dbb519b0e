#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

#include "geosde/core.hpp"
#include "geosde/geometry.hpp"
#include "geosde/manifold.hpp"

namespace geosde {

/// Sampled path on a manifold: strictly increasing grid, on-manifold points,
/// optional node velocities (empty when unknown).
struct DiscretePath {
  std::vector<double> times;
  std::vector<Vec> points;
  std::vector<Vec> velocities;

  std::size_t size() const { return times.size(); }
  bool has_velocities() const { return !velocities.empty(); }
};

/// Frames u(t_k) along a path: N x N orthogonal matrices mapping the initial
/// tangent/normal splitting onto the splitting at t_k.
struct FramePath {
  std::vector<double> times;
  std::vector<Mat> frames;
};

struct TransportOptions {
  int reorth_every = 16;       // polar re-orthogonalization cadence; 0 disables
  double frame_fail = 1e-4;    // orthogonality drift that aborts the run
};

/// Node velocities from points by finite differences: 4th order central in
/// the interior (uniform grids), one-sided at the ends, 2nd order fallback on
/// non-uniform grids.
inline std::vector<Vec> finite_difference_velocities(const DiscretePath& path) {
  const std::size_t k = path.size();
  if (k < 2) throw std::invalid_argument("finite_difference_velocities: need >= 2 nodes");
  std::vector<Vec> vel(k);
  const double h = path.times[1] - path.times[0];
  bool uniform = true;
  for (std::size_t i = 1; i + 1 < k; ++i) {
    if (std::abs((path.times[i + 1] - path.times[i]) - h) > 1e-12 * (1.0 + std::abs(h))) {
      uniform = false;
      break;
    }
  }
  auto p = [&](std::size_t i) -> const Vec& { return path.points[i]; };
  for (std::size_t i = 0; i < k; ++i) {
    if (uniform && k >= 5) {
      if (i >= 2 && i + 2 < k) {
        vel[i] = (-p(i + 2) + 8.0 * p(i + 1) - 8.0 * p(i - 1) + p(i - 2)) / (12.0 * h);
      } else if (i < 2) {
        // 4th order one-sided: -25/12, 4, -3, 4/3, -1/4.
        vel[i] = (-25.0 * p(i) + 48.0 * p(i + 1) - 36.0 * p(i + 2) + 16.0 * p(i + 3) -
                  3.0 * p(i + 4)) /
                 (12.0 * h);
      } else {
        vel[i] = (25.0 * p(i) - 48.0 * p(i - 1) + 36.0 * p(i - 2) - 16.0 * p(i - 3) +
                  3.0 * p(i - 4)) /
                 (12.0 * h);
      }
    } else {
      if (i == 0) {
        vel[i] = (p(1) - p(0)) / (path.times[1] - path.times[0]);
      } else if (i + 1 == k) {
        vel[i] = (p(i) - p(i - 1)) / (path.times[i] - path.times[i - 1]);
      } else {
        vel[i] = (p(i + 1) - p(i - 1)) / (path.times[i + 1] - path.times[i - 1]);
      }
    }
  }
  return vel;
}

namespace detail {

/// Stage data for one RK4 step of the frame equation on [t_k, t_{k+1}]:
/// positions and velocities at the two ends and the midpoint. With node
/// velocities available, cubic Hermite interpolation gives 4th-order stage
/// data; without them the chord slope is used at all three stages, which
/// stays 2nd-order accurate even when the underlying path has velocity kinks
/// at the nodes. Either way the Simpson combination of the stage velocities
/// reproduces the position increment exactly.
struct TransportStages {
  Vec m0, m_mid, m1;
  Vec v0, v_mid, v1;
};

inline TransportStages make_stages(const ManifoldModel& model, const DiscretePath& path,
                                   std::size_t k) {
  TransportStages s;
  const double h = path.times[k + 1] - path.times[k];
  const Vec& p0 = path.points[k];
  const Vec& p1 = path.points[k + 1];
  s.m0 = p0;
  s.m1 = p1;
  if (path.has_velocities()) {
    s.v0 = path.velocities[k];
    s.v1 = path.velocities[k + 1];
    s.m_mid = model.retract(0.5 * (p0 + p1) + (h / 8.0) * (s.v0 - s.v1));
    s.v_mid = 1.5 * (p1 - p0) / h - 0.25 * (s.v0 + s.v1);
  } else {
    const Vec chord = (p1 - p0) / h;
    s.v0 = chord;
    s.v1 = chord;
    s.v_mid = chord;
    s.m_mid = model.retract(0.5 * (p0 + p1));
  }
  if (!model.is_flat()) {
    s.v0 = model.tangent_projection(s.m0) * s.v0;
    s.v_mid = model.tangent_projection(s.m_mid) * s.v_mid;
    s.v1 = model.tangent_projection(s.m1) * s.v1;
  }
  return s;
}

/// One RK4 step of u' = -Gamma(sigma'(t)) u given the three stage connection
/// matrices.
inline void rk4_frame_step(const Mat& a0, const Mat& a_mid, const Mat& a1, double h, Mat& u,
                           Mat& k1, Mat& k2, Mat& k3, Mat& k4) {
  k1.noalias() = a0 * u;
  k2.noalias() = a_mid * (u + (0.5 * h) * k1);
  k3.noalias() = a_mid * (u + (0.5 * h) * k2);
  k4.noalias() = a1 * (u + h * k3);
  u += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
}

}  // namespace detail

/// Integrates the frame equation u' + Gamma(sigma') u = 0 with u(0) = I along
/// a discrete path (RK4). Frames are re-orthogonalized by the polar
/// decomposition every reorth_every steps; set reorth_every = 0 to measure the
/// raw integrator drift.
inline FramePath parallel_transport(const ManifoldModel& model, const DiscretePath& path,
                                    const TransportOptions& opts = {}) {
  const std::size_t k = path.size();
  if (k < 2) throw std::invalid_argument("parallel_transport: need >= 2 nodes");
  for (std::size_t i = 0; i + 1 < k; ++i) {
    if (path.times[i + 1] <= path.times[i]) {
      throw std::invalid_argument("parallel_transport: grid must be strictly increasing");
    }
  }
  const int n = model.ambient_dim;
  FramePath out;
  out.times = path.times;
  out.frames.reserve(k);
  Mat u = Mat::Identity(n, n);
  out.frames.push_back(u);
  Mat k1(n, n), k2(n, n), k3(n, n), k4(n, n);
  for (std::size_t i = 0; i + 1 < k; ++i) {
    const double h = path.times[i + 1] - path.times[i];
    const auto s = detail::make_stages(model, path, i);
    const Mat a0 = -model.connection(s.m0, s.v0);
    const Mat a_mid = -model.connection(s.m_mid, s.v_mid);
    const Mat a1 = -model.connection(s.m1, s.v1);
    detail::rk4_frame_step(a0, a_mid, a1, h, u, k1, k2, k3, k4);
    if (opts.reorth_every > 0 && (i + 1) % static_cast<std::size_t>(opts.reorth_every) == 0) {
      u = polar_orthogonalize(u);
    }
    const double drift = (u.transpose() * u - Mat::Identity(n, n)).norm();
    if (drift > opts.frame_fail) {
      throw std::runtime_error("parallel_transport: orthogonality drift " +
                               std::to_string(drift) + " exceeds frame_fail; reduce the step");
    }
    out.frames.push_back(u);
  }
  return out;
}

/// Orthogonality drift max_k |u_k^T u_k - I| of a frame path.
inline double orthogonality_drift(const FramePath& frames) {
  double worst = 0.0;
  for (const Mat& u : frames.frames) {
    const int n = static_cast<int>(u.rows());
    worst = std::max(worst, (u.transpose() * u - Mat::Identity(n, n)).norm());
  }
  return worst;
}

/// Holonomy angle of a closed loop on a 2-dimensional model: the rotation
/// angle, in (-pi, pi], of the end frame restricted to the starting tangent
/// plane.
inline double holonomy(const ManifoldModel& model, const DiscretePath& loop,
                       const TransportOptions& opts = {}) {
  if (model.manifold_dim != 2) {
    throw std::invalid_argument("holonomy: only defined here for 2-dimensional models");
  }
  const Vec& start = loop.points.front();
  const Vec& end = loop.points.back();
  if ((end - start).norm() > model.on_manifold_tol() + 1e-9 * model.scale) {
    throw std::invalid_argument("holonomy: loop is not closed");
  }
  const FramePath frames = parallel_transport(model, loop, opts);
  const Mat basis = tangent_basis(model, start);
  const Eigen::Matrix2d g = basis.transpose() * frames.frames.back() * basis;
  return rotation_angle(g);
}

}  // namespace geosde
