#pragma once

#include <functional>
#include <stdexcept>
#include <vector>

#include "geosde/core.hpp"
#include "geosde/geometry.hpp"
#include "geosde/manifold.hpp"
#include "geosde/transport.hpp"

namespace geosde {

/// Path in R^d starting at 0, interpreted piecewise-linearly between nodes.
/// Values are coordinates with respect to a fixed orthonormal tangent basis at
/// the development origin.
struct EuclideanPath {
  std::vector<double> times;
  std::vector<Vec> values;

  std::size_t size() const { return times.size(); }
};

struct DevelopResult {
  DiscretePath path;   // sigma
  FramePath frames;    // parallel translation along sigma
  Mat basis;           // N x d identification of R^d with the tangent plane at o
};

struct DevelopOptions {
  int reorth_every = 16;
};

/// Rolls a Euclidean path b onto the manifold: co-integrates
///   sigma' = u b',   u' + Gamma(sigma') u = 0,   sigma(0) = o, u(0) = I,
/// with RK4 per grid interval, per-step retraction and periodic frame
/// re-orthogonalization. b' is the per-interval slope of b.
inline DevelopResult develop(const ManifoldModel& model, const Vec& o, const EuclideanPath& b,
                             const DevelopOptions& opts = {}) {
  model.require_on_manifold(o);
  const std::size_t k = b.size();
  if (k < 1 || b.values.size() != k) {
    throw std::invalid_argument("develop: malformed driver path");
  }
  if (b.values[0].norm() != 0.0) {
    throw std::invalid_argument("develop: driver must start at 0");
  }
  const int n = model.ambient_dim;

  DevelopResult out;
  out.basis = tangent_basis(model, o);
  out.path.times = b.times;
  out.path.points.reserve(k);
  out.frames.times = b.times;
  out.frames.frames.reserve(k);

  Vec sigma = o;
  Mat u = Mat::Identity(n, n);
  out.path.points.push_back(sigma);
  out.frames.frames.push_back(u);

  // Derivative of the coupled state at a stage value.
  Vec w(n);
  auto rhs = [&](const Vec& sig, const Mat& uu, const Vec& slope_ambient, Vec& dsig, Mat& du) {
    const Vec m = model.retract(sig);
    w.noalias() = uu * slope_ambient;
    if (!model.is_flat()) w = model.tangent_projection(m) * w;
    dsig = w;
    du.noalias() = -(model.connection(m, w) * uu);
  };

  Vec ds1(n), ds2(n), ds3(n), ds4(n);
  Mat du1(n, n), du2(n, n), du3(n, n), du4(n, n);
  for (std::size_t i = 0; i + 1 < k; ++i) {
    const double h = b.times[i + 1] - b.times[i];
    if (h <= 0) throw std::invalid_argument("develop: grid must be strictly increasing");
    const Vec slope = (b.values[i + 1] - b.values[i]) / h;
    const Vec slope_ambient = out.basis * slope;

    rhs(sigma, u, slope_ambient, ds1, du1);
    rhs(sigma + 0.5 * h * ds1, u + 0.5 * h * du1, slope_ambient, ds2, du2);
    rhs(sigma + 0.5 * h * ds2, u + 0.5 * h * du2, slope_ambient, ds3, du3);
    rhs(sigma + h * ds3, u + h * du3, slope_ambient, ds4, du4);
    sigma += (h / 6.0) * (ds1 + 2.0 * ds2 + 2.0 * ds3 + ds4);
    u += (h / 6.0) * (du1 + 2.0 * du2 + 2.0 * du3 + du4);

    sigma = model.retract(sigma);
    if (opts.reorth_every > 0 && (i + 1) % static_cast<std::size_t>(opts.reorth_every) == 0) {
      u = polar_orthogonalize(u);
    }
    out.path.points.push_back(sigma);
    out.frames.frames.push_back(u);
  }
  return out;
}

/// Unrolls a manifold path into the tangent plane at its start:
///   b(s) = int_0^s u(r)^{-1} sigma'(r) dr,
/// computed with frames from parallel_transport and the trapezoid rule against
/// the position increments.
inline EuclideanPath antidevelop(const ManifoldModel& model, const DiscretePath& path,
                                 const TransportOptions& opts = {}) {
  const std::size_t k = path.size();
  if (k < 2) throw std::invalid_argument("antidevelop: need >= 2 nodes");
  const FramePath frames = parallel_transport(model, path, opts);
  const Mat basis = tangent_basis(model, path.points.front());
  const int d = model.manifold_dim;

  EuclideanPath out;
  out.times = path.times;
  out.values.reserve(k);
  Vec b = Vec::Zero(d);
  out.values.push_back(b);
  for (std::size_t i = 0; i + 1 < k; ++i) {
    const Vec dsigma = path.points[i + 1] - path.points[i];
    const Mat u_avg = 0.5 * (frames.frames[i] + frames.frames[i + 1]);
    b += basis.transpose() * (u_avg.transpose() * dsigma);
    out.values.push_back(b);
  }
  return out;
}

/// Flow of a (possibly time-dependent) tangent vector field: RK4 with
/// per-step retraction; stage evaluations happen at retracted points.
inline Vec integrate_flow(const ManifoldModel& model,
                          const std::function<Vec(double, const Vec&)>& field, const Vec& m0,
                          double t_final, int steps) {
  if (steps < 1) throw std::invalid_argument("integrate_flow: need >= 1 step");
  model.require_on_manifold(m0);
  const double h = t_final / steps;
  Vec m = m0;
  auto rhs = [&](double t, const Vec& x) {
    const Vec mm = model.retract(x);
    Vec v = field(t, mm);
    if (!model.is_flat()) v = model.tangent_projection(mm) * v;
    return v;
  };
  for (int i = 0; i < steps; ++i) {
    const double t = i * h;
    const Vec k1 = rhs(t, m);
    const Vec k2 = rhs(t + 0.5 * h, m + 0.5 * h * k1);
    const Vec k3 = rhs(t + 0.5 * h, m + 0.5 * h * k2);
    const Vec k4 = rhs(t + h, m + h * k3);
    m = model.retract(m + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4));
  }
  return m;
}

inline Vec integrate_flow(const VectorField& field, const Vec& m0, double t_final, int steps) {
  return integrate_flow(*field.model, [&](double, const Vec& m) { return field.eval(m); }, m0,
                        t_final, steps);
}

}  // namespace geosde
