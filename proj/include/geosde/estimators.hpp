#pragma once

#include <cmath>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "geosde/core.hpp"
#include "geosde/geometry.hpp"
#include "geosde/malliavin_flow.hpp"
#include "geosde/mc.hpp"
#include "geosde/polynomial.hpp"
#include "geosde/sde.hpp"

namespace geosde {

namespace detail {

inline std::size_t grid_index(double s, double dt, std::size_t steps, const char* what) {
  const double ratio = s / dt;
  const auto k = static_cast<std::size_t>(std::llround(ratio));
  if (std::abs(ratio - static_cast<double>(k)) > 1e-9 * (1.0 + ratio) || k > steps) {
    throw std::invalid_argument(std::string(what) + ": time " + std::to_string(s) +
                                " does not lie on the simulation grid");
  }
  return k;
}

}  // namespace detail

/// Mean of f(Sigma_t) over projection Brownian motion paths started at o;
/// a Monte Carlo evaluation of the heat semigroup e^{t Delta/2} f at o.
inline McEstimate heat_expectation(const ManifoldModel& model, const Vec& origin,
                                   const ScalarField& f, double t, const McRunOptions& mc) {
  if (t <= 0) throw std::invalid_argument("heat_expectation: need t > 0");
  SimOptions sim;
  sim.n_sub = mc.n_sub;
  McEstimate est = run_monte_carlo(1, mc, [&](std::uint64_t idx, Vec& out) {
    const DrivingPath driver = mc_driver(mc, model.ambient_dim, t, idx);
    const GeometricPath path = simulate_projection_bm(model, origin, driver, sim);
    out[0] = f.eval(path.points.back());
  });
  est.t = t;
  return est;
}

/// Gradient of the heat semigroup at the starting point:
///   grad(e^{t Delta/2} f)(o) = (1/t0) E[ (int_0^{t0} W_r db_r) f(Sigma_t) ],
/// with W the Ricci weight process and b the anti-development. The estimate
/// is a vector in the tangent coordinates fixed by the returned basis.
inline McEstimate bismut_gradient(const ManifoldModel& model, const Vec& origin,
                                  const ScalarField& f, double t, double t0,
                                  const McRunOptions& mc) {
  if (!(t0 > 0) || t0 > t) {
    throw std::invalid_argument("bismut_gradient: need 0 < t0 <= t");
  }
  const int d = model.manifold_dim;
  SimOptions sim;
  sim.n_sub = mc.n_sub;
  sim.features.ricci_weight = true;
  sim.features.antidev = true;
  Mat basis;
  McEstimate est = run_monte_carlo(d, mc, [&](std::uint64_t idx, Vec& out) {
    const DrivingPath driver = mc_driver(mc, model.ambient_dim, t, idx);
    const GeometricPath path = simulate_projection_bm(model, origin, driver, sim);
    const std::size_t k0 = detail::grid_index(t0, driver.dt, driver.steps(), "bismut_gradient");
    Vec acc = Vec::Zero(d);
    for (std::size_t k = 0; k < k0; ++k) {
      acc += path.ricci_weight[k] * (path.antidev[k + 1] - path.antidev[k]);
    }
    out = acc * (f.eval(path.points.back()) / t0);
    if (idx == 0) basis = path.basis;
  });
  est.t = t;
  est.basis = basis;
  return est;
}

/// Directional derivative of the diffusion semigroup via the derivative flow:
///   v(e^{tL/2} f) = (1/t0) E[ f(Sigma_t) int_0^{t0} <X(Sigma_s)^# Z_s v, dB_s> ].
/// Supported for the projection Brownian system on any model (X^# = P) and
/// for polynomial systems on flat models (X^# the pseudo-inverse).
inline McEstimate elworthy_li_gradient(const SdeSystem& sys, const Vec& v,
                                       const ScalarField& f, double t, double t0,
                                       const McRunOptions& mc) {
  if (!(t0 > 0) || t0 > t) {
    throw std::invalid_argument("elworthy_li_gradient: need 0 < t0 <= t");
  }
  const ManifoldModel& model = sys.model;

  if (sys.projection_bm) {
    SimOptions sim;
    sim.n_sub = mc.n_sub;
    sim.features.deriv_flow = true;
    const Mat basis0 = tangent_basis(model, sys.origin);
    const Vec v_coords = basis0.transpose() * v;
    McEstimate est = run_monte_carlo(1, mc, [&](std::uint64_t idx, Vec& out) {
      const DrivingPath driver = mc_driver(mc, model.ambient_dim, t, idx);
      const GeometricPath path = simulate_projection_bm(model, sys.origin, driver, sim);
      const std::size_t k0 =
          detail::grid_index(t0, driver.dt, driver.steps(), "elworthy_li_gradient");
      double acc = 0.0;
      for (std::size_t k = 0; k < k0; ++k) {
        // Z_s v = u z v in ambient terms; X^# = P for the projection system,
        // and Z_s v is already tangent, so the integrand is <Z_s v, dB_s>.
        const Vec zv = path.frames[k] * (path.basis * (path.deriv_flow[k] * v_coords));
        acc += zv.dot(driver.increments[k]);
      }
      out[0] = f.eval(path.points.back()) * acc / t0;
    });
    est.t = t;
    return est;
  }

  if (!model.is_flat()) {
    throw std::invalid_argument(
        "elworthy_li_gradient: general systems are supported on flat models only");
  }
  const int n_fields = static_cast<int>(sys.fields.size());
  McEstimate est = run_monte_carlo(1, mc, [&](std::uint64_t idx, Vec& out) {
    const DrivingPath driver = mc_driver(mc, n_fields, t, idx);
    const FlatFlowPath path = simulate_flat_with_flow(sys, driver, mc.n_sub);
    const std::size_t k0 =
        detail::grid_index(t0, driver.dt, driver.steps(), "elworthy_li_gradient");
    double acc = 0.0;
    Mat x(model.ambient_dim, n_fields);
    for (std::size_t k = 0; k < k0; ++k) {
      for (int j = 0; j < n_fields; ++j) {
        x.col(j) = sys.fields[static_cast<std::size_t>(j)].eval(path.points[k]);
      }
      Eigen::CompleteOrthogonalDecomposition<Mat> cod(x);
      if (cod.rank() < model.manifold_dim) {
        throw std::runtime_error("elworthy_li_gradient: X(m) lost full rank");
      }
      const Vec a = cod.pseudoInverse() * (path.flow[k] * v);
      acc += a.dot(driver.increments[k]);
    }
    out[0] = f.eval(path.points.back()) * acc / t0;
  });
  est.t = t;
  return est;
}

/// Cylinder function F(sigma) = f(sigma_{s_1}, ..., sigma_{s_k}) with exact
/// ambient gradients in each slot.
struct CylinderFunction {
  std::vector<double> times;
  std::function<double(const std::vector<Vec>&)> eval;
  std::function<Vec(int, const std::vector<Vec>&)> ambient_grad;
};

/// F = p(sigma_{s_1}, ..., sigma_{s_k}) for an ambient polynomial p on R^(k N).
inline CylinderFunction polynomial_cylinder(const Polynomial& p, std::vector<double> times,
                                            int ambient_dim) {
  const int k = static_cast<int>(times.size());
  if (p.nvars() != k * ambient_dim) {
    throw std::invalid_argument("polynomial_cylinder: variable count mismatch");
  }
  CylinderFunction f;
  f.times = std::move(times);
  auto pack = [k, ambient_dim](const std::vector<Vec>& xs) {
    Vec flat(k * ambient_dim);
    for (int i = 0; i < k; ++i) flat.segment(i * ambient_dim, ambient_dim) = xs[i];
    return flat;
  };
  f.eval = [p, pack](const std::vector<Vec>& xs) { return p.eval(pack(xs)); };
  f.ambient_grad = [p, pack, ambient_dim](int i, const std::vector<Vec>& xs) {
    const Vec g = p.gradient_at(pack(xs));
    return Vec(g.segment(i * ambient_dim, ambient_dim));
  };
  return f;
}

/// Deterministic Cameron-Martin direction, in tangent coordinates at the
/// starting point. The slope closure must be the derivative of value.
struct CameronMartinPath {
  std::function<Vec(double)> value;
  std::function<Vec(double)> slope;
};

enum class IbpWeight {
  ricci_times_h,        // h' + 1/2 Ric_// h (the default divergence weight)
  ricci_times_h_slope,  // h' + 1/2 Ric_// h', kept selectable for comparison
};

/// Path-space integration-by-parts residual
///   E[X^h F] - E[F z^h],
/// where X^h F = sum_i <grad_i f, //_{s_i} h(s_i)> and
/// z^h = int_0^T <h' + 1/2 Ric_// h, db> (left-point rule). Both terms are
/// estimated on the same ensemble, so the returned stderr is that of the
/// per-path difference.
inline McEstimate ibp_residual(const ManifoldModel& model, const Vec& origin,
                               const CameronMartinPath& h, const CylinderFunction& f,
                               double horizon, const McRunOptions& mc,
                               IbpWeight weight = IbpWeight::ricci_times_h) {
  SimOptions sim;
  sim.n_sub = mc.n_sub;
  sim.features.antidev = true;
  sim.features.ricci_pullback = true;
  for (double s : f.times) {
    if (s <= 0 || s > horizon + 1e-12) {
      throw std::invalid_argument("ibp_residual: cylinder times must lie in (0, T]");
    }
  }
  McEstimate est = run_monte_carlo(1, mc, [&](std::uint64_t idx, Vec& out) {
    const DrivingPath driver = mc_driver(mc, model.ambient_dim, horizon, idx);
    const GeometricPath path = simulate_projection_bm(model, origin, driver, sim);

    std::vector<Vec> nodes;
    nodes.reserve(f.times.size());
    std::vector<std::size_t> node_idx;
    for (double s : f.times) {
      node_idx.push_back(detail::grid_index(s, driver.dt, driver.steps(), "ibp_residual"));
      nodes.push_back(path.points[node_idx.back()]);
    }

    // Directional derivative term sum_i <grad_i f, //_{s_i} h(s_i)>.
    double xh_f = 0.0;
    for (std::size_t i = 0; i < nodes.size(); ++i) {
      const Vec grad_i = f.ambient_grad(static_cast<int>(i), nodes);
      const Vec h_transported =
          path.frames[node_idx[i]] * (path.basis * h.value(f.times[i]));
      xh_f += grad_i.dot(h_transported);
    }

    // Divergence term z^h = int <h' + Ric weight, db>.
    double zh = 0.0;
    for (std::size_t k = 0; k < driver.steps(); ++k) {
      const double s = driver.time(k);
      Vec w = h.slope(s);
      const Vec& ric_arg = (weight == IbpWeight::ricci_times_h) ? h.value(s) : h.slope(s);
      w += 0.5 * (path.ricci_pullback[k] * ric_arg);
      zh += w.dot(path.antidev[k + 1] - path.antidev[k]);
    }

    out[0] = xh_f - f.eval(nodes) * zh;
  });
  est.t = horizon;
  return est;
}

/// Squared Clark-Ocone representation defect on the flat model, for a
/// polynomial f of b_t in one dimension:
///   E[(F - EF - int_0^t a_s db_s)^2],  a_s = (d/dx)(e^{(t-s) Delta/2} f)(b_s),
/// where the heat smoothing of the polynomial is exact. The defect decays
/// linearly in the grid step.
inline McEstimate clark_ocone_check(const Polynomial& f, double t, const McRunOptions& mc) {
  if (f.nvars() != 1) {
    throw std::invalid_argument("clark_ocone_check: univariate polynomials only");
  }
  const std::size_t steps = grid_steps(t, mc.dt);
  // Integrand polynomials a(t_k, .) for each grid node, precomputed once.
  std::vector<Polynomial> integrand;
  integrand.reserve(steps);
  for (std::size_t k = 0; k < steps; ++k) {
    const double remaining = t - static_cast<double>(k) * mc.dt;
    integrand.push_back(gaussian_smooth(f, remaining).derivative(0));
  }
  const double f_mean = gaussian_smooth(f, t).eval(Vec::Zero(1));

  McEstimate est = run_monte_carlo(1, mc, [&](std::uint64_t idx, Vec& out) {
    const DrivingPath driver = mc_driver(mc, 1, t, idx);
    double b = 0.0;
    double integral = 0.0;
    Vec x(1);
    for (std::size_t k = 0; k < steps; ++k) {
      x[0] = b;
      integral += integrand[k].eval(x) * driver.increments[k][0];
      b += driver.increments[k][0];
    }
    x[0] = b;
    const double defect = f.eval(x) - f_mean - integral;
    out[0] = defect * defect;
  });
  est.t = t;
  return est;
}

}  // namespace geosde
