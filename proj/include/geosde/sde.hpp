#pragma once

#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "geosde/core.hpp"
#include "geosde/driver.hpp"
#include "geosde/geometry.hpp"
#include "geosde/manifold.hpp"
#include "geosde/polynomial.hpp"
#include "geosde/transport.hpp"

namespace geosde {

// ---------------------------------------------------------------------------
// Stepping kernels
// ---------------------------------------------------------------------------

/// Allocation-free primitives used inside the Wong-Zakai integrators. The
/// sphere and flat kernels are hand-written because the Monte Carlo budgets
/// run through them; the generic kernel wraps the model closures and is
/// used by the remaining builtin models (and in tests, to cross-check the
/// specialized kernels).
class SimKernel {
 public:
  virtual ~SimKernel() = default;
  virtual void retract(Vec& x) const = 0;
  /// v <- P(m) v for m on M.
  virtual void tangent(const Vec& m, Vec& v) const = 0;
  /// out = -Gamma_m(w) u (the frame derivative), w tangent at m; row is
  /// scratch of size 1 x N.
  virtual void frame_deriv(const Vec& m, const Vec& w, const Mat& u, Mat& out,
                           Eigen::RowVectorXd& row) const = 0;
  /// out = dQ_m(w) x.
  virtual void dq_apply(const Vec& m, const Vec& w, const Vec& x, Vec& out) const = 0;
  /// out = Ric_m v for tangent v.
  virtual void ricci_apply(const Vec& m, const Vec& v, Vec& out) const = 0;
};

namespace detail {

class FlatKernel final : public SimKernel {
 public:
  void retract(Vec&) const override {}
  void tangent(const Vec&, Vec&) const override {}
  void frame_deriv(const Vec&, const Vec&, const Mat& u, Mat& out,
                   Eigen::RowVectorXd&) const override {
    out.setZero(u.rows(), u.cols());
  }
  void dq_apply(const Vec& m, const Vec&, const Vec&, Vec& out) const override {
    out.setZero(m.size());
  }
  void ricci_apply(const Vec& m, const Vec&, Vec& out) const override {
    out.setZero(m.size());
  }
};

class SphereKernel final : public SimKernel {
 public:
  SphereKernel(int n, double rho) : rho_(rho), rho2_(rho * rho), ric_((n - 2) / rho2_) {}

  void retract(Vec& x) const override { x *= rho_ / x.norm(); }

  void tangent(const Vec& m, Vec& v) const override { v -= (m.dot(v) / rho2_) * m; }

  // Gamma_m(w) reduces to (m w^T - w m^T)/rho^2 for w tangent at m on the
  // sphere, so the frame derivative is -Gamma_m(w) u = (w m^T - m w^T) u/rho^2.
  void frame_deriv(const Vec& m, const Vec& w, const Mat& u, Mat& out,
                   Eigen::RowVectorXd& row) const override {
    row.noalias() = m.transpose() * u;
    out.noalias() = w * row;
    row.noalias() = w.transpose() * u;
    out.noalias() -= m * row;
    out *= 1.0 / rho2_;
  }

  void dq_apply(const Vec& m, const Vec& w, const Vec& x, Vec& out) const override {
    const double mx = m.dot(x) / rho2_;
    const double wx = w.dot(x) / rho2_;
    out = mx * w + wx * m;
  }

  void ricci_apply(const Vec& m, const Vec& v, Vec& out) const override {
    out = ric_ * (v - (m.dot(v) / rho2_) * m);
  }

 private:
  double rho_, rho2_, ric_;
};

class GenericKernel final : public SimKernel {
 public:
  explicit GenericKernel(const ManifoldModel& model) : model_(&model) {}

  void retract(Vec& x) const override { x = model_->retract(x); }
  void tangent(const Vec& m, Vec& v) const override {
    v = model_->tangent_projection(m) * v;
  }
  void frame_deriv(const Vec& m, const Vec& w, const Mat& u, Mat& out,
                   Eigen::RowVectorXd&) const override {
    out.noalias() = -(model_->connection(m, w) * u);
  }
  void dq_apply(const Vec& m, const Vec& w, const Vec& x, Vec& out) const override {
    out.noalias() = model_->dq_dir(m, w) * x;
  }
  void ricci_apply(const Vec& m, const Vec& v, Vec& out) const override {
    if (model_->analytic_ricci) {
      out.noalias() = model_->analytic_ricci(m) * v;
    } else {
      out = ricci(*model_, TangentVector{m, v}).vec;
    }
  }

 private:
  const ManifoldModel* model_;
};

}  // namespace detail

inline std::unique_ptr<SimKernel> make_kernel(const ManifoldModel& model) {
  switch (model.kind) {
    case ModelKind::flat:
      return std::make_unique<detail::FlatKernel>();
    case ModelKind::sphere:
      return std::make_unique<detail::SphereKernel>(model.ambient_dim, model.scale);
    case ModelKind::generic:
      break;
  }
  return std::make_unique<detail::GenericKernel>(model);
}

// ---------------------------------------------------------------------------
// Systems and paths
// ---------------------------------------------------------------------------

/// Stratonovich system dx = sum_i X_i(x) o dB^i + X_0(x) dt on a model. The
/// diffusion fields are ambient polynomials (all builtin systems are), which
/// keeps Jacobians exact for bracket tables and derivative flows. The
/// projection Brownian motion X_i = P(.)e_i has its own dedicated simulator
/// and is marked by `projection_bm`.
struct SdeSystem {
  ManifoldModel model;
  std::vector<PolyVectorField> fields;  // X_1..X_n
  PolyVectorField drift;                // X_0, empty when absent
  bool has_drift = false;
  bool projection_bm = false;
  Vec origin;
  std::string name;

  int noise_dim() const {
    return projection_bm ? model.ambient_dim : static_cast<int>(fields.size());
  }
};

inline SdeSystem projection_system(const ManifoldModel& model, const Vec& origin) {
  model.require_on_manifold(origin);
  SdeSystem sys;
  sys.model = model;
  sys.projection_bm = true;
  sys.origin = origin;
  sys.name = "projection-bm(" + model.name + ")";
  return sys;
}

/// Simulation output: the state path plus, when requested, the stochastic
/// parallel frames u, the derivative flow z and Ricci weight (both d x d in
/// the coordinates of `basis`), and the anti-development b.
struct GeometricPath {
  std::vector<double> times;
  std::vector<Vec> points;
  std::vector<Mat> frames;
  std::vector<Mat> deriv_flow;
  std::vector<Mat> ricci_weight;
  std::vector<Vec> antidev;
  std::vector<Mat> ricci_pullback;  // Ric_// at left endpoints, steps() entries
  Mat basis;  // N x d tangent basis at the start point

  std::size_t size() const { return times.size(); }

  DiscretePath state() const {
    DiscretePath p;
    p.times = times;
    p.points = points;
    return p;
  }

  Mat deriv_flow_inverse(std::size_t k) const {
    return deriv_flow.at(k).inverse();
  }
};

struct SimFeatures {
  bool frames = false;
  bool deriv_flow = false;
  bool ricci_weight = false;
  bool antidev = false;
  bool ricci_pullback = false;  // store Ric_// per step (left endpoints)

  bool any() const {
    return frames || deriv_flow || ricci_weight || antidev || ricci_pullback;
  }
};

struct SimOptions {
  int n_sub = 4;          // RK4 substeps per Brownian increment
  int reorth_every = 16;  // frame re-orthogonalization cadence
  SimFeatures features;
  bool store_path = true;  // keep all grid nodes (estimators always do)
};

// ---------------------------------------------------------------------------
// Projection Brownian motion with co-integrated processes
// ---------------------------------------------------------------------------

namespace detail {

/// Fixed-size stepping core for the 2-sphere in R^3, where the Monte Carlo
/// budgets are spent. Mathematically identical to the generic loop below;
/// the unit tests pin the two against each other.
inline GeometricPath simulate_sphere3_bm(const ManifoldModel& model, const Vec& origin,
                                         const DrivingPath& driver, const SimOptions& opts) {
  using V3 = Eigen::Vector3d;
  using M3 = Eigen::Matrix3d;
  using V2 = Eigen::Vector2d;
  using M2 = Eigen::Matrix2d;
  using B32 = Eigen::Matrix<double, 3, 2>;

  const double rho = model.scale;
  const double rho2 = rho * rho;
  const double ric = 1.0 / rho2;  // (N-2)/rho^2 with N = 3

  SimFeatures feat = opts.features;
  if (feat.deriv_flow || feat.ricci_weight || feat.antidev || feat.ricci_pullback) {
    feat.frames = true;
  }
  const bool need_ric = feat.deriv_flow || feat.ricci_weight || feat.ricci_pullback;

  const std::size_t steps = driver.steps();
  GeometricPath out;
  out.basis = tangent_basis(model, origin);
  const B32 e0 = out.basis;
  out.times.reserve(steps + 1);
  out.points.reserve(steps + 1);
  if (feat.frames) out.frames.reserve(steps + 1);
  if (feat.deriv_flow) out.deriv_flow.reserve(steps + 1);
  if (feat.ricci_weight) out.ricci_weight.reserve(steps + 1);
  if (feat.antidev) out.antidev.reserve(steps + 1);
  if (feat.ricci_pullback) out.ricci_pullback.reserve(steps);

  V3 sigma = origin;
  M3 u = M3::Identity();
  M2 z = M2::Identity();
  M2 w_ric = M2::Identity();
  V2 b = V2::Zero();

  out.times.push_back(0.0);
  out.points.push_back(sigma);
  if (feat.frames) out.frames.push_back(u);
  if (feat.deriv_flow) out.deriv_flow.push_back(z);
  if (feat.ricci_weight) out.ricci_weight.push_back(w_ric);
  if (feat.antidev) out.antidev.push_back(b);

  const double dt = driver.dt;
  const double h = dt / opts.n_sub;

  auto tangent = [rho2](const V3& m, V3& v) { v -= (m.dot(v) / rho2) * m; };
  auto retract = [rho](V3& x) { x *= rho / x.norm(); };
  // -Gamma_m(w) u = (w m^T - m w^T) u / rho^2 for tangent w.
  auto frame_deriv = [rho2](const V3& m, const V3& w, const M3& uu, M3& out_m) {
    out_m.noalias() = w * (m.transpose() * uu);
    out_m.noalias() -= m * (w.transpose() * uu);
    out_m *= 1.0 / rho2;
  };

  M3 k1, k2, k3, k4, us;
  V3 s1, s2, s3, s4, vel, stage, tmp;
  M2 ric_d, dz;
  B32 ue0;

  for (std::size_t step = 0; step < steps; ++step) {
    const V3 db = driver.increments[step];

    if (need_ric) {
      // Ric_// = ric * E0^T u^T P(sigma) u E0.
      ue0.noalias() = u * e0;
      for (int j = 0; j < 2; ++j) {
        V3 col = ue0.col(j);
        tangent(sigma, col);
        ric_d.col(j).noalias() = ric * (ue0.transpose() * col);
      }
      if (feat.ricci_pullback) out.ricci_pullback.push_back(ric_d);
    }
    if (feat.antidev) {
      tmp = db;
      tangent(sigma, tmp);
      b.noalias() += e0.transpose() * (u.transpose() * tmp);
    }
    if (feat.deriv_flow) {
      ue0.noalias() = u * e0;
      for (int j = 0; j < 2; ++j) {
        const V3 w = ue0 * z.col(j);
        tmp = (sigma.dot(db) / rho2) * w + (w.dot(db) / rho2) * sigma;
        tangent(sigma, tmp);
        dz.col(j).noalias() = -(e0.transpose() * (u.transpose() * tmp));
      }
      dz.noalias() -= (0.5 * dt) * (ric_d * z);
      z += dz;
    }
    if (feat.ricci_weight) w_ric -= (0.5 * dt) * (w_ric * ric_d);

    const V3 c = db / dt;
    for (int sub = 0; sub < opts.n_sub; ++sub) {
      vel = c;
      tangent(sigma, vel);
      s1 = vel;
      if (feat.frames) frame_deriv(sigma, vel, u, k1);

      stage = sigma + (0.5 * h) * s1;
      retract(stage);
      vel = c;
      tangent(stage, vel);
      s2 = vel;
      if (feat.frames) {
        us = u + (0.5 * h) * k1;
        frame_deriv(stage, vel, us, k2);
      }

      stage = sigma + (0.5 * h) * s2;
      retract(stage);
      vel = c;
      tangent(stage, vel);
      s3 = vel;
      if (feat.frames) {
        us = u + (0.5 * h) * k2;
        frame_deriv(stage, vel, us, k3);
      }

      stage = sigma + h * s3;
      retract(stage);
      vel = c;
      tangent(stage, vel);
      s4 = vel;
      if (feat.frames) {
        us = u + h * k3;
        frame_deriv(stage, vel, us, k4);
      }

      sigma += (h / 6.0) * (s1 + 2.0 * s2 + 2.0 * s3 + s4);
      retract(sigma);
      if (feat.frames) u += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    }
    if (feat.frames && opts.reorth_every > 0 &&
        (step + 1) % static_cast<std::size_t>(opts.reorth_every) == 0) {
      u = polar_orthogonalize(u);
    }

    out.times.push_back(driver.time(step + 1));
    out.points.push_back(sigma);
    if (feat.frames) out.frames.push_back(u);
    if (feat.deriv_flow) out.deriv_flow.push_back(z);
    if (feat.ricci_weight) out.ricci_weight.push_back(w_ric);
    if (feat.antidev) out.antidev.push_back(b);
  }
  return out;
}

}  // namespace detail

/// Integrates the projection SDE  dSigma = P(Sigma) o dB  by the Wong-Zakai
/// scheme (RK4 on each piecewise-linear interval, retraction at stage points
/// and at interval ends).
///
/// Per increment, before the state advances, the requested Ito couplings are
/// updated with the left-endpoint rule:
///   antidevelopment   db   = E0^T u^T P(Sigma) dB,
///   derivative flow   dz v = -E0^T u^T P(Sigma) dQ(u E0 z v) dB
///                         - 1/2 Ric_// z v dt,
///   Ricci weight      dW   = -1/2 W Ric_// dt,
/// while the frame u is co-integrated through the same Wong-Zakai ODE as the
/// state (u' = -Gamma(Sigma') u).
inline GeometricPath simulate_projection_bm(const ManifoldModel& model, const Vec& origin,
                                            const DrivingPath& driver,
                                            const SimOptions& opts = {}) {
  model.require_on_manifold(origin);
  const int n = model.ambient_dim;
  const int d = model.manifold_dim;
  if (driver.dim != n) {
    throw std::invalid_argument("simulate_projection_bm: driver dimension must equal N");
  }
  if (model.kind == ModelKind::sphere && n == 3) {
    return detail::simulate_sphere3_bm(model, origin, driver, opts);
  }
  const std::unique_ptr<SimKernel> kernel = make_kernel(model);
  SimFeatures feat = opts.features;
  if (feat.deriv_flow || feat.ricci_weight || feat.antidev || feat.ricci_pullback) {
    feat.frames = true;
  }
  const bool need_ric = feat.deriv_flow || feat.ricci_weight || feat.ricci_pullback;

  const std::size_t steps = driver.steps();
  GeometricPath out;
  out.basis = tangent_basis(model, origin);
  out.times.reserve(steps + 1);
  out.points.reserve(steps + 1);
  if (feat.frames) out.frames.reserve(steps + 1);
  if (feat.deriv_flow) out.deriv_flow.reserve(steps + 1);
  if (feat.ricci_weight) out.ricci_weight.reserve(steps + 1);
  if (feat.antidev) out.antidev.reserve(steps + 1);
  if (feat.ricci_pullback) out.ricci_pullback.reserve(steps);

  Vec sigma = origin;
  Mat u = Mat::Identity(n, n);
  Mat z = Mat::Identity(d, d);
  Mat w_ric = Mat::Identity(d, d);
  Vec b = Vec::Zero(d);

  out.times.push_back(0.0);
  out.points.push_back(sigma);
  if (feat.frames) out.frames.push_back(u);
  if (feat.deriv_flow) out.deriv_flow.push_back(z);
  if (feat.ricci_weight) out.ricci_weight.push_back(w_ric);
  if (feat.antidev) out.antidev.push_back(b);

  // Scratch space, allocated once.
  Vec c(n), vel(n), stage(n), tmp(n), tmp2(n), col(n);
  Mat ric_d(d, d), dz(d, d);
  Mat k1(n, n), k2(n, n), k3(n, n), k4(n, n), us(n, n);
  Vec s1(n), s2(n), s3(n), s4(n);
  Eigen::RowVectorXd row(n);
  Mat ue0(n, d);

  const double dt = driver.dt;
  const double h = dt / opts.n_sub;

  for (std::size_t step = 0; step < steps; ++step) {
    const Vec& db = driver.increments[step];

    // Left-endpoint couplings at (sigma_k, u_k).
    if (need_ric) {
      ue0.noalias() = u * out.basis;
      for (int j = 0; j < d; ++j) {
        col = ue0.col(j);
        kernel->ricci_apply(sigma, col, tmp);
        ric_d.col(j).noalias() = out.basis.transpose() * (u.transpose() * tmp);
      }
      if (feat.ricci_pullback) out.ricci_pullback.push_back(ric_d);
    }
    if (feat.antidev) {
      tmp = db;
      kernel->tangent(sigma, tmp);
      b.noalias() += out.basis.transpose() * (u.transpose() * tmp);
    }
    if (feat.deriv_flow) {
      ue0.noalias() = u * out.basis;
      for (int j = 0; j < d; ++j) {
        col.noalias() = ue0 * z.col(j);
        kernel->dq_apply(sigma, col, db, tmp);
        kernel->tangent(sigma, tmp);
        tmp2.noalias() = u.transpose() * tmp;
        dz.col(j).noalias() = -(out.basis.transpose() * tmp2);
      }
      dz.noalias() -= (0.5 * dt) * (ric_d * z);
      z += dz;
    }
    if (feat.ricci_weight) {
      w_ric -= (0.5 * dt) * (w_ric * ric_d);
    }

    // Wong-Zakai interval: RK4 substeps of sigma' = P(sigma)c (+ frame).
    c = db / dt;
    for (int sub = 0; sub < opts.n_sub; ++sub) {
      // Stage 1.
      vel = c;
      kernel->tangent(sigma, vel);
      s1 = vel;
      if (feat.frames) kernel->frame_deriv(sigma, vel, u, k1, row);
      // Stage 2.
      stage = sigma + (0.5 * h) * s1;
      kernel->retract(stage);
      vel = c;
      kernel->tangent(stage, vel);
      s2 = vel;
      if (feat.frames) {
        us = u + (0.5 * h) * k1;
        kernel->frame_deriv(stage, vel, us, k2, row);
      }
      // Stage 3.
      stage = sigma + (0.5 * h) * s2;
      kernel->retract(stage);
      vel = c;
      kernel->tangent(stage, vel);
      s3 = vel;
      if (feat.frames) {
        us = u + (0.5 * h) * k2;
        kernel->frame_deriv(stage, vel, us, k3, row);
      }
      // Stage 4.
      stage = sigma + h * s3;
      kernel->retract(stage);
      vel = c;
      kernel->tangent(stage, vel);
      s4 = vel;
      if (feat.frames) {
        us = u + h * k3;
        kernel->frame_deriv(stage, vel, us, k4, row);
      }
      sigma += (h / 6.0) * (s1 + 2.0 * s2 + 2.0 * s3 + s4);
      kernel->retract(sigma);
      if (feat.frames) u += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    }
    if (feat.frames && opts.reorth_every > 0 &&
        (step + 1) % static_cast<std::size_t>(opts.reorth_every) == 0) {
      u = polar_orthogonalize(u);
    }

    out.times.push_back(driver.time(step + 1));
    out.points.push_back(sigma);
    if (feat.frames) out.frames.push_back(u);
    if (feat.deriv_flow) out.deriv_flow.push_back(z);
    if (feat.ricci_weight) out.ricci_weight.push_back(w_ric);
    if (feat.antidev) out.antidev.push_back(b);
  }
  return out;
}

// ---------------------------------------------------------------------------
// General systems
// ---------------------------------------------------------------------------

/// Wong-Zakai integration of a general polynomial-field system. On curved
/// models, stage points are retracted (the fields are tangent along M, so
/// this does not change the limiting equation) and each interval ends with a
/// retraction that keeps the path within the on-manifold tolerance.
inline DiscretePath simulate_sde(const SdeSystem& sys, const DrivingPath& driver,
                                 const SimOptions& opts = {}) {
  if (sys.projection_bm) {
    return simulate_projection_bm(sys.model, sys.origin, driver, opts).state();
  }
  const int n_fields = static_cast<int>(sys.fields.size());
  if (driver.dim != n_fields) {
    throw std::invalid_argument("simulate_sde: driver dimension must match field count");
  }
  const ManifoldModel& model = sys.model;
  const int n = model.ambient_dim;
  model.require_on_manifold(sys.origin);
  const std::unique_ptr<SimKernel> kernel = make_kernel(model);

  const std::size_t steps = driver.steps();
  DiscretePath out;
  out.times.reserve(steps + 1);
  out.points.reserve(steps + 1);
  Vec sigma = sys.origin;
  out.times.push_back(0.0);
  out.points.push_back(sigma);

  const double dt = driver.dt;
  const double h = dt / opts.n_sub;
  Vec stage(n), vel(n), s1(n), s2(n), s3(n), s4(n), fj(n);

  auto rhs = [&](const Vec& x, const Vec& c, Vec& v) {
    stage = x;
    kernel->retract(stage);
    v.setZero();
    for (int j = 0; j < n_fields; ++j) {
      fj = sys.fields[static_cast<std::size_t>(j)].eval(stage);
      v += c[j] * fj;
    }
    if (sys.has_drift) v += sys.drift.eval(stage);
  };

  for (std::size_t step = 0; step < steps; ++step) {
    const Vec c = driver.increments[step] / dt;
    for (int sub = 0; sub < opts.n_sub; ++sub) {
      rhs(sigma, c, s1);
      rhs(sigma + (0.5 * h) * s1, c, s2);
      rhs(sigma + (0.5 * h) * s2, c, s3);
      rhs(sigma + h * s3, c, s4);
      sigma += (h / 6.0) * (s1 + 2.0 * s2 + 2.0 * s3 + s4);
      kernel->retract(sigma);
    }
    out.times.push_back(driver.time(step + 1));
    out.points.push_back(sigma);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Quadratic variation diagnostic
// ---------------------------------------------------------------------------

/// Discrete bracket sum_k d[f(Sigma)] d[g(Sigma)] minus the left-point
/// quadrature of int <grad f, grad g>(Sigma) dt. For Brownian paths the
/// expectation of the residual vanishes as the step goes to zero.
inline double quadratic_variation_residual(const ManifoldModel& model,
                                           const std::vector<double>& times,
                                           const std::vector<Vec>& points,
                                           const ScalarField& f, const ScalarField& g) {
  (void)model;
  if (points.size() < 2) {
    throw std::invalid_argument("quadratic_variation_residual: need >= 2 nodes");
  }
  double bracket = 0.0;
  double integral = 0.0;
  for (std::size_t k = 0; k + 1 < points.size(); ++k) {
    const double df = f.eval(points[k + 1]) - f.eval(points[k]);
    const double dg = g.eval(points[k + 1]) - g.eval(points[k]);
    bracket += df * dg;
    const double dt = times[k + 1] - times[k];
    integral += gradient(f, points[k]).vec.dot(gradient(g, points[k]).vec) * dt;
  }
  return bracket - integral;
}

inline double quadratic_variation_residual(const ManifoldModel& model, const GeometricPath& path,
                                           const ScalarField& f, const ScalarField& g) {
  return quadratic_variation_residual(model, path.times, path.points, f, g);
}

}  // namespace geosde
