#pragma once

#include <stdexcept>
#include <vector>

#include "geosde/core.hpp"
#include "geosde/driver.hpp"
#include "geosde/polynomial.hpp"
#include "geosde/sde.hpp"

namespace geosde {

/// Flat-model Wong-Zakai path with the Jacobian flow Z of the flow map and
/// its inverse Y, co-integrated per interval by the variational ODE
///   Z' = A(t) Z,   Y' = -Y A(t),   A = sum_i c_i DX_i + DX_0,
/// so that Z stays consistent with the discrete flow map and Y with Z^{-1}.
struct FlatFlowPath {
  std::vector<double> times;
  std::vector<Vec> points;
  std::vector<Mat> flow;      // Z(t_k)
  std::vector<Mat> flow_inv;  // Y(t_k), integrated by the adjoint equation

  std::size_t size() const { return times.size(); }
};

namespace detail {

/// Exact Jacobian polynomials of a polynomial field, differentiated once up
/// front so the integrator only evaluates.
struct FieldDerivatives {
  std::vector<std::vector<Polynomial>> entries;  // [i][k] = d(comp_i)/dx_k

  explicit FieldDerivatives(const PolyVectorField& f) {
    const int n = f.dim();
    entries.resize(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
      entries[static_cast<std::size_t>(i)].reserve(static_cast<std::size_t>(n));
      for (int k = 0; k < n; ++k) {
        entries[static_cast<std::size_t>(i)].push_back(
            f.comps[static_cast<std::size_t>(i)].derivative(k));
      }
    }
  }

  void eval_into(const Vec& x, double weight, Mat& a) const {
    const int n = static_cast<int>(entries.size());
    for (int i = 0; i < n; ++i) {
      for (int k = 0; k < n; ++k) {
        a(i, k) += weight * entries[static_cast<std::size_t>(i)][static_cast<std::size_t>(k)]
                                .eval(x);
      }
    }
  }
};

}  // namespace detail

inline FlatFlowPath simulate_flat_with_flow(const SdeSystem& sys, const DrivingPath& driver,
                                            int n_sub = 4, bool want_inverse = true) {
  const ManifoldModel& model = sys.model;
  if (!model.is_flat()) {
    throw std::invalid_argument("simulate_flat_with_flow: flat models only");
  }
  const int n = model.ambient_dim;
  const int n_fields = static_cast<int>(sys.fields.size());
  if (driver.dim != n_fields) {
    throw std::invalid_argument("simulate_flat_with_flow: driver dimension mismatch");
  }

  std::vector<detail::FieldDerivatives> dfields;
  dfields.reserve(static_cast<std::size_t>(n_fields));
  for (const auto& f : sys.fields) dfields.emplace_back(f);
  const detail::FieldDerivatives* ddrift = nullptr;
  detail::FieldDerivatives drift_storage{sys.has_drift ? sys.drift
                                                       : PolyVectorField::constant(Vec::Zero(n))};
  if (sys.has_drift) ddrift = &drift_storage;

  const std::size_t steps = driver.steps();
  FlatFlowPath out;
  out.times.reserve(steps + 1);
  out.points.reserve(steps + 1);
  out.flow.reserve(steps + 1);
  if (want_inverse) out.flow_inv.reserve(steps + 1);

  Vec xi = sys.origin;
  Mat z = Mat::Identity(n, n);
  Mat y = Mat::Identity(n, n);
  out.times.push_back(0.0);
  out.points.push_back(xi);
  out.flow.push_back(z);
  if (want_inverse) out.flow_inv.push_back(y);

  const double dt = driver.dt;
  const double h = dt / n_sub;

  struct Stage {
    Vec v;
    Mat a;
  };
  std::vector<Stage> st(4, Stage{Vec(n), Mat(n, n)});
  Vec xs(n);
  Mat zk1(n, n), zk2(n, n), zk3(n, n), zk4(n, n);
  Mat yk1(n, n), yk2(n, n), yk3(n, n), yk4(n, n);

  auto eval_stage = [&](const Vec& x, const Vec& c, Stage& s) {
    s.v.setZero();
    s.a.setZero();
    for (int j = 0; j < n_fields; ++j) {
      const auto& f = sys.fields[static_cast<std::size_t>(j)];
      for (int i = 0; i < n; ++i) {
        s.v[i] += c[j] * f.comps[static_cast<std::size_t>(i)].eval(x);
      }
      dfields[static_cast<std::size_t>(j)].eval_into(x, c[j], s.a);
    }
    if (sys.has_drift) {
      for (int i = 0; i < n; ++i) s.v[i] += sys.drift.comps[static_cast<std::size_t>(i)].eval(x);
      ddrift->eval_into(x, 1.0, s.a);
    }
  };

  for (std::size_t step = 0; step < steps; ++step) {
    const Vec c = driver.increments[step] / dt;
    for (int sub = 0; sub < n_sub; ++sub) {
      eval_stage(xi, c, st[0]);
      xs = xi + (0.5 * h) * st[0].v;
      eval_stage(xs, c, st[1]);
      xs = xi + (0.5 * h) * st[1].v;
      eval_stage(xs, c, st[2]);
      xs = xi + h * st[2].v;
      eval_stage(xs, c, st[3]);

      zk1.noalias() = st[0].a * z;
      zk2.noalias() = st[1].a * (z + (0.5 * h) * zk1);
      zk3.noalias() = st[2].a * (z + (0.5 * h) * zk2);
      zk4.noalias() = st[3].a * (z + h * zk3);
      if (want_inverse) {
        yk1.noalias() = -(y * st[0].a);
        yk2.noalias() = -((y + (0.5 * h) * yk1) * st[1].a);
        yk3.noalias() = -((y + (0.5 * h) * yk2) * st[2].a);
        yk4.noalias() = -((y + h * yk3) * st[3].a);
        y += (h / 6.0) * (yk1 + 2.0 * yk2 + 2.0 * yk3 + yk4);
      }
      z += (h / 6.0) * (zk1 + 2.0 * zk2 + 2.0 * zk3 + zk4);
      xi += (h / 6.0) * (st[0].v + 2.0 * st[1].v + 2.0 * st[2].v + st[3].v);
    }
    out.times.push_back(driver.time(step + 1));
    out.points.push_back(xi);
    out.flow.push_back(z);
    if (want_inverse) out.flow_inv.push_back(y);
  }
  return out;
}

}  // namespace geosde
