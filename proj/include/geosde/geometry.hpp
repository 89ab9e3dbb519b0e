#pragma once

#include <functional>
#include <stdexcept>

#include "geosde/core.hpp"
#include "geosde/manifold.hpp"
#include "geosde/polynomial.hpp"

namespace geosde {

/// Tangent vector field m -> y(m) on a manifold, given as closures. The
/// optional jacobian returns the ambient directional derivative dy(v_m); when
/// absent it is replaced by a central finite difference along the retracted
/// curve s -> retract(m + s v), the same device used for dQ.
struct VectorField {
  const ManifoldModel* model = nullptr;
  std::function<Vec(const Vec&)> eval;
  std::function<Vec(const Vec&, const Vec&)> jacobian;

  Vec operator()(const Vec& m) const { return eval(m); }

  Vec directional_derivative(const Vec& m, const Vec& v) const {
    if (jacobian) return jacobian(m, v);
    const double h = ManifoldModel::kFdStepFactor * model->scale;
    const Vec yp = eval(model->retract(m + h * v));
    const Vec ym = eval(model->retract(m - h * v));
    return (yp - ym) / (2.0 * h);
  }
};

inline VectorField to_vector_field(const ManifoldModel& model, const PolyVectorField& p) {
  VectorField f;
  f.model = &model;
  f.eval = [p](const Vec& m) { return p.eval(m); };
  f.jacobian = [p](const Vec& m, const Vec& v) { return p.jacobian_apply(m, v); };
  return f;
}

/// The tangent field X_i(m) = P(m) e_i used throughout the Brownian motion
/// constructions.
inline VectorField projection_field(const ManifoldModel& model, int i) {
  VectorField f;
  f.model = &model;
  f.eval = [&model, i](const Vec& m) {
    return Vec(model.tangent_projection(m).col(i));
  };
  f.jacobian = [&model, i](const Vec& m, const Vec& v) {
    return Vec(-model.dq_dir(m, v).col(i));
  };
  return f;
}

/// Scalar function on M represented by an ambient extension with its exact
/// gradient and Hessian form.
struct ScalarField {
  const ManifoldModel* model = nullptr;
  std::function<double(const Vec&)> eval;
  std::function<Vec(const Vec&)> ambient_gradient;
  std::function<double(const Vec&, const Vec&, const Vec&)> ambient_hessian;

  double operator()(const Vec& m) const { return eval(m); }
};

inline ScalarField to_scalar_field(const ManifoldModel& model, const Polynomial& p) {
  ScalarField f;
  f.model = &model;
  f.eval = [p](const Vec& m) { return p.eval(m); };
  f.ambient_gradient = [p](const Vec& m) { return p.gradient_at(m); };
  f.ambient_hessian = [p](const Vec& m, const Vec& v, const Vec& w) {
    return v.dot(p.hessian_at(m) * w);
  };
  return f;
}

/// The coordinate function x_i as a scalar field.
inline ScalarField coordinate_field(const ManifoldModel& model, int i) {
  ScalarField f;
  f.model = &model;
  f.eval = [i](const Vec& m) { return m[i]; };
  f.ambient_gradient = [i, n = model.ambient_dim](const Vec&) {
    Vec g = Vec::Zero(n);
    g[i] = 1.0;
    return g;
  };
  f.ambient_hessian = [](const Vec&, const Vec&, const Vec&) { return 0.0; };
  return f;
}

/// Deterministic orthonormal basis of the tangent plane at m.
inline Mat tangent_basis(const ManifoldModel& model, const Vec& m) {
  if (model.is_flat()) return Mat::Identity(model.ambient_dim, model.ambient_dim);
  return projection_basis(model.tangent_projection(m), model.manifold_dim);
}

/// Levi-Civita covariant derivative (nabla_v Y)(m) = P(m) dy(v_m).
inline TangentVector covariant_derivative(const VectorField& y, const TangentVector& v) {
  const ManifoldModel& model = *y.model;
  const Vec dy = y.directional_derivative(v.base, v.vec);
  if (model.is_flat()) return {v.base, dy};
  return {v.base, model.tangent_projection(v.base) * dy};
}

/// Curvature tensor R(u, v)w = [dQ(u_m), dQ(v_m)] w at a common base point.
inline TangentVector curvature(const ManifoldModel& model, const TangentVector& u,
                               const TangentVector& v, const TangentVector& w) {
  if ((u.base - v.base).norm() > 1e-12 * (1.0 + u.base.norm()) ||
      (u.base - w.base).norm() > 1e-12 * (1.0 + u.base.norm())) {
    throw std::invalid_argument("curvature: mismatched base points");
  }
  if (model.is_flat()) return {u.base, Vec::Zero(model.ambient_dim)};
  const Mat dqu = model.dq_dir(u.base, u.vec);
  const Mat dqv = model.dq_dir(v.base, v.vec);
  return {u.base, dqu * (dqv * w.vec) - dqv * (dqu * w.vec)};
}

/// Ric_m v = sum over an orthonormal tangent basis {a} of R(v, a)a.
inline TangentVector ricci(const ManifoldModel& model, const TangentVector& v) {
  if (model.analytic_ricci) return {v.base, model.analytic_ricci(v.base) * v.vec};
  if (model.is_flat()) return {v.base, Vec::Zero(model.ambient_dim)};
  const Mat basis = tangent_basis(model, v.base);
  const Mat dqv = model.dq_dir(v.base, v.vec);
  Vec sum = Vec::Zero(model.ambient_dim);
  for (int k = 0; k < basis.cols(); ++k) {
    const Vec a = basis.col(k);
    const Mat dqa = model.dq_dir(v.base, a);
    sum += dqv * (dqa * a) - dqa * (dqv * a);
  }
  return {v.base, sum};
}

/// Quadratic form of the Ricci tensor,
///   <Ric u, v> = tr(dQ(dQ(u)v) - dQ(v)dQ(u)),
/// with the trace running over the tangent plane. Expanded over an
/// orthonormal tangent basis {a} this reads
///   sum_a <dQ(a)a, dQ(u)v> - <dQ(u)a, dQ(a)v>,
/// which only ever applies dQ to tangent directions. Kept as a separate route
/// for cross-checking ricci().
inline double ricci_quadratic_form(const ManifoldModel& model, const TangentVector& u,
                                   const Vec& v) {
  if (model.is_flat()) return 0.0;
  const Mat basis = tangent_basis(model, u.base);
  const Mat dqu = model.dq_dir(u.base, u.vec);
  const Vec dqu_v = dqu * v;
  double sum = 0.0;
  for (int k = 0; k < basis.cols(); ++k) {
    const Vec a = basis.col(k);
    const Mat dqa = model.dq_dir(u.base, a);
    sum += (dqa * a).dot(dqu_v) - (dqu * a).dot(dqa * v);
  }
  return sum;
}

/// grad f(m) = P(m) grad F(m) for the ambient extension F.
inline TangentVector gradient(const ScalarField& f, const Vec& m) {
  const ManifoldModel& model = *f.model;
  const Vec g = f.ambient_gradient(m);
  if (model.is_flat()) return {m, g};
  return {m, model.tangent_projection(m) * g};
}

/// Laplace-Beltrami operator evaluated through an orthonormal tangent basis:
///   (Delta f)(m) = sum_i F''(m)(e_i, e_i) - F'(m)(dQ(e_i) e_i).
inline double laplacian(const ScalarField& f, const Vec& m) {
  const ManifoldModel& model = *f.model;
  const Mat basis = tangent_basis(model, m);
  double sum = 0.0;
  const Vec grad_f = f.ambient_gradient(m);
  for (int k = 0; k < basis.cols(); ++k) {
    const Vec e = basis.col(k);
    sum += f.ambient_hessian(m, e, e);
    if (!model.is_flat()) sum -= grad_f.dot(model.dq_dir(m, e) * e);
  }
  return sum;
}

/// Hessian form (nabla df)(v, w) = F''(m)(v, w) - F'(m)(dQ(v_m) w).
inline double hessian_form(const ScalarField& f, const TangentVector& v, const Vec& w) {
  const ManifoldModel& model = *f.model;
  double val = f.ambient_hessian(v.base, v.vec, w);
  if (!model.is_flat()) {
    val -= f.ambient_gradient(v.base).dot(model.dq_dir(v.base, v.vec) * w);
  }
  return val;
}

/// Lie bracket [Y, W](m) = dw(Y(m)) - dy(W(m)); tangent by construction.
inline TangentVector lie_bracket(const VectorField& y, const VectorField& w, const Vec& m) {
  if (y.model != w.model) {
    throw std::invalid_argument("lie_bracket: fields live on different models");
  }
  const Vec ym = y.eval(m);
  const Vec wm = w.eval(m);
  return {m, w.directional_derivative(m, ym) - y.directional_derivative(m, wm)};
}

/// Second covariant derivative of a polynomial tangent field,
///   nabla^2_{v (x) w} Z = dQ(v) dQ(w) z(m) + P z''(m)(v, w) - P z'(m)[dQ(v) w].
/// Restricted to polynomial fields because it needs true second derivatives.
inline TangentVector second_covariant_derivative(const ManifoldModel& model,
                                                 const PolyVectorField& z,
                                                 const TangentVector& v, const Vec& w) {
  const Vec& m = v.base;
  const Mat p = model.tangent_projection(m);
  const Mat dqv = model.dq_dir(m, v.vec);
  const Mat dqw = model.dq_dir(m, w);
  Vec out = dqv * (dqw * z.eval(m));
  out += p * z.second_derivative(m, v.vec, w);
  out -= p * z.jacobian_apply(m, dqv * w);
  return {m, out};
}

}  // namespace geosde
