#pragma once

#include <cmath>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>

#include "geosde/core.hpp"

namespace geosde {

/// Tag used by the SDE integrators to pick an allocation-free stepping kernel
/// for the models that dominate Monte Carlo budgets.
enum class ModelKind { generic, flat, sphere };

/// Embedded manifold M in R^N given as the zero set of a constraint map
/// F: R^N -> R^(N-d) with surjective differential along M. All geometry in
/// this library is produced from the orthogonal projections P(m) onto the
/// tangent plane and Q(m) = I - P(m) onto its complement, together with the
/// directional derivative dQ.
///
/// A model with no constraint is the flat model R^N (d = N, P = I).
///
/// Instances are immutable after construction and safe to share across
/// threads; every member function is a pure function of its arguments.
class ManifoldModel {
 public:
  int ambient_dim = 0;   // N
  int manifold_dim = 0;  // d
  double scale = 1.0;    // characteristic length, sets finite-difference steps
  std::string name;      // spec string, e.g. "sphere:N=3,rho=1"
  ModelKind kind = ModelKind::generic;
  Vec reference_point;   // a point of M, used to seed random sampling

  // Constraint machinery; all empty for the flat model.
  std::function<Vec(const Vec&)> constraint;                           // F
  std::function<Mat(const Vec&)> constraint_jacobian;                  // F'
  std::function<Vec(const Vec&, const Vec&, const Vec&)> constraint_hessian;  // F''(m)(v,w)

  // Optional analytic shortcuts. analytic_projection must be a smooth
  // extension valid in a neighborhood of M so that integrator stage points
  // slightly off M are fine.
  std::function<Mat(const Vec&)> analytic_projection;        // Q(m)
  std::function<Mat(const Vec&, const Vec&)> analytic_dq;    // dQ(v_m)
  std::function<Vec(const Vec&)> analytic_retract;           // exact retraction
  std::function<Mat(const Vec&)> analytic_ricci;             // Ric as N x N on tangent vectors

  int codim() const { return ambient_dim - manifold_dim; }
  bool is_flat() const { return !constraint; }
  bool has_analytic_dq() const { return static_cast<bool>(analytic_dq); }

  double on_manifold_tol() const { return 1e-10 * scale; }
  double proj_tol() const { return has_analytic_dq() ? 1e-9 : 1e-5; }
  static constexpr double tangent_tol() { return 1e-8; }

  double constraint_violation(const Vec& m) const {
    return is_flat() ? 0.0 : constraint(m).norm();
  }

  /// Smallest-singular-value test of F'(m): accepted points must have full
  /// row rank N - d.
  bool constraint_full_rank(const Vec& m, double rank_tol = 1e-8) const {
    if (is_flat()) return true;
    const Mat j = constraint_jacobian(m);
    Eigen::JacobiSVD<Mat> svd(j);
    const Vec sv = svd.singularValues();
    return sv.size() > 0 && sv[sv.size() - 1] > rank_tol * std::max(1.0, sv[0]);
  }

  bool on_manifold(const Vec& m) const {
    return constraint_violation(m) <= on_manifold_tol();
  }

  void require_on_manifold(const Vec& m) const {
    if (m.size() != ambient_dim) {
      throw std::invalid_argument(name + ": point has wrong ambient dimension");
    }
    if (!on_manifold(m)) {
      throw std::invalid_argument(name + ": point is off the manifold, |F| = " +
                                  std::to_string(constraint_violation(m)));
    }
  }

  /// Q(m), from the analytic form when present, otherwise from the constraint
  /// Jacobian as J^T (J J^T)^{-1} J. Both extend smoothly off M.
  Mat normal_projection(const Vec& m) const {
    if (is_flat()) return Mat::Zero(ambient_dim, ambient_dim);
    if (analytic_projection) return analytic_projection(m);
    const Mat j = constraint_jacobian(m);
    const Mat gram = j * j.transpose();
    Eigen::LDLT<Mat> ldlt(gram);
    if (ldlt.info() != Eigen::Success) {
      throw std::runtime_error(name + ": constraint Jacobian is rank deficient");
    }
    return j.transpose() * ldlt.solve(j);
  }

  Mat tangent_projection(const Vec& m) const {
    return Mat::Identity(ambient_dim, ambient_dim) - normal_projection(m);
  }

  /// Return a nearby point on M. The flat model is the identity; models with
  /// an exact retraction use it; otherwise damped Gauss-Newton on F.
  Vec retract(const Vec& x) const {
    if (is_flat()) return x;
    if (analytic_retract) return analytic_retract(x);
    Vec m = x;
    Vec r = constraint(m);
    double rn = r.norm();
    const double tol = on_manifold_tol();
    for (int iter = 0; iter < kMaxRetractIters; ++iter) {
      if (rn <= tol) return m;
      const Mat j = constraint_jacobian(m);
      const Mat gram = j * j.transpose();
      const Vec step = j.transpose() * gram.ldlt().solve(r);
      double alpha = 1.0;
      for (int damp = 0; damp < 8; ++damp) {
        Vec trial = m - alpha * step;
        Vec rt = constraint(trial);
        const double rtn = rt.norm();
        if (rtn < rn) {
          m = std::move(trial);
          r = std::move(rt);
          rn = rtn;
          break;
        }
        alpha *= 0.5;
        if (damp == 7) {
          throw std::runtime_error(name + ": retraction stalled, step too large upstream");
        }
      }
    }
    if (rn <= tol) return m;
    throw std::runtime_error(name + ": retraction failed to converge, |F| = " +
                             std::to_string(rn));
  }

  /// Directional derivative dQ(v_m) of m -> Q(m). Analytic when available,
  /// else a central finite difference of Q along the retracted curve
  /// s -> retract(m + s v). Note dP(v_m) = -dQ(v_m).
  Mat dq_dir(const Vec& m, const Vec& v) const {
    if (is_flat()) return Mat::Zero(ambient_dim, ambient_dim);
    if (analytic_dq) return analytic_dq(m, v);
    const double h = kFdStepFactor * scale;
    const Mat qp = normal_projection(retract(m + h * v));
    const Mat qm = normal_projection(retract(m - h * v));
    return (qp - qm) / (2.0 * h);
  }

  /// Gamma(w_m) = dQ(w_m) P(m) + dP(w_m) Q(m) = dQ(w_m) (P(m) - Q(m)),
  /// the full-space connection form; skew symmetric at points of M.
  Mat connection(const Vec& m, const Vec& w) const {
    const Mat dq = dq_dir(m, w);
    const Mat q = normal_projection(m);
    Mat pq = -2.0 * q;
    pq.diagonal().array() += 1.0;  // P - Q = I - 2Q
    return dq * pq;
  }

  static constexpr int kMaxRetractIters = 20;
  static constexpr double kFdStepFactor = 6e-6;
};

/// A point of the tangent bundle: base on M plus an ambient vector in the
/// tangent plane at base.
struct TangentVector {
  Vec base;
  Vec vec;
};

/// Projects an ambient vector onto the tangent plane at m.
inline TangentVector tangent_project(const ManifoldModel& model, const Vec& m, const Vec& v) {
  model.require_on_manifold(m);
  if (model.is_flat()) return {m, v};
  if (!model.constraint_full_rank(m)) {
    throw std::invalid_argument(model.name + ": constraint Jacobian is rank deficient at m");
  }
  return {m, model.tangent_projection(m) * v};
}

inline bool is_tangent(const ManifoldModel& model, const TangentVector& v) {
  if (model.is_flat()) return true;
  const double defect = (model.normal_projection(v.base) * v.vec).norm();
  return defect <= ManifoldModel::tangent_tol() * (1.0 + v.vec.norm());
}

// ---------------------------------------------------------------------------
// Builtin models
// ---------------------------------------------------------------------------

inline ManifoldModel make_flat(int n) {
  if (n < 1) throw std::invalid_argument("flat: dimension must be positive");
  ManifoldModel m;
  m.ambient_dim = n;
  m.manifold_dim = n;
  m.name = "flat:N=" + std::to_string(n);
  m.kind = ModelKind::flat;
  m.reference_point = Vec::Zero(n);
  return m;
}

inline ManifoldModel make_sphere(int n, double rho) {
  if (n < 2) throw std::invalid_argument("sphere: need ambient dimension >= 2");
  if (rho <= 0) throw std::invalid_argument("sphere: radius must be positive");
  ManifoldModel m;
  m.ambient_dim = n;
  m.manifold_dim = n - 1;
  m.scale = rho;
  m.name = "sphere:N=" + std::to_string(n) + ",rho=" + std::to_string(rho);
  m.kind = ModelKind::sphere;
  const double rho2 = rho * rho;
  m.constraint = [rho2](const Vec& x) {
    Vec r(1);
    r[0] = x.squaredNorm() - rho2;
    return r;
  };
  m.constraint_jacobian = [n](const Vec& x) {
    Mat j(1, n);
    j.row(0) = 2.0 * x.transpose();
    return j;
  };
  m.constraint_hessian = [](const Vec&, const Vec& v, const Vec& w) {
    Vec r(1);
    r[0] = 2.0 * v.dot(w);
    return r;
  };
  // Q(m) = m m^T / rho^2 on M; written with the norm of x so the extension
  // off the sphere is still an exact orthogonal projection.
  m.analytic_projection = [](const Vec& x) {
    return Mat((x * x.transpose()) / x.squaredNorm());
  };
  m.analytic_dq = [rho2](const Vec& x, const Vec& v) {
    return (v * x.transpose() + x * v.transpose()) / rho2;
  };
  m.analytic_retract = [rho](const Vec& x) {
    const double nrm = x.norm();
    if (nrm == 0.0) throw std::runtime_error("sphere: cannot retract the origin");
    return Vec((rho / nrm) * x);
  };
  const double ric = static_cast<double>(n - 2) / rho2;
  m.analytic_ricci = [ric](const Vec& x) {
    const int n = static_cast<int>(x.size());
    return Mat(ric * (Mat::Identity(n, n) - x * x.transpose() / x.squaredNorm()));
  };
  m.reference_point = Vec::Zero(n);
  m.reference_point[n - 1] = rho;
  return m;
}

/// x^2 + y^2 = 1 in R^3.
inline ManifoldModel make_cylinder() {
  ManifoldModel m;
  m.ambient_dim = 3;
  m.manifold_dim = 2;
  m.name = "cylinder";
  m.constraint = [](const Vec& x) {
    Vec r(1);
    r[0] = x[0] * x[0] + x[1] * x[1] - 1.0;
    return r;
  };
  m.constraint_jacobian = [](const Vec& x) {
    Mat j(1, 3);
    j << 2.0 * x[0], 2.0 * x[1], 0.0;
    return j;
  };
  m.constraint_hessian = [](const Vec&, const Vec& v, const Vec& w) {
    Vec r(1);
    r[0] = 2.0 * (v[0] * w[0] + v[1] * w[1]);
    return r;
  };
  m.analytic_retract = [](const Vec& x) {
    const double nrm = std::hypot(x[0], x[1]);
    if (nrm == 0.0) throw std::runtime_error("cylinder: cannot retract the axis");
    Vec out(3);
    out << x[0] / nrm, x[1] / nrm, x[2];
    return out;
  };
  m.analytic_ricci = [](const Vec& x) {
    (void)x;
    return Mat::Zero(3, 3);
  };
  m.reference_point = Vec::Zero(3);
  m.reference_point[0] = 1.0;
  return m;
}

/// |z_i| = 1 for i = 1..n in R^(2n).
inline ManifoldModel make_torus(int n) {
  if (n < 1) throw std::invalid_argument("torus: need n >= 1");
  ManifoldModel m;
  m.ambient_dim = 2 * n;
  m.manifold_dim = n;
  m.name = "torus:n=" + std::to_string(n);
  m.constraint = [n](const Vec& x) {
    Vec r(n);
    for (int i = 0; i < n; ++i) {
      r[i] = x[2 * i] * x[2 * i] + x[2 * i + 1] * x[2 * i + 1] - 1.0;
    }
    return r;
  };
  m.constraint_jacobian = [n](const Vec& x) {
    Mat j = Mat::Zero(n, 2 * n);
    for (int i = 0; i < n; ++i) {
      j(i, 2 * i) = 2.0 * x[2 * i];
      j(i, 2 * i + 1) = 2.0 * x[2 * i + 1];
    }
    return j;
  };
  m.constraint_hessian = [n](const Vec&, const Vec& v, const Vec& w) {
    Vec r(n);
    for (int i = 0; i < n; ++i) {
      r[i] = 2.0 * (v[2 * i] * w[2 * i] + v[2 * i + 1] * w[2 * i + 1]);
    }
    return r;
  };
  m.analytic_retract = [n](const Vec& x) {
    Vec out(2 * n);
    for (int i = 0; i < n; ++i) {
      const double nrm = std::hypot(x[2 * i], x[2 * i + 1]);
      if (nrm == 0.0) throw std::runtime_error("torus: cannot retract a circle center");
      out[2 * i] = x[2 * i] / nrm;
      out[2 * i + 1] = x[2 * i + 1] / nrm;
    }
    return out;
  };
  m.reference_point = Vec::Zero(2 * n);
  for (int i = 0; i < n; ++i) m.reference_point[2 * i] = 1.0;
  return m;
}

/// det g = 1 for 2x2 matrices, flattened row-major into R^4 as (a, b; c, d).
inline ManifoldModel make_sl2() {
  ManifoldModel m;
  m.ambient_dim = 4;
  m.manifold_dim = 3;
  m.name = "sl2";
  m.constraint = [](const Vec& g) {
    Vec r(1);
    r[0] = g[0] * g[3] - g[1] * g[2] - 1.0;
    return r;
  };
  m.constraint_jacobian = [](const Vec& g) {
    // det'(g)A = det(g) tr(g^{-1} A); for 2x2 the gradient is (d, -c, -b, a).
    Mat j(1, 4);
    j << g[3], -g[2], -g[1], g[0];
    return j;
  };
  m.constraint_hessian = [](const Vec&, const Vec& v, const Vec& w) {
    Vec r(1);
    r[0] = v[0] * w[3] + v[3] * w[0] - v[1] * w[2] - v[2] * w[1];
    return r;
  };
  m.reference_point = Vec::Zero(4);
  m.reference_point[0] = 1.0;
  m.reference_point[3] = 1.0;
  return m;
}

/// g^T g = I in R^9 (3x3 matrices, row-major); constraint takes values in the
/// 6-dimensional space of symmetric matrices.
inline ManifoldModel make_so3() {
  ManifoldModel m;
  m.ambient_dim = 9;
  m.manifold_dim = 3;
  m.name = "so3";
  auto as_matrix = [](const Vec& x) {
    Eigen::Matrix3d g;
    g << x[0], x[1], x[2], x[3], x[4], x[5], x[6], x[7], x[8];
    return g;
  };
  // Symmetric 3x3 packed as (11, 22, 33, 12, 13, 23).
  auto pack_sym = [](const Eigen::Matrix3d& s) {
    Vec r(6);
    r << s(0, 0), s(1, 1), s(2, 2), s(0, 1), s(0, 2), s(1, 2);
    return r;
  };
  m.constraint = [=](const Vec& x) {
    const Eigen::Matrix3d g = as_matrix(x);
    return pack_sym(g.transpose() * g - Eigen::Matrix3d::Identity());
  };
  m.constraint_jacobian = [=](const Vec& x) {
    const Eigen::Matrix3d g = as_matrix(x);
    Mat j(6, 9);
    for (int col = 0; col < 9; ++col) {
      Eigen::Matrix3d e = Eigen::Matrix3d::Zero();
      e(col / 3, col % 3) = 1.0;
      const Eigen::Matrix3d ds = e.transpose() * g + g.transpose() * e;
      j.col(col) = pack_sym(ds);
    }
    return j;
  };
  m.constraint_hessian = [=](const Vec&, const Vec& v, const Vec& w) {
    const Eigen::Matrix3d a = as_matrix(v);
    const Eigen::Matrix3d b = as_matrix(w);
    return pack_sym(a.transpose() * b + b.transpose() * a);
  };
  m.analytic_retract = [=](const Vec& x) {
    const Mat g = polar_orthogonalize(as_matrix(x));
    if (g.determinant() < 0) {
      throw std::runtime_error("so3: retraction left the identity component");
    }
    Vec out(9);
    out << g(0, 0), g(0, 1), g(0, 2), g(1, 0), g(1, 1), g(1, 2), g(2, 0), g(2, 1), g(2, 2);
    return out;
  };
  m.reference_point = Vec::Zero(9);
  m.reference_point[0] = m.reference_point[4] = m.reference_point[8] = 1.0;
  return m;
}

/// Random point of M: a few tangent-plus-retract steps from the reference
/// point. Deterministic given the sampler state; covers compact builtins well
/// enough for property tests.
inline Vec random_manifold_point(const ManifoldModel& model, NormalSampler& normal) {
  Vec m = model.reference_point;
  for (int walk = 0; walk < 3; ++walk) {
    Vec xi(model.ambient_dim);
    for (int i = 0; i < model.ambient_dim; ++i) xi[i] = normal();
    if (!model.is_flat()) xi = model.tangent_projection(m) * xi;
    m = model.retract(m + (0.45 * model.scale) * xi);
  }
  return m;
}

/// Random tangent vector at m with roughly unit-scale components.
inline TangentVector random_tangent(const ManifoldModel& model, const Vec& m,
                                    NormalSampler& normal) {
  Vec xi(model.ambient_dim);
  for (int i = 0; i < model.ambient_dim; ++i) xi[i] = normal();
  if (!model.is_flat()) xi = model.tangent_projection(m) * xi;
  return {m, xi};
}

/// Parses manifold specs of the form "sphere:N=3,rho=1.0", "flat:N=2",
/// "cylinder", "torus:n=2", "sl2", "so3".
inline ManifoldModel parse_manifold(const std::string& spec) {
  const auto colon = spec.find(':');
  const std::string head = spec.substr(0, colon);
  std::map<std::string, double> params;
  if (colon != std::string::npos) {
    std::stringstream ss(spec.substr(colon + 1));
    std::string item;
    while (std::getline(ss, item, ',')) {
      const auto eq = item.find('=');
      if (eq == std::string::npos) {
        throw std::invalid_argument("manifold spec: expected key=value in '" + item + "'");
      }
      params[item.substr(0, eq)] = std::stod(item.substr(eq + 1));
    }
  }
  auto get = [&](const std::string& key, std::optional<double> fallback = {}) {
    auto it = params.find(key);
    if (it != params.end()) return it->second;
    if (fallback) return *fallback;
    throw std::invalid_argument("manifold spec '" + spec + "': missing parameter " + key);
  };
  if (head == "flat") return make_flat(static_cast<int>(get("N")));
  if (head == "sphere") return make_sphere(static_cast<int>(get("N")), get("rho", 1.0));
  if (head == "cylinder") return make_cylinder();
  if (head == "torus") return make_torus(static_cast<int>(get("n")));
  if (head == "sl2") return make_sl2();
  if (head == "so3") return make_so3();
  throw std::invalid_argument("unknown manifold spec: " + spec);
}

}  // namespace geosde
