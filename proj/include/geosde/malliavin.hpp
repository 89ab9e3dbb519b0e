#pragma once

#include <algorithm>
#include <limits>
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

inline constexpr double kRankTol = 1e-8;      // relative singular value cutoff
inline constexpr double kCovTol = 1e-10;      // symmetry / eigenvalue slack
inline constexpr double kCondMax = 1e12;      // Jacobian flow conditioning cap

// ---------------------------------------------------------------------------
// Bracket tables and the restricted bracket condition
// ---------------------------------------------------------------------------

struct BracketEntry {
  PolyVectorField field;
  std::string provenance;  // e.g. "[X1,[X1,X2]]"
  int level = 1;
};

/// Generations K_1 subset K_2 subset ... of iterated brackets,
/// K_{l+1} = {[X_i, K] : K in K_l} union K_l. Entries are kept without
/// deduplication so provenance is preserved.
struct BracketTable {
  std::vector<BracketEntry> entries;
  int levels = 1;

  std::vector<const BracketEntry*> generation(int level) const {
    std::vector<const BracketEntry*> out;
    for (const auto& e : entries) {
      if (e.level <= level) out.push_back(&e);
    }
    return out;
  }
};

inline BracketTable bracket_table(const SdeSystem& sys, int levels) {
  if (sys.fields.empty()) {
    throw std::invalid_argument("bracket_table: system must carry polynomial fields");
  }
  if (levels < 1 || levels > 4) {
    throw std::invalid_argument("bracket_table: level must be in 1..4");
  }
  BracketTable table;
  table.levels = levels;
  for (std::size_t i = 0; i < sys.fields.size(); ++i) {
    table.entries.push_back({sys.fields[i], "X" + std::to_string(i + 1), 1});
  }
  std::size_t gen_begin = 0;
  std::size_t gen_end = table.entries.size();
  for (int l = 2; l <= levels; ++l) {
    for (std::size_t k = gen_begin; k < gen_end; ++k) {
      for (std::size_t i = 0; i < sys.fields.size(); ++i) {
        BracketEntry e;
        e.field = sys.fields[i].bracket(table.entries[k].field);
        e.provenance =
            "[X" + std::to_string(i + 1) + "," + table.entries[k].provenance + "]";
        e.level = l;
        table.entries.push_back(std::move(e));
      }
    }
    gen_begin = gen_end;
    gen_end = table.entries.size();
  }
  return table;
}

struct RankReport {
  std::vector<int> rank_per_level;
  bool satisfied = false;
  int level_achieved = 0;  // 0 when never satisfied
};

/// Evaluates the bracket fields at m, projects into the tangent plane, and
/// reports the numerical rank of the span per level. The condition is
/// satisfied when the rank reaches the manifold dimension.
inline RankReport hormander_rank(const BracketTable& table, const ManifoldModel& model,
                                 const Vec& m) {
  model.require_on_manifold(m);
  const int d = model.manifold_dim;
  const Mat basis = tangent_basis(model, m);
  RankReport report;
  for (int l = 1; l <= table.levels; ++l) {
    const auto gen = table.generation(l);
    Mat span(d, static_cast<int>(gen.size()));
    for (std::size_t j = 0; j < gen.size(); ++j) {
      span.col(static_cast<int>(j)) = basis.transpose() * gen[j]->field.eval(m);
    }
    Eigen::JacobiSVD<Mat> svd(span);
    const Vec sv = svd.singularValues();
    int rank = 0;
    for (int i = 0; i < sv.size(); ++i) {
      if (sv[i] > kRankTol * sv[0]) ++rank;
    }
    if (sv.size() == 0 || sv[0] == 0.0) rank = 0;
    report.rank_per_level.push_back(rank);
    if (rank == d && !report.satisfied) {
      report.satisfied = true;
      report.level_achieved = l;
    }
  }
  return report;
}

// ---------------------------------------------------------------------------
// Reduced Malliavin covariance
// ---------------------------------------------------------------------------

/// One path's reduced covariance
///   Cbar_t = int_0^t Z_tau^{-1} X(Sigma_tau) X(Sigma_tau)^T Z_tau^{-T} dtau
/// (trapezoid rule on the simulation grid), with eigenvalues sorted ascending.
struct MalliavinSample {
  Mat covariance;
  Vec eigenvalues;
  double determinant = 0.0;
  bool discarded = false;  // Jacobian conditioning exceeded kCondMax
};

inline MalliavinSample reduced_covariance(const SdeSystem& sys, const DrivingPath& driver,
                                          double t, int n_sub = 4) {
  const ManifoldModel& model = sys.model;
  if (!model.is_flat()) {
    throw std::invalid_argument("reduced_covariance: flat ambient models only");
  }
  const int n = model.ambient_dim;
  const int n_fields = static_cast<int>(sys.fields.size());
  const FlatFlowPath path = simulate_flat_with_flow(sys, driver, n_sub, true);
  const std::size_t k_end = [&] {
    const double ratio = t / driver.dt;
    const auto k = static_cast<std::size_t>(std::llround(ratio));
    if (k > path.size() - 1) {
      throw std::invalid_argument("reduced_covariance: t beyond simulated horizon");
    }
    return k;
  }();

  MalliavinSample sample;
  Mat acc = Mat::Zero(n, n);
  Mat g(n, n);
  Mat x(n, n_fields);
  double cond_worst = 1.0;
  for (std::size_t k = 0; k <= k_end; ++k) {
    for (int j = 0; j < n_fields; ++j) {
      x.col(j) = sys.fields[static_cast<std::size_t>(j)].eval(path.points[k]);
    }
    const Mat yx = path.flow_inv[k] * x;
    g.noalias() = yx * yx.transpose();
    const double w = (k == 0 || k == k_end) ? 0.5 : 1.0;
    acc += (w * driver.dt) * g;
    cond_worst = std::max(cond_worst, path.flow[k].norm() * path.flow_inv[k].norm());
  }
  sample.covariance = 0.5 * (acc + acc.transpose());
  sample.discarded = cond_worst > kCondMax;
  Eigen::SelfAdjointEigenSolver<Mat> eig(sample.covariance);
  sample.eigenvalues = eig.eigenvalues();
  sample.determinant = sample.eigenvalues.prod();
  return sample;
}

struct NondegeneracyReport {
  std::vector<double> epsilons;
  std::vector<double> frac_eigen_below;  // fraction of paths with lambda_min < eps
  std::vector<double> frac_det_below;    // fraction with det < eps
  long long n_paths = 0;
  long long n_discarded = 0;
  double min_eigen_over_paths = 0.0;
};

/// Aggregates reduced covariances over a path ensemble into tail fractions
/// P(lambda_min < eps) and P(det < eps). Fractions are nondecreasing in eps
/// by construction; discarded paths are counted separately.
inline NondegeneracyReport nondegeneracy_report(const SdeSystem& sys, double t,
                                                const McRunOptions& mc,
                                                std::vector<double> epsilons) {
  std::sort(epsilons.begin(), epsilons.end());
  NondegeneracyReport report;
  report.epsilons = epsilons;
  const int n_eps = static_cast<int>(epsilons.size());
  const int n_fields = static_cast<int>(sys.fields.size());

  // Tail fractions need the raw per-path samples; the worker pool writes
  // them into index-owned slots and the tallies run sequentially after.
  std::vector<double> lambda_min(static_cast<std::size_t>(mc.n_paths));
  std::vector<double> determinant(static_cast<std::size_t>(mc.n_paths));
  std::vector<char> discarded(static_cast<std::size_t>(mc.n_paths), 0);
  run_monte_carlo(1, mc, [&](std::uint64_t idx, Vec& out) {
    const DrivingPath driver = mc_driver(mc, n_fields, t, idx);
    const MalliavinSample s = reduced_covariance(sys, driver, t, mc.n_sub);
    lambda_min[idx] = s.eigenvalues[0];
    determinant[idx] = s.determinant;
    discarded[idx] = s.discarded ? 1 : 0;
    out[0] = s.eigenvalues[0];
  });

  long long kept = 0;
  std::vector<long long> eig_below(static_cast<std::size_t>(n_eps), 0);
  std::vector<long long> det_below(static_cast<std::size_t>(n_eps), 0);
  double min_eig = std::numeric_limits<double>::infinity();
  for (long long i = 0; i < mc.n_paths; ++i) {
    if (discarded[static_cast<std::size_t>(i)]) {
      ++report.n_discarded;
      continue;
    }
    ++kept;
    min_eig = std::min(min_eig, lambda_min[static_cast<std::size_t>(i)]);
    for (int e = 0; e < n_eps; ++e) {
      if (lambda_min[static_cast<std::size_t>(i)] < epsilons[static_cast<std::size_t>(e)]) {
        ++eig_below[static_cast<std::size_t>(e)];
      }
      if (determinant[static_cast<std::size_t>(i)] < epsilons[static_cast<std::size_t>(e)]) {
        ++det_below[static_cast<std::size_t>(e)];
      }
    }
  }
  report.n_paths = kept;
  report.min_eigen_over_paths = min_eig;
  for (int e = 0; e < n_eps; ++e) {
    report.frac_eigen_below.push_back(static_cast<double>(eig_below[static_cast<std::size_t>(e)]) /
                                      static_cast<double>(kept));
    report.frac_det_below.push_back(static_cast<double>(det_below[static_cast<std::size_t>(e)]) /
                                    static_cast<double>(kept));
  }
  return report;
}

// ---------------------------------------------------------------------------
// Builtin systems
// ---------------------------------------------------------------------------

/// Builtin diffusion systems: "elliptic-sphere" (projection fields on S^2),
/// "heisenberg" (X1 = d/dx, X2 = d/dy + x d/dz on R^3), "degenerate-2d"
/// (X1 = d/dx only on R^2), "grushin" (X1 = d/dx, X2 = x d/dy on R^2), and
/// "elliptic-flat" (coordinate fields on R^2).
inline SdeSystem builtin_system(const std::string& name) {
  auto unit = [](int n, int i) {
    Vec v = Vec::Zero(n);
    v[i] = 1.0;
    return v;
  };
  if (name == "heisenberg") {
    SdeSystem sys;
    sys.model = make_flat(3);
    sys.origin = Vec::Zero(3);
    sys.fields.push_back(PolyVectorField::constant(unit(3, 0)));
    PolyVectorField x2 = PolyVectorField::constant(unit(3, 1));
    x2.comps[2] = Polynomial::variable(3, 0);
    sys.fields.push_back(x2);
    sys.name = name;
    return sys;
  }
  if (name == "degenerate-2d") {
    SdeSystem sys;
    sys.model = make_flat(2);
    sys.origin = Vec::Zero(2);
    sys.fields.push_back(PolyVectorField::constant(unit(2, 0)));
    sys.name = name;
    return sys;
  }
  if (name == "grushin") {
    SdeSystem sys;
    sys.model = make_flat(2);
    sys.origin = Vec::Zero(2);
    sys.fields.push_back(PolyVectorField::constant(unit(2, 0)));
    PolyVectorField x2 = PolyVectorField::constant(Vec::Zero(2));
    x2.comps[1] = Polynomial::variable(2, 0);
    sys.fields.push_back(x2);
    sys.name = name;
    return sys;
  }
  if (name == "elliptic-flat") {
    SdeSystem sys;
    sys.model = make_flat(2);
    sys.origin = Vec::Zero(2);
    sys.fields.push_back(PolyVectorField::constant(unit(2, 0)));
    sys.fields.push_back(PolyVectorField::constant(unit(2, 1)));
    sys.name = name;
    return sys;
  }
  if (name == "elliptic-sphere") {
    // X_i = P(m) e_i on the unit 2-sphere; P(x) = I - x x^T is polynomial.
    SdeSystem sys;
    sys.model = make_sphere(3, 1.0);
    Vec o(3);
    o << 0.0, 0.0, 1.0;
    sys.origin = o;
    for (int i = 0; i < 3; ++i) {
      std::vector<Polynomial> comps;
      for (int r = 0; r < 3; ++r) {
        Polynomial p(3);
        if (r == i) p = Polynomial::constant(3, 1.0);
        p = p - Polynomial::variable(3, r) * Polynomial::variable(3, i);
        comps.push_back(p);
      }
      sys.fields.emplace_back(std::move(comps));
    }
    sys.name = name;
    return sys;
  }
  throw std::invalid_argument("unknown builtin system: " + name);
}

}  // namespace geosde
