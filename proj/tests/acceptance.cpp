// Acceptance suite: one test case per criterion, each printing a PASS/FAIL
// line with its runtime. Run via `ctest` or directly as ./acceptance_tests.
#include <catch2/catch_amalgamated.hpp>

#include <chrono>
#include <cstdio>
#include <thread>

#include "geosde.hpp"

using namespace geosde;

namespace {

class Timer {
 public:
  Timer() : start_(std::chrono::steady_clock::now()) {}
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_;
};

struct Criterion {
  int id;
  const char* label;
  double budget_s;
  Timer timer;
  bool ok = true;

  Criterion(int id_, const char* label_, double budget)
      : id(id_), label(label_), budget_s(budget) {}

  void expect(bool cond) {
    ok = ok && cond;
    CHECK(cond);
  }

  ~Criterion() {
    const double secs = timer.seconds();
    const bool in_budget = secs < budget_s;
    CHECK(in_budget);
    std::printf("[criterion %02d] %s %s (%.1f s, budget %.0f s)\n", id,
                (ok && in_budget) ? "PASS" : "FAIL", label, secs, budget_s);
    std::fflush(stdout);
  }
};

int acceptance_workers() {
  const unsigned hw = std::thread::hardware_concurrency();
  return static_cast<int>(std::min(8u, hw == 0 ? 1u : hw));
}

McRunOptions mc_opts(long long paths, double dt, std::uint64_t seed) {
  McRunOptions mc;
  mc.n_paths = paths;
  mc.dt = dt;
  mc.seed = seed;
  mc.workers = acceptance_workers();
  return mc;
}

Vec north_pole() {
  Vec o(3);
  o << 0, 0, 1;
  return o;
}

Vec equator_x() {
  Vec o(3);
  o << 1, 0, 0;
  return o;
}

// Piecewise-linear driver with independent clipped-normal slopes per segment.
EuclideanPath random_piecewise_linear(int d, std::size_t segments, double horizon,
                                      NormalSampler& normal) {
  EuclideanPath b;
  b.times.reserve(segments + 1);
  b.values.reserve(segments + 1);
  Vec acc = Vec::Zero(d);
  b.times.push_back(0.0);
  b.values.push_back(acc);
  const double h = horizon / static_cast<double>(segments);
  for (std::size_t k = 1; k <= segments; ++k) {
    Vec slope(d);
    for (int i = 0; i < d; ++i) slope[i] = std::clamp(normal(), -2.0, 2.0);
    acc += h * slope;
    b.times.push_back(static_cast<double>(k) * h);
    b.values.push_back(acc);
  }
  return b;
}

struct MeanStderr {
  double mean = 0.0;
  double se = 0.0;
};

MeanStderr reduce(const std::vector<double>& xs) {
  MeanStderr out;
  const double n = static_cast<double>(xs.size());
  for (double x : xs) out.mean += x;
  out.mean /= n;
  double var = 0.0;
  for (double x : xs) var += (x - out.mean) * (x - out.mean);
  var /= (n - 1.0);
  out.se = std::sqrt(var / n);
  return out;
}

}  // namespace

TEST_CASE("criterion 01: geometry oracles on spheres and the cylinder") {
  Criterion crit(1, "geometry oracles", 5.0);
  NormalSampler normal(101);
  for (const auto& [n, rho] : std::vector<std::pair<int, double>>{{3, 1.0}, {4, 2.0}}) {
    const ManifoldModel sphere = make_sphere(n, rho);
    const double factor = (n - 2) / (rho * rho);
    double worst_curv = 0.0, worst_ric = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
      const Vec m = random_manifold_point(sphere, normal);
      const TangentVector u = random_tangent(sphere, m, normal);
      const TangentVector v = random_tangent(sphere, m, normal);
      const TangentVector w = random_tangent(sphere, m, normal);
      const Vec expect =
          (v.vec.dot(w.vec) * u.vec - u.vec.dot(w.vec) * v.vec) / (rho * rho);
      worst_curv = std::max(worst_curv,
                            (curvature(sphere, u, v, w).vec - expect).norm() /
                                (1.0 + expect.norm()));
      worst_ric = std::max(worst_ric, (ricci(sphere, u).vec - factor * u.vec).norm() /
                                          (1.0 + u.vec.norm()));
    }
    crit.expect(worst_curv <= 1e-8);
    crit.expect(worst_ric <= 1e-8);
  }
  const ManifoldModel cyl = make_cylinder();
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const Vec m = random_manifold_point(cyl, normal);
    const TangentVector u = random_tangent(cyl, m, normal);
    const TangentVector v = random_tangent(cyl, m, normal);
    const TangentVector w = random_tangent(cyl, m, normal);
    worst = std::max(worst, curvature(cyl, u, v, w).vec.norm());
  }
  crit.expect(worst <= 1e-4);
}

TEST_CASE("criterion 02: Bochner-Weitzenboeck residual") {
  Criterion crit(2, "Bochner-Weitzenboeck residual", 5.0);
  const ManifoldModel sphere = make_sphere(3, 1.0);
  NormalSampler normal(202);
  const Polynomial x3 = Polynomial::variable(3, 2);
  const Polynomial x1x2 = Polynomial::variable(3, 0) * Polynomial::variable(3, 1);
  for (const Polynomial& f : {x3, x1x2}) {
    // grad f = (I - x x^T) grad F as an exact polynomial field.
    std::vector<Polynomial> grad_comps;
    for (int r = 0; r < 3; ++r) {
      Polynomial p = f.derivative(r);
      for (int j = 0; j < 3; ++j) {
        p = p - Polynomial::variable(3, r) * Polynomial::variable(3, j) * f.derivative(j);
      }
      grad_comps.push_back(p);
    }
    const PolyVectorField grad_f(grad_comps);
    // Ambient extension of the Laplacian: tr(F'' P) - 2 <grad F, x>.
    Polynomial lap(3);
    for (int i = 0; i < 3; ++i) lap = lap + f.derivative(i).derivative(i);
    for (int i = 0; i < 3; ++i) {
      for (int j = 0; j < 3; ++j) {
        lap = lap - Polynomial::variable(3, i) * Polynomial::variable(3, j) *
                        f.derivative(i).derivative(j);
      }
    }
    for (int i = 0; i < 3; ++i) lap = lap - 2.0 * Polynomial::variable(3, i) * f.derivative(i);
    const ScalarField lap_field = to_scalar_field(sphere, lap);

    double worst = 0.0;
    for (int trial = 0; trial < 50; ++trial) {
      const Vec m = random_manifold_point(sphere, normal);
      const Mat basis = tangent_basis(sphere, m);
      Vec lhs = Vec::Zero(3);
      for (int k = 0; k < 2; ++k) {
        lhs +=
            second_covariant_derivative(sphere, grad_f, {m, basis.col(k)}, basis.col(k)).vec;
      }
      const Vec rhs = gradient(lap_field, m).vec + ricci(sphere, {m, grad_f.eval(m)}).vec;
      worst = std::max(worst, (lhs - rhs).norm());
    }
    crit.expect(worst <= 1e-3);
  }
}

TEST_CASE("criterion 03: parallel transport drift, holonomy, and order") {
  Criterion crit(3, "parallel transport", 10.0);
  const ManifoldModel sphere = make_sphere(3, 1.0);
  TransportOptions no_reorth;
  no_reorth.reorth_every = 0;

  auto arc = [](std::size_t steps, double length) {
    DiscretePath path;
    for (std::size_t k = 0; k <= steps; ++k) {
      const double t = length * static_cast<double>(k) / static_cast<double>(steps);
      path.times.push_back(t);
      Vec p(3), v(3);
      p << std::cos(t), std::sin(t), 0.0;
      v << -std::sin(t), std::cos(t), 0.0;
      path.points.push_back(p);
      path.velocities.push_back(v);
    }
    return path;
  };

  // Unit-length path at step 1e-3 without re-orthogonalization.
  const FramePath frames = parallel_transport(sphere, arc(1000, 1.0), no_reorth);
  crit.expect(orthogonality_drift(frames) <= 1e-8);

  // Latitude loops against the Gauss-Bonnet solid angle.
  for (double phi : {kPi / 6.0, kPi / 3.0, kPi / 2.0}) {
    DiscretePath loop;
    const std::size_t steps = 4000;
    const double r = std::sin(phi), z = std::cos(phi);
    for (std::size_t k = 0; k <= steps; ++k) {
      const double t = 2.0 * kPi * static_cast<double>(k) / static_cast<double>(steps);
      loop.times.push_back(t);
      Vec p(3), v(3);
      p << r * std::cos(t), r * std::sin(t), z;
      v << -r * std::sin(t), r * std::cos(t), 0.0;
      loop.points.push_back(p);
      loop.velocities.push_back(v);
    }
    loop.points.back() = loop.points.front();
    loop.velocities.back() = loop.velocities.front();
    const double angle = holonomy(sphere, loop);
    double expect = std::fmod(2.0 * kPi * (1.0 - std::cos(phi)), 2.0 * kPi);
    if (expect > kPi) expect -= 2.0 * kPi;
    crit.expect(std::abs(std::abs(angle) - std::abs(expect)) <= 1e-5);
  }

  // RK4 order fit on the drift across dyadic refinements.
  std::vector<double> log_h, log_drift;
  for (std::size_t steps : {16, 32, 64, 128}) {
    const FramePath f = parallel_transport(sphere, arc(steps, 1.0), no_reorth);
    log_h.push_back(std::log2(1.0 / static_cast<double>(steps)));
    log_drift.push_back(std::log2(orthogonality_drift(f)));
  }
  crit.expect(fit_slope(log_h, log_drift) >= 3.7);
}

TEST_CASE("criterion 04: development round trip and geodesic closure") {
  Criterion crit(4, "development round trip", 10.0);
  const ManifoldModel sphere = make_sphere(3, 1.0);
  const Vec o = north_pole();
  NormalSampler normal(404);
  for (int trial = 0; trial < 20; ++trial) {
    const EuclideanPath b = random_piecewise_linear(2, 1000, 1.0, normal);
    const DevelopResult dev = develop(sphere, o, b);
    const EuclideanPath back = antidevelop(sphere, dev.path);
    double worst = 0.0;
    for (std::size_t k = 0; k < b.size(); ++k) {
      worst = std::max(worst, (back.values[k] - b.values[k]).lpNorm<Eigen::Infinity>());
    }
    crit.expect(worst <= 1e-5);
  }

  // A straight line of length 2*pi closes the great circle.
  EuclideanPath line;
  const std::size_t steps = static_cast<std::size_t>(std::llround(2.0 * kPi / 1e-3));
  for (std::size_t k = 0; k <= steps; ++k) {
    const double s = 2.0 * kPi * static_cast<double>(k) / static_cast<double>(steps);
    line.times.push_back(s);
    line.values.push_back(s * Vec::Unit(2, 0));
  }
  const DevelopResult dev = develop(sphere, o, line);
  crit.expect((dev.path.points.back() - o).norm() <= 1e-5);
}

TEST_CASE("criterion 05: Brownian motion on the sphere") {
  Criterion crit(5, "sphere Brownian motion", 120.0);
  const ManifoldModel sphere = make_sphere(3, 1.0);
  const double t = 0.5, dt = 1e-3;
  const long long paths = 100000;
  std::vector<double> x3(static_cast<std::size_t>(paths));
  std::vector<double> violation(static_cast<std::size_t>(paths));
  parallel_paths(paths, acceptance_workers(), [&](std::uint64_t idx) {
    const DrivingPath driver = sample_driver(3, t, dt, 505, idx);
    const GeometricPath path = simulate_projection_bm(sphere, north_pole(), driver);
    x3[idx] = path.points.back()[2];
    double worst = 0.0;
    for (const Vec& p : path.points) {
      worst = std::max(worst, sphere.constraint_violation(p));
    }
    violation[idx] = worst;
  });
  const MeanStderr est = reduce(x3);
  crit.expect(std::abs(est.mean - std::exp(-0.5)) <= 3.0 * est.se);
  double worst = 0.0;
  for (double v : violation) worst = std::max(worst, v);
  crit.expect(worst <= 1e-10);
}

TEST_CASE("criterion 06: Wong-Zakai strong order") {
  Criterion crit(6, "Wong-Zakai strong order", 120.0);
  const ManifoldModel sphere = make_sphere(3, 1.0);
  const double horizon = 1.0;
  const int finest_level = 12;
  const std::vector<int> levels{8, 9, 10, 11};
  const int n_paths = 16;

  std::vector<double> sum_err(levels.size(), 0.0);
  for (int p = 0; p < n_paths; ++p) {
    const DrivingPath fine = sample_driver(
        3, horizon, horizon / std::pow(2.0, finest_level), 606, static_cast<std::uint64_t>(p));
    const GeometricPath ref = simulate_projection_bm(sphere, north_pole(), fine);
    for (std::size_t li = 0; li < levels.size(); ++li) {
      const int factor = 1 << (finest_level - levels[li]);
      const DrivingPath coarse = coarsen_driver(fine, factor);
      const GeometricPath sol = simulate_projection_bm(sphere, north_pole(), coarse);
      double sup = 0.0;
      for (std::size_t k = 0; k < sol.size(); ++k) {
        sup = std::max(
            sup, (sol.points[k] - ref.points[k * static_cast<std::size_t>(factor)]).norm());
      }
      sum_err[li] += sup;
    }
  }
  std::vector<double> log_dt, log_err;
  for (std::size_t li = 0; li < levels.size(); ++li) {
    log_dt.push_back(std::log2(horizon / std::pow(2.0, levels[li])));
    log_err.push_back(std::log2(sum_err[li] / n_paths));
  }
  const double gamma = fit_slope(log_dt, log_err);
  crit.expect(gamma >= 0.4);
}

TEST_CASE("criterion 07: Bismut gradient formula") {
  Criterion crit(7, "Bismut gradient", 300.0);

  // Flat case: the gradient of a linear function is exact in expectation.
  {
    const ManifoldModel flat = make_flat(2);
    Vec c(2);
    c << 1.5, -0.5;
    Polynomial lin(2);
    lin = Polynomial::variable(2, 0) * Polynomial::constant(2, c[0]) +
          Polynomial::variable(2, 1) * Polynomial::constant(2, c[1]);
    const ScalarField f = to_scalar_field(flat, lin);
    const McEstimate est =
        bismut_gradient(flat, Vec::Zero(2), f, 0.5, 0.25, mc_opts(20000, 1e-3, 707));
    for (int i = 0; i < 2; ++i) {
      crit.expect(std::abs(est.mean[i] - c[i]) <= 3.0 * est.stderr_of_mean[i]);
    }
  }

  // Sphere: both cutoffs estimate e^{-1/2} e3, and they agree with each other
  // and with a pathwise-paired central finite difference of the heat kernel.
  const ManifoldModel sphere = make_sphere(3, 1.0);
  const Vec o = equator_x();
  const double t = 0.5, dt = 1e-3;
  const long long paths = 200000;
  const Mat basis = tangent_basis(sphere, o);
  const Vec expect_coords = basis.transpose() * (std::exp(-t) * Vec::Unit(3, 2));

  SimOptions sim;
  sim.features.ricci_weight = true;
  sim.features.antidev = true;
  const std::size_t k_half = static_cast<std::size_t>(std::llround(0.25 / dt));
  const std::size_t k_full = static_cast<std::size_t>(std::llround(0.5 / dt));
  std::vector<double> s_half_1(paths), s_half_2(paths), s_full_1(paths), s_full_2(paths);
  parallel_paths(paths, acceptance_workers(), [&](std::uint64_t idx) {
    const DrivingPath driver = sample_driver(3, t, dt, 708, idx);
    const GeometricPath path = simulate_projection_bm(sphere, o, driver, sim);
    Vec acc = Vec::Zero(2);
    Vec i_half = Vec::Zero(2);
    for (std::size_t k = 0; k < k_full; ++k) {
      acc += path.ricci_weight[k] * (path.antidev[k + 1] - path.antidev[k]);
      if (k + 1 == k_half) i_half = acc;
    }
    const double f_end = path.points.back()[2];
    s_half_1[idx] = i_half[0] * f_end / 0.25;
    s_half_2[idx] = i_half[1] * f_end / 0.25;
    s_full_1[idx] = acc[0] * f_end / 0.5;
    s_full_2[idx] = acc[1] * f_end / 0.5;
  });
  const MeanStderr half_1 = reduce(s_half_1), half_2 = reduce(s_half_2);
  const MeanStderr full_1 = reduce(s_full_1), full_2 = reduce(s_full_2);
  crit.expect(std::abs(half_1.mean - expect_coords[0]) <= 3.0 * half_1.se);
  crit.expect(std::abs(half_2.mean - expect_coords[1]) <= 3.0 * half_2.se);
  crit.expect(std::abs(full_1.mean - expect_coords[0]) <= 3.0 * full_1.se);
  crit.expect(std::abs(full_2.mean - expect_coords[1]) <= 3.0 * full_2.se);
  crit.expect(std::abs(half_1.mean - full_1.mean) <=
              3.0 * std::sqrt(half_1.se * half_1.se + full_1.se * full_1.se));
  crit.expect(std::abs(half_2.mean - full_2.mean) <=
              3.0 * std::sqrt(half_2.se * half_2.se + full_2.se * full_2.se));

  // Central finite difference of the heat expectation over shifted origins,
  // pathwise-paired through a common driver.
  const double step = 0.02;
  const Vec dir = Vec::Unit(3, 2);  // toward the pole; tangent at the equator
  const Vec o_plus = sphere.retract(o + step * dir);
  const Vec o_minus = sphere.retract(o - step * dir);
  const long long fd_paths = 100000;
  std::vector<double> fd(fd_paths);
  parallel_paths(fd_paths, acceptance_workers(), [&](std::uint64_t idx) {
    const DrivingPath driver = sample_driver(3, t, dt, 709, idx);
    const GeometricPath plus = simulate_projection_bm(sphere, o_plus, driver);
    const GeometricPath minus = simulate_projection_bm(sphere, o_minus, driver);
    fd[idx] = (plus.points.back()[2] - minus.points.back()[2]) / (2.0 * step);
  });
  const MeanStderr fd_est = reduce(fd);
  // The derivative direction in tangent coordinates is basis^T e3.
  const Vec dir_coords = basis.transpose() * dir;
  const double bismut_dir = full_1.mean * dir_coords[0] + full_2.mean * dir_coords[1];
  const double se_dir = std::sqrt(std::pow(full_1.se * dir_coords[0], 2) +
                                  std::pow(full_2.se * dir_coords[1], 2));
  const double fd_bias = step * step;  // generous O(step^2) allowance
  crit.expect(std::abs(bismut_dir - fd_est.mean) <=
              3.0 * std::sqrt(se_dir * se_dir + fd_est.se * fd_est.se) + fd_bias);
}

TEST_CASE("criterion 08: integration by parts") {
  Criterion crit(8, "integration by parts", 180.0);

  // Flat analogue: both sides equal <c, h(s1)> analytically.
  {
    const ManifoldModel flat = make_flat(2);
    Vec c(2);
    c << 1.0, 2.0;
    const double s1 = 0.5;
    CameronMartinPath h;
    h.value = [](double s) {
      Vec v(2);
      v << s, 0.0;
      return v;
    };
    h.slope = [](double) {
      Vec v(2);
      v << 1.0, 0.0;
      return v;
    };
    CylinderFunction f;
    f.times = {s1};
    f.eval = [c](const std::vector<Vec>& xs) { return c.dot(xs[0]); };
    f.ambient_grad = [c](int, const std::vector<Vec>&) { return c; };
    const McRunOptions mc = mc_opts(100000, 2e-3, 808);
    const McEstimate residual = ibp_residual(flat, Vec::Zero(2), h, f, 1.0, mc);
    crit.expect(std::abs(residual.scalar()) <= 3.0 * residual.scalar_stderr());

    // Each side separately: E[X^h F] = <c, h(s1)> = 0.5.
    const std::size_t k1 = static_cast<std::size_t>(std::llround(s1 / mc.dt));
    std::vector<double> lhs(mc.n_paths), rhs(mc.n_paths);
    SimOptions sim;
    sim.features.antidev = true;
    parallel_paths(mc.n_paths, mc.workers, [&](std::uint64_t idx) {
      const DrivingPath driver = sample_driver(2, 1.0, mc.dt, mc.seed, idx);
      const GeometricPath path = simulate_projection_bm(flat, Vec::Zero(2), driver, sim);
      lhs[idx] = c.dot(h.value(s1));  // exact pathwise: grad f = c, //h = h
      double zh = 0.0;
      for (std::size_t k = 0; k < driver.steps(); ++k) {
        zh += h.slope(driver.time(k)).dot(path.antidev[k + 1] - path.antidev[k]);
      }
      rhs[idx] = c.dot(path.points[k1]) * zh;
    });
    const MeanStderr rhs_est = reduce(rhs);
    const double target = c.dot(h.value(s1));
    crit.expect(lhs[0] == target);
    crit.expect(std::abs(rhs_est.mean - target) <= 3.0 * rhs_est.se);
  }

  // Sphere: h(s) = s e1, F = x3(sigma_1), residual within 3 stderr at 1e5 paths.
  {
    const ManifoldModel sphere = make_sphere(3, 1.0);
    CameronMartinPath h;
    h.value = [](double s) { return Vec(s * Vec::Unit(2, 0)); };
    h.slope = [](double) { return Vec(Vec::Unit(2, 0)); };
    CylinderFunction f;
    f.times = {1.0};
    f.eval = [](const std::vector<Vec>& xs) { return xs[0][2]; };
    f.ambient_grad = [](int, const std::vector<Vec>&) { return Vec(Vec::Unit(3, 2)); };
    const McEstimate residual =
        ibp_residual(sphere, north_pole(), h, f, 1.0, mc_opts(100000, 2e-3, 809));
    crit.expect(std::abs(residual.scalar()) <= 3.0 * residual.scalar_stderr());
  }
}

TEST_CASE("criterion 09: Clark-Ocone representation decay") {
  Criterion crit(9, "Clark-Ocone decay", 120.0);
  const Polynomial x = Polynomial::variable(1, 0);
  const double t = 1.0;
  const std::vector<double> dts{1e-2, 5e-3, 2.5e-3};

  // f = x is represented exactly at every step size.
  for (double dt : dts) {
    const McEstimate est = clark_ocone_check(x, t, mc_opts(2000, dt, 901));
    crit.expect(est.scalar() <= 1e-20);
  }

  // f = x^2 and x^3: defect <= C dt with first-order decay.
  const std::vector<std::pair<Polynomial, double>> cases{{x * x, 4.0}, {x * x * x, 40.0}};
  for (const auto& [f, c_bound] : cases) {
    std::vector<double> log_dt, log_mse;
    for (double dt : dts) {
      const McEstimate est = clark_ocone_check(f, t, mc_opts(20000, dt, 902));
      crit.expect(est.scalar() <= c_bound * dt);
      log_dt.push_back(std::log(dt));
      log_mse.push_back(std::log(est.scalar()));
    }
    const double slope = fit_slope(log_dt, log_mse);
    crit.expect(slope >= 0.8);
    crit.expect(slope <= 1.2);
  }
}

TEST_CASE("criterion 10: Malliavin diagnostics") {
  Criterion crit(10, "Malliavin diagnostics", 180.0);

  // Heisenberg rank table (2, 3), satisfied at level 2.
  {
    const SdeSystem sys = builtin_system("heisenberg");
    const RankReport rank = hormander_rank(bracket_table(sys, 2), sys.model, sys.origin);
    crit.expect(rank.rank_per_level == std::vector<int>{2, 3});
    crit.expect(rank.satisfied && rank.level_achieved == 2);
  }
  // Degenerate system never satisfies the condition up to level 4.
  {
    const SdeSystem sys = builtin_system("degenerate-2d");
    const RankReport rank = hormander_rank(bracket_table(sys, 4), sys.model, sys.origin);
    crit.expect(!rank.satisfied);
  }
  // Elliptic flat covariance is t I exactly.
  {
    const SdeSystem sys = builtin_system("elliptic-flat");
    const DrivingPath driver = sample_driver(2, 1.0, 1e-3, 1001, 0);
    const MalliavinSample s = reduced_covariance(sys, driver, 1.0);
    crit.expect((s.covariance - Mat::Identity(2, 2)).norm() <= 1e-12);
  }
  // Heisenberg tails at t = 1 over 1e4 paths.
  {
    const SdeSystem sys = builtin_system("heisenberg");
    McRunOptions mc = mc_opts(10000, 5e-3, 1002);
    const std::vector<double> epsilons{1e-5, 1e-4, 1e-3, 1e-2, 1e-1};
    const NondegeneracyReport r = nondegeneracy_report(sys, 1.0, mc, epsilons);
    crit.expect(static_cast<double>(r.n_discarded) /
                    static_cast<double>(mc.n_paths) <
                1e-4);
    crit.expect(r.min_eigen_over_paths > 0.0);
    for (std::size_t e = 1; e < r.epsilons.size(); ++e) {
      crit.expect(r.frac_eigen_below[e] >= r.frac_eigen_below[e - 1]);
    }
  }
}

TEST_CASE("criterion 11: byte-identical deterministic reruns") {
  Criterion crit(11, "deterministic reruns", 120.0);
  auto slurp = [](const std::string& path) {
    std::ifstream in(path);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
  };
  const std::vector<std::pair<std::string, std::vector<std::string>>> runs = {
      {"heat",
       {"heat", "--manifold", "sphere:N=3,rho=1", "--t", "0.2", "--dt", "5e-3", "--paths",
        "5000", "--seed", "11"}},
      {"simulate",
       {"simulate", "--manifold", "sphere:N=3,rho=1", "--t", "0.1", "--dt", "1e-2", "--paths",
        "64", "--seed", "12", "--emit", "endpoints"}},
      {"malliavin",
       {"malliavin", "--system", "heisenberg", "--t", "0.5", "--dt", "1e-2", "--paths", "200",
        "--seed", "13", "--epsilons", "1e-3,1e-2,1e-1"}},
  };
  for (const auto& [name, args] : runs) {
    std::vector<std::string> outs;
    std::vector<std::string> workers{"1", "4", "8"};
    for (int i = 0; i < 3; ++i) {
      std::vector<std::string> argv = args;
      const std::string out =
          "/tmp/geosde_acc_" + name + "_" + std::to_string(i) + ".csv";
      argv.insert(argv.end(), {"--out", out, "--workers", workers[static_cast<std::size_t>(i)]});
      REQUIRE(run(parse_config(argv)) == 0);
      outs.push_back(out);
    }
    const std::string a = slurp(outs[0]);
    crit.expect(!a.empty());
    crit.expect(a == slurp(outs[1]));
    crit.expect(a == slurp(outs[2]));
    for (const std::string& out : outs) std::remove(out.c_str());
  }
}
