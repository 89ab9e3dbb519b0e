#include <catch2/catch_amalgamated.hpp>

#include "geosde/estimators.hpp"
#include "geosde/malliavin.hpp"

using namespace geosde;

namespace {

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

McRunOptions quick_mc(long long paths, double dt, std::uint64_t seed) {
  McRunOptions mc;
  mc.n_paths = paths;
  mc.dt = dt;
  mc.seed = seed;
  mc.workers = 2;
  return mc;
}

}  // namespace

TEST_CASE("heat expectation on the flat line recovers the Gaussian variance") {
  const ManifoldModel flat = make_flat(1);
  const Polynomial x = Polynomial::variable(1, 0);
  const ScalarField f = to_scalar_field(flat, x * x);
  const McEstimate est = heat_expectation(flat, Vec::Zero(1), f, 0.7, quick_mc(4000, 5e-3, 7));
  CHECK(std::abs(est.scalar() - 0.7) <= 3.0 * est.scalar_stderr());
}

TEST_CASE("heat expectation of a constant is exact with zero spread") {
  const ManifoldModel sphere = make_sphere(3, 1.0);
  ScalarField one;
  one.model = &sphere;
  one.eval = [](const Vec&) { return 1.0; };
  one.ambient_gradient = [](const Vec& m) { return Vec(Vec::Zero(m.size())); };
  one.ambient_hessian = [](const Vec&, const Vec&, const Vec&) { return 0.0; };
  const McEstimate est = heat_expectation(sphere, north_pole(), one, 0.3, quick_mc(500, 5e-3, 3));
  CHECK(est.scalar() == 1.0);
  CHECK(est.scalar_stderr() == 0.0);
}

TEST_CASE("heat expectation on the sphere decays the coordinate eigenfunction") {
  const ManifoldModel sphere = make_sphere(3, 1.0);
  const ScalarField f = coordinate_field(sphere, 2);
  const double t = 0.25;
  const McEstimate est =
      heat_expectation(sphere, north_pole(), f, t, quick_mc(20000, 2e-3, 11));
  CHECK(std::abs(est.scalar() - std::exp(-t)) <= 3.0 * est.scalar_stderr());
}

TEST_CASE("Bismut gradient on the flat model recovers a linear function's slope") {
  const ManifoldModel flat = make_flat(2);
  Vec c(2);
  c << 1.5, -0.5;
  Polynomial lin(2);
  lin = Polynomial::variable(2, 0) * Polynomial::constant(2, c[0]) +
        Polynomial::variable(2, 1) * Polynomial::constant(2, c[1]);
  const ScalarField f = to_scalar_field(flat, lin);
  const McEstimate est =
      bismut_gradient(flat, Vec::Zero(2), f, 0.5, 0.25, quick_mc(20000, 5e-3, 19));
  for (int i = 0; i < 2; ++i) {
    CHECK(std::abs(est.mean[i] - c[i]) <= 3.0 * est.stderr_of_mean[i]);
  }
}

TEST_CASE("Bismut gradient on the sphere matches the eigenfunction decay") {
  const ManifoldModel sphere = make_sphere(3, 1.0);
  const ScalarField f = coordinate_field(sphere, 2);
  const double t = 0.2, t0 = 0.1;
  const McEstimate est =
      bismut_gradient(sphere, equator_x(), f, t, t0, quick_mc(20000, 2e-3, 23));
  // grad(e^{t Delta/2} x3) at (1,0,0) is e^{-t} e3; express in the basis.
  const Vec expect_ambient = std::exp(-t) * Vec::Unit(3, 2);
  const Vec expect = est.basis.transpose() * expect_ambient;
  for (int i = 0; i < 2; ++i) {
    CHECK(std::abs(est.mean[i] - expect[i]) <= 3.0 * est.stderr_of_mean[i]);
  }
}

TEST_CASE("Bismut estimates at different cutoffs agree") {
  const ManifoldModel sphere = make_sphere(3, 1.0);
  const ScalarField f = coordinate_field(sphere, 2);
  const double t = 0.2;
  const McEstimate a =
      bismut_gradient(sphere, equator_x(), f, t, 0.1, quick_mc(20000, 2e-3, 29));
  const McEstimate b =
      bismut_gradient(sphere, equator_x(), f, t, 0.2, quick_mc(20000, 2e-3, 31));
  for (int i = 0; i < 2; ++i) {
    const double combined =
        std::sqrt(a.stderr_of_mean[i] * a.stderr_of_mean[i] +
                  b.stderr_of_mean[i] * b.stderr_of_mean[i]);
    CHECK(std::abs(a.mean[i] - b.mean[i]) <= 3.0 * combined);
  }
}

TEST_CASE("Elworthy-Li on the flat projection system reduces to Bismut") {
  const ManifoldModel flat = make_flat(2);
  Vec c(2);
  c << 0.8, -1.2;
  Polynomial lin(2);
  lin = Polynomial::variable(2, 0) * Polynomial::constant(2, c[0]) +
        Polynomial::variable(2, 1) * Polynomial::constant(2, c[1]);
  const ScalarField f = to_scalar_field(flat, lin);
  const SdeSystem sys = projection_system(flat, Vec::Zero(2));
  const Vec v = Vec::Unit(2, 0);
  const McEstimate est = elworthy_li_gradient(sys, v, f, 0.5, 0.25, quick_mc(20000, 5e-3, 37));
  CHECK(std::abs(est.scalar() - c[0]) <= 3.0 * est.scalar_stderr());
}

TEST_CASE("Elworthy-Li agrees with Bismut on the sphere with shared drivers") {
  const ManifoldModel sphere = make_sphere(3, 1.0);
  const ScalarField f = coordinate_field(sphere, 2);
  const double t = 0.2, t0 = 0.2;
  const McRunOptions mc = quick_mc(20000, 2e-3, 41);
  const SdeSystem sys = projection_system(sphere, equator_x());
  const Mat basis = tangent_basis(sphere, equator_x());

  const McEstimate bis = bismut_gradient(sphere, equator_x(), f, t, t0, mc);
  for (int j = 0; j < 2; ++j) {
    const McEstimate el = elworthy_li_gradient(sys, basis.col(j), f, t, t0, mc);
    const double combined = std::sqrt(el.scalar_stderr() * el.scalar_stderr() +
                                      bis.stderr_of_mean[j] * bis.stderr_of_mean[j]);
    CHECK(std::abs(el.scalar() - bis.mean[j]) <= 3.0 * combined);
  }
}

TEST_CASE("Elworthy-Li supports general polynomial systems on flat models") {
  // Coordinate fields: identical in law to the flat projection system.
  SdeSystem sys = builtin_system("elliptic-flat");
  Vec c(2);
  c << 0.8, -1.2;
  Polynomial lin(2);
  lin = Polynomial::variable(2, 0) * Polynomial::constant(2, c[0]) +
        Polynomial::variable(2, 1) * Polynomial::constant(2, c[1]);
  const ScalarField f = to_scalar_field(sys.model, lin);
  const McEstimate est = elworthy_li_gradient(sys, Vec::Unit(2, 1), f, 0.4, 0.4,
                                              quick_mc(20000, 5e-3, 43));
  CHECK(std::abs(est.scalar() - c[1]) <= 3.0 * est.scalar_stderr());
}

TEST_CASE("Elworthy-Li scales linearly in f per path") {
  const ManifoldModel sphere = make_sphere(3, 1.0);
  const ScalarField f = coordinate_field(sphere, 2);
  ScalarField f2 = f;
  f2.eval = [](const Vec& m) { return 2.0 * m[2]; };
  const SdeSystem sys = projection_system(sphere, equator_x());
  const Vec v = tangent_basis(sphere, equator_x()).col(0);
  const McRunOptions mc = quick_mc(500, 5e-3, 47);
  const McEstimate a = elworthy_li_gradient(sys, v, f, 0.2, 0.2, mc);
  const McEstimate b = elworthy_li_gradient(sys, v, f2, 0.2, 0.2, mc);
  CHECK(b.scalar() == Catch::Approx(2.0 * a.scalar()).margin(1e-12));
}

TEST_CASE("integration by parts with zero direction vanishes identically") {
  const ManifoldModel sphere = make_sphere(3, 1.0);
  CameronMartinPath h;
  h.value = [](double) { return Vec(Vec::Zero(2)); };
  h.slope = [](double) { return Vec(Vec::Zero(2)); };
  CylinderFunction f;
  f.times = {1.0};
  f.eval = [](const std::vector<Vec>& xs) { return xs[0][2]; };
  f.ambient_grad = [](int, const std::vector<Vec>&) { return Vec(Vec::Unit(3, 2)); };
  const McEstimate est =
      ibp_residual(sphere, north_pole(), h, f, 1.0, quick_mc(200, 1e-2, 53));
  CHECK(est.scalar() == 0.0);
  CHECK(est.scalar_stderr() == 0.0);
}

TEST_CASE("flat integration by parts matches the Ito isometry") {
  const ManifoldModel flat = make_flat(2);
  Vec c(2);
  c << 1.0, 2.0;
  const double s1 = 0.5;
  CameronMartinPath h;
  h.value = [](double s) {
    Vec v(2);
    v << s, -0.5 * s;
    return v;
  };
  h.slope = [](double) {
    Vec v(2);
    v << 1.0, -0.5;
    return v;
  };
  CylinderFunction f;
  f.times = {s1};
  f.eval = [c](const std::vector<Vec>& xs) { return c.dot(xs[0]); };
  f.ambient_grad = [c](int, const std::vector<Vec>&) { return c; };
  const McRunOptions mc = quick_mc(20000, 5e-3, 59);
  const McEstimate est = ibp_residual(flat, Vec::Zero(2), h, f, 1.0, mc);
  CHECK(std::abs(est.scalar()) <= 3.0 * est.scalar_stderr());
}

TEST_CASE("sphere integration by parts residual is statistically zero") {
  const ManifoldModel sphere = make_sphere(3, 1.0);
  CameronMartinPath h;
  h.value = [](double s) { return Vec(s * Vec::Unit(2, 0)); };
  h.slope = [](double) { return Vec(Vec::Unit(2, 0)); };
  CylinderFunction f;
  f.times = {1.0};
  f.eval = [](const std::vector<Vec>& xs) { return xs[0][2]; };
  f.ambient_grad = [](int, const std::vector<Vec>&) { return Vec(Vec::Unit(3, 2)); };
  const McRunOptions mc = quick_mc(20000, 5e-3, 61);
  const McEstimate est = ibp_residual(sphere, north_pole(), h, f, 1.0, mc);
  CHECK(std::abs(est.scalar()) <= 3.0 * est.scalar_stderr());

  // The alternate weight variant must run and produce a different divergence
  // on curved models.
  const McEstimate variant = ibp_residual(sphere, north_pole(), h, f, 1.0, mc,
                                          IbpWeight::ricci_times_h_slope);
  CHECK(variant.scalar() != est.scalar());
}

TEST_CASE("Clark-Ocone representation defects") {
  const Polynomial x = Polynomial::variable(1, 0);
  const double t = 1.0;

  // f = x: the representation is exact on the grid.
  const McEstimate lin = clark_ocone_check(x, t, quick_mc(500, 1e-2, 67));
  CHECK(lin.scalar() < 1e-20);

  // f = x^2: defect = sum((dB)^2 - dt) has mean squared value 2 T dt.
  const McRunOptions mc = quick_mc(20000, 1e-2, 71);
  const McEstimate sq = clark_ocone_check(x * x, t, mc);
  CHECK(std::abs(sq.scalar() - 2.0 * t * mc.dt) <= 3.0 * sq.scalar_stderr());

  // f = x^3: defect shrinks linearly with the step.
  const McEstimate c1 = clark_ocone_check(x * x * x, t, quick_mc(8000, 1e-2, 73));
  const McEstimate c2 = clark_ocone_check(x * x * x, t, quick_mc(8000, 2.5e-3, 73));
  CHECK(c2.scalar() < 0.5 * c1.scalar());
}

TEST_CASE("antithetic pairing cancels odd functionals exactly") {
  const ManifoldModel flat = make_flat(1);
  const ScalarField f = coordinate_field(flat, 0);
  McRunOptions mc = quick_mc(2000, 5e-3, 79);
  mc.antithetic = true;
  const McEstimate est = heat_expectation(flat, Vec::Zero(1), f, 0.5, mc);
  CHECK(std::abs(est.scalar()) < 1e-15);
}

TEST_CASE("estimates are bit-identical across worker counts") {
  const ManifoldModel sphere = make_sphere(3, 1.0);
  const ScalarField f = coordinate_field(sphere, 2);
  McRunOptions mc = quick_mc(2000, 5e-3, 83);
  mc.workers = 1;
  const McEstimate a = heat_expectation(sphere, north_pole(), f, 0.2, mc);
  mc.workers = 4;
  const McEstimate b = heat_expectation(sphere, north_pole(), f, 0.2, mc);
  CHECK(a.mean[0] == b.mean[0]);
  CHECK(a.stderr_of_mean[0] == b.stderr_of_mean[0]);
}

TEST_CASE("Cameron-Martin shifted drivers tilt expectations as Girsanov predicts") {
  // For linear F = <c, b_{s1}> the shifted-path expectation is <c, h(s1)>.
  const ManifoldModel flat = make_flat(2);
  Vec c(2);
  c << 2.0, -1.0;
  const double s1 = 0.5;
  Vec dir(2);
  dir << 1.0, 0.5;
  const CameronMartinShift shift = [dir](double s) { return Vec(s * dir); };
  const double dt = 5e-3;
  const std::size_t k1 = static_cast<std::size_t>(std::llround(s1 / dt));
  std::vector<double> samples;
  for (std::uint64_t p = 0; p < 4000; ++p) {
    const DrivingPath driver = sample_driver(2, 1.0, dt, 89, p, shift);
    const auto b = driver.cumulative();
    samples.push_back(c.dot(b[k1]));
  }
  double mean = 0.0;
  for (double x : samples) mean += x;
  mean /= static_cast<double>(samples.size());
  double var = 0.0;
  for (double x : samples) var += (x - mean) * (x - mean);
  var /= static_cast<double>(samples.size() - 1);
  const double se = std::sqrt(var / static_cast<double>(samples.size()));
  const double target = c.dot(s1 * dir);
  CHECK(std::abs(mean - target) <= 3.0 * se);
}

TEST_CASE("estimator input validation") {
  const ManifoldModel sphere = make_sphere(3, 1.0);
  const ScalarField f = coordinate_field(sphere, 2);
  CHECK_THROWS_AS(heat_expectation(sphere, north_pole(), f, -1.0, quick_mc(10, 1e-2, 0)),
                  std::invalid_argument);
  CHECK_THROWS_AS(
      bismut_gradient(sphere, north_pole(), f, 0.5, 0.7, quick_mc(10, 1e-2, 0)),
      std::invalid_argument);
  const SdeSystem sys = projection_system(sphere, north_pole());
  CHECK_THROWS_AS(
      elworthy_li_gradient(sys, Vec::Unit(3, 0), f, 0.5, 0.7, quick_mc(10, 1e-2, 0)),
      std::invalid_argument);
}
