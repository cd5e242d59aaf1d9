#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>
#include <vector>

#include "hdi/cgo.hpp"
#include "hdi/elliptic.hpp"

using namespace hdi;

namespace {

double gamma_bump(const Eigen::Vector3d& x) {
  Eigen::Vector3d c(0.5, 0.5, 0.5);
  double s2 = (x - c).squaredNorm() / (0.35 * 0.35);
  return s2 < 1.0 ? 1.0 + 0.5 * std::exp(-1.0 / (1.0 - s2)) : 1.0;
}

PeriodicField unit_cube_extension(const std::function<double(const Eigen::Vector3d&)>& g,
                                  int grid) {
  return extend_gamma(g, Eigen::Vector3d::Zero(), Eigen::Vector3d::Ones(), 2.0, grid);
}

}  // namespace

TEST_CASE("phase pair for xi=(2,0,0) reproduces the t=1 construction") {
  // R=1 forces the minimal t=1 branch
  CgoPhasePair p = make_phase_pair(Eigen::Vector3d(2, 0, 0), 1.0);
  CHECK(p.t == doctest::Approx(1.0).epsilon(1e-14));
  CHECK(std::abs(p.rho1(0) - Complex(1, 0)) < 1e-14);
  CHECK(std::abs(p.rho1(1) - Complex(1, 0)) < 1e-14);
  CHECK(std::abs(p.rho1(2) - Complex(0, std::sqrt(2.0))) < 1e-14);
  CHECK(p.symbol_defect() < 1e-12);
  CHECK((p.rho1 + p.rho2 - Eigen::Vector3d(2, 0, 0).cast<Complex>()).norm() < 1e-12);
}

TEST_CASE("phase pair magnitude floor") {
  CgoPhasePair p = make_phase_pair(Eigen::Vector3d(1, 1, 0), 50.0);
  CHECK(p.rho1.norm() >= 50.0 - 1e-9);
  CHECK(p.rho2.norm() >= 50.0 - 1e-9);
  CHECK(p.symbol_defect() < 1e-12);
  CHECK((p.rho1 + p.rho2 - Eigen::Vector3d(1, 1, 0).cast<Complex>()).norm() < 1e-12);
}

TEST_CASE("phase pair invariants over randomized directions") {
  std::mt19937 rng(20260823u);
  std::uniform_real_distribution<double> coord(-3.0, 3.0), mag(1.0, 100.0);
  for (int trial = 0; trial < 25; ++trial) {
    Eigen::Vector3d xi(coord(rng), coord(rng), coord(rng));
    if (xi.norm() < 1e-3) continue;
    double R = mag(rng);
    CgoPhasePair p = make_phase_pair(xi, R);
    CHECK(p.symbol_defect() < 1e-12 * std::max(1.0, p.rho1.squaredNorm()));
    CHECK((p.rho1 + p.rho2 - xi.cast<Complex>()).norm() < 1e-12 * std::max(1.0, R));
    CHECK(p.rho1.norm() >= R - 1e-9);
  }
  CHECK_THROWS(make_phase_pair(Eigen::Vector3d::Zero(), 10.0));
  CHECK_THROWS(make_phase_pair(Eigen::Vector3d(1, 0, 0), 0.0));
}

TEST_CASE("constant gamma extends to the same constant") {
  PeriodicField f = unit_cube_extension([](const Eigen::Vector3d&) { return 2.5; }, 16);
  CHECK((f.values.array() - 2.5).abs().maxCoeff() < 1e-14);
  CHECK(f.min_value() == doctest::Approx(2.5).epsilon(1e-14));
}

TEST_CASE("extension equals gamma on the domain and stays positive") {
  PeriodicField f = unit_cube_extension(gamma_bump, 24);
  int checked = 0;
  for (int k = 0; k < f.n; ++k)
    for (int j = 0; j < f.n; ++j)
      for (int i = 0; i < f.n; ++i) {
        Eigen::Vector3d x = f.point(i, j, k);
        if (!f.in_omega(x)) continue;
        CHECK(f.values[f.index(i, j, k)] == doctest::Approx(gamma_bump(x)).epsilon(1e-13));
        ++checked;
      }
  CHECK(checked > 100);
  // the extension never undershoots the domain minimum or the face constant
  CHECK(f.min_value() >= 1.0 - 1e-12);
  CHECK_THROWS(extend_gamma(gamma_bump, Eigen::Vector3d::Zero(), Eigen::Vector3d::Ones(),
                            0.4, 16));
}

TEST_CASE("nodal field extension matches a linear coefficient exactly") {
  Mesh m = build_box_mesh(3, {1, 1, 1}, {8, 8, 8});
  auto lin = [](const Eigen::Vector3d& x) { return 1.0 + 0.3 * x[0] + 0.2 * x[1] - 0.1 * x[2]; };
  ScalarField g = ScalarField::sample(m, lin);
  PeriodicField f = extend_gamma(g, 2.0, 20);
  double worst = 0;
  for (int k = 0; k < f.n; ++k)
    for (int j = 0; j < f.n; ++j)
      for (int i = 0; i < f.n; ++i) {
        Eigen::Vector3d x = f.point(i, j, k);
        if (!f.in_omega(x)) continue;
        worst = std::max(worst, std::abs(f.values[f.index(i, j, k)] - lin(x)));
      }
  CHECK(worst < 1e-10);
}

TEST_CASE("constant gamma gives zero remainder exactly") {
  PeriodicField f = unit_cube_extension([](const Eigen::Vector3d&) { return 1.0; }, 16);
  CgoSolution sol = solve_remainder(f, make_phase_pair(Eigen::Vector3d(2, 0, 0), 20.0));
  CHECK(sol.r.norm() < 1e-12);
  CHECK(sol.r_norm_omega < 1e-12);
  CHECK(sol.pde_residual < 1e-10);
}

TEST_CASE("remainder decays like 1/|rho| with small conductivity residual") {
  PeriodicField f = unit_cube_extension(gamma_bump, 48);
  Eigen::Vector3d xi(M_PI, 0, 0);
  std::vector<double> logs_rho, logs_r;
  for (double R : {20.0, 40.0, 80.0, 160.0}) {
    CgoSolution sol = solve_remainder_safe(f, xi, R);
    CHECK(sol.pde_residual < 1e-6);
    CHECK(sol.fixed_point_residual < 1e-10);
    logs_rho.push_back(std::log(sol.phase.rho1.norm()));
    logs_r.push_back(std::log(sol.r_norm_omega));
  }
  // least-squares slope on log-log
  double mx = 0, my = 0, sxx = 0, sxy = 0;
  int n = static_cast<int>(logs_rho.size());
  for (int i = 0; i < n; ++i) { mx += logs_rho[i] / n; my += logs_r[i] / n; }
  for (int i = 0; i < n; ++i) {
    sxx += (logs_rho[i] - mx) * (logs_rho[i] - mx);
    sxy += (logs_rho[i] - mx) * (logs_r[i] - my);
  }
  double slope = sxy / sxx;
  CHECK(slope == doctest::Approx(-1.0).epsilon(0.2));
  // |rho| * ||r|| stays bounded over the sweep
  double bound0 = std::exp(logs_rho[0] + logs_r[0]);
  for (int i = 1; i < n; ++i)
    CHECK(std::exp(logs_rho[i] + logs_r[i]) < 3.0 * bound0);
}

TEST_CASE("remainder solves for both phases of a pair") {
  PeriodicField f = unit_cube_extension(gamma_bump, 32);
  CgoSolution s1 = solve_remainder_safe(f, Eigen::Vector3d(M_PI, M_PI, 0), 25.0, false);
  CgoSolution s2 = solve_remainder_safe(f, Eigen::Vector3d(M_PI, M_PI, 0), 25.0, true);
  CHECK(s1.pde_residual < 1e-6);
  CHECK(s2.pde_residual < 1e-6);
  CHECK(s1.r_norm_omega > 0);
  Eigen::VectorXcd prod = cgo_product(f, s1, s2);
  // leading order: gamma grad w1 . grad w2 ~ -(|xi|^2/2) e^{i xi.x}, |.| constant
  double expected = 0.5 * Eigen::Vector3d(M_PI, M_PI, 0).squaredNorm();
  double lo = 1e300, hi = 0;
  for (int k = 0; k < f.n; ++k)
    for (int j = 0; j < f.n; ++j)
      for (int i = 0; i < f.n; ++i)
        if (f.in_omega(f.point(i, j, k))) {
          double v = std::abs(prod[f.index(i, j, k)]);
          lo = std::min(lo, v);
          hi = std::max(hi, v);
        }
  CHECK(lo > 0.5 * expected);
  CHECK(hi < 2.0 * expected);
}

TEST_CASE("product identity vanishes for constant and linear solutions") {
  Mesh m = build_box_mesh(2, {1, 1}, {32, 32});
  ScalarField one(m, 1.0);
  ScalarField w1(m, 3.0), w2(m, -2.0);
  CHECK(product_identity_check(one, w1, w2) == 0.0);
  ScalarField x1 = ScalarField::sample(m, [](const Eigen::Vector3d& x) { return x[0]; });
  ScalarField x2 = ScalarField::sample(m, [](const Eigen::Vector3d& x) { return x[1]; });
  CHECK(product_identity_check(one, x1, x2) < 5e-3);
}

TEST_CASE("product identity for conductivity solutions under refinement") {
  double prev = 0;
  for (int div : {32, 64}) {
    Mesh m = build_box_mesh(2, {1, 1}, {div, div});
    ScalarField g = ScalarField::sample(m, [](const Eigen::Vector3d& x) { return 1.0 + x[0]; });
    BoundaryTrace h1 = BoundaryTrace::sample(m, [](const Eigen::Vector3d& x) { return x[0]; });
    BoundaryTrace h2 = BoundaryTrace::sample(m, [](const Eigen::Vector3d& x) {
      return x[1] + 0.5 * x[0] * x[1];
    });
    ScalarField w1 = solve_conductivity(g, h1);
    ScalarField w2 = solve_conductivity(g, h2);
    double disc = product_identity_check(g, w1, w2);
    if (div == 64) {
      CHECK(disc < 5e-3);
      CHECK(disc < prev);
    }
    prev = disc;
  }
}

TEST_CASE("density rank: trivial one-dimensional cases") {
  // constant probe against a one-dimensional basis
  Eigen::MatrixXcd M(1, 1);
  M(0, 0) = 1.0;
  Eigen::JacobiSVD<Eigen::MatrixXcd> svd(M);
  CHECK(svd.singularValues()(0) > 0);

  // repeated probe rows collapse to rank 1
  Eigen::MatrixXcd rep(3, 2);
  rep.row(0) << Complex(1, 0.5), Complex(0, -2);
  rep.row(1) = rep.row(0);
  rep.row(2) = rep.row(0);
  Eigen::JacobiSVD<Eigen::MatrixXcd> rsvd(rep);
  CHECK(rsvd.singularValues()(1) < 1e-8 * rsvd.singularValues()(0));

  Mesh m = build_box_mesh(2, {1, 1}, {24, 24});
  RankReport single = density_gram_test_2d(m, 1, 1);
  CHECK(single.rank == 1);
}

TEST_CASE("density rank in 2D reaches the basis dimension") {
  Mesh m = build_box_mesh(2, {1, 1}, {32, 32});
  RankReport rep = density_gram_test_2d(m, 40, 10);
  CHECK(rep.rank == 10);
  CHECK(rep.singular_values(9) / rep.singular_values(0) >= 1e-6);
}

TEST_CASE("density rank with CGO probe products") {
  PeriodicField f = unit_cube_extension([](const Eigen::Vector3d&) { return 1.0; }, 32);
  RankReport rep = density_gram_test(f, 40, 10);
  CHECK(rep.rank == 10);
  CHECK(rep.singular_values(9) / rep.singular_values(0) >= 1e-6);
  CHECK_THROWS(density_gram_test(f, 4, 10));
}
