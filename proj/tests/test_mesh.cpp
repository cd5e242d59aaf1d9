#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "hdi/fields.hpp"
#include "hdi/mesh.hpp"

using namespace hdi;

TEST_CASE("box mesh 2x2 counts") {
  Mesh m = build_box_mesh(2, {1, 1}, {2, 2});
  CHECK(m.node_count() == 9);
  CHECK(m.element_count() == 8);
  CHECK(m.total_volume() == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(m.boundary_count() == 8);
  CHECK(m.interior_count() == 1);
}

TEST_CASE("box mesh 3d volume") {
  Mesh m = build_box_mesh(3, {1, 1, 1}, {2, 2, 2});
  CHECK(m.total_volume() == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(m.boundary_measure() == doctest::Approx(6.0).epsilon(1e-12));
}

TEST_CASE("boundary node count at 64x64") {
  Mesh m = build_box_mesh(2, {1, 1}, {64, 64});
  CHECK(m.boundary_count() == 256);
}

TEST_CASE("rejects degenerate divisions") {
  CHECK_THROWS(build_box_mesh(2, {1, 1}, {1, 2}));
  CHECK_THROWS(build_box_mesh(2, {1, 0}, {2, 2}));
}

TEST_CASE("boundary normals are unit and outward") {
  for (const Mesh& m : {build_box_mesh(2, {1, 1}, {4, 4}), build_box_mesh(3, {1, 1, 1}, {3, 3, 3})}) {
    for (const auto& f : m.boundary_facets) {
      CHECK(std::abs(f.normal.norm() - 1.0) < 1e-12);
      Eigen::Vector3d centroid = Eigen::Vector3d::Zero();
      for (int i = 0; i < m.dim; ++i) centroid.head(m.dim) += m.nodes.row(f.nodes[i]).transpose();
      centroid /= m.dim;
      Eigen::Vector3d interior = Eigen::Vector3d::Zero();
      interior.head(m.dim).setConstant(0.5);
      CHECK(f.normal.dot(centroid - interior) > 0);
    }
  }
}

TEST_CASE("disk mesh approximates the unit disk") {
  Mesh m = build_disk_mesh(32);
  CHECK(m.total_volume() == doctest::Approx(M_PI).epsilon(5e-3));
  CHECK(m.boundary_measure() == doctest::Approx(2 * M_PI).epsilon(5e-3));
  for (int b : m.boundary_nodes)
    CHECK(m.nodes.row(b).norm() == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("integrate: constants and linears") {
  Mesh m = build_box_mesh(2, {1, 1}, {8, 8});
  CHECK(integrate(ScalarField(m, 1.0)) == doctest::Approx(1.0).epsilon(1e-12));
  auto x1 = ScalarField::sample(m, [](const Eigen::Vector3d& x) { return x[0]; });
  CHECK(integrate(x1) == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("integrate: sin*sin on 64x64") {
  Mesh m = build_box_mesh(2, {1, 1}, {64, 64});
  auto f = ScalarField::sample(
      m, [](const Eigen::Vector3d& x) { return std::sin(M_PI * x[0]) * std::sin(M_PI * x[1]); });
  CHECK(std::abs(integrate(f) - 4.0 / (M_PI * M_PI)) < 2e-3);
}

TEST_CASE("boundary_integral: perimeter, normal component, linear trace") {
  Mesh m = build_box_mesh(2, {1, 1}, {16, 16});
  CHECK(boundary_integral(BoundaryTrace(m, 1.0)) == doctest::Approx(4.0).epsilon(1e-12));
  auto x1 = BoundaryTrace::sample(m, [](const Eigen::Vector3d& x) { return x[0]; });
  CHECK(boundary_integral(x1) == doctest::Approx(2.0).epsilon(1e-12));

  // nu_1 integrated over the boundary vanishes; assemble facet-wise
  double s = 0;
  for (const auto& f : m.boundary_facets) s += f.measure * f.normal[0];
  CHECK(std::abs(s) < 1e-12);
}

TEST_CASE("quadrature refinement order") {
  auto f = [](const Eigen::Vector3d& x) {
    return std::exp(x[0]) * std::cos(2 * x[1]);
  };
  double exact = (std::exp(1.0) - 1.0) * 0.5 * std::sin(2.0);
  std::vector<double> errs;
  for (int n : {8, 16, 32, 64}) {
    Mesh m = build_box_mesh(2, {1, 1}, {n, n});
    errs.push_back(std::abs(integrate(ScalarField::sample(m, f)) - exact));
  }
  for (size_t i = 0; i + 1 < errs.size(); ++i) {
    double slope = std::log2(errs[i] / errs[i + 1]);
    CHECK(slope == doctest::Approx(2.0).epsilon(0.15));
  }
}

TEST_CASE("tensor field validation") {
  Mesh m = build_box_mesh(2, {1, 1}, {4, 4});
  Eigen::MatrixXd A(2, 2);
  A << 4, 0, 0, 1;
  TensorField t(m, A);
  CHECK(t.ellipticity() == doctest::Approx(1.0).epsilon(1e-12));
  Eigen::MatrixXd bad(2, 2);
  bad << 1, 2, 2, 1;
  CHECK_THROWS(TensorField(m, bad).require_elliptic(0.1));
}
