#pragma once

#include <Eigen/Dense>
#include <functional>
#include <stdexcept>

#include "hdi/mesh.hpp"

namespace hdi {

/// Nodal scalar coefficient (gamma, kappa, sources...). Element-wise linear.
struct ScalarField {
  const Mesh* mesh = nullptr;
  Eigen::VectorXd values;  // one per node

  ScalarField() = default;
  ScalarField(const Mesh& m, double constant)
      : mesh(&m), values(Eigen::VectorXd::Constant(m.node_count(), constant)) {}
  ScalarField(const Mesh& m, Eigen::VectorXd v) : mesh(&m), values(std::move(v)) {
    if (values.size() != m.node_count()) throw std::invalid_argument("ScalarField: size mismatch");
  }
  static ScalarField sample(const Mesh& m,
                            const std::function<double(const Eigen::Vector3d&)>& f);

  double min() const { return values.minCoeff(); }
  /// Throws unless every nodal value >= lower_bound (> 0 coefficients).
  void require_positive(double lower_bound, const char* what) const;
};

/// Nodal symmetric n x n tensor coefficient (the anisotropic conductivity A).
struct TensorField {
  const Mesh* mesh = nullptr;
  // per node, row-major dim*dim entries; symmetry enforced on construction
  Eigen::MatrixXd entries;

  TensorField() = default;
  TensorField(const Mesh& m, const Eigen::MatrixXd& constant_matrix);
  static TensorField sample(const Mesh& m,
                            const std::function<Eigen::MatrixXd(const Eigen::Vector3d&)>& f);
  static TensorField identity(const Mesh& m);

  Eigen::MatrixXd at(int node) const;
  /// Smallest eigenvalue over all nodes (the assembled ellipticity constant).
  double ellipticity() const;
  /// Throws unless ellipticity() >= c0.
  void require_elliptic(double c0) const;
};

/// Values attached to boundary nodes, ordered as mesh.boundary_nodes.
struct BoundaryTrace {
  const Mesh* mesh = nullptr;
  Eigen::VectorXd values;

  BoundaryTrace() = default;
  BoundaryTrace(const Mesh& m, double constant)
      : mesh(&m), values(Eigen::VectorXd::Constant(m.boundary_count(), constant)) {}
  BoundaryTrace(const Mesh& m, Eigen::VectorXd v) : mesh(&m), values(std::move(v)) {
    if (values.size() != m.boundary_count())
      throw std::invalid_argument("BoundaryTrace: size mismatch");
  }
  static BoundaryTrace sample(const Mesh& m,
                              const std::function<double(const Eigen::Vector3d&)>& f);
};

/// Quadrature of a piecewise-linear nodal field over the domain (exact for P1).
double integrate(const ScalarField& field);

/// Facet-wise quadrature of a boundary trace over the whole boundary.
double boundary_integral(const BoundaryTrace& trace);

}  // namespace hdi
