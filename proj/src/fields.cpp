#include "hdi/fields.hpp"

#include <Eigen/Eigenvalues>
#include <cmath>

namespace hdi {

ScalarField ScalarField::sample(const Mesh& m,
                                const std::function<double(const Eigen::Vector3d&)>& f) {
  Eigen::VectorXd v(m.node_count());
  for (int i = 0; i < m.node_count(); ++i) {
    Eigen::Vector3d x = Eigen::Vector3d::Zero();
    x.head(m.dim) = m.nodes.row(i).transpose();
    v[i] = f(x);
  }
  return ScalarField(m, std::move(v));
}

void ScalarField::require_positive(double lower_bound, const char* what) const {
  if (min() < lower_bound)
    throw std::invalid_argument(std::string(what) + ": nodal values below declared lower bound");
}

TensorField::TensorField(const Mesh& m, const Eigen::MatrixXd& constant_matrix) : mesh(&m) {
  const int d = m.dim;
  if (constant_matrix.rows() != d || constant_matrix.cols() != d)
    throw std::invalid_argument("TensorField: matrix dimension mismatch");
  Eigen::MatrixXd sym = 0.5 * (constant_matrix + constant_matrix.transpose());
  entries.resize(m.node_count(), d * d);
  Eigen::Map<const Eigen::RowVectorXd> row(sym.data(), d * d);
  for (int i = 0; i < m.node_count(); ++i) entries.row(i) = row;
}

TensorField TensorField::sample(const Mesh& m,
                                const std::function<Eigen::MatrixXd(const Eigen::Vector3d&)>& f) {
  TensorField t;
  t.mesh = &m;
  const int d = m.dim;
  t.entries.resize(m.node_count(), d * d);
  for (int i = 0; i < m.node_count(); ++i) {
    Eigen::Vector3d x = Eigen::Vector3d::Zero();
    x.head(d) = m.nodes.row(i).transpose();
    Eigen::MatrixXd a = f(x);
    Eigen::MatrixXd sym = 0.5 * (a + a.transpose());
    t.entries.row(i) = Eigen::Map<const Eigen::RowVectorXd>(sym.data(), d * d);
  }
  return t;
}

TensorField TensorField::identity(const Mesh& m) {
  return TensorField(m, Eigen::MatrixXd::Identity(m.dim, m.dim));
}

Eigen::MatrixXd TensorField::at(int node) const {
  const int d = mesh->dim;
  Eigen::VectorXd row = entries.row(node).transpose();
  return Eigen::Map<const Eigen::MatrixXd>(row.data(), d, d);
}

double TensorField::ellipticity() const {
  double c0 = std::numeric_limits<double>::infinity();
  for (int i = 0; i < mesh->node_count(); ++i) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(at(i));
    c0 = std::min(c0, es.eigenvalues().minCoeff());
  }
  return c0;
}

void TensorField::require_elliptic(double c0) const {
  if (ellipticity() < c0)
    throw std::invalid_argument("TensorField: uniform ellipticity violated");
}

BoundaryTrace BoundaryTrace::sample(const Mesh& m,
                                    const std::function<double(const Eigen::Vector3d&)>& f) {
  Eigen::VectorXd v(m.boundary_count());
  for (int b = 0; b < m.boundary_count(); ++b) {
    Eigen::Vector3d x = Eigen::Vector3d::Zero();
    x.head(m.dim) = m.nodes.row(m.boundary_nodes[b]).transpose();
    v[b] = f(x);
  }
  return BoundaryTrace(m, std::move(v));
}

double integrate(const ScalarField& field) {
  const Mesh& m = *field.mesh;
  double s = 0;
  const int nv = m.verts_per_element();
  for (int e = 0; e < m.element_count(); ++e) {
    double mean = 0;
    for (int v = 0; v < nv; ++v) mean += field.values[m.elements[e][v]];
    s += m.element_volume(e) * mean / nv;
  }
  return s;
}

double boundary_integral(const BoundaryTrace& trace) {
  const Mesh& m = *trace.mesh;
  double s = 0;
  for (const auto& f : m.boundary_facets) {
    double mean = 0;
    for (int i = 0; i < m.dim; ++i) mean += trace.values[m.boundary_index[f.nodes[i]]];
    s += f.measure * mean / m.dim;
  }
  return s;
}

}  // namespace hdi
