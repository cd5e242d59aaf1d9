#include "hdi/mesh.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

namespace hdi {

double simplex_volume(const Eigen::MatrixXd& verts) {
  const int d = static_cast<int>(verts.cols());
  Eigen::MatrixXd edges(d, d);
  for (int i = 0; i < d; ++i) edges.row(i) = verts.row(i + 1) - verts.row(0);
  double det = edges.determinant();
  double fact = (d == 2) ? 2.0 : 6.0;
  return det / fact;
}

namespace {

Eigen::MatrixXd element_vertices(const Mesh& m, int e) {
  const int nv = m.dim + 1;
  Eigen::MatrixXd verts(nv, m.dim);
  for (int v = 0; v < nv; ++v) verts.row(v) = m.nodes.row(m.elements[e][v]);
  return verts;
}

}  // namespace

double Mesh::element_volume(int e) const {
  return std::abs(simplex_volume(element_vertices(*this, e)));
}

Eigen::Vector3d Mesh::basis_gradient(int e, int v) const {
  // gradient of P1 basis = row of the inverse edge matrix
  const int nv = dim + 1;
  Eigen::MatrixXd edges(dim, dim);
  for (int i = 0; i < dim; ++i)
    edges.row(i) = nodes.row(elements[e][i + 1]) - nodes.row(elements[e][0]);
  Eigen::MatrixXd inv = edges.inverse();  // columns are gradients of barycentric coords 1..dim
  Eigen::Vector3d g = Eigen::Vector3d::Zero();
  if (v == 0) {
    for (int i = 0; i < dim; ++i)
      for (int j = 0; j < dim; ++j) g[i] -= inv(i, j);
  } else {
    for (int i = 0; i < dim; ++i) g[i] = inv(i, v - 1);
  }
  (void)nv;
  return g;
}

double Mesh::total_volume() const {
  double s = 0;
  for (int e = 0; e < element_count(); ++e) s += element_volume(e);
  return s;
}

double Mesh::boundary_measure() const {
  double s = 0;
  for (const auto& f : boundary_facets) s += f.measure;
  return s;
}

void Mesh::finalize() {
  std::set<int> bset;
  for (const auto& f : boundary_facets)
    for (int i = 0; i < dim; ++i) bset.insert(f.nodes[i]);
  boundary_nodes.assign(bset.begin(), bset.end());
  interior_nodes.clear();
  interior_index.assign(node_count(), -1);
  boundary_index.assign(node_count(), -1);
  for (size_t i = 0; i < boundary_nodes.size(); ++i) boundary_index[boundary_nodes[i]] = static_cast<int>(i);
  for (int n = 0; n < node_count(); ++n)
    if (boundary_index[n] < 0) {
      interior_index[n] = static_cast<int>(interior_nodes.size());
      interior_nodes.push_back(n);
    }
  // orientation fix: make every simplex positively oriented
  for (auto& el : elements) {
    Eigen::MatrixXd verts(dim + 1, dim);
    for (int v = 0; v <= dim; ++v) verts.row(v) = nodes.row(el[v]);
    if (simplex_volume(verts) < 0) std::swap(el[0], el[1]);
  }
  for (int e = 0; e < element_count(); ++e)
    if (element_volume(e) <= 0) throw std::runtime_error("Mesh: degenerate element");
}

Mesh build_box_mesh(int n, const std::vector<double>& lengths,
                    const std::vector<int>& divisions) {
  if (n != 2 && n != 3) throw std::invalid_argument("build_box_mesh: n must be 2 or 3");
  if (static_cast<int>(lengths.size()) != n || static_cast<int>(divisions.size()) != n)
    throw std::invalid_argument("build_box_mesh: lengths/divisions size mismatch");
  for (int i = 0; i < n; ++i) {
    if (divisions[i] < 2) throw std::invalid_argument("build_box_mesh: divisions must be >= 2");
    if (!(lengths[i] > 0)) throw std::invalid_argument("build_box_mesh: lengths must be > 0");
  }

  Mesh m;
  m.dim = n;
  if (n == 2) {
    const int nx = divisions[0], ny = divisions[1];
    auto id = [&](int i, int j) { return j * (nx + 1) + i; };
    m.nodes.resize((nx + 1) * (ny + 1), 2);
    for (int j = 0; j <= ny; ++j)
      for (int i = 0; i <= nx; ++i)
        m.nodes.row(id(i, j)) << lengths[0] * i / nx, lengths[1] * j / ny;
    for (int j = 0; j < ny; ++j)
      for (int i = 0; i < nx; ++i) {
        int a = id(i, j), b = id(i + 1, j), c = id(i + 1, j + 1), d = id(i, j + 1);
        // alternate the diagonal per cell parity so the mesh keeps the full
        // symmetry group of the square (degenerate modes stay degenerate)
        if ((i + j) % 2 == 0) {
          m.elements.push_back({a, b, c, -1});
          m.elements.push_back({a, c, d, -1});
        } else {
          m.elements.push_back({a, b, d, -1});
          m.elements.push_back({b, c, d, -1});
        }
      }
    auto add_edge = [&](int a, int b, double nxv, double nyv) {
      Mesh::Facet f;
      f.nodes = {a, b, -1};
      f.normal = Eigen::Vector3d(nxv, nyv, 0);
      f.measure = (m.nodes.row(a) - m.nodes.row(b)).norm();
      m.boundary_facets.push_back(f);
    };
    for (int i = 0; i < nx; ++i) {
      add_edge(id(i, 0), id(i + 1, 0), 0, -1);
      add_edge(id(i, ny), id(i + 1, ny), 0, 1);
    }
    for (int j = 0; j < ny; ++j) {
      add_edge(id(0, j), id(0, j + 1), -1, 0);
      add_edge(id(nx, j), id(nx, j + 1), 1, 0);
    }
  } else {
    const int nx = divisions[0], ny = divisions[1], nz = divisions[2];
    auto id = [&](int i, int j, int k) { return (k * (ny + 1) + j) * (nx + 1) + i; };
    m.nodes.resize((nx + 1) * (ny + 1) * (nz + 1), 3);
    for (int k = 0; k <= nz; ++k)
      for (int j = 0; j <= ny; ++j)
        for (int i = 0; i <= nx; ++i)
          m.nodes.row(id(i, j, k)) << lengths[0] * i / nx, lengths[1] * j / ny,
              lengths[2] * k / nz;
    // Kuhn split: 6 tets per cube, conforming across faces
    static const int tets[6][4] = {{0, 1, 3, 7}, {0, 1, 5, 7}, {0, 2, 3, 7},
                                   {0, 2, 6, 7}, {0, 4, 5, 7}, {0, 4, 6, 7}};
    for (int k = 0; k < nz; ++k)
      for (int j = 0; j < ny; ++j)
        for (int i = 0; i < nx; ++i) {
          int c[8];
          for (int b = 0; b < 8; ++b)
            c[b] = id(i + (b & 1), j + ((b >> 1) & 1), k + ((b >> 2) & 1));
          for (auto& t : tets) m.elements.push_back({c[t[0]], c[t[1]], c[t[2]], c[t[3]]});
        }
    // boundary faces: two triangles per boundary quad, matching Kuhn diagonals
    auto add_tri = [&](int a, int b, int c, const Eigen::Vector3d& nrm) {
      Mesh::Facet f;
      f.nodes = {a, b, c};
      f.normal = nrm;
      Eigen::Vector3d e1 = m.nodes.row(b) - m.nodes.row(a);
      Eigen::Vector3d e2 = m.nodes.row(c) - m.nodes.row(a);
      f.measure = 0.5 * e1.cross(e2).norm();
      m.boundary_facets.push_back(f);
    };
    for (int j = 0; j < ny; ++j)
      for (int i = 0; i < nx; ++i) {
        // z = 0 and z = lz faces; cube-local diagonal runs 0 -> 3 (x+y)
        add_tri(id(i, j, 0), id(i + 1, j, 0), id(i + 1, j + 1, 0), {0, 0, -1});
        add_tri(id(i, j, 0), id(i + 1, j + 1, 0), id(i, j + 1, 0), {0, 0, -1});
        add_tri(id(i, j, nz), id(i + 1, j, nz), id(i + 1, j + 1, nz), {0, 0, 1});
        add_tri(id(i, j, nz), id(i + 1, j + 1, nz), id(i, j + 1, nz), {0, 0, 1});
      }
    for (int k = 0; k < nz; ++k)
      for (int i = 0; i < nx; ++i) {
        add_tri(id(i, 0, k), id(i + 1, 0, k), id(i + 1, 0, k + 1), {0, -1, 0});
        add_tri(id(i, 0, k), id(i + 1, 0, k + 1), id(i, 0, k + 1), {0, -1, 0});
        add_tri(id(i, ny, k), id(i + 1, ny, k), id(i + 1, ny, k + 1), {0, 1, 0});
        add_tri(id(i, ny, k), id(i + 1, ny, k + 1), id(i, ny, k + 1), {0, 1, 0});
      }
    for (int k = 0; k < nz; ++k)
      for (int j = 0; j < ny; ++j) {
        add_tri(id(0, j, k), id(0, j + 1, k), id(0, j + 1, k + 1), {-1, 0, 0});
        add_tri(id(0, j, k), id(0, j + 1, k + 1), id(0, j, k + 1), {-1, 0, 0});
        add_tri(id(nx, j, k), id(nx, j + 1, k), id(nx, j + 1, k + 1), {1, 0, 0});
        add_tri(id(nx, j, k), id(nx, j + 1, k + 1), id(nx, j, k + 1), {1, 0, 0});
      }
  }
  m.finalize();
  return m;
}

Mesh build_disk_mesh(int divisions_per_axis) {
  if (divisions_per_axis < 2) throw std::invalid_argument("build_disk_mesh: divisions must be >= 2");
  if (divisions_per_axis % 2 != 0) ++divisions_per_axis;  // keep the center on a node
  const int nd = divisions_per_axis;
  std::vector<double> lengths{2.0, 2.0};
  std::vector<int> divs{nd, nd};
  Mesh m = build_box_mesh(2, lengths, divs);
  // concentric square-to-disk map on [-1,1]^2
  for (int i = 0; i < m.node_count(); ++i) {
    double u = m.nodes(i, 0) - 1.0, v = m.nodes(i, 1) - 1.0;
    double rinf = std::max(std::abs(u), std::abs(v));
    double r2 = std::hypot(u, v);
    if (r2 > 0) {
      m.nodes(i, 0) = u * rinf / r2;
      m.nodes(i, 1) = v * rinf / r2;
    } else {
      m.nodes(i, 0) = 0;
      m.nodes(i, 1) = 0;
    }
  }
  // boundary facets now lie on the circle: recompute normals/measures
  for (auto& f : m.boundary_facets) {
    Eigen::Vector2d a = m.nodes.row(f.nodes[0]).head<2>();
    Eigen::Vector2d b = m.nodes.row(f.nodes[1]).head<2>();
    Eigen::Vector2d mid = 0.5 * (a + b);
    Eigen::Vector2d t = b - a;
    Eigen::Vector2d nrm(t.y(), -t.x());
    if (nrm.dot(mid) < 0) nrm = -nrm;  // outward for the disk
    nrm.normalize();
    f.normal = Eigen::Vector3d(nrm.x(), nrm.y(), 0);
    f.measure = t.norm();
  }
  m.finalize();
  return m;
}

}  // namespace hdi
