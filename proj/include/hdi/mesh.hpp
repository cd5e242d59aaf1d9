#pragma once

#include <Eigen/Dense>
#include <array>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace hdi {

/// Simplicial mesh of a box (2D/3D) or a mapped-grid disk. Immutable after
/// construction; all solvers share it by const reference.
class Mesh {
public:
  struct Facet {
    std::array<int, 3> nodes;  // first `dim` entries used
    Eigen::Vector3d normal;    // outward unit normal, zero-padded
    double measure;            // length (2D) or area (3D)
  };

  int dim = 0;
  Eigen::MatrixXd nodes;                        // n_nodes x dim
  std::vector<std::array<int, 4>> elements;     // dim+1 vertex ids per simplex
  std::vector<Facet> boundary_facets;
  std::vector<int> boundary_nodes;              // ascending node ids
  std::vector<int> interior_nodes;              // ascending node ids

  // node id -> dof index within interior/boundary ordering, or -1
  std::vector<int> interior_index;
  std::vector<int> boundary_index;

  int node_count() const { return static_cast<int>(nodes.rows()); }
  int element_count() const { return static_cast<int>(elements.size()); }
  int interior_count() const { return static_cast<int>(interior_nodes.size()); }
  int boundary_count() const { return static_cast<int>(boundary_nodes.size()); }
  int verts_per_element() const { return dim + 1; }

  double element_volume(int e) const;
  /// Constant gradient of the P1 basis function of local vertex v on element e.
  Eigen::Vector3d basis_gradient(int e, int v) const;
  double total_volume() const;
  double boundary_measure() const;

  /// Fills derived connectivity (boundary sets, index maps) from
  /// elements + boundary_facets. Called by the builders.
  void finalize();
};

/// Conforming simplicial mesh of the box [0,l1]x...x[0,ln].
/// divisions must be >= 2 per axis.
Mesh build_box_mesh(int n, const std::vector<double>& lengths,
                    const std::vector<int>& divisions);

/// Unit-radius disk centered at the origin via a smoothly mapped structured
/// grid of [-1,1]^2 (concentric map: squares -> circles).
Mesh build_disk_mesh(int divisions_per_axis);

double simplex_volume(const Eigen::MatrixXd& verts);  // (dim+1) x dim rows

}  // namespace hdi
