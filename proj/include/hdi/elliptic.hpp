#pragma once

#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>
#include <memory>
#include <vector>

#include "hdi/fields.hpp"

namespace hdi {

using SpMat = Eigen::SparseMatrix<double>;

/// P1 stiffness with scalar coefficient gamma (element-mean interpolation).
SpMat assemble_stiffness(const Mesh& m, const ScalarField& gamma);
/// P1 stiffness with tensor coefficient A.
SpMat assemble_stiffness(const Mesh& m, const TensorField& A);
/// Consistent P1 mass with nodal weight w (element-mean interpolation).
SpMat assemble_mass(const Mesh& m, const ScalarField& weight);
SpMat assemble_mass(const Mesh& m);  // unit weight
/// Lumped nodal masses (row sums of the unit-weight mass matrix).
Eigen::VectorXd lumped_mass(const Mesh& m);
/// Boundary-facet P1 mass matrix in boundary-dof ordering.
SpMat assemble_boundary_mass(const Mesh& m);
/// Lumped boundary masses (row sums); used to turn boundary load vectors
/// into nodal flux values without smearing corner discontinuities.
Eigen::VectorXd lumped_boundary_mass(const Mesh& m);

/// Scatters interior + boundary dof vectors into a full nodal vector.
Eigen::VectorXd scatter(const Mesh& m, const Eigen::VectorXd& interior,
                        const Eigen::VectorXd& boundary);
Eigen::VectorXd interior_part(const Mesh& m, const Eigen::VectorXd& full);
Eigen::VectorXd boundary_part(const Mesh& m, const Eigen::VectorXd& full);
SpMat interior_block(const Mesh& m, const SpMat& full);
SpMat interior_boundary_block(const Mesh& m, const SpMat& full);
SpMat boundary_block(const Mesh& m, const SpMat& full);

/// Solution of the conductivity equation div(gamma grad w) = 0, w|bdry = h.
ScalarField solve_conductivity(const ScalarField& gamma, const BoundaryTrace& h);

/// Dense Dirichlet-to-Neumann map for the conductivity gamma.
class DtNMap {
public:
  DtNMap(const ScalarField& gamma);

  /// Schur-complement form: form(h1,h2) = <Lambda h1, h2> = int gamma grad w1 . grad w2.
  double form(const BoundaryTrace& h1, const BoundaryTrace& h2) const;
  /// Nodal boundary flux gamma d_nu w|bdry for boundary data h.
  BoundaryTrace flux(const BoundaryTrace& h) const;
  const Eigen::MatrixXd& schur() const { return schur_; }
  const Mesh& mesh() const { return *mesh_; }

private:
  const Mesh* mesh_;
  Eigen::MatrixXd schur_;          // nb x nb, symmetric PSD
  Eigen::VectorXd boundary_mass_;  // lumped, for nodal flux values
};

/// Discrete weighted operator P = -kappa div(A grad .) with homogeneous
/// Dirichlet conditions. Self-adjoint w.r.t. the kappa^{-1}-weighted mass.
class OperatorP {
public:
  OperatorP(const ScalarField& kappa, const TensorField& A);

  const Mesh& mesh() const { return *mesh_; }
  const SpMat& stiffness() const { return K_; }          // full nodal
  const SpMat& weighted_mass() const { return Mw_; }     // full nodal, weight 1/kappa
  const SpMat& mass() const { return Mu_; }              // full nodal, unit weight
  const SpMat& stiffness_ii() const { return Kii_; }
  const SpMat& weighted_mass_ii() const { return Mwii_; }
  const ScalarField& kappa() const { return kappa_; }
  const TensorField& tensor() const { return A_; }
  double ellipticity() const { return c0_; }

  /// u = P^{-1} G (zero Dirichlet data); G nodal, result nodal with zero boundary.
  ScalarField solve_inverse(const ScalarField& G) const;
  /// Nodal application on interior dofs: (P u)_i = Mw_ii^{-1} K_ii u_i.
  Eigen::VectorXd apply_interior(const Eigen::VectorXd& u_interior) const;
  /// Quadratic form (P u, v)_{L2_kappa} = v^T K u over interior dofs.
  double energy(const Eigen::VectorXd& ui, const Eigen::VectorXd& vi) const;
  /// Weighted L2 norm of an interior dof vector.
  double weighted_norm(const Eigen::VectorXd& ui) const;
  /// Weighted L2 inner product of full nodal fields.
  double weighted_inner(const Eigen::VectorXd& full_u, const Eigen::VectorXd& full_v) const;

  const Eigen::SimplicialLDLT<SpMat>& stiffness_solver() const { return Kii_solver_; }
  const Eigen::SimplicialLDLT<SpMat>& mass_solver() const { return Mwii_solver_; }

private:
  const Mesh* mesh_;
  ScalarField kappa_;
  TensorField A_;
  double c0_;
  SpMat K_, Mw_, Mu_, Kii_, Mwii_;
  Eigen::SimplicialLDLT<SpMat> Kii_solver_, Mwii_solver_;
};

/// Lowest part of the Dirichlet spectrum of P in L2_kappa.
struct SpectralData {
  const Mesh* mesh = nullptr;
  Eigen::VectorXd eigenvalues;            // ascending, repeated by multiplicity
  std::vector<int> cluster_of;            // eigen index -> cluster id
  std::vector<int> multiplicities;        // per cluster
  std::vector<double> cluster_values;     // per cluster (mean eigenvalue)
  Eigen::MatrixXd eigenfunctions;         // n_nodes x count, weighted-orthonormal
  Eigen::MatrixXd flux_traces;            // nb x count, nodal nu.A grad phi
  Eigen::VectorXd residuals;              // ||P phi - lambda phi||_{L2_kappa}
  ScalarField kappa;                      // orthonormalization weight

  int count() const { return static_cast<int>(eigenvalues.size()); }
  int cluster_count() const { return static_cast<int>(multiplicities.size()); }
};

/// Lowest `count` Dirichlet eigenpairs of P. Dense solve for small interiors,
/// shift-invert Lanczos (fixed seed, full reorthogonalization) otherwise.
SpectralData dirichlet_spectrum(const OperatorP& P, int count, double cluster_rtol = 1e-6);

/// Variational (consistent) boundary flux nu.A grad u for a discrete solution u
/// with interior residual rhs: int_b (nu.A grad u) v = int A grad u.grad v - int rhs v.
BoundaryTrace neumann_flux(const TensorField& A, const ScalarField& u, const ScalarField& rhs);

/// Variant reusing assembled matrices: boundary rows of K u - Mu rhs, mass-inverted.
BoundaryTrace neumann_flux(const OperatorP& P, const Eigen::VectorXd& full_u,
                           const Eigen::VectorXd& full_rhs);

}  // namespace hdi
