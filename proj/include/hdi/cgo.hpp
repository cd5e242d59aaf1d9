#pragma once

#include <complex>
#include <functional>

#include "hdi/elliptic.hpp"

namespace hdi {

using Complex = std::complex<double>;

/// Complex phase pair with rho_j . rho_j = 0 (bilinear) and rho1 + rho2 = xi.
struct CgoPhasePair {
  Eigen::Vector3d xi;
  Eigen::Vector3cd rho1, rho2;
  double R = 0;  // requested magnitude floor
  double t = 0;  // free real parameter of the construction

  double symbol_defect() const;  // max |rho_j . rho_j|
};

/// rho1 = xi/2 + t eta1 + i s eta2, rho2 = xi/2 - t eta1 - i s eta2 with
/// s^2 = |xi|^2/4 + t^2 and orthonormal eta1, eta2 perpendicular to xi.
/// t_scale perturbs t multiplicatively (lattice-collision avoidance schedule).
CgoPhasePair make_phase_pair(const Eigen::Vector3d& xi, double R, double t_scale = 1.0);

/// Periodic scalar field on a cubic grid covering a box that contains Omega.
struct PeriodicField {
  int n = 0;                    // grid points per axis
  double length = 0;            // box side
  Eigen::Vector3d origin;       // corner of the box
  Eigen::Vector3d omega_lo, omega_hi;  // the embedded domain
  Eigen::VectorXd values;       // n^3, x fastest

  int index(int i, int j, int k) const { return (k * n + j) * n + i; }
  Eigen::Vector3d point(int i, int j, int k) const;
  double spacing() const { return length / n; }
  bool in_omega(const Eigen::Vector3d& x) const;
  double min_value() const { return values.minCoeff(); }
};

/// Smooth extension of gamma from the box Omega = [lo, hi] to a periodic cube:
/// equals gamma on Omega, blends C^inf to the constant boundary mean outside a
/// collar, constant near the box faces. box_scale multiplies the diameter.
PeriodicField extend_gamma(const std::function<double(const Eigen::Vector3d&)>& gamma,
                           const Eigen::Vector3d& lo, const Eigen::Vector3d& hi,
                           double box_scale, int grid);
/// ScalarField overload: P1 values inside Omega (coordinates clamped to Omega).
PeriodicField extend_gamma(const ScalarField& gamma, double box_scale, int grid);

/// CGO solution w = e^{i rho.x} gamma^{-1/2} (1 + r) on the periodic grid.
struct CgoSolution {
  CgoPhasePair phase;
  const PeriodicField* gamma_ext = nullptr;
  Eigen::VectorXcd r;        // remainder on the grid
  double iterations = 0;
  double fixed_point_residual = 0;  // last iterate change, relative
  double pde_residual = 0;          // conductivity equation residual, relative
  double r_norm_omega = 0;          // L2(Omega) norm of r

  /// w and grad w at a grid index (spectral gradient precomputed).
  Eigen::VectorXcd grad_r[3];
};

/// Solves (Laplace + 2 i rho . grad) r = q (1 + r), q = gamma^{-1/2} Laplace gamma^{1/2},
/// by fixed-point iteration with the exact Fourier multiplier inverse.
/// Throws on lattice symbol collisions and reports non-contraction.
CgoSolution solve_remainder(const PeriodicField& gamma_ext, const CgoPhasePair& phase,
                            bool use_rho2 = false);

/// Retries solve_remainder over the deterministic t-perturbation schedule.
CgoSolution solve_remainder_safe(const PeriodicField& gamma_ext, const Eigen::Vector3d& xi,
                                 double R, bool use_rho2 = false);

/// Complex values of gamma grad w1 . grad w2 (bilinear dot) on the grid.
Eigen::VectorXcd cgo_product(const PeriodicField& gamma_ext, const CgoSolution& w1,
                             const CgoSolution& w2);

/// Weak-form discrepancy between int phi gamma grad w1 . grad w2 and
/// -1/2 int grad phi . gamma grad(w1 w2) over a fixed set of smooth
/// compactly supported test functions on the mesh; returns the maximum.
double product_identity_check(const ScalarField& gamma, const ScalarField& w1,
                              const ScalarField& w2);

struct RankReport {
  Eigen::VectorXd singular_values;
  int rank = 0;
  double rel_tol = 1e-8;
};

/// Projects probe products gamma grad w1 . grad w2 onto a smooth basis of
/// dimension basis_dim and reports the numerical rank. 3D: CGO probe pairs on
/// the periodic grid; 2D: harmonic complex-exponential solutions (gamma = 1).
RankReport density_gram_test(const PeriodicField& gamma_ext, int probe_count, int basis_dim,
                             double R = 30.0);
RankReport density_gram_test_2d(const Mesh& mesh, int probe_count, int basis_dim);

}  // namespace hdi
