#pragma once

#include <complex>
#include <vector>

#include "hdi/elliptic.hpp"

namespace hdi {

/// Interior-source-to-boundary-flux map: solves -div(A grad u) = F with zero
/// Dirichlet data and returns the variational flux nu.A grad u|bdry.
BoundaryTrace psi_map(const TensorField& A, const ScalarField& F);

/// Root with positive imaginary part of the boundary symbol
///   a_nn lambda^2 + 2 (sum_a a_na xi_a) lambda + sum_ab a_ab xi_a xi_b = 0
/// for a constant elliptic tensor; the conjugate root is lambda_-. The last
/// coordinate is the inward normal, the leading ones are tangential.
std::complex<double> halfspace_root(const Eigen::MatrixXd& A_const,
                                    const Eigen::VectorXd& xi_prime);

/// One tangential-frequency decay measurement on the probed face x_n = 0.
struct HalfspaceProbe {
  Eigen::Vector3d x0 = Eigen::Vector3d::Zero();  // probed boundary point
  Eigen::VectorXd xi_prime;        // tangential frequency (dim-1 entries)
  Eigen::VectorXd depths;          // strictly increasing source depths
  Eigen::VectorXcd amplitudes;     // complex flux amplitude at frequency xi_prime
  std::complex<double> lambda_hat; // fitted symbol root (+Im branch)
  double decay_rate = 0;           // Im lambda_hat, must be > 0
  double oscillation_rate = 0;     // Re lambda_hat
  double fit_residual = 0;         // rms log-linear misfit
};

/// Places thin tangentially modulated sources cos(xi'.x') b(x_n - d) at each
/// depth, measures psi_map on the face x_n = 0, extracts the complex amplitude
/// at frequency xi' over the central half of the face, and fits
/// amplitude(d) ~ exp(i Re(lhat) d - Im(lhat) d) by a log-linear least squares.
/// Requires a box mesh; depths must stay within 20% of the slab thickness.
std::vector<HalfspaceProbe> probe_boundary_decay(const TensorField& A,
                                                 const Eigen::Vector3d& x0,
                                                 const std::vector<Eigen::VectorXd>& xi_set,
                                                 const Eigen::VectorXd& depths);

struct BoundaryTensorEstimate {
  Eigen::MatrixXd A_hat;                    // symmetric n x n at the probed point
  double residual = 0;                      // relative LSQ residual over all probes
  std::vector<Eigen::VectorXd> frequencies; // xi' set used
};

/// Least-squares inversion of the symbol relation over measured (xi', lambda+)
/// pairs. The root is invariant under A -> cA, so the absolute scale cannot
/// come from the decay data: a_nn is supplied by the calibration probe and the
/// remaining entries are solved for. Throws on rank-deficient probe sets.
BoundaryTensorEstimate estimate_boundary_tensor(const std::vector<HalfspaceProbe>& probes,
                                                double a_nn = 1.0);

}  // namespace hdi
