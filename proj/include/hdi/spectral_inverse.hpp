#pragma once

#include <functional>
#include <string>
#include <vector>

#include "hdi/heat.hpp"

namespace hdi {

/// Black-box measurement: boundary voltage -> heat flux trace.
using ProbeMeasure = std::function<FluxTrace(const BoundaryTrace&)>;

/// Equilibrium Dirichlet-to-Neumann data recovered from ramp measurements.
struct DtnFormTable {
  Eigen::MatrixXd gram;                    // <Lambda h_i, h_j> over the probe set
  Eigen::VectorXd equilibrium_residuals;   // per measured trace, relative drift
  double t_read = 0;                       // time the equilibrium value was read
};

/// q(h) = -lim_t total flux of the ramp measurement; off-diagonal entries by
/// polarization q(h,ht) = 1/4 [q(h+ht) - q(h-ht)]. Throws if a trace has not
/// reached equilibrium (relative drift over the trailing window > 1e-7), with
/// the observed decay rate in the message.
DtnFormTable extract_dtn_form(const ProbeMeasure& measure,
                              const std::vector<BoundaryTrace>& probes);

struct GammaFit {
  ScalarField gamma;
  Eigen::VectorXd params;
  double misfit = 0;
  int iterations = 0;
  bool converged = false;
  std::vector<double> history;  // misfit per iterate, including the initial one
};

/// Gauss-Newton fit of a low-dimensional conductivity parametrization to the
/// measured DtN Gram table, with Tikhonov-damped steps and a forward-difference
/// Jacobian. The model Gram uses the same probe set on the given mesh.
GammaFit fit_gamma_from_dtn(const DtnFormTable& table,
                            const std::vector<BoundaryTrace>& probes, const Mesh& mesh,
                            const std::function<ScalarField(const Eigen::VectorXd&)>& parametrize,
                            const Eigen::VectorXd& initial, double tol = 1e-10,
                            int max_iterations = 50);

/// Dirichlet-series decomposition of flux traces: exponents by a matrix-pencil
/// method on the scalar total flux, vector amplitudes by clusterwise least
/// squares across boundary nodes.
struct DirichletSeriesFit {
  const Mesh* mesh = nullptr;
  Eigen::VectorXd exponents;                // ascending, one per recovered cluster
  std::vector<int> multiplicities;          // per exponent (amplitude rank over probes)
  std::vector<std::vector<BoundaryTrace>> amplitudes;  // [probe][exponent]
  Eigen::MatrixXd coefficients;             // probes x exponents, signed boundary norms
  std::vector<Eigen::VectorXd> cluster_singular_values;  // per exponent, from rank test
  double residual = 0;                      // relative reconstruction error on the window
  Eigen::VectorXd pencil_singular_values;   // conditioning report
};

DirichletSeriesFit fit_dirichlet_series(const FluxTrace& trace, int mode_budget,
                                        double t_min, double t_max,
                                        double cluster_rtol = 1e-3);
/// Multi-probe variant: shared exponents (stacked pencil), per-probe
/// amplitudes; multiplicity of a cluster = numerical rank of its amplitude
/// vectors across probes in the boundary inner product.
DirichletSeriesFit fit_dirichlet_series(const std::vector<FluxTrace>& traces, int mode_budget,
                                        double t_min, double t_max,
                                        double cluster_rtol = 1e-3, double rank_rtol = 1e-2);

/// Smallest singular value of the normalized boundary flux traces of one
/// eigenvalue cluster (discrete boundary inner product). Strictly positive iff
/// the traces are linearly independent.
double flux_independence_check(const SpectralData& sd, int cluster);
double flux_independence_check(const Mesh& mesh, const std::vector<BoundaryTrace>& traces);

/// Change of basis between two rank-m factorizations K(x,y) = F(x).Ft(y)
/// = G(x).Gt(y) sampled on interior points (columns of F, G; m rows) and
/// boundary points (columns of Ft, Gt).
struct EigenspaceMatch {
  Eigen::MatrixXd T;                  // F(x) = T G(x)
  std::vector<int> boundary_samples;  // greedily pivoted boundary columns
  double orthogonality_defect = 0;    // ||T^T T - I||_F
  double condition = 0;               // sigma_max / sigma_min of T
  double verification_error = 0;      // max relative error of F = T G on held-out columns
};

EigenspaceMatch match_eigenspaces(const Eigen::MatrixXd& F, const Eigen::MatrixXd& Ft,
                                  const Eigen::MatrixXd& G, const Eigen::MatrixXd& Gt, int m);

/// kappa_hat = sum_k c_k phi_k with c_k = int phi_k dx; truncation chosen by
/// the Parseval defect of the c_k^2 partial sums (threshold defect_tol).
struct KappaRecovery {
  ScalarField kappa_hat;
  Eigen::VectorXd coefficients;  // c_k over all supplied modes
  int truncation = 0;            // modes actually summed
  double parseval_defect = 0;    // relative c_k^2 tail beyond the truncation
  bool tail_warning = false;     // defect target unreachable with supplied modes
};

KappaRecovery recover_kappa(const SpectralData& sd, int max_modes = -1,
                            double defect_tol = 1e-3);

/// Relative L2 error on the subdomain at least `margin` away from the
/// boundary (excludes the Gibbs ring of truncated eigenexpansions).
double bulk_relative_error(const ScalarField& recovered, const ScalarField& reference,
                           double margin);

/// End-to-end identification from black-box measurements only.
struct PipelineConfig {
  const Mesh* mesh = nullptr;  // reconstruction mesh

  // voltage-to-heat-flow measurements (Sigma mode)
  std::function<FluxTrace(const BoundaryTrace&, const SourceEnvelope&, double, double)> sigma;
  std::function<FluxTrace(const BoundaryTrace&, const BoundaryTrace&, const SourceEnvelope&,
                          double, double)> sigma_polarized;
  // source-to-flux measurements (Xi mode); used when sigma is absent
  std::function<FluxTrace(const ScalarField&, const SourceEnvelope&, double, double)> xi;
  std::vector<ScalarField> xi_sources;  // interior probe sources for Xi mode

  std::function<ScalarField(const Eigen::VectorXd&)> gamma_parametrize;
  Eigen::VectorXd gamma_initial;
  std::function<ScalarField(const Eigen::VectorXd&)> kappa_parametrize;
  Eigen::VectorXd kappa_initial;

  double ramp_t_end = 4.0, ramp_dt = 1e-2;
  double pulse_epsilon = 1e-3;
  double heat_t_end = 1.0, heat_dt = 2e-3;
  int mode_budget = 6;
  int series_modes = 200;  // modes in the final kappa eigenexpansion
};

struct PipelineReport {
  std::vector<std::string> stages;   // human-readable stage log
  Eigen::MatrixXd dtn_gram;
  Eigen::VectorXd gamma_params;
  double gamma_misfit = 0;
  Eigen::VectorXd eigenvalues;       // recovered cluster values, ascending
  std::vector<int> multiplicities;
  double series_residual = 0;
  std::vector<double> flux_sigma_min;  // per recovered cluster
  Eigen::VectorXd kappa_params;
  double kappa_eigenvalue_misfit = 0;
  ScalarField kappa_hat;             // eigenexpansion field on the mesh
  double parseval_defect = 0;
  bool ok = false;

  std::string to_json() const;
};

PipelineReport full_pipeline(const PipelineConfig& cfg);

/// The pipeline's fixed voltage probe set and the polarized pulse pairs it
/// measures, exposed so a measurement run can pre-record exactly the traces
/// a later reconstruction will request.
std::vector<BoundaryTrace> pipeline_voltage_probes(const Mesh& mesh);
std::vector<std::pair<int, int>> pipeline_pulse_pairs();

}  // namespace hdi
