#pragma once

#include <functional>
#include <string>

#include "hdi/elliptic.hpp"

namespace hdi {

/// Time modulation of a source: the ramp alpha(t), the normalized pulse
/// chi_eps(t), the ideal impulse limit, or a user-supplied profile.
class SourceEnvelope {
public:
  enum class Kind { ramp, pulse, impulse, custom };

  static SourceEnvelope ramp();
  static SourceEnvelope pulse(double epsilon);
  static SourceEnvelope impulse();
  static SourceEnvelope custom(std::function<double(double)> fn);

  Kind kind() const { return kind_; }
  double epsilon() const { return epsilon_; }
  /// alpha(t) or chi_eps(t); throws for the impulse kind.
  double value(double t) const;
  double squared(double t) const { double v = value(t); return v * v; }
  std::string describe() const;

  /// The unit-support pulse profile chi with int chi^2 = 1 (normalized to 1e-12).
  static double chi(double u);
  /// Support width of chi inside [0,1].
  static constexpr double chi_width = 0.02;

private:
  Kind kind_ = Kind::ramp;
  double epsilon_ = 0;
  std::function<double(double)> fn_;
};

/// Time-sampled boundary flux data nu.A grad psi|bdry: the output of the
/// measurement maps.
struct FluxTrace {
  const Mesh* mesh = nullptr;
  Eigen::VectorXd times;
  Eigen::MatrixXd values;  // nb x n_times, nodal flux
  std::string source;
  double tail_estimate = 0;  // spectral truncation bound, when applicable

  int sample_count() const { return static_cast<int>(times.size()); }
  /// Boundary integral of the flux at every sample.
  Eigen::VectorXd total_flux() const;
  Eigen::VectorXd at_time(double t) const;  // linear interpolation
};

/// Joule power density F = gamma grad u . grad u, lumped-projected to nodes.
/// Preserves int F = u^T K_gamma u exactly.
ScalarField joule_source(const ScalarField& gamma, const ScalarField& u);

/// States of a heat evolution at every grid time (zero boundary rows).
struct HeatHistory {
  const Mesh* mesh = nullptr;
  Eigen::VectorXd times;
  Eigen::MatrixXd states;  // n_nodes x n_times
};

/// Crank-Nicolson evolution of M_w psi' + K psi = M_u F(t) from psi(0)=0 on a
/// strictly increasing time grid starting at 0 (nonuniform allowed). The first
/// two steps use Rannacher halving to damp rough initial data.
HeatHistory evolve_heat(const OperatorP& P,
                        const std::function<Eigen::VectorXd(double)>& source_full,
                        const Eigen::VectorXd& times);
HeatHistory evolve_heat(const OperatorP& P,
                        const std::function<Eigen::VectorXd(double)>& source_full,
                        double t_end, double dt);

/// Variational boundary flux of a heat history: boundary rows of
/// M_w psi' + K psi - M_u F, lumped-mass inverted. psi' by 3-point finite
/// differences on the grid; the t=0 column is exactly zero.
FluxTrace heat_flux_trace(const OperatorP& P, const HeatHistory& hist,
                          const std::function<Eigen::VectorXd(double)>& source_full);

/// Spectral (Duhamel) solution for a separable source env2(t) * F_space(x):
/// psi(t) = sum_k phi_k d_k int_0^t e^{-lambda_k (t-s)} env2(s) ds,
/// d_k = (F_space, phi_k)_{L2}. Adaptive Simpson time quadrature.
ScalarField duhamel_solution(const SpectralData& sd, const ScalarField& F_space,
                             const std::function<double(double)>& env2, double t,
                             double* tail = nullptr);

/// Impulse response to the source G delta(t): flux(t) =
/// sum_k e^{-lambda_k t} d_k (nu.A grad phi_k)|bdry with d_k = (G, phi_k)_{L2_kappa}
/// (equals (G/kappa, phi_k)_{L2}; for G = kappa F this is (F, phi_k)_{L2}).
FluxTrace impulse_response(const SpectralData& sd, const ScalarField& G,
                           const Eigen::VectorXd& times);

/// Voltage-to-heat-flow map: boundary voltage envelope*h -> boundary heat flux.
/// Pulse envelopes get a refined step grid across the pulse support.
FluxTrace sigma_map(const ScalarField& gamma, const ScalarField& kappa, const TensorField& A,
                    const BoundaryTrace& h, const SourceEnvelope& envelope, double t_end,
                    double dt);

/// Polarized combination 1/4 [Sigma(env(h+ht)) - Sigma(env(h-ht))]; its source
/// is kappa env^2 gamma grad w^h . grad w^ht.
FluxTrace sigma_map_polarized(const ScalarField& gamma, const ScalarField& kappa,
                              const TensorField& A, const BoundaryTrace& h,
                              const BoundaryTrace& ht, const SourceEnvelope& envelope,
                              double t_end, double dt);

/// Source-to-flux map: prescribed interior source env^2 * F_space -> boundary flux.
FluxTrace xi_map(const ScalarField& kappa, const TensorField& A, const ScalarField& F_space,
                 const SourceEnvelope& envelope, double t_end, double dt);

/// Step grid for an envelope: uniform dt, refined across [0, 2 eps] for pulses.
Eigen::VectorXd time_grid(const SourceEnvelope& envelope, double t_end, double dt);

}  // namespace hdi
