#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>
#include <vector>

#include "hdi/spectral_inverse.hpp"

using namespace hdi;

namespace {

double bump2d(const Eigen::Vector3d& x) {
  Eigen::Vector3d c(0.5, 0.5, 0.0);
  double s2 = ((x - c).head(2)).squaredNorm() / (0.35 * 0.35);
  return s2 < 1.0 ? std::exp(-1.0 / (1.0 - s2)) : 0.0;
}

ScalarField gamma_truth(const Mesh& m) {
  return ScalarField::sample(m, [](const Eigen::Vector3d& x) { return 1.0 + 0.3 * bump2d(x); });
}

Eigen::MatrixXd direct_gram(const Mesh& m, const ScalarField& g,
                            const std::vector<BoundaryTrace>& probes) {
  SpMat K = assemble_stiffness(m, g);
  int n = static_cast<int>(probes.size());
  std::vector<Eigen::VectorXd> w(n);
  for (int i = 0; i < n; ++i) w[i] = solve_conductivity(g, probes[i]).values;
  Eigen::MatrixXd G(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) G(i, j) = w[i].dot(K * w[j]);
  return G;
}

std::vector<BoundaryTrace> standard_probes(const Mesh& m) {
  std::vector<BoundaryTrace> probes;
  probes.push_back(BoundaryTrace::sample(m, [](const Eigen::Vector3d& x) { return x[0]; }));
  probes.push_back(BoundaryTrace::sample(m, [](const Eigen::Vector3d& x) { return x[1]; }));
  probes.push_back(
      BoundaryTrace::sample(m, [](const Eigen::Vector3d& x) { return x[0] * x[1]; }));
  probes.push_back(BoundaryTrace::sample(
      m, [](const Eigen::Vector3d& x) { return x[0] * x[0] - x[1] * x[1]; }));
  return probes;
}

}  // namespace

TEST_CASE("dtn form from ramp measurements") {
  Mesh m = build_box_mesh(2, {1, 1}, {32, 32});
  ScalarField one(m, 1.0), kap(m, 1.0);
  TensorField A = TensorField::identity(m);
  ProbeMeasure measure = [&](const BoundaryTrace& h) {
    return sigma_map(one, kap, A, h, SourceEnvelope::ramp(), 3.0, 1e-2);
  };
  std::vector<BoundaryTrace> probes;
  probes.push_back(BoundaryTrace::sample(m, [](const Eigen::Vector3d& x) { return x[0]; }));
  probes.push_back(BoundaryTrace(m, 1.0));
  probes.push_back(BoundaryTrace::sample(m, [](const Eigen::Vector3d& x) { return x[1]; }));

  DtnFormTable table = extract_dtn_form(measure, probes);
  CHECK(table.gram(0, 0) == doctest::Approx(1.0).epsilon(1e-3));
  CHECK(std::abs(table.gram(1, 1)) < 1e-8);          // constants in the kernel
  CHECK(std::abs(table.gram(0, 1)) < 1e-8);
  CHECK(table.gram(0, 2) == doctest::Approx(table.gram(2, 0)).epsilon(1e-12));
  // the x1/x2 cross energy vanishes by symmetry
  CHECK(std::abs(table.gram(0, 2)) < 1e-6);
}

TEST_CASE("dtn extraction rejects unreached equilibrium") {
  Mesh m = build_box_mesh(2, {1, 1}, {16, 16});
  ScalarField one(m, 1.0), kap(m, 1.0);
  TensorField A = TensorField::identity(m);
  ProbeMeasure measure = [&](const BoundaryTrace& h) {
    return sigma_map(one, kap, A, h, SourceEnvelope::ramp(), 1.1, 1e-2);
  };
  std::vector<BoundaryTrace> probes{
      BoundaryTrace::sample(m, [](const Eigen::Vector3d& x) { return x[0]; })};
  CHECK_THROWS_AS(extract_dtn_form(measure, probes), std::runtime_error);
}

TEST_CASE("gamma fit recovers a constant conductivity") {
  Mesh m = build_box_mesh(2, {1, 1}, {24, 24});
  auto probes = standard_probes(m);
  DtnFormTable table;
  table.gram = direct_gram(m, ScalarField(m, 2.0), probes);

  auto parametrize = [&](const Eigen::VectorXd& p) {
    ScalarField g(m, p[0]);
    g.require_positive(1e-8, "gamma iterate");
    return g;
  };
  Eigen::VectorXd init(1);
  init << 1.4;
  GammaFit fit = fit_gamma_from_dtn(table, probes, m, parametrize, init);
  CHECK(fit.converged);
  CHECK(fit.params[0] == doctest::Approx(2.0).epsilon(1e-2));

  // exact initialization terminates without an iteration
  table.gram = direct_gram(m, ScalarField(m, 1.0), probes);
  init << 1.0;
  GammaFit exact = fit_gamma_from_dtn(table, probes, m, parametrize, init);
  CHECK(exact.iterations == 0);
  CHECK(exact.converged);
  CHECK(exact.misfit < 1e-12);
}

TEST_CASE("gamma fit recovers bump parameters from finer-mesh data") {
  // truth Gram generated at 96^2 so the 48^2 fit is not an inverse crime
  Mesh fine = build_box_mesh(2, {1, 1}, {96, 96});
  Eigen::MatrixXd data = direct_gram(fine, gamma_truth(fine), standard_probes(fine));

  Mesh m = build_box_mesh(2, {1, 1}, {48, 48});
  auto probes = standard_probes(m);
  DtnFormTable table;
  table.gram = data;
  auto parametrize = [&](const Eigen::VectorXd& p) {
    ScalarField g = ScalarField::sample(m, [&](const Eigen::Vector3d& x) {
      return p[0] + p[1] * bump2d(x) + p[2] * (x[0] - 0.5) + p[3] * (x[1] - 0.5);
    });
    g.require_positive(1e-8, "gamma iterate");
    return g;
  };
  Eigen::VectorXd init(4);
  init << 1.2, 0.0, 0.05, -0.05;
  GammaFit fit = fit_gamma_from_dtn(table, probes, m, parametrize, init, 1e-8);
  CHECK(std::abs(fit.params[0] - 1.0) < 0.1);
  CHECK(std::abs(fit.params[1] - 0.3) < 0.03);
  CHECK(std::abs(fit.params[2]) < 0.03);
  CHECK(std::abs(fit.params[3]) < 0.03);
}

TEST_CASE("dirichlet series fit on a synthetic two-exponential trace") {
  Mesh m = build_box_mesh(2, {1, 1}, {16, 16});
  Eigen::VectorXd lb = lumped_boundary_mass(m);
  int nb = m.boundary_count();
  Eigen::VectorXd g1(nb), g2(nb);
  for (int i = 0; i < nb; ++i) {
    double y = m.nodes(m.boundary_nodes[i], 1);
    g1[i] = 1.0 + 0.5 * y;
    g2[i] = std::sin(3.0 * y) + 1.2;
  }
  g1 /= std::sqrt(g1.dot(lb.cwiseProduct(g1)));
  g2 /= std::sqrt(g2.dot(lb.cwiseProduct(g2)));

  int nt = 401;
  FluxTrace trace;
  trace.mesh = &m;
  trace.times = Eigen::VectorXd::LinSpaced(nt, 0.0, 2.0);
  trace.values.resize(nb, nt);
  for (int i = 0; i < nt; ++i)
    trace.values.col(i) =
        2.0 * std::exp(-3.0 * trace.times[i]) * g1 + std::exp(-10.0 * trace.times[i]) * g2;

  DirichletSeriesFit fit = fit_dirichlet_series(trace, 4, 0.05, 2.0);
  REQUIRE(fit.exponents.size() == 2);
  CHECK(fit.exponents[0] == doctest::Approx(3.0).epsilon(1e-6));
  CHECK(fit.exponents[1] == doctest::Approx(10.0).epsilon(1e-6));
  CHECK(fit.coefficients(0, 0) == doctest::Approx(2.0).epsilon(1e-6));
  CHECK(fit.coefficients(0, 1) == doctest::Approx(1.0).epsilon(1e-6));
  CHECK(fit.residual < 1e-9);
  CHECK(fit.multiplicities[0] == 1);
}

TEST_CASE("series fit inverts impulse_response in the truncated model") {
  Mesh m = build_box_mesh(2, {1, 1}, {24, 24});
  ScalarField kap(m, 1.0);
  OperatorP P(kap, TensorField::identity(m));
  SpectralData sd = dirichlet_spectrum(P, 12);
  // asymmetric source so every mode has a coefficient above the floor
  ScalarField G = ScalarField::sample(m, [](const Eigen::Vector3d& x) {
    double dx = x[0] - 0.37, dy = x[1] - 0.61;
    return std::exp(-10.0 * (dx * dx + dy * dy)) + 0.2 * x[0] + 0.1;
  });
  Eigen::VectorXd times = Eigen::VectorXd::LinSpaced(501, 0.0, 1.0);
  FluxTrace trace = impulse_response(sd, G, times);

  // the trace is an exact exponential sum from t=0, so the window can start at
  // the first positive sample; a late start starves the fast modes of dynamic range
  DirichletSeriesFit fit = fit_dirichlet_series(trace, 12, 0.002, 1.0);
  REQUIRE(fit.exponents.size() >= static_cast<size_t>(sd.cluster_count()) - 1);
  for (int c = 0; c < std::min<int>(fit.exponents.size(), sd.cluster_count()); ++c)
    CHECK(fit.exponents[c] == doctest::Approx(sd.cluster_values[c]).epsilon(1e-6));
  CHECK(fit.residual < 1e-8);
}

TEST_CASE("multiplicity two detected from two independent probes") {
  Mesh m = build_box_mesh(2, {1, 1}, {32, 32});
  ScalarField kap(m, 1.0);
  OperatorP P(kap, TensorField::identity(m));
  SpectralData sd = dirichlet_spectrum(P, 8);
  REQUIRE(sd.multiplicities.size() >= 2);
  REQUIRE(sd.multiplicities[1] == 2);

  Eigen::VectorXd times = Eigen::VectorXd::LinSpaced(501, 0.0, 1.0);
  std::vector<FluxTrace> traces;
  traces.push_back(impulse_response(sd, ScalarField::sample(m, [](const Eigen::Vector3d& x) {
    double dx = x[0] - 0.3, dy = x[1] - 0.45;
    return std::exp(-20.0 * (dx * dx + dy * dy));
  }), times));
  traces.push_back(impulse_response(sd, ScalarField::sample(m, [](const Eigen::Vector3d& x) {
    double dx = x[0] - 0.7, dy = x[1] - 0.6;
    return std::exp(-25.0 * (dx * dx + dy * dy));
  }), times));

  DirichletSeriesFit fit = fit_dirichlet_series(traces, 5, 0.04, 1.0);
  REQUIRE(fit.exponents.size() >= 2);
  CHECK(fit.exponents[0] == doctest::Approx(sd.cluster_values[0]).epsilon(1e-3));
  CHECK(fit.exponents[1] == doctest::Approx(sd.cluster_values[1]).epsilon(1e-3));
  CHECK(fit.multiplicities[0] == 1);
  CHECK(fit.multiplicities[1] == 2);

  // cluster structure is invariant under a global amplitude rescaling
  std::vector<FluxTrace> scaled = traces;
  for (auto& t : scaled) t.values *= 7.5;
  DirichletSeriesFit sfit = fit_dirichlet_series(scaled, 5, 0.04, 1.0);
  REQUIRE(sfit.exponents.size() == fit.exponents.size());
  for (int k = 0; k < fit.exponents.size(); ++k) {
    CHECK(sfit.exponents[k] == doctest::Approx(fit.exponents[k]).epsilon(1e-9));
    CHECK(sfit.multiplicities[k] == fit.multiplicities[k]);
    CHECK(sfit.coefficients(0, k) == doctest::Approx(7.5 * fit.coefficients(0, k)).epsilon(1e-6));
  }
}

TEST_CASE("flux independence of eigenvalue clusters") {
  Mesh m = build_box_mesh(2, {1, 1}, {32, 32});
  OperatorP P(ScalarField(m, 1.0), TensorField::identity(m));
  SpectralData sd = dirichlet_spectrum(P, 8);

  CHECK(flux_independence_check(sd, 0) > 0.9);  // singleton: normalized trace
  REQUIRE(sd.multiplicities[1] == 2);
  CHECK(flux_independence_check(sd, 1) >= 0.1);

  // duplicated trace is a negative control
  BoundaryTrace g(m, Eigen::VectorXd(sd.flux_traces.col(0)));
  CHECK(flux_independence_check(m, {g, g}) < 1e-12);
}

TEST_CASE("eigenspace matching recovers identity and rotations") {
  std::mt19937 rng(20260823u);
  std::normal_distribution<double> normal;
  int mdim = 3, nx = 40, ny = 25;
  Eigen::MatrixXd F(mdim, nx), Ft(mdim, ny);
  for (int i = 0; i < mdim; ++i) {
    for (int j = 0; j < nx; ++j) F(i, j) = normal(rng);
    for (int j = 0; j < ny; ++j) Ft(i, j) = normal(rng);
  }

  EigenspaceMatch same = match_eigenspaces(F, Ft, F, Ft, mdim);
  CHECK((same.T - Eigen::MatrixXd::Identity(mdim, mdim)).norm() < 1e-10);
  CHECK(same.verification_error < 1e-10);

  Eigen::MatrixXd Mrand(mdim, mdim);
  for (int i = 0; i < mdim; ++i)
    for (int j = 0; j < mdim; ++j) Mrand(i, j) = normal(rng);
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(Mrand);
  Eigen::MatrixXd Q = qr.householderQ();
  if (Q.determinant() < 0) Q.col(0) *= -1.0;

  Eigen::MatrixXd G = Q.transpose() * F, Gt = Q.transpose() * Ft;
  EigenspaceMatch rot = match_eigenspaces(F, Ft, G, Gt, mdim);
  CHECK((rot.T - Q).norm() < 1e-8);
  CHECK(rot.orthogonality_defect < 1e-8);
  CHECK(rot.verification_error < 1e-8);
  CHECK(rot.condition < 1.0 + 1e-8);

  // dependent boundary rows violate the independence hypothesis
  Eigen::MatrixXd Ft_bad = Ft;
  Ft_bad.row(2) = Ft_bad.row(0) + Ft_bad.row(1);
  Eigen::MatrixXd F_bad = F;
  F_bad.row(2) = F_bad.row(0) + F_bad.row(1);
  CHECK_THROWS_AS(match_eigenspaces(F_bad, Ft_bad, F_bad, Ft_bad, mdim), std::runtime_error);
}

TEST_CASE("kappa recovery from the eigenexpansion") {
  Mesh m = build_box_mesh(2, {1, 1}, {32, 32});
  OperatorP P(ScalarField(m, 1.0), TensorField::identity(m));
  SpectralData sd = dirichlet_spectrum(P, 400);

  KappaRecovery rec = recover_kappa(sd);
  CHECK(rec.coefficients[0] == doctest::Approx(8.0 / (M_PI * M_PI)).epsilon(1e-3));
  CHECK(rec.parseval_defect <= 1e-3);

  // bulk mean over the inset subdomain
  Eigen::VectorXd lm = lumped_mass(m);
  double num = 0, den = 0;
  for (int i = 0; i < m.node_count(); ++i) {
    double d = std::min({m.nodes(i, 0), 1.0 - m.nodes(i, 0), m.nodes(i, 1),
                         1.0 - m.nodes(i, 1)});
    if (d < 0.1) continue;
    num += lm[i] * rec.kappa_hat.values[i];
    den += lm[i];
  }
  CHECK(num / den == doctest::Approx(1.0).epsilon(0.02));

  // kappa = 2: same eigenfunctions up to weight normalization, doubled series
  OperatorP P2(ScalarField(m, 2.0), TensorField::identity(m));
  SpectralData sd2 = dirichlet_spectrum(P2, 400);
  KappaRecovery rec2 = recover_kappa(sd2);
  double num2 = 0;
  for (int i = 0; i < m.node_count(); ++i) {
    double d = std::min({m.nodes(i, 0), 1.0 - m.nodes(i, 0), m.nodes(i, 1),
                         1.0 - m.nodes(i, 1)});
    if (d < 0.1) continue;
    num2 += lm[i] * rec2.kappa_hat.values[i];
  }
  CHECK(num2 / den == doctest::Approx(2.0).epsilon(0.02));

  KappaRecovery clipped = recover_kappa(sd, 5);
  CHECK(clipped.tail_warning);
}

TEST_CASE("bulk relative error helper") {
  Mesh m = build_box_mesh(2, {1, 1}, {16, 16});
  ScalarField a(m, 2.0), b(m, 2.0);
  CHECK(bulk_relative_error(a, b, 0.1) == 0.0);
  ScalarField c(m, 2.1);
  CHECK(bulk_relative_error(c, b, 0.1) == doctest::Approx(0.05).epsilon(1e-10));
}

TEST_CASE("polarized coefficient matches the direct projection") {
  Mesh m = build_box_mesh(2, {1, 1}, {24, 24});
  ScalarField g = gamma_truth(m), kap(m, 1.0);
  TensorField A = TensorField::identity(m);
  BoundaryTrace h = BoundaryTrace::sample(m, [](const Eigen::Vector3d& x) { return x[0]; });
  BoundaryTrace ht = BoundaryTrace::sample(m, [](const Eigen::Vector3d& x) { return x[1] * x[0]; });

  FluxTrace trace = sigma_map_polarized(g, kap, A, h, ht, SourceEnvelope::pulse(1e-3), 1.0, 2e-3);
  DirichletSeriesFit fit = fit_dirichlet_series(trace, 5, 0.02, 1.0);
  REQUIRE(fit.exponents.size() >= 1);

  OperatorP P(kap, A);
  SpectralData sd = dirichlet_spectrum(P, 6);
  ScalarField w = solve_conductivity(g, h), wt = solve_conductivity(g, ht);
  ScalarField jp = joule_source(g, ScalarField(m, w.values + wt.values));
  ScalarField jm = joule_source(g, ScalarField(m, w.values - wt.values));
  ScalarField F(m, 0.25 * (jp.values - jm.values));
  SpMat Mu = assemble_mass(m);
  double d_direct = sd.eigenfunctions.col(0).dot(Mu * F.values);

  // project the fitted amplitude on the spectral flux trace of mode 1
  Eigen::VectorXd lb = lumped_boundary_mass(m);
  Eigen::VectorXd g0 = sd.flux_traces.col(0);
  double d_fit = fit.amplitudes[0][0].values.dot(lb.cwiseProduct(g0)) /
                 g0.dot(lb.cwiseProduct(g0));
  CHECK(d_fit == doctest::Approx(d_direct).epsilon(5e-3));
}

TEST_CASE("full pipeline from black-box voltage measurements") {
  Mesh m = build_box_mesh(2, {1, 1}, {32, 32});
  ScalarField g_true = gamma_truth(m), k_true(m, 1.0);
  TensorField A = TensorField::identity(m);

  PipelineConfig cfg;
  cfg.mesh = &m;
  cfg.sigma = [&](const BoundaryTrace& h, const SourceEnvelope& env, double t_end, double dt) {
    return sigma_map(g_true, k_true, A, h, env, t_end, dt);
  };
  cfg.sigma_polarized = [&](const BoundaryTrace& h, const BoundaryTrace& ht,
                            const SourceEnvelope& env, double t_end, double dt) {
    return sigma_map_polarized(g_true, k_true, A, h, ht, env, t_end, dt);
  };
  cfg.gamma_parametrize = [&](const Eigen::VectorXd& p) {
    ScalarField g = ScalarField::sample(m, [&](const Eigen::Vector3d& x) {
      return p[0] + p[1] * bump2d(x) + p[2] * (x[0] - 0.5) + p[3] * (x[1] - 0.5);
    });
    g.require_positive(1e-8, "gamma iterate");
    return g;
  };
  cfg.gamma_initial = Eigen::VectorXd::Zero(4);
  cfg.gamma_initial[0] = 1.2;
  cfg.kappa_parametrize = [&](const Eigen::VectorXd& p) {
    ScalarField k = ScalarField::sample(
        m, [&](const Eigen::Vector3d& x) { return p[0] + p[1] * bump2d(x); });
    k.require_positive(1e-8, "kappa iterate");
    return k;
  };
  cfg.kappa_initial = Eigen::VectorXd::Zero(2);
  cfg.kappa_initial[0] = 1.4;
  cfg.ramp_t_end = 3.0;
  cfg.mode_budget = 5;
  cfg.series_modes = 800;

  PipelineReport rep = full_pipeline(cfg);
  CHECK(rep.ok);
  CHECK(rep.eigenvalues[0] == doctest::Approx(2.0 * M_PI * M_PI).epsilon(0.01));
  CHECK(std::abs(rep.gamma_params[0] - 1.0) < 0.1);
  CHECK(std::abs(rep.gamma_params[1] - 0.3) < 0.03);
  CHECK(std::abs(rep.kappa_params[0] - 1.0) < 0.05);
  CHECK(std::abs(rep.kappa_params[1]) < 0.05);
  CHECK(bulk_relative_error(rep.kappa_hat, k_true, 0.1) < 0.05);
  CHECK(rep.to_json().find("eigenvalues") != std::string::npos);
  for (double s : rep.flux_sigma_min) CHECK(s > 1e-3);
}

TEST_CASE("pipeline spectral stage works from source-to-flux probes") {
  Mesh m = build_box_mesh(2, {1, 1}, {32, 32});
  ScalarField k_true(m, 1.0);
  TensorField A = TensorField::identity(m);

  PipelineConfig cfg;
  cfg.mesh = &m;
  cfg.xi = [&](const ScalarField& F, const SourceEnvelope& env, double t_end, double dt) {
    return xi_map(k_true, A, F, env, t_end, dt);
  };
  cfg.xi_sources.push_back(ScalarField::sample(m, [](const Eigen::Vector3d& x) {
    double dx = x[0] - 0.35, dy = x[1] - 0.5;
    return std::exp(-18.0 * (dx * dx + dy * dy));
  }));
  cfg.xi_sources.push_back(ScalarField::sample(m, [](const Eigen::Vector3d& x) {
    double dx = x[0] - 0.65, dy = x[1] - 0.55;
    return std::exp(-22.0 * (dx * dx + dy * dy));
  }));
  cfg.kappa_parametrize = [&](const Eigen::VectorXd& p) {
    ScalarField k(m, p[0]);
    k.require_positive(1e-8, "kappa iterate");
    return k;
  };
  cfg.kappa_initial = Eigen::VectorXd::Constant(1, 1.5);
  cfg.mode_budget = 4;
  cfg.series_modes = 200;

  PipelineReport rep = full_pipeline(cfg);
  CHECK(rep.ok);
  CHECK(rep.eigenvalues[0] == doctest::Approx(2.0 * M_PI * M_PI).epsilon(0.01));
  CHECK(std::abs(rep.kappa_params[0] - 1.0) < 0.02);
  CHECK(rep.gamma_params.size() == 0);
}
