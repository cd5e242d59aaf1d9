#include "hdi/spectral_inverse.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <complex>
#include <sstream>
#include <stdexcept>

namespace hdi {

namespace {

// equilibrium value of a ramp trace with a drift check over the trailing window
double equilibrium_value(const FluxTrace& trace, double* drift_out) {
  Eigen::VectorXd s = trace.total_flux();
  int nt = trace.sample_count();
  if (nt < 8) throw std::invalid_argument("extract_dtn_form: trace too short");
  double t_end = trace.times[nt - 1];
  double window = std::min(1.0, 0.25 * t_end);
  double s_end = s[nt - 1];
  int i_win = nt - 2;
  while (i_win > 0 && trace.times[i_win] > t_end - window) --i_win;
  double drift = std::abs(s_end - s[i_win]) / std::max(std::abs(s_end), 1.0);
  if (drift_out) *drift_out = drift;
  if (drift > 1e-7) {
    // estimate the decay rate of the transient for the error message
    double d1 = std::abs(s[i_win] - s_end);
    int i_mid = (i_win + nt - 1) / 2;
    double d2 = std::abs(s[i_mid] - s_end);
    double rate = (d2 > 0 && d1 > 0)
                      ? std::log(d1 / d2) / (trace.times[i_mid] - trace.times[i_win])
                      : 0.0;
    std::ostringstream msg;
    msg << "extract_dtn_form: equilibrium not reached (drift " << drift
        << ", decay rate ~" << rate << "); extend t_end";
    throw std::runtime_error(msg.str());
  }
  return s_end;
}

}  // namespace

DtnFormTable extract_dtn_form(const ProbeMeasure& measure,
                              const std::vector<BoundaryTrace>& probes) {
  int n = static_cast<int>(probes.size());
  if (n == 0) throw std::invalid_argument("extract_dtn_form: empty probe set");
  const Mesh& m = *probes[0].mesh;

  DtnFormTable out;
  out.gram.resize(n, n);
  std::vector<double> drifts;

  auto q_of = [&](const BoundaryTrace& h) {
    FluxTrace trace = measure(h);
    double drift = 0;
    double value = equilibrium_value(trace, &drift);
    drifts.push_back(drift);
    out.t_read = trace.times[trace.sample_count() - 1];
    return -value;
  };

  for (int i = 0; i < n; ++i) out.gram(i, i) = q_of(probes[i]);
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j) {
      BoundaryTrace hp(m, probes[i].values + probes[j].values);
      BoundaryTrace hm(m, probes[i].values - probes[j].values);
      double q = 0.25 * (q_of(hp) - q_of(hm));
      out.gram(i, j) = q;
      out.gram(j, i) = q;
    }
  out.equilibrium_residuals =
      Eigen::Map<Eigen::VectorXd>(drifts.data(), static_cast<int>(drifts.size()));
  return out;
}

namespace {

Eigen::MatrixXd model_gram(const Mesh& mesh, const ScalarField& gamma,
                           const std::vector<BoundaryTrace>& probes) {
  int n = static_cast<int>(probes.size());
  SpMat K = assemble_stiffness(mesh, gamma);
  std::vector<Eigen::VectorXd> w(n);
  for (int i = 0; i < n; ++i) w[i] = solve_conductivity(gamma, probes[i]).values;
  Eigen::MatrixXd G(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = i; j < n; ++j) {
      G(i, j) = w[i].dot(K * w[j]);
      G(j, i) = G(i, j);
    }
  return G;
}

Eigen::VectorXd gram_residual(const Eigen::MatrixXd& model, const Eigen::MatrixXd& data) {
  int n = static_cast<int>(model.rows());
  Eigen::VectorXd r(n * (n + 1) / 2);
  int idx = 0;
  for (int i = 0; i < n; ++i)
    for (int j = i; j < n; ++j) {
      double w = (i == j) ? 1.0 : std::sqrt(2.0);  // count off-diagonals once, full weight
      r[idx++] = w * (model(i, j) - data(i, j));
    }
  return r;
}

}  // namespace

GammaFit fit_gamma_from_dtn(const DtnFormTable& table,
                            const std::vector<BoundaryTrace>& probes, const Mesh& mesh,
                            const std::function<ScalarField(const Eigen::VectorXd&)>& parametrize,
                            const Eigen::VectorXd& initial, double tol, int max_iterations) {
  int np = static_cast<int>(initial.size());
  auto residual = [&](const Eigen::VectorXd& p) {
    return gram_residual(model_gram(mesh, parametrize(p), probes), table.gram);
  };

  GammaFit fit;
  fit.params = initial;
  Eigen::VectorXd r = residual(fit.params);
  fit.misfit = r.norm();
  fit.history.push_back(fit.misfit);

  for (int it = 0; it < max_iterations; ++it) {
    if (fit.misfit <= tol) { fit.converged = true; break; }
    Eigen::MatrixXd J(r.size(), np);
    for (int k = 0; k < np; ++k) {
      double h = 1e-6 * std::max(1.0, std::abs(fit.params[k]));
      Eigen::VectorXd pk = fit.params;
      pk[k] += h;
      J.col(k) = (residual(pk) - r) / h;
    }
    Eigen::MatrixXd JtJ = J.transpose() * J;
    double damp = 1e-9 * std::max(JtJ.diagonal().maxCoeff(), 1e-30);
    Eigen::VectorXd step =
        (JtJ + damp * Eigen::MatrixXd::Identity(np, np)).ldlt().solve(-J.transpose() * r);

    double scale = 1.0;
    Eigen::VectorXd p_next;
    Eigen::VectorXd r_next;
    double m_next = 0;
    bool improved = false;
    for (int back = 0; back < 12; ++back) {
      p_next = fit.params + scale * step;
      try {
        r_next = residual(p_next);
      } catch (const std::exception&) {
        scale *= 0.5;  // parametrization left the admissible set
        continue;
      }
      m_next = r_next.norm();
      if (m_next < fit.misfit) { improved = true; break; }
      scale *= 0.5;
    }
    if (!improved) break;
    fit.params = p_next;
    r = r_next;
    fit.misfit = m_next;
    fit.history.push_back(fit.misfit);
    fit.iterations = it + 1;
    if (scale * step.norm() <= 1e-12 * std::max(1.0, fit.params.norm())) {
      fit.converged = true;
      break;
    }
    if (fit.misfit <= tol) { fit.converged = true; break; }
  }
  if (fit.misfit <= tol) fit.converged = true;
  fit.gamma = parametrize(fit.params);
  return fit;
}

namespace {

struct Window {
  std::vector<int> idx;
  double dt = 0;
};

// longest uniformly sampled run of the trace inside [t_min, t_max]
// (pulse grids have a refined start and a truncated final step)
Window uniform_window(const Eigen::VectorXd& times, double t_min, double t_max) {
  std::vector<int> in;
  for (int i = 0; i < times.size(); ++i)
    if (times[i] >= t_min - 1e-12 && times[i] <= t_max + 1e-12) in.push_back(i);
  if (in.size() < 8) throw std::invalid_argument("fit_dirichlet_series: window too short");
  int nd = static_cast<int>(in.size()) - 1;
  std::vector<double> d(nd);
  for (int i = 0; i < nd; ++i) d[i] = times[in[i + 1]] - times[in[i]];
  std::vector<double> sorted = d;
  std::nth_element(sorted.begin(), sorted.begin() + nd / 2, sorted.end());
  double dt = sorted[nd / 2];

  int best_start = 0, best_len = 0, run_start = 0;
  for (int i = 0; i < nd; ++i) {
    if (std::abs(d[i] - dt) > 1e-9 * dt) {
      run_start = i + 1;
      continue;
    }
    int len = i - run_start + 2;  // samples covered by the run
    if (len >= best_len) {        // >= prefers the latest run
      best_len = len;
      best_start = run_start;
    }
  }
  if (best_len < 8) throw std::invalid_argument("fit_dirichlet_series: uniform part too short");
  Window w;
  w.idx.assign(in.begin() + best_start, in.begin() + best_start + best_len);
  w.dt = dt;
  return w;
}

// scalar projections of a flux trace for the pencil: total flux plus generic
// asymmetric boundary functionals (modes with zero-mean eigenfunctions have
// zero total flux and would otherwise be invisible)
std::vector<Eigen::VectorXd> pencil_signals(const FluxTrace& trace, const Window& w) {
  const Mesh& mesh = *trace.mesh;
  Eigen::VectorXd lb = lumped_boundary_mass(mesh);
  int nb = mesh.boundary_count();
  std::vector<std::function<double(const Eigen::Vector3d&)>> fns = {
      [](const Eigen::Vector3d&) { return 1.0; },
      [](const Eigen::Vector3d& x) { return std::exp(x[0] + 0.3 * x[1] + 0.1 * x[2]); },
      [](const Eigen::Vector3d& x) {
        return std::sin(1.0 + 2.3 * x[0] + 1.7 * x[1] + 0.9 * x[2]);
      },
      [](const Eigen::Vector3d& x) { return 1.0 / (1.3 + x[0] - 0.7 * x[1] + 0.2 * x[2]); },
  };
  std::vector<Eigen::VectorXd> out;
  int nw = static_cast<int>(w.idx.size());
  for (const auto& fn : fns) {
    Eigen::VectorXd weight(nb);
    for (int b = 0; b < nb; ++b) {
      Eigen::Vector3d x = Eigen::Vector3d::Zero();
      x.head(mesh.dim) = mesh.nodes.row(mesh.boundary_nodes[b]).transpose();
      weight[b] = lb[b] * fn(x);
    }
    Eigen::VectorXd s(nw);
    for (int i = 0; i < nw; ++i) s[i] = weight.dot(trace.values.col(w.idx[i]));
    out.push_back(s);
  }
  return out;
}

// matrix-pencil exponent extraction from stacked scalar traces
std::vector<double> pencil_exponents(const std::vector<Eigen::VectorXd>& signals, double dt,
                                     int rank_cap, Eigen::VectorXd* svals) {
  int N = static_cast<int>(signals[0].size());
  int L = N / 2;
  int C = N - L;
  int P = static_cast<int>(signals.size());
  Eigen::MatrixXd H0(P * L, C), H1(P * L, C);
  for (int p = 0; p < P; ++p)
    for (int i = 0; i < L; ++i)
      for (int j = 0; j < C; ++j) {
        H0(p * L + i, j) = signals[p][i + j];
        H1(p * L + i, j) = signals[p][i + j + 1];
      }

  Eigen::BDCSVD<Eigen::MatrixXd> svd(H0, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const Eigen::VectorXd& sv = svd.singularValues();
  int r = 0;
  while (r < sv.size() && r < rank_cap && sv[r] >= 1e-11 * sv[0]) ++r;
  if (svals) *svals = sv.head(std::min<int>(sv.size(), rank_cap + 5));
  if (r == 0) throw std::runtime_error("fit_dirichlet_series: pencil rank collapse");

  Eigen::MatrixXd A = svd.matrixU().leftCols(r).transpose() * H1 * svd.matrixV().leftCols(r) *
                      sv.head(r).cwiseInverse().asDiagonal();
  Eigen::EigenSolver<Eigen::MatrixXd> eig(A);

  std::vector<double> lambdas;
  for (int i = 0; i < r; ++i) {
    std::complex<double> z = eig.eigenvalues()[i];
    if (std::abs(z) < 1e-14) continue;
    std::complex<double> lam = -std::log(z) / dt;
    if (lam.real() <= 0) continue;
    if (std::abs(lam.imag()) > 1e-4 * lam.real() + 1e-8) continue;
    lambdas.push_back(lam.real());
  }
  std::sort(lambdas.begin(), lambdas.end());
  if (lambdas.empty()) throw std::runtime_error("fit_dirichlet_series: no decaying exponents");
  return lambdas;
}

double boundary_norm_signed(const Eigen::VectorXd& lumped_b, const Eigen::VectorXd& a) {
  double norm = std::sqrt(a.dot(lumped_b.cwiseProduct(a)));
  // scale-stable sign: first entry within a whisker of the max magnitude
  double amax = a.cwiseAbs().maxCoeff();
  int pick = 0;
  for (int i = 0; i < a.size(); ++i)
    if (std::abs(a[i]) >= (1.0 - 1e-6) * amax) { pick = i; break; }
  return a[pick] >= 0 ? norm : -norm;
}

}  // namespace

DirichletSeriesFit fit_dirichlet_series(const std::vector<FluxTrace>& traces, int mode_budget,
                                        double t_min, double t_max, double cluster_rtol,
                                        double rank_rtol) {
  if (traces.empty()) throw std::invalid_argument("fit_dirichlet_series: no traces");
  if (!(t_min > 0) || t_max <= t_min)
    throw std::invalid_argument("fit_dirichlet_series: bad window");
  const Mesh& mesh = *traces[0].mesh;
  int P = static_cast<int>(traces.size());

  Window w = uniform_window(traces[0].times, t_min, t_max);
  int nw = static_cast<int>(w.idx.size());
  std::vector<Eigen::VectorXd> scalars;
  for (int p = 0; p < P; ++p) {
    if (traces[p].times.size() != traces[0].times.size() ||
        (traces[p].times - traces[0].times).cwiseAbs().maxCoeff() > 1e-12)
      throw std::invalid_argument("fit_dirichlet_series: traces share one time grid");
    for (Eigen::VectorXd& s : pencil_signals(traces[p], w))
      scalars.push_back(std::move(s));
  }

  DirichletSeriesFit fit;
  fit.mesh = &mesh;
  std::vector<double> lambdas =
      pencil_exponents(scalars, w.dt, mode_budget + 10, &fit.pencil_singular_values);

  // unobservable modes (below the amplitude floor at t_min) are dropped
  double lam_cap = -std::log(1e-12) / t_min;
  std::vector<double> kept;
  for (double l : lambdas)
    if (l <= lam_cap) kept.push_back(l);
  if (kept.empty()) throw std::runtime_error("fit_dirichlet_series: all modes unobservable");

  // collapse to clusters at the fit-level relative tolerance
  std::vector<double> reps;
  {
    double sum = kept[0];
    int cnt = 1;
    for (size_t i = 1; i < kept.size(); ++i) {
      if (kept[i] - kept[i - 1] <= cluster_rtol * kept[i]) {
        sum += kept[i];
        ++cnt;
      } else {
        reps.push_back(sum / cnt);
        sum = kept[i];
        cnt = 1;
      }
    }
    reps.push_back(sum / cnt);
  }
  // drop spurious pencil exponents: negligible amplitude in every scalar signal
  {
    int kall = static_cast<int>(reps.size());
    Eigen::MatrixXd Ea(nw, kall);
    for (int i = 0; i < nw; ++i)
      for (int k = 0; k < kall; ++k)
        Ea(i, k) = std::exp(-reps[k] * traces[0].times[w.idx[i]]);
    Eigen::MatrixXd S(nw, scalars.size());
    for (size_t s = 0; s < scalars.size(); ++s) S.col(s) = scalars[s];
    Eigen::MatrixXd Xa = Ea.colPivHouseholderQr().solve(S);
    Eigen::VectorXd amp = Xa.cwiseAbs().rowwise().maxCoeff();
    double floor_amp = 1e-8 * amp.maxCoeff();
    std::vector<double> significant;
    for (int k = 0; k < kall; ++k)
      if (amp[k] >= floor_amp) significant.push_back(reps[k]);
    if (!significant.empty()) reps = significant;
  }

  if (static_cast<int>(reps.size()) > mode_budget) reps.resize(mode_budget);
  int K = static_cast<int>(reps.size());
  fit.exponents = Eigen::Map<Eigen::VectorXd>(reps.data(), K);

  Eigen::MatrixXd E(nw, K);
  for (int i = 0; i < nw; ++i)
    for (int k = 0; k < K; ++k)
      E(i, k) = std::exp(-reps[k] * traces[0].times[w.idx[i]]);
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> Eqr(E);

  Eigen::VectorXd lb = lumped_boundary_mass(mesh);
  int nb = mesh.boundary_count();
  fit.amplitudes.resize(P);
  fit.coefficients.resize(P, K);
  double worst_res = 0;
  std::vector<Eigen::MatrixXd> amp_cols(K, Eigen::MatrixXd(nb, P));
  for (int p = 0; p < P; ++p) {
    Eigen::MatrixXd W(nw, nb);
    for (int i = 0; i < nw; ++i) W.row(i) = traces[p].values.col(w.idx[i]).transpose();
    Eigen::MatrixXd X = Eqr.solve(W);  // K x nb
    worst_res = std::max(worst_res, (E * X - W).norm() / std::max(W.norm(), 1e-300));
    fit.amplitudes[p].reserve(K);
    for (int k = 0; k < K; ++k) {
      Eigen::VectorXd a = X.row(k).transpose();
      fit.amplitudes[p].emplace_back(mesh, a);
      fit.coefficients(p, k) = boundary_norm_signed(lb, a);
      amp_cols[k].col(p) = lb.cwiseSqrt().cwiseProduct(a);
    }
  }
  fit.residual = worst_res;

  fit.multiplicities.resize(K);
  fit.cluster_singular_values.resize(K);
  for (int k = 0; k < K; ++k) {
    Eigen::BDCSVD<Eigen::MatrixXd> svd(amp_cols[k]);
    Eigen::VectorXd sv = svd.singularValues();
    Eigen::VectorXd norm_sv = sv / std::max(sv[0], 1e-300);
    fit.cluster_singular_values[k] = norm_sv;
    int rank = 0;
    while (rank < norm_sv.size() && norm_sv[rank] >= rank_rtol) ++rank;
    fit.multiplicities[k] = std::max(rank, 1);
  }
  return fit;
}

DirichletSeriesFit fit_dirichlet_series(const FluxTrace& trace, int mode_budget, double t_min,
                                        double t_max, double cluster_rtol) {
  return fit_dirichlet_series(std::vector<FluxTrace>{trace}, mode_budget, t_min, t_max,
                              cluster_rtol);
}

double flux_independence_check(const Mesh& mesh, const std::vector<BoundaryTrace>& traces) {
  if (traces.empty()) throw std::invalid_argument("flux_independence_check: no traces");
  Eigen::VectorXd sqrt_lb = lumped_boundary_mass(mesh).cwiseSqrt();
  Eigen::MatrixXd B(mesh.boundary_count(), traces.size());
  for (size_t j = 0; j < traces.size(); ++j) {
    Eigen::VectorXd c = sqrt_lb.cwiseProduct(traces[j].values);
    B.col(j) = c / std::max(c.norm(), 1e-300);
  }
  Eigen::BDCSVD<Eigen::MatrixXd> svd(B);
  return svd.singularValues().tail(1)(0);
}

double flux_independence_check(const SpectralData& sd, int cluster) {
  std::vector<BoundaryTrace> traces;
  for (int k = 0; k < sd.count(); ++k)
    if (sd.cluster_of[k] == cluster)
      traces.emplace_back(*sd.mesh, Eigen::VectorXd(sd.flux_traces.col(k)));
  return flux_independence_check(*sd.mesh, traces);
}

EigenspaceMatch match_eigenspaces(const Eigen::MatrixXd& F, const Eigen::MatrixXd& Ft,
                                  const Eigen::MatrixXd& G, const Eigen::MatrixXd& Gt, int m) {
  if (F.rows() != m || Ft.rows() != m || G.rows() != m || Gt.rows() != m)
    throw std::invalid_argument("match_eigenspaces: factor rank mismatch");
  if (Ft.cols() != Gt.cols() || F.cols() != G.cols())
    throw std::invalid_argument("match_eigenspaces: sample count mismatch");
  if (Ft.cols() < m) throw std::invalid_argument("match_eigenspaces: too few boundary samples");

  // greedy pivoting: grow the selected set by the column with the largest
  // component orthogonal to the current span (largest determinant growth)
  EigenspaceMatch match;
  Eigen::MatrixXd basis(m, m);
  std::vector<bool> used(Ft.cols(), false);
  double scale = Ft.norm() / std::sqrt(static_cast<double>(Ft.cols()));
  for (int step = 0; step < m; ++step) {
    int best = -1;
    double best_norm = -1;
    Eigen::VectorXd best_res;
    for (int j = 0; j < Ft.cols(); ++j) {
      if (used[j]) continue;
      Eigen::VectorXd res = Ft.col(j);
      for (int b = 0; b < step; ++b) res -= basis.col(b).dot(res) * basis.col(b);
      if (res.norm() > best_norm) {
        best_norm = res.norm();
        best = j;
        best_res = res;
      }
    }
    if (best < 0 || best_norm < 1e-10 * std::max(scale, 1e-300))
      throw std::runtime_error(
          "match_eigenspaces: boundary samples are rank deficient (independence hypothesis)");
    used[best] = true;
    match.boundary_samples.push_back(best);
    basis.col(step) = best_res / best_norm;
  }

  Eigen::MatrixXd Qf(m, m), Qg(m, m);
  for (int i = 0; i < m; ++i) {
    Qf.col(i) = Ft.col(match.boundary_samples[i]);
    Qg.col(i) = Gt.col(match.boundary_samples[i]);
  }
  // F(x).Ft(y_j) = G(x).Gt(y_j) for all x forces Qf^T T = Qg^T
  match.T = Qf.transpose().colPivHouseholderQr().solve(Qg.transpose());

  Eigen::BDCSVD<Eigen::MatrixXd> svd(match.T);
  match.condition = svd.singularValues()(0) / svd.singularValues()(m - 1);
  match.orthogonality_defect =
      (match.T.transpose() * match.T - Eigen::MatrixXd::Identity(m, m)).norm();

  double ref = 0;
  for (int i = 0; i < F.cols(); ++i) ref = std::max(ref, F.col(i).norm());
  double err = 0;
  for (int i = 0; i < F.cols(); ++i)
    err = std::max(err, (F.col(i) - match.T * G.col(i)).norm());
  match.verification_error = err / std::max(ref, 1e-300);
  return match;
}

KappaRecovery recover_kappa(const SpectralData& sd, int max_modes, double defect_tol) {
  const Mesh& mesh = *sd.mesh;
  int count = sd.count();
  if (max_modes > 0) count = std::min(count, max_modes);

  KappaRecovery rec;
  rec.coefficients.resize(count);
  for (int k = 0; k < count; ++k)
    rec.coefficients[k] =
        integrate(ScalarField(mesh, Eigen::VectorXd(sd.eigenfunctions.col(k))));

  Eigen::VectorXd c2 = rec.coefficients.cwiseAbs2();
  double total = c2.sum();
  double acc = 0;
  int K = count;
  for (int k = 0; k < count; ++k) {
    acc += c2[k];
    if ((total - acc) / std::max(total, 1e-300) <= defect_tol) { K = k + 1; break; }
  }
  rec.truncation = K;
  double acc_K = c2.head(K).sum();
  rec.parseval_defect = (total - acc_K) / std::max(total, 1e-300);
  if (rec.parseval_defect > defect_tol ||
      (K == count && c2[count - 1] > defect_tol * total))
    rec.tail_warning = true;

  Eigen::VectorXd values = sd.eigenfunctions.leftCols(K) * rec.coefficients.head(K);
  rec.kappa_hat = ScalarField(mesh, values);
  return rec;
}

double bulk_relative_error(const ScalarField& recovered, const ScalarField& reference,
                           double margin) {
  const Mesh& mesh = *recovered.mesh;
  Eigen::VectorXd lm = lumped_mass(mesh);
  double num = 0, den = 0;
  for (int i = 0; i < mesh.node_count(); ++i) {
    double dist = 1e300;
    for (int b : mesh.boundary_nodes)
      dist = std::min(dist, (mesh.nodes.row(i) - mesh.nodes.row(b)).norm());
    if (dist < margin) continue;
    double d = recovered.values[i] - reference.values[i];
    num += lm[i] * d * d;
    den += lm[i] * reference.values[i] * reference.values[i];
  }
  if (den == 0) throw std::invalid_argument("bulk_relative_error: empty bulk or zero reference");
  return std::sqrt(num / den);
}

namespace {

std::vector<double> to_std(const Eigen::VectorXd& v) {
  return std::vector<double>(v.data(), v.data() + v.size());
}

}  // namespace

std::string PipelineReport::to_json() const {
  nlohmann::json j;
  j["stages"] = stages;
  j["ok"] = ok;
  std::vector<std::vector<double>> gram;
  for (int i = 0; i < dtn_gram.rows(); ++i)
    gram.push_back(to_std(dtn_gram.row(i).transpose()));
  j["dtn_gram"] = gram;
  j["gamma_params"] = to_std(gamma_params);
  j["gamma_misfit"] = gamma_misfit;
  j["eigenvalues"] = to_std(eigenvalues);
  j["multiplicities"] = multiplicities;
  j["series_residual"] = series_residual;
  j["flux_sigma_min"] = flux_sigma_min;
  j["kappa_params"] = to_std(kappa_params);
  j["kappa_eigenvalue_misfit"] = kappa_eigenvalue_misfit;
  j["parseval_defect"] = parseval_defect;
  return j.dump(2);
}

std::vector<BoundaryTrace> pipeline_voltage_probes(const Mesh& mesh) {
  // products gamma grad w_i . grad w_j must hit every eigenfunction parity;
  // the exponential probe breaks the square's symmetries
  auto probe_fn = [](int which) {
    return [which](const Eigen::Vector3d& x) {
      switch (which) {
        case 0: return x[0];
        case 1: return x[1];
        case 2: return x[0] * x[1];
        case 3: return x[0] * x[0] - x[1] * x[1];
        default: return std::exp(0.8 * x[0] + 0.3 * x[1]);
      }
    };
  };
  std::vector<BoundaryTrace> probes;
  for (int i = 0; i < 5; ++i) probes.push_back(BoundaryTrace::sample(mesh, probe_fn(i)));
  return probes;
}

std::vector<std::pair<int, int>> pipeline_pulse_pairs() {
  return {{0, 0}, {0, 2}, {1, 2}, {4, 4}, {0, 4}};
}

PipelineReport full_pipeline(const PipelineConfig& cfg) {
  if (!cfg.mesh) throw std::invalid_argument("full_pipeline: mesh required");
  const Mesh& mesh = *cfg.mesh;
  PipelineReport rep;

  bool sigma_mode = static_cast<bool>(cfg.sigma);
  if (!sigma_mode && !cfg.xi)
    throw std::invalid_argument("full_pipeline: need sigma or xi measurements");

  std::vector<BoundaryTrace> probes = pipeline_voltage_probes(mesh);

  // stage 1+2: equilibrium DtN form and the conductivity fit
  if (sigma_mode) {
    ProbeMeasure ramp_measure = [&](const BoundaryTrace& h) {
      return cfg.sigma(h, SourceEnvelope::ramp(), cfg.ramp_t_end, cfg.ramp_dt);
    };
    DtnFormTable table = extract_dtn_form(ramp_measure, probes);
    rep.dtn_gram = table.gram;
    rep.stages.push_back("dtn_form: ok, max drift " +
                         std::to_string(table.equilibrium_residuals.maxCoeff()));

    if (cfg.gamma_parametrize) {
      GammaFit gfit = fit_gamma_from_dtn(table, probes, mesh, cfg.gamma_parametrize,
                                         cfg.gamma_initial);
      rep.gamma_params = gfit.params;
      rep.gamma_misfit = gfit.misfit;
      rep.stages.push_back(std::string("gamma_fit: ") +
                           (gfit.converged ? "converged" : "not converged") + ", misfit " +
                           std::to_string(gfit.misfit));
      if (!gfit.converged) return rep;
    }
  } else {
    rep.stages.push_back("dtn_form: skipped (source-to-flux mode)");
  }

  // stage 3: pulse probes and the Dirichlet-series fit
  SourceEnvelope pulse = SourceEnvelope::pulse(cfg.pulse_epsilon);
  std::vector<FluxTrace> traces;
  if (sigma_mode) {
    if (!cfg.sigma_polarized)
      throw std::invalid_argument("full_pipeline: polarized measurements required");
    for (auto [i, j] : pipeline_pulse_pairs())
      traces.push_back(cfg.sigma_polarized(probes[i], probes[j], pulse, cfg.heat_t_end,
                                           cfg.heat_dt));
  } else {
    if (cfg.xi_sources.empty())
      throw std::invalid_argument("full_pipeline: xi mode needs interior probe sources");
    for (const ScalarField& F : cfg.xi_sources)
      traces.push_back(cfg.xi(F, pulse, cfg.heat_t_end, cfg.heat_dt));
  }

  // crude principal decay rate from the trailing part of the first trace
  double lambda1_guess;
  {
    Eigen::VectorXd s = traces[0].total_flux();
    int nt = traces[0].sample_count();
    int ia = static_cast<int>(0.55 * nt), ib = static_cast<int>(0.9 * nt);
    double sa = std::abs(s[ia]), sb = std::abs(s[ib]);
    lambda1_guess = (sa > 0 && sb > 0 && sb < sa)
                        ? std::log(sa / sb) / (traces[0].times[ib] - traces[0].times[ia])
                        : 10.0;
    lambda1_guess = std::max(lambda1_guess, 1e-2);
  }
  double t_min = std::min(0.3 / lambda1_guess, 0.3 * cfg.heat_t_end);
  DirichletSeriesFit fit =
      fit_dirichlet_series(traces, cfg.mode_budget, t_min, cfg.heat_t_end);
  rep.eigenvalues = fit.exponents;
  rep.multiplicities = fit.multiplicities;
  rep.series_residual = fit.residual;
  rep.stages.push_back("series_fit: " + std::to_string(fit.exponents.size()) +
                       " clusters, residual " + std::to_string(fit.residual));

  // stage 4: independence of the recovered amplitude directions per cluster
  for (size_t k = 0; k < fit.cluster_singular_values.size(); ++k) {
    const Eigen::VectorXd& sv = fit.cluster_singular_values[k];
    rep.flux_sigma_min.push_back(sv[std::min<int>(fit.multiplicities[k], sv.size()) - 1]);
  }

  // stage 5: kappa parameters from the recovered spectrum
  TensorField A = TensorField::identity(mesh);
  int n_clusters = static_cast<int>(fit.exponents.size());
  int model_count = 0;
  for (int mult : fit.multiplicities) model_count += mult;
  model_count += 3;
  // the lowest clusters carry the smallest pulse and pencil bias
  int fit_clusters = std::min(n_clusters, 4);
  auto cluster_misfit = [&](const Eigen::VectorXd& p) {
    ScalarField kap = cfg.kappa_parametrize(p);
    kap.require_positive(1e-10, "kappa iterate");
    SpectralData sd = dirichlet_spectrum(OperatorP(kap, A), model_count);
    int nc = std::min<int>(fit_clusters, sd.cluster_count());
    Eigen::VectorXd r(nc);
    for (int c = 0; c < nc; ++c)
      r[c] = (sd.cluster_values[c] - fit.exponents[c]) / fit.exponents[c];
    return r;
  };

  Eigen::VectorXd kp = cfg.kappa_initial;
  Eigen::VectorXd r = cluster_misfit(kp);
  for (int it = 0; it < 25 && r.norm() > 1e-8; ++it) {
    Eigen::MatrixXd J(r.size(), kp.size());
    for (int k = 0; k < kp.size(); ++k) {
      double h = 1e-5 * std::max(1.0, std::abs(kp[k]));
      Eigen::VectorXd pk = kp;
      pk[k] += h;
      J.col(k) = (cluster_misfit(pk) - r) / h;
    }
    Eigen::MatrixXd JtJ = J.transpose() * J;
    Eigen::VectorXd step = (JtJ + 1e-12 * Eigen::MatrixXd::Identity(kp.size(), kp.size()))
                               .ldlt()
                               .solve(-J.transpose() * r);
    double scale = 1.0;
    bool improved = false;
    for (int back = 0; back < 10; ++back) {
      Eigen::VectorXd cand = kp + scale * step;
      Eigen::VectorXd rc;
      try {
        rc = cluster_misfit(cand);
      } catch (const std::exception&) {
        scale *= 0.5;
        continue;
      }
      if (rc.norm() < r.norm()) {
        kp = cand;
        r = rc;
        improved = true;
        break;
      }
      scale *= 0.5;
    }
    if (!improved) break;
  }
  rep.kappa_params = kp;
  rep.kappa_eigenvalue_misfit = r.norm();
  rep.stages.push_back("kappa_fit: misfit " + std::to_string(r.norm()));

  // stage 6: eigenexpansion of kappa from the fitted operator
  ScalarField kappa_fit = cfg.kappa_parametrize(kp);
  SpectralData sd_full = dirichlet_spectrum(OperatorP(kappa_fit, A), cfg.series_modes);
  KappaRecovery rec = recover_kappa(sd_full);
  rep.kappa_hat = rec.kappa_hat;
  rep.parseval_defect = rec.parseval_defect;
  rep.stages.push_back("kappa_series: " + std::to_string(rec.truncation) +
                       " modes, parseval defect " + std::to_string(rec.parseval_defect));
  rep.ok = true;
  return rep;
}

}  // namespace hdi
