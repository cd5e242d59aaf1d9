#include "hdi/heat.hpp"

#include <cmath>
#include <map>
#include <memory>

namespace hdi {

namespace {

double chi_raw(double v) {
  if (v <= 0 || v >= 1) return 0;
  return std::exp(-1.0 / (v * (1.0 - v)));
}

double chi_norm_constant() {
  // c with int_0^1 (c * chi_raw(u / width))^2 du = 1, computed once by
  // composite Simpson at high resolution (integrand is C^inf with compact support)
  static const double c = [] {
    const int n = 1 << 16;
    double s = 0;
    for (int i = 0; i <= n; ++i) {
      double v = static_cast<double>(i) / n;
      double f = chi_raw(v) * chi_raw(v);
      double w = (i == 0 || i == n) ? 1 : (i % 2 ? 4 : 2);
      s += w * f;
    }
    double integral = s / (3.0 * n) * SourceEnvelope::chi_width;
    return 1.0 / std::sqrt(integral);
  }();
  return c;
}

}  // namespace

double SourceEnvelope::chi(double u) {
  return chi_norm_constant() * chi_raw(u / chi_width);
}

SourceEnvelope SourceEnvelope::ramp() { return SourceEnvelope{}; }

SourceEnvelope SourceEnvelope::pulse(double epsilon) {
  if (!(epsilon > 0)) throw std::invalid_argument("SourceEnvelope: epsilon must be > 0");
  SourceEnvelope e;
  e.kind_ = Kind::pulse;
  e.epsilon_ = epsilon;
  return e;
}

SourceEnvelope SourceEnvelope::impulse() {
  SourceEnvelope e;
  e.kind_ = Kind::impulse;
  return e;
}

SourceEnvelope SourceEnvelope::custom(std::function<double(double)> fn) {
  SourceEnvelope e;
  e.kind_ = Kind::custom;
  e.fn_ = std::move(fn);
  return e;
}

double SourceEnvelope::value(double t) const {
  switch (kind_) {
    case Kind::ramp: {
      if (t <= 0.5) return 0;
      if (t >= 1.0) return 1;
      double u = (t - 0.5) * 2.0;
      return u * u * u * (10.0 + u * (-15.0 + 6.0 * u));
    }
    case Kind::pulse:
      return chi(t / epsilon_) / std::sqrt(epsilon_);
    case Kind::impulse:
      throw std::logic_error("SourceEnvelope: impulse has no pointwise value");
    case Kind::custom:
      return fn_(t);
  }
  return 0;
}

std::string SourceEnvelope::describe() const {
  switch (kind_) {
    case Kind::ramp: return "ramp";
    case Kind::pulse: return "pulse eps=" + std::to_string(epsilon_);
    case Kind::impulse: return "impulse";
    case Kind::custom: return "custom";
  }
  return "";
}

Eigen::VectorXd FluxTrace::total_flux() const {
  Eigen::VectorXd lm = lumped_boundary_mass(*mesh);
  return values.transpose() * lm;
}

Eigen::VectorXd FluxTrace::at_time(double t) const {
  const int nt = sample_count();
  if (t <= times[0]) return values.col(0);
  if (t >= times[nt - 1]) return values.col(nt - 1);
  int i = 0;
  while (times[i + 1] < t) ++i;
  double w = (t - times[i]) / (times[i + 1] - times[i]);
  return (1 - w) * values.col(i) + w * values.col(i + 1);
}

namespace {

ScalarField bilinear_joule(const ScalarField& gamma, const ScalarField& u1,
                           const ScalarField& u2) {
  const Mesh& m = *gamma.mesh;
  const int nv = m.verts_per_element();
  Eigen::VectorXd num = Eigen::VectorXd::Zero(m.node_count());
  for (int e = 0; e < m.element_count(); ++e) {
    double g = 0;
    Eigen::Vector3d g1 = Eigen::Vector3d::Zero(), g2 = Eigen::Vector3d::Zero();
    for (int v = 0; v < nv; ++v) {
      int node = m.elements[e][v];
      g += gamma.values[node];
      g1 += u1.values[node] * m.basis_gradient(e, v);
      g2 += u2.values[node] * m.basis_gradient(e, v);
    }
    double contrib = (g / nv) * g1.dot(g2) * m.element_volume(e) / nv;
    for (int v = 0; v < nv; ++v) num[m.elements[e][v]] += contrib;
  }
  return ScalarField(m, num.cwiseQuotient(lumped_mass(m)));
}

}  // namespace

ScalarField joule_source(const ScalarField& gamma, const ScalarField& u) {
  return bilinear_joule(gamma, u, u);
}

namespace {

class StepSolverCache {
public:
  StepSolverCache(const SpMat& Mw, const SpMat& K) : Mw_(Mw), K_(K) {}

  // factorization of Mw + c K
  const Eigen::SimplicialLDLT<SpMat>& get(double c) {
    auto it = cache_.find(c);
    if (it != cache_.end()) return *it->second;
    auto solver = std::make_unique<Eigen::SimplicialLDLT<SpMat>>();
    SpMat A = Mw_ + c * K_;
    solver->compute(A);
    if (solver->info() != Eigen::Success)
      throw std::runtime_error("evolve_heat: step factorization failed");
    return *cache_.emplace(c, std::move(solver)).first->second;
  }

private:
  const SpMat& Mw_;
  const SpMat& K_;
  std::map<double, std::unique_ptr<Eigen::SimplicialLDLT<SpMat>>> cache_;
};

}  // namespace

HeatHistory evolve_heat(const OperatorP& P,
                        const std::function<Eigen::VectorXd(double)>& source_full,
                        const Eigen::VectorXd& times) {
  const Mesh& m = P.mesh();
  const int nt = static_cast<int>(times.size());
  if (nt < 2 || times[0] != 0) throw std::invalid_argument("evolve_heat: grid must start at 0");
  for (int i = 0; i + 1 < nt; ++i)
    if (!(times[i + 1] > times[i])) throw std::invalid_argument("evolve_heat: grid not increasing");

  const SpMat& Mw = P.weighted_mass_ii();
  const SpMat& K = P.stiffness_ii();
  StepSolverCache cache(Mw, K);

  auto load = [&](double t) { return interior_part(m, P.mass() * source_full(t)); };

  HeatHistory hist;
  hist.mesh = &m;
  hist.times = times;
  hist.states = Eigen::MatrixXd::Zero(m.node_count(), nt);

  Eigen::VectorXd psi = Eigen::VectorXd::Zero(m.interior_count());
  Eigen::VectorXd f_prev = load(0);
  for (int i = 1; i < nt; ++i) {
    double dt = times[i] - times[i - 1];
    Eigen::VectorXd f_next = load(times[i]);
    if (i <= 2) {
      // Rannacher startup: two implicit Euler half-steps
      for (int half = 0; half < 2; ++half) {
        double tm = times[i - 1] + dt * (half + 1) * 0.5;
        const auto& solver = cache.get(dt * 0.5);
        psi = solver.solve(Mw * psi + (dt * 0.5) * load(tm));
      }
    } else {
      const auto& solver = cache.get(dt * 0.5);
      psi = solver.solve(Mw * psi - (dt * 0.5) * (K * psi) +
                         (dt * 0.5) * (f_prev + f_next));
    }
    f_prev = f_next;
    hist.states.col(i) = scatter(m, psi, Eigen::VectorXd::Zero(m.boundary_count()));
  }
  return hist;
}

HeatHistory evolve_heat(const OperatorP& P,
                        const std::function<Eigen::VectorXd(double)>& source_full,
                        double t_end, double dt) {
  if (!(dt > 0) || !(t_end > 0)) throw std::invalid_argument("evolve_heat: dt and t_end must be > 0");
  int n = static_cast<int>(std::ceil(t_end / dt - 1e-12));
  Eigen::VectorXd times(n + 1);
  for (int i = 0; i <= n; ++i) times[i] = t_end * i / n;
  return evolve_heat(P, source_full, times);
}

FluxTrace heat_flux_trace(const OperatorP& P, const HeatHistory& hist,
                          const std::function<Eigen::VectorXd(double)>& source_full) {
  const Mesh& m = P.mesh();
  const int nt = static_cast<int>(hist.times.size());
  Eigen::VectorXd lm = lumped_boundary_mass(m);

  FluxTrace ft;
  ft.mesh = &m;
  ft.times = hist.times;
  ft.values.resize(m.boundary_count(), nt);
  ft.values.col(0).setZero();

  auto dpsi = [&](int i) {
    // 3-point finite difference on a nonuniform grid
    int a = std::max(0, std::min(i - 1, nt - 3));
    double t0 = hist.times[a], t1 = hist.times[a + 1], t2 = hist.times[a + 2];
    double t = hist.times[i];
    double w0 = (2 * t - t1 - t2) / ((t0 - t1) * (t0 - t2));
    double w1 = (2 * t - t0 - t2) / ((t1 - t0) * (t1 - t2));
    double w2 = (2 * t - t0 - t1) / ((t2 - t0) * (t2 - t1));
    return (w0 * hist.states.col(a) + w1 * hist.states.col(a + 1) + w2 * hist.states.col(a + 2))
        .eval();
  };

  for (int i = 1; i < nt; ++i) {
    Eigen::VectorXd g = P.weighted_mass() * dpsi(i) + P.stiffness() * hist.states.col(i) -
                        P.mass() * source_full(hist.times[i]);
    ft.values.col(i) = boundary_part(m, g).cwiseQuotient(lm);
  }
  return ft;
}

namespace {

double adaptive_simpson(const std::function<double(double)>& f, double a, double b, double fa,
                        double fm, double fb, double whole, double tol, int depth) {
  double m = 0.5 * (a + b);
  double lm = 0.5 * (a + m), rm = 0.5 * (m + b);
  double flm = f(lm), frm = f(rm);
  double left = (m - a) / 6.0 * (fa + 4 * flm + fm);
  double right = (b - m) / 6.0 * (fm + 4 * frm + fb);
  if (depth <= 0 || std::abs(left + right - whole) <= 15 * tol)
    return left + right + (left + right - whole) / 15.0;
  return adaptive_simpson(f, a, m, fa, flm, fm, left, tol * 0.5, depth - 1) +
         adaptive_simpson(f, m, b, fm, frm, fb, right, tol * 0.5, depth - 1);
}

double integrate_adaptive(const std::function<double(double)>& f, double a, double b,
                          double tol) {
  if (b <= a) return 0;
  double fa = f(a), fb = f(b), fm = f(0.5 * (a + b));
  double whole = (b - a) / 6.0 * (fa + 4 * fm + fb);
  return adaptive_simpson(f, a, b, fa, fm, fb, whole, tol, 40);
}

}  // namespace

ScalarField duhamel_solution(const SpectralData& sd, const ScalarField& F_space,
                             const std::function<double(double)>& env2, double t,
                             double* tail) {
  const Mesh& m = *sd.mesh;
  SpMat Mu = assemble_mass(m);
  Eigen::VectorXd d = sd.eigenfunctions.transpose() * (Mu * F_space.values);

  Eigen::VectorXd result = Eigen::VectorXd::Zero(m.node_count());
  double last_term = 0;
  for (int k = 0; k < sd.count(); ++k) {
    double lam = sd.eigenvalues[k];
    auto f = [&](double s) { return std::exp(-lam * (t - s)) * env2(s); };
    double I = integrate_adaptive(f, 0, t, 1e-12);
    result += d[k] * I * sd.eigenfunctions.col(k);
    last_term = std::abs(d[k] * I);
  }
  if (tail) *tail = last_term;
  return ScalarField(m, result);
}

FluxTrace impulse_response(const SpectralData& sd, const ScalarField& G,
                           const Eigen::VectorXd& times) {
  const Mesh& m = *sd.mesh;
  ScalarField inv_kappa(m, sd.kappa.values.cwiseInverse());
  SpMat Mw = assemble_mass(m, inv_kappa);
  Eigen::VectorXd d = sd.eigenfunctions.transpose() * (Mw * G.values);

  FluxTrace ft;
  ft.mesh = &m;
  ft.times = times;
  ft.values = Eigen::MatrixXd::Zero(m.boundary_count(), times.size());
  ft.source = "impulse response, " + std::to_string(sd.count()) + " modes";
  double tmin = times.size() ? times.minCoeff() : 0;
  for (int j = 0; j < times.size(); ++j) {
    if (times[j] <= 0) continue;
    for (int k = 0; k < sd.count(); ++k)
      ft.values.col(j) += std::exp(-sd.eigenvalues[k] * times[j]) * d[k] * sd.flux_traces.col(k);
  }
  int last = sd.count() - 1;
  ft.tail_estimate = std::abs(d[last]) * std::exp(-sd.eigenvalues[last] * std::max(tmin, 0.0)) *
                     sd.flux_traces.col(last).cwiseAbs().maxCoeff();
  return ft;
}

Eigen::VectorXd time_grid(const SourceEnvelope& envelope, double t_end, double dt) {
  if (!(dt > 0) || !(t_end > dt)) throw std::invalid_argument("time_grid: need 0 < dt < t_end");
  if (envelope.kind() != SourceEnvelope::Kind::pulse) {
    int n = static_cast<int>(std::ceil(t_end / dt - 1e-12));
    Eigen::VectorXd times(n + 1);
    for (int i = 0; i <= n; ++i) times[i] = t_end * i / n;
    return times;
  }
  // pulse: resolve the support [0, eps*chi_width] finely, then coarsen
  double support = envelope.epsilon() * SourceEnvelope::chi_width;
  double fine = support / 64.0;
  std::vector<double> ts{0.0};
  for (int i = 1; i <= 64; ++i) ts.push_back(support * i / 64.0);
  double step = fine;
  while (ts.back() < t_end) {
    step = std::min(step * 1.4, dt);
    double next = ts.back() + step;
    if (next > t_end - 0.5 * step) next = t_end;
    ts.push_back(next);
  }
  return Eigen::Map<Eigen::VectorXd>(ts.data(), ts.size());
}

namespace {

FluxTrace run_heat_measurement(const OperatorP& P, const ScalarField& F_space,
                               const SourceEnvelope& envelope, double t_end, double dt,
                               const std::string& label) {
  const Mesh& m = P.mesh();
  if (envelope.kind() == SourceEnvelope::Kind::impulse) {
    int modes = std::min(m.interior_count(), 60);
    SpectralData sd = dirichlet_spectrum(P, modes);
    int n = static_cast<int>(std::ceil(t_end / dt - 1e-12));
    Eigen::VectorXd times(n + 1);
    for (int i = 0; i <= n; ++i) times[i] = t_end * i / n;
    ScalarField G(m, P.kappa().values.cwiseProduct(F_space.values));
    FluxTrace ft = impulse_response(sd, G, times);
    ft.source = label + ", " + envelope.describe();
    return ft;
  }
  auto source = [&](double t) { return (envelope.squared(t) * F_space.values).eval(); };
  Eigen::VectorXd times = time_grid(envelope, t_end, dt);
  HeatHistory hist = evolve_heat(P, source, times);
  FluxTrace ft = heat_flux_trace(P, hist, source);
  ft.source = label + ", " + envelope.describe();
  return ft;
}

}  // namespace

FluxTrace sigma_map(const ScalarField& gamma, const ScalarField& kappa, const TensorField& A,
                    const BoundaryTrace& h, const SourceEnvelope& envelope, double t_end,
                    double dt) {
  ScalarField w = solve_conductivity(gamma, h);
  ScalarField F = joule_source(gamma, w);
  OperatorP P(kappa, A);
  return run_heat_measurement(P, F, envelope, t_end, dt, "sigma");
}

FluxTrace sigma_map_polarized(const ScalarField& gamma, const ScalarField& kappa,
                              const TensorField& A, const BoundaryTrace& h,
                              const BoundaryTrace& ht, const SourceEnvelope& envelope,
                              double t_end, double dt) {
  // 1/4 [Sigma(env(h+ht)) - Sigma(env(h-ht))] collapses, by bilinearity of the
  // Joule source and linearity of the heat solve, to one run with the source
  // gamma grad w^h . grad w^ht
  ScalarField wh = solve_conductivity(gamma, h);
  ScalarField wt = solve_conductivity(gamma, ht);
  ScalarField F = bilinear_joule(gamma, wh, wt);
  OperatorP P(kappa, A);
  return run_heat_measurement(P, F, envelope, t_end, dt, "sigma polarized");
}

FluxTrace xi_map(const ScalarField& kappa, const TensorField& A, const ScalarField& F_space,
                 const SourceEnvelope& envelope, double t_end, double dt) {
  OperatorP P(kappa, A);
  return run_heat_measurement(P, F_space, envelope, t_end, dt, "xi");
}

}  // namespace hdi
