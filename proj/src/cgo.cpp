#include "hdi/cgo.hpp"

#include <fftw3.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <string>
#include <utility>
#include <vector>

namespace hdi {

double CgoPhasePair::symbol_defect() const {
  // bilinear square, not the Hermitian norm
  Complex d1 = rho1(0) * rho1(0) + rho1(1) * rho1(1) + rho1(2) * rho1(2);
  Complex d2 = rho2(0) * rho2(0) + rho2(1) * rho2(1) + rho2(2) * rho2(2);
  return std::max(std::abs(d1), std::abs(d2));
}

CgoPhasePair make_phase_pair(const Eigen::Vector3d& xi, double R, double t_scale) {
  if (xi.norm() == 0) throw std::invalid_argument("make_phase_pair: xi must be nonzero");
  if (!(R > 0)) throw std::invalid_argument("make_phase_pair: R must be > 0");

  Eigen::Vector3d ex = xi.normalized();
  int least = 0;
  ex.cwiseAbs().minCoeff(&least);
  Eigen::Vector3d seed = Eigen::Vector3d::Unit(least);
  Eigen::Vector3d eta1 = (seed - seed.dot(ex) * ex).normalized();
  Eigen::Vector3d eta2 = ex.cross(eta1);

  // |rho|^2 = |xi|^2/2 + 2 t^2
  double need = R * R - 0.5 * xi.squaredNorm();
  double t = std::max(1.0, need > 0 ? std::sqrt(0.5 * need) : 1.0) * t_scale;
  double s = std::sqrt(0.25 * xi.squaredNorm() + t * t);

  CgoPhasePair p;
  p.xi = xi;
  p.R = R;
  p.t = t;
  p.rho1 = (0.5 * xi + t * eta1).cast<Complex>() + Complex(0, 1) * s * eta2.cast<Complex>();
  p.rho2 = (0.5 * xi - t * eta1).cast<Complex>() - Complex(0, 1) * s * eta2.cast<Complex>();
  return p;
}

Eigen::Vector3d PeriodicField::point(int i, int j, int k) const {
  return origin + spacing() * Eigen::Vector3d(i, j, k);
}

bool PeriodicField::in_omega(const Eigen::Vector3d& x) const {
  return (x.array() >= omega_lo.array() - 1e-12).all() &&
         (x.array() <= omega_hi.array() + 1e-12).all();
}

namespace {

double smooth_step_inf(double s) {
  // C^inf transition: 0 at s<=0, 1 at s>=1
  auto f = [](double u) { return u > 0 ? std::exp(-1.0 / u) : 0.0; };
  double a = f(s), b = f(1.0 - s);
  return a / (a + b);
}

}  // namespace

PeriodicField extend_gamma(const std::function<double(const Eigen::Vector3d&)>& gamma,
                           const Eigen::Vector3d& lo, const Eigen::Vector3d& hi,
                           double box_scale, int grid) {
  Eigen::Vector3d extent = hi - lo;
  double L = box_scale * extent.norm();
  if (L <= extent.maxCoeff())
    throw std::invalid_argument("extend_gamma: box does not contain the domain");
  if (grid < 8) throw std::invalid_argument("extend_gamma: grid too coarse");

  Eigen::Vector3d center = 0.5 * (lo + hi);

  // constant value near infinity: mean of gamma over the faces of Omega
  double c = 0;
  int samples = 0;
  const int fs = 9;
  for (int axis = 0; axis < 3; ++axis)
    for (int side = 0; side < 2; ++side)
      for (int a = 0; a <= fs; ++a)
        for (int b = 0; b <= fs; ++b) {
          Eigen::Vector3d x = lo;
          x[axis] += side * extent[axis];
          x[(axis + 1) % 3] += extent[(axis + 1) % 3] * a / fs;
          x[(axis + 2) % 3] += extent[(axis + 2) % 3] * b / fs;
          c += gamma(x);
          ++samples;
        }
  c /= samples;

  double clearance = 1e300;
  for (int i = 0; i < 3; ++i) clearance = std::min(clearance, 0.5 * L - 0.5 * extent[i]);
  double w = 0.45 * clearance;

  PeriodicField f;
  f.n = grid;
  f.length = L;
  f.origin = center - 0.5 * L * Eigen::Vector3d::Ones();
  f.omega_lo = lo;
  f.omega_hi = hi;
  f.values.resize(grid * grid * grid);
  for (int k = 0; k < grid; ++k)
    for (int j = 0; j < grid; ++j)
      for (int i = 0; i < grid; ++i) {
        Eigen::Vector3d x = f.point(i, j, k);
        Eigen::Vector3d xc = x.cwiseMax(lo).cwiseMin(hi);
        double d = (x - xc).lpNorm<Eigen::Infinity>();
        double blend = d <= 0 ? 1.0 : (d >= w ? 0.0 : smooth_step_inf(1.0 - d / w));
        f.values[f.index(i, j, k)] = c + (gamma(xc) - c) * blend;
      }
  if (f.values.minCoeff() <= 0)
    throw std::runtime_error("extend_gamma: extension lost positivity");
  return f;
}

namespace {

// P1 evaluation with voxel-binned element lookup
class FieldInterpolator {
public:
  explicit FieldInterpolator(const ScalarField& field) : field_(field), mesh_(*field.mesh) {
    lo_ = mesh_.nodes.colwise().minCoeff().transpose();
    hi_ = mesh_.nodes.colwise().maxCoeff().transpose();
    bins_ = std::max(2, static_cast<int>(std::cbrt(mesh_.element_count() / 4.0)));
    table_.resize(bins_ * bins_ * bins_);
    for (int e = 0; e < mesh_.element_count(); ++e) {
      Eigen::VectorXd emin = mesh_.nodes.row(mesh_.elements[e][0]).transpose();
      Eigen::VectorXd emax = emin;
      for (int v = 1; v <= mesh_.dim; ++v) {
        emin = emin.cwiseMin(mesh_.nodes.row(mesh_.elements[e][v]).transpose());
        emax = emax.cwiseMax(mesh_.nodes.row(mesh_.elements[e][v]).transpose());
      }
      auto blo = bin_of(emin), bhi = bin_of(emax);
      for (int bz = blo[2]; bz <= bhi[2]; ++bz)
        for (int by = blo[1]; by <= bhi[1]; ++by)
          for (int bx = blo[0]; bx <= bhi[0]; ++bx)
            table_[(bz * bins_ + by) * bins_ + bx].push_back(e);
    }
  }

  double operator()(const Eigen::VectorXd& x) const {
    auto b = bin_of(x);
    for (int e : table_[(b[2] * bins_ + b[1]) * bins_ + b[0]]) {
      Eigen::VectorXd bary = barycentric(e, x);
      if (bary.minCoeff() >= -1e-10) {
        double v = 0;
        for (int j = 0; j <= mesh_.dim; ++j) v += bary[j] * field_.values[mesh_.elements[e][j]];
        return v;
      }
    }
    // fall back to the nearest node
    int best = 0;
    double bd = 1e300;
    for (int i = 0; i < mesh_.node_count(); ++i) {
      double d = (mesh_.nodes.row(i).transpose() - x.head(mesh_.dim)).squaredNorm();
      if (d < bd) { bd = d; best = i; }
    }
    return field_.values[best];
  }

private:
  std::array<int, 3> bin_of(const Eigen::VectorXd& x) const {
    std::array<int, 3> b{0, 0, 0};
    for (int i = 0; i < mesh_.dim; ++i) {
      double u = (x[i] - lo_[i]) / std::max(hi_[i] - lo_[i], 1e-300);
      b[i] = std::clamp(static_cast<int>(u * bins_), 0, bins_ - 1);
    }
    return b;
  }

  Eigen::VectorXd barycentric(int e, const Eigen::VectorXd& x) const {
    const int d = mesh_.dim;
    Eigen::MatrixXd edges(d, d);
    for (int i = 0; i < d; ++i)
      edges.col(i) = (mesh_.nodes.row(mesh_.elements[e][i + 1]) -
                      mesh_.nodes.row(mesh_.elements[e][0])).transpose();
    Eigen::VectorXd rel = x.head(d) - mesh_.nodes.row(mesh_.elements[e][0]).transpose();
    Eigen::VectorXd lam = edges.colPivHouseholderQr().solve(rel);
    Eigen::VectorXd bary(d + 1);
    bary[0] = 1.0 - lam.sum();
    bary.tail(d) = lam;
    return bary;
  }

  const ScalarField& field_;
  const Mesh& mesh_;
  Eigen::VectorXd lo_, hi_;
  int bins_;
  std::vector<std::vector<int>> table_;
};

}  // namespace

PeriodicField extend_gamma(const ScalarField& gamma, double box_scale, int grid) {
  const Mesh& m = *gamma.mesh;
  FieldInterpolator interp(gamma);
  Eigen::Vector3d lo = Eigen::Vector3d::Zero(), hi = Eigen::Vector3d::Zero();
  lo.head(m.dim) = m.nodes.colwise().minCoeff().transpose();
  hi.head(m.dim) = m.nodes.colwise().maxCoeff().transpose();
  if (m.dim == 2) hi[2] = lo[2] + (hi - lo).head(2).minCoeff();  // thin fictitious axis
  auto fn = [&](const Eigen::Vector3d& x) {
    Eigen::VectorXd q = x.head(m.dim).cwiseMax(lo.head(m.dim)).cwiseMin(hi.head(m.dim));
    return interp(q);
  };
  return extend_gamma(fn, lo, hi, box_scale, grid);
}

namespace {

void fft3(Eigen::VectorXcd& v, int n, int sign) {
  fftw_plan plan = fftw_plan_dft_3d(n, n, n, reinterpret_cast<fftw_complex*>(v.data()),
                                    reinterpret_cast<fftw_complex*>(v.data()),
                                    sign, FFTW_ESTIMATE);
  fftw_execute(plan);
  fftw_destroy_plan(plan);
  if (sign == FFTW_BACKWARD) v /= static_cast<double>(n) * n * n;
}

// frequency of index i on an n-grid of length L
inline double freq(int i, int n, double L) {
  int m = (i <= n / 2) ? i : i - n;
  return 2.0 * M_PI * m / L;
}

}  // namespace

CgoSolution solve_remainder(const PeriodicField& gamma_ext, const CgoPhasePair& phase,
                            bool use_rho2) {
  const int n = gamma_ext.n;
  const double L = gamma_ext.length;
  const int N = n * n * n;
  Eigen::Vector3cd rho = use_rho2 ? phase.rho2 : phase.rho1;

  // q = gamma^{-1/2} Laplace(gamma^{1/2}) via the spectral Laplacian
  Eigen::VectorXd g = gamma_ext.values.cwiseSqrt();
  Eigen::VectorXcd gh = g.cast<Complex>();
  fft3(gh, n, FFTW_FORWARD);
  Eigen::VectorXcd lap = gh;
  // multiplier arrays; also check the shifted symbol for lattice collisions
  Eigen::VectorXcd inv_symbol(N);
  double scale = std::max(1.0, rho.norm());
  for (int k = 0; k < n; ++k)
    for (int j = 0; j < n; ++j)
      for (int i = 0; i < n; ++i) {
        int id = (k * n + j) * n + i;
        Eigen::Vector3d kk(freq(i, n, L), freq(j, n, L), freq(k, n, L));
        double k2 = kk.squaredNorm();
        lap[id] *= -k2;
        Complex sym = -k2 + Complex(0, 2) * (rho(0) * kk(0) + rho(1) * kk(1) + rho(2) * kk(2));
        if (id == 0) {
          inv_symbol[id] = 0;  // zero mode projected out
        } else {
          if (std::abs(sym) < 1e-8 * scale * std::sqrt(k2))
            throw std::runtime_error("solve_remainder: lattice symbol collision");
          inv_symbol[id] = 1.0 / sym;
        }
      }
  fft3(lap, n, FFTW_BACKWARD);
  Eigen::VectorXd q = lap.real().cwiseQuotient(g);

  CgoSolution sol;
  sol.phase = phase;
  sol.gamma_ext = &gamma_ext;
  sol.r = Eigen::VectorXcd::Zero(N);

  // The zero lattice mode is in the kernel of the symbol, so it is absorbed by
  // a linear corrector mu (a.x) with 2 i rho.a = 1. The corrector is exact for
  // the operator, and q vanishes near the box faces, so its non-periodicity
  // never enters the source term.
  Eigen::Vector3cd a_corr = Complex(0, -0.5) * rho.conjugate() / rho.squaredNorm();
  Eigen::VectorXcd lin(N);
  for (int k = 0; k < n; ++k)
    for (int j = 0; j < n; ++j)
      for (int i = 0; i < n; ++i) {
        Eigen::Vector3d x = gamma_ext.point(i, j, k);
        lin[gamma_ext.index(i, j, k)] = a_corr(0) * x(0) + a_corr(1) * x(1) + a_corr(2) * x(2);
      }

  Eigen::VectorXcd r_per = Eigen::VectorXcd::Zero(N);
  Complex mu = 0;
  double prev_delta = 1e300;
  int grow = 0;
  for (int it = 1; it <= 200; ++it) {
    Eigen::VectorXcd rhs = (q.cast<Complex>().array() * (1.0 + sol.r.array())).matrix();
    fft3(rhs, n, FFTW_FORWARD);
    mu = rhs[0] / static_cast<double>(N);
    r_per = inv_symbol.cwiseProduct(rhs);
    fft3(r_per, n, FFTW_BACKWARD);
    Eigen::VectorXcd rnew = r_per + mu * lin;
    double delta = (rnew - sol.r).norm() / std::max(rnew.norm(), 1e-300);
    sol.r = rnew;
    sol.iterations = it;
    sol.fixed_point_residual = delta;
    if (delta <= 1e-12) break;
    if (delta > prev_delta) {
      if (++grow >= 3)
        throw std::runtime_error(
            "solve_remainder: fixed point not contracting (|rho| too small for this gamma)");
    } else {
      grow = 0;
    }
    prev_delta = delta;
  }
  if (sol.fixed_point_residual > 1e-10)
    throw std::runtime_error("solve_remainder: fixed point did not reach tolerance");

  // PDE residual of (Laplace + 2 i rho.grad) r - q (1 + r): spectral on the
  // periodic part, analytic for the linear corrector (contributes mu at k=0)
  Eigen::VectorXcd rhs_f = (q.cast<Complex>().array() * (1.0 + sol.r.array())).matrix();
  fft3(rhs_f, n, FFTW_FORWARD);
  Eigen::VectorXcd rh = sol.r - mu * lin;
  fft3(rh, n, FFTW_FORWARD);
  Eigen::VectorXcd res(N);
  for (int k = 0; k < n; ++k)
    for (int j = 0; j < n; ++j)
      for (int i = 0; i < n; ++i) {
        int id = (k * n + j) * n + i;
        Eigen::Vector3d kk(freq(i, n, L), freq(j, n, L), freq(k, n, L));
        Complex sym = -kk.squaredNorm() +
                      Complex(0, 2) * (rho(0) * kk(0) + rho(1) * kk(1) + rho(2) * kk(2));
        res[id] = sym * rh[id] - rhs_f[id];
      }
  res[0] = mu * static_cast<double>(N) - rhs_f[0];
  sol.pde_residual = res.norm() / std::max(rhs_f.norm(), 1e-300);

  for (int axis = 0; axis < 3; ++axis) {
    Eigen::VectorXcd d = rh;
    for (int k = 0; k < n; ++k)
      for (int j = 0; j < n; ++j)
        for (int i = 0; i < n; ++i) {
          int id = (k * n + j) * n + i;
          double f = axis == 0 ? freq(i, n, L) : (axis == 1 ? freq(j, n, L) : freq(k, n, L));
          d[id] *= Complex(0, f);
        }
    fft3(d, n, FFTW_BACKWARD);
    d.array() += mu * a_corr(axis);
    sol.grad_r[axis] = d;
  }

  double h3 = std::pow(gamma_ext.spacing(), 3);
  double s = 0;
  for (int k = 0; k < n; ++k)
    for (int j = 0; j < n; ++j)
      for (int i = 0; i < n; ++i)
        if (gamma_ext.in_omega(gamma_ext.point(i, j, k)))
          s += std::norm(sol.r[gamma_ext.index(i, j, k)]) * h3;
  sol.r_norm_omega = std::sqrt(s);
  return sol;
}

CgoSolution solve_remainder_safe(const PeriodicField& gamma_ext, const Eigen::Vector3d& xi,
                                 double R, bool use_rho2) {
  std::string last;
  for (int step = 0; step <= 20; ++step) {
    double t_scale = 1.0 + 0.0005 * step;
    try {
      return solve_remainder(gamma_ext, make_phase_pair(xi, R, t_scale), use_rho2);
    } catch (const std::runtime_error& e) {
      last = e.what();
      if (std::string(e.what()).find("collision") == std::string::npos) throw;
    }
  }
  throw std::runtime_error("solve_remainder_safe: schedule exhausted: " + last);
}

Eigen::VectorXcd cgo_product(const PeriodicField& gamma_ext, const CgoSolution& w1,
                             const CgoSolution& w2) {
  const int n = gamma_ext.n;
  const int N = n * n * n;
  const double L = gamma_ext.length;

  // grad(gamma^{-1/2}) spectrally
  Eigen::VectorXd ginv = gamma_ext.values.cwiseSqrt().cwiseInverse();
  Eigen::VectorXcd gh = ginv.cast<Complex>();
  fft3(gh, n, FFTW_FORWARD);
  Eigen::VectorXcd dg[3];
  for (int axis = 0; axis < 3; ++axis) {
    dg[axis] = gh;
    for (int k = 0; k < n; ++k)
      for (int j = 0; j < n; ++j)
        for (int i = 0; i < n; ++i) {
          int id = (k * n + j) * n + i;
          double f = axis == 0 ? freq(i, n, L) : (axis == 1 ? freq(j, n, L) : freq(k, n, L));
          dg[axis][id] *= Complex(0, f);
        }
    fft3(dg[axis], n, FFTW_BACKWARD);
  }

  Eigen::Vector3cd rho1 = w1.phase.rho1;
  Eigen::Vector3cd rho2 = w2.phase.rho2;
  Eigen::Vector3d xi = (rho1 + rho2).real();

  Eigen::VectorXcd out(N);
  for (int k = 0; k < n; ++k)
    for (int j = 0; j < n; ++j)
      for (int i = 0; i < n; ++i) {
        int id = (k * n + j) * n + i;
        Eigen::Vector3d x = gamma_ext.point(i, j, k);
        Complex u1 = ginv[id] * (1.0 + w1.r[id]);
        Complex u2 = ginv[id] * (1.0 + w2.r[id]);
        Complex dot = 0;
        for (int a = 0; a < 3; ++a) {
          Complex g1 = rho1(a) * Complex(0, 1) * u1 +
                       dg[a][id] * (1.0 + w1.r[id]) + ginv[id] * w1.grad_r[a][id];
          Complex g2 = rho2(a) * Complex(0, 1) * u2 +
                       dg[a][id] * (1.0 + w2.r[id]) + ginv[id] * w2.grad_r[a][id];
          dot += g1 * g2;
        }
        out[id] = gamma_ext.values[id] * std::exp(Complex(0, xi.dot(x))) * dot;
      }
  return out;
}

double product_identity_check(const ScalarField& gamma, const ScalarField& w1,
                              const ScalarField& w2) {
  const Mesh& m = *gamma.mesh;
  Eigen::VectorXd lo = m.nodes.colwise().minCoeff().transpose();
  Eigen::VectorXd hi = m.nodes.colwise().maxCoeff().transpose();

  auto bump = [&](const Eigen::Vector3d& x, const Eigen::VectorXd& c, double rad) {
    double s2 = 0;
    for (int i = 0; i < m.dim; ++i) s2 += (x[i] - c[i]) * (x[i] - c[i]);
    double u = s2 / (rad * rad);
    return u < 1.0 ? std::exp(-1.0 / (1.0 - u)) : 0.0;
  };

  std::vector<Eigen::VectorXd> centers;
  Eigen::VectorXd mid = 0.5 * (lo + hi);
  centers.push_back(mid);
  for (int i = 0; i < m.dim; ++i) {
    Eigen::VectorXd c = mid;
    c[i] += 0.15 * (hi[i] - lo[i]);
    centers.push_back(c);
  }
  double rad = 0.3 * (hi - lo).minCoeff();

  ScalarField prod(m, w1.values.cwiseProduct(w2.values));
  const int nv = m.verts_per_element();
  double worst = 0;
  for (const auto& c : centers) {
    auto phi = ScalarField::sample(m, [&](const Eigen::Vector3d& x) { return bump(x, c, rad); });
    double lhs = 0, rhs = 0;
    for (int e = 0; e < m.element_count(); ++e) {
      double vol = m.element_volume(e);
      double gbar = 0, pbar = 0;
      Eigen::Vector3d g1 = Eigen::Vector3d::Zero(), g2 = Eigen::Vector3d::Zero();
      Eigen::Vector3d gp = Eigen::Vector3d::Zero(), gphi = Eigen::Vector3d::Zero();
      for (int v = 0; v < nv; ++v) {
        int node = m.elements[e][v];
        gbar += gamma.values[node];
        pbar += phi.values[node];
        Eigen::Vector3d bg = m.basis_gradient(e, v);
        g1 += w1.values[node] * bg;
        g2 += w2.values[node] * bg;
        gp += prod.values[node] * bg;
        gphi += phi.values[node] * bg;
      }
      gbar /= nv;
      pbar /= nv;
      lhs += vol * pbar * gbar * g1.dot(g2);
      rhs += -0.5 * vol * gbar * gp.dot(gphi);
    }
    worst = std::max(worst, std::abs(lhs - rhs));
  }
  return worst;
}

namespace {

std::vector<Eigen::Vector3i> basis_exponents(int basis_dim, int dims) {
  // graded enumeration of small nonnegative integer tuples
  std::vector<Eigen::Vector3i> out;
  for (int total = 0; static_cast<int>(out.size()) < basis_dim; ++total)
    for (int i = 0; i <= total; ++i)
      for (int j = 0; j + i <= total; ++j) {
        int k = total - i - j;
        if (dims == 2 && k != 0) continue;
        out.push_back({i, j, k});
        if (static_cast<int>(out.size()) == basis_dim) return out;
      }
  return out;
}

int rank_of(const Eigen::VectorXd& sv, double rel_tol) {
  int r = 0;
  for (int i = 0; i < sv.size(); ++i)
    if (sv[i] >= rel_tol * sv[0]) ++r;
  return r;
}

}  // namespace

RankReport density_gram_test(const PeriodicField& gamma_ext, int probe_count, int basis_dim,
                             double R) {
  if (basis_dim > probe_count)
    throw std::invalid_argument("density_gram_test: basis_dim must be <= probe_count");

  // deterministic nonzero frequency list
  std::vector<Eigen::Vector3d> xis;
  for (int total = 1; static_cast<int>(xis.size()) < probe_count; ++total)
    for (int i = -total; i <= total && static_cast<int>(xis.size()) < probe_count; ++i)
      for (int j = -total; j <= total && static_cast<int>(xis.size()) < probe_count; ++j) {
        int k = total - std::abs(i) - std::abs(j);
        if (k < 0) continue;
        xis.push_back(M_PI * Eigen::Vector3d(i, j, k));
      }

  auto exps = basis_exponents(basis_dim, 3);
  Eigen::Vector3d lo = gamma_ext.omega_lo, ext = gamma_ext.omega_hi - gamma_ext.omega_lo;
  const int n = gamma_ext.n;
  double h3 = std::pow(gamma_ext.spacing(), 3);

  Eigen::MatrixXcd M(probe_count, basis_dim);
  for (int p = 0; p < probe_count; ++p) {
    CgoSolution s1 = solve_remainder_safe(gamma_ext, xis[p], R, false);
    CgoSolution s2 = solve_remainder_safe(gamma_ext, xis[p], R, true);
    Eigen::VectorXcd prod = cgo_product(gamma_ext, s1, s2);
    Eigen::VectorXcd row = Eigen::VectorXcd::Zero(basis_dim);
    for (int k = 0; k < n; ++k)
      for (int j = 0; j < n; ++j)
        for (int i = 0; i < n; ++i) {
          Eigen::Vector3d x = gamma_ext.point(i, j, k);
          if (!gamma_ext.in_omega(x)) continue;
          Eigen::Vector3d u = (x - lo).cwiseQuotient(ext);
          Complex v = prod[gamma_ext.index(i, j, k)] * h3;
          for (int b = 0; b < basis_dim; ++b)
            row[b] += v * std::cos(M_PI * exps[b][0] * u[0]) *
                      std::cos(M_PI * exps[b][1] * u[1]) * std::cos(M_PI * exps[b][2] * u[2]);
        }
    M.row(p) = row / std::max(row.norm(), 1e-300);
  }

  Eigen::JacobiSVD<Eigen::MatrixXcd> svd(M);
  RankReport rep;
  rep.singular_values = svd.singularValues();
  rep.rank = rank_of(rep.singular_values, rep.rel_tol);
  return rep;
}

RankReport density_gram_test_2d(const Mesh& mesh, int probe_count, int basis_dim) {
  if (mesh.dim != 2) throw std::invalid_argument("density_gram_test_2d: 2D meshes only");
  if (basis_dim > probe_count)
    throw std::invalid_argument("density_gram_test_2d: basis_dim must be <= probe_count");

  // harmonic probes: holomorphic e^{z1 (x+iy)} against antiholomorphic
  // e^{z2 (x-iy)}; gradients dot to 2 z1 z2 e^{z1(x+iy)+z2(x-iy)}
  std::vector<std::pair<Complex, Complex>> pairs;
  for (int t = 0; static_cast<int>(pairs.size()) < probe_count; ++t)
    for (int a = -t; a <= t && static_cast<int>(pairs.size()) < probe_count; ++a) {
      int b = t - std::abs(a);
      pairs.emplace_back(Complex(0.3 * a, 0.7 + 0.2 * b), Complex(0.5 * b, -0.4 * a + 0.3));
    }

  auto exps = basis_exponents(basis_dim, 2);
  Eigen::VectorXd lo = mesh.nodes.colwise().minCoeff().transpose();
  Eigen::VectorXd hi = mesh.nodes.colwise().maxCoeff().transpose();
  Eigen::VectorXd lm = lumped_mass(mesh);

  Eigen::MatrixXcd M(probe_count, basis_dim);
  for (int p = 0; p < probe_count; ++p) {
    Complex z1 = pairs[p].first, z2 = pairs[p].second;
    Eigen::VectorXcd row = Eigen::VectorXcd::Zero(basis_dim);
    for (int i = 0; i < mesh.node_count(); ++i) {
      double x = mesh.nodes(i, 0), y = mesh.nodes(i, 1);
      Complex prod = 2.0 * z1 * z2 *
                     std::exp(z1 * Complex(x, y) + z2 * Complex(x, -y));
      double u = (x - lo[0]) / (hi[0] - lo[0]);
      double v = (y - lo[1]) / (hi[1] - lo[1]);
      for (int b = 0; b < basis_dim; ++b)
        row[b] += lm[i] * prod * std::cos(M_PI * exps[b][0] * u) * std::cos(M_PI * exps[b][1] * v);
    }
    M.row(p) = row / std::max(row.norm(), 1e-300);
  }

  Eigen::JacobiSVD<Eigen::MatrixXcd> svd(M);
  RankReport rep;
  rep.singular_values = svd.singularValues();
  rep.rank = rank_of(rep.singular_values, rep.rel_tol);
  return rep;
}

}  // namespace hdi
