#include "hdi/elliptic.hpp"

#include <lapacke.h>

#include <cmath>
#include <random>

namespace hdi {

namespace {

void add_element_stiffness(const Mesh& m, int e, const Eigen::MatrixXd& coef,
                           std::vector<Eigen::Triplet<double>>& trips) {
  const int nv = m.verts_per_element();
  const double vol = m.element_volume(e);
  std::vector<Eigen::VectorXd> grads(nv);
  for (int v = 0; v < nv; ++v) grads[v] = m.basis_gradient(e, v).head(m.dim);
  for (int a = 0; a < nv; ++a)
    for (int b = 0; b < nv; ++b) {
      double val = vol * grads[a].dot(coef * grads[b]);
      trips.emplace_back(m.elements[e][a], m.elements[e][b], val);
    }
}

}  // namespace

SpMat assemble_stiffness(const Mesh& m, const ScalarField& gamma) {
  std::vector<Eigen::Triplet<double>> trips;
  trips.reserve(m.element_count() * 16);
  const int nv = m.verts_per_element();
  Eigen::MatrixXd eye = Eigen::MatrixXd::Identity(m.dim, m.dim);
  for (int e = 0; e < m.element_count(); ++e) {
    double g = 0;
    for (int v = 0; v < nv; ++v) g += gamma.values[m.elements[e][v]];
    add_element_stiffness(m, e, (g / nv) * eye, trips);
  }
  SpMat K(m.node_count(), m.node_count());
  K.setFromTriplets(trips.begin(), trips.end());
  return K;
}

SpMat assemble_stiffness(const Mesh& m, const TensorField& A) {
  std::vector<Eigen::Triplet<double>> trips;
  trips.reserve(m.element_count() * 16);
  const int nv = m.verts_per_element();
  for (int e = 0; e < m.element_count(); ++e) {
    Eigen::MatrixXd bar = Eigen::MatrixXd::Zero(m.dim, m.dim);
    for (int v = 0; v < nv; ++v) bar += A.at(m.elements[e][v]);
    add_element_stiffness(m, e, bar / nv, trips);
  }
  SpMat K(m.node_count(), m.node_count());
  K.setFromTriplets(trips.begin(), trips.end());
  return K;
}

SpMat assemble_mass(const Mesh& m, const ScalarField& weight) {
  std::vector<Eigen::Triplet<double>> trips;
  trips.reserve(m.element_count() * 16);
  const int nv = m.verts_per_element();
  const double denom = nv * (nv + 1);
  for (int e = 0; e < m.element_count(); ++e) {
    double w = 0;
    for (int v = 0; v < nv; ++v) w += weight.values[m.elements[e][v]];
    w /= nv;
    const double vol = m.element_volume(e);
    for (int a = 0; a < nv; ++a)
      for (int b = 0; b < nv; ++b)
        trips.emplace_back(m.elements[e][a], m.elements[e][b],
                           w * vol * (a == b ? 2.0 : 1.0) / denom);
  }
  SpMat M(m.node_count(), m.node_count());
  M.setFromTriplets(trips.begin(), trips.end());
  return M;
}

SpMat assemble_mass(const Mesh& m) { return assemble_mass(m, ScalarField(m, 1.0)); }

Eigen::VectorXd lumped_mass(const Mesh& m) {
  Eigen::VectorXd lm = Eigen::VectorXd::Zero(m.node_count());
  const int nv = m.verts_per_element();
  for (int e = 0; e < m.element_count(); ++e) {
    const double share = m.element_volume(e) / nv;
    for (int v = 0; v < nv; ++v) lm[m.elements[e][v]] += share;
  }
  return lm;
}

Eigen::VectorXd lumped_boundary_mass(const Mesh& m) {
  Eigen::VectorXd lm = Eigen::VectorXd::Zero(m.boundary_count());
  for (const auto& f : m.boundary_facets) {
    const double share = f.measure / m.dim;
    for (int i = 0; i < m.dim; ++i) lm[m.boundary_index[f.nodes[i]]] += share;
  }
  return lm;
}

SpMat assemble_boundary_mass(const Mesh& m) {
  std::vector<Eigen::Triplet<double>> trips;
  const int nf = m.dim;  // vertices per facet
  const double denom = nf * (nf + 1);
  for (const auto& f : m.boundary_facets)
    for (int a = 0; a < nf; ++a)
      for (int b = 0; b < nf; ++b)
        trips.emplace_back(m.boundary_index[f.nodes[a]], m.boundary_index[f.nodes[b]],
                           f.measure * (a == b ? 2.0 : 1.0) / denom);
  SpMat M(m.boundary_count(), m.boundary_count());
  M.setFromTriplets(trips.begin(), trips.end());
  return M;
}

Eigen::VectorXd scatter(const Mesh& m, const Eigen::VectorXd& interior,
                        const Eigen::VectorXd& boundary) {
  Eigen::VectorXd full(m.node_count());
  for (int n = 0; n < m.node_count(); ++n)
    full[n] = (m.interior_index[n] >= 0) ? interior[m.interior_index[n]]
                                         : boundary[m.boundary_index[n]];
  return full;
}

Eigen::VectorXd interior_part(const Mesh& m, const Eigen::VectorXd& full) {
  Eigen::VectorXd v(m.interior_count());
  for (int i = 0; i < m.interior_count(); ++i) v[i] = full[m.interior_nodes[i]];
  return v;
}

Eigen::VectorXd boundary_part(const Mesh& m, const Eigen::VectorXd& full) {
  Eigen::VectorXd v(m.boundary_count());
  for (int i = 0; i < m.boundary_count(); ++i) v[i] = full[m.boundary_nodes[i]];
  return v;
}

namespace {

SpMat select_block(const Mesh& m, const SpMat& full, const std::vector<int>& row_map,
                   int nrows, const std::vector<int>& col_map, int ncols) {
  std::vector<Eigen::Triplet<double>> trips;
  for (int k = 0; k < full.outerSize(); ++k)
    for (SpMat::InnerIterator it(full, k); it; ++it) {
      int r = row_map[it.row()], c = col_map[it.col()];
      if (r >= 0 && c >= 0) trips.emplace_back(r, c, it.value());
    }
  SpMat out(nrows, ncols);
  out.setFromTriplets(trips.begin(), trips.end());
  return out;
}

}  // namespace

SpMat interior_block(const Mesh& m, const SpMat& full) {
  return select_block(m, full, m.interior_index, m.interior_count(), m.interior_index,
                      m.interior_count());
}

SpMat interior_boundary_block(const Mesh& m, const SpMat& full) {
  return select_block(m, full, m.interior_index, m.interior_count(), m.boundary_index,
                      m.boundary_count());
}

SpMat boundary_block(const Mesh& m, const SpMat& full) {
  return select_block(m, full, m.boundary_index, m.boundary_count(), m.boundary_index,
                      m.boundary_count());
}

ScalarField solve_conductivity(const ScalarField& gamma, const BoundaryTrace& h) {
  gamma.require_positive(1e-12, "gamma");
  const Mesh& m = *gamma.mesh;
  if (h.mesh != &m) throw std::invalid_argument("solve_conductivity: mesh mismatch");
  SpMat K = assemble_stiffness(m, gamma);
  SpMat Kii = interior_block(m, K);
  SpMat Kib = interior_boundary_block(m, K);
  Eigen::SimplicialLDLT<SpMat> solver(Kii);
  if (solver.info() != Eigen::Success)
    throw std::runtime_error("solve_conductivity: singular interior system");
  Eigen::VectorXd ui = solver.solve(-(Kib * h.values));
  return ScalarField(m, scatter(m, ui, h.values));
}

DtNMap::DtNMap(const ScalarField& gamma) : mesh_(gamma.mesh) {
  gamma.require_positive(1e-12, "gamma");
  const Mesh& m = *mesh_;
  SpMat K = assemble_stiffness(m, gamma);
  SpMat Kii = interior_block(m, K);
  SpMat Kib = interior_boundary_block(m, K);
  SpMat Kbb = boundary_block(m, K);
  Eigen::SimplicialLDLT<SpMat> solver(Kii);
  if (solver.info() != Eigen::Success) throw std::runtime_error("dtn_map: singular system");
  Eigen::MatrixXd X = solver.solve(Eigen::MatrixXd(Kib));
  schur_ = Eigen::MatrixXd(Kbb) - Eigen::MatrixXd(Kib.transpose()) * X;
  schur_ = 0.5 * (schur_ + schur_.transpose().eval());
  boundary_mass_ = lumped_boundary_mass(m);
}

double DtNMap::form(const BoundaryTrace& h1, const BoundaryTrace& h2) const {
  return h2.values.dot(schur_ * h1.values);
}

BoundaryTrace DtNMap::flux(const BoundaryTrace& h) const {
  return BoundaryTrace(*mesh_, (schur_ * h.values).cwiseQuotient(boundary_mass_));
}

OperatorP::OperatorP(const ScalarField& kappa, const TensorField& A)
    : mesh_(kappa.mesh), kappa_(kappa), A_(A) {
  kappa.require_positive(1e-12, "kappa");
  c0_ = A.ellipticity();
  if (c0_ <= 0) throw std::invalid_argument("OperatorP: A not elliptic");
  const Mesh& m = *mesh_;
  K_ = assemble_stiffness(m, A);
  ScalarField inv_kappa(m, kappa.values.cwiseInverse());
  Mw_ = assemble_mass(m, inv_kappa);
  Mu_ = assemble_mass(m);
  Kii_ = interior_block(m, K_);
  Mwii_ = interior_block(m, Mw_);
  Kii_solver_.compute(Kii_);
  Mwii_solver_.compute(Mwii_);
  if (Kii_solver_.info() != Eigen::Success || Mwii_solver_.info() != Eigen::Success)
    throw std::runtime_error("OperatorP: factorization failed");
}

ScalarField OperatorP::solve_inverse(const ScalarField& G) const {
  const Mesh& m = *mesh_;
  Eigen::VectorXd rhs_full = Mw_ * G.values;  // (G, v)_{L2_kappa}
  Eigen::VectorXd ui = Kii_solver_.solve(interior_part(m, rhs_full));
  return ScalarField(m, scatter(m, ui, Eigen::VectorXd::Zero(m.boundary_count())));
}

Eigen::VectorXd OperatorP::apply_interior(const Eigen::VectorXd& ui) const {
  return Mwii_solver_.solve(Kii_ * ui);
}

double OperatorP::energy(const Eigen::VectorXd& ui, const Eigen::VectorXd& vi) const {
  return vi.dot(Kii_ * ui);
}

double OperatorP::weighted_norm(const Eigen::VectorXd& ui) const {
  return std::sqrt(std::max(0.0, ui.dot(Mwii_ * ui)));
}

double OperatorP::weighted_inner(const Eigen::VectorXd& u, const Eigen::VectorXd& v) const {
  return v.dot(Mw_ * u);
}

namespace {

// Generalized symmetric dense eigensolve K x = lambda M x via LAPACK dsygvd.
void dense_gsep(const Eigen::MatrixXd& K, const Eigen::MatrixXd& M, Eigen::VectorXd& evals,
                Eigen::MatrixXd& evecs) {
  const int n = static_cast<int>(K.rows());
  evecs = K;
  Eigen::MatrixXd B = M;
  evals.resize(n);
  int info = LAPACKE_dsygvd(LAPACK_COL_MAJOR, 1, 'V', 'L', n, evecs.data(), n, B.data(), n,
                            evals.data());
  if (info != 0) throw std::runtime_error("dirichlet_spectrum: dense eigensolver failed");
}

// Shift-invert Lanczos (sigma = 0) with full M-reorthogonalization for the
// lowest eigenpairs of K x = lambda M x. Deterministic seeded start.
void lanczos_gsep(const OperatorP& P, int count, Eigen::VectorXd& evals,
                  Eigen::MatrixXd& evecs) {
  const SpMat& M = P.weighted_mass_ii();
  const int n = static_cast<int>(M.rows());
  const int steps = std::min(n, std::max(2 * count + 40, count + 60));

  std::mt19937 rng(20260823u);
  std::normal_distribution<double> gauss;
  Eigen::VectorXd v(n);
  for (int i = 0; i < n; ++i) v[i] = gauss(rng);

  std::vector<Eigen::VectorXd> Q, MQ;
  Eigen::VectorXd alpha(steps), beta(steps);
  Eigen::VectorXd Mv = M * v;
  v /= std::sqrt(v.dot(Mv));
  Q.push_back(v);
  MQ.push_back(M * v);

  int m = 0;
  for (int j = 0; j < steps; ++j) {
    Eigen::VectorXd w = P.stiffness_solver().solve(MQ[j]);  // K^{-1} M q_j
    alpha[j] = w.dot(MQ[j]);
    // full reorthogonalization (twice) in the M-inner product
    for (int pass = 0; pass < 2; ++pass)
      for (size_t i = 0; i < Q.size(); ++i) w -= (MQ[i].dot(w)) * Q[i];
    Eigen::VectorXd Mw = M * w;
    double b = std::sqrt(std::max(0.0, w.dot(Mw)));
    beta[j] = b;
    m = j + 1;
    if (b < 1e-13) break;
    w /= b;
    Q.push_back(w);
    MQ.push_back(M * w);
  }

  Eigen::MatrixXd T = Eigen::MatrixXd::Zero(m, m);
  for (int j = 0; j < m; ++j) {
    T(j, j) = alpha[j];
    if (j + 1 < m) T(j, j + 1) = T(j + 1, j) = beta[j];
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(T);
  if (es.info() != Eigen::Success)
    throw std::runtime_error("dirichlet_spectrum: Lanczos tridiagonal solve failed");
  // largest theta of K^{-1}M correspond to smallest lambda = 1/theta
  evals.resize(count);
  evecs.resize(n, count);
  for (int k = 0; k < count; ++k) {
    int idx = m - 1 - k;
    if (idx < 0) throw std::runtime_error("dirichlet_spectrum: Lanczos basis exhausted");
    double theta = es.eigenvalues()[idx];
    if (theta <= 0) throw std::runtime_error("dirichlet_spectrum: nonpositive Ritz value");
    evals[k] = 1.0 / theta;
    Eigen::VectorXd x = Eigen::VectorXd::Zero(n);
    for (int j = 0; j < m; ++j) x += es.eigenvectors()(j, idx) * Q[j];
    evecs.col(k) = x;
  }
}

}  // namespace

SpectralData dirichlet_spectrum(const OperatorP& P, int count, double cluster_rtol) {
  if (count < 1) throw std::invalid_argument("dirichlet_spectrum: count must be >= 1");
  const Mesh& m = P.mesh();
  const int ni = m.interior_count();
  if (count > ni) count = ni;

  Eigen::VectorXd evals;
  Eigen::MatrixXd evecs;
  constexpr int kDenseLimit = 3000;
  if (ni < kDenseLimit) {
    Eigen::VectorXd all;
    Eigen::MatrixXd vecs;
    dense_gsep(Eigen::MatrixXd(P.stiffness_ii()), Eigen::MatrixXd(P.weighted_mass_ii()), all,
               vecs);
    evals = all.head(count);
    evecs = vecs.leftCols(count);
  } else {
    lanczos_gsep(P, count, evals, evecs);
  }

  SpectralData sd;
  sd.mesh = &m;
  sd.kappa = P.kappa();
  sd.eigenvalues = evals;
  sd.eigenfunctions.resize(m.node_count(), count);
  sd.flux_traces.resize(m.boundary_count(), count);
  sd.residuals.resize(count);
  sd.cluster_of.resize(count);

  Eigen::VectorXd bmass = lumped_boundary_mass(m);

  for (int k = 0; k < count; ++k) {
    Eigen::VectorXd phi = evecs.col(k);
    phi /= std::sqrt(phi.dot(P.weighted_mass_ii() * phi));
    // deterministic sign: largest-magnitude component positive
    int imax = 0;
    phi.cwiseAbs().maxCoeff(&imax);
    if (phi[imax] < 0) phi = -phi;
    evecs.col(k) = phi;
    Eigen::VectorXd full = scatter(m, phi, Eigen::VectorXd::Zero(m.boundary_count()));
    sd.eigenfunctions.col(k) = full;
    Eigen::VectorXd res_full = P.stiffness() * full - evals[k] * (P.weighted_mass() * full);
    sd.flux_traces.col(k) = boundary_part(m, res_full).cwiseQuotient(bmass);
    Eigen::VectorXd ri = interior_part(m, res_full);
    sd.residuals[k] = std::sqrt(std::max(0.0, ri.dot(P.mass_solver().solve(ri))));
  }

  // cluster by relative gap
  int cluster = -1;
  double prev = -1;
  for (int k = 0; k < count; ++k) {
    if (cluster < 0 || evals[k] - prev > cluster_rtol * evals[k]) {
      ++cluster;
      sd.multiplicities.push_back(0);
      sd.cluster_values.push_back(0);
    }
    sd.cluster_of[k] = cluster;
    sd.multiplicities[cluster] += 1;
    sd.cluster_values[cluster] += evals[k];
    prev = evals[k];
  }
  for (size_t c = 0; c < sd.multiplicities.size(); ++c) sd.cluster_values[c] /= sd.multiplicities[c];
  return sd;
}

BoundaryTrace neumann_flux(const TensorField& A, const ScalarField& u, const ScalarField& rhs) {
  const Mesh& m = *A.mesh;
  if (u.mesh != &m || rhs.mesh != &m) throw std::invalid_argument("neumann_flux: mesh mismatch");
  SpMat K = assemble_stiffness(m, A);
  SpMat Mu = assemble_mass(m);
  Eigen::VectorXd g = K * u.values - Mu * rhs.values;
  return BoundaryTrace(m, boundary_part(m, g).cwiseQuotient(lumped_boundary_mass(m)));
}

BoundaryTrace neumann_flux(const OperatorP& P, const Eigen::VectorXd& full_u,
                           const Eigen::VectorXd& full_rhs) {
  const Mesh& m = P.mesh();
  Eigen::VectorXd g = P.stiffness() * full_u - P.mass() * full_rhs;
  return BoundaryTrace(m, boundary_part(m, g).cwiseQuotient(lumped_boundary_mass(m)));
}

}  // namespace hdi
