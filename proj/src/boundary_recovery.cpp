#include "hdi/boundary_recovery.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <stdexcept>

namespace hdi {

namespace {

using Complex = std::complex<double>;

double bump_profile(double u) {
  double s = u * u;
  return s < 1.0 ? std::exp(-1.0 / (1.0 - s)) : 0.0;
}

}  // namespace

BoundaryTrace psi_map(const TensorField& A, const ScalarField& F) {
  if (!A.mesh || A.mesh != F.mesh) throw std::invalid_argument("psi_map: mesh mismatch");
  A.require_elliptic(1e-12);
  OperatorP P(ScalarField(*A.mesh, 1.0), A);
  ScalarField u = P.solve_inverse(F);
  return neumann_flux(P, u.values, F.values);
}

std::complex<double> halfspace_root(const Eigen::MatrixXd& A_const,
                                    const Eigen::VectorXd& xi_prime) {
  int n = static_cast<int>(A_const.rows());
  if (A_const.cols() != n || n < 2) throw std::invalid_argument("halfspace_root: bad tensor");
  if (xi_prime.size() != n - 1) throw std::invalid_argument("halfspace_root: bad frequency");
  if (xi_prime.norm() == 0) throw std::invalid_argument("halfspace_root: zero frequency");
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(A_const);
  if (es.eigenvalues().minCoeff() <= 0)
    throw std::invalid_argument("halfspace_root: tensor not positive definite");

  double ann = A_const(n - 1, n - 1);
  double b = A_const.row(n - 1).head(n - 1).dot(xi_prime);           // a_n . xi'
  double c = xi_prime.dot(A_const.topLeftCorner(n - 1, n - 1) * xi_prime);
  // a_nn l^2 + 2 b l + c = 0; positive definiteness makes the discriminant negative
  double disc = b * b - ann * c;
  return Complex(-b / ann, std::sqrt(-disc) / ann);
}

std::vector<HalfspaceProbe> probe_boundary_decay(const TensorField& A,
                                                 const Eigen::Vector3d& x0,
                                                 const std::vector<Eigen::VectorXd>& xi_set,
                                                 const Eigen::VectorXd& depths) {
  if (!A.mesh) throw std::invalid_argument("probe_boundary_decay: empty tensor");
  const Mesh& m = *A.mesh;
  int dim = m.dim, nrm = dim - 1;
  if (std::abs(x0[nrm]) > 1e-12)
    throw std::invalid_argument("probe_boundary_decay: x0 not on the face x_n = 0");

  double thickness = m.nodes.col(nrm).maxCoeff();
  for (int j = 0; j < depths.size(); ++j) {
    if (depths[j] <= 0 || (j > 0 && depths[j] <= depths[j - 1]))
      throw std::invalid_argument("probe_boundary_decay: depths not strictly increasing");
    if (depths[j] > 0.2 * thickness + 1e-12)
      throw std::invalid_argument("probe_boundary_decay: depth outside the boundary collar");
  }
  if (depths.size() < 3) throw std::invalid_argument("probe_boundary_decay: need >= 3 depths");

  // normal grid spacing -> thin source half-width of two cells
  std::set<double> levels;
  for (int i = 0; i < m.node_count(); ++i) levels.insert(m.nodes(i, nrm));
  double hn = thickness;
  double prev = *levels.begin();
  for (auto it = std::next(levels.begin()); it != levels.end(); ++it) {
    hn = std::min(hn, *it - prev);
    prev = *it;
  }
  double width = 2.0 * hn;

  // probed-face nodes restricted to the central half of each tangential extent
  Eigen::VectorXd lb = lumped_boundary_mass(m);
  std::vector<int> face;  // indices into the boundary ordering
  for (int b = 0; b < m.boundary_count(); ++b) {
    int node = m.boundary_nodes[b];
    if (m.nodes(node, nrm) > 1e-12) continue;
    bool central = true;
    for (int a = 0; a < nrm; ++a) {
      double len = m.nodes.col(a).maxCoeff();
      double x = m.nodes(node, a);
      if (x < 0.25 * len - 1e-12 || x > 0.75 * len + 1e-12) central = false;
    }
    if (central) face.push_back(b);
  }
  if (face.size() < 8) throw std::invalid_argument("probe_boundary_decay: probed face too coarse");

  OperatorP P(ScalarField(m, 1.0), A);

  std::vector<HalfspaceProbe> out;
  for (const Eigen::VectorXd& xi : xi_set) {
    if (xi.size() != nrm || xi.norm() == 0)
      throw std::invalid_argument("probe_boundary_decay: bad tangential frequency");
    HalfspaceProbe probe;
    probe.x0 = x0;
    probe.xi_prime = xi;
    probe.depths = depths;
    probe.amplitudes.resize(depths.size());

    for (int j = 0; j < depths.size(); ++j) {
      double d = depths[j];
      Eigen::VectorXd F = Eigen::VectorXd::Zero(m.node_count());
      for (int i = 0; i < m.node_count(); ++i) {
        double b = bump_profile((m.nodes(i, nrm) - d) / width);
        if (b == 0) continue;
        double phase = 0;
        for (int a = 0; a < nrm; ++a) phase += xi[a] * m.nodes(i, a);
        F[i] = std::cos(phase) * b / width;
      }
      ScalarField u = P.solve_inverse(ScalarField(m, F));
      BoundaryTrace flux = neumann_flux(P, u.values, F);
      Complex amp = 0;
      for (int b : face) {
        int node = m.boundary_nodes[b];
        double phase = 0;
        for (int a = 0; a < nrm; ++a) phase += xi[a] * m.nodes(node, a);
        amp += lb[b] * flux.values[b] * Complex(std::cos(phase), -std::sin(phase));
      }
      if (std::abs(amp) < 1e-280)
        throw std::runtime_error("probe_boundary_decay: flux amplitude underflow");
      probe.amplitudes[j] = amp;
    }

    // log-linear fit with phase unwrapping: log a(d) = c + s d
    int nd = static_cast<int>(depths.size());
    Eigen::VectorXcd y(nd);
    double theta = std::arg(probe.amplitudes[0]);
    y[0] = Complex(std::log(std::abs(probe.amplitudes[0])), theta);
    for (int j = 1; j < nd; ++j) {
      theta += std::arg(probe.amplitudes[j] / probe.amplitudes[j - 1]);
      y[j] = Complex(std::log(std::abs(probe.amplitudes[j])), theta);
    }
    Eigen::MatrixXd X(nd, 2);
    X.col(0).setOnes();
    X.col(1) = depths;
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(X);
    Eigen::VectorXd re = qr.solve(y.real().eval());
    Eigen::VectorXd im = qr.solve(y.imag().eval());
    Complex s(re[1], im[1]);
    Eigen::VectorXcd fitted = X.cast<Complex>() * Eigen::Vector2cd(Complex(re[0], im[0]), s);
    probe.fit_residual = std::sqrt((y - fitted).squaredNorm() / nd);
    // amplitude(d) ~ e^{-i lambda_- d}, so the slope is -i lambda_- and
    // lambda_+ = conj(i s)
    probe.lambda_hat = std::conj(Complex(0, 1) * s);
    probe.oscillation_rate = probe.lambda_hat.real();
    probe.decay_rate = probe.lambda_hat.imag();
    if (probe.decay_rate <= 0)
      throw std::runtime_error("probe_boundary_decay: fitted decay rate not positive");
    out.push_back(std::move(probe));
  }
  return out;
}

BoundaryTensorEstimate estimate_boundary_tensor(const std::vector<HalfspaceProbe>& probes,
                                                double a_nn) {
  if (probes.empty()) throw std::invalid_argument("estimate_boundary_tensor: no probes");
  if (a_nn <= 0) throw std::invalid_argument("estimate_boundary_tensor: bad calibration");
  int nt = static_cast<int>(probes[0].xi_prime.size());  // tangential dimension
  int n = nt + 1;
  // unknowns: a_na (nt of them), then the tangential block upper triangle
  int ntri = nt * (nt + 1) / 2;
  int cols = nt + ntri;
  int rows = 2 * static_cast<int>(probes.size());
  Eigen::MatrixXd M = Eigen::MatrixXd::Zero(rows, cols);
  Eigen::VectorXd rhs(rows);
  for (size_t p = 0; p < probes.size(); ++p) {
    const Eigen::VectorXd& xi = probes[p].xi_prime;
    if (xi.size() != nt) throw std::invalid_argument("estimate_boundary_tensor: mixed dimensions");
    Complex l = probes[p].lambda_hat;
    int r = 2 * static_cast<int>(p);
    for (int a = 0; a < nt; ++a) {
      M(r, a) = 2.0 * xi[a] * l.real();
      M(r + 1, a) = 2.0 * xi[a] * l.imag();
    }
    int col = nt;
    for (int a = 0; a < nt; ++a)
      for (int b = a; b < nt; ++b, ++col)
        M(r, col) = (a == b) ? xi[a] * xi[a] : 2.0 * xi[a] * xi[b];
    Complex l2 = l * l;
    rhs[r] = -a_nn * l2.real();
    rhs[r + 1] = -a_nn * l2.imag();
  }
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(M);
  if (qr.rank() < cols)
    throw std::runtime_error("estimate_boundary_tensor: probe set under-determined");
  Eigen::VectorXd sol = qr.solve(rhs);

  BoundaryTensorEstimate est;
  est.A_hat = Eigen::MatrixXd::Zero(n, n);
  est.A_hat(n - 1, n - 1) = a_nn;
  for (int a = 0; a < nt; ++a) {
    est.A_hat(n - 1, a) = sol[a];
    est.A_hat(a, n - 1) = sol[a];
  }
  int col = nt;
  for (int a = 0; a < nt; ++a)
    for (int b = a; b < nt; ++b, ++col) {
      est.A_hat(a, b) = sol[col];
      est.A_hat(b, a) = sol[col];
    }
  est.residual = (M * sol - rhs).norm() / rhs.norm();
  for (const HalfspaceProbe& p : probes) est.frequencies.push_back(p.xi_prime);
  return est;
}

}  // namespace hdi
