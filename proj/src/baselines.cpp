#include "fasdm/baselines.hpp"

#include <Eigen/Cholesky>
#include <Eigen/QR>

#include <algorithm>
#include <cmath>
#include <iostream>
#include <numbers>
#include <stdexcept>

namespace fasdm {

Eigen::MatrixXcd Dictionary::sensing(const SwitchSchedule& sched) const {
  sched.validate(static_cast<int>(atoms.rows()));
  Eigen::MatrixXcd phi(sched.size(), atoms.cols());
  for (int i = 0; i < sched.size(); ++i) phi.row(i) = atoms.row(sched.ports[i]);
  return phi;
}

namespace {

Eigen::MatrixXcd unitary_dft(int n) {
  Eigen::MatrixXcd f(n, n);
  const double s = 1.0 / std::sqrt(static_cast<double>(n));
  for (int k = 0; k < n; ++k)
    for (int j = 0; j < n; ++j)
      f(k, j) = std::polar(s, -2.0 * std::numbers::pi * static_cast<double>((static_cast<long>(k) * j) % n) / n);
  return f;
}

Eigen::VectorXcd phase_ramp(int n, double spacing, double cosine) {
  Eigen::VectorXcd a(n);
  for (int k = 0; k < n; ++k) a[k] = std::polar(1.0, -2.0 * std::numbers::pi * k * spacing * cosine);
  return a;
}

// vec(a b^T) in column-major order.
Eigen::VectorXcd outer_vec(const Eigen::VectorXcd& a, const Eigen::VectorXcd& b) {
  Eigen::VectorXcd v(a.size() * b.size());
  for (Eigen::Index j = 0; j < b.size(); ++j) v.segment(j * a.size(), a.size()) = a * b[j];
  return v;
}

}  // namespace

Dictionary build_dft_dictionary(const FasGeometry& geom) {
  geom.validate();
  const Eigen::MatrixXcd f1 = unitary_dft(geom.n1), f2 = unitary_dft(geom.n2);
  Dictionary d;
  d.kind = DictionaryKind::dft2d;
  d.atoms.resize(geom.ports(), geom.ports());
  for (int j2 = 0; j2 < geom.n2; ++j2)
    for (int j1 = 0; j1 < geom.n1; ++j1) d.atoms.col(j1 + geom.n1 * j2) = outer_vec(f1.col(j1), f2.col(j2));
  return d;
}

Dictionary build_angle_dictionary(const FasGeometry& geom, int g_per_axis) {
  geom.validate();
  if (g_per_axis < 1) throw std::invalid_argument("build_angle_dictionary: need at least one grid point");
  const int g = g_per_axis;
  auto grid_point = [g](int i) { return g == 1 ? 0.0 : -1.0 + 2.0 * i / (g - 1); };
  const double dx = geom.w1 / (geom.n1 - 1), dy = geom.w2 / (geom.n2 - 1);
  const double norm = 1.0 / std::sqrt(static_cast<double>(geom.ports()));
  Dictionary d;
  d.kind = DictionaryKind::angle_grid;
  d.grid = g;
  d.atoms.resize(geom.ports(), static_cast<Eigen::Index>(g) * g);
  for (int g2 = 0; g2 < g; ++g2) {
    const Eigen::VectorXcd ay = phase_ramp(geom.n2, dy, grid_point(g2));
    for (int g1 = 0; g1 < g; ++g1)
      d.atoms.col(g1 + g * g2) = norm * outer_vec(phase_ramp(geom.n1, dx, grid_point(g1)), ay);
  }
  return d;
}

// ---------------------------------------------------------------------------

OmpResult omp_estimate(const Eigen::VectorXd& y, const SwitchSchedule& sched, const Dictionary& dict, int k,
                       double residual_tol) {
  if (k < 0) throw std::invalid_argument("omp_estimate: k must be nonnegative");
  if (y.size() != 2 * sched.size()) throw std::invalid_argument("omp_estimate: y length is not 2*l*m");
  const Eigen::VectorXcd yc = complexify(y);
  const Eigen::MatrixXcd phi = dict.sensing(sched);
  const Eigen::VectorXd col_norm = phi.colwise().norm().transpose();

  OmpResult r;
  Eigen::VectorXcd residual = yc;
  r.residual_norms.push_back(residual.norm());
  std::vector<char> excluded(phi.cols(), 0);
  Eigen::VectorXcd coef;

  for (int it = 0; it < k && residual.norm() > residual_tol; ++it) {
    const Eigen::VectorXcd corr = phi.adjoint() * residual;
    int best = -1;
    double best_val = -1.0;
    for (Eigen::Index d = 0; d < phi.cols(); ++d) {
      if (excluded[d] || col_norm[d] == 0.0) continue;
      const double v = std::abs(corr[d]) / col_norm[d];
      if (v > best_val) {
        best_val = v;
        best = static_cast<int>(d);
      }
    }
    if (best < 0) break;
    excluded[best] = 1;
    r.support.push_back(best);

    Eigen::MatrixXcd sub(phi.rows(), r.support.size());
    for (std::size_t j = 0; j < r.support.size(); ++j) sub.col(j) = phi.col(r.support[j]);
    Eigen::ColPivHouseholderQR<Eigen::MatrixXcd> qr(sub);
    if (qr.rank() < static_cast<Eigen::Index>(r.support.size())) {
      std::cerr << "omp_estimate: atom " << best << " makes the active set rank-deficient; dropped\n";
      r.support.pop_back();
      r.residual_norms.push_back(residual.norm());
      continue;
    }
    coef = qr.solve(yc);
    residual = yc - sub * coef;
    r.residual_norms.push_back(residual.norm());
  }

  Eigen::VectorXcd h = Eigen::VectorXcd::Zero(dict.atoms.rows());
  for (std::size_t j = 0; j < r.support.size(); ++j) h += coef[j] * dict.atoms.col(r.support[j]);
  r.coefficients = r.support.empty() ? Eigen::VectorXcd() : coef;
  r.h_hat = realify(h);
  return r;
}

// ---------------------------------------------------------------------------

double sbl_log_evidence(const Eigen::MatrixXcd& phi, const Eigen::VectorXcd& y, const Eigen::VectorXd& gamma,
                        double noise_var) {
  Eigen::MatrixXcd c = phi * gamma.cwiseMax(0.0).asDiagonal() * phi.adjoint();
  c.diagonal().array() += noise_var;
  const Eigen::LLT<Eigen::MatrixXcd> llt(c);
  if (llt.info() != Eigen::Success) throw std::runtime_error("sbl_log_evidence: covariance not positive definite");
  const Eigen::MatrixXcd l = llt.matrixL();
  double logdet = 0.0;
  for (Eigen::Index i = 0; i < l.rows(); ++i) logdet += 2.0 * std::log(l(i, i).real());
  const double quad = y.dot(llt.solve(y)).real();
  return -logdet - quad;
}

namespace {

struct EStep {
  Eigen::VectorXcd mu;
  Eigen::VectorXd sigma_diag;
  double log_evidence = 0;
};

// Worked in the observation space (M x M) through the Woodbury identity:
// C = s2 I + Phi Gamma Phi^H, mu = Gamma Phi^H C^{-1} y,
// diag(Sigma) = gamma - gamma^2 diag(Phi^H C^{-1} Phi). Same posterior as
// (Phi^H Phi / s2 + Gamma^{-1})^{-1}, defined when some gamma are zero, and
// much cheaper than the D x D form when M << D.
EStep e_step(const Eigen::MatrixXcd& phi, const Eigen::VectorXcd& y, const Eigen::VectorXd& gamma,
             double noise_var) {
  const Eigen::VectorXd g = gamma.cwiseMax(0.0);
  const Eigen::Index m = phi.rows();
  Eigen::MatrixXcd c = phi * g.asDiagonal() * phi.adjoint();
  c.diagonal().array() += noise_var;
  Eigen::LLT<Eigen::MatrixXcd> llt(c);
  if (llt.info() != Eigen::Success) {
    c.diagonal().array() += 1e-10 * noise_var;
    llt.compute(c);
    if (llt.info() != Eigen::Success) throw std::runtime_error("sbl_estimate: E-step solve failed after ridge retry");
  }
  const Eigen::MatrixXcd cinv_phi = llt.solve(phi);
  const Eigen::VectorXcd cinv_y = llt.solve(y);
  EStep e;
  e.mu = g.asDiagonal() * (phi.adjoint() * cinv_y);
  const Eigen::VectorXd q = (phi.conjugate().array() * cinv_phi.array()).colwise().sum().real().transpose();
  e.sigma_diag = (g.array() - g.array().square() * q.array()).cwiseMax(0.0).matrix();
  const Eigen::MatrixXcd l = llt.matrixL();
  double logdet = 0.0;
  for (Eigen::Index i = 0; i < m; ++i) logdet += 2.0 * std::log(l(i, i).real());
  e.log_evidence = -logdet - y.dot(cinv_y).real();
  return e;
}

}  // namespace

SblResult sbl_estimate(const Eigen::VectorXd& y, const SwitchSchedule& sched, const Dictionary& dict,
                       double noise_var, const SblOptions& opt) {
  if (!(noise_var > 0.0)) throw std::invalid_argument("sbl_estimate: noise variance must be positive");
  if (y.size() != 2 * sched.size()) throw std::invalid_argument("sbl_estimate: y length is not 2*l*m");
  const Eigen::VectorXcd yc = complexify(y);
  const Eigen::MatrixXcd phi = dict.sensing(sched);
  const Eigen::Index d = phi.cols();

  SblResult r;
  if (opt.gamma_init.size() > 0) {
    if (opt.gamma_init.size() != d) throw std::invalid_argument("sbl_estimate: gamma_init has wrong length");
    r.gamma = opt.gamma_init;
  } else {
    r.gamma = Eigen::VectorXd::Constant(d, static_cast<double>(dict.atoms.rows()) / d);
  }

  EStep e = e_step(phi, yc, r.gamma, noise_var);
  r.objective.push_back(e.log_evidence);
  if (opt.update_gamma) {
    for (int it = 0; it < opt.max_iter; ++it) {
      const Eigen::VectorXd next = (e.mu.cwiseAbs2() + e.sigma_diag).eval();
      // Change relative to the largest precision: decaying pruned atoms would
      // otherwise never meet a per-atom relative criterion.
      const double change = (next - r.gamma).cwiseAbs().maxCoeff() / std::max(r.gamma.maxCoeff(), 1e-300);
      r.gamma = next;
      ++r.iterations;
      e = e_step(phi, yc, r.gamma, noise_var);
      r.objective.push_back(e.log_evidence);
      if (change < opt.tol) {
        r.converged = true;
        break;
      }
    }
  }
  r.mu = e.mu;
  r.sigma_diag = e.sigma_diag;
  r.h_hat = realify(dict.atoms * r.mu);
  return r;
}

}  // namespace fasdm
