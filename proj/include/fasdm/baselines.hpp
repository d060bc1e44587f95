#pragma once

// Compressed-sensing reference estimators: OMP over a 2D DFT basis and
// sparse Bayesian learning over a virtual angle grid.

#include "fasdm/channel.hpp"
#include "fasdm/measurement.hpp"

#include <Eigen/Core>

#include <vector>

namespace fasdm {

enum class DictionaryKind { dft2d, angle_grid };

struct Dictionary {
  Eigen::MatrixXcd atoms;  // N x D
  DictionaryKind kind = DictionaryKind::dft2d;
  int grid = 0;  // points per axis for angle_grid

  int size() const { return static_cast<int>(atoms.cols()); }
  // Rows of the atoms at the scheduled ports, in observation order.
  Eigen::MatrixXcd sensing(const SwitchSchedule& sched) const;
};

// Atom j1 + n1*j2 is vec(f_{j1} g_{j2}^T) for unitary per-axis DFT bases f, g.
Dictionary build_dft_dictionary(const FasGeometry& geom);
// Direction cosines u, v gridded uniformly over [-1, 1]; atom g1 + G*g2 has
// unit norm and is built from (u_{g1}, v_{g2}).
Dictionary build_angle_dictionary(const FasGeometry& geom, int g_per_axis);

struct OmpResult {
  Eigen::VectorXd h_hat;            // real 2N
  Eigen::VectorXcd coefficients;    // on the final support
  std::vector<int> support;
  std::vector<double> residual_norms;  // before the first and after every iteration
};

// k greedy iterations (fewer if the residual drops to residual_tol).
OmpResult omp_estimate(const Eigen::VectorXd& y, const SwitchSchedule& sched, const Dictionary& dict, int k,
                       double residual_tol = 0.0);

struct SblOptions {
  int max_iter = 200;
  double tol = 1e-4;
  bool update_gamma = true;      // false: a single E-step with gamma_init
  Eigen::VectorXd gamma_init;    // empty: N / D for every atom
};

struct SblResult {
  Eigen::VectorXd h_hat;  // real 2N
  Eigen::VectorXcd mu;
  Eigen::VectorXd gamma;
  Eigen::VectorXd sigma_diag;
  std::vector<double> objective;  // log evidence up to a constant, per E-step
  int iterations = 0;
  bool converged = false;
};

// noise_var is the complex-domain noise variance (twice the per-real-coordinate variance).
SblResult sbl_estimate(const Eigen::VectorXd& y, const SwitchSchedule& sched, const Dictionary& dict,
                       double noise_var, const SblOptions& opt = {});

// -log|C| - y^H C^{-1} y with C = noise_var I + Phi diag(gamma) Phi^H.
double sbl_log_evidence(const Eigen::MatrixXcd& phi, const Eigen::VectorXcd& y, const Eigen::VectorXd& gamma,
                        double noise_var);

}  // namespace fasdm
