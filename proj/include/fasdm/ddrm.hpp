#pragma once

// Posterior-sampling channel estimation with a pre-trained noise predictor
// (denoising diffusion restoration over a port-selection operator).

#include "fasdm/denoiser.hpp"
#include "fasdm/diffusion.hpp"
#include "fasdm/measurement.hpp"
#include "fasdm/rng.hpp"

#include <Eigen/Core>

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace fasdm {

// Strictly increasing steps ending at T; the sentinel 0 is implicit.
struct Trajectory {
  std::vector<int> steps;

  int size() const { return static_cast<int>(steps.size()); }
  void validate(int t_max) const;
};

Trajectory make_trajectory(int t_max, int t_prime);

struct DdrmHyper {
  double eta_a = 0.0;
  double eta_b = 1.0;
  double eta_c = 1.0;
  bool deterministic = true;
  // Average this many independent posterior samples (1 = single sample).
  int posterior_samples = 1;
  // Also divide the clean-signal prediction by sqrt(alpha_bar) when moving it
  // into the scaled domain. Off by default: the clean signal has the same
  // scale in both parameterizations.
  bool rescale_x0 = false;

  void validate() const;
};

struct SpectralState {
  Eigen::VectorXd h_bar;  // permuted, variance-exploding scale
  int t = 0;
};

// (h_t - sqrt(1 - abar_t) eps(h_t, t)) / sqrt(abar_t), column-wise.
Eigen::MatrixXd predict_x0(const Eigen::MatrixXd& h_t, std::span<const int> t, const NoisePredictor& model,
                           const NoiseSchedule& sched);
Eigen::VectorXd predict_x0(const Eigen::VectorXd& h_t, int t, const NoisePredictor& model,
                           const NoiseSchedule& sched);

SpectralState init_latent(const Eigen::VectorXd& y_bar, double sigma, const NoiseSchedule& sched,
                          const SpectralMaps& maps, bool deterministic, Rng& rng);

SpectralState posterior_step(const SpectralState& state, int next_t, const Eigen::VectorXd& h0_hat,
                             const Eigen::VectorXd& y_bar, double sigma, const DdrmHyper& hyper,
                             const NoiseSchedule& sched, const SpectralMaps& maps, Rng& rng);

// One observation per entry; returns the estimates (real 2N vectors) as columns.
// All observations are advanced together so the predictor sees one batch per step.
Eigen::MatrixXd ddrm_estimate_batch(const std::vector<Observation>& obs, const std::vector<SpectralMaps>& maps,
                                    const NoisePredictor& model, const NoiseSchedule& sched,
                                    const Trajectory& traj, const DdrmHyper& hyper, Rng& rng);

Eigen::VectorXd ddrm_estimate(const Observation& obs, const SpectralMaps& maps, const NoisePredictor& model,
                              const NoiseSchedule& sched, const Trajectory& traj, const DdrmHyper& hyper,
                              Rng& rng);

// Estimation result: raw f32 h_hat plus <path>.json.
struct EstimateInfo {
  std::string method;
  std::optional<double> nmse;
  double wall_clock_ms = 0;
  std::vector<int> trajectory;
  std::optional<DdrmHyper> hyper;
  std::string checkpoint_fingerprint;
};

void save_estimate(const Eigen::VectorXd& h_hat, const EstimateInfo& info, const std::filesystem::path& path);

}  // namespace fasdm
