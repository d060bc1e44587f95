#pragma once

// DDPM noise schedule, forward/reverse steps and the offline training loop.

#include "fasdm/channel.hpp"
#include "fasdm/denoiser.hpp"
#include "fasdm/rng.hpp"

#include <Eigen/Core>

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

namespace fasdm {

// Arrays are indexed by t = 0..T; entry 0 holds the clean boundary
// (alpha_bar = 1, sigma_ve = 0, beta = beta_tilde = 0).
struct NoiseSchedule {
  int t_max = 0;
  double beta_first = 0;
  double beta_last = 0;
  std::vector<double> beta;
  std::vector<double> alpha;
  std::vector<double> alpha_bar;
  std::vector<double> sigma_ve;    // sqrt((1 - alpha_bar) / alpha_bar)
  std::vector<double> beta_tilde;  // posterior variance of the reverse step

  void check_step(int t) const;
  std::string fingerprint() const;
};

NoiseSchedule make_schedule(int t_max, double beta_1, double beta_T);

Eigen::VectorXd forward_sample(const Eigen::VectorXd& h0, int t, const Eigen::VectorXd& eps,
                               const NoiseSchedule& sched);
Eigen::VectorXd ancestral_step(const Eigen::VectorXd& h_t, int t, const Eigen::VectorXd& eps_hat,
                               const Eigen::VectorXd& z, const NoiseSchedule& sched);
// Unconditional generation; returns `count` samples of length `dim` as columns.
Eigen::MatrixXd ancestral_sample(const NoisePredictor& model, const NoiseSchedule& sched, int dim,
                                 int count, Rng& rng);

struct TrainConfig {
  int batch = 64;
  int epochs = 500;
  double learning_rate = 1e-4;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  double clip_norm = 1.0;
  std::uint64_t seed = 0;
  // Optional outputs. Checkpoints go to checkpoint_path every checkpoint_every
  // epochs (0 = only at the end).
  std::filesystem::path checkpoint_path;
  int checkpoint_every = 0;
  std::filesystem::path loss_csv;
  // Stop after this many optimizer steps (0 = run all epochs).
  long max_steps = 0;
  std::function<void(int epoch, double loss)> on_epoch;

  void validate() const;
};

struct TrainResult {
  DenoiserParams params;
  std::vector<double> epoch_loss;
  std::vector<double> step_loss;
};

TrainResult train(const Dataset& data, DenoiserParams init, const NoiseSchedule& sched,
                  const TrainConfig& cfg);

void write_loss_csv(const std::vector<double>& epoch_loss, const std::filesystem::path& path);

}  // namespace fasdm
