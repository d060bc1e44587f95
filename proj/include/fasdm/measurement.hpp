#pragma once

// Switch schedules, noisy partial observations and the spectral permutation.

#include "fasdm/channel.hpp"
#include "fasdm/rng.hpp"

#include <Eigen/Core>

#include <cstdint>
#include <filesystem>
#include <vector>

namespace fasdm {

// ports[slot * m + chain]: the port chain `chain` observes in pilot slot `slot`.
struct SwitchSchedule {
  int l = 0;
  int m = 0;
  std::vector<int> ports;
  std::uint64_t seed = 0;  // recorded for serialization only

  int size() const { return l * m; }
  int port(int slot, int chain) const { return ports.at(static_cast<std::size_t>(slot) * m + chain); }
  // Throws if any port is out of range or repeated.
  void validate(int total_ports) const;
};

// l*m distinct ports drawn uniformly without replacement.
SwitchSchedule build_schedule(const FasGeometry& geom, int m, int l, Rng& rng);

Eigen::VectorXd realify(const Eigen::VectorXcd& h);
Eigen::VectorXcd complexify(const Eigen::VectorXd& x);

struct Observation {
  Eigen::VectorXd y;  // Re of the scheduled entries (slot-major), then their Im
  double sigma = 0;   // noise std per real coordinate
  SwitchSchedule schedule;
};

Observation observe(const ChannelSample& sample, const SwitchSchedule& sched, double sigma, Rng& rng);
// Noiseless observation through the complex selection, realified afterwards.
Eigen::VectorXd observe_complex(const Eigen::VectorXcd& h_flat, const SwitchSchedule& sched);

// spectral[i] = x[perm[i]]: the m_bar observed coordinates first, in y order,
// then the rest in increasing index order.
struct SpectralMaps {
  std::vector<int> perm;
  std::vector<int> inverse;
  int m_bar = 0;
  int n_bar = 0;

  bool observed(int spectral_index) const { return spectral_index < m_bar; }
};

SpectralMaps build_spectral_maps(const SwitchSchedule& sched, const FasGeometry& geom);

Eigen::VectorXd to_spectral(const Eigen::VectorXd& x, const SpectralMaps& maps);
Eigen::VectorXd from_spectral(const Eigen::VectorXd& x, const SpectralMaps& maps);
// Column-wise versions for batches.
Eigen::MatrixXd to_spectral(const Eigen::MatrixXd& x, const SpectralMaps& maps);
Eigen::MatrixXd from_spectral(const Eigen::MatrixXd& x, const SpectralMaps& maps);
// [y; 0] of length n_bar.
Eigen::VectorXd pad_observation(const Eigen::VectorXd& y, const SpectralMaps& maps);

void save_schedule(const SwitchSchedule& sched, const std::filesystem::path& path);
SwitchSchedule load_schedule(const std::filesystem::path& path);
// y as raw little-endian f32 plus <path>.json {sigma, length, schedule_ref}.
void save_observation(const Observation& obs, const std::filesystem::path& path,
                      const std::filesystem::path& schedule_ref);
Observation load_observation(const std::filesystem::path& path);

// Raw little-endian f32 vector files.
void write_f32(const std::filesystem::path& path, const Eigen::VectorXd& v);
Eigen::VectorXd read_f32(const std::filesystem::path& path);

}  // namespace fasdm
