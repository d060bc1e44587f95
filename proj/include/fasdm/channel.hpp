#pragma once

// Finite-scatterer 2D FAS channel model and training-set generation.

#include "fasdm/rng.hpp"

#include <Eigen/Core>

#include <complex>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace fasdm {

using cdouble = std::complex<double>;

struct FasGeometry {
  int n1 = 16;       // ports along x
  int n2 = 16;       // ports along y
  double w1 = 1.5;   // aperture along x, in wavelengths
  double w2 = 1.5;   // aperture along y, in wavelengths

  int ports() const { return n1 * n2; }
  // Flat index of port (u, v): column-major vectorization, x fastest.
  int port_index(int u, int v) const { return u + n1 * v; }
  void validate() const;
  bool operator==(const FasGeometry&) const = default;
};

struct PathSet {
  std::vector<cdouble> gains;
  std::vector<double> azimuths;    // theta, radians
  std::vector<double> elevations;  // phi, radians

  std::size_t size() const { return gains.size(); }
  void validate() const;
};

// One channel realization in three synchronized views.
struct ChannelSample {
  Eigen::MatrixXcd h_mat;    // n1 x n2
  Eigen::VectorXcd h_flat;   // vec(h_mat), length N
  Eigen::VectorXd h_real;    // [Re(h_flat); Im(h_flat)], length 2N

  static ChannelSample from_matrix(const Eigen::MatrixXcd& h);
  static ChannelSample from_real(const FasGeometry& geom, const Eigen::VectorXd& h_real);
  bool consistent() const;
};

struct Aoa {
  double azimuth;
  double elevation;
};

// theta ~ U[-pi/2, pi/2]; phi has density cos(phi)/2 on [-pi/2, pi/2].
Aoa sample_aoa(Rng& rng);
// Inverse CDF of the elevation density: F(phi) = (1 + sin phi) / 2.
double elevation_from_uniform(double u);

Eigen::VectorXcd steering_x(double theta, double phi, const FasGeometry& geom);
Eigen::VectorXcd steering_y(double theta, double phi, const FasGeometry& geom);

// np paths with CN(0, 1) gains and directions from sample_aoa.
PathSet sample_paths(int np, Rng& rng);
// H = sqrt(1/np) * sum_i g_i a_x a_y^T
ChannelSample channel_from_paths(const FasGeometry& geom, const PathSet& paths);
ChannelSample generate_channel(const FasGeometry& geom, int np, Rng& rng);

// Dataset file: "FASDS1", n1:u32, n2:u32, count:u64, dtype "f32\0", then count
// records of 2*n1*n2 little-endian f32 (Re block, then Im block).
struct Dataset {
  int n1 = 0;
  int n2 = 0;
  std::size_t count = 0;
  std::vector<float> values;

  std::size_t record_length() const { return 2 * static_cast<std::size_t>(n1) * n2; }
  std::span<const float> record(std::size_t i) const {
    return {values.data() + i * record_length(), record_length()};
  }
};

struct DatasetInfo {
  FasGeometry geometry;
  int np = 0;
  std::uint64_t seed = 0;
  std::size_t count = 0;
};

// Record i is drawn from its own stream derived from (seed, i).
Dataset make_dataset(const FasGeometry& geom, int np, std::size_t count, std::uint64_t seed);
void write_dataset(const Dataset& ds, const std::filesystem::path& path);
Dataset read_dataset(const std::filesystem::path& path);
// Writes the dataset and a JSON sidecar (<path>.json); leaves no partial file on failure.
Dataset generate_dataset(const DatasetInfo& info, const std::filesystem::path& path);
DatasetInfo read_dataset_info(const std::filesystem::path& dataset_path);

}  // namespace fasdm
