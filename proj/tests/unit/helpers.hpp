#pragma once

#include "fasdm/denoiser.hpp"
#include "fasdm/diffusion.hpp"

#include <Eigen/Core>
#include <Eigen/Cholesky>

#include <cmath>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

namespace testutil {

// Exact noise predictor for data distributed as N(0, c I).
class GaussianOracle final : public fasdm::NoisePredictor {
 public:
  GaussianOracle(const fasdm::NoiseSchedule& s, double c) : sched_(s), c_(c) {}
  Eigen::MatrixXd predict(const Eigen::MatrixXd& x, std::span<const int> t) const override {
    Eigen::MatrixXd out(x.rows(), x.cols());
    for (Eigen::Index j = 0; j < x.cols(); ++j) {
      const double ab = sched_.alpha_bar[t[j]];
      out.col(j) = std::sqrt(1.0 - ab) * x.col(j) / (c_ * ab + 1.0 - ab);
    }
    return out;
  }

 private:
  const fasdm::NoiseSchedule& sched_;
  double c_;
};

class ZeroPredictor final : public fasdm::NoisePredictor {
 public:
  Eigen::MatrixXd predict(const Eigen::MatrixXd& x, std::span<const int>) const override {
    return Eigen::MatrixXd::Zero(x.rows(), x.cols());
  }
};

// Small network for fast tests: 8x8 grid, base width 8.
inline fasdm::UNetArch tiny_arch(int grid = 8) {
  fasdm::UNetArch a;
  a.grid_width = grid;
  a.grid_height = grid;
  a.base_width = 8;
  a.channel_multipliers = {1, 2, 2, 4};
  a.d_emb = 16;
  return a;
}

inline std::filesystem::path temp_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("fasdm_test_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

inline Eigen::VectorXd random_vector(Eigen::Index n, std::mt19937_64& rng) {
  std::normal_distribution<double> d;
  Eigen::VectorXd v(n);
  for (Eigen::Index i = 0; i < n; ++i) v[i] = d(rng);
  return v;
}

// Support of size k (1 or 3) with the largest least-squares fit to y, by
// enumerating every candidate set through the Gram matrix.
inline std::vector<int> exhaustive_support(const Eigen::MatrixXcd& phi, const Eigen::VectorXcd& y, int k) {
  const int d = static_cast<int>(phi.cols());
  const Eigen::MatrixXcd gram = phi.adjoint() * phi;
  const Eigen::VectorXcd b = phi.adjoint() * y;
  std::vector<int> best;
  double best_fit = -1;
  if (k == 1) {
    for (int a = 0; a < d; ++a) {
      const double fit = std::norm(b[a]) / gram(a, a).real();
      if (fit > best_fit) best_fit = fit, best = {a};
    }
  } else if (k == 3) {
    Eigen::Matrix3cd g;
    Eigen::Vector3cd bs;
    for (int a = 0; a < d; ++a)
      for (int c1 = a + 1; c1 < d; ++c1)
        for (int c2 = c1 + 1; c2 < d; ++c2) {
          const int s[3] = {a, c1, c2};
          for (int i = 0; i < 3; ++i) {
            bs[i] = b[s[i]];
            for (int j = 0; j < 3; ++j) g(i, j) = gram(s[i], s[j]);
          }
          Eigen::LLT<Eigen::Matrix3cd> llt(g);
          if (llt.info() != Eigen::Success) continue;
          const double fit = bs.dot(llt.solve(bs)).real();  // ||y||^2 - residual^2
          if (fit > best_fit) best_fit = fit, best = {a, c1, c2};
        }
  }
  return best;
}

}  // namespace testutil
