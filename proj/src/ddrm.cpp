#include "fasdm/ddrm.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <fstream>
#include <stdexcept>
#include <string>

namespace fasdm {

void Trajectory::validate(int t_max) const {
  if (steps.empty()) throw std::invalid_argument("Trajectory: empty");
  if (steps.back() != t_max) throw std::invalid_argument("Trajectory: must end at T");
  for (std::size_t i = 0; i < steps.size(); ++i) {
    if (steps[i] < 1 || steps[i] > t_max) throw std::invalid_argument("Trajectory: step outside [1, T]");
    if (i > 0 && steps[i] <= steps[i - 1]) throw std::invalid_argument("Trajectory: not strictly increasing");
  }
}

Trajectory make_trajectory(int t_max, int t_prime) {
  if (t_prime < 1 || t_prime > t_max)
    throw std::invalid_argument("make_trajectory: need 1 <= t_prime <= t_max");
  Trajectory tr;
  for (int i = 1; i <= t_prime; ++i) {
    int s = static_cast<int>(std::lround(static_cast<double>(i) * t_max / t_prime));
    if (!tr.steps.empty() && s <= tr.steps.back()) s = tr.steps.back() + 1;
    tr.steps.push_back(std::min(s, t_max));
    if (tr.steps.back() == t_max) break;
  }
  tr.steps.back() = t_max;
  tr.validate(t_max);
  return tr;
}

void DdrmHyper::validate() const {
  for (double e : {eta_a, eta_b, eta_c})
    if (!(e >= 0.0 && e <= 1.0)) throw std::invalid_argument("DdrmHyper: eta outside [0, 1]");
  if (posterior_samples < 1) throw std::invalid_argument("DdrmHyper: posterior_samples must be >= 1");
}

Eigen::MatrixXd predict_x0(const Eigen::MatrixXd& h_t, std::span<const int> t, const NoisePredictor& model,
                           const NoiseSchedule& sched) {
  if (static_cast<Eigen::Index>(t.size()) != h_t.cols())
    throw std::invalid_argument("predict_x0: one step per column required");
  for (int s : t) sched.check_step(s);
  Eigen::MatrixXd x0 = model.predict(h_t, t);
  for (Eigen::Index c = 0; c < h_t.cols(); ++c) {
    const double ab = sched.alpha_bar[t[c]];
    x0.col(c) = (h_t.col(c) - std::sqrt(1.0 - ab) * x0.col(c)) / std::sqrt(ab);
  }
  return x0;
}

Eigen::VectorXd predict_x0(const Eigen::VectorXd& h_t, int t, const NoisePredictor& model,
                           const NoiseSchedule& sched) {
  const int steps[1] = {t};
  return predict_x0(Eigen::MatrixXd(h_t), steps, model, sched).col(0);
}

SpectralState init_latent(const Eigen::VectorXd& y_bar, double sigma, const NoiseSchedule& sched,
                          const SpectralMaps& maps, bool deterministic, Rng& rng) {
  if (y_bar.size() != maps.n_bar) throw std::invalid_argument("init_latent: y_bar length is not n_bar");
  const double s_t = sched.sigma_ve[sched.t_max];
  if (!(s_t > sigma))
    throw std::invalid_argument("init_latent: noise schedule too short (sigma_T = " + std::to_string(s_t) +
                                " <= measurement sigma " + std::to_string(sigma) + ")");
  SpectralState st;
  st.t = sched.t_max;
  st.h_bar = Eigen::VectorXd::Zero(maps.n_bar);
  st.h_bar.head(maps.m_bar) = y_bar.head(maps.m_bar);
  if (!deterministic) {
    const double s_obs = std::sqrt(s_t * s_t - sigma * sigma);
    for (int i = 0; i < maps.n_bar; ++i)
      st.h_bar[i] += (i < maps.m_bar ? s_obs : s_t) * standard_normal(rng);
  }
  return st;
}

SpectralState posterior_step(const SpectralState& state, int next_t, const Eigen::VectorXd& h0_hat,
                             const Eigen::VectorXd& y_bar, double sigma, const DdrmHyper& hyper,
                             const NoiseSchedule& sched, const SpectralMaps& maps, Rng& rng) {
  if (!(next_t >= 0 && next_t < state.t)) throw std::invalid_argument("posterior_step: next_t must be below t");
  if (h0_hat.size() != maps.n_bar || y_bar.size() != maps.n_bar || state.h_bar.size() != maps.n_bar)
    throw std::invalid_argument("posterior_step: length mismatch");
  const double s_t = sched.sigma_ve[state.t];
  const double s_next = sched.sigma_ve[next_t];  // 0 at next_t = 0
  const double ea = hyper.eta_a, eb = hyper.eta_b, ec = hyper.eta_c;

  SpectralState out;
  out.t = next_t;
  out.h_bar.resize(maps.n_bar);
  const double c_unobs = std::sqrt(1.0 - ec * ec) * s_next / s_t;
  const double sd_unobs = ec * s_next;
  const bool low_noise = s_next < sigma;
  double c_obs = 0.0, sd_obs = 0.0;
  if (low_noise) {
    c_obs = std::sqrt(1.0 - ea * ea) * s_next / sigma;
    sd_obs = ea * s_next;
  } else {
    const double var = s_next * s_next - eb * eb * sigma * sigma;
    if (var < 0.0) throw std::logic_error("posterior_step: negative variance in the observed branch");
    sd_obs = std::sqrt(var);
  }

  for (int i = 0; i < maps.m_bar; ++i) {
    const double h0 = h0_hat[i];
    out.h_bar[i] = low_noise ? h0 + c_obs * (y_bar[i] - h0) : (1.0 - eb) * h0 + eb * y_bar[i];
  }
  for (int i = maps.m_bar; i < maps.n_bar; ++i) {
    const double h0 = h0_hat[i];
    out.h_bar[i] = h0 + c_unobs * (state.h_bar[i] - h0);
  }
  if (!hyper.deterministic) {
    for (int i = 0; i < maps.n_bar; ++i)
      out.h_bar[i] += (i < maps.m_bar ? sd_obs : sd_unobs) * standard_normal(rng);
  }
  return out;
}

Eigen::MatrixXd ddrm_estimate_batch(const std::vector<Observation>& obs, const std::vector<SpectralMaps>& maps,
                                    const NoisePredictor& model, const NoiseSchedule& sched,
                                    const Trajectory& traj, const DdrmHyper& hyper, Rng& rng) {
  hyper.validate();
  traj.validate(sched.t_max);
  if (obs.empty() || obs.size() != maps.size())
    throw std::invalid_argument("ddrm_estimate: need one SpectralMaps per observation");
  const int batch = static_cast<int>(obs.size());
  const int n_bar = maps.front().n_bar;
  std::vector<Eigen::VectorXd> y_bar(batch);
  for (int b = 0; b < batch; ++b) {
    if (maps[b].n_bar != n_bar) throw std::invalid_argument("ddrm_estimate: mixed geometries in one batch");
    y_bar[b] = pad_observation(obs[b].y, maps[b]);
  }

  Eigen::MatrixXd total = Eigen::MatrixXd::Zero(n_bar, batch);
  std::vector<SpectralState> state(batch);
  std::vector<int> t_col(batch);
  Eigen::MatrixXd x(n_bar, batch);

  for (int k = 0; k < hyper.posterior_samples; ++k) {
    for (int b = 0; b < batch; ++b)
      state[b] = init_latent(y_bar[b], obs[b].sigma, sched, maps[b], hyper.deterministic, rng);

    for (int i = traj.size() - 1; i >= 0; --i) {
      const int t = traj.steps[i];
      const int next_t = i > 0 ? traj.steps[i - 1] : 0;
      const double scale = std::sqrt(sched.alpha_bar[t]);
      for (int b = 0; b < batch; ++b) x.col(b) = scale * from_spectral(state[b].h_bar, maps[b]);
      std::fill(t_col.begin(), t_col.end(), t);
      const Eigen::MatrixXd x0 = predict_x0(x, t_col, model, sched);
      for (int b = 0; b < batch; ++b) {
        Eigen::VectorXd h0 = to_spectral(Eigen::VectorXd(x0.col(b)), maps[b]);
        if (hyper.rescale_x0) h0 /= scale;
        state[b] = posterior_step(state[b], next_t, h0, y_bar[b], obs[b].sigma, hyper, sched, maps[b], rng);
        if (!state[b].h_bar.allFinite())
          throw std::runtime_error("ddrm_estimate: non-finite state after step " + std::to_string(t) +
                                   " (trajectory index " + std::to_string(i + 1) + ")");
      }
    }
    for (int b = 0; b < batch; ++b) total.col(b) += from_spectral(state[b].h_bar, maps[b]);
  }
  return total / static_cast<double>(hyper.posterior_samples);
}

Eigen::VectorXd ddrm_estimate(const Observation& obs, const SpectralMaps& maps, const NoisePredictor& model,
                              const NoiseSchedule& sched, const Trajectory& traj, const DdrmHyper& hyper,
                              Rng& rng) {
  return ddrm_estimate_batch({obs}, {maps}, model, sched, traj, hyper, rng).col(0);
}

void save_estimate(const Eigen::VectorXd& h_hat, const EstimateInfo& info, const std::filesystem::path& path) {
  write_f32(path, h_hat);
  nlohmann::json j = {{"method", info.method}, {"wall_clock_ms", info.wall_clock_ms}, {"length", h_hat.size()}};
  j["nmse"] = info.nmse ? nlohmann::json(*info.nmse) : nlohmann::json(nullptr);
  if (!info.trajectory.empty()) j["trajectory"] = info.trajectory;
  if (info.hyper) {
    j["hyper"] = {{"eta_a", info.hyper->eta_a}, {"eta_b", info.hyper->eta_b}, {"eta_c", info.hyper->eta_c},
                  {"deterministic", info.hyper->deterministic},
                  {"posterior_samples", info.hyper->posterior_samples},
                  {"rescale_x0", info.hyper->rescale_x0}};
  }
  if (!info.checkpoint_fingerprint.empty()) j["checkpoint_fingerprint"] = info.checkpoint_fingerprint;
  std::ofstream out(path.string() + ".json");
  out << j.dump(2) << '\n';
  if (!out) throw std::runtime_error("save_estimate: cannot write sidecar for " + path.string());
}

}  // namespace fasdm
