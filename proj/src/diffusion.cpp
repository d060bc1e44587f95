#include "fasdm/diffusion.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace fasdm {

void NoiseSchedule::check_step(int t) const {
  if (t < 1 || t > t_max)
    throw std::out_of_range("diffusion step " + std::to_string(t) + " outside [1, " +
                            std::to_string(t_max) + "]");
}

std::string NoiseSchedule::fingerprint() const {
  char buf[96];
  std::snprintf(buf, sizeof(buf), "linear:T=%d:beta1=%.9g:betaT=%.9g", t_max, beta_first, beta_last);
  return buf;
}

NoiseSchedule make_schedule(int t_max, double beta_1, double beta_T) {
  if (t_max < 2) throw std::invalid_argument("make_schedule: t_max must be at least 2");
  if (!(beta_1 > 0.0) || !(beta_1 <= beta_T) || !(beta_T < 1.0))
    throw std::invalid_argument("make_schedule: need 0 < beta_1 <= beta_T < 1");
  NoiseSchedule s;
  s.t_max = t_max;
  s.beta_first = beta_1;
  s.beta_last = beta_T;
  const auto n = static_cast<std::size_t>(t_max) + 1;
  s.beta.assign(n, 0.0);
  s.alpha.assign(n, 1.0);
  s.alpha_bar.assign(n, 1.0);
  s.sigma_ve.assign(n, 0.0);
  s.beta_tilde.assign(n, 0.0);
  for (int t = 1; t <= t_max; ++t) {
    s.beta[t] = beta_1 + (t - 1) * (beta_T - beta_1) / (t_max - 1);
    s.alpha[t] = 1.0 - s.beta[t];
    s.alpha_bar[t] = s.alpha_bar[t - 1] * s.alpha[t];
    s.sigma_ve[t] = std::sqrt((1.0 - s.alpha_bar[t]) / s.alpha_bar[t]);
    s.beta_tilde[t] = (1.0 - s.alpha_bar[t - 1]) / (1.0 - s.alpha_bar[t]) * s.beta[t];
  }
  return s;
}

Eigen::VectorXd forward_sample(const Eigen::VectorXd& h0, int t, const Eigen::VectorXd& eps,
                               const NoiseSchedule& sched) {
  sched.check_step(t);
  if (h0.size() != eps.size()) throw std::invalid_argument("forward_sample: shape mismatch");
  const double ab = sched.alpha_bar[t];
  return std::sqrt(ab) * h0 + std::sqrt(1.0 - ab) * eps;
}

Eigen::VectorXd ancestral_step(const Eigen::VectorXd& h_t, int t, const Eigen::VectorXd& eps_hat,
                               const Eigen::VectorXd& z, const NoiseSchedule& sched) {
  sched.check_step(t);
  if (h_t.size() != eps_hat.size() || (t > 1 && z.size() != h_t.size()))
    throw std::invalid_argument("ancestral_step: shape mismatch");
  const double a = sched.alpha[t];
  Eigen::VectorXd out = (h_t - ((1.0 - a) / std::sqrt(1.0 - sched.alpha_bar[t])) * eps_hat) / std::sqrt(a);
  if (t > 1) out += std::sqrt(sched.beta_tilde[t]) * z;
  return out;
}

Eigen::MatrixXd ancestral_sample(const NoisePredictor& model, const NoiseSchedule& sched, int dim,
                                 int count, Rng& rng) {
  if (dim < 1 || count < 1) throw std::invalid_argument("ancestral_sample: empty shape");
  Eigen::MatrixXd h(dim, count);
  for (Eigen::Index i = 0; i < h.size(); ++i) h.data()[i] = standard_normal(rng);
  std::vector<int> steps(count);
  for (int t = sched.t_max; t >= 1; --t) {
    std::fill(steps.begin(), steps.end(), t);
    const Eigen::MatrixXd eps_hat = model.predict(h, steps);
    const double a = sched.alpha[t];
    h = (h - ((1.0 - a) / std::sqrt(1.0 - sched.alpha_bar[t])) * eps_hat) / std::sqrt(a);
    if (t > 1) {
      const double s = std::sqrt(sched.beta_tilde[t]);
      for (Eigen::Index i = 0; i < h.size(); ++i) h.data()[i] += s * standard_normal(rng);
    }
    if (!h.allFinite())
      throw std::runtime_error("ancestral_sample: non-finite state at step " + std::to_string(t));
  }
  return h;
}

// ---------------------------------------------------------------------------

void TrainConfig::validate() const {
  if (batch < 1) throw std::invalid_argument("TrainConfig: batch must be at least 1");
  if (epochs < 1) throw std::invalid_argument("TrainConfig: epochs must be at least 1");
  if (!(learning_rate > 0.0)) throw std::invalid_argument("TrainConfig: learning_rate must be positive");
  if (!(clip_norm > 0.0)) throw std::invalid_argument("TrainConfig: clip_norm must be positive");
}

void write_loss_csv(const std::vector<double>& epoch_loss, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  out << "epoch,mean_loss\n";
  char buf[64];
  for (std::size_t e = 0; e < epoch_loss.size(); ++e) {
    std::snprintf(buf, sizeof(buf), "%zu,%.9g\n", e + 1, epoch_loss[e]);
    out << buf;
  }
  if (!out) throw std::runtime_error("write_loss_csv: cannot write " + path.string());
}

namespace {

class Adam {
 public:
  Adam(std::size_t n, const TrainConfig& cfg) : cfg_(cfg), m_(n, 0.0f), v_(n, 0.0f) {}

  void step(std::span<float> w, std::span<const float> g) {
    ++t_;
    const double c1 = 1.0 - std::pow(cfg_.adam_beta1, t_);
    const double c2 = 1.0 - std::pow(cfg_.adam_beta2, t_);
    const float b1 = static_cast<float>(cfg_.adam_beta1), b2 = static_cast<float>(cfg_.adam_beta2);
    const float lr = static_cast<float>(cfg_.learning_rate / c1);
    const float inv_c2 = static_cast<float>(1.0 / c2);
    const float eps = static_cast<float>(cfg_.adam_eps);
    for (std::size_t i = 0; i < w.size(); ++i) {
      m_[i] = b1 * m_[i] + (1.0f - b1) * g[i];
      v_[i] = b2 * v_[i] + (1.0f - b2) * g[i] * g[i];
      w[i] -= lr * m_[i] / (std::sqrt(v_[i] * inv_c2) + eps);
    }
  }

 private:
  const TrainConfig& cfg_;
  nn::Buffer<float> m_, v_;
  long t_ = 0;
};

// Gradient of a cropped output, scattered back to the padded extent.
nn::Tensor<float> uncrop(const nn::Tensor<float>& g, const CropDescriptor& crop) {
  if (crop.padded_height == crop.height && crop.padded_width == crop.width) return g;
  nn::Tensor<float> out(g.channels, g.batch, crop.padded_height, crop.padded_width);
  for (int c = 0; c < g.channels; ++c)
    for (int b = 0; b < g.batch; ++b)
      for (int y = 0; y < g.height; ++y)
        for (int x = 0; x < g.width; ++x) out.at(c, b, y, x) = g.at(c, b, y, x);
  return out;
}

void save_params(const DenoiserParams& p, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  save_checkpoint(p, path);
}

}  // namespace

TrainResult train(const Dataset& data, DenoiserParams init, const NoiseSchedule& sched,
                  const TrainConfig& cfg) {
  cfg.validate();
  if (data.count == 0) throw std::invalid_argument("train: empty dataset");
  const UNetArch arch = init.arch;
  if (data.n1 != arch.grid_width || data.n2 != arch.grid_height)
    throw std::invalid_argument("train: dataset geometry does not match the denoiser");

  UNet<float> net(arch);
  if (init.weights.size() != net.parameter_count())
    throw std::invalid_argument("train: weight count does not match architecture");
  std::copy(init.weights.begin(), init.weights.end(), net.weights().begin());

  TrainResult result;
  result.params = std::move(init);
  result.params.schedule_fingerprint = sched.fingerprint();
  result.params.dataset_fingerprint = fingerprint(data.values);

  const int n = data.n1 * data.n2;
  const int batch = cfg.batch;
  const std::size_t steps_per_epoch = (data.count + batch - 1) / batch;
  nn::Buffer<float> grads(net.parameter_count());
  Adam adam(grads.size(), cfg);
  std::vector<std::size_t> order(data.count);
  std::vector<int> t(batch);
  long step = 0;

  auto snapshot = [&]() {
    result.params.weights.assign(net.weights().begin(), net.weights().end());
  };

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    Rng rng = make_rng(cfg.seed, {0x747261696eull, static_cast<std::uint64_t>(epoch)});
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_sum = 0.0;
    std::size_t epoch_steps = 0;

    for (std::size_t s = 0; s < steps_per_epoch; ++s) {
      nn::Tensor<float> x(2, batch, data.n2, data.n1);
      nn::Tensor<float> eps(2, batch, data.n2, data.n1);
      std::uniform_int_distribution<int> pick_t(1, sched.t_max);
      for (int b = 0; b < batch; ++b) {
        // Wraps around when the dataset is smaller than a batch.
        const auto rec = data.record(order[(s * batch + b) % data.count]);
        t[b] = pick_t(rng);
        const float ca = static_cast<float>(std::sqrt(sched.alpha_bar[t[b]]));
        const float cn = static_cast<float>(std::sqrt(1.0 - sched.alpha_bar[t[b]]));
        for (int c = 0; c < 2; ++c) {
          float* xd = x.data.data() + c * x.channel_stride() + b * x.plane();
          float* ed = eps.data.data() + c * eps.channel_stride() + b * eps.plane();
          for (int i = 0; i < n; ++i) {
            ed[i] = static_cast<float>(standard_normal(rng));
            xd[i] = ca * rec[c * n + i] + cn * ed[i];
          }
        }
      }

      CropDescriptor crop;
      const nn::Tensor<float> xp = pad_input(x, arch.spatial_multiple(), &crop);
      typename UNet<float>::Cache cache;
      const nn::Tensor<float> out = crop_output(net.forward(xp, t, &cache), crop);

      nn::Tensor<float> dout(2, batch, data.n2, data.n1);
      double loss = 0.0;
      const float scale = 2.0f / static_cast<float>(out.size());
      for (std::size_t i = 0; i < out.size(); ++i) {
        const float d = out.data[i] - eps.data[i];
        loss += static_cast<double>(d) * d;
        dout.data[i] = scale * d;
      }
      loss /= static_cast<double>(out.size());

      if (!std::isfinite(loss)) {
        snapshot();
        std::filesystem::path diag = cfg.checkpoint_path.empty()
                                         ? std::filesystem::temp_directory_path() / "fasdm_nonfinite.ckpt"
                                         : std::filesystem::path(cfg.checkpoint_path.string() + ".nonfinite");
        save_params(result.params, diag);
        throw std::runtime_error("train: non-finite loss at epoch " + std::to_string(epoch + 1) +
                                 ", step " + std::to_string(step) + "; diagnostic checkpoint " +
                                 diag.string());
      }

      std::fill(grads.begin(), grads.end(), 0.0f);
      net.backward(cache, uncrop(dout, crop), grads);
      double norm2 = 0.0;
      for (float g : grads) norm2 += static_cast<double>(g) * g;
      const double norm = std::sqrt(norm2);
      if (norm > cfg.clip_norm) {
        const float c = static_cast<float>(cfg.clip_norm / norm);
        for (float& g : grads) g *= c;
      }
      adam.step(net.weights(), grads);

      result.step_loss.push_back(loss);
      epoch_sum += loss;
      ++epoch_steps;
      ++step;
      if (cfg.max_steps > 0 && step >= cfg.max_steps) break;
    }

    result.epoch_loss.push_back(epoch_sum / static_cast<double>(epoch_steps));
    if (cfg.on_epoch) cfg.on_epoch(epoch + 1, result.epoch_loss.back());
    const bool last = epoch + 1 == cfg.epochs || (cfg.max_steps > 0 && step >= cfg.max_steps);
    if (!cfg.checkpoint_path.empty() &&
        (last || (cfg.checkpoint_every > 0 && (epoch + 1) % cfg.checkpoint_every == 0))) {
      snapshot();
      save_params(result.params, cfg.checkpoint_path);
    }
    if (!cfg.loss_csv.empty()) write_loss_csv(result.epoch_loss, cfg.loss_csv);
    if (last) break;
  }

  snapshot();
  return result;
}

}  // namespace fasdm
