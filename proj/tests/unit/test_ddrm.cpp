#include "fasdm/channel.hpp"
#include "fasdm/ddrm.hpp"
#include "fasdm/measurement.hpp"
#include "fasdm/rng.hpp"

#include "helpers.hpp"

#include <doctest.h>

#include <cmath>
#include <stdexcept>

using namespace fasdm;

namespace {

// Returns a fixed noise matrix regardless of input.
class FixedNoise final : public NoisePredictor {
 public:
  explicit FixedNoise(Eigen::MatrixXd eps) : eps_(std::move(eps)) {}
  Eigen::MatrixXd predict(const Eigen::MatrixXd&, std::span<const int>) const override { return eps_; }

 private:
  Eigen::MatrixXd eps_;
};

// Wraps another predictor and refuses inputs carrying sentinel magnitudes.
class SentinelGuard final : public NoisePredictor {
 public:
  explicit SentinelGuard(const NoisePredictor& inner) : inner_(inner) {}
  Eigen::MatrixXd predict(const Eigen::MatrixXd& x, std::span<const int> t) const override {
    if (x.cwiseAbs().maxCoeff() > 1e5) throw std::runtime_error("sentinel value reached the denoiser");
    ++calls;
    return inner_.predict(x, t);
  }
  mutable int calls = 0;

 private:
  const NoisePredictor& inner_;
};

struct Setup {
  FasGeometry geom{8, 8, 1.5, 1.5};
  NoiseSchedule sched = make_schedule(200, 1e-4, 0.05);
  SwitchSchedule sw;
  SpectralMaps maps;
  ChannelSample truth;

  explicit Setup(std::uint64_t seed, int l = 4) {
    auto rng = make_rng(seed);
    truth = generate_channel(geom, 6, rng);
    sw = build_schedule(geom, 4, l, rng);
    maps = build_spectral_maps(sw, geom);
  }
};

}  // namespace

TEST_CASE("trajectories") {
  auto a = make_trajectory(500, 25);
  REQUIRE(a.size() == 25);
  for (int i = 0; i < 25; ++i) CHECK(a.steps[i] == 20 * (i + 1));
  auto b = make_trajectory(200, 200);
  for (int i = 0; i < 200; ++i) CHECK(b.steps[i] == i + 1);
  auto c = make_trajectory(500, 1);
  CHECK(c.steps == std::vector<int>{500});
  auto d = make_trajectory(200, 25);
  CHECK(d.steps.front() == 8);
  CHECK(d.steps.back() == 200);
  CHECK_THROWS(make_trajectory(10, 0));
  CHECK_THROWS(make_trajectory(10, 11));
  CHECK_THROWS(Trajectory{{1, 3, 3, 10}}.validate(10));
  CHECK_THROWS(Trajectory{{1, 5}}.validate(10));
}

TEST_CASE("predict_x0 inverts the forward process with exact noise") {
  auto sched = make_schedule(500, 1e-4, 0.02);
  auto rng = make_rng(4);
  std::uniform_int_distribution<int> pick(1, 500);
  double worst = 0;
  for (int k = 0; k < 100; ++k) {
    Eigen::VectorXd h0 = testutil::random_vector(32, rng), eps = testutil::random_vector(32, rng);
    const int t = pick(rng);
    Eigen::VectorXd ht = forward_sample(h0, t, eps, sched);
    FixedNoise oracle(eps);
    Eigen::VectorXd rec = predict_x0(ht, t, oracle, sched);
    worst = std::max(worst, (rec - h0).norm() / h0.norm());
  }
  MESSAGE("worst relative error " << worst);
  CHECK(worst <= 1e-10);
}

TEST_CASE("predict_x0 with zero noise and at the terminal step") {
  auto sched = make_schedule(500, 1e-4, 0.02);
  std::mt19937_64 g(1);
  Eigen::VectorXd ht = testutil::random_vector(10, g);
  testutil::ZeroPredictor zero;
  CHECK((predict_x0(ht, 123, zero, sched) - ht / std::sqrt(sched.alpha_bar[123])).norm() < 1e-12);
  FixedNoise unit(Eigen::VectorXd::Ones(10));
  Eigen::VectorXd x = predict_x0(ht, 500, unit, sched);
  CHECK(x.allFinite());
  // amplification bounded by 1 / sqrt(alpha_bar_T) = sqrt(1 + sigma_T^2)
  const double amp = 1.0 / std::sqrt(sched.alpha_bar[500]);
  CHECK(amp == doctest::Approx(std::sqrt(1 + std::pow(sched.sigma_ve[500], 2))));
  CHECK(x.cwiseAbs().maxCoeff() <= amp * (ht.cwiseAbs().maxCoeff() + 1.0));
  CHECK_THROWS(predict_x0(ht, 0, zero, sched));
}

TEST_CASE("init_latent deterministic and stochastic") {
  Setup s(1);
  auto rng = make_rng(2);
  auto obs = observe(s.truth, s.sw, 0.1, rng);
  auto yb = pad_observation(obs.y, s.maps);
  auto st = init_latent(yb, 0.1, s.sched, s.maps, true, rng);
  CHECK(st.t == 200);
  CHECK(st.h_bar == yb);

  const double sT = s.sched.sigma_ve[200];
  const int n = 10000;
  Eigen::VectorXd sum = Eigen::VectorXd::Zero(s.maps.n_bar), sum2 = sum;
  for (int i = 0; i < n; ++i) {
    Eigen::VectorXd z = init_latent(yb, 0.0, s.sched, s.maps, false, rng).h_bar - yb;
    sum += z;
    sum2 += z.cwiseAbs2();
  }
  Eigen::VectorXd var = sum2 / n - (sum / n).cwiseAbs2();
  const double obs_var = var.head(s.maps.m_bar).mean();
  const double unobs_var = var.tail(s.maps.n_bar - s.maps.m_bar).mean();
  CHECK(std::abs(unobs_var / (sT * sT) - 1) < 0.02);
  CHECK(std::abs(obs_var / (sT * sT) - 1) < 0.02);

  auto short_sched = make_schedule(5, 1e-4, 1e-3);
  CHECK_THROWS(init_latent(yb, 0.1, short_sched, s.maps, true, rng));
}

TEST_CASE("posterior_step branches") {
  Setup s(3);
  auto rng = make_rng(5);
  Eigen::VectorXd yb = pad_observation(testutil::random_vector(s.maps.m_bar, rng), s.maps);
  Eigen::VectorXd h0 = testutil::random_vector(s.maps.n_bar, rng);
  SpectralState st{testutil::random_vector(s.maps.n_bar, rng), 100};
  const int m = s.maps.m_bar;
  DdrmHyper hyp;

  // branch 2: sigma_{t-1} >= sigma, eta_b = 1
  const double sig = 0.5 * s.sched.sigma_ve[50];
  auto out = posterior_step(st, 50, h0, yb, sig, hyp, s.sched, s.maps, rng);
  CHECK(out.t == 50);
  CHECK(out.h_bar.head(m) == yb.head(m));
  CHECK(out.h_bar.tail(s.maps.n_bar - m) == h0.tail(s.maps.n_bar - m));

  // branch 1: sigma_{t-1} < sigma, eta_a = 0
  const double big = 2.0 * s.sched.sigma_ve[50];
  out = posterior_step(st, 50, h0, yb, big, hyp, s.sched, s.maps, rng);
  Eigen::VectorXd expect = h0.head(m) + s.sched.sigma_ve[50] * (yb.head(m) - h0.head(m)) / big;
  CHECK((out.h_bar.head(m) - expect).norm() < 1e-12);

  // continuity at the boundary
  const double edge = s.sched.sigma_ve[50];
  auto below = posterior_step(st, 50, h0, yb, edge * (1 + 1e-12), hyp, s.sched, s.maps, rng);
  auto at = posterior_step(st, 50, h0, yb, edge, hyp, s.sched, s.maps, rng);
  CHECK((below.h_bar - at.h_bar).cwiseAbs().maxCoeff() < 1e-9);

  // eta_c < 1 keeps a share of the current unobserved state
  DdrmHyper half = hyp;
  half.eta_c = 0.6;
  out = posterior_step(st, 50, h0, yb, sig, half, s.sched, s.maps, rng);
  const double k = 0.8 * s.sched.sigma_ve[50] / s.sched.sigma_ve[100];
  for (int i = m; i < s.maps.n_bar; ++i) CHECK(out.h_bar[i] == doctest::Approx(h0[i] + k * (st.h_bar[i] - h0[i])));

  // final step to t = 0 returns the clean prediction
  SpectralState last{st.h_bar, 1};
  out = posterior_step(last, 0, h0, yb, 1e-4, hyp, s.sched, s.maps, rng);
  CHECK(out.h_bar == h0);

  CHECK_THROWS(posterior_step(st, 100, h0, yb, sig, hyp, s.sched, s.maps, rng));
  DdrmHyper bad;
  bad.eta_b = 1.5;
  CHECK_THROWS(bad.validate());
}

TEST_CASE("stochastic posterior_step variances") {
  Setup s(6);
  auto rng = make_rng(8);
  const int m = s.maps.m_bar;
  Eigen::VectorXd yb = pad_observation(Eigen::VectorXd::Zero(m), s.maps);
  Eigen::VectorXd h0 = Eigen::VectorXd::Zero(s.maps.n_bar);
  SpectralState st{Eigen::VectorXd::Zero(s.maps.n_bar), 100};
  DdrmHyper hyp;
  hyp.deterministic = false;
  hyp.eta_b = 0.5;
  const double sn = s.sched.sigma_ve[60], sig = 0.3 * sn;
  double vo = 0, vu = 0;
  const int n = 4000;
  for (int i = 0; i < n; ++i) {
    auto out = posterior_step(st, 60, h0, yb, sig, hyp, s.sched, s.maps, rng);
    vo += out.h_bar.head(m).squaredNorm() / m;
    vu += out.h_bar.tail(s.maps.n_bar - m).squaredNorm() / (s.maps.n_bar - m);
  }
  CHECK(vo / n == doctest::Approx(sn * sn - 0.25 * sig * sig).epsilon(0.03));
  CHECK(vu / n == doctest::Approx(sn * sn).epsilon(0.03));
}

TEST_CASE("spectral VE/VP round trip at every step") {
  Setup s(9);
  auto rng = make_rng(1);
  Eigen::VectorXd h = testutil::random_vector(s.maps.n_bar, rng);
  for (int t = 1; t <= 200; ++t) {
    const double a = std::sqrt(s.sched.alpha_bar[t]);
    Eigen::VectorXd back = a * from_spectral(Eigen::VectorXd(to_spectral(h, s.maps) / a), s.maps);
    CHECK((back - h).norm() <= 1e-14 * h.norm());
  }
}

TEST_CASE("observed coordinates stay pinned along the trajectory") {
  Setup s(10);
  auto rng = make_rng(11);
  const double sigma = 1e-4 / std::sqrt(2.0);
  auto obs = observe(s.truth, s.sw, sigma, rng);
  testutil::GaussianOracle oracle(s.sched, 1.0);
  auto traj = make_trajectory(200, 200);
  DdrmHyper hyp;
  Eigen::VectorXd yb = pad_observation(obs.y, s.maps);
  auto st = init_latent(yb, sigma, s.sched, s.maps, true, rng);
  for (int i = traj.size() - 1; i >= 0; --i) {
    const int t = traj.steps[i], next = i > 0 ? traj.steps[i - 1] : 0;
    const double a = std::sqrt(s.sched.alpha_bar[t]);
    Eigen::VectorXd x0 = to_spectral(predict_x0(Eigen::VectorXd(a * from_spectral(st.h_bar, s.maps)), t, oracle,
                                                s.sched), s.maps);
    st = posterior_step(st, next, x0, yb, sigma, hyp, s.sched, s.maps, rng);
    if (next > 0) CHECK(st.h_bar.head(s.maps.m_bar) == obs.y);
  }
  // final output equals the estimator output and stays close to y
  Eigen::VectorXd est = ddrm_estimate(obs, s.maps, oracle, s.sched, traj, hyp, rng);
  CHECK((est - from_spectral(st.h_bar, s.maps)).norm() < 1e-12);
  const double rel = (to_spectral(est, s.maps).head(s.maps.m_bar) - obs.y).norm() / obs.y.norm();
  CHECK(rel < 1e-3);
}

TEST_CASE("estimator never sees unobserved truth") {
  Setup s(12);
  auto rng = make_rng(13);
  ChannelSample laced = s.truth;
  std::vector<bool> used(s.geom.ports(), false);
  for (int p : s.sw.ports) used[p] = true;
  for (int p = 0; p < s.geom.ports(); ++p)
    if (!used[p]) laced.h_flat[p] = cdouble(1e6, -1e6);
  laced = ChannelSample::from_real(s.geom, realify(laced.h_flat));
  auto obs = observe(laced, s.sw, 0.05, rng);
  CHECK(obs.y.cwiseAbs().maxCoeff() < 1e5);

  testutil::GaussianOracle oracle(s.sched, 1.0);
  SentinelGuard guard(oracle);
  Eigen::VectorXd est;
  CHECK_NOTHROW(est = ddrm_estimate(obs, s.maps, guard, s.sched, make_trajectory(200, 25), DdrmHyper{}, rng));
  CHECK(guard.calls == 25);
  CHECK(est.cwiseAbs().maxCoeff() < 1e5);
}

TEST_CASE("batched estimation matches one-by-one") {
  Setup a(20), b(21, 6);
  auto rng = make_rng(3);
  auto oa = observe(a.truth, a.sw, 0.1, rng);
  auto ob = observe(b.truth, b.sw, 0.2, rng);
  testutil::GaussianOracle oracle(a.sched, 1.0);
  auto traj = make_trajectory(200, 25);
  auto batch = ddrm_estimate_batch({oa, ob}, {a.maps, b.maps}, oracle, a.sched, traj, DdrmHyper{}, rng);
  CHECK((batch.col(0) - ddrm_estimate(oa, a.maps, oracle, a.sched, traj, DdrmHyper{}, rng)).norm() < 1e-12);
  CHECK((batch.col(1) - ddrm_estimate(ob, b.maps, oracle, a.sched, traj, DdrmHyper{}, rng)).norm() < 1e-12);
  CHECK_THROWS(ddrm_estimate_batch({oa}, {a.maps, b.maps}, oracle, a.sched, traj, DdrmHyper{}, rng));
}

TEST_CASE("Gaussian oracle estimate equals the linear MMSE interpolation") {
  // For N(0, I) data the unobserved part is independent of y, so the
  // posterior mean is y on observed coordinates and 0 elsewhere.
  Setup s(30);
  auto rng = make_rng(31);
  auto obs = observe(s.truth, s.sw, 1e-3, rng);
  testutil::GaussianOracle oracle(s.sched, 1.0);
  Eigen::VectorXd est = to_spectral(ddrm_estimate(obs, s.maps, oracle, s.sched, make_trajectory(200, 200),
                                                  DdrmHyper{}, rng), s.maps);
  CHECK((est.head(s.maps.m_bar) - obs.y).norm() < 1e-3 * obs.y.norm());
  CHECK(est.tail(s.maps.n_bar - s.maps.m_bar).cwiseAbs().maxCoeff() < 1e-6);
}

TEST_CASE("estimate sidecar") {
  auto dir = testutil::temp_dir("estimate");
  EstimateInfo info;
  info.method = "ddrm_fast";
  info.nmse = 0.25;
  info.trajectory = {8, 16};
  info.hyper = DdrmHyper{};
  Eigen::VectorXd h = Eigen::VectorXd::LinSpaced(6, 0, 1);
  save_estimate(h, info, dir / "h.bin");
  CHECK((read_f32(dir / "h.bin") - h).norm() < 1e-6);
  CHECK(std::filesystem::exists(dir / "h.bin.json"));
}
