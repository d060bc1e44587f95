// Command-line front end: generate-data, train, estimate, bench, plot-data.

#include "fasdm/baselines.hpp"
#include "fasdm/bench.hpp"
#include "fasdm/channel.hpp"
#include "fasdm/ddrm.hpp"
#include "fasdm/denoiser.hpp"
#include "fasdm/diffusion.hpp"
#include "fasdm/measurement.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <chrono>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

namespace fs = std::filesystem;
using namespace fasdm;

namespace {

// Relative output paths land under $FASDM_OUTPUT_ROOT when it is set.
fs::path output_path(const fs::path& p) {
  const char* root = std::getenv("FASDM_OUTPUT_ROOT");
  if (p.empty() || p.is_absolute() || root == nullptr || *root == '\0') return p;
  return fs::path(root) / p;
}

void ensure_parent(const fs::path& p) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
}

nlohmann::json read_json(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw std::runtime_error("cannot open config " + p.string());
  return nlohmann::json::parse(in);
}

struct GeometryArgs {
  int n1 = 16, n2 = 16;
  double w1 = 1.5, w2 = 1.5;

  void add(CLI::App* app) {
    app->add_option("--n1", n1, "ports along x");
    app->add_option("--n2", n2, "ports along y");
    app->add_option("--w1", w1, "aperture along x (wavelengths)");
    app->add_option("--w2", w2, "aperture along y (wavelengths)");
  }
  void merge(const nlohmann::json& j, CLI::App* app) {
    if (!j.contains("geometry")) return;
    const auto& g = j.at("geometry");
    if (app->count("--n1") == 0) n1 = g.value("n1", n1);
    if (app->count("--n2") == 0) n2 = g.value("n2", n2);
    if (app->count("--w1") == 0) w1 = g.value("w1", w1);
    if (app->count("--w2") == 0) w2 = g.value("w2", w2);
  }
  FasGeometry geometry() const { return {n1, n2, w1, w2}; }
};

template <typename T>
void merge_value(const nlohmann::json& j, const char* key, CLI::App* app, const char* flag, T& v) {
  if (app->count(flag) == 0 && j.contains(key)) v = j.at(key).get<T>();
}

double elapsed_ms(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"2D fluid-antenna channel estimation with a diffusion prior"};
  app.require_subcommand(1);

  // generate-data
  auto* gen = app.add_subcommand("generate-data", "generate a channel dataset");
  GeometryArgs gen_geom;
  gen_geom.add(gen);
  fs::path gen_out = "dataset.bin", gen_config;
  int gen_np = 20;
  std::size_t gen_count = 8000;
  std::uint64_t gen_seed = 0;
  gen->add_option("--out", gen_out, "dataset file");
  gen->add_option("--np", gen_np, "paths per channel");
  gen->add_option("--count", gen_count, "number of channels");
  gen->add_option("--seed", gen_seed, "random seed");
  gen->add_option("--config", gen_config, "JSON config (geometry, np, count, seed, out)")->check(CLI::ExistingFile);

  // train
  auto* tr = app.add_subcommand("train", "train the noise predictor");
  fs::path tr_data, tr_ckpt = "model.ckpt", tr_loss, tr_config, tr_init;
  TrainConfig tcfg;
  ScheduleConfig tr_sched;
  UNetArch tr_arch;
  tr->add_option("--data", tr_data, "dataset file");
  tr->add_option("--checkpoint", tr_ckpt, "output checkpoint");
  tr->add_option("--init", tr_init, "resume from this checkpoint");
  tr->add_option("--loss-csv", tr_loss, "per-epoch loss CSV (default: <checkpoint>.loss.csv)");
  tr->add_option("--epochs", tcfg.epochs);
  tr->add_option("--batch", tcfg.batch);
  tr->add_option("--lr", tcfg.learning_rate);
  tr->add_option("--seed", tcfg.seed);
  tr->add_option("--checkpoint-every", tcfg.checkpoint_every, "epochs between checkpoints");
  tr->add_option("--t-max", tr_sched.t_max);
  tr->add_option("--beta-1", tr_sched.beta_1);
  tr->add_option("--beta-T", tr_sched.beta_T);
  tr->add_option("--base-width", tr_arch.base_width);
  tr->add_option("--config", tr_config, "JSON config")->check(CLI::ExistingFile);

  // estimate
  auto* est = app.add_subcommand("estimate", "estimate one channel from a partial observation");
  GeometryArgs est_geom;
  est_geom.add(est);
  fs::path est_ckpt, est_obs, est_truth, est_out = "estimate.bin", est_config;
  std::string est_method = "ddrm_fast";
  int est_np = 20, est_m = 4, est_l = 13, est_tprime = 25, est_grid = 20;
  double est_snr = 10.0;
  std::uint64_t est_seed = 0;
  ScheduleConfig est_sched;
  est->add_option("--method", est_method)->check(CLI::IsMember({"ddrm_fast", "ddrm_full", "omp", "sbl"}));
  est->add_option("--checkpoint", est_ckpt, "trained model (diffusion methods)");
  est->add_option("--observation", est_obs, "observation file; synthesized from --seed when absent");
  est->add_option("--truth", est_truth, "ground-truth f32 channel for NMSE");
  est->add_option("--out", est_out, "estimate file");
  est->add_option("--np", est_np);
  est->add_option("--m", est_m);
  est->add_option("--l", est_l);
  est->add_option("--snr-db", est_snr);
  est->add_option("--t-prime", est_tprime);
  est->add_option("--sbl-grid", est_grid);
  est->add_option("--t-max", est_sched.t_max);
  est->add_option("--beta-1", est_sched.beta_1);
  est->add_option("--beta-T", est_sched.beta_T);
  est->add_option("--seed", est_seed);
  est->add_option("--config", est_config, "JSON config")->check(CLI::ExistingFile);

  // bench
  auto* bn = app.add_subcommand("bench", "run an NMSE sweep");
  fs::path bn_config, bn_ckpt, bn_out;
  std::optional<std::uint64_t> bn_seed;
  int bn_latency = 0, bn_warmup = 1;
  bn->add_option("--config", bn_config, "JSON experiment config")->required()->check(CLI::ExistingFile);
  bn->add_option("--checkpoint", bn_ckpt, "trained model (overrides config)");
  bn->add_option("--seed", bn_seed, "seed (overrides config)");
  bn->add_option("--out", bn_out, "output directory (overrides config)");
  bn->add_option("--latency-reps", bn_latency, "also time each method this many times (>= 3)");
  bn->add_option("--latency-warmup", bn_warmup);

  // plot-data
  auto* pd = app.add_subcommand("plot-data", "emit plot-ready CSV");
  fs::path pd_results, pd_latency, pd_out;
  std::string pd_kind = "nmse_vs_snr";
  std::vector<std::string> pd_methods;
  pd->add_option("--kind", pd_kind, "nmse_vs_snr | nmse_vs_ratio | latency");
  pd->add_option("--results", pd_results, "results.csv from bench");
  pd->add_option("--latency", pd_latency, "latency.json from bench");
  pd->add_option("--methods", pd_methods, "methods to include (default: all)")->delimiter(',');
  pd->add_option("--out", pd_out, "output CSV (default: plot_<kind>.csv next to the input)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*gen) {
      if (!gen_config.empty()) {
        const auto j = read_json(gen_config);
        gen_geom.merge(j, gen);
        merge_value(j, "np", gen, "--np", gen_np);
        merge_value(j, "count", gen, "--count", gen_count);
        merge_value(j, "seed", gen, "--seed", gen_seed);
        if (gen->count("--out") == 0 && j.contains("out")) gen_out = j.at("out").get<std::string>();
      }
      const fs::path out = output_path(gen_out);
      ensure_parent(out);
      generate_dataset({gen_geom.geometry(), gen_np, gen_seed, gen_count}, out);
      std::cout << "wrote " << gen_count << " channels to " << out << '\n';
      return 0;
    }

    if (*tr) {
      if (!tr_config.empty()) {
        const auto j = read_json(tr_config);
        if (tr->count("--data") == 0 && j.contains("dataset")) tr_data = j.at("dataset").get<std::string>();
        if (tr->count("--checkpoint") == 0 && j.contains("checkpoint")) tr_ckpt = j.at("checkpoint").get<std::string>();
        merge_value(j, "epochs", tr, "--epochs", tcfg.epochs);
        merge_value(j, "batch", tr, "--batch", tcfg.batch);
        merge_value(j, "learning_rate", tr, "--lr", tcfg.learning_rate);
        merge_value(j, "seed", tr, "--seed", tcfg.seed);
        merge_value(j, "checkpoint_every", tr, "--checkpoint-every", tcfg.checkpoint_every);
        merge_value(j, "base_width", tr, "--base-width", tr_arch.base_width);
        if (j.contains("schedule")) {
          const auto& s = j.at("schedule");
          merge_value(s, "t_max", tr, "--t-max", tr_sched.t_max);
          merge_value(s, "beta_1", tr, "--beta-1", tr_sched.beta_1);
          merge_value(s, "beta_T", tr, "--beta-T", tr_sched.beta_T);
        }
      }
      if (tr_data.empty()) throw std::invalid_argument("train: --data is required");
      const Dataset data = read_dataset(tr_data);
      tr_arch.grid_width = data.n1;
      tr_arch.grid_height = data.n2;
      const NoiseSchedule sched = make_schedule(tr_sched.t_max, tr_sched.beta_1, tr_sched.beta_T);
      DenoiserParams init = tr_init.empty() ? make_denoiser_params(tr_arch, tcfg.seed) : load_checkpoint(tr_init);
      tcfg.checkpoint_path = output_path(tr_ckpt);
      tcfg.loss_csv = tr_loss.empty() ? fs::path(tcfg.checkpoint_path.string() + ".loss.csv") : output_path(tr_loss);
      ensure_parent(tcfg.checkpoint_path);
      ensure_parent(tcfg.loss_csv);
      tcfg.on_epoch = [](int epoch, double loss) { std::cerr << "epoch " << epoch << " loss " << loss << '\n'; };
      const TrainResult r = train(data, std::move(init), sched, tcfg);
      std::cout << "trained " << r.epoch_loss.size() << " epochs, final loss " << r.epoch_loss.back() << "; checkpoint "
                << tcfg.checkpoint_path << '\n';
      return 0;
    }

    if (*est) {
      if (!est_config.empty()) {
        const auto j = read_json(est_config);
        est_geom.merge(j, est);
        merge_value(j, "np", est, "--np", est_np);
        merge_value(j, "m", est, "--m", est_m);
        merge_value(j, "t_prime", est, "--t-prime", est_tprime);
        merge_value(j, "seed", est, "--seed", est_seed);
        if (est->count("--l") == 0 && j.contains("l"))
          est_l = j.at("l").is_array() ? j.at("l").at(0).get<int>() : j.at("l").get<int>();
        if (est->count("--snr-db") == 0 && j.contains("snr_db"))
          est_snr = j.at("snr_db").is_array() ? j.at("snr_db").at(0).get<double>() : j.at("snr_db").get<double>();
        if (est->count("--checkpoint") == 0 && j.contains("checkpoint"))
          est_ckpt = j.at("checkpoint").get<std::string>();
        if (j.contains("sbl")) merge_value(j.at("sbl"), "grid", est, "--sbl-grid", est_grid);
        if (j.contains("schedule")) {
          const auto& s = j.at("schedule");
          merge_value(s, "t_max", est, "--t-max", est_sched.t_max);
          merge_value(s, "beta_1", est, "--beta-1", est_sched.beta_1);
          merge_value(s, "beta_T", est, "--beta-T", est_sched.beta_T);
        }
      }
      const FasGeometry geom = est_geom.geometry();
      // fail before anything is written
      if (est_method.rfind("ddrm", 0) == 0 && est_ckpt.empty())
        throw std::invalid_argument("estimate: --checkpoint is required for " + est_method);
      const fs::path out = output_path(est_out);
      ensure_parent(out);

      Observation obs;
      std::optional<Eigen::VectorXd> truth;
      if (!est_obs.empty()) {
        obs = load_observation(est_obs);
        if (!est_truth.empty()) truth = read_f32(est_truth);
      } else {
        Rng chan_rng = make_rng(est_seed, {1});
        Rng sched_rng = make_rng(est_seed, {2});
        Rng noise_rng = make_rng(est_seed, {3});
        const ChannelSample h = generate_channel(geom, est_np, chan_rng);
        SwitchSchedule s = build_schedule(geom, est_m, est_l, sched_rng);
        s.seed = est_seed;
        obs = observe(h, s, snr_to_sigma(est_snr).sigma_real, noise_rng);
        const fs::path stem = out.parent_path() / out.stem();
        save_schedule(s, stem.string() + ".schedule.json");
        save_observation(obs, stem.string() + ".obs.bin", out.stem().string() + ".schedule.json");
        write_f32(stem.string() + ".truth.bin", h.h_real);
        // Continue from the stored f32 files so a rerun from them is identical.
        obs = load_observation(stem.string() + ".obs.bin");
        truth = read_f32(stem.string() + ".truth.bin");
      }

      EstimateInfo info;
      info.method = est_method;
      Eigen::VectorXd h_hat;
      const auto t0 = std::chrono::steady_clock::now();
      if (est_method == "omp") {
        h_hat = omp_estimate(obs.y, obs.schedule, build_dft_dictionary(geom), est_np).h_hat;
      } else if (est_method == "sbl") {
        const Dictionary dict = build_angle_dictionary(geom, est_grid);
        h_hat = sbl_estimate(obs.y, obs.schedule, dict, 2.0 * obs.sigma * obs.sigma).h_hat;
      } else {
        const DenoiserParams params = load_checkpoint(est_ckpt);
        const NoiseSchedule sched = make_schedule(est_sched.t_max, est_sched.beta_1, est_sched.beta_T);
        if (!params.schedule_fingerprint.empty() && params.schedule_fingerprint != sched.fingerprint())
          throw std::invalid_argument("estimate: checkpoint was trained with schedule " + params.schedule_fingerprint);
        const UNetDenoiser model(params);
        const Trajectory traj = make_trajectory(sched.t_max, est_method == "ddrm_full" ? sched.t_max : est_tprime);
        const SpectralMaps maps = build_spectral_maps(obs.schedule, geom);
        DdrmHyper hyper;
        Rng rng = make_rng(est_seed, {4});
        const auto t1 = std::chrono::steady_clock::now();
        h_hat = ddrm_estimate(obs, maps, model, sched, traj, hyper, rng);
        info.wall_clock_ms = elapsed_ms(t1);
        info.trajectory = traj.steps;
        info.hyper = hyper;
        info.checkpoint_fingerprint = fingerprint(params.weights);
      }
      if (info.wall_clock_ms == 0) info.wall_clock_ms = elapsed_ms(t0);
      if (truth) info.nmse = nmse(h_hat, *truth);
      save_estimate(h_hat, info, out);
      std::cout << est_method << ": wrote " << out;
      if (info.nmse) std::cout << ", NMSE " << 10.0 * std::log10(*info.nmse) << " dB";
      std::cout << '\n';
      return 0;
    }

    if (*bn) {
      ExperimentConfig cfg = load_config(bn_config);
      if (!bn_ckpt.empty()) cfg.checkpoint = bn_ckpt;
      if (bn_seed) cfg.seed = *bn_seed;
      if (!bn_out.empty()) cfg.output_dir = bn_out;
      if (cfg.output_dir.empty()) cfg.output_dir = "bench_out";
      cfg.output_dir = output_path(cfg.output_dir);
      cfg.validate();
      std::optional<UNetDenoiser> model;
      if (cfg.needs_model()) {
        if (cfg.checkpoint.empty()) throw std::invalid_argument("bench: diffusion methods need a checkpoint");
        DenoiserParams params = load_checkpoint(cfg.checkpoint);
        const NoiseSchedule sched = make_schedule(cfg.schedule.t_max, cfg.schedule.beta_1, cfg.schedule.beta_T);
        if (!params.schedule_fingerprint.empty() && params.schedule_fingerprint != sched.fingerprint())
          throw std::invalid_argument("bench: checkpoint was trained with schedule " + params.schedule_fingerprint);
        model.emplace(std::move(params));
      }
      const NoisePredictor* m = model ? &*model : nullptr;
      const BenchmarkResult res = run_benchmark(cfg, m);
      for (const auto& r : res.rows)
        std::cout << r.method << " snr=" << r.snr_db << " delta=" << r.delta << " nmse_db=" << r.nmse_db
                  << " trials=" << r.trials << " failed=" << r.failed << '\n';
      if (bn_latency > 0) {
        std::vector<LatencyStats> stats;
        for (const auto& method : cfg.methods) stats.push_back(measure_latency(method, cfg, m, bn_warmup, bn_latency));
        write_latency_json(stats, cfg.output_dir / "latency.json");
        for (const auto& s : stats)
          std::cout << s.method << " latency median " << s.median_ms << " ms (IQR " << s.iqr_ms << ")\n";
      }
      std::cout << "results in " << cfg.output_dir << '\n';
      return 0;
    }

    if (*pd) {
      const PlotKind kind = parse_plot_kind(pd_kind);
      std::string csv;
      fs::path base;
      if (kind == PlotKind::latency) {
        if (pd_latency.empty()) throw std::invalid_argument("plot-data: --latency is required for latency plots");
        const auto stats = read_latency_json(pd_latency);
        std::vector<std::string> methods = pd_methods;
        if (pd->count("--methods") == 0)
          for (const auto& s : stats) methods.push_back(s.method);
        csv = emit_latency_plot_data(stats, methods);
        base = pd_latency.parent_path();
      } else {
        if (pd_results.empty()) throw std::invalid_argument("plot-data: --results is required");
        const auto rows = read_results_csv(pd_results);
        const auto methods = pd->count("--methods") == 0 ? methods_in(rows) : pd_methods;
        csv = emit_plot_data(rows, kind, methods);
        base = pd_results.parent_path();
      }
      const fs::path out = pd_out.empty() ? base / ("plot_" + plot_kind_name(kind) + ".csv") : output_path(pd_out);
      ensure_parent(out);
      std::ofstream f(out, std::ios::trunc);
      f << csv;
      if (!f) throw std::runtime_error("plot-data: cannot write " + out.string());
      std::cout << "wrote " << out << '\n';
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
