#include "fasdm/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

namespace fasdm {

double nmse(const Eigen::VectorXd& h_hat, const Eigen::VectorXd& h) {
  if (h_hat.size() != h.size()) throw std::invalid_argument("nmse: length mismatch");
  const double den = h.squaredNorm();
  if (!(den > 0.0)) throw std::invalid_argument("nmse: zero ground truth");
  return (h_hat - h).squaredNorm() / den;
}

NoiseLevel snr_to_sigma(double snr_db) {
  const double s = std::pow(10.0, -snr_db / 20.0);
  return {s, s / std::sqrt(2.0)};
}

// ---------------------------------------------------------------------------

std::vector<int> ExperimentConfig::slots() const {
  if (!l_values.empty()) return l_values;
  std::vector<int> out;
  for (double d : deltas)
    out.push_back(std::max(1, static_cast<int>(std::lround(d * geometry.ports() / m))));
  return out;
}

bool ExperimentConfig::needs_model() const {
  return std::any_of(methods.begin(), methods.end(),
                     [](const std::string& s) { return s == "ddrm_fast" || s == "ddrm_full"; });
}

void ExperimentConfig::validate() const {
  geometry.validate();
  if (np < 1) throw std::invalid_argument("config: np must be positive");
  if (m < 1) throw std::invalid_argument("config: m must be positive");
  if (l_values.empty() == deltas.empty()) throw std::invalid_argument("config: give exactly one of l or delta");
  for (int l : slots()) {
    const double d = static_cast<double>(l) * m / geometry.ports();
    if (l < 1 || !(d > 0.0 && d <= 1.0))
      throw std::invalid_argument("config: sampling ratio l*m/N must lie in (0, 1]");
  }
  if (snr_db.empty()) throw std::invalid_argument("config: SNR list is empty");
  if (trials < 1) throw std::invalid_argument("config: trials must be at least 1");
  if (methods.empty()) throw std::invalid_argument("config: no methods");
  for (const auto& s : methods)
    if (s != "ddrm_fast" && s != "ddrm_full" && s != "omp" && s != "sbl")
      throw std::invalid_argument("config: unknown method '" + s + "'");
  if (ddrm_batch < 1) throw std::invalid_argument("config: ddrm_batch must be at least 1");
  if (sbl_grid < 1) throw std::invalid_argument("config: sbl_grid must be at least 1");
  hyper.validate();
  if (t_prime < 1 || t_prime > schedule.t_max) throw std::invalid_argument("config: t_prime outside [1, T]");
}

ExperimentConfig config_from_json(const nlohmann::json& j) {
  ExperimentConfig c;
  if (j.contains("geometry")) {
    const auto& g = j.at("geometry");
    c.geometry = FasGeometry{g.value("n1", 16), g.value("n2", 16), g.value("w1", 1.5), g.value("w2", 1.5)};
  }
  c.np = j.value("np", c.np);
  c.m = j.value("m", c.m);
  if (j.contains("l")) {
    if (j.at("l").is_array()) c.l_values = j.at("l").get<std::vector<int>>();
    else c.l_values = {j.at("l").get<int>()};
  }
  if (j.contains("delta")) {
    if (j.at("delta").is_array()) c.deltas = j.at("delta").get<std::vector<double>>();
    else c.deltas = {j.at("delta").get<double>()};
  }
  c.snr_db = j.value("snr_db", c.snr_db);
  c.methods = j.value("methods", c.methods);
  c.trials = j.value("trials", c.trials);
  c.seed = j.value("seed", c.seed);
  c.t_prime = j.value("t_prime", c.t_prime);
  if (j.contains("schedule")) {
    const auto& s = j.at("schedule");
    c.schedule.t_max = s.value("t_max", c.schedule.t_max);
    c.schedule.beta_1 = s.value("beta_1", c.schedule.beta_1);
    c.schedule.beta_T = s.value("beta_T", c.schedule.beta_T);
  }
  if (j.contains("hyper")) {
    const auto& h = j.at("hyper");
    c.hyper.eta_a = h.value("eta_a", c.hyper.eta_a);
    c.hyper.eta_b = h.value("eta_b", c.hyper.eta_b);
    c.hyper.eta_c = h.value("eta_c", c.hyper.eta_c);
    c.hyper.deterministic = h.value("deterministic", c.hyper.deterministic);
    c.hyper.posterior_samples = h.value("posterior_samples", c.hyper.posterior_samples);
    c.hyper.rescale_x0 = h.value("rescale_x0", c.hyper.rescale_x0);
  }
  c.ddrm_batch = j.value("ddrm_batch", c.ddrm_batch);
  if (j.contains("sbl")) {
    const auto& s = j.at("sbl");
    c.sbl_grid = s.value("grid", c.sbl_grid);
    c.sbl_max_iter = s.value("max_iter", c.sbl_max_iter);
    c.sbl_tol = s.value("tol", c.sbl_tol);
  }
  if (j.contains("checkpoint")) c.checkpoint = j.at("checkpoint").get<std::string>();
  if (j.contains("output_dir")) c.output_dir = j.at("output_dir").get<std::string>();
  return c;
}

nlohmann::json config_to_json(const ExperimentConfig& c) {
  nlohmann::json j = {
      {"geometry", {{"n1", c.geometry.n1}, {"n2", c.geometry.n2}, {"w1", c.geometry.w1}, {"w2", c.geometry.w2}}},
      {"np", c.np},
      {"m", c.m},
      {"snr_db", c.snr_db},
      {"methods", c.methods},
      {"trials", c.trials},
      {"seed", c.seed},
      {"t_prime", c.t_prime},
      {"schedule", {{"t_max", c.schedule.t_max}, {"beta_1", c.schedule.beta_1}, {"beta_T", c.schedule.beta_T}}},
      {"hyper",
       {{"eta_a", c.hyper.eta_a}, {"eta_b", c.hyper.eta_b}, {"eta_c", c.hyper.eta_c},
        {"deterministic", c.hyper.deterministic}, {"posterior_samples", c.hyper.posterior_samples},
        {"rescale_x0", c.hyper.rescale_x0}}},
      {"ddrm_batch", c.ddrm_batch},
      {"sbl", {{"grid", c.sbl_grid}, {"max_iter", c.sbl_max_iter}, {"tol", c.sbl_tol}}},
      {"checkpoint", c.checkpoint.string()},
      {"output_dir", c.output_dir.string()}};
  if (!c.l_values.empty()) j["l"] = c.l_values;
  if (!c.deltas.empty()) j["delta"] = c.deltas;
  return j;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_config: cannot open " + path.string());
  return config_from_json(nlohmann::json::parse(in));
}

// ---------------------------------------------------------------------------

namespace {

using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

std::uint64_t snr_tag(double snr_db) {
  return static_cast<std::uint64_t>(std::llround(snr_db * 1000.0) + (1ll << 40));
}

// Channel per trial, schedule per (l, trial), noise per (l, trial) scaled by
// the SNR: every method and SNR sees the same draws.
struct TrialInputs {
  ChannelSample truth;
  Observation obs;
  SpectralMaps maps;
};

TrialInputs make_trial(const ExperimentConfig& cfg, const ChannelSample& truth, int l, int trial, double snr_db) {
  const auto t = static_cast<std::uint64_t>(trial);
  Rng sched_rng = make_rng(cfg.seed, {2, static_cast<std::uint64_t>(l), t});
  Rng noise_rng = make_rng(cfg.seed, {3, static_cast<std::uint64_t>(l), t});
  TrialInputs in;
  in.truth = truth;
  SwitchSchedule s = build_schedule(cfg.geometry, cfg.m, l, sched_rng);
  s.seed = cfg.seed;
  in.obs = observe(truth, s, snr_to_sigma(snr_db).sigma_real, noise_rng);
  in.maps = build_spectral_maps(s, cfg.geometry);
  return in;
}

ChannelSample make_truth(const ExperimentConfig& cfg, int trial) {
  Rng rng = make_rng(cfg.seed, {1, static_cast<std::uint64_t>(trial)});
  return generate_channel(cfg.geometry, cfg.np, rng);
}

struct Engines {
  const ExperimentConfig& cfg;
  const NoisePredictor* model;
  NoiseSchedule sched;
  Trajectory fast, full;
  std::optional<Dictionary> dft, angle;

  Engines(const ExperimentConfig& c, const NoisePredictor* m) : cfg(c), model(m) {
    sched = make_schedule(c.schedule.t_max, c.schedule.beta_1, c.schedule.beta_T);
    fast = make_trajectory(sched.t_max, c.t_prime);
    full = make_trajectory(sched.t_max, sched.t_max);
    for (const auto& s : c.methods) {
      if (s == "omp" && !dft) dft = build_dft_dictionary(c.geometry);
      if (s == "sbl" && !angle) angle = build_angle_dictionary(c.geometry, c.sbl_grid);
    }
    if (c.needs_model() && model == nullptr)
      throw std::invalid_argument("run_benchmark: diffusion methods need a trained model");
  }

  const Trajectory& trajectory(const std::string& method) const { return method == "ddrm_full" ? full : fast; }

  Eigen::VectorXd estimate_baseline(const std::string& method, const Observation& obs) const {
    if (method == "omp") return omp_estimate(obs.y, obs.schedule, *dft, cfg.np).h_hat;
    SblOptions opt;
    opt.max_iter = cfg.sbl_max_iter;
    opt.tol = cfg.sbl_tol;
    const double var = 2.0 * obs.sigma * obs.sigma;
    return sbl_estimate(obs.y, obs.schedule, *angle, var, opt).h_hat;
  }

  Eigen::MatrixXd estimate_ddrm(const std::string& method, const std::vector<Observation>& obs,
                                const std::vector<SpectralMaps>& maps, Rng& rng) const {
    return ddrm_estimate_batch(obs, maps, *model, sched, trajectory(method), cfg.hyper, rng);
  }
};

TrialRecord base_record(const std::string& method, double snr, int l, const ExperimentConfig& cfg, int trial) {
  TrialRecord r;
  r.method = method;
  r.snr_db = snr;
  r.l = l;
  r.delta = static_cast<double>(l) * cfg.m / cfg.geometry.ports();
  r.trial = trial;
  return r;
}

void fail(TrialRecord& r, const std::exception& e) {
  r.ok = false;
  r.error = e.what();
  r.nmse = 0.0;
}

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

BenchmarkResult run_benchmark(const ExperimentConfig& cfg, const NoisePredictor* model) {
  cfg.validate();
  const Engines eng(cfg, model);
  std::vector<ChannelSample> truths;
  truths.reserve(cfg.trials);
  for (int t = 0; t < cfg.trials; ++t) truths.push_back(make_truth(cfg, t));

  BenchmarkResult res;
  for (int l : cfg.slots()) {
    for (double snr : cfg.snr_db) {
      std::vector<TrialInputs> inputs;
      inputs.reserve(cfg.trials);
      for (int t = 0; t < cfg.trials; ++t) inputs.push_back(make_trial(cfg, truths[t], l, t, snr));

      for (const auto& method : cfg.methods) {
        if (method == "omp" || method == "sbl") {
          for (int t = 0; t < cfg.trials; ++t) {
            TrialRecord r = base_record(method, snr, l, cfg, t);
            try {
              const auto t0 = Clock::now();
              const Eigen::VectorXd h = eng.estimate_baseline(method, inputs[t].obs);
              r.wall_clock_ms = ms_since(t0);
              r.nmse = nmse(h, inputs[t].truth.h_real);
            } catch (const std::exception& e) {
              fail(r, e);
            }
            res.trials.push_back(std::move(r));
          }
          continue;
        }
        for (int t0 = 0; t0 < cfg.trials; t0 += cfg.ddrm_batch) {
          const int t1 = std::min(cfg.trials, t0 + cfg.ddrm_batch);
          std::vector<Observation> obs;
          std::vector<SpectralMaps> maps;
          for (int t = t0; t < t1; ++t) {
            obs.push_back(inputs[t].obs);
            maps.push_back(inputs[t].maps);
          }
          Rng rng = make_rng(cfg.seed, {4, static_cast<std::uint64_t>(l), snr_tag(snr),
                                        static_cast<std::uint64_t>(t0)});
          std::vector<TrialRecord> recs;
          for (int t = t0; t < t1; ++t) recs.push_back(base_record(method, snr, l, cfg, t));
          try {
            const auto start = Clock::now();
            const Eigen::MatrixXd h = eng.estimate_ddrm(method, obs, maps, rng);
            const double per = ms_since(start) / (t1 - t0);
            for (int t = t0; t < t1; ++t) {
              recs[t - t0].wall_clock_ms = per;
              recs[t - t0].nmse = nmse(h.col(t - t0), inputs[t].truth.h_real);
            }
          } catch (const std::exception&) {
            // Retry one by one so a single bad observation does not sink the batch.
            for (int t = t0; t < t1; ++t) {
              auto& r = recs[t - t0];
              r = base_record(method, snr, l, cfg, t);
              Rng one = make_rng(cfg.seed, {5, static_cast<std::uint64_t>(l), snr_tag(snr),
                                            static_cast<std::uint64_t>(t)});
              try {
                const auto start = Clock::now();
                const Eigen::MatrixXd h = eng.estimate_ddrm(method, {inputs[t].obs}, {inputs[t].maps}, one);
                r.wall_clock_ms = ms_since(start);
                r.nmse = nmse(h.col(0), inputs[t].truth.h_real);
              } catch (const std::exception& e) {
                fail(r, e);
              }
            }
          }
          for (auto& r : recs) res.trials.push_back(std::move(r));
        }
      }
    }
  }

  res.rows = aggregate(res.trials, cfg.seed);
  if (!cfg.output_dir.empty()) {
    std::filesystem::create_directories(cfg.output_dir);
    write_results_csv(res.rows, cfg.output_dir / "results.csv");
    write_trials_jsonl(res.trials, cfg.output_dir / "raw_trials.jsonl");
  }
  return res;
}

std::vector<ResultRow> aggregate(const std::vector<TrialRecord>& trials, std::uint64_t seed) {
  std::vector<ResultRow> rows;
  std::map<std::tuple<std::string, int, double>, std::size_t> index;
  std::vector<std::vector<double>> times;
  for (const auto& t : trials) {
    const auto key = std::make_tuple(t.method, t.l, t.snr_db);
    auto it = index.find(key);
    if (it == index.end()) {
      ResultRow r;
      r.method = t.method;
      r.snr_db = t.snr_db;
      r.l = t.l;
      r.delta = t.delta;
      r.seed = seed;
      it = index.emplace(key, rows.size()).first;
      rows.push_back(r);
      times.emplace_back();
    }
    ResultRow& r = rows[it->second];
    if (!t.ok) {
      ++r.failed;
      continue;
    }
    ++r.trials;
    r.nmse += t.nmse;
    times[it->second].push_back(t.wall_clock_ms);
  }
  for (std::size_t i = 0; i < rows.size(); ++i) {
    ResultRow& r = rows[i];
    if (r.trials > 0) {
      r.nmse /= r.trials;
      double mean = 0.0;
      for (double v : times[i]) mean += v;
      mean /= r.trials;
      double var = 0.0;
      for (double v : times[i]) var += (v - mean) * (v - mean);
      r.wall_clock_ms_mean = mean;
      r.wall_clock_ms_std = r.trials > 1 ? std::sqrt(var / (r.trials - 1)) : 0.0;
    } else {
      r.nmse = std::nan("");
    }
    r.nmse_db = 10.0 * std::log10(r.nmse);
  }
  return rows;
}

void write_results_csv(const std::vector<ResultRow>& rows, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  out << "method,snr_db,l,delta,trials,failed,nmse,nmse_db,seed\n";
  for (const auto& r : rows) {
    out << r.method << ',' << fmt(r.snr_db) << ',' << r.l << ',' << fmt(r.delta) << ',' << r.trials << ','
        << r.failed << ',' << fmt(r.nmse) << ',' << fmt(r.nmse_db) << ',' << r.seed << '\n';
  }
  if (!out) throw std::runtime_error("write_results_csv: cannot write " + path.string());
}

namespace {

std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, sep)) out.push_back(cell);
  if (!line.empty() && line.back() == sep) out.emplace_back();
  return out;
}

}  // namespace

std::vector<ResultRow> read_results_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("read_results_csv: cannot open " + path.string());
  std::string line;
  std::getline(in, line);
  std::vector<ResultRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto c = split(line, ',');
    if (c.size() != 9) throw std::runtime_error("read_results_csv: malformed row: " + line);
    ResultRow r;
    r.method = c[0];
    r.snr_db = std::stod(c[1]);
    r.l = std::stoi(c[2]);
    r.delta = std::stod(c[3]);
    r.trials = std::stoi(c[4]);
    r.failed = std::stoi(c[5]);
    r.nmse = std::stod(c[6]);
    r.nmse_db = std::stod(c[7]);
    r.seed = std::stoull(c[8]);
    rows.push_back(r);
  }
  return rows;
}

void write_trials_jsonl(const std::vector<TrialRecord>& trials, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  for (const auto& t : trials) {
    nlohmann::json j = {{"method", t.method}, {"snr_db", t.snr_db}, {"l", t.l},       {"delta", t.delta},
                        {"trial", t.trial},   {"ok", t.ok},         {"nmse", t.nmse}, {"wall_clock_ms", t.wall_clock_ms}};
    if (!t.ok) j["error"] = t.error;
    out << j.dump() << '\n';
  }
  if (!out) throw std::runtime_error("write_trials_jsonl: cannot write " + path.string());
}

std::vector<TrialRecord> read_trials_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("read_trials_jsonl: cannot open " + path.string());
  std::vector<TrialRecord> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto j = nlohmann::json::parse(line);
    TrialRecord t;
    t.method = j.at("method");
    t.snr_db = j.at("snr_db");
    t.l = j.at("l");
    t.delta = j.at("delta");
    t.trial = j.at("trial");
    t.ok = j.at("ok");
    t.nmse = j.at("nmse");
    t.wall_clock_ms = j.at("wall_clock_ms");
    t.error = j.value("error", "");
    out.push_back(std::move(t));
  }
  return out;
}

// ---------------------------------------------------------------------------

LatencyStats measure_latency(const std::string& method, const ExperimentConfig& cfg, const NoisePredictor* model,
                             int warmup, int reps) {
  if (reps < 3) throw std::invalid_argument("measure_latency: reps must be at least 3");
  if (warmup < 0) throw std::invalid_argument("measure_latency: warmup must be nonnegative");
  ExperimentConfig c = cfg;
  c.methods = {method};
  c.validate();
  const Engines eng(c, model);
  const int l = c.slots().front();
  const TrialInputs in = make_trial(c, make_truth(c, 0), l, 0, c.snr_db.front());

  auto once = [&]() {
    const auto t0 = Clock::now();
    if (method == "omp" || method == "sbl") {
      (void)eng.estimate_baseline(method, in.obs);
    } else {
      Rng rng = make_rng(c.seed, {6});
      (void)eng.estimate_ddrm(method, {in.obs}, {in.maps}, rng);
    }
    return ms_since(t0);
  };
  for (int i = 0; i < warmup; ++i) once();
  LatencyStats s;
  s.method = method;
  for (int i = 0; i < reps; ++i) s.samples_ms.push_back(once());
  std::vector<double> v = s.samples_ms;
  std::sort(v.begin(), v.end());
  auto quantile = [&v](double q) {
    const double pos = q * (v.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, v.size() - 1);
    return v[lo] + (pos - lo) * (v[hi] - v[lo]);
  };
  s.median_ms = quantile(0.5);
  s.iqr_ms = quantile(0.75) - quantile(0.25);
  return s;
}

void write_latency_json(const std::vector<LatencyStats>& stats, const std::filesystem::path& path) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& s : stats)
    arr.push_back({{"method", s.method}, {"median_ms", s.median_ms}, {"iqr_ms", s.iqr_ms}, {"samples_ms", s.samples_ms}});
  std::ofstream out(path, std::ios::trunc);
  out << arr.dump(2) << '\n';
  if (!out) throw std::runtime_error("write_latency_json: cannot write " + path.string());
}

std::vector<LatencyStats> read_latency_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("read_latency_json: cannot open " + path.string());
  std::vector<LatencyStats> out;
  for (const auto& j : nlohmann::json::parse(in)) {
    LatencyStats s;
    s.method = j.at("method");
    s.median_ms = j.at("median_ms");
    s.iqr_ms = j.at("iqr_ms");
    s.samples_ms = j.at("samples_ms").get<std::vector<double>>();
    out.push_back(std::move(s));
  }
  return out;
}

PlotKind parse_plot_kind(const std::string& s) {
  if (s == "nmse_vs_snr") return PlotKind::nmse_vs_snr;
  if (s == "nmse_vs_ratio") return PlotKind::nmse_vs_ratio;
  if (s == "latency") return PlotKind::latency;
  throw std::invalid_argument("unknown plot kind '" + s + "'");
}

std::string plot_kind_name(PlotKind k) {
  switch (k) {
    case PlotKind::nmse_vs_snr: return "nmse_vs_snr";
    case PlotKind::nmse_vs_ratio: return "nmse_vs_ratio";
    case PlotKind::latency: return "latency";
  }
  return "";
}

std::vector<std::string> methods_in(const std::vector<ResultRow>& rows) {
  std::vector<std::string> out;
  for (const auto& r : rows)
    if (std::find(out.begin(), out.end(), r.method) == out.end()) out.push_back(r.method);
  return out;
}

std::string emit_plot_data(const std::vector<ResultRow>& rows, PlotKind kind, const std::vector<std::string>& methods) {
  if (kind == PlotKind::latency) throw std::invalid_argument("emit_plot_data: latency plots come from latency stats");
  if (rows.empty()) throw std::invalid_argument("emit_plot_data: no results");
  if (methods.empty()) throw std::invalid_argument("emit_plot_data: empty method filter");
  const bool vs_snr = kind == PlotKind::nmse_vs_snr;
  // The other sweep axis becomes part of the series name when it takes several values.
  std::vector<double> others;
  for (const auto& r : rows) {
    const double o = vs_snr ? r.delta : r.snr_db;
    if (std::find(others.begin(), others.end(), o) == others.end()) others.push_back(o);
  }
  std::ostringstream out;
  out << "series," << (vs_snr ? "snr_db" : "delta") << ",nmse_db\n";
  std::size_t emitted = 0;
  for (const auto& m : methods) {
    for (const auto& r : rows) {
      if (r.method != m || r.trials == 0) continue;
      std::string series = m;
      if (others.size() > 1) series += (vs_snr ? "@delta=" : "@snr_db=") + fmt(vs_snr ? r.delta : r.snr_db);
      out << series << ',' << fmt(vs_snr ? r.snr_db : r.delta) << ',' << fmt(r.nmse_db) << '\n';
      ++emitted;
    }
  }
  if (emitted == 0) throw std::invalid_argument("emit_plot_data: method filter matches no results");
  return out.str();
}

std::string emit_latency_plot_data(const std::vector<LatencyStats>& stats, const std::vector<std::string>& methods) {
  if (stats.empty()) throw std::invalid_argument("emit_latency_plot_data: no latency results");
  if (methods.empty()) throw std::invalid_argument("emit_latency_plot_data: empty method filter");
  std::ostringstream out;
  out << "series,median_ms,iqr_ms\n";
  std::size_t emitted = 0;
  for (const auto& m : methods)
    for (const auto& s : stats)
      if (s.method == m) {
        out << m << ',' << fmt(s.median_ms) << ',' << fmt(s.iqr_ms) << '\n';
        ++emitted;
      }
  if (emitted == 0) throw std::invalid_argument("emit_latency_plot_data: method filter matches no results");
  return out.str();
}

std::vector<PlotPoint> parse_plot_data(const std::string& csv) {
  std::istringstream in(csv);
  std::string line;
  if (!std::getline(in, line) || split(line, ',').size() != 3)
    throw std::invalid_argument("parse_plot_data: bad header");
  std::vector<PlotPoint> out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto c = split(line, ',');
    if (c.size() != 3) throw std::invalid_argument("parse_plot_data: malformed row: " + line);
    out.push_back({c[0], std::stod(c[1]), std::stod(c[2])});
  }
  return out;
}

}  // namespace fasdm
