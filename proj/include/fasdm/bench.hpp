#pragma once

// Experiment harness: metrics, SNR / sampling-ratio sweeps, latency and plot data.

#include "fasdm/baselines.hpp"
#include "fasdm/channel.hpp"
#include "fasdm/ddrm.hpp"
#include "fasdm/denoiser.hpp"
#include "fasdm/diffusion.hpp"

#include <nlohmann/json.hpp>

#include <Eigen/Core>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace fasdm {

double nmse(const Eigen::VectorXd& h_hat, const Eigen::VectorXd& h);

struct NoiseLevel {
  double sigma_complex;  // sigma_n, SNR = 1 / sigma_n^2
  double sigma_real;     // per real coordinate, sigma_n / sqrt(2)
};
NoiseLevel snr_to_sigma(double snr_db);

struct ScheduleConfig {
  int t_max = 500;
  double beta_1 = 1e-4;
  double beta_T = 0.02;
};

struct ExperimentConfig {
  FasGeometry geometry;
  int np = 90;
  int m = 4;
  std::vector<int> l_values;      // either these ...
  std::vector<double> deltas;     // ... or sampling ratios (l = round(delta N / m))
  std::vector<double> snr_db{10.0};
  std::vector<std::string> methods{"ddrm_fast", "omp", "sbl"};
  int trials = 100;
  std::uint64_t seed = 0;
  int t_prime = 25;
  ScheduleConfig schedule;
  DdrmHyper hyper;
  int ddrm_batch = 32;  // observations advanced together
  int sbl_grid = 50;
  int sbl_max_iter = 200;
  double sbl_tol = 1e-4;
  std::filesystem::path checkpoint;
  std::filesystem::path output_dir;

  // Resolved pilot-slot counts, one per sweep point.
  std::vector<int> slots() const;
  bool needs_model() const;
  void validate() const;
};

ExperimentConfig config_from_json(const nlohmann::json& j);
nlohmann::json config_to_json(const ExperimentConfig& cfg);
ExperimentConfig load_config(const std::filesystem::path& path);

struct TrialRecord {
  std::string method;
  double snr_db = 0;
  int l = 0;
  double delta = 0;
  int trial = 0;
  bool ok = true;
  double nmse = 0;
  double wall_clock_ms = 0;
  std::string error;
};

struct ResultRow {
  std::string method;
  double snr_db = 0;
  int l = 0;
  double delta = 0;
  int trials = 0;   // successful
  int failed = 0;
  double nmse = 0;  // mean over successful trials
  double nmse_db = 0;
  double wall_clock_ms_mean = 0;
  double wall_clock_ms_std = 0;
  std::uint64_t seed = 0;
};

struct BenchmarkResult {
  std::vector<ResultRow> rows;
  std::vector<TrialRecord> trials;
};

// Model may be null when no diffusion method is requested. Writes results.csv
// and raw_trials.jsonl when cfg.output_dir is set.
BenchmarkResult run_benchmark(const ExperimentConfig& cfg, const NoisePredictor* model);

std::vector<ResultRow> aggregate(const std::vector<TrialRecord>& trials, std::uint64_t seed);
// Wall-clock columns are left out so reruns produce identical files.
void write_results_csv(const std::vector<ResultRow>& rows, const std::filesystem::path& path);
std::vector<ResultRow> read_results_csv(const std::filesystem::path& path);
void write_trials_jsonl(const std::vector<TrialRecord>& trials, const std::filesystem::path& path);
std::vector<TrialRecord> read_trials_jsonl(const std::filesystem::path& path);

struct LatencyStats {
  std::string method;
  double median_ms = 0;
  double iqr_ms = 0;
  std::vector<double> samples_ms;
};

// Online estimation time only; the observation and dictionaries are built first.
LatencyStats measure_latency(const std::string& method, const ExperimentConfig& cfg, const NoisePredictor* model,
                             int warmup, int reps);
void write_latency_json(const std::vector<LatencyStats>& stats, const std::filesystem::path& path);
std::vector<LatencyStats> read_latency_json(const std::filesystem::path& path);

enum class PlotKind { nmse_vs_snr, nmse_vs_ratio, latency };
PlotKind parse_plot_kind(const std::string& s);
std::string plot_kind_name(PlotKind k);

struct PlotPoint {
  std::string series;
  double x = 0;
  double y = 0;
};

// Long-format CSV "series,<x>,<y>": one series per method, NMSE in dB.
std::string emit_plot_data(const std::vector<ResultRow>& rows, PlotKind kind,
                           const std::vector<std::string>& methods);
// Latency plot: series = method, x = median ms, y = IQR ms.
std::string emit_latency_plot_data(const std::vector<LatencyStats>& stats, const std::vector<std::string>& methods);
std::vector<PlotPoint> parse_plot_data(const std::string& csv);

std::vector<std::string> methods_in(const std::vector<ResultRow>& rows);

}  // namespace fasdm
