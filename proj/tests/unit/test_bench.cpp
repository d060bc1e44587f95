#include "fasdm/bench.hpp"
#include "fasdm/rng.hpp"

#include "helpers.hpp"

#include <doctest.h>

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

using namespace fasdm;

namespace {

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

ExperimentConfig small_config(const std::filesystem::path& out) {
  ExperimentConfig c;
  c.geometry = FasGeometry{6, 6, 1.5, 1.5};
  c.np = 4;
  c.m = 2;
  c.deltas = {0.25};
  c.snr_db = {0.0, 20.0};
  c.methods = {"omp", "sbl"};
  c.trials = 3;
  c.seed = 17;
  c.sbl_grid = 8;
  c.schedule = {100, 1e-4, 0.1};
  c.output_dir = out;
  return c;
}

}  // namespace

TEST_CASE("nmse") {
  std::mt19937_64 g(1);
  Eigen::VectorXd h = testutil::random_vector(20, g);
  CHECK(nmse(h, h) == 0.0);
  CHECK(nmse(Eigen::VectorXd::Zero(20), h) == doctest::Approx(1.0));
  CHECK(nmse(2 * h, h) == doctest::Approx(1.0));
  CHECK_THROWS(nmse(h, Eigen::VectorXd::Zero(20)));
  CHECK_THROWS(nmse(h.head(3), h));
}

TEST_CASE("SNR to sigma") {
  CHECK(snr_to_sigma(0).sigma_complex == doctest::Approx(1.0));
  CHECK(snr_to_sigma(20).sigma_complex == doctest::Approx(0.1));
  CHECK(snr_to_sigma(10).sigma_complex == doctest::Approx(0.316227766).epsilon(1e-8));
  CHECK(snr_to_sigma(10).sigma_real == doctest::Approx(std::sqrt(0.1 / 2)));
}

TEST_CASE("config validation and JSON round trip") {
  auto c = small_config("");
  CHECK_NOTHROW(c.validate());
  CHECK(c.slots() == std::vector<int>{5});  // round(0.25 * 36 / 2) = 4.5 -> 5
  CHECK_FALSE(c.needs_model());

  auto j = config_to_json(c);
  auto d = config_from_json(j);
  CHECK(d.geometry == c.geometry);
  CHECK(d.deltas == c.deltas);
  CHECK(d.snr_db == c.snr_db);
  CHECK(d.methods == c.methods);
  CHECK(d.seed == c.seed);
  CHECK(d.schedule.beta_T == c.schedule.beta_T);
  CHECK(config_to_json(d) == j);

  auto bad = c;
  bad.methods = {"lasso"};
  CHECK_THROWS(bad.validate());
  bad = c;
  bad.l_values = {3};
  CHECK_THROWS(bad.validate());
  bad = c;
  bad.deltas = {1.5};
  CHECK_THROWS(bad.validate());
  bad = c;
  bad.t_prime = 500;
  bad.methods = {"ddrm_fast"};
  CHECK_THROWS(bad.validate());

  auto s = config_from_json(nlohmann::json::parse(R"({"geometry":{"n1":4,"n2":4,"w1":1,"w2":1},"l":3,"methods":["omp"]})"));
  CHECK(s.l_values == std::vector<int>{3});
  CHECK(s.deltas.empty());
}

TEST_CASE("benchmark cardinality, files and determinism") {
  auto dir = testutil::temp_dir("bench");
  auto c = small_config(dir / "a");
  auto r = run_benchmark(c, nullptr);
  CHECK(r.trials.size() == 12);
  CHECK(r.rows.size() == 4);
  for (const auto& row : r.rows) {
    CHECK(row.trials == 3);
    CHECK(row.failed == 0);
    CHECK(row.nmse_db == doctest::Approx(10 * std::log10(row.nmse)));
  }
  c.output_dir = dir / "b";
  run_benchmark(c, nullptr);
  CHECK(slurp(dir / "a" / "results.csv") == slurp(dir / "b" / "results.csv"));
  CHECK(!slurp(dir / "a" / "results.csv").empty());

  auto back = read_results_csv(dir / "a" / "results.csv");
  REQUIRE(back.size() == 4);
  CHECK(back[0].nmse == r.rows[0].nmse);
  CHECK(back[3].method == r.rows[3].method);
  CHECK(read_trials_jsonl(dir / "a" / "raw_trials.jsonl").size() == 12);

  // same channel and noise draws across SNR points: 20 dB beats 0 dB per trial for SBL
  for (int t = 0; t < 3; ++t) {
    double lo = 0, hi = 0;
    for (const auto& tr : r.trials)
      if (tr.method == "sbl" && tr.trial == t) (tr.snr_db == 0.0 ? lo : hi) = tr.nmse;
    CHECK(hi < lo);
  }
}

TEST_CASE("aggregation skips failed trials") {
  std::vector<TrialRecord> t{{"omp", 10, 4, 0.2, 0, true, 0.5, 1.0, ""},
                             {"omp", 10, 4, 0.2, 1, false, 0.0, 0.0, "boom"},
                             {"omp", 10, 4, 0.2, 2, true, 0.25, 3.0, ""}};
  auto rows = aggregate(t, 5);
  REQUIRE(rows.size() == 1);
  CHECK(rows[0].trials == 2);
  CHECK(rows[0].failed == 1);
  CHECK(rows[0].nmse == doctest::Approx(0.375));
  CHECK(rows[0].wall_clock_ms_mean == doctest::Approx(2.0));
  CHECK(rows[0].seed == 5);
}

TEST_CASE("diffusion methods run inside the harness") {
  auto dir = testutil::temp_dir("bench_ddrm");
  auto c = small_config(dir);
  c.methods = {"ddrm_fast", "ddrm_full"};
  c.snr_db = {10.0};
  c.t_prime = 10;
  auto sched = make_schedule(c.schedule.t_max, c.schedule.beta_1, c.schedule.beta_T);
  testutil::GaussianOracle oracle(sched, 1.0);
  CHECK_THROWS(run_benchmark(c, nullptr));
  auto r = run_benchmark(c, &oracle);
  CHECK(r.rows.size() == 2);
  for (const auto& row : r.rows) CHECK(std::isfinite(row.nmse));
  // batch size does not change results
  c.ddrm_batch = 1;
  c.output_dir.clear();
  auto r1 = run_benchmark(c, &oracle);
  CHECK(r1.rows[0].nmse == doctest::Approx(r.rows[0].nmse).epsilon(1e-12));
}

TEST_CASE("latency measurement") {
  auto c = small_config("");
  CHECK_THROWS(measure_latency("omp", c, nullptr, 0, 2));
  auto s = measure_latency("omp", c, nullptr, 1, 5);
  CHECK(s.samples_ms.size() == 5);
  CHECK(s.median_ms > 0);
  CHECK(s.iqr_ms >= 0);
  auto dir = testutil::temp_dir("latency");
  write_latency_json({s}, dir / "l.json");
  auto back = read_latency_json(dir / "l.json");
  REQUIRE(back.size() == 1);
  CHECK(back[0].median_ms == s.median_ms);
}

TEST_CASE("plot data") {
  std::vector<ResultRow> rows;
  for (const char* m : {"ddrm_fast", "ddrm_full", "omp", "sbl"})
    for (double snr : {0.0, 10.0, 20.0}) {
      ResultRow r;
      r.method = m;
      r.snr_db = snr;
      r.l = 13;
      r.delta = 0.203125;
      r.trials = 10;
      r.nmse = std::pow(10.0, -snr / 10) * (1 + rows.size() / 7.0);
      r.nmse_db = 10 * std::log10(r.nmse);
      rows.push_back(r);
    }
  auto csv = emit_plot_data(rows, PlotKind::nmse_vs_snr, methods_in(rows));
  auto pts = parse_plot_data(csv);
  CHECK(pts.size() == 12);
  std::set<std::string> series;
  for (const auto& p : pts) series.insert(p.series);
  CHECK(series.size() == 4);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    CHECK(pts[i].series == rows[i].method);
    CHECK(pts[i].x == rows[i].snr_db);
    CHECK(pts[i].y == rows[i].nmse_db);
  }
  CHECK(parse_plot_data(emit_plot_data(rows, PlotKind::nmse_vs_snr, {"omp"})).size() == 3);
  CHECK_THROWS(emit_plot_data(rows, PlotKind::nmse_vs_snr, {}));
  CHECK_THROWS(emit_plot_data(rows, PlotKind::nmse_vs_snr, {"nothing"}));
  CHECK_THROWS(emit_plot_data(rows, PlotKind::latency, {"omp"}));
  CHECK(parse_plot_kind("nmse_vs_ratio") == PlotKind::nmse_vs_ratio);
  CHECK(plot_kind_name(PlotKind::latency) == "latency");
  CHECK_THROWS(parse_plot_kind("pie"));

  auto lat = emit_latency_plot_data({{"omp", 0.5, 0.1, {}}, {"sbl", 30, 2, {}}}, {"omp", "sbl"});
  auto lp = parse_plot_data(lat);
  CHECK(lp.size() == 2);
  CHECK(lp[1].x == 30);
}
