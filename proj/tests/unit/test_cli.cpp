#include "helpers.hpp"

#include <doctest.h>

#include <cstdlib>
#include <fstream>
#include <sstream>
#include <string>

namespace fs = std::filesystem;

namespace {

int run(const std::string& args) {
  const std::string cmd = std::string("\"") + FASDM_CLI_PATH + "\" " + args + " > /dev/null 2>&1";
  return std::system(cmd.c_str());
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("CLI end to end on a tiny geometry") {
  const fs::path d = testutil::temp_dir("cli");
  const std::string geo = " --n1 8 --n2 8 --w1 1.5 --w2 1.5";
  const std::string D = d.string() + "/";

  REQUIRE(run("generate-data --out " + D + "a.bin --np 4 --count 32 --seed 3" + geo) == 0);
  REQUIRE(run("generate-data --out " + D + "b.bin --np 4 --count 32 --seed 3" + geo) == 0);
  CHECK(slurp(d / "a.bin") == slurp(d / "b.bin"));
  CHECK(fs::exists(d / "a.bin.json"));

  const std::string train = "train --data " + D + "a.bin --epochs 2 --batch 8 --seed 1 --t-max 50 --beta-T 0.2 --base-width 8";
  REQUIRE(run(train + " --checkpoint " + D + "m1.ckpt") == 0);
  REQUIRE(run(train + " --checkpoint " + D + "m2.ckpt") == 0);
  CHECK(slurp(d / "m1.ckpt.loss.csv") == slurp(d / "m2.ckpt.loss.csv"));
  CHECK(slurp(d / "m1.ckpt") == slurp(d / "m2.ckpt"));

  for (const char* m : {"omp", "sbl", "ddrm_fast"}) {
    const std::string est = std::string("estimate --method ") + m + " --checkpoint " + D +
                            "m1.ckpt --np 4 --m 2 --l 8 --snr-db 10 --t-prime 10 --sbl-grid 8 --t-max 50 --beta-T 0.2 --seed 5" + geo;
    REQUIRE(run(est + " --out " + D + m + ".bin") == 0);
    CHECK(fs::exists(d / (std::string(m) + ".bin.json")));
  }
  // estimate from a stored observation with truth
  REQUIRE(run("estimate --method omp --observation " + D + "omp.obs.bin --truth " + D +
              "omp.truth.bin --np 4 --out " + D + "omp2.bin" + geo) == 0);
  CHECK(slurp(d / "omp2.bin") == slurp(d / "omp.bin"));

  std::ofstream(d / "cfg.json") << R"({"geometry":{"n1":8,"n2":8,"w1":1.5,"w2":1.5},"np":4,"m":2,"delta":[0.25,0.5],
    "snr_db":[0,10],"methods":["ddrm_fast","omp","sbl"],"trials":2,"seed":9,"t_prime":10,
    "schedule":{"t_max":50,"beta_1":1e-4,"beta_T":0.2},"sbl":{"grid":8}})";
  for (const char* o : {"r1", "r2"})
    REQUIRE(run("bench --config " + D + "cfg.json --checkpoint " + D + "m1.ckpt --out " + D + o) == 0);
  CHECK(slurp(d / "r1" / "results.csv") == slurp(d / "r2" / "results.csv"));

  for (const char* o : {"r1", "r2"}) {
    REQUIRE(run("plot-data --kind nmse_vs_snr --results " + D + o + "/results.csv") == 0);
    REQUIRE(run("plot-data --kind nmse_vs_ratio --methods omp,sbl --results " + D + o + "/results.csv") == 0);
  }
  CHECK(slurp(d / "r1" / "plot_nmse_vs_snr.csv") == slurp(d / "r2" / "plot_nmse_vs_snr.csv"));
  CHECK(slurp(d / "r1" / "plot_nmse_vs_ratio.csv") == slurp(d / "r2" / "plot_nmse_vs_ratio.csv"));
  CHECK(!slurp(d / "r1" / "plot_nmse_vs_ratio.csv").empty());

  // errors exit nonzero
  CHECK(run("train --data " + D + "missing.bin --checkpoint " + D + "x.ckpt") != 0);
  CHECK(run("plot-data --kind nmse_vs_snr --methods lasso --results " + D + "r1/results.csv") != 0);
  CHECK(run("estimate --method ddrm_fast --np 4 --out " + D + "nock.bin" + geo) != 0);  // no checkpoint
  CHECK(!fs::exists(d / "nock.obs.bin"));  // and nothing written
}
