#include <catch2/catch_amalgamated.hpp>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "dmc/experiments.hpp"

using namespace dmc;
using Catch::Approx;

TEST_CASE("config parsing", "[harness]") {
  SECTION("values land in the right fields") {
    std::istringstream in(
        "# comment\n"
        "experiment = hormander\n"
        "scheme = kinetic-flat\n"
        "delta_ladder = 0.015625, 0.0078125\n"
        "n_paths = 1234\n"
        "seed = 42\n");
    ExperimentConfig c = parse_config(in);
    CHECK(c.experiment == "hormander");
    CHECK(c.scheme == "kinetic-flat");
    CHECK(c.delta_ladder.size() == 2);
    CHECK(c.n_paths == 1234);
    CHECK(c.seed == 42);
  }
  SECTION("unknown keys are hard errors") {
    std::istringstream in("reticulation = 3\n");
    CHECK_THROWS_AS(parse_config(in), ConfigError);
  }
  SECTION("bad values are hard errors") {
    std::istringstream in("n_paths = many\n");
    CHECK_THROWS_AS(parse_config(in), ConfigError);
  }
  SECTION("ladder must divide the horizon") {
    ExperimentConfig c;
    c.T = 1.0;
    c.delta_ladder = {0.3};
    CHECK_THROWS_AS(validate_ladder(c), ConfigError);
  }
}

TEST_CASE("rate fit on synthetic power laws", "[harness]") {
  SECTION("exact slope one") {
    std::vector<RatePoint> pts;
    for (double d : {0.5, 0.25, 0.125, 0.0625}) pts.push_back({d, 3.0 * d, 0.0});
    RateFit f = rate_fit(pts);
    CHECK(f.slope == Approx(1.0).margin(1e-9));
    CHECK(f.intercept == Approx(std::log(3.0)).margin(1e-9));
    CHECK(f.r2 == Approx(1.0).margin(1e-12));
  }
  SECTION("exact slope one half") {
    std::vector<RatePoint> pts;
    for (double d : {0.5, 0.25, 0.125}) pts.push_back({d, 2.0 * std::sqrt(d), 0.01});
    RateFit f = rate_fit(pts);
    CHECK(f.slope == Approx(0.5).margin(1e-9));
    CHECK(f.ci_low <= 0.5);
    CHECK(f.ci_high >= 0.5);
  }
  SECTION("nonpositive points are dropped, too few is an error") {
    std::vector<RatePoint> pts{{0.5, 1.0, 0.1}, {0.25, -0.2, 0.1}, {0.125, 0.0, 0.1}};
    CHECK_THROWS_AS(rate_fit(pts), EstimatorError);
    pts.push_back({0.0625, 0.5, 0.1});
    pts.push_back({0.03125, 0.35, 0.1});
    RateFit f = rate_fit(pts);
    CHECK(f.n_used == 3);
    CHECK(f.warnings.size() == 2);
  }
}

TEST_CASE("hormander scan experiment", "[harness]") {
  ExperimentConfig cfg;
  cfg.experiment = "hormander";
  cfg.scheme = "kinetic-sigma-linear";
  cfg.L = 1;
  cfg.grid_nodes = 5;
  cfg.grid_lo = -1.0;
  cfg.grid_hi = 1.0;
  cfg.out_dir = "test_out/hormander";
  nlohmann::json rep = run_experiment(cfg);
  CHECK(rep["global_min"].get<double>() == 0.0);  // sigma vanishes at x1 = 0
  bool positive_off_zero = false;
  for (const auto& p : rep["points"])
    if (std::abs(p["x1"].get<double>() - 1.0) < 1e-12 && p["value"].get<double>() > 0)
      positive_off_zero = true;
  CHECK(positive_off_zero);
  CHECK(std::filesystem::exists("test_out/hormander/hormander_scan.csv"));
  CHECK(std::filesystem::exists("test_out/hormander/report.json"));
}

TEST_CASE("elliptic scan gives all ones", "[harness]") {
  ExperimentConfig cfg;
  cfg.experiment = "hormander";
  cfg.scheme = "random-walk";
  cfg.dim = 2;
  cfg.L = 0;
  cfg.grid_nodes = 4;
  cfg.out_dir = "test_out/hormander_ell";
  nlohmann::json rep = run_experiment(cfg);
  for (const auto& p : rep["points"]) CHECK(p["value"].get<double>() == 1.0);
}

TEST_CASE("simulate experiment writes the record", "[harness]") {
  ExperimentConfig cfg;
  cfg.experiment = "simulate";
  cfg.scheme = "kinetic-flat";
  cfg.dim = 2;
  cfg.law = "gaussian";
  cfg.delta = 1.0 / 8;
  cfg.T = 1.0;
  cfg.seed = 7;
  cfg.out_dir = "test_out/simulate";
  nlohmann::json rep = run_experiment(cfg);
  CHECK(rep["steps"].get<int>() == 8);
  std::ifstream csv("test_out/simulate/path.csv");
  std::string header;
  std::getline(csv, header);
  CHECK(header == "step,t,X0,X1,Z0,chi,U0,V0");
}

TEST_CASE("density experiment mass", "[harness]") {
  ExperimentConfig cfg;
  cfg.experiment = "density";
  cfg.scheme = "random-walk";
  cfg.law = "gaussian";
  cfg.delta = 1.0 / 16;
  cfg.T = 1.0;
  cfg.theta = 0.5;
  cfg.n_paths = 4000;
  cfg.grid_nodes = 321;
  cfg.grid_lo = -8.0;
  cfg.grid_hi = 8.0;
  cfg.out_dir = "test_out/density";
  nlohmann::json rep = run_experiment(cfg);
  CHECK(rep["grid_mass"].get<double>() == Approx(1.0).margin(1e-3));
}

TEST_CASE("experiment reports are deterministic and thread-count independent",
          "[harness]") {
  ExperimentConfig cfg;
  cfg.experiment = "iterated-clt";
  cfg.law = "ball-atom-mixture";
  cfg.clt_levels = 1;
  cfg.clt_log2_n_coarse = 6;
  cfg.clt_log2_n_fine = 8;
  cfg.n_paths = 4000;
  cfg.theta = 0.25;
  cfg.out_dir = "test_out/clt_a";
  nlohmann::json a = run_experiment(cfg);
  cfg.out_dir = "test_out/clt_b";
  cfg.threads = 3;
  nlohmann::json b = run_experiment(cfg);
  CHECK(a["covariance"] == b["covariance"]);
  CHECK(a["tv_coarse_vs_fine"] == b["tv_coarse_vs_fine"]);
}

TEST_CASE("unknown experiment id", "[harness]") {
  ExperimentConfig cfg;
  cfg.experiment = "warp-drive";
  CHECK_THROWS_AS(run_experiment(cfg), ConfigError);
}

TEST_CASE("flat kinetic scan is identically one", "[harness]") {
  ExperimentConfig cfg;
  cfg.experiment = "hormander";
  cfg.scheme = "kinetic-flat";
  cfg.L = 1;
  cfg.grid_nodes = 5;
  cfg.out_dir = "test_out/hormander_flat";
  nlohmann::json rep = run_experiment(cfg);
  for (const auto& p : rep["points"]) CHECK(p["value"].get<double>() == 1.0);
}
