#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <istream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "dmc/errors.hpp"

namespace dmc {

// Experiment configuration: flat "key = value" text, '#' comments, unknown
// keys are hard errors. Every value echoes into the report so a run is
// reproducible from the report alone.

struct ExperimentConfig {
  std::string experiment;  // kinetic-tv | iterated-clt | ibp-check | hormander |
                           // localization | density | simulate
  std::string scheme = "random-walk";
  std::string law = "gaussian";
  int dim = 1;  // state dimension for dimension-parametric schemes
  std::vector<double> x0{0.0};
  double T = 1.0;
  double delta = 1.0 / 16;
  std::vector<double> delta_ladder;
  double theta = 0.25;
  int L = 1;
  std::size_t n_paths = 100'000;
  std::uint64_t seed = 1;
  int threads = 1;
  std::string out_dir = "out";
  // experiment-specific knobs
  double ibp_eta1 = 1e4;
  double ibp_eta2 = 4.0;
  int clt_levels = 1;
  int clt_log2_n_coarse = 12;
  int clt_log2_n_fine = 15;
  int grid_nodes = 33;
  double grid_lo = -2.0;
  double grid_hi = 2.0;
  int tv_ref_refine = 8;  // reference grid refinement factor

  nlohmann::json echo() const {
    nlohmann::json j;
    j["experiment"] = experiment;
    j["scheme"] = scheme;
    j["law"] = law;
    j["dim"] = dim;
    j["x0"] = x0;
    j["T"] = T;
    j["delta"] = delta;
    j["delta_ladder"] = delta_ladder;
    j["theta"] = theta;
    j["L"] = L;
    j["n_paths"] = n_paths;
    j["seed"] = seed;
    j["threads"] = threads;
    j["out_dir"] = out_dir;
    j["ibp_eta1"] = ibp_eta1;
    j["ibp_eta2"] = ibp_eta2;
    j["clt_levels"] = clt_levels;
    j["clt_log2_n_coarse"] = clt_log2_n_coarse;
    j["clt_log2_n_fine"] = clt_log2_n_fine;
    j["grid_nodes"] = grid_nodes;
    j["grid_lo"] = grid_lo;
    j["grid_hi"] = grid_hi;
    j["tv_ref_refine"] = tv_ref_refine;
    return j;
  }
};

namespace detail {

inline std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

inline std::vector<double> parse_list(const std::string& s) {
  std::vector<double> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(std::stod(item));
  }
  return out;
}

}  // namespace detail

inline ExperimentConfig parse_config(std::istream& in) {
  ExperimentConfig c;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
    std::string key = detail::trim(line.substr(0, eq));
    std::string val = detail::trim(line.substr(eq + 1));
    try {
      if (key == "experiment") c.experiment = val;
      else if (key == "scheme") c.scheme = val;
      else if (key == "law") c.law = val;
      else if (key == "dim") c.dim = std::stoi(val);
      else if (key == "x0") c.x0 = detail::parse_list(val);
      else if (key == "T") c.T = std::stod(val);
      else if (key == "delta") c.delta = std::stod(val);
      else if (key == "delta_ladder") c.delta_ladder = detail::parse_list(val);
      else if (key == "theta") c.theta = std::stod(val);
      else if (key == "L") c.L = std::stoi(val);
      else if (key == "n_paths") c.n_paths = static_cast<std::size_t>(std::stoull(val));
      else if (key == "seed") c.seed = std::stoull(val);
      else if (key == "threads") c.threads = std::stoi(val);
      else if (key == "out_dir") c.out_dir = val;
      else if (key == "ibp_eta1") c.ibp_eta1 = std::stod(val);
      else if (key == "ibp_eta2") c.ibp_eta2 = std::stod(val);
      else if (key == "clt_levels") c.clt_levels = std::stoi(val);
      else if (key == "clt_log2_n_coarse") c.clt_log2_n_coarse = std::stoi(val);
      else if (key == "clt_log2_n_fine") c.clt_log2_n_fine = std::stoi(val);
      else if (key == "grid_nodes") c.grid_nodes = std::stoi(val);
      else if (key == "grid_lo") c.grid_lo = std::stod(val);
      else if (key == "grid_hi") c.grid_hi = std::stod(val);
      else if (key == "tv_ref_refine") c.tv_ref_refine = std::stoi(val);
      else
        throw ConfigError("config line " + std::to_string(lineno) + ": unknown key '" + key +
                          "'");
    } catch (const std::invalid_argument&) {
      throw ConfigError("config line " + std::to_string(lineno) + ": bad value for '" + key +
                        "'");
    }
  }
  return c;
}

inline void validate_ladder(const ExperimentConfig& c) {
  for (double d : c.delta_ladder) {
    double raw = c.T / d;
    if (std::abs(raw - std::lround(raw)) > 1e-9)
      throw ConfigError("delta ladder entry " + std::to_string(d) +
                        " does not divide the horizon T");
  }
}

// ---------------------------------------------------------------------------
// rate fitting

struct RatePoint {
  double delta = 0.0;
  double value = 0.0;
  double std_error = 0.0;
};

struct RateFit {
  double slope = 0.0;
  double intercept = 0.0;
  double r2 = 0.0;
  double ci_low = 0.0;
  double ci_high = 0.0;
  int n_used = 0;
  std::vector<std::string> warnings;
};

//! Weighted least squares on (log delta, log value); weights from the
//! relative standard errors; the slope CI comes from the fit covariance.
//! Nonpositive values are dropped with a warning; fewer than 3 survivors is
//! an error.
inline RateFit rate_fit(const std::vector<RatePoint>& pts) {
  RateFit fit;
  std::vector<double> x, y, w;
  for (const auto& p : pts) {
    if (!(p.value > 0.0)) {
      fit.warnings.push_back("dropped nonpositive value at delta = " + std::to_string(p.delta));
      continue;
    }
    x.push_back(std::log(p.delta));
    y.push_back(std::log(p.value));
    double sigma = p.std_error > 0 ? p.std_error / p.value : 0.0;
    w.push_back(sigma > 0 ? 1.0 / (sigma * sigma) : 0.0);
  }
  fit.n_used = static_cast<int>(x.size());
  if (fit.n_used < 3) throw EstimatorError("rate fit needs at least 3 positive ladder points");
  // points with zero reported error get the median weight of the others
  double wmax = 0;
  for (double v : w) wmax = std::max(wmax, v);
  if (wmax == 0) wmax = 1.0;
  for (double& v : w)
    if (v == 0) v = wmax;
  double sw = 0, sx = 0, sy = 0;
  for (size_t i = 0; i < x.size(); ++i) {
    sw += w[i];
    sx += w[i] * x[i];
    sy += w[i] * y[i];
  }
  double xb = sx / sw, yb = sy / sw;
  double sxx = 0, sxy = 0;
  for (size_t i = 0; i < x.size(); ++i) {
    sxx += w[i] * (x[i] - xb) * (x[i] - xb);
    sxy += w[i] * (x[i] - xb) * (y[i] - yb);
  }
  fit.slope = sxy / sxx;
  fit.intercept = yb - fit.slope * xb;
  double ss_res = 0, ss_tot = 0;
  for (size_t i = 0; i < x.size(); ++i) {
    double e = y[i] - (fit.intercept + fit.slope * x[i]);
    ss_res += w[i] * e * e;
    ss_tot += w[i] * (y[i] - yb) * (y[i] - yb);
  }
  fit.r2 = ss_tot > 0 ? 1.0 - ss_res / ss_tot : 1.0;
  // slope variance from the weighted fit covariance, scaled by the residual
  // variance when the ladder has more points than parameters
  double dof = std::max(1, fit.n_used - 2);
  double scale = std::max(1.0, ss_res / dof);
  double se_slope = std::sqrt(scale / sxx);
  fit.ci_low = fit.slope - 1.96 * se_slope;
  fit.ci_high = fit.slope + 1.96 * se_slope;
  return fit;
}

inline nlohmann::json rate_fit_json(const RateFit& f) {
  nlohmann::json j;
  j["slope"] = f.slope;
  j["intercept"] = f.intercept;
  j["r2"] = f.r2;
  j["ci_low"] = f.ci_low;
  j["ci_high"] = f.ci_high;
  j["n_used"] = f.n_used;
  j["warnings"] = f.warnings;
  return j;
}

inline void write_text_file(const std::filesystem::path& p, const std::string& content) {
  std::ofstream os(p);
  if (!os) throw ConfigError("cannot write " + p.string());
  os << content;
}

}  // namespace dmc
