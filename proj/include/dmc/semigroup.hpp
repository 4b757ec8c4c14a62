#pragma once

#include <algorithm>
#include <array>
#include <atomic>
#include <cmath>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "dmc/localization.hpp"
#include "dmc/malliavin.hpp"
#include "dmc/montecarlo.hpp"
#include "dmc/scheme.hpp"

namespace dmc {

// Monte Carlo estimators for the semigroup, its Gaussian-regularized and
// localized variants, the regularized density and its Hermite-weighted
// derivatives, and the total-variation distance between two sample laws
// through their smoothed densities.

struct EstimatorResult {
  VectorXd value;
  VectorXd std_error;
  std::size_t n_paths = 0;
  nlohmann::json config;
};

namespace detail {

//! Fast endpoint sampler (no stored record): the z-argument is sqrt(delta) Z
//! drawn directly from the law, which has the same path law as the split
//! sampler.
inline VectorXd endpoint(const SchemeMap& psi, const NoiseLaw& law, const VectorXd& x0,
                         double delta, int steps, Rng& rng, VectorXd& scratch) {
  VectorXd cur = x0;
  double sq = std::sqrt(delta);
  for (int k = 1; k <= steps; ++k) {
    VectorXd z = sq * law.sample_z(rng);
    psi.step_into(cur, (k - 1) * delta, z, delta, scratch);
    cur.swap(scratch);
  }
  return cur;
}

inline nlohmann::json estimator_config(const SchemeMap& psi, const NoiseLaw& law,
                                       const VectorXd& x0, double T, double delta,
                                       std::size_t n_paths, std::uint64_t seed, int threads) {
  nlohmann::json j;
  j["scheme"] = psi.id();
  j["law"] = law.id;
  j["x0"] = std::vector<double>(x0.data(), x0.data() + x0.size());
  j["T"] = T;
  j["delta"] = delta;
  j["n_paths"] = n_paths;
  j["seed"] = seed;
  j["threads"] = threads;
  return j;
}

}  // namespace detail

//! Plain semigroup estimator: sample mean of f(X_T) with its standard error,
//! fixed-order reduction over the per-path buffer.
inline EstimatorResult expectation(const SchemeMap& psi, const NoiseLaw& law,
                                   const VectorXd& x0, double T, double delta,
                                   const std::function<double(const VectorXd&)>& f,
                                   std::size_t n_paths, std::uint64_t seed, int threads = 1) {
  int steps = steps_for_horizon(T, delta);
  std::vector<double> vals(n_paths);
  std::atomic<std::uint64_t> bad{0};
  parallel_for(n_paths, threads, [&](std::size_t b, std::size_t e) {
    VectorXd scratch(psi.dim_x());
    for (std::size_t p = b; p < e; ++p) {
      Rng rng = Rng::for_stream(seed, p);
      double v = f(detail::endpoint(psi, law, x0, delta, steps, rng, scratch));
      if (!std::isfinite(v)) bad = p + 1;
      vals[p] = v;
    }
  });
  if (bad)
    throw EstimatorError("non-finite test-function value on path stream " +
                         std::to_string(bad - 1) + " (seed " + std::to_string(seed) + ")");
  MeanSe ms = mean_se(vals);
  EstimatorResult out;
  out.value = VectorXd::Constant(1, ms.mean);
  out.std_error = VectorXd::Constant(1, ms.se);
  out.n_paths = n_paths;
  out.config = detail::estimator_config(psi, law, x0, T, delta, n_paths, seed, threads);
  return out;
}

//! Gaussian-regularized estimator: f(X_T + delta^theta G) with an independent
//! standard Gaussian per path.
inline EstimatorResult regularized_expectation(const SchemeMap& psi, const NoiseLaw& law,
                                               const VectorXd& x0, double T, double delta,
                                               double theta,
                                               const std::function<double(const VectorXd&)>& f,
                                               std::size_t n_paths, std::uint64_t seed,
                                               int threads = 1) {
  if (theta <= 0) throw ConfigError("regularized expectation needs theta > 0");
  int steps = steps_for_horizon(T, delta);
  double band = std::pow(delta, theta);
  std::vector<double> vals(n_paths);
  std::atomic<std::uint64_t> bad{0};
  parallel_for(n_paths, threads, [&](std::size_t b, std::size_t e) {
    VectorXd scratch(psi.dim_x());
    for (std::size_t p = b; p < e; ++p) {
      Rng rng = Rng::for_stream(seed, p);
      VectorXd y = detail::endpoint(psi, law, x0, delta, steps, rng, scratch);
      for (int i = 0; i < y.size(); ++i) y(i) += band * rng.gaussian();
      double v = f(y);
      if (!std::isfinite(v)) bad = p + 1;
      vals[p] = v;
    }
  });
  if (bad)
    throw EstimatorError("non-finite test-function value on path stream " +
                         std::to_string(bad - 1) + " (seed " + std::to_string(seed) + ")");
  MeanSe ms = mean_se(vals);
  EstimatorResult out;
  out.value = VectorXd::Constant(1, ms.mean);
  out.std_error = VectorXd::Constant(1, ms.se);
  out.n_paths = n_paths;
  out.config = detail::estimator_config(psi, law, x0, T, delta, n_paths, seed, threads);
  out.config["theta"] = theta;
  return out;
}

//! Localized estimator E[Theta f(X_T)]; value(0) is the estimate and value(1)
//! the localization-loss diagnostic E[1 - Theta]. Theta needs det gamma only,
//! so first derivatives suffice.
inline EstimatorResult localized_expectation(const SchemeMap& psi, const NoiseLaw& law,
                                             const VectorXd& x0, double T, double delta,
                                             const Thresholds& th,
                                             const std::function<double(const VectorXd&)>& f,
                                             std::size_t n_paths, std::uint64_t seed,
                                             int threads = 1) {
  std::vector<double> vals(n_paths), loss(n_paths);
  parallel_for(n_paths, threads, [&](std::size_t b, std::size_t e) {
    for (std::size_t p = b; p < e; ++p) {
      PathRecord rec = simulate_path(psi, law, x0, delta, T, derive_stream_seed(seed, p));
      MalliavinBundle bun = build_bundle(rec, psi, law, th.eta2, MalliavinCaps{1 << 20, 64},
                                         /*second=*/false);
      double theta = theta_weight(rec, bun, th);
      vals[p] = theta * f(rec.x.back());
      loss[p] = 1.0 - theta;
    }
  });
  MeanSe ms = mean_se(vals);
  MeanSe ml = mean_se(loss);
  EstimatorResult out;
  out.value = VectorXd(2);
  out.value << ms.mean, ml.mean;
  out.std_error = VectorXd(2);
  out.std_error << ms.se, ml.se;
  out.n_paths = n_paths;
  out.config = detail::estimator_config(psi, law, x0, T, delta, n_paths, seed, threads);
  out.config["eta1"] = th.eta1;
  out.config["eta2"] = th.eta2;
  return out;
}

// ---------------------------------------------------------------------------
// density estimation

//! Exact density of the empirical law convolved with a delta^theta Gaussian:
//! (1/M) sum_m N(y; X_m, delta^(2 theta) I).
inline double density(const MatrixXd& samples, double theta, double delta, const VectorXd& y) {
  const int d = static_cast<int>(samples.cols());
  double h = std::pow(delta, theta);
  double norm = std::pow(2.0 * 3.14159265358979323846 * h * h, -0.5 * d);
  double acc = 0.0;
  for (int m = 0; m < samples.rows(); ++m) {
    double q = (y.transpose() - samples.row(m)).squaredNorm() / (h * h);
    acc += std::exp(-0.5 * q);
  }
  return norm * acc / static_cast<double>(samples.rows());
}

//! Probabilists' Hermite polynomials, exact integer coefficients up to 4.
inline double hermite_poly(int k, double x) {
  switch (k) {
    case 0: return 1.0;
    case 1: return x;
    case 2: return x * x - 1.0;
    case 3: return x * (x * x - 3.0);
    case 4: return x * x * (x * x - 6.0) + 3.0;
    default: throw EstimatorError("hermite weights are hard-coded up to order 4");
  }
}

//! d^beta/dy^beta of the smoothed density via Hermite weights:
//! (1/M) sum_m h^{-|beta|} (-1)^{|beta|} prod_j He_{beta_j}((y_j - X_j)/h) N(y; X_m, h^2 I).
inline double density_derivative(const MatrixXd& samples, double theta, double delta,
                                 const std::vector<int>& beta, const VectorXd& y) {
  const int d = static_cast<int>(samples.cols());
  if (static_cast<int>(beta.size()) != d)
    throw DimensionError("density_derivative: beta must have one entry per coordinate");
  int order = 0;
  for (int b : beta) order += b;
  if (order > 4) throw EstimatorError("density derivatives support |beta| <= 4");
  double h = std::pow(delta, theta);
  double norm = std::pow(2.0 * 3.14159265358979323846 * h * h, -0.5 * d);
  double sign = (order % 2 == 0) ? 1.0 : -1.0;
  double scale = sign * std::pow(h, -order);
  double acc = 0.0;
  for (int m = 0; m < samples.rows(); ++m) {
    double q = 0.0, w = 1.0;
    for (int j = 0; j < d; ++j) {
      double u = (y(j) - samples(m, j)) / h;
      q += u * u;
      w *= hermite_poly(beta[static_cast<size_t>(j)], u);
    }
    acc += w * std::exp(-0.5 * q);
  }
  return scale * norm * acc / static_cast<double>(samples.rows());
}

// ---------------------------------------------------------------------------
// grid KDE and total variation

struct TensorGrid {
  int dim = 0;
  std::array<double, 3> lo{}, spacing{};
  std::array<int, 3> nodes{};
  std::size_t total() const {
    std::size_t t = 1;
    for (int i = 0; i < dim; ++i) t *= static_cast<std::size_t>(nodes[static_cast<size_t>(i)]);
    return t;
  }
  double cell() const {
    double c = 1;
    for (int i = 0; i < dim; ++i) c *= spacing[static_cast<size_t>(i)];
    return c;
  }
};

struct GridSpec {
  double pad_stds = 6.0;       // expansion beyond the sample range, in sample stds
  int nodes_per_std = 64;      // minimum resolution per sample std
  int max_nodes_per_axis = 1600;
};

namespace detail {

inline TensorGrid make_grid(const MatrixXd& a, const MatrixXd& b, double h,
                            const GridSpec& spec) {
  const int d = static_cast<int>(a.cols());
  if (d > 3) throw EstimatorError("tensor-grid TV supports dimension <= 3; use the sliced bound");
  TensorGrid g;
  g.dim = d;
  for (int i = 0; i < d; ++i) {
    double lo = std::min(a.col(i).minCoeff(), b.col(i).minCoeff());
    double hi = std::max(a.col(i).maxCoeff(), b.col(i).maxCoeff());
    double mean_a = a.col(i).mean();
    double sd = std::sqrt((a.col(i).array() - mean_a).square().mean());
    double mean_b = b.col(i).mean();
    sd = std::max(sd, std::sqrt((b.col(i).array() - mean_b).square().mean()));
    sd = std::max(sd, 1e-12);
    lo -= spec.pad_stds * sd + 4 * h;
    hi += spec.pad_stds * sd + 4 * h;
    double dx = std::min(sd / spec.nodes_per_std, 0.5 * h);
    double n_raw = std::ceil((hi - lo) / dx) + 1;  // may be huge for point masses
    int n = n_raw > spec.max_nodes_per_axis ? spec.max_nodes_per_axis
                                            : std::max(8, static_cast<int>(n_raw));
    g.lo[static_cast<size_t>(i)] = lo;
    g.nodes[static_cast<size_t>(i)] = n;
    g.spacing[static_cast<size_t>(i)] = (hi - lo) / (n - 1);
  }
  return g;
}

//! Binned KDE: linear binning of the samples followed by a separable
//! truncated-Gaussian convolution along each axis. Binning error is
//! negligible at spacing <= h/2; the kernel is cut at 8.5 bandwidths
//! (below double rounding).
inline std::vector<double> kde_on_grid(const MatrixXd& s, double h, const TensorGrid& g) {
  const int d = g.dim;
  std::size_t total = g.total();
  std::vector<double> bins(total, 0.0);
  double wnorm = 1.0 / (static_cast<double>(s.rows()) * g.cell());
  // linear binning: spread each sample over its 2^d neighbouring nodes
  for (int m = 0; m < s.rows(); ++m) {
    int base[3] = {0, 0, 0};
    double frac[3] = {0, 0, 0};
    bool inside = true;
    for (int i = 0; i < d; ++i) {
      double u = (s(m, i) - g.lo[static_cast<size_t>(i)]) / g.spacing[static_cast<size_t>(i)];
      int cell = static_cast<int>(std::floor(u));
      if (cell < 0 || cell + 1 >= g.nodes[static_cast<size_t>(i)]) {
        inside = false;
        break;
      }
      base[i] = cell;
      frac[i] = u - cell;
    }
    if (!inside) continue;  // cannot happen with the padded grid
    int corners = 1 << d;
    for (int c = 0; c < corners; ++c) {
      double w = wnorm;
      std::size_t idx = 0;
      for (int i = 0; i < d; ++i) {
        int off = (c >> i) & 1;
        w *= off ? frac[i] : 1.0 - frac[i];
        idx = idx * static_cast<std::size_t>(g.nodes[static_cast<size_t>(i)]) +
              static_cast<std::size_t>(base[i] + off);
      }
      bins[idx] += w;
    }
  }
  // separable convolution with the 1-d Gaussian kernel
  std::vector<double> tmp(total);
  for (int axis = 0; axis < d; ++axis) {
    double dx = g.spacing[static_cast<size_t>(axis)];
    int n = g.nodes[static_cast<size_t>(axis)];
    int half = static_cast<int>(std::ceil(8.5 * h / dx));
    std::vector<double> ker(static_cast<size_t>(half) + 1);
    double knorm = dx / (h * std::sqrt(2.0 * 3.14159265358979323846));
    double ksum = 0.0;
    for (int m = 0; m <= half; ++m) {
      double u = m * dx / h;
      ker[static_cast<size_t>(m)] = knorm * std::exp(-0.5 * u * u);
      ksum += (m ? 2.0 : 1.0) * ker[static_cast<size_t>(m)];
    }
    // exact discrete mass even when the grid undersamples the kernel; a no-op
    // (1 + O(1e-16)) once dx <= h/2
    for (auto& w : ker) w /= ksum;
    // view the array as (outer, n, inner)
    std::size_t inner = 1;
    for (int i = axis + 1; i < d; ++i) inner *= static_cast<std::size_t>(g.nodes[static_cast<size_t>(i)]);
    std::size_t outer = total / (inner * static_cast<std::size_t>(n));
    std::fill(tmp.begin(), tmp.end(), 0.0);
    for (std::size_t o = 0; o < outer; ++o) {
      std::size_t base_o = o * static_cast<std::size_t>(n) * inner;
      for (int j = 0; j < n; ++j) {
        std::size_t row = base_o + static_cast<std::size_t>(j) * inner;
        int k0 = std::max(0, j - half), k1 = std::min(n - 1, j + half);
        for (int k = k0; k <= k1; ++k) {
          double w = ker[static_cast<size_t>(std::abs(j - k))];
          std::size_t src = base_o + static_cast<std::size_t>(k) * inner;
          for (std::size_t in = 0; in < inner; ++in) tmp[row + in] += w * bins[src + in];
        }
      }
    }
    bins.swap(tmp);
  }
  return bins;
}

}  // namespace detail

struct TvResult {
  double tv = 0.0;
  double quad_residual_a = 0.0;  // 1 - integral of the smoothed density of A
  double quad_residual_b = 0.0;
  double bandwidth = 0.0;
  std::size_t grid_nodes = 0;
};

//! Half the L1 distance between the two delta^theta-smoothed sample densities
//! on a common tensor grid (trapezoid weights degenerate to cell sums away
//! from the padded boundary where both densities vanish).
inline TvResult tv_distance(const MatrixXd& a, const MatrixXd& b, double theta, double delta,
                            const GridSpec& spec = {}) {
  if (a.cols() != b.cols()) throw DimensionError("tv_distance: dimension mismatch");
  double h = std::pow(delta, theta);
  TensorGrid g = detail::make_grid(a, b, h, spec);
  std::vector<double> qa = detail::kde_on_grid(a, h, g);
  std::vector<double> qb = detail::kde_on_grid(b, h, g);
  double cell = g.cell();
  double l1 = 0.0, ma = 0.0, mb = 0.0;
  for (std::size_t i = 0; i < qa.size(); ++i) {
    l1 += std::abs(qa[i] - qb[i]);
    ma += qa[i];
    mb += qb[i];
  }
  TvResult out;
  out.tv = 0.5 * l1 * cell;
  out.quad_residual_a = 1.0 - ma * cell;
  out.quad_residual_b = 1.0 - mb * cell;
  out.bandwidth = h;
  out.grid_nodes = g.total();
  return out;
}

//! Lower bound for dimensions above 3: maximum 1-d smoothed TV over random
//! unit projections (the projection of the smoothed law is the 1-d KDE with
//! the same bandwidth).
inline TvResult sliced_tv_lower_bound(const MatrixXd& a, const MatrixXd& b, double theta,
                                      double delta, int n_slices = 32,
                                      std::uint64_t seed = 1234, const GridSpec& spec = {}) {
  if (a.cols() != b.cols()) throw DimensionError("tv_distance: dimension mismatch");
  Rng rng(seed);
  const int d = static_cast<int>(a.cols());
  TvResult best;
  for (int s = 0; s < n_slices; ++s) {
    VectorXd dir(d);
    for (int i = 0; i < d; ++i) dir(i) = rng.gaussian();
    dir.normalize();
    MatrixXd pa = a * dir, pb = b * dir;
    TvResult r = tv_distance(pa, pb, theta, delta, spec);
    if (r.tv > best.tv) best = r;
  }
  return best;
}

// ---------------------------------------------------------------------------
// localized integration-by-parts check

struct IbpTestFunction {
  std::string name;
  std::function<double(const VectorXd&)> value;
  std::function<VectorXd(const VectorXd&)> gradient;
};

struct IbpCheckRow {
  std::string test_function;
  int direction = 0;
  double lhs = 0.0, lhs_se = 0.0;
  double rhs = 0.0, rhs_se = 0.0;
  double z_score = 0.0;
};

struct IbpCheckReport {
  std::vector<IbpCheckRow> rows;
  double theta_mean = 0.0;
  std::size_t n_paths = 0;
  double max_abs_z() const {
    double m = 0;
    for (const auto& r : rows) m = std::max(m, std::abs(r.z_score));
    return m;
  }
};

//! Monte Carlo check of E[d_h phi(X_T) Theta] = E[phi(X_T) H(X_T, Theta)[h]]
//! for each test function and each basis direction, with the paired z-score
//! of the difference.
inline IbpCheckReport ibp_identity_check(const SchemeMap& psi, const NoiseLaw& law,
                                         const VectorXd& x0, double T, double delta,
                                         const Thresholds& th,
                                         const std::vector<IbpTestFunction>& phis,
                                         std::size_t n_paths, std::uint64_t seed,
                                         int threads = 1, const MalliavinCaps& caps = {}) {
  const int d = psi.dim_x();
  const std::size_t cols = phis.size() * static_cast<std::size_t>(d);
  std::vector<double> lhs(n_paths * cols), rhs(n_paths * cols), theta_buf(n_paths);
  parallel_for(n_paths, threads, [&](std::size_t pb, std::size_t pe) {
    for (std::size_t p = pb; p < pe; ++p) {
      PathRecord rec = simulate_path(psi, law, x0, delta, T, derive_stream_seed(seed, p));
      MalliavinBundle bun =
          build_bundle(rec, psi, law, th.eta2, caps, /*second=*/true,
                       /*with_flow_derivative=*/true);
      double theta = theta_weight(rec, bun, th);
      theta_buf[p] = theta;
      MatrixXd dtheta;
      bool have_weight = theta > 0.0 && !bun.cov.singular;
      if (have_weight) dtheta = theta_derivative(rec, bun, th);
      const VectorXd& xT = rec.x.back();
      for (std::size_t q = 0; q < phis.size(); ++q) {
        VectorXd grad = phis[q].gradient(xT);
        double val = phis[q].value(xT);
        for (int h = 0; h < d; ++h) {
          std::size_t col = q * static_cast<std::size_t>(d) + static_cast<std::size_t>(h);
          // Theta = 0 paths contribute zero to both sides: H(F, 0)[h] = 0
          lhs[p * cols + col] = have_weight ? grad(h) * theta : 0.0;
          rhs[p * cols + col] =
              have_weight ? val * ibp_weight_order1(bun, theta, dtheta, h) : 0.0;
        }
      }
    }
  });
  IbpCheckReport rep;
  rep.n_paths = n_paths;
  rep.theta_mean = mean_se(theta_buf).mean;
  std::vector<double> l(n_paths), r(n_paths), diff(n_paths);
  for (std::size_t q = 0; q < phis.size(); ++q) {
    for (int h = 0; h < d; ++h) {
      std::size_t col = q * static_cast<std::size_t>(d) + static_cast<std::size_t>(h);
      for (std::size_t p = 0; p < n_paths; ++p) {
        l[p] = lhs[p * cols + col];
        r[p] = rhs[p * cols + col];
        diff[p] = l[p] - r[p];
      }
      MeanSe msl = mean_se(l), msr = mean_se(r), msd = mean_se(diff);
      IbpCheckRow row;
      row.test_function = phis[q].name;
      row.direction = h;
      row.lhs = msl.mean;
      row.lhs_se = msl.se;
      row.rhs = msr.mean;
      row.rhs_se = msr.se;
      row.z_score = msd.se > 0 ? msd.mean / msd.se : 0.0;
      rep.rows.push_back(row);
    }
  }
  return rep;
}

//! Standard smooth compactly supported test functions plus a coordinate map.
inline std::vector<IbpTestFunction> builtin_ibp_test_functions(int d) {
  std::vector<IbpTestFunction> out;
  out.push_back({"radial-bump",
                 [](const VectorXd& x) { return bump(1.0, x); },
                 [](const VectorXd& x) {
                   return VectorXd(bump(1.0, x) * bump_log_gradient(1.0, x));
                 }});
  out.push_back({"gaussian",
                 [](const VectorXd& x) { return std::exp(-0.5 * x.squaredNorm()); },
                 [](const VectorXd& x) {
                   return VectorXd(-std::exp(-0.5 * x.squaredNorm()) * x);
                 }});
  out.push_back({"tanh-x0",
                 [](const VectorXd& x) { return std::tanh(x(0)); },
                 [d](const VectorXd& x) {
                   VectorXd g = VectorXd::Zero(d);
                   double t = std::tanh(x(0));
                   g(0) = 1.0 - t * t;
                   return g;
                 }});
  return out;
}

}  // namespace dmc
