#pragma once

#include <cmath>
#include <map>
#include <optional>
#include <string>

#include <json.hpp>

#include "dmc/malliavin.hpp"
#include "dmc/scheme.hpp"

namespace dmc {

// Localization machinery: the smooth [0,1] cutoff, the step-size thresholds
// eta1 (covariance cutoff) / eta2 (noise cutoff) with the small-delta
// feasibility report, the Hoeffding event on the chi frequency, and the
// localization weight Theta with its Malliavin derivative.

//! Smooth cutoff: 1 for |x| <= v - 1/2, 0 for |x| >= v, and
//! exp(1 - 1/(1 - (2|x| - 2v + 1)^2)) on the bridge. Requires v > 1.
inline double smooth_cutoff(double v, double x) {
  double a = std::abs(x);
  if (a <= v - 0.5) return 1.0;
  if (a >= v) return 0.0;
  double u = 2.0 * a - 2.0 * v + 1.0;
  return std::exp(1.0 - 1.0 / (1.0 - u * u));
}

inline double smooth_cutoff_derivative(double v, double x) {
  double a = std::abs(x);
  if (a <= v - 0.5 || a >= v) return 0.0;
  double u = 2.0 * a - 2.0 * v + 1.0;
  double den = 1.0 - u * u;
  double dpsi_da = -4.0 * u / (den * den) * std::exp(1.0 - 1.0 / den);
  return (x < 0 ? -dpsi_da : dpsi_da);
}

//! Step-size thresholds and the feasibility block (each named inequality with
//! its margin, positive = satisfied).
struct Thresholds {
  double eta1 = 0.0;
  double eta2 = 0.0;
  double delta = 0.0;
  double m_star = 0.0;
  bool feasible = false;
  std::map<std::string, double> diagnostics;
};

//! eta1(delta) = delta^(-44 d / 91) min(1, 10^d / (m*^d (2^10 (1+T^3))^(d/2)))
//! eta2(delta) = min(delta^(-1/2) eta1^(-1/d), (1/2) (sqrt(delta) 8 D)^(-1/(p+1)))
//! plus the small-delta feasibility inequalities: eta2 > 1 and eta1 above the
//! four lower bounds (which involve T, m*, the Hormander quantity at the
//! start point, and the bracket order L). The canonical exponents use the
//! base 13; the report also carries a variant block parameterized by
//! r in (0, 1/12) with exponents r^-L and 11/(1-12r), canonical at r = 1/13.
inline Thresholds eta_thresholds(double delta, int d, double T, double m_star, double frak_d,
                                 int frak_p, int L = 0, int N = 1, double hormander_min = 1.0,
                                 double variant_r = 1.0 / 13.0) {
  Thresholds th;
  th.delta = delta;
  th.m_star = m_star;
  double cap = std::pow(10.0, d) /
               (std::pow(m_star, d) * std::pow(std::pow(2.0, 10) * (1 + T * T * T), 0.5 * d));
  th.eta1 = std::pow(delta, -44.0 * d / 91.0) * std::min(1.0, cap);
  double from_eta1 = std::pow(delta, -0.5) * std::pow(th.eta1, -1.0 / d);
  double from_inv = 0.5 * std::pow(std::sqrt(delta) * 8.0 * frak_d, -1.0 / (frak_p + 1));
  th.eta2 = std::min(from_eta1, from_inv);

  // The lower bounds carry exponents of size d * 13^L; evaluate in log space
  // so large L does not overflow.
  auto log_lower_bound = [&](double r) {
    double log2v = std::log(2.0);
    double lb2 = (1.0 - 0.5 * d) * log2v + 0.5 * d * std::log(static_cast<double>(d));
    double log_arg3 = std::log(T * hormander_min * m_star) -
                      std::log(40.0 * (L + 1)) -
                      0.5 * L * (L + 1) * std::log(static_cast<double>(N));
    double lb3 = log2v - d * std::pow(1.0 / r, L) * log_arg3;
    double lb4 = log2v;
    if (L > 0) {
      double log_arg4 = std::log(m_star) -
                        (11.0 / (1.0 - 12.0 * r)) * std::log(std::pow(2.0, 8) * (1 + T)) -
                        std::log(10.0) - 0.5 * L * (L - 1) * std::log(static_cast<double>(N));
      lb4 = log2v - d * std::pow(1.0 / r, L - 1) * log_arg4;
    }
    return std::max({0.0, lb2, lb3, lb4});
  };

  double log_lb = log_lower_bound(1.0 / 13.0);
  double log_eta1 = std::log(th.eta1);
  th.diagnostics["eta2_above_one"] = th.eta2 - 1.0;
  th.diagnostics["log_eta1_above_lower_bounds"] = log_eta1 - log_lb;
  th.diagnostics["log_eta1_lower_bound"] = log_lb;
  th.diagnostics["eta1_lower_bound"] = std::exp(log_lb);  // may overflow to inf
  th.diagnostics["inverse_flow_margin"] =
      1.0 - std::sqrt(delta) * std::pow(th.eta2, frak_p + 1) * 8.0 * frak_d;
  th.diagnostics["eta2_vs_eta1_cap"] = from_eta1 - th.eta2;
  th.diagnostics["variant_r"] = variant_r;
  th.diagnostics["variant_log_eta1_lower_bound"] = log_lower_bound(variant_r);
  th.diagnostics["variant_norris_eps_floor"] =
      std::pow(std::pow(2.0, 10) * (1 + T * T * T) * delta, 44.0 / (91.0 - 36.0 * variant_r));
  th.feasible = th.eta2 > 1.0 && log_eta1 > log_lb;
  return th;
}

inline nlohmann::json feasibility_json(const Thresholds& th) {
  nlohmann::json j;
  j["eta1"] = th.eta1;
  j["eta2"] = th.eta2;
  j["delta"] = th.delta;
  j["m_star"] = th.m_star;
  j["feasible"] = th.feasible;
  nlohmann::json ineq = nlohmann::json::array();
  {
    nlohmann::json e;
    e["name"] = "eta2 > 1";
    e["left"] = th.eta2;
    e["right"] = 1.0;
    e["margin"] = th.diagnostics.at("eta2_above_one");
    ineq.push_back(e);
  }
  {
    nlohmann::json e;
    e["name"] = "log eta1 > log max(lower bounds)";
    e["left"] = std::log(th.eta1);
    e["right"] = th.diagnostics.at("log_eta1_lower_bound");
    e["margin"] = th.diagnostics.at("log_eta1_above_lower_bounds");
    ineq.push_back(e);
  }
  j["inequalities"] = ineq;
  for (const auto& [k, v] : th.diagnostics) j["diagnostics"][k] = v;
  return j;
}

//! Indicator of { mean of chi over the grid >= m_star / 2 }.
inline bool hoeffding_indicator(const PathRecord& rec, double m_star) {
  double acc = 0;
  for (int c : rec.chi) acc += c;
  return acc / rec.steps >= 0.5 * m_star;
}

namespace detail {

inline double theta_eta2_product(const PathRecord& rec, double eta2) {
  double p = 1.0;
  for (const auto& z : rec.z) p *= smooth_cutoff(eta2, z.norm());
  return p;
}

}  // namespace detail

//! Localization weight Theta = Psi_eta1(G det gamma) * prod_w Psi_eta2(|Z_w|)
//! * 1_Lambda. Default G = det(flow at T)^2; a singular covariance gives
//! Theta = 0.
inline double theta_weight(const PathRecord& rec, const MalliavinBundle& b,
                           const Thresholds& th, std::optional<double> g_value = {}) {
  if (!hoeffding_indicator(rec, th.m_star)) return 0.0;
  double p2 = detail::theta_eta2_product(rec, th.eta2);
  if (p2 == 0.0) return 0.0;
  if (b.cov.singular) return 0.0;
  double g = g_value ? *g_value
                     : [&] {
                         double det_flow = b.flows.forward.back().determinant();
                         return det_flow * det_flow;
                       }();
  return smooth_cutoff(th.eta1, g * b.cov.det_gamma) * p2;
}

//! Malliavin derivative of Theta, direction by direction:
//!   D Theta = Psi'_eta1(A) DA * P2 * 1_L + Psi_eta1(A) * D P2 * 1_L,
//! with A = G det gamma, DA = DG det gamma - G det gamma Tr(gamma D sigma),
//! DG = 2 det(flow)^2 Tr(flow^-1 D flow) for the default G, and
//! D|Z_w| = chi_w delta^{-1/2} Z_w^j / |Z_w| on the diagonal direction only.
//! The chi indicator 1_Lambda is not differentiated.
inline MatrixXd theta_derivative(const PathRecord& rec, const MalliavinBundle& b,
                                 const Thresholds& th,
                                 std::optional<std::pair<double, MatrixXd>> g_and_dg = {}) {
  const int n = b.noise_dim;
  MatrixXd out = MatrixXd::Zero(rec.steps, n);
  if (!hoeffding_indicator(rec, th.m_star)) return out;
  if (b.cov.singular) return out;  // Psi_eta1 is flat zero near det gamma = inf
  if (!b.has_second()) throw EstimatorError("theta_derivative needs second derivatives");

  double g;
  MatrixXd dg;
  if (g_and_dg) {
    g = g_and_dg->first;
    dg = g_and_dg->second;
  } else {
    if (b.dxdot.empty())
      throw EstimatorError("theta_derivative needs the flow derivative (build the bundle "
                           "with with_flow_derivative)");
    if (!b.flows.valid[static_cast<size_t>(rec.steps)]) return out;  // eta2 factor is flat zero
    double det_flow = b.flows.forward.back().determinant();
    g = det_flow * det_flow;
    const MatrixXd& inv_flow = b.flows.inverse.back();
    dg.resize(rec.steps, n);
    for (int w = 1; w <= rec.steps; ++w)
      for (int i = 0; i < n; ++i)
        dg(w - 1, i) = 2.0 * g * (inv_flow * b.dxdot[static_cast<size_t>(b.dir(w, i))]).trace();
  }

  double det_gamma = b.cov.det_gamma;
  double a_val = g * det_gamma;
  double psi1 = smooth_cutoff(th.eta1, a_val);
  double dpsi1 = smooth_cutoff_derivative(th.eta1, a_val);
  double p2 = detail::theta_eta2_product(rec, th.eta2);

  const MatrixXd& gamma = b.cov.gamma;
  double sqinv = 1.0 / std::sqrt(rec.delta);
  for (int v = 1; v <= rec.steps; ++v) {
    for (int j = 0; j < n; ++j) {
      int a = b.dir(v, j);
      double term = 0.0;
      if (dpsi1 != 0.0 && p2 > 0.0) {
        // Tr(gamma D_a sigma) = 2 delta sum_b dx_b^T gamma ddx(a,b)
        double tr = 0.0;
        for (int bb = 0; bb < b.nn(); ++bb)
          tr += (b.dx[static_cast<size_t>(bb)].transpose() * gamma * b.ddx_at(a, bb))(0);
        tr *= 2.0 * rec.delta;
        double da = dg(v - 1, j) * det_gamma - g * det_gamma * tr;
        term += dpsi1 * da * p2;
      }
      if (psi1 > 0.0) {
        double znorm = rec.z[static_cast<size_t>(v - 1)].norm();
        double dpsi2 = smooth_cutoff_derivative(th.eta2, znorm);
        if (dpsi2 != 0.0 && znorm > 0.0 && rec.chi[static_cast<size_t>(v - 1)]) {
          double rest = 1.0;
          for (int w = 1; w <= rec.steps; ++w)
            if (w != v) rest *= smooth_cutoff(th.eta2, rec.z[static_cast<size_t>(w - 1)].norm());
          double dznorm = sqinv * rec.z[static_cast<size_t>(v - 1)](j) / znorm;
          term += psi1 * dpsi2 * dznorm * rest;
        }
      }
      out(v - 1, j) = term;
    }
  }
  return out;
}

}  // namespace dmc
