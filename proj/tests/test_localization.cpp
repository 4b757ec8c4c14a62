#include <catch2/catch_amalgamated.hpp>
#include <cmath>

#include "dmc/localization.hpp"
#include "dmc/schemes_builtin.hpp"

using namespace dmc;
using Catch::Approx;

TEST_CASE("smooth cutoff values", "[localization]") {
  CHECK(smooth_cutoff(2.0, 0.0) == 1.0);
  CHECK(smooth_cutoff(2.0, 2.0) == 0.0);
  CHECK(smooth_cutoff(2.0, -2.5) == 0.0);
  double v = 2.0;
  CHECK(smooth_cutoff(v, v - 0.25) == Approx(std::exp(-1.0 / 3.0)).epsilon(1e-14));
  CHECK(smooth_cutoff(v, -(v - 0.25)) == Approx(std::exp(-1.0 / 3.0)).epsilon(1e-14));
  // numerically C1 at the seams
  for (double x0 : {v - 0.5, v}) {
    double h = 1e-6;
    double l = (smooth_cutoff(v, x0) - smooth_cutoff(v, x0 - h)) / h;
    double r = (smooth_cutoff(v, x0 + h) - smooth_cutoff(v, x0)) / h;
    CHECK(std::abs(l - r) < 1e-4);
  }
}

TEST_CASE("smooth cutoff derivative matches finite differences", "[localization]") {
  double v = 1.7;
  for (double x : {1.3, 1.55, -1.45, 0.3, 2.0}) {
    double h = 1e-7;
    double fd = (smooth_cutoff(v, x + h) - smooth_cutoff(v, x - h)) / (2 * h);
    CHECK(smooth_cutoff_derivative(v, x) == Approx(fd).margin(1e-5));
  }
}

TEST_CASE("eta thresholds frozen regression value", "[localization]") {
  // d=1, T=1, m*=1/2, delta=2^-20, D=1, p=0 (frozen from exact evaluation)
  Thresholds th = eta_thresholds(std::pow(2.0, -20), 1, 1.0, 0.5, 1.0, 0);
  CHECK(th.eta1 == Approx(360.10099239867395).epsilon(1e-13));
  CHECK(th.eta2 == Approx(2.8436467036067264).epsilon(1e-13));
  CHECK(th.feasible);
  CHECK(th.diagnostics.at("inverse_flow_margin") > 0.0);
}

TEST_CASE("eta thresholds monotonicity and feasibility limits", "[localization]") {
  double prev_eta1 = 0.0;
  bool prev_feasible = false;
  for (int k : {2, 6, 10, 16, 24, 40}) {
    Thresholds th = eta_thresholds(std::pow(2.0, -k), 1, 1.0, 0.35, 2.0, 1, 0, 1, 1.0);
    CHECK(th.eta1 >= prev_eta1);
    CHECK(th.feasible >= prev_feasible);  // once feasible, stays feasible
    prev_eta1 = th.eta1;
    prev_feasible = th.feasible;
  }
  CHECK(prev_feasible);  // delta -> 0 limit (order L = 0)
  // L = 1: the lower-bound constants are so large that no representable delta
  // is feasible; the log margin still improves monotonically
  double prev_margin = -1e300;
  for (int k : {10, 40, 200, 900}) {
    Thresholds th = eta_thresholds(std::pow(2.0, -k), 1, 1.0, 0.35, 2.0, 1, 1, 1, 1.0);
    double m = th.diagnostics.at("log_eta1_above_lower_bounds");
    CHECK(m >= prev_margin);
    prev_margin = m;
  }
  CHECK(prev_margin < 0.0);
  // delta = 1 with a large constant: eta2 <= 1, infeasible
  Thresholds bad = eta_thresholds(1.0, 1, 1.0, 0.5, 100.0, 0);
  CHECK(bad.eta2 <= 1.0);
  CHECK_FALSE(bad.feasible);
}

TEST_CASE("feasibility report JSON", "[localization]") {
  Thresholds th = eta_thresholds(1.0 / 1024, 2, 1.0, 0.35, 2.0, 0, 1, 1, 1.0);
  auto j = feasibility_json(th);
  CHECK(j["eta1"].get<double>() == th.eta1);
  CHECK(j["inequalities"].size() == 2);
  for (const auto& e : j["inequalities"]) {
    CHECK(e["margin"].get<double>() ==
          Approx(e["left"].get<double>() - e["right"].get<double>()));
  }
  CHECK(j["diagnostics"].contains("variant_log_eta1_lower_bound"));
  CHECK(j["diagnostics"].contains("variant_norris_eps_floor"));
}

TEST_CASE("hoeffding indicator", "[localization]") {
  SchemeMap psi = random_walk_scheme(1);
  NoiseLaw law = gaussian_law(1);
  PathRecord rec = simulate_path(psi, law, VectorXd::Zero(1), 0.125, 1.0, 19);
  SECTION("all chi = 1 gives 1 and all chi = 0 gives 0") {
    PathRecord r1 = rec;
    std::fill(r1.chi.begin(), r1.chi.end(), 1);
    CHECK(hoeffding_indicator(r1, law.certificate.m_star));
    std::fill(r1.chi.begin(), r1.chi.end(), 0);
    CHECK_FALSE(hoeffding_indicator(r1, law.certificate.m_star));
  }
  SECTION("empirical failure probability is within the stated bound") {
    size_t n = 100'000;
    int bad = 0;
    double m = law.certificate.m_star;
    for (size_t p = 0; p < n; ++p) {
      PathRecord r = simulate_path(psi, law, VectorXd::Zero(1), 0.125, 1.0,
                                   derive_stream_seed(5150, p));
      if (!hoeffding_indicator(r, m)) ++bad;
    }
    double rate = static_cast<double>(bad) / n;
    double bound = std::exp(-m * m * 8 / 2.0);
    double se = std::sqrt(bound * (1 - bound) / n);
    CHECK(rate <= bound + 3 * se);
  }
}

TEST_CASE("theta weight basics", "[localization]") {
  SchemeMap psi = random_walk_scheme(1);
  NoiseLaw law = gaussian_law(1);
  double delta = 0.125;
  Thresholds th = eta_thresholds(delta, 1, 1.0, law.certificate.m_star, 1.0, 0);
  for (std::uint64_t seed : {3u, 5u, 8u, 13u}) {
    PathRecord rec = simulate_path(psi, law, VectorXd::Zero(1), delta, 1.0, seed);
    MalliavinBundle b = build_bundle(rec, psi, law, th.eta2, {}, true, true);
    double theta = theta_weight(rec, b, th);
    CHECK(theta >= 0.0);
    CHECK(theta <= 1.0);
    // any |Z| above eta2 kills the weight
    PathRecord rbig = rec;
    rbig.z[2](0) = th.eta2 + 0.5;
    CHECK(theta_weight(rbig, b, th) == 0.0);
    // recomputation is bit identical
    CHECK(theta_weight(rec, b, th) == theta);
  }
}

TEST_CASE("theta is 1 on all-plateau configurations", "[localization]") {
  SchemeMap psi = random_walk_scheme(1);
  NoiseLaw law = gaussian_law(1);
  double delta = 0.125;
  // generous thresholds; chi forced to 1 and small noises -> plateaus
  Thresholds th;
  th.eta1 = 1e6;
  th.eta2 = 10.0;
  th.delta = delta;
  th.m_star = law.certificate.m_star;
  psi.growth.reset();  // Neumann guard; the walk step Jacobian is the identity
  PathRecord rec = simulate_path(psi, law, VectorXd::Zero(1), delta, 1.0, 23);
  std::fill(rec.chi.begin(), rec.chi.end(), 1);
  for (auto& z : rec.z) z(0) = 0.1;
  MalliavinBundle b = build_bundle(rec, psi, law, 0.0, {}, true, true);
  b.flows = flow_pair(rec, psi, th.eta2);
  CHECK(theta_weight(rec, b, th) == 1.0);
}

namespace {

double recompute_theta(const PathRecord& rec, const SchemeMap& psi, const NoiseLaw& law,
                       const Thresholds& th) {
  PathRecord r = rec;
  // refresh states from the (possibly perturbed) noises
  VectorXd cur = r.x0, next(psi.dim_x());
  for (int k = 1; k <= r.steps; ++k) {
    psi.step_into(cur, (k - 1) * r.delta, r.z_arg(k), r.delta, next);
    cur = next;
    r.x[static_cast<size_t>(k)] = cur;
  }
  MalliavinBundle b = build_bundle(r, psi, law, th.eta2, {}, true, true);
  return theta_weight(r, b, th);
}

}  // namespace

TEST_CASE("theta derivative against replay finite differences", "[localization]") {
  SchemeMap psi = quadratic_scheme();
  NoiseLaw law = gaussian_law(1);
  double delta = 0.25;
  int steps = 4;
  for (std::uint64_t seed : {2u, 7u, 11u, 21u}) {
    PathRecord rec = simulate_path(psi, law, VectorXd::Ones(1), delta, steps * delta, seed);
    MalliavinBundle b = build_bundle(rec, psi, law, 3.0, {}, true, true);
    if (b.cov.singular || !b.flows.valid[static_cast<size_t>(steps)]) continue;
    double g = b.flows.forward.back().determinant();
    g = g * g;
    double a_val = g * b.cov.det_gamma;
    // place A = G det gamma on the bridge of Psi_eta1 and pick eta2 so the
    // largest noise sits on its bridge
    Thresholds th;
    th.delta = delta;
    th.m_star = law.certificate.m_star;
    th.eta1 = a_val + 0.25;
    if (th.eta1 <= 1.0) continue;
    double zmax = 0;
    for (const auto& z : rec.z) zmax = std::max(zmax, z.norm());
    th.eta2 = std::max(1.05, zmax + 0.2);
    b.flows = flow_pair(rec, psi, th.eta2);
    if (!b.flows.valid[static_cast<size_t>(steps)]) continue;
    MatrixXd dth = theta_derivative(rec, b, th);
    double theta0 = theta_weight(rec, b, th);
    if (theta0 == 0.0) continue;
    for (int w = 1; w <= steps; ++w) {
      if (!rec.chi[static_cast<size_t>(w - 1)]) {
        CHECK(dth(w - 1, 0) == 0.0);
        continue;
      }
      double eps = 1e-6;
      PathRecord up = rec, dn = rec;
      up.u[static_cast<size_t>(w - 1)](0) += eps;
      dn.u[static_cast<size_t>(w - 1)](0) -= eps;
      // Z is defined from the split; keep it in sync for the eta2 factor
      up.z[static_cast<size_t>(w - 1)](0) = up.u[static_cast<size_t>(w - 1)](0) / std::sqrt(delta);
      dn.z[static_cast<size_t>(w - 1)](0) = dn.u[static_cast<size_t>(w - 1)](0) / std::sqrt(delta);
      double fd = (recompute_theta(up, psi, law, th) - recompute_theta(dn, psi, law, th)) /
                  (2 * eps);
      CHECK(dth(w - 1, 0) == Approx(fd).epsilon(1e-3).margin(1e-8));
    }
  }
}

TEST_CASE("theta derivative vanishes on plateaus", "[localization]") {
  SchemeMap psi = random_walk_scheme(1);
  psi.growth.reset();
  NoiseLaw law = gaussian_law(1);
  double delta = 0.25;
  Thresholds th;
  th.delta = delta;
  th.m_star = law.certificate.m_star;
  th.eta1 = 1e8;
  th.eta2 = 50.0;
  PathRecord rec = simulate_path(psi, law, VectorXd::Zero(1), delta, 1.0, 31);
  MalliavinBundle b = build_bundle(rec, psi, law, th.eta2, {}, true, true);
  if (!b.cov.singular) {
    MatrixXd dth = theta_derivative(rec, b, th);
    CHECK(dth.cwiseAbs().maxCoeff() == 0.0);
  }
}

TEST_CASE("theta derivative scales with a custom weight", "[localization]") {
  SchemeMap psi = quadratic_scheme();
  NoiseLaw law = gaussian_law(1);
  double delta = 0.25;
  int steps = 4;
  double a = 2.0;  // scaled weight a*G shifts the Psi_eta1 argument
  for (std::uint64_t seed : {2u, 7u, 11u, 21u, 31u}) {
    PathRecord rec = simulate_path(psi, law, VectorXd::Ones(1), delta, steps * delta, seed);
    MalliavinBundle b = build_bundle(rec, psi, law, 3.0, {}, true, true);
    if (b.cov.singular || !b.flows.valid[static_cast<size_t>(steps)]) continue;
    double det_flow = b.flows.forward.back().determinant();
    double g0 = det_flow * det_flow;
    MatrixXd dg0(steps, 1);
    for (int w = 1; w <= steps; ++w)
      dg0(w - 1, 0) = 2.0 * g0 * (b.flows.inverse.back() * b.dxdot[static_cast<size_t>(w - 1)]).trace();
    Thresholds th;
    th.delta = delta;
    th.m_star = law.certificate.m_star;
    th.eta1 = a * g0 * b.cov.det_gamma + 0.25;  // bridge configuration for a G
    if (th.eta1 <= 1.0) continue;
    double zmax = 0;
    for (const auto& z : rec.z) zmax = std::max(zmax, z.norm());
    th.eta2 = std::max(1.05, zmax + 0.5);
    b.flows = flow_pair(rec, psi, th.eta2);
    if (!b.flows.valid[static_cast<size_t>(steps)]) continue;
    MatrixXd dth = theta_derivative(rec, b, th, {{a * g0, MatrixXd(a * dg0)}});
    // replay finite difference of theta with the scaled weight
    auto recompute = [&](PathRecord r) {
      VectorXd cur = r.x0, nxt(1);
      for (int k = 1; k <= r.steps; ++k) {
        psi.step_into(cur, (k - 1) * r.delta, r.z_arg(k), r.delta, nxt);
        cur = nxt;
        r.x[static_cast<size_t>(k)] = cur;
      }
      MalliavinBundle bb = build_bundle(r, psi, law, th.eta2, {}, true, true);
      double df = bb.flows.forward.back().determinant();
      return theta_weight(r, bb, th, a * df * df);
    };
    for (int w = 1; w <= steps; ++w) {
      if (!rec.chi[static_cast<size_t>(w - 1)]) continue;
      double eps = 1e-6;
      PathRecord up = rec, dn = rec;
      up.u[static_cast<size_t>(w - 1)](0) += eps;
      dn.u[static_cast<size_t>(w - 1)](0) -= eps;
      up.z[static_cast<size_t>(w - 1)](0) = up.u[static_cast<size_t>(w - 1)](0) / std::sqrt(delta);
      dn.z[static_cast<size_t>(w - 1)](0) = dn.u[static_cast<size_t>(w - 1)](0) / std::sqrt(delta);
      double fd = (recompute(up) - recompute(dn)) / (2 * eps);
      CHECK(dth(w - 1, 0) == Catch::Approx(fd).epsilon(2e-3).margin(1e-8));
    }
  }
}
