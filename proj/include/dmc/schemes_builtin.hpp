#pragma once

#include <cmath>
#include <string>

#include "dmc/scheme.hpp"

namespace dmc {

// Builtin scheme maps used by the experiments and tests.

//! psi = x + z (d = N), the random walk.
inline SchemeMap random_walk_scheme(int d = 1) {
  SchemeMap m = SchemeMap::from_closure(
      "random-walk", d, d, kMaxJetOrder,
      [d]<class S>(std::span<const S> x, const S&, std::span<const S> z, const S&,
                   std::span<S> out) {
        for (int i = 0; i < d; ++i) out[i] = x[i] + z[i];
      });
  m.growth = GrowthMeta{1.0, 0, 1.0, 0};
  return m;
}

//! d = N = 1 map with a quadratic drift term: psi = x + z + (x^2/2) y.
inline SchemeMap quadratic_scheme() {
  return SchemeMap::from_closure(
      "quadratic", 1, 1, kMaxJetOrder,
      []<class S>(std::span<const S> x, const S&, std::span<const S> z, const S& y,
                  std::span<S> out) { out[0] = x[0] + z[0] + 0.5 * x[0] * x[0] * y; });
}

//! Deterministic d = 1 map psi = x (1 + y); the tangent flow has the closed
//! form (1+delta)^(T/delta).
inline SchemeMap geometric_growth_scheme() {
  return SchemeMap::from_closure(
      "geometric-growth", 1, 1, kMaxJetOrder,
      []<class S>(std::span<const S> x, const S&, std::span<const S>, const S& y,
                  std::span<S> out) { out[0] = x[0] * (1.0 + y); });
}

//! Euler map of the kinetic system dX1 = b dt + sigma dW, dX2 = X1 dt, with
//! scalar coefficient closures b(x1,t), sigma(x1,t) generic over jet levels.
template <class B, class Sg>
SchemeMap kinetic_scheme(std::string id, B b, Sg sigma, std::optional<GrowthMeta> growth = {}) {
  Field v0 = make_field(2, kMaxJetOrder,
                        [b]<class S>(std::span<const S> x, const S& t, std::span<S> out) {
                          out[0] = b(x[0], t);
                          out[1] = x[0];
                        });
  Field v1 = make_field(2, kMaxJetOrder,
                        [sigma]<class S>(std::span<const S> x, const S& t, std::span<S> out) {
                          out[0] = sigma(x[0], t);
                          out[1] = S(0.0);
                        });
  SchemeMap m = euler_scheme_from_fields(std::move(id), v0, {v1});
  m.growth = growth;
  return m;
}

//! Flat kinetic map: b = 0, sigma = 1.
inline SchemeMap kinetic_flat_scheme() {
  return kinetic_scheme(
      "kinetic-flat", []<class S>(const S&, const S&) { return S(0.0); },
      []<class S>(const S&, const S&) { return S(1.0); }, GrowthMeta{1.0, 0, 1.0, 0});
}

//! Kinetic map with b = -x1/2, sigma = 1 (damped position).
inline SchemeMap kinetic_ou_scheme() {
  return kinetic_scheme(
      "kinetic-ou", []<class S>(const S& x, const S&) { return -0.5 * x; },
      []<class S>(const S&, const S&) { return S(1.0); }, GrowthMeta{1.0, 0, 1.5, 1});
}

//! Kinetic map with sigma(x1) = x1: the bracket fields vanish on x1 = 0.
inline SchemeMap kinetic_sigma_linear_scheme() {
  return kinetic_scheme(
      "kinetic-sigma-linear", []<class S>(const S&, const S&) { return S(0.0); },
      []<class S>(const S& x, const S&) { return x; });
}

//! Smooth non-flat kinetic map used by tests: b = sin(1.3 x), sigma = 1 + sin(0.7x+0.3t)/2.
inline SchemeMap kinetic_smooth_scheme() {
  return kinetic_scheme(
      "kinetic-smooth",
      []<class S>(const S& x, const S&) { return sin(1.3 * x); },
      []<class S>(const S& x, const S& t) { return 1.0 + 0.5 * sin(0.7 * x + 0.3 * t); },
      GrowthMeta{2.0, 0, 2.0, 1});
}

//! Cascade of iterated partial sums: state (S0,...,Sh), S0 += z and each
//! S_j += y * S_{j-1} with the already-updated S_{j-1}; N = 1, d = h+1.
inline SchemeMap iterated_sums_scheme(int h) {
  const int d = h + 1;
  return SchemeMap::from_closure(
      "iterated-sums", d, 1, kMaxJetOrder,
      [d]<class S>(std::span<const S> x, const S&, std::span<const S> z, const S& y,
                   std::span<S> out) {
        out[0] = x[0] + z[0];
        for (int j = 1; j < d; ++j) out[j] = x[j] + y * out[j - 1];
      });
}

//! Scheme registry for the harness config.
inline SchemeMap make_scheme(const std::string& id, int dim = 1) {
  if (id == "random-walk") return random_walk_scheme(dim);
  if (id == "quadratic") return quadratic_scheme();
  if (id == "geometric-growth") return geometric_growth_scheme();
  if (id == "kinetic-flat") return kinetic_flat_scheme();
  if (id == "kinetic-ou") return kinetic_ou_scheme();
  if (id == "kinetic-sigma-linear") return kinetic_sigma_linear_scheme();
  if (id == "kinetic-smooth") return kinetic_smooth_scheme();
  if (id == "iterated-sums") return iterated_sums_scheme(dim - 1);
  throw ConfigError("unknown scheme: " + id);
}

}  // namespace dmc
