#pragma once

#include <cmath>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "dmc/errors.hpp"
#include "dmc/linalg.hpp"
#include "dmc/rng.hpp"

namespace dmc {

// Lebesgue-lower-bounded noise laws: the smooth radial bump that certifies the
// lower bound, the splitting of Z into a smooth part U and a residual part V,
// and moment oracles.

//! Radial bump: 1 on |z| <= v, exp(1 - v^2/(v^2 - (|z|-v)^2)) on the shell
//! v < |z| < 2v, 0 beyond. C-infinity in z.
inline double bump_radial(double v, double r) {
  if (r <= v) return 1.0;
  if (r >= 2.0 * v) return 0.0;
  double s = r - v;
  return std::exp(1.0 - v * v / (v * v - s * s));
}

inline double bump(double v, const VectorXd& z) { return bump_radial(v, z.norm()); }

//! d/dr of log bump on the shell; 0 on the plateau and (by convention) beyond 2v.
inline double bump_log_radial_derivative(double v, double r) {
  if (r <= v || r >= 2.0 * v) return 0.0;
  double s = r - v;
  double den = v * v - s * s;
  return -2.0 * v * v * s / (den * den);
}

//! grad_z log bump; radial, so parallel to z.
inline VectorXd bump_log_gradient(double v, const VectorXd& z) {
  double r = z.norm();
  if (r <= v || r >= 2.0 * v || r == 0.0) return VectorXd::Zero(z.size());
  return (bump_log_radial_derivative(v, r) / r) * z;
}

namespace detail {

inline double adaptive_simpson(const std::function<double(double)>& f, double a, double b,
                               double fa, double fm, double fb, double whole, double tol,
                               int depth) {
  double m = 0.5 * (a + b);
  double lm = 0.5 * (a + m), rm = 0.5 * (m + b);
  double flm = f(lm), frm = f(rm);
  double left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
  double right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
  if (depth <= 0 || std::abs(left + right - whole) < 15.0 * tol)
    return left + right + (left + right - whole) / 15.0;
  return adaptive_simpson(f, a, m, fa, flm, fm, left, tol / 2, depth - 1) +
         adaptive_simpson(f, m, b, fm, frm, fb, right, tol / 2, depth - 1);
}

inline double integrate(const std::function<double(double)>& f, double a, double b, double tol) {
  double m = 0.5 * (a + b);
  double fa = f(a), fm = f(m), fb = f(b);
  double whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
  return adaptive_simpson(f, a, b, fa, fm, fb, whole, std::abs(whole) * tol + 1e-300, 48);
}

inline double unit_sphere_area(int n) {
  return 2.0 * std::pow(3.14159265358979323846, 0.5 * n) / std::tgamma(0.5 * n);
}

inline double ball_volume(int n, double radius) {
  return unit_sphere_area(n) / n * std::pow(radius, n);
}

}  // namespace detail

//! integral of bump(v, .) over R^N, by adaptive radial quadrature
//! (relative tolerance 1e-9).
inline double bump_integral(double v, int n) {
  double shell = detail::integrate(
      [v, n](double r) { return bump_radial(v, r) * std::pow(r, n - 1); }, v, 2.0 * v, 1e-9);
  double plateau = std::pow(v, n) / n;
  return detail::unit_sphere_area(n) * (plateau + shell);
}

//! (eps_star, r_star, z_star, m_star): the law dominates
//! eps_star * Lebesgue on the ball of radius r_star around z_star, and
//! m_star = eps_star * integral of bump(r_star/2).
struct SplitCertificate {
  double eps_star = 0.0;
  double r_star = 0.0;
  double m_star = 0.0;
  VectorXd z_star;
  bool enabled = false;
};

struct MomentEstimate {
  double value = 0.0;
  double std_error = 0.0;  // 0 when exact
  bool exact = false;
};

//! chi, U, V with delta^{1/2} Z = chi U + (1-chi) V holding bitwise: Z stores
//! the unscaled draw and U, V the same draw scaled by sqrt(delta).
struct SplitSample {
  int chi = 0;
  VectorXd u;
  VectorXd v;
  VectorXd z;
};

class NoiseLaw {
 public:
  std::string id;
  int dim = 1;
  SplitCertificate certificate;
  bool third_moment_zero = false;
  std::optional<double> bound_z_inf;  // a.s. bound on |Z|, when the law is bounded

  //! draw Z (centered, identity covariance)
  std::function<VectorXd(Rng&)> sample_z;
  //! density of the absolutely continuous component (includes its weight);
  //! empty when no closed form exists (splitting then stays disabled).
  std::function<double(const VectorXd&)> density_ac;
  //! draw the unscaled residual variable delta^{-1/2} V
  std::function<VectorXd(Rng&)> sample_residual;
  //! exact p-th absolute moment E|Z|^p when known
  std::function<std::optional<double>(double)> exact_abs_moment;
  //! per-time center of the certificate ball; builtins are constant
  std::function<VectorXd(double)> z_star_at;

  VectorXd z_star(double t = 0.0) const {
    return z_star_at ? z_star_at(t) : certificate.z_star;
  }
};

//! Recompute m_star from (eps_star, r_star) and check the stored value
//! (relative tolerance 1e-6). Throws CertificateError on mismatch.
inline void check_certificate(const NoiseLaw& law) {
  if (!law.certificate.enabled) return;
  double m = law.certificate.eps_star * bump_integral(0.5 * law.certificate.r_star, law.dim);
  if (std::abs(m - law.certificate.m_star) > 1e-6 * std::abs(m))
    throw CertificateError(law.id + ": stored m_star " + std::to_string(law.certificate.m_star) +
                           " disagrees with recomputed " + std::to_string(m));
  if (law.certificate.m_star <= 0.0 || law.certificate.m_star >= 1.0)
    throw CertificateError(law.id + ": m_star must lie in (0,1)");
}

//! Residual nonnegativity probe: density_ac - eps_star*bump >= 0 on a radial
//! grid plus random directions. Returns false when no closed-form density is
//! available (callers should warn and skip).
inline bool check_residual_nonnegative(const NoiseLaw& law, int n_probe = 512,
                                       std::uint64_t seed = 17) {
  if (!law.density_ac || !law.certificate.enabled) return false;
  Rng rng(seed);
  const auto& c = law.certificate;
  for (int k = 0; k < n_probe; ++k) {
    VectorXd dir(law.dim);
    for (int i = 0; i < law.dim; ++i) dir(i) = rng.gaussian();
    dir.normalize();
    double r = rng.uniform01() * c.r_star;
    VectorXd z = law.z_star() + r * dir;
    double resid = law.density_ac(z) - c.eps_star * bump(0.5 * c.r_star, z - law.z_star());
    if (resid < -1e-12) return false;
  }
  return true;
}

namespace detail {

inline VectorXd uniform_in_ball(int n, double radius, Rng& rng) {
  VectorXd dir(n);
  for (int i = 0; i < n; ++i) dir(i) = rng.gaussian();
  dir.normalize();
  double r = radius * std::pow(rng.uniform01(), 1.0 / n);
  return r * dir;
}

constexpr std::uint64_t kRejectionCap = 1'000'000;

//! sample the unscaled smooth part: density (eps*/m*) bump(r*/2, w - z*)
inline VectorXd sample_bump_part(const NoiseLaw& law, double t, Rng& rng) {
  const auto& c = law.certificate;
  VectorXd center = law.z_star(t);
  for (std::uint64_t k = 0; k < kRejectionCap; ++k) {
    VectorXd w = uniform_in_ball(law.dim, c.r_star, rng);
    if (rng.uniform01() < bump(0.5 * c.r_star, w)) return center + w;
  }
  throw CertificateError(law.id + ": rejection sampler for the smooth part stalled");
}

//! generic residual sampler: rejection of Z against 1 - eps* bump / density_ac
inline VectorXd sample_residual_generic(const NoiseLaw& law, double t, Rng& rng) {
  const auto& c = law.certificate;
  VectorXd center = law.z_star(t);
  for (std::uint64_t k = 0; k < kRejectionCap; ++k) {
    VectorXd z = law.sample_z(rng);
    double rho = law.density_ac(z);
    double cut = c.eps_star * bump(0.5 * c.r_star, z - center);
    if (cut <= 0.0) return z;
    double acc = 1.0 - cut / rho;
    if (acc < -1e-9)
      throw CertificateError(law.id + ": certificate dominates the density (acc < 0)");
    if (rng.uniform01() < acc) return z;
  }
  throw CertificateError(law.id + ": rejection sampler for the residual part stalled");
}

}  // namespace detail

//! Draw (chi, U, V, Z) for one grid time. The scheme consumes chi U + (1-chi) V
//! directly, so the splitting identity is exact in floating point.
inline SplitSample sample_split(const NoiseLaw& law, double delta, Rng& rng, double t = 0.0) {
  if (!law.certificate.enabled)
    throw CertificateError(law.id + ": law has no splitting certificate");
  SplitSample s;
  double sq = std::sqrt(delta);
  s.chi = rng.bernoulli(law.certificate.m_star) ? 1 : 0;
  VectorXd w = detail::sample_bump_part(law, t, rng);
  VectorXd r = law.sample_residual ? law.sample_residual(rng)
                                   : detail::sample_residual_generic(law, t, rng);
  s.u = sq * w;
  s.v = sq * r;
  s.z = s.chi ? w : r;
  return s;
}

//! frak-M_p = max(1, E|Z|^p); exact when the law provides an oracle, Monte
//! Carlo with standard error otherwise.
inline MomentEstimate moment(const NoiseLaw& law, double p, std::size_t n_samples = 200'000,
                             std::uint64_t seed = 2024) {
  if (p < 0) throw std::invalid_argument("moment order must be >= 0");
  MomentEstimate out;
  if (law.exact_abs_moment) {
    if (auto m = law.exact_abs_moment(p)) {
      out.value = std::max(1.0, *m);
      out.exact = true;
      return out;
    }
  }
  Rng rng(seed);
  double sum = 0, sum2 = 0;
  for (std::size_t k = 0; k < n_samples; ++k) {
    double m = std::pow(law.sample_z(rng).norm(), p);
    sum += m;
    sum2 += m * m;
  }
  double mean = sum / n_samples;
  double var = std::max(0.0, sum2 / n_samples - mean * mean);
  out.value = std::max(1.0, mean);
  out.std_error = std::sqrt(var / n_samples);
  return out;
}

// ---------------------------------------------------------------------------
// builtin laws

//! Standard Gaussian with certificate from the density lower bound on the
//! unit ball: eps* = (2 pi)^{-N/2} e^{-1/2}, r* = 1.
inline NoiseLaw gaussian_law(int n) {
  NoiseLaw law;
  law.id = "gaussian";
  law.dim = n;
  law.third_moment_zero = true;
  law.sample_z = [n](Rng& rng) {
    VectorXd z(n);
    for (int i = 0; i < n; ++i) z(i) = rng.gaussian();
    return z;
  };
  double norm_const = std::pow(2.0 * 3.14159265358979323846, -0.5 * n);
  law.density_ac = [norm_const](const VectorXd& z) {
    return norm_const * std::exp(-0.5 * z.squaredNorm());
  };
  law.certificate.eps_star = norm_const * std::exp(-0.5);
  law.certificate.r_star = 1.0;
  law.certificate.z_star = VectorXd::Zero(n);
  law.certificate.m_star = law.certificate.eps_star * bump_integral(0.5, n);
  law.certificate.enabled = true;
  law.exact_abs_moment = [n](double p) -> std::optional<double> {
    return std::pow(2.0, 0.5 * p) * std::tgamma(0.5 * (n + p)) / std::tgamma(0.5 * n);
  };
  return law;
}

//! Mixture of a uniform ball and symmetric axis atoms, built so that E[Z]=0,
//! Cov = I and all third moments vanish. Ball weight 1/2, radius a; atoms at
//! +-b e_i. Certificate: eps* = weight/vol(ball), r* = a.
inline NoiseLaw ball_atom_mixture_law(int n, double ball_radius = 1.5) {
  NoiseLaw law;
  law.id = "ball-atom-mixture";
  law.dim = n;
  law.third_moment_zero = true;
  const double p_ball = 0.5;
  const double a = ball_radius;
  double b2 = n * (1.0 - p_ball * a * a / (n + 2.0)) / (1.0 - p_ball);
  if (b2 <= 0) throw std::invalid_argument("ball radius too large for unit covariance");
  const double b = std::sqrt(b2);
  law.bound_z_inf = std::max(a, b);
  law.sample_z = [n, a, b](Rng& rng) {
    if (rng.bernoulli(0.5)) return detail::uniform_in_ball(n, a, rng);
    VectorXd z = VectorXd::Zero(n);
    int axis = static_cast<int>(rng.next_u64() % static_cast<std::uint64_t>(n));
    z(axis) = rng.bernoulli(0.5) ? b : -b;
    return z;
  };
  double vol = detail::ball_volume(n, a);
  law.density_ac = [n, a, p_ball, vol](const VectorXd& z) {
    return z.norm() <= a ? p_ball / vol : 0.0;
  };
  law.certificate.eps_star = p_ball / vol;
  law.certificate.r_star = a;
  law.certificate.z_star = VectorXd::Zero(n);
  law.certificate.m_star = law.certificate.eps_star * bump_integral(0.5 * a, n);
  law.certificate.enabled = true;
  // residual: atoms unchanged; ball part thinned by (1 - bump)
  law.sample_residual = [n, a, b](Rng& rng) {
    for (std::uint64_t k = 0; k < detail::kRejectionCap; ++k) {
      if (!rng.bernoulli(0.5)) {
        VectorXd z = VectorXd::Zero(n);
        int axis = static_cast<int>(rng.next_u64() % static_cast<std::uint64_t>(n));
        z(axis) = rng.bernoulli(0.5) ? b : -b;
        return z;
      }
      VectorXd z = detail::uniform_in_ball(n, a, rng);
      if (rng.uniform01() < 1.0 - bump(0.5 * a, z)) return z;
    }
    throw CertificateError("ball-atom-mixture: residual sampler stalled");
  };
  law.exact_abs_moment = [n, a, b, p_ball](double p) -> std::optional<double> {
    double ball = std::pow(a, p) * n / (n + p);
    return p_ball * ball + (1.0 - p_ball) * std::pow(b, p);
  };
  return law;
}

//! Product of uniforms on [-sqrt(3), sqrt(3)] (unit variance per coordinate);
//! bounded: |Z| <= sqrt(3 N). Certificate on the inscribed ball.
inline NoiseLaw bounded_uniform_law(int n) {
  NoiseLaw law;
  law.id = "bounded-uniform";
  law.dim = n;
  law.third_moment_zero = true;
  const double h = std::sqrt(3.0);
  law.bound_z_inf = h * std::sqrt(static_cast<double>(n));
  law.sample_z = [n, h](Rng& rng) {
    VectorXd z(n);
    for (int i = 0; i < n; ++i) z(i) = rng.uniform(-h, h);
    return z;
  };
  double dens = std::pow(1.0 / (2.0 * h), n);
  law.density_ac = [n, h, dens](const VectorXd& z) {
    for (int i = 0; i < n; ++i)
      if (std::abs(z(i)) > h) return 0.0;
    return dens;
  };
  law.certificate.eps_star = dens;
  law.certificate.r_star = h;
  law.certificate.z_star = VectorXd::Zero(n);
  law.certificate.m_star = dens * bump_integral(0.5 * h, n);
  law.certificate.enabled = true;
  law.sample_residual = [n, h](Rng& rng) {
    for (std::uint64_t k = 0; k < detail::kRejectionCap; ++k) {
      VectorXd z(n);
      for (int i = 0; i < n; ++i) z(i) = rng.uniform(-h, h);
      if (rng.uniform01() < 1.0 - bump(0.5 * h, z)) return z;
    }
    throw CertificateError("bounded-uniform: residual sampler stalled");
  };
  if (n == 1) {
    law.exact_abs_moment = [h](double p) -> std::optional<double> {
      return std::pow(h, p) / (p + 1.0);
    };
  }
  return law;
}

//! Look up a builtin law by id (harness config interface).
inline NoiseLaw make_law(const std::string& id, int dim) {
  if (id == "gaussian") return gaussian_law(dim);
  if (id == "ball-atom-mixture") return ball_atom_mixture_law(dim);
  if (id == "bounded-uniform") return bounded_uniform_law(dim);
  throw ConfigError("unknown noise law: " + id);
}

//! Empirical mean/covariance validation ("strict" construction mode):
//! |mean| and |Cov - I| entrywise within 3 standard errors on n samples.
struct MomentValidation {
  bool pass = true;
  double worst_z = 0.0;
};

inline MomentValidation validate_moments(const NoiseLaw& law, std::size_t n = 1'000'000,
                                         std::uint64_t seed = 99) {
  Rng rng(seed);
  int d = law.dim;
  VectorXd mean = VectorXd::Zero(d);
  MatrixXd cov = MatrixXd::Zero(d, d);
  std::vector<VectorXd> keep;
  for (std::size_t k = 0; k < n; ++k) {
    VectorXd z = law.sample_z(rng);
    mean += z;
    cov += z * z.transpose();
  }
  mean /= static_cast<double>(n);
  cov /= static_cast<double>(n);
  MomentValidation out;
  // SE of a mean entry is sqrt(var/n) = 1/sqrt(n); of a covariance entry at
  // most sqrt(E[z_i^2 z_j^2]/n), bounded crudely by M4.
  double m4 = moment(law, 4, 50'000, seed + 1).value;
  double se_mean = 1.0 / std::sqrt(static_cast<double>(n));
  double se_cov = std::sqrt(m4 / static_cast<double>(n));
  for (int i = 0; i < d; ++i) {
    out.worst_z = std::max(out.worst_z, std::abs(mean(i)) / se_mean);
    for (int j = 0; j < d; ++j) {
      double target = (i == j) ? 1.0 : 0.0;
      out.worst_z = std::max(out.worst_z, std::abs(cov(i, j) - target) / se_cov);
    }
  }
  out.pass = out.worst_z <= 3.0;
  return out;
}

}  // namespace dmc
