#pragma once

#include <cmath>
#include <limits>
#include <ostream>
#include <vector>

#include "dmc/linalg.hpp"
#include "dmc/noise.hpp"
#include "dmc/scheme.hpp"

namespace dmc {

// Discrete Malliavin calculus along one stored path: derivatives of X_T in the
// smooth noise directions (t,i), the delta-weighted covariance matrix, the
// divergence weights from the bump log-gradient, the Ornstein-Uhlenbeck image
// of X_T, Sobolev norms up to order 2, and the order-1 integration-by-parts
// weight.
//
// Direction indices are a = (w-1)*N + i for grid step w in 1..steps and noise
// coordinate i in 0..N-1.

struct CovarianceResult {
  MatrixXd sigma;
  MatrixXd gamma;
  double det_sigma = 0.0;
  double det_gamma = std::numeric_limits<double>::infinity();
  bool singular = true;
};

struct MalliavinBundle {
  double delta = 0.0;
  int steps = 0;
  int noise_dim = 0;
  int state_dim = 0;

  std::vector<VectorXd> dx;    // nn() entries, derivative of X_T per direction
  std::vector<VectorXd> ddx;   // nn()*nn() entries when second order was built
  std::vector<MatrixXd> dxdot; // nn() entries, derivative of the tangent flow at T
  MatrixXd dgamma;             // steps x N
  CovarianceResult cov;
  VectorXd lx;
  FlowPair flows;
  double theta = 1.0;

  int nn() const { return steps * noise_dim; }
  int dir(int w, int i) const { return (w - 1) * noise_dim + i; }
  bool has_second() const { return !ddx.empty(); }
  const VectorXd& ddx_at(int a, int b) const {
    return ddx[static_cast<size_t>(a) * static_cast<size_t>(nn()) + static_cast<size_t>(b)];
  }
};

//! Resource cap for the second-derivative tensor (its memory is
//! (steps*N)^2 * d doubles).
struct MalliavinCaps {
  int max_steps = 64;
  int max_noise_dim = 4;
};

namespace detail {

inline void check_caps(const PathRecord& rec, int noise_dim, const MalliavinCaps& caps) {
  if (rec.steps > caps.max_steps || noise_dim > caps.max_noise_dim)
    throw ResourceCapError("second-derivative tensor needs " + std::to_string(rec.steps) +
                           " steps x " + std::to_string(noise_dim) +
                           " noise dims, above the configured cap (" +
                           std::to_string(caps.max_steps) + ", " +
                           std::to_string(caps.max_noise_dim) + ")");
}

}  // namespace detail

//! Forward recursion for D_{(w,i)} X_T:
//!   new direction at step k:  chi_k * dpsi/dz_i
//!   old directions:           grad_x psi * previous value
inline std::vector<VectorXd> first_derivatives(const PathRecord& rec, const SchemeMap& psi) {
  const int n = psi.dim_z();
  std::vector<VectorXd> cur;
  cur.reserve(static_cast<size_t>(rec.steps) * static_cast<size_t>(n));
  for (int k = 1; k <= rec.steps; ++k) {
    const VectorXd& xp = rec.x[static_cast<size_t>(k - 1)];
    double t = (k - 1) * rec.delta;
    MatrixXd j = psi.grad_x(xp, t, rec.z_arg(k), rec.delta);
    for (auto& v : cur) v = j * v;
    MatrixXd zc = psi.dz(xp, t, rec.z_arg(k), rec.delta);
    double chi = rec.chi[static_cast<size_t>(k - 1)];
    for (int i = 0; i < n; ++i) cur.push_back(chi * zc.col(i));
  }
  return cur;
}

//! Joint first/second-derivative recursion; also propagates the derivative of
//! the tangent flow (needed by the localization weight's derivative).
struct PathDerivatives {
  std::vector<VectorXd> dx;
  std::vector<VectorXd> ddx;     // row-major (a,b)
  std::vector<MatrixXd> dxdot;   // derivative of the flow at T per direction
};

inline PathDerivatives second_derivatives(const PathRecord& rec, const SchemeMap& psi,
                                          const MalliavinCaps& caps = {},
                                          bool with_flow_derivative = false) {
  const int n = psi.dim_z();
  const int d = psi.dim_x();
  detail::check_caps(rec, n, caps);
  const int nn = rec.steps * n;
  PathDerivatives out;
  out.dx.reserve(static_cast<size_t>(nn));
  out.ddx.assign(static_cast<size_t>(nn) * static_cast<size_t>(nn), VectorXd::Zero(d));
  if (with_flow_derivative) out.dxdot.assign(static_cast<size_t>(nn), MatrixXd::Zero(d, d));
  MatrixXd flow = MatrixXd::Identity(d, d);

  auto idx = [nn](int a, int b) {
    return static_cast<size_t>(a) * static_cast<size_t>(nn) + static_cast<size_t>(b);
  };

  for (int k = 1; k <= rec.steps; ++k) {
    const VectorXd& xp = rec.x[static_cast<size_t>(k - 1)];
    double t = (k - 1) * rec.delta;
    const VectorXd& za = rec.z_arg(k);
    double chi = rec.chi[static_cast<size_t>(k - 1)];
    MatrixXd j = psi.grad_x(xp, t, za, rec.delta);
    MatrixXd zc = psi.dz(xp, t, za, rec.delta);
    std::vector<MatrixXd> dzgx = psi.dz_grad_x(xp, t, za, rec.delta);
    std::vector<MatrixXd> ddz = psi.dz2(xp, t, za, rec.delta);

    const int old_nn = (k - 1) * n;
    // directional derivatives of grad_x psi along each old direction
    std::vector<MatrixXd> jdir(static_cast<size_t>(old_nn));
    for (int a = 0; a < old_nn; ++a)
      jdir[static_cast<size_t>(a)] = psi.grad_x_dir(xp, t, za, rec.delta, out.dx[static_cast<size_t>(a)]);

    // second derivatives: old-old pairs, then pairs with the new directions
    for (int a = old_nn - 1; a >= 0; --a) {
      for (int b = old_nn - 1; b >= 0; --b) {
        VectorXd& cell = out.ddx[idx(a, b)];
        cell = j * cell + jdir[static_cast<size_t>(a)] * out.dx[static_cast<size_t>(b)];
      }
    }
    for (int i = 0; i < n; ++i) {
      int b_new = old_nn + i;
      for (int a = 0; a < old_nn; ++a) {
        // mixed pair: both orderings reduce to chi * d(grad_x psi)/dz_i * D_a X_{k-1}
        VectorXd src = chi * dzgx[static_cast<size_t>(i)] * out.dx[static_cast<size_t>(a)];
        out.ddx[idx(a, b_new)] = src;
        out.ddx[idx(b_new, a)] = src;
      }
      for (int l = 0; l <= i; ++l) {
        int a_new = old_nn + l;
        VectorXd src = chi * ddz[static_cast<size_t>(l)].col(i);
        out.ddx[idx(a_new, b_new)] = src;
        out.ddx[idx(b_new, a_new)] = src;
      }
    }

    if (with_flow_derivative) {
      for (int a = 0; a < old_nn; ++a)
        out.dxdot[static_cast<size_t>(a)] =
            j * out.dxdot[static_cast<size_t>(a)] + jdir[static_cast<size_t>(a)] * flow;
      for (int i = 0; i < n; ++i)
        out.dxdot[static_cast<size_t>(old_nn + i)] = chi * dzgx[static_cast<size_t>(i)] * flow;
    }
    flow = j * flow;

    // first derivatives last (the sources above use the step-(k-1) values)
    for (auto& v : out.dx) v = j * v;
    for (int i = 0; i < n; ++i) out.dx.push_back(chi * zc.col(i));
  }
  return out;
}

//! D_{(t,i)} Gamma_t = delta^{-1/2} chi_t d/dz_i log bump(r*/2, delta^{-1/2} U_t - z*_t).
inline MatrixXd gamma_weights(const PathRecord& rec, double r_star, const VectorXd& z_star) {
  const int n = rec.z.empty() ? 0 : static_cast<int>(rec.z[0].size());
  MatrixXd out = MatrixXd::Zero(rec.steps, n);
  double isq = 1.0 / std::sqrt(rec.delta);
  for (int k = 1; k <= rec.steps; ++k) {
    if (!rec.chi[static_cast<size_t>(k - 1)]) continue;
    VectorXd w = isq * rec.u[static_cast<size_t>(k - 1)] - z_star;
    out.row(k - 1) = isq * bump_log_gradient(0.5 * r_star, w).transpose();
  }
  return out;
}

//! sigma = delta * sum_a dx_a dx_a^T; gamma = sigma^{-1}; det gamma = 1/det sigma.
//! |det sigma| < 1e-300 or a failed LU marks the singular state
//! (det gamma = +infinity, consumed by the localization weight as Theta = 0).
inline CovarianceResult covariance(const std::vector<VectorXd>& dx, double delta) {
  CovarianceResult out;
  if (dx.empty()) return out;
  const int d = static_cast<int>(dx[0].size());
  out.sigma = MatrixXd::Zero(d, d);
  for (const auto& v : dx) out.sigma.noalias() += v * v.transpose();
  out.sigma *= delta;
  LuInverse lu = lu_inverse(out.sigma);
  out.det_sigma = lu.det;
  if (!lu.invertible || std::abs(lu.det) < 1e-300) return out;
  out.gamma = std::move(lu.inverse);
  out.det_gamma = 1.0 / lu.det;
  out.singular = false;
  return out;
}

//! L X_T = -delta * sum_{t,i} ( D_{(t,i)} D_{(t,i)} X_T + D_{(t,i)} X_T * D_{(t,i)} Gamma_t ).
inline VectorXd ou_apply(const MalliavinBundle& b) {
  if (!b.has_second()) throw EstimatorError("ou_apply needs second derivatives");
  VectorXd acc = VectorXd::Zero(b.state_dim);
  for (int w = 1; w <= b.steps; ++w)
    for (int i = 0; i < b.noise_dim; ++i) {
      int a = b.dir(w, i);
      acc += b.ddx_at(a, a) + b.dx[static_cast<size_t>(a)] * b.dgamma(w - 1, i);
    }
  return -b.delta * acc;
}

//! Squared (1,q) seminorm: sum_{j<=q} delta^j sum_{|alpha|=j} |D_alpha X_T|^2.
inline double sobolev_seminorm_sq(const MalliavinBundle& b, int q) {
  if (q < 0 || q > 2) throw EstimatorError("sobolev norms support q <= 2 only");
  double s = 0.0;
  if (q >= 1)
    for (const auto& v : b.dx) s += b.delta * v.squaredNorm();
  if (q == 2) {
    if (!b.has_second()) throw EstimatorError("q = 2 needs second derivatives");
    double s2 = 0.0;
    for (const auto& v : b.ddx) s2 += v.squaredNorm();
    s += b.delta * b.delta * s2;
  }
  return s;
}

//! Full norm: |X_T|^2 plus the (1,q) seminorm; q = 0 gives |X_T|.
inline double sobolev_norm(const MalliavinBundle& b, const VectorXd& x_T, int q) {
  return std::sqrt(x_T.squaredNorm() + sobolev_seminorm_sq(b, q));
}

//! Order-1 integration-by-parts weight for F = X_T:
//!   E[ d/dx_h phi(F) G ] = E[ phi(F) H(F,G)[h] ].
//! The caller supplies G and its derivative table DG (steps x N); for constant
//! G pass DG = 0. D gamma is assembled through D sigma from the first and
//! second derivative tensors.
inline double ibp_weight_order1(const MalliavinBundle& b, double g, const MatrixXd& dg, int h) {
  if (b.cov.singular)
    throw EstimatorError("ibp weight: singular covariance (localize first)");
  if (!b.has_second()) throw EstimatorError("ibp weight needs second derivatives");
  const MatrixXd& gamma = b.cov.gamma;
  const int nn = b.nn();

  double acc = g * (gamma.row(h) * b.lx)(0);
  for (int w = 1; w <= b.steps; ++w) {
    for (int i = 0; i < b.noise_dim; ++i) {
      int a = b.dir(w, i);
      const VectorXd& dxa = b.dx[static_cast<size_t>(a)];
      // D_a sigma applied to u = gamma * dx_a
      VectorXd u = gamma * dxa;
      VectorXd v = VectorXd::Zero(b.state_dim);
      for (int bb = 0; bb < nn; ++bb) {
        const VectorXd& cross = b.ddx_at(a, bb);
        const VectorXd& dxb = b.dx[static_cast<size_t>(bb)];
        v += cross * (dxb.dot(u)) + dxb * (cross.dot(u));
      }
      v *= b.delta;
      acc -= b.delta * dg(w - 1, i) * (gamma.row(h) * dxa)(0);
      acc += b.delta * g * (gamma.row(h) * v)(0);
    }
  }
  return acc;
}

//! Convenience builder: derivatives, covariance, divergence weights and the
//! OU image for F = X_T. The eta2-guarded flow pair is computed only when
//! eta2 > 0 (its precondition involves the growth constants); flow
//! derivatives are included when `with_flow_derivative` (used by the
//! localization weight derivative).
inline MalliavinBundle build_bundle(const PathRecord& rec, const SchemeMap& psi,
                                    const NoiseLaw& law, double eta2,
                                    const MalliavinCaps& caps = {}, bool second = true,
                                    bool with_flow_derivative = false) {
  MalliavinBundle b;
  b.delta = rec.delta;
  b.steps = rec.steps;
  b.noise_dim = psi.dim_z();
  b.state_dim = psi.dim_x();
  if (second) {
    PathDerivatives pd = second_derivatives(rec, psi, caps, with_flow_derivative);
    b.dx = std::move(pd.dx);
    b.ddx = std::move(pd.ddx);
    b.dxdot = std::move(pd.dxdot);
  } else {
    b.dx = first_derivatives(rec, psi);
  }
  b.dgamma = gamma_weights(rec, law.certificate.r_star, law.z_star());
  b.cov = covariance(b.dx, rec.delta);
  if (eta2 > 0) b.flows = flow_pair(rec, psi, eta2);
  if (second) b.lx = ou_apply(b);
  return b;
}

//! Variation-of-constants form of the first derivatives, valid on paths where
//! the eta2 guard held at every step:
//!   D_{(w,i)} X_T = chi_w * flow_T * inverse_flow_w * dpsi/dz_i(step w).
inline std::vector<VectorXd> first_derivatives_closed_form(const PathRecord& rec,
                                                           const SchemeMap& psi,
                                                           const FlowPair& fp) {
  const int n = psi.dim_z();
  std::vector<VectorXd> out;
  out.reserve(static_cast<size_t>(rec.steps) * static_cast<size_t>(n));
  const MatrixXd& flow_T = fp.forward.back();
  for (int w = 1; w <= rec.steps; ++w) {
    if (!fp.valid[static_cast<size_t>(w)])
      throw EstimatorError("closed form needs the eta2 guard on every step");
    MatrixXd zc = psi.dz(rec.x[static_cast<size_t>(w - 1)], (w - 1) * rec.delta, rec.z_arg(w),
                         rec.delta);
    double chi = rec.chi[static_cast<size_t>(w - 1)];
    MatrixXd lead = flow_T * fp.inverse[static_cast<size_t>(w)];
    for (int i = 0; i < n; ++i) out.push_back(chi * lead * zc.col(i));
  }
  return out;
}

//! One-step Lie expansion residual for a field V: the exact difference between
//! the transported field value and its expansion in the bracket fields,
//!   R = grad_x psi^{-1} V(X_k, t_k) - V(X_{k-1}) - sqrt(delta) sum_i Z^i V^{[i]} - delta V^{[0]},
//! all evaluated at (X_{k-1}, t_{k-1}).
class LieExpansion {
 public:
  LieExpansion(const SchemeMap& psi, Field v) : psi_(psi), v_(std::move(v)) {
    if (v_.max_order() < 3) throw CapabilityError(3, v_.max_order(), "lie expansion");
    SchemeFields f = fields_from_scheme(psi);
    DrivingFields driving = f.driving();
    v0_ = extend_bracket(driving, v_, 0);
    for (int i = 1; i <= psi.dim_z(); ++i) vi_.push_back(extend_bracket(driving, v_, i));
  }

  VectorXd residual(const PathRecord& rec, int step, double eta2) const {
    if (rec.z[static_cast<size_t>(step - 1)].norm() >= eta2)
      throw EstimatorError("lie expansion residual needs a guarded step");
    const VectorXd& xp = rec.x[static_cast<size_t>(step - 1)];
    double tp = (step - 1) * rec.delta;
    MatrixXd j = psi_.grad_x(xp, tp, rec.z_arg(step), rec.delta);
    LuInverse lu = lu_inverse(j);
    if (!lu.invertible) throw EstimatorError("lie expansion residual: step Jacobian singular");
    VectorXd r = lu.inverse * v_(rec.x[static_cast<size_t>(step)], step * rec.delta);
    r -= v_(xp, tp);
    double sq = std::sqrt(rec.delta);
    const VectorXd& z = rec.z[static_cast<size_t>(step - 1)];
    for (size_t i = 0; i < vi_.size(); ++i) r -= sq * z(static_cast<int>(i)) * vi_[i](xp, tp);
    r -= rec.delta * v0_(xp, tp);
    return r;
  }

 private:
  SchemeMap psi_;
  Field v_;
  Field v0_;
  std::vector<Field> vi_;
};

//! One row of the bundle summary CSV keyed by path seed.
inline void write_bundle_summary_header(std::ostream& os) {
  os << "seed,det_gamma,lambda_min_sigma,theta,lx_norm\n";
}

inline void write_bundle_summary_row(std::ostream& os, std::uint64_t seed,
                                     const MalliavinBundle& b) {
  char buf[128];
  std::snprintf(buf, sizeof buf, "%llu,%.17g,%.17g,%.17g,%.17g\n",
                static_cast<unsigned long long>(seed), b.cov.det_gamma,
                b.cov.sigma.size() ? min_eigenvalue(b.cov.sigma) : 0.0, b.theta,
                b.lx.size() ? b.lx.norm() : 0.0);
  os << buf;
}

}  // namespace dmc
