#pragma once

#include <cstdint>
#include <fstream>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dmc/errors.hpp"
#include "dmc/linalg.hpp"
#include "dmc/noise.hpp"
#include "dmc/rng.hpp"
#include "dmc/vectorfield.hpp"

namespace dmc {

// One-step map psi(x, t, z, y) driving X_{t+delta} = psi(X_t, t, sqrt(delta) Z, delta),
// with derivative oracles up to joint order 2 in (x, z) and order 1 in y, the
// derived drift/diffusion fields, path simulation on the integer-step grid,
// and tangent / inverse tangent flows.

namespace detail {

struct SchemeImpl {
  virtual ~SchemeImpl() = default;
  virtual void eval(std::span<const double> x, const double& t, std::span<const double> z,
                    const double& y, std::span<double> out) const = 0;
  virtual void eval(std::span<const D1> x, const D1& t, std::span<const D1> z, const D1& y,
                    std::span<D1> out) const = 0;
  virtual void eval(std::span<const D2> x, const D2& t, std::span<const D2> z, const D2& y,
                    std::span<D2> out) const = 0;
  virtual void eval(std::span<const D3> x, const D3& t, std::span<const D3> z, const D3& y,
                    std::span<D3> out) const = 0;
  virtual void eval(std::span<const D4> x, const D4& t, std::span<const D4> z, const D4& y,
                    std::span<D4> out) const = 0;
};

template <class Derived>
struct SchemeImplBase : SchemeImpl {
  void eval(std::span<const double> x, const double& t, std::span<const double> z,
            const double& y, std::span<double> out) const override {
    static_cast<const Derived*>(this)->template call<double>(x, t, z, y, out);
  }
  void eval(std::span<const D1> x, const D1& t, std::span<const D1> z, const D1& y,
            std::span<D1> out) const override {
    static_cast<const Derived*>(this)->template call<D1>(x, t, z, y, out);
  }
  void eval(std::span<const D2> x, const D2& t, std::span<const D2> z, const D2& y,
            std::span<D2> out) const override {
    static_cast<const Derived*>(this)->template call<D2>(x, t, z, y, out);
  }
  void eval(std::span<const D3> x, const D3& t, std::span<const D3> z, const D3& y,
            std::span<D3> out) const override {
    static_cast<const Derived*>(this)->template call<D3>(x, t, z, y, out);
  }
  void eval(std::span<const D4> x, const D4& t, std::span<const D4> z, const D4& y,
            std::span<D4> out) const override {
    static_cast<const Derived*>(this)->template call<D4>(x, t, z, y, out);
  }
};

template <class F>
struct ClosureScheme final : SchemeImplBase<ClosureScheme<F>> {
  F f;
  int d, n;
  ClosureScheme(F fn, int dim_x, int dim_z) : f(std::move(fn)), d(dim_x), n(dim_z) {}
  template <class S>
  void call(std::span<const S> x, const S& t, std::span<const S> z, const S& y,
            std::span<S> out) const {
    f(x, t, z, y, out);
  }
};

}  // namespace detail

//! Polynomial-growth constants of the derivative bounds: (D, p) for the mixed
//! first/second derivatives in (x, z), (D_r, p_r) for order-r blocks.
struct GrowthMeta {
  double big_d = 1.0;
  int p = 0;
  double big_d_r = 1.0;
  int p_r = 0;
};

class SchemeMap {
 public:
  SchemeMap() = default;

  template <class F>
  static SchemeMap from_closure(std::string id, int dim_x, int dim_z, int max_order, F&& f) {
    SchemeMap m;
    m.id_ = std::move(id);
    m.d_ = dim_x;
    m.n_ = dim_z;
    m.max_order_ = std::min(max_order, kMaxJetOrder);
    m.impl_ = std::make_shared<detail::ClosureScheme<std::decay_t<F>>>(std::forward<F>(f),
                                                                       dim_x, dim_z);
    m.check_fixed_point();
    return m;
  }

  const std::string& id() const { return id_; }
  int dim_x() const { return d_; }
  int dim_z() const { return n_; }
  int max_order() const { return max_order_; }
  const detail::SchemeImpl& impl() const { return *impl_; }
  std::shared_ptr<const detail::SchemeImpl> impl_ptr() const { return impl_; }

  std::optional<GrowthMeta> growth;

  // optional analytic fast paths; AD jets are the default
  std::function<void(const VectorXd&, double, const VectorXd&, double, MatrixXd&)> grad_x_fn;
  std::function<void(const VectorXd&, double, const VectorXd&, double, MatrixXd&)> dz_fn;

  VectorXd step(const VectorXd& x, double t, const VectorXd& z, double y) const {
    VectorXd out(d_);
    step_into(x, t, z, y, out);
    return out;
  }

  void step_into(const VectorXd& x, double t, const VectorXd& z, double y, VectorXd& out) const {
    impl_->eval(std::span<const double>(x.data(), static_cast<size_t>(d_)), t,
                std::span<const double>(z.data(), static_cast<size_t>(n_)), y,
                std::span<double>(out.data(), static_cast<size_t>(d_)));
  }

  //! Jacobian in x (d x d).
  MatrixXd grad_x(const VectorXd& x, double t, const VectorXd& z, double y) const {
    MatrixXd j(d_, d_);
    if (grad_x_fn) {
      grad_x_fn(x, t, z, y, j);
      return j;
    }
    require_order(1, "grad_x");
    std::vector<D1> xd(to_jets<D1>(x)), zd(to_jets<D1>(z)), out(static_cast<size_t>(d_));
    for (int c = 0; c < d_; ++c) {
      xd[static_cast<size_t>(c)].d = 1.0;
      impl_->eval(std::span<const D1>(xd), D1(t), std::span<const D1>(zd), D1(y),
                  std::span<D1>(out));
      for (int i = 0; i < d_; ++i) j(i, c) = out[static_cast<size_t>(i)].d;
      xd[static_cast<size_t>(c)].d = 0.0;
    }
    return j;
  }

  //! First z-derivatives (d x N).
  MatrixXd dz(const VectorXd& x, double t, const VectorXd& z, double y) const {
    MatrixXd j(d_, n_);
    if (dz_fn) {
      dz_fn(x, t, z, y, j);
      return j;
    }
    require_order(1, "dz");
    std::vector<D1> xd(to_jets<D1>(x)), zd(to_jets<D1>(z)), out(static_cast<size_t>(d_));
    for (int c = 0; c < n_; ++c) {
      zd[static_cast<size_t>(c)].d = 1.0;
      impl_->eval(std::span<const D1>(xd), D1(t), std::span<const D1>(zd), D1(y),
                  std::span<D1>(out));
      for (int i = 0; i < d_; ++i) j(i, c) = out[static_cast<size_t>(i)].d;
      zd[static_cast<size_t>(c)].d = 0.0;
    }
    return j;
  }

  //! y-derivative (d).
  VectorXd dy(const VectorXd& x, double t, const VectorXd& z, double y) const {
    require_order(1, "dy");
    std::vector<D1> xd(to_jets<D1>(x)), zd(to_jets<D1>(z)), out(static_cast<size_t>(d_));
    impl_->eval(std::span<const D1>(xd), D1(t), std::span<const D1>(zd), D1(y, 1.0),
                std::span<D1>(out));
    VectorXd r(d_);
    for (int i = 0; i < d_; ++i) r(i) = out[static_cast<size_t>(i)].d;
    return r;
  }

  //! Second z-derivatives d^2 psi / dz_i dz_j, returned per i as a d x N block.
  std::vector<MatrixXd> dz2(const VectorXd& x, double t, const VectorXd& z, double y) const {
    require_order(2, "dz2");
    std::vector<MatrixXd> blocks(static_cast<size_t>(n_), MatrixXd(d_, n_));
    std::vector<D2> xd(to_jets<D2>(x)), zd(to_jets<D2>(z)), out(static_cast<size_t>(d_));
    for (int i = 0; i < n_; ++i) {
      zd[static_cast<size_t>(i)].v.d = 1.0;
      for (int j = 0; j <= i; ++j) {
        zd[static_cast<size_t>(j)].d.v = 1.0;
        impl_->eval(std::span<const D2>(xd), D2(t), std::span<const D2>(zd), D2(y),
                    std::span<D2>(out));
        for (int c = 0; c < d_; ++c) {
          double v = out[static_cast<size_t>(c)].d.d;
          blocks[static_cast<size_t>(i)](c, j) = v;
          blocks[static_cast<size_t>(j)](c, i) = v;
        }
        zd[static_cast<size_t>(j)].d.v = 0.0;
      }
      zd[static_cast<size_t>(i)].v.d = 0.0;
    }
    return blocks;
  }

  //! Mixed derivative d(grad_x psi)/dz_i, one d x d matrix per i.
  std::vector<MatrixXd> dz_grad_x(const VectorXd& x, double t, const VectorXd& z,
                                  double y) const {
    require_order(2, "dz_grad_x");
    std::vector<MatrixXd> blocks(static_cast<size_t>(n_), MatrixXd(d_, d_));
    std::vector<D2> xd(to_jets<D2>(x)), zd(to_jets<D2>(z)), out(static_cast<size_t>(d_));
    for (int i = 0; i < n_; ++i) {
      zd[static_cast<size_t>(i)].v.d = 1.0;
      for (int c = 0; c < d_; ++c) {
        xd[static_cast<size_t>(c)].d.v = 1.0;
        impl_->eval(std::span<const D2>(xd), D2(t), std::span<const D2>(zd), D2(y),
                    std::span<D2>(out));
        for (int r = 0; r < d_; ++r)
          blocks[static_cast<size_t>(i)](r, c) = out[static_cast<size_t>(r)].d.d;
        xd[static_cast<size_t>(c)].d.v = 0.0;
      }
      zd[static_cast<size_t>(i)].v.d = 0.0;
    }
    return blocks;
  }

  //! Directional derivative of grad_x psi along the x-direction u (d x d).
  MatrixXd grad_x_dir(const VectorXd& x, double t, const VectorXd& z, double y,
                      const VectorXd& u) const {
    require_order(2, "grad_x_dir");
    MatrixXd j(d_, d_);
    std::vector<D2> xd(static_cast<size_t>(d_)), zd(to_jets<D2>(z)), out(static_cast<size_t>(d_));
    for (int c = 0; c < d_; ++c) xd[static_cast<size_t>(c)] = D2(D1(x(c), u(c)), D1(0.0));
    for (int c = 0; c < d_; ++c) {
      xd[static_cast<size_t>(c)].d.v = 1.0;
      impl_->eval(std::span<const D2>(xd), D2(t), std::span<const D2>(zd), D2(y),
                  std::span<D2>(out));
      for (int r = 0; r < d_; ++r) j(r, c) = out[static_cast<size_t>(r)].d.d;
      xd[static_cast<size_t>(c)].d.v = 0.0;
    }
    return j;
  }

 private:
  template <class J>
  std::vector<J> to_jets(const VectorXd& v) const {
    std::vector<J> out(static_cast<size_t>(v.size()));
    for (int i = 0; i < v.size(); ++i) out[static_cast<size_t>(i)] = J(v(i));
    return out;
  }

  void require_order(int k, const char* what) const {
    if (max_order_ < k) throw CapabilityError(k, max_order_, what);
  }

  //! psi(x, t, 0, 0) = x on a probe grid, tolerance 1e-12.
  void check_fixed_point() const {
    VectorXd z = VectorXd::Zero(n_);
    for (double c : {0.0, 0.5, -1.25, 2.0}) {
      for (double t : {0.0, 0.75}) {
        VectorXd x = VectorXd::Constant(d_, c);
        VectorXd out = step(x, t, z, 0.0);
        if ((out - x).cwiseAbs().maxCoeff() > 1e-12)
          throw ConfigError("scheme '" + id_ + "' violates psi(x,t,0,0) = x");
      }
    }
  }

  std::string id_;
  int d_ = 0;
  int n_ = 0;
  int max_order_ = 0;
  std::shared_ptr<const detail::SchemeImpl> impl_;
};

// ---------------------------------------------------------------------------
// derived fields

//! The drift/diffusion fields read off the scheme map:
//!   diffusion[i] = d psi/dz_i (.,.,0,0)
//!   flow_drift   = d psi/dy  (.,.,0,0)
//!   ito_drift    = flow_drift - 1/2 sum_i d^2 psi/dz_i^2 (.,.,0,0)
//!   strat_drift  = ito_drift - 1/2 sum_i grad(V_i) V_i
struct SchemeFields {
  Field flow_drift;
  Field ito_drift;
  Field strat_drift;
  std::vector<Field> diffusion;
  DrivingFields driving() const { return DrivingFields{strat_drift, diffusion}; }
};

inline SchemeFields fields_from_scheme(const SchemeMap& psi) {
  if (psi.max_order() < 2)
    throw CapabilityError(2, psi.max_order(), "fields_from_scheme");
  auto impl = psi.impl_ptr();
  const int d = psi.dim_x();
  const int n = psi.dim_z();

  auto diffusion_i = [impl, d, n](int i) {
    return make_field(
        d, kMaxJetOrder - 1,
        [impl, d, n, i]<class S>(std::span<const S> x, const S& t, std::span<S> out) {
          if constexpr (jet_order_v<S> >= kMaxJetOrder) {
            throw CapabilityError(jet_order_v<S> + 1, kMaxJetOrder, "diffusion field");
          } else {
            using DS = Dual<S>;
            std::vector<DS> xd(static_cast<size_t>(d)), zd(static_cast<size_t>(n)),
                o(static_cast<size_t>(d));
            for (int c = 0; c < d; ++c) xd[static_cast<size_t>(c)] = DS(x[c], S(0.0));
            for (int c = 0; c < n; ++c) zd[static_cast<size_t>(c)] = DS(S(0.0), S(0.0));
            zd[static_cast<size_t>(i)].d = S(1.0);
            impl->eval(std::span<const DS>(xd), DS(t, S(0.0)), std::span<const DS>(zd),
                       DS(S(0.0), S(0.0)), std::span<DS>(o));
            for (int c = 0; c < d; ++c) out[c] = o[static_cast<size_t>(c)].d;
          }
        });
  };

  Field flow_drift = make_field(
      d, kMaxJetOrder - 1,
      [impl, d, n]<class S>(std::span<const S> x, const S& t, std::span<S> out) {
        if constexpr (jet_order_v<S> >= kMaxJetOrder) {
          throw CapabilityError(jet_order_v<S> + 1, kMaxJetOrder, "flow drift field");
        } else {
          using DS = Dual<S>;
          std::vector<DS> xd(static_cast<size_t>(d)), zd(static_cast<size_t>(n)),
              o(static_cast<size_t>(d));
          for (int c = 0; c < d; ++c) xd[static_cast<size_t>(c)] = DS(x[c], S(0.0));
          for (int c = 0; c < n; ++c) zd[static_cast<size_t>(c)] = DS(S(0.0), S(0.0));
          impl->eval(std::span<const DS>(xd), DS(t, S(0.0)), std::span<const DS>(zd),
                     DS(S(0.0), S(1.0)), std::span<DS>(o));
          for (int c = 0; c < d; ++c) out[c] = o[static_cast<size_t>(c)].d;
        }
      });

  Field ito_drift = make_field(
      d, kMaxJetOrder - 2,
      [impl, d, n]<class S>(std::span<const S> x, const S& t, std::span<S> out) {
        if constexpr (jet_order_v<S> >= kMaxJetOrder - 1) {
          throw CapabilityError(jet_order_v<S> + 2, kMaxJetOrder, "ito drift field");
        } else {
          using DS = Dual<S>;
          using DDS = Dual<DS>;
          // flow drift part
          {
            std::vector<DS> xd(static_cast<size_t>(d)), zd(static_cast<size_t>(n)),
                o(static_cast<size_t>(d));
            for (int c = 0; c < d; ++c) xd[static_cast<size_t>(c)] = DS(x[c], S(0.0));
            for (int c = 0; c < n; ++c) zd[static_cast<size_t>(c)] = DS(S(0.0), S(0.0));
            impl->eval(std::span<const DS>(xd), DS(t, S(0.0)), std::span<const DS>(zd),
                       DS(S(0.0), S(1.0)), std::span<DS>(o));
            for (int c = 0; c < d; ++c) out[c] = o[static_cast<size_t>(c)].d;
          }
          // minus half the pure second z-derivatives
          std::vector<DDS> xd(static_cast<size_t>(d)), zd(static_cast<size_t>(n)),
              o(static_cast<size_t>(d));
          for (int c = 0; c < d; ++c) xd[static_cast<size_t>(c)] = DDS(DS(x[c]));
          for (int i = 0; i < n; ++i) {
            for (int c = 0; c < n; ++c) zd[static_cast<size_t>(c)] = DDS(DS(S(0.0)));
            zd[static_cast<size_t>(i)].v.d = S(1.0);
            zd[static_cast<size_t>(i)].d.v = S(1.0);
            impl->eval(std::span<const DDS>(xd), DDS(DS(t)), std::span<const DDS>(zd),
                       DDS(DS(S(0.0))), std::span<DDS>(o));
            for (int c = 0; c < d; ++c) out[c] -= 0.5 * o[static_cast<size_t>(c)].d.d;
          }
        }
      });

  std::vector<Field> diffusion;
  diffusion.reserve(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) diffusion.push_back(diffusion_i(i));

  // strat drift = ito drift - 1/2 sum_i grad(V_i) V_i, with the Jacobians by AD
  std::vector<std::shared_ptr<const detail::FieldImpl>> diff_impls;
  for (const auto& f : diffusion) diff_impls.push_back(f.impl_ptr());
  auto ito_impl = ito_drift.impl_ptr();
  Field strat_drift = make_field(
      d, kMaxJetOrder - 2,
      [ito_impl, diff_impls, d]<class S>(std::span<const S> x, const S& t, std::span<S> out) {
        if constexpr (jet_order_v<S> >= kMaxJetOrder - 1) {
          throw CapabilityError(jet_order_v<S> + 2, kMaxJetOrder, "stratonovich drift field");
        } else {
          using DS = Dual<S>;
          ito_impl->eval(x, t, out);
          std::vector<S> vi(static_cast<size_t>(d));
          std::vector<DS> xd(static_cast<size_t>(d)), o(static_cast<size_t>(d));
          for (const auto& vimpl : diff_impls) {
            vimpl->eval(x, t, std::span<S>(vi));
            for (int c = 0; c < d; ++c) xd[static_cast<size_t>(c)] = DS(x[c], S(0.0));
            for (int j = 0; j < d; ++j) {
              xd[static_cast<size_t>(j)].d = S(1.0);
              vimpl->eval(std::span<const DS>(xd), DS(t, S(0.0)), std::span<DS>(o));
              for (int c = 0; c < d; ++c)
                out[c] -= 0.5 * o[static_cast<size_t>(c)].d * vi[static_cast<size_t>(j)];
              xd[static_cast<size_t>(j)].d = S(0.0);
            }
          }
        }
      });

  return SchemeFields{std::move(flow_drift), std::move(ito_drift), std::move(strat_drift),
                      std::move(diffusion)};
}

//! Euler map x + V0(x,t) y + sum_i V_i(x,t) z_i with analytic first-derivative
//! oracles.
inline SchemeMap euler_scheme_from_fields(std::string id, const Field& v0,
                                          const std::vector<Field>& vs) {
  const int d = v0.dim();
  const int n = static_cast<int>(vs.size());
  int mo = v0.max_order();
  for (const auto& f : vs) mo = std::min(mo, f.max_order());
  auto v0i = v0.impl_ptr();
  std::vector<std::shared_ptr<const detail::FieldImpl>> vis;
  for (const auto& f : vs) vis.push_back(f.impl_ptr());

  SchemeMap m = SchemeMap::from_closure(
      std::move(id), d, n, mo,
      [v0i, vis, d]<class S>(std::span<const S> x, const S& t, std::span<const S> z, const S& y,
                             std::span<S> out) {
        std::vector<S> tmp(static_cast<size_t>(d));
        v0i->eval(x, t, std::span<S>(tmp));
        for (int c = 0; c < d; ++c) out[c] = x[c] + y * tmp[static_cast<size_t>(c)];
        for (size_t i = 0; i < vis.size(); ++i) {
          vis[i]->eval(x, t, std::span<S>(tmp));
          for (int c = 0; c < d; ++c) out[c] += z[i] * tmp[static_cast<size_t>(c)];
        }
      });

  // analytic oracles: grad_x = I + y grad(V0) + sum z_i grad(V_i), dz = [V_i]
  Field v0copy = v0;
  std::vector<Field> vscopy = vs;
  m.grad_x_fn = [v0copy, vscopy, d](const VectorXd& x, double t, const VectorXd& z, double y,
                                    MatrixXd& out) {
    out = MatrixXd::Identity(d, d) + y * jacobian_x(v0copy, x, t);
    for (size_t i = 0; i < vscopy.size(); ++i) out += z(static_cast<int>(i)) * jacobian_x(vscopy[i], x, t);
  };
  m.dz_fn = [vscopy](const VectorXd& x, double t, const VectorXd&, double, MatrixXd& out) {
    for (size_t i = 0; i < vscopy.size(); ++i) out.col(static_cast<int>(i)) = vscopy[i](x, t);
  };
  return m;
}

// ---------------------------------------------------------------------------
// paths

//! One stored trajectory. Grid times are integer step counts (time = k*delta);
//! index k-1 of the per-step arrays belongs to grid time k*delta. The exact
//! value fed to psi at step k is chi ? U : V, so replay is bit-identical.
struct PathRecord {
  double delta = 0.0;
  int steps = 0;
  VectorXd x0;
  std::uint64_t seed = 0;
  std::string scheme_id;
  std::string law_id;

  std::vector<VectorXd> x;  // steps+1 entries
  std::vector<VectorXd> z, u, v;
  std::vector<int> chi;

  double horizon() const { return delta * steps; }
  //! noise argument consumed by psi at step k (1-based)
  const VectorXd& z_arg(int k) const {
    return chi[static_cast<size_t>(k - 1)] ? u[static_cast<size_t>(k - 1)]
                                           : v[static_cast<size_t>(k - 1)];
  }
};

inline int steps_for_horizon(double T, double delta) {
  double raw = T / delta;
  int k = static_cast<int>(std::lround(raw));
  if (k <= 0 || std::abs(raw - k) > 1e-9)
    throw ConfigError("horizon T must be an integer multiple of delta");
  return k;
}

inline PathRecord simulate_path(const SchemeMap& psi, const NoiseLaw& law, const VectorXd& x0,
                                double delta, double T, std::uint64_t seed) {
  if (law.dim != psi.dim_z()) throw DimensionError("law dimension does not match scheme");
  PathRecord rec;
  rec.delta = delta;
  rec.steps = steps_for_horizon(T, delta);
  rec.x0 = x0;
  rec.seed = seed;
  rec.scheme_id = psi.id();
  rec.law_id = law.id;
  rec.x.reserve(static_cast<size_t>(rec.steps) + 1);
  rec.x.push_back(x0);
  Rng rng(seed);
  VectorXd cur = x0, next(psi.dim_x());
  for (int k = 1; k <= rec.steps; ++k) {
    SplitSample s = sample_split(law, delta, rng, k * delta);
    psi.step_into(cur, (k - 1) * delta, s.chi ? s.u : s.v, delta, next);
    if (!next.allFinite())
      throw SimulationError("non-finite state in scheme '" + psi.id() + "'", k * delta);
    rec.z.push_back(std::move(s.z));
    rec.u.push_back(std::move(s.u));
    rec.v.push_back(std::move(s.v));
    rec.chi.push_back(s.chi);
    cur = next;
    rec.x.push_back(cur);
  }
  return rec;
}

//! Replays the stored noises through psi and checks bit-identical states.
inline bool replay_matches(const PathRecord& rec, const SchemeMap& psi) {
  VectorXd cur = rec.x0, next(psi.dim_x());
  for (int k = 1; k <= rec.steps; ++k) {
    psi.step_into(cur, (k - 1) * rec.delta, rec.z_arg(k), rec.delta, next);
    if (next != rec.x[static_cast<size_t>(k)]) return false;
    cur = next;
  }
  return true;
}

// ---------------------------------------------------------------------------
// flows

//! Forward tangent flow and guarded inverse. Validity is cumulative: the
//! inverse at time k exists only if every step up to k had |Z| < eta2 and a
//! numerically invertible step Jacobian.
struct FlowPair {
  std::vector<MatrixXd> forward;   // steps+1, [0] = I
  std::vector<MatrixXd> inverse;   // steps+1, identity beyond valid_up_to
  std::vector<char> valid;         // per grid index, cumulative
  int valid_up_to = 0;
};

inline std::vector<MatrixXd> tangent_flow(const PathRecord& rec, const SchemeMap& psi) {
  const int d = psi.dim_x();
  std::vector<MatrixXd> flow;
  flow.reserve(static_cast<size_t>(rec.steps) + 1);
  flow.push_back(MatrixXd::Identity(d, d));
  for (int k = 1; k <= rec.steps; ++k) {
    MatrixXd j = psi.grad_x(rec.x[static_cast<size_t>(k - 1)], (k - 1) * rec.delta,
                            rec.z_arg(k), rec.delta);
    flow.push_back(j * flow.back());
  }
  return flow;
}

inline FlowPair flow_pair(const PathRecord& rec, const SchemeMap& psi, double eta2) {
  if (psi.growth) {
    double lhs = std::sqrt(rec.delta) * std::pow(eta2, psi.growth->p + 1) * 8.0 *
                 psi.growth->big_d;
    if (lhs >= 1.0)
      throw ConfigError("inverse flow precondition sqrt(delta) eta2^(p+1) 8 D < 1 fails (" +
                        std::to_string(lhs) + ")");
  }
  const int d = psi.dim_x();
  FlowPair fp;
  fp.forward.push_back(MatrixXd::Identity(d, d));
  fp.inverse.push_back(MatrixXd::Identity(d, d));
  fp.valid.assign(static_cast<size_t>(rec.steps) + 1, 0);
  fp.valid[0] = 1;
  bool alive = true;
  for (int k = 1; k <= rec.steps; ++k) {
    MatrixXd j = psi.grad_x(rec.x[static_cast<size_t>(k - 1)], (k - 1) * rec.delta,
                            rec.z_arg(k), rec.delta);
    fp.forward.push_back(j * fp.forward.back());
    bool guard = rec.z[static_cast<size_t>(k - 1)].norm() < eta2;
    if (!psi.growth) {
      // Neumann criterion when no growth constants are declared
      guard = guard && operator_norm(j - MatrixXd::Identity(d, d)) < 1.0;
    }
    if (alive && guard) {
      LuInverse lu = lu_inverse(j);
      if (lu.invertible) {
        fp.inverse.push_back(fp.inverse.back() * lu.inverse);
        fp.valid[static_cast<size_t>(k)] = 1;
        fp.valid_up_to = k;
      } else {
        alive = false;
        fp.inverse.push_back(MatrixXd::Identity(d, d));
      }
    } else {
      alive = false;
      fp.inverse.push_back(MatrixXd::Identity(d, d));
    }
  }
  return fp;
}

//! Worst deviation of the step Jacobian from the identity over a probe set
//! with |Z| <= eta2 (so |z-argument| <= sqrt(delta) eta2), against the
//! polynomial bound when growth constants are present.
struct StepGradientReport {
  bool pass = false;
  bool heuristic = false;  // no growth constants: invertibility check only
  double worst_deviation = 0.0;
  double worst_margin = 0.0;  // max over probes of (deviation - bound)
};

inline StepGradientReport step_gradient_bound_check(const SchemeMap& psi, double delta,
                                                    double eta2,
                                                    const std::vector<VectorXd>& xs,
                                                    const std::vector<double>& ts,
                                                    int n_z = 32, std::uint64_t seed = 4) {
  StepGradientReport rep;
  rep.heuristic = !psi.growth.has_value();
  rep.worst_margin = -std::numeric_limits<double>::infinity();
  Rng rng(seed);
  const int d = psi.dim_x();
  const int n = psi.dim_z();
  MatrixXd eye = MatrixXd::Identity(d, d);
  for (const auto& x : xs) {
    for (double t : ts) {
      for (int k = 0; k < n_z; ++k) {
        double znorm = eta2 * std::pow(rng.uniform01(), 1.0 / n);
        VectorXd dir(n);
        for (int i = 0; i < n; ++i) dir(i) = rng.gaussian();
        dir.normalize();
        VectorXd zarg = std::sqrt(delta) * znorm * dir;
        double dev = operator_norm(psi.grad_x(x, t, zarg, delta) - eye);
        rep.worst_deviation = std::max(rep.worst_deviation, dev);
        if (psi.growth) {
          double bound = std::sqrt(delta) * 4.0 * psi.growth->big_d *
                         std::max(std::pow(znorm, psi.growth->p + 1), 1.0);
          rep.worst_margin = std::max(rep.worst_margin, dev - bound);
        }
      }
    }
  }
  rep.pass = psi.growth ? (rep.worst_margin <= 0.0) : (rep.worst_deviation < 1.0);
  if (psi.growth) rep.pass = rep.pass && rep.worst_deviation < 1.0;
  return rep;
}

// ---------------------------------------------------------------------------
// serialization

//! Columnar CSV: step, t, X[0..d), Z[0..N), chi, U[0..N), V[0..N).
inline void write_path_csv(const PathRecord& rec, std::ostream& os) {
  const int d = static_cast<int>(rec.x0.size());
  const int n = rec.z.empty() ? 0 : static_cast<int>(rec.z[0].size());
  os << "step,t";
  for (int i = 0; i < d; ++i) os << ",X" << i;
  for (int i = 0; i < n; ++i) os << ",Z" << i;
  os << ",chi";
  for (int i = 0; i < n; ++i) os << ",U" << i;
  for (int i = 0; i < n; ++i) os << ",V" << i;
  os << "\n";
  char buf[32];
  auto put = [&](double x) {
    std::snprintf(buf, sizeof buf, "%.17g", x);
    os << ',' << buf;
  };
  for (int k = 0; k <= rec.steps; ++k) {
    os << k;
    put(k * rec.delta);
    for (int i = 0; i < d; ++i) put(rec.x[static_cast<size_t>(k)](i));
    if (k == 0) {
      for (int i = 0; i < 2 * n + 1; ++i) os << ",";
      os << "\n";
      continue;
    }
    size_t kk = static_cast<size_t>(k - 1);
    for (int i = 0; i < n; ++i) put(rec.z[kk](i));
    os << ',' << rec.chi[kk];
    for (int i = 0; i < n; ++i) put(rec.u[kk](i));
    for (int i = 0; i < n; ++i) put(rec.v[kk](i));
    os << "\n";
  }
}

inline std::string path_json_header(const PathRecord& rec) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", rec.delta);
  std::string s = "{\n  \"delta\": ";
  s += buf;
  std::snprintf(buf, sizeof buf, "%.17g", rec.horizon());
  s += ",\n  \"T\": ";
  s += buf;
  s += ",\n  \"seed\": " + std::to_string(rec.seed);
  s += ",\n  \"law_id\": \"" + rec.law_id + "\"";
  s += ",\n  \"scheme_id\": \"" + rec.scheme_id + "\"\n}\n";
  return s;
}

}  // namespace dmc
