#pragma once

#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "dmc/dual.hpp"
#include "dmc/errors.hpp"
#include "dmc/linalg.hpp"

namespace dmc {

// Time-dependent vector fields on R^d with exact derivatives from nested
// dual-number AD. A field evaluates at any jet level up to its max_order;
// combinators (sums, Lie brackets, time derivatives) consume levels, so a
// bracket of two order-k fields is an order-(k-1) field. Virtual dispatch is
// instantiated for jet levels 0..kMaxJetOrder.

namespace detail {

struct FieldImpl {
  virtual ~FieldImpl() = default;
  virtual void eval(std::span<const double> x, const double& t, std::span<double> out) const = 0;
  virtual void eval(std::span<const D1> x, const D1& t, std::span<D1> out) const = 0;
  virtual void eval(std::span<const D2> x, const D2& t, std::span<D2> out) const = 0;
  virtual void eval(std::span<const D3> x, const D3& t, std::span<D3> out) const = 0;
  virtual void eval(std::span<const D4> x, const D4& t, std::span<D4> out) const = 0;
};

template <class Derived>
struct FieldImplBase : FieldImpl {
  void eval(std::span<const double> x, const double& t, std::span<double> out) const override {
    static_cast<const Derived*>(this)->template call<double>(x, t, out);
  }
  void eval(std::span<const D1> x, const D1& t, std::span<D1> out) const override {
    static_cast<const Derived*>(this)->template call<D1>(x, t, out);
  }
  void eval(std::span<const D2> x, const D2& t, std::span<D2> out) const override {
    static_cast<const Derived*>(this)->template call<D2>(x, t, out);
  }
  void eval(std::span<const D3> x, const D3& t, std::span<D3> out) const override {
    static_cast<const Derived*>(this)->template call<D3>(x, t, out);
  }
  void eval(std::span<const D4> x, const D4& t, std::span<D4> out) const override {
    static_cast<const Derived*>(this)->template call<D4>(x, t, out);
  }
};

template <class F>
struct ClosureField final : FieldImplBase<ClosureField<F>> {
  F f;
  explicit ClosureField(F fn) : f(std::move(fn)) {}
  template <class S>
  void call(std::span<const S> x, const S& t, std::span<S> out) const {
    f(x, t, out);
  }
};

}  // namespace detail

class Field {
 public:
  Field() = default;
  Field(int dim, int max_order, std::shared_ptr<const detail::FieldImpl> impl)
      : dim_(dim), max_order_(max_order), impl_(std::move(impl)) {}

  int dim() const { return dim_; }
  int max_order() const { return max_order_; }
  const detail::FieldImpl& impl() const { return *impl_; }
  std::shared_ptr<const detail::FieldImpl> impl_ptr() const { return impl_; }

  template <class S>
  void eval(std::span<const S> x, const S& t, std::span<S> out) const {
    if (jet_order_v<S> > max_order_)
      throw CapabilityError(jet_order_v<S>, max_order_, "field evaluation");
    impl_->eval(x, t, out);
  }

  VectorXd operator()(const VectorXd& x, double t) const {
    VectorXd out(dim_);
    impl_->eval(std::span<const double>(x.data(), static_cast<size_t>(x.size())), t,
                std::span<double>(out.data(), static_cast<size_t>(out.size())));
    return out;
  }

 private:
  int dim_ = 0;
  int max_order_ = 0;
  std::shared_ptr<const detail::FieldImpl> impl_;
};

//! Wrap a generic callable f(span<const S> x, const S& t, span<S> out) that is
//! evaluable at every jet level (plain templated arithmetic qualifies).
template <class F>
Field make_field(int dim, int max_order, F&& f) {
  if (max_order > kMaxJetOrder) max_order = kMaxJetOrder;
  return Field(dim, max_order,
               std::make_shared<detail::ClosureField<std::decay_t<F>>>(std::forward<F>(f)));
}

namespace detail {

// out = grad_x(W) * val_v - grad_x(V) * val_w, all at jet level S.
// One seeded direction per coordinate; children are evaluated at level S+1.
template <class S>
void bracket_eval(const FieldImpl& v, const FieldImpl& w, int d,
                  std::span<const S> x, const S& t, std::span<S> out) {
  using DS = Dual<S>;
  std::vector<S> val_v(d), val_w(d);
  v.eval(x, t, std::span<S>(val_v));
  w.eval(x, t, std::span<S>(val_w));
  for (int i = 0; i < d; ++i) out[i] = S(0.0);
  std::vector<DS> xd(d), ov(d), ow(d);
  for (int j = 0; j < d; ++j) xd[j] = DS(x[j], S(0.0));
  DS td(t, S(0.0));
  for (int j = 0; j < d; ++j) {
    xd[j].d = S(1.0);
    v.eval(std::span<const DS>(xd), td, std::span<DS>(ov));
    w.eval(std::span<const DS>(xd), td, std::span<DS>(ow));
    for (int i = 0; i < d; ++i)
      out[i] += ow[i].d * val_v[j] - ov[i].d * val_w[j];
    xd[j].d = S(0.0);
  }
}

struct BracketField final : FieldImplBase<BracketField> {
  std::shared_ptr<const FieldImpl> v, w;
  int d;
  BracketField(std::shared_ptr<const FieldImpl> a, std::shared_ptr<const FieldImpl> b, int dim)
      : v(std::move(a)), w(std::move(b)), d(dim) {}
  template <class S>
  void call(std::span<const S> x, const S& t, std::span<S> out) const {
    if constexpr (jet_order_v<S> >= kMaxJetOrder) {
      throw CapabilityError(jet_order_v<S> + 1, kMaxJetOrder, "Lie bracket evaluation");
    } else {
      bracket_eval<S>(*v, *w, d, x, t, out);
    }
  }
};

struct TimeDerivativeField final : FieldImplBase<TimeDerivativeField> {
  std::shared_ptr<const FieldImpl> v;
  int d;
  TimeDerivativeField(std::shared_ptr<const FieldImpl> a, int dim) : v(std::move(a)), d(dim) {}
  template <class S>
  void call(std::span<const S> x, const S& t, std::span<S> out) const {
    if constexpr (jet_order_v<S> >= kMaxJetOrder) {
      throw CapabilityError(jet_order_v<S> + 1, kMaxJetOrder, "time derivative evaluation");
    } else {
      using DS = Dual<S>;
      std::vector<DS> xd(d), o(d);
      for (int j = 0; j < d; ++j) xd[j] = DS(x[j], S(0.0));
      v->eval(std::span<const DS>(xd), DS(t, S(1.0)), std::span<DS>(o));
      for (int i = 0; i < d; ++i) out[i] = o[i].d;
    }
  }
};

struct LinearComboField final : FieldImplBase<LinearComboField> {
  std::vector<std::pair<double, std::shared_ptr<const FieldImpl>>> terms;
  int d;
  LinearComboField(std::vector<std::pair<double, std::shared_ptr<const FieldImpl>>> ts, int dim)
      : terms(std::move(ts)), d(dim) {}
  template <class S>
  void call(std::span<const S> x, const S& t, std::span<S> out) const {
    std::vector<S> tmp(d);
    for (int i = 0; i < d; ++i) out[i] = S(0.0);
    for (const auto& [c, f] : terms) {
      f->eval(x, t, std::span<S>(tmp));
      for (int i = 0; i < d; ++i) out[i] += c * tmp[i];
    }
  }
};

}  // namespace detail

inline void check_same_dim(const Field& a, const Field& b, const char* what) {
  if (a.dim() != b.dim())
    throw DimensionError(std::string(what) + ": dimension mismatch " +
                         std::to_string(a.dim()) + " vs " + std::to_string(b.dim()));
}

//! Jacobian matrix (i,j) -> d V^i / d x^j, exact AD values.
inline MatrixXd jacobian_x(const Field& v, const VectorXd& x, double t) {
  if (v.max_order() < 1) throw CapabilityError(1, v.max_order(), "jacobian_x");
  const int d = v.dim();
  MatrixXd jac(d, d);
  std::vector<D1> xd(d), out(d);
  for (int j = 0; j < d; ++j) xd[j] = D1(x(j), 0.0);
  for (int j = 0; j < d; ++j) {
    xd[j].d = 1.0;
    v.impl().eval(std::span<const D1>(xd), D1(t, 0.0), std::span<D1>(out));
    for (int i = 0; i < d; ++i) jac(i, j) = out[i].d;
    xd[j].d = 0.0;
  }
  return jac;
}

inline VectorXd time_derivative(const Field& v, const VectorXd& x, double t) {
  if (v.max_order() < 1) throw CapabilityError(1, v.max_order(), "time_derivative");
  const int d = v.dim();
  std::vector<D1> xd(d), out(d);
  for (int j = 0; j < d; ++j) xd[j] = D1(x(j), 0.0);
  v.impl().eval(std::span<const D1>(xd), D1(t, 1.0), std::span<D1>(out));
  VectorXd r(d);
  for (int i = 0; i < d; ++i) r(i) = out[i].d;
  return r;
}

//! [V, W](x,t) = grad_x(W) V - grad_x(V) W.
inline VectorXd lie_bracket(const Field& v, const Field& w, const VectorXd& x, double t) {
  check_same_dim(v, w, "lie_bracket");
  if (v.max_order() < 1) throw CapabilityError(1, v.max_order(), "lie_bracket");
  if (w.max_order() < 1) throw CapabilityError(1, w.max_order(), "lie_bracket");
  const int d = v.dim();
  VectorXd out(d);
  std::vector<double> xv(x.data(), x.data() + d), o(d);
  detail::bracket_eval<double>(v.impl(), w.impl(), d, std::span<const double>(xv), t,
                               std::span<double>(o));
  for (int i = 0; i < d; ++i) out(i) = o[i];
  return out;
}

inline Field lie_bracket_field(const Field& v, const Field& w) {
  check_same_dim(v, w, "lie_bracket_field");
  int mo = std::min(v.max_order(), w.max_order()) - 1;
  if (mo < 0)
    throw CapabilityError(1, std::min(v.max_order(), w.max_order()), "lie_bracket_field");
  return Field(v.dim(), mo,
               std::make_shared<detail::BracketField>(v.impl_ptr(), w.impl_ptr(), v.dim()));
}

inline Field time_derivative_field(const Field& v) {
  if (v.max_order() < 1) throw CapabilityError(1, v.max_order(), "time_derivative_field");
  return Field(v.dim(), v.max_order() - 1,
               std::make_shared<detail::TimeDerivativeField>(v.impl_ptr(), v.dim()));
}

inline Field linear_combination(std::vector<std::pair<double, Field>> terms) {
  if (terms.empty()) throw DimensionError("linear_combination: no terms");
  int d = terms.front().second.dim();
  int mo = kMaxJetOrder;
  std::vector<std::pair<double, std::shared_ptr<const detail::FieldImpl>>> ts;
  for (auto& [c, f] : terms) {
    check_same_dim(terms.front().second, f, "linear_combination");
    mo = std::min(mo, f.max_order());
    ts.emplace_back(c, f.impl_ptr());
  }
  return Field(d, mo, std::make_shared<detail::LinearComboField>(std::move(ts), d));
}

//! Multi-index over {0,...,N}; empty means the base field itself.
struct BracketIndex {
  std::vector<int> indices;
  int order() const { return static_cast<int>(indices.size()); }
};

//! The driving fields of the bracket recursion: the Stratonovich-corrected
//! drift and the diffusion fields.
struct DrivingFields {
  Field drift;                   // enters index-0 extensions
  std::vector<Field> diffusion;  // V_1..V_N, enter index-j extensions
  int noise_dim() const { return static_cast<int>(diffusion.size()); }
};

//! One extension step of the recursion:
//!   index 0:  [drift, V] + dV/dt + 1/2 sum_i [V_i, [V_i, V]]
//!   index j:  [V_j, V]
inline Field extend_bracket(const DrivingFields& fields, const Field& v, int index) {
  if (index == 0) {
    std::vector<std::pair<double, Field>> terms;
    terms.emplace_back(1.0, lie_bracket_field(fields.drift, v));
    terms.emplace_back(1.0, time_derivative_field(v));
    for (const auto& vi : fields.diffusion)
      terms.emplace_back(0.5, lie_bracket_field(vi, lie_bracket_field(vi, v)));
    return linear_combination(std::move(terms));
  }
  if (index < 1 || index > fields.noise_dim())
    throw DimensionError("bracket index out of range: " + std::to_string(index));
  return lie_bracket_field(fields.diffusion[static_cast<size_t>(index - 1)], v);
}

//! Iterated bracket field V^[alpha], built by the recursion (indices applied
//! left to right).
inline Field iterated_bracket_field(const DrivingFields& fields, const Field& base,
                                    const BracketIndex& alpha) {
  Field v = base;
  for (int idx : alpha.indices) v = extend_bracket(fields, v, idx);
  return v;
}

inline VectorXd bracket_iterate(const DrivingFields& fields, const Field& base,
                                const BracketIndex& alpha, const VectorXd& x, double t) {
  return iterated_bracket_field(fields, base, alpha)(x, t);
}

//! Gram matrix sum over all multi-indices of order <= L and all diffusion
//! fields: M = sum_{alpha,i} v v^T with v = V_i^[alpha](x,t). The quadratic
//! form b^T M b is the double sum of squared inner products.
inline MatrixXd gram_matrix(const DrivingFields& fields, int L, const VectorXd& x, double t) {
  const int d = fields.drift.dim();
  const int n = fields.noise_dim();
  MatrixXd m = MatrixXd::Zero(d, d);
  // level-by-level lexicographic enumeration; field objects are shared
  // between a prefix and its extensions.
  std::vector<std::vector<Field>> level(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) level[static_cast<size_t>(i)].push_back(fields.diffusion[static_cast<size_t>(i)]);
  for (int k = 0; k <= L; ++k) {
    for (int i = 0; i < n; ++i) {
      for (const Field& f : level[static_cast<size_t>(i)]) {
        VectorXd v = f(x, t);
        m.noalias() += v * v.transpose();
      }
    }
    if (k == L) break;
    for (int i = 0; i < n; ++i) {
      std::vector<Field> next;
      next.reserve(level[static_cast<size_t>(i)].size() * static_cast<size_t>(n + 1));
      for (const Field& f : level[static_cast<size_t>(i)])
        for (int j = 0; j <= n; ++j) next.push_back(extend_bracket(fields, f, j));
      level[static_cast<size_t>(i)] = std::move(next);
    }
  }
  return m;
}

//! 1 ∧ (smallest eigenvalue of the Gram matrix); reports exactly 0 when the
//! matrix is singular at tolerance 1e-12 * trace.
inline double hormander_quantity(const DrivingFields& fields, int L, const VectorXd& x, double t) {
  MatrixXd m = gram_matrix(fields, L, x, t);
  double lam = min_eigenvalue(m);
  double tol = 1e-12 * m.trace();
  if (lam <= tol) return 0.0;
  return std::min(1.0, lam);
}

}  // namespace dmc
