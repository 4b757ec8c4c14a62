#pragma once

#include <cmath>
#include <type_traits>

namespace dmc {

// Forward-mode dual number a + b*eps with eps^2 = 0. Nesting Dual<Dual<...>>
// gives exact higher directional derivatives; the multiplication rule is the
// product rule, so derivatives are exact to machine precision.
template <class T>
struct Dual {
  T v{};  // value
  T d{};  // derivative part

  constexpr Dual() = default;
  constexpr Dual(double value) : v(value), d() {}  // NOLINT(google-explicit-constructor)
  template <class U = T, class = std::enable_if_t<!std::is_same_v<U, double>>>
  constexpr Dual(T value) : v(std::move(value)), d() {}  // NOLINT(google-explicit-constructor)
  constexpr Dual(T value, T deriv) : v(std::move(value)), d(std::move(deriv)) {}

  constexpr Dual operator-() const { return {-v, -d}; }

  constexpr Dual& operator+=(const Dual& o) { v += o.v; d += o.d; return *this; }
  constexpr Dual& operator-=(const Dual& o) { v -= o.v; d -= o.d; return *this; }

  friend constexpr Dual operator+(const Dual& a, const Dual& b) { return {a.v + b.v, a.d + b.d}; }
  friend constexpr Dual operator-(const Dual& a, const Dual& b) { return {a.v - b.v, a.d - b.d}; }
  friend constexpr Dual operator*(const Dual& a, const Dual& b) {
    return {a.v * b.v, a.d * b.v + a.v * b.d};
  }
  friend constexpr Dual operator/(const Dual& a, const Dual& b) {
    T q = a.v / b.v;
    return {q, (a.d - q * b.d) / b.v};
  }

  friend constexpr Dual operator+(const Dual& a, double s) { return {a.v + s, a.d}; }
  friend constexpr Dual operator+(double s, const Dual& a) { return {s + a.v, a.d}; }
  friend constexpr Dual operator-(const Dual& a, double s) { return {a.v - s, a.d}; }
  friend constexpr Dual operator-(double s, const Dual& a) { return {s - a.v, -a.d}; }
  friend constexpr Dual operator*(const Dual& a, double s) { return {a.v * s, a.d * s}; }
  friend constexpr Dual operator*(double s, const Dual& a) { return {s * a.v, s * a.d}; }
  friend constexpr Dual operator/(const Dual& a, double s) { return {a.v / s, a.d / s}; }
  friend constexpr Dual operator/(double s, const Dual& a) { return Dual(s) / a; }
};

using D1 = Dual<double>;
using D2 = Dual<D1>;
using D3 = Dual<D2>;
using D4 = Dual<D3>;

//! Nesting depth of a scalar type: 0 for double, 1 for Dual<double>, ...
template <class T>
struct JetOrder : std::integral_constant<int, 0> {};
template <class T>
struct JetOrder<Dual<T>> : std::integral_constant<int, 1 + JetOrder<T>::value> {};
template <class T>
inline constexpr int jet_order_v = JetOrder<T>::value;

//! Highest nesting level with virtual dispatch support (== default max AD order).
inline constexpr int kMaxJetOrder = 4;

inline double value_of(double x) { return x; }
template <class T>
double value_of(const Dual<T>& x) { return value_of(x.v); }

template <class T>
Dual<T> exp(const Dual<T>& x) {
  using std::exp;
  T e = exp(x.v);
  return {e, x.d * e};
}

template <class T>
Dual<T> log(const Dual<T>& x) {
  using std::log;
  return {log(x.v), x.d / x.v};
}

template <class T>
Dual<T> sqrt(const Dual<T>& x) {
  using std::sqrt;
  T r = sqrt(x.v);
  return {r, x.d / (2.0 * r)};
}

template <class T>
Dual<T> sin(const Dual<T>& x) {
  using std::cos;
  using std::sin;
  return {sin(x.v), x.d * cos(x.v)};
}

template <class T>
Dual<T> cos(const Dual<T>& x) {
  using std::cos;
  using std::sin;
  return {cos(x.v), -x.d * sin(x.v)};
}

template <class T>
Dual<T> tanh(const Dual<T>& x) {
  using std::tanh;
  T th = tanh(x.v);
  return {th, x.d * (1.0 - th * th)};
}

template <class T>
Dual<T> pow(const Dual<T>& x, int n) {
  if (n == 0) return Dual<T>(1.0);
  if (n < 0) return 1.0 / pow(x, -n);
  Dual<T> r = x;
  for (int k = 1; k < n; ++k) r = r * x;
  return r;
}

// make the double overloads visible next to the Dual ones, so generic code
// written inside this namespace works at jet level 0
using std::cos;
using std::exp;
using std::log;
using std::pow;
using std::sin;
using std::sqrt;
using std::tanh;

}  // namespace dmc
