#include <catch2/catch_amalgamated.hpp>
#include <cmath>

#include "dmc/rng.hpp"
#include "dmc/vectorfield.hpp"

using namespace dmc;
using Catch::Approx;

namespace {

// scalar coefficients for the kinetic system, generic over the jet level
template <class S>
S b_coef(const S& x, const S& t) {
  return sin(1.3 * x) + 0.4 * cos(x) * exp(-0.1 * t);
}
template <class S>
S sigma_coef(const S& x, const S& t) {
  return 1.0 + 0.5 * sin(0.7 * x + 0.3 * t);
}

// kinetic drift (b(x1,t), x1) and diffusion (sigma(x1,t), 0)
Field kinetic_drift() {
  return make_field(2, kMaxJetOrder, []<class S>(std::span<const S> x, const S& t, std::span<S> out) {
    out[0] = b_coef(x[0], t);
    out[1] = x[0];
  });
}
Field kinetic_diffusion() {
  return make_field(2, kMaxJetOrder, []<class S>(std::span<const S> x, const S& t, std::span<S> out) {
    out[0] = sigma_coef(x[0], t);
    out[1] = S(0.0);
  });
}

Field linear_field(const MatrixXd& a) {
  int d = static_cast<int>(a.rows());
  return make_field(d, kMaxJetOrder, [a, d]<class S>(std::span<const S> x, const S&, std::span<S> out) {
    for (int i = 0; i < d; ++i) {
      S acc(0.0);
      for (int j = 0; j < d; ++j) acc += a(i, j) * x[j];
      out[i] = acc;
    }
  });
}

Field constant_field(const VectorXd& c) {
  int d = static_cast<int>(c.size());
  return make_field(d, kMaxJetOrder, [c, d]<class S>(std::span<const S>, const S&, std::span<S> out) {
    for (int i = 0; i < d; ++i) out[i] = S(c(i));
  });
}

MatrixXd random_matrix(int d, Rng& rng) {
  MatrixXd a(d, d);
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j) a(i, j) = rng.uniform(-1.0, 1.0);
  return a;
}

}  // namespace

TEST_CASE("jacobian_x on simple fields", "[vectorfield]") {
  SECTION("identity field") {
    auto id = make_field(3, 2, []<class S>(std::span<const S> x, const S&, std::span<S> out) {
      for (int i = 0; i < 3; ++i) out[i] = x[i];
    });
    VectorXd x = VectorXd::Random(3);
    CHECK(jacobian_x(id, x, 0.0).isApprox(MatrixXd::Identity(3, 3)));
  }
  SECTION("component field (sigma(x1),0) with sigma=x") {
    auto f = make_field(2, 2, []<class S>(std::span<const S> x, const S&, std::span<S> out) {
      out[0] = x[0];
      out[1] = S(0.0);
    });
    MatrixXd j = jacobian_x(f, VectorXd::Zero(2), 0.3);
    MatrixXd want(2, 2);
    want << 1, 0, 0, 0;
    CHECK(j.isApprox(want));
  }
  SECTION("random linear field recovers its matrix") {
    Rng rng(99);
    MatrixXd a = random_matrix(3, rng);
    VectorXd x = VectorXd::Random(3);
    CHECK(jacobian_x(linear_field(a), x, 0.0).isApprox(a, 1e-14));
  }
}

TEST_CASE("AD jacobian matches symbolic jacobian to a few ulps", "[vectorfield]") {
  // polynomial field (x1^2 x2, 3 x1 x2^2 + x2^3)
  auto f = make_field(2, 2, []<class S>(std::span<const S> x, const S&, std::span<S> out) {
    out[0] = x[0] * x[0] * x[1];
    out[1] = 3.0 * x[0] * x[1] * x[1] + x[1] * x[1] * x[1];
  });
  VectorXd x(2);
  x << 1.375, -0.8125;  // exactly representable
  MatrixXd j = jacobian_x(f, x, 0.0);
  MatrixXd sym(2, 2);
  sym << 2 * x(0) * x(1), x(0) * x(0), 3 * x(1) * x(1), 6 * x(0) * x(1) + 3 * x(1) * x(1);
  for (int i = 0; i < 2; ++i)
    for (int k = 0; k < 2; ++k) {
      double ulp = std::abs(sym(i, k)) * std::numeric_limits<double>::epsilon();
      CHECK(std::abs(j(i, k) - sym(i, k)) <= 8 * std::max(ulp, 1e-300));
    }
}

TEST_CASE("central differences converge to the AD value at order >= 1.9", "[vectorfield]") {
  auto f = kinetic_drift();
  VectorXd x(2);
  x << 0.4, -0.2;
  double t = 0.6;
  double exact = jacobian_x(f, x, t)(0, 0);
  auto fd = [&](double h) {
    VectorXd xp = x, xm = x;
    xp(0) += h;
    xm(0) -= h;
    return (f(xp, t)(0) - f(xm, t)(0)) / (2 * h);
  };
  double e1 = std::abs(fd(8e-3) - exact);
  double e2 = std::abs(fd(4e-3) - exact);
  double e3 = std::abs(fd(2e-3) - exact);
  CHECK(std::log2(e1 / e2) >= 1.9);
  CHECK(std::log2(e2 / e3) >= 1.9);
}

TEST_CASE("lie_bracket basics", "[vectorfield]") {
  SECTION("constant fields commute") {
    auto v = constant_field(VectorXd::Ones(3));
    auto w = constant_field(VectorXd::Constant(3, -2.0));
    CHECK(lie_bracket(v, w, VectorXd::Random(3), 0.1).norm() == 0.0);
  }
  SECTION("kinetic drift/diffusion bracket equals the closed form") {
    auto v0 = kinetic_drift();
    auto v1 = kinetic_diffusion();
    Rng rng(7);
    for (int rep = 0; rep < 20; ++rep) {
      VectorXd x(2);
      x << rng.uniform(-2, 2), rng.uniform(-2, 2);
      double t = rng.uniform(0, 1);
      D1 xd(x(0), 1.0);
      D1 td(t, 0.0);
      double db = b_coef(xd, td).d;
      double ds = sigma_coef(xd, td).d;
      double bb = b_coef(x(0), t);
      double ss = sigma_coef(x(0), t);
      VectorXd got = lie_bracket(v0, v1, x, t);
      CHECK(got(0) == Approx(ds * bb - db * ss).margin(1e-12));
      CHECK(got(1) == Approx(-ss).margin(1e-12));
    }
  }
  SECTION("linear fields give the matrix commutator") {
    Rng rng(21);
    MatrixXd a = random_matrix(3, rng), b = random_matrix(3, rng);
    VectorXd x = VectorXd::Random(3);
    VectorXd want = (b * a - a * b) * x;
    CHECK(lie_bracket(linear_field(a), linear_field(b), x, 0.0).isApprox(want, 1e-12));
  }
}

TEST_CASE("antisymmetry holds exactly", "[vectorfield]") {
  auto v = kinetic_drift();
  auto w = kinetic_diffusion();
  Rng rng(3);
  for (int rep = 0; rep < 10; ++rep) {
    VectorXd x(2);
    x << rng.uniform(-1, 1), rng.uniform(-1, 1);
    double t = rng.uniform(0, 2);
    VectorXd ab = lie_bracket(v, w, x, t);
    VectorXd ba = lie_bracket(w, v, x, t);
    CHECK(ab(0) == -ba(0));
    CHECK(ab(1) == -ba(1));
  }
}

TEST_CASE("Jacobi identity", "[vectorfield]") {
  auto u = kinetic_drift();
  auto v = kinetic_diffusion();
  auto w = make_field(2, kMaxJetOrder, []<class S>(std::span<const S> x, const S& t, std::span<S> out) {
    out[0] = cos(x[1]) + 0.2 * t;
    out[1] = exp(0.3 * x[0]);
  });
  Rng rng(5);
  for (int rep = 0; rep < 10; ++rep) {
    VectorXd x(2);
    x << rng.uniform(-1, 1), rng.uniform(-1, 1);
    double t = rng.uniform(0, 1);
    VectorXd s = lie_bracket_field(u, lie_bracket_field(v, w))(x, t) +
                 lie_bracket_field(v, lie_bracket_field(w, u))(x, t) +
                 lie_bracket_field(w, lie_bracket_field(u, v))(x, t);
    double scale = lie_bracket_field(u, lie_bracket_field(v, w))(x, t).norm() + 1.0;
    CHECK(s.norm() / scale < 1e-10);
  }
}

TEST_CASE("bracket_iterate examples", "[vectorfield]") {
  // flat kinetic system: b = 0, sigma = 1
  Field v0 = make_field(2, kMaxJetOrder, []<class S>(std::span<const S> x, const S&, std::span<S> out) {
    out[0] = S(0.0);
    out[1] = x[0];
  });
  VectorXd e1(2);
  e1 << 1.0, 0.0;
  Field v1 = constant_field(e1);
  DrivingFields fields{v0, {v1}};
  VectorXd x(2);
  x << 0.3, -0.8;

  SECTION("empty index returns the base") {
    CHECK(bracket_iterate(fields, v1, BracketIndex{}, x, 0.0).isApprox(e1));
  }
  SECTION("index (0) on the diffusion gives (0,-1)") {
    VectorXd got = bracket_iterate(fields, v1, BracketIndex{{0}}, x, 0.7);
    CHECK(got(0) == Approx(0.0).margin(1e-14));
    CHECK(got(1) == Approx(-1.0).margin(1e-14));
  }
  SECTION("self bracket vanishes") {
    CHECK(bracket_iterate(fields, v1, BracketIndex{{1}}, x, 0.0).norm() == 0.0);
  }
}

TEST_CASE("gram matrix examples", "[vectorfield]") {
  SECTION("coordinate fields, L=0 -> identity") {
    int d = 3;
    std::vector<Field> diff;
    for (int i = 0; i < d; ++i) {
      VectorXd e = VectorXd::Zero(d);
      e(i) = 1.0;
      diff.push_back(constant_field(e));
    }
    DrivingFields fields{constant_field(VectorXd::Zero(d)), diff};
    CHECK(gram_matrix(fields, 0, VectorXd::Random(d), 0.0).isApprox(MatrixXd::Identity(d, d)));
    CHECK(hormander_quantity(fields, 0, VectorXd::Random(d), 0.0) == 1.0);
  }
  SECTION("flat kinetic, L=1 -> identity") {
    Field v0 = make_field(2, kMaxJetOrder, []<class S>(std::span<const S> x, const S&, std::span<S> out) {
      out[0] = S(0.0);
      out[1] = x[0];
    });
    VectorXd e1(2);
    e1 << 1.0, 0.0;
    DrivingFields fields{v0, {constant_field(e1)}};
    VectorXd x(2);
    x << 1.7, 0.4;
    CHECK(gram_matrix(fields, 1, x, 0.0).isApprox(MatrixXd::Identity(2, 2), 1e-14));
    CHECK(hormander_quantity(fields, 1, x, 0.0) == 1.0);
  }
  SECTION("single horizontal field, L=0 -> diag(1,0)") {
    VectorXd e1(2);
    e1 << 1.0, 0.0;
    DrivingFields fields{constant_field(VectorXd::Zero(2)), {constant_field(e1)}};
    MatrixXd want(2, 2);
    want << 1, 0, 0, 0;
    CHECK(gram_matrix(fields, 0, VectorXd::Zero(2), 0.0).isApprox(want));
    CHECK(hormander_quantity(fields, 0, VectorXd::Zero(2), 0.0) == 0.0);
  }
}

TEST_CASE("hormander quantity for the smooth kinetic system", "[vectorfield]") {
  Field v0 = kinetic_drift();
  Field v1 = kinetic_diffusion();
  // stratonovich drift = v0 - 1/2 grad(v1) v1
  auto vbar = make_field(2, kMaxJetOrder, []<class S>(std::span<const S> x, const S& t, std::span<S> out) {
    Dual<S> xd(x[0], S(1.0));
    Dual<S> sig = sigma_coef(xd, Dual<S>(t, S(0.0)));
    out[0] = b_coef(x[0], t) - 0.5 * sig.d * sig.v;
    out[1] = x[0];
  });
  DrivingFields fields{vbar, {v1}};
  VectorXd x(2);
  x << 0.9, -0.5;
  double q = hormander_quantity(fields, 1, x, 0.0);
  CHECK(q > 0.0);
}

TEST_CASE("gram matrix invariant under diffusion-field permutation", "[vectorfield]") {
  Rng rng(11);
  MatrixXd a = random_matrix(2, rng), b = random_matrix(2, rng);
  Field fa = linear_field(a), fb = linear_field(b);
  Field drift = kinetic_drift();
  VectorXd x(2);
  x << 0.2, 0.5;
  MatrixXd m1 = gram_matrix(DrivingFields{drift, {fa, fb}}, 1, x, 0.3);
  MatrixXd m2 = gram_matrix(DrivingFields{drift, {fb, fa}}, 1, x, 0.3);
  CHECK(m1.isApprox(m2, 1e-13));
}

TEST_CASE("gram matrix is symmetric PSD", "[vectorfield]") {
  Rng rng(13);
  MatrixXd a = random_matrix(3, rng);
  DrivingFields fields{linear_field(random_matrix(3, rng)), {linear_field(a)}};
  VectorXd x = VectorXd::Random(3);
  MatrixXd m = gram_matrix(fields, 1, x, 0.0);
  CHECK(m.isApprox(m.transpose(), 1e-13));
  CHECK(min_eigenvalue(m) >= -1e-12 * m.trace());
}

TEST_CASE("capability errors name the required order", "[vectorfield]") {
  auto v = make_field(2, 1, []<class S>(std::span<const S> x, const S&, std::span<S> out) {
    out[0] = x[0] * x[0];
    out[1] = x[1];
  });
  auto w = make_field(2, 1, []<class S>(std::span<const S> x, const S&, std::span<S> out) {
    out[0] = x[1];
    out[1] = x[0];
  });
  Field br = lie_bracket_field(v, w);  // order 0: values only
  CHECK(br.max_order() == 0);
  CHECK_THROWS_AS(jacobian_x(br, VectorXd::Zero(2), 0.0), CapabilityError);
  DrivingFields fields{v, {w}};
  CHECK_THROWS_AS(bracket_iterate(fields, w, BracketIndex{{0}}, VectorXd::Zero(2), 0.0),
                  CapabilityError);
}
