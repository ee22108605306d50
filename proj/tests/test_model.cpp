#include <catch2/catch_amalgamated.hpp>

#include "epictrl/lipschitz.hpp"
#include "epictrl/model.hpp"
#include "epictrl/rng.hpp"

using namespace epictrl;
using Catch::Approx;

namespace {

// Scalar transcription of the six compartment balance equations, kept
// independent of the matrix build so the two routes can be cross-checked.
Vector sidher_rhs_scalar(const ParameterVector& p, const Vector& x, const Vector& u) {
  const double S = x[0], I = x[1], D = x[2], H = x[3], R = x[5];
  Vector dx(6);
  dx[0] = p.lambda * R - p.beta * S * I * (1 - u[0]) - p.nu * S * u[3];
  dx[1] = -p.gamma * I + p.beta * S * I * (1 - u[0]) - p.tau * I * u[2];
  dx[2] = -(p.rho + p.phi) * D + p.tau * I * u[2];
  dx[3] = -p.xi * H * (1 - u[1]) + p.phi * D - p.sigma * H * u[1];
  dx[4] = p.xi * H * (1 - u[1]);
  dx[5] = -p.lambda * R + p.gamma * I + p.rho * D + p.nu * S * u[3] + p.sigma * H * u[1];
  return dx;
}

// Independent singular-value route: sqrt of the largest eigenvalue of J^T J.
double sigma_max_by_gram(const Matrix& J) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(J.transpose() * J);
  return std::sqrt(es.eigenvalues().maxCoeff());
}

}  // namespace

TEST_CASE("parameter validation rejects out-of-range fields by name") {
  ParameterVector p = sidher_true_parameters();
  p.gamma = 1.5;
  REQUIRE_THROWS_WITH(p.validate(), Catch::Matchers::ContainsSubstring("gamma"));
  p = sidher_true_parameters();
  p.beta = -0.1;
  REQUIRE_THROWS_WITH(p.validate(), Catch::Matchers::ContainsSubstring("beta"));
  REQUIRE_THROWS_AS(build_sidher(p), std::invalid_argument);
}

TEST_CASE("sidher matrices match the printed model") {
  const auto model = build_sidher(sidher_true_parameters());
  CHECK(model.A(1, 1) == Approx(-0.1));
  CHECK(model.A(2, 2) == Approx(-(0.05 + 0.1429)));
  CHECK(model.A(0, 5) == Approx(0.0167));
  CHECK(model.G(0, 0) == Approx(-0.35));
  CHECK(model.G(3, 2) == Approx(-0.04 + 0.02));
  CHECK(model.C(0, 0) == Approx(0.01));
  CHECK(model.C(9, 0) == 1.0);
  CHECK(model.C(9, 1) == 1.0);
  CHECK(model.C(9, 5) == 1.0);

  // population conservation: zero column sums of A and G
  for (int c = 0; c < 6; ++c) CHECK(model.A.col(c).sum() == Approx(0.0).margin(1e-15));
  for (int c = 0; c < 5; ++c) CHECK(model.G.col(c).sum() == Approx(0.0).margin(1e-15));

  // (A, C) observable in the linear sense
  Matrix obs(6 * 10, 6);
  Matrix Ak = Matrix::Identity(6, 6);
  for (int k = 0; k < 6; ++k) {
    obs.block(10 * k, 0, 10, 6) = model.C * Ak;
    Ak = Ak * model.A;
  }
  Eigen::JacobiSVD<Matrix> svd(obs);
  CHECK(svd.singularValues()[5] > 1e-8 * svd.singularValues()[0]);
}

TEST_CASE("zero parameters give zero A, G and the expected C rows") {
  ParameterVector zero{};
  const auto model = build_sidher(zero);
  CHECK(model.A.norm() == 0.0);
  CHECK(model.G.norm() == 0.0);
  for (int r : {0, 1, 3, 4, 6, 7}) CHECK(model.C.row(r).norm() == 0.0);
  CHECK(model.C.row(2).norm() == 1.0);
}

TEST_CASE("eval_dynamics agrees with the scalar equations") {
  const auto p = sidher_true_parameters();
  const auto model = build_sidher(p);

  SECTION("disease-free equilibrium") {
    Vector x(6), u(4);
    x << 1, 0, 0, 0, 0, 0;
    u.setZero();
    CHECK(eval_dynamics(model, x, u).norm() == Approx(0.0).margin(1e-16));
  }

  SECTION("frozen point value") {
    Vector x(6), u(4);
    x << 0.5, 0.5, 0, 0, 0, 0;
    u.setZero();
    const Vector dx = eval_dynamics(model, x, u);
    Vector expect(6);
    expect << -0.0875, 0.0375, 0, 0, 0, 0.05;
    CHECK((dx - expect).cwiseAbs().maxCoeff() == Approx(0.0).margin(1e-15));
  }

  SECTION("conservation and brute-force equivalence on random points") {
    Rng rng(7);
    for (int trial = 0; trial < 1000; ++trial) {
      Vector x(6), u(4);
      for (int i = 0; i < 6; ++i) x[i] = rng.uniform();
      x /= x.sum();
      for (int i = 0; i < 4; ++i) u[i] = rng.uniform();
      const Vector dx = eval_dynamics(model, x, u);
      CHECK(std::abs(dx.sum()) < 1e-14);
      CHECK((dx - sidher_rhs_scalar(p, x, u)).cwiseAbs().maxCoeff() < 1e-14);
    }
  }

  SECTION("dimension mismatch rejected") {
    REQUIRE_THROWS_AS(eval_dynamics(model, Vector::Zero(5), Vector::Zero(4)),
                      std::invalid_argument);
    REQUIRE_THROWS_AS(eval_dynamics(model, Vector::Zero(6), Vector::Zero(3)),
                      std::invalid_argument);
  }
}

TEST_CASE("eval_output matches the output list") {
  const auto model = build_sidher(sidher_true_parameters());
  Vector x(6);
  x << 1, 0, 0, 0, 0, 0;
  Vector y = eval_output(model, x);
  Vector expect = Vector::Zero(10);
  expect[0] = 0.01;
  expect[9] = 1.0;
  CHECK((y - expect).cwiseAbs().maxCoeff() == Approx(0.0).margin(1e-15));

  CHECK(eval_output(model, Vector::Zero(6)).norm() == 0.0);

  Rng rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    for (int i = 0; i < 6; ++i) x[i] = rng.uniform();
    x /= x.sum();
    y = eval_output(model, x);
    CHECK(y[2] + y[5] + y[8] + y[9] ==
          Approx(1.0).margin(1e-12));  // y3 + y6 + y9 + y10 = 1 on the simplex
    CHECK(y[9] == Approx(1.0 - (y[2] + y[5] + y[8])).margin(1e-12));
  }
  REQUIRE_THROWS_AS(eval_output(model, Vector::Zero(4)), std::invalid_argument);
}

TEST_CASE("model json round trip") {
  const auto model = build_sidher(sidher_true_parameters());
  const json j = model_to_json(model);
  CHECK(j.at("nonlinearity") == "sidher_f");
  const auto back = model_from_json(j);
  CHECK((back.A - model.A).norm() == 0.0);
  CHECK((back.G - model.G).norm() == 0.0);
  CHECK((back.C - model.C).norm() == 0.0);
  CHECK(back.theta.tau == model.theta.tau);
  Vector q(3), u(4);
  q << 0.3, 0.2, 0.1;
  u << 0.1, 0.2, 0.3, 0.4;
  CHECK((back.f.eval(q, u) - model.f.eval(q, u)).norm() == 0.0);
}

TEST_CASE("lipschitz constant of the sidher nonlinearity") {
  const auto model = build_sidher(sidher_true_parameters());

  SECTION("constant nonlinearity has zero constant") {
    StructuredModel flat = model;
    flat.f.name = "const";
    flat.f.eval = [](const Vector&, const Vector&) { return Vector::Zero(5); };
    flat.f.jacobian_q = nullptr;
    CHECK(estimate_lipschitz(flat, sidher_default_domain(false), 5) == Approx(0.0).margin(1e-9));
  }

  SECTION("box domain: corner value sqrt(4.49)") {
    // Oracle: the Jacobian entries are entrywise monotone in (q, u), so the
    // maximum over the box sits at a corner; enumerate all corners with an
    // independent sigma_max route.
    const Domain dom = sidher_default_domain(false);
    double best = 0.0;
    for (int mask = 0; mask < (1 << 7); ++mask) {
      Vector q(3), u(4);
      for (int d = 0; d < 3; ++d) q[d] = (mask >> d) & 1 ? dom.state_hi[d] : dom.state_lo[d];
      for (int d = 0; d < 4; ++d)
        u[d] = (mask >> (3 + d)) & 1 ? dom.input_hi[d] : dom.input_lo[d];
      best = std::max(best, sigma_max_by_gram(model.f.jacobian_q(q, u)));
    }
    CHECK(best == Approx(std::sqrt(4.49)).epsilon(1e-12));

    const auto est = estimate_lipschitz_detail(model, dom, 21);
    CHECK(est.value == Approx(std::sqrt(4.49)).epsilon(1e-9));
    CHECK(est.q_at_max[0] == Approx(1.0));
    CHECK(est.q_at_max[1] == Approx(1.0));
    CHECK(est.u_at_max[0] == Approx(1.0));
    // u2 does not enter the maximising block, so only u1, u3, u4 are pinned
    CHECK(est.u_at_max[2] == Approx(0.7));
    CHECK(est.u_at_max[3] == Approx(0.7));

    // monotone nondecreasing in grid density
    CHECK(estimate_lipschitz(model, dom, 3) <= estimate_lipschitz(model, dom, 9) + 1e-12);
    CHECK(estimate_lipschitz(model, dom, 9) <= est.value + 1e-12);
  }

  SECTION("simplex domain: sqrt(2.49) attained at a vertex") {
    // Oracle: grid over simplex slices (S + I + H <= 1) at fine resolution.
    const Domain dom = sidher_default_domain(true);
    double best = 0.0;
    const int gd = 41;
    Vector u(4);
    u << 1.0, 0.9, 0.7, 0.7;  // entrywise monotone in u, so take the input corner
    for (int a = 0; a < gd; ++a)
      for (int b = 0; a + b < gd; ++b)
        for (int c = 0; a + b + c < gd; ++c) {
          Vector q(3);
          q << double(a) / (gd - 1), double(b) / (gd - 1), double(c) / (gd - 1);
          best = std::max(best, sigma_max_by_gram(model.f.jacobian_q(q, u)));
        }
    CHECK(best == Approx(std::sqrt(2.49)).epsilon(1e-12));

    const auto est = estimate_lipschitz_detail(model, dom, 21);
    CHECK(est.value == Approx(std::sqrt(2.49)).epsilon(1e-9));
    const bool at_S = est.q_at_max[0] == Approx(1.0) && est.q_at_max[1] == Approx(0.0).margin(1e-12);
    const bool at_I = est.q_at_max[1] == Approx(1.0) && est.q_at_max[0] == Approx(0.0).margin(1e-12);
    CHECK((at_S || at_I));
  }

  SECTION("lipschitz inequality holds on random pairs") {
    const Domain dom = sidher_default_domain(false);
    const double ell = estimate_lipschitz(model, dom, 21);
    Rng rng(11);
    for (int trial = 0; trial < 10000; ++trial) {
      Vector x(6), xh(6), u(4);
      for (int i = 0; i < 6; ++i) {
        x[i] = rng.uniform();
        xh[i] = rng.uniform();
      }
      for (int i = 0; i < 4; ++i)
        u[i] = rng.uniform(dom.input_lo[i], dom.input_hi[i]);
      const double lhs = (model.f.eval(model.H * x, u) - model.f.eval(model.H * xh, u)).norm();
      const double rhs = ell * (model.H * x - model.H * xh).norm();
      REQUIRE(lhs <= rhs + 1e-12);
    }
  }

  SECTION("empty domain rejected") {
    Domain dom = sidher_default_domain(false);
    dom.state_lo[0] = 2.0;
    REQUIRE_THROWS_AS(estimate_lipschitz(model, dom, 5), std::invalid_argument);
    REQUIRE_THROWS_AS(estimate_lipschitz(model, sidher_default_domain(false), 1),
                      std::invalid_argument);
  }
}
