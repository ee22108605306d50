#pragma once

#include <Eigen/Dense>

#include <array>
#include <functional>
#include <stdexcept>
#include <string>

#include "json.hpp"

namespace epictrl {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using json = nlohmann::json;

/// Epidemic rate parameters, all in 1/day. Field order matches the reporting
/// convention used throughout (beta, gamma, rho, sigma, xi, lambda, phi, tau, nu).
struct ParameterVector {
  double beta = 0.0;
  double gamma = 0.0;
  double rho = 0.0;
  double sigma = 0.0;
  double xi = 0.0;
  double lambda = 0.0;
  double phi = 0.0;
  double tau = 0.0;
  double nu = 0.0;

  static constexpr int size() { return 9; }

  static const std::array<std::string, 9>& names() {
    static const std::array<std::string, 9> n = {"beta", "gamma", "rho",    "sigma", "xi",
                                                 "lambda", "phi", "tau", "nu"};
    return n;
  }

  double get(int i) const {
    switch (i) {
      case 0: return beta;
      case 1: return gamma;
      case 2: return rho;
      case 3: return sigma;
      case 4: return xi;
      case 5: return lambda;
      case 6: return phi;
      case 7: return tau;
      case 8: return nu;
      default: throw std::out_of_range("ParameterVector index");
    }
  }

  void set(int i, double v) {
    switch (i) {
      case 0: beta = v; break;
      case 1: gamma = v; break;
      case 2: rho = v; break;
      case 3: sigma = v; break;
      case 4: xi = v; break;
      case 5: lambda = v; break;
      case 6: phi = v; break;
      case 7: tau = v; break;
      case 8: nu = v; break;
      default: throw std::out_of_range("ParameterVector index");
    }
  }

  double get(const std::string& name) const { return get(index_of(name)); }
  void set(const std::string& name, double v) { set(index_of(name), v); }

  static int index_of(const std::string& name) {
    const auto& n = names();
    for (int i = 0; i < size(); ++i)
      if (n[static_cast<std::size_t>(i)] == name) return i;
    throw std::invalid_argument("unknown parameter name: " + name);
  }

  Eigen::VectorXd to_vector() const {
    Eigen::VectorXd v(size());
    for (int i = 0; i < size(); ++i) v[i] = get(i);
    return v;
  }

  static ParameterVector from_vector(const Eigen::VectorXd& v) {
    if (v.size() != size()) throw std::invalid_argument("ParameterVector: expected 9 entries");
    ParameterVector p;
    for (int i = 0; i < size(); ++i) p.set(i, v[i]);
    return p;
  }

  /// beta >= 0; every other rate must lie in [0, 1]. Throws naming the
  /// offending field.
  void validate() const {
    if (!(beta >= 0.0)) throw std::invalid_argument("invalid parameter: beta must be >= 0");
    for (int i = 1; i < size(); ++i) {
      const double v = get(i);
      if (!(v >= 0.0 && v <= 1.0))
        throw std::invalid_argument("invalid parameter: " + names()[static_cast<std::size_t>(i)] +
                                    " must be in [0,1]");
    }
  }

  json to_json() const {
    json j;
    for (int i = 0; i < size(); ++i) j[names()[static_cast<std::size_t>(i)]] = get(i);
    return j;
  }

  static ParameterVector from_json(const json& j) {
    ParameterVector p;
    for (int i = 0; i < size(); ++i)
      p.set(i, j.at(names()[static_cast<std::size_t>(i)]).get<double>());
    return p;
  }
};

/// Table of "true" parameter values used by the synthetic case study.
inline ParameterVector sidher_true_parameters() {
  ParameterVector p;
  p.beta = 0.35;
  p.gamma = 0.10;
  p.rho = 0.05;
  p.sigma = 0.04;
  p.xi = 0.02;
  p.lambda = 0.0167;
  p.phi = 0.1429;
  p.tau = 0.30;
  p.nu = 0.01;
  return p;
}

/// Reference estimated values reported for the same case study.
inline ParameterVector sidher_reported_estimates() {
  ParameterVector p;
  p.beta = 0.3530;
  p.gamma = 0.0981;
  p.rho = 0.0501;
  p.sigma = 0.0399;
  p.xi = 0.0202;
  p.lambda = 0.0383;
  p.phi = 0.1428;
  p.tau = 0.2757;
  p.nu = 0.0100;
  return p;
}

struct Dims {
  int n_x = 0;
  int n_u = 0;
  int n_y = 0;
  int n_g = 0;
  int n_f = 0;
  int n_H = 0;
};

/// State-coupled nonlinearity f(q, u) with q = H x. The Jacobian with respect
/// to q is optional; when absent a central finite difference is used.
struct Nonlinearity {
  std::string name;
  std::function<Vector(const Vector& q, const Vector& u)> eval;
  std::function<Matrix(const Vector& q, const Vector& u)> jacobian_q;  // may be empty
};

/// x' = A x + G f(H x, u),  y = C x.
struct StructuredModel {
  Matrix A;  // n_x x n_x
  Matrix G;  // n_x x n_g
  Matrix C;  // n_y x n_x
  Matrix H;  // n_H x n_x, binary selector
  Nonlinearity f;
  ParameterVector theta;
  Dims dims;

  void check() const {
    if (A.rows() != dims.n_x || A.cols() != dims.n_x) throw std::invalid_argument("model: A dims");
    if (G.rows() != dims.n_x || G.cols() != dims.n_g) throw std::invalid_argument("model: G dims");
    if (C.rows() != dims.n_y || C.cols() != dims.n_x) throw std::invalid_argument("model: C dims");
    if (H.rows() != dims.n_H || H.cols() != dims.n_x) throw std::invalid_argument("model: H dims");
    if (dims.n_g != dims.n_f) throw std::invalid_argument("model: n_g must equal n_f");
    for (int r = 0; r < H.rows(); ++r) {
      int ones = 0;
      for (int c = 0; c < H.cols(); ++c) {
        const double v = H(r, c);
        if (v != 0.0 && v != 1.0) throw std::invalid_argument("model: H entries must be 0/1");
        if (v == 1.0) ++ones;
      }
      if (ones != 1) throw std::invalid_argument("model: each H row must select exactly one state");
    }
  }
};

namespace sidher {
// State ordering (S, I, D, H, E, R).
constexpr int kS = 0;
constexpr int kI = 1;
constexpr int kD = 2;
constexpr int kH = 3;
constexpr int kE = 4;
constexpr int kR = 5;
inline const std::array<std::string, 6>& state_names() {
  static const std::array<std::string, 6> n = {"S", "I", "D", "H", "E", "R"};
  return n;
}
}  // namespace sidher

/// f(Hx, u) = [S*I, S*I*u1, H*u2, I*u3, S*u4] with q = (S, I, H).
inline Nonlinearity make_sidher_nonlinearity() {
  Nonlinearity nl;
  nl.name = "sidher_f";
  nl.eval = [](const Vector& q, const Vector& u) {
    if (q.size() != 3 || u.size() != 4) throw std::invalid_argument("sidher_f: dimension mismatch");
    Vector f(5);
    f << q[0] * q[1], q[0] * q[1] * u[0], q[2] * u[1], q[1] * u[2], q[0] * u[3];
    return f;
  };
  nl.jacobian_q = [](const Vector& q, const Vector& u) {
    Matrix J = Matrix::Zero(5, 3);
    J(0, 0) = q[1];
    J(0, 1) = q[0];
    J(1, 0) = q[1] * u[0];
    J(1, 1) = q[0] * u[0];
    J(2, 2) = u[1];
    J(3, 1) = u[2];
    J(4, 0) = u[3];
    return J;
  };
  return nl;
}

inline Nonlinearity nonlinearity_from_registry(const std::string& name) {
  if (name == "sidher_f") return make_sidher_nonlinearity();
  throw std::invalid_argument("unknown nonlinearity: " + name);
}

namespace detail {

/// Matrix assembly without the range validation; solvers probing the
/// neighbourhood of a bound need evaluability slightly outside it.
inline StructuredModel build_sidher_unchecked(const ParameterVector& theta) {
  using namespace sidher;

  StructuredModel m;
  m.theta = theta;
  m.dims = Dims{6, 4, 10, 5, 5, 3};

  Matrix A = Matrix::Zero(6, 6);
  A(kS, kR) = theta.lambda;
  A(kI, kI) = -theta.gamma;
  A(kD, kD) = -(theta.rho + theta.phi);
  A(kH, kD) = theta.phi;
  A(kH, kH) = -theta.xi;
  A(kE, kH) = theta.xi;
  A(kR, kI) = theta.gamma;
  A(kR, kD) = theta.rho;
  A(kR, kR) = -theta.lambda;
  m.A = A;

  Matrix G = Matrix::Zero(6, 5);
  G(kS, 0) = -theta.beta;
  G(kS, 1) = theta.beta;
  G(kS, 4) = -theta.nu;
  G(kI, 0) = theta.beta;
  G(kI, 1) = -theta.beta;
  G(kI, 3) = -theta.tau;
  G(kD, 3) = theta.tau;
  G(kH, 2) = -theta.sigma + theta.xi;
  G(kE, 2) = -theta.xi;
  G(kR, 2) = theta.sigma;
  G(kR, 4) = theta.nu;
  m.G = G;

  Matrix C = Matrix::Zero(10, 6);
  C(0, kS) = theta.nu;
  C(1, kI) = theta.tau;
  C(2, kD) = 1.0;
  C(3, kD) = theta.rho;
  C(4, kD) = theta.phi;
  C(5, kH) = 1.0;
  C(6, kH) = theta.sigma;
  C(7, kH) = theta.xi;
  C(8, kE) = 1.0;
  C(9, kS) = 1.0;
  C(9, kI) = 1.0;
  C(9, kR) = 1.0;
  m.C = C;

  Matrix H = Matrix::Zero(3, 6);
  H(0, kS) = 1.0;
  H(1, kI) = 1.0;
  H(2, kH) = 1.0;
  m.H = H;

  m.f = make_sidher_nonlinearity();
  m.check();
  return m;
}

}  // namespace detail

/// Build the six-compartment SIDHER model in structured form.
inline StructuredModel build_sidher(const ParameterVector& theta) {
  theta.validate();
  return detail::build_sidher_unchecked(theta);
}

inline Vector eval_dynamics(const StructuredModel& m, const Vector& x, const Vector& u) {
  if (x.size() != m.dims.n_x) throw std::invalid_argument("eval_dynamics: state dimension mismatch");
  if (u.size() != m.dims.n_u) throw std::invalid_argument("eval_dynamics: input dimension mismatch");
  return m.A * x + m.G * m.f.eval(m.H * x, u);
}

inline Vector eval_output(const StructuredModel& m, const Vector& x) {
  if (x.size() != m.dims.n_x) throw std::invalid_argument("eval_output: state dimension mismatch");
  return m.C * x;
}

/// Closed box domain for states and inputs; states may additionally be
/// restricted to the unit simplex.
struct Domain {
  Vector state_lo, state_hi;
  Vector input_lo, input_hi;
  bool simplex = false;

  void check() const {
    if (state_lo.size() != state_hi.size() || input_lo.size() != input_hi.size())
      throw std::invalid_argument("domain: bound size mismatch");
    for (int i = 0; i < state_lo.size(); ++i)
      if (state_lo[i] > state_hi[i]) throw std::invalid_argument("domain: empty state box");
    for (int i = 0; i < input_lo.size(); ++i)
      if (input_lo[i] > input_hi[i]) throw std::invalid_argument("domain: empty input box");
  }
};

/// Default SIDHER domain: states in [0,1]^6, inputs in the intervention
/// bounds [0,1] x [0,0.9] x [0.1,0.7] x [0,0.7].
inline Domain sidher_default_domain(bool simplex = false) {
  Domain d;
  d.state_lo = Vector::Zero(6);
  d.state_hi = Vector::Ones(6);
  d.input_lo = Vector(4);
  d.input_hi = Vector(4);
  d.input_lo << 0.0, 0.0, 0.1, 0.0;
  d.input_hi << 1.0, 0.9, 0.7, 0.7;
  d.simplex = simplex;
  return d;
}

inline json matrix_to_json(const Matrix& m) {
  json rows = json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    json row = json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    rows.push_back(row);
  }
  return rows;
}

inline Matrix matrix_from_json(const json& j) {
  const auto rows = j.size();
  if (rows == 0) return Matrix(0, 0);
  const auto cols = j.at(0).size();
  Matrix m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c)
      m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = j.at(r).at(c).get<double>();
  return m;
}

inline json model_to_json(const StructuredModel& m) {
  json j;
  j["dims"] = {{"n_x", m.dims.n_x}, {"n_u", m.dims.n_u}, {"n_y", m.dims.n_y},
               {"n_g", m.dims.n_g}, {"n_f", m.dims.n_f}, {"n_H", m.dims.n_H}};
  j["A"] = matrix_to_json(m.A);
  j["G"] = matrix_to_json(m.G);
  j["C"] = matrix_to_json(m.C);
  j["H"] = matrix_to_json(m.H);
  j["theta"] = m.theta.to_json();
  j["nonlinearity"] = m.f.name;
  return j;
}

inline StructuredModel model_from_json(const json& j) {
  StructuredModel m;
  const auto& d = j.at("dims");
  m.dims = Dims{d.at("n_x").get<int>(), d.at("n_u").get<int>(), d.at("n_y").get<int>(),
                d.at("n_g").get<int>(), d.at("n_f").get<int>(), d.at("n_H").get<int>()};
  m.A = matrix_from_json(j.at("A"));
  m.G = matrix_from_json(j.at("G"));
  m.C = matrix_from_json(j.at("C"));
  m.H = matrix_from_json(j.at("H"));
  m.theta = ParameterVector::from_json(j.at("theta"));
  m.f = nonlinearity_from_registry(j.at("nonlinearity").get<std::string>());
  m.check();
  return m;
}

}  // namespace epictrl
