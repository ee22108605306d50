#pragma once

#include <boost/numeric/odeint.hpp>
#include <boost/numeric/odeint/external/eigen/eigen.hpp>

#include <cmath>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "epictrl/model.hpp"

namespace epictrl {

/// Step-control settings. fixed_dt > 0 selects a fixed-step fourth-order
/// scheme (used where a known-order method or a perfectly smooth map is
/// needed); otherwise an adaptive Dormand-Prince 5(4) scheme is used.
/// abs_tol/rel_tol are end-to-end accuracy targets: the per-step controller
/// runs three orders of magnitude tighter, which absorbs the error growth a
/// 30-day epidemic horizon amplifies.
struct ToleranceSpec {
  double abs_tol = 1e-9;
  double rel_tol = 1e-9;
  double fixed_dt = 0.0;
  double init_dt = 1e-3;
};

class IntegrationError : public std::runtime_error {
 public:
  IntegrationError(const std::string& what, double last_valid_time)
      : std::runtime_error(what), last_valid_time_(last_valid_time) {}
  double last_valid_time() const { return last_valid_time_; }

 private:
  double last_valid_time_;
};

struct Trajectory {
  std::vector<double> times;
  Matrix states;   // n_t x n_x
  Matrix outputs;  // n_t x n_y (0 columns if not recorded)
  Matrix inputs;   // n_t x n_u (0 columns if not recorded)

  int size() const { return static_cast<int>(times.size()); }
  Vector state_at(int k) const { return states.row(k).transpose(); }

  void check() const {
    const auto n = static_cast<Eigen::Index>(times.size());
    if (states.rows() != n) throw std::invalid_argument("trajectory: length mismatch");
    if (outputs.size() > 0 && outputs.rows() != n)
      throw std::invalid_argument("trajectory: output length mismatch");
    if (inputs.size() > 0 && inputs.rows() != n)
      throw std::invalid_argument("trajectory: input length mismatch");
    for (std::size_t k = 1; k < times.size(); ++k)
      if (!(times[k] > times[k - 1]))
        throw std::invalid_argument("trajectory: times must be strictly increasing");
  }
};

using InputFn = std::function<Vector(double)>;
using OdeRhs = std::function<Vector(double, const Vector&)>;

namespace detail {

using OdeintStepper =
    boost::numeric::odeint::runge_kutta_dopri5<Vector, double, Vector, double,
                                               boost::numeric::odeint::vector_space_algebra>;

inline void rk4_step(const OdeRhs& rhs, double t, double h, Vector& x) {
  const Vector k1 = rhs(t, x);
  const Vector k2 = rhs(t + 0.5 * h, x + 0.5 * h * k1);
  const Vector k3 = rhs(t + 0.5 * h, x + 0.5 * h * k2);
  const Vector k4 = rhs(t + h, x + h * k3);
  x += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
}

}  // namespace detail

/// Integrate x' = rhs(t, x) from sample_times.front() and return the state at
/// every sample time (the first entry is x0 itself). `breakpoints` lists known
/// discontinuity times of the right-hand side (input switches); steps never
/// straddle them, which keeps the error estimate honest. Non-finite states or
/// step-size breakdown raise IntegrationError carrying the last valid time.
inline std::vector<Vector> integrate_ode(const OdeRhs& rhs, const Vector& x0,
                                         const std::vector<double>& sample_times,
                                         const ToleranceSpec& tol = {},
                                         const std::vector<double>* breakpoints = nullptr) {
  namespace ode = boost::numeric::odeint;
  if (sample_times.size() < 1) throw std::invalid_argument("integrate: empty sample grid");
  for (std::size_t k = 1; k < sample_times.size(); ++k)
    if (!(sample_times[k] > sample_times[k - 1]))
      throw std::invalid_argument("integrate: sample times must be strictly increasing");

  std::vector<Vector> out;
  out.reserve(sample_times.size());
  Vector x = x0;
  if (!x.allFinite()) throw IntegrationError("integrate: non-finite initial state", sample_times[0]);
  out.push_back(x);

  const bool fixed = tol.fixed_dt > 0.0;
  constexpr double kStepBudget = 1e-3;  // per-step share of the end-to-end target
  auto stepper = ode::make_controlled<detail::OdeintStepper>(kStepBudget * tol.abs_tol,
                                                             kStepBudget * tol.rel_tol);

  const auto advance = [&](double ta, double tb) {
    // Stage times are clamped to the open interior of the segment so that a
    // right-hand side that switches exactly at a segment boundary is always
    // sampled on the correct branch.
    const double margin = 1e-12 * (1.0 + std::max(std::abs(ta), std::abs(tb)));
    const double lo = ta + margin, hi = tb - margin;
    const OdeRhs rhs_clamped = lo < hi
        ? OdeRhs([&rhs, lo, hi](double t, const Vector& s) {
            return rhs(std::clamp(t, lo, hi), s);
          })
        : rhs;
    if (fixed) {
      const int n = std::max(1, static_cast<int>(std::ceil((tb - ta) / tol.fixed_dt - 1e-12)));
      const double h = (tb - ta) / n;
      for (int i = 0; i < n; ++i) detail::rk4_step(rhs_clamped, ta + i * h, h, x);
    } else {
      auto system = [&rhs_clamped](const Vector& s, Vector& dsdt, double t) {
        dsdt = rhs_clamped(t, s);
      };
      ode::integrate_adaptive(stepper, system, x, ta, tb, std::min(tol.init_dt, tb - ta));
    }
  };

  for (std::size_t k = 1; k < sample_times.size(); ++k) {
    const double ta = sample_times[k - 1];
    const double tb = sample_times[k];
    try {
      double t = ta;
      if (breakpoints) {
        auto it = std::upper_bound(breakpoints->begin(), breakpoints->end(), ta);
        for (; it != breakpoints->end() && *it < tb; ++it) {
          if (*it - t > 1e-12) {
            advance(t, *it);
            t = *it;
          }
        }
      }
      if (tb - t > 0) advance(t, tb);
    } catch (const std::exception& e) {
      throw IntegrationError(std::string("integrate: step-size breakdown (") + e.what() + ")", ta);
    }
    if (!x.allFinite()) throw IntegrationError("integrate: non-finite state", ta);
    out.push_back(x);
  }
  return out;
}

inline std::vector<double> make_time_grid(double t0, double t1, double dt) {
  if (!(t1 > t0)) throw std::invalid_argument("time grid: need t1 > t0");
  if (!(dt > 0.0)) throw std::invalid_argument("time grid: need dt > 0");
  const int n = std::max(1, static_cast<int>(std::llround((t1 - t0) / dt)));
  std::vector<double> ts(static_cast<std::size_t>(n) + 1);
  for (int i = 0; i <= n; ++i) ts[static_cast<std::size_t>(i)] = t0 + (t1 - t0) * i / n;
  ts.back() = t1;
  return ts;
}

/// Integrate the structured model through the given sample times, recording
/// states, outputs and applied inputs.
inline Trajectory integrate_at(const StructuredModel& model, const Vector& x0,
                               const InputFn& input_fn, const std::vector<double>& sample_times,
                               const ToleranceSpec& tol = {},
                               const std::vector<double>* input_breakpoints = nullptr) {
  if (x0.size() != model.dims.n_x) throw std::invalid_argument("integrate: x0 dimension mismatch");
  OdeRhs rhs = [&](double t, const Vector& x) { return eval_dynamics(model, x, input_fn(t)); };
  const auto xs = integrate_ode(rhs, x0, sample_times, tol, input_breakpoints);

  Trajectory traj;
  traj.times = sample_times;
  const int n = static_cast<int>(sample_times.size());
  traj.states.resize(n, model.dims.n_x);
  traj.outputs.resize(n, model.dims.n_y);
  traj.inputs.resize(n, model.dims.n_u);
  for (int k = 0; k < n; ++k) {
    traj.states.row(k) = xs[static_cast<std::size_t>(k)].transpose();
    traj.outputs.row(k) = eval_output(model, xs[static_cast<std::size_t>(k)]).transpose();
    traj.inputs.row(k) = input_fn(sample_times[static_cast<std::size_t>(k)]).transpose();
  }
  return traj;
}

inline Trajectory integrate(const StructuredModel& model, const Vector& x0, const InputFn& input_fn,
                            double t0, double t1, const ToleranceSpec& tol = {},
                            double sample_dt = 0.1,
                            const std::vector<double>* input_breakpoints = nullptr) {
  return integrate_at(model, x0, input_fn, make_time_grid(t0, t1, sample_dt), tol,
                      input_breakpoints);
}

}  // namespace epictrl
