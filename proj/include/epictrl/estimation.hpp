#pragma once

#include <ceres/ceres.h>

#include <future>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "epictrl/dataset.hpp"
#include "epictrl/integrate.hpp"
#include "epictrl/model.hpp"
#include "epictrl/rng.hpp"

namespace epictrl {

struct ClosedFormRates {
  double rho = 0.0;
  double phi = 0.0;
  double sigma = 0.0;
  double xi = 0.0;
};

namespace detail {

inline double trapezoid_product(const std::vector<double>& t, const Vector& a, const Vector& b) {
  double acc = 0.0;
  for (std::size_t k = 1; k < t.size(); ++k) {
    const auto i = static_cast<Eigen::Index>(k);
    acc += 0.5 * (t[k] - t[k - 1]) * (a[i - 1] * b[i - 1] + a[i] * b[i]);
  }
  return acc;
}

}  // namespace detail

/// Closed-form least-squares ratios for the detected/hospitalized rates:
///   rho  = int(y3 y4) / int(y3^2),  phi = int(y3 y5) / int(y3^2),
///   sigma = int(y6 y7) / int(y6^2), xi  = int(y6 y8) / int(y6^2),
/// integrals by the trapezoid rule on the recorded grid. The pointwise
/// variant integrates the sample-wise ratio instead (kept behind a flag; it
/// scales with the record length rather than solving the least squares
/// problem).
inline ClosedFormRates closed_form_rates(const DataSet& data, bool pointwise_variant = false) {
  data.check();
  if (data.y_bar.cols() < 8) throw std::invalid_argument("closed_form_rates: need outputs y3..y8");
  const Vector y3 = data.y_bar.col(2), y4 = data.y_bar.col(3), y5 = data.y_bar.col(4);
  const Vector y6 = data.y_bar.col(5), y7 = data.y_bar.col(6), y8 = data.y_bar.col(7);

  ClosedFormRates r;
  if (pointwise_variant) {
    const auto ratio_integral = [&](const Vector& num, const Vector& den) {
      Vector q(num.size());
      for (Eigen::Index i = 0; i < num.size(); ++i) {
        const double d = den[i] * den[i];
        if (std::abs(d) < 1e-30)
          throw std::invalid_argument("closed_form_rates: vanishing denominator sample");
        q[i] = num[i] * den[i] / d;
      }
      return detail::trapezoid_product(data.times, q, Vector::Ones(q.size()));
    };
    r.rho = ratio_integral(y4, y3);
    r.phi = ratio_integral(y5, y3);
    r.sigma = ratio_integral(y7, y6);
    r.xi = ratio_integral(y8, y6);
    return r;
  }

  const double d3 = detail::trapezoid_product(data.times, y3, y3);
  const double d6 = detail::trapezoid_product(data.times, y6, y6);
  if (d3 < 1e-30)
    throw std::invalid_argument("closed_form_rates: no detected signal (int y3^2 ~ 0)");
  if (d6 < 1e-30)
    throw std::invalid_argument("closed_form_rates: no hospitalized signal (int y6^2 ~ 0)");
  r.rho = detail::trapezoid_product(data.times, y3, y4) / d3;
  r.phi = detail::trapezoid_product(data.times, y3, y5) / d3;
  r.sigma = detail::trapezoid_product(data.times, y6, y7) / d6;
  r.xi = detail::trapezoid_product(data.times, y6, y8) / d6;
  return r;
}

/// Initial-state guess: S0 uniform on [0.95, 1], I0 uniform on [0, 0.05],
/// (D0, H0, E0) read off the first record of (y3, y6, y9) clamped to [0, 1],
/// R0 completing the simplex (S0 is reduced if the budget is exceeded).
inline Vector guess_initial_state(const DataSet& data, std::uint64_t seed) {
  if (data.size() == 0) throw std::invalid_argument("guess_initial_state: empty dataset");
  Rng rng(seed);
  double S0 = rng.uniform(0.95, 1.0);
  const double I0 = rng.uniform(0.0, 0.05);
  const double D0 = std::clamp(data.y_bar(0, 2), 0.0, 1.0);
  const double H0 = std::clamp(data.y_bar(0, 5), 0.0, 1.0);
  const double E0 = std::clamp(data.y_bar(0, 8), 0.0, 1.0);
  double R0 = 1.0 - (S0 + I0 + D0 + H0 + E0);
  if (R0 < 0.0) {
    S0 = std::max(0.0, S0 + R0);  // give the deficit back
    R0 = 1.0 - (S0 + I0 + D0 + H0 + E0);
    R0 = std::max(R0, 0.0);
  }
  R0 = std::min(R0, 1.0);
  Vector x0(6);
  x0 << S0, I0, D0, H0, E0, R0;
  return x0;
}

struct EstimationConfig {
  std::map<std::string, double> fixed_params;  // pre-estimated rates, by name
  ParameterVector bounds_lo;                   // default all zero
  ParameterVector bounds_hi;                   // default [0,1] rates, beta in [0,2]
  ParameterVector theta_init;
  enum class X0Policy { kFixedGuess, kEstimateSI };
  X0Policy x0_policy = X0Policy::kEstimateSI;
  int max_iterations = 200;
  double gradient_tolerance = 1e-12;
  int multistart_count = 5;
  std::uint64_t seed = 0;
  ToleranceSpec integ{1e-10, 1e-10};

  EstimationConfig() {
    bounds_lo = ParameterVector{};  // all zero
    for (int i = 0; i < ParameterVector::size(); ++i) bounds_hi.set(i, 1.0);
    bounds_hi.beta = 2.0;
    // neutral mid-magnitude start; multistarts spread around it
    theta_init.beta = 0.5;
    theta_init.gamma = 0.15;
    theta_init.tau = 0.15;
    theta_init.nu = 0.02;
    theta_init.lambda = 0.01;
    theta_init.rho = 0.05;
    theta_init.phi = 0.1;
    theta_init.sigma = 0.05;
    theta_init.xi = 0.02;
  }

  void validate() const {
    if (multistart_count < 1) throw std::invalid_argument("estimation: multistart_count >= 1");
    for (int i = 0; i < ParameterVector::size(); ++i) {
      if (bounds_lo.get(i) > bounds_hi.get(i))
        throw std::invalid_argument("estimation: empty bound interval");
      if (theta_init.get(i) < bounds_lo.get(i) - 1e-12 ||
          theta_init.get(i) > bounds_hi.get(i) + 1e-12)
        throw std::invalid_argument("estimation: theta_init outside bounds");
    }
  }
};

struct StartResult {
  ParameterVector theta;
  Vector x0;
  double residual_norm = std::numeric_limits<double>::infinity();
  double inner_cost = std::numeric_limits<double>::infinity();
  int iterations = 0;
  std::string termination;
  bool usable = false;
};

struct EstimationResult {
  ParameterVector theta_hat;
  Vector x0_used;
  double residual_norm = std::numeric_limits<double>::infinity();
  int iterations = 0;
  std::string termination;
  bool converged = false;
  int best_start = -1;
  std::vector<StartResult> starts;

  json to_json() const {
    json j;
    j["theta_hat"] = theta_hat.to_json();
    j["x0_used"] = std::vector<double>(x0_used.data(), x0_used.data() + x0_used.size());
    j["residual_norm"] = residual_norm;
    j["iterations"] = iterations;
    j["termination"] = termination;
    j["converged"] = converged;
    j["best_start"] = best_start;
    json starts_j = json::array();
    for (const auto& s : starts) {
      starts_j.push_back({{"theta", s.theta.to_json()},
                          {"residual_norm", s.residual_norm},
                          {"inner_cost", s.inner_cost},
                          {"iterations", s.iterations},
                          {"termination", s.termination},
                          {"usable", s.usable}});
    }
    j["starts"] = starts_j;
    return j;
  }

  /// Two-column comparison table (true column blank when truth unknown).
  void write_table_csv(const std::string& path, const ParameterVector* truth) const {
    std::ostringstream out;
    out << "parameter,true,estimated\n";
    for (int i = 0; i < ParameterVector::size(); ++i) {
      out << ParameterVector::names()[static_cast<std::size_t>(i)] << ",";
      if (truth) out << fmt_double(truth->get(i));
      out << "," << fmt_double(theta_hat.get(i)) << "\n";
    }
    write_text_file(path, out.str());
  }
};

namespace detail {

/// Trapezoid weights for the sample grid.
inline Vector trapezoid_weights(const std::vector<double>& t) {
  Vector w = Vector::Zero(static_cast<Eigen::Index>(t.size()));
  for (std::size_t k = 1; k < t.size(); ++k) {
    const double h = t[k] - t[k - 1];
    w[static_cast<Eigen::Index>(k - 1)] += 0.5 * h;
    w[static_cast<Eigen::Index>(k)] += 0.5 * h;
  }
  return w;
}

inline InputFn recorded_input(const DataSet& data) {
  return [&data](double t) {
    return interp_rows(data.times, data.u_bar,
                       std::clamp(t, data.times.front(), data.times.back()));
  };
}

}  // namespace detail

/// Discretized prediction-error objective: trapezoid sum of unsquared
/// per-sample output error norms, simulation driven by the recorded inputs.
inline double objective_value(const DataSet& data, const ParameterVector& theta, const Vector& x0,
                              const ToleranceSpec& tol = {1e-10, 1e-10},
                              bool* integration_failed = nullptr) {
  if (integration_failed) *integration_failed = false;
  try {
    const StructuredModel model = build_sidher(theta);
    const Trajectory traj =
        integrate_at(model, x0, detail::recorded_input(data), data.times, tol);
    const Vector w = detail::trapezoid_weights(data.times);
    double acc = 0.0;
    for (int k = 0; k < data.size(); ++k)
      acc += w[k] * (data.y_bar.row(k) - traj.outputs.row(k)).norm();
    return acc;
  } catch (const std::exception&) {
    if (integration_failed) *integration_failed = true;
    return std::numeric_limits<double>::quiet_NaN();
  }
}

namespace detail {

/// Residual functor for the trust-region solver: all free variables in one
/// dynamic block, residuals sqrt(w_k) * (y_bar - y) flattened sample-major.
struct FitResiduals {
  const DataSet* data;
  std::vector<int> free_idx;   // indices into ParameterVector
  ParameterVector base_theta;  // carries fixed values
  bool estimate_si = false;
  Vector x0_fixed;             // used when !estimate_si
  double D0, H0, E0;
  Vector sqrt_w;
  ToleranceSpec integ;

  int num_params() const {
    return static_cast<int>(free_idx.size()) + (estimate_si ? 2 : 0);
  }

  bool operator()(double const* const* z, double* residuals) const {
    ParameterVector theta = base_theta;
    for (std::size_t i = 0; i < free_idx.size(); ++i)
      theta.set(free_idx[i], z[0][i]);
    Vector x0(6);
    if (estimate_si) {
      const double S0 = z[0][free_idx.size()];
      const double I0 = z[0][free_idx.size() + 1];
      const double R0 = std::clamp(1.0 - (S0 + I0 + D0 + H0 + E0), 0.0, 1.0);
      x0 << S0, I0, D0, H0, E0, R0;
    } else {
      x0 = x0_fixed;
    }
    try {
      const StructuredModel model = build_sidher_unchecked(theta);
      const Trajectory traj =
          integrate_at(model, x0, recorded_input(*data), data->times, integ);
      const int ny = static_cast<int>(data->y_bar.cols());
      for (int k = 0; k < data->size(); ++k)
        for (int j = 0; j < ny; ++j)
          residuals[k * ny + j] = sqrt_w[k] * (data->y_bar(k, j) - traj.outputs(k, j));
    } catch (const std::exception&) {
      return false;
    }
    return true;
  }
};

}  // namespace detail

/// Prediction-error fit for the epidemic family: fixed rates from
/// `config.fixed_params` (the closed-form protocol) or none (free fit),
/// remaining parameters by bounded trust-region nonlinear least squares with
/// multistart. The inner solver minimizes the squared weighted norm; reported
/// residual_norm is the unsquared trapezoid objective.
inline EstimationResult fit_parameters(const DataSet& data, const EstimationConfig& config) {
  config.validate();
  data.check();

  // fixed vs free split
  ParameterVector base = config.theta_init;
  std::vector<int> free_idx;
  for (int i = 0; i < ParameterVector::size(); ++i) {
    const auto& name = ParameterVector::names()[static_cast<std::size_t>(i)];
    const auto it = config.fixed_params.find(name);
    if (it != config.fixed_params.end()) {
      base.set(i, std::clamp(it->second, config.bounds_lo.get(i), config.bounds_hi.get(i)));
    } else {
      free_idx.push_back(i);
    }
  }
  if (free_idx.empty()) throw std::invalid_argument("fit_parameters: no free parameters");

  const bool estimate_si = config.x0_policy == EstimationConfig::X0Policy::kEstimateSI;
  const double D0 = std::clamp(data.y_bar(0, 2), 0.0, 1.0);
  const double H0 = std::clamp(data.y_bar(0, 5), 0.0, 1.0);
  const double E0 = std::clamp(data.y_bar(0, 8), 0.0, 1.0);

  {
    bool failed = false;
    const double v = objective_value(data, base, guess_initial_state(data, config.seed),
                                     config.integ, &failed);
    if (failed || !std::isfinite(v))
      throw std::invalid_argument("fit_parameters: non-finite objective at theta_init");
  }

  // early-record mean of the aggregate output, for a data-driven S0 start
  const int head = std::min(5, data.size());
  double y10_head = 0.0;
  for (int k = 0; k < head; ++k) y10_head += data.y_bar(k, 9);
  y10_head /= head;

  const auto solve_once = [&](std::vector<double> z, const Vector& fallback_x0) {
    detail::FitResiduals functor;
    functor.data = &data;
    functor.free_idx = free_idx;
    functor.base_theta = base;
    functor.estimate_si = estimate_si;
    functor.D0 = D0;
    functor.H0 = H0;
    functor.E0 = E0;
    functor.sqrt_w = detail::trapezoid_weights(data.times).cwiseSqrt();
    functor.integ = config.integ;
    const int np = functor.num_params();

    ceres::Problem problem;
    auto* cost = new ceres::DynamicNumericDiffCostFunction<detail::FitResiduals, ceres::CENTRAL>(
        new detail::FitResiduals(functor), ceres::TAKE_OWNERSHIP,
        ceres::NumericDiffOptions{});
    cost->AddParameterBlock(np);
    cost->SetNumResiduals(data.size() * static_cast<int>(data.y_bar.cols()));
    problem.AddResidualBlock(cost, nullptr, z.data());
    for (std::size_t i = 0; i < free_idx.size(); ++i) {
      problem.SetParameterLowerBound(z.data(), static_cast<int>(i),
                                     config.bounds_lo.get(free_idx[i]));
      problem.SetParameterUpperBound(z.data(), static_cast<int>(i),
                                     config.bounds_hi.get(free_idx[i]));
    }
    if (estimate_si) {
      const int iS = static_cast<int>(free_idx.size());
      problem.SetParameterLowerBound(z.data(), iS, 0.5);
      problem.SetParameterUpperBound(z.data(), iS, 1.0);
      problem.SetParameterLowerBound(z.data(), iS + 1, 0.0);
      problem.SetParameterUpperBound(z.data(), iS + 1, 0.3);
    }

    ceres::Solver::Options options;
    options.max_num_iterations = config.max_iterations;
    options.gradient_tolerance = config.gradient_tolerance;
    options.function_tolerance = 1e-15;
    options.parameter_tolerance = 1e-14;
    options.use_nonmonotonic_steps = true;
    options.logging_type = ceres::SILENT;
    options.minimizer_progress_to_stdout = false;
    options.num_threads = 1;
    ceres::Solver::Summary summary;
    ceres::Solve(options, &problem, &summary);

    StartResult out;
    out.theta = base;
    for (std::size_t i = 0; i < free_idx.size(); ++i) out.theta.set(free_idx[i], z[i]);
    if (estimate_si) {
      const double S0 = z[free_idx.size()];
      const double I0 = z[free_idx.size() + 1];
      const double R0 = std::clamp(1.0 - (S0 + I0 + D0 + H0 + E0), 0.0, 1.0);
      out.x0 = (Vector(6) << S0, I0, D0, H0, E0, R0).finished();
    } else {
      out.x0 = fallback_x0;
    }
    out.inner_cost = summary.final_cost;
    out.iterations = static_cast<int>(summary.iterations.size());
    out.termination = ceres::TerminationTypeToString(summary.termination_type);
    out.usable = summary.IsSolutionUsable();
    bool failed = false;
    out.residual_norm = objective_value(data, out.theta, out.x0, config.integ, &failed);
    if (failed) out.usable = false;
    return out;
  };

  const auto run_start = [&](int start_index) {
    Rng rng(Rng::derive(config.seed, static_cast<std::uint64_t>(start_index)));
    const Vector guess = guess_initial_state(
        data, Rng::derive(config.seed, 1000 + static_cast<std::uint64_t>(start_index)));
    std::vector<double> z(static_cast<std::size_t>(free_idx.size()) + (estimate_si ? 2 : 0));
    if (start_index == 0) {
      for (std::size_t i = 0; i < free_idx.size(); ++i)
        z[i] = config.theta_init.get(free_idx[i]);
    } else {
      for (std::size_t i = 0; i < free_idx.size(); ++i) {
        const double lo = std::max(config.bounds_lo.get(free_idx[i]), 1e-3);
        const double hi = std::max(config.bounds_hi.get(free_idx[i]), 2e-3);
        z[i] = rng.log_uniform(lo, hi);
      }
    }
    if (estimate_si) {
      // spread the infected-fraction starts across decades; susceptible start
      // follows the early aggregate record
      double I0s;
      if (start_index == 0) {
        I0s = std::max(guess[sidher::kI], 1e-4);
      } else {
        const double frac = config.multistart_count > 2
                                ? static_cast<double>(start_index - 1) /
                                      (config.multistart_count - 2 + 1e-12)
                                : 0.5;
        I0s = std::pow(10.0, -4.0 + 2.7 * frac);
      }
      z[free_idx.size()] = std::clamp(y10_head - I0s, 0.5, 1.0);
      z[free_idx.size() + 1] = I0s;
    }
    return solve_once(std::move(z), guess);
  };

  // Starts are independent; run them concurrently and merge deterministically
  // (lowest residual, ties by start index).
  std::vector<std::future<StartResult>> futs;
  futs.reserve(static_cast<std::size_t>(config.multistart_count));
  for (int s = 0; s < config.multistart_count; ++s)
    futs.push_back(std::async(std::launch::async, run_start, s));

  EstimationResult result;
  for (int s = 0; s < config.multistart_count; ++s) {
    result.starts.push_back(futs[static_cast<std::size_t>(s)].get());
    const auto& sr = result.starts.back();
    if (sr.usable && sr.residual_norm < result.residual_norm) {
      result.residual_norm = sr.residual_norm;
      result.best_start = s;
    }
  }
  if (result.best_start < 0)
    throw std::runtime_error("fit_parameters: every start failed to produce a usable fit");

  // Polish rounds: restart the trust region from the incumbent; this digs out
  // of the shallow curved valleys the first descent tends to stall in.
  StartResult best = result.starts[static_cast<std::size_t>(result.best_start)];
  for (int round = 0; round < 2; ++round) {
    std::vector<double> z(static_cast<std::size_t>(free_idx.size()) + (estimate_si ? 2 : 0));
    for (std::size_t i = 0; i < free_idx.size(); ++i) z[i] = best.theta.get(free_idx[i]);
    if (estimate_si) {
      z[free_idx.size()] = best.x0[sidher::kS];
      z[free_idx.size() + 1] = best.x0[sidher::kI];
    }
    StartResult polished = solve_once(std::move(z), best.x0);
    if (polished.usable && polished.residual_norm < best.residual_norm * (1.0 - 1e-12)) {
      best = polished;
    } else {
      break;
    }
  }

  result.theta_hat = best.theta;
  result.x0_used = best.x0;
  result.residual_norm = best.residual_norm;
  result.iterations = best.iterations;
  result.termination = best.termination;
  result.converged = best.usable;
  return result;
}

}  // namespace epictrl
