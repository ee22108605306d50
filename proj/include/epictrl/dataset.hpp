#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "epictrl/integrate.hpp"
#include "epictrl/io.hpp"
#include "epictrl/model.hpp"
#include "epictrl/rng.hpp"

namespace epictrl {

/// Additive measurement-noise description for synthetic data, per channel.
struct NoiseSpec {
  Vector input_std;
  Vector output_std;
  std::uint64_t seed = 0;

  static NoiseSpec homogeneous(int n_u, int n_y, double in_std, double out_std,
                               std::uint64_t seed) {
    NoiseSpec n;
    n.input_std = Vector::Constant(n_u, in_std);
    n.output_std = Vector::Constant(n_y, out_std);
    n.seed = seed;
    return n;
  }

  void check() const {
    if ((input_std.array() < 0).any() || (output_std.array() < 0).any())
      throw std::invalid_argument("noise: standard deviations must be >= 0");
  }

  bool zero() const {
    return (input_std.size() == 0 || input_std.maxCoeff() == 0.0) &&
           (output_std.size() == 0 || output_std.maxCoeff() == 0.0);
  }
};

/// Sampled noisy input-output records (u_bar, y_bar) on a time grid.
struct DataSet {
  std::vector<double> times;
  Matrix u_bar;  // n_t x n_u
  Matrix y_bar;  // n_t x n_y
  NoiseSpec noise;

  int size() const { return static_cast<int>(times.size()); }
  double t_begin() const { return times.front(); }
  double t_end() const { return times.back(); }

  void check() const {
    const auto n = static_cast<Eigen::Index>(times.size());
    if (u_bar.rows() != n || y_bar.rows() != n)
      throw std::invalid_argument("dataset: record length mismatch");
    for (std::size_t k = 1; k < times.size(); ++k)
      if (!(times[k] > times[k - 1]))
        throw std::invalid_argument("dataset: times must be strictly increasing");
  }
};

/// Nominal intervention schedule of the case study. round() is
/// nearest-integer with ties away from zero, so each component takes values
/// in {0.005, 0.015, 0.025}.
inline Vector nominal_input(double t) {
  if (t < 0.0) throw std::invalid_argument("nominal_input: t must be >= 0");
  Vector u(4);
  u << 0.01 * std::round(std::sin(t / 2.0)) + 0.015, 0.01 * std::round(std::cos(t / 2.0)) + 0.015,
      0.01 * std::round(std::sin(t / 3.0)) + 0.015, 0.01 * std::round(std::cos(t / 3.0)) + 0.015;
  return u;
}

/// Times in (t0, t1) where the nominal input switches level, i.e. where
/// round(sin(t/2)), round(cos(t/2)), round(sin(t/3)) or round(cos(t/3))
/// crosses +-1/2. Integrators split steps there.
inline std::vector<double> nominal_input_breakpoints(double t0, double t1) {
  static const double kPi = 3.14159265358979323846;
  std::vector<double> bps;
  const std::array<double, 8> bases = {kPi / 6,     5 * kPi / 6, 7 * kPi / 6, 11 * kPi / 6,
                                       kPi / 3, 2 * kPi / 3, 4 * kPi / 3, 5 * kPi / 3};
  for (double scale : {2.0, 3.0}) {
    for (double base : bases) {
      for (long long k = static_cast<long long>(std::floor(t0 / (scale * 2 * kPi))) - 1;; ++k) {
        const double t = scale * (base + 2 * kPi * k);
        if (t <= t0) continue;
        if (t >= t1) break;
        bps.push_back(t);
      }
    }
  }
  std::sort(bps.begin(), bps.end());
  bps.erase(std::unique(bps.begin(), bps.end(),
                        [](double a, double b) { return std::abs(a - b) < 1e-12; }),
            bps.end());
  return bps;
}

/// Simulate the model with the noise-free input and record noisy samples.
/// Noise draws are ordered per sample (inputs first, then outputs) so a given
/// seed reproduces the dataset bit-for-bit.
inline std::pair<DataSet, Trajectory> generate_dataset_with_truth(
    const StructuredModel& model, const Vector& x0, const InputFn& input_fn, double t0, double t1,
    double sample_dt, const NoiseSpec& noise, const ToleranceSpec& tol = {},
    const std::vector<double>* input_breakpoints = nullptr) {
  noise.check();
  if (noise.input_std.size() != model.dims.n_u || noise.output_std.size() != model.dims.n_y)
    throw std::invalid_argument("noise: per-channel std size mismatch");
  Trajectory truth = integrate(model, x0, input_fn, t0, t1, tol, sample_dt, input_breakpoints);

  DataSet ds;
  ds.times = truth.times;
  ds.noise = noise;
  ds.u_bar = truth.inputs;
  ds.y_bar = truth.outputs;
  Rng rng(noise.seed);
  for (int k = 0; k < ds.size(); ++k) {
    for (int j = 0; j < model.dims.n_u; ++j) ds.u_bar(k, j) += noise.input_std[j] * rng.gaussian();
    for (int j = 0; j < model.dims.n_y; ++j) ds.y_bar(k, j) += noise.output_std[j] * rng.gaussian();
  }
  return {std::move(ds), std::move(truth)};
}

inline DataSet generate_dataset(const StructuredModel& model, const Vector& x0,
                                const InputFn& input_fn, double t0, double t1, double sample_dt,
                                const NoiseSpec& noise, const ToleranceSpec& tol = {},
                                const std::vector<double>* input_breakpoints = nullptr) {
  return generate_dataset_with_truth(model, x0, input_fn, t0, t1, sample_dt, noise, tol,
                                     input_breakpoints)
      .first;
}

/// Paper-style synthetic dataset: nominal input over [t0, t1] with its switch
/// times supplied to the integrator.
inline std::pair<DataSet, Trajectory> generate_nominal_dataset_with_truth(
    const StructuredModel& model, const Vector& x0, double t0, double t1, double sample_dt,
    const NoiseSpec& noise, const ToleranceSpec& tol = {}) {
  const auto bps = nominal_input_breakpoints(t0, t1);
  return generate_dataset_with_truth(model, x0, nominal_input, t0, t1, sample_dt, noise, tol,
                                     &bps);
}

namespace detail {

/// Piecewise-linear interpolation of a row-per-sample table at time t.
inline Vector interp_rows(const std::vector<double>& times, const Matrix& rows, double t) {
  if (times.empty()) throw std::invalid_argument("interpolate: empty record");
  if (t < times.front() - 1e-12 || t > times.back() + 1e-12)
    throw std::invalid_argument("interpolate: t outside the recorded range");
  t = std::clamp(t, times.front(), times.back());
  const auto it = std::upper_bound(times.begin(), times.end(), t);
  if (it == times.begin()) return rows.row(0).transpose();
  if (it == times.end()) return rows.row(rows.rows() - 1).transpose();
  const auto hi = static_cast<Eigen::Index>(it - times.begin());
  const auto lo = hi - 1;
  const double ta = times[static_cast<std::size_t>(lo)];
  const double tb = times[static_cast<std::size_t>(hi)];
  const double w = (t - ta) / (tb - ta);
  return ((1.0 - w) * rows.row(lo) + w * rows.row(hi)).transpose();
}

}  // namespace detail

inline std::pair<Vector, Vector> interpolate(const DataSet& data, double t) {
  return {detail::interp_rows(data.times, data.u_bar, t),
          detail::interp_rows(data.times, data.y_bar, t)};
}

/// Least-squares polynomial fit of the series, evaluated over the forecast
/// horizon past the last sample. Rejects rank-deficient fits with the
/// condition number in the message.
inline std::vector<std::pair<double, double>> forecast_polyfit(
    const std::vector<std::pair<double, double>>& series, int degree, double horizon) {
  if (degree < 0) throw std::invalid_argument("forecast_polyfit: degree must be >= 0");
  const int n = static_cast<int>(series.size());
  if (n < degree + 1)
    throw std::invalid_argument("forecast_polyfit: need at least degree+1 points");
  if (!(horizon > 0.0)) throw std::invalid_argument("forecast_polyfit: horizon must be > 0");

  // centre/scale the abscissa for conditioning
  double tmin = series.front().first, tmax = series.front().first;
  for (const auto& p : series) {
    tmin = std::min(tmin, p.first);
    tmax = std::max(tmax, p.first);
  }
  const double tc = 0.5 * (tmin + tmax);
  const double ts = std::max(0.5 * (tmax - tmin), 1e-12);

  Matrix V(n, degree + 1);
  Vector b(n);
  for (int i = 0; i < n; ++i) {
    const double z = (series[static_cast<std::size_t>(i)].first - tc) / ts;
    double p = 1.0;
    for (int d = 0; d <= degree; ++d) {
      V(i, d) = p;
      p *= z;
    }
    b[i] = series[static_cast<std::size_t>(i)].second;
  }
  Eigen::JacobiSVD<Matrix> svd(V, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const double smax = svd.singularValues()[0];
  const double smin = svd.singularValues()[svd.singularValues().size() - 1];
  const double cond = smin > 0.0 ? smax / smin : std::numeric_limits<double>::infinity();
  if (!(smin > 0.0) || cond > 1e12)
    throw std::invalid_argument("forecast_polyfit: rank-deficient fit (condition " +
                                fmt_double(cond) + ")");
  const Vector coef = svd.solve(b);

  const double t_last = series.back().first;
  double dt = horizon / 20.0;
  if (n >= 2) {
    std::vector<double> gaps;
    for (int i = 1; i < n; ++i)
      gaps.push_back(series[static_cast<std::size_t>(i)].first -
                     series[static_cast<std::size_t>(i - 1)].first);
    std::sort(gaps.begin(), gaps.end());
    dt = gaps[gaps.size() / 2];
  }
  const int steps = std::max(1, static_cast<int>(std::llround(horizon / dt)));
  std::vector<std::pair<double, double>> out;
  out.reserve(static_cast<std::size_t>(steps));
  for (int i = 1; i <= steps; ++i) {
    const double t = t_last + horizon * i / steps;
    const double z = (t - tc) / ts;
    double p = 1.0, v = 0.0;
    for (int d = 0; d <= degree; ++d) {
      v += coef[d] * p;
      p *= z;
    }
    out.emplace_back(t, v);
  }
  return out;
}

// ---------------------------------------------------------------------------
// CSV persistence: `t,u1..,y1..` for datasets, `t,S,I,D,H,E,R[,y1..]` for
// trajectories. Full double precision, LF endings, header mandatory.
// ---------------------------------------------------------------------------

inline void write_dataset_csv(const std::string& path, const DataSet& ds) {
  std::vector<std::string> header{"t"};
  for (int j = 0; j < ds.u_bar.cols(); ++j) header.push_back("u" + std::to_string(j + 1));
  for (int j = 0; j < ds.y_bar.cols(); ++j) header.push_back("y" + std::to_string(j + 1));
  Matrix table(ds.size(), 1 + ds.u_bar.cols() + ds.y_bar.cols());
  for (int k = 0; k < ds.size(); ++k) {
    table(k, 0) = ds.times[static_cast<std::size_t>(k)];
    table.block(k, 1, 1, ds.u_bar.cols()) = ds.u_bar.row(k);
    table.block(k, 1 + ds.u_bar.cols(), 1, ds.y_bar.cols()) = ds.y_bar.row(k);
  }
  write_csv(path, header, table);
}

inline DataSet read_dataset_csv(const std::string& path) {
  const CsvTable t = read_csv(path);
  if (t.header.empty() || t.header[0] != "t")
    throw std::runtime_error("dataset csv: first column must be t: " + path);
  int n_u = 0, n_y = 0;
  for (std::size_t i = 1; i < t.header.size(); ++i) {
    if (t.header[i].rfind('u', 0) == 0) ++n_u;
    if (t.header[i].rfind('y', 0) == 0) ++n_y;
  }
  if (1 + n_u + n_y != static_cast<int>(t.header.size()))
    throw std::runtime_error("dataset csv: unexpected header: " + path);
  DataSet ds;
  const auto n = t.values.rows();
  ds.times.resize(static_cast<std::size_t>(n));
  for (Eigen::Index k = 0; k < n; ++k) ds.times[static_cast<std::size_t>(k)] = t.values(k, 0);
  ds.u_bar = t.values.block(0, 1, n, n_u);
  ds.y_bar = t.values.block(0, 1 + n_u, n, n_y);
  ds.noise.input_std = Vector::Zero(n_u);
  ds.noise.output_std = Vector::Zero(n_y);
  ds.check();
  return ds;
}

inline void write_trajectory_csv(const std::string& path, const Trajectory& traj,
                                 bool with_outputs = true) {
  std::vector<std::string> header{"t"};
  const auto nx = traj.states.cols();
  if (nx == 6)
    for (const auto& s : sidher::state_names()) header.push_back(s);
  else
    for (Eigen::Index j = 0; j < nx; ++j) header.push_back("x" + std::to_string(j + 1));
  const auto ny = with_outputs ? traj.outputs.cols() : 0;
  for (Eigen::Index j = 0; j < ny; ++j) header.push_back("y" + std::to_string(j + 1));
  Matrix table(traj.size(), 1 + nx + ny);
  for (int k = 0; k < traj.size(); ++k) {
    table(k, 0) = traj.times[static_cast<std::size_t>(k)];
    table.block(k, 1, 1, nx) = traj.states.row(k);
    if (ny > 0) table.block(k, 1 + nx, 1, ny) = traj.outputs.row(k);
  }
  write_csv(path, header, table);
}

inline Trajectory read_trajectory_csv(const std::string& path) {
  const CsvTable t = read_csv(path);
  if (t.header.empty() || t.header[0] != "t")
    throw std::runtime_error("trajectory csv: first column must be t: " + path);
  int ny = 0;
  for (std::size_t i = 1; i < t.header.size(); ++i)
    if (t.header[i].size() >= 2 && t.header[i][0] == 'y' &&
        std::isdigit(static_cast<unsigned char>(t.header[i][1])))
      ++ny;
  const int nx = static_cast<int>(t.header.size()) - 1 - ny;
  Trajectory traj;
  const auto n = t.values.rows();
  traj.times.resize(static_cast<std::size_t>(n));
  for (Eigen::Index k = 0; k < n; ++k) traj.times[static_cast<std::size_t>(k)] = t.values(k, 0);
  traj.states = t.values.block(0, 1, n, nx);
  traj.outputs = t.values.block(0, 1 + nx, n, ny);
  traj.check();
  return traj;
}

}  // namespace epictrl
