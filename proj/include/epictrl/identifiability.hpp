#pragma once

#include <future>
#include <string>
#include <vector>

#include "epictrl/integrate.hpp"
#include "epictrl/io.hpp"
#include "epictrl/model.hpp"

namespace epictrl {

struct RankTestOptions {
  double fd_step_rel = 1e-5;
  double fd_step_floor = 1e-8;        // absolute floor for the perturbation
  double tol = 1e-8;                  // rank threshold relative to sigma_max
  double pattern_threshold = 1e-12;   // tableau zero-pattern cut
  ToleranceSpec integ{1e-12, 1e-12};  // tight so rank decisions are not FD-noise
  bool parallel = true;
};

/// Numerical rank certificate for the sampled output map
/// (x0, params) -> [y(t_1); ...; y(t_K)].
struct RankReport {
  int jacobian_rows = 0;
  int jacobian_cols = 0;
  Vector singular_values;  // descending
  int numerical_rank = 0;
  double tolerance = 0.0;
  bool identifiable_observable = false;
  Matrix nullspace;          // columns span the numerical null space (empty when full rank)
  Eigen::MatrixXi zero_pattern;  // 1 where |J| exceeds the pattern threshold
  std::vector<std::string> column_labels;

  json to_json() const {
    json j;
    j["jacobian_rows"] = jacobian_rows;
    j["jacobian_cols"] = jacobian_cols;
    j["numerical_rank"] = numerical_rank;
    j["tolerance"] = tolerance;
    j["verdict"] = identifiable_observable ? "identifiable+observable" : "deficient";
    j["singular_values"] = std::vector<double>(
        singular_values.data(), singular_values.data() + singular_values.size());
    j["column_labels"] = column_labels;
    if (nullspace.size() > 0) j["nullspace"] = matrix_to_json(nullspace);
    return j;
  }

  void write_pattern_csv(const std::string& path) const {
    Matrix m = zero_pattern.cast<double>();
    write_csv(path, column_labels, m);
  }
};

/// Rebuilds a model from a flat parameter vector; lets the rank test cover
/// model families other than the built-in one.
using ModelBuilder = std::function<StructuredModel(const Vector& params)>;

/// Local identifiability/observability surrogate: central finite differences
/// of the stacked sampled outputs with respect to (x0, params), then an SVD
/// rank decision at `tol` relative to the largest singular value.
inline RankReport local_rank_test(const ModelBuilder& builder, const Vector& params0,
                                  const Vector& x0, const InputFn& input_fn,
                                  const std::vector<double>& sample_times,
                                  const RankTestOptions& opts = {},
                                  const std::vector<double>* input_breakpoints = nullptr) {
  if (sample_times.empty()) throw std::invalid_argument("rank test: sample_times must be nonempty");
  if (!(opts.fd_step_rel > 0.0)) throw std::invalid_argument("rank test: fd_step must be > 0");

  const StructuredModel nominal = builder(params0);
  const int n_x = nominal.dims.n_x;
  const int n_y = nominal.dims.n_y;
  const int n_p = static_cast<int>(params0.size());
  const int rows = n_y * static_cast<int>(sample_times.size());
  const int cols = n_x + n_p;

  // One simulation stacking y(t_k); x0 is the state at sample_times.front().
  const auto stacked_outputs = [&](const Vector& p, const Vector& x_init) {
    const StructuredModel model = builder(p);
    const Trajectory traj = integrate_at(model, x_init, input_fn, sample_times, opts.integ,
                                         input_breakpoints);
    Vector stacked(rows);
    for (int k = 0; k < traj.size(); ++k)
      stacked.segment(k * n_y, n_y) = traj.outputs.row(k).transpose();
    return stacked;
  };

  const auto column = [&](int c) {
    Vector p = params0;
    Vector xi = x0;
    double* target = c < n_x ? &xi[c] : &p[c - n_x];
    const double base = *target;
    const double h = std::max(opts.fd_step_rel * std::abs(base), opts.fd_step_floor);
    *target = base + h;
    Vector plus;
    try {
      plus = stacked_outputs(p, xi);
    } catch (const std::exception& e) {
      throw std::runtime_error("rank test: simulation failed for column " + std::to_string(c) +
                               " (+): " + e.what());
    }
    *target = base - h;
    Vector minus;
    try {
      minus = stacked_outputs(p, xi);
    } catch (const std::exception& e) {
      throw std::runtime_error("rank test: simulation failed for column " + std::to_string(c) +
                               " (-): " + e.what());
    }
    return Vector(((plus - minus) / (2.0 * h)).eval());
  };

  Matrix J(rows, cols);
  if (opts.parallel) {
    std::vector<std::future<Vector>> futs;
    futs.reserve(static_cast<std::size_t>(cols));
    for (int c = 0; c < cols; ++c)
      futs.push_back(std::async(std::launch::async, [&, c] { return column(c); }));
    for (int c = 0; c < cols; ++c) J.col(c) = futs[static_cast<std::size_t>(c)].get();
  } else {
    for (int c = 0; c < cols; ++c) J.col(c) = column(c);
  }

  RankReport report;
  report.jacobian_rows = rows;
  report.jacobian_cols = cols;
  report.tolerance = opts.tol;
  report.column_labels.reserve(static_cast<std::size_t>(cols));
  for (int i = 0; i < n_x; ++i) report.column_labels.push_back("x0[" + std::to_string(i) + "]");
  for (int i = 0; i < n_p; ++i) report.column_labels.push_back("p[" + std::to_string(i) + "]");

  Eigen::JacobiSVD<Matrix> svd(J, Eigen::ComputeThinV);
  report.singular_values = svd.singularValues();
  const double smax = report.singular_values.size() > 0 ? report.singular_values[0] : 0.0;
  int rank = 0;
  for (int i = 0; i < report.singular_values.size(); ++i)
    if (smax > 0.0 && report.singular_values[i] >= opts.tol * smax) ++rank;
  report.numerical_rank = rank;
  report.identifiable_observable = rank == cols;
  if (rank < cols) report.nullspace = svd.matrixV().rightCols(cols - rank);

  report.zero_pattern.resize(rows, cols);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c)
      report.zero_pattern(r, c) = std::abs(J(r, c)) > opts.pattern_threshold ? 1 : 0;
  return report;
}

/// Rank test for the built-in epidemic family; parameters perturbed by name
/// order of ParameterVector, columns labelled accordingly.
inline RankReport local_rank_test_sidher(const ParameterVector& theta, const Vector& x0,
                                         const InputFn& input_fn,
                                         const std::vector<double>& sample_times,
                                         const RankTestOptions& opts = {},
                                         const std::vector<double>* input_breakpoints = nullptr) {
  const ModelBuilder builder = [](const Vector& p) {
    return build_sidher(ParameterVector::from_vector(p));
  };
  RankReport r = local_rank_test(builder, theta.to_vector(), x0, input_fn, sample_times, opts,
                                 input_breakpoints);
  for (int i = 0; i < ParameterVector::size(); ++i)
    r.column_labels[static_cast<std::size_t>(6 + i)] =
        "theta." + ParameterVector::names()[static_cast<std::size_t>(i)];
  return r;
}

}  // namespace epictrl
