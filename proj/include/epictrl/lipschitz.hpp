#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "epictrl/model.hpp"

namespace epictrl {

namespace detail {

inline Matrix nonlinearity_jacobian_q(const Nonlinearity& f, const Vector& q, const Vector& u) {
  if (f.jacobian_q) return f.jacobian_q(q, u);
  // central finite difference fallback
  const Vector f0 = f.eval(q, u);
  Matrix J(f0.size(), q.size());
  for (int i = 0; i < q.size(); ++i) {
    const double h = std::max(1e-7, 1e-7 * std::abs(q[i]));
    Vector qp = q, qm = q;
    qp[i] += h;
    qm[i] -= h;
    J.col(i) = (f.eval(qp, u) - f.eval(qm, u)) / (2.0 * h);
  }
  return J;
}

inline double sigma_max(const Matrix& J) {
  if (J.size() == 0) return 0.0;
  Eigen::JacobiSVD<Matrix> svd(J);
  return svd.singularValues()[0];
}

}  // namespace detail

struct LipschitzEstimate {
  double value = 0.0;
  Vector q_at_max;
  Vector u_at_max;
};

/// Estimate the Lipschitz constant of f with respect to its state argument,
///   l = sup over the domain of sigma_max(df/dq(q, u)),  q = H x,
/// by a tensor grid search (box corners always included) followed by a local
/// refinement pass around the best cell. With simplex mode the q samples are
/// restricted to sum(q) <= 1.
inline LipschitzEstimate estimate_lipschitz_detail(const StructuredModel& model, const Domain& domain,
                                                   int grid_density = 21) {
  domain.check();
  if (grid_density < 2) throw std::invalid_argument("estimate_lipschitz: grid_density must be >= 2");
  if (domain.state_lo.size() != model.dims.n_x || domain.input_lo.size() != model.dims.n_u)
    throw std::invalid_argument("estimate_lipschitz: domain dimensions do not match model");

  const int nq = model.dims.n_H;
  const int nu = model.dims.n_u;
  const int dims = nq + nu;

  // Bounds of q = H x follow from the selector structure of H.
  Vector lo(dims), hi(dims);
  for (int r = 0; r < nq; ++r) {
    int sel = 0;
    for (int c = 0; c < model.H.cols(); ++c)
      if (model.H(r, c) == 1.0) sel = c;
    lo[r] = domain.state_lo[sel];
    hi[r] = domain.state_hi[sel];
  }
  for (int j = 0; j < nu; ++j) {
    lo[nq + j] = domain.input_lo[j];
    hi[nq + j] = domain.input_hi[j];
  }

  const auto feasible = [&](const Vector& p) {
    if (!domain.simplex) return true;
    return p.head(nq).sum() <= 1.0 + 1e-12;
  };

  LipschitzEstimate best;
  best.value = -1.0;
  const auto consider = [&](const Vector& p) {
    if (!feasible(p)) return;
    const Vector q = p.head(nq);
    const Vector u = p.tail(nu);
    const double s = detail::sigma_max(detail::nonlinearity_jacobian_q(model.f, q, u));
    if (s > best.value) {
      best.value = s;
      best.q_at_max = q;
      best.u_at_max = u;
    }
  };

  // Corners first: for Jacobians with entrywise-monotone entries the maximum
  // sits on a corner, which makes the grid estimate exact there.
  if (dims <= 22) {
    Vector p(dims);
    for (std::uint64_t mask = 0; mask < (1ULL << dims); ++mask) {
      for (int d = 0; d < dims; ++d) p[d] = (mask >> d) & 1 ? hi[d] : lo[d];
      consider(p);
    }
  }
  if (domain.simplex) {
    // vertices of the restricted q region, inputs at both extremes
    Vector p(dims);
    for (std::uint64_t umask = 0; umask < (1ULL << nu); ++umask) {
      for (int j = 0; j < nu; ++j) p[nq + j] = (umask >> j) & 1 ? hi[nq + j] : lo[nq + j];
      for (int v = -1; v < nq; ++v) {
        for (int r = 0; r < nq; ++r) p[r] = lo[r];
        if (v >= 0) p[v] = std::min(hi[v], 1.0);
        consider(p);
      }
    }
  }

  const auto run_grid = [&](const Vector& glo, const Vector& ghi, int density) {
    std::vector<int> idx(static_cast<std::size_t>(dims), 0);
    Vector p(dims);
    while (true) {
      for (int d = 0; d < dims; ++d) {
        const double a = glo[d], b = ghi[d];
        p[d] = density == 1 ? a : a + (b - a) * idx[static_cast<std::size_t>(d)] / (density - 1);
      }
      consider(p);
      int d = 0;
      while (d < dims) {
        if (++idx[static_cast<std::size_t>(d)] < density) break;
        idx[static_cast<std::size_t>(d)] = 0;
        ++d;
      }
      if (d == dims) break;
    }
  };

  // Budget-capped tensor grid.
  constexpr double kBudget = 2.0e5;
  int d_eff = grid_density;
  while (d_eff > 2 && std::pow(static_cast<double>(d_eff), dims) > kBudget) --d_eff;
  run_grid(lo, hi, d_eff);

  // Local refinement around the best sample.
  Vector span = hi - lo;
  for (int round = 0; round < 3; ++round) {
    Vector center(dims);
    center.head(nq) = best.q_at_max;
    center.tail(nu) = best.u_at_max;
    Vector rlo(dims), rhi(dims);
    for (int d = 0; d < dims; ++d) {
      const double hw = span[d] / std::max(2, d_eff - 1) / std::pow(2.0, round);
      rlo[d] = std::max(lo[d], center[d] - hw);
      rhi[d] = std::min(hi[d], center[d] + hw);
    }
    int rd = 5;
    while (rd > 2 && std::pow(static_cast<double>(rd), dims) > kBudget) --rd;
    run_grid(rlo, rhi, rd);
  }

  return best;
}

inline double estimate_lipschitz(const StructuredModel& model, const Domain& domain,
                                 int grid_density = 21) {
  return estimate_lipschitz_detail(model, domain, grid_density).value;
}

}  // namespace epictrl
