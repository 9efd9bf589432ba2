#pragma once

#include "beamilc/error.hpp"

#include <Eigen/Core>
#include <Eigen/SparseCholesky>
#include <Eigen/SparseCore>

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

namespace beamilc::nlp {

using SparseMatrix = Eigen::SparseMatrix<double>;
using Eigen::VectorXd;

/// Convex QP: min 1/2 x'Px + q'x  s.t.  Ax = b,  lower <= x <= upper.
/// P must be symmetric positive semidefinite and stored in full (both
/// triangles). Infinite bounds are allowed.
struct QpProblem {
  SparseMatrix P;
  VectorXd q;
  SparseMatrix A;
  VectorXd b;
  VectorXd lower;
  VectorXd upper;

  int num_variables() const { return static_cast<int>(q.size()); }
  int num_equalities() const { return static_cast<int>(b.size()); }
};

struct QpOptions {
  double tolerance = 1e-10;      // relative residual tolerance
  double gap_tolerance = 1e-10;  // relative complementarity gap
  // accepted instead when the residuals stop improving (floating-point floor)
  double acceptable_tolerance = 1e-8;
  int stall_iterations = 5;
  int max_iterations = 100;
  double primal_regularization = 1e-10;
  double dual_regularization = 1e-10;
  int refinement_steps = 3;
  int scaling_iterations = 10;  // Ruiz equilibration passes, 0 = off
};

enum class QpStatus { solved, max_iterations, numerical_failure };

inline const char* to_string(QpStatus s) {
  switch (s) {
    case QpStatus::solved: return "solved";
    case QpStatus::max_iterations: return "max-iterations";
    case QpStatus::numerical_failure: return "numerical-failure";
  }
  return "?";
}

/// Primal x, equality multipliers y and bound multipliers z with the sign
/// convention Px + q + A'y + z = 0 (z > 0 at active upper bounds, z < 0 at
/// active lower bounds).
struct QpSolution {
  QpStatus status = QpStatus::numerical_failure;
  VectorXd x;
  VectorXd y;
  VectorXd z;
  int iterations = 0;
  double objective = 0.0;
  double primal_residual = 0.0;  // ||Ax - b||_inf
  double dual_residual = 0.0;    // ||Px + q + A'y + z||_inf
  double gap = 0.0;              // sum of bound complementarity products
  int worst_equality = -1;       // row with the largest |Ax - b|
};

namespace detail {

inline double max_step(const VectorXd& v, const VectorXd& dv, const std::vector<int>& idx, double sign = 1.0) {
  double alpha = 1.0;
  for (int i : idx) {
    const double d = sign * dv[i];
    if (d < 0.0) alpha = std::min(alpha, -v[i] / d);
  }
  return alpha;
}

/// Mehrotra predictor-corrector interior point method. The reduced KKT
/// system [[P + Sigma, A'], [A, 0]] is regularized into a quasi-definite
/// matrix, factored by sparse LDL', and polished with iterative refinement
/// against the unregularized operator.
inline QpSolution solve_qp_ipm(const QpProblem& qp, const QpOptions& opts) {
  const int n = qp.num_variables();
  const int m = qp.num_equalities();

  std::vector<int> lo_idx, up_idx;
  for (int i = 0; i < n; ++i) {
    if (std::isfinite(qp.lower[i])) lo_idx.push_back(i);
    if (std::isfinite(qp.upper[i])) up_idx.push_back(i);
  }
  const int n_bounds = static_cast<int>(lo_idx.size() + up_idx.size());

  // Interior starting point.
  VectorXd x(n);
  for (int i = 0; i < n; ++i) {
    const double l = qp.lower[i], u = qp.upper[i];
    const double margin = std::min(1.0, 0.5 * (u - l));
    double xi = 0.0;
    if (std::isfinite(l)) xi = std::max(xi, l + margin);
    if (std::isfinite(u)) xi = std::min(xi, u - margin);
    x[i] = xi;
  }
  VectorXd y = VectorXd::Zero(m);
  VectorXd zl = VectorXd::Zero(n), zu = VectorXd::Zero(n);
  VectorXd sl = VectorXd::Ones(n), su = VectorXd::Ones(n);
  // Bound multipliers sized to the gradient they balance at the start, so
  // that steeply weighted (l1 slack) variables begin nearly dual feasible.
  {
    const VectorXd g = qp.P * x + qp.q;
    for (int i : lo_idx) zl[i] = std::max(1.0, g[i]);
    for (int i : up_idx) zu[i] = std::max(1.0, -g[i]);
  }
  auto update_slacks = [&] {
    for (int i : lo_idx) sl[i] = x[i] - qp.lower[i];
    for (int i : up_idx) su[i] = qp.upper[i] - x[i];
  };
  update_slacks();

  // KKT matrix, lower triangle: [[P + Sigma + dp I, .], [A, -dd I]].
  SparseMatrix kkt(n + m, n + m);
  {
    std::vector<Eigen::Triplet<double>> trip;
    trip.reserve(static_cast<std::size_t>(qp.P.nonZeros() + qp.A.nonZeros() + n + m));
    for (int j = 0; j < n; ++j) {
      trip.emplace_back(j, j, 0.0);
      for (SparseMatrix::InnerIterator it(qp.P, j); it; ++it) {
        if (it.row() > j) trip.emplace_back(static_cast<int>(it.row()), j, it.value());
      }
      for (SparseMatrix::InnerIterator it(qp.A, j); it; ++it) trip.emplace_back(n + static_cast<int>(it.row()), j, it.value());
    }
    for (int r = 0; r < m; ++r) trip.emplace_back(n + r, n + r, -opts.dual_regularization);
    kkt.setFromTriplets(trip.begin(), trip.end());
    kkt.makeCompressed();
  }
  VectorXd p_diag = VectorXd::Zero(n);
  for (int j = 0; j < n; ++j) p_diag[j] = qp.P.coeff(j, j);
  std::vector<double*> diag(static_cast<std::size_t>(n)), dual_diag(static_cast<std::size_t>(m));
  for (int j = 0; j < n; ++j) diag[static_cast<std::size_t>(j)] = &kkt.coeffRef(j, j);
  for (int r = 0; r < m; ++r) dual_diag[static_cast<std::size_t>(r)] = &kkt.coeffRef(n + r, n + r);
  double primal_reg = opts.primal_regularization, dual_reg = opts.dual_regularization;

  Eigen::SimplicialLDLT<SparseMatrix, Eigen::Lower, Eigen::AMDOrdering<int>> ldlt;
  ldlt.analyzePattern(kkt);

  const SparseMatrix at = qp.A.transpose();
  const double b_scale = 1.0 + (m ? qp.b.lpNorm<Eigen::Infinity>() : 0.0);
  const double q_scale = 1.0 + (n ? qp.q.lpNorm<Eigen::Infinity>() : 0.0);

  QpSolution sol;
  VectorXd sigma(n), rd(n), rp(m), dx(n), dy(m), dzl(n), dzu(n);
  auto complementarity = [&] {
    double g = 0.0;
    for (int i : lo_idx) g += sl[i] * zl[i];
    for (int i : up_idx) g += su[i] * zu[i];
    return g;
  };

  // Solves the reduced system for a right-hand side built from the
  // complementarity targets rl (lower) and ru (upper).
  auto solve_direction = [&](const VectorXd& rl, const VectorXd& ru) -> bool {
    VectorXd rhs(n + m);
    VectorXd top = -rd;
    for (int i : lo_idx) top[i] += rl[i] / sl[i];
    for (int i : up_idx) top[i] -= ru[i] / su[i];
    rhs.head(n) = top;
    rhs.tail(m) = -rp;
    VectorXd sol_vec = ldlt.solve(rhs);
    if (ldlt.info() != Eigen::Success || !sol_vec.allFinite()) return false;
    for (int it = 0; it < opts.refinement_steps; ++it) {
      const VectorXd sx = sol_vec.head(n), sy = sol_vec.tail(m);
      VectorXd res(n + m);
      res.head(n) = rhs.head(n) - (qp.P * sx + sigma.cwiseProduct(sx) + at * sy);
      res.tail(m) = rhs.tail(m) - qp.A * sx;
      sol_vec += ldlt.solve(res);
    }
    if (!sol_vec.allFinite()) return false;
    dx = sol_vec.head(n);
    dy = sol_vec.tail(m);
    dzl.setZero();
    dzu.setZero();
    for (int i : lo_idx) dzl[i] = (rl[i] - zl[i] * dx[i]) / sl[i];
    for (int i : up_idx) dzu[i] = (ru[i] + zu[i] * dx[i]) / su[i];
    return true;
  };

  auto step_length = [&] {
    double a = detail::max_step(sl, dx, lo_idx, 1.0);
    a = std::min(a, detail::max_step(su, dx, up_idx, -1.0));
    a = std::min(a, detail::max_step(zl, dzl, lo_idx));
    a = std::min(a, detail::max_step(zu, dzu, up_idx));
    return a;
  };

  double best_merit = std::numeric_limits<double>::infinity();
  int best_iter = 0;
  for (int iter = 0;; ++iter) {
    rd = qp.P * x + qp.q + at * y - zl + zu;
    rp = qp.A * x - qp.b;
    const double gap = complementarity();
    const double objective = 0.5 * x.dot(qp.P * x) + qp.q.dot(x);
    sol.iterations = iter;
    sol.primal_residual = m ? rp.lpNorm<Eigen::Infinity>() : 0.0;
    sol.dual_residual = n ? rd.lpNorm<Eigen::Infinity>() : 0.0;
    sol.gap = gap;
    sol.objective = objective;
    if (!std::isfinite(objective) || !rd.allFinite() || !rp.allFinite()) {
      sol.status = QpStatus::numerical_failure;
      break;
    }
    if (sol.primal_residual <= opts.tolerance * b_scale && sol.dual_residual <= opts.tolerance * q_scale &&
        gap <= opts.gap_tolerance * std::max(1.0, std::abs(objective))) {
      sol.status = QpStatus::solved;
      break;
    }
    const double merit = std::max({sol.primal_residual / b_scale, sol.dual_residual / q_scale,
                                   gap / std::max(1.0, std::abs(objective))});
    if (merit < 0.5 * best_merit) {
      best_merit = merit;
      best_iter = iter;
    }
    if (merit <= opts.acceptable_tolerance && iter - best_iter >= opts.stall_iterations) {
      sol.status = QpStatus::solved;
      break;
    }
    if (iter >= opts.max_iterations) {
      sol.status = QpStatus::max_iterations;
      break;
    }

    sigma.setZero();
    for (int i : lo_idx) sigma[i] += zl[i] / sl[i];
    for (int i : up_idx) sigma[i] += zu[i] / su[i];
    // Zero pivots: raise the regularization; refinement still targets the
    // unregularized system.
    for (;;) {
      for (int j = 0; j < n; ++j) *diag[static_cast<std::size_t>(j)] = p_diag[j] + sigma[j] + primal_reg;
      for (int r = 0; r < m; ++r) *dual_diag[static_cast<std::size_t>(r)] = -dual_reg;
      ldlt.factorize(kkt);
      if (ldlt.info() == Eigen::Success || primal_reg >= 1e-4) break;
      primal_reg *= 100.0;
      dual_reg *= 100.0;
    }
    if (ldlt.info() != Eigen::Success) {
      sol.status = QpStatus::numerical_failure;
      break;
    }


    const double mu = n_bounds ? gap / n_bounds : 0.0;
    VectorXd rl = VectorXd::Zero(n), ru = VectorXd::Zero(n);
    for (int i : lo_idx) rl[i] = -sl[i] * zl[i];
    for (int i : up_idx) ru[i] = -su[i] * zu[i];
    if (!solve_direction(rl, ru)) {
      sol.status = QpStatus::numerical_failure;
      break;
    }
    if (n_bounds) {
      // Predictor gives the centering parameter; corrector adds the
      // second-order term.
      const double a_aff = step_length();
      double gap_aff = 0.0;
      for (int i : lo_idx) gap_aff += (sl[i] + a_aff * dx[i]) * (zl[i] + a_aff * dzl[i]);
      for (int i : up_idx) gap_aff += (su[i] - a_aff * dx[i]) * (zu[i] + a_aff * dzu[i]);
      const double mu_aff = gap_aff / n_bounds;
      const double centering = std::pow(std::clamp(mu_aff / mu, 0.0, 1.0), 3);
      for (int i : lo_idx) rl[i] = centering * mu - sl[i] * zl[i] - dx[i] * dzl[i];
      for (int i : up_idx) ru[i] = centering * mu - su[i] * zu[i] + dx[i] * dzu[i];
      if (!solve_direction(rl, ru)) {
        sol.status = QpStatus::numerical_failure;
        break;
      }
    }
    const double alpha = std::min(1.0, 0.995 * step_length());
    x += alpha * dx;
    y += alpha * dy;
    zl += alpha * dzl;
    zu += alpha * dzu;
    update_slacks();
  }

  sol.x = x;
  sol.y = y;
  sol.z = zu - zl;
  return sol;
}

inline double column_inf_norm(const SparseMatrix& a, int j) {
  double v = 0.0;
  for (SparseMatrix::InnerIterator it(a, j); it; ++it) v = std::max(v, std::abs(it.value()));
  return v;
}

}  // namespace detail

/// Solves the QP after equilibrating the KKT matrix (variables D, rows E)
/// and scaling the cost by c; the solution and residuals are reported for
/// the original problem.
inline QpSolution solve_qp(const QpProblem& qp, const QpOptions& opts = {}) {
  const int n = qp.num_variables();
  const int m = qp.num_equalities();
  require_dim(qp.P.rows(), n, "solve_qp: P rows");
  require_dim(qp.P.cols(), n, "solve_qp: P cols");
  require_dim(qp.A.rows(), m, "solve_qp: A rows");
  require_dim(qp.A.cols(), n, "solve_qp: A cols");
  require_dim(qp.b.size(), m, "solve_qp: b");
  require_dim(qp.lower.size(), n, "solve_qp: lower");
  require_dim(qp.upper.size(), n, "solve_qp: upper");
  for (int i = 0; i < n; ++i) {
    if (!(qp.lower[i] < qp.upper[i])) throw InvalidArgument("solve_qp: empty or degenerate box at " + std::to_string(i));
  }

  QpProblem s = qp;
  VectorXd dvar = VectorXd::Ones(n), erow = VectorXd::Ones(m);
  double c = 1.0;
  auto inv_sqrt = [](double v) { return v > 1e-12 ? 1.0 / std::sqrt(v) : 1.0; };
  for (int it = 0; it < opts.scaling_iterations; ++it) {
    VectorXd dn(n), en = VectorXd::Zero(m);
    for (int j = 0; j < n; ++j) {
      dn[j] = inv_sqrt(std::max(detail::column_inf_norm(s.P, j), detail::column_inf_norm(s.A, j)));
      for (SparseMatrix::InnerIterator a(s.A, j); a; ++a) en[a.row()] = std::max(en[a.row()], std::abs(a.value()));
    }
    for (int r = 0; r < m; ++r) en[r] = inv_sqrt(en[r]);
    s.P = dn.asDiagonal() * s.P * dn.asDiagonal();
    s.A = en.asDiagonal() * s.A * dn.asDiagonal();
    dvar.array() *= dn.array();
    erow.array() *= en.array();
  }
  if (opts.scaling_iterations > 0) {
    double p_mean = 0.0;
    for (int j = 0; j < n; ++j) p_mean += detail::column_inf_norm(s.P, j) / n;
    const double q_norm = n ? VectorXd(dvar.cwiseProduct(qp.q)).lpNorm<Eigen::Infinity>() : 0.0;
    c = 1.0 / std::clamp(std::max(p_mean, q_norm), 1e-4, 1e4);
  }
  s.P *= c;
  s.q = c * dvar.cwiseProduct(qp.q);
  s.b = erow.cwiseProduct(qp.b);
  s.lower = qp.lower.cwiseQuotient(dvar);
  s.upper = qp.upper.cwiseQuotient(dvar);

  QpSolution sol = detail::solve_qp_ipm(s, opts);
  sol.x = dvar.cwiseProduct(sol.x);
  sol.y = erow.cwiseProduct(sol.y) / c;
  sol.z = sol.z.cwiseQuotient(dvar) / c;
  sol.gap /= c;
  sol.objective = 0.5 * sol.x.dot(qp.P * sol.x) + qp.q.dot(sol.x);
  const VectorXd rp = qp.A * sol.x - qp.b;
  sol.primal_residual = m ? rp.lpNorm<Eigen::Infinity>() : 0.0;
  sol.dual_residual =
      n ? VectorXd(qp.P * sol.x + qp.q + qp.A.transpose() * sol.y + sol.z).lpNorm<Eigen::Infinity>() : 0.0;
  if (m) rp.cwiseAbs().maxCoeff(&sol.worst_equality);
  return sol;
}

}  // namespace beamilc::nlp
