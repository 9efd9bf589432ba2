#pragma once

#include "beamilc/nlp/problem.hpp"
#include "beamilc/nlp/qp.hpp"

#include <cmath>
#include <cstdio>
#include <functional>
#include <ostream>
#include <string>
#include <vector>

namespace beamilc::nlp {

struct SqpOptions {
  int max_iterations = 100;
  double feasibility_tolerance = 1e-8;
  double optimality_tolerance = 1e-6;
  double initial_damping = 1e-6;  // Levenberg lambda
  double min_damping = 1e-12;
  double max_damping = 1e10;
  double armijo = 1e-4;
  double min_step = 1e-10;
  bool second_order_correction = true;
  QpOptions qp;
  std::ostream* log = nullptr;
  std::string log_tag = "sqp";
  // called once with the problem and its starting point (derivative audits)
  std::function<void(const NlpProblem&, const VectorXd&)> inspect;
};

enum class SolveStatus { converged, max_iterations, line_search_failure, qp_failure };

inline const char* to_string(SolveStatus s) {
  switch (s) {
    case SolveStatus::converged: return "converged";
    case SolveStatus::max_iterations: return "max-iter";
    case SolveStatus::line_search_failure: return "line-search-failure";
    case SolveStatus::qp_failure: return "qp-failure";
  }
  return "?";
}

struct IterationLog {
  int iteration = 0;
  double objective = 0.0;
  double feasibility = 0.0;
  double stationarity = 0.0;
  double merit_before = 0.0;  // merit at the iterate, with this step's penalty
  double merit_after = 0.0;   // merit at the accepted point, same penalty
  double step_norm = 0.0;
  double alpha = 0.0;
  double damping = 0.0;
  int qp_iterations = 0;
  bool second_order = false;
};

struct NlpSolution {
  SolveStatus status = SolveStatus::max_iterations;
  VectorXd w;
  VectorXd multipliers;  // one per equality row
  double objective = 0.0;
  double feasibility = 0.0;   // ||h||_inf
  double stationarity = 0.0;  // scaled KKT residual
  int iterations = 0;
  std::string message;
  std::vector<IterationLog> history;

  bool converged() const { return status == SolveStatus::converged; }
};

namespace detail {

inline SparseMatrix select_columns(const SparseMatrix& m, const std::vector<int>& col_map, int new_cols) {
  std::vector<Eigen::Triplet<double>> trip;
  trip.reserve(static_cast<std::size_t>(m.nonZeros()));
  for (int j = 0; j < m.outerSize(); ++j) {
    const int nj = col_map[static_cast<std::size_t>(j)];
    if (nj < 0) continue;
    for (SparseMatrix::InnerIterator it(m, j); it; ++it) trip.emplace_back(static_cast<int>(it.row()), nj, it.value());
  }
  SparseMatrix out(m.rows(), new_cols);
  out.setFromTriplets(trip.begin(), trip.end());
  return out;
}

inline SparseMatrix select_rows(const SparseMatrix& m, const std::vector<int>& row_map, int new_rows) {
  std::vector<Eigen::Triplet<double>> trip;
  for (int j = 0; j < m.outerSize(); ++j) {
    for (SparseMatrix::InnerIterator it(m, j); it; ++it) {
      const int r = row_map[static_cast<std::size_t>(it.row())];
      if (r >= 0) trip.emplace_back(r, j, it.value());
    }
  }
  SparseMatrix out(new_rows, m.cols());
  out.setFromTriplets(trip.begin(), trip.end());
  return out;
}

}  // namespace detail

/// Sequential quadratic programming with a Gauss-Newton Hessian, Levenberg
/// damping adapted by the gain ratio, and an l1 merit line search with an
/// optional second-order correction.
inline NlpSolution solve(const NlpProblem& problem, const SqpOptions& opts = {}) {
  if (opts.inspect) opts.inspect(problem, problem.initial());
  const int nv = problem.num_variables();
  const VectorXd& lb = problem.lower();
  const VectorXd& ub = problem.upper();
  const VectorXd& cost = problem.linear_cost();

  std::vector<char> fixed(static_cast<std::size_t>(nv), 0);
  std::vector<int> col_map(static_cast<std::size_t>(nv), -1);
  std::vector<int> free_vars;
  for (int i = 0; i < nv; ++i) {
    if (lb[i] == ub[i]) {
      fixed[static_cast<std::size_t>(i)] = 1;
    } else {
      col_map[static_cast<std::size_t>(i)] = static_cast<int>(free_vars.size());
      free_vars.push_back(i);
    }
  }
  const int nf = static_cast<int>(free_vars.size());

  NlpSolution sol;
  VectorXd w = problem.starting_point();
  problem.normalize_slacks(w);

  auto merit = [&](const VectorXd& x, double mu) {
    return problem.objective(x) + mu * problem.equality_vector(x).lpNorm<1>();
  };
  auto clip = [&](VectorXd x) {
    x = x.cwiseMax(lb).cwiseMin(ub);
    problem.normalize_slacks(x);
    return x;
  };

  double damping = opts.initial_damping;
  double penalty = 0.0;
  VectorXd r, h;
  SparseMatrix jr, jh;

  for (int iter = 0;; ++iter) {
    problem.evaluate(w, fixed, r, jr, h, jh);
    const double objective = 0.5 * r.squaredNorm() + cost.dot(w);
    const double feasibility = h.size() ? h.lpNorm<Eigen::Infinity>() : 0.0;
    const VectorXd grad = VectorXd(jr.transpose() * r) + cost;

    // Reduced QP over free variables; constraint rows that no free
    // variable touches cannot be changed by the step and are dropped.
    const SparseMatrix jr_f = detail::select_columns(jr, col_map, nf);
    const SparseMatrix jh_f = detail::select_columns(jh, col_map, nf);
    std::vector<int> row_count(static_cast<std::size_t>(h.size()), 0);
    for (int j = 0; j < jh_f.outerSize(); ++j) {
      for (SparseMatrix::InnerIterator it(jh_f, j); it; ++it) ++row_count[static_cast<std::size_t>(it.row())];
    }
    std::vector<int> row_map(static_cast<std::size_t>(h.size()), -1);
    std::vector<int> kept_rows;
    for (int i = 0; i < h.size(); ++i) {
      if (row_count[static_cast<std::size_t>(i)] > 0) {
        row_map[static_cast<std::size_t>(i)] = static_cast<int>(kept_rows.size());
        kept_rows.push_back(i);
      }
    }
    const int nk = static_cast<int>(kept_rows.size());

    // The QP works in scaled steps d = S dz.
    VectorXd sf(nf);
    for (int k = 0; k < nf; ++k) sf[k] = problem.scale()[free_vars[static_cast<std::size_t>(k)]];
    const SparseMatrix jr_s = jr_f * sf.asDiagonal();
    QpProblem qp;
    SparseMatrix identity(nf, nf);
    identity.setIdentity();
    const SparseMatrix gn = SparseMatrix(jr_s.transpose() * jr_s);
    qp.A = detail::select_rows(SparseMatrix(jh_f * sf.asDiagonal()), row_map, nk);
    qp.q.resize(nf);
    qp.lower.resize(nf);
    qp.upper.resize(nf);
    for (int k = 0; k < nf; ++k) {
      const int i = free_vars[static_cast<std::size_t>(k)];
      qp.q[k] = grad[i] * sf[k];
      qp.lower[k] = (lb[i] - w[i]) / sf[k];
      qp.upper[k] = (ub[i] - w[i]) / sf[k];
    }
    qp.b.resize(nk);
    for (int k = 0; k < nk; ++k) qp.b[k] = -h[kept_rows[static_cast<std::size_t>(k)]];
    qp.P = gn + damping * identity;

    const QpSolution qs = solve_qp(qp, opts.qp);
    sol.iterations = iter;
    sol.objective = objective;
    sol.feasibility = feasibility;
    sol.w = w;
    if (qs.status != QpStatus::solved) {
      sol.status = SolveStatus::qp_failure;
      sol.message = std::string("QP subproblem ") + to_string(qs.status) + " after " + std::to_string(qs.iterations) +
                    " iterations; primal residual " + std::to_string(qs.primal_residual);
      if (qs.worst_equality >= 0 && qs.worst_equality < nk) {
        sol.message += ", worst constraint " + problem.equality_name(kept_rows[static_cast<std::size_t>(qs.worst_equality)]);
      }
      break;
    }

    VectorXd d = VectorXd::Zero(nv);
    for (int k = 0; k < nf; ++k) d[free_vars[static_cast<std::size_t>(k)]] = qs.x[k] * sf[k];
    sol.multipliers = VectorXd::Zero(h.size());
    for (int k = 0; k < nk; ++k) sol.multipliers[kept_rows[static_cast<std::size_t>(k)]] = qs.y[k];

    const VectorXd grad_f = qp.q;
    const VectorXd kkt = grad_f + VectorXd(qp.A.transpose() * qs.y) + qs.z;
    // QP bound multipliers count only for bounds active at w, so a bound
    // reached by the step itself leaves a complementarity residual.
    double complementarity = 0.0;
    for (int k = 0; k < nf; ++k) {
      if (qs.z[k] > 0) complementarity = std::max(complementarity, qs.z[k] * std::min(1.0, qp.upper[k]));
      if (qs.z[k] < 0) complementarity = std::max(complementarity, -qs.z[k] * std::min(1.0, -qp.lower[k]));
    }
    const double stationarity = std::max(nf ? kkt.lpNorm<Eigen::Infinity>() : 0.0, complementarity) /
                                std::max(1.0, nf ? grad_f.lpNorm<Eigen::Infinity>() : 0.0);
    sol.stationarity = stationarity;

    IterationLog rec;
    rec.iteration = iter;
    rec.objective = objective;
    rec.feasibility = feasibility;
    rec.stationarity = stationarity;
    rec.damping = damping;
    rec.qp_iterations = qs.iterations;
    rec.step_norm = d.lpNorm<Eigen::Infinity>();

    if (feasibility < opts.feasibility_tolerance && stationarity < opts.optimality_tolerance) {
      sol.status = SolveStatus::converged;
      rec.merit_before = rec.merit_after = merit(w, penalty);
      sol.history.push_back(rec);
      if (opts.log) {
        char line[160];
        std::snprintf(line, sizeof(line), "%s iter=%d obj=%.9e feas=%.3e stat=%.3e status=converged\n",
                      opts.log_tag.c_str(), iter, objective, feasibility, stationarity);
        *opts.log << line;
      }
      break;
    }
    if (iter >= opts.max_iterations) {
      sol.status = SolveStatus::max_iterations;
      sol.message = "iteration limit reached";
      break;
    }

    if (nk) penalty = std::max(penalty, 1.5 * qs.y.lpNorm<Eigen::Infinity>());
    // l1 merit model: the QP meets the linearized constraints only to its
    // own tolerance, so the model uses the residual it actually reached.
    double h_kept = 0.0;
    for (int i : kept_rows) h_kept += std::abs(h[i]);
    const double h_model = nk ? VectorXd(qp.A * qs.x - qp.b).lpNorm<1>() : 0.0;
    const double phi0 = objective + penalty * (h.size() ? h.lpNorm<1>() : 0.0);
    const double slope = grad.dot(d) - penalty * (h_kept - h_model);
    // Damping follows the Lagrangian gain ratio; the l1 merit ratio is
    // swamped by constraint curvature once the penalty is large.
    double y_h = 0.0;
    for (int k = 0; k < nk; ++k) y_h += qs.y[k] * h[kept_rows[static_cast<std::size_t>(k)]];
    const double predicted = -(grad.dot(d) + 0.5 * VectorXd(jr * d).squaredNorm()) + y_h;
    auto adapt = [&](const VectorXd& trial) {
      const VectorXd h1 = problem.equality_vector(trial);
      double y_h1 = 0.0;
      for (int k = 0; k < nk; ++k) y_h1 += qs.y[k] * h1[kept_rows[static_cast<std::size_t>(k)]];
      const double actual = objective - problem.objective(trial) + y_h - y_h1;
      const double ratio = predicted > 0.0 ? actual / predicted : 0.0;
      if (ratio > 0.75) damping = std::max(opts.min_damping, damping / 3.0);
      if (ratio < 0.25) damping = std::min(opts.max_damping, damping * 4.0);
    };
    rec.merit_before = phi0;

    VectorXd next;
    double alpha = 1.0;
    double phi_next = 0.0;
    bool accepted = false;
    {
      next = clip(w + d);
      phi_next = merit(next, penalty);
      accepted = phi_next <= phi0 + opts.armijo * slope;
    }
    if (accepted) {
      adapt(next);
    } else {
      if (opts.second_order_correction && nk) {
        const VectorXd h1 = problem.equality_vector(w + d);
        QpProblem soc = qp;
        VectorXd ad = qp.A * qs.x;
        for (int k = 0; k < nk; ++k) soc.b[k] = ad[k] - h1[kept_rows[static_cast<std::size_t>(k)]];
        const QpSolution qs2 = solve_qp(soc, opts.qp);
        if (qs2.status == QpStatus::solved) {
          VectorXd d2 = VectorXd::Zero(nv);
          for (int k = 0; k < nf; ++k) d2[free_vars[static_cast<std::size_t>(k)]] = qs2.x[k] * sf[k];
          const VectorXd trial = clip(w + d2);
          const double phi_trial = merit(trial, penalty);
          if (phi_trial <= phi0 + opts.armijo * slope) {
            next = trial;
            phi_next = phi_trial;
            accepted = true;
            rec.second_order = true;
            adapt(next);
          }
        }
      }
      if (!accepted) {
        damping = std::min(opts.max_damping, damping * 4.0);
        while (!accepted) {
          alpha *= 0.5;
          if (alpha < opts.min_step) break;
          next = clip(w + alpha * d);
          phi_next = merit(next, penalty);
          accepted = phi_next <= phi0 + opts.armijo * alpha * slope;
        }
      }
    }
    rec.alpha = alpha;
    rec.merit_after = accepted ? phi_next : phi0;
    sol.history.push_back(rec);
    if (opts.log) {
      char line[256];
      std::snprintf(line, sizeof(line),
                    "%s iter=%d obj=%.9e feas=%.3e stat=%.3e step=%.3e alpha=%.3e lambda=%.3e merit=%.9e qp_iter=%d%s\n",
                    opts.log_tag.c_str(), iter, objective, feasibility, stationarity, rec.step_norm, alpha, damping,
                    rec.merit_after, qs.iterations, rec.second_order ? " soc=1" : "");
      *opts.log << line;
    }
    if (!accepted) {
      sol.status = SolveStatus::line_search_failure;
      sol.message = "no sufficient merit decrease along the search direction";
      break;
    }
    w = next;
  }
  return sol;
}

}  // namespace beamilc::nlp
