#pragma once

#include "beamilc/nlp/problem.hpp"

#include <cmath>
#include <functional>
#include <string>

namespace beamilc::nlp {

/// Worst entry of a Jacobian comparison. The error of an entry is
/// |analytic - numeric| / max(1, |numeric|).
struct DerivativeReport {
  double max_error = 0.0;
  int row = -1;
  int col = -1;
  double analytic = 0.0;
  double numeric = 0.0;
  std::string where;

  bool passes(double tol) const { return max_error <= tol; }
  void merge(const DerivativeReport& other) {
    if (other.max_error > max_error || row < 0) *this = other;
  }
};

/// Central finite differences of f at x with step eps * max(1, |x_j|).
inline DerivativeReport check_derivatives(const std::function<VectorXd(const VectorXd&)>& f, const MatrixXd& jac,
                                          const VectorXd& x, double eps = 1e-6) {
  DerivativeReport rep;
  for (Eigen::Index j = 0; j < x.size(); ++j) {
    const double h = eps * std::max(1.0, std::abs(x[j]));
    VectorXd xp = x, xm = x;
    xp[j] += h;
    xm[j] -= h;
    const VectorXd col = (f(xp) - f(xm)) / (xp[j] - xm[j]);
    require_dim(jac.rows(), col.size(), "check_derivatives: Jacobian rows");
    for (Eigen::Index i = 0; i < col.size(); ++i) {
      const double err = std::abs(jac(i, j) - col[i]) / std::max(1.0, std::abs(col[i]));
      if (err > rep.max_error || rep.row < 0) {
        rep.max_error = err;
        rep.row = static_cast<int>(i);
        rep.col = static_cast<int>(j);
        rep.analytic = jac(i, j);
        rep.numeric = col[i];
      }
    }
  }
  return rep;
}

inline DerivativeReport check_term(const Term& term, const VectorXd& local, double eps = 1e-6) {
  const std::vector<char> all(term.vars.size(), 1), none(term.vars.size(), 0);
  const MatrixXd jac = term.fn(local, all).jacobian;
  DerivativeReport rep = check_derivatives([&](const VectorXd& x) { return term.fn(x, none).value; }, jac, local, eps);
  rep.where = term.name;
  return rep;
}

/// Checks every residual and equality term of a problem at w.
inline DerivativeReport check_problem_derivatives(const NlpProblem& problem, const VectorXd& w, double eps = 1e-6) {
  DerivativeReport worst;
  auto visit = [&](const std::vector<Term>& terms) {
    for (const Term& t : terms) {
      VectorXd local(t.vars.size());
      for (std::size_t j = 0; j < t.vars.size(); ++j) local[static_cast<Eigen::Index>(j)] = w[t.vars[j]];
      worst.merge(check_term(t, local, eps));
    }
  };
  visit(problem.residuals());
  visit(problem.equalities());
  return worst;
}

}  // namespace beamilc::nlp
