#pragma once

#include "beamilc/dual.hpp"
#include "beamilc/nlp/problem.hpp"

#include <functional>
#include <string>

namespace beamilc::nlp {

using DualVector = Eigen::Matrix<Dual, Eigen::Dynamic, 1>;

/// Discrete dynamics x+ = F(x, v, p) over a fixed number of intervals. v is
/// the per-interval input (controls, disturbance samples, ...), p a shared
/// parameter vector (may be empty).
struct ShootingSpec {
  std::string prefix;
  int nx = 0;
  int nv = 0;
  int np = 0;
  int intervals = 0;
  std::function<DualVector(const DualVector& x, const DualVector& v, const DualVector& p)> step;
  // Per-entry bounds; empty vectors mean unbounded.
  VectorXd x_lower, x_upper, v_lower, v_upper, p_lower, p_upper;
};

/// Variable indices of a transcribed shooting problem.
struct ShootingLayout {
  int x_offset = 0;
  int v_offset = 0;
  int p_offset = 0;
  int nx = 0;
  int nv = 0;
  int np = 0;
  int intervals = 0;

  int state(int k, int i) const { return x_offset + k * nx + i; }
  int input(int k, int i) const { return v_offset + k * nv + i; }
  int param(int i) const { return p_offset + i; }
};

namespace detail {

inline VectorXd bound_or(const VectorXd& b, int n, double fallback, const char* what) {
  if (b.size() == 0) return VectorXd::Constant(n, fallback);
  require_dim(b.size(), n, what);
  return b;
}

inline VectorXd repeat(const VectorXd& v, int times) {
  VectorXd out(v.size() * times);
  for (int k = 0; k < times; ++k) out.segment(k * v.size(), v.size()) = v;
  return out;
}

}  // namespace detail

/// Adds state blocks x_0..x_N, input blocks v_0..v_{N-1}, a parameter
/// block, and the gap constraints x_{k+1} - F(x_k, v_k, p) = 0.
inline ShootingLayout transcribe_shooting(NlpProblem& problem, const ShootingSpec& spec) {
  if (spec.intervals < 1) throw InvalidArgument("transcribe_shooting: need at least one interval");
  if (spec.nx < 1 || spec.nv < 0 || spec.np < 0) throw InvalidArgument("transcribe_shooting: bad dimensions");
  if (!spec.step) throw InvalidArgument("transcribe_shooting: missing dynamics");
  if (spec.nx + spec.nv + spec.np > kMaxDirections) {
    throw InvalidArgument("transcribe_shooting: nx + nv + np exceeds the derivative direction limit");
  }
  const int n = spec.intervals;
  const VectorXd xl = detail::bound_or(spec.x_lower, spec.nx, -kInf, "shooting x_lower");
  const VectorXd xu = detail::bound_or(spec.x_upper, spec.nx, kInf, "shooting x_upper");
  const VectorXd vl = detail::bound_or(spec.v_lower, spec.nv, -kInf, "shooting v_lower");
  const VectorXd vu = detail::bound_or(spec.v_upper, spec.nv, kInf, "shooting v_upper");
  const VectorXd pl = detail::bound_or(spec.p_lower, spec.np, -kInf, "shooting p_lower");
  const VectorXd pu = detail::bound_or(spec.p_upper, spec.np, kInf, "shooting p_upper");

  ShootingLayout lay;
  lay.nx = spec.nx;
  lay.nv = spec.nv;
  lay.np = spec.np;
  lay.intervals = n;
  lay.x_offset = problem.add_block(spec.prefix + "x", (n + 1) * spec.nx, detail::repeat(xl, n + 1),
                                   detail::repeat(xu, n + 1), VectorXd::Zero((n + 1) * spec.nx));
  lay.v_offset = problem.add_block(spec.prefix + "v", n * spec.nv, detail::repeat(vl, n), detail::repeat(vu, n),
                                   VectorXd::Zero(n * spec.nv));
  lay.p_offset = problem.add_block(spec.prefix + "p", spec.np, pl, pu, VectorXd::Zero(spec.np));

  const int nx = spec.nx, nv = spec.nv, np = spec.np;
  const int head = nx + nv + np;
  auto step = spec.step;
  for (int k = 0; k < n; ++k) {
    Term t;
    t.name = spec.prefix + "gap" + std::to_string(k);
    t.dim = nx;
    for (int i = 0; i < nx; ++i) t.vars.push_back(lay.state(k, i));
    for (int i = 0; i < nv; ++i) t.vars.push_back(lay.input(k, i));
    for (int i = 0; i < np; ++i) t.vars.push_back(lay.param(i));
    for (int i = 0; i < nx; ++i) t.vars.push_back(lay.state(k + 1, i));
    t.fn = [step, nx, nv, np, head](const VectorXd& local, const std::vector<char>& need) {
      std::vector<int> dirs;
      for (int j = 0; j < head; ++j) {
        if (need[static_cast<std::size_t>(j)]) dirs.push_back(j);
      }
      DualVector in(head);
      for (int j = 0; j < head; ++j) in[j] = Dual(local[j]);
      for (std::size_t d = 0; d < dirs.size(); ++d) {
        in[dirs[d]] = Dual::variable(local[dirs[d]], static_cast<int>(dirs.size()), static_cast<int>(d));
      }
      const DualVector out = step(in.head(nx), in.segment(nx, nv), in.tail(np));
      require_dim(out.size(), nx, "shooting step output");
      TermValue tv;
      tv.value.resize(nx);
      tv.jacobian = MatrixXd::Zero(nx, head + nx);
      for (int i = 0; i < nx; ++i) {
        tv.value[i] = out[i].value() - local[head + i];
        for (std::size_t d = 0; d < dirs.size(); ++d) tv.jacobian(i, dirs[d]) = out[i].derivative(static_cast<int>(d));
        tv.jacobian(i, head + i) = -1.0;
      }
      return tv;
    };
    problem.add_equality(std::move(t));
  }
  return lay;
}

/// Forward simulation with the same discrete dynamics; returns the
/// (intervals + 1) x nx matrix of states.
inline MatrixXd simulate_shooting(const ShootingSpec& spec, const VectorXd& x0, const MatrixXd& inputs,
                                  const VectorXd& params) {
  require_dim(x0.size(), spec.nx, "simulate_shooting: x0");
  require_dim(inputs.cols(), spec.nv, "simulate_shooting: inputs");
  require_dim(params.size(), spec.np, "simulate_shooting: params");
  MatrixXd xs(inputs.rows() + 1, spec.nx);
  xs.row(0) = x0.transpose();
  const DualVector p = params.cast<Dual>();
  DualVector x = x0.cast<Dual>();
  for (Eigen::Index k = 0; k < inputs.rows(); ++k) {
    x = spec.step(x, DualVector(inputs.row(k).transpose().cast<Dual>()), p);
    for (int i = 0; i < spec.nx; ++i) xs(k + 1, i) = x[i].value();
  }
  return xs;
}

/// Writes a state/input/parameter trajectory into the initial guess.
inline void set_shooting_guess(NlpProblem& problem, const ShootingLayout& lay, const MatrixXd& states,
                               const MatrixXd& inputs, const VectorXd& params) {
  require_dim(states.rows(), lay.intervals + 1, "set_shooting_guess: states rows");
  require_dim(states.cols(), lay.nx, "set_shooting_guess: states cols");
  require_dim(inputs.rows(), lay.intervals, "set_shooting_guess: inputs rows");
  require_dim(inputs.cols(), lay.nv, "set_shooting_guess: inputs cols");
  require_dim(params.size(), lay.np, "set_shooting_guess: params");
  for (int k = 0; k <= lay.intervals; ++k) {
    for (int i = 0; i < lay.nx; ++i) problem.set_initial(lay.state(k, i), states(k, i));
  }
  for (int k = 0; k < lay.intervals; ++k) {
    for (int i = 0; i < lay.nv; ++i) problem.set_initial(lay.input(k, i), inputs(k, i));
  }
  for (int i = 0; i < lay.np; ++i) problem.set_initial(lay.param(i), params[i]);
}

}  // namespace beamilc::nlp
