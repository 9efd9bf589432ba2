#pragma once

#include "beamilc/dual.hpp"
#include "beamilc/error.hpp"

#include <Eigen/Core>
#include <Eigen/SparseCore>

#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <string>
#include <utility>
#include <vector>

namespace beamilc::nlp {

using Eigen::MatrixXd;
using Eigen::VectorXd;
using SparseMatrix = Eigen::SparseMatrix<double>;

inline constexpr double kInf = std::numeric_limits<double>::infinity();

/// Value and dense local Jacobian of a term. Columns follow the term's
/// variable list; columns whose `need` flag is false may be left zero.
struct TermValue {
  VectorXd value;
  MatrixXd jacobian;
};

using TermFunction = std::function<TermValue(const VectorXd& local, const std::vector<char>& need)>;

struct Term {
  std::string name;
  std::vector<int> vars;
  int dim = 0;
  TermFunction fn;
};

/// Wraps a function written over Dual scalars; only the needed columns are
/// seeded as derivative directions.
template <class F>
TermFunction dual_term(F f) {
  return [f](const VectorXd& local, const std::vector<char>& need) {
    std::vector<int> dirs;
    for (std::size_t j = 0; j < need.size(); ++j) {
      if (need[j]) dirs.push_back(static_cast<int>(j));
    }
    if (static_cast<int>(dirs.size()) > kMaxDirections) {
      throw InvalidArgument("dual_term: too many derivative directions (" + std::to_string(dirs.size()) + ")");
    }
    Eigen::Matrix<Dual, Eigen::Dynamic, 1> in(local.size());
    for (Eigen::Index j = 0; j < local.size(); ++j) in[j] = Dual(local[j]);
    for (std::size_t d = 0; d < dirs.size(); ++d) {
      in[dirs[d]] = Dual::variable(local[dirs[d]], static_cast<int>(dirs.size()), static_cast<int>(d));
    }
    const Eigen::Matrix<Dual, Eigen::Dynamic, 1> out = f(in);
    TermValue tv;
    tv.value.resize(out.size());
    tv.jacobian = MatrixXd::Zero(out.size(), local.size());
    for (Eigen::Index i = 0; i < out.size(); ++i) {
      tv.value[i] = out[i].value();
      for (std::size_t d = 0; d < dirs.size(); ++d) tv.jacobian(i, dirs[d]) = out[i].derivative(static_cast<int>(d));
    }
    return tv;
  };
}

/// Affine term A_local * w_local + offset.
inline TermFunction linear_term(MatrixXd a, VectorXd offset) {
  return [a = std::move(a), offset = std::move(offset)](const VectorXd& local, const std::vector<char>&) {
    return TermValue{a * local + offset, a};
  };
}

struct VariableBlock {
  std::string name;
  int offset = 0;
  int size = 0;
};

/// Nonlinear program in the form
///   min  sum_i w_i |r_i(w)|^2 + sum_j rho_j |g_j(w)| + c'w
///   s.t. h(w) = 0,  lo <= e(w) <= hi,  lb <= w <= ub.
/// l1 terms and inequalities are rewritten with slack variables so the
/// solver only sees residuals, a linear cost, equalities and bounds.
class NlpProblem {
 public:
  int add_block(const std::string& name, int size, double lower = -kInf, double upper = kInf, double initial = 0.0) {
    return add_block(name, size, VectorXd::Constant(size, lower), VectorXd::Constant(size, upper),
                     VectorXd::Constant(size, initial));
  }

  int add_block(const std::string& name, int size, const VectorXd& lower, const VectorXd& upper,
                const VectorXd& initial) {
    if (size < 0) throw InvalidArgument("add_block: negative size for '" + name + "'");
    if (blocks_.count(name)) throw InvalidArgument("add_block: duplicate block '" + name + "'");
    require_dim(lower.size(), size, "add_block: lower");
    require_dim(upper.size(), size, "add_block: upper");
    require_dim(initial.size(), size, "add_block: initial");
    const int offset = num_variables();
    blocks_[name] = {name, offset, size};
    block_order_.push_back(name);
    lower_.conservativeResize(offset + size);
    upper_.conservativeResize(offset + size);
    initial_.conservativeResize(offset + size);
    cost_.conservativeResize(offset + size);
    scale_.conservativeResize(offset + size);
    scale_.tail(size).setOnes();
    lower_.tail(size) = lower;
    upper_.tail(size) = upper;
    initial_.tail(size) = initial;
    cost_.tail(size).setZero();
    for (int i = offset; i < offset + size; ++i) check_bounds(i);
    return offset;
  }

  const VariableBlock& block(const std::string& name) const {
    auto it = blocks_.find(name);
    if (it == blocks_.end()) throw InvalidArgument("no variable block named '" + name + "'");
    return it->second;
  }
  bool has_block(const std::string& name) const { return blocks_.count(name) > 0; }
  const std::vector<std::string>& block_names() const { return block_order_; }

  int num_variables() const { return static_cast<int>(lower_.size()); }

  void set_bounds(int index, double lower, double upper) {
    check_index(index);
    lower_[index] = lower;
    upper_[index] = upper;
    check_bounds(index);
  }

  void fix(int index, double value) {
    set_bounds(index, value, value);
    initial_[index] = value;
  }
  void set_initial(int index, double value) {
    check_index(index);
    initial_[index] = value;
  }
  void set_initial(const std::string& block_name, const VectorXd& values) {
    const VariableBlock& b = block(block_name);
    require_dim(values.size(), b.size, "set_initial");
    initial_.segment(b.offset, b.size) = values;
  }
  /// Typical magnitude of a variable; the solver works in w / scale.
  void set_scale(int index, double s) {
    check_index(index);
    if (!(s > 0.0) || !std::isfinite(s)) throw InvalidArgument("set_scale: scale must be positive");
    scale_[index] = s;
  }
  void add_linear_cost(int index, double c) {
    check_index(index);
    cost_[index] += c;
  }

  /// Objective contribution sum_i weights_i * r_i^2.
  void add_residual(Term term, const VectorXd& weights) {
    validate_term(term);
    require_dim(weights.size(), term.dim, "add_residual: weights");
    if ((weights.array() < 0.0).any()) throw InvalidArgument("add_residual: negative weight in '" + term.name + "'");
    residuals_.push_back(std::move(term));
    residual_scale_.push_back((2.0 * weights).cwiseSqrt());
  }
  void add_residual(Term term, double weight = 1.0) {
    const int dim = term.dim;
    add_residual(std::move(term), VectorXd::Constant(dim, weight));
  }

  /// Objective contribution sum_i weights_i * |g_i|, encoded exactly by a
  /// non-negative slack pair per component: g - t+ + t- = 0.
  void add_l1(Term term, const VectorXd& weights) {
    validate_term(term);
    require_dim(weights.size(), term.dim, "add_l1: weights");
    if ((weights.array() < 0.0).any()) throw InvalidArgument("add_l1: negative weight in '" + term.name + "'");
    const int plus = add_block(term.name + "/t+", term.dim, 0.0, kInf, 0.0);
    const int minus = add_block(term.name + "/t-", term.dim, 0.0, kInf, 0.0);
    for (int i = 0; i < term.dim; ++i) {
      cost_[plus + i] = weights[i];
      cost_[minus + i] = weights[i];
    }
    l1_.push_back({static_cast<int>(equalities_.size()), plus, minus, term.dim});
    equalities_.push_back(with_slack(std::move(term), plus, minus));
  }

  void add_equality(Term term) {
    validate_term(term);
    equalities_.push_back(std::move(term));
  }

  /// lower <= e(w) <= upper through a bounded slack s with e(w) - s = 0.
  void add_inequality(Term term, const VectorXd& lower, const VectorXd& upper) {
    validate_term(term);
    require_dim(lower.size(), term.dim, "add_inequality: lower");
    require_dim(upper.size(), term.dim, "add_inequality: upper");
    const int s = add_block(term.name + "/s", term.dim, lower, upper, lower.cwiseMax(upper.cwiseMin(VectorXd::Zero(term.dim))));
    inequalities_.push_back({static_cast<int>(equalities_.size()), s, term.dim});
    equalities_.push_back(with_slack(std::move(term), s, -1));
  }

  const VectorXd& lower() const { return lower_; }
  const VectorXd& upper() const { return upper_; }
  const VectorXd& initial() const { return initial_; }
  const VectorXd& linear_cost() const { return cost_; }
  const VectorXd& scale() const { return scale_; }
  const std::vector<Term>& residuals() const { return residuals_; }
  const std::vector<VectorXd>& residual_scales() const { return residual_scale_; }
  const std::vector<Term>& equalities() const { return equalities_; }

  int num_residuals() const { return count_rows(residuals_); }
  int num_equalities() const { return count_rows(equalities_); }

  /// Initial guess clipped into the bounds, with slack variables made
  /// consistent with their linking equalities.
  VectorXd starting_point() const {
    VectorXd w = initial_.cwiseMax(lower_).cwiseMin(upper_);
    for (const auto& l1 : l1_) {
      const Term& t = equalities_[l1.equality];
      const VectorXd g = eval_raw(t, w);  // includes current slack values
      for (int i = 0; i < l1.dim; ++i) {
        const double gi = g[i] + w[l1.plus + i] - w[l1.minus + i];
        w[l1.plus + i] = std::max(gi, 0.0);
        w[l1.minus + i] = std::max(-gi, 0.0);
      }
    }
    for (const auto& in : inequalities_) {
      const Term& t = equalities_[in.equality];
      const VectorXd g = eval_raw(t, w);
      for (int i = 0; i < in.dim; ++i) {
        const double ei = g[i] + w[in.slack + i];
        w[in.slack + i] = std::clamp(ei, lower_[in.slack + i], upper_[in.slack + i]);
      }
    }
    return w;
  }

  /// Shrinks each l1 slack pair so that at most one member is nonzero;
  /// keeps the linking equalities unchanged and never raises the cost.
  void normalize_slacks(VectorXd& w) const {
    for (const auto& l1 : l1_) {
      for (int i = 0; i < l1.dim; ++i) {
        const double common = std::min(w[l1.plus + i], w[l1.minus + i]);
        w[l1.plus + i] -= common;
        w[l1.minus + i] -= common;
      }
    }
  }

  /// Objective value sum w_i r_i^2 + c'w (the l1 parts appear through c).
  double objective(const VectorXd& w) const {
    double f = cost_.dot(w);
    for (std::size_t t = 0; t < residuals_.size(); ++t) {
      f += 0.5 * residual_scale_[t].cwiseProduct(eval_raw(residuals_[t], w)).squaredNorm();
    }
    return f;
  }

  /// Scaled residual vector r_s with objective = 1/2 |r_s|^2 + c'w.
  VectorXd residual_vector(const VectorXd& w) const { return stack(residuals_, w, &residual_scale_); }
  VectorXd equality_vector(const VectorXd& w) const { return stack(equalities_, w, nullptr); }

  /// Residuals, equalities and their sparse Jacobians. Columns flagged in
  /// `skip` (fixed variables) are not differentiated.
  void evaluate(const VectorXd& w, const std::vector<char>& skip, VectorXd& r, SparseMatrix& jr, VectorXd& h,
                SparseMatrix& jh) const {
    assemble(residuals_, &residual_scale_, w, skip, r, jr);
    assemble(equalities_, nullptr, w, skip, h, jh);
  }

  /// Name of the term owning a given equality row.
  std::string equality_name(int row) const {
    for (const auto& t : equalities_) {
      if (row < t.dim) return t.name + "[" + std::to_string(row) + "]";
      row -= t.dim;
    }
    return "?";
  }

  VectorXd values(const VectorXd& w, const std::string& block_name) const {
    const VariableBlock& b = block(block_name);
    return w.segment(b.offset, b.size);
  }

 private:
  struct L1Info {
    int equality;
    int plus;
    int minus;
    int dim;
  };
  struct IneqInfo {
    int equality;
    int slack;
    int dim;
  };

  void check_index(int index) const {
    if (index < 0 || index >= num_variables()) throw InvalidArgument("variable index out of range");
  }
  void check_bounds(int i) const {
    if (!(lower_[i] <= upper_[i]) || std::isnan(lower_[i]) || std::isnan(upper_[i])) {
      throw InvalidArgument("variable " + std::to_string(i) + ": lower bound exceeds upper bound");
    }
  }
  void validate_term(const Term& t) const {
    if (t.dim < 0 || !t.fn) throw InvalidArgument("term '" + t.name + "' is malformed");
    for (int v : t.vars) check_index(v);
  }

  // Appends slack columns: value g - t+ + t- (or g - s when minus < 0).
  static Term with_slack(Term t, int first, int second) {
    const int dim = t.dim;
    const int base = static_cast<int>(t.vars.size());
    Term out;
    out.name = t.name;
    out.dim = dim;
    out.vars = t.vars;
    for (int i = 0; i < dim; ++i) out.vars.push_back(first + i);
    if (second >= 0) {
      for (int i = 0; i < dim; ++i) out.vars.push_back(second + i);
    }
    TermFunction inner = std::move(t.fn);
    out.fn = [inner, base, dim, has_second = second >= 0](const VectorXd& local, const std::vector<char>& need) {
      const std::vector<char> inner_need(need.begin(), need.begin() + base);
      TermValue tv = inner(local.head(base), inner_need);
      require_dim(tv.value.size(), dim, "slack term value");
      tv.value -= local.segment(base, dim);
      MatrixXd jac = MatrixXd::Zero(dim, local.size());
      jac.leftCols(base) = tv.jacobian;
      jac.block(0, base, dim, dim) = -MatrixXd::Identity(dim, dim);
      if (has_second) {
        tv.value += local.segment(base + dim, dim);
        jac.block(0, base + dim, dim, dim) = MatrixXd::Identity(dim, dim);
      }
      tv.jacobian = std::move(jac);
      return tv;
    };
    return out;
  }

  static VectorXd gather(const Term& t, const VectorXd& w) {
    VectorXd local(t.vars.size());
    for (std::size_t j = 0; j < t.vars.size(); ++j) local[static_cast<Eigen::Index>(j)] = w[t.vars[j]];
    return local;
  }

  static VectorXd eval_raw(const Term& t, const VectorXd& w) {
    const TermValue tv = t.fn(gather(t, w), std::vector<char>(t.vars.size(), 0));
    require_dim(tv.value.size(), t.dim, ("term '" + t.name + "' value").c_str());
    return tv.value;
  }

  static int count_rows(const std::vector<Term>& terms) {
    int rows = 0;
    for (const auto& t : terms) rows += t.dim;
    return rows;
  }

  static VectorXd stack(const std::vector<Term>& terms, const VectorXd& w, const std::vector<VectorXd>* scale) {
    VectorXd out(count_rows(terms));
    int row = 0;
    for (std::size_t k = 0; k < terms.size(); ++k) {
      VectorXd v = eval_raw(terms[k], w);
      if (scale) v = v.cwiseProduct((*scale)[k]);
      out.segment(row, terms[k].dim) = v;
      row += terms[k].dim;
    }
    return out;
  }

  void assemble(const std::vector<Term>& terms, const std::vector<VectorXd>* scale, const VectorXd& w,
                const std::vector<char>& skip, VectorXd& value, SparseMatrix& jac) const {
    const int rows = count_rows(terms);
    value.resize(rows);
    std::vector<Eigen::Triplet<double>> trip;
    int row = 0;
    for (std::size_t k = 0; k < terms.size(); ++k) {
      const Term& t = terms[k];
      std::vector<char> need(t.vars.size());
      for (std::size_t j = 0; j < t.vars.size(); ++j) need[j] = skip.empty() || !skip[static_cast<std::size_t>(t.vars[j])];
      TermValue tv = t.fn(gather(t, w), need);
      require_dim(tv.value.size(), t.dim, ("term '" + t.name + "' value").c_str());
      require_dim(tv.jacobian.rows(), t.dim, ("term '" + t.name + "' Jacobian rows").c_str());
      require_dim(tv.jacobian.cols(), static_cast<long>(t.vars.size()), ("term '" + t.name + "' Jacobian cols").c_str());
      if (scale) {
        tv.value = tv.value.cwiseProduct((*scale)[k]);
        tv.jacobian = (*scale)[k].asDiagonal() * tv.jacobian;
      }
      value.segment(row, t.dim) = tv.value;
      for (std::size_t j = 0; j < t.vars.size(); ++j) {
        if (!need[j]) continue;
        for (int i = 0; i < t.dim; ++i) {
          const double v = tv.jacobian(i, static_cast<Eigen::Index>(j));
          if (v != 0.0) trip.emplace_back(row + i, t.vars[j], v);
        }
      }
      row += t.dim;
    }
    jac.resize(rows, num_variables());
    jac.setFromTriplets(trip.begin(), trip.end());  // duplicates are summed
  }

  std::map<std::string, VariableBlock> blocks_;
  std::vector<std::string> block_order_;
  VectorXd lower_, upper_, initial_, cost_, scale_;
  std::vector<Term> residuals_;
  std::vector<VectorXd> residual_scale_;
  std::vector<Term> equalities_;
  std::vector<L1Info> l1_;
  std::vector<IneqInfo> inequalities_;
};

}  // namespace beamilc::nlp
