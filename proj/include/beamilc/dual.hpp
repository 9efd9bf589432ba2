#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <array>
#include <cmath>
#include <stdexcept>

namespace beamilc {

/// Upper bound on the number of simultaneous derivative directions.
inline constexpr int kMaxDirections = 48;

/// Forward-mode dual number.
///
/// Carries a value and up to kMaxDirections partial derivatives. The number
/// of active directions is a runtime quantity so the same instantiation
/// serves chains with different joint counts; a Dual with zero active
/// directions behaves as a constant. Storage is inline (no heap traffic),
/// which keeps Eigen temporaries of Dual cheap to create.
class Dual {
 public:
  Dual() = default;
  Dual(double value) : value_(value) {}  // NOLINT: implicit constants

  Dual(const Dual& other) : value_(other.value_), size_(other.size_) {
    std::copy_n(other.grad_.begin(), size_, grad_.begin());
  }
  Dual& operator=(const Dual& other) {
    value_ = other.value_;
    size_ = other.size_;
    std::copy_n(other.grad_.begin(), size_, grad_.begin());
    return *this;
  }

  /// Independent variable number `index` out of `directions`.
  static Dual variable(double value, int directions, int index) {
    if (directions > kMaxDirections || index < 0 || index >= directions) {
      throw std::out_of_range("Dual::variable: direction index out of range");
    }
    Dual x(value);
    x.size_ = directions;
    std::fill_n(x.grad_.begin(), directions, 0.0);
    x.grad_[index] = 1.0;
    return x;
  }

  double value() const { return value_; }
  int size() const { return size_; }
  double derivative(int i) const { return i < size_ ? grad_[i] : 0.0; }

  // Chain rule helpers: result = f(value) with df = scale * this->grad.
  Dual apply(double f, double scale) const {
    Dual r(f);
    r.size_ = size_;
    for (int i = 0; i < size_; ++i) r.grad_[i] = scale * grad_[i];
    return r;
  }

  // result grad = ca * a.grad + cb * b.grad
  static Dual combine(double f, const Dual& a, double ca, const Dual& b, double cb) {
    Dual r(f);
    r.size_ = std::max(a.size_, b.size_);
    const int common = std::min(a.size_, b.size_);
    for (int i = 0; i < common; ++i) r.grad_[i] = ca * a.grad_[i] + cb * b.grad_[i];
    for (int i = common; i < a.size_; ++i) r.grad_[i] = ca * a.grad_[i];
    for (int i = common; i < b.size_; ++i) r.grad_[i] = cb * b.grad_[i];
    return r;
  }

  Dual& operator+=(const Dual& o) { return *this = combine(value_ + o.value_, *this, 1.0, o, 1.0); }
  Dual& operator-=(const Dual& o) { return *this = combine(value_ - o.value_, *this, 1.0, o, -1.0); }
  Dual& operator*=(const Dual& o) { return *this = combine(value_ * o.value_, *this, o.value_, o, value_); }
  Dual& operator/=(const Dual& o) {
    const double inv = 1.0 / o.value_;
    return *this = combine(value_ * inv, *this, inv, o, -value_ * inv * inv);
  }
  Dual& operator+=(double o) { value_ += o; return *this; }
  Dual& operator-=(double o) { value_ -= o; return *this; }
  Dual& operator*=(double o) { return *this = apply(value_ * o, o); }
  Dual& operator/=(double o) { return *this = apply(value_ / o, 1.0 / o); }

  Dual operator-() const { return apply(-value_, -1.0); }
  Dual operator+() const { return *this; }

  friend Dual operator+(const Dual& a, const Dual& b) { return combine(a.value_ + b.value_, a, 1.0, b, 1.0); }
  friend Dual operator-(const Dual& a, const Dual& b) { return combine(a.value_ - b.value_, a, 1.0, b, -1.0); }
  friend Dual operator*(const Dual& a, const Dual& b) { return combine(a.value_ * b.value_, a, b.value_, b, a.value_); }
  friend Dual operator/(const Dual& a, const Dual& b) {
    const double inv = 1.0 / b.value_;
    return combine(a.value_ * inv, a, inv, b, -a.value_ * inv * inv);
  }
  friend Dual operator+(const Dual& a, double b) { Dual r(a); r.value_ += b; return r; }
  friend Dual operator+(double a, const Dual& b) { return b + a; }
  friend Dual operator-(const Dual& a, double b) { Dual r(a); r.value_ -= b; return r; }
  friend Dual operator-(double a, const Dual& b) { return b.apply(a - b.value_, -1.0); }
  friend Dual operator*(const Dual& a, double b) { return a.apply(a.value_ * b, b); }
  friend Dual operator*(double a, const Dual& b) { return b.apply(a * b.value_, a); }
  friend Dual operator/(const Dual& a, double b) { return a.apply(a.value_ / b, 1.0 / b); }
  friend Dual operator/(double a, const Dual& b) { return b.apply(a / b.value_, -a / (b.value_ * b.value_)); }

  friend bool operator<(const Dual& a, const Dual& b) { return a.value_ < b.value_; }
  friend bool operator>(const Dual& a, const Dual& b) { return a.value_ > b.value_; }
  friend bool operator<=(const Dual& a, const Dual& b) { return a.value_ <= b.value_; }
  friend bool operator>=(const Dual& a, const Dual& b) { return a.value_ >= b.value_; }
  friend bool operator==(const Dual& a, const Dual& b) { return a.value_ == b.value_; }
  friend bool operator!=(const Dual& a, const Dual& b) { return a.value_ != b.value_; }

  friend Dual sin(const Dual& x) { return x.apply(std::sin(x.value_), std::cos(x.value_)); }
  friend Dual cos(const Dual& x) { return x.apply(std::cos(x.value_), -std::sin(x.value_)); }
  friend Dual exp(const Dual& x) {
    const double e = std::exp(x.value_);
    return x.apply(e, e);
  }
  friend Dual log(const Dual& x) { return x.apply(std::log(x.value_), 1.0 / x.value_); }
  friend Dual sqrt(const Dual& x) {
    const double s = std::sqrt(x.value_);
    return x.apply(s, s > 0.0 ? 0.5 / s : 0.0);
  }
  friend Dual abs(const Dual& x) { return x.value_ < 0.0 ? -x : x; }
  friend Dual fabs(const Dual& x) { return abs(x); }
  friend Dual atan2(const Dual& y, const Dual& x) {
    const double r2 = x.value_ * x.value_ + y.value_ * y.value_;
    return combine(std::atan2(y.value_, x.value_), y, x.value_ / r2, x, -y.value_ / r2);
  }
  friend Dual acos(const Dual& x) {
    return x.apply(std::acos(x.value_), -1.0 / std::sqrt(1.0 - x.value_ * x.value_));
  }
  friend bool isfinite(const Dual& x) { return std::isfinite(x.value_); }

 private:
  double value_ = 0.0;
  int size_ = 0;
  std::array<double, kMaxDirections> grad_;
};

/// Value part of a scalar, for code templated over double and Dual.
inline double value_of(double x) { return x; }
inline double value_of(const Dual& x) { return x.value(); }

}  // namespace beamilc

namespace Eigen {

template <>
struct NumTraits<beamilc::Dual> : NumTraits<double> {
  using Real = beamilc::Dual;
  using NonInteger = beamilc::Dual;
  using Nested = beamilc::Dual;
  using Literal = beamilc::Dual;
  enum {
    IsComplex = 0,
    IsInteger = 0,
    IsSigned = 1,
    RequireInitialization = 1,
    ReadCost = 1,
    AddCost = 8,
    MulCost = 8
  };
};

template <typename BinaryOp>
struct ScalarBinaryOpTraits<beamilc::Dual, double, BinaryOp> {
  using ReturnType = beamilc::Dual;
};
template <typename BinaryOp>
struct ScalarBinaryOpTraits<double, beamilc::Dual, BinaryOp> {
  using ReturnType = beamilc::Dual;
};

}  // namespace Eigen
