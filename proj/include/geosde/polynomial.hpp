#pragma once

#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "geosde/core.hpp"

namespace geosde {

/// Multivariate polynomial on R^n with double coefficients, stored as a map
/// from exponent vectors to coefficients. Not built for speed; it exists so
/// that vector fields, cylinder functions and bracket tables can carry exact
/// first and second derivatives.
class Polynomial {
 public:
  using Exponents = std::vector<int>;

  Polynomial() : nvars_(0) {}
  explicit Polynomial(int nvars) : nvars_(nvars) {}

  static Polynomial constant(int nvars, double c) {
    Polynomial p(nvars);
    if (c != 0.0) p.terms_[Exponents(static_cast<std::size_t>(nvars), 0)] = c;
    return p;
  }

  static Polynomial variable(int nvars, int i) {
    Polynomial p(nvars);
    Exponents e(static_cast<std::size_t>(nvars), 0);
    e[static_cast<std::size_t>(i)] = 1;
    p.terms_[e] = 1.0;
    return p;
  }

  int nvars() const { return nvars_; }
  bool is_zero() const { return terms_.empty(); }

  Polynomial& add_term(const Exponents& e, double c) {
    if (static_cast<int>(e.size()) != nvars_) {
      throw std::invalid_argument("Polynomial::add_term: exponent size mismatch");
    }
    auto it = terms_.find(e);
    if (it == terms_.end()) {
      if (c != 0.0) terms_[e] = c;
    } else {
      it->second += c;
      if (it->second == 0.0) terms_.erase(it);
    }
    return *this;
  }

  Polynomial operator+(const Polynomial& other) const {
    check_same(other);
    Polynomial out = *this;
    for (const auto& [e, c] : other.terms_) out.add_term(e, c);
    return out;
  }

  Polynomial operator-(const Polynomial& other) const {
    check_same(other);
    Polynomial out = *this;
    for (const auto& [e, c] : other.terms_) out.add_term(e, -c);
    return out;
  }

  Polynomial operator*(const Polynomial& other) const {
    check_same(other);
    Polynomial out(nvars_);
    for (const auto& [ea, ca] : terms_) {
      for (const auto& [eb, cb] : other.terms_) {
        Exponents e(ea);
        for (std::size_t i = 0; i < e.size(); ++i) e[i] += eb[i];
        out.add_term(e, ca * cb);
      }
    }
    return out;
  }

  Polynomial operator*(double s) const {
    Polynomial out(nvars_);
    if (s == 0.0) return out;
    for (const auto& [e, c] : terms_) out.terms_[e] = c * s;
    return out;
  }

  Polynomial derivative(int i) const {
    Polynomial out(nvars_);
    for (const auto& [e, c] : terms_) {
      const int k = e[static_cast<std::size_t>(i)];
      if (k == 0) continue;
      Exponents d(e);
      d[static_cast<std::size_t>(i)] = k - 1;
      out.add_term(d, c * k);
    }
    return out;
  }

  double eval(const Vec& x) const {
    if (x.size() != nvars_) {
      throw std::invalid_argument("Polynomial::eval: dimension mismatch");
    }
    double sum = 0.0;
    for (const auto& [e, c] : terms_) {
      double term = c;
      for (int i = 0; i < nvars_; ++i) {
        const int k = e[static_cast<std::size_t>(i)];
        for (int j = 0; j < k; ++j) term *= x[i];
      }
      sum += term;
    }
    return sum;
  }

  Vec gradient_at(const Vec& x) const {
    Vec g(nvars_);
    for (int i = 0; i < nvars_; ++i) g[i] = derivative(i).eval(x);
    return g;
  }

  Mat hessian_at(const Vec& x) const {
    Mat h(nvars_, nvars_);
    for (int i = 0; i < nvars_; ++i) {
      const Polynomial di = derivative(i);
      for (int j = 0; j < nvars_; ++j) h(i, j) = di.derivative(j).eval(x);
    }
    return h;
  }

 private:
  void check_same(const Polynomial& other) const {
    if (nvars_ != other.nvars_) {
      throw std::invalid_argument("Polynomial: mixed variable counts");
    }
  }

  int nvars_;
  std::map<Exponents, double> terms_;
};

inline Polynomial operator*(double s, const Polynomial& p) { return p * s; }

/// E[p(x + sigma Z)] as a polynomial in x, for Z standard normal in one
/// variable. Odd moments vanish and E[Z^(2j)] = (2j-1)!!.
inline Polynomial gaussian_smooth(const Polynomial& p, double variance) {
  if (p.nvars() != 1) {
    throw std::invalid_argument("gaussian_smooth: univariate polynomials only");
  }
  // p(x + s) = sum_k p^(k)(x) s^k / k!; take expectations over s ~ N(0, variance).
  Polynomial out(1);
  Polynomial deriv = p;
  double moment_over_fact = 1.0;  // E[Z^k] sigma^k / k!
  for (int k = 0; !deriv.is_zero(); ++k) {
    if (k > 0) {
      deriv = deriv.derivative(0);
      if (k % 2 == 1) {
        moment_over_fact = 0.0;
      } else {
        // E[Z^k]/k! = 1/(2^(k/2) (k/2)!), times variance^(k/2).
        double v = 1.0;
        for (int j = 1; j <= k / 2; ++j) v *= variance / (2.0 * j);
        moment_over_fact = v;
      }
    }
    if (moment_over_fact != 0.0) out = out + deriv * moment_over_fact;
    if (k > 64) break;
  }
  return out;
}

/// Vector field on R^n whose components are polynomials. Jacobians and second
/// derivatives are exact, and Lie brackets stay inside the class.
struct PolyVectorField {
  std::vector<Polynomial> comps;

  PolyVectorField() = default;
  explicit PolyVectorField(std::vector<Polynomial> c) : comps(std::move(c)) {}

  static PolyVectorField constant(const Vec& v) {
    std::vector<Polynomial> c;
    c.reserve(static_cast<std::size_t>(v.size()));
    for (int i = 0; i < v.size(); ++i) {
      c.push_back(Polynomial::constant(static_cast<int>(v.size()), v[i]));
    }
    return PolyVectorField(std::move(c));
  }

  int dim() const { return static_cast<int>(comps.size()); }

  Vec eval(const Vec& x) const {
    Vec y(dim());
    for (int i = 0; i < dim(); ++i) y[i] = comps[static_cast<std::size_t>(i)].eval(x);
    return y;
  }

  Mat jacobian(const Vec& x) const {
    const int n = dim();
    Mat j(n, n);
    for (int i = 0; i < n; ++i) {
      for (int k = 0; k < n; ++k) {
        j(i, k) = comps[static_cast<std::size_t>(i)].derivative(k).eval(x);
      }
    }
    return j;
  }

  /// Directional derivative dy(v) at x.
  Vec jacobian_apply(const Vec& x, const Vec& v) const { return jacobian(x) * v; }

  /// Second derivative y''(x)(v, w), exact.
  Vec second_derivative(const Vec& x, const Vec& v, const Vec& w) const {
    Vec out(dim());
    for (int i = 0; i < dim(); ++i) {
      out[i] = v.dot(comps[static_cast<std::size_t>(i)].hessian_at(x) * w);
    }
    return out;
  }

  /// Lie bracket [this, other] = d(other)(this) - d(this)(other), symbolically.
  PolyVectorField bracket(const PolyVectorField& other) const {
    const int n = dim();
    if (other.dim() != n) {
      throw std::invalid_argument("PolyVectorField::bracket: dimension mismatch");
    }
    std::vector<Polynomial> out(static_cast<std::size_t>(n), Polynomial(n));
    for (int i = 0; i < n; ++i) {
      Polynomial acc(n);
      for (int k = 0; k < n; ++k) {
        acc = acc + other.comps[static_cast<std::size_t>(i)].derivative(k) *
                        comps[static_cast<std::size_t>(k)];
        acc = acc - comps[static_cast<std::size_t>(i)].derivative(k) *
                        other.comps[static_cast<std::size_t>(k)];
      }
      out[static_cast<std::size_t>(i)] = acc;
    }
    return PolyVectorField(std::move(out));
  }
};

}  // namespace geosde
