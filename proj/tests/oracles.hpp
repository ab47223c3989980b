#pragma once
// Reference implementations shared by the unit tests and the acceptance binary.

#include <cmath>
#include <limits>
#include <numbers>
#include <span>
#include <variant>
#include <vector>

#include "dadam/projections.hpp"

namespace dadam::testing {

inline double wdist2(const Metric& a, std::span<const double> x, std::span<const double> y) {
  double s = 0.0;
  for (std::size_t d = 0; d < x.size(); ++d) s += a.weight(d) * (x[d] - y[d]) * (x[d] - y[d]);
  return s;
}

// Pattern search: evaluate a lattice around the incumbent and move to the best
// point; shrink once it stays near the centre. f returns +inf off the domain.
template <class F>
Vector pattern_search(const F& f, Vector best, double w) {
  const std::size_t p = best.size();
  const std::size_t k = p <= 2 ? 21 : (p == 3 ? 11 : 9);
  double best_val = f(best);
  std::vector<std::size_t> idx(p);
  Vector y(p);
  while (w > 1e-9) {
    const Vector centre = best;
    std::fill(idx.begin(), idx.end(), 0);
    for (;;) {
      for (std::size_t d = 0; d < p; ++d)
        y[d] = centre[d] - w + 2.0 * w * static_cast<double>(idx[d]) / static_cast<double>(k - 1);
      const double v = f(y);
      if (v < best_val) {
        best_val = v;
        best = y;
      }
      std::size_t d = 0;
      while (d < p && ++idx[d] == k) idx[d++] = 0;
      if (d == p) break;
    }
    double moved = 0.0;
    for (std::size_t d = 0; d < p; ++d) moved = std::max(moved, std::abs(best[d] - centre[d]));
    if (moved < 0.5 * w) w *= 0.6;
  }
  return best;
}

inline Vector sphere_point(const Vector& c, double r, std::span<const double> angles) {
  Vector y(c.size());
  double s = 1.0;
  for (std::size_t d = 0; d + 1 < c.size(); ++d) {
    y[d] = c[d] + r * s * std::cos(angles[d]);
    s *= std::sin(angles[d]);
  }
  y.back() = c.back() + r * s;
  return y;
}

// Brute-force projection independent of the closed forms under test. Points
// outside an l2 ball project onto its sphere, which is searched in angular
// coordinates so the search never stalls against a curved boundary.
inline Vector grid_oracle(const ConstraintSet& set, const Metric& a, const Vector& x, double half_width) {
  const std::size_t p = x.size();
  if (set.contains(x, 0.0)) return x;
  if (const auto* b = std::get_if<L2Ball>(&set.variant())) {
    if (p == 1) return {x[0] > b->center[0] ? b->center[0] + b->radius : b->center[0] - b->radius};
    const auto f = [&](const Vector& ang) { return wdist2(a, x, sphere_point(b->center, b->radius, ang)); };
    // coarse sweep first: a weighted distance can have two local minima on a sphere
    Vector best(p - 1, 0.0);
    double best_val = std::numeric_limits<double>::infinity();
    const std::size_t k = p == 2 ? 360 : (p == 3 ? 60 : 24);
    std::vector<std::size_t> idx(p - 1, 0);
    Vector ang(p - 1);
    for (;;) {
      for (std::size_t d = 0; d + 1 < p; ++d) ang[d] = 2.0 * std::numbers::pi * static_cast<double>(idx[d]) / static_cast<double>(k);
      const double v = f(ang);
      if (v < best_val) {
        best_val = v;
        best = ang;
      }
      std::size_t d = 0;
      while (d + 1 < p && ++idx[d] == k) idx[d++] = 0;
      if (d + 1 == p) break;
    }
    return sphere_point(b->center, b->radius, pattern_search(f, best, 2.0 * std::numbers::pi / static_cast<double>(k)));
  }
  Vector start(p, 0.0);
  if (const auto* b = std::get_if<Box>(&set.variant()))
    for (std::size_t d = 0; d < p; ++d) start[d] = 0.5 * (b->lo[d] + b->hi[d]);
  const auto f = [&](const Vector& y) {
    return set.contains(y, 0.0) ? wdist2(a, x, y) : std::numeric_limits<double>::infinity();
  };
  return pattern_search(f, start, half_width);
}

// Single-agent AMSGrad: m, v as usual, v_hat = max(v_hat, v), x -= a_t m / sqrt(v_hat).
struct AmsGrad {
  Vector x, m, v, v_hat;
  double alpha, beta1, beta2;
  AmsGrad(Vector x0, double a, double b1, double b2)
      : x(std::move(x0)), m(x.size()), v(x.size()), v_hat(x.size()), alpha(a), beta1(b1), beta2(b2) {}
  void step(std::span<const double> g, std::size_t t) {
    for (std::size_t d = 0; d < x.size(); ++d) {
      m[d] = beta1 * m[d] + (1.0 - beta1) * g[d];
      v[d] = beta2 * v[d] + (1.0 - beta2) * g[d] * g[d];
      v_hat[d] = std::max(v_hat[d], v[d]);
      x[d] -= alpha / std::sqrt(static_cast<double>(t)) * m[d] / std::sqrt(v_hat[d]);
    }
  }
};

}  // namespace dadam::testing
