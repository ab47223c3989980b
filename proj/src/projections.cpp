#include "dadam/projections.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>

#include "dadam/csv.hpp"

namespace dadam {

ConstraintSet ConstraintSet::box(Vector lo, Vector hi) {
  if (lo.size() != hi.size()) throw std::invalid_argument("box: lo/hi dimension mismatch");
  for (std::size_t d = 0; d < lo.size(); ++d)
    if (!(lo[d] <= hi[d]) || !std::isfinite(lo[d]) || !std::isfinite(hi[d]))
      throw std::invalid_argument("box: need finite lo <= hi at coordinate " + std::to_string(d));
  return ConstraintSet(Box{std::move(lo), std::move(hi)});
}

ConstraintSet ConstraintSet::box(std::size_t p, double lo, double hi) {
  return box(Vector(p, lo), Vector(p, hi));
}

ConstraintSet ConstraintSet::l2_ball(Vector center, double radius) {
  if (!(radius > 0.0) || !std::isfinite(radius))
    throw std::invalid_argument("l2ball: radius must be positive");
  return ConstraintSet(L2Ball{std::move(center), radius});
}

ConstraintSet ConstraintSet::l1_ball(double radius) {
  if (!(radius > 0.0) || !std::isfinite(radius))
    throw std::invalid_argument("l1ball: radius must be positive");
  return ConstraintSet(L1Ball{radius});
}

std::string ConstraintSet::describe() const {
  std::ostringstream os;
  std::visit(
      [&](const auto& s) {
        using S = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<S, Unconstrained>) os << "none";
        else if constexpr (std::is_same_v<S, Box>) os << "box";
        else if constexpr (std::is_same_v<S, L2Ball>) os << "l2ball radius=" << csv::format(s.radius);
        else os << "l1ball radius=" << csv::format(s.radius);
      },
      v_);
  return os.str();
}

bool ConstraintSet::contains(std::span<const double> x, double tol) const {
  return std::visit(
      [&](const auto& s) -> bool {
        using S = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<S, Unconstrained>) {
          return true;
        } else if constexpr (std::is_same_v<S, Box>) {
          for (std::size_t d = 0; d < x.size(); ++d)
            if (x[d] < s.lo[d] - tol || x[d] > s.hi[d] + tol) return false;
          return true;
        } else if constexpr (std::is_same_v<S, L2Ball>) {
          double r2 = 0.0;
          for (std::size_t d = 0; d < x.size(); ++d) r2 += (x[d] - s.center[d]) * (x[d] - s.center[d]);
          return std::sqrt(r2) <= s.radius + tol;
        } else {
          double l1 = 0.0;
          for (double e : x) l1 += std::abs(e);
          return l1 <= s.radius + tol;
        }
      },
      v_);
}

Metric Metric::diagonal(Vector weights) {
  for (std::size_t d = 0; d < weights.size(); ++d)
    if (!(weights[d] > 0.0) || !std::isfinite(weights[d]))
      throw std::invalid_argument("metric weight " + std::to_string(d) + " must be finite and positive, got " +
                                  csv::format(weights[d]));
  Metric m;
  m.weights_ = std::move(weights);
  return m;
}

namespace {

void check_input(const Metric& metric, std::span<const double> x) {
  if (!metric.is_identity() && metric.weights().size() != x.size())
    throw std::invalid_argument("project: metric has " + std::to_string(metric.weights().size()) +
                                " weights for a vector of size " + std::to_string(x.size()));
  for (std::size_t d = 0; d < x.size(); ++d)
    if (!std::isfinite(x[d]))
      throw std::invalid_argument("project: non-finite input at coordinate " + std::to_string(d));
}

// Dual threshold: y_d = sign(x_d) max(|x_d| - lambda / (2 a_d), 0) with sum |y_d| = r.
Vector project_l1(double r, const Metric& metric, std::span<const double> x) {
  double l1 = 0.0;
  for (double e : x) l1 += std::abs(e);
  if (l1 <= r) return Vector(x.begin(), x.end());

  auto mass = [&](double lambda) {
    double s = 0.0;
    for (std::size_t d = 0; d < x.size(); ++d)
      s += std::max(std::abs(x[d]) - lambda / (2.0 * metric.weight(d)), 0.0);
    return s;
  };
  double lo = 0.0;
  double hi = 0.0;
  for (std::size_t d = 0; d < x.size(); ++d) hi = std::max(hi, 2.0 * metric.weight(d) * std::abs(x[d]));
  for (int it = 0; it < 400 && hi - lo > 1e-12 * hi; ++it) {
    const double mid = 0.5 * (lo + hi);
    (mass(mid) > r ? lo : hi) = mid;
  }
  // With the active set identified the threshold has a closed form.
  double lambda = 0.5 * (lo + hi);
  double num = -r, den = 0.0;
  for (std::size_t d = 0; d < x.size(); ++d)
    if (2.0 * metric.weight(d) * std::abs(x[d]) > lambda) {
      num += std::abs(x[d]);
      den += 1.0 / (2.0 * metric.weight(d));
    }
  if (den > 0.0) {
    const double exact = num / den;
    if (exact >= lo * (1 - 1e-9) && exact <= hi * (1 + 1e-9)) lambda = exact;
  }
  Vector y(x.size());
  for (std::size_t d = 0; d < x.size(); ++d) {
    const double mag = std::max(std::abs(x[d]) - lambda / (2.0 * metric.weight(d)), 0.0);
    y[d] = std::copysign(mag, x[d]);
  }
  // Guard the last ulp so membership holds exactly.
  double s = 0.0;
  for (double e : y) s += std::abs(e);
  if (s > r) {
    const double shrink = r / s;
    for (double& e : y) e *= shrink;
  }
  return y;
}

// KKT: y = c + a u / (a + mu), mu >= 0 chosen so ||y - c|| = r.
Vector project_l2(const L2Ball& ball, const Metric& metric, std::span<const double> x) {
  const std::size_t p = x.size();
  if (ball.center.size() != p) throw std::invalid_argument("project: l2ball center dimension mismatch");
  Vector u(p);
  double norm_u = 0.0;
  for (std::size_t d = 0; d < p; ++d) {
    u[d] = x[d] - ball.center[d];
    norm_u += u[d] * u[d];
  }
  norm_u = std::sqrt(norm_u);
  const double r = ball.radius;
  if (norm_u <= r) return Vector(x.begin(), x.end());
  Vector y(p);
  if (metric.is_identity()) {
    for (std::size_t d = 0; d < p; ++d) y[d] = ball.center[d] + u[d] * (r / norm_u);
    return y;
  }
  auto radius_at = [&](double mu) {
    double s = 0.0;
    for (std::size_t d = 0; d < p; ++d) {
      const double a = metric.weight(d);
      const double e = a * u[d] / (a + mu);
      s += e * e;
    }
    return std::sqrt(s);
  };
  double amax = 0.0;
  for (std::size_t d = 0; d < p; ++d) amax = std::max(amax, metric.weight(d));
  double lo = 0.0;
  double hi = amax * norm_u / r;
  for (int it = 0; it < 400 && hi - lo > 1e-15 * hi; ++it) {
    const double mid = 0.5 * (lo + hi);
    (radius_at(mid) > r ? lo : hi) = mid;
  }
  for (std::size_t d = 0; d < p; ++d) {
    const double a = metric.weight(d);
    y[d] = ball.center[d] + a * u[d] / (a + hi);
  }
  return y;
}

}  // namespace

Vector project(const ConstraintSet& set, const Metric& metric, std::span<const double> x) {
  check_input(metric, x);
  return std::visit(
      [&](const auto& s) -> Vector {
        using S = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<S, Unconstrained>) {
          return Vector(x.begin(), x.end());
        } else if constexpr (std::is_same_v<S, Box>) {
          if (s.lo.size() != x.size()) throw std::invalid_argument("project: box dimension mismatch");
          Vector y(x.size());
          for (std::size_t d = 0; d < x.size(); ++d) y[d] = std::clamp(x[d], s.lo[d], s.hi[d]);
          return y;
        } else if constexpr (std::is_same_v<S, L2Ball>) {
          return project_l2(s, metric, x);
        } else {
          return project_l1(s.radius, metric, x);
        }
      },
      set.variant());
}

double diameter_inf(const ConstraintSet& set) {
  return std::visit(
      [](const auto& s) -> double {
        using S = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<S, Unconstrained>) {
          return std::numeric_limits<double>::infinity();
        } else if constexpr (std::is_same_v<S, Box>) {
          double w = 0.0;
          for (std::size_t d = 0; d < s.lo.size(); ++d) w = std::max(w, s.hi[d] - s.lo[d]);
          return w;
        } else {
          return 2.0 * s.radius;
        }
      },
      set.variant());
}

bool validate_nonexpansive(const ConstraintSet& set, const Metric& metric,
                           std::span<const double> a, std::span<const double> b) {
  const Vector pa = project(set, metric, a);
  const Vector pb = project(set, metric, b);
  double lhs = 0.0, rhs = 0.0;
  for (std::size_t d = 0; d < a.size(); ++d) {
    const double w = metric.weight(d);
    lhs += w * (pa[d] - pb[d]) * (pa[d] - pb[d]);
    rhs += w * (a[d] - b[d]) * (a[d] - b[d]);
  }
  return std::sqrt(lhs) <= std::sqrt(rhs) + 1e-10;
}

namespace {

Vector broadcast(const std::string& text, std::size_t p, const std::string& field) {
  Vector out;
  std::istringstream ss(text);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    try {
      out.push_back(csv::parse_double(tok));
    } catch (const std::exception& e) {
      throw std::invalid_argument(field + ": " + e.what());
    }
  }
  if (out.size() == 1) return Vector(p, out[0]);
  if (out.size() != p)
    throw std::invalid_argument(field + ": expected 1 or " + std::to_string(p) + " values");
  return out;
}

}  // namespace

ConstraintSet parse_constraint(const std::map<std::string, std::string>& fields, std::size_t p) {
  auto get = [&](const std::string& key) -> const std::string& {
    auto it = fields.find(key);
    if (it == fields.end()) throw std::invalid_argument(key + ": required for this set");
    return it->second;
  };
  auto it = fields.find("set");
  const std::string kind = it == fields.end() ? "none" : it->second;
  if (kind == "none" || kind == "unconstrained") return ConstraintSet::unconstrained();
  if (kind == "box") return ConstraintSet::box(broadcast(get("lo"), p, "lo"), broadcast(get("hi"), p, "hi"));
  if (kind == "l1ball") return ConstraintSet::l1_ball(csv::parse_double(get("radius")));
  if (kind == "l2ball") {
    Vector center = fields.count("center") ? broadcast(fields.at("center"), p, "center") : Vector(p, 0.0);
    return ConstraintSet::l2_ball(std::move(center), csv::parse_double(get("radius")));
  }
  throw std::invalid_argument("set: unknown constraint set '" + kind + "'");
}

}  // namespace dadam
