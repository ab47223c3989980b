#pragma once

#include <map>
#include <span>
#include <string>
#include <variant>

#include "dadam/matrix.hpp"

namespace dadam {

struct Unconstrained {};

struct Box {
  Vector lo;
  Vector hi;
};

struct L2Ball {
  Vector center;
  double radius = 1.0;
};

/// Centered at the origin.
struct L1Ball {
  double radius = 1.0;
};

/// Closed convex feasible set. Construct through the factories below so the
/// parameters are validated.
class ConstraintSet {
 public:
  using Variant = std::variant<Unconstrained, Box, L2Ball, L1Ball>;

  ConstraintSet() = default;
  static ConstraintSet unconstrained() { return ConstraintSet(Unconstrained{}); }
  static ConstraintSet box(Vector lo, Vector hi);
  static ConstraintSet box(std::size_t p, double lo, double hi);
  static ConstraintSet l2_ball(Vector center, double radius);
  static ConstraintSet l1_ball(double radius);

  const Variant& variant() const { return v_; }
  bool bounded() const { return !std::holds_alternative<Unconstrained>(v_); }
  std::string describe() const;

  /// Membership with slack `tol` on the defining inequality.
  bool contains(std::span<const double> x, double tol = 1e-10) const;

 private:
  explicit ConstraintSet(Variant v) : v_(std::move(v)) {}
  Variant v_ = Unconstrained{};
};

/// Diagonal metric A: the projection minimizes sum_d a_d (x_d - y_d)^2.
class Metric {
 public:
  static Metric identity() { return Metric(); }
  /// Every weight must be finite and strictly positive.
  static Metric diagonal(Vector weights);

  bool is_identity() const { return weights_.empty(); }
  double weight(std::size_t d) const { return weights_.empty() ? 1.0 : weights_[d]; }
  const Vector& weights() const { return weights_; }

 private:
  Metric() = default;
  Vector weights_;
};

/// argmin over y in the set of ||A^{1/2} (x - y)||.
Vector project(const ConstraintSet& set, const Metric& metric, std::span<const double> x);

/// sup over x, y in the set of ||x - y||_inf; +infinity when unbounded.
double diameter_inf(const ConstraintSet& set);

/// ||A^{1/2}(P a - P b)|| <= ||A^{1/2}(a - b)|| + 1e-10.
bool validate_nonexpansive(const ConstraintSet& set, const Metric& metric,
                           std::span<const double> a, std::span<const double> b);

/// Builds a set from config fields: `set` in {none, box, l2ball, l1ball} with
/// `radius`, `lo`, `hi`, `center` (scalars broadcast to dimension p).
ConstraintSet parse_constraint(const std::map<std::string, std::string>& fields, std::size_t p);

}  // namespace dadam
