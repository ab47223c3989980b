#include "dadam/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>

#include "dadam/csv.hpp"
#include "dadam/kernels.hpp"

namespace dadam {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

double norm2(std::span<const double> x) { return std::sqrt(kernels::active().dot(x, x)); }

}  // namespace

RunRecord::RunRecord(std::size_t n, std::size_t p, HyperParams hyper, double sigma2)
    : n_(n), p_(p), hyper_(std::move(hyper)), sigma2_(sigma2), vhat_max_(0, p), sqrt_vhat_min_(kInf) {}

void RunRecord::append(const Matrix& x, const Matrix& grads, double alpha, std::span<const double> losses,
                       const OptimizerNetwork& net) {
  if (x.rows() != n_ || x.cols() != p_ || grads.rows() != n_ || grads.cols() != p_ || losses.size() != n_)
    throw std::invalid_argument("RunRecord::append: shape mismatch");
  iterates_.push_back(x);
  grads_.push_back(grads);
  if (hyper_.corrected) uncorrected_.push_back(net.uncorrected_output());
  alphas_.push_back(alpha);
  losses_.emplace_back(losses.begin(), losses.end());
  for (double g : grads.flat()) grad_inf_ = std::max(grad_inf_, std::abs(g));

  Matrix grown(vhat_max_.rows() + 1, p_);
  std::copy(vhat_max_.flat().begin(), vhat_max_.flat().end(), grown.flat().begin());
  auto row = grown.row(vhat_max_.rows());
  for (std::size_t i = 0; i < n_; ++i) {
    const Vector& vh = net.agent(i).v_hat;
    for (std::size_t d = 0; d < p_; ++d) {
      row[d] = std::max(row[d], vh[d]);
      const double s = std::sqrt(vh[d]);
      sqrt_vhat_min_ = std::min(sqrt_vhat_min_, s);
      sqrt_vhat_max_ = std::max(sqrt_vhat_max_, s);
    }
  }
  vhat_max_ = std::move(grown);
}

PathLength path_length(const std::vector<Vector>& minimizers) {
  PathLength out;
  if (minimizers.empty()) return out;
  out.per_coordinate.assign(minimizers.front().size(), 0.0);
  for (std::size_t t = 1; t < minimizers.size(); ++t)
    for (std::size_t d = 0; d < out.per_coordinate.size(); ++d)
      out.per_coordinate[d] += std::abs(minimizers[t][d] - minimizers[t - 1][d]);
  for (double e : out.per_coordinate) out.total += e;
  return out;
}

std::vector<double> dynamic_regret(const RunRecord& run, const std::vector<Vector>& minimizers,
                                   const LossOracle& oracle) {
  if (minimizers.size() != run.rounds())
    throw std::invalid_argument("dynamic_regret: " + std::to_string(minimizers.size()) + " minimizers for " +
                                std::to_string(run.rounds()) + " rounds");
  std::vector<double> out(run.rounds());
  double acc = 0.0;
  const double n = static_cast<double>(run.agents());
  for (std::size_t t = 1; t <= run.rounds(); ++t) {
    double local = 0.0;
    for (std::size_t i = 0; i < run.agents(); ++i) local += run.loss(t, i);
    acc += local / n - oracle.network_value(minimizers[t - 1], t);
    out[t - 1] = acc;
  }
  return out;
}

Vector projected_gradient(std::span<const double> x, std::span<const double> m, std::span<const double> v_hat,
                          std::span<const double> mixed, double alpha, const ConstraintSet& set, double eps) {
  if (!(alpha > 0.0)) throw std::invalid_argument("projected_gradient: alpha must be positive");
  const std::size_t p = x.size();
  Vector denom(p);
  kernels::active().sqrt_plus(denom, v_hat, eps);
  for (std::size_t d = 0; d < p; ++d)
    if (!(denom[d] > 0.0))
      throw NumericalError("projected_gradient: zero second moment at coordinate " + std::to_string(d) +
                           " with epsilon = 0");
  Vector target(p);
  kernels::active().adaptive_step(target, mixed, m, v_hat, alpha, eps);
  const Vector plus = project(set, Metric::identity(), target);
  Vector g(p);
  for (std::size_t d = 0; d < p; ++d) g[d] = denom[d] / alpha * (x[d] - plus[d]);
  return g;
}

LocalRegret local_regret(const RunRecord& run, const LossOracle& oracle, const MixingMatrix& w,
                         const ConstraintSet& set) {
  const std::size_t n = run.agents(), p = run.dim(), T = run.rounds();
  const HyperParams& hyper = run.hyper();
  LocalRegret out;
  out.per_agent = Matrix(T, n);
  out.network.resize(T);
  std::vector<AgentState> shadow(n, AgentState(p));
  std::vector<double> best(n, kInf);
  const bool plain = hyper.adaptivity == Adaptivity::none;
  const Vector ones(p, 1.0);
  for (std::size_t t = 1; t <= T; ++t) {
    const Matrix& x = run.iterates(t);
    const Matrix mixed = consensus_apply(w, x);
    double avg = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const Vector g = oracle.aggregate_grad(x.row(i), i, t);
      local_moments_update(shadow[i], g, t, hyper, i);
      const Vector G = plain ? projected_gradient(x.row(i), shadow[i].m, ones, mixed.row(i), run.alpha(t), set, 0.0)
                             : projected_gradient(x.row(i), shadow[i].m, shadow[i].v_hat, mixed.row(i),
                                                  run.alpha(t), set, hyper.epsilon);
      best[i] = std::min(best[i], kernels::active().dot(G, G));
      out.per_agent(t - 1, i) = best[i];
      avg += best[i];
    }
    out.network[t - 1] = avg / static_cast<double>(n);
  }
  return out;
}

std::vector<double> network_error_bound(const HyperParams& hyper, double sigma2, std::span<const double> alphas,
                                        std::size_t n) {
  const double eta = hyper.eta();
  if (hyper.adaptivity != Adaptivity::relaxed_max || !(eta < 1.0) || hyper.beta2 >= 1.0 || hyper.beta3 >= 1.0)
    return {};
  const double c = 2.0 * std::sqrt(static_cast<double>(n)) / ((1.0 - eta) * std::sqrt((1.0 - hyper.beta2) * (1.0 - hyper.beta3)));
  std::vector<double> out(alphas.size());
  // S_t = sum_{s=0}^{t-1} alpha_s sigma^{t-s-1} = sigma S_{t-1} + alpha_{t-1}, alpha_0 := alpha_1.
  double s = 0.0;
  for (std::size_t t = 1; t <= alphas.size(); ++t) {
    const double a = t == 1 ? alphas[0] : alphas[t - 2];
    s = sigma2 * s + a;
    out[t - 1] = c * s;
  }
  return out;
}

ConsensusSeries consensus_error(const RunRecord& run, double scale) {
  const std::size_t n = run.agents(), p = run.dim(), T = run.rounds();
  ConsensusSeries out;
  out.mean.resize(T);
  out.max.resize(T);
  out.bound = network_error_bound(run.hyper(), run.sigma2(), run.alphas(), n);
  for (double& b : out.bound) b *= scale;
  out.evaluable = !out.bound.empty() || T == 0;
  Vector mean(p), diff(p);
  for (std::size_t t = 1; t <= T; ++t) {
    const Matrix& x = run.iterates(t);
    std::fill(mean.begin(), mean.end(), 0.0);
    for (std::size_t i = 0; i < n; ++i) kernels::active().axpy(mean, 1.0 / static_cast<double>(n), x.row(i));
    double sum = 0.0, mx = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t d = 0; d < p; ++d) diff[d] = x(i, d) - mean[d];
      const double e = norm2(diff);
      sum += e;
      mx = std::max(mx, e);
    }
    out.mean[t - 1] = sum / static_cast<double>(n);
    out.max[t - 1] = mx;
    if (out.evaluable && !(out.mean[t - 1] <= out.bound[t - 1] + 1e-9) && out.holds) {
      out.holds = false;
      out.first_violation = t;
    }
  }
  if (!out.evaluable) out.holds = false;
  return out;
}

bool BoundReport::exact() const {
  return std::none_of(estimated.begin(), estimated.end(), [](const auto& kv) { return kv.second; });
}

void BoundReport::finalize() {
  slack = bound - measured;
  holds = evaluable && measured <= bound + 1e-9;
}

std::string BoundReport::to_text() const {
  std::ostringstream os;
  os << "bound=" << name << '\n';
  os << "evaluable=" << (evaluable ? "true" : "false") << '\n';
  if (!reason.empty()) os << "reason=" << reason << '\n';
  os << "measured=" << csv::format(measured) << '\n';
  os << "rhs=" << csv::format(bound) << '\n';
  os << "slack=" << csv::format(slack) << '\n';
  os << "holds=" << (holds ? "true" : "false") << '\n';
  os << "constants_exact=" << (exact() ? "true" : "false") << '\n';
  for (const auto& [k, v] : constants) {
    os << "const." << k << '=' << csv::format(v);
    if (auto it = estimated.find(k); it != estimated.end()) os << (it->second ? " estimated" : " exact");
    os << '\n';
  }
  for (const auto& note : notes) os << "note=" << note << '\n';
  return os.str();
}

std::string theorem1_unmet(const HyperParams& h, const ConstraintSet& set) {
  if (h.mode != Mode::convex) return "requires convex mode";
  if (h.schedule != Schedule::inv_sqrt_t) return "requires the alpha/sqrt(t) schedule";
  if (h.adaptivity != Adaptivity::relaxed_max) return "requires the relaxed-max second moment";
  if (!(h.lambda < 1.0)) return "requires lambda < 1";
  if (!(h.eta() < 1.0)) return "requires eta = beta1/sqrt(beta2) < 1";
  if (!set.bounded()) return "requires a bounded constraint set";
  return {};
}

std::string corollary3_unmet(const HyperParams& h) {
  if (h.mode != Mode::nonconvex) return "requires nonconvex mode";
  if (h.schedule != Schedule::constant) return "requires a constant step";
  if (h.adaptivity != Adaptivity::relaxed_max) return "requires the relaxed-max second moment";
  if (!(h.lambda < 1.0)) return "requires lambda < 1";
  if (!(h.eta() < 1.0)) return "requires eta = beta1/sqrt(beta2) < 1";
  return {};
}

std::vector<Theorem1Terms> theorem1_series(const RunRecord& run, const std::vector<Vector>& minimizers,
                                           const ConstraintSet& set) {
  const std::size_t n = run.agents(), p = run.dim(), T = run.rounds();
  if (minimizers.size() != T) throw std::invalid_argument("theorem1_series: minimizer count mismatch");
  const HyperParams& h = run.hyper();
  const double a = h.alpha;
  const double b1 = h.beta1;
  const double root23 = std::sqrt((1.0 - h.beta2) * (1.0 - h.beta3));
  const double gamma = diameter_inf(set);
  const double sqrt_n = std::sqrt(static_cast<double>(n));
  Vector colsq(p, 0.0), path(p, 0.0);
  double ginf = 0.0;
  std::vector<Theorem1Terms> out(T);
  for (std::size_t t = 1; t <= T; ++t) {
    const Matrix& g = run.gradients(t);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t d = 0; d < p; ++d) {
        colsq[d] += g(i, d) * g(i, d);
        ginf = std::max(ginf, std::abs(g(i, d)));
      }
    if (t > 1)
      for (std::size_t d = 0; d < p; ++d) path[d] += std::abs(minimizers[t - 1][d] - minimizers[t - 2][d]);
    double colnorms = 0.0;
    for (double s : colsq) colnorms += std::sqrt(s);
    const double tt = static_cast<double>(t);
    const double logt = std::sqrt(1.0 + std::log(tt));
    Theorem1Terms& r = out[t - 1];
    r.t1 = a * logt / (2.0 * sqrt_n * root23) * colnorms;
    r.t2 = static_cast<double>(p) * ginf * gamma * (1.0 + gamma / (2.0 * a)) /
           ((1.0 - b1) * (1.0 - b1) * (1.0 - h.lambda) * (1.0 - h.lambda));
    const auto vh = run.vhat_max(t);
    double s3 = 0.0;
    for (std::size_t d = 0; d < p; ++d) s3 += gamma * (gamma + path[d]) * std::sqrt(tt * vh[d]);
    r.t3 = s3 / (sqrt_n * (1.0 - b1) * a);
    r.t4 = 4.0 * a * logt * colnorms /
           ((1.0 - run.sigma2()) * std::sqrt(1.0 - b1) * std::sqrt(1.0 - h.eta()) * root23);
  }
  return out;
}

BoundReport theorem1_bound(const RunRecord& run, const std::vector<Vector>& minimizers, const ConstraintSet& set,
                           const LossOracle& oracle, double scale) {
  BoundReport r;
  r.name = "theorem1";
  r.reason = theorem1_unmet(run.hyper(), set);
  r.evaluable = r.reason.empty() && run.rounds() > 0;
  const std::vector<double> reg = dynamic_regret(run, minimizers, oracle);
  r.measured = reg.empty() ? 0.0 : reg.back();
  const PathLength pl = path_length(minimizers);
  r.constants["G_inf"] = run.grad_inf();
  r.constants["gamma_inf"] = diameter_inf(set);
  r.constants["sigma2"] = run.sigma2();
  r.constants["eta"] = run.hyper().eta();
  r.constants["path_length"] = pl.total;
  r.constants["T"] = static_cast<double>(run.rounds());
  r.constants["n"] = static_cast<double>(run.agents());
  r.constants["scale"] = scale;
  r.estimated["G_inf"] = false;
  r.estimated["gamma_inf"] = false;
  r.estimated["sigma2"] = false;
  if (oracle.spec().kind != LossKind::quadratic_tracking) {
    r.estimated["minimizers"] = true;
    r.notes.push_back("minimizers from an iterative solver");
  }
  if (r.evaluable) {
    const Theorem1Terms terms = theorem1_series(run, minimizers, set).back();
    r.constants["term1"] = terms.t1;
    r.constants["term2"] = terms.t2;
    r.constants["term3"] = terms.t3;
    r.constants["term4"] = terms.t4;
    r.bound = scale * terms.total();
  } else {
    r.bound = kInf;
  }
  r.finalize();
  return r;
}

double corollary3_rhs(const HyperParams& h, std::size_t n, double sigma2, double upsilon_max, double lipschitz,
                      std::size_t horizon) {
  const double b1 = h.beta1;
  const double eta = h.eta();
  const double T = static_cast<double>(horizon);
  const double first = 2.0 * upsilon_max * upsilon_max /
                       ((2.0 - b1) * (1.0 - b1) * (1.0 - eta) * (1.0 - eta) * (1.0 - h.beta2) * (1.0 - h.lambda));
  const double second = 16.0 * std::sqrt(static_cast<double>(n)) * upsilon_max * lipschitz /
                        ((2.0 - b1) * (1.0 - eta) * std::sqrt((1.0 - h.beta2) * (1.0 - h.beta3)) * (1.0 - sigma2));
  return first / T + second * (2.0 + std::log(T)) / T;
}

double corollary3_step(double beta1, double upsilon_min, double upsilon_max, double rho) {
  return (2.0 - beta1) * upsilon_min * upsilon_min / (2.0 * rho * upsilon_max);
}

BoundReport corollary3_bound(const RunRecord& run, const LocalRegret& regret, const LossOracle& oracle,
                             const ConstraintSet& set, double scale) {
  BoundReport r;
  r.name = "corollary3";
  const HyperParams& h = run.hyper();
  r.reason = corollary3_unmet(h);
  r.measured = regret.network.empty() ? 0.0 : regret.network.back();
  const Constant rho = oracle.smoothness();
  const Constant lip = oracle.lipschitz(set);
  const double lo = run.sqrt_vhat_min(), hi = run.sqrt_vhat_max();
  r.constants["rho"] = rho.value;
  r.constants["L"] = lip.value;
  r.constants["upsilon_min"] = lo;
  r.constants["upsilon_max"] = hi;
  r.constants["sigma2"] = run.sigma2();
  r.constants["eta"] = h.eta();
  r.constants["alpha"] = h.alpha;
  r.constants["T"] = static_cast<double>(run.rounds());
  r.constants["scale"] = scale;
  r.estimated["rho"] = rho.estimated;
  r.estimated["L"] = lip.estimated;
  r.estimated["upsilon_min"] = false;
  r.estimated["upsilon_max"] = false;
  r.notes.push_back("moments in the projected gradient are driven by the aggregate-loss gradients");
  if (r.reason.empty() && run.rounds() == 0) r.reason = "empty run";
  if (r.reason.empty() && !(lo > 0.0)) r.reason = "observed sqrt(v_hat) has a zero entry";
  if (r.reason.empty()) {
    // The step must not exceed (2 - beta1) upsilon_min^2 / (rho upsilon_max) for the observed extrema.
    const double limit = 2.0 * corollary3_step(h.beta1, lo, hi, rho.value);
    r.constants["alpha_limit"] = limit;
    if (h.alpha > limit) r.reason = "step exceeds (2-beta1) upsilon_min^2 / (rho upsilon_max)";
  }
  r.evaluable = r.reason.empty();
  r.bound = r.evaluable ? scale * corollary3_rhs(h, run.agents(), run.sigma2(), hi, lip.value, run.rounds()) : kInf;
  r.finalize();
  return r;
}

BoundReport consensus_report(const RunRecord& run, const ConsensusSeries& series) {
  BoundReport r;
  r.name = "network_error";
  r.evaluable = series.evaluable;
  if (!r.evaluable) r.reason = "requires the relaxed-max second moment with eta < 1 and beta2, beta3 < 1";
  // Report the tightest round: the largest ratio of measured error to bound.
  double worst = -kInf;
  for (std::size_t t = 0; t < series.mean.size() && r.evaluable; ++t) {
    const double ratio = series.mean[t] / series.bound[t];
    if (ratio > worst) {
      worst = ratio;
      r.measured = series.mean[t];
      r.bound = series.bound[t];
      r.constants["tightest_round"] = static_cast<double>(t + 1);
    }
  }
  r.constants["sigma2"] = run.sigma2();
  r.constants["eta"] = run.hyper().eta();
  r.constants["T"] = static_cast<double>(run.rounds());
  r.estimated["sigma2"] = false;
  if (series.first_violation) r.constants["first_violation"] = static_cast<double>(series.first_violation);
  r.finalize();
  if (r.evaluable) r.holds = series.holds;
  return r;
}

}  // namespace dadam
