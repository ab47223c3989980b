#pragma once

#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dadam/matrix.hpp"
#include "dadam/optimizer.hpp"
#include "dadam/problems.hpp"
#include "dadam/projections.hpp"

namespace dadam {

/// Append-only history of a run. Round t (1-based) stores the iterates X_t at
/// which the gradients g_{i,t} were evaluated, the step alpha_t and the local
/// losses f_{i,t}(x_{i,t}).
class RunRecord {
 public:
  RunRecord(std::size_t n, std::size_t p, HyperParams hyper, double sigma2);

  std::size_t agents() const { return n_; }
  std::size_t dim() const { return p_; }
  std::size_t rounds() const { return iterates_.size(); }
  const HyperParams& hyper() const { return hyper_; }
  double sigma2() const { return sigma2_; }

  /// Record round t = rounds() + 1. `net` must already have taken the step, so
  /// its moments are m_t, v_hat_t.
  void append(const Matrix& x, const Matrix& grads, double alpha, std::span<const double> losses,
              const OptimizerNetwork& net);

  const Matrix& iterates(std::size_t t) const { return iterates_.at(t - 1); }
  const Matrix& gradients(std::size_t t) const { return grads_.at(t - 1); }
  /// Algorithm output before the cumulative correction (corrected runs only).
  const Matrix& uncorrected(std::size_t t) const { return uncorrected_.at(t - 1); }
  double alpha(std::size_t t) const { return alphas_.at(t - 1); }
  const std::vector<double>& alphas() const { return alphas_; }
  double loss(std::size_t t, std::size_t i) const { return losses_.at(t - 1).at(i); }
  /// max_i v_hat_{i,t,d}.
  std::span<const double> vhat_max(std::size_t t) const { return vhat_max_.row(t - 1); }
  /// Extrema of sqrt(v_hat) over all agents, rounds and coordinates so far.
  double sqrt_vhat_min() const { return sqrt_vhat_min_; }
  double sqrt_vhat_max() const { return sqrt_vhat_max_; }
  /// max over rounds and agents of ||g_{i,t}||_inf.
  double grad_inf() const { return grad_inf_; }

 private:
  std::size_t n_, p_;
  HyperParams hyper_;
  double sigma2_;
  std::vector<Matrix> iterates_;
  std::vector<Matrix> grads_;
  std::vector<Matrix> uncorrected_;
  std::vector<double> alphas_;
  std::vector<Vector> losses_;
  Matrix vhat_max_;
  double sqrt_vhat_min_;
  double sqrt_vhat_max_ = 0.0;
  double grad_inf_ = 0.0;
};

struct PathLength {
  Vector per_coordinate;
  double total = 0.0;
};

/// D_{T,d} = sum_{t<T} |x*_{t+1,d} - x*_{t,d}|.
PathLength path_length(const std::vector<Vector>& minimizers);

/// Cumulative Reg^C_t for t = 1..T: (1/n) sum_i sum_s f_{i,s}(x_{i,s}) - sum_s f_s(x*_s).
std::vector<double> dynamic_regret(const RunRecord& run, const std::vector<Vector>& minimizers,
                                   const LossOracle& oracle);

/// G = (sqrt(v_hat)+eps)/alpha * (x - x+), x+ = P_X[mixed - alpha m / (sqrt(v_hat)+eps)].
Vector projected_gradient(std::span<const double> x, std::span<const double> m,
                          std::span<const double> v_hat, std::span<const double> mixed, double alpha,
                          const ConstraintSet& set, double eps);

struct LocalRegret {
  /// Running minimum of ||G||^2 per agent (rows: rounds, cols: agents).
  Matrix per_agent;
  /// Reg^N_t, the agent average of the running minima.
  std::vector<double> network;
};

/// Drives a fresh set of moments with the aggregate gradients grad fbar_{i,t}(x_{i,t})
/// and evaluates the projected gradient against the mixed iterates of each round.
LocalRegret local_regret(const RunRecord& run, const LossOracle& oracle, const MixingMatrix& w,
                         const ConstraintSet& set);

/// B_t for t = 1..T from the recorded steps; alpha_0 is taken equal to alpha_1.
/// Empty when beta2 or beta3 equals 1 or eta >= 1.
std::vector<double> network_error_bound(const HyperParams& hyper, double sigma2, std::span<const double> alphas,
                                        std::size_t n);

struct ConsensusSeries {
  /// (1/n) sum_i ||x_{i,t} - xbar_t||.
  std::vector<double> mean;
  /// max_i ||x_{i,t} - xbar_t||.
  std::vector<double> max;
  std::vector<double> bound;
  bool evaluable = true;
  bool holds = true;
  /// First round where the bound fails, 0 if none.
  std::size_t first_violation = 0;
};

/// `scale` multiplies B_t, as for the other reports.
ConsensusSeries consensus_error(const RunRecord& run, double scale = 1.0);

struct BoundReport {
  std::string name;
  double measured = 0.0;
  double bound = 0.0;
  double slack = 0.0;
  bool holds = false;
  /// False when a hypothesis is unmet; `reason` then says which.
  bool evaluable = true;
  std::string reason;
  std::map<std::string, double> constants;
  /// Constants that are estimates rather than exactly known.
  std::map<std::string, bool> estimated;
  std::vector<std::string> notes;

  bool exact() const;
  /// key=value lines.
  std::string to_text() const;
  void finalize();
};

struct Theorem1Terms {
  double t1 = 0, t2 = 0, t3 = 0, t4 = 0;
  double total() const { return t1 + t2 + t3 + t4; }
};

/// RHS of the convex dynamic-regret bound at every horizon t = 1..T.
std::vector<Theorem1Terms> theorem1_series(const RunRecord& run, const std::vector<Vector>& minimizers,
                                           const ConstraintSet& set);

/// Empty string when the run satisfies the hypotheses of the convex bound,
/// otherwise the first unmet one.
std::string theorem1_unmet(const HyperParams& hyper, const ConstraintSet& set);
std::string corollary3_unmet(const HyperParams& hyper);

/// `scale` multiplies the bound (1 in normal use; tiny values exercise the
/// violation path).
BoundReport theorem1_bound(const RunRecord& run, const std::vector<Vector>& minimizers,
                           const ConstraintSet& set, const LossOracle& oracle, double scale = 1.0);

/// RHS of the nonconvex local-regret bound at horizon T.
double corollary3_rhs(const HyperParams& hyper, std::size_t n, double sigma2, double upsilon_max,
                      double lipschitz, std::size_t horizon);

/// The constant step the nonconvex bound prescribes.
double corollary3_step(double beta1, double upsilon_min, double upsilon_max, double rho);

BoundReport corollary3_bound(const RunRecord& run, const LocalRegret& regret, const LossOracle& oracle,
                             const ConstraintSet& set, double scale = 1.0);

BoundReport consensus_report(const RunRecord& run, const ConsensusSeries& series);

}  // namespace dadam
