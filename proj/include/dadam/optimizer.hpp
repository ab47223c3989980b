#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "dadam/matrix.hpp"
#include "dadam/projections.hpp"
#include "dadam/topology.hpp"

namespace dadam {

enum class Schedule { inv_sqrt_t, constant, inv_sqrt_nT };
enum class Mode { convex, nonconvex };

/// How the second moment enters the step.
enum class Adaptivity {
  relaxed_max,   // EMA second moment with the beta3-relaxed running max
  running_mean,  // v_t = ((t-1) v_{t-1} + g*g) / t, then the max rule (AdaGrad style)
  none,          // plain (momentum) gradient step, no denominator
};

std::string_view to_string(Schedule s);
std::string_view to_string(Mode m);
Schedule parse_schedule(std::string_view s);
Mode parse_mode(std::string_view s);

/// Largest admissible beta3; the relaxed max freezes v_hat at beta3 = 1.
inline constexpr double kMaxBeta3 = 1.0 - 1e-6;

struct HyperParams {
  std::string name = "custom";
  double alpha = 1.0;
  Schedule schedule = Schedule::inv_sqrt_t;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double beta3 = 0.9;
  /// beta1 decay: beta_{1,t} = beta1 * lambda^(t-1). 1 keeps beta1 constant.
  double lambda = 1.0;
  double epsilon = 1e-8;
  Mode mode = Mode::convex;
  bool corrected = false;
  Adaptivity adaptivity = Adaptivity::relaxed_max;
  /// Required by the inv_sqrt_nT schedule.
  std::optional<std::size_t> horizon;

  /// beta1 / sqrt(beta2); zero when beta1 is zero.
  double eta() const;
  double beta1_at(std::size_t t) const;
  double step_size(std::size_t t, std::size_t n_agents) const;
  /// Throws std::invalid_argument naming the offending field.
  void validate() const;
};

/// Named special cases. `spectral_gap` = 1 - sigma2(W) sets the default step
/// alpha_t = sqrt(spectral_gap / t).
HyperParams preset(std::string_view name, double spectral_gap = 1.0);
const std::vector<std::string>& preset_names();

struct AgentState {
  Vector x;
  Vector m;
  Vector v;
  Vector v_hat;
  /// Cumulative correction sum_s (W - W_hat) X_s for the corrected rule.
  Vector corr;
  std::size_t round = 0;

  explicit AgentState(std::size_t p = 0) : x(p), m(p), v(p), v_hat(p), corr(p) {}
};

/// Moment update for round t. Throws NumericalError naming the agent and
/// coordinate if `g` has a non-finite entry; the state is untouched then.
void local_moments_update(AgentState& state, std::span<const double> g, std::size_t t,
                          const HyperParams& hyper, std::size_t agent = 0);

class OptimizerNetwork {
 public:
  /// Every row of `x1` must be the start of the matching agent; rows outside the
  /// set are projected in.
  OptimizerNetwork(MixingMatrix w, ConstraintSet set, HyperParams hyper, const Matrix& x1);

  std::size_t agents() const { return agents_.size(); }
  std::size_t dim() const { return p_; }
  /// Index of the round the next call to step() executes.
  std::size_t round() const { return t_; }

  const MixingMatrix& mixing() const { return w_; }
  const ConstraintSet& constraint() const { return set_; }
  const HyperParams& hyper() const { return hyper_; }
  const AgentState& agent(std::size_t i) const { return agents_.at(i); }
  const std::vector<AgentState>& states() const { return agents_; }

  Matrix iterates() const;
  /// Iterates of the previous round (X_{t-1}); equal to X_1 before the first step.
  const Matrix& previous_iterates() const { return previous_; }
  /// Algorithm output of the last step before the cumulative correction.
  const Matrix& uncorrected_output() const { return uncorrected_; }

  /// One bulk-synchronous round with gradients g_{i,t} stacked as rows.
  void step(const Matrix& grads);

  Vector network_average() const;

  /// Rebuild from saved agent states (see write_checkpoint_row).
  static OptimizerNetwork restore(MixingMatrix w, ConstraintSet set, HyperParams hyper,
                                  std::vector<AgentState> states, Matrix previous);

 private:
  void corrected_adjust(Matrix& next);

  MixingMatrix w_;
  ConstraintSet set_;
  HyperParams hyper_;
  std::size_t p_ = 0;
  std::size_t t_ = 1;
  std::vector<AgentState> agents_;
  Matrix previous_;
  Matrix uncorrected_;
};

OptimizerNetwork init_network(std::size_t n, std::size_t p, std::span<const double> x1,
                              const HyperParams& hyper, const MixingMatrix& w,
                              const ConstraintSet& set);

/// Per-agent checkpoint files `agent_<i>.csv`: one row per round with columns
/// round, x_0.., m_0.., v_0.., vhat_0.., corr_0.. .
class CheckpointWriter {
 public:
  CheckpointWriter(std::filesystem::path dir, std::size_t n, std::size_t p);
  void append(const OptimizerNetwork& net);
  static std::filesystem::path agent_file(const std::filesystem::path& dir, std::size_t i);

 private:
  std::filesystem::path dir_;
  std::size_t n_, p_;
};

/// All rows of one agent's checkpoint file, oldest first.
std::vector<AgentState> read_checkpoint(const std::filesystem::path& file);

/// Resume from the last rows of a checkpoint directory.
OptimizerNetwork resume_network(MixingMatrix w, ConstraintSet set, HyperParams hyper,
                                const std::filesystem::path& dir);

}  // namespace dadam
