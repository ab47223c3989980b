#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "dadam/matrix.hpp"
#include "dadam/projections.hpp"

namespace dadam {

enum class LossKind { logistic, softmax, squared_hinge, quadratic_tracking };

std::string_view to_string(LossKind k);
LossKind parse_loss_kind(std::string_view s);

/// A problem constant that is either exact or a (conservative) estimate.
struct Constant {
  double value = 0.0;
  bool estimated = true;
};

struct ProblemSpec {
  LossKind kind = LossKind::logistic;
  /// Classes for softmax; the model is classes x feature_dim, flattened row-major.
  std::size_t classes = 2;
  double nu = 0.0;
  /// Model dimension.
  std::size_t p = 1;
  /// Samples per agent per round (b_i).
  std::size_t batch = 1;
  std::optional<Constant> smoothness_rho;
  std::optional<Constant> lipschitz_L;
  std::optional<Constant> noise_xi;

  std::size_t feature_dim() const { return kind == LossKind::softmax ? p / classes : p; }
  void validate() const;
};

/// b samples held by one agent at one round. Labels are +-1 for logistic and
/// squared hinge, class indices for softmax, and unused for quadratic tracking
/// (each feature row is a target point).
struct DataBatch {
  Matrix features;
  Vector labels;
  std::size_t round = 0;
  std::size_t agent = 0;
};

class DataSource {
 public:
  virtual ~DataSource() = default;
  virtual std::size_t agents() const = 0;
  virtual std::size_t rounds() const = 0;
  virtual std::size_t feature_dim() const = 0;
  /// Batch of agent i at round t (1-based). Deterministic.
  virtual DataBatch batch(std::size_t i, std::size_t t) const = 0;
  /// Whole local training set, when the source is a finite dataset.
  virtual std::optional<DataBatch> local_data(std::size_t i) const { (void)i; return std::nullopt; }
  /// Rounds per pass over the local data; 0 for online streams.
  virtual std::size_t rounds_per_epoch() const { return 0; }
  /// Rows c_1..c_T of a drifting quadratic target path, if the source has one.
  virtual const Matrix* target_path() const { return nullptr; }
};

/// Finite per-agent datasets served in consecutive batches of `batch` rows.
/// With a shuffle seed every epoch visits the local rows in a fresh order.
class FiniteDataSource : public DataSource {
 public:
  FiniteDataSource(std::vector<DataBatch> local, std::size_t rounds, std::size_t batch,
                   std::optional<std::uint64_t> shuffle_seed = std::nullopt);

  std::size_t agents() const override { return local_.size(); }
  std::size_t rounds() const override { return rounds_; }
  std::size_t feature_dim() const override { return local_.front().features.cols(); }
  DataBatch batch(std::size_t i, std::size_t t) const override;
  std::optional<DataBatch> local_data(std::size_t i) const override { return local_.at(i); }
  std::size_t rounds_per_epoch() const override { return rounds_per_epoch_; }

 private:
  std::vector<DataBatch> local_;
  std::size_t rounds_;
  std::size_t batch_;
  std::size_t rounds_per_epoch_;
  std::optional<std::uint64_t> shuffle_seed_;
};

struct SynthOptions {
  std::size_t agents = 10;
  /// Feature dimension (the model dimension except for softmax).
  std::size_t features = 10;
  std::size_t rounds = 100;
  LossKind kind = LossKind::logistic;
  std::size_t classes = 2;
  std::size_t batch = 10;
  /// Per-round displacement of the optimum along coordinate 0.
  double drift = 0.0;
  std::uint64_t seed = 1;
  /// Finite local datasets of this size (epoch mode); 0 streams fresh samples.
  std::size_t samples_per_agent = 0;
  /// Feature column d is scaled by 10^u_d, u_d ~ U[lo, hi].
  double log10_scale_lo = 0.0;
  double log10_scale_hi = 0.0;
  /// Quadratic tracking: spread of the zero-mean per-agent target offsets.
  double spread = 1.0;
  /// Quadratic tracking: sample noise around the agent target.
  double noise = 0.0;
};

std::shared_ptr<const DataSource> synth_stream(const SynthOptions& opts);

struct CsvSchema {
  std::string label_column = "label";
  std::size_t agents = 1;
  std::size_t rounds = 1;
  std::size_t batch = 1;
  /// Row permutation applied before the round-robin split across agents.
  std::optional<std::uint64_t> permutation_seed;
};

/// Header row, numeric feature columns and one label column. Row k of the
/// (permuted) file goes to agent k mod n; round t of agent i serves its local
/// rows (t-1)b .. tb-1, cyclically.
std::shared_ptr<const DataSource> load_csv(const std::filesystem::path& path, const CsvSchema& schema);

/// f_{i,t}(x) = mean over the batch of the sample loss + nu ||x||^2.
class LossOracle {
 public:
  LossOracle(ProblemSpec spec, std::shared_ptr<const DataSource> source);

  const ProblemSpec& spec() const { return spec_; }
  const DataSource& source() const { return *source_; }
  std::size_t agents() const { return source_->agents(); }
  std::size_t rounds() const { return source_->rounds(); }

  double value(std::span<const double> x, std::size_t i, std::size_t t) const;
  Vector grad(std::span<const double> x, std::size_t i, std::size_t t) const;
  /// Gradient of the mean over `batch_size` rows drawn without replacement from the
  /// (i, t) batch with a generator keyed by (sample_seed, i, t), plus the regularizer.
  Vector stochastic_grad(std::span<const double> x, std::size_t i, std::size_t t,
                         std::uint64_t sample_seed, std::size_t batch_size) const;

  /// f_t = mean over agents of f_{i,t}.
  double network_value(std::span<const double> x, std::size_t t) const;
  Vector network_grad(std::span<const double> x, std::size_t t) const;

  /// Gradient of (1/t) sum_{s<=t} f_{i,s} at x.
  Vector aggregate_grad(std::span<const double> x, std::size_t i, std::size_t t) const;

  /// Mean over agents of the local full-data loss; NaN without finite local data.
  double training_loss(std::span<const double> x) const;

  /// Upper bound on the gradient Lipschitz constant over all (i, t). Exact for
  /// quadratic tracking.
  Constant smoothness() const;
  /// Bound on ||grad f_{i,t}|| over the set (the loss Lipschitz constant);
  /// infinite for unbounded sets. Exact for quadratic tracking.
  Constant lipschitz(const ConstraintSet& set) const;

 private:
  double batch_value(std::span<const double> x, const DataBatch& b) const;
  void batch_grad(std::span<const double> x, const DataBatch& b, std::span<const std::size_t> rows,
                  std::span<double> out) const;
  void check_labels(const DataBatch& b) const;

  ProblemSpec spec_;
  std::shared_ptr<const DataSource> source_;
  // Quadratic tracking: prefix sums of the per-round mean targets, per agent.
  std::vector<Matrix> target_prefix_;
};

LossOracle make_loss(const ProblemSpec& spec, std::shared_ptr<const DataSource> stream);

/// x*_t = argmin over the set of f_t. Quadratic tracking uses the closed form;
/// other losses use accelerated projected gradient with backtracking until the
/// unit-step projected-gradient residual is below `tol`.
Vector minimizer_oracle(const LossOracle& oracle, std::size_t t, const ConstraintSet& set,
                        double tol = 1e-10, std::size_t max_iter = 200000,
                        const Vector* warm_start = nullptr);

/// Empirical E||g||^2 of stochastic gradients at x over `draws` draws (a xi^2 estimate).
double estimate_noise_second_moment(const LossOracle& oracle, std::span<const double> x,
                                    std::size_t i, std::size_t t, std::size_t batch_size,
                                    std::size_t draws, std::uint64_t seed);

/// Writes every batch of the source as CSV rows (agent, round, label, features).
void export_batches(const DataSource& source, const std::filesystem::path& path);

}  // namespace dadam
