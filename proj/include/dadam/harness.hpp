#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "dadam/metrics.hpp"
#include "dadam/optimizer.hpp"
#include "dadam/problems.hpp"
#include "dadam/projections.hpp"
#include "dadam/topology.hpp"

namespace dadam {

/// Raised for malformed or out-of-range configuration; the message starts
/// with the field path (`section.key`).
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

enum class Toggle { automatic, on, off };

struct ExperimentConfig {
  std::string name = "experiment";
  std::uint64_t seed = 1;
  std::size_t rounds = 0;  // 0: epochs * rounds_per_epoch
  std::size_t epochs = 0;

  // topology
  std::size_t agents = 10;
  double ratio = 0.5;
  double iota = 1.0;
  std::optional<std::filesystem::path> edges;
  std::optional<std::uint64_t> topology_seed;

  // problem
  ProblemSpec problem;
  SynthOptions synth;
  std::optional<CsvSchema> csv;
  std::optional<std::filesystem::path> data;
  /// Rows drawn per stochastic gradient; 0 uses the whole round batch.
  std::size_t sample_batch = 0;

  // constraint
  std::map<std::string, std::string> constraint{{"set", "none"}};

  // optimizer
  std::string preset = "dadam";
  std::map<std::string, std::string> optimizer_overrides;
  double x1 = 0.0;
  /// Start every agent at the first target of a quadratic tracking path.
  bool x1_target = false;
  /// Pick the constant step of the nonconvex bound by fixed-point pilot runs.
  bool corollary3_step = false;

  // metrics
  Toggle regret = Toggle::automatic;
  Toggle local_regret = Toggle::automatic;
  bool bounds = true;
  double minimizer_tol = 1e-10;
  double bound_scale = 1.0;
  bool per_agent = false;
  bool checkpoint = false;

  std::filesystem::path out_dir = "out";
};

/// Plain-text `[section]` / `key = value` file; `#` and `;` start comments.
ExperimentConfig load_config(const std::filesystem::path& path,
                             const std::map<std::string, std::string>& overrides = {});
ExperimentConfig parse_config(const std::string& text, const std::filesystem::path& base_dir = ".",
                              const std::map<std::string, std::string>& overrides = {});

/// Everything a run is built from, before any round executes.
struct Experiment {
  ExperimentConfig config;
  Graph graph;
  MixingMatrix mixing;
  SpectralData spectral;
  ConstraintSet set;
  std::shared_ptr<const DataSource> source;
  std::shared_ptr<LossOracle> oracle;
  HyperParams hyper;
  std::size_t rounds = 0;
};

Experiment build_experiment(const ExperimentConfig& config);

struct RunResult {
  RunRecord record;
  std::vector<double> loss;
  std::vector<double> train_loss;
  std::vector<double> reg_c;
  std::vector<double> reg_n;
  ConsensusSeries consensus;
  std::vector<double> bound_t1;
  std::vector<double> bound_c3;
  std::vector<BoundReport> reports;
  std::vector<Vector> minimizers;
  Matrix final_iterates;
  /// 0 success, 2 when a bound with exactly known constants fails.
  int exit_code = 0;
  std::vector<std::string> written;
};

/// Called after every round with t, the network (already stepped) and the
/// gradients it consumed.
using RoundObserver = std::function<void(std::size_t, const OptimizerNetwork&, const Matrix&)>;

/// Executes the rounds only (no files, no metrics beyond the record).
RunResult simulate(const Experiment& ex, const RoundObserver& observer = {});

/// Full run: rounds, metrics, CSV and report files under config.out_dir.
RunResult run(const ExperimentConfig& config);

/// Runs every config with the first one's seed and writes one joined CSV.
std::filesystem::path compare(const std::vector<ExperimentConfig>& configs, const std::filesystem::path& out_dir);

struct SweepCell {
  std::string value;
  double sigma2 = 0.0;
  double final_loss = 0.0;
  double final_train_loss = 0.0;
  double final_reg_c = 0.0;
  double final_reg_n = 0.0;
  int exit_code = 0;
};

/// axis: beta3, r (edge ratio) or iota. One run per value, shared seed.
std::vector<SweepCell> sweep(const ExperimentConfig& config, const std::string& axis,
                             const std::vector<std::string>& values, const std::filesystem::path& out_dir);

/// Runs the config and returns its bound reports (also written to disk).
std::vector<BoundReport> bounds(const ExperimentConfig& config);

}  // namespace dadam
