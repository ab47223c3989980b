#include "dadam/harness.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "dadam/csv.hpp"
#include "dadam/random.hpp"

namespace dadam {

namespace pt = boost::property_tree;

namespace {

const std::map<std::string, std::set<std::string>>& known_keys() {
  static const std::map<std::string, std::set<std::string>> keys{
      {"experiment", {"name", "seed", "rounds", "epochs"}},
      {"topology", {"agents", "ratio", "iota", "edges", "seed"}},
      {"problem",
       {"kind", "classes", "features", "nu", "batch", "drift", "samples_per_agent", "feature_log10_lo",
        "feature_log10_hi", "spread", "noise", "data", "label_column", "permutation_seed", "rho", "lipschitz",
        "xi", "sample_batch"}},
      {"constraint", {"set", "radius", "lo", "hi", "center"}},
      {"optimizer",
       {"preset", "alpha", "schedule", "beta1", "beta2", "beta3", "lambda", "epsilon", "mode", "corrected",
        "adaptivity", "x1", "corollary3_step"}},
      {"metrics", {"regret", "local_regret", "bounds", "minimizer_tol", "bound_scale", "per_agent", "checkpoint"}},
      {"output", {"dir"}},
  };
  return keys;
}

struct Fields {
  const pt::ptree& tree;

  std::optional<std::string> raw(const std::string& path) const {
    auto v = tree.get_optional<std::string>(pt::ptree::path_type(path, '.'));
    if (!v) return std::nullopt;
    std::string s = *v;
    s.erase(0, s.find_first_not_of(" \t"));
    s.erase(s.find_last_not_of(" \t") + 1);
    return s;
  }

  double number(const std::string& path, double fallback) const {
    auto v = raw(path);
    if (!v) return fallback;
    try {
      return csv::parse_double(*v);
    } catch (const std::exception& e) {
      throw ConfigError(path + ": " + e.what());
    }
  }

  std::size_t count(const std::string& path, std::size_t fallback) const {
    auto v = raw(path);
    if (!v) return fallback;
    const double d = number(path, 0.0);
    if (!(d >= 0.0) || d != std::floor(d) || d > 1e15) throw ConfigError(path + ": expected a non-negative integer, got '" + *v + "'");
    return static_cast<std::size_t>(d);
  }

  bool flag(const std::string& path, bool fallback) const {
    auto v = raw(path);
    if (!v) return fallback;
    if (*v == "true" || *v == "on" || *v == "1" || *v == "yes") return true;
    if (*v == "false" || *v == "off" || *v == "0" || *v == "no") return false;
    throw ConfigError(path + ": expected true/false, got '" + *v + "'");
  }

  Toggle toggle(const std::string& path) const {
    auto v = raw(path);
    if (!v || *v == "auto") return Toggle::automatic;
    return flag(path, false) ? Toggle::on : Toggle::off;
  }
};

Adaptivity parse_adaptivity(const std::string& s) {
  if (s == "relaxed_max") return Adaptivity::relaxed_max;
  if (s == "running_mean") return Adaptivity::running_mean;
  if (s == "none") return Adaptivity::none;
  throw std::invalid_argument("unknown adaptivity '" + s + "'");
}

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
  std::filesystem::path path(p);
  return path.is_absolute() ? path : base / path;
}

ExperimentConfig from_tree(const pt::ptree& tree, const std::filesystem::path& base) {
  for (const auto& [section, body] : tree) {
    auto it = known_keys().find(section);
    if (it == known_keys().end()) throw ConfigError(section + ": unknown section");
    if (body.empty() && !body.data().empty()) throw ConfigError(section + ": key outside of a section");
    for (const auto& [key, value] : body)
      if (!it->second.count(key)) throw ConfigError(section + "." + key + ": unknown key");
  }
  Fields f{tree};
  ExperimentConfig c;
  c.name = f.raw("experiment.name").value_or(c.name);
  c.seed = static_cast<std::uint64_t>(f.count("experiment.seed", c.seed));
  c.rounds = f.count("experiment.rounds", 0);
  c.epochs = f.count("experiment.epochs", 0);

  c.agents = f.count("topology.agents", c.agents);
  if (c.agents < 1) throw ConfigError("topology.agents: must be >= 1");
  c.ratio = f.number("topology.ratio", c.ratio);
  if (!(c.ratio >= 0.0 && c.ratio <= 1.0)) throw ConfigError("topology.ratio: must lie in [0, 1]");
  c.iota = f.number("topology.iota", c.iota);
  if (!(c.iota > 0.0)) throw ConfigError("topology.iota: must be positive");
  if (auto e = f.raw("topology.edges")) {
    c.edges = resolve(base, *e);
    if (!std::filesystem::exists(*c.edges)) throw ConfigError("topology.edges: no such file " + c.edges->string());
  }
  if (f.raw("topology.seed")) c.topology_seed = f.count("topology.seed", 0);

  auto& pr = c.problem;
  try {
    pr.kind = parse_loss_kind(f.raw("problem.kind").value_or("logistic"));
  } catch (const std::exception& e) {
    throw ConfigError(std::string("problem.kind: ") + e.what());
  }
  pr.classes = f.count("problem.classes", pr.kind == LossKind::softmax ? 3 : 2);
  const std::size_t features = f.count("problem.features", 10);
  pr.p = pr.kind == LossKind::softmax ? features * pr.classes : features;
  pr.nu = f.number("problem.nu", 0.0);
  if (!(pr.nu >= 0.0)) throw ConfigError("problem.nu: must be >= 0");
  pr.batch = f.count("problem.batch", 1);
  if (pr.batch < 1) throw ConfigError("problem.batch: must be >= 1");
  if (f.raw("problem.rho")) pr.smoothness_rho = Constant{f.number("problem.rho", 0), true};
  if (f.raw("problem.lipschitz")) pr.lipschitz_L = Constant{f.number("problem.lipschitz", 0), true};
  if (f.raw("problem.xi")) pr.noise_xi = Constant{f.number("problem.xi", 0), true};
  c.sample_batch = f.count("problem.sample_batch", 0);
  if (c.sample_batch > pr.batch) throw ConfigError("problem.sample_batch: exceeds problem.batch");

  auto& s = c.synth;
  s.agents = c.agents;
  s.features = features;
  s.kind = pr.kind;
  s.classes = pr.classes;
  s.batch = pr.batch;
  s.drift = f.number("problem.drift", 0.0);
  if (!(s.drift >= 0.0)) throw ConfigError("problem.drift: must be >= 0");
  s.samples_per_agent = f.count("problem.samples_per_agent", 0);
  if (s.samples_per_agent && s.samples_per_agent < pr.batch)
    throw ConfigError("problem.samples_per_agent: must be at least problem.batch");
  s.log10_scale_lo = f.number("problem.feature_log10_lo", 0.0);
  s.log10_scale_hi = f.number("problem.feature_log10_hi", s.log10_scale_lo);
  if (s.log10_scale_hi < s.log10_scale_lo) throw ConfigError("problem.feature_log10_hi: below feature_log10_lo");
  s.spread = f.number("problem.spread", 1.0);
  s.noise = f.number("problem.noise", 0.0);
  if (auto d = f.raw("problem.data")) {
    c.data = resolve(base, *d);
    if (!std::filesystem::exists(*c.data)) throw ConfigError("problem.data: no such file " + c.data->string());
    CsvSchema schema;
    schema.label_column = f.raw("problem.label_column").value_or("label");
    schema.agents = c.agents;
    schema.batch = pr.batch;
    if (f.raw("problem.permutation_seed")) schema.permutation_seed = f.count("problem.permutation_seed", 0);
    c.csv = schema;
  }

  for (const auto& key : {"set", "radius", "lo", "hi", "center"})
    if (auto v = f.raw(std::string("constraint.") + key)) c.constraint[key] = *v;

  c.preset = f.raw("optimizer.preset").value_or(c.preset);
  if (std::find(preset_names().begin(), preset_names().end(), c.preset) == preset_names().end())
    throw ConfigError("optimizer.preset: unknown preset '" + c.preset + "'");
  for (const auto& key : {"alpha", "schedule", "beta1", "beta2", "beta3", "lambda", "epsilon", "mode", "corrected",
                          "adaptivity"})
    if (auto v = f.raw(std::string("optimizer.") + key)) c.optimizer_overrides[key] = *v;
  if (f.raw("optimizer.x1") == "target") {
    if (pr.kind != LossKind::quadratic_tracking) throw ConfigError("optimizer.x1: 'target' needs problem.kind = quadratic");
    c.x1_target = true;
  } else {
    c.x1 = f.number("optimizer.x1", 0.0);
  }
  c.corollary3_step = f.flag("optimizer.corollary3_step", false);

  c.regret = f.toggle("metrics.regret");
  c.local_regret = f.toggle("metrics.local_regret");
  c.bounds = f.flag("metrics.bounds", true);
  c.minimizer_tol = f.number("metrics.minimizer_tol", 1e-10);
  if (!(c.minimizer_tol > 0.0)) throw ConfigError("metrics.minimizer_tol: must be positive");
  c.bound_scale = f.number("metrics.bound_scale", 1.0);
  if (!(c.bound_scale > 0.0)) throw ConfigError("metrics.bound_scale: must be positive");
  c.per_agent = f.flag("metrics.per_agent", false);
  c.checkpoint = f.flag("metrics.checkpoint", false);

  if (auto d = f.raw("output.dir")) c.out_dir = *d;
  else if (const char* env = std::getenv("DADAM_OUT_DIR")) c.out_dir = env;

  if (c.rounds == 0 && c.epochs == 0) throw ConfigError("experiment.rounds: set rounds or epochs");
  // Fail fast on values the later stages would reject.
  try {
    (void)parse_constraint(c.constraint, pr.p);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("constraint.") + e.what());
  }
  HyperParams probe = preset(c.preset, 0.5);
  for (const auto& [k, v] : c.optimizer_overrides) {
    if (k == "alpha" && v == "auto") continue;
    try {
      if (k == "alpha") probe.alpha = csv::parse_double(v);
      else if (k == "schedule") probe.schedule = parse_schedule(v);
      else if (k == "beta1") probe.beta1 = csv::parse_double(v);
      else if (k == "beta2") probe.beta2 = csv::parse_double(v);
      else if (k == "beta3") probe.beta3 = csv::parse_double(v);
      else if (k == "lambda") probe.lambda = csv::parse_double(v);
      else if (k == "epsilon") probe.epsilon = csv::parse_double(v);
      else if (k == "mode") probe.mode = parse_mode(v);
      else if (k == "adaptivity") probe.adaptivity = parse_adaptivity(v);
    } catch (const std::exception& e) {
      throw ConfigError("optimizer." + k + ": " + e.what());
    }
  }
  probe.horizon = 1;
  try {
    probe.validate();
  } catch (const std::exception& e) {
    throw ConfigError(std::string("optimizer.") + e.what());
  }
  return c;
}

pt::ptree parse_tree(const std::string& text, const std::map<std::string, std::string>& overrides) {
  pt::ptree tree;
  std::istringstream in(text);
  try {
    pt::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError("config: line " + std::to_string(e.line()) + ": " + e.message());
  }
  for (const auto& [k, v] : overrides) tree.put(pt::ptree::path_type(k, '.'), v);
  return tree;
}

}  // namespace

ExperimentConfig parse_config(const std::string& text, const std::filesystem::path& base_dir,
                              const std::map<std::string, std::string>& overrides) {
  return from_tree(parse_tree(text, overrides), base_dir);
}

ExperimentConfig load_config(const std::filesystem::path& path, const std::map<std::string, std::string>& overrides) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), path.parent_path().empty() ? "." : path.parent_path(), overrides);
}

namespace {

void apply_overrides(HyperParams& h, const std::map<std::string, std::string>& o, double gap) {
  for (const auto& [k, v] : o) {
    if (k == "alpha") h.alpha = v == "auto" ? std::sqrt(gap) : csv::parse_double(v);
    else if (k == "schedule") h.schedule = parse_schedule(v);
    else if (k == "beta1") h.beta1 = csv::parse_double(v);
    else if (k == "beta2") h.beta2 = csv::parse_double(v);
    else if (k == "beta3") h.beta3 = csv::parse_double(v);
    else if (k == "lambda") h.lambda = csv::parse_double(v);
    else if (k == "epsilon") h.epsilon = csv::parse_double(v);
    else if (k == "mode") h.mode = parse_mode(v);
    else if (k == "corrected") h.corrected = v == "true" || v == "on" || v == "1";
    else if (k == "adaptivity") h.adaptivity = parse_adaptivity(v);
  }
}

}  // namespace

Experiment build_experiment(const ExperimentConfig& c) {
  Graph g = c.edges ? read_edge_list(*c.edges, c.agents)
                    : random_connected_graph(c.agents, c.ratio, c.topology_seed.value_or(derive_seed(c.seed, {0x70u})));
  MixingMatrix w = metropolis_weights(g, c.iota);
  const SpectralData spectral{w.sigma2(), w.gap()};

  std::shared_ptr<const DataSource> source;
  SynthOptions synth = c.synth;
  synth.seed = derive_seed(c.seed, {0xda7au});
  std::size_t rounds = c.rounds;
  if (c.csv) {
    CsvSchema schema = *c.csv;
    schema.rounds = std::max<std::size_t>(rounds, 1);
    source = load_csv(*c.data, schema);
    if (rounds == 0) {
      rounds = c.epochs * source->rounds_per_epoch();
      schema.rounds = rounds;
      source = load_csv(*c.data, schema);
    }
  } else {
    if (rounds == 0) {
      if (!synth.samples_per_agent) throw ConfigError("experiment.epochs: needs problem.samples_per_agent");
      rounds = c.epochs * (synth.samples_per_agent / synth.batch);
    }
    synth.rounds = rounds;
    source = synth_stream(synth);
  }
  auto oracle = std::make_shared<LossOracle>(c.problem, source);
  ConstraintSet set = parse_constraint(c.constraint, c.problem.p);

  HyperParams h = preset(c.preset, spectral.gap);
  h.name = c.preset;
  apply_overrides(h, c.optimizer_overrides, spectral.gap);
  h.horizon = rounds;
  h.validate();
  return Experiment{c, std::move(g), std::move(w), spectral, std::move(set), source, oracle, h, rounds};
}

RunResult simulate(const Experiment& ex, const RoundObserver& observer) {
  const std::size_t n = ex.config.agents, p = ex.config.problem.p;
  Vector x1(p, ex.config.x1);
  if (ex.config.x1_target) {
    const Matrix* path = ex.source->target_path();
    if (!path) throw ConfigError("optimizer.x1: the data source has no target path");
    x1.assign(path->row(0).begin(), path->row(0).end());
  }
  OptimizerNetwork net = init_network(n, p, x1, ex.hyper, ex.mixing, ex.set);
  RunResult r{RunRecord(n, p, ex.hyper, ex.spectral.sigma2), {}, {}, {}, {}, {}, {}, {}, {}, {}, {}, 0, {}};
  std::optional<CheckpointWriter> ckpt;
  if (ex.config.checkpoint) {
    ckpt.emplace(ex.config.out_dir / "checkpoint", n, p);
    ckpt->append(net);
  }
  const std::uint64_t sample_seed = derive_seed(ex.config.seed, {0x5a3u});
  Matrix grads(n, p);
  Vector losses(n);
  for (std::size_t t = 1; t <= ex.rounds; ++t) {
    const Matrix x = net.iterates();
    for (std::size_t i = 0; i < n; ++i) {
      const Vector g = ex.config.sample_batch
                           ? ex.oracle->stochastic_grad(x.row(i), i, t, derive_seed(sample_seed, {t}), ex.config.sample_batch)
                           : ex.oracle->grad(x.row(i), i, t);
      grads.set_row(i, g);
      losses[i] = ex.oracle->value(x.row(i), i, t);
    }
    const double alpha = ex.hyper.step_size(t, n);
    net.step(grads);
    r.record.append(x, grads, alpha, losses, net);
    if (ckpt) ckpt->append(net);
    if (observer) observer(t, net, grads);
  }
  r.final_iterates = net.iterates();
  return r;
}

namespace {

bool wants(Toggle t, bool automatic) { return t == Toggle::automatic ? automatic : t == Toggle::on; }

// Fixed point of alpha = (2 - beta1) lo^2 / (2 rho hi) where lo, hi are the
// sqrt(v_hat) extrema of a run with step alpha.
double pilot_corollary3_step(Experiment ex) {
  const double rho = ex.oracle->smoothness().value;
  ex.config.checkpoint = false;
  ex.hyper.schedule = Schedule::constant;
  double alpha = ex.hyper.alpha;
  for (int k = 0; k < 30; ++k) {
    ex.hyper.alpha = alpha;
    const RunResult pilot = simulate(ex);
    const double next = corollary3_step(ex.hyper.beta1, pilot.record.sqrt_vhat_min(), pilot.record.sqrt_vhat_max(), rho);
    if (!(next > 0.0) || !std::isfinite(next))
      throw NumericalError("corollary3 step: degenerate sqrt(v_hat) extrema in the pilot run");
    if (std::abs(next - alpha) <= 1e-6 * alpha) return std::min(alpha, next);
    alpha = next;
  }
  return alpha;
}

void write_report(const BoundReport& r, const std::filesystem::path& path) {
  std::ofstream out(path);
  out << r.to_text();
}

}  // namespace

RunResult run(const ExperimentConfig& config) {
  Experiment ex = build_experiment(config);
  std::filesystem::create_directories(config.out_dir);
  if (config.corollary3_step) {
    ex.hyper.schedule = Schedule::constant;
    ex.hyper.alpha = pilot_corollary3_step(ex);
  }
  RunResult r = simulate(ex);
  const std::size_t n = config.agents, T = ex.rounds;
  const bool quadratic = config.problem.kind == LossKind::quadratic_tracking;

  r.loss.resize(T);
  for (std::size_t t = 1; t <= T; ++t) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += r.record.loss(t, i);
    r.loss[t - 1] = s / static_cast<double>(n);
  }
  const bool finite = ex.source->local_data(0).has_value();
  r.train_loss.assign(T, std::numeric_limits<double>::quiet_NaN());
  if (finite) {
    Vector mean(config.problem.p);
    for (std::size_t t = 1; t <= T; ++t) {
      // Loss at the network average after round t.
      const Matrix& next = t < T ? r.record.iterates(t + 1) : r.final_iterates;
      std::fill(mean.begin(), mean.end(), 0.0);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t d = 0; d < mean.size(); ++d) mean[d] += next(i, d) / static_cast<double>(n);
      r.train_loss[t - 1] = ex.oracle->training_loss(mean);
    }
  }

  if (wants(config.regret, quadratic)) {
    const Vector* warm = nullptr;
    for (std::size_t t = 1; t <= T; ++t) {
      r.minimizers.push_back(minimizer_oracle(*ex.oracle, t, ex.set, config.minimizer_tol, 200000, warm));
      warm = &r.minimizers.back();
    }
    r.reg_c = dynamic_regret(r.record, r.minimizers, *ex.oracle);
  }
  LocalRegret local;
  if (wants(config.local_regret, quadratic && ex.hyper.mode == Mode::nonconvex)) {
    local = local_regret(r.record, *ex.oracle, ex.mixing, ex.set);
    r.reg_n = local.network;
  }
  r.consensus = consensus_error(r.record, config.bound_scale);

  if (config.bounds) {
    r.reports.push_back(consensus_report(r.record, r.consensus));
    if (!r.minimizers.empty()) {
      r.reports.push_back(theorem1_bound(r.record, r.minimizers, ex.set, *ex.oracle, config.bound_scale));
      if (theorem1_unmet(ex.hyper, ex.set).empty()) {
        for (const auto& term : theorem1_series(r.record, r.minimizers, ex.set))
          r.bound_t1.push_back(config.bound_scale * term.total());
      }
    }
    if (!r.reg_n.empty()) {
      BoundReport c3 = corollary3_bound(r.record, local, *ex.oracle, ex.set, config.bound_scale);
      if (c3.evaluable)
        for (std::size_t t = 1; t <= T; ++t)
          r.bound_c3.push_back(config.bound_scale *
                               corollary3_rhs(ex.hyper, n, ex.spectral.sigma2, r.record.sqrt_vhat_max(),
                                              c3.constants["L"], t));
      r.reports.push_back(std::move(c3));
    }
  }
  for (const auto& rep : r.reports)
    if (rep.evaluable && rep.exact() && !rep.holds) r.exit_code = 2;

  // metrics.csv
  const auto metrics_path = config.out_dir / "metrics.csv";
  {
    std::ofstream out(metrics_path);
    out << "# name=" << config.name << '\n';
    out << "# preset=" << ex.hyper.name << '\n';
    out << "# seed=" << config.seed << '\n';
    out << "# agents=" << n << '\n';
    out << "# dim=" << config.problem.p << '\n';
    out << "# rounds=" << T << '\n';
    out << "# rounds_per_epoch=" << ex.source->rounds_per_epoch() << '\n';
    out << "# sigma2=" << csv::format(ex.spectral.sigma2) << '\n';
    out << "# alpha=" << csv::format(ex.hyper.alpha) << '\n';
    out << "# schedule=" << to_string(ex.hyper.schedule) << '\n';
    out << "# mode=" << to_string(ex.hyper.mode) << '\n';
    out << "# beta=" << csv::format(ex.hyper.beta1) << ',' << csv::format(ex.hyper.beta2) << ','
        << csv::format(ex.hyper.beta3) << '\n';
    out << "# lambda=" << csv::format(ex.hyper.lambda) << '\n';
    out << "# corrected=" << (ex.hyper.corrected ? "true" : "false") << '\n';
    out << "# constraint=" << ex.set.describe() << '\n';
    const std::vector<std::string> header{"t", "epoch", "alpha", "loss", "train_loss", "regC", "regN",
                                          "consensus_err", "consensus_max", "Bt", "bound_t1", "bound_c3"};
    csv::write_row(out, header);
    const double nan = std::numeric_limits<double>::quiet_NaN();
    const std::size_t rpe = ex.source->rounds_per_epoch();
    auto at = [&](const std::vector<double>& v, std::size_t t) { return t <= v.size() ? v[t - 1] : nan; };
    for (std::size_t t = 1; t <= T; ++t) {
      const double epoch = rpe ? static_cast<double>((t - 1) / rpe + 1) : nan;
      const std::vector<double> row{static_cast<double>(t), epoch, r.record.alpha(t), r.loss[t - 1],
                                    r.train_loss[t - 1], at(r.reg_c, t), at(r.reg_n, t),
                                    r.consensus.mean[t - 1], r.consensus.max[t - 1], at(r.consensus.bound, t),
                                    at(r.bound_t1, t), at(r.bound_c3, t)};
      csv::write_row(out, row);
    }
  }
  r.written.push_back(metrics_path.string());

  if (config.per_agent) {
    const auto path = config.out_dir / "agents.csv";
    std::ofstream out(path);
    std::vector<std::string> header{"t", "agent", "loss"};
    for (std::size_t d = 0; d < config.problem.p; ++d) header.push_back("x" + std::to_string(d));
    csv::write_row(out, header);
    Vector row;
    for (std::size_t t = 1; t <= T; ++t)
      for (std::size_t i = 0; i < n; ++i) {
        row.assign({static_cast<double>(t), static_cast<double>(i), r.record.loss(t, i)});
        const auto x = r.record.iterates(t).row(i);
        row.insert(row.end(), x.begin(), x.end());
        csv::write_row(out, row);
      }
    r.written.push_back(path.string());
  }
  for (const auto& rep : r.reports) {
    const auto path = config.out_dir / ("bound_" + rep.name + ".txt");
    write_report(rep, path);
    r.written.push_back(path.string());
  }
  write_mixing_csv(config.out_dir / "mixing.csv", ex.mixing);
  r.written.push_back((config.out_dir / "mixing.csv").string());
  return r;
}

std::filesystem::path compare(const std::vector<ExperimentConfig>& configs, const std::filesystem::path& out_dir) {
  if (configs.size() < 2) throw std::invalid_argument("compare: need at least two configs");
  std::vector<RunResult> results;
  std::vector<std::string> labels;
  for (std::size_t k = 0; k < configs.size(); ++k) {
    ExperimentConfig c = configs[k];
    c.seed = configs.front().seed;
    std::string label = c.name;
    if (std::count(labels.begin(), labels.end(), label)) label += "_" + std::to_string(k);
    c.out_dir = out_dir / label;
    labels.push_back(label);
    results.push_back(run(c));
  }
  const std::size_t T = results.front().loss.size();
  for (std::size_t k = 1; k < results.size(); ++k)
    if (results[k].loss.size() != T)
      throw std::invalid_argument("compare: horizon mismatch (" + std::to_string(T) + " vs " +
                                  std::to_string(results[k].loss.size()) + " rounds for " + labels[k] + ")");
  std::filesystem::create_directories(out_dir);
  const auto path = out_dir / "compare.csv";
  std::ofstream out(path);
  for (std::size_t k = 0; k < results.size(); ++k)
    out << "# " << labels[k] << ".schedule=" << to_string(results[k].record.hyper().schedule) << '\n';
  std::vector<std::string> header{"t"};
  for (const auto& l : labels)
    for (const char* col : {"loss", "train_loss", "regC", "regN"}) header.push_back(l + "_" + col);
  csv::write_row(out, header);
  const double nan = std::numeric_limits<double>::quiet_NaN();
  for (std::size_t t = 1; t <= T; ++t) {
    Vector row{static_cast<double>(t)};
    for (const auto& r : results) {
      row.push_back(r.loss[t - 1]);
      row.push_back(r.train_loss[t - 1]);
      row.push_back(t <= r.reg_c.size() ? r.reg_c[t - 1] : nan);
      row.push_back(t <= r.reg_n.size() ? r.reg_n[t - 1] : nan);
    }
    csv::write_row(out, row);
  }
  return path;
}

std::vector<SweepCell> sweep(const ExperimentConfig& config, const std::string& axis,
                             const std::vector<std::string>& values, const std::filesystem::path& out_dir) {
  if (values.empty()) throw std::invalid_argument("sweep: empty axis");
  if (axis != "beta3" && axis != "r" && axis != "iota") throw std::invalid_argument("sweep: unknown axis '" + axis + "'");
  std::vector<SweepCell> cells;
  for (std::size_t k = 0; k < values.size(); ++k) {
    ExperimentConfig c = config;
    const double v = csv::parse_double(values[k]);
    if (axis == "beta3") {
      if (!(v >= 0.0 && v <= kMaxBeta3)) throw std::invalid_argument("sweep: beta3 = " + values[k] + " outside [0, 1-1e-6]");
      c.optimizer_overrides["beta3"] = values[k];
    } else if (axis == "r") {
      if (!(v >= 0.0 && v <= 1.0)) throw std::invalid_argument("sweep: r = " + values[k] + " outside [0, 1]");
      c.ratio = v;
    } else {
      if (!(v > 0.0)) throw std::invalid_argument("sweep: iota = " + values[k] + " must be positive");
      c.iota = v;
    }
    c.out_dir = out_dir / ("cell_" + std::to_string(k));
    const RunResult r = run(c);
    SweepCell cell;
    cell.value = values[k];
    cell.sigma2 = r.record.sigma2();
    cell.final_loss = r.loss.empty() ? 0.0 : r.loss.back();
    cell.final_train_loss = r.train_loss.empty() ? 0.0 : r.train_loss.back();
    cell.final_reg_c = r.reg_c.empty() ? std::numeric_limits<double>::quiet_NaN() : r.reg_c.back();
    cell.final_reg_n = r.reg_n.empty() ? std::numeric_limits<double>::quiet_NaN() : r.reg_n.back();
    cell.exit_code = r.exit_code;
    cells.push_back(cell);
  }
  std::filesystem::create_directories(out_dir);
  std::ofstream out(out_dir / "summary.csv");
  out << "# axis=" << axis << '\n';
  csv::write_row(out, std::vector<std::string>{"cell", axis, "sigma2", "final_loss", "final_train_loss", "final_regC",
                                               "final_regN", "exit_code"});
  for (std::size_t k = 0; k < cells.size(); ++k) {
    const auto& c = cells[k];
    csv::write_row(out, std::vector<std::string>{std::to_string(k), c.value, csv::format(c.sigma2),
                                                 csv::format(c.final_loss), csv::format(c.final_train_loss),
                                                 csv::format(c.final_reg_c), csv::format(c.final_reg_n),
                                                 std::to_string(c.exit_code)});
  }
  return cells;
}

std::vector<BoundReport> bounds(const ExperimentConfig& config) {
  ExperimentConfig c = config;
  c.bounds = true;
  const Experiment ex = build_experiment(c);
  if (c.regret == Toggle::automatic && theorem1_unmet(ex.hyper, ex.set).empty()) c.regret = Toggle::on;
  if (c.local_regret == Toggle::automatic && ex.hyper.mode == Mode::nonconvex) c.local_regret = Toggle::on;
  return run(c).reports;
}

}  // namespace dadam
