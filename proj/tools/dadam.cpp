// Command-line front end: run, compare, sweep, bounds.
#include <cmath>
#include <cstdlib>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "dadam/csv.hpp"
#include "dadam/harness.hpp"

namespace {

struct Common {
  std::vector<std::string> configs;
  std::optional<std::uint64_t> seed;
  std::string out_dir;
  bool quiet = false;
  std::vector<std::string> sets;
};

void add_common(CLI::App* cmd, Common& c, bool many) {
  if (many) cmd->add_option("--config", c.configs, "Experiment config files")->required();
  else cmd->add_option("--config", c.configs, "Experiment config file")->required()->expected(1);
  cmd->add_option("--seed", c.seed, "Master seed (overrides experiment.seed)");
  cmd->add_option("--out-dir", c.out_dir, "Output directory (default: output.dir, then $DADAM_OUT_DIR)");
  cmd->add_flag("--quiet", c.quiet, "Only report errors");
  cmd->add_option("--set", c.sets, "Override a config field: section.key=value");
}

dadam::ExperimentConfig load(const std::string& path, const Common& c) {
  std::map<std::string, std::string> overrides;
  for (const auto& s : c.sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw dadam::ConfigError("--set: expected section.key=value, got '" + s + "'");
    overrides[s.substr(0, eq)] = s.substr(eq + 1);
  }
  dadam::ExperimentConfig cfg = dadam::load_config(path, overrides);
  if (c.seed) cfg.seed = *c.seed;
  if (!c.out_dir.empty()) cfg.out_dir = c.out_dir;
  return cfg;
}

std::vector<std::string> split(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ',')) out.push_back(tok);
  return out;
}

void print_reports(const std::vector<dadam::BoundReport>& reports) {
  for (const auto& r : reports) std::cout << r.to_text() << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Distributed adaptive gradient simulator"};
  app.require_subcommand(1);

  Common run_opts, cmp_opts, sweep_opts, bound_opts;
  auto* run_cmd = app.add_subcommand("run", "Run one experiment");
  add_common(run_cmd, run_opts, false);

  auto* cmp_cmd = app.add_subcommand("compare", "Run several configs on one seed and join their series");
  add_common(cmp_cmd, cmp_opts, true);

  std::string axis;
  std::string values;
  auto* sweep_cmd = app.add_subcommand("sweep", "One run per value of an axis");
  add_common(sweep_cmd, sweep_opts, false);
  sweep_cmd->add_option("--axis", axis, "beta3, r or iota")->required()->check(CLI::IsMember({"beta3", "r", "iota"}));
  sweep_cmd->add_option("--values", values, "Comma-separated values")->required();

  std::optional<double> scale;
  auto* bound_cmd = app.add_subcommand("bounds", "Evaluate the bound reports of a config");
  add_common(bound_cmd, bound_opts, false);
  bound_cmd->add_option("--scale", scale, "Multiply every bound (self-test of the violation path)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*run_cmd) {
      const auto cfg = load(run_opts.configs.front(), run_opts);
      const auto r = dadam::run(cfg);
      if (!run_opts.quiet) {
        std::cout << "rounds=" << r.loss.size() << " final_loss=" << dadam::csv::format(r.loss.back());
        if (!std::isnan(r.train_loss.back())) std::cout << " final_train_loss=" << dadam::csv::format(r.train_loss.back());
        std::cout << '\n';
        for (const auto& rep : r.reports)
          std::cout << rep.name << ": " << (rep.evaluable ? (rep.holds ? "holds" : "VIOLATED") : "not evaluable")
                    << '\n';
        for (const auto& f : r.written) std::cout << "wrote " << f << '\n';
      }
      return r.exit_code;
    }
    if (*cmp_cmd) {
      std::vector<dadam::ExperimentConfig> cfgs;
      for (const auto& p : cmp_opts.configs) cfgs.push_back(load(p, cmp_opts));
      const auto out = cmp_opts.out_dir.empty() ? cfgs.front().out_dir : std::filesystem::path(cmp_opts.out_dir);
      const auto path = dadam::compare(cfgs, out);
      if (!cmp_opts.quiet) std::cout << "wrote " << path.string() << '\n';
      return 0;
    }
    if (*sweep_cmd) {
      const auto cfg = load(sweep_opts.configs.front(), sweep_opts);
      const auto cells = dadam::sweep(cfg, axis, split(values), cfg.out_dir);
      int code = 0;
      for (const auto& c : cells) {
        if (!sweep_opts.quiet)
          std::cout << axis << '=' << c.value << " sigma2=" << dadam::csv::format(c.sigma2)
                    << " final_loss=" << dadam::csv::format(c.final_loss) << '\n';
        code = std::max(code, c.exit_code);
      }
      if (!sweep_opts.quiet) std::cout << "wrote " << (cfg.out_dir / "summary.csv").string() << '\n';
      return code;
    }
    if (*bound_cmd) {
      auto cfg = load(bound_opts.configs.front(), bound_opts);
      if (scale) cfg.bound_scale = *scale;
      const auto reports = dadam::bounds(cfg);
      if (!bound_opts.quiet) print_reports(reports);
      for (const auto& r : reports)
        if (r.evaluable && r.exact() && !r.holds) return 2;
      return 0;
    }
  } catch (const dadam::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 1;
}
