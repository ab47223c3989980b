// One line per acceptance criterion: PASS/FAIL, the measured quantity and the
// wall time. Exit status is nonzero if any criterion fails.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <string>

#include "dadam/harness.hpp"
#include "dadam/random.hpp"
#include "oracles.hpp"

using namespace dadam;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

fs::path source_dir() {
  if (const char* env = std::getenv("DADAM_SOURCE_DIR")) return env;
  return DADAM_DEFAULT_SOURCE_DIR;
}

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / "dadam_acceptance" / name;
  fs::remove_all(dir);
  return dir;
}

ExperimentConfig shipped(const std::string& rel, const std::string& out,
                         const std::map<std::string, std::string>& overrides = {}) {
  auto c = load_config(source_dir() / "configs" / rel, overrides);
  c.out_dir = scratch(out);
  return c;
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

int failures = 0;

void criterion(int k, const std::string& title, double budget_s, const std::function<Outcome()>& body) {
  const auto t0 = std::chrono::steady_clock::now();
  Outcome o;
  try {
    o = body();
  } catch (const std::exception& e) {
    o = {false, std::string("exception: ") + e.what()};
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (secs > budget_s) {
    o.pass = false;
    o.detail += "; over the " + fmt(budget_s) + " s budget";
  }
  if (!o.pass) ++failures;
  std::printf("%s %2d %s: %s (%.2f s)\n", o.pass ? "PASS" : "FAIL", k, title.c_str(), o.detail.c_str(), secs);
  std::fflush(stdout);
}

Matrix random_matrix(Rng& rng, std::size_t n, std::size_t p, double scale) {
  Matrix x(n, p);
  for (auto& v : x.flat()) v = scale * (2.0 * uniform01(rng) - 1.0);
  return x;
}

double frob_dev(const Matrix& x) {
  double s = 0.0;
  for (std::size_t d = 0; d < x.cols(); ++d) {
    double mean = 0.0;
    for (std::size_t i = 0; i < x.rows(); ++i) mean += x(i, d);
    mean /= static_cast<double>(x.rows());
    for (std::size_t i = 0; i < x.rows(); ++i) s += (x(i, d) - mean) * (x(i, d) - mean);
  }
  return std::sqrt(s);
}

Outcome centralized_equivalence() {
  const char* text = R"(
[experiment]
seed = 19
rounds = 100
[topology]
agents = 1
[problem]
kind = logistic
features = 8
batch = 10
nu = 0.1
[optimizer]
preset = damsgrad
epsilon = 0
alpha = 0.1
)";
  auto c = parse_config(text);
  c.out_dir = scratch("c1");
  const auto ex = build_experiment(c);
  const auto sim = simulate(ex);
  testing::AmsGrad ref(Vector(8, 0.0), 0.1, 0.9, 0.999);
  double worst = 0.0;
  for (std::size_t t = 1; t <= 100; ++t) {
    ref.step(ex.oracle->grad(ref.x, 0, t), t);
    const auto got = t < 100 ? sim.record.iterates(t + 1).row(0) : sim.final_iterates.row(0);
    for (std::size_t d = 0; d < 8; ++d) worst = std::max(worst, std::abs(got[d] - ref.x[d]));
  }
  return {worst <= 1e-12, "max |x - x_amsgrad| = " + fmt(worst) + " over 100 rounds"};
}

Outcome mixing_invariants() {
  Rng rng = make_rng(2, {});
  const double ratios[] = {0.2, 0.5, 1.0};
  double worst_contraction = 0.0, worst_www = -1.0;
  for (std::uint64_t k = 0; k < 50; ++k) {
    const std::size_t n = 2 + static_cast<std::size_t>(uniform01(rng) * 19);
    const auto g = random_connected_graph(n, ratios[k % 3], 1000 + k);
    if (!g.connected()) return {false, "graph " + std::to_string(k) + " disconnected"};
    const auto w = metropolis_weights(g, 1.0);
    if (auto why = doubly_stochastic_violation(w.weights(), 1e-12)) return {false, *why};
    for (std::size_t i = 0; i < n; ++i)
      if (!(w(i, i) > 0.0)) return {false, "nonpositive diagonal"};
    Matrix x = random_matrix(rng, n, 3, 1.0);
    Matrix power = Matrix::identity(n);
    for (int t = 1; t <= 20; ++t) {
      const Matrix y = consensus_apply(w, x);
      const double before = frob_dev(x);
      worst_contraction = std::max(worst_contraction, frob_dev(y) - w.sigma2() * before);
      x = y;
      power = multiply(power, w.weights());
      for (std::size_t i = 0; i < n; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < n; ++j) s += std::abs(power(i, j) - 1.0 / static_cast<double>(n));
        worst_www = std::max(worst_www, s - std::sqrt(static_cast<double>(n)) * std::pow(w.sigma2(), t));
      }
    }
  }
  return {worst_contraction <= 1e-12 && worst_www <= 1e-12,
          "50 graphs; max(|dev(WX)| - sigma2 |dev(X)|) = " + fmt(worst_contraction) +
              ", max row excess over sqrt(n) sigma2^t = " + fmt(worst_www)};
}

Outcome projection_oracle() {
  Rng rng = make_rng(3, {});
  double worst = 0.0;
  std::size_t nonexp_fail = 0, idem_fail = 0;
  auto point = [&](std::size_t p, double s) {
    Vector v(p);
    for (auto& e : v) e = s * (2.0 * uniform01(rng) - 1.0);
    return v;
  };
  auto metric = [&](std::size_t p) {
    Vector w(p);
    for (auto& e : w) e = std::pow(10.0, 2.0 * uniform01(rng) - 1.0);
    return Metric::diagonal(w);
  };
  auto make_set = [&](int kind, std::size_t p) {
    if (kind == 0) return ConstraintSet::box(point(p, 0.2), Vector(p, 0.5 + uniform01(rng)));
    if (kind == 1) return ConstraintSet::l2_ball(point(p, 0.5), 0.5 + uniform01(rng));
    return ConstraintSet::l1_ball(0.5 + uniform01(rng));
  };
  for (int kind = 0; kind < 3; ++kind) {
    for (int rep = 0; rep < 100; ++rep) {
      const std::size_t p = 1 + static_cast<std::size_t>(rep % 4);
      const auto set = make_set(kind, p);
      const auto a = metric(p);
      const auto x = point(p, 3.0);
      const auto y = project(set, a, x);
      const auto o = testing::grid_oracle(set, a, x, 4.0);
      for (std::size_t d = 0; d < p; ++d) worst = std::max(worst, std::abs(y[d] - o[d]));
    }
    for (int rep = 0; rep < 1000; ++rep) {
      const std::size_t p = 1 + static_cast<std::size_t>(rep % 4);
      const auto set = make_set(kind, p);
      const auto a = metric(p);
      const auto u = point(p, 4.0), v = point(p, 4.0);
      if (!validate_nonexpansive(set, a, u, v)) ++nonexp_fail;
      const auto pu = project(set, a, u);
      const auto ppu = project(set, a, pu);
      for (std::size_t d = 0; d < p; ++d)
        if (std::abs(ppu[d] - pu[d]) > 1e-12) {
          ++idem_fail;
          break;
        }
    }
  }
  return {worst <= 1e-5 && nonexp_fail == 0 && idem_fail == 0,
          "max |P - oracle| = " + fmt(worst) + " on 300 instances; " + std::to_string(nonexp_fail) +
              " nonexpansiveness and " + std::to_string(idem_fail) + " idempotence failures on 3000 pairs"};
}

Outcome moment_invariants() {
  std::size_t configs = 0, rounds = 0, violations = 0;
  std::string first;
  for (const auto& entry : fs::recursive_directory_iterator(source_dir() / "configs")) {
    if (entry.path().extension() != ".ini") continue;
    auto c = load_config(entry.path());
    c.out_dir = scratch("c4");
    const auto ex = build_experiment(c);
    const std::size_t n = ex.config.agents;
    std::vector<Vector> prev(n, Vector(ex.config.problem.p, 0.0));
    std::vector<double> gmax(n, 0.0);
    simulate(ex, [&](std::size_t t, const OptimizerNetwork& net, const Matrix& grads) {
      ++rounds;
      for (std::size_t i = 0; i < n; ++i) {
        const auto& s = net.agent(i);
        for (double g : grads.row(i)) gmax[i] = std::max(gmax[i], std::abs(g));
        double minf = 0.0;
        for (double m : s.m) minf = std::max(minf, std::abs(m));
        const bool m_bad = minf > gmax[i];
        bool v_bad = false;
        for (std::size_t d = 0; d < s.v_hat.size(); ++d) v_bad |= s.v_hat[d] < prev[i][d];
        if ((m_bad || v_bad) && violations++ == 0)
          first = entry.path().filename().string() + " round " + std::to_string(t) + " agent " +
                  std::to_string(i) + (m_bad ? ", |m| = " + fmt(minf) + " > " + fmt(gmax[i]) : ", v_hat decreased");
        prev[i] = s.v_hat;
      }
    });
    ++configs;
  }
  return {violations == 0 && configs > 0, std::to_string(configs) + " configs, " + std::to_string(rounds) +
                                              " rounds, " + std::to_string(violations) + " violations" +
                                              (first.empty() ? "" : " (first: " + first + ")")};
}

const BoundReport* find(const std::vector<BoundReport>& reports, const std::string& name) {
  for (const auto& r : reports)
    if (r.name == name) return &r;
  return nullptr;
}

Outcome theorem1() {
  const auto r = run(shipped("theorem1_quadratic.ini", "c5"));
  const auto* rep = find(r.reports, "theorem1");
  if (!rep) return {false, "no report"};
  const bool shape = r.record.agents() == 4 && r.record.rounds() == 200 && r.record.hyper().lambda == 0.9;
  return {shape && rep->evaluable && rep->holds && rep->slack > 0.0,
          "Reg^C_T = " + fmt(rep->measured) + " <= RHS " + fmt(rep->bound) + " (n=4, T=200, l1 ball)" +
              (rep->evaluable ? "" : "; not evaluable: " + rep->reason)};
}

Outcome consensus() {
  const auto r = run(shipped("section5/dadam.ini", "c6"));
  const auto& c = r.consensus;
  double worst = 0.0;
  for (std::size_t t = 0; t < c.mean.size() && c.evaluable; ++t) worst = std::max(worst, c.mean[t] / c.bound[t]);
  return {c.evaluable && c.holds && c.mean.size() == 1000 && r.record.agents() == 10,
          std::to_string(c.mean.size()) + " rounds, n=" + std::to_string(r.record.agents()) +
              ", max error/B_t = " + fmt(worst)};
}

Outcome corollary3() {
  const auto r = run(shipped("corollary3_quadratic.ini", "c7"));
  const auto* rep = find(r.reports, "corollary3");
  if (!rep) return {false, "no report"};
  bool monotone = !r.reg_n.empty();
  for (std::size_t t = 1; t < r.reg_n.size(); ++t) monotone &= r.reg_n[t] <= r.reg_n[t - 1];
  return {rep->evaluable && rep->holds && monotone && r.record.rounds() == 100,
          "Reg^N_T = " + fmt(rep->measured) + " <= RHS " + fmt(rep->bound) + ", alpha = " +
              fmt(r.record.hyper().alpha) + ", prefix series " + (monotone ? "nonincreasing" : "NOT monotone") +
              (rep->evaluable ? "" : "; not evaluable: " + rep->reason)};
}

Outcome section5_ordering() {
  std::string detail;
  bool ok = true;
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    std::map<std::string, double> final;
    for (const char* name : {"dadam", "damsgrad", "drmsprop", "dsgd"}) {
      auto c = shipped(std::string("section5/") + name + ".ini", "c8");
      c.seed = seed;
      c.bounds = false;
      final[name] = run(c).train_loss.back();
    }
    for (const char* name : {"dadam", "damsgrad", "drmsprop"}) ok &= final[name] <= final["dsgd"];
    detail += (seed > 1 ? "; " : "") + std::string("seed ") + std::to_string(seed) + ": dadam " + fmt(final["dadam"]) +
              ", damsgrad " + fmt(final["damsgrad"]) + ", drmsprop " + fmt(final["drmsprop"]) + ", dsgd " +
              fmt(final["dsgd"]);
  }
  return {ok, detail};
}

Outcome corrected_oracle() {
  auto c = shipped("corrected_logistic.ini", "c9", {{"experiment.rounds", "200"}});
  c.checkpoint = false;
  const auto ex = build_experiment(c);
  const Matrix& w = ex.mixing.weights();
  const Matrix wh = ex.mixing.w_hat();
  Matrix diff = w;
  for (std::size_t k = 0; k < diff.flat().size(); ++k) diff.flat()[k] -= wh.flat()[k];
  std::vector<Matrix> history;  // history[s] = X_s, with X_0 = X_1
  double worst = 0.0, scale = 0.0;
  bool emitted = true;
  std::size_t rounds = 0;
  simulate(ex, [&](std::size_t t, const OptimizerNetwork& net, const Matrix&) {
    if (history.empty()) history.push_back(net.previous_iterates());
    history.push_back(net.previous_iterates());
    Matrix sum(w.rows(), net.dim());
    for (std::size_t s = 0; s < t; ++s) {
      const Matrix term = multiply(diff, history[s]);
      for (std::size_t k = 0; k < sum.flat().size(); ++k) sum.flat()[k] += term.flat()[k];
    }
    for (std::size_t i = 0; i < net.agents(); ++i)
      for (std::size_t d = 0; d < net.dim(); ++d) {
        worst = std::max(worst, std::abs(net.agent(i).corr[d] - sum(i, d)));
        scale = std::max(scale, std::abs(sum(i, d)));
        emitted &= net.agent(i).x[d] == net.uncorrected_output()(i, d) + net.agent(i).corr[d];
      }
    ++rounds;
  });

  HyperParams h = ex.hyper;
  auto net = init_network(6, 4, Vector{0.5, -1.0, 2.0, 0.0}, h, ex.mixing, ConstraintSet::unconstrained());
  double zero = 0.0;
  for (int t = 0; t < 200; ++t) {
    net.step(Matrix(6, 4, 0.0));
    for (std::size_t i = 0; i < 6; ++i)
      for (double v : net.agent(i).corr) zero = std::max(zero, std::abs(v));
  }
  return {rounds == 200 && worst <= 1e-12 && emitted && zero == 0.0,
          "max |corr - literal sum| = " + fmt(worst) + " (largest entry " + fmt(scale) + ") over " +
              std::to_string(rounds) + " rounds; consensus start max |corr| = " + fmt(zero)};
}

Outcome unbiasedness() {
  std::string detail;
  bool ok = true;
  for (LossKind kind : {LossKind::logistic, LossKind::squared_hinge}) {
    SynthOptions s;
    s.kind = kind;
    s.agents = 2;
    s.features = 10;
    s.rounds = 2;
    s.batch = 10;
    s.seed = 29;
    ProblemSpec spec;
    spec.kind = kind;
    spec.p = 10;
    spec.batch = 10;
    spec.nu = 0.1;
    const auto oracle = make_loss(spec, synth_stream(s));
    Rng rng = make_rng(31, {});
    Vector x(10);
    for (auto& e : x) e = 2.0 * uniform01(rng) - 1.0;
    double worst = 0.0;
    for (std::size_t i = 0; i < 2; ++i) {
      const Vector exact = oracle.grad(x, i, i + 1);
      Vector mean(10, 0.0), sq(10, 0.0);
      const std::size_t draws = 10000;
      for (std::size_t k = 0; k < draws; ++k) {
        const Vector g = oracle.stochastic_grad(x, i, i + 1, k, 3);
        for (std::size_t d = 0; d < 10; ++d) {
          mean[d] += g[d];
          sq[d] += g[d] * g[d];
        }
      }
      for (std::size_t d = 0; d < 10; ++d) {
        const double m = mean[d] / draws;
        const double se = std::sqrt(std::max(sq[d] / draws - m * m, 0.0) / draws);
        const double z = se > 0.0 ? std::abs(m - exact[d]) / se : (m == exact[d] ? 0.0 : INFINITY);
        worst = std::max(worst, z);
      }
    }
    ok &= worst <= 3.0;
    detail += (detail.empty() ? "" : "; ") + std::string(to_string(kind)) + " max |mean - grad| = " + fmt(worst) + " SE";
  }
  return {ok, detail + " (10^4 draws, 20 coordinates each)"};
}

}  // namespace

int main() {
  criterion(1, "centralized equivalence with AMSGrad", 1.0, centralized_equivalence);
  criterion(2, "mixing matrix invariants", 5.0, mixing_invariants);
  criterion(3, "projection oracle, idempotence, nonexpansiveness", 30.0, projection_oracle);
  criterion(4, "v_hat monotone and moment bound on shipped configs", 120.0, moment_invariants);
  criterion(5, "dynamic regret bound (convex)", 10.0, theorem1);
  criterion(6, "consensus error below B_t", 30.0, consensus);
  criterion(7, "local regret bound (nonconvex)", 10.0, corollary3);
  criterion(8, "adaptive presets reach training loss <= dsgd", 120.0, section5_ordering);
  criterion(9, "corrected update equals the cumulative sum", 5.0, corrected_oracle);
  criterion(10, "stochastic gradients are unbiased", 30.0, unbiasedness);
  std::printf("%d of 10 criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
