#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>

#include "dadam/metrics.hpp"
#include "dadam/random.hpp"

using namespace dadam;

namespace {

std::shared_ptr<const DataSource> targets(const std::vector<Matrix>& per_round, std::size_t agents) {
  // per_round[t-1] holds one target row per agent
  std::vector<DataBatch> local(agents);
  const std::size_t T = per_round.size(), p = per_round.front().cols();
  for (std::size_t i = 0; i < agents; ++i) {
    local[i].agent = i;
    local[i].features = Matrix(T, p);
    local[i].labels.assign(T, 0.0);
    for (std::size_t t = 0; t < T; ++t) local[i].features.set_row(t, per_round[t].row(i));
  }
  return std::make_shared<FiniteDataSource>(std::move(local), T, 1);
}

LossOracle quadratic(std::shared_ptr<const DataSource> src, std::size_t p, double nu = 0.0) {
  ProblemSpec spec;
  spec.kind = LossKind::quadratic_tracking;
  spec.p = p;
  spec.nu = nu;
  return make_loss(spec, std::move(src));
}

struct Simulated {
  RunRecord record;
  std::vector<Vector> minimizers;
};

Simulated simulate(const LossOracle& o, const MixingMatrix& w, const ConstraintSet& set, const HyperParams& h,
                   const Vector& x1) {
  const std::size_t n = o.agents(), p = o.spec().p, T = o.rounds();
  auto net = init_network(n, p, x1, h, w, set);
  Simulated s{RunRecord(n, p, h, w.sigma2()), {}};
  for (std::size_t t = 1; t <= T; ++t) {
    const Matrix x = net.iterates();
    Matrix g(n, p);
    Vector losses(n);
    for (std::size_t i = 0; i < n; ++i) {
      g.set_row(i, o.grad(x.row(i), i, t));
      losses[i] = o.value(x.row(i), i, t);
    }
    const double alpha = h.step_size(t, n);
    net.step(g);
    s.record.append(x, g, alpha, losses, net);
    s.minimizers.push_back(minimizer_oracle(o, t, set));
  }
  return s;
}

// Sort-based Euclidean projection onto the l1 ball, a different algorithm from the library's.
Vector l1_sort_projection(const Vector& z, double r) {
  double s = 0.0;
  for (double e : z) s += std::abs(e);
  if (s <= r) return z;
  Vector u(z.size());
  std::transform(z.begin(), z.end(), u.begin(), [](double e) { return std::abs(e); });
  std::sort(u.rbegin(), u.rend());
  double cum = 0.0, tau = 0.0;
  for (std::size_t k = 0; k < u.size(); ++k) {
    cum += u[k];
    const double cand = (cum - r) / static_cast<double>(k + 1);
    if (u[k] > cand) tau = cand;
  }
  Vector y(z.size());
  for (std::size_t d = 0; d < z.size(); ++d) y[d] = std::copysign(std::max(std::abs(z[d]) - tau, 0.0), z[d]);
  return y;
}

}  // namespace

TEST_CASE("path length") {
  CHECK(path_length({{0.0}, {1.0}, {3.0}}).total == 3.0);
  CHECK(path_length({{1.0, 2.0}, {1.0, 2.0}}).total == 0.0);
  CHECK(path_length({{4.0}}).total == 0.0);
  const auto pl = path_length({{0.0, 0.0}, {1.0, -1.0}, {0.5, -1.0}});
  CHECK(pl.per_coordinate == Vector{1.5, 1.0});
}

TEST_CASE("dynamic regret agrees with a double loop") {
  Rng rng = make_rng(3, {});
  for (std::size_t n = 1; n <= 3; ++n)
    for (std::size_t T = 1; T <= 5; ++T) {
      std::vector<Matrix> tg;
      for (std::size_t t = 0; t < T; ++t) {
        Matrix m(n, 2);
        for (auto& e : m.flat()) e = 2.0 * uniform01(rng) - 1.0;
        tg.push_back(m);
      }
      const auto o = quadratic(targets(tg, n), 2, 0.1);
      const auto w = n == 1 ? MixingMatrix(Matrix::identity(1)) : metropolis_weights(random_connected_graph(n, 1.0, 1));
      HyperParams h = preset("dadam", w.gap());
      const auto sim = simulate(o, w, ConstraintSet::box(2, -0.5, 0.5), h, Vector{0.3, -0.2});
      const auto reg = dynamic_regret(sim.record, sim.minimizers, o);
      double oracle = 0.0;
      for (std::size_t t = 1; t <= T; ++t) {
        for (std::size_t i = 0; i < n; ++i) {
          const auto x = sim.record.iterates(t).row(i);
          double v = 0.0;
          for (std::size_t d = 0; d < 2; ++d) v += 0.5 * (x[d] - tg[t - 1](i, d)) * (x[d] - tg[t - 1](i, d)) + 0.1 * x[d] * x[d];
          oracle += v / static_cast<double>(n);
        }
        for (std::size_t i = 0; i < n; ++i) {
          const auto& xs = sim.minimizers[t - 1];
          double v = 0.0;
          for (std::size_t d = 0; d < 2; ++d) v += 0.5 * (xs[d] - tg[t - 1](i, d)) * (xs[d] - tg[t - 1](i, d)) + 0.1 * xs[d] * xs[d];
          oracle -= v / static_cast<double>(n);
        }
        CHECK(std::abs(reg[t - 1] - oracle) <= 1e-12);
      }
    }
  const auto o = quadratic(targets({Matrix(1, 1, 0.0)}, 1), 1);
  const auto sim = simulate(o, MixingMatrix(Matrix::identity(1)), ConstraintSet::unconstrained(), preset("dadam"),
                            Vector{0.0});
  CHECK(dynamic_regret(sim.record, sim.minimizers, o).back() == 0.0);
  CHECK_THROWS(dynamic_regret(sim.record, {}, o));
}

TEST_CASE("projected gradient") {
  Rng rng = make_rng(5, {});
  for (int rep = 0; rep < 50; ++rep) {
    Vector x(3), m(3), vh(3);
    for (std::size_t d = 0; d < 3; ++d) {
      x[d] = 2.0 * uniform01(rng) - 1.0;
      m[d] = 2.0 * uniform01(rng) - 1.0;
      vh[d] = 0.01 + uniform01(rng);
    }
    const Vector g = projected_gradient(x, m, vh, x, 0.37, ConstraintSet::unconstrained(), 0.0);
    for (std::size_t d = 0; d < 3; ++d) CHECK(g[d] == doctest::Approx(m[d]).epsilon(1e-12));
  }
  CHECK(projected_gradient(Vector{1.0}, Vector{0.0}, Vector{1.0}, Vector{1.0}, 0.1, ConstraintSet::unconstrained(), 0.0) ==
        Vector{0.0});
  CHECK_THROWS_AS(projected_gradient(Vector{1.0}, Vector{1.0}, Vector{0.0}, Vector{1.0}, 0.1,
                                     ConstraintSet::unconstrained(), 0.0),
                  NumericalError);

  // x+ minimizes <y, m/sqrt(vh)> + |y - mixed|^2 / (2 alpha) over the l1 ball:
  // compare against projected gradient descent on that objective.
  for (int rep = 0; rep < 100; ++rep) {
    const std::size_t p = 2 + static_cast<std::size_t>(rep % 4);
    Vector x(p), m(p), vh(p), mixed(p);
    for (std::size_t d = 0; d < p; ++d) {
      m[d] = 2.0 * uniform01(rng) - 1.0;
      vh[d] = 0.01 + uniform01(rng);
      mixed[d] = 1.5 * (2.0 * uniform01(rng) - 1.0);
      x[d] = mixed[d];
    }
    const double alpha = 0.05 + uniform01(rng);
    const double r = 0.5 + uniform01(rng);
    const Vector G = projected_gradient(x, m, vh, mixed, alpha, ConstraintSet::l1_ball(r), 0.0);
    Vector y = l1_sort_projection(mixed, r);
    for (int it = 0; it < 2000; ++it) {
      Vector z(p);
      for (std::size_t d = 0; d < p; ++d) z[d] = y[d] - 0.5 * alpha * (m[d] / std::sqrt(vh[d]) + (y[d] - mixed[d]) / alpha);
      y = l1_sort_projection(z, r);
    }
    for (std::size_t d = 0; d < p; ++d) {
      const double plus = x[d] - alpha * G[d] / std::sqrt(vh[d]);
      CHECK(std::abs(plus - y[d]) <= 1e-8);
    }
  }
}

TEST_CASE("local regret") {
  // T = 1, one agent, unconstrained: G = m_1 = (1 - beta1) g_1
  const Matrix c(1, 2, 3.0);
  const auto o = quadratic(targets({c}, 1), 2);
  const MixingMatrix one(Matrix::identity(1));
  HyperParams h = preset("dadam");
  h.mode = Mode::nonconvex;
  const auto sim = simulate(o, one, ConstraintSet::unconstrained(), h, Vector{1.0, -1.0});
  const auto lr = local_regret(sim.record, o, one, ConstraintSet::unconstrained());
  const double g2 = (1.0 - 3.0) * (1.0 - 3.0) + (-1.0 - 3.0) * (-1.0 - 3.0);
  CHECK(lr.network.back() == doctest::Approx(0.01 * g2).epsilon(1e-12));

  // 50 drifting rounds: running minimum never increases
  SynthOptions s;
  s.kind = LossKind::quadratic_tracking;
  s.agents = 4;
  s.features = 3;
  s.rounds = 50;
  s.batch = 2;
  s.drift = 0.02;
  s.noise = 0.1;
  s.seed = 9;
  ProblemSpec spec;
  spec.kind = LossKind::quadratic_tracking;
  spec.p = 3;
  spec.batch = 2;
  const auto q = make_loss(spec, synth_stream(s));
  const auto w = metropolis_weights(random_connected_graph(4, 0.3, 2));
  HyperParams hn = preset("dadam", w.gap());
  hn.mode = Mode::nonconvex;
  hn.schedule = Schedule::constant;
  hn.alpha = 0.01;
  const auto box = ConstraintSet::box(3, -2.0, 2.0);
  const auto run = simulate(q, w, box, hn, Vector(3, 0.0));
  const auto reg = local_regret(run.record, q, w, box);
  for (std::size_t t = 1; t < reg.network.size(); ++t) CHECK(reg.network[t] <= reg.network[t - 1]);
  for (std::size_t t = 1; t < 50; ++t)
    for (std::size_t i = 0; i < 4; ++i) CHECK(reg.per_agent(t, i) <= reg.per_agent(t - 1, i));

  // a critical point of the aggregate loss with zero gradients gives zero
  const auto still = quadratic(targets({Matrix(1, 1, 0.5), Matrix(1, 1, 0.5)}, 1), 1);
  const auto z = simulate(still, one, ConstraintSet::unconstrained(), preset("dsgd"), Vector{0.5});
  CHECK(local_regret(z.record, still, one, ConstraintSet::unconstrained()).network.back() == 0.0);
}

TEST_CASE("consensus error") {
  const auto w = metropolis_weights(random_connected_graph(3, 0.5, 4));
  std::vector<Matrix> tg(20, Matrix(3, 2, 0.7));
  const auto o = quadratic(targets(tg, 3), 2);
  const auto sim = simulate(o, w, ConstraintSet::unconstrained(), preset("dadam", w.gap()), Vector{0.0, 1.0});
  const auto c = consensus_error(sim.record);
  for (double e : c.mean) CHECK(e <= 1e-14);
  CHECK(c.evaluable);
  CHECK(c.holds);

  const MixingMatrix one(Matrix::identity(1));
  std::vector<Matrix> single;
  for (int t = 0; t < 10; ++t) single.push_back(Matrix(1, 2, 0.1 * t));
  const auto o1 = quadratic(targets(single, 1), 2);
  const auto s1 = simulate(o1, one, ConstraintSet::unconstrained(), preset("dadam"), Vector{0.0, 0.0});
  const auto c1 = consensus_error(s1.record);
  for (std::size_t t = 0; t < 10; ++t) {
    CHECK(c1.mean[t] == 0.0);
    CHECK(c1.bound[t] > 0.0);
  }
  CHECK(c1.holds);
  CHECK(consensus_report(s1.record, c1).holds);

  // B_t from its definition with alpha_0 = alpha_1
  HyperParams h = preset("dadam");
  const std::vector<double> alphas{0.5, 0.4, 0.3};
  const auto b = network_error_bound(h, 0.6, alphas, 4);
  const double c0 = 2.0 * 2.0 / ((1.0 - h.eta()) * std::sqrt(0.001 * 0.1));
  CHECK(b[0] == doctest::Approx(c0 * 0.5));
  CHECK(b[1] == doctest::Approx(c0 * (0.5 * 0.6 + 0.5)));
  CHECK(b[2] == doctest::Approx(c0 * (0.5 * 0.36 + 0.5 * 0.6 + 0.4)));
  CHECK(network_error_bound(preset("dsgd"), 0.6, alphas, 4).empty());
}

TEST_CASE("theorem 1 report") {
  // zero gradients: every term vanishes and the report holds
  const MixingMatrix one(Matrix::identity(1));
  const auto zero = quadratic(targets(std::vector<Matrix>(5, Matrix(1, 2, 0.0)), 1), 2);
  HyperParams h = preset("dadam");
  h.lambda = 0.9;
  const auto box = ConstraintSet::box(2, -1.0, 1.0);
  const auto z = simulate(zero, one, box, h, Vector{0.0, 0.0});
  const auto rz = theorem1_bound(z.record, z.minimizers, box, zero);
  CHECK(rz.evaluable);
  CHECK(rz.measured == 0.0);
  CHECK(rz.bound >= 0.0);
  CHECK(rz.holds);

  // n = 1, T = 10 drifting quadratic
  std::vector<Matrix> tg;
  for (int t = 0; t < 10; ++t) tg.push_back(Matrix(1, 2, 0.2 + 0.05 * t));
  const auto o = quadratic(targets(tg, 1), 2);
  const auto sim = simulate(o, one, box, h, Vector{-0.5, 0.5});
  const auto r = theorem1_bound(sim.record, sim.minimizers, box, o);
  CHECK(r.evaluable);
  CHECK(r.exact());
  CHECK(r.holds);
  CHECK(r.slack > 0.0);
  REQUIRE(r.measured > 0.0);
  // shrink the bound below the measured regret: the report must flag it
  const auto scaled = theorem1_bound(sim.record, sim.minimizers, box, o, 0.5 * r.measured / r.bound);
  CHECK_FALSE(scaled.holds);
  CHECK(scaled.slack < 0.0);
  CHECK(r.to_text().find("holds=true") != std::string::npos);

  HyperParams bad = h;
  bad.lambda = 1.0;
  CHECK_FALSE(theorem1_unmet(bad, box).empty());
  CHECK_FALSE(theorem1_unmet(h, ConstraintSet::unconstrained()).empty());
  bad = h;
  bad.schedule = Schedule::constant;
  CHECK_FALSE(theorem1_unmet(bad, box).empty());
  CHECK(theorem1_unmet(h, box).empty());
}

TEST_CASE("corollary 3 formula") {
  HyperParams h = preset("dadam");
  h.mode = Mode::nonconvex;
  h.schedule = Schedule::constant;
  h.lambda = 0.9;
  for (std::size_t T = 8; T <= 4096; T *= 2)
    CHECK(corollary3_rhs(h, 4, 0.5, 2.0, 3.0, 2 * T) < corollary3_rhs(h, 4, 0.5, 2.0, 3.0, T));
  HyperParams h0 = h;
  h0.beta3 = 0.0;
  CHECK(corollary3_rhs(h, 4, 0.5, 2.0, 3.0, 100) > corollary3_rhs(h0, 4, 0.5, 2.0, 3.0, 100));
  CHECK(corollary3_step(0.9, 1.0, 2.0, 4.0) == doctest::Approx(1.1 / 16.0));
  CHECK(corollary3_unmet(h).empty());
  CHECK_FALSE(corollary3_unmet(preset("dadam")).empty());
}
