#include "dadam/optimizer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

#include "dadam/csv.hpp"
#include "dadam/kernels.hpp"

namespace dadam {

std::string_view to_string(Schedule s) {
  switch (s) {
    case Schedule::inv_sqrt_t: return "inv_sqrt_t";
    case Schedule::constant: return "constant";
    case Schedule::inv_sqrt_nT: return "inv_sqrt_nT";
  }
  return "?";
}

std::string_view to_string(Mode m) { return m == Mode::convex ? "convex" : "nonconvex"; }

Schedule parse_schedule(std::string_view s) {
  if (s == "inv_sqrt_t") return Schedule::inv_sqrt_t;
  if (s == "constant") return Schedule::constant;
  if (s == "inv_sqrt_nT") return Schedule::inv_sqrt_nT;
  throw std::invalid_argument("unknown schedule '" + std::string(s) + "'");
}

Mode parse_mode(std::string_view s) {
  if (s == "convex") return Mode::convex;
  if (s == "nonconvex") return Mode::nonconvex;
  throw std::invalid_argument("unknown mode '" + std::string(s) + "'");
}

double HyperParams::eta() const {
  if (beta1 == 0.0) return 0.0;
  if (beta2 == 0.0) return INFINITY;
  return beta1 / std::sqrt(beta2);
}

double HyperParams::beta1_at(std::size_t t) const {
  return lambda == 1.0 ? beta1 : beta1 * std::pow(lambda, static_cast<double>(t - 1));
}

double HyperParams::step_size(std::size_t t, std::size_t n_agents) const {
  switch (schedule) {
    case Schedule::inv_sqrt_t: return alpha / std::sqrt(static_cast<double>(t));
    case Schedule::constant: return alpha;
    case Schedule::inv_sqrt_nT:
      return alpha / std::sqrt(static_cast<double>(n_agents) * static_cast<double>(horizon.value_or(1)));
  }
  return alpha;
}

void HyperParams::validate() const {
  auto in_unit = [](double b) { return b >= 0.0 && b < 1.0; };
  if (!(alpha > 0.0) || !std::isfinite(alpha)) throw std::invalid_argument("alpha: must be positive");
  if (!in_unit(beta1)) throw std::invalid_argument("beta1: must lie in [0, 1)");
  if (!in_unit(beta2)) throw std::invalid_argument("beta2: must lie in [0, 1)");
  if (!(beta3 >= 0.0 && beta3 <= kMaxBeta3))
    throw std::invalid_argument("beta3: must lie in [0, " + csv::format(kMaxBeta3) + "]");
  if (!(lambda > 0.0 && lambda <= 1.0)) throw std::invalid_argument("lambda: must lie in (0, 1]");
  if (!(epsilon >= 0.0) || !std::isfinite(epsilon)) throw std::invalid_argument("epsilon: must be >= 0");
  if (adaptivity == Adaptivity::relaxed_max && !(eta() < 1.0))
    throw std::invalid_argument("beta1/beta2: eta = beta1/sqrt(beta2) = " + csv::format(eta()) +
                                " must be < 1");
  if (schedule == Schedule::inv_sqrt_nT && (!horizon || *horizon == 0))
    throw std::invalid_argument("schedule: inv_sqrt_nT needs a declared horizon T");
}

const std::vector<std::string>& preset_names() {
  static const std::vector<std::string> names{"dadam",    "damsgrad", "drmsprop",
                                              "dadagrad", "dsgd",     "dsgd_momentum"};
  return names;
}

HyperParams preset(std::string_view name, double spectral_gap) {
  if (!(spectral_gap > 0.0 && spectral_gap <= 1.0))
    throw std::invalid_argument("preset: spectral gap must lie in (0, 1]");
  HyperParams h;
  h.name = std::string(name);
  h.alpha = std::sqrt(spectral_gap);
  h.schedule = Schedule::inv_sqrt_t;
  if (name == "dadam") {
    h.beta1 = 0.9, h.beta2 = 0.999, h.beta3 = 0.9;
  } else if (name == "damsgrad") {
    h.beta1 = 0.9, h.beta2 = 0.999, h.beta3 = 0.0;
  } else if (name == "drmsprop") {
    h.beta1 = 0.0, h.beta2 = 0.999, h.beta3 = 0.0;
  } else if (name == "dadagrad") {
    h.beta1 = 0.0, h.beta2 = 0.0, h.beta3 = 0.0;
    h.adaptivity = Adaptivity::running_mean;
  } else if (name == "dsgd") {
    h.beta1 = 0.0, h.beta2 = 0.0, h.beta3 = 0.0;
    h.adaptivity = Adaptivity::none;
  } else if (name == "dsgd_momentum") {
    h.beta1 = 0.9, h.beta2 = 0.0, h.beta3 = 0.0;
    h.adaptivity = Adaptivity::none;
  } else {
    throw std::invalid_argument("unknown preset '" + std::string(name) + "'");
  }
  return h;
}

namespace {

void require_finite(std::span<const double> g, std::size_t agent, std::size_t t) {
  for (std::size_t d = 0; d < g.size(); ++d)
    if (!std::isfinite(g[d]))
      throw NumericalError("non-finite gradient at round " + std::to_string(t) + ", agent " +
                           std::to_string(agent) + ", coordinate " + std::to_string(d));
}

}  // namespace

void local_moments_update(AgentState& s, std::span<const double> g, std::size_t t,
                          const HyperParams& hyper, std::size_t agent) {
  if (g.size() != s.m.size()) throw std::invalid_argument("local_moments_update: dimension mismatch");
  require_finite(g, agent, t);
  const auto& k = kernels::active();
  const double b1 = hyper.beta1_at(t);
  switch (hyper.adaptivity) {
    case Adaptivity::relaxed_max:
      k.moment_update(s.m, s.v, s.v_hat, g, b1, hyper.beta2, hyper.beta3);
      break;
    case Adaptivity::running_mean: {
      const double keep = static_cast<double>(t - 1) / static_cast<double>(t);
      for (std::size_t d = 0; d < g.size(); ++d) {
        s.m[d] = b1 * s.m[d] + (1.0 - b1) * g[d];
        s.v[d] = keep * s.v[d] + (g[d] * g[d]) / static_cast<double>(t);
        const double prev = s.v_hat[d];
        s.v_hat[d] = prev + (1.0 - hyper.beta3) * (std::max(prev, s.v[d]) - prev);
      }
      break;
    }
    case Adaptivity::none:
      for (std::size_t d = 0; d < g.size(); ++d) s.m[d] = b1 * s.m[d] + (1.0 - b1) * g[d];
      break;
  }
  s.round = t;
}

OptimizerNetwork::OptimizerNetwork(MixingMatrix w, ConstraintSet set, HyperParams hyper,
                                   const Matrix& x1)
    : w_(std::move(w)), set_(std::move(set)), hyper_(std::move(hyper)), p_(x1.cols()) {
  hyper_.validate();
  if (x1.rows() != w_.size())
    throw std::invalid_argument("init_network: mixing matrix is " + std::to_string(w_.size()) +
                                "x" + std::to_string(w_.size()) + " but " +
                                std::to_string(x1.rows()) + " starting points were given");
  agents_.reserve(x1.rows());
  for (std::size_t i = 0; i < x1.rows(); ++i) {
    AgentState s(p_);
    s.x = project(set_, Metric::identity(), x1.row(i));
    s.round = 0;
    agents_.push_back(std::move(s));
  }
  previous_ = iterates();
  uncorrected_ = previous_;
}

OptimizerNetwork init_network(std::size_t n, std::size_t p, std::span<const double> x1,
                              const HyperParams& hyper, const MixingMatrix& w,
                              const ConstraintSet& set) {
  if (x1.size() != p) throw std::invalid_argument("init_network: x1 has dimension " +
                                                  std::to_string(x1.size()) + ", expected " + std::to_string(p));
  Matrix start(n, p);
  for (std::size_t i = 0; i < n; ++i) start.set_row(i, x1);
  return OptimizerNetwork(w, set, hyper, start);
}

Matrix OptimizerNetwork::iterates() const {
  Matrix x(agents_.size(), p_);
  for (std::size_t i = 0; i < agents_.size(); ++i) x.set_row(i, agents_[i].x);
  return x;
}

void OptimizerNetwork::step(const Matrix& grads) {
  const std::size_t n = agents_.size();
  if (grads.rows() != n || grads.cols() != p_)
    throw std::invalid_argument("step: gradient matrix must be " + std::to_string(n) + "x" +
                                std::to_string(p_));
  const std::size_t t = t_;
  for (std::size_t i = 0; i < n; ++i) require_finite(grads.row(i), i, t);

  // Local moments, then the gossip average of the round-t snapshot.
  for (std::size_t i = 0; i < n; ++i) local_moments_update(agents_[i], grads.row(i), t, hyper_, i);
  const Matrix current = iterates();
  const Matrix mixed = consensus_apply(w_, current);
  const double alpha_t = hyper_.step_size(t, n);
  const auto& k = kernels::active();

  Matrix next(n, p_);
  Vector target(p_);
  Vector weights(p_);
  for (std::size_t i = 0; i < n; ++i) {
    const AgentState& s = agents_[i];
    Metric metric = Metric::identity();
    if (hyper_.adaptivity == Adaptivity::none) {
      std::copy(mixed.row(i).begin(), mixed.row(i).end(), target.begin());
      k.axpy(target, -alpha_t, s.m);
    } else {
      k.adaptive_step(target, mixed.row(i), s.m, s.v_hat, alpha_t, hyper_.epsilon);
      for (std::size_t d = 0; d < p_; ++d)
        if (!std::isfinite(target[d]))
          throw NumericalError("non-finite adaptive step at round " + std::to_string(t) + ", agent " +
                               std::to_string(i) + ", coordinate " + std::to_string(d) +
                               " (zero second moment with epsilon = 0?)");
      if (hyper_.mode == Mode::convex && set_.bounded()) {
        k.sqrt_plus(weights, s.v_hat, hyper_.epsilon);
        metric = Metric::diagonal(weights);
      }
    }
    next.set_row(i, project(set_, metric, target));
  }

  uncorrected_ = next;
  if (hyper_.corrected) corrected_adjust(next);
  previous_ = current;
  for (std::size_t i = 0; i < n; ++i) {
    agents_[i].x.assign(next.row(i).begin(), next.row(i).end());
    agents_[i].round = t;
  }
  ++t_;
}

// corr_{i,t} = corr_{i,t-1} + sum_j [W - W_hat]_ij x_{j,t-1}, with W - W_hat = (W - I)/2
// and X_0 taken equal to X_1.
void OptimizerNetwork::corrected_adjust(Matrix& next) {
  const Matrix mixed_prev = consensus_apply(w_, previous_);
  for (std::size_t i = 0; i < agents_.size(); ++i) {
    Vector& corr = agents_[i].corr;
    for (std::size_t d = 0; d < p_; ++d) {
      corr[d] += 0.5 * (mixed_prev(i, d) - previous_(i, d));
      next(i, d) += corr[d];
    }
  }
}

Vector OptimizerNetwork::network_average() const {
  Vector avg(p_, 0.0);
  for (const auto& s : agents_)
    for (std::size_t d = 0; d < p_; ++d) avg[d] += s.x[d];
  for (double& e : avg) e /= static_cast<double>(agents_.size());
  return avg;
}

OptimizerNetwork OptimizerNetwork::restore(MixingMatrix w, ConstraintSet set, HyperParams hyper,
                                           std::vector<AgentState> states, Matrix previous) {
  if (states.empty()) throw std::invalid_argument("restore: no agent states");
  Matrix x(states.size(), states[0].x.size());
  for (std::size_t i = 0; i < states.size(); ++i) x.set_row(i, states[i].x);
  OptimizerNetwork net(std::move(w), std::move(set), std::move(hyper), x);
  if (previous.rows() != states.size() || previous.cols() != net.p_)
    throw std::invalid_argument("restore: previous iterates have the wrong shape");
  net.t_ = states[0].round + 1;
  net.agents_ = std::move(states);
  net.previous_ = std::move(previous);
  net.uncorrected_ = net.iterates();
  return net;
}

CheckpointWriter::CheckpointWriter(std::filesystem::path dir, std::size_t n, std::size_t p)
    : dir_(std::move(dir)), n_(n), p_(p) {
  std::filesystem::create_directories(dir_);
  std::vector<std::string> header{"round"};
  for (const char* block : {"x", "m", "v", "vhat", "corr"})
    for (std::size_t d = 0; d < p_; ++d) header.push_back(std::string(block) + "_" + std::to_string(d));
  for (std::size_t i = 0; i < n_; ++i) {
    std::ofstream out(agent_file(dir_, i), std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + agent_file(dir_, i).string());
    csv::write_row(out, header);
  }
}

std::filesystem::path CheckpointWriter::agent_file(const std::filesystem::path& dir, std::size_t i) {
  return dir / ("agent_" + std::to_string(i) + ".csv");
}

void CheckpointWriter::append(const OptimizerNetwork& net) {
  for (std::size_t i = 0; i < n_; ++i) {
    const AgentState& s = net.agent(i);
    Vector row;
    row.reserve(1 + 5 * p_);
    row.push_back(static_cast<double>(net.round() - 1));
    for (const Vector* block : {&s.x, &s.m, &s.v, &s.v_hat, &s.corr}) row.insert(row.end(), block->begin(), block->end());
    std::ofstream out(agent_file(dir_, i), std::ios::app);
    csv::write_row(out, row);
  }
}

std::vector<AgentState> read_checkpoint(const std::filesystem::path& file) {
  const csv::Table t = csv::read(file);
  if (t.header.empty() || t.header[0] != "round" || (t.header.size() - 1) % 5 != 0)
    throw std::runtime_error(file.string() + ": not a checkpoint file");
  const std::size_t p = (t.header.size() - 1) / 5;
  std::vector<AgentState> out;
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    AgentState s(p);
    try {
      s.round = static_cast<std::size_t>(csv::parse_double(t.rows[r][0]));
      Vector* blocks[] = {&s.x, &s.m, &s.v, &s.v_hat, &s.corr};
      for (std::size_t b = 0; b < 5; ++b)
        for (std::size_t d = 0; d < p; ++d) (*blocks[b])[d] = csv::parse_double(t.rows[r][1 + b * p + d]);
    } catch (const std::invalid_argument& e) {
      throw std::runtime_error(file.string() + ":" + std::to_string(t.lines[r]) + ": " + e.what());
    }
    out.push_back(std::move(s));
  }
  return out;
}

OptimizerNetwork resume_network(MixingMatrix w, ConstraintSet set, HyperParams hyper,
                                const std::filesystem::path& dir) {
  const std::size_t n = w.size();
  std::vector<AgentState> last;
  Matrix previous;
  for (std::size_t i = 0; i < n; ++i) {
    auto rows = read_checkpoint(CheckpointWriter::agent_file(dir, i));
    if (rows.empty()) throw std::runtime_error("checkpoint for agent " + std::to_string(i) + " is empty");
    if (previous.empty()) previous = Matrix(n, rows.back().x.size());
    const AgentState& prev = rows.size() >= 2 ? rows[rows.size() - 2] : rows.back();
    previous.set_row(i, prev.x);
    last.push_back(rows.back());
  }
  return OptimizerNetwork::restore(std::move(w), std::move(set), std::move(hyper), std::move(last),
                                   std::move(previous));
}

}  // namespace dadam
