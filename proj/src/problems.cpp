#include "dadam/problems.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "dadam/csv.hpp"
#include "dadam/kernels.hpp"
#include "dadam/random.hpp"

namespace dadam {

std::string_view to_string(LossKind k) {
  switch (k) {
    case LossKind::logistic: return "logistic";
    case LossKind::softmax: return "softmax";
    case LossKind::squared_hinge: return "squared_hinge";
    case LossKind::quadratic_tracking: return "quadratic_tracking";
  }
  return "?";
}

LossKind parse_loss_kind(std::string_view s) {
  if (s == "logistic") return LossKind::logistic;
  if (s == "softmax") return LossKind::softmax;
  if (s == "squared_hinge") return LossKind::squared_hinge;
  if (s == "quadratic_tracking" || s == "quadratic") return LossKind::quadratic_tracking;
  throw std::invalid_argument("unknown loss kind '" + std::string(s) + "'");
}

void ProblemSpec::validate() const {
  if (!(nu >= 0.0) || !std::isfinite(nu)) throw std::invalid_argument("nu must be >= 0");
  if (batch < 1) throw std::invalid_argument("batch must be >= 1");
  if (p < 1) throw std::invalid_argument("p must be >= 1");
  if (kind == LossKind::softmax && (classes < 2 || p % classes != 0))
    throw std::invalid_argument("softmax: p must be a multiple of classes >= 2");
}

namespace {

// Shuffle driven by uniform01 so orders do not depend on the standard library.
void shuffle(std::vector<std::size_t>& idx, Rng& rng) {
  for (std::size_t k = idx.size(); k > 1; --k) {
    const auto j = static_cast<std::size_t>(uniform01(rng) * static_cast<double>(k));
    std::swap(idx[k - 1], idx[std::min(j, k - 1)]);
  }
}

double normal(Rng& rng) {
  // Box-Muller on (0, 1]; deterministic across standard libraries.
  const double u1 = 1.0 - uniform01(rng);
  const double u2 = uniform01(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
}

DataBatch gather(const DataBatch& local, std::span<const std::size_t> rows, std::size_t i,
                 std::size_t t) {
  DataBatch b;
  b.features = Matrix(rows.size(), local.features.cols());
  b.labels.resize(rows.size());
  for (std::size_t j = 0; j < rows.size(); ++j) {
    b.features.set_row(j, local.features.row(rows[j]));
    b.labels[j] = local.labels[rows[j]];
  }
  b.round = t;
  b.agent = i;
  return b;
}

double logistic_loss(double margin) {
  return margin > 0 ? std::log1p(std::exp(-margin)) : -margin + std::log1p(std::exp(margin));
}

// 1 / (1 + exp(m)) without overflow.
double sigmoid_neg(double m) {
  if (m >= 0) {
    const double e = std::exp(-m);
    return e / (1.0 + e);
  }
  return 1.0 / (1.0 + std::exp(m));
}

}  // namespace

FiniteDataSource::FiniteDataSource(std::vector<DataBatch> local, std::size_t rounds, std::size_t batch,
                                   std::optional<std::uint64_t> shuffle_seed)
    : local_(std::move(local)), rounds_(rounds), batch_(batch), shuffle_seed_(shuffle_seed) {
  if (local_.empty()) throw std::invalid_argument("data source: no agents");
  if (batch_ < 1) throw std::invalid_argument("data source: batch must be >= 1");
  const std::size_t f = local_.front().features.cols();
  for (std::size_t i = 0; i < local_.size(); ++i) {
    const auto& d = local_[i];
    if (d.features.rows() == 0) throw std::invalid_argument("data source: agent " + std::to_string(i) + " has no rows");
    if (d.features.cols() != f) throw std::invalid_argument("data source: feature dimension mismatch at agent " + std::to_string(i));
    if (d.labels.size() != d.features.rows()) throw std::invalid_argument("data source: label count mismatch");
    if (shuffle_seed_ && d.features.rows() < batch_)
      throw std::invalid_argument("data source: agent " + std::to_string(i) + " has fewer rows than the batch");
  }
  const std::size_t n0 = local_.front().features.rows();
  rounds_per_epoch_ = shuffle_seed_ ? n0 / batch_ : (n0 + batch_ - 1) / batch_;
}

DataBatch FiniteDataSource::batch(std::size_t i, std::size_t t) const {
  if (t < 1 || t > rounds_) throw std::out_of_range("data source: round " + std::to_string(t) + " out of range");
  const DataBatch& d = local_.at(i);
  const std::size_t rows = d.features.rows();
  std::vector<std::size_t> pick(batch_);
  if (shuffle_seed_) {
    const std::size_t per_epoch = rows / batch_;
    const std::size_t epoch = (t - 1) / per_epoch;
    const std::size_t k = (t - 1) % per_epoch;
    std::vector<std::size_t> perm(rows);
    std::iota(perm.begin(), perm.end(), 0);
    Rng rng = make_rng(*shuffle_seed_, {i, epoch});
    shuffle(perm, rng);
    for (std::size_t j = 0; j < batch_; ++j) pick[j] = perm[k * batch_ + j];
  } else {
    for (std::size_t j = 0; j < batch_; ++j) pick[j] = ((t - 1) * batch_ + j) % rows;
  }
  return gather(d, pick, i, t);
}

namespace {

Vector feature_scales(const SynthOptions& o) {
  Rng rng = make_rng(o.seed, {0xfea7u});
  Vector s(o.features);
  for (double& e : s) e = std::pow(10.0, o.log10_scale_lo + (o.log10_scale_hi - o.log10_scale_lo) * uniform01(rng));
  return s;
}

// Ground-truth model (classes x features) with drift applied to coordinate 0 of row 0.
struct Truth {
  Matrix w;
  double drift;
  double at(std::size_t c, std::size_t d, std::size_t t) const {
    return w(c, d) + (c == 0 && d == 0 ? drift * static_cast<double>(t - 1) : 0.0);
  }
};

DataBatch classification_sample(const SynthOptions& o, const Truth& truth, const Vector& scale,
                                 std::size_t rows, Rng& rng, std::size_t t) {
  DataBatch b;
  b.features = Matrix(rows, o.features);
  b.labels.resize(rows);
  const std::size_t k = o.kind == LossKind::softmax ? o.classes : 1;
  Vector score(k);
  for (std::size_t j = 0; j < rows; ++j) {
    for (std::size_t d = 0; d < o.features; ++d) b.features(j, d) = normal(rng) * scale[d];
    for (std::size_t c = 0; c < k; ++c) {
      double s = 0.0;
      for (std::size_t d = 0; d < o.features; ++d) s += truth.at(c, d, t) * b.features(j, d);
      score[c] = std::clamp(s, -50.0, 50.0);
    }
    const double u = uniform01(rng);
    if (o.kind == LossKind::softmax) {
      const double mx = *std::max_element(score.begin(), score.end());
      double z = 0.0;
      for (double s : score) z += std::exp(s - mx);
      double acc = 0.0;
      std::size_t label = k - 1;
      for (std::size_t c = 0; c < k; ++c) {
        acc += std::exp(score[c] - mx) / z;
        if (u < acc) {
          label = c;
          break;
        }
      }
      b.labels[j] = static_cast<double>(label);
    } else {
      b.labels[j] = u < 1.0 / (1.0 + std::exp(-score[0])) ? 1.0 : -1.0;
    }
  }
  return b;
}

class OnlineClassificationSource : public DataSource {
 public:
  explicit OnlineClassificationSource(SynthOptions o) : o_(std::move(o)), scale_(feature_scales(o_)) {
    const std::size_t k = o_.kind == LossKind::softmax ? o_.classes : 1;
    Rng rng = make_rng(o_.seed, {0x7e57u});
    truth_.w = Matrix(k, o_.features);
    for (double& e : truth_.w.flat()) e = normal(rng);
    truth_.drift = o_.drift;
  }
  std::size_t agents() const override { return o_.agents; }
  std::size_t rounds() const override { return o_.rounds; }
  std::size_t feature_dim() const override { return o_.features; }
  DataBatch batch(std::size_t i, std::size_t t) const override {
    if (i >= o_.agents || t < 1 || t > o_.rounds) throw std::out_of_range("synthetic stream: (agent, round) out of range");
    Rng rng = make_rng(o_.seed, {i, t});
    DataBatch b = classification_sample(o_, truth_, scale_, o_.batch, rng, t);
    b.agent = i;
    b.round = t;
    return b;
  }

 private:
  SynthOptions o_;
  Vector scale_;
  Truth truth_;
};

// Agent i at round t: rows c_t + o_i + noise, with c_t = c_1 + (t-1) drift e_0 and
// sum_i o_i = 0, so the network minimizer path is c_t (before regularization).
class QuadraticTrackingSource : public DataSource {
 public:
  explicit QuadraticTrackingSource(SynthOptions o) : o_(std::move(o)) {
    Rng rng = make_rng(o_.seed, {0xc0u});
    Vector c1(o_.features);
    for (double& e : c1) e = normal(rng);
    offsets_ = Matrix(o_.agents, o_.features);
    for (double& e : offsets_.flat()) e = o_.spread * normal(rng);
    for (std::size_t d = 0; d < o_.features; ++d) {
      double mean = 0.0;
      for (std::size_t i = 0; i < o_.agents; ++i) mean += offsets_(i, d);
      mean /= static_cast<double>(o_.agents);
      for (std::size_t i = 0; i < o_.agents; ++i) offsets_(i, d) -= mean;
    }
    path_ = Matrix(o_.rounds, o_.features);
    for (std::size_t t = 0; t < o_.rounds; ++t) {
      path_.set_row(t, c1);
      path_(t, 0) += o_.drift * static_cast<double>(t);
    }
  }
  std::size_t agents() const override { return o_.agents; }
  std::size_t rounds() const override { return o_.rounds; }
  std::size_t feature_dim() const override { return o_.features; }
  const Matrix* target_path() const override { return &path_; }
  DataBatch batch(std::size_t i, std::size_t t) const override {
    if (i >= o_.agents || t < 1 || t > o_.rounds) throw std::out_of_range("synthetic stream: (agent, round) out of range");
    DataBatch b;
    b.features = Matrix(o_.batch, o_.features);
    b.labels.assign(o_.batch, 0.0);
    b.agent = i;
    b.round = t;
    Rng rng = make_rng(o_.seed, {i, t});
    for (std::size_t j = 0; j < o_.batch; ++j)
      for (std::size_t d = 0; d < o_.features; ++d)
        b.features(j, d) = path_(t - 1, d) + offsets_(i, d) + (o_.noise > 0 ? o_.noise * normal(rng) : 0.0);
    return b;
  }

 private:
  SynthOptions o_;
  Matrix offsets_;
  Matrix path_;
};

}  // namespace

std::shared_ptr<const DataSource> synth_stream(const SynthOptions& o) {
  if (!(o.drift >= 0.0)) throw std::invalid_argument("synth_stream: drift must be >= 0");
  if (o.agents < 1 || o.features < 1 || o.rounds < 1 || o.batch < 1)
    throw std::invalid_argument("synth_stream: agents, features, rounds and batch must be >= 1");
  if (o.kind == LossKind::quadratic_tracking) return std::make_shared<QuadraticTrackingSource>(o);
  if (o.kind == LossKind::softmax && o.classes < 2) throw std::invalid_argument("synth_stream: softmax needs >= 2 classes");
  if (o.samples_per_agent == 0) return std::make_shared<OnlineClassificationSource>(o);

  const Vector scale = feature_scales(o);
  Rng truth_rng = make_rng(o.seed, {0x7e57u});
  Truth truth;
  truth.w = Matrix(o.kind == LossKind::softmax ? o.classes : 1, o.features);
  for (double& e : truth.w.flat()) e = normal(truth_rng);
  truth.drift = 0.0;
  std::vector<DataBatch> local;
  for (std::size_t i = 0; i < o.agents; ++i) {
    Rng rng = make_rng(o.seed, {i, 0u});
    local.push_back(classification_sample(o, truth, scale, o.samples_per_agent, rng, 1));
    local.back().agent = i;
  }
  return std::make_shared<FiniteDataSource>(std::move(local), o.rounds, o.batch, derive_seed(o.seed, {0x5u}));
}

std::shared_ptr<const DataSource> load_csv(const std::filesystem::path& path, const CsvSchema& schema) {
  if (schema.agents < 1) throw std::invalid_argument("load_csv: agents must be >= 1");
  const csv::Table table = csv::read(path);
  if (table.rows.empty()) throw std::invalid_argument("load_csv: " + path.string() + " has no data rows (empty source)");
  std::size_t label_col;
  try {
    label_col = table.column(schema.label_column);
  } catch (const std::out_of_range&) {
    throw std::invalid_argument("load_csv: " + path.string() + " has no label column '" + schema.label_column + "'");
  }
  const std::size_t f = table.header.size() - 1;
  if (f == 0) throw std::invalid_argument("load_csv: no feature columns");
  const std::size_t rows = table.rows.size();
  Matrix features(rows, f);
  Vector labels(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    std::size_t d = 0;
    for (std::size_t c = 0; c < table.header.size(); ++c) {
      double value;
      try {
        value = csv::parse_double(table.rows[r][c]);
      } catch (const std::exception& e) {
        throw std::invalid_argument(path.string() + ":" + std::to_string(table.lines[r]) + ": column '" +
                                    table.header[c] + "': " + e.what());
      }
      if (!std::isfinite(value))
        throw std::invalid_argument(path.string() + ":" + std::to_string(table.lines[r]) + ": non-finite value");
      if (c == label_col) labels[r] = value;
      else features(r, d++) = value;
    }
  }
  std::vector<std::size_t> order(rows);
  std::iota(order.begin(), order.end(), 0);
  if (schema.permutation_seed) {
    Rng rng = make_rng(*schema.permutation_seed, {});
    shuffle(order, rng);
  }
  if (rows < schema.agents)
    throw std::invalid_argument("load_csv: " + std::to_string(rows) + " rows cannot cover " +
                                std::to_string(schema.agents) + " agents");
  std::vector<std::vector<std::size_t>> parts(schema.agents);
  for (std::size_t k = 0; k < rows; ++k) parts[k % schema.agents].push_back(order[k]);
  DataBatch all{features, labels, 0, 0};
  std::vector<DataBatch> local;
  for (std::size_t i = 0; i < schema.agents; ++i) local.push_back(gather(all, parts[i], i, 0));
  return std::make_shared<FiniteDataSource>(std::move(local), schema.rounds, schema.batch);
}

LossOracle::LossOracle(ProblemSpec spec, std::shared_ptr<const DataSource> source)
    : spec_(std::move(spec)), source_(std::move(source)) {
  spec_.validate();
  if (!source_) throw std::invalid_argument("make_loss: null data source");
  if (source_->feature_dim() != spec_.feature_dim())
    throw std::invalid_argument("make_loss: source has " + std::to_string(source_->feature_dim()) +
                                " features, problem expects " + std::to_string(spec_.feature_dim()));
  if (spec_.kind == LossKind::quadratic_tracking) {
    const std::size_t p = spec_.p;
    target_prefix_.assign(agents(), Matrix(rounds() + 1, p));
    for (std::size_t i = 0; i < agents(); ++i) {
      for (std::size_t t = 1; t <= rounds(); ++t) {
        const DataBatch b = source_->batch(i, t);
        if (b.features.rows() == 0) throw std::invalid_argument("make_loss: empty batch");
        auto row = target_prefix_[i].row(t);
        const auto prev = target_prefix_[i].row(t - 1);
        for (std::size_t d = 0; d < p; ++d) {
          double mean = 0.0;
          for (std::size_t j = 0; j < b.features.rows(); ++j) mean += b.features(j, d);
          row[d] = prev[d] + mean / static_cast<double>(b.features.rows());
        }
      }
    }
  }
}

LossOracle make_loss(const ProblemSpec& spec, std::shared_ptr<const DataSource> stream) {
  return LossOracle(spec, std::move(stream));
}

void LossOracle::check_labels(const DataBatch& b) const {
  if (b.features.rows() == 0)
    throw std::invalid_argument("loss: empty batch for agent " + std::to_string(b.agent) + " round " + std::to_string(b.round));
  for (std::size_t j = 0; j < b.labels.size(); ++j) {
    const double y = b.labels[j];
    bool ok = true;
    switch (spec_.kind) {
      case LossKind::logistic:
      case LossKind::squared_hinge: ok = y == 1.0 || y == -1.0; break;
      case LossKind::softmax: ok = y >= 0 && y < static_cast<double>(spec_.classes) && y == std::floor(y); break;
      case LossKind::quadratic_tracking: break;
    }
    if (!ok)
      throw std::invalid_argument("loss: label " + csv::format(y) + " out of domain for " + std::string(to_string(spec_.kind)) +
                                  " (agent " + std::to_string(b.agent) + ", round " + std::to_string(b.round) + ")");
  }
}

double LossOracle::batch_value(std::span<const double> x, const DataBatch& b) const {
  check_labels(b);
  const auto& k = kernels::active();
  const std::size_t f = b.features.cols();
  double total = 0.0;
  for (std::size_t j = 0; j < b.features.rows(); ++j) {
    const auto z = b.features.row(j);
    const double y = b.labels[j];
    switch (spec_.kind) {
      case LossKind::logistic: total += logistic_loss(y * k.dot(z, x)); break;
      case LossKind::squared_hinge: {
        const double s = std::max(0.0, 1.0 - y * k.dot(z, x));
        total += s * s;
        break;
      }
      case LossKind::softmax: {
        const std::size_t classes = spec_.classes;
        Vector score(classes);
        for (std::size_t c = 0; c < classes; ++c) score[c] = k.dot(z, x.subspan(c * f, f));
        const double mx = *std::max_element(score.begin(), score.end());
        double sum = 0.0;
        for (double s : score) sum += std::exp(s - mx);
        total += mx + std::log(sum) - score[static_cast<std::size_t>(y)];
        break;
      }
      case LossKind::quadratic_tracking: {
        double s = 0.0;
        for (std::size_t d = 0; d < f; ++d) s += (x[d] - z[d]) * (x[d] - z[d]);
        total += 0.5 * s;
        break;
      }
    }
  }
  return total / static_cast<double>(b.features.rows()) + spec_.nu * k.dot(x, x);
}

void LossOracle::batch_grad(std::span<const double> x, const DataBatch& b, std::span<const std::size_t> rows,
                            std::span<double> out) const {
  check_labels(b);
  const auto& k = kernels::active();
  const std::size_t f = b.features.cols();
  std::fill(out.begin(), out.end(), 0.0);
  const double inv = 1.0 / static_cast<double>(rows.size());
  Vector score(spec_.kind == LossKind::softmax ? spec_.classes : 0);
  for (std::size_t j : rows) {
    const auto z = b.features.row(j);
    const double y = b.labels[j];
    switch (spec_.kind) {
      case LossKind::logistic: k.axpy(out, -inv * y * sigmoid_neg(y * k.dot(z, x)), z); break;
      case LossKind::squared_hinge: {
        const double s = std::max(0.0, 1.0 - y * k.dot(z, x));
        if (s > 0) k.axpy(out, -2.0 * inv * s * y, z);
        break;
      }
      case LossKind::softmax: {
        const std::size_t classes = spec_.classes;
        for (std::size_t c = 0; c < classes; ++c) score[c] = k.dot(z, x.subspan(c * f, f));
        const double mx = *std::max_element(score.begin(), score.end());
        double sum = 0.0;
        for (double& s : score) sum += (s = std::exp(s - mx));
        for (std::size_t c = 0; c < classes; ++c) {
          const double coef = score[c] / sum - (static_cast<std::size_t>(y) == c ? 1.0 : 0.0);
          k.axpy(out.subspan(c * f, f), inv * coef, z);
        }
        break;
      }
      case LossKind::quadratic_tracking:
        for (std::size_t d = 0; d < f; ++d) out[d] += inv * (x[d] - z[d]);
        break;
    }
  }
  if (spec_.nu != 0.0) k.axpy(out, 2.0 * spec_.nu, x);
}

namespace {

void check_dim(std::span<const double> x, std::size_t p) {
  if (x.size() != p)
    throw std::invalid_argument("loss: point has dimension " + std::to_string(x.size()) + ", expected " + std::to_string(p));
}

}  // namespace

double LossOracle::value(std::span<const double> x, std::size_t i, std::size_t t) const {
  check_dim(x, spec_.p);
  return batch_value(x, source_->batch(i, t));
}

Vector LossOracle::grad(std::span<const double> x, std::size_t i, std::size_t t) const {
  check_dim(x, spec_.p);
  const DataBatch b = source_->batch(i, t);
  std::vector<std::size_t> rows(b.features.rows());
  std::iota(rows.begin(), rows.end(), 0);
  Vector g(spec_.p);
  batch_grad(x, b, rows, g);
  return g;
}

Vector LossOracle::stochastic_grad(std::span<const double> x, std::size_t i, std::size_t t,
                                   std::uint64_t sample_seed, std::size_t batch_size) const {
  check_dim(x, spec_.p);
  if (batch_size == 0) throw std::invalid_argument("stochastic_grad: batch of zero");
  const DataBatch b = source_->batch(i, t);
  const std::size_t avail = b.features.rows();
  if (batch_size > avail)
    throw std::invalid_argument("stochastic_grad: batch " + std::to_string(batch_size) + " exceeds the " +
                                std::to_string(avail) + " available samples");
  std::vector<std::size_t> idx(avail);
  std::iota(idx.begin(), idx.end(), 0);
  if (batch_size < avail) {
    Rng rng = make_rng(sample_seed, {i, t});
    for (std::size_t k = 0; k < batch_size; ++k) {
      const auto j = k + std::min(static_cast<std::size_t>(uniform01(rng) * static_cast<double>(avail - k)), avail - k - 1);
      std::swap(idx[k], idx[j]);
    }
    idx.resize(batch_size);
    std::sort(idx.begin(), idx.end());
  }
  Vector g(spec_.p);
  batch_grad(x, b, idx, g);
  return g;
}

double LossOracle::network_value(std::span<const double> x, std::size_t t) const {
  double s = 0.0;
  for (std::size_t i = 0; i < agents(); ++i) s += value(x, i, t);
  return s / static_cast<double>(agents());
}

Vector LossOracle::network_grad(std::span<const double> x, std::size_t t) const {
  Vector g(spec_.p);
  for (std::size_t i = 0; i < agents(); ++i) kernels::active().axpy(g, 1.0, grad(x, i, t));
  for (double& e : g) e /= static_cast<double>(agents());
  return g;
}

Vector LossOracle::aggregate_grad(std::span<const double> x, std::size_t i, std::size_t t) const {
  check_dim(x, spec_.p);
  if (t < 1 || t > rounds()) throw std::out_of_range("aggregate_grad: round out of range");
  Vector g(spec_.p);
  if (spec_.kind == LossKind::quadratic_tracking) {
    const auto pre = target_prefix_.at(i).row(t);
    const double tt = static_cast<double>(t);
    for (std::size_t d = 0; d < spec_.p; ++d) g[d] = (1.0 + 2.0 * spec_.nu) * x[d] - pre[d] / tt;
    return g;
  }
  for (std::size_t s = 1; s <= t; ++s) kernels::active().axpy(g, 1.0, grad(x, i, s));
  for (double& e : g) e /= static_cast<double>(t);
  return g;
}

double LossOracle::training_loss(std::span<const double> x) const {
  check_dim(x, spec_.p);
  double s = 0.0;
  for (std::size_t i = 0; i < agents(); ++i) {
    auto d = source_->local_data(i);
    if (!d) return std::numeric_limits<double>::quiet_NaN();
    d->agent = i;
    s += batch_value(x, *d);
  }
  return s / static_cast<double>(agents());
}

namespace {

double max_sq_feature_norm(const DataSource& src) {
  double best = 0.0;
  auto scan = [&](const DataBatch& b) {
    for (std::size_t j = 0; j < b.features.rows(); ++j) {
      double s = 0.0;
      for (double e : b.features.row(j)) s += e * e;
      best = std::max(best, s);
    }
  };
  if (src.local_data(0)) {
    for (std::size_t i = 0; i < src.agents(); ++i) scan(*src.local_data(i));
  } else {
    for (std::size_t i = 0; i < src.agents(); ++i)
      for (std::size_t t = 1; t <= src.rounds(); ++t) scan(src.batch(i, t));
  }
  return best;
}

// sup over the set of ||x||.
double max_norm(const ConstraintSet& set) {
  return std::visit(
      [](const auto& s) -> double {
        using S = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<S, Unconstrained>) {
          return std::numeric_limits<double>::infinity();
        } else if constexpr (std::is_same_v<S, Box>) {
          double r = 0.0;
          for (std::size_t d = 0; d < s.lo.size(); ++d) {
            const double m = std::max(std::abs(s.lo[d]), std::abs(s.hi[d]));
            r += m * m;
          }
          return std::sqrt(r);
        } else if constexpr (std::is_same_v<S, L2Ball>) {
          double r = 0.0;
          for (double c : s.center) r += c * c;
          return std::sqrt(r) + s.radius;
        } else {
          return s.radius;
        }
      },
      set.variant());
}

// sup over the set of ||a x - c|| (a convex function, so attained at an extreme point).
double max_affine_norm(const ConstraintSet& set, double a, std::span<const double> c) {
  return std::visit(
      [&](const auto& s) -> double {
        using S = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<S, Unconstrained>) {
          return std::numeric_limits<double>::infinity();
        } else if constexpr (std::is_same_v<S, Box>) {
          double r = 0.0;
          for (std::size_t d = 0; d < c.size(); ++d) {
            const double m = std::max(std::abs(a * s.lo[d] - c[d]), std::abs(a * s.hi[d] - c[d]));
            r += m * m;
          }
          return std::sqrt(r);
        } else if constexpr (std::is_same_v<S, L2Ball>) {
          double r = 0.0;
          for (std::size_t d = 0; d < c.size(); ++d) r += (a * s.center[d] - c[d]) * (a * s.center[d] - c[d]);
          return std::sqrt(r) + a * s.radius;
        } else {
          double base = 0.0;
          for (double e : c) base += e * e;
          double best = 0.0;
          for (std::size_t d = 0; d < c.size(); ++d)
            for (double sign : {-1.0, 1.0}) {
              const double v = a * sign * s.radius - c[d];
              best = std::max(best, base - c[d] * c[d] + v * v);
            }
          return std::sqrt(best);
        }
      },
      set.variant());
}

}  // namespace

Constant LossOracle::smoothness() const {
  if (spec_.smoothness_rho) return *spec_.smoothness_rho;
  const double reg = 2.0 * spec_.nu;
  switch (spec_.kind) {
    case LossKind::quadratic_tracking: return {1.0 + reg, false};
    case LossKind::logistic: return {0.25 * max_sq_feature_norm(*source_) + reg, true};
    case LossKind::squared_hinge: return {2.0 * max_sq_feature_norm(*source_) + reg, true};
    case LossKind::softmax: return {0.5 * max_sq_feature_norm(*source_) + reg, true};
  }
  return {std::numeric_limits<double>::infinity(), true};
}

Constant LossOracle::lipschitz(const ConstraintSet& set) const {
  if (spec_.lipschitz_L) return *spec_.lipschitz_L;
  if (!set.bounded()) return {std::numeric_limits<double>::infinity(), spec_.kind != LossKind::quadratic_tracking};
  const double a = 1.0 + 2.0 * spec_.nu;
  if (spec_.kind == LossKind::quadratic_tracking) {
    double best = 0.0;
    Vector mean(spec_.p);
    for (std::size_t i = 0; i < agents(); ++i)
      for (std::size_t t = 1; t <= rounds(); ++t) {
        const auto hi = target_prefix_[i].row(t);
        const auto lo = target_prefix_[i].row(t - 1);
        for (std::size_t d = 0; d < spec_.p; ++d) mean[d] = hi[d] - lo[d];
        best = std::max(best, max_affine_norm(set, a, mean));
      }
    return {best, false};
  }
  const double z = std::sqrt(max_sq_feature_norm(*source_));
  const double r = max_norm(set);
  const double reg = 2.0 * spec_.nu * r;
  switch (spec_.kind) {
    case LossKind::logistic: return {z + reg, true};
    case LossKind::squared_hinge: return {2.0 * (1.0 + z * r) * z + reg, true};
    case LossKind::softmax: return {std::sqrt(2.0) * z + reg, true};
    default: break;
  }
  return {std::numeric_limits<double>::infinity(), true};
}

Vector minimizer_oracle(const LossOracle& oracle, std::size_t t, const ConstraintSet& set, double tol,
                        std::size_t max_iter, const Vector* warm_start) {
  if (!(tol > 0.0)) throw std::invalid_argument("minimizer_oracle: tol must be > 0");
  const std::size_t p = oracle.spec().p;
  const Metric id = Metric::identity();
  if (oracle.spec().kind == LossKind::quadratic_tracking) {
    // grad f_t = (1 + 2 nu) x - mean target, isotropic: projecting the free minimizer is optimal.
    Vector c(p);
    for (std::size_t i = 0; i < oracle.agents(); ++i) {
      const DataBatch b = oracle.source().batch(i, t);
      for (std::size_t j = 0; j < b.features.rows(); ++j)
        for (std::size_t d = 0; d < p; ++d) c[d] += b.features(j, d) / static_cast<double>(b.features.rows());
    }
    const double scale = static_cast<double>(oracle.agents()) * (1.0 + 2.0 * oracle.spec().nu);
    for (double& e : c) e /= scale;
    return project(set, id, c);
  }

  auto g = [&](const Vector& x) { return oracle.network_grad(x, t); };
  auto residual = [&](const Vector& x, const Vector& gx) {
    Vector y(p);
    for (std::size_t d = 0; d < p; ++d) y[d] = x[d] - gx[d];
    y = project(set, id, y);
    double r = 0.0;
    for (std::size_t d = 0; d < p; ++d) r += (x[d] - y[d]) * (x[d] - y[d]);
    return std::sqrt(r);
  };

  // Accelerated projected gradient. Near the optimum function values stop
  // resolving progress, so both the backtracking test (local Lipschitz estimate)
  // and the momentum restart use gradients only.
  Vector x = project(set, id, warm_start ? *warm_start : Vector(p, 0.0));
  Vector y = x;
  double lip = 1.0;
  double momentum = 1.0;
  double res = std::numeric_limits<double>::infinity();
  Vector xn(p);
  for (std::size_t it = 0; it < max_iter; ++it) {
    const Vector gy = g(y);
    Vector gxn;
    for (;;) {
      for (std::size_t d = 0; d < p; ++d) xn[d] = y[d] - gy[d] / lip;
      xn = project(set, id, xn);
      gxn = g(xn);
      double dg = 0.0, dx = 0.0;
      for (std::size_t d = 0; d < p; ++d) {
        dg += (gxn[d] - gy[d]) * (gxn[d] - gy[d]);
        dx += (xn[d] - y[d]) * (xn[d] - y[d]);
      }
      if (std::sqrt(dg) <= lip * std::sqrt(dx) * (1.0 + 1e-12)) break;
      lip *= 2.0;
      if (!std::isfinite(lip)) throw NumericalError("minimizer_oracle: step size underflow at round " + std::to_string(t));
    }
    double turn = 0.0;
    for (std::size_t d = 0; d < p; ++d) turn += (y[d] - xn[d]) * (xn[d] - x[d]);
    if (turn > 0.0) momentum = 1.0;
    const double next = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * momentum * momentum));
    for (std::size_t d = 0; d < p; ++d) y[d] = xn[d] + (momentum - 1.0) / next * (xn[d] - x[d]);
    momentum = next;
    x = xn;
    res = residual(x, gxn);
    if (res <= tol) return x;
    lip *= 0.95;
  }
  throw NumericalError("minimizer_oracle: no convergence at round " + std::to_string(t) + " after " +
                       std::to_string(max_iter) + " iterations, residual " + csv::format(res));
}

double estimate_noise_second_moment(const LossOracle& oracle, std::span<const double> x, std::size_t i,
                                    std::size_t t, std::size_t batch_size, std::size_t draws, std::uint64_t seed) {
  if (draws == 0) throw std::invalid_argument("estimate_noise_second_moment: draws must be >= 1");
  double s = 0.0;
  for (std::size_t k = 0; k < draws; ++k) {
    const Vector g = oracle.stochastic_grad(x, i, t, derive_seed(seed, {k}), batch_size);
    s += kernels::active().dot(g, g);
  }
  return s / static_cast<double>(draws);
}

void export_batches(const DataSource& source, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  std::vector<std::string> header{"agent", "round", "label"};
  for (std::size_t d = 0; d < source.feature_dim(); ++d) header.push_back("z" + std::to_string(d));
  csv::write_row(out, header);
  Vector row;
  for (std::size_t t = 1; t <= source.rounds(); ++t)
    for (std::size_t i = 0; i < source.agents(); ++i) {
      const DataBatch b = source.batch(i, t);
      for (std::size_t j = 0; j < b.features.rows(); ++j) {
        row.assign({static_cast<double>(i), static_cast<double>(t), b.labels[j]});
        row.insert(row.end(), b.features.row(j).begin(), b.features.row(j).end());
        csv::write_row(out, row);
      }
    }
}

}  // namespace dadam
