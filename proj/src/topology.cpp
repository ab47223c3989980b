#include "dadam/topology.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <queue>
#include <sstream>
#include <stdexcept>

#include "dadam/csv.hpp"
#include "dadam/kernels.hpp"
#include "dadam/random.hpp"

namespace dadam {

Graph::Graph(std::size_t n) : n_(n), adjacency_(n) {
  if (n == 0) throw std::invalid_argument("Graph: need at least one node");
}

Graph::Graph(std::size_t n, const std::vector<std::pair<std::size_t, std::size_t>>& edges)
    : Graph(n) {
  for (auto [i, j] : edges) add_edge(i, j);
}

bool Graph::has_edge(std::size_t i, std::size_t j) const {
  const auto& a = adjacency_.at(i);
  return std::find(a.begin(), a.end(), j) != a.end();
}

void Graph::add_edge(std::size_t i, std::size_t j) {
  if (i >= n_ || j >= n_) throw std::out_of_range("Graph::add_edge: node out of range");
  if (i == j) throw std::invalid_argument("Graph::add_edge: self-loops are not allowed");
  if (has_edge(i, j)) return;
  const std::pair<std::size_t, std::size_t> e{std::min(i, j), std::max(i, j)};
  edges_.insert(std::upper_bound(edges_.begin(), edges_.end(), e), e);
  auto insert_sorted = [](std::vector<std::size_t>& v, std::size_t x) {
    v.insert(std::upper_bound(v.begin(), v.end(), x), x);
  };
  insert_sorted(adjacency_[i], j);
  insert_sorted(adjacency_[j], i);
}

bool Graph::connected() const {
  std::vector<bool> seen(n_, false);
  std::queue<std::size_t> frontier;
  frontier.push(0);
  seen[0] = true;
  std::size_t visited = 1;
  while (!frontier.empty()) {
    const std::size_t u = frontier.front();
    frontier.pop();
    for (std::size_t v : adjacency_[u])
      if (!seen[v]) {
        seen[v] = true;
        ++visited;
        frontier.push(v);
      }
  }
  return visited == n_;
}

Graph random_connected_graph(std::size_t n, double ratio, std::uint64_t seed) {
  if (n == 0) throw std::invalid_argument("random_connected_graph: n must be >= 1");
  if (!(ratio >= 0.0 && ratio <= 1.0))
    throw std::invalid_argument("random_connected_graph: ratio must lie in [0, 1]");
  Graph g(n);
  if (n == 1) return g;
  Rng rng = make_rng(seed, {0x746f706fULL});

  // Decoding a uniform Prüfer sequence gives a uniform labeled spanning tree.
  if (n == 2) {
    g.add_edge(0, 1);
  } else {
    std::vector<std::size_t> code(n - 2);
    for (auto& c : code) c = static_cast<std::size_t>(uniform01(rng) * static_cast<double>(n));
    std::vector<std::size_t> degree(n, 1);
    for (std::size_t c : code) ++degree[c];
    for (std::size_t c : code) {
      std::size_t leaf = 0;
      while (degree[leaf] != 1) ++leaf;
      g.add_edge(leaf, c);
      --degree[leaf];
      --degree[c];
    }
    std::size_t u = n, v = n;
    for (std::size_t k = 0; k < n; ++k)
      if (degree[k] == 1) (u == n ? u : v) = k;
    g.add_edge(u, v);
  }

  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      if (g.has_edge(i, j)) continue;
      if (uniform01(rng) < ratio) g.add_edge(i, j);
    }
  return g;
}

std::optional<std::string> doubly_stochastic_violation(const Matrix& w, double tol) {
  if (w.rows() != w.cols() || w.rows() == 0) return "matrix is not square and nonempty";
  const std::size_t n = w.rows();
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      if (!std::isfinite(w(i, j))) return "non-finite entry at (" + std::to_string(i) + "," + std::to_string(j) + ")";
      s += w(i, j);
    }
    if (std::abs(s - 1.0) > tol)
      return "row " + std::to_string(i) + " sums to " + csv::format(s);
  }
  for (std::size_t j = 0; j < n; ++j) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += w(i, j);
    if (std::abs(s - 1.0) > tol)
      return "column " + std::to_string(j) + " sums to " + csv::format(s);
  }
  for (std::size_t i = 0; i < n; ++i)
    if (!(w(i, i) > 0.0))
      return "diagonal entry " + std::to_string(i) + " is " + csv::format(w(i, i)) + ", must be positive";
  return std::nullopt;
}

namespace {

// Projection onto the complement of the all-ones direction.
void remove_mean(std::span<double> x) {
  double s = 0.0;
  for (double e : x) s += e;
  s /= static_cast<double>(x.size());
  for (double& e : x) e -= s;
}

double norm2(std::span<const double> x) {
  double s = 0.0;
  for (double e : x) s += e * e;
  return std::sqrt(s);
}

Vector mat_vec(const Matrix& a, std::span<const double> x) {
  Vector y(a.rows(), 0.0);
  for (std::size_t i = 0; i < a.rows(); ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < a.cols(); ++j) s += a(i, j) * x[j];
    y[i] = s;
  }
  return y;
}

}  // namespace

SpectralData spectral_gap(const Matrix& w) {
  if (auto why = doubly_stochastic_violation(w)) throw std::invalid_argument("spectral_gap: " + *why);
  const std::size_t n = w.rows();
  if (n == 1) return {0.0, 1.0};

  // Deflated Gram matrix B = P W^T W P, P = I - 11^T/n. Its top eigenvalue is sigma2^2.
  Matrix gram = multiply(w.transposed(), w);
  Matrix b(n, n);
  {
    Vector rm(n, 0.0), cm(n, 0.0);
    double all = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) {
        rm[i] += gram(i, j) / static_cast<double>(n);
        cm[j] += gram(i, j) / static_cast<double>(n);
        all += gram(i, j);
      }
    all /= static_cast<double>(n * n);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) b(i, j) = gram(i, j) - rm[i] - cm[j] + all;
  }

  // Warm start: repeated squaring separates the dominant eigenspace quickly, then
  // plain power iteration refines the Rayleigh quotient.
  Matrix s = b;
  for (int k = 0; k < 40; ++k) {
    Matrix sq = multiply(s, s);
    double scale = 0.0;
    for (double e : sq.flat()) scale = std::max(scale, std::abs(e));
    if (scale == 0.0 || !std::isfinite(scale)) break;
    for (double& e : sq.flat()) e /= scale;
    s = std::move(sq);
  }
  Vector x(n, 0.0);
  double best = -1.0;
  for (std::size_t j = 0; j < n; ++j) {
    Vector col(n);
    for (std::size_t i = 0; i < n; ++i) col[i] = s(i, j);
    const double c = norm2(col);
    if (c > best) {
      best = c;
      x = col;
    }
  }
  remove_mean(x);
  double nx = norm2(x);
  if (!(nx > 0.0)) {
    // B vanished to working precision: every nontrivial singular value is zero.
    return {0.0, 1.0};
  }
  for (double& e : x) e /= nx;

  double lambda = 0.0;
  double prev = -1.0;
  for (int it = 0; it < 10000; ++it) {
    Vector y = mat_vec(b, x);
    remove_mean(y);
    lambda = 0.0;
    for (std::size_t i = 0; i < n; ++i) lambda += x[i] * y[i];
    const double ny = norm2(y);
    if (!(ny > 0.0)) {
      lambda = 0.0;
      break;
    }
    for (std::size_t i = 0; i < n; ++i) x[i] = y[i] / ny;
    if (std::abs(lambda - prev) <= 1e-12 * std::max(std::abs(lambda), 1e-300)) break;
    prev = lambda;
  }
  // ||W x|| for the top singular vector avoids the square root of a tiny eigenvalue.
  remove_mean(x);
  const double sigma2 = std::clamp(norm2(mat_vec(w, x)) / norm2(x), 0.0, 1.0);
  return {sigma2, 1.0 - sigma2};
}

MixingMatrix::MixingMatrix(Matrix w) : w_(std::move(w)) {
  if (auto why = doubly_stochastic_violation(w_))
    throw std::invalid_argument("mixing matrix rejected: " + *why);
  spectral_ = spectral_gap(w_);
}

Matrix MixingMatrix::w_hat() const {
  Matrix h = w_;
  for (std::size_t i = 0; i < h.rows(); ++i)
    for (std::size_t j = 0; j < h.cols(); ++j) h(i, j) = 0.5 * (w_(i, j) + (i == j ? 1.0 : 0.0));
  return h;
}

bool MixingMatrix::respects(const Graph& g) const {
  if (g.size() != size()) return false;
  for (std::size_t i = 0; i < size(); ++i)
    for (std::size_t j = 0; j < size(); ++j)
      if (i != j && w_(i, j) != 0.0 && !g.has_edge(i, j)) return false;
  return true;
}

MixingMatrix metropolis_weights(const Graph& g, double iota) {
  if (!(iota > 0.0) || !std::isfinite(iota))
    throw std::invalid_argument("metropolis_weights: iota must be positive");
  const std::size_t n = g.size();
  Matrix w(n, n);
  for (auto [i, j] : g.edges()) {
    const double wij =
        1.0 / (static_cast<double>(std::max(g.degree(i), g.degree(j))) + iota);
    w(i, j) = wij;
    w(j, i) = wij;
  }
  for (std::size_t i = 0; i < n; ++i) {
    double off = 0.0;
    for (std::size_t j = 0; j < n; ++j)
      if (j != i) off += w(i, j);
    w(i, i) = 1.0 - off;
  }
  return MixingMatrix(std::move(w));
}

Matrix consensus_apply(const MixingMatrix& w, const Matrix& x) {
  if (x.rows() != w.size())
    throw std::invalid_argument("consensus_apply: expected " + std::to_string(w.size()) +
                                " rows, got " + std::to_string(x.rows()));
  const auto& k = kernels::active();
  // x_i + sum_{j != i} W_ij (x_j - x_i): equal to sum_j W_ij x_j for stochastic rows,
  // and exact when the neighbours already agree.
  Matrix out = x;
  Vector diff(x.cols());
  for (std::size_t i = 0; i < w.size(); ++i)
    for (std::size_t j = 0; j < w.size(); ++j) {
      const double wij = w(i, j);
      if (j == i || wij == 0.0) continue;
      for (std::size_t d = 0; d < x.cols(); ++d) diff[d] = x(j, d) - x(i, d);
      k.axpy(out.row(i), wij, diff);
    }
  return out;
}

void write_mixing_csv(const std::filesystem::path& path, const MixingMatrix& w) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  std::vector<std::string> header;
  for (std::size_t j = 0; j < w.size(); ++j) header.push_back("w" + std::to_string(j));
  csv::write_row(out, header);
  for (std::size_t i = 0; i < w.size(); ++i) csv::write_row(out, w.weights().row(i));
}

MixingMatrix read_mixing_csv(const std::filesystem::path& path) {
  const csv::Table t = csv::read(path);
  const std::size_t n = t.header.size();
  if (t.rows.size() != n)
    throw std::runtime_error(path.string() + ": expected " + std::to_string(n) + " rows, found " +
                             std::to_string(t.rows.size()));
  Matrix w(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      try {
        w(i, j) = csv::parse_double(t.rows[i][j]);
      } catch (const std::exception& e) {
        throw std::runtime_error(path.string() + ":" + std::to_string(t.lines[i]) + ": " + e.what());
      }
    }
  return MixingMatrix(std::move(w));
}

void write_edge_list(const std::filesystem::path& path, const Graph& g) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  for (auto [i, j] : g.edges()) out << i << ' ' << j << '\n';
}

Graph read_edge_list(const std::filesystem::path& path, std::size_t n) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  Graph g(n);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ss(line);
    long long i = -1, j = -1;
    if (!(ss >> i >> j) || i < 0 || j < 0)
      throw std::runtime_error(path.string() + ":" + std::to_string(lineno) + ": expected 'i j'");
    g.add_edge(static_cast<std::size_t>(i), static_cast<std::size_t>(j));
  }
  return g;
}

}  // namespace dadam
