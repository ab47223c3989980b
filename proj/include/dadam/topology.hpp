#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <utility>
#include <vector>

#include "dadam/matrix.hpp"

namespace dadam {

/// Undirected simple graph over agents 0..n-1.
class Graph {
 public:
  explicit Graph(std::size_t n = 1);
  Graph(std::size_t n, const std::vector<std::pair<std::size_t, std::size_t>>& edges);

  std::size_t size() const { return n_; }
  std::size_t edge_count() const { return edges_.size(); }
  /// Normalized as (min, max), sorted.
  const std::vector<std::pair<std::size_t, std::size_t>>& edges() const { return edges_; }
  const std::vector<std::size_t>& neighbors(std::size_t i) const { return adjacency_[i]; }
  std::size_t degree(std::size_t i) const { return adjacency_[i].size(); }
  bool has_edge(std::size_t i, std::size_t j) const;
  bool connected() const;

  void add_edge(std::size_t i, std::size_t j);

 private:
  std::size_t n_;
  std::vector<std::pair<std::size_t, std::size_t>> edges_;
  std::vector<std::vector<std::size_t>> adjacency_;
};

/// Uniform random spanning tree (Prüfer code) plus every other pair with
/// probability `ratio`. Deterministic for a fixed seed.
Graph random_connected_graph(std::size_t n, double ratio, std::uint64_t seed);

struct SpectralData {
  double sigma2 = 0.0;
  double gap = 1.0;
};

/// Doubly stochastic gossip matrix with cached spectral data.
class MixingMatrix {
 public:
  /// Validates double stochasticity (1e-12) and a positive diagonal; throws
  /// std::invalid_argument naming the offending row or column otherwise.
  explicit MixingMatrix(Matrix w);

  std::size_t size() const { return w_.rows(); }
  const Matrix& weights() const { return w_; }
  double operator()(std::size_t i, std::size_t j) const { return w_(i, j); }
  double sigma2() const { return spectral_.sigma2; }
  double gap() const { return spectral_.gap; }
  /// (I + W) / 2
  Matrix w_hat() const;

  /// Entries outside the graph's edge set (off the diagonal) are exactly zero.
  bool respects(const Graph& g) const;

 private:
  Matrix w_;
  SpectralData spectral_;
};

/// Checks rows and columns sum to one within `tol` and the diagonal is positive.
/// Returns an explanation of the first violation, or nullopt.
std::optional<std::string> doubly_stochastic_violation(const Matrix& w, double tol = 1e-12);

/// w_ij = 1 / (max(deg i, deg j) + iota) on edges; diagonal completes rows.
MixingMatrix metropolis_weights(const Graph& g, double iota = 1.0);

/// Second-largest singular value of a doubly stochastic matrix and 1 - sigma2.
/// Power iteration on W^T W restricted to the complement of the all-ones vector.
SpectralData spectral_gap(const Matrix& w);

/// Row i of the result is sum_j W_ij X_j.
Matrix consensus_apply(const MixingMatrix& w, const Matrix& x);

void write_mixing_csv(const std::filesystem::path& path, const MixingMatrix& w);
MixingMatrix read_mixing_csv(const std::filesystem::path& path);

void write_edge_list(const std::filesystem::path& path, const Graph& g);
Graph read_edge_list(const std::filesystem::path& path, std::size_t n);

}  // namespace dadam
