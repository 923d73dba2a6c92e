#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "pasa/core_types.hpp"

namespace pasa {

/// Row-major |V| x d matrix of token embeddings.
class EmbeddingMatrix {
 public:
  EmbeddingMatrix(std::size_t rows, std::size_t dim, std::vector<double> values);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t dim() const noexcept { return dim_; }
  std::span<const double> row(std::size_t i) const { return {values_.data() + i * dim_, dim_}; }
  const std::vector<double>& values() const noexcept { return values_; }

  /// Copy with every row scaled to unit Euclidean norm. Throws
  /// kInvalidEmbedding on a zero row.
  EmbeddingMatrix normalized() const;

  bool operator==(const EmbeddingMatrix&) const = default;

 private:
  std::size_t rows_;
  std::size_t dim_;
  std::vector<double> values_;
};

/// The semantic mapping f: token -> cluster in [0, K).
///
/// Cluster indices are 0-based. `centroids` is empty for maps built from a
/// bare assignment (tests, tiny oracle instances); otherwise it holds K rows
/// of dimension `dim` and every token sits in its nearest centroid.
class ClusterMap {
 public:
  /// Map from an explicit assignment. Every cluster in [0, k) must be used.
  static ClusterMap from_assignment(std::vector<ClusterId> assignment, std::uint32_t k);

  ClusterMap(std::vector<ClusterId> assignment, std::uint32_t k, std::uint64_t kmeans_seed,
             std::size_t dim, std::vector<double> centroids);

  std::size_t vocab_size() const noexcept { return assignment_.size(); }
  std::uint32_t k() const noexcept { return k_; }
  std::uint64_t kmeans_seed() const noexcept { return kmeans_seed_; }
  std::size_t dim() const noexcept { return dim_; }
  const std::vector<ClusterId>& assignment() const noexcept { return assignment_; }
  const std::vector<double>& centroids() const noexcept { return centroids_; }
  std::span<const double> centroid(ClusterId c) const { return {centroids_.data() + c * dim_, dim_}; }
  /// Sorted token ids with f(x) = c.
  const std::vector<TokenId>& members(ClusterId c) const { return members_.at(c); }

  /// f(token); throws kInvalidToken when out of range.
  ClusterId cluster_of(TokenId token) const;

  void save(const std::string& path) const;
  static ClusterMap load(const std::string& path);
  std::string to_json() const;
  static ClusterMap from_json(const std::string& text);

  bool operator==(const ClusterMap& other) const {
    return k_ == other.k_ && kmeans_seed_ == other.kmeans_seed_ && dim_ == other.dim_ &&
           assignment_ == other.assignment_ && centroids_ == other.centroids_;
  }

 private:
  std::vector<ClusterId> assignment_;
  std::uint32_t k_;
  std::uint64_t kmeans_seed_;
  std::size_t dim_;
  std::vector<double> centroids_;
  std::vector<std::vector<TokenId>> members_;
};

inline ClusterId cluster_of(const ClusterMap& map, TokenId token) { return map.cluster_of(token); }

/// Gaussian-mixture embeddings with `true_clusters` unit-norm centers.
/// Token x belongs to component x mod true_clusters. Rows are l2-normalized.
EmbeddingMatrix synth_embeddings(std::size_t vocab_size, std::size_t dim, std::size_t true_clusters,
                                 double spread, std::uint64_t seed);

/// Component labels used by synth_embeddings (x mod true_clusters).
std::vector<ClusterId> synth_ground_truth(std::size_t vocab_size, std::size_t true_clusters);

struct KMeansOptions {
  std::uint32_t k = 4;
  std::uint64_t seed = 1;
  std::uint32_t max_iters = 100;
  double tol = 1e-9;
};

/// Lloyd's algorithm with k-means++ seeding on l2-normalized rows.
ClusterMap build_cluster_map(const EmbeddingMatrix& emb, const KMeansOptions& options);

/// Text format: header "rows dim", then one whitespace-separated row per token.
EmbeddingMatrix load_external_embeddings(const std::string& path);
EmbeddingMatrix parse_embeddings(const std::string& text);

/// True when the two labelings induce the same partition of the tokens.
bool same_partition(std::span<const ClusterId> a, std::span<const ClusterId> b);

}  // namespace pasa
