#include "pasa/semantics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>

#include <nlohmann/json.hpp>

#include "pasa/prf.hpp"

namespace pasa {

namespace {

double squared_distance(std::span<const double> a, std::span<const double> b) {
  double d = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double diff = a[i] - b[i];
    d += diff * diff;
  }
  return d;
}

std::vector<std::vector<TokenId>> members_of(const std::vector<ClusterId>& assignment, std::uint32_t k) {
  std::vector<std::vector<TokenId>> members(k);
  for (std::size_t x = 0; x < assignment.size(); ++x) {
    members[assignment[x]].push_back(static_cast<TokenId>(x));
  }
  return members;
}

/// Nearest centroid per row, ties to the smallest cluster index.
std::vector<ClusterId> assign_nearest(const EmbeddingMatrix& emb, const std::vector<double>& centroids,
                                      std::uint32_t k, std::vector<double>& best_dist) {
  const std::size_t dim = emb.dim();
  std::vector<ClusterId> assignment(emb.rows());
  best_dist.assign(emb.rows(), 0.0);
  for (std::size_t x = 0; x < emb.rows(); ++x) {
    double best = std::numeric_limits<double>::infinity();
    ClusterId arg = 0;
    for (ClusterId c = 0; c < k; ++c) {
      const double d = squared_distance(emb.row(x), {centroids.data() + c * dim, dim});
      if (d < best) {
        best = d;
        arg = c;
      }
    }
    assignment[x] = arg;
    best_dist[x] = best;
  }
  return assignment;
}

/// Moves each empty cluster's centroid onto the point farthest from its own
/// centroid, then reassigns. Repeats until every cluster is used.
std::vector<ClusterId> assign_surjective(const EmbeddingMatrix& emb, std::vector<double>& centroids,
                                         std::uint32_t k) {
  const std::size_t dim = emb.dim();
  std::vector<double> dist;
  for (std::uint32_t round = 0; round <= 2 * k; ++round) {
    auto assignment = assign_nearest(emb, centroids, k, dist);
    std::vector<std::size_t> sizes(k, 0);
    for (ClusterId c : assignment) ++sizes[c];
    const auto empty = std::find(sizes.begin(), sizes.end(), 0U);
    if (empty == sizes.end()) return assignment;

    std::size_t farthest = emb.rows();
    double far_dist = -1.0;
    for (std::size_t x = 0; x < emb.rows(); ++x) {
      if (sizes[assignment[x]] >= 2 && dist[x] > far_dist) {
        far_dist = dist[x];
        farthest = x;
      }
    }
    if (farthest == emb.rows()) break;
    const auto target = static_cast<std::size_t>(empty - sizes.begin());
    std::copy(emb.row(farthest).begin(), emb.row(farthest).end(), centroids.begin() + target * dim);
  }
  throw Error(ErrorCode::kInvalidConfig, "cannot form " + std::to_string(k) +
                                             " non-empty clusters (too few distinct embeddings)");
}

std::vector<double> kmeans_plus_plus(const EmbeddingMatrix& emb, std::uint32_t k, SplitMix64& rng) {
  const std::size_t n = emb.rows();
  const std::size_t dim = emb.dim();
  std::vector<double> centroids;
  centroids.reserve(k * dim);
  std::vector<bool> chosen(n, false);

  std::size_t first = rng.below(n);
  chosen[first] = true;
  centroids.insert(centroids.end(), emb.row(first).begin(), emb.row(first).end());

  std::vector<double> d2(n, std::numeric_limits<double>::infinity());
  for (std::uint32_t c = 1; c < k; ++c) {
    const std::span<const double> last{centroids.data() + (c - 1) * dim, dim};
    double total = 0.0;
    for (std::size_t x = 0; x < n; ++x) {
      d2[x] = std::min(d2[x], squared_distance(emb.row(x), last));
      total += d2[x];
    }
    const double u = rng.uniform();
    std::size_t pick = n;
    if (total > 0.0) {
      // D^2-weighted draw; u is scaled instead of normalizing d2.
      double cdf = 0.0;
      const double target = u * total;
      for (std::size_t x = 0; x < n; ++x) {
        if (d2[x] <= 0.0) continue;
        cdf += d2[x];
        pick = x;
        if (target < cdf) break;
      }
    }
    if (pick == n) {
      // Every point coincides with a chosen centroid; take the first unused row.
      pick = static_cast<std::size_t>(std::find(chosen.begin(), chosen.end(), false) - chosen.begin());
      if (pick == n) pick = 0;
    }
    chosen[pick] = true;
    centroids.insert(centroids.end(), emb.row(pick).begin(), emb.row(pick).end());
  }
  return centroids;
}

}  // namespace

EmbeddingMatrix::EmbeddingMatrix(std::size_t rows, std::size_t dim, std::vector<double> values)
    : rows_(rows), dim_(dim), values_(std::move(values)) {
  if (rows == 0 || dim == 0) throw Error(ErrorCode::kInvalidEmbedding, "embedding matrix must be non-empty");
  if (values_.size() != rows * dim) {
    throw Error(ErrorCode::kInvalidEmbedding, "value count does not match rows x dim");
  }
}

EmbeddingMatrix EmbeddingMatrix::normalized() const {
  std::vector<double> out(values_);
  for (std::size_t r = 0; r < rows_; ++r) {
    double norm2 = 0.0;
    for (std::size_t j = 0; j < dim_; ++j) norm2 += out[r * dim_ + j] * out[r * dim_ + j];
    if (!(norm2 > 0.0) || !std::isfinite(norm2)) {
      throw Error(ErrorCode::kInvalidEmbedding, "row " + std::to_string(r) + " has zero or non-finite norm");
    }
    const double norm = std::sqrt(norm2);
    for (std::size_t j = 0; j < dim_; ++j) out[r * dim_ + j] /= norm;
  }
  return EmbeddingMatrix(rows_, dim_, std::move(out));
}

ClusterMap::ClusterMap(std::vector<ClusterId> assignment, std::uint32_t k, std::uint64_t kmeans_seed,
                       std::size_t dim, std::vector<double> centroids)
    : assignment_(std::move(assignment)),
      k_(k),
      kmeans_seed_(kmeans_seed),
      dim_(dim),
      centroids_(std::move(centroids)) {
  if (k_ == 0 || assignment_.empty()) throw Error(ErrorCode::kInvalidConfig, "cluster map needs k >= 1 and tokens");
  if (k_ > assignment_.size()) throw Error(ErrorCode::kInvalidConfig, "k exceeds vocabulary size");
  if (!centroids_.empty() && centroids_.size() != static_cast<std::size_t>(k_) * dim_) {
    throw Error(ErrorCode::kInvalidConfig, "centroid table has wrong shape");
  }
  for (ClusterId c : assignment_) {
    if (c >= k_) throw Error(ErrorCode::kInvalidConfig, "cluster index out of range");
  }
  members_ = members_of(assignment_, k_);
  for (const auto& m : members_) {
    if (m.empty()) throw Error(ErrorCode::kInvalidConfig, "cluster map is not surjective");
  }
}

ClusterMap ClusterMap::from_assignment(std::vector<ClusterId> assignment, std::uint32_t k) {
  return ClusterMap(std::move(assignment), k, 0, 0, {});
}

ClusterId ClusterMap::cluster_of(TokenId token) const {
  if (token >= assignment_.size()) {
    throw Error(ErrorCode::kInvalidToken, "token " + std::to_string(token) + " outside vocabulary of size " +
                                              std::to_string(assignment_.size()));
  }
  return assignment_[token];
}

std::string ClusterMap::to_json() const {
  nlohmann::json doc;
  doc["format"] = "pasa.cluster_map.v1";
  doc["vocab_size"] = assignment_.size();
  doc["k"] = k_;
  doc["kmeans_seed"] = kmeans_seed_;
  doc["dim"] = dim_;
  doc["assignment"] = assignment_;
  nlohmann::json rows = nlohmann::json::array();
  for (ClusterId c = 0; c < k_ && dim_ > 0 && !centroids_.empty(); ++c) {
    rows.push_back(std::vector<double>(centroid(c).begin(), centroid(c).end()));
  }
  doc["centroids"] = rows;
  return doc.dump(1);
}

ClusterMap ClusterMap::from_json(const std::string& text) {
  try {
    const auto doc = nlohmann::json::parse(text);
    auto assignment = doc.at("assignment").get<std::vector<ClusterId>>();
    if (assignment.size() != doc.at("vocab_size").get<std::size_t>()) {
      throw Error(ErrorCode::kParseError, "assignment length differs from vocab_size");
    }
    const auto dim = doc.at("dim").get<std::size_t>();
    std::vector<double> centroids;
    for (const auto& row : doc.at("centroids")) {
      auto values = row.get<std::vector<double>>();
      if (values.size() != dim) throw Error(ErrorCode::kParseError, "centroid row has wrong dimension");
      centroids.insert(centroids.end(), values.begin(), values.end());
    }
    return ClusterMap(std::move(assignment), doc.at("k").get<std::uint32_t>(),
                      doc.at("kmeans_seed").get<std::uint64_t>(), dim, std::move(centroids));
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kParseError, std::string("cluster map: ") + e.what());
  }
}

void ClusterMap::save(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::kInvalidInput, "cannot write " + path);
  out << to_json() << '\n';
}

ClusterMap ClusterMap::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kParseError, "cannot open " + path);
  std::stringstream buffer;
  buffer << in.rdbuf();
  return from_json(buffer.str());
}

std::vector<ClusterId> synth_ground_truth(std::size_t vocab_size, std::size_t true_clusters) {
  std::vector<ClusterId> labels(vocab_size);
  for (std::size_t x = 0; x < vocab_size; ++x) labels[x] = static_cast<ClusterId>(x % true_clusters);
  return labels;
}

EmbeddingMatrix synth_embeddings(std::size_t vocab_size, std::size_t dim, std::size_t true_clusters,
                                 double spread, std::uint64_t seed) {
  if (dim < 2) throw Error(ErrorCode::kInvalidConfig, "embedding dimension must be at least 2");
  if (vocab_size == 0 || true_clusters == 0 || true_clusters > vocab_size) {
    throw Error(ErrorCode::kInvalidConfig, "need 1 <= true_clusters <= vocab_size");
  }
  if (!(spread >= 0.0) || !std::isfinite(spread)) {
    throw Error(ErrorCode::kInvalidConfig, "spread must be finite and non-negative");
  }
  SplitMix64 rng(seed);

  // Signed basis vectors while they last (pairwise distance >= sqrt(2)),
  // random unit directions beyond 2 * dim components.
  std::vector<double> centers(true_clusters * dim, 0.0);
  for (std::size_t c = 0; c < true_clusters; ++c) {
    double* center = centers.data() + c * dim;
    if (c < 2 * dim) {
      center[c % dim] = (c < dim) ? 1.0 : -1.0;
      continue;
    }
    double norm2 = 0.0;
    while (!(norm2 > 0.0)) {
      norm2 = 0.0;
      for (std::size_t j = 0; j < dim; ++j) {
        center[j] = standard_normal(rng);
        norm2 += center[j] * center[j];
      }
    }
    const double norm = std::sqrt(norm2);
    for (std::size_t j = 0; j < dim; ++j) center[j] /= norm;
  }

  std::vector<double> values(vocab_size * dim);
  for (std::size_t x = 0; x < vocab_size; ++x) {
    const double* center = centers.data() + (x % true_clusters) * dim;
    for (std::size_t j = 0; j < dim; ++j) {
      values[x * dim + j] = center[j] + (spread > 0.0 ? spread * standard_normal(rng) : 0.0);
    }
  }
  return EmbeddingMatrix(vocab_size, dim, std::move(values)).normalized();
}

ClusterMap build_cluster_map(const EmbeddingMatrix& raw, const KMeansOptions& options) {
  if (options.k == 0 || options.k > raw.rows()) {
    throw Error(ErrorCode::kInvalidConfig, "k must lie in [1, vocab_size]");
  }
  if (options.max_iters == 0 || !(options.tol > 0.0)) {
    throw Error(ErrorCode::kInvalidConfig, "max_iters and tol must be positive");
  }
  const EmbeddingMatrix emb = raw.normalized();
  const std::size_t dim = emb.dim();
  const std::uint32_t k = options.k;

  SplitMix64 rng(options.seed);
  std::vector<double> centroids = kmeans_plus_plus(emb, k, rng);

  for (std::uint32_t iter = 0; iter < options.max_iters; ++iter) {
    const auto assignment = assign_surjective(emb, centroids, k);
    std::vector<double> next(k * dim, 0.0);
    std::vector<std::size_t> counts(k, 0);
    for (std::size_t x = 0; x < emb.rows(); ++x) {
      const ClusterId c = assignment[x];
      ++counts[c];
      for (std::size_t j = 0; j < dim; ++j) next[c * dim + j] += emb.row(x)[j];
    }
    double movement = 0.0;
    for (ClusterId c = 0; c < k; ++c) {
      for (std::size_t j = 0; j < dim; ++j) next[c * dim + j] /= static_cast<double>(counts[c]);
      movement = std::max(movement, std::sqrt(squared_distance({next.data() + c * dim, dim},
                                                               {centroids.data() + c * dim, dim})));
    }
    centroids = std::move(next);
    if (movement < options.tol) break;
  }

  auto assignment = assign_surjective(emb, centroids, k);
  return ClusterMap(std::move(assignment), k, options.seed, dim, std::move(centroids));
}

EmbeddingMatrix parse_embeddings(const std::string& text) {
  std::istringstream in(text);
  std::string header;
  if (!std::getline(in, header)) throw Error(ErrorCode::kParseError, "missing header line");
  std::istringstream hs(header);
  long long rows = -1;
  long long dim = -1;
  std::string extra;
  if (!(hs >> rows >> dim) || (hs >> extra) || rows <= 0 || dim <= 0) {
    throw Error(ErrorCode::kParseError, "header must be \"vocab_size dim\" with positive integers");
  }
  std::vector<double> values;
  values.reserve(static_cast<std::size_t>(rows * dim));
  std::string line;
  long long seen = 0;
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    if (seen == rows) throw Error(ErrorCode::kParseError, "more rows than the header declares");
    std::istringstream ls(line);
    long long count = 0;
    std::string token;
    while (ls >> token) {
      std::size_t used = 0;
      double v = 0.0;
      try {
        v = std::stod(token, &used);
      } catch (const std::exception&) {
        used = 0;
      }
      if (used != token.size()) {
        throw Error(ErrorCode::kParseError, "bad number '" + token + "' on row " + std::to_string(seen));
      }
      values.push_back(v);
      ++count;
    }
    if (count != dim) {
      throw Error(ErrorCode::kParseError, "row " + std::to_string(seen) + " has " + std::to_string(count) +
                                              " values, expected " + std::to_string(dim));
    }
    ++seen;
  }
  if (seen != rows) {
    throw Error(ErrorCode::kParseError, "header declares " + std::to_string(rows) + " rows, file has " +
                                            std::to_string(seen));
  }
  return EmbeddingMatrix(static_cast<std::size_t>(rows), static_cast<std::size_t>(dim), std::move(values))
      .normalized();
}

EmbeddingMatrix load_external_embeddings(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kParseError, "cannot open " + path);
  std::stringstream buffer;
  buffer << in.rdbuf();
  return parse_embeddings(buffer.str());
}

bool same_partition(std::span<const ClusterId> a, std::span<const ClusterId> b) {
  if (a.size() != b.size()) return false;
  std::map<ClusterId, ClusterId> forward;
  std::map<ClusterId, ClusterId> backward;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const auto f = forward.emplace(a[i], b[i]).first;
    const auto r = backward.emplace(b[i], a[i]).first;
    if (f->second != b[i] || r->second != a[i]) return false;
  }
  return true;
}

}  // namespace pasa
