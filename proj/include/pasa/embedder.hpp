#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "pasa/core_types.hpp"
#include "pasa/prf.hpp"
#include "pasa/semantics.hpp"
#include "pasa/toy_lm.hpp"

namespace pasa {

/// Outcome of the auxiliary draw: a cluster index or the overflow state.
class ZetaOutcome {
 public:
  static ZetaOutcome cluster(ClusterId k) { return ZetaOutcome(k); }
  static ZetaOutcome overflow() { return ZetaOutcome(kOverflowCode); }

  bool is_overflow() const noexcept { return code_ == kOverflowCode; }
  /// Cluster index; only meaningful when !is_overflow().
  ClusterId cluster_index() const noexcept { return code_; }
  bool matches(ClusterId observed) const noexcept { return !is_overflow() && code_ == observed; }

  bool operator==(const ZetaOutcome&) const = default;

 private:
  static constexpr ClusterId kOverflowCode = 0xffffffffU;
  explicit ZetaOutcome(ClusterId code) : code_(code) {}
  ClusterId code_;
};

std::string to_string(const ZetaOutcome& zeta);

/// Law of the auxiliary variable: min(Q^f(k), alpha) per cluster, with the
/// truncated excess collected in the overflow state.
struct AuxiliaryDistribution {
  std::vector<double> cluster_mass;
  double overflow_mass = 0.0;

  std::size_t k() const noexcept { return cluster_mass.size(); }
  /// Probability of `zeta` under this law.
  double mass(const ZetaOutcome& zeta) const;
};

struct WatermarkConfig {
  double alpha = 0.4;
  std::uint32_t window = 3;
  std::uint32_t precursor_len = 3;

  void validate() const;
};

/// Q^f(k) = sum of Q(x) over tokens with f(x) = k.
Distribution cluster_distribution(const Distribution& q, const ClusterMap& map);

AuxiliaryDistribution auxiliary_distribution(const Distribution& qf, FaBudget alpha);

/// Inverse CDF over (cluster 0, ..., cluster K-1, overflow).
ZetaOutcome sample_zeta(const AuxiliaryDistribution& aux, double u);

/// Token law given zeta: renormalized in-cluster mass for a cluster outcome;
/// for the overflow state, each cluster weighted by its excess (Q^f(k) - alpha)_+.
/// Throws kImpossibleZeta when `zeta` has zero conditional mass.
Distribution conditional_token_distribution(const Distribution& q, const Distribution& qf, const ClusterMap& map,
                                            FaBudget alpha, const ZetaOutcome& zeta);

struct GenerationStep {
  std::optional<ZetaOutcome> zeta;    // empty for precursor steps
  std::optional<std::uint64_t> seed;  // empty for precursor steps
};

struct GenerationRecord {
  TokenSequence prompt;
  TokenSequence tokens;
  std::vector<GenerationStep> steps;
  WatermarkConfig config;
  std::uint64_t token_rng_seed = 0;

  std::string to_json_line() const;
  static GenerationRecord from_json_line(const std::string& line);
};

/// Watermarked autoregressive generation of `length` tokens after `prompt`.
///
/// The first `precursor_len` tokens are drawn from Q_t directly. Afterwards
/// each step derives a seed from the key and the cluster indices of the last
/// `window` tokens (prompt included), draws zeta with that seed, then draws
/// the token from the conditional law with the independent token stream.
GenerationRecord generate_watermarked(const LanguageModel& lm, const ClusterMap& map, const WatermarkKey& key,
                                      const WatermarkConfig& config, std::span<const TokenId> prompt,
                                      std::size_t length, std::uint64_t token_rng_seed);

}  // namespace pasa
