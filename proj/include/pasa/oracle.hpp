#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "pasa/core_types.hpp"
#include "pasa/prf.hpp"
#include "pasa/semantics.hpp"

namespace pasa::oracle {

/// Joint law over V^T. Sequence x^T is indexed in base |V| with x_1 as the
/// most significant digit.
struct SequenceDistribution {
  std::size_t vocab_size = 0;
  std::size_t length = 0;
  std::vector<double> probs;

  std::size_t num_sequences() const noexcept { return probs.size(); }
  TokenSequence decode(std::size_t index) const;
};

/// Tiny exhaustively-enumerable instance (|V| <= 6, T <= 3).
///
/// `sequence_class` is the sequence-level semantic map f: V^T -> [K]; it is
/// surjective so every equivalence class B(k) is non-empty.
struct TinyInstance {
  SequenceDistribution q_seq;
  std::uint32_t k = 0;
  std::vector<ClusterId> sequence_class;
  double alpha = 0.5;

  void validate() const;
  /// Q(B(k)) for every class.
  std::vector<double> class_mass() const;
};

/// Sequence classes induced by a token map: the tuple (f(x_1), .., f(x_T))
/// read as a base-K number, giving K^T classes.
std::vector<ClusterId> product_classes(const ClusterMap& map, std::size_t length);

/// Random instance: sparse-ish exponential weights for Q, a random
/// surjective class map, alpha uniform in [0.02, 0.98].
TinyInstance random_instance(SplitMix64& rng, std::size_t vocab_size, std::size_t length, std::uint32_t k);

/// Optimal auxiliary law over [K] + {overflow} and the conditional sequence
/// laws. Index K is the overflow outcome. A conditional is absent when its
/// outcome has zero prior mass.
struct SequenceScheme {
  std::vector<double> p_zeta;
  std::vector<std::optional<std::vector<double>>> p_x_given_zeta;

  std::size_t overflow_index() const noexcept { return p_zeta.size() - 1; }
};

/// Deterministic detector gamma(x^T, zeta) over V^T x ([K] + {overflow}).
struct DetectorTable {
  std::size_t num_sequences = 0;
  std::uint32_t k = 0;
  std::vector<std::uint8_t> accept;  // accept[x * (k + 1) + zeta]

  bool operator()(std::size_t x, std::size_t zeta) const { return accept[x * (k + 1) + zeta] != 0; }
};

struct ErrorPair {
  double fa = 0.0;
  double md = 0.0;
};

/// sum_k (Q(B(k)) - alpha)_+
double min_md_error(const TinyInstance& inst);

SequenceScheme build_optimal_sequence_scheme(const TinyInstance& inst);

/// gamma*(x, zeta) = 1{f(x) = zeta}; never accepts the overflow outcome.
DetectorTable optimal_detector(const TinyInstance& inst);

/// Worst-case FA over point-mass human texts and MD under the scheme, both
/// with the adversary free to move within each equivalence class.
ErrorPair worst_case_errors(const SequenceScheme& scheme, const DetectorTable& detector, const TinyInstance& inst);

/// max_x |sum_zeta p(zeta) p(x | zeta) - q(x)|
double mixture_deviation(const SequenceScheme& scheme, const TinyInstance& inst);

/// Minimum MD over every deterministic detector table with FA <= alpha
/// (+1e-12), paired with the optimal scheme. T = 1 and |V|(K+1) <= 12 only.
double exhaustive_detector_search(const TinyInstance& inst);

struct VerificationSummary {
  std::size_t instances = 0;
  std::size_t searched = 0;        // instances also checked by exhaustive search
  double max_mixture_dev = 0.0;    // distortion-free identity
  double max_md_gap = 0.0;         // |md(gamma*) - min_md_error|
  double max_fa_excess = 0.0;      // max(0, fa(gamma*) - alpha)
  double max_search_gap = 0.0;     // |search - min_md_error|

  double max_deviation() const;
  std::string to_json() const;
};

/// Randomized sweep over tiny instances used by `oracle-verify`.
VerificationSummary verify_random_instances(std::size_t count, std::uint64_t seed);

}  // namespace pasa::oracle
