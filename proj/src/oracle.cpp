#include "pasa/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include <nlohmann/json.hpp>

namespace pasa::oracle {

namespace {

constexpr double kFaSlack = 1e-12;
constexpr std::size_t kMaxSearchBits = 12;

std::size_t int_pow(std::size_t base, std::size_t exp) {
  std::size_t r = 1;
  for (std::size_t i = 0; i < exp; ++i) r *= base;
  return r;
}

/// max_{x in B(c)} gamma(x, zeta) and min_{x in B(c)} gamma(x, zeta) per (class, zeta).
struct ClassExtremes {
  std::vector<std::uint8_t> max_accept;
  std::vector<std::uint8_t> min_accept;
};

ClassExtremes class_extremes(const DetectorTable& detector, const TinyInstance& inst) {
  const std::size_t outcomes = inst.k + 1;
  ClassExtremes ex{std::vector<std::uint8_t>(inst.k * outcomes, 0), std::vector<std::uint8_t>(inst.k * outcomes, 1)};
  for (std::size_t x = 0; x < inst.q_seq.num_sequences(); ++x) {
    const std::size_t c = inst.sequence_class[x];
    for (std::size_t z = 0; z < outcomes; ++z) {
      const std::uint8_t g = detector(x, z) ? 1 : 0;
      ex.max_accept[c * outcomes + z] = std::max(ex.max_accept[c * outcomes + z], g);
      ex.min_accept[c * outcomes + z] = std::min(ex.min_accept[c * outcomes + z], g);
    }
  }
  return ex;
}

}  // namespace

TokenSequence SequenceDistribution::decode(std::size_t index) const {
  TokenSequence seq(length);
  for (std::size_t i = length; i-- > 0;) {
    seq[i] = static_cast<TokenId>(index % vocab_size);
    index /= vocab_size;
  }
  return seq;
}

void TinyInstance::validate() const {
  if (q_seq.vocab_size == 0 || q_seq.vocab_size > 6 || q_seq.length == 0 || q_seq.length > 3) {
    throw Error(ErrorCode::kInvalidInput, "tiny instances need 1 <= |V| <= 6 and 1 <= T <= 3");
  }
  const std::size_t n = int_pow(q_seq.vocab_size, q_seq.length);
  if (q_seq.probs.size() != n || sequence_class.size() != n) {
    throw Error(ErrorCode::kInvalidInput, "sequence tables must cover all of V^T");
  }
  if (k == 0 || k > n) throw Error(ErrorCode::kInvalidInput, "class count must lie in [1, |V|^T]");
  std::vector<bool> used(k, false);
  for (ClusterId c : sequence_class) {
    if (c >= k) throw Error(ErrorCode::kInvalidInput, "class index out of range");
    used[c] = true;
  }
  if (std::find(used.begin(), used.end(), false) != used.end()) {
    throw Error(ErrorCode::kInvalidInput, "sequence class map is not surjective");
  }
  double total = 0.0;
  for (double p : q_seq.probs) {
    if (!(p >= 0.0)) throw Error(ErrorCode::kInvalidDistribution, "negative sequence probability");
    total += p;
  }
  if (std::abs(total - 1.0) > 1e-12) throw Error(ErrorCode::kInvalidDistribution, "Q over V^T must sum to 1");
  FaBudget{alpha};
}

std::vector<double> TinyInstance::class_mass() const {
  std::vector<double> mass(k, 0.0);
  for (std::size_t x = 0; x < q_seq.num_sequences(); ++x) mass[sequence_class[x]] += q_seq.probs[x];
  return mass;
}

std::vector<ClusterId> product_classes(const ClusterMap& map, std::size_t length) {
  const std::size_t n = int_pow(map.vocab_size(), length);
  SequenceDistribution shape{map.vocab_size(), length, {}};
  std::vector<ClusterId> classes(n);
  for (std::size_t x = 0; x < n; ++x) {
    std::size_t code = 0;
    for (TokenId t : shape.decode(x)) code = code * map.k() + map.cluster_of(t);
    classes[x] = static_cast<ClusterId>(code);
  }
  return classes;
}

TinyInstance random_instance(SplitMix64& rng, std::size_t vocab_size, std::size_t length, std::uint32_t k) {
  TinyInstance inst;
  inst.q_seq.vocab_size = vocab_size;
  inst.q_seq.length = length;
  const std::size_t n = int_pow(vocab_size, length);
  if (k == 0 || k > n) throw Error(ErrorCode::kInvalidInput, "class count must lie in [1, |V|^T]");

  std::vector<double> weights(n, 0.0);
  double total = 0.0;
  for (auto& w : weights) {
    // About a fifth of the sequences get zero mass to exercise empty classes.
    if (rng.uniform() < 0.2) continue;
    w = -std::log(1.0 - rng.uniform());
    total += w;
  }
  if (!(total > 0.0)) weights[rng.below(n)] = 1.0;
  const Distribution q = normalize(weights);
  inst.q_seq.probs.assign(q.probs().begin(), q.probs().end());

  // Surjective labels: a random permutation seeds one member per class.
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
  inst.k = k;
  inst.sequence_class.assign(n, 0);
  for (std::size_t i = 0; i < n; ++i) {
    inst.sequence_class[order[i]] = i < k ? static_cast<ClusterId>(i) : static_cast<ClusterId>(rng.below(k));
  }
  inst.alpha = 0.02 + 0.96 * rng.uniform();
  return inst;
}

double min_md_error(const TinyInstance& inst) {
  inst.validate();
  double md = 0.0;
  for (double m : inst.class_mass()) md += positive_part(m - inst.alpha);
  return md;
}

SequenceScheme build_optimal_sequence_scheme(const TinyInstance& inst) {
  inst.validate();
  const auto mass = inst.class_mass();
  const std::size_t n = inst.q_seq.num_sequences();

  SequenceScheme scheme;
  scheme.p_zeta.assign(inst.k + 1, 0.0);
  scheme.p_x_given_zeta.assign(inst.k + 1, std::nullopt);
  double overflow = 0.0;
  for (std::size_t c = 0; c < inst.k; ++c) {
    scheme.p_zeta[c] = std::min(mass[c], inst.alpha);
    overflow += positive_part(mass[c] - inst.alpha);
  }
  scheme.p_zeta[inst.k] = overflow;

  for (std::size_t c = 0; c < inst.k; ++c) {
    if (!(mass[c] > 0.0)) continue;
    std::vector<double> cond(n, 0.0);
    for (std::size_t x = 0; x < n; ++x) {
      if (inst.sequence_class[x] == c) cond[x] = inst.q_seq.probs[x] / mass[c];
    }
    scheme.p_x_given_zeta[c] = std::move(cond);
  }
  if (overflow > 0.0) {
    std::vector<double> cond(n, 0.0);
    for (std::size_t x = 0; x < n; ++x) {
      const double m = mass[inst.sequence_class[x]];
      if (m > 0.0) cond[x] = inst.q_seq.probs[x] / m * positive_part(m - inst.alpha) / overflow;
    }
    scheme.p_x_given_zeta[inst.k] = std::move(cond);
  }
  return scheme;
}

DetectorTable optimal_detector(const TinyInstance& inst) {
  inst.validate();
  DetectorTable table{inst.q_seq.num_sequences(), inst.k, {}};
  table.accept.assign(table.num_sequences * (inst.k + 1), 0);
  for (std::size_t x = 0; x < table.num_sequences; ++x) table.accept[x * (inst.k + 1) + inst.sequence_class[x]] = 1;
  return table;
}

ErrorPair worst_case_errors(const SequenceScheme& scheme, const DetectorTable& detector, const TinyInstance& inst) {
  inst.validate();
  const std::size_t outcomes = inst.k + 1;
  if (detector.k != inst.k || detector.num_sequences != inst.q_seq.num_sequences() ||
      detector.accept.size() != detector.num_sequences * outcomes) {
    throw Error(ErrorCode::kInvalidInput, "detector table does not cover V^T x ([K] + overflow)");
  }
  if (scheme.p_zeta.size() != outcomes || scheme.p_x_given_zeta.size() != outcomes) {
    throw Error(ErrorCode::kInvalidInput, "scheme does not match the instance");
  }
  const ClassExtremes ex = class_extremes(detector, inst);

  // The supremum over human texts is attained at a point mass, and a point
  // mass on x only depends on x through its class.
  ErrorPair errors;
  for (std::size_t c = 0; c < inst.k; ++c) {
    double fa = 0.0;
    for (std::size_t z = 0; z < outcomes; ++z) fa += scheme.p_zeta[z] * ex.max_accept[c * outcomes + z];
    errors.fa = std::max(errors.fa, fa);
  }
  for (std::size_t z = 0; z < outcomes; ++z) {
    if (!(scheme.p_zeta[z] > 0.0) || !scheme.p_x_given_zeta[z]) continue;
    const auto& cond = *scheme.p_x_given_zeta[z];
    double miss = 0.0;
    for (std::size_t x = 0; x < cond.size(); ++x) {
      miss += cond[x] * (1.0 - ex.min_accept[inst.sequence_class[x] * outcomes + z]);
    }
    errors.md += scheme.p_zeta[z] * miss;
  }
  return errors;
}

double mixture_deviation(const SequenceScheme& scheme, const TinyInstance& inst) {
  const std::size_t n = inst.q_seq.num_sequences();
  std::vector<double> mix(n, 0.0);
  for (std::size_t z = 0; z < scheme.p_zeta.size(); ++z) {
    if (!scheme.p_x_given_zeta[z]) continue;
    for (std::size_t x = 0; x < n; ++x) mix[x] += scheme.p_zeta[z] * (*scheme.p_x_given_zeta[z])[x];
  }
  double dev = 0.0;
  for (std::size_t x = 0; x < n; ++x) dev = std::max(dev, std::abs(mix[x] - inst.q_seq.probs[x]));
  return dev;
}

double exhaustive_detector_search(const TinyInstance& inst) {
  inst.validate();
  const std::size_t outcomes = inst.k + 1;
  const std::size_t bits = inst.q_seq.num_sequences() * outcomes;
  if (inst.q_seq.length != 1 || bits > kMaxSearchBits) {
    throw Error(ErrorCode::kInstanceTooLarge, "exhaustive search needs T = 1 and |V|(K+1) <= 12, got " +
                                                  std::to_string(bits) + " table entries");
  }
  const SequenceScheme scheme = build_optimal_sequence_scheme(inst);
  DetectorTable table{inst.q_seq.num_sequences(), inst.k, std::vector<std::uint8_t>(bits, 0)};
  double best = std::numeric_limits<double>::infinity();
  for (std::uint32_t mask = 0; mask < (1U << bits); ++mask) {
    for (std::size_t b = 0; b < bits; ++b) table.accept[b] = static_cast<std::uint8_t>((mask >> b) & 1U);
    const ErrorPair e = worst_case_errors(scheme, table, inst);
    if (e.fa <= inst.alpha + kFaSlack) best = std::min(best, e.md);
  }
  return best;
}

double VerificationSummary::max_deviation() const {
  return std::max({max_mixture_dev, max_md_gap, max_fa_excess, max_search_gap});
}

std::string VerificationSummary::to_json() const {
  nlohmann::json doc{{"instances", instances},
                     {"exhaustively_searched", searched},
                     {"max_mixture_deviation", max_mixture_dev},
                     {"max_md_gap", max_md_gap},
                     {"max_fa_excess", max_fa_excess},
                     {"max_search_gap", max_search_gap},
                     {"max_deviation", max_deviation()}};
  return doc.dump(1);
}

VerificationSummary verify_random_instances(std::size_t count, std::uint64_t seed) {
  SplitMix64 rng(seed);
  VerificationSummary summary;
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t length = 1 + rng.below(3);
    const std::size_t vocab = 2 + rng.below(5);
    const std::size_t n = int_pow(vocab, length);
    const auto k = static_cast<std::uint32_t>(1 + rng.below(std::min<std::size_t>(n, 8)));
    const TinyInstance inst = random_instance(rng, vocab, length, k);

    const SequenceScheme scheme = build_optimal_sequence_scheme(inst);
    const ErrorPair e = worst_case_errors(scheme, optimal_detector(inst), inst);
    const double target = min_md_error(inst);
    summary.max_mixture_dev = std::max(summary.max_mixture_dev, mixture_deviation(scheme, inst));
    summary.max_md_gap = std::max(summary.max_md_gap, std::abs(e.md - target));
    summary.max_fa_excess = std::max(summary.max_fa_excess, positive_part(e.fa - inst.alpha));
    if (length == 1 && vocab * (k + 1) <= kMaxSearchBits) {
      summary.max_search_gap = std::max(summary.max_search_gap, std::abs(exhaustive_detector_search(inst) - target));
      ++summary.searched;
    }
    ++summary.instances;
  }
  return summary;
}

}  // namespace pasa::oracle
