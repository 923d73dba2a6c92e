#include "pasa/attacks.hpp"

#include <algorithm>

#include "pasa/prf.hpp"

namespace pasa {

std::string to_string(AttackKind kind) {
  switch (kind) {
    case AttackKind::kWithinClusterReplace: return "within_cluster_replace";
    case AttackKind::kCrossClusterReplace: return "cross_cluster_replace";
    case AttackKind::kWindowScramble: return "window_scramble";
  }
  return "unknown";
}

AttackKind attack_kind_from_string(const std::string& name) {
  if (name == "within_cluster_replace") return AttackKind::kWithinClusterReplace;
  if (name == "cross_cluster_replace") return AttackKind::kCrossClusterReplace;
  if (name == "window_scramble") return AttackKind::kWindowScramble;
  throw Error(ErrorCode::kInvalidConfig, "unknown attack '" + name + "'");
}

void AttackSpec::validate() const {
  if (!(rate >= 0.0 && rate <= 1.0)) throw Error(ErrorCode::kInvalidConfig, "attack rate must lie in [0, 1]");
  if (kind == AttackKind::kWindowScramble && block_len == 0) {
    throw Error(ErrorCode::kInvalidConfig, "scramble block length must be positive");
  }
}

TokenSequence apply_attack(std::span<const TokenId> text, const AttackSpec& spec, const ClusterMap& map) {
  spec.validate();
  for (TokenId t : text) map.cluster_of(t);

  SplitMix64 rng(spec.rng_seed);
  TokenSequence out(text.begin(), text.end());
  switch (spec.kind) {
    case AttackKind::kWithinClusterReplace:
      for (auto& token : out) {
        if (rng.uniform() >= spec.rate) continue;
        const auto& members = map.members(map.cluster_of(token));
        token = members[rng.below(members.size())];
      }
      break;
    case AttackKind::kCrossClusterReplace:
      for (auto& token : out) {
        if (rng.uniform() >= spec.rate) continue;
        token = static_cast<TokenId>(rng.below(map.vocab_size()));
      }
      break;
    case AttackKind::kWindowScramble:
      for (std::size_t start = 0; start < out.size(); start += spec.block_len) {
        const std::size_t end = std::min(out.size(), start + spec.block_len);
        if (rng.uniform() < spec.rate) {
          std::reverse(out.begin() + static_cast<std::ptrdiff_t>(start), out.begin() + static_cast<std::ptrdiff_t>(end));
        }
      }
      break;
  }
  return out;
}

}  // namespace pasa
