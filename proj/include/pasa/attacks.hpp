#pragma once

#include <cstdint>
#include <span>
#include <string>

#include "pasa/core_types.hpp"
#include "pasa/semantics.hpp"

namespace pasa {

enum class AttackKind {
  kWithinClusterReplace,  // substitute with a uniform member of the same cluster
  kCrossClusterReplace,   // substitute with a uniform token from the whole vocabulary
  kWindowScramble,        // reverse fixed-length blocks
};

std::string to_string(AttackKind kind);
AttackKind attack_kind_from_string(const std::string& name);

struct AttackSpec {
  AttackKind kind = AttackKind::kWithinClusterReplace;
  double rate = 0.5;
  std::uint64_t rng_seed = 0;
  std::uint32_t block_len = 3;  // window_scramble only

  void validate() const;
};

/// Applies `spec` to `text`. Each position (or block) draws one uniform from
/// a SplitMix64 stream seeded with spec.rng_seed and is touched when it
/// falls below `rate`; replacements draw a second uniform.
TokenSequence apply_attack(std::span<const TokenId> text, const AttackSpec& spec, const ClusterMap& map);

}  // namespace pasa
