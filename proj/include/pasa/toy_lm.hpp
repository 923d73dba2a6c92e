#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <shared_mutex>
#include <span>
#include <string>
#include <vector>

#include "pasa/core_types.hpp"
#include "pasa/prf.hpp"
#include "pasa/semantics.hpp"

namespace pasa {

enum class LmMode { kTokenMarkov, kClusterMarkov };

std::string to_string(LmMode mode);
LmMode lm_mode_from_string(const std::string& name);

struct LmSpec {
  std::size_t vocab_size = 512;
  std::uint32_t order = 1;
  double concentration = 0.5;
  std::uint64_t seed = 1;
  LmMode mode = LmMode::kTokenMarkov;
};

/// Anything that yields a next-token distribution for a token history.
class LanguageModel {
 public:
  virtual ~LanguageModel() = default;
  virtual std::size_t vocab_size() const = 0;
  virtual Distribution next_token_distribution(std::span<const TokenId> history) const = 0;
};

/// Seedable Markov source standing in for an autoregressive LM.
///
/// Each row Q(. | context) is a Dirichlet(concentration) draw whose PRNG
/// stream is keyed by (seed, mode, context), where the context is the last
/// `order` token ids (token_markov) or their cluster indices (cluster_markov).
/// Histories shorter than `order` use the shorter suffix as context. Rows are
/// realized lazily and memoized; the cache is internally synchronized, so a
/// single instance may be shared across threads.
class ToyLm final : public LanguageModel {
 public:
  explicit ToyLm(LmSpec spec, std::shared_ptr<const ClusterMap> map = nullptr);

  const LmSpec& spec() const noexcept { return spec_; }
  std::size_t vocab_size() const override { return spec_.vocab_size; }

  Distribution next_token_distribution(std::span<const TokenId> history) const override;
  /// Cached row without copying.
  const Distribution& row(std::span<const TokenId> history) const;

 private:
  std::vector<std::uint32_t> context_of(std::span<const TokenId> history) const;
  Distribution realize_row(const std::vector<std::uint32_t>& context) const;

  LmSpec spec_;
  std::shared_ptr<const ClusterMap> map_;
  mutable std::shared_mutex mutex_;
  mutable std::map<std::vector<std::uint32_t>, std::unique_ptr<Distribution>> rows_;
};

/// Detection-side surrogate: (1 - mix) * base + mix * Uniform(V).
class SurrogateLm final : public LanguageModel {
 public:
  SurrogateLm(std::shared_ptr<const LanguageModel> base, double mix_to_uniform);

  double mix() const noexcept { return mix_; }
  const LanguageModel& base() const noexcept { return *base_; }
  std::size_t vocab_size() const override { return base_->vocab_size(); }

  Distribution next_token_distribution(std::span<const TokenId> history) const override;

 private:
  std::shared_ptr<const LanguageModel> base_;
  double mix_;
};

/// Gamma(shape, 1) by Marsaglia-Tsang on the SplitMix64 stream; shapes
/// below one use the U^(1/shape) boost.
double sample_gamma(double shape, SplitMix64& rng);

/// Autoregressive inverse-CDF sampling, one uniform per token.
TokenSequence sample_unwatermarked(const LanguageModel& lm, std::span<const TokenId> prompt, std::size_t length,
                                   std::uint64_t rng_seed);

/// Per-token negative log-likelihood of `continuation` under `lm`.
std::vector<double> token_nll(const LanguageModel& lm, std::span<const TokenId> prompt,
                              std::span<const TokenId> continuation);

}  // namespace pasa
