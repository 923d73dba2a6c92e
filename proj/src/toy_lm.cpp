#include "pasa/toy_lm.hpp"

#include <cmath>

namespace pasa {

namespace {

constexpr std::uint64_t kTokenContextTag = 0x746f6b656e000000ULL;
constexpr std::uint64_t kClusterContextTag = 0x636c757374000000ULL;

void check_history(std::span<const TokenId> history, std::size_t vocab_size) {
  for (TokenId t : history) {
    if (t >= vocab_size) {
      throw Error(ErrorCode::kInvalidToken, "token " + std::to_string(t) + " outside vocabulary of size " +
                                                std::to_string(vocab_size));
    }
  }
}

}  // namespace

std::string to_string(LmMode mode) {
  return mode == LmMode::kTokenMarkov ? "token_markov" : "cluster_markov";
}

LmMode lm_mode_from_string(const std::string& name) {
  if (name == "token_markov") return LmMode::kTokenMarkov;
  if (name == "cluster_markov") return LmMode::kClusterMarkov;
  throw Error(ErrorCode::kInvalidConfig, "unknown LM mode '" + name + "'");
}

double sample_gamma(double shape, SplitMix64& rng) {
  if (shape < 1.0) {
    const double boost = std::pow(1.0 - rng.uniform(), 1.0 / shape);
    return sample_gamma(shape + 1.0, rng) * boost;
  }
  const double d = shape - 1.0 / 3.0;
  const double c = 1.0 / std::sqrt(9.0 * d);
  for (;;) {
    const double x = standard_normal(rng);
    double v = 1.0 + c * x;
    if (v <= 0.0) continue;
    v = v * v * v;
    const double u = 1.0 - rng.uniform();
    if (u < 1.0 - 0.0331 * x * x * x * x) return d * v;
    if (std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v;
  }
}

ToyLm::ToyLm(LmSpec spec, std::shared_ptr<const ClusterMap> map) : spec_(spec), map_(std::move(map)) {
  if (spec_.vocab_size == 0) throw Error(ErrorCode::kInvalidConfig, "vocab_size must be positive");
  if (!(spec_.concentration > 0.0) || !std::isfinite(spec_.concentration)) {
    throw Error(ErrorCode::kInvalidConfig, "Dirichlet concentration must be positive");
  }
  if (spec_.mode == LmMode::kClusterMarkov) {
    if (!map_) throw Error(ErrorCode::kInvalidConfig, "cluster_markov LM needs a cluster map");
    if (map_->vocab_size() != spec_.vocab_size) {
      throw Error(ErrorCode::kInvalidConfig, "cluster map vocabulary differs from LM vocabulary");
    }
  }
}

std::vector<std::uint32_t> ToyLm::context_of(std::span<const TokenId> history) const {
  check_history(history, spec_.vocab_size);
  const std::size_t m = std::min<std::size_t>(spec_.order, history.size());
  std::vector<std::uint32_t> context(history.end() - static_cast<std::ptrdiff_t>(m), history.end());
  if (spec_.mode == LmMode::kClusterMarkov) {
    for (auto& c : context) c = map_->cluster_of(c);
  }
  return context;
}

Distribution ToyLm::realize_row(const std::vector<std::uint32_t>& context) const {
  const std::uint64_t tag = spec_.mode == LmMode::kTokenMarkov ? kTokenContextTag : kClusterContextTag;
  std::uint64_t h = SplitMix64(spec_.seed ^ tag ^ context.size()).next();
  for (std::uint32_t c : context) h = SplitMix64(h ^ (static_cast<std::uint64_t>(c) + 1)).next();

  SplitMix64 rng(h);
  std::vector<double> weights(spec_.vocab_size);
  double total = 0.0;
  for (double& w : weights) {
    w = sample_gamma(spec_.concentration, rng);
    total += w;
  }
  if (!(total > 0.0)) {
    // Every gamma draw underflowed (only for extreme concentrations).
    weights[rng.below(weights.size())] = 1.0;
  }
  return normalize(weights);
}

const Distribution& ToyLm::row(std::span<const TokenId> history) const {
  auto context = context_of(history);
  {
    std::shared_lock lock(mutex_);
    if (auto it = rows_.find(context); it != rows_.end()) return *it->second;
  }
  auto fresh = std::make_unique<Distribution>(realize_row(context));
  std::unique_lock lock(mutex_);
  return *rows_.try_emplace(std::move(context), std::move(fresh)).first->second;
}

Distribution ToyLm::next_token_distribution(std::span<const TokenId> history) const { return row(history); }

SurrogateLm::SurrogateLm(std::shared_ptr<const LanguageModel> base, double mix_to_uniform)
    : base_(std::move(base)), mix_(mix_to_uniform) {
  if (!base_) throw Error(ErrorCode::kInvalidConfig, "surrogate needs a base model");
  if (!(mix_ >= 0.0 && mix_ <= 1.0)) throw Error(ErrorCode::kInvalidConfig, "mix_to_uniform must lie in [0, 1]");
}

Distribution SurrogateLm::next_token_distribution(std::span<const TokenId> history) const {
  Distribution q = base_->next_token_distribution(history);
  if (mix_ == 0.0) return q;
  const double floor = mix_ / static_cast<double>(q.size());
  std::vector<double> mixed(q.size());
  for (std::size_t i = 0; i < q.size(); ++i) mixed[i] = (1.0 - mix_) * q[i] + floor;
  return normalize(mixed);
}

TokenSequence sample_unwatermarked(const LanguageModel& lm, std::span<const TokenId> prompt, std::size_t length,
                                   std::uint64_t rng_seed) {
  if (length == 0) throw Error(ErrorCode::kInvalidInput, "length must be at least 1");
  check_history(prompt, lm.vocab_size());
  SplitMix64 rng(rng_seed);
  TokenSequence history(prompt.begin(), prompt.end());
  history.reserve(prompt.size() + length);
  for (std::size_t t = 0; t < length; ++t) {
    const Distribution q = lm.next_token_distribution(history);
    history.push_back(static_cast<TokenId>(sample_index(q.probs(), rng.uniform())));
  }
  return TokenSequence(history.begin() + static_cast<std::ptrdiff_t>(prompt.size()), history.end());
}

std::vector<double> token_nll(const LanguageModel& lm, std::span<const TokenId> prompt,
                              std::span<const TokenId> continuation) {
  TokenSequence history(prompt.begin(), prompt.end());
  std::vector<double> nll;
  nll.reserve(continuation.size());
  for (TokenId x : continuation) {
    const Distribution q = lm.next_token_distribution(history);
    check_history(std::span<const TokenId>(&x, 1), q.size());
    nll.push_back(-std::log(q[x]));
    history.push_back(x);
  }
  return nll;
}

}  // namespace pasa
