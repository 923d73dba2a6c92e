#include "pasa/embedder.hpp"

#include <algorithm>

#include <nlohmann/json.hpp>

namespace pasa {

std::string to_string(const ZetaOutcome& zeta) {
  return zeta.is_overflow() ? "overflow" : std::to_string(zeta.cluster_index());
}

double AuxiliaryDistribution::mass(const ZetaOutcome& zeta) const {
  if (zeta.is_overflow()) return overflow_mass;
  return zeta.cluster_index() < cluster_mass.size() ? cluster_mass[zeta.cluster_index()] : 0.0;
}

void WatermarkConfig::validate() const {
  FaBudget{alpha};
  if (window == 0) throw Error(ErrorCode::kInvalidConfig, "window must be at least 1");
}

Distribution cluster_distribution(const Distribution& q, const ClusterMap& map) {
  if (q.size() != map.vocab_size()) {
    throw Error(ErrorCode::kInvalidInput, "distribution size " + std::to_string(q.size()) +
                                              " differs from vocabulary size " + std::to_string(map.vocab_size()));
  }
  std::vector<double> mass(map.k(), 0.0);
  const auto& assignment = map.assignment();
  for (std::size_t x = 0; x < q.size(); ++x) mass[assignment[x]] += q[x];
  return normalize(mass);
}

AuxiliaryDistribution auxiliary_distribution(const Distribution& qf, FaBudget alpha) {
  const double a = alpha.value();
  AuxiliaryDistribution aux;
  aux.cluster_mass.resize(qf.size());
  for (std::size_t k = 0; k < qf.size(); ++k) {
    aux.cluster_mass[k] = std::min(qf[k], a);
    aux.overflow_mass += positive_part(qf[k] - a);
  }
  return aux;
}

ZetaOutcome sample_zeta(const AuxiliaryDistribution& aux, double u) {
  std::vector<double> masses(aux.cluster_mass);
  masses.push_back(aux.overflow_mass);
  const std::size_t idx = sample_index(masses, u);
  return idx == aux.k() ? ZetaOutcome::overflow() : ZetaOutcome::cluster(static_cast<ClusterId>(idx));
}

Distribution conditional_token_distribution(const Distribution& q, const Distribution& qf, const ClusterMap& map,
                                            FaBudget alpha, const ZetaOutcome& zeta) {
  if (q.size() != map.vocab_size() || qf.size() != map.k()) {
    throw Error(ErrorCode::kInvalidInput, "distribution sizes do not match the cluster map");
  }
  const auto& assignment = map.assignment();
  std::vector<double> weights(q.size(), 0.0);

  if (!zeta.is_overflow()) {
    const ClusterId k = zeta.cluster_index();
    if (k >= qf.size() || !(qf[k] > 0.0)) {
      throw Error(ErrorCode::kImpossibleZeta, "cluster " + std::to_string(k) + " has no mass");
    }
    for (TokenId x : map.members(k)) weights[x] = q[x] / qf[k];
  } else {
    const double a = alpha.value();
    double excess_total = 0.0;
    for (std::size_t k = 0; k < qf.size(); ++k) excess_total += positive_part(qf[k] - a);
    if (!(excess_total > 0.0)) {
      throw Error(ErrorCode::kImpossibleZeta, "overflow state has no mass");
    }
    for (std::size_t x = 0; x < q.size(); ++x) {
      const double cluster_mass = qf[assignment[x]];
      if (cluster_mass <= 0.0) continue;
      weights[x] = positive_part(cluster_mass - a) * (q[x] / cluster_mass) / excess_total;
    }
  }
  double total = 0.0;
  for (double w : weights) total += w;
  if (!(total > 0.0)) throw Error(ErrorCode::kImpossibleZeta, "conditional law has zero mass");
  return normalize(weights);
}

GenerationRecord generate_watermarked(const LanguageModel& lm, const ClusterMap& map, const WatermarkKey& key,
                                      const WatermarkConfig& config, std::span<const TokenId> prompt,
                                      std::size_t length, std::uint64_t token_rng_seed) {
  config.validate();
  if (length == 0) throw Error(ErrorCode::kInvalidInput, "length must be at least 1");
  if (lm.vocab_size() != map.vocab_size()) {
    throw Error(ErrorCode::kInvalidConfig, "LM and cluster map disagree on vocabulary size");
  }
  const FaBudget alpha(config.alpha);

  GenerationRecord record;
  record.prompt.assign(prompt.begin(), prompt.end());
  record.config = config;
  record.token_rng_seed = token_rng_seed;
  record.tokens.reserve(length);
  record.steps.reserve(length);

  TokenSequence history(prompt.begin(), prompt.end());
  WindowState window(config.window);
  for (TokenId x : prompt) window.push(map.cluster_of(x));

  SplitMix64 token_rng(token_rng_seed);
  for (std::size_t t = 0; t < length; ++t) {
    const Distribution q = lm.next_token_distribution(history);
    const double token_u = token_rng.uniform();
    GenerationStep step;
    TokenId next = 0;
    if (t < config.precursor_len) {
      next = static_cast<TokenId>(sample_index(q.probs(), token_u));
    } else {
      const std::uint64_t seed = derive_seed(key, window);
      const Distribution qf = cluster_distribution(q, map);
      const ZetaOutcome zeta = sample_zeta(auxiliary_distribution(qf, alpha), seed_to_uniform(seed));
      const Distribution p = conditional_token_distribution(q, qf, map, alpha, zeta);
      next = static_cast<TokenId>(sample_index(p.probs(), token_u));
      step.zeta = zeta;
      step.seed = seed;
    }
    history.push_back(next);
    window.push(map.cluster_of(next));
    record.tokens.push_back(next);
    record.steps.push_back(step);
  }
  return record;
}

std::string GenerationRecord::to_json_line() const {
  nlohmann::json doc;
  doc["prompt"] = prompt;
  doc["tokens"] = tokens;
  nlohmann::json zetas = nlohmann::json::array();
  nlohmann::json seeds = nlohmann::json::array();
  for (const auto& step : steps) {
    if (!step.zeta) {
      zetas.push_back(nullptr);
    } else if (step.zeta->is_overflow()) {
      zetas.push_back("overflow");
    } else {
      zetas.push_back(step.zeta->cluster_index());
    }
    seeds.push_back(step.seed ? nlohmann::json(*step.seed) : nlohmann::json(nullptr));
  }
  doc["zeta"] = zetas;
  doc["seeds"] = seeds;
  doc["config"] = {{"alpha", config.alpha}, {"window", config.window}, {"precursor", config.precursor_len}};
  doc["token_rng_seed"] = token_rng_seed;
  return doc.dump();
}

GenerationRecord GenerationRecord::from_json_line(const std::string& line) {
  try {
    const auto doc = nlohmann::json::parse(line);
    GenerationRecord record;
    record.prompt = doc.at("prompt").get<TokenSequence>();
    record.tokens = doc.at("tokens").get<TokenSequence>();
    const auto& zetas = doc.at("zeta");
    const auto& seeds = doc.at("seeds");
    if (zetas.size() != record.tokens.size() || seeds.size() != record.tokens.size()) {
      throw Error(ErrorCode::kParseError, "generation record arrays have inconsistent lengths");
    }
    for (std::size_t i = 0; i < zetas.size(); ++i) {
      GenerationStep step;
      if (zetas[i].is_string()) {
        if (zetas[i].get<std::string>() != "overflow") throw Error(ErrorCode::kParseError, "bad zeta entry");
        step.zeta = ZetaOutcome::overflow();
      } else if (!zetas[i].is_null()) {
        step.zeta = ZetaOutcome::cluster(zetas[i].get<ClusterId>());
      }
      if (!seeds[i].is_null()) step.seed = seeds[i].get<std::uint64_t>();
      if (step.zeta.has_value() != step.seed.has_value()) {
        throw Error(ErrorCode::kParseError, "zeta and seed presence disagree at step " + std::to_string(i));
      }
      record.steps.push_back(step);
    }
    const auto& cfg = doc.at("config");
    record.config.alpha = cfg.at("alpha").get<double>();
    record.config.window = cfg.at("window").get<std::uint32_t>();
    record.config.precursor_len = cfg.at("precursor").get<std::uint32_t>();
    record.token_rng_seed = doc.at("token_rng_seed").get<std::uint64_t>();
    return record;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kParseError, std::string("generation record: ") + e.what());
  }
}

}  // namespace pasa
