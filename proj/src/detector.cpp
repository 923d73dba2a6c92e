#include "pasa/detector.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include <nlohmann/json.hpp>

namespace pasa {

double binomial_upper_tail(std::size_t trials, std::size_t successes, double p) {
  if (successes == 0) return 1.0;
  if (successes > trials) return 0.0;
  if (p <= 0.0) return 0.0;
  if (p >= 1.0) return 1.0;
  const double n = static_cast<double>(trials);
  const double log_p = std::log(p);
  const double log_q = std::log1p(-p);
  std::vector<double> log_terms;
  log_terms.reserve(trials - successes + 1);
  for (std::size_t k = successes; k <= trials; ++k) {
    const double kk = static_cast<double>(k);
    log_terms.push_back(std::lgamma(n + 1.0) - std::lgamma(kk + 1.0) - std::lgamma(n - kk + 1.0) + kk * log_p +
                        (n - kk) * log_q);
  }
  const double peak = *std::max_element(log_terms.begin(), log_terms.end());
  double acc = 0.0;
  for (double lt : log_terms) acc += std::exp(lt - peak);
  return std::min(1.0, std::exp(peak + std::log(acc)));
}

DetectionReport detect(std::span<const TokenId> text, const LanguageModel& surrogate, const ClusterMap& map,
                       const WatermarkKey& key, const WatermarkConfig& config, std::span<const TokenId> prompt) {
  config.validate();
  if (text.size() <= config.precursor_len) {
    throw Error(ErrorCode::kInsufficientLength, "text of " + std::to_string(text.size()) +
                                                    " tokens leaves nothing to score after " +
                                                    std::to_string(config.precursor_len) + " precursor tokens");
  }
  if (surrogate.vocab_size() != map.vocab_size()) {
    throw Error(ErrorCode::kInvalidConfig, "surrogate and cluster map disagree on vocabulary size");
  }
  const FaBudget alpha(config.alpha);

  TokenSequence history(prompt.begin(), prompt.end());
  history.reserve(prompt.size() + text.size());
  WindowState window(config.window);
  for (TokenId x : prompt) window.push(map.cluster_of(x));

  DetectionReport report;
  report.per_position.reserve(text.size() - config.precursor_len);
  for (std::size_t t = 0; t < text.size(); ++t) {
    const ClusterId observed = map.cluster_of(text[t]);
    if (t >= config.precursor_len) {
      const Distribution q = surrogate.next_token_distribution(history);
      const Distribution qf = cluster_distribution(q, map);
      const std::uint64_t seed = derive_seed(key, window);
      const ZetaOutcome zeta = sample_zeta(auxiliary_distribution(qf, alpha), seed_to_uniform(seed));
      const bool matched = zeta.matches(observed);
      report.per_position.push_back({t, observed, zeta, matched});
      report.matches += matched ? 1 : 0;
    }
    history.push_back(text[t]);
    window.push(observed);
  }
  report.scored_positions = report.per_position.size();
  report.normalized_score =
      static_cast<double>(report.matches) / static_cast<double>(report.scored_positions);
  report.p_value_bound = std::max(binomial_upper_tail(report.scored_positions, report.matches, alpha.value()),
                                  std::numeric_limits<double>::min());
  return report;
}

double higher_quantile(std::vector<double> sample, double q) {
  if (sample.empty()) throw Error(ErrorCode::kInvalidInput, "empty calibration sample");
  if (!(q >= 0.0 && q <= 1.0)) throw Error(ErrorCode::kInvalidInput, "quantile level outside [0, 1]");
  std::sort(sample.begin(), sample.end());
  // The 1e-9 guard keeps exact-integer positions from rounding up a slot.
  const double pos = q * static_cast<double>(sample.size() - 1);
  const auto idx = static_cast<std::size_t>(std::max(0.0, std::ceil(pos - 1e-9)));
  return sample[std::min(idx, sample.size() - 1)];
}

bool threshold_verdict(double score, std::span<const double> h0_scores, double fpr) {
  if (h0_scores.empty()) throw Error(ErrorCode::kInvalidInput, "empty calibration sample");
  if (!(fpr > 0.0 && fpr <= 1.0)) throw Error(ErrorCode::kInvalidInput, "FPR target outside (0, 1]");
  const double threshold = higher_quantile({h0_scores.begin(), h0_scores.end()}, 1.0 - fpr);
  return score > threshold;
}

void threshold_verdict(DetectionReport& report, std::span<const double> h0_scores,
                       std::span<const double> fpr_targets) {
  for (double fpr : fpr_targets) report.verdict_at[fpr] = threshold_verdict(report.normalized_score, h0_scores, fpr);
}

std::string DetectionReport::to_json() const {
  nlohmann::json doc;
  doc["scored_positions"] = scored_positions;
  doc["matches"] = matches;
  doc["normalized_score"] = normalized_score;
  doc["p_value_bound"] = p_value_bound;
  nlohmann::json positions = nlohmann::json::array();
  for (const auto& p : per_position) {
    positions.push_back({{"position", p.position},
                         {"observed", p.observed_cluster},
                         {"zeta", to_string(p.replayed)},
                         {"matched", p.matched}});
  }
  doc["per_position"] = positions;
  nlohmann::json verdicts = nlohmann::json::array();
  for (const auto& [fpr, verdict] : verdict_at) verdicts.push_back({{"fpr", fpr}, {"watermarked", verdict}});
  doc["verdicts"] = verdicts;
  return doc.dump(1);
}

std::string DetectionReport::summary_line() const {
  std::ostringstream out;
  out << "n=" << scored_positions << " S=" << matches << " score=" << normalized_score
      << " p_bound=" << p_value_bound;
  for (const auto& [fpr, verdict] : verdict_at) {
    out << " fpr@" << fpr << "=" << (verdict ? "watermarked" : "not-watermarked");
  }
  return out.str();
}

}  // namespace pasa
