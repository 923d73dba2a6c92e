#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "pasa/embedder.hpp"

namespace pasa {

struct PositionScore {
  std::size_t position;  // index into the scored continuation
  ClusterId observed_cluster;
  ZetaOutcome replayed;
  bool matched;
};

struct DetectionReport {
  std::size_t scored_positions = 0;  // n
  std::size_t matches = 0;           // S
  double normalized_score = 0.0;     // S / n
  double p_value_bound = 1.0;        // P(Binomial(n, alpha) >= S)
  std::vector<PositionScore> per_position;
  std::map<double, bool> verdict_at;  // FPR target -> verdict

  std::string to_json() const;
  std::string summary_line() const;
};

/// Replays the auxiliary draws on `text` and scores 1{f(x_t) = zeta_t}.
///
/// `prompt` (possibly empty) is context only: it feeds the surrogate and the
/// semantic window but is never scored. The first `precursor_len` tokens of
/// `text` are skipped, mirroring generation.
DetectionReport detect(std::span<const TokenId> text, const LanguageModel& surrogate, const ClusterMap& map,
                       const WatermarkKey& key, const WatermarkConfig& config,
                       std::span<const TokenId> prompt = {});

/// Upper tail P(X >= successes) for X ~ Binomial(trials, p), by exact summation.
double binomial_upper_tail(std::size_t trials, std::size_t successes, double p);

/// Empirical quantile with "higher" interpolation: sorted[ceil(q * (n - 1))].
double higher_quantile(std::vector<double> sample, double q);

/// Fills report.verdict_at: verdict is score > (1 - fpr)-quantile of h0_scores.
void threshold_verdict(DetectionReport& report, std::span<const double> h0_scores, std::span<const double> fpr_targets);
bool threshold_verdict(double score, std::span<const double> h0_scores, double fpr);

}  // namespace pasa
