#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "pasa/attacks.hpp"
#include "pasa/embedder.hpp"
#include "pasa/semantics.hpp"
#include "pasa/toy_lm.hpp"

namespace pasa {

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

/// Mann-Whitney U / (n1 * n0), ties counted as one half.
double roc_auc(std::span<const double> h1_scores, std::span<const double> h0_scores);

/// Fraction of h1 strictly above the (1 - fpr) higher-quantile of h0.
double tpr_at_fpr(std::span<const double> h1_scores, std::span<const double> h0_scores, double fpr);

struct KsResult {
  double statistic = 0.0;
  double p_value = 1.0;
};

/// Two-sample Kolmogorov-Smirnov test with the asymptotic Kolmogorov
/// p-value (Stephens' small-sample correction).
KsResult ks_two_sample(std::span<const double> a, std::span<const double> b);

// ---------------------------------------------------------------------------
// Experiments
// ---------------------------------------------------------------------------

struct EmbeddingSpec {
  std::size_t dim = 16;
  std::size_t semantic_classes = 4;
  double spread = 0.05;
  std::uint64_t seed = 11;
};

/// Which cluster map the attacks treat as "meaning". `kSemantic` uses the
/// ground-truth classes of the synthetic embeddings (k-means with
/// k = semantic_classes), so attacks are fixed while K varies.
enum class AttackReference { kSemantic, kWatermark };

struct ExperimentConfig {
  LmSpec lm;
  std::optional<LmSpec> slm_base;  // defaults to `lm`
  double slm_mix = 0.1;
  EmbeddingSpec embedding;
  std::uint32_t k = 4;
  std::uint64_t kmeans_seed = 1;
  std::uint32_t kmeans_max_iters = 100;
  double kmeans_tol = 1e-9;
  WatermarkConfig watermark;
  std::string key_hex;  // empty: derived from master_seed
  std::size_t prompt_len = 0;
  std::size_t length = 200;
  std::size_t n_pairs = 200;
  std::vector<AttackSpec> attacks;
  AttackReference attack_reference = AttackReference::kSemantic;
  std::vector<double> fpr_targets{0.01, 0.1};
  std::uint64_t master_seed = 2024;

  void validate() const;
  WatermarkKey key() const;

  std::string to_json() const;
  /// Missing fields keep their defaults.
  static ExperimentConfig from_json(const std::string& text);
  static ExperimentConfig load(const std::string& path);
};

struct SettingMetrics {
  std::string attack;  // "none" for clean text
  double auroc = 0.0;
  std::map<double, double> tpr_at_fpr;
  double h0_mean = 0.0;
  double h0_sd = 0.0;
  double h1_mean = 0.0;
  double h1_sd = 0.0;
  std::vector<double> h0_scores;
  std::vector<double> h1_scores;
  std::vector<std::size_t> h1_matches;
};

struct MetricsReport {
  std::string setting;
  std::vector<SettingMetrics> settings;  // clean first, then one per attack
  // Distortion check. The watermarked NLL sample is drawn with a fresh key per
  // pair, since the text law matches Q only on average over the key. The
  // shared-key variant scores the H1 texts themselves.
  double nll_watermarked_mean = 0.0;
  double nll_unwatermarked_mean = 0.0;
  KsResult nll_ks;
  double nll_shared_key_mean = 0.0;
  KsResult nll_ks_shared_key;
  std::size_t nll_tokens_per_side = 0;
  double h0_pbound_rate_at_001 = 0.0;  // fraction of H0 texts with p_value_bound <= 0.01

  const SettingMetrics& clean() const { return settings.front(); }
  std::string to_json() const;
  /// Rows "setting,attack,metric,value" (no header).
  std::string to_csv_rows() const;
};

std::string csv_header();

/// Shared artifacts for a configuration: embeddings, maps, models.
struct ExperimentWorld {
  std::shared_ptr<const ClusterMap> watermark_map;
  std::shared_ptr<const ClusterMap> reference_map;
  std::shared_ptr<const ToyLm> lm;
  std::shared_ptr<const LanguageModel> slm;
};

ExperimentWorld build_world(const ExperimentConfig& cfg);

/// Generates n_pairs watermarked and n_pairs unwatermarked texts, applies
/// every attack to the watermarked ones, detects, and aggregates. Output
/// depends only on the config; `workers` only changes wall-clock time.
MetricsReport run_experiment(const ExperimentConfig& cfg, unsigned workers = 1);

enum class SweepAxis { kK, kWindow, kAlpha, kRate, kMix };
SweepAxis sweep_axis_from_string(const std::string& name);
std::string to_string(SweepAxis axis);

/// Copy of `base` with `axis` set to `value` (rate applies to every attack).
ExperimentConfig with_axis(const ExperimentConfig& base, SweepAxis axis, double value);

std::vector<MetricsReport> run_sweep(const ExperimentConfig& base, SweepAxis axis, std::span<const double> values,
                                     unsigned workers = 1);

}  // namespace pasa
