#include <doctest.h>

#include <cmath>

#include "pasa/eval.hpp"

using namespace pasa;

namespace {

ExperimentConfig small_config() {
  ExperimentConfig cfg;
  cfg.lm.vocab_size = 128;
  cfg.length = 60;
  cfg.n_pairs = 12;
  cfg.attacks = {{AttackKind::kWithinClusterReplace, 0.5}, {AttackKind::kCrossClusterReplace, 0.5}};
  return cfg;
}

}  // namespace

TEST_CASE("roc_auc examples") {
  const std::vector<double> h1{0.9, 0.8};
  const std::vector<double> h0{0.1, 0.2};
  CHECK(roc_auc(h1, h0) == 1.0);
  CHECK(roc_auc(h0, h0) == 0.5);
  const std::vector<double> one{0.3};
  const std::vector<double> split{0.1, 0.5};
  CHECK(roc_auc(one, split) == 0.5);
  CHECK_THROWS_AS(roc_auc(std::vector<double>{}, h0), Error);
}

TEST_CASE("roc_auc antisymmetry without ties") {
  SplitMix64 rng(1);
  for (int i = 0; i < 50; ++i) {
    std::vector<double> a(1 + rng.below(30));
    std::vector<double> b(1 + rng.below(30));
    for (auto& x : a) x = rng.uniform();
    for (auto& x : b) x = rng.uniform() + 0.2;
    CHECK(roc_auc(a, b) + roc_auc(b, a) == doctest::Approx(1.0).epsilon(1e-14));
  }
}

TEST_CASE("tpr_at_fpr") {
  const std::vector<double> h1{0.9, 0.8, 0.95};
  const std::vector<double> h0{0.1, 0.2, 0.3};
  CHECK(tpr_at_fpr(h1, h0, 0.01) == 1.0);
  CHECK(tpr_at_fpr(h0, h1, 0.5) == 0.0);
  CHECK_THROWS_AS(tpr_at_fpr(h1, h0, 0.0), Error);
  CHECK_THROWS_AS(tpr_at_fpr(h1, h0, 1.0), Error);
  CHECK_THROWS_AS(tpr_at_fpr(h1, std::vector<double>{}, 0.1), Error);
}

TEST_CASE("tpr_at_fpr under exchangeable populations") {
  SplitMix64 rng(2);
  double total = 0.0;
  const int reps = 400;
  for (int r = 0; r < reps; ++r) {
    std::vector<double> a(200);
    std::vector<double> b(200);
    for (auto& x : a) x = rng.uniform();
    for (auto& x : b) x = rng.uniform();
    total += tpr_at_fpr(a, b, 0.1);
  }
  CHECK(total / reps == doctest::Approx(0.1).epsilon(0.1));
}

TEST_CASE("ks_two_sample against a reference") {
  std::vector<double> a;
  std::vector<double> b;
  for (int i = 1; i <= 20; ++i) a.push_back(0.1 * i);
  for (int i = 1; i <= 30; ++i) b.push_back(0.1 * i + 0.75);
  const auto ks = ks_two_sample(a, b);
  CHECK(ks.statistic == doctest::Approx(0.6).epsilon(1e-12));
  // scipy.special.kolmogorov at the corrected statistic.
  CHECK(ks.p_value == doctest::Approx(0.0001632168757425847).epsilon(1e-9));
  const auto same = ks_two_sample(a, a);
  CHECK(same.statistic == 0.0);
  CHECK(same.p_value == 1.0);
  CHECK_THROWS_AS(ks_two_sample(a, std::vector<double>{}), Error);
}

TEST_CASE("experiment validation") {
  auto cfg = small_config();
  cfg.n_pairs = 0;
  try {
    run_experiment(cfg);
    FAIL("expected InvalidInput");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kInvalidInput);
  }
  cfg = small_config();
  cfg.fpr_targets = {0.0};
  CHECK_THROWS_AS(cfg.validate(), Error);
  cfg = small_config();
  cfg.length = 3;
  CHECK_THROWS_AS(cfg.validate(), Error);
}

TEST_CASE("experiments are reproducible and worker independent") {
  const auto cfg = small_config();
  const auto a = run_experiment(cfg, 1);
  const auto b = run_experiment(cfg, 4);
  CHECK(a.to_json() == b.to_json());
  CHECK(a.to_csv_rows() == b.to_csv_rows());
  REQUIRE(a.settings.size() == 3);
  for (std::size_t s = 0; s < 3; ++s) {
    CHECK(a.settings[s].h1_scores == b.settings[s].h1_scores);
    CHECK(a.settings[s].h0_scores == b.settings[s].h0_scores);
  }
  CHECK(a.clean().attack == "none");
  for (const auto& s : a.settings) {
    CHECK(s.auroc >= 0.0);
    CHECK(s.auroc <= 1.0);
    for (const auto& [fpr, tpr] : s.tpr_at_fpr) {
      CHECK(tpr >= 0.0);
      CHECK(tpr <= 1.0);
    }
  }
  auto other = cfg;
  other.master_seed = 7;
  CHECK(run_experiment(other).to_json() != a.to_json());
}

TEST_CASE("within-cluster attack is invisible to a cluster-markov surrogate") {
  auto cfg = small_config();
  cfg.slm_base = LmSpec{128, 1, 0.5, 9, LmMode::kClusterMarkov};
  cfg.attacks = {{AttackKind::kWithinClusterReplace, 1.0}};
  cfg.attack_reference = AttackReference::kWatermark;
  const auto r = run_experiment(cfg);
  CHECK(r.settings[1].h1_scores == r.settings[0].h1_scores);
  CHECK(r.settings[1].h1_matches == r.settings[0].h1_matches);
  CHECK(r.settings[1].auroc == r.settings[0].auroc);
}

TEST_CASE("config JSON round trip and overrides") {
  auto cfg = small_config();
  cfg.slm_base = LmSpec{128, 2, 0.7, 3, LmMode::kClusterMarkov};
  cfg.key_hex = std::string(64, 'a');
  cfg.attack_reference = AttackReference::kWatermark;
  cfg.watermark.alpha = 0.3;
  const auto back = ExperimentConfig::from_json(cfg.to_json());
  CHECK(back.to_json() == cfg.to_json());
  CHECK(back.slm_base->mode == LmMode::kClusterMarkov);
  CHECK(back.attacks.size() == 2);
  CHECK(back.key() == WatermarkKey::from_hex(cfg.key_hex));

  const auto partial = ExperimentConfig::from_json(R"({"k": 8, "alpha": 0.25})");
  CHECK(partial.k == 8);
  CHECK(partial.watermark.alpha == 0.25);
  CHECK(partial.watermark.window == 3);
  CHECK(partial.length == 200);
  CHECK_THROWS_AS(ExperimentConfig::from_json("{"), Error);
  CHECK_THROWS_AS(ExperimentConfig::from_json(R"({"attacks": [{"kind": "rewrite"}]})"), Error);
}

TEST_CASE("sweep axes") {
  const auto cfg = small_config();
  CHECK(with_axis(cfg, SweepAxis::kK, 8).k == 8);
  CHECK(with_axis(cfg, SweepAxis::kWindow, 5).watermark.window == 5);
  CHECK(with_axis(cfg, SweepAxis::kAlpha, 0.2).watermark.alpha == 0.2);
  CHECK(with_axis(cfg, SweepAxis::kRate, 0.3).attacks[1].rate == 0.3);
  CHECK(with_axis(cfg, SweepAxis::kMix, 0.0).slm_mix == 0.0);
  CHECK(sweep_axis_from_string("w") == SweepAxis::kWindow);
  CHECK_THROWS_AS(sweep_axis_from_string("depth"), Error);
  const std::vector<double> ks{2, 4};
  const auto reports = run_sweep(cfg, SweepAxis::kK, ks);
  REQUIRE(reports.size() == 2);
  CHECK(reports[0].setting.rfind("k=2;", 0) == 0);
}

TEST_CASE("csv rows") {
  const auto r = run_experiment(small_config());
  const auto rows = r.to_csv_rows();
  CHECK(csv_header() == "setting,attack,metric,value\n");
  CHECK(rows.find(",none,auroc,") != std::string::npos);
  CHECK(rows.find(",cross_cluster_replace@0.5,tpr@0.01,") != std::string::npos);
  CHECK(rows.find(",none,nll_ks_p_value,") != std::string::npos);
}
