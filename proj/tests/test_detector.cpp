#include <doctest.h>

#include <cmath>
#include <numeric>

#include "pasa/attacks.hpp"
#include "pasa/detector.hpp"

using namespace pasa;

namespace {

struct Fixture {
  std::shared_ptr<const ClusterMap> map = std::make_shared<const ClusterMap>(
      build_cluster_map(synth_embeddings(128, 8, 4, 0.05, 11), {4, 1, 100, 1e-9}));
  std::shared_ptr<const ToyLm> lm = std::make_shared<const ToyLm>(LmSpec{128, 1, 0.5, 1, LmMode::kTokenMarkov}, map);
  WatermarkConfig cfg{0.4, 3, 3};
  WatermarkKey key = WatermarkKey::from_seed(2);
};

}  // namespace

TEST_CASE("binomial tail against reference values") {
  // Reference values from scipy.stats.binom.sf(s - 1, n, p).
  CHECK(binomial_upper_tail(200, 100, 0.4) == doctest::Approx(0.0026354033561909757).epsilon(1e-10));
  CHECK(binomial_upper_tail(10, 3, 0.4) == doctest::Approx(0.8327102464).epsilon(1e-10));
  CHECK(binomial_upper_tail(197, 190, 0.4) == doctest::Approx(1.449372796351105e-65).epsilon(1e-9));
  CHECK(binomial_upper_tail(5, 5, 0.5) == doctest::Approx(0.03125).epsilon(1e-12));
  CHECK(binomial_upper_tail(1000, 420, 0.4) == doctest::Approx(0.10427914711099558).epsilon(1e-10));
  CHECK(binomial_upper_tail(50, 0, 0.3) == 1.0);
  CHECK(binomial_upper_tail(5, 6, 0.3) == 0.0);
}

TEST_CASE("exact replay with the generator as surrogate") {
  Fixture f;
  for (std::uint64_t s = 0; s < 10; ++s) {
    const auto rec = generate_watermarked(*f.lm, *f.map, f.key, f.cfg, {}, 150, s);
    const auto report = detect(rec.tokens, *f.lm, *f.map, f.key, f.cfg);
    REQUIRE(report.scored_positions == 147);
    std::size_t expected = 0;
    for (const auto& p : report.per_position) {
      const auto& step = rec.steps[p.position];
      CHECK(p.replayed == *step.zeta);
      CHECK(p.matched == !step.zeta->is_overflow());
      CHECK(p.matched == p.replayed.matches(p.observed_cluster));
      expected += step.zeta->is_overflow() ? 0 : 1;
    }
    CHECK(report.matches == expected);
    CHECK(report.normalized_score == static_cast<double>(expected) / 147.0);
    CHECK(report.p_value_bound > 0.0);
    CHECK(report.p_value_bound <= 1.0);
  }
}

TEST_CASE("replay with a prompt") {
  Fixture f;
  const TokenSequence prompt{4, 8, 15, 16};
  const auto rec = generate_watermarked(*f.lm, *f.map, f.key, f.cfg, prompt, 60, 1);
  const auto with = detect(rec.tokens, *f.lm, *f.map, f.key, f.cfg, prompt);
  for (const auto& p : with.per_position) CHECK(p.replayed == *rec.steps[p.position].zeta);
  const auto without = detect(rec.tokens, *f.lm, *f.map, f.key, f.cfg);
  CHECK(without.scored_positions == with.scored_positions);
}

TEST_CASE("insufficient length") {
  Fixture f;
  const TokenSequence tiny{1, 2, 3};
  try {
    detect(tiny, *f.lm, *f.map, f.key, f.cfg);
    FAIL("expected InsufficientLength");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kInsufficientLength);
  }
  const TokenSequence four{1, 2, 3, 4};
  CHECK(detect(four, *f.lm, *f.map, f.key, f.cfg).scored_positions == 1);
}

TEST_CASE("unwatermarked mean score stays below alpha") {
  Fixture f;
  SurrogateLm slm(f.lm, 0.1);
  const std::size_t n_texts = 1000;
  double total = 0.0;
  std::size_t positions = 0;
  for (std::size_t i = 0; i < n_texts; ++i) {
    const auto text = sample_unwatermarked(*f.lm, {}, 203, 5000 + i);
    const auto r = detect(text, slm, *f.map, f.key, f.cfg);
    total += static_cast<double>(r.matches);
    positions += r.scored_positions;
  }
  const double mean = total / static_cast<double>(positions);
  CHECK(mean <= 0.4 + 3.0 * std::sqrt(0.4 * 0.6 / static_cast<double>(positions)));
}

TEST_CASE("wrong key looks like unwatermarked text") {
  Fixture f;
  SurrogateLm slm(f.lm, 0.1);
  std::vector<double> wrong_scores;
  std::vector<double> h0_scores;
  for (std::uint64_t i = 0; i < 300; ++i) {
    const auto rec = generate_watermarked(*f.lm, *f.map, f.key, f.cfg, {}, 200, i);
    // fresh wrong key per text: one fixed key only samples one realisation of the PRF
    const auto wrong = WatermarkKey::from_seed(5000 + i);
    wrong_scores.push_back(detect(rec.tokens, slm, *f.map, wrong, f.cfg).normalized_score);
    const auto h0 = sample_unwatermarked(*f.lm, {}, 200, 10000 + i);
    h0_scores.push_back(detect(h0, slm, *f.map, wrong, f.cfg).normalized_score);
  }
  const auto mean_var = [](const std::vector<double>& v) {
    const double m = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
    double ss = 0.0;
    for (double x : v) ss += (x - m) * (x - m);
    return std::pair{m, ss / static_cast<double>(v.size() - 1)};
  };
  const auto [mw, vw] = mean_var(wrong_scores);
  const auto [m0, v0] = mean_var(h0_scores);
  const double se = std::sqrt(vw / wrong_scores.size() + v0 / h0_scores.size());
  CHECK(std::abs(mw - m0) <= 2.0 * se);
}

TEST_CASE("within-cluster edits leave cluster-markov detection unchanged") {
  Fixture f;
  auto cm = std::make_shared<const ToyLm>(LmSpec{128, 2, 0.5, 4, LmMode::kClusterMarkov}, f.map);
  SurrogateLm slm(cm, 0.1);
  for (std::uint64_t s = 0; s < 10; ++s) {
    const auto rec = generate_watermarked(*f.lm, *f.map, f.key, f.cfg, {}, 120, s);
    const auto attacked = apply_attack(rec.tokens, {AttackKind::kWithinClusterReplace, 1.0, s + 1}, *f.map);
    CHECK(attacked != rec.tokens);
    const auto a = detect(rec.tokens, slm, *f.map, f.key, f.cfg);
    const auto b = detect(attacked, slm, *f.map, f.key, f.cfg);
    CHECK(a.matches == b.matches);
    CHECK(a.normalized_score == b.normalized_score);
    for (std::size_t i = 0; i < a.per_position.size(); ++i) {
      CHECK(a.per_position[i].matched == b.per_position[i].matched);
      CHECK(a.per_position[i].replayed == b.per_position[i].replayed);
    }
  }
}

TEST_CASE("higher quantile and verdicts") {
  const std::vector<double> s{0.5, 0.1, 0.3, 0.2, 0.4};
  CHECK(higher_quantile(s, 0.0) == 0.1);
  CHECK(higher_quantile(s, 1.0) == 0.5);
  CHECK(higher_quantile(s, 0.5) == 0.3);
  CHECK(higher_quantile(s, 0.51) == 0.4);
  CHECK(higher_quantile(s, 0.75) == 0.4);

  const std::vector<double> flat(100, 0.1);
  CHECK(threshold_verdict(0.9, flat, 0.01));
  CHECK_FALSE(threshold_verdict(0.1, flat, 0.01));
  CHECK(threshold_verdict(0.2, s, 1.0));
  CHECK_FALSE(threshold_verdict(0.1, s, 1.0));
  CHECK_FALSE(threshold_verdict(0.5, s, 0.01));
  CHECK_THROWS_AS(threshold_verdict(0.5, std::vector<double>{}, 0.01), Error);

  DetectionReport r;
  r.normalized_score = 0.35;
  const std::vector<double> targets{0.01, 0.5};
  threshold_verdict(r, s, targets);
  CHECK_FALSE(r.verdict_at.at(0.01));
  CHECK(r.verdict_at.at(0.5));
  CHECK(r.summary_line().find("fpr@0.5=watermarked") != std::string::npos);
}
