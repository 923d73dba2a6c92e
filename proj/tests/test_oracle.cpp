#include <doctest.h>

#include <cmath>

#include "pasa/embedder.hpp"
#include "pasa/oracle.hpp"

using namespace pasa;
using namespace pasa::oracle;

namespace {

TinyInstance single_step(std::vector<double> q, std::vector<ClusterId> classes, std::uint32_t k, double alpha) {
  TinyInstance inst;
  inst.q_seq = {q.size(), 1, std::move(q)};
  inst.sequence_class = std::move(classes);
  inst.k = k;
  inst.alpha = alpha;
  return inst;
}

TinyInstance worked() { return single_step({0.5, 0.2, 0.3}, {0, 0, 1}, 2, 0.4); }

DetectorTable constant_detector(const TinyInstance& inst, std::uint8_t value) {
  return {inst.q_seq.num_sequences(), inst.k,
          std::vector<std::uint8_t>(inst.q_seq.num_sequences() * (inst.k + 1), value)};
}

}  // namespace

TEST_CASE("min_md_error closed form") {
  CHECK(min_md_error(worked()) == doctest::Approx(0.3).epsilon(1e-15));
  CHECK(min_md_error(single_step({0.5, 0.2, 0.3}, {0, 0, 1}, 2, 0.75)) == 0.0);
  CHECK(min_md_error(single_step({0.5, 0.2, 0.3}, {0, 0, 0}, 1, 0.3)) == doctest::Approx(0.7).epsilon(1e-15));
}

TEST_CASE("exhaustive search agrees on the worked instances") {
  CHECK(std::abs(exhaustive_detector_search(worked()) - 0.3) <= 1e-9);
  CHECK(exhaustive_detector_search(single_step({0.5, 0.2, 0.3}, {0, 0, 1}, 2, 0.99)) <= 1e-12);
  CHECK(std::abs(exhaustive_detector_search(single_step({0.5, 0.2, 0.3}, {0, 0, 0}, 1, 0.5)) - 0.5) <= 1e-9);
}

TEST_CASE("exhaustive search refuses large instances") {
  SplitMix64 rng(1);
  const auto big = random_instance(rng, 4, 1, 3);
  try {
    exhaustive_detector_search(big);
    FAIL("expected InstanceTooLarge");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kInstanceTooLarge);
  }
  const auto two_steps = random_instance(rng, 2, 2, 2);
  CHECK_THROWS_AS(exhaustive_detector_search(two_steps), Error);
}

TEST_CASE("point-mass instance") {
  const auto inst = single_step({0.0, 1.0, 0.0}, {0, 1, 1}, 2, 0.4);
  const auto scheme = build_optimal_sequence_scheme(inst);
  CHECK(scheme.p_zeta == std::vector<double>{0.0, 0.4, 0.6});
  CHECK_FALSE(scheme.p_x_given_zeta[0].has_value());
  CHECK(*scheme.p_x_given_zeta[1] == std::vector<double>{0.0, 1.0, 0.0});
  CHECK(*scheme.p_x_given_zeta[2] == std::vector<double>{0.0, 1.0, 0.0});
}

TEST_CASE("zero overflow omits the overflow outcome") {
  const auto inst = single_step({0.3, 0.3, 0.4}, {0, 1, 2}, 3, 0.5);
  const auto scheme = build_optimal_sequence_scheme(inst);
  CHECK(scheme.p_zeta[3] == 0.0);
  CHECK_FALSE(scheme.p_x_given_zeta[3].has_value());
  CHECK(mixture_deviation(scheme, inst) <= 1e-15);
}

TEST_CASE("constant detectors") {
  const auto inst = worked();
  const auto scheme = build_optimal_sequence_scheme(inst);
  const auto none = worst_case_errors(scheme, constant_detector(inst, 0), inst);
  CHECK(none.fa == 0.0);
  CHECK(none.md == doctest::Approx(1.0).epsilon(1e-15));
  const auto all = worst_case_errors(scheme, constant_detector(inst, 1), inst);
  CHECK(all.fa == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(all.md == 0.0);
  auto bad = constant_detector(inst, 0);
  bad.accept.pop_back();
  CHECK_THROWS_AS(worst_case_errors(scheme, bad, inst), Error);
}

TEST_CASE("optimal pair attains the bound on random instances") {
  SplitMix64 rng(21);
  for (int i = 0; i < 300; ++i) {
    const std::size_t length = 1 + rng.below(3);
    const std::size_t vocab = 2 + rng.below(length == 3 ? 4 : 5);
    std::size_t n = 1;
    for (std::size_t t = 0; t < length; ++t) n *= vocab;
    const auto k = static_cast<std::uint32_t>(1 + rng.below(std::min<std::size_t>(n, 8)));
    const auto inst = random_instance(rng, vocab, length, k);
    const auto scheme = build_optimal_sequence_scheme(inst);
    const auto e = worst_case_errors(scheme, optimal_detector(inst), inst);
    CHECK(e.fa <= inst.alpha + 1e-12);
    CHECK(std::abs(e.md - min_md_error(inst)) <= 1e-12);
    CHECK(mixture_deviation(scheme, inst) <= 1e-12);
  }
}

TEST_CASE("formula equals exhaustive search on |V|=3, K=2") {
  SplitMix64 rng(5);
  for (int i = 0; i < 50; ++i) {
    const auto inst = random_instance(rng, 3, 1, 2);
    CHECK(std::abs(exhaustive_detector_search(inst) - min_md_error(inst)) <= 1e-9);
  }
}

TEST_CASE("single-step scheme matches the embedder") {
  SplitMix64 rng(8);
  for (int i = 0; i < 100; ++i) {
    const std::size_t vocab = 2 + rng.below(5);
    const auto k = static_cast<std::uint32_t>(1 + rng.below(vocab));
    const auto inst = random_instance(rng, vocab, 1, k);
    const auto scheme = build_optimal_sequence_scheme(inst);
    const auto map = ClusterMap::from_assignment(inst.sequence_class, inst.k);
    const Distribution q = Distribution::from_probs(inst.q_seq.probs);
    const Distribution qf = cluster_distribution(q, map);
    const FaBudget alpha(inst.alpha);
    const auto aux = auxiliary_distribution(qf, alpha);
    for (std::size_t c = 0; c < inst.k; ++c) {
      CHECK(std::abs(aux.cluster_mass[c] - scheme.p_zeta[c]) <= 1e-12);
      if (aux.cluster_mass[c] > 0.0) {
        const auto p = conditional_token_distribution(q, qf, map, alpha, ZetaOutcome::cluster(c));
        for (std::size_t x = 0; x < vocab; ++x) CHECK(std::abs(p[x] - (*scheme.p_x_given_zeta[c])[x]) <= 1e-12);
      }
    }
    CHECK(std::abs(aux.overflow_mass - scheme.p_zeta[inst.k]) <= 1e-12);
    if (aux.overflow_mass > 0.0) {
      const auto p = conditional_token_distribution(q, qf, map, alpha, ZetaOutcome::overflow());
      for (std::size_t x = 0; x < vocab; ++x) CHECK(std::abs(p[x] - (*scheme.p_x_given_zeta[inst.k])[x]) <= 1e-12);
    }
  }
}

TEST_CASE("min_md_error is non-increasing in alpha") {
  SplitMix64 rng(13);
  for (int i = 0; i < 100; ++i) {
    auto inst = random_instance(rng, 3, 2, 4);
    double previous = 2.0;
    for (double a = 0.05; a < 1.0; a += 0.05) {
      inst.alpha = a;
      const double md = min_md_error(inst);
      CHECK(md <= previous + 1e-15);
      previous = md;
    }
  }
}

TEST_CASE("merging classes never lowers the bound") {
  SplitMix64 rng(14);
  for (int i = 0; i < 100; ++i) {
    auto inst = random_instance(rng, 3, 2, 4);
    const double fine = min_md_error(inst);
    for (auto& c : inst.sequence_class) c = c == 3 ? 2 : c;
    inst.k = 3;
    CHECK(min_md_error(inst) >= fine - 1e-15);
  }
}

TEST_CASE("product classes") {
  const auto map = ClusterMap::from_assignment({0, 1, 1}, 2);
  const auto classes = product_classes(map, 2);
  CHECK(classes == std::vector<ClusterId>{0, 1, 1, 2, 3, 3, 2, 3, 3});
  SequenceDistribution seq{3, 2, std::vector<double>(9, 1.0 / 9)};
  CHECK(seq.decode(5) == TokenSequence{1, 2});
}

TEST_CASE("instance validation") {
  auto inst = worked();
  inst.sequence_class = {0, 0, 0};
  CHECK_THROWS_AS(inst.validate(), Error);
  auto big = worked();
  big.q_seq.vocab_size = 7;
  CHECK_THROWS_AS(big.validate(), Error);
}

TEST_CASE("random verification sweep") {
  const auto summary = verify_random_instances(200, 1);
  CHECK(summary.instances == 200);
  CHECK(summary.searched > 0);
  CHECK(summary.max_deviation() < 1e-9);
}
