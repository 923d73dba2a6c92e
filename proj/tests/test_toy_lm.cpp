#include <doctest.h>

#include <cmath>
#include <thread>

#include "pasa/toy_lm.hpp"

using namespace pasa;

namespace {

std::shared_ptr<const ClusterMap> small_map() {
  std::vector<ClusterId> a(12);
  for (std::size_t i = 0; i < a.size(); ++i) a[i] = static_cast<ClusterId>(i % 3);
  return std::make_shared<const ClusterMap>(ClusterMap::from_assignment(a, 3));
}

/// Rows are point masses on (last + 1) mod |V|.
class CountingLm final : public LanguageModel {
 public:
  explicit CountingLm(std::size_t v) : v_(v) {}
  std::size_t vocab_size() const override { return v_; }
  Distribution next_token_distribution(std::span<const TokenId> history) const override {
    return Distribution::point_mass(v_, history.empty() ? 0 : (history.back() + 1) % v_);
  }

 private:
  std::size_t v_;
};

}  // namespace

TEST_CASE("order 0 ignores history") {
  ToyLm lm({50, 0, 0.5, 3, LmMode::kTokenMarkov});
  const TokenSequence a{1, 2, 3};
  const TokenSequence b{7};
  CHECK(lm.next_token_distribution(a) == lm.next_token_distribution(b));
  CHECK(lm.next_token_distribution({}) == lm.next_token_distribution(a));
}

TEST_CASE("rows are pure functions of the context suffix") {
  ToyLm lm({40, 2, 0.5, 9, LmMode::kTokenMarkov});
  ToyLm twin({40, 2, 0.5, 9, LmMode::kTokenMarkov});
  const TokenSequence a{5, 1, 2};
  const TokenSequence b{9, 1, 2};
  const TokenSequence c{1, 3};
  CHECK(lm.next_token_distribution(a) == lm.next_token_distribution(b));
  CHECK(lm.next_token_distribution(a) == twin.next_token_distribution(b));
  CHECK_FALSE(lm.next_token_distribution(a) == lm.next_token_distribution(c));
  ToyLm other_seed({40, 2, 0.5, 10, LmMode::kTokenMarkov});
  CHECK_FALSE(lm.next_token_distribution(a) == other_seed.next_token_distribution(a));
}

TEST_CASE("cluster_markov conditions only through f") {
  const auto map = small_map();
  ToyLm lm({12, 2, 0.5, 4, LmMode::kClusterMarkov}, map);
  const TokenSequence a{0, 4, 8};   // clusters 0 1 2
  const TokenSequence b{3, 1, 11};  // clusters 0 1 2
  const TokenSequence c{3, 1, 10};  // clusters 0 1 1
  CHECK(lm.next_token_distribution(a) == lm.next_token_distribution(b));
  CHECK_FALSE(lm.next_token_distribution(a) == lm.next_token_distribution(c));
  CHECK_THROWS_AS(ToyLm({12, 1, 0.5, 4, LmMode::kClusterMarkov}), Error);
}

TEST_CASE("rows are valid distributions") {
  ToyLm lm({512, 1, 0.5, 1, LmMode::kTokenMarkov});
  for (TokenId t = 0; t < 20; ++t) {
    const TokenSequence h{t};
    const auto& row = lm.row(h);
    CHECK(row.size() == 512);
    double sum = 0.0;
    for (double p : row.probs()) {
      CHECK(p >= 0.0);
      sum += p;
    }
    CHECK(std::abs(sum - 1.0) <= 1e-12);
  }
}

TEST_CASE("large concentration flattens rows") {
  ToyLm lm({30, 1, 1e6, 2, LmMode::kTokenMarkov});
  const TokenSequence h{4};
  for (double p : lm.row(h).probs()) CHECK(std::abs(p - 1.0 / 30.0) <= 1e-2);
}

TEST_CASE("invalid tokens and specs") {
  ToyLm lm({10, 1, 0.5, 1, LmMode::kTokenMarkov});
  const TokenSequence bad{10};
  CHECK_THROWS_AS(lm.next_token_distribution(bad), Error);
  CHECK_THROWS_AS(ToyLm({10, 1, 0.0, 1, LmMode::kTokenMarkov}), Error);
  CHECK_THROWS_AS(lm_mode_from_string("bigram"), Error);
  CHECK(lm_mode_from_string(to_string(LmMode::kClusterMarkov)) == LmMode::kClusterMarkov);
}

TEST_CASE("surrogate mixing") {
  auto base = std::make_shared<const CountingLm>(2);
  CHECK(SurrogateLm(base, 0.0).next_token_distribution({}) == base->next_token_distribution({}));
  const auto half = SurrogateLm(base, 0.5).next_token_distribution({});
  CHECK(half[0] == 0.75);
  CHECK(half[1] == 0.25);
  const auto full = SurrogateLm(base, 1.0).next_token_distribution({});
  CHECK(full == Distribution::uniform(2));
  CHECK_THROWS_AS(SurrogateLm(base, 1.5), Error);
}

TEST_CASE("surrogate rows lie in the mixing sandwich") {
  auto lm = std::make_shared<const ToyLm>(LmSpec{64, 1, 0.5, 3, LmMode::kTokenMarkov});
  for (double m : {0.0, 0.1, 0.5, 0.9}) {
    SurrogateLm slm(lm, m);
    for (TokenId t = 0; t < 8; ++t) {
      const TokenSequence h{t};
      const auto q = lm->next_token_distribution(h);
      const auto s = slm.next_token_distribution(h);
      for (std::size_t i = 0; i < q.size(); ++i) {
        CHECK(s[i] >= (1.0 - m) * q[i] - 1e-15);
        CHECK(s[i] <= (1.0 - m) * q[i] + m + 1e-15);
      }
    }
  }
}

TEST_CASE("sampling a deterministic LM gives the greedy path") {
  CountingLm lm(5);
  const TokenSequence prompt{3};
  CHECK(sample_unwatermarked(lm, prompt, 6, 123) == TokenSequence{4, 0, 1, 2, 3, 4});
  CHECK(sample_unwatermarked(lm, {}, 3, 0) == TokenSequence{0, 1, 2});
}

TEST_CASE("sampling is deterministic in the seed") {
  ToyLm lm({100, 1, 0.5, 2, LmMode::kTokenMarkov});
  CHECK(sample_unwatermarked(lm, {}, 50, 8) == sample_unwatermarked(lm, {}, 50, 8));
  CHECK_FALSE(sample_unwatermarked(lm, {}, 50, 8) == sample_unwatermarked(lm, {}, 50, 9));
  CHECK_THROWS_AS(sample_unwatermarked(lm, {}, 0, 8), Error);
}

TEST_CASE("order-0 empirical frequencies within 3 sigma") {
  ToyLm lm({8, 0, 1.0, 6, LmMode::kTokenMarkov});
  const auto& q = lm.row({});
  const int n = 100000;
  std::vector<int> counts(8, 0);
  for (int i = 0; i < n; ++i) ++counts[sample_unwatermarked(lm, {}, 1, static_cast<std::uint64_t>(i))[0]];
  for (std::size_t x = 0; x < 8; ++x) {
    const double sigma = std::sqrt(q[x] * (1.0 - q[x]) / n);
    CHECK(std::abs(counts[x] / static_cast<double>(n) - q[x]) <= 3.0 * sigma + 1e-12);
  }
}

TEST_CASE("gamma sampler moments") {
  SplitMix64 rng(17);
  for (double shape : {0.5, 1.0, 3.0}) {
    const int n = 200000;
    double sum = 0.0;
    double sq = 0.0;
    for (int i = 0; i < n; ++i) {
      const double g = sample_gamma(shape, rng);
      sum += g;
      sq += g * g;
    }
    const double mean = sum / n;
    const double var = sq / n - mean * mean;
    CHECK(mean == doctest::Approx(shape).epsilon(0.02));
    CHECK(var == doctest::Approx(shape).epsilon(0.05));
  }
}

TEST_CASE("token_nll") {
  ToyLm lm({20, 1, 0.5, 2, LmMode::kTokenMarkov});
  const TokenSequence text{3, 7, 1};
  const auto nll = token_nll(lm, {}, text);
  REQUIRE(nll.size() == 3);
  const TokenSequence h1{3};
  CHECK(nll[1] == -std::log(lm.row(h1)[7]));
  CHECK(token_nll(CountingLm(4), {}, TokenSequence{0, 1, 2}) == std::vector<double>{0.0, 0.0, 0.0});
}

TEST_CASE("shared model across threads") {
  auto lm = std::make_shared<const ToyLm>(LmSpec{200, 1, 0.5, 5, LmMode::kTokenMarkov});
  std::vector<TokenSequence> out(4);
  std::vector<std::thread> pool;
  for (std::size_t i = 0; i < out.size(); ++i) {
    pool.emplace_back([&, i] { out[i] = sample_unwatermarked(*lm, {}, 300, 77); });
  }
  for (auto& t : pool) t.join();
  ToyLm fresh({200, 1, 0.5, 5, LmMode::kTokenMarkov});
  for (const auto& s : out) CHECK(s == sample_unwatermarked(fresh, {}, 300, 77));
}
