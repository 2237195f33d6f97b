/**
 * Categorical distribution tests: softmax construction, entropy, sampling
 * frequencies and argmax tie-breaking.
 *
 * Oracles are hand-computed: softmax([ln 1, ln 3]) = [0.25, 0.75] exactly in
 * doubles; entropy of [0.25, 0.75] is -(0.25 ln 0.25 + 0.75 ln 0.75) =
 * 0.5623351446188083; a uniform 4-way distribution has entropy ln 4.
 * Sampling frequencies are bounded with 3-sigma multinomial intervals.
 */
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <vector>

#include "doctest.h"
#include "lpreg/common.hpp"
#include "lpreg/distribution.hpp"

using namespace lpreg;

TEST_CASE("from_logits computes an exact two-way softmax") {
  const auto d =
      TokenDistribution::from_logits({std::log(1.0), std::log(3.0)}, 1.0);
  CHECK(d.probs[0] == doctest::Approx(0.25).epsilon(1e-14));
  CHECK(d.probs[1] == doctest::Approx(0.75).epsilon(1e-14));
  CHECK(d.entropy == doctest::Approx(0.5623351446188083).epsilon(1e-14));
  SUBCASE("log_probs are consistent with probs") {
    for (int i = 0; i < d.size(); ++i) {
      CHECK(std::exp(d.log_probs[i]) == doctest::Approx(d.probs[i]).epsilon(1e-9));
    }
  }
}

TEST_CASE("from_logits is invariant to a constant shift") {
  const std::vector<double> base = {0.3, -1.2, 2.0, 0.0};
  const auto a = TokenDistribution::from_logits(base, 1.0);
  std::vector<double> shifted = base;
  for (double& v : shifted) v += 1000.0;
  const auto b = TokenDistribution::from_logits(shifted, 1.0);
  for (int i = 0; i < a.size(); ++i) {
    CHECK(a.probs[i] == doctest::Approx(b.probs[i]).epsilon(1e-12));
  }
}

TEST_CASE("temperature flattens toward uniform") {
  const std::vector<double> logits = {2.0, 0.0, -1.0};
  const auto sharp = TokenDistribution::from_logits(logits, 0.5);
  const auto unit = TokenDistribution::from_logits(logits, 1.0);
  const auto flat = TokenDistribution::from_logits(logits, 10.0);
  CHECK(sharp.entropy < unit.entropy);
  CHECK(unit.entropy < flat.entropy);
  CHECK(flat.entropy < std::log(3.0));
  SUBCASE("uniform distribution reaches the entropy ceiling") {
    const auto u = TokenDistribution::from_logits({7.0, 7.0, 7.0, 7.0}, 1.0);
    CHECK(u.entropy == doctest::Approx(1.3862943611198906).epsilon(1e-14));
    for (double p : u.probs) CHECK(p == doctest::Approx(0.25).epsilon(1e-14));
  }
}

TEST_CASE("from_logits rejects bad input") {
  CHECK_THROWS_AS(TokenDistribution::from_logits({}, 1.0),
                  std::invalid_argument);
  CHECK_THROWS_AS(TokenDistribution::from_logits({1.0, 2.0}, 0.0),
                  std::invalid_argument);
  CHECK_THROWS_AS(TokenDistribution::from_logits({1.0, 2.0}, -1.0),
                  std::invalid_argument);
  CHECK_THROWS_AS(TokenDistribution::from_logits({1.0, std::nan("")}, 1.0),
                  NumericalError);
}

TEST_CASE("from_probs validates and handles zero entries") {
  const auto d = TokenDistribution::from_probs({0.5, 0.0, 0.5});
  CHECK(d.entropy == doctest::Approx(std::log(2.0)).epsilon(1e-14));
  CHECK(d.probs[1] == 0.0);
  SUBCASE("sum must be one") {
    CHECK_THROWS_AS(TokenDistribution::from_probs({0.5, 0.4}),
                    std::invalid_argument);
    CHECK_THROWS_AS(TokenDistribution::from_probs({0.5, -0.1, 0.6}),
                    std::invalid_argument);
    CHECK_THROWS_AS(TokenDistribution::from_probs({}), std::invalid_argument);
  }
}

TEST_CASE("sample frequencies track probabilities") {
  const auto d = TokenDistribution::from_probs({0.7, 0.2, 0.1});
  Rng rng(derive_seed({stream_tag("test"), 1}));
  const int n = 10000;
  int counts[3] = {0, 0, 0};
  for (int i = 0; i < n; ++i) counts[d.sample(rng)]++;
  // 3-sigma multinomial bounds: sqrt(p(1-p)/n) * 3 = .0137 / .0120 / .0090
  CHECK(std::abs(counts[0] / 10000.0 - 0.7) < 0.014);
  CHECK(std::abs(counts[1] / 10000.0 - 0.2) < 0.012);
  CHECK(std::abs(counts[2] / 10000.0 - 0.1) < 0.009);
}

TEST_CASE("sample never returns a zero-probability token") {
  const auto d = TokenDistribution::from_probs({0.5, 0.0, 0.5});
  Rng rng(derive_seed({stream_tag("test"), 2}));
  for (int i = 0; i < 5000; ++i) CHECK(d.sample(rng) != 1);
}

TEST_CASE("sample is deterministic per rng stream") {
  const auto d = TokenDistribution::from_probs({0.3, 0.3, 0.4});
  Rng a(99), b(99);
  for (int i = 0; i < 200; ++i) CHECK(d.sample(a) == d.sample(b));
}

TEST_CASE("argmax breaks ties toward the lowest index") {
  CHECK(TokenDistribution::from_probs({0.1, 0.4, 0.4, 0.1}).argmax() == 1);
  CHECK(TokenDistribution::from_probs({0.25, 0.25, 0.25, 0.25}).argmax() == 0);
  CHECK(TokenDistribution::from_probs({0.2, 0.3, 0.5}).argmax() == 2);
}
