/**
 * Objective tests: importance ratios, the batch noise floor, gate decisions,
 * and every loss variant against hand-worked or mirrored oracles.
 *
 * Key pinned values:
 *   - a token with ratio 1, advantage -1, an active gate and a one-hot proxy
 *     against a 50/50 current distribution scores 1 + ln 2 = 1.6931471805599453;
 *   - a three-token PPO batch (lengths {2,1}) hand-evaluates to loss -1.4 with
 *     per-token gradients {-0.5, 0, -3};
 *   - with the penalty weight at zero (or the gate never firing) the batch
 *     loss is bitwise identical to a mirrored plain-surrogate accumulation,
 *     because the penalty line is skipped entirely rather than multiplied out.
 */
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "doctest.h"
#include "lpreg/common.hpp"
#include "lpreg/distribution.hpp"
#include "lpreg/objective.hpp"
#include "lpreg/proxy.hpp"

using namespace lpreg;

namespace {

/// Owns the distributions/proxies its ingredients point at. reserve() keeps
/// the pointers stable while tokens are appended.
struct Batch {
  std::vector<TokenDistribution> dists;
  std::vector<ProxyDistribution> proxies;
  std::vector<TokenDistribution> refs;
  std::vector<TokenIngredient> tokens;
  std::vector<size_t> lengths;

  Batch() {
    dists.reserve(128);
    proxies.reserve(128);
    refs.reserve(128);
  }

  TokenIngredient& add(std::vector<double> current_probs, int sampled,
                       double behavior_prob, double advantage, int traj,
                       double behavior_entropy = 0.0) {
    dists.push_back(TokenDistribution::from_probs(std::move(current_probs)));
    TokenIngredient tok;
    tok.current_dist = &dists.back();
    tok.current_prob = dists.back().probs[static_cast<size_t>(sampled)];
    tok.behavior_prob = behavior_prob;
    tok.advantage = advantage;
    tok.behavior_entropy = behavior_entropy;
    tok.sampled = sampled;
    tok.traj = traj;
    tokens.push_back(tok);
    return tokens.back();
  }

  void attach_proxy(std::vector<double> behavior_probs, double tau) {
    proxies.push_back(
        build_proxy(TokenDistribution::from_probs(std::move(behavior_probs)),
                    tau));
    tokens.back().proxy = &proxies.back();
  }
};

ObjectiveConfig lp_config() {
  ObjectiveConfig cfg;
  cfg.variant = Variant::lp_reg;
  return cfg;
}

ObjectiveConfig grpo_config(Variant v = Variant::grpo) {
  ObjectiveConfig cfg;
  cfg.variant = v;
  return cfg;
}

}  // namespace

TEST_CASE("variant names round-trip") {
  for (Variant v : {Variant::grpo, Variant::grpo_entropy_bonus,
                    Variant::clip_higher, Variant::top_entropy_8020,
                    Variant::lp_reg}) {
    CHECK(parse_variant(variant_name(v)) == v);
  }
  CHECK_FALSE(parse_variant("ppo").has_value());
  CHECK_FALSE(parse_variant("").has_value());
}

TEST_CASE("config validation rejects out-of-range fields") {
  auto bad = [](auto mutate) {
    ObjectiveConfig cfg;
    mutate(cfg);
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
  };
  bad([](ObjectiveConfig& c) { c.beta = -0.1; });
  bad([](ObjectiveConfig& c) { c.rho = 1.5; });
  bad([](ObjectiveConfig& c) { c.rho = -0.01; });
  bad([](ObjectiveConfig& c) { c.threshold.value = -1.0; });
  bad([](ObjectiveConfig& c) { c.upper_clip = 1.0; });
  bad([](ObjectiveConfig& c) { c.ppo_epsilon = 0.0; });
  bad([](ObjectiveConfig& c) { c.ppo_epsilon = 1.0; });
  bad([](ObjectiveConfig& c) { c.epsilon_high = 0.1; });
  bad([](ObjectiveConfig& c) { c.entropy_coefficient = -0.001; });
  bad([](ObjectiveConfig& c) { c.ref_kl_beta = -1.0; });
  CHECK_NOTHROW(ObjectiveConfig{}.validate());
}

TEST_CASE("importance_ratio") {
  CHECK(importance_ratio(0.5, 0.25) == 2.0);
  CHECK(importance_ratio(0.1, 0.4) == 0.25);
  SUBCASE("identical probabilities give exactly 1") {
    for (double p : {0.37, 1e-9, 0.999}) CHECK(importance_ratio(p, p) == 1.0);
  }
  SUBCASE("non-positive behaviour probability is rejected") {
    CHECK_THROWS_AS(importance_ratio(0.5, 0.0), std::invalid_argument);
    CHECK_THROWS_AS(importance_ratio(0.5, -0.1), std::invalid_argument);
  }
}

TEST_CASE("batch_delta picks the nearest-rank percentile") {
  CHECK(batch_delta({0.5, 0.1, 0.4, 0.3, 0.2}, 0.2) == 0.1);
  SUBCASE("one-percent floor on a 200-token batch is the second smallest") {
    std::vector<double> probs;
    for (int i = 200; i >= 1; --i) probs.push_back(i / 1000.0);
    CHECK(batch_delta(probs, 0.01) == 0.002);
  }
  SUBCASE("edge fractions") {
    CHECK(batch_delta({0.3, 0.2, 0.4}, 0.0) == 0.0);
    CHECK(batch_delta({0.3, 0.2, 0.4}, 1.0) == 0.4);
    CHECK(batch_delta({0.7}, 0.5) == 0.7);
    CHECK(batch_delta({0.7}, 0.001) == 0.7);
  }
  SUBCASE("matches a full-sort oracle on random batches") {
    Rng rng(derive_seed({stream_tag("test"), 10}));
    for (int trial = 0; trial < 200; ++trial) {
      const size_t n = 1 + rng.below(300);
      const double rho = rng.uniform();
      std::vector<double> probs(n);
      for (double& p : probs) p = rng.uniform();
      std::vector<double> sorted = probs;
      std::sort(sorted.begin(), sorted.end());
      const size_t k = nearest_rank_count(rho, n);
      const double want = k == 0 ? 0.0 : sorted[k - 1];
      CHECK(batch_delta(probs, rho) == want);
    }
  }
  SUBCASE("input validation") {
    CHECK_THROWS_AS(batch_delta({}, 0.5), std::invalid_argument);
    CHECK_THROWS_AS(batch_delta({0.5}, -0.1), std::invalid_argument);
    CHECK_THROWS_AS(batch_delta({0.5}, 1.1), std::invalid_argument);
  }
}

TEST_CASE("gate requires all three conditions") {
  const auto src = TokenDistribution::from_probs({0.9, 0.06, 0.04});
  const auto proxy = build_proxy(src, 0.05);  // keeps {0, 1}
  SUBCASE("all conditions met") {
    const auto d = gate(0.01, 0.02, proxy, 1, -0.5);
    CHECK(d.below_delta);
    CHECK(d.proxy_positive);
    CHECK(d.negative_advantage);
    CHECK(d.active());
  }
  SUBCASE("probability at or above the floor") {
    CHECK_FALSE(gate(0.02, 0.02, proxy, 1, -0.5).below_delta);  // strict <
    CHECK_FALSE(gate(0.5, 0.02, proxy, 1, -0.5).active());
  }
  SUBCASE("sampled token was filtered as noise") {
    const auto d = gate(0.01, 0.02, proxy, 2, -0.5);
    CHECK_FALSE(d.proxy_positive);
    CHECK_FALSE(d.active());
  }
  SUBCASE("non-negative advantage") {
    CHECK_FALSE(gate(0.01, 0.02, proxy, 1, 0.5).active());
    CHECK_FALSE(gate(0.01, 0.02, proxy, 1, 0.0).negative_advantage);  // strict <
  }
}

TEST_CASE("regularized token loss: surrogate plus gated penalty is 1 + ln 2") {
  Batch b;
  b.add({0.5, 0.5}, 0, 0.5, -1.0, 0);
  b.attach_proxy({0.98, 0.02}, 0.5);  // one-hot on token 0
  b.lengths = {1};
  ObjectiveConfig cfg = lp_config();

  SUBCASE("single-token helper") {
    CHECK(lp_reg_token_loss(b.tokens[0], 0.6, cfg) ==
          doctest::Approx(1.6931471805599453).epsilon(1e-14));
  }
  SUBCASE("batch evaluation with gradients") {
    std::vector<TokenGrad> grads;
    const auto out = batch_loss(b.tokens, b.lengths, 0.6, cfg, &grads);
    CHECK(out.loss == doctest::Approx(1.6931471805599453).epsilon(1e-14));
    CHECK(out.diag.gated_count == 1);
    CHECK(out.diag.below_delta_count == 1);
    CHECK(out.diag.reg_ratio_defined);
    CHECK(out.diag.reg_ratio == 1.0);
    CHECK(out.diag.kl_mean_gated ==
          doctest::Approx(0.6931471805599453).epsilon(1e-14));
    REQUIRE(out.gates.size() == 1);
    CHECK(out.gates[0].active());
    // d/d current_prob of -clip(r,0,U)*A at r<U is -A/behaviour = 2;
    // the penalty contributes -q/p = -1/0.5 = -2 on the kept coordinate.
    REQUIRE(grads.size() == 1);
    CHECK(grads[0].d_prob == 2.0);
    REQUIRE(grads[0].d_dist.size() == 2);
    CHECK(grads[0].d_dist[0] == -2.0);
    CHECK(grads[0].d_dist[1] == 0.0);
  }
  SUBCASE("gate off when the advantage is positive") {
    b.tokens[0].advantage = 1.0;
    const auto out = batch_loss(b.tokens, b.lengths, 0.6, cfg, nullptr);
    CHECK(out.loss == doctest::Approx(-1.0).epsilon(1e-14));
    CHECK(out.diag.gated_count == 0);
  }
  SUBCASE("missing proxy is rejected") {
    b.tokens[0].proxy = nullptr;
    CHECK_THROWS_AS(lp_reg_token_loss(b.tokens[0], 0.6, cfg),
                    std::invalid_argument);
    CHECK_THROWS_AS(batch_loss(b.tokens, b.lengths, 0.6, cfg, nullptr),
                    std::invalid_argument);
  }
}

TEST_CASE("ratio above the upper clip freezes value and gradient") {
  Batch b;
  // current 0.9 against behaviour 0.05: ratio 18, clipped at 10
  b.add({0.9, 0.1}, 0, 0.05, 0.5, 0);
  b.attach_proxy({0.9, 0.1}, 0.05);
  b.lengths = {1};
  std::vector<TokenGrad> grads;
  const auto out = batch_loss(b.tokens, b.lengths, 0.0, lp_config(), &grads);
  CHECK(out.loss == -5.0);  // -U * A = -10 * 0.5, exactly
  CHECK(grads[0].d_prob == 0.0);
  CHECK(grads[0].d_dist.empty());
}

TEST_CASE("ppo batch with mixed branches matches the hand evaluation") {
  Batch b;
  b.add({0.6, 0.4}, 0, 0.5, 1.0, 0);   // ratio 1.2 == ceiling: tie, r-branch
  b.add({0.3, 0.7}, 0, 0.6, -2.0, 0);  // ratio 0.5 < floor: clipped, no grad
  b.add({0.5, 0.5}, 0, 0.5, 3.0, 1);   // ratio 1: r-branch
  b.lengths = {2, 1};
  std::vector<TokenGrad> grads;
  const auto out = batch_loss(b.tokens, b.lengths, 0.0, grpo_config(), &grads);
  // weights 1/(2*2), 1/(2*2), 1/(2*1):
  // -0.25*1.2*1 + 0.25*1.6 - 0.5*3 = -1.4
  CHECK(out.loss == doctest::Approx(-1.4).epsilon(1e-12));
  CHECK(out.diag.surrogate_mean ==
        doctest::Approx((-1.2 + 1.6 - 3.0) / 3.0).epsilon(1e-12));
  CHECK(grads[0].d_prob == -0.5);  // 0.25 * (-1/0.5); tie keeps the r-branch
  CHECK(grads[1].d_prob == 0.0);   // clipped outside the trust region
  CHECK(grads[2].d_prob == -3.0);  // 0.5 * (-3/0.5)
  CHECK(out.gates.empty());
  SUBCASE("per-trajectory weights differ from the global token weight") {
    // trajectory 1's token carries weight 1/2, not 1/3
    CHECK(std::abs(grads[2].d_prob) > std::abs(grads[0].d_prob));
  }
}

TEST_CASE("asymmetric ceiling keeps high-ratio winners in the gradient") {
  Batch b;
  b.add({0.625, 0.375}, 0, 0.5, 1.0, 0);  // ratio 1.25
  b.lengths = {1};
  std::vector<TokenGrad> g_sym, g_asym;
  const auto sym =
      batch_loss(b.tokens, b.lengths, 0.0, grpo_config(), &g_sym);
  const auto asym = batch_loss(b.tokens, b.lengths, 0.0,
                               grpo_config(Variant::clip_higher), &g_asym);
  CHECK(sym.loss == doctest::Approx(-1.2).epsilon(1e-12));   // clipped at 1+0.2
  CHECK(asym.loss == doctest::Approx(-1.25).epsilon(1e-12));  // inside 1+0.28
  CHECK(g_sym[0].d_prob == 0.0);
  CHECK(g_asym[0].d_prob == -2.0);  // -A/behaviour survives
}

TEST_CASE("top-entropy restriction keeps ceil(0.2N) tokens, denominators fixed") {
  Batch b;
  // single trajectory of five tokens; only the highest-entropy one may count
  b.add({0.5, 0.5}, 0, 0.5, 100.0, 0, 0.10);
  b.add({0.4, 0.6}, 0, 0.5, -1.0, 0, 0.50);  // max entropy: the kept token
  b.add({0.5, 0.5}, 0, 0.5, -100.0, 0, 0.30);
  b.add({0.5, 0.5}, 0, 0.5, 100.0, 0, 0.20);
  b.add({0.5, 0.5}, 0, 0.5, -100.0, 0, 0.40);
  b.lengths = {5};
  std::vector<TokenGrad> grads;
  const auto out = batch_loss(b.tokens, b.lengths, 0.0,
                              grpo_config(Variant::top_entropy_8020), &grads);
  // kept token: ratio 0.8, advantage -1; min picks the r-branch (tie at the
  // floor), loss -(-0.8) * weight 1/(1*5) = 0.16. The +-100 advantages would
  // dominate if any masked token leaked in.
  CHECK(out.loss == doctest::Approx(0.16).epsilon(1e-12));
  CHECK(grads[1].d_prob == doctest::Approx(0.4).epsilon(1e-12));
  for (size_t i : {size_t{0}, size_t{2}, size_t{3}, size_t{4}}) {
    CHECK(grads[i].d_prob == 0.0);
    CHECK(grads[i].d_dist.empty());
  }
  SUBCASE("diagnostic entropy still averages over every token") {
    CHECK(out.diag.mean_entropy == doctest::Approx(0.3).epsilon(1e-12));
  }
}

TEST_CASE("entropy bonus subtracts the mean current-policy entropy") {
  Batch b;
  b.add({0.25, 0.75}, 0, 0.25, 1.0, 0);
  b.add({0.5, 0.5}, 0, 0.5, -1.0, 0);
  b.lengths = {2};
  ObjectiveConfig cfg = grpo_config(Variant::grpo_entropy_bonus);
  std::vector<TokenGrad> grads;
  const auto out = batch_loss(b.tokens, b.lengths, 0.0, cfg, &grads);
  const auto plain = batch_loss(b.tokens, b.lengths, 0.0, grpo_config(), nullptr);
  const double mean_h = 0.5 * (b.dists[0].entropy + b.dists[1].entropy);
  CHECK(out.loss ==
        doctest::Approx(plain.loss - cfg.entropy_coefficient * mean_h)
            .epsilon(1e-12));
  SUBCASE("dense entropy gradient on every token") {
    for (size_t i = 0; i < 2; ++i) {
      REQUIRE(grads[i].d_dist.size() == 2);
      for (size_t k = 0; k < 2; ++k) {
        const double want = cfg.entropy_coefficient * 0.5 *
                            (log_clamped(b.dists[i].probs[k]) + 1.0);
        CHECK(grads[i].d_dist[k] == doctest::Approx(want).epsilon(1e-12));
      }
    }
  }
}

TEST_CASE("gate basis swap: top-rho entropy replaces the probability floor") {
  Batch b;
  const std::vector<double> entropies = {0.9, 0.1, 0.8, 0.2, 0.3};
  for (int i = 0; i < 5; ++i) {
    b.add({0.3, 0.7}, 0, 0.4, -1.0, 0, entropies[static_cast<size_t>(i)]);
    b.attach_proxy({0.2, 0.8}, 0.1);  // differs from current: penalty > 0
  }
  b.lengths = {5};
  ObjectiveConfig cfg = lp_config();
  cfg.gate_basis = GateBasis::highest_entropy;
  cfg.rho = 0.4;  // ceil(0.4 * 5) = 2 tokens eligible
  // delta of 1.0 would gate everything under the probability basis; the
  // entropy basis must ignore it entirely
  const auto out = batch_loss(b.tokens, b.lengths, 1.0, cfg, nullptr);
  CHECK(out.diag.below_delta_count == 2);
  CHECK(out.diag.gated_count == 2);
  REQUIRE(out.gates.size() == 5);
  CHECK(out.gates[0].below_delta);  // entropy 0.9
  CHECK(out.gates[2].below_delta);  // entropy 0.8
  CHECK_FALSE(out.gates[1].below_delta);
  CHECK_FALSE(out.gates[3].below_delta);
  CHECK_FALSE(out.gates[4].below_delta);
  SUBCASE("penalty applies exactly on the selected tokens") {
    ObjectiveConfig off = cfg;
    off.beta = 0.0;
    const auto base = batch_loss(b.tokens, b.lengths, 1.0, off, nullptr);
    const double kl = forward_kl(b.proxies[0], b.dists[0]);
    CHECK(out.loss ==
          doctest::Approx(base.loss + cfg.beta * (2.0 / 5.0) * kl)
              .epsilon(1e-12));
  }
}

TEST_CASE("filter-disabled ablation hard-excludes gated tokens") {
  Batch b;
  b.add({0.1, 0.9}, 0, 0.2, -1.0, 0);  // below delta, negative: excluded
  b.attach_proxy({0.2, 0.8}, 0.05);
  b.add({0.7, 0.3}, 0, 0.7, -1.0, 0);  // above delta: kept
  b.attach_proxy({0.7, 0.3}, 0.05);
  b.lengths = {2};
  ObjectiveConfig cfg = lp_config();
  cfg.filter_enabled = false;
  std::vector<TokenGrad> grads;
  const auto out = batch_loss(b.tokens, b.lengths, 0.3, cfg, &grads);
  // only token 1 contributes: weight 1/2, ratio 1, advantage -1
  CHECK(out.loss == 0.5);
  CHECK(out.diag.gated_count == 1);
  CHECK(grads[0].d_prob == 0.0);
  CHECK(grads[0].d_dist.empty());
  CHECK(grads[1].d_prob == doctest::Approx(0.5 / 0.7).epsilon(1e-12));
  SUBCASE("no penalty term regardless of beta") {
    ObjectiveConfig heavy = cfg;
    heavy.beta = 50.0;
    const auto again = batch_loss(b.tokens, b.lengths, 0.3, heavy, nullptr);
    CHECK(again.loss == out.loss);
  }
}

TEST_CASE("reference-policy penalty adds trajectory-weighted divergence") {
  Batch b;
  auto& tok = b.add({0.25, 0.75}, 0, 0.25, 2.0, 0);
  b.refs.push_back(TokenDistribution::from_probs({0.75, 0.25}));
  tok.ref_dist = &b.refs.back();
  b.lengths = {1};
  ObjectiveConfig cfg = grpo_config();
  cfg.ref_kl_beta = 0.5;
  std::vector<TokenGrad> grads;
  const auto out = batch_loss(b.tokens, b.lengths, 0.0, cfg, &grads);
  double kl = 0.0;
  for (size_t k = 0; k < 2; ++k) {
    kl += b.dists[0].probs[k] *
          (log_clamped(b.dists[0].probs[k]) - log_clamped(b.refs[0].probs[k]));
  }
  CHECK(out.loss == doctest::Approx(-2.0 + 0.5 * kl).epsilon(1e-12));
  SUBCASE("dense gradient present and finite") {
    REQUIRE(grads[0].d_dist.size() == 2);
    for (size_t k = 0; k < 2; ++k) {
      const double want =
          0.5 * (std::log(b.dists[0].probs[k]) + 1.0 -
                 log_clamped(b.refs[0].probs[k]));
      CHECK(grads[0].d_dist[k] == doctest::Approx(want).epsilon(1e-12));
    }
  }
  SUBCASE("missing reference distribution is rejected") {
    b.tokens[0].ref_dist = nullptr;
    CHECK_THROWS_AS(batch_loss(b.tokens, b.lengths, 0.0, cfg, nullptr),
                    std::invalid_argument);
  }
}

TEST_CASE("penalty directions differ unless the proxy equals the policy") {
  Batch b;
  b.add({0.5, 0.3, 0.2}, 2, 0.3, -1.0, 0);
  b.attach_proxy({0.3, 0.2, 0.5}, 0.25);  // support {0, 2} after filtering
  b.lengths = {1};
  ObjectiveConfig fwd = lp_config();
  ObjectiveConfig rev = lp_config();
  rev.kl_direction = KlDirection::reverse;
  const double delta = 0.5;  // current prob 0.2 < 0.5: gate active
  const auto f = batch_loss(b.tokens, b.lengths, delta, fwd, nullptr);
  const auto r = batch_loss(b.tokens, b.lengths, delta, rev, nullptr);
  CHECK(f.diag.gated_count == 1);
  CHECK(r.diag.gated_count == 1);
  CHECK(f.loss != r.loss);
  SUBCASE("both penalties vanish when the proxy is the distribution itself") {
    Batch eq;
    eq.add({0.5, 0.3, 0.2}, 2, 0.2, -1.0, 0);
    eq.attach_proxy({0.5, 0.3, 0.2}, 0.0);  // keeps everything, mass 1
    eq.lengths = {1};
    const auto fe = batch_loss(eq.tokens, eq.lengths, delta, fwd, nullptr);
    const auto re = batch_loss(eq.tokens, eq.lengths, delta, rev, nullptr);
    CHECK(fe.diag.gated_count == 1);
    CHECK(fe.loss == doctest::Approx(re.loss).epsilon(1e-14));
    // penalty vanishes, leaving -clip(1)*(-1) = +1
    CHECK(fe.loss == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("zero penalty weight is bitwise the plain clipped surrogate") {
  // Build a randomized batch with live gates, then demand *bitwise* equality
  // with a mirrored accumulation loop. This only holds because the penalty
  // line is skipped outright when beta == 0, leaving the identical sequence
  // of floating-point operations.
  Batch b;
  Rng rng(derive_seed({stream_tag("test"), 11}));
  const size_t n = 48;
  for (size_t i = 0; i < n; ++i) {
    std::vector<double> logits_cur(6), logits_beh(6);
    for (double& v : logits_cur) v = 2.0 * rng.normal();
    for (double& v : logits_beh) v = 2.0 * rng.normal();
    const auto beh = TokenDistribution::from_logits(logits_beh, 1.0);
    const int sampled = static_cast<int>(rng.below(6));
    b.dists.push_back(TokenDistribution::from_logits(logits_cur, 1.0));
    TokenIngredient tok;
    tok.current_dist = &b.dists.back();
    tok.current_prob = b.dists.back().probs[static_cast<size_t>(sampled)];
    tok.behavior_prob = beh.probs[static_cast<size_t>(sampled)];
    tok.advantage = rng.normal();
    tok.sampled = sampled;
    tok.traj = 0;
    b.tokens.push_back(tok);
    b.proxies.push_back(build_proxy(beh, 0.02));
    b.tokens.back().proxy = &b.proxies.back();
  }
  b.lengths = {n};

  auto mirror_surrogate = [&](double upper) {
    double acc = 0.0;
    const double tw = 1.0 / static_cast<double>(n);
    for (const auto& tok : b.tokens) {
      const double ratio = tok.current_prob / tok.behavior_prob;
      const double clipped = ratio < 0.0 ? 0.0 : (ratio > upper ? upper : ratio);
      acc += tw * (-clipped * tok.advantage);
    }
    return acc;
  };

  ObjectiveConfig cfg = lp_config();
  SUBCASE("beta == 0") {
    cfg.beta = 0.0;
    const auto out = batch_loss(b.tokens, b.lengths, 0.5, cfg, nullptr);
    CHECK(out.diag.gated_count > 0);  // gates fire, penalty still absent
    CHECK(out.loss == mirror_surrogate(cfg.upper_clip));
  }
  SUBCASE("gate never fires at delta == 0") {
    const auto out = batch_loss(b.tokens, b.lengths, 0.0, cfg, nullptr);
    CHECK(out.diag.gated_count == 0);
    CHECK(out.diag.below_delta_count == 0);
    CHECK(out.loss == mirror_surrogate(cfg.upper_clip));
  }
  SUBCASE("reported gates replay the standalone decision") {
    const double delta = 0.5;
    const auto out = batch_loss(b.tokens, b.lengths, delta, cfg, nullptr);
    REQUIRE(out.gates.size() == n);
    for (size_t i = 0; i < n; ++i) {
      const auto want = gate(b.tokens[i].current_prob, delta,
                             *b.tokens[i].proxy, b.tokens[i].sampled,
                             b.tokens[i].advantage);
      CHECK(out.gates[i].below_delta == want.below_delta);
      CHECK(out.gates[i].proxy_positive == want.proxy_positive);
      CHECK(out.gates[i].negative_advantage == want.negative_advantage);
    }
  }
}

TEST_CASE("batch_loss input validation") {
  Batch b;
  b.add({0.5, 0.5}, 0, 0.5, 1.0, 0);
  b.attach_proxy({0.5, 0.5}, 0.1);
  SUBCASE("empty stream") {
    CHECK_THROWS_AS(batch_loss({}, {}, 0.0, lp_config(), nullptr),
                    std::invalid_argument);
  }
  SUBCASE("lengths must cover the stream") {
    CHECK_THROWS_AS(batch_loss(b.tokens, {2}, 0.0, lp_config(), nullptr),
                    std::invalid_argument);
    CHECK_THROWS_AS(batch_loss(b.tokens, {1, 1}, 0.0, lp_config(), nullptr),
                    std::invalid_argument);
    CHECK_THROWS_AS(batch_loss(b.tokens, {0, 1}, 0.0, lp_config(), nullptr),
                    std::invalid_argument);
  }
  SUBCASE("trajectory index out of range") {
    b.tokens[0].traj = 3;
    CHECK_THROWS_AS(batch_loss(b.tokens, {1}, 0.0, lp_config(), nullptr),
                    std::invalid_argument);
  }
  SUBCASE("non-finite advantage") {
    b.tokens[0].advantage = std::nan("");
    CHECK_THROWS_AS(batch_loss(b.tokens, {1}, 0.0, lp_config(), nullptr),
                    NumericalError);
  }
}
