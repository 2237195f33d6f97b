#pragma once
/**
 * Synthetic rule-verified task families.
 *
 * Three generators produce (prompt, reference) pairs over the shared token
 * vocabulary; a pure verifier scores any sampled output 0/1 by exact match
 * after stripping structural tokens. Rewards are binary by design - the
 * group-normalized advantages downstream assume no partial credit.
 *
 * Families:
 *   - mod_arith:     "a op b mod 10 = ?" with digit-token operands whose
 *                    length grows with difficulty; answer is one digit;
 *   - seq_transform: "copy|rev x1..xL =" over letters; answer is the
 *                    (possibly reversed) letter sequence, L = difficulty;
 *   - spark_gated:   "go k1 k2 ?" with two rewarded templates. The direct
 *                    template (a single mapped letter) is accepted only on a
 *                    p_direct fraction of instances (a per-instance seeded
 *                    gate); the connector template ("ALT" followed by a
 *                    different mapped letter) is accepted on every instance.
 *                    The connector token is a low-frequency, high-value
 *                    alternative whose survival under training is the point
 *                    of the whole laboratory.
 *
 * Generation is deterministic per (family, seed, difficulty) via counter-
 * derived RNG streams; verification is a pure function of (output, instance,
 * env config). answer_candidates() describes the family's answer space
 * position-by-position so evaluation can decode greedily over plausible
 * answers instead of the whole vocabulary - an untrained policy then scores
 * answer-space chance level rather than ~0.
 */

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "lpreg/common.hpp"
#include "lpreg/vocab.hpp"

namespace lpreg {

enum class Family { mod_arith, seq_transform, spark_gated };

const char* family_name(Family f);
std::optional<Family> parse_family(const std::string& s);

/// Bounds for the difficulty knob, inclusive.
int min_difficulty(Family f);
int max_difficulty(Family f);

struct EnvConfig {
  std::string family = "spark_gated";
  int difficulty = 1;
  // spark_gated shape:
  double p_direct = 0.6;              // fraction of instances the direct
                                      // template can solve
  std::string direct_map = "copy2";   // letter map of the direct answer
  std::string connector_map = "copy1";  // letter map after the connector
  // evaluation set:
  int eval_size = 200;
  uint64_t eval_seed = 9000;
  std::string eval_set_path;  // optional fixed eval set (JSONL); empty = generate

  void validate() const;
};

struct TaskInstance {
  Family family = Family::mod_arith;
  uint64_t seed = 0;
  int difficulty = 1;
  std::vector<int> prompt;     // token ids
  std::vector<int> reference;  // canonical answer token ids (no <eos>)
};

struct VerifierOutcome {
  double reward = 0.0;        // binary: 1 accepted, 0 rejected
  std::string matched_path;   // spark_gated only: "direct" | "connector"
};

/// Letter maps available to spark_gated: copy1, copy2 (select an operand),
/// sum, diff (alphabet-index arithmetic mod 26), const:<letter> (fixed
/// continuation independent of the operands).
int apply_letter_map(const std::string& map, int idx1, int idx2);

class Environment {
 public:
  Environment(EnvConfig cfg, const Vocabulary* vocab);

  const EnvConfig& config() const { return cfg_; }
  const Vocabulary& vocab() const { return *vocab_; }

  /// Deterministic instance for (family, seed, difficulty).
  TaskInstance generate(Family family, uint64_t seed, int difficulty) const;
  /// Instance of the configured family/difficulty.
  TaskInstance generate(uint64_t seed) const;

  /// Scores an output sequence. Normalization strips every <pad>/<eos>
  /// token; anything unverifiable scores 0 rather than erroring.
  VerifierOutcome verify(const std::vector<int>& output,
                         const TaskInstance& instance) const;

  /// Whether the direct template is accepted on this instance (spark_gated).
  bool direct_open(const TaskInstance& instance) const;

  /// Token ids admissible at the next answer position given the answer
  /// prefix produced so far; {<eos>} once the family's answer span is
  /// complete. Drives answer-space-constrained greedy evaluation.
  std::vector<int> answer_candidates(const TaskInstance& instance,
                                     const std::vector<int>& prefix) const;

  /// `count` instances of the configured family at seeds base, base+1, ...
  std::vector<TaskInstance> make_eval_set(size_t count, uint64_t seed_base) const;

  /// The configured evaluation set: loaded from eval_set_path when given,
  /// otherwise generated from (eval_size, eval_seed).
  std::vector<TaskInstance> eval_set() const;

  void write_eval_set(const std::vector<TaskInstance>& set,
                      const std::string& path) const;
  std::vector<TaskInstance> read_eval_set(const std::string& path) const;

 private:
  EnvConfig cfg_;
  const Vocabulary* vocab_;
};

}  // namespace lpreg
