#pragma once
/**
 * Token vocabulary for the synthetic policies and tasks.
 *
 * Tokens are short string identifiers with dense integer ids. Two structural
 * tokens are always present: "<pad>" (id 0, fills short context windows) and
 * "<eos>" (id 1, terminates sampled responses). A vocabulary also carries
 * designated behavioural classes used by telemetry and the gated task family:
 *   - "spark":      tokens whose survival under training we track (e.g. the
 *                   connector token "ALT");
 *   - "irrelevant": filler tokens that never appear in any task answer, used
 *                   as the contrast class for low-probability statistics.
 */

#include <string>
#include <unordered_map>
#include <vector>

#include "lpreg/common.hpp"

namespace lpreg {

enum class TokenClass { spark, irrelevant, other };

const char* token_class_name(TokenClass c);

struct Vocabulary {
  std::vector<std::string> tokens;
  // class name ("spark" / "irrelevant") -> sorted token ids
  std::vector<std::pair<std::string, std::vector<int>>> designated;

  static constexpr int pad_id = 0;
  static constexpr int eos_id = 1;

  int size() const { return static_cast<int>(tokens.size()); }

  /// Id of a token name; throws ConfigError when absent.
  int id_of(const std::string& name) const;
  /// Id of a token name or -1 when absent.
  int find(const std::string& name) const;
  const std::string& name(int id) const;

  TokenClass token_class(int id) const { return classes_[id]; }
  const std::vector<int>& class_ids(TokenClass c) const;

  /// Rebuilds lookup tables and checks invariants: unique names, "<pad>" and
  /// "<eos>" at their fixed slots, designated ids in range and the classes
  /// mutually disjoint. Call after any mutation.
  void finalize();

  /// The stock 64-token vocabulary: structural tokens, digits, arithmetic
  /// tokens, sequence instructions, the connector "ALT", letters a..z and
  /// sixteen filler tokens u0..u15. spark = {ALT}, irrelevant = {u0..u15}.
  static Vocabulary default_vocab();

  /// Shared immutable instance of default_vocab().
  static const Vocabulary& default_vocab_ref();

 private:
  std::unordered_map<std::string, int> index_;
  std::vector<TokenClass> classes_;
  std::vector<int> empty_;
};

}  // namespace lpreg
