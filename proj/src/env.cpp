#include "lpreg/env.hpp"

#include <algorithm>
#include <fstream>

#include "json.hpp"

namespace lpreg {

namespace {

using nlohmann::json;

constexpr int kAlphabet = 26;

int digit_id(int d) { return 2 + d; }          // "0".."9" sit at ids 2..11
int letter_id(int i) { return 22 + i; }        // "a".."z" sit at ids 22..47
bool is_letter_id(int id) { return id >= 22 && id < 22 + kAlphabet; }
int letter_index(int id) { return id - 22; }

/// Appends the decimal digit tokens of a non-negative value.
void push_digits(std::vector<int>& out, long value) {
  std::string s = std::to_string(value);
  for (char c : s) out.push_back(digit_id(c - '0'));
}

std::vector<int> strip_structural(const std::vector<int>& output) {
  std::vector<int> o;
  o.reserve(output.size());
  for (int id : output)
    if (id != Vocabulary::pad_id && id != Vocabulary::eos_id) o.push_back(id);
  return o;
}

}  // namespace

const char* family_name(Family f) {
  switch (f) {
    case Family::mod_arith:
      return "mod_arith";
    case Family::seq_transform:
      return "seq_transform";
    case Family::spark_gated:
      return "spark_gated";
  }
  return "?";
}

std::optional<Family> parse_family(const std::string& s) {
  for (Family f : {Family::mod_arith, Family::seq_transform, Family::spark_gated})
    if (s == family_name(f)) return f;
  return std::nullopt;
}

int min_difficulty(Family) { return 1; }

int max_difficulty(Family f) {
  switch (f) {
    case Family::mod_arith:
      return 3;  // operand digit count
    case Family::seq_transform:
      return 6;  // sequence length (prompt still fits the context window)
    case Family::spark_gated:
      return 1;
  }
  return 1;
}

int apply_letter_map(const std::string& map, int idx1, int idx2) {
  if (map == "copy1") return idx1;
  if (map == "copy2") return idx2;
  if (map == "sum") return (idx1 + idx2) % kAlphabet;
  if (map == "diff") return (idx1 - idx2 + kAlphabet) % kAlphabet;
  if (map.size() == 7 && map.rfind("const:", 0) == 0 && map[6] >= 'a' &&
      map[6] <= 'z')
    return map[6] - 'a';  // instance-independent continuation
  throw ConfigError("env: unknown letter map '" + map + "'");
}

void EnvConfig::validate() const {
  auto fam = parse_family(family);
  if (!fam) throw ConfigError("env.family: unknown family '" + family + "'");
  if (difficulty < min_difficulty(*fam) || difficulty > max_difficulty(*fam))
    throw ConfigError("env.difficulty: out of bounds for " + family + " (" +
                      std::to_string(min_difficulty(*fam)) + ".." +
                      std::to_string(max_difficulty(*fam)) + ")");
  if (!(p_direct >= 0.0 && p_direct <= 1.0))
    throw ConfigError("env.p_direct: must lie in [0, 1]");
  apply_letter_map(direct_map, 0, 0);     // throws with its own message
  apply_letter_map(connector_map, 0, 0);
  if (eval_size < 1) throw ConfigError("env.eval_size: must be >= 1");
}

Environment::Environment(EnvConfig cfg, const Vocabulary* vocab)
    : cfg_(std::move(cfg)), vocab_(vocab) {
  cfg_.validate();
  if (vocab_ == nullptr) throw ConfigError("env: null vocabulary");
}

TaskInstance Environment::generate(Family family, uint64_t seed,
                                   int difficulty) const {
  if (difficulty < min_difficulty(family) || difficulty > max_difficulty(family))
    throw std::invalid_argument("env: difficulty out of bounds for " +
                                std::string(family_name(family)));
  TaskInstance t;
  t.family = family;
  t.seed = seed;
  t.difficulty = difficulty;

  switch (family) {
    case Family::mod_arith: {
      Rng rng(derive_seed({stream_tag("env-mod"), seed,
                           static_cast<uint64_t>(difficulty)}));
      // difficulty-digit operands: d=1 -> 0..9, d=2 -> 10..99, d=3 -> 100..999
      long lo = 1;
      for (int i = 1; i < difficulty; ++i) lo *= 10;
      auto operand = [&]() -> long {
        return difficulty == 1 ? static_cast<long>(rng.below(10))
                               : lo + static_cast<long>(rng.below(9 * lo));
      };
      long a = operand();
      int op = static_cast<int>(rng.below(3));
      long b = operand();
      long r = op == 0 ? a + b : op == 1 ? a - b : a * b;
      int answer = static_cast<int>(((r % 10) + 10) % 10);

      push_digits(t.prompt, a);
      t.prompt.push_back(vocab_->id_of(op == 0 ? "+" : op == 1 ? "-" : "*"));
      push_digits(t.prompt, b);
      t.prompt.push_back(vocab_->id_of("mod"));
      push_digits(t.prompt, 10);
      t.prompt.push_back(vocab_->id_of("="));
      t.prompt.push_back(vocab_->id_of("?"));
      t.reference = {digit_id(answer)};
      break;
    }
    case Family::seq_transform: {
      Rng rng(derive_seed({stream_tag("env-seq"), seed,
                           static_cast<uint64_t>(difficulty)}));
      bool reverse = rng.below(2) == 1;
      std::vector<int> letters(difficulty);
      for (int& id : letters) id = letter_id(static_cast<int>(rng.below(kAlphabet)));

      t.prompt.push_back(vocab_->id_of(reverse ? "rev" : "copy"));
      t.prompt.insert(t.prompt.end(), letters.begin(), letters.end());
      t.prompt.push_back(vocab_->id_of("="));
      t.reference = letters;
      if (reverse) std::reverse(t.reference.begin(), t.reference.end());
      break;
    }
    case Family::spark_gated: {
      Rng rng(derive_seed({stream_tag("env-spark"), seed}));
      int i1 = static_cast<int>(rng.below(kAlphabet));
      int i2 = static_cast<int>(rng.below(kAlphabet));
      t.prompt = {vocab_->id_of("go"), letter_id(i1), letter_id(i2),
                  vocab_->id_of("?")};
      // Canonical reference: the direct answer where the gate admits it,
      // otherwise the connector answer. Either way verify(reference) == 1.
      if (direct_open(t)) {
        t.reference = {letter_id(apply_letter_map(cfg_.direct_map, i1, i2))};
      } else {
        t.reference = {vocab_->id_of("ALT"),
                       letter_id(apply_letter_map(cfg_.connector_map, i1, i2))};
      }
      break;
    }
  }
  return t;
}

TaskInstance Environment::generate(uint64_t seed) const {
  return generate(*parse_family(cfg_.family), seed, cfg_.difficulty);
}

bool Environment::direct_open(const TaskInstance& instance) const {
  // Per-instance seeded gate: every prompt admits the direct answer with
  // probability p_direct over instances, so a direct-only policy tops out at
  // p_direct expected reward while the connector path scores everywhere.
  Rng rng(derive_seed({stream_tag("spark-gate"), instance.seed}));
  return rng.uniform() < cfg_.p_direct;
}

VerifierOutcome Environment::verify(const std::vector<int>& output,
                                    const TaskInstance& instance) const {
  VerifierOutcome out;
  const std::vector<int> o = strip_structural(output);

  if (instance.family != Family::spark_gated) {
    out.reward = o == instance.reference ? 1.0 : 0.0;
    return out;
  }

  // spark_gated: recompute both templates from the prompt letters.
  if (instance.prompt.size() != 4 || !is_letter_id(instance.prompt[1]) ||
      !is_letter_id(instance.prompt[2]))
    return out;  // malformed instance scores 0, never throws
  const int i1 = letter_index(instance.prompt[1]);
  const int i2 = letter_index(instance.prompt[2]);
  const std::vector<int> connector = {
      vocab_->id_of("ALT"),
      letter_id(apply_letter_map(cfg_.connector_map, i1, i2))};
  if (o == connector) {
    out.reward = 1.0;
    out.matched_path = "connector";
    return out;
  }
  const std::vector<int> direct = {
      letter_id(apply_letter_map(cfg_.direct_map, i1, i2))};
  if (direct_open(instance) && o == direct) {
    out.reward = 1.0;
    out.matched_path = "direct";
  }
  return out;
}

std::vector<int> Environment::answer_candidates(
    const TaskInstance& instance, const std::vector<int>& prefix) const {
  std::vector<int> cands;
  auto done = [&]() { cands = {Vocabulary::eos_id}; };

  switch (instance.family) {
    case Family::mod_arith: {
      if (!prefix.empty()) {
        done();
        break;
      }
      for (int d = 0; d <= 9; ++d) cands.push_back(digit_id(d));
      break;
    }
    case Family::seq_transform: {
      const size_t answer_len = instance.prompt.size() - 2;  // op ... "="
      if (prefix.size() >= answer_len) {
        done();
        break;
      }
      for (int i = 0; i < kAlphabet; ++i) cands.push_back(letter_id(i));
      break;
    }
    case Family::spark_gated: {
      if (prefix.empty()) {
        cands.push_back(vocab_->id_of("ALT"));  // id below the letters
        for (int i = 0; i < kAlphabet; ++i) cands.push_back(letter_id(i));
      } else if (prefix.size() == 1 && prefix[0] == vocab_->id_of("ALT")) {
        for (int i = 0; i < kAlphabet; ++i) cands.push_back(letter_id(i));
      } else {
        done();
      }
      break;
    }
  }
  return cands;
}

std::vector<TaskInstance> Environment::make_eval_set(size_t count,
                                                     uint64_t seed_base) const {
  std::vector<TaskInstance> set;
  set.reserve(count);
  for (size_t i = 0; i < count; ++i) set.push_back(generate(seed_base + i));
  return set;
}

std::vector<TaskInstance> Environment::eval_set() const {
  if (!cfg_.eval_set_path.empty()) return read_eval_set(cfg_.eval_set_path);
  return make_eval_set(static_cast<size_t>(cfg_.eval_size), cfg_.eval_seed);
}

void Environment::write_eval_set(const std::vector<TaskInstance>& set,
                                 const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("env: cannot write eval set: " + path);
  for (const TaskInstance& t : set) {
    json row;
    row["family"] = family_name(t.family);
    row["seed"] = t.seed;
    row["difficulty"] = t.difficulty;
    json prompt = json::array(), reference = json::array();
    for (int id : t.prompt) prompt.push_back(vocab_->name(id));
    for (int id : t.reference) reference.push_back(vocab_->name(id));
    row["prompt"] = std::move(prompt);
    row["reference"] = std::move(reference);
    out << row.dump() << "\n";
  }
  if (!out) throw IoError("env: short write on eval set: " + path);
}

std::vector<TaskInstance> Environment::read_eval_set(
    const std::string& path) const {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("env: cannot read eval set: " + path);
  std::vector<TaskInstance> set;
  std::string line;
  size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    json row;
    try {
      row = json::parse(line);
    } catch (const json::exception& e) {
      throw IoError("env: bad eval-set line " + std::to_string(lineno) + ": " +
                    e.what());
    }
    TaskInstance t;
    auto fam = parse_family(row.at("family").get<std::string>());
    if (!fam)
      throw IoError("env: bad eval-set line " + std::to_string(lineno) +
                    ": unknown family");
    t.family = *fam;
    t.seed = row.at("seed").get<uint64_t>();
    t.difficulty = row.at("difficulty").get<int>();
    for (const auto& name : row.at("prompt"))
      t.prompt.push_back(vocab_->id_of(name.get<std::string>()));
    for (const auto& name : row.at("reference"))
      t.reference.push_back(vocab_->id_of(name.get<std::string>()));
    set.push_back(std::move(t));
  }
  return set;
}

}  // namespace lpreg
