#include "lpreg/vocab.hpp"

#include <algorithm>

namespace lpreg {

const char* token_class_name(TokenClass c) {
  switch (c) {
    case TokenClass::spark:
      return "spark";
    case TokenClass::irrelevant:
      return "irrelevant";
    default:
      return "other";
  }
}

int Vocabulary::id_of(const std::string& name) const {
  int id = find(name);
  if (id < 0) throw ConfigError("vocabulary: unknown token '" + name + "'");
  return id;
}

int Vocabulary::find(const std::string& name) const {
  auto it = index_.find(name);
  return it == index_.end() ? -1 : it->second;
}

const std::string& Vocabulary::name(int id) const {
  if (id < 0 || id >= size())
    throw ConfigError("vocabulary: token id out of range: " +
                      std::to_string(id));
  return tokens[id];
}

const std::vector<int>& Vocabulary::class_ids(TokenClass c) const {
  for (const auto& [cls, ids] : designated) {
    if (cls == token_class_name(c)) return ids;
  }
  return empty_;
}

void Vocabulary::finalize() {
  if (tokens.size() < 2) throw ConfigError("vocabulary: needs at least <pad> and <eos>");
  if (tokens[pad_id] != "<pad>") throw ConfigError("vocabulary: token 0 must be <pad>");
  if (tokens[eos_id] != "<eos>") throw ConfigError("vocabulary: token 1 must be <eos>");

  index_.clear();
  for (int i = 0; i < size(); ++i) {
    if (!index_.emplace(tokens[i], i).second)
      throw ConfigError("vocabulary: duplicate token '" + tokens[i] + "'");
  }

  classes_.assign(tokens.size(), TokenClass::other);
  for (auto& [cls, ids] : designated) {
    TokenClass tc;
    if (cls == "spark") {
      tc = TokenClass::spark;
    } else if (cls == "irrelevant") {
      tc = TokenClass::irrelevant;
    } else {
      throw ConfigError("vocabulary: unknown designated class '" + cls + "'");
    }
    std::sort(ids.begin(), ids.end());
    for (int id : ids) {
      if (id < 0 || id >= size())
        throw ConfigError("vocabulary: designated id out of range in class '" +
                          cls + "'");
      if (classes_[id] != TokenClass::other)
        throw ConfigError("vocabulary: token '" + tokens[id] +
                          "' designated in two classes");
      classes_[id] = tc;
    }
  }
}

Vocabulary Vocabulary::default_vocab() {
  Vocabulary v;
  v.tokens = {"<pad>", "<eos>"};
  for (int d = 0; d <= 9; ++d) v.tokens.push_back(std::string(1, char('0' + d)));
  v.tokens.insert(v.tokens.end(), {"+", "-", "*", "mod", "=", "?"});
  v.tokens.insert(v.tokens.end(), {"copy", "rev", "go"});
  v.tokens.push_back("ALT");
  for (int c = 0; c < 26; ++c) v.tokens.push_back(std::string(1, char('a' + c)));
  for (int u = 0; u < 16; ++u) v.tokens.push_back("u" + std::to_string(u));

  auto raw_index = [&v](const std::string& name) {
    for (int i = 0; i < v.size(); ++i)
      if (v.tokens[i] == name) return i;
    throw ConfigError("vocabulary: missing stock token " + name);
  };
  std::vector<int> spark = {raw_index("ALT")};
  std::vector<int> irrelevant;
  for (int u = 0; u < 16; ++u)
    irrelevant.push_back(raw_index("u" + std::to_string(u)));
  v.designated.emplace_back("spark", std::move(spark));
  v.designated.emplace_back("irrelevant", std::move(irrelevant));
  v.finalize();
  return v;
}

const Vocabulary& Vocabulary::default_vocab_ref() {
  static const Vocabulary v = default_vocab();
  return v;
}

}  // namespace lpreg
