#include "textshift/tokenizer.hpp"

#include <algorithm>
#include <map>

#include "textshift/common.hpp"
#include "textshift/text.hpp"

namespace textshift {

namespace {
const char* const kSpecialTokens[] = {"<pad>", "<s>", "</s>", "<unk>"};
}

Vocabulary::Vocabulary(std::vector<std::string> words, bool lowercase) : lowercase_(lowercase) {
  for (const char* s : kSpecialTokens) {
    index_.emplace(s, static_cast<int>(tokens_.size()));
    tokens_.emplace_back(s);
  }
  for (auto& w : words) {
    if (index_.count(w)) continue;
    index_.emplace(w, static_cast<int>(tokens_.size()));
    tokens_.push_back(std::move(w));
  }
}

Vocabulary Vocabulary::build(std::span<const std::string> texts, std::size_t min_count, std::size_t max_words,
                             bool lowercase, std::span<const std::string> always_include) {
  std::map<std::string, std::size_t> counts;
  for (const auto& t : texts) {
    for (auto& w : text::word_tokens(t, lowercase)) ++counts[w];
  }
  std::vector<std::pair<std::string, std::size_t>> ranked(counts.begin(), counts.end());
  std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
  std::vector<std::string> words(always_include.begin(), always_include.end());
  for (auto& [w, c] : ranked) {
    if (c < min_count) break;
    if (max_words && words.size() >= max_words) break;
    words.push_back(w);
  }
  return Vocabulary(std::move(words), lowercase);
}

int Vocabulary::id(std::string_view token) const {
  auto it = index_.find(std::string(token));
  return it == index_.end() ? kUnk : it->second;
}

std::vector<int> Vocabulary::to_ids(std::string_view text) const {
  std::vector<int> out;
  for (const auto& w : text::word_tokens(text, lowercase_)) out.push_back(id(w));
  return out;
}

std::size_t Vocabulary::Encoded::length() const {
  return static_cast<std::size_t>(std::count(attention.begin(), attention.end(), 1));
}

Vocabulary::Encoded Vocabulary::encode(std::string_view text, std::size_t max_len) const {
  if (max_len == 0) fail("encode: max_len must be positive");
  std::vector<int> ids = to_ids(text);
  if (ids.size() + 1 > max_len) ids.resize(max_len - 1);
  ids.push_back(kEos);
  Encoded e;
  e.attention.assign(ids.size(), 1);
  e.ids = std::move(ids);
  e.ids.resize(max_len, kPad);
  e.attention.resize(max_len, 0);
  return e;
}

std::string Vocabulary::decode(std::span<const int> ids) const {
  std::vector<std::string> words;
  for (int id : ids) {
    if (id == kEos) break;
    if (is_special(id) || id >= size()) continue;
    words.push_back(tokens_[static_cast<std::size_t>(id)]);
  }
  return text::detokenize(words);
}

nlohmann::json Vocabulary::to_json() const {
  return {{"lowercase", lowercase_},
          {"tokens", std::vector<std::string>(tokens_.begin() + kNumSpecial, tokens_.end())}};
}

Vocabulary Vocabulary::from_json(const nlohmann::json& j) {
  return Vocabulary(j.at("tokens").get<std::vector<std::string>>(), j.at("lowercase").get<bool>());
}

std::string Vocabulary::hash() const { return hash_hex(to_json().dump()); }

}  // namespace textshift
