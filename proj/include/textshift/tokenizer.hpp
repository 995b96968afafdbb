#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

namespace textshift {

/// Word-level vocabulary with four reserved ids. Used by both the seq2seq
/// backbones and the contextual encoder (where <s>/</s> play CLS/SEP).
class Vocabulary {
 public:
  static constexpr int kPad = 0;
  static constexpr int kBos = 1;
  static constexpr int kEos = 2;
  static constexpr int kUnk = 3;
  static constexpr int kNumSpecial = 4;

  Vocabulary() = default;
  Vocabulary(std::vector<std::string> words, bool lowercase);

  /// Words with count >= min_count, most frequent first (ties by byte order),
  /// capped at max_words (0 = no cap). `always_include` words are added first.
  static Vocabulary build(std::span<const std::string> texts, std::size_t min_count, std::size_t max_words,
                          bool lowercase, std::span<const std::string> always_include = {});

  int size() const noexcept { return static_cast<int>(tokens_.size()); }
  bool lowercase() const noexcept { return lowercase_; }
  int id(std::string_view token) const;
  const std::string& token(int id) const { return tokens_.at(static_cast<std::size_t>(id)); }
  static bool is_special(int id) { return id < kNumSpecial; }

  std::vector<int> to_ids(std::string_view text) const;

  struct Encoded {
    std::vector<int> ids;                 // padded to the requested length
    std::vector<unsigned char> attention;  // 1 for real tokens, 0 for padding
    std::size_t length() const;
  };
  /// Tokenizes, appends </s>, then truncates/pads to max_len.
  Encoded encode(std::string_view text, std::size_t max_len) const;

  /// Drops padding and special ids, then joins words back into text.
  std::string decode(std::span<const int> ids) const;

  nlohmann::json to_json() const;
  static Vocabulary from_json(const nlohmann::json& j);
  std::string hash() const;

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
  bool lowercase_ = false;
};

}  // namespace textshift
