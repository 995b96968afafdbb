#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

namespace textshift::text {

/// Collapses whitespace runs to a single space and trims both ends.
std::string normalize_whitespace(std::string_view s);

/// Whitespace-delimited tokens (the "word" unit of corpus statistics).
std::vector<std::string_view> whitespace_tokens(std::string_view s);

/// Number of unicode scalar values in a UTF-8 string. Invalid lead bytes
/// count as one scalar each.
std::size_t utf8_length(std::string_view s);

/// Word tokenizer shared by the embeddings and the seq2seq vocabulary:
/// splits on whitespace, then peels punctuation into separate tokens while
/// keeping in-word apostrophes ("don't").
std::vector<std::string> word_tokens(std::string_view s, bool lowercase);

/// Inverse of word_tokens for display: no space before closing punctuation.
std::string detokenize(const std::vector<std::string>& tokens);

std::string to_lower_ascii(std::string_view s);

/// RFC-4180 records. Returns false on an unterminated quote.
bool parse_csv_rows(std::string_view content, std::vector<std::vector<std::string>>& rows);
/// One RFC-4180 field, quoted only when needed.
std::string csv_field(std::string_view value);

}  // namespace textshift::text
