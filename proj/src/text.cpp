#include "textshift/text.hpp"

#include <cctype>

namespace textshift::text {
namespace {

bool is_space(unsigned char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v'; }

bool is_ascii_punct(unsigned char c) { return c < 0x80 && std::ispunct(c) && c != '\''; }

// Multi-byte punctuation we split off: curly double quotes, dashes, ellipsis.
std::size_t unicode_punct_len(std::string_view s, std::size_t i) {
  static constexpr std::string_view kPunct[] = {"“", "”", "—", "–", "…", "‘"};
  for (auto p : kPunct) {
    if (s.substr(i, p.size()) == p) return p.size();
  }
  return 0;
}

}  // namespace

std::string normalize_whitespace(std::string_view s) {
  std::string out;
  out.reserve(s.size());
  bool pending_space = false;
  for (unsigned char c : s) {
    if (is_space(c)) {
      pending_space = !out.empty();
      continue;
    }
    if (pending_space) out.push_back(' ');
    pending_space = false;
    out.push_back(static_cast<char>(c));
  }
  return out;
}

std::vector<std::string_view> whitespace_tokens(std::string_view s) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < s.size()) {
    while (i < s.size() && is_space(static_cast<unsigned char>(s[i]))) ++i;
    std::size_t start = i;
    while (i < s.size() && !is_space(static_cast<unsigned char>(s[i]))) ++i;
    if (i > start) out.push_back(s.substr(start, i - start));
  }
  return out;
}

std::size_t utf8_length(std::string_view s) {
  std::size_t n = 0;
  for (unsigned char c : s) {
    if ((c & 0xC0) != 0x80) ++n;
  }
  return n;
}

std::string to_lower_ascii(std::string_view s) {
  std::string out(s);
  for (char& c : out) {
    if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
  }
  return out;
}

std::vector<std::string> word_tokens(std::string_view s, bool lowercase) {
  std::vector<std::string> out;
  for (std::string_view piece : whitespace_tokens(s)) {
    std::string word;
    auto flush = [&] {
      if (word.empty()) return;
      // Leading/trailing apostrophes are quotation, not contraction.
      while (!word.empty() && word.front() == '\'') {
        out.emplace_back("'");
        word.erase(word.begin());
      }
      std::size_t trailing = 0;
      while (!word.empty() && word.back() == '\'') {
        word.pop_back();
        ++trailing;
      }
      if (!word.empty()) out.push_back(lowercase ? to_lower_ascii(word) : word);
      for (; trailing > 0; --trailing) out.emplace_back("'");
      word.clear();
    };
    std::size_t i = 0;
    while (i < piece.size()) {
      auto c = static_cast<unsigned char>(piece[i]);
      if (is_ascii_punct(c)) {
        flush();
        out.emplace_back(1, static_cast<char>(c));
        ++i;
        continue;
      }
      if (std::size_t len = unicode_punct_len(piece, i); len > 0) {
        flush();
        out.emplace_back(piece.substr(i, len));
        i += len;
        continue;
      }
      word.push_back(static_cast<char>(c));
      ++i;
    }
    flush();
  }
  return out;
}

std::string detokenize(const std::vector<std::string>& tokens) {
  std::string out;
  bool glue_next = false;
  for (const auto& tok : tokens) {
    const bool closing = tok == "." || tok == "," || tok == "!" || tok == "?" || tok == ";" || tok == ":" ||
                         tok == ")" || tok == "]" || tok == "}" || tok == "%" || tok == "”";
    if (!out.empty() && !closing && !glue_next) out.push_back(' ');
    out += tok;
    glue_next = tok == "(" || tok == "[" || tok == "{" || tok == "$" || tok == "“";
  }
  return out;
}

// RFC-4180 records. Returns false on an unterminated quote.
bool parse_csv_rows(std::string_view content, std::vector<std::vector<std::string>>& rows) {
  std::vector<std::string> row;
  std::string field;
  bool in_quotes = false;
  bool any = false;
  for (std::size_t i = 0; i < content.size(); ++i) {
    char c = content[i];
    if (in_quotes) {
      if (c == '"') {
        if (i + 1 < content.size() && content[i + 1] == '"') {
          field.push_back('"');
          ++i;
        } else {
          in_quotes = false;
        }
      } else {
        field.push_back(c);
      }
      continue;
    }
    if (c == '"') {
      in_quotes = true;
      any = true;
    } else if (c == ',') {
      row.push_back(std::move(field));
      field.clear();
      any = true;
    } else if (c == '\n' || c == '\r') {
      if (c == '\r' && i + 1 < content.size() && content[i + 1] == '\n') ++i;
      if (any || !field.empty()) {
        row.push_back(std::move(field));
        rows.push_back(std::move(row));
      }
      row.clear();
      field.clear();
      any = false;
    } else {
      field.push_back(c);
      any = true;
    }
  }
  if (in_quotes) return false;
  if (any || !field.empty()) {
    row.push_back(std::move(field));
    rows.push_back(std::move(row));
  }
  return true;
}

std::string csv_field(std::string_view value) {
  if (value.find_first_of(",\"\r\n") == std::string_view::npos) return std::string(value);
  std::string out = "\"";
  for (char c : value) {
    if (c == '"') out.push_back('"');
    out.push_back(c);
  }
  out.push_back('"');
  return out;
}

}  // namespace textshift::text
