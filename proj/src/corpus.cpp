#include "textshift/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include <spdlog/spdlog.h>

#include "textshift/common.hpp"
#include "textshift/rng.hpp"
#include "textshift/text.hpp"

namespace textshift {

using nlohmann::json;

std::string_view label_name(Label label) {
  switch (label) {
    case Label::Human: return "HUMAN";
    case Label::Gpt: return "GPT";
    case Label::T5Gen: return "T5GEN";
    case Label::BartGen: return "BARTGEN";
  }
  return "?";
}

std::optional<Label> parse_label(std::string_view name) {
  const std::string n = text::to_lower_ascii(name);
  if (n == "human") return Label::Human;
  if (n == "gpt" || n == "chatgpt") return Label::Gpt;
  if (n == "t5gen") return Label::T5Gen;
  if (n == "bartgen") return Label::BartGen;
  return std::nullopt;
}

std::size_t tolerated_failures(std::size_t n, double fraction) {
  return std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(fraction * static_cast<double>(n))));
}

// ---------------------------------------------------------------------------
// Corpus

Corpus::Corpus(std::vector<TextSample> samples) : samples_(std::move(samples)) {
  index_.reserve(samples_.size());
  for (std::size_t i = 0; i < samples_.size(); ++i) {
    const auto& s = samples_[i];
    if (text::normalize_whitespace(s.text).empty()) fail("sample '" + s.id + "' has empty text");
    if ((s.label == Label::T5Gen || s.label == Label::BartGen) && !s.source_id) {
      fail("transformed sample '" + s.id + "' has no source_id");
    }
    if (!index_.emplace(s.id, i).second) fail("duplicate sample id '" + s.id + "'");
    ++counts_[s.label];
  }
}

std::size_t Corpus::count(Label label) const {
  auto it = counts_.find(label);
  return it == counts_.end() ? 0 : it->second;
}

const TextSample* Corpus::find(std::string_view id) const {
  auto it = index_.find(std::string(id));
  return it == index_.end() ? nullptr : &samples_[it->second];
}

std::vector<std::string> Corpus::ids() const {
  std::vector<std::string> out;
  out.reserve(samples_.size());
  for (const auto& s : samples_) out.push_back(s.id);
  return out;
}

Corpus Corpus::only(Label label) const {
  std::vector<TextSample> out;
  for (const auto& s : samples_) {
    if (s.label == label) out.push_back(s);
  }
  return Corpus(std::move(out));
}

Corpus Corpus::merged_with(const Corpus& other) const {
  std::vector<TextSample> out = samples_;
  out.insert(out.end(), other.samples_.begin(), other.samples_.end());
  return Corpus(std::move(out));
}

std::string Corpus::content_hash() const {
  Fnv1a h;
  for (const auto& s : samples_) {
    h.update(s.id).update("\x1f").update(s.text).update("\x1f").update(label_name(s.label)).update("\x1f");
    h.update(s.source_id.value_or("")).update("\x1e");
  }
  return h.hex();
}

// ---------------------------------------------------------------------------
// Loading

CorpusFormat format_from_path(const std::filesystem::path& path) {
  const auto ext = text::to_lower_ascii(path.extension().string());
  if (ext == ".csv") return CorpusFormat::Csv;
  if (ext == ".jsonl" || ext == ".json" || ext == ".ndjson") return CorpusFormat::Jsonl;
  throw Error(ErrorKind::Config, "cannot infer corpus format from '" + path.string() + "'");
}

namespace {

struct RawRecord {
  std::optional<std::string> id, text, label, source_id;
};

Corpus build_corpus(std::vector<RawRecord> records, std::size_t unparseable, const LoadOptions& options,
                    LoadReport* report) {
  LoadReport local;
  LoadReport& rep = report ? *report : local;
  rep = {};
  rep.rejected = unparseable;
  for (std::size_t i = 0; i < unparseable; ++i) rep.reasons.emplace_back("unparseable record");

  std::vector<TextSample> samples;
  std::set<std::string> seen;
  std::size_t row = 0;
  for (auto& r : records) {
    ++row;
    auto reject = [&](std::string why) {
      ++rep.rejected;
      rep.reasons.push_back("record " + std::to_string(row) + ": " + why);
    };
    if (!r.text || text::normalize_whitespace(*r.text).empty()) {
      reject("missing text");
      continue;
    }
    if (!r.label) {
      reject("missing label");
      continue;
    }
    auto label = parse_label(*r.label);
    if (!label) {
      reject("unknown label '" + *r.label + "'");
      continue;
    }
    std::string id = r.id && !r.id->empty() ? *r.id : "row-" + std::to_string(row);
    if (!seen.insert(id).second) {
      reject("duplicate id '" + id + "'");
      continue;
    }
    std::optional<std::string> source;
    if (r.source_id && !r.source_id->empty()) source = *r.source_id;
    if ((*label == Label::T5Gen || *label == Label::BartGen) && !source) {
      reject("transformed sample without source_id");
      continue;
    }
    samples.push_back({std::move(id), std::move(*r.text), *label, std::move(source)});
  }
  rep.accepted = samples.size();
  const std::size_t total = rep.accepted + rep.rejected;
  if (rep.rejected > 0) {
    spdlog::warn("corpus load: rejected {} of {} records", rep.rejected, total);
    for (const auto& why : rep.reasons) spdlog::debug("  {}", why);
  }
  if (rep.rejected > 0 && rep.rejected > tolerated_failures(total, options.reject_threshold)) {
    fail("corpus load: " + std::to_string(rep.rejected) + " of " + std::to_string(total) +
         " records rejected, above the reject threshold");
  }
  if (samples.empty()) fail("no samples");
  return Corpus(std::move(samples));
}

std::optional<std::string> json_string_field(const json& j, const char* key) {
  auto it = j.find(key);
  if (it == j.end() || it->is_null()) return std::nullopt;
  if (it->is_string()) return it->get<std::string>();
  if (it->is_number_integer()) return std::to_string(it->get<long long>());
  return std::nullopt;
}

}  // namespace

Corpus parse_jsonl(std::string_view content, const LoadOptions& options, LoadReport* report) {
  std::vector<RawRecord> records;
  std::size_t unparseable = 0;
  std::size_t pos = 0;
  while (pos < content.size()) {
    std::size_t end = content.find('\n', pos);
    if (end == std::string_view::npos) end = content.size();
    std::string_view line = content.substr(pos, end - pos);
    pos = end + 1;
    if (text::normalize_whitespace(line).empty()) continue;
    json j = json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.is_object()) {
      ++unparseable;
      continue;
    }
    records.push_back({json_string_field(j, "id"), json_string_field(j, "text"), json_string_field(j, "label"),
                       json_string_field(j, "source_id")});
  }
  return build_corpus(std::move(records), unparseable, options, report);
}

Corpus parse_csv(std::string_view content, const LoadOptions& options, LoadReport* report) {
  std::vector<std::vector<std::string>> rows;
  if (!text::parse_csv_rows(content, rows)) fail("csv: unterminated quoted field");
  if (rows.empty()) fail("no samples");
  const auto& header = rows.front();
  auto column = [&](std::string_view name) -> std::optional<std::size_t> {
    for (std::size_t i = 0; i < header.size(); ++i) {
      if (text::to_lower_ascii(text::normalize_whitespace(header[i])) == name) return i;
    }
    return std::nullopt;
  };
  const auto text_col = column("text");
  const auto label_col = column("label");
  if (!text_col || !label_col) fail("csv: header must name 'text' and 'label' columns");
  const auto id_col = column("id");
  const auto source_col = column("source_id");

  std::vector<RawRecord> records;
  for (std::size_t r = 1; r < rows.size(); ++r) {
    const auto& row = rows[r];
    auto get = [&](std::optional<std::size_t> col) -> std::optional<std::string> {
      if (!col || *col >= row.size()) return std::nullopt;
      return row[*col];
    };
    records.push_back({get(id_col), get(text_col), get(label_col), get(source_col)});
  }
  return build_corpus(std::move(records), 0, options, report);
}

Corpus load_corpus(const std::filesystem::path& path, CorpusFormat format, const LoadOptions& options,
                   LoadReport* report) {
  if (!std::filesystem::exists(path)) {
    throw Error(ErrorKind::MissingArtifact, "corpus file not found: " + path.string());
  }
  const std::string content = read_file(path);
  return format == CorpusFormat::Csv ? parse_csv(content, options, report) : parse_jsonl(content, options, report);
}

std::string to_jsonl(const Corpus& corpus) {
  std::string out;
  for (const auto& s : corpus.samples()) {
    json j;
    j["id"] = s.id;
    j["text"] = s.text;
    j["label"] = label_name(s.label);
    j["source_id"] = s.source_id ? json(*s.source_id) : json(nullptr);
    out += j.dump();
    out.push_back('\n');
  }
  return out;
}

void save_corpus(const Corpus& corpus, const std::filesystem::path& path) {
  write_file_atomic(path, to_jsonl(corpus));
}

// ---------------------------------------------------------------------------
// Statistics

void ClassStats::add_paragraph(std::size_t word_count, std::size_t char_count) {
  if (paragraphs == 0) {
    token_len_min = token_len_max = word_count;
  } else {
    token_len_min = std::min(token_len_min, word_count);
    token_len_max = std::max(token_len_max, word_count);
  }
  ++paragraphs;
  words += word_count;
  characters += char_count;
}

double ClassStats::avg_words_per_paragraph() const {
  return paragraphs == 0 ? 0.0 : static_cast<double>(words) / static_cast<double>(paragraphs);
}

// Paragraph length and word count share the whitespace-token unit.
double ClassStats::token_len_mean() const { return avg_words_per_paragraph(); }

ClassStats ClassStats::from_totals(std::size_t paragraphs, std::size_t words, std::size_t characters,
                                   std::size_t min_len, std::size_t max_len) {
  ClassStats s;
  s.paragraphs = paragraphs;
  s.words = words;
  s.characters = characters;
  s.token_len_min = min_len;
  s.token_len_max = max_len;
  return s;
}

CorpusStats compute_stats(const Corpus& corpus) {
  if (corpus.empty()) fail("compute_stats: empty corpus");
  CorpusStats stats;
  for (const auto& s : corpus.samples()) {
    stats.per_class[s.label].add_paragraph(text::whitespace_tokens(s.text).size(), text::utf8_length(s.text));
  }
  return stats;
}

json CorpusStats::to_json() const {
  json classes = json::object();
  for (const auto& [label, s] : per_class) {
    classes[std::string(label_name(label))] = {
        {"paragraphs", s.paragraphs},
        {"words", s.words},
        {"characters", s.characters},
        {"avg_words_per_paragraph", s.avg_words_per_paragraph()},
        {"token_len_min", s.token_len_min},
        {"token_len_max", s.token_len_max},
        {"token_len_mean", s.token_len_mean()},
    };
  }
  return {{"classes", classes},
          {"word_unit", "whitespace_tokens"},
          {"character_unit", "unicode_scalars"},
          // Published sequence-length figures may use model tokens; ours do not.
          {"sequence_length_unit", "whitespace_tokens (assumed)"}};
}

// ---------------------------------------------------------------------------
// Sampling and splitting

Corpus balanced_sample(const Corpus& corpus, const SplitSpec& spec, const std::vector<Label>& classes) {
  std::vector<Label> wanted = classes;
  if (wanted.empty()) {
    for (const auto& [label, n] : corpus.class_counts()) wanted.push_back(label);
  }
  if (spec.per_class_n == 0) fail("balanced_sample: per_class_n must be positive");
  for (Label l : wanted) {
    if (corpus.count(l) < spec.per_class_n) {
      fail("balanced_sample: class " + std::string(label_name(l)) + " has " + std::to_string(corpus.count(l)) +
           " samples, " + std::to_string(spec.per_class_n) + " requested");
    }
  }

  const auto& samples = corpus.samples();
  std::map<Label, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < samples.size(); ++i) by_class[samples[i].label].push_back(i);
  for (auto& [label, idx] : by_class) {
    Rng rng(derive_seed(spec.seed, "balanced:" + std::string(label_name(label))));
    rng.shuffle(std::span(idx));
  }

  // linked[label][human id] -> sample indices of that label derived from it
  std::map<Label, std::unordered_map<std::string, std::vector<std::size_t>>> linked;
  for (Label l : wanted) {
    if (l == Label::Human) continue;
    for (std::size_t i : by_class[l]) {
      const auto& src = samples[i].source_id;
      if (src && corpus.find(*src) && corpus.find(*src)->label == Label::Human) linked[l][*src].push_back(i);
    }
  }

  std::vector<char> chosen(samples.size(), 0);
  const bool has_human = std::find(wanted.begin(), wanted.end(), Label::Human) != wanted.end();
  std::vector<std::size_t> humans;
  if (has_human) {
    // Humans with a linked sample in every other class go first.
    auto fully_linked = [&](std::size_t i) {
      for (Label l : wanted) {
        if (l != Label::Human && !linked[l].count(samples[i].id)) return false;
      }
      return true;
    };
    std::vector<std::size_t> ordered = by_class[Label::Human];
    std::stable_partition(ordered.begin(), ordered.end(), fully_linked);
    humans.assign(ordered.begin(), ordered.begin() + static_cast<std::ptrdiff_t>(spec.per_class_n));
    for (std::size_t i : humans) chosen[i] = 1;
  }
  for (Label l : wanted) {
    if (l == Label::Human) continue;
    std::size_t taken = 0;
    for (std::size_t h : humans) {
      if (taken == spec.per_class_n) break;
      auto it = linked[l].find(samples[h].id);
      if (it == linked[l].end()) continue;
      for (std::size_t i : it->second) {
        if (!chosen[i]) {
          chosen[i] = 1;
          ++taken;
          break;
        }
      }
    }
    for (std::size_t i : by_class[l]) {
      if (taken == spec.per_class_n) break;
      if (!chosen[i]) {
        chosen[i] = 1;
        ++taken;
      }
    }
  }

  std::vector<TextSample> out;
  out.reserve(spec.per_class_n * wanted.size());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (chosen[i]) out.push_back(samples[i]);
  }
  return Corpus(std::move(out));
}

TrainTest split(const Corpus& corpus, const SplitSpec& spec) {
  if (!(spec.train_ratio > 0.0 && spec.train_ratio < 1.0)) fail("split: train_ratio must lie in (0,1)");
  const auto& samples = corpus.samples();
  const double test_frac = 1.0 - spec.train_ratio;
  const auto total_test =
      static_cast<std::size_t>(std::llround(test_frac * static_cast<double>(samples.size())));

  // Largest-remainder allocation of the global test count across classes.
  std::map<Label, std::size_t> quota;
  std::vector<std::pair<double, Label>> remainders;
  std::size_t allocated = 0;
  for (const auto& [label, n] : corpus.class_counts()) {
    const double exact = test_frac * static_cast<double>(n);
    quota[label] = static_cast<std::size_t>(std::floor(exact));
    allocated += quota[label];
    remainders.emplace_back(exact - std::floor(exact), label);
  }
  std::stable_sort(remainders.begin(), remainders.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  for (std::size_t k = 0; allocated < total_test && k < remainders.size(); ++k, ++allocated) {
    ++quota[remainders[k].second];
  }

  std::map<Label, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < samples.size(); ++i) by_class[samples[i].label].push_back(i);
  for (auto& [label, idx] : by_class) {
    Rng rng(derive_seed(spec.seed, "split:" + std::string(label_name(label))));
    rng.shuffle(std::span(idx));
  }

  std::vector<char> in_test(samples.size(), 0);
  std::set<std::string> human_test_ids;
  if (by_class.count(Label::Human)) {
    const auto& idx = by_class[Label::Human];
    for (std::size_t k = 0; k < quota[Label::Human]; ++k) {
      in_test[idx[k]] = 1;
      human_test_ids.insert(samples[idx[k]].id);
    }
  }
  for (auto& [label, idx] : by_class) {
    if (label == Label::Human) continue;
    std::size_t need = quota[label];
    // Samples whose human source went to test follow it; then the rest.
    std::stable_partition(idx.begin(), idx.end(), [&](std::size_t i) {
      return samples[i].source_id && human_test_ids.count(*samples[i].source_id);
    });
    std::stable_partition(idx.begin(), idx.end(), [&](std::size_t i) {
      const auto& src = samples[i].source_id;
      return (src && human_test_ids.count(*src)) || !src || !corpus.find(*src);
    });
    for (std::size_t k = 0; k < need; ++k) in_test[idx[k]] = 1;
  }

  std::vector<TextSample> train, test;
  for (std::size_t i = 0; i < samples.size(); ++i) (in_test[i] ? test : train).push_back(samples[i]);
  if (train.empty() || test.empty()) fail("split: produced an empty partition");
  return {Corpus(std::move(train)), Corpus(std::move(test))};
}

std::vector<PairedExample> pair_examples(const Corpus& gpt, const Corpus& human, const std::string& prefix,
                                         PairingReport* report) {
  PairingReport local;
  PairingReport& rep = report ? *report : local;
  rep = {};
  auto make_input = [&](const std::string& t) { return prefix.empty() ? t : prefix + " " + t; };

  std::vector<PairedExample> out;
  const bool any_linked = std::any_of(gpt.samples().begin(), gpt.samples().end(),
                                      [](const TextSample& s) { return s.source_id.has_value(); });
  if (!any_linked && !gpt.empty()) {
    spdlog::warn("pair_examples: no source_id linkage found, aligning {} GPT and {} human samples by row order",
                 gpt.size(), human.size());
    rep.aligned_by_row = true;
    const std::size_t n = std::min(gpt.size(), human.size());
    for (std::size_t i = 0; i < n; ++i) {
      const auto& g = gpt.samples()[i];
      const auto& h = human.samples()[i];
      out.push_back({make_input(g.text), h.text, g.id, h.id});
    }
    for (std::size_t i = n; i < gpt.size(); ++i) rep.dangling.push_back(gpt.samples()[i].id);
  } else {
    for (const auto& g : gpt.samples()) {
      const TextSample* h = g.source_id ? human.find(*g.source_id) : nullptr;
      if (!h) {
        rep.dangling.push_back(g.id);
        continue;
      }
      out.push_back({make_input(g.text), h->text, g.id, h->id});
    }
  }
  if (!rep.dangling.empty()) {
    spdlog::warn("pair_examples: excluded {} of {} GPT samples with unresolvable source", rep.dangling.size(),
                 gpt.size());
    if (rep.dangling.size() > tolerated_failures(gpt.size(), 0.05)) {
      fail("pair_examples: " + std::to_string(rep.dangling.size()) + " dangling source ids exceed 5%");
    }
  }
  return out;
}

}  // namespace textshift
