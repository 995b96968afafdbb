#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

namespace textshift {

enum class Label { Human, Gpt, T5Gen, BartGen };

inline constexpr Label kAllLabels[] = {Label::Human, Label::Gpt, Label::T5Gen, Label::BartGen};

std::string_view label_name(Label label);
std::optional<Label> parse_label(std::string_view name);

/// Everything except HUMAN sits on the machine ("positive") side of a detector.
inline bool is_machine_side(Label label) { return label != Label::Human; }

struct TextSample {
  std::string id;
  std::string text;
  Label label = Label::Human;
  std::optional<std::string> source_id;

  bool operator==(const TextSample&) const = default;
};

/// Ordered, validated collection of samples. Construction enforces unique
/// ids, non-empty text and source linkage for transformed labels.
class Corpus {
 public:
  Corpus() = default;
  explicit Corpus(std::vector<TextSample> samples);

  const std::vector<TextSample>& samples() const noexcept { return samples_; }
  const std::map<Label, std::size_t>& class_counts() const noexcept { return counts_; }
  std::size_t size() const noexcept { return samples_.size(); }
  bool empty() const noexcept { return samples_.empty(); }
  std::size_t count(Label label) const;

  const TextSample* find(std::string_view id) const;
  std::vector<std::string> ids() const;
  Corpus only(Label label) const;
  Corpus merged_with(const Corpus& other) const;

  /// Stable digest of (id, text, label, source_id) in order.
  std::string content_hash() const;

  bool operator==(const Corpus& other) const { return samples_ == other.samples_; }

 private:
  std::vector<TextSample> samples_;
  std::map<Label, std::size_t> counts_;
  std::unordered_map<std::string, std::size_t> index_;
};

enum class CorpusFormat { Csv, Jsonl };

CorpusFormat format_from_path(const std::filesystem::path& path);

struct LoadOptions {
  // Fraction of unparseable records tolerated before aborting. Small files
  // always tolerate a single bad record.
  double reject_threshold = 0.01;
};

struct LoadReport {
  std::size_t accepted = 0;
  std::size_t rejected = 0;
  std::vector<std::string> reasons;
};

Corpus load_corpus(const std::filesystem::path& path, CorpusFormat format, const LoadOptions& options = {},
                   LoadReport* report = nullptr);
Corpus parse_jsonl(std::string_view content, const LoadOptions& options = {}, LoadReport* report = nullptr);
Corpus parse_csv(std::string_view content, const LoadOptions& options = {}, LoadReport* report = nullptr);

std::string to_jsonl(const Corpus& corpus);
void save_corpus(const Corpus& corpus, const std::filesystem::path& path);

/// Per-class counts. Paragraph lengths are whitespace tokens.
struct ClassStats {
  std::size_t paragraphs = 0;
  std::size_t words = 0;
  std::size_t characters = 0;
  std::size_t token_len_min = 0;
  std::size_t token_len_max = 0;

  void add_paragraph(std::size_t word_count, std::size_t char_count);
  double avg_words_per_paragraph() const;
  double token_len_mean() const;

  /// Aggregate totals, as published for a corpus we do not hold.
  static ClassStats from_totals(std::size_t paragraphs, std::size_t words, std::size_t characters,
                                std::size_t min_len, std::size_t max_len);
};

struct CorpusStats {
  std::map<Label, ClassStats> per_class;  // classes with no samples are absent
  nlohmann::json to_json() const;
};

CorpusStats compute_stats(const Corpus& corpus);

struct SplitSpec {
  double train_ratio = 0.8;
  std::uint64_t seed = 0;
  std::size_t per_class_n = 5000;
};

/// Exactly per_class_n samples of each class present (or of `classes` when
/// given). Linked samples are drawn together with their human source when
/// possible, so paired data stays paired.
Corpus balanced_sample(const Corpus& corpus, const SplitSpec& spec, const std::vector<Label>& classes = {});

struct TrainTest {
  Corpus train;
  Corpus test;
};

/// Stratified split with |test| = round((1 - train_ratio) * |corpus|). A
/// machine-side sample follows its human source into the same partition
/// whenever the per-class quota allows it.
TrainTest split(const Corpus& corpus, const SplitSpec& spec);

struct PairedExample {
  std::string input;
  std::string target;
  std::string gpt_id;
  std::string human_id;
};

struct PairingReport {
  std::vector<std::string> dangling;  // gpt ids whose source could not be resolved
  bool aligned_by_row = false;
};

/// (prefix + " " + gpt.text, human.text) per GPT sample, matched on source_id.
/// Falls back to row-order alignment when no GPT sample carries a source_id.
std::vector<PairedExample> pair_examples(const Corpus& gpt, const Corpus& human, const std::string& prefix,
                                         PairingReport* report = nullptr);

/// Tolerated error count for a failure fraction over n items.
std::size_t tolerated_failures(std::size_t n, double fraction);

}  // namespace textshift
