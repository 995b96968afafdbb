#pragma once

#include <compare>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "textshift/corpus.hpp"
#include "textshift/detectors.hpp"
#include "textshift/embeddings.hpp"
#include "textshift/humanizer.hpp"
#include "textshift/seq2seq.hpp"

namespace textshift {

enum class Phase { Baseline, Attack, Retrain };

std::string_view phase_name(Phase p);  // "baseline", "attack", "retrain"
std::optional<Phase> parse_phase(std::string_view name);
Label transformed_label(Backbone b);

struct ExperimentPlan {
  Phase phase = Phase::Baseline;
  std::vector<EmbeddingKind> embeddings{std::begin(kAllEmbeddings), std::end(kAllEmbeddings)};
  std::vector<DetectorKind> detectors{std::begin(kAllDetectors), std::end(kAllDetectors)};
  std::optional<Backbone> transformer;
  std::uint64_t seed = 0;
  SplitSpec split;

  void validate() const;
  std::size_t cardinality() const { return embeddings.size() * detectors.size(); }
};

/// Baseline, then attack and retrain for each transformer.
std::vector<ExperimentPlan> full_plan(std::uint64_t seed, const SplitSpec& split);

struct CellKey {
  EmbeddingKind embedding = EmbeddingKind::Word2Vec;
  DetectorKind detector = DetectorKind::LR;
  std::optional<Backbone> transformer;

  auto operator<=>(const CellKey&) const = default;
  bool operator==(const CellKey&) const = default;
};

struct CellResult {
  CellKey key;
  std::optional<EvalResult> eval;
  std::string error;  // non-empty when the cell failed
  std::string model_hash;
  std::string model_dir;
};

struct ExperimentReport {
  Phase phase = Phase::Baseline;
  std::optional<Backbone> transformer;
  std::vector<CellResult> cells;
  nlohmann::json provenance = nlohmann::json::object();

  std::size_t failed_cells() const;
  const CellResult* find(EmbeddingKind e, DetectorKind d) const;

  nlohmann::json to_json() const;
  static ExperimentReport from_json(const nlohmann::json& j);
  /// JSON text without wall-clock timestamps; equal for identical runs.
  std::string canonical() const;
};

using AccuracyTable = std::map<CellKey, double>;

/// Accuracies of the successful cells.
AccuracyTable accuracy_table(const ExperimentReport& report);
AccuracyTable merge_tables(const std::vector<AccuracyTable>& tables);

/// (baseline - attack) / baseline.
double relative_drop(double baseline_acc, double attack_acc);

struct DropCell {
  CellKey key;  // transformer always set
  double baseline = 0.0;
  double attack = 0.0;
  double drop = 0.0;
};

struct DropRange {
  EmbeddingKind embedding = EmbeddingKind::Word2Vec;
  std::optional<Backbone> transformer;  // empty = across both transformers
  DropCell min;
  DropCell max;
};

struct DropSummary {
  std::vector<DropCell> drops;
  std::vector<DropRange> ranges;

  const DropCell& at(EmbeddingKind e, DetectorKind d, Backbone t) const;
  const DropRange& range(EmbeddingKind e, std::optional<Backbone> t = std::nullopt) const;
  nlohmann::json to_json() const;
};

/// Exhaustive drop table plus argmin/argmax per embedding, overall and per
/// transformer. `attack` must hold exactly the baseline cells for each
/// transformer it mentions.
DropSummary drop_summary(const AccuracyTable& baseline, const AccuracyTable& attack);

/// Published accuracy tables (baseline, attack, retrain).
struct PaperTables {
  AccuracyTable baseline;
  AccuracyTable attack;
  AccuracyTable retrain;
};

std::filesystem::path default_data_dir();
PaperTables load_paper_tables(const std::filesystem::path& path = default_data_dir() / "paper_tables.json");
PaperTables parse_paper_tables(const nlohmann::json& j);

// Pipeline execution

/// Everything a phase needs besides the plan.
struct PhaseInputs {
  TrainTest split;                       // HUMAN + GPT partitions
  std::optional<Corpus> transformed;     // required for ATTACK and RETRAIN
  std::optional<EmbeddingModel> glove;   // required when GloVe is planned
  std::shared_ptr<const ContextualEncoder> encoder;  // required when BERT is planned
};

struct RunSettings {
  DetectorHyperparams hyperparams;
  Word2VecParams word2vec;
  std::size_t sequence_length = 64;
  std::size_t bert_max_len = 512;
  Pooling bert_pooling = Pooling::Mean;
  std::string config_hash;
  bool record_timestamps = true;
};

/// Binary-labelled texts for a phase: HUMAN = 0, machine side = 1.
struct LabelledTexts {
  std::vector<std::string> texts;
  Labels labels;
  std::string hash;
};

LabelledTexts phase_partition(const Corpus& part, Phase phase, const std::optional<Corpus>& transformed);

/// Runs every cell of `plan`. Models and per-cell eval.json go under
/// results/<phase>/<transformer?>/<embedding>/<detector>/, the report to
/// report.json beside them. ATTACK loads the persisted baseline models and
/// verifies their hashes before and after evaluation.
ExperimentReport run_phase(const ExperimentPlan& plan, const PhaseInputs& inputs, const RunSettings& settings,
                           const std::filesystem::path& results_root);

ExperimentReport run_baseline(const ExperimentPlan& plan, const PhaseInputs& inputs, const RunSettings& settings,
                              const std::filesystem::path& results_root);
ExperimentReport run_attack(const ExperimentPlan& plan, const PhaseInputs& inputs, const RunSettings& settings,
                            const std::filesystem::path& results_root);
ExperimentReport run_retrain(const ExperimentPlan& plan, const PhaseInputs& inputs, const RunSettings& settings,
                             const std::filesystem::path& results_root);

std::filesystem::path phase_dir(const std::filesystem::path& results_root, Phase phase,
                                std::optional<Backbone> transformer);
ExperimentReport load_report(const std::filesystem::path& results_root, Phase phase,
                             std::optional<Backbone> transformer);

}  // namespace textshift
