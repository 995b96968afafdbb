#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "textshift/corpus.hpp"
#include "textshift/detectors.hpp"
#include "textshift/embeddings.hpp"
#include "textshift/experiments.hpp"
#include "textshift/humanizer.hpp"
#include "textshift/reporting.hpp"
#include "textshift/seq2seq.hpp"

namespace textshift {

struct RunPaths {
  std::filesystem::path corpus;
  std::filesystem::path glove_vectors;
  std::filesystem::path backbone_weights;  // holds t5small/ and bart/
  std::filesystem::path encoder_weights;
  std::filesystem::path results_root = "results";
};

/// Declarative run configuration. Every stage records hash() in its outputs.
struct RunConfig {
  std::uint64_t seed = 0;
  RunPaths paths;
  SplitSpec split;
  nlohmann::json humanizer = nlohmann::json::object();  // HumanizerConfig fields; backbone set per stage
  DecodingConfig decoding;
  DetectorHyperparams detectors;
  Word2VecParams word2vec;
  int glove_dim = 50;
  std::size_t sequence_length = 64;
  std::size_t bert_max_len = 512;
  int transform_max_input_len = 512;
  std::size_t finetune_pairs = 0;  // 0 = every training pair
  std::vector<EmbeddingKind> embeddings{std::begin(kAllEmbeddings), std::end(kAllEmbeddings)};
  std::vector<DetectorKind> detector_kinds{std::begin(kAllDetectors), std::end(kAllDetectors)};

  nlohmann::json to_json() const;
  /// Relative paths resolve against `base_dir`. Unknown keys are config errors.
  static RunConfig from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = {});
  static RunConfig load(const std::filesystem::path& file);
  std::string hash() const;

  HumanizerConfig humanizer_for(Backbone b) const;
  /// The split with its seed derived from the global seed.
  SplitSpec derived_split() const;
};

/// Results root after the TEXTSHIFT_RESULTS_ROOT override.
std::filesystem::path results_root(const RunConfig& cfg);

enum class Stage { Prep, Embed, TrainDetector, Finetune, Transform, Run, Report };
/// Throws a Config error naming the first unresolvable path field.
void validate_paths(const RunConfig& cfg, Stage stage);

struct PrepResult {
  TrainTest split;
  CorpusStats stats;
  bool skipped = false;
};
PrepResult prep(const RunConfig& cfg, bool force = false);
TrainTest load_prepared(const RunConfig& cfg);

struct EmbedResult {
  std::filesystem::path dir;
  std::string model_hash;
  bool skipped = false;
};
/// Document vectors of the prepared split for one embedding (CSV per partition).
EmbedResult embed(const RunConfig& cfg, EmbeddingKind kind, bool force = false);

/// One baseline cell trained and evaluated outside the full sweep.
CellResult train_single_detector(const RunConfig& cfg, EmbeddingKind e, DetectorKind d);

struct FinetuneResult {
  TrainingTrace trace;
  std::filesystem::path best;
  bool skipped = false;
};
FinetuneResult finetune(const RunConfig& cfg, Backbone b, bool force = false);

struct TransformResult {
  Corpus corpus;
  TransformReport report;
  std::filesystem::path path;
  bool skipped = false;
};
/// Rewrites every GPT sample of the prepared split with the best checkpoint.
TransformResult transform(const RunConfig& cfg, Backbone b, bool force = false,
                          const std::optional<std::filesystem::path>& checkpoint = std::nullopt);
std::filesystem::path transformed_path(const RunConfig& cfg, Backbone b);

struct RunResult {
  ExperimentReport report;
  bool skipped = false;
};
RunResult run_stage(const RunConfig& cfg, Phase phase, std::optional<Backbone> transformer, bool force = false);

struct ReportResult {
  std::vector<std::filesystem::path> written;
  std::vector<std::string> skipped_phases;
};
/// Tables, drop summaries, bar data and confusion matrices for every phase
/// whose report exists.
ReportResult report_stage(const RunConfig& cfg, TableFormat format);

/// Renders the shipped published tables the same way report_stage renders runs.
std::string render_paper_table(Phase phase, TableFormat format, const PaperTables& tables);

// Provisioning of local stand-ins for pretrained resources.

struct BackboneProvision {
  BackboneConfig architecture;
  PretrainConfig pretrain;
  std::size_t min_count = 1;
  std::size_t max_words = 0;
};

/// Builds a vocabulary over `texts`, initializes the backbone and runs the
/// denoising warm start, then saves it under `dir`.
std::string provision_backbone(const std::filesystem::path& dir, Backbone b, const std::vector<std::string>& texts,
                               BackboneProvision spec, std::uint64_t seed, const std::string& prefix = "humanize:");

/// Randomly initialized contextual encoder over the vocabulary of `texts`.
std::string provision_encoder(const std::filesystem::path& dir, const std::vector<std::string>& texts,
                              EncoderConfig cfg, std::uint64_t seed);

/// GloVe-format file holding one seeded pseudo-random vector per distinct token.
std::string provision_glove(const std::filesystem::path& file, const std::vector<std::string>& texts, int dim,
                            std::uint64_t seed);

/// Stage marker used for idempotent reruns.
struct Stamp {
  std::string config_hash;
  nlohmann::json inputs;
};
bool stamp_matches(const std::filesystem::path& dir, const Stamp& stamp);
void write_stamp(const std::filesystem::path& dir, const Stamp& stamp);

}  // namespace textshift
