#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "textshift/corpus.hpp"
#include "textshift/seq2seq.hpp"

namespace textshift {

struct HumanizerConfig {
  Backbone backbone = Backbone::T5Small;
  int max_len = 512;
  int max_epochs = 20;
  double label_smoothing_eps = 0.1;
  int warmup_steps = 0;  // 0 = 10% of the total optimizer steps
  double peak_lr = 3e-4;
  int batch_size = 8;
  int grad_accum = 4;
  double weight_decay = 0.01;
  double max_grad_norm = 1.0;
  bool fp16 = true;
  int early_stop_patience = 2;
  double eval_fraction = 0.1;
  std::string prefix = "humanize:";
  std::uint64_t seed = 0;

  /// Backbone-specific default peak learning rate.
  static double default_peak_lr(Backbone b) { return b == Backbone::Bart ? 3e-5 : 3e-4; }
  void validate(const BackboneConfig& backbone_cfg) const;
  nlohmann::json to_json() const;
  /// Fields absent from `j` keep their defaults.
  static HumanizerConfig from_json(const nlohmann::json& j);
};

enum class Strategy { Beam, Sample, Greedy };

std::string_view strategy_name(Strategy s);
std::optional<Strategy> parse_strategy(std::string_view name);

struct DecodingConfig {
  Strategy strategy = Strategy::Beam;
  int beam_width = 4;
  int top_k = 50;
  double top_p = 0.95;
  double repetition_penalty = 1.2;
  int max_gen_len = 128;
  double length_penalty = 1.0;
  std::uint64_t seed = 0;

  void validate() const;
  nlohmann::json to_json() const;
  static DecodingConfig from_json(const nlohmann::json& j);
};

enum class StopReason { EarlyStop, MaxEpochs };

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;
  double eval_loss = 0.0;
  std::string checkpoint_path;
};

struct TrainingTrace {
  std::vector<EpochRecord> epochs;
  int stopped_epoch = 0;
  StopReason stop_reason = StopReason::MaxEpochs;
  int best_epoch = 0;
  std::string precision;  // what the run actually used
  int optimizer_steps = 0;

  nlohmann::json to_json() const;
  static TrainingTrace from_json(const nlohmann::json& j);
};

/// Mean over non-padding rows of cross-entropy against the smoothed target
/// (1 - eps) * onehot + eps / V. `logits` is sequence x vocabulary.
double label_smoothed_ce(const Eigen::MatrixXd& logits, std::span<const int> targets,
                         std::span<const unsigned char> keep, double eps);

/// Linear warm-up to 1 at `warmup`, then linear decay to 0 at `total`.
double lr_multiplier(int step, int warmup, int total);

/// Patience rule on a monitored loss: a new minimum resets the counter and
/// training stops once `patience` epochs pass without one.
class EarlyStopping {
 public:
  explicit EarlyStopping(int patience) : patience_(patience) {}
  /// Returns true when training should stop after this epoch.
  bool update(double loss);
  bool improved() const noexcept { return improved_; }
  double best() const noexcept { return best_; }

 private:
  int patience_;
  double best_ = 0.0;
  bool seen_ = false;
  bool improved_ = false;
  int stale_ = 0;
};

/// Fine-tunes in place. Writes checkpoints/<backbone>/epoch-<n>/ under
/// `checkpoint_root` (when non-empty) and leaves the best-epoch weights
/// loaded in `model`.
TrainingTrace fine_tune(Seq2SeqModel& model, std::span<const PairedExample> pairs, const HumanizerConfig& cfg,
                        const std::filesystem::path& checkpoint_root);

/// Stable digest of a pair list.
std::string pair_set_hash(std::span<const PairedExample> pairs);

struct PretrainConfig {
  int steps = 600;
  int batch_size = 16;
  double lr = 1e-3;
  double noise = 0.15;
  int max_len = 128;
  std::uint64_t seed = 0;
};

/// Denoising warm start: recover each text from a copy with a fraction of
/// tokens masked or dropped. Returns the final mean token loss.
double pretrain_denoising(Seq2SeqModel& model, std::span<const std::string> texts, const PretrainConfig& cfg);

// Decoding

/// Positive scores of already generated ids are divided by `penalty`,
/// negative ones multiplied; every other score is untouched.
void apply_repetition_penalty(Eigen::Ref<Eigen::RowVectorXd> scores, std::span<const int> generated,
                              double penalty);

/// Token ids (without specials) for one input string.
std::vector<int> generate_ids(const Seq2SeqModel& model, std::string_view input, const DecodingConfig& dcfg,
                              std::size_t input_index = 0, int max_input_len = 512);

/// Decoded strings in input order. Empty inputs give empty outputs.
std::vector<std::string> decode(const Seq2SeqModel& model, std::span<const std::string> inputs,
                                const DecodingConfig& dcfg, int max_input_len = 512);

struct TransformReport {
  std::size_t dropped = 0;
  std::vector<std::string> dropped_ids;
};

/// One out_label sample per GPT input (source_id = input id). Samples whose
/// decode fails or comes out empty are dropped; more than 2% aborts.
Corpus transform_corpus(const Seq2SeqModel& model, const Corpus& gpt_corpus, const DecodingConfig& dcfg,
                        Label out_label, const std::string& prefix, int max_input_len = 512,
                        TransformReport* report = nullptr);

/// Finds the checkpoint directory holding the best epoch of a trace file.
std::filesystem::path best_checkpoint(const std::filesystem::path& backbone_dir);

}  // namespace textshift
