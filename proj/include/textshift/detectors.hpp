#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "textshift/embeddings.hpp"

namespace textshift {

enum class DetectorKind { LR, RF, XGB, MLP, DNN, LSTM };

inline constexpr DetectorKind kAllDetectors[] = {DetectorKind::LR,  DetectorKind::RF,  DetectorKind::XGB,
                                                 DetectorKind::MLP, DetectorKind::DNN, DetectorKind::LSTM};

std::string_view detector_name(DetectorKind kind);
std::optional<DetectorKind> parse_detector(std::string_view name);
inline bool consumes_sequences(DetectorKind kind) { return kind == DetectorKind::LSTM; }

/// Detector inputs: document vectors (n x dim) or per-sample sequences.
struct Features {
  Eigen::MatrixXd dense;
  std::vector<SequenceEmbedding> sequences;

  std::size_t size() const { return sequences.empty() ? static_cast<std::size_t>(dense.rows()) : sequences.size(); }
  bool is_sequence() const { return !sequences.empty(); }
  Eigen::Index dim() const;
  /// Row subset, in the given order.
  Features select(std::span<const std::size_t> rows) const;
};

/// Binary targets: 0 = HUMAN, 1 = machine side.
using Labels = std::vector<int>;

struct DetectorHyperparams {
  // Logistic regression: C * sum(logloss) + 0.5 * |w|^2 with C = 1 / l2.
  double lr_l2 = 1.0;
  int lr_max_iter = 100;

  int rf_trees = 200;
  int rf_max_depth = 0;  // 0 = grow until pure
  int rf_min_samples_leaf = 1;
  bool rf_bootstrap = true;

  int xgb_trees = 200;
  int xgb_max_depth = 6;
  double xgb_eta = 0.1;
  double xgb_lambda = 1.0;
  double xgb_gamma = 0.0;
  double xgb_min_child_weight = 1.0;

  std::vector<int> mlp_hidden{128};
  std::vector<int> dnn_hidden{256, 128, 64};
  double dnn_dropout = 0.2;
  int lstm_hidden = 128;
  int batch_size = 64;
  int max_epochs = 30;
  int patience = 3;
  double val_fraction = 0.1;
  double learning_rate = 1e-3;

  nlohmann::json to_json() const;
  /// Fields absent from `j` keep their defaults.
  static DetectorHyperparams from_json(const nlohmann::json& j);
};

/// Fitted state of one detector family.
class Classifier {
 public:
  virtual ~Classifier() = default;
  /// Machine-side probability per sample, each in [0,1].
  virtual std::vector<double> scores(const Features& x) const = 0;
  virtual std::string serialize() const = 0;
};

struct DetectorModel {
  DetectorKind kind = DetectorKind::LR;
  std::optional<EmbeddingKind> embedding;
  DetectorHyperparams hyperparams;
  std::uint64_t seed = 0;
  Eigen::Index input_dim = 0;
  std::string train_hash;
  std::shared_ptr<const Classifier> state;

  /// Digest of the fitted state; equal hashes mean identical predictions.
  std::string hash() const;
  nlohmann::json metadata() const;

  /// Writes model.bin and metadata.json under `dir`.
  void save(const std::filesystem::path& dir) const;
  static DetectorModel load(const std::filesystem::path& dir);
};

/// Hash of a training set (features and labels) for provenance.
std::string training_set_hash(const Features& x, const Labels& y);

DetectorModel train_detector(DetectorKind kind, const Features& x, const Labels& y,
                             const DetectorHyperparams& hp, std::uint64_t seed,
                             std::optional<EmbeddingKind> embedding = std::nullopt);

struct Prediction {
  std::vector<int> labels;
  std::vector<double> scores;
};

/// Hard label 1 when score >= 0.5 (ties go to the machine side).
Prediction predict(const DetectorModel& model, const Features& x);
int threshold_label(double score);

struct EvalResult {
  double accuracy = 0.0;
  // confusion[true][predicted] with HUMAN = 0 as the negative class:
  // [[TN, FP], [FN, TP]]
  std::array<std::array<std::size_t, 2>, 2> confusion{};
  std::size_t n_test = 0;

  nlohmann::json to_json() const;
  static EvalResult from_json(const nlohmann::json& j);
  bool operator==(const EvalResult&) const = default;
};

EvalResult evaluate_predictions(std::span<const int> predicted, std::span<const int> truth);
EvalResult evaluate(const DetectorModel& model, const Features& x, const Labels& y);

// Family-specific entry points (also used directly by tests).
namespace detail {
std::shared_ptr<const Classifier> fit_logistic(const Eigen::MatrixXd& x, const Labels& y, const DetectorHyperparams& hp);
std::shared_ptr<const Classifier> fit_forest(const Eigen::MatrixXd& x, const Labels& y, const DetectorHyperparams& hp,
                                             std::uint64_t seed);
std::shared_ptr<const Classifier> fit_boosted(const Eigen::MatrixXd& x, const Labels& y,
                                              const DetectorHyperparams& hp);
std::shared_ptr<const Classifier> fit_feedforward(const Eigen::MatrixXd& x, const Labels& y,
                                                  const std::vector<int>& hidden, double dropout,
                                                  const DetectorHyperparams& hp, std::uint64_t seed);
std::shared_ptr<const Classifier> fit_lstm(const std::vector<SequenceEmbedding>& x, const Labels& y,
                                           const DetectorHyperparams& hp, std::uint64_t seed);

std::shared_ptr<const Classifier> load_logistic(std::string_view bytes);
std::shared_ptr<const Classifier> load_forest(std::string_view bytes);
std::shared_ptr<const Classifier> load_boosted(std::string_view bytes);
std::shared_ptr<const Classifier> load_feedforward(std::string_view bytes);
std::shared_ptr<const Classifier> load_lstm(std::string_view bytes);

/// Intercept followed by weights of a fitted logistic model.
Eigen::VectorXd logistic_coefficients(const Classifier& model);
}  // namespace detail

}  // namespace textshift
