#include "textshift/detectors.hpp"

#include <cmath>

#include "textshift/common.hpp"
#include "textshift/text.hpp"

namespace textshift {

namespace fs = std::filesystem;
using nlohmann::json;

std::string_view detector_name(DetectorKind kind) {
  switch (kind) {
    case DetectorKind::LR: return "LR";
    case DetectorKind::RF: return "RF";
    case DetectorKind::XGB: return "XGB";
    case DetectorKind::MLP: return "MLP";
    case DetectorKind::DNN: return "DNN";
    case DetectorKind::LSTM: return "LSTM";
  }
  return "?";
}

std::optional<DetectorKind> parse_detector(std::string_view name) {
  const std::string n = text::to_lower_ascii(name);
  for (DetectorKind k : kAllDetectors) {
    if (text::to_lower_ascii(detector_name(k)) == n) return k;
  }
  return std::nullopt;
}

Eigen::Index Features::dim() const {
  if (!is_sequence()) return dense.cols();
  return sequences.front().matrix.cols();
}

Features Features::select(std::span<const std::size_t> rows) const {
  Features out;
  if (is_sequence()) {
    for (std::size_t r : rows) out.sequences.push_back(sequences[r]);
  } else {
    out.dense.resize(static_cast<Eigen::Index>(rows.size()), dense.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) {
      out.dense.row(static_cast<Eigen::Index>(i)) = dense.row(static_cast<Eigen::Index>(rows[i]));
    }
  }
  return out;
}

json DetectorHyperparams::to_json() const {
  return {{"lr_l2", lr_l2},
          {"lr_max_iter", lr_max_iter},
          {"rf_trees", rf_trees},
          {"rf_max_depth", rf_max_depth},
          {"rf_min_samples_leaf", rf_min_samples_leaf},
          {"rf_bootstrap", rf_bootstrap},
          {"xgb_trees", xgb_trees},
          {"xgb_max_depth", xgb_max_depth},
          {"xgb_eta", xgb_eta},
          {"xgb_lambda", xgb_lambda},
          {"xgb_gamma", xgb_gamma},
          {"xgb_min_child_weight", xgb_min_child_weight},
          {"mlp_hidden", mlp_hidden},
          {"dnn_hidden", dnn_hidden},
          {"dnn_dropout", dnn_dropout},
          {"lstm_hidden", lstm_hidden},
          {"batch_size", batch_size},
          {"max_epochs", max_epochs},
          {"patience", patience},
          {"val_fraction", val_fraction},
          {"learning_rate", learning_rate}};
}

DetectorHyperparams DetectorHyperparams::from_json(const json& j) {
  DetectorHyperparams h;
  auto opt = [&](const char* key, auto& field) {
    if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
  };
  opt("lr_l2", h.lr_l2);
  opt("lr_max_iter", h.lr_max_iter);
  opt("rf_trees", h.rf_trees);
  opt("rf_max_depth", h.rf_max_depth);
  opt("rf_min_samples_leaf", h.rf_min_samples_leaf);
  opt("rf_bootstrap", h.rf_bootstrap);
  opt("xgb_trees", h.xgb_trees);
  opt("xgb_max_depth", h.xgb_max_depth);
  opt("xgb_eta", h.xgb_eta);
  opt("xgb_lambda", h.xgb_lambda);
  opt("xgb_gamma", h.xgb_gamma);
  opt("xgb_min_child_weight", h.xgb_min_child_weight);
  opt("mlp_hidden", h.mlp_hidden);
  opt("dnn_hidden", h.dnn_hidden);
  opt("dnn_dropout", h.dnn_dropout);
  opt("lstm_hidden", h.lstm_hidden);
  opt("batch_size", h.batch_size);
  opt("max_epochs", h.max_epochs);
  opt("patience", h.patience);
  opt("val_fraction", h.val_fraction);
  opt("learning_rate", h.learning_rate);
  return h;
}

std::string DetectorModel::hash() const {
  if (!state) fail("detector model is not fitted");
  return hash_hex(state->serialize());
}

json DetectorModel::metadata() const {
  return {{"kind", detector_name(kind)},
          {"embedding", embedding ? json(embedding_name(*embedding)) : json(nullptr)},
          {"hyperparams", hyperparams.to_json()},
          {"seed", seed},
          {"input_dim", input_dim},
          {"train_set_hash", train_hash},
          {"model_hash", hash()}};
}

void DetectorModel::save(const fs::path& dir) const {
  write_file_atomic(dir / "model.bin", state->serialize());
  write_file_atomic(dir / "metadata.json", metadata().dump(2));
}

DetectorModel DetectorModel::load(const fs::path& dir) {
  if (!fs::exists(dir / "metadata.json") || !fs::exists(dir / "model.bin")) {
    throw Error(ErrorKind::MissingArtifact, "no detector model in " + dir.string());
  }
  const json meta = json::parse(read_file(dir / "metadata.json"));
  DetectorModel m;
  auto kind = parse_detector(meta.at("kind").get<std::string>());
  if (!kind) fail("unknown detector kind in " + dir.string());
  m.kind = *kind;
  if (!meta.at("embedding").is_null()) m.embedding = parse_embedding(meta.at("embedding").get<std::string>());
  m.hyperparams = DetectorHyperparams::from_json(meta.at("hyperparams"));
  m.seed = meta.at("seed").get<std::uint64_t>();
  m.input_dim = meta.at("input_dim").get<Eigen::Index>();
  m.train_hash = meta.at("train_set_hash").get<std::string>();
  const std::string bytes = read_file(dir / "model.bin");
  switch (m.kind) {
    case DetectorKind::LR: m.state = detail::load_logistic(bytes); break;
    case DetectorKind::RF: m.state = detail::load_forest(bytes); break;
    case DetectorKind::XGB: m.state = detail::load_boosted(bytes); break;
    case DetectorKind::MLP:
    case DetectorKind::DNN: m.state = detail::load_feedforward(bytes); break;
    case DetectorKind::LSTM: m.state = detail::load_lstm(bytes); break;
  }
  if (m.hash() != meta.at("model_hash").get<std::string>()) fail("model hash mismatch in " + dir.string());
  return m;
}

std::string training_set_hash(const Features& x, const Labels& y) {
  Fnv1a h;
  if (x.is_sequence()) {
    for (const auto& s : x.sequences) {
      h.update(s.matrix.data(), static_cast<std::size_t>(s.matrix.size()) * sizeof(double));
      h.update(s.mask.data(), s.mask.size());
    }
  } else {
    h.update(x.dense.data(), static_cast<std::size_t>(x.dense.size()) * sizeof(double));
  }
  h.update(y.data(), y.size() * sizeof(int));
  return h.hex();
}

DetectorModel train_detector(DetectorKind kind, const Features& x, const Labels& y, const DetectorHyperparams& hp,
                             std::uint64_t seed, std::optional<EmbeddingKind> embedding) {
  if (x.size() != y.size()) fail("train_detector: features and labels differ in length");
  if (y.size() < 2) fail("train_detector: need at least two samples");
  std::size_t positives = 0;
  for (int l : y) {
    if (l != 0 && l != 1) fail("train_detector: labels must be 0 or 1");
    positives += static_cast<std::size_t>(l);
  }
  if (positives == 0 || positives == y.size()) fail("train_detector: training set has a single class");
  if (consumes_sequences(kind) != x.is_sequence()) {
    fail(std::string("train_detector: ") + std::string(detector_name(kind)) +
         (consumes_sequences(kind) ? " needs sequence features" : " needs document vectors"));
  }
  if (x.is_sequence()) {
    for (const auto& s : x.sequences) {
      if (!s.matrix.allFinite()) fail("train_detector: NaN or infinite feature");
    }
  } else if (!x.dense.allFinite()) {
    fail("train_detector: NaN or infinite feature");
  }

  DetectorModel m;
  m.kind = kind;
  m.embedding = embedding;
  m.hyperparams = hp;
  m.seed = seed;
  m.input_dim = x.dim();
  m.train_hash = training_set_hash(x, y);
  switch (kind) {
    case DetectorKind::LR: m.state = detail::fit_logistic(x.dense, y, hp); break;
    case DetectorKind::RF: m.state = detail::fit_forest(x.dense, y, hp, seed); break;
    case DetectorKind::XGB: m.state = detail::fit_boosted(x.dense, y, hp); break;
    case DetectorKind::MLP: m.state = detail::fit_feedforward(x.dense, y, hp.mlp_hidden, 0.0, hp, seed); break;
    case DetectorKind::DNN:
      m.state = detail::fit_feedforward(x.dense, y, hp.dnn_hidden, hp.dnn_dropout, hp, seed);
      break;
    case DetectorKind::LSTM: m.state = detail::fit_lstm(x.sequences, y, hp, seed); break;
  }
  return m;
}

int threshold_label(double score) { return score >= 0.5 ? 1 : 0; }

Prediction predict(const DetectorModel& model, const Features& x) {
  if (!model.state) fail("predict: model is not fitted");
  if (consumes_sequences(model.kind) != x.is_sequence()) fail("predict: feature kind does not match the model");
  if (x.size() > 0 && x.dim() != model.input_dim) {
    fail("predict: feature dim " + std::to_string(x.dim()) + " but model expects " +
         std::to_string(model.input_dim));
  }
  Prediction p;
  p.scores = model.state->scores(x);
  p.labels.reserve(p.scores.size());
  for (double s : p.scores) p.labels.push_back(threshold_label(s));
  return p;
}

EvalResult evaluate_predictions(std::span<const int> predicted, std::span<const int> truth) {
  if (truth.empty()) fail("evaluate: empty test set");
  if (predicted.size() != truth.size()) fail("evaluate: prediction/label length mismatch");
  EvalResult r;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if ((truth[i] != 0 && truth[i] != 1) || (predicted[i] != 0 && predicted[i] != 1)) {
      fail("evaluate: labels must be 0 (human) or 1 (machine)");
    }
    ++r.confusion[static_cast<std::size_t>(truth[i])][static_cast<std::size_t>(predicted[i])];
  }
  r.n_test = truth.size();
  r.accuracy = static_cast<double>(r.confusion[0][0] + r.confusion[1][1]) / static_cast<double>(r.n_test);
  return r;
}

EvalResult evaluate(const DetectorModel& model, const Features& x, const Labels& y) {
  if (y.empty()) fail("evaluate: empty test set");
  return evaluate_predictions(predict(model, x).labels, y);
}

json EvalResult::to_json() const {
  return {{"accuracy", accuracy},
          {"confusion", {{confusion[0][0], confusion[0][1]}, {confusion[1][0], confusion[1][1]}}},
          {"n_test", n_test}};
}

EvalResult EvalResult::from_json(const json& j) {
  EvalResult r;
  r.accuracy = j.at("accuracy").get<double>();
  for (std::size_t a = 0; a < 2; ++a) {
    for (std::size_t b = 0; b < 2; ++b) r.confusion[a][b] = j.at("confusion").at(a).at(b).get<std::size_t>();
  }
  r.n_test = j.at("n_test").get<std::size_t>();
  return r;
}

}  // namespace textshift
