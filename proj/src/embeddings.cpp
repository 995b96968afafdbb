#include "textshift/embeddings.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <map>

#include <spdlog/spdlog.h>

#include "textshift/common.hpp"
#include "textshift/rng.hpp"
#include "textshift/text.hpp"

namespace textshift {

namespace fs = std::filesystem;
using nlohmann::json;

std::string_view embedding_name(EmbeddingKind kind) {
  switch (kind) {
    case EmbeddingKind::Word2Vec: return "Word2Vec";
    case EmbeddingKind::Glove: return "GloVe";
    case EmbeddingKind::Bert: return "BERT";
  }
  return "?";
}

std::optional<EmbeddingKind> parse_embedding(std::string_view name) {
  const std::string n = text::to_lower_ascii(name);
  if (n == "word2vec" || n == "w2v") return EmbeddingKind::Word2Vec;
  if (n == "glove") return EmbeddingKind::Glove;
  if (n == "bert") return EmbeddingKind::Bert;
  return std::nullopt;
}

std::size_t SequenceEmbedding::length() const {
  return static_cast<std::size_t>(std::count(mask.begin(), mask.end(), 1));
}

// ---------------------------------------------------------------------------
// EmbeddingModel

EmbeddingModel EmbeddingModel::from_vectors(EmbeddingKind kind, std::vector<std::string> tokens,
                                            Eigen::MatrixXd vectors) {
  if (kind == EmbeddingKind::Bert) fail("from_vectors: BERT is a contextual kind");
  if (vectors.cols() <= 0) fail("embedding dim must be positive");
  if (static_cast<Eigen::Index>(tokens.size()) != vectors.rows()) fail("vocab size does not match vector rows");
  EmbeddingModel m;
  m.kind_ = kind;
  m.dim_ = static_cast<int>(vectors.cols());
  m.tokens_ = std::move(tokens);
  m.vectors_ = std::move(vectors);
  for (std::size_t i = 0; i < m.tokens_.size(); ++i) {
    if (!m.index_.emplace(m.tokens_[i], static_cast<Eigen::Index>(i)).second) {
      fail("duplicate embedding token '" + m.tokens_[i] + "'");
    }
  }
  return m;
}

EmbeddingModel EmbeddingModel::from_encoder(std::shared_ptr<const ContextualEncoder> encoder) {
  if (!encoder) throw Error(ErrorKind::Unavailable, "contextual encoder unavailable");
  EmbeddingModel m;
  m.kind_ = EmbeddingKind::Bert;
  m.dim_ = encoder->dim();
  m.encoder_ = std::move(encoder);
  return m;
}

std::optional<Eigen::Index> EmbeddingModel::index_of(std::string_view token) const {
  auto it = index_.find(std::string(token));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

std::optional<Eigen::RowVectorXd> EmbeddingModel::lookup(std::string_view token) const {
  auto i = index_of(token);
  if (!i) return std::nullopt;
  return Eigen::RowVectorXd(vectors_.row(*i));
}

std::string EmbeddingModel::hash() const {
  if (!is_static()) return encoder_->hash();
  Fnv1a h;
  h.update(embedding_name(kind_));
  for (const auto& t : tokens_) h.update(t).update("\n");
  h.update(vectors_.data(), static_cast<std::size_t>(vectors_.size()) * sizeof(double));
  return h.hex();
}

std::vector<std::string> embedding_tokens(std::string_view text) { return text::word_tokens(text, true); }

// ---------------------------------------------------------------------------
// Word2Vec (CBOW, negative sampling)

EmbeddingModel train_word2vec(const Corpus& corpus, const Word2VecParams& params) {
  std::vector<std::string> texts;
  texts.reserve(corpus.size());
  for (const auto& s : corpus.samples()) texts.push_back(s.text);
  return train_word2vec(texts, params);
}

EmbeddingModel train_word2vec(std::span<const std::string> texts, const Word2VecParams& params) {
  if (texts.empty()) fail("train_word2vec: empty corpus");
  if (params.dim < 1 || params.window < 1 || params.epochs < 1) fail("train_word2vec: dim, window, epochs must be >= 1");

  std::vector<std::vector<std::string>> tokenized;
  tokenized.reserve(texts.size());
  std::map<std::string, std::size_t> counts;
  for (const auto& t : texts) {
    tokenized.push_back(embedding_tokens(t));
    for (const auto& w : tokenized.back()) ++counts[w];
  }
  std::vector<std::pair<std::string, std::size_t>> ranked;
  for (auto& [w, c] : counts) {
    if (c >= params.min_count) ranked.emplace_back(w, c);
  }
  if (ranked.empty()) fail("train_word2vec: vocabulary empty after min_count filtering");
  std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) { return a.second > b.second; });

  std::unordered_map<std::string, int> index;
  std::vector<std::string> vocab;
  for (const auto& [w, c] : ranked) {
    index.emplace(w, static_cast<int>(vocab.size()));
    vocab.push_back(w);
  }
  const auto V = static_cast<Eigen::Index>(vocab.size());
  const Eigen::Index D = params.dim;

  std::vector<std::vector<int>> sentences;
  std::size_t total_words = 0;
  for (const auto& toks : tokenized) {
    std::vector<int> ids;
    for (const auto& w : toks) {
      auto it = index.find(w);
      if (it != index.end()) ids.push_back(it->second);
    }
    total_words += ids.size();
    if (ids.size() > 1) sentences.push_back(std::move(ids));
  }

  // Unigram^0.75 cumulative table for negative draws.
  std::vector<double> cumulative(vocab.size());
  double acc = 0.0;
  for (std::size_t i = 0; i < ranked.size(); ++i) {
    acc += std::pow(static_cast<double>(ranked[i].second), 0.75);
    cumulative[i] = acc;
  }

  Rng rng(params.seed);
  // Row-major so one token's vector is contiguous.
  using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  RowMat syn0(V, D);
  for (Eigen::Index i = 0; i < syn0.size(); ++i) syn0.data()[i] = (rng.uniform() - 0.5) / static_cast<double>(D);
  RowMat syn1 = RowMat::Zero(V, D);

  const double total = static_cast<double>(total_words) * params.epochs;
  double processed = 0.0;
  Eigen::RowVectorXd h(D), grad(D);
  std::vector<int> context;
  for (int epoch = 0; epoch < params.epochs; ++epoch) {
    for (const auto& sent : sentences) {
      const double progress = processed / std::max(1.0, total);
      const double alpha = std::max(params.min_alpha, params.alpha - (params.alpha - params.min_alpha) * progress);
      const auto n = static_cast<int>(sent.size());
      for (int i = 0; i < n; ++i) {
        const int shrink = static_cast<int>(rng.index(static_cast<std::uint64_t>(params.window)));
        const int span = params.window - shrink;
        context.clear();
        for (int j = std::max(0, i - span); j <= std::min(n - 1, i + span); ++j) {
          if (j != i) context.push_back(sent[static_cast<std::size_t>(j)]);
        }
        if (context.empty()) continue;
        h.setZero();
        for (int c : context) h += syn0.row(c);
        h /= static_cast<double>(context.size());
        grad.setZero();
        const int centre = sent[static_cast<std::size_t>(i)];
        for (int d = 0; d <= params.negative; ++d) {
          int target = centre;
          double label = 1.0;
          if (d > 0) {
            const double u = rng.uniform() * acc;
            target = static_cast<int>(std::upper_bound(cumulative.begin(), cumulative.end(), u) - cumulative.begin());
            target = std::min<int>(target, static_cast<int>(V) - 1);
            if (target == centre) continue;
            label = 0.0;
          }
          const double f = h.dot(syn1.row(target));
          const double g = (label - 1.0 / (1.0 + std::exp(-f))) * alpha;
          grad += g * syn1.row(target);
          syn1.row(target) += g * h;
        }
        grad /= static_cast<double>(context.size());
        for (int c : context) syn0.row(c) += grad;
      }
      processed += static_cast<double>(sent.size());
    }
  }
  return EmbeddingModel::from_vectors(EmbeddingKind::Word2Vec, std::move(vocab), Eigen::MatrixXd(syn0));
}

// ---------------------------------------------------------------------------
// GloVe text format

EmbeddingModel parse_glove(std::string_view content, int dim, GloveLoadReport* report) {
  if (dim <= 0) fail("load_glove: dim must be positive");
  GloveLoadReport local;
  GloveLoadReport& rep = report ? *report : local;
  rep = {};
  std::vector<std::string> tokens;
  std::vector<double> values;
  std::unordered_map<std::string, bool> seen;
  std::size_t lines = 0;
  std::size_t pos = 0;
  while (pos < content.size()) {
    std::size_t end = content.find('\n', pos);
    if (end == std::string_view::npos) end = content.size();
    std::string_view line = content.substr(pos, end - pos);
    pos = end + 1;
    auto fields = text::whitespace_tokens(line);
    if (fields.empty()) continue;
    ++lines;
    if (static_cast<int>(fields.size()) - 1 != dim) {
      if (fields.size() > 1) {
        ++rep.dim_mismatch;
      } else {
        ++rep.malformed;
      }
      continue;
    }
    std::vector<double> row;
    row.reserve(static_cast<std::size_t>(dim));
    bool ok = true;
    for (std::size_t k = 1; k < fields.size() && ok; ++k) {
      double v = 0.0;
      auto f = fields[k];
      auto [ptr, ec] = std::from_chars(f.data(), f.data() + f.size(), v);
      ok = ec == std::errc() && ptr == f.data() + f.size() && std::isfinite(v);
      row.push_back(v);
    }
    std::string tok(fields[0]);
    if (!ok || seen.count(tok)) {
      ++rep.malformed;
      continue;
    }
    seen.emplace(tok, true);
    tokens.push_back(std::move(tok));
    values.insert(values.end(), row.begin(), row.end());
  }
  rep.accepted = tokens.size();
  if (rep.malformed + rep.dim_mismatch > 0) {
    spdlog::warn("load_glove: skipped {} malformed and {} wrong-dimension lines", rep.malformed, rep.dim_mismatch);
  }
  if (tokens.empty()) fail("load_glove: no valid vector lines");
  if (rep.dim_mismatch > 0 && rep.dim_mismatch > tolerated_failures(lines, 0.01)) {
    fail("load_glove: " + std::to_string(rep.dim_mismatch) + " of " + std::to_string(lines) +
         " lines do not have dimension " + std::to_string(dim));
  }
  Eigen::MatrixXd m(static_cast<Eigen::Index>(tokens.size()), dim);
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < dim; ++c) m(r, c) = values[static_cast<std::size_t>(r * dim + c)];
  }
  return EmbeddingModel::from_vectors(EmbeddingKind::Glove, std::move(tokens), std::move(m));
}

EmbeddingModel load_glove(const fs::path& path, int dim, GloveLoadReport* report) {
  if (!fs::exists(path)) throw Error(ErrorKind::MissingArtifact, "GloVe vectors not found: " + path.string());
  return parse_glove(read_file(path), dim, report);
}

std::string to_glove_text(const EmbeddingModel& model) {
  if (!model.is_static()) fail("to_glove_text: contextual models have no vector table");
  std::string out;
  char buf[32];
  for (std::size_t i = 0; i < model.tokens().size(); ++i) {
    out += model.tokens()[i];
    for (Eigen::Index c = 0; c < model.dim(); ++c) {
      auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), model.vectors()(static_cast<Eigen::Index>(i), c));
      out.push_back(' ');
      out.append(buf, ptr);
    }
    out.push_back('\n');
  }
  return out;
}

void save_static_model(const EmbeddingModel& model, const fs::path& dir) {
  write_file_atomic(dir / "vectors.txt", to_glove_text(model));
  write_file_atomic(dir / "vocab.json", json(model.tokens()).dump());
  write_file_atomic(dir / "meta.json", json{{"kind", embedding_name(model.kind())},
                                            {"dim", model.dim()},
                                            {"vocab_size", model.vocab_size()},
                                            {"hash", model.hash()}}
                                           .dump(2));
}

EmbeddingModel load_static_model(const fs::path& dir) {
  if (!fs::exists(dir / "meta.json")) throw Error(ErrorKind::MissingArtifact, "no embedding model in " + dir.string());
  const json meta = json::parse(read_file(dir / "meta.json"));
  auto kind = parse_embedding(meta.at("kind").get<std::string>());
  if (!kind || *kind == EmbeddingKind::Bert) fail("meta.json does not describe a static embedding");
  EmbeddingModel glove = load_glove(dir / "vectors.txt", meta.at("dim").get<int>());
  std::vector<std::string> tokens = glove.tokens();
  return EmbeddingModel::from_vectors(*kind, std::move(tokens), glove.vectors());
}

// ---------------------------------------------------------------------------
// Pooling

DocumentVector embed_document(const EmbeddingModel& model, std::string_view text, Pooling pooling,
                              std::size_t max_len) {
  DocumentVector out;
  out.pooling = pooling;
  if (!model.is_static()) {
    const std::vector<std::string> one{std::string(text)};
    return bert_embed(*model.encoder(), one, max_len, pooling).front();
  }
  if (pooling != Pooling::Mean) fail("embed_document: CLS pooling needs a contextual model");
  out.values = Eigen::VectorXd::Zero(model.dim());
  std::size_t hits = 0;
  for (const auto& tok : embedding_tokens(text)) {
    if (auto i = model.index_of(tok)) {
      out.values += model.vectors().row(*i).transpose();
      ++hits;
    }
  }
  if (hits == 0) {
    out.oov = true;
  } else {
    out.values /= static_cast<double>(hits);
  }
  return out;
}

SequenceEmbedding embed_sequence(const EmbeddingModel& model, std::string_view text, std::size_t max_len) {
  if (max_len < 1) fail("embed_sequence: L must be >= 1");
  const auto L = static_cast<Eigen::Index>(max_len);
  SequenceEmbedding out;
  out.matrix = Eigen::MatrixXd::Zero(L, model.dim());
  out.mask.assign(max_len, 0);
  if (!model.is_static()) {
    const auto* enc = model.encoder();
    auto ids = enc->frame(text, std::min<std::size_t>(max_len, static_cast<std::size_t>(enc->config().max_positions)));
    Eigen::MatrixXd states = enc->encode(ids);
    out.matrix.topRows(states.rows()) = states;
    std::fill(out.mask.begin(), out.mask.begin() + states.rows(), 1);
    return out;
  }
  Eigen::Index row = 0;
  for (const auto& tok : embedding_tokens(text)) {
    if (row == L) break;
    if (auto i = model.index_of(tok)) {
      out.matrix.row(row) = model.vectors().row(*i);
      out.mask[static_cast<std::size_t>(row)] = 1;
      ++row;
    }
  }
  return out;
}

std::vector<DocumentVector> bert_embed(const ContextualEncoder& encoder, std::span<const std::string> texts,
                                       std::size_t max_len, Pooling pooling) {
  std::vector<DocumentVector> out;
  out.reserve(texts.size());
  for (const auto& t : texts) {
    auto ids = encoder.frame(t, max_len);
    Eigen::MatrixXd states = encoder.encode(ids);
    DocumentVector dv;
    dv.pooling = pooling;
    dv.oov = std::all_of(ids.begin() + 1, ids.end() - 1, [](int id) { return id == Vocabulary::kUnk; });
    if (pooling == Pooling::Cls) {
      dv.values = states.row(0).transpose();
    } else {
      dv.values = states.colwise().mean().transpose();
    }
    out.push_back(std::move(dv));
  }
  return out;
}

double cosine(const Eigen::RowVectorXd& a, const Eigen::RowVectorXd& b) {
  const double na = a.norm(), nb = b.norm();
  if (na == 0.0 || nb == 0.0) return 0.0;
  return a.dot(b) / (na * nb);
}

}  // namespace textshift
