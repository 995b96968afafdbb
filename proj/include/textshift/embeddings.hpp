#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <Eigen/Dense>

#include "textshift/contextual_encoder.hpp"
#include "textshift/corpus.hpp"

namespace textshift {

enum class EmbeddingKind { Word2Vec, Glove, Bert };

inline constexpr EmbeddingKind kAllEmbeddings[] = {EmbeddingKind::Word2Vec, EmbeddingKind::Glove,
                                                   EmbeddingKind::Bert};

std::string_view embedding_name(EmbeddingKind kind);
std::optional<EmbeddingKind> parse_embedding(std::string_view name);

enum class Pooling { Mean, Cls };

struct DocumentVector {
  Eigen::VectorXd values;
  Pooling pooling = Pooling::Mean;
  bool oov = false;  // no token of the text was in the vocabulary
};

struct SequenceEmbedding {
  Eigen::MatrixXd matrix;            // L x dim, rows past the mask are zero
  std::vector<unsigned char> mask;   // prefix of ones, then zeros
  std::size_t length() const;
};

/// Either a static token -> vector table (Word2Vec, GloVe) or a handle on a
/// contextual encoder (BERT-style). Immutable once built.
class EmbeddingModel {
 public:
  static EmbeddingModel from_vectors(EmbeddingKind kind, std::vector<std::string> tokens, Eigen::MatrixXd vectors);
  static EmbeddingModel from_encoder(std::shared_ptr<const ContextualEncoder> encoder);

  EmbeddingKind kind() const noexcept { return kind_; }
  bool is_static() const noexcept { return kind_ != EmbeddingKind::Bert; }
  int dim() const noexcept { return dim_; }

  // Static kinds only.
  std::size_t vocab_size() const noexcept { return tokens_.size(); }
  const std::vector<std::string>& tokens() const noexcept { return tokens_; }
  const Eigen::MatrixXd& vectors() const noexcept { return vectors_; }
  std::optional<Eigen::Index> index_of(std::string_view token) const;
  /// Row view of a token's vector; empty optional when out of vocabulary.
  std::optional<Eigen::RowVectorXd> lookup(std::string_view token) const;

  const ContextualEncoder* encoder() const noexcept { return encoder_.get(); }

  std::string hash() const;

 private:
  EmbeddingKind kind_ = EmbeddingKind::Word2Vec;
  int dim_ = 0;
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, Eigen::Index> index_;
  Eigen::MatrixXd vectors_;
  std::shared_ptr<const ContextualEncoder> encoder_;
};

struct Word2VecParams {
  int dim = 300;
  int window = 5;
  int epochs = 5;
  std::size_t min_count = 2;
  int negative = 5;
  double alpha = 0.025;
  double min_alpha = 0.0001;
  std::uint64_t seed = 1;
};

/// CBOW with negative sampling: the mean of the context window predicts the
/// centre token. Single-threaded and bit-reproducible for a fixed seed.
EmbeddingModel train_word2vec(const Corpus& corpus, const Word2VecParams& params);
EmbeddingModel train_word2vec(std::span<const std::string> texts, const Word2VecParams& params);

struct GloveLoadReport {
  std::size_t accepted = 0;
  std::size_t malformed = 0;
  std::size_t dim_mismatch = 0;
};

/// Parses "token v1 ... vdim" lines. Malformed lines are skipped and counted.
EmbeddingModel load_glove(const std::filesystem::path& path, int dim, GloveLoadReport* report = nullptr);
EmbeddingModel parse_glove(std::string_view content, int dim, GloveLoadReport* report = nullptr);

/// GloVe-format text with round-trip precision.
std::string to_glove_text(const EmbeddingModel& model);

/// Writes vectors.txt (GloVe text), vocab.json and meta.json (kind, dim, size).
void save_static_model(const EmbeddingModel& model, const std::filesystem::path& dir);
EmbeddingModel load_static_model(const std::filesystem::path& dir);

/// Tokens used by the static kinds: lowercased words and punctuation.
std::vector<std::string> embedding_tokens(std::string_view text);

DocumentVector embed_document(const EmbeddingModel& model, std::string_view text, Pooling pooling = Pooling::Mean,
                              std::size_t max_len = 512);
SequenceEmbedding embed_sequence(const EmbeddingModel& model, std::string_view text, std::size_t max_len);

/// Mean over each text's final hidden states; order-preserving.
std::vector<DocumentVector> bert_embed(const ContextualEncoder& encoder, std::span<const std::string> texts,
                                       std::size_t max_len, Pooling pooling = Pooling::Mean);

double cosine(const Eigen::RowVectorXd& a, const Eigen::RowVectorXd& b);

}  // namespace textshift
