#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "textshift/nn.hpp"
#include "textshift/tokenizer.hpp"
#include "textshift/transformer.hpp"

namespace textshift {

struct EncoderConfig {
  int dim = 64;
  int layers = 2;
  int heads = 4;
  int ff_dim = 256;
  int max_positions = 512;

  nlohmann::json to_json() const;
  static EncoderConfig from_json(const nlohmann::json& j);
};

/// Bidirectional transformer encoder (post-norm, GELU, learned absolute
/// positions). Inputs are framed as <s> words </s>. Immutable after loading;
/// encode() builds a private graph per call and is safe to call concurrently.
class ContextualEncoder {
 public:
  ContextualEncoder(Vocabulary vocab, EncoderConfig cfg, std::uint64_t seed);

  /// Reads config.json, vocab.json and weights.bin from `dir`. Throws
  /// ErrorKind::Unavailable with provisioning instructions when absent.
  static std::shared_ptr<const ContextualEncoder> load(const std::filesystem::path& dir);
  void save(const std::filesystem::path& dir) const;

  const Vocabulary& vocab() const noexcept { return vocab_; }
  const EncoderConfig& config() const noexcept { return cfg_; }
  int dim() const noexcept { return cfg_.dim; }

  /// Token ids for the framed sequence, at most max_len long.
  std::vector<int> frame(std::string_view text, std::size_t max_len) const;

  /// Final hidden states, one row per framed token (no padding rows).
  Eigen::MatrixXd encode(std::span<const int> ids) const;

  std::string hash() const;

 private:
  struct Layer {
    nn::Attention attn;
    nn::LayerNorm attn_norm;
    nn::FeedForward ff;
    nn::LayerNorm ff_norm;
  };

  Vocabulary vocab_;
  EncoderConfig cfg_;
  // mutable: the graph API takes Parameter&; encode() never writes values.
  mutable nn::ParamStore store_;
  nn::Parameter* tokens_ = nullptr;
  nn::Parameter* positions_ = nullptr;
  nn::LayerNorm embed_norm_;
  std::vector<Layer> layers_;
};

}  // namespace textshift
