#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "textshift/tokenizer.hpp"
#include "textshift/transformer.hpp"

namespace textshift {

enum class Backbone { T5Small, Bart };

std::string_view backbone_name(Backbone b);
std::optional<Backbone> parse_backbone(std::string_view name);

/// Architecture of a desk-scale encoder-decoder. T5SMALL: pre-RMSNorm, ReLU,
/// no biases, bucketed relative position biases. BART: learned absolute
/// positions, post-LayerNorm, GELU, biases. Both tie input and output
/// embeddings.
struct BackboneConfig {
  Backbone kind = Backbone::T5Small;
  int dim = 64;
  int heads = 4;
  int ff_dim = 256;
  int encoder_layers = 2;
  int decoder_layers = 2;
  int max_positions = 512;
  int relative_buckets = 32;
  int relative_max_distance = 128;

  nlohmann::json to_json() const;
  static BackboneConfig from_json(const nlohmann::json& j);
};

class Seq2SeqModel {
 public:
  Seq2SeqModel(Vocabulary vocab, BackboneConfig cfg, std::uint64_t seed);
  Seq2SeqModel(const Seq2SeqModel&) = delete;
  Seq2SeqModel& operator=(const Seq2SeqModel&) = delete;

  const Vocabulary& vocab() const noexcept { return vocab_; }
  const BackboneConfig& config() const noexcept { return cfg_; }
  nn::ParamStore& store() noexcept { return store_; }
  const nn::ParamStore& store() const noexcept { return store_; }

  /// Encoder states for one source sequence; `valid` marks non-padding ids.
  ag::Var encode(ag::Graph& g, std::span<const int> ids, std::span<const unsigned char> valid) const;

  /// Teacher-forced decoder logits (one row per decoder input position).
  ag::Var decode_logits(ag::Graph& g, ag::Var memory, std::span<const unsigned char> src_valid,
                        std::span<const int> decoder_input) const;

  /// Incremental decoding state holding per-layer key/value caches.
  struct DecoderState {
    std::vector<nn::Attention::KeyValue> self;
    std::vector<nn::Attention::KeyValue> cross;
    nn::Mat cross_mask;
    Eigen::Index position = 0;
  };
  DecoderState start(ag::Graph& g, ag::Var memory, std::span<const unsigned char> src_valid) const;
  /// Feeds one token and returns next-token logits. `state` is advanced.
  Eigen::RowVectorXd step(ag::Graph& g, DecoderState& state, int token) const;

  std::string hash() const;
  void save(const std::filesystem::path& dir) const;
  static std::unique_ptr<Seq2SeqModel> load(const std::filesystem::path& dir);

 private:
  struct EncoderLayer {
    nn::Attention attn;
    nn::LayerNorm attn_norm;
    nn::FeedForward ff;
    nn::LayerNorm ff_norm;
  };
  struct DecoderLayer {
    nn::Attention self_attn;
    nn::LayerNorm self_norm;
    nn::Attention cross_attn;
    nn::LayerNorm cross_norm;
    nn::FeedForward ff;
    nn::LayerNorm ff_norm;
  };

  bool pre_norm() const { return cfg_.kind == Backbone::T5Small; }
  ag::Var embed(ag::Graph& g, std::span<const int> ids, Eigen::Index offset) const;
  std::vector<ag::Var> relative_bias(ag::Graph& g, ag::Parameter* table, Eigen::Index q_len, Eigen::Index k_len,
                                     Eigen::Index q_offset, bool bidirectional) const;
  ag::Var decoder_layer(ag::Graph& g, const DecoderLayer& layer, ag::Var x, nn::Attention::KeyValue& self_kv,
                        const nn::Attention::KeyValue& cross_kv, const nn::Mat* self_mask, const nn::Mat& cross_mask,
                        std::span<const ag::Var> self_bias) const;
  ag::Var output_logits(ag::Graph& g, ag::Var h) const;

  Vocabulary vocab_;
  BackboneConfig cfg_;
  nn::ParamStore store_;
  ag::Parameter* tokens_ = nullptr;
  ag::Parameter* positions_ = nullptr;        // BART
  ag::Parameter* encoder_rel_ = nullptr;      // T5SMALL
  ag::Parameter* decoder_rel_ = nullptr;      // T5SMALL
  ag::Parameter* logits_bias_ = nullptr;      // BART
  nn::LayerNorm embed_norm_;                  // BART
  nn::LayerNorm encoder_final_;               // T5SMALL
  nn::LayerNorm decoder_final_;               // T5SMALL
  std::vector<EncoderLayer> encoder_;
  std::vector<DecoderLayer> decoder_;
};

}  // namespace textshift
