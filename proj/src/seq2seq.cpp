#include "textshift/seq2seq.hpp"

#include <cmath>

#include "textshift/common.hpp"
#include "textshift/rng.hpp"
#include "textshift/text.hpp"

namespace textshift {

namespace fs = std::filesystem;
using ag::Var;
using nlohmann::json;

std::string_view backbone_name(Backbone b) { return b == Backbone::T5Small ? "T5SMALL" : "BART"; }

std::optional<Backbone> parse_backbone(std::string_view name) {
  const std::string n = text::to_lower_ascii(name);
  if (n == "t5small" || n == "t5-small" || n == "t5") return Backbone::T5Small;
  if (n == "bart") return Backbone::Bart;
  return std::nullopt;
}

json BackboneConfig::to_json() const {
  return {{"kind", backbone_name(kind)},
          {"dim", dim},
          {"heads", heads},
          {"ff_dim", ff_dim},
          {"encoder_layers", encoder_layers},
          {"decoder_layers", decoder_layers},
          {"max_positions", max_positions},
          {"relative_buckets", relative_buckets},
          {"relative_max_distance", relative_max_distance}};
}

BackboneConfig BackboneConfig::from_json(const json& j) {
  BackboneConfig c;
  const auto kind = parse_backbone(j.at("kind").get<std::string>());
  if (!kind) throw Error(ErrorKind::Config, "unknown backbone " + j.at("kind").get<std::string>());
  c.kind = *kind;
  c.dim = j.at("dim").get<int>();
  c.heads = j.at("heads").get<int>();
  c.ff_dim = j.at("ff_dim").get<int>();
  c.encoder_layers = j.at("encoder_layers").get<int>();
  c.decoder_layers = j.at("decoder_layers").get<int>();
  c.max_positions = j.at("max_positions").get<int>();
  c.relative_buckets = j.at("relative_buckets").get<int>();
  c.relative_max_distance = j.at("relative_max_distance").get<int>();
  return c;
}

Seq2SeqModel::Seq2SeqModel(Vocabulary vocab, BackboneConfig cfg, std::uint64_t seed)
    : vocab_(std::move(vocab)), cfg_(cfg) {
  if (cfg_.dim <= 0 || cfg_.heads <= 0 || cfg_.dim % cfg_.heads != 0) fail("backbone: dim must divide into heads");
  if (cfg_.encoder_layers <= 0 || cfg_.decoder_layers <= 0) fail("backbone: need at least one layer each side");
  Rng rng(seed);
  const bool t5 = cfg_.kind == Backbone::T5Small;
  const bool bias = !t5;
  const auto act = t5 ? nn::Activation::Relu : nn::Activation::Gelu;
  auto norm = [&](const std::string& name) { return nn::LayerNorm::create(store_, name, cfg_.dim, t5); };

  tokens_ = &store_.add("shared.tokens", nn::normal(vocab_.size(), cfg_.dim, t5 ? 1.0 : 0.2, rng));
  if (t5) {
    encoder_rel_ = &store_.add("encoder.relative_bias", nn::normal(cfg_.relative_buckets, cfg_.heads, 0.1, rng));
    decoder_rel_ = &store_.add("decoder.relative_bias", nn::normal(cfg_.relative_buckets, cfg_.heads, 0.1, rng));
  } else {
    positions_ = &store_.add("shared.positions", nn::normal(cfg_.max_positions, cfg_.dim, 0.2, rng));
    embed_norm_ = norm("shared.embed_norm");
    logits_bias_ = &store_.add("shared.logits_bias", nn::Mat::Zero(1, vocab_.size()));
  }
  for (int l = 0; l < cfg_.encoder_layers; ++l) {
    const std::string p = "encoder.layer" + std::to_string(l);
    encoder_.push_back({nn::Attention::create(store_, p + ".attn", cfg_.dim, cfg_.heads, rng, bias),
                        norm(p + ".attn_norm"),
                        nn::FeedForward::create(store_, p + ".ff", cfg_.dim, cfg_.ff_dim, act, rng, bias),
                        norm(p + ".ff_norm")});
  }
  for (int l = 0; l < cfg_.decoder_layers; ++l) {
    const std::string p = "decoder.layer" + std::to_string(l);
    decoder_.push_back({nn::Attention::create(store_, p + ".self", cfg_.dim, cfg_.heads, rng, bias),
                        norm(p + ".self_norm"),
                        nn::Attention::create(store_, p + ".cross", cfg_.dim, cfg_.heads, rng, bias),
                        norm(p + ".cross_norm"),
                        nn::FeedForward::create(store_, p + ".ff", cfg_.dim, cfg_.ff_dim, act, rng, bias),
                        norm(p + ".ff_norm")});
  }
  if (t5) {
    encoder_final_ = norm("encoder.final_norm");
    decoder_final_ = norm("decoder.final_norm");
  }
}

Var Seq2SeqModel::embed(ag::Graph& g, std::span<const int> ids, Eigen::Index offset) const {
  Var x = ag::gather_rows(g.param(*tokens_), ids);
  if (pre_norm()) return x;
  const auto n = static_cast<Eigen::Index>(ids.size());
  if (offset + n > cfg_.max_positions) {
    fail("sequence of " + std::to_string(offset + n) + " tokens exceeds positional limit " +
         std::to_string(cfg_.max_positions));
  }
  x = ag::add(x, ag::slice_rows(g.param(*positions_), offset, n));
  return embed_norm_(g, x);
}

std::vector<Var> Seq2SeqModel::relative_bias(ag::Graph& g, ag::Parameter* table, Eigen::Index q_len,
                                             Eigen::Index k_len, Eigen::Index q_offset, bool bidirectional) const {
  const Eigen::MatrixXi buckets = nn::relative_position_buckets(q_len, k_len, q_offset, bidirectional,
                                                                cfg_.relative_buckets, cfg_.relative_max_distance);
  Var t = g.param(*table);
  std::vector<Var> out;
  for (int h = 0; h < cfg_.heads; ++h) out.push_back(ag::gather_grid(t, buckets, h));
  return out;
}

Var Seq2SeqModel::encode(ag::Graph& g, std::span<const int> ids, std::span<const unsigned char> valid) const {
  if (ids.empty() || ids.size() != valid.size()) fail("encode: ids and mask must be non-empty and equal length");
  const auto n = static_cast<Eigen::Index>(ids.size());
  Var x = embed(g, ids, 0);
  const nn::Mat mask = nn::padding_mask(n, valid);
  std::vector<Var> bias;
  if (pre_norm()) bias = relative_bias(g, encoder_rel_, n, n, 0, true);
  for (const auto& layer : encoder_) {
    if (pre_norm()) {
      Var nx = layer.attn_norm(g, x);
      x = ag::add(x, layer.attn.attend(g, nx, layer.attn.project(g, nx), &mask, bias, true));
      x = ag::add(x, layer.ff(g, layer.ff_norm(g, x)));
    } else {
      x = layer.attn_norm(g, ag::add(x, layer.attn.attend(g, x, layer.attn.project(g, x), &mask, {}, true)));
      x = layer.ff_norm(g, ag::add(x, layer.ff(g, x)));
    }
  }
  return pre_norm() ? encoder_final_(g, x) : x;
}

Var Seq2SeqModel::decoder_layer(ag::Graph& g, const DecoderLayer& layer, Var x, nn::Attention::KeyValue& self_kv,
                                const nn::Attention::KeyValue& cross_kv, const nn::Mat* self_mask,
                                const nn::Mat& cross_mask, std::span<const Var> self_bias) const {
  if (pre_norm()) {
    Var nx = layer.self_norm(g, x);
    self_kv = nn::Attention::append(self_kv, layer.self_attn.project(g, nx));
    x = ag::add(x, layer.self_attn.attend(g, nx, self_kv, self_mask, self_bias, true));
    nx = layer.cross_norm(g, x);
    x = ag::add(x, layer.cross_attn.attend(g, nx, cross_kv, &cross_mask, {}, true));
    return ag::add(x, layer.ff(g, layer.ff_norm(g, x)));
  }
  self_kv = nn::Attention::append(self_kv, layer.self_attn.project(g, x));
  x = layer.self_norm(g, ag::add(x, layer.self_attn.attend(g, x, self_kv, self_mask, {}, true)));
  x = layer.cross_norm(g, ag::add(x, layer.cross_attn.attend(g, x, cross_kv, &cross_mask, {}, true)));
  return layer.ff_norm(g, ag::add(x, layer.ff(g, x)));
}

Var Seq2SeqModel::output_logits(ag::Graph& g, Var h) const {
  if (pre_norm()) {
    h = decoder_final_(g, h);
    return ag::matmul_nt(ag::scale(h, 1.0 / std::sqrt(static_cast<double>(cfg_.dim))), g.param(*tokens_));
  }
  return ag::add_row(ag::matmul_nt(h, g.param(*tokens_)), g.param(*logits_bias_));
}

Var Seq2SeqModel::decode_logits(ag::Graph& g, Var memory, std::span<const unsigned char> src_valid,
                                std::span<const int> decoder_input) const {
  const auto n = static_cast<Eigen::Index>(decoder_input.size());
  if (n == 0) fail("decode_logits: empty decoder input");
  Var x = embed(g, decoder_input, 0);
  const nn::Mat causal = nn::causal_mask(n);
  const nn::Mat cross = nn::padding_mask(n, src_valid);
  std::vector<Var> bias;
  if (pre_norm()) bias = relative_bias(g, decoder_rel_, n, n, 0, false);
  for (const auto& layer : decoder_) {
    nn::Attention::KeyValue self_kv{};
    x = decoder_layer(g, layer, x, self_kv, layer.cross_attn.project(g, memory), &causal, cross, bias);
  }
  return output_logits(g, x);
}

Seq2SeqModel::DecoderState Seq2SeqModel::start(ag::Graph& g, Var memory,
                                               std::span<const unsigned char> src_valid) const {
  DecoderState s;
  s.self.resize(decoder_.size());
  for (const auto& layer : decoder_) s.cross.push_back(layer.cross_attn.project(g, memory));
  s.cross_mask = nn::padding_mask(1, src_valid);
  return s;
}

Eigen::RowVectorXd Seq2SeqModel::step(ag::Graph& g, DecoderState& state, int token) const {
  const int ids[] = {token};
  Var x = embed(g, ids, state.position);
  std::vector<Var> bias;
  if (pre_norm()) bias = relative_bias(g, decoder_rel_, 1, state.position + 1, state.position, false);
  for (std::size_t l = 0; l < decoder_.size(); ++l) {
    x = decoder_layer(g, decoder_[l], x, state.self[l], state.cross[l], nullptr, state.cross_mask, bias);
  }
  ++state.position;
  return output_logits(g, x)->value.row(0);
}

std::string Seq2SeqModel::hash() const {
  return Fnv1a().update(store_.hash()).update(vocab_.hash()).update(cfg_.to_json().dump()).hex();
}

void Seq2SeqModel::save(const fs::path& dir) const {
  fs::create_directories(dir);
  write_file_atomic(dir / "backbone.json", json{{"kind", "seq2seq"}, {"config", cfg_.to_json()}}.dump(2));
  write_file_atomic(dir / "vocab.json", vocab_.to_json().dump());
  write_file_atomic(dir / "weights.bin", store_.serialize());
}

std::unique_ptr<Seq2SeqModel> Seq2SeqModel::load(const fs::path& dir) {
  for (const char* f : {"backbone.json", "vocab.json", "weights.bin"}) {
    if (!fs::exists(dir / f)) {
      throw Error(ErrorKind::Unavailable,
                  "backbone weights unavailable: " + (dir / f).string() +
                      " not found. Provision them offline, e.g. `textshift provision backbone --backbone t5small "
                      "--corpus <corpus.jsonl> --out " +
                      dir.string() + "`.");
    }
  }
  const json meta = json::parse(read_file(dir / "backbone.json"));
  auto m = std::make_unique<Seq2SeqModel>(Vocabulary::from_json(json::parse(read_file(dir / "vocab.json"))),
                                          BackboneConfig::from_json(meta.at("config")), 0);
  m->store_.deserialize(read_file(dir / "weights.bin"));
  return m;
}

}  // namespace textshift
