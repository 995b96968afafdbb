#include "textshift/contextual_encoder.hpp"

#include "textshift/common.hpp"
#include "textshift/rng.hpp"

namespace textshift {

namespace fs = std::filesystem;
using nlohmann::json;

json EncoderConfig::to_json() const {
  return {{"dim", dim}, {"layers", layers}, {"heads", heads}, {"ff_dim", ff_dim}, {"max_positions", max_positions}};
}

EncoderConfig EncoderConfig::from_json(const json& j) {
  EncoderConfig c;
  c.dim = j.at("dim").get<int>();
  c.layers = j.at("layers").get<int>();
  c.heads = j.at("heads").get<int>();
  c.ff_dim = j.at("ff_dim").get<int>();
  c.max_positions = j.at("max_positions").get<int>();
  return c;
}

ContextualEncoder::ContextualEncoder(Vocabulary vocab, EncoderConfig cfg, std::uint64_t seed)
    : vocab_(std::move(vocab)), cfg_(cfg) {
  if (cfg_.dim <= 0 || cfg_.heads <= 0 || cfg_.dim % cfg_.heads != 0) fail("encoder: dim must divide into heads");
  Rng rng(seed);
  tokens_ = &store_.add("embed.tokens", nn::normal(vocab_.size(), cfg_.dim, 0.2, rng));
  positions_ = &store_.add("embed.positions", nn::normal(cfg_.max_positions, cfg_.dim, 0.2, rng));
  embed_norm_ = nn::LayerNorm::create(store_, "embed.norm", cfg_.dim);
  for (int l = 0; l < cfg_.layers; ++l) {
    const std::string p = "layer" + std::to_string(l);
    layers_.push_back({nn::Attention::create(store_, p + ".attn", cfg_.dim, cfg_.heads, rng, true),
                       nn::LayerNorm::create(store_, p + ".attn_norm", cfg_.dim),
                       nn::FeedForward::create(store_, p + ".ff", cfg_.dim, cfg_.ff_dim, nn::Activation::Gelu, rng,
                                               true),
                       nn::LayerNorm::create(store_, p + ".ff_norm", cfg_.dim)});
  }
}

std::vector<int> ContextualEncoder::frame(std::string_view text, std::size_t max_len) const {
  if (max_len < 2) fail("encoder: max_len must allow <s> and </s>");
  if (max_len > static_cast<std::size_t>(cfg_.max_positions)) {
    fail("encoder: sequence length " + std::to_string(max_len) + " exceeds positional limit " +
         std::to_string(cfg_.max_positions));
  }
  std::vector<int> ids{Vocabulary::kBos};
  for (int id : vocab_.to_ids(text)) {
    if (ids.size() + 1 >= max_len) break;
    ids.push_back(id);
  }
  ids.push_back(Vocabulary::kEos);
  return ids;
}

Eigen::MatrixXd ContextualEncoder::encode(std::span<const int> ids) const {
  ag::Graph g(false);
  const auto n = static_cast<Eigen::Index>(ids.size());
  if (n > cfg_.max_positions) fail("encoder: input longer than positional limit");
  ag::Var x = ag::gather_rows(g.param(*tokens_), ids);
  x = ag::add(x, ag::slice_rows(g.param(*positions_), 0, n));
  x = embed_norm_(g, x);
  for (const auto& layer : layers_) {
    auto kv = layer.attn.project(g, x);
    x = layer.attn_norm(g, ag::add(x, layer.attn.attend(g, x, kv, nullptr, {}, true)));
    x = layer.ff_norm(g, ag::add(x, layer.ff(g, x)));
  }
  return x->value;
}

std::string ContextualEncoder::hash() const {
  return Fnv1a().update(store_.hash()).update(vocab_.hash()).update(cfg_.to_json().dump()).hex();
}

void ContextualEncoder::save(const fs::path& dir) const {
  fs::create_directories(dir);
  write_file_atomic(dir / "config.json", json{{"kind", "contextual-encoder"}, {"config", cfg_.to_json()}}.dump(2));
  write_file_atomic(dir / "vocab.json", vocab_.to_json().dump());
  write_file_atomic(dir / "weights.bin", store_.serialize());
}

std::shared_ptr<const ContextualEncoder> ContextualEncoder::load(const fs::path& dir) {
  for (const char* f : {"config.json", "vocab.json", "weights.bin"}) {
    if (!fs::exists(dir / f)) {
      throw Error(ErrorKind::Unavailable,
                  "contextual encoder unavailable: " + (dir / f).string() +
                      " not found. Provision encoder weights offline, e.g. `textshift provision encoder --out " +
                      dir.string() + "`.");
    }
  }
  const json cfg = json::parse(read_file(dir / "config.json"));
  auto enc = std::make_shared<ContextualEncoder>(Vocabulary::from_json(json::parse(read_file(dir / "vocab.json"))),
                                                 EncoderConfig::from_json(cfg.at("config")), 0);
  enc->store_.deserialize(read_file(dir / "weights.bin"));
  return enc;
}

}  // namespace textshift
