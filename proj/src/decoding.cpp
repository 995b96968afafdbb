#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <set>

#include <spdlog/spdlog.h>

#include "textshift/common.hpp"
#include "textshift/humanizer.hpp"
#include "textshift/rng.hpp"
#include "textshift/text.hpp"

namespace textshift {

using nlohmann::json;

std::string_view strategy_name(Strategy s) {
  switch (s) {
    case Strategy::Beam: return "BEAM";
    case Strategy::Sample: return "SAMPLE";
    case Strategy::Greedy: return "GREEDY";
  }
  return "?";
}

std::optional<Strategy> parse_strategy(std::string_view name) {
  const std::string n = text::to_lower_ascii(name);
  if (n == "beam") return Strategy::Beam;
  if (n == "sample") return Strategy::Sample;
  if (n == "greedy") return Strategy::Greedy;
  return std::nullopt;
}

void DecodingConfig::validate() const {
  if (strategy == Strategy::Beam && beam_width < 1) throw Error(ErrorKind::Config, "decoding: beam_width >= 1");
  if (strategy == Strategy::Sample) {
    if (top_k < 1) throw Error(ErrorKind::Config, "decoding: top_k >= 1");
    if (!(top_p > 0 && top_p <= 1)) throw Error(ErrorKind::Config, "decoding: top_p must be in (0,1]");
  }
  if (repetition_penalty < 1) throw Error(ErrorKind::Config, "decoding: repetition_penalty must be >= 1");
  if (max_gen_len < 1) throw Error(ErrorKind::Config, "decoding: max_gen_len must be positive");
}

json DecodingConfig::to_json() const {
  return {{"strategy", strategy_name(strategy)},
          {"beam_width", beam_width},
          {"top_k", top_k},
          {"top_p", top_p},
          {"repetition_penalty", repetition_penalty},
          {"max_gen_len", max_gen_len},
          {"length_penalty", length_penalty},
          {"seed", seed}};
}

DecodingConfig DecodingConfig::from_json(const json& j) {
  DecodingConfig d;
  if (j.contains("strategy")) {
    const auto s = parse_strategy(j.at("strategy").get<std::string>());
    if (!s) throw Error(ErrorKind::Config, "unknown decoding strategy " + j.at("strategy").get<std::string>());
    d.strategy = *s;
  }
  auto opt = [&](const char* key, auto& field) {
    if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
  };
  opt("beam_width", d.beam_width);
  opt("top_k", d.top_k);
  opt("top_p", d.top_p);
  opt("repetition_penalty", d.repetition_penalty);
  opt("max_gen_len", d.max_gen_len);
  opt("length_penalty", d.length_penalty);
  opt("seed", d.seed);
  return d;
}

void apply_repetition_penalty(Eigen::Ref<Eigen::RowVectorXd> scores, std::span<const int> generated,
                              double penalty) {
  if (penalty == 1.0) return;
  const std::set<int> ids(generated.begin(), generated.end());
  for (int id : ids) {
    if (id < 0 || id >= scores.size()) continue;
    double& s = scores(id);
    s = s > 0 ? s / penalty : s * penalty;
  }
}

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

// Penalised logits with the ids that may never be generated masked out.
Eigen::RowVectorXd next_scores(Eigen::RowVectorXd logits, std::span<const int> generated, double penalty) {
  apply_repetition_penalty(logits, generated, penalty);
  logits(Vocabulary::kPad) = kNegInf;
  logits(Vocabulary::kBos) = kNegInf;
  logits(Vocabulary::kUnk) = kNegInf;
  return logits;
}

// First index of the maximum.
int argmax(const Eigen::RowVectorXd& v) {
  Eigen::Index best = 0;
  for (Eigen::Index i = 1; i < v.size(); ++i) {
    if (v(i) > v(best)) best = i;
  }
  return static_cast<int>(best);
}

Eigen::RowVectorXd log_softmax(const Eigen::RowVectorXd& v) {
  const double m = v.maxCoeff();
  const double lse = m + std::log((v.array() - m).exp().sum());
  return (v.array() - lse).matrix();
}

struct Source {
  std::vector<int> ids;
  std::vector<unsigned char> valid;
};

Source encode_source(const Vocabulary& vocab, std::string_view input, int max_len) {
  Source s;
  s.ids = vocab.to_ids(input);
  if (s.ids.size() + 1 > static_cast<std::size_t>(max_len)) s.ids.resize(static_cast<std::size_t>(max_len) - 1);
  s.ids.push_back(Vocabulary::kEos);
  s.valid.assign(s.ids.size(), 1);
  return s;
}

std::vector<int> greedy(const Seq2SeqModel& model, Seq2SeqModel::DecoderState state, ag::Graph& g,
                        const DecodingConfig& d) {
  std::vector<int> out;
  Eigen::RowVectorXd logits = model.step(g, state, Vocabulary::kBos);
  while (static_cast<int>(out.size()) < d.max_gen_len) {
    const int tok = argmax(next_scores(logits, out, d.repetition_penalty));
    if (tok == Vocabulary::kEos) break;
    out.push_back(tok);
    if (static_cast<int>(out.size()) == d.max_gen_len) break;
    logits = model.step(g, state, tok);
  }
  return out;
}

std::vector<int> sample(const Seq2SeqModel& model, Seq2SeqModel::DecoderState state, ag::Graph& g,
                        const DecodingConfig& d, Rng& rng) {
  std::vector<int> out;
  Eigen::RowVectorXd logits = model.step(g, state, Vocabulary::kBos);
  while (static_cast<int>(out.size()) < d.max_gen_len) {
    const Eigen::RowVectorXd s = next_scores(logits, out, d.repetition_penalty);
    std::vector<int> order(static_cast<std::size_t>(s.size()));
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return s(a) > s(b); });
    std::size_t keep = std::min<std::size_t>(static_cast<std::size_t>(d.top_k), order.size());
    while (keep > 1 && !std::isfinite(s(order[keep - 1]))) --keep;
    // Nucleus: smallest prefix whose mass reaches top_p, at least one token.
    const double m = s(order[0]);
    std::vector<double> w(keep);
    double z = 0;
    for (std::size_t i = 0; i < keep; ++i) z += w[i] = std::exp(s(order[i]) - m);
    double mass = 0;
    std::size_t nucleus = 0;
    while (nucleus < keep) {
      mass += w[nucleus] / z;
      ++nucleus;
      if (mass >= d.top_p) break;
    }
    double kept = 0;
    for (std::size_t i = 0; i < nucleus; ++i) kept += w[i];
    double u = rng.uniform() * kept;
    int tok = order[nucleus - 1];
    for (std::size_t i = 0; i < nucleus; ++i) {
      if (u < w[i]) {
        tok = order[i];
        break;
      }
      u -= w[i];
    }
    if (tok == Vocabulary::kEos) break;
    out.push_back(tok);
    if (static_cast<int>(out.size()) == d.max_gen_len) break;
    logits = model.step(g, state, tok);
  }
  return out;
}

struct Hypothesis {
  std::vector<int> tokens;
  double logp = 0;
  Seq2SeqModel::DecoderState state;
  Eigen::RowVectorXd logits;
};

// Each round keeps the `width` best continuations by cumulative log-prob;
// continuations ending in </s> move to the finished set. The answer is the
// finished hypothesis with the best length-normalised score.
std::vector<int> beam(const Seq2SeqModel& model, Seq2SeqModel::DecoderState state, ag::Graph& g,
                      const DecodingConfig& d) {
  const auto width = static_cast<std::size_t>(d.beam_width);
  std::vector<Hypothesis> live(1);
  live[0].state = std::move(state);
  live[0].logits = model.step(g, live[0].state, Vocabulary::kBos);
  struct Finished {
    std::vector<int> tokens;
    double score;
  };
  std::vector<Finished> done;
  auto normalised = [&](double logp, std::size_t len) {
    return logp / std::pow(static_cast<double>(std::max<std::size_t>(len, 1)), d.length_penalty);
  };
  while (!live.empty() && done.size() < width) {
    struct Candidate {
      double logp;
      std::size_t parent;
      int token;
    };
    std::vector<Candidate> cands;
    for (std::size_t h = 0; h < live.size(); ++h) {
      const Eigen::RowVectorXd lp = log_softmax(next_scores(live[h].logits, live[h].tokens, d.repetition_penalty));
      for (Eigen::Index v = 0; v < lp.size(); ++v) {
        if (std::isfinite(lp(v))) cands.push_back({live[h].logp + lp(v), h, static_cast<int>(v)});
      }
    }
    const std::size_t take = std::min(width, cands.size());
    std::partial_sort(cands.begin(), cands.begin() + static_cast<std::ptrdiff_t>(take), cands.end(),
                      [](const Candidate& a, const Candidate& b) {
                        if (a.logp != b.logp) return a.logp > b.logp;
                        if (a.parent != b.parent) return a.parent < b.parent;
                        return a.token < b.token;
                      });
    std::vector<Hypothesis> next;
    for (std::size_t c = 0; c < take; ++c) {
      const Candidate& cand = cands[c];
      const Hypothesis& parent = live[cand.parent];
      if (cand.token == Vocabulary::kEos) {
        done.push_back({parent.tokens, normalised(cand.logp, parent.tokens.size() + 1)});
        continue;
      }
      Hypothesis h;
      h.tokens = parent.tokens;
      h.tokens.push_back(cand.token);
      h.logp = cand.logp;
      if (static_cast<int>(h.tokens.size()) >= d.max_gen_len) {
        done.push_back({h.tokens, normalised(h.logp, h.tokens.size())});
        continue;
      }
      h.state = parent.state;
      h.logits = model.step(g, h.state, cand.token);
      next.push_back(std::move(h));
    }
    live = std::move(next);
  }
  for (const auto& h : live) done.push_back({h.tokens, normalised(h.logp, h.tokens.size())});
  std::size_t best = 0;
  for (std::size_t i = 1; i < done.size(); ++i) {
    if (done[i].score > done[best].score) best = i;
  }
  return done.empty() ? std::vector<int>{} : done[best].tokens;
}

}  // namespace

std::vector<int> generate_ids(const Seq2SeqModel& model, std::string_view input, const DecodingConfig& dcfg,
                              std::size_t input_index, int max_input_len) {
  dcfg.validate();
  if (text::normalize_whitespace(input).empty()) {
    spdlog::warn("decode: input {} is empty; returning empty output", input_index);
    return {};
  }
  const Source src = encode_source(model.vocab(), input, max_input_len);
  ag::Graph g(false);
  const ag::Var memory = model.encode(g, src.ids, src.valid);
  auto state = model.start(g, memory, src.valid);
  switch (dcfg.strategy) {
    case Strategy::Greedy: return greedy(model, std::move(state), g, dcfg);
    case Strategy::Beam: return beam(model, std::move(state), g, dcfg);
    case Strategy::Sample: {
      Rng rng(derive_seed(dcfg.seed, "sample-" + std::to_string(input_index)));
      return sample(model, std::move(state), g, dcfg, rng);
    }
  }
  return {};
}

std::vector<std::string> decode(const Seq2SeqModel& model, std::span<const std::string> inputs,
                                const DecodingConfig& dcfg, int max_input_len) {
  std::vector<std::string> out;
  out.reserve(inputs.size());
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    out.push_back(model.vocab().decode(generate_ids(model, inputs[i], dcfg, i, max_input_len)));
  }
  return out;
}

Corpus transform_corpus(const Seq2SeqModel& model, const Corpus& gpt_corpus, const DecodingConfig& dcfg,
                        Label out_label, const std::string& prefix, int max_input_len, TransformReport* report) {
  if (out_label != Label::T5Gen && out_label != Label::BartGen) fail("transform_corpus: out_label must be T5GEN or BARTGEN");
  for (const auto& s : gpt_corpus.samples()) {
    if (s.label != Label::Gpt) fail("transform_corpus: input sample " + s.id + " is not GPT");
  }
  TransformReport local;
  std::vector<TextSample> out;
  const std::string suffix = "-" + text::to_lower_ascii(label_name(out_label));
  for (std::size_t i = 0; i < gpt_corpus.size(); ++i) {
    const auto& s = gpt_corpus.samples()[i];
    std::string text;
    try {
      const std::string input = prefix.empty() ? s.text : prefix + " " + s.text;
      text = model.vocab().decode(generate_ids(model, input, dcfg, i, max_input_len));
    } catch (const std::exception& e) {
      spdlog::warn("transform: decode failed for {}: {}", s.id, e.what());
    }
    if (text::normalize_whitespace(text).empty()) {
      spdlog::warn("transform: dropping {} (empty output)", s.id);
      ++local.dropped;
      local.dropped_ids.push_back(s.id);
      continue;
    }
    out.push_back({s.id + suffix, std::move(text), out_label, s.id});
  }
  if (local.dropped > tolerated_failures(gpt_corpus.size(), 0.02)) {
    fail("transform: " + std::to_string(local.dropped) + " of " + std::to_string(gpt_corpus.size()) +
         " samples failed to decode (more than 2%)");
  }
  if (report) *report = std::move(local);
  return Corpus(std::move(out));
}

}  // namespace textshift
