#include <doctest.h>

#include <cmath>
#include <set>

#include "support.hpp"
#include "textshift/humanizer.hpp"
#include "textshift/rng.hpp"

using namespace textshift;

namespace {

// Independent cross-entropy: mean over kept rows of -log softmax(z)[target].
double reference_ce(const Eigen::MatrixXd& z, const std::vector<int>& targets, const std::vector<unsigned char>& keep) {
  double total = 0;
  int rows = 0;
  for (Eigen::Index t = 0; t < z.rows(); ++t) {
    if (!keep[static_cast<std::size_t>(t)]) continue;
    double denom = 0;
    for (Eigen::Index j = 0; j < z.cols(); ++j) denom += std::exp(z(t, j));
    total += std::log(denom) - z(t, targets[static_cast<std::size_t>(t)]);
    ++rows;
  }
  return total / rows;
}

const std::vector<std::string>& sentences() {
  static const std::vector<std::string> s{
      "the quick brown fox jumps over the lazy dog", "we went to the market and bought fresh bread",
      "it is important to note that results may vary", "honestly i think the movie was pretty good",
      "please clean your workspace before starting", "the weather today is sunny with light wind",
      "she said the train would arrive at noon", "furthermore the committee approved the budget"};
  return s;
}

BackboneConfig tiny(Backbone b) {
  BackboneConfig c;
  c.kind = b;
  c.dim = 24;
  c.heads = 2;
  c.ff_dim = 48;
  c.encoder_layers = 1;
  c.decoder_layers = 1;
  c.max_positions = 64;
  c.relative_buckets = 8;
  c.relative_max_distance = 32;
  return c;
}

std::unique_ptr<Seq2SeqModel> tiny_model(Backbone b, std::uint64_t seed = 5) {
  std::vector<std::string> texts = sentences();
  const std::vector<std::string> extra{"humanize:"};
  return std::make_unique<Seq2SeqModel>(Vocabulary::build(texts, 1, 0, true, extra), tiny(b), seed);
}

std::vector<std::string> inputs(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<std::string> out;
  const auto& s = sentences();
  for (std::size_t i = 0; i < n; ++i) out.push_back("humanize: " + s[rng.index(s.size())] + " " + s[rng.index(s.size())]);
  return out;
}

HumanizerConfig quick_config(Backbone b) {
  HumanizerConfig cfg;
  cfg.backbone = b;
  cfg.max_len = 32;
  cfg.max_epochs = 3;
  cfg.batch_size = 4;
  cfg.grad_accum = 1;
  cfg.peak_lr = 1e-3;
  cfg.fp16 = false;
  cfg.seed = 2;
  return cfg;
}

std::vector<PairedExample> pairs_from(const std::vector<std::string>& s) {
  std::vector<PairedExample> p;
  for (std::size_t i = 0; i + 1 < s.size(); ++i) {
    p.push_back({"humanize: " + s[i], s[i + 1], "g" + std::to_string(i), "h" + std::to_string(i)});
  }
  return p;
}

}  // namespace

TEST_CASE("smoothed loss with eps 0 equals plain cross entropy on random cases") {
  Rng rng(1);
  for (int trial = 0; trial < 100; ++trial) {
    const Eigen::Index T = 1 + static_cast<Eigen::Index>(rng.index(8));
    const Eigen::Index V = 2 + static_cast<Eigen::Index>(rng.index(30));
    Eigen::MatrixXd z(T, V);
    for (Eigen::Index i = 0; i < z.size(); ++i) z.data()[i] = 3.0 * rng.normal();
    std::vector<int> targets;
    std::vector<unsigned char> keep;
    for (Eigen::Index t = 0; t < T; ++t) {
      targets.push_back(static_cast<int>(rng.index(static_cast<std::uint64_t>(V))));
      keep.push_back(t == 0 || rng.bernoulli(0.7) ? 1 : 0);
    }
    CHECK(std::abs(label_smoothed_ce(z, targets, keep, 0.0) - reference_ce(z, targets, keep)) < 1e-6);
  }
}

TEST_CASE("uniform logits give log V for any eps") {
  for (double eps : {0.0, 0.1, 0.5, 0.9}) {
    for (int V : {2, 4, 17, 100}) {
      const Eigen::MatrixXd z = Eigen::MatrixXd::Constant(3, V, 0.7);
      const std::vector<int> targets{0, 1, V - 1};
      const std::vector<unsigned char> keep{1, 1, 1};
      CHECK(std::abs(label_smoothed_ce(z, targets, keep, eps) - std::log(V)) < 1e-6);
    }
  }
}

TEST_CASE("smoothed target puts 0.925 on the true token and 0.025 elsewhere") {
  // Cross entropy H(q, p) attains its minimum H(q) exactly at p = q, so
  // feeding log q as logits recovers the entropy of the intended target.
  const double q[4] = {0.025, 0.925, 0.025, 0.025};
  Eigen::MatrixXd z(1, 4);
  double entropy = 0, sum = 0;
  for (int j = 0; j < 4; ++j) {
    z(0, j) = std::log(q[j]);
    entropy -= q[j] * std::log(q[j]);
    sum += q[j];
  }
  CHECK(std::abs(sum - 1.0) < 1e-12);
  const std::vector<int> target{1};
  const std::vector<unsigned char> keep{1};
  CHECK(std::abs(label_smoothed_ce(z, target, keep, 0.1) - entropy) < 1e-12);
  Eigen::MatrixXd nudged = z;
  nudged(0, 1) += 0.01;
  CHECK(label_smoothed_ce(nudged, target, keep, 0.1) > entropy);
}

TEST_CASE("smoothed targets sum to one at every position") {
  // With logits shifted by a constant the loss is unchanged exactly when the
  // target mass sums to one.
  Rng rng(4);
  for (double eps : {0.0, 0.05, 0.1, 0.3}) {
    Eigen::MatrixXd z(5, 9);
    for (Eigen::Index i = 0; i < z.size(); ++i) z.data()[i] = rng.normal();
    const std::vector<int> targets{0, 3, 8, 2, 2};
    const std::vector<unsigned char> keep(5, 1);
    const Eigen::MatrixXd shifted = z.array() + 4.0;
    CHECK(std::abs(label_smoothed_ce(z, targets, keep, eps) - label_smoothed_ce(shifted, targets, keep, eps)) < 1e-6);
  }
}

TEST_CASE("padding rows are excluded and all-padding targets are an error") {
  Eigen::MatrixXd z(2, 3);
  z << 1, 2, 3, 100, -50, 7;
  const std::vector<int> targets{2, 1};
  const std::vector<unsigned char> first_only{1, 0};
  const Eigen::MatrixXd first = z.topRows(1);
  const std::vector<int> t1{2};
  const std::vector<unsigned char> k1{1};
  CHECK(label_smoothed_ce(z, targets, first_only, 0.1) == doctest::Approx(label_smoothed_ce(first, t1, k1, 0.1)));
  const std::vector<unsigned char> none{0, 0};
  CHECK_THROWS_AS(label_smoothed_ce(z, targets, none, 0.1), Error);
}

TEST_CASE("lr schedule hits 0, 1, 0 at its anchors") {
  CHECK(lr_multiplier(0, 10, 100) == 0.0);
  CHECK(lr_multiplier(10, 10, 100) == 1.0);
  CHECK(lr_multiplier(100, 10, 100) == 0.0);
  CHECK_THROWS_AS(lr_multiplier(5, 100, 100), Error);
  CHECK_THROWS_AS(lr_multiplier(5, 0, 100), Error);
}

TEST_CASE("lr schedule is continuous and piecewise linear") {
  const int warmup = 37, total = 211;
  const double up = lr_multiplier(1, warmup, total) - lr_multiplier(0, warmup, total);
  for (int s = 1; s <= warmup; ++s) {
    CHECK(std::abs(lr_multiplier(s, warmup, total) - lr_multiplier(s - 1, warmup, total) - up) < 1e-12);
  }
  const double down = lr_multiplier(warmup + 1, warmup, total) - lr_multiplier(warmup, warmup, total);
  for (int s = warmup + 1; s <= total; ++s) {
    CHECK(std::abs(lr_multiplier(s, warmup, total) - lr_multiplier(s - 1, warmup, total) - down) < 1e-12);
  }
  CHECK(up == doctest::Approx(1.0 / warmup));
  CHECK(down == doctest::Approx(-1.0 / (total - warmup)));
  for (int s = 0; s <= total; ++s) {
    const double m = lr_multiplier(s, warmup, total);
    CHECK((m >= 0.0 && m <= 1.0));
  }
}

TEST_CASE("patience 2 stops after the fourth epoch of [1.0, 0.9, 0.95, 0.96]") {
  EarlyStopping stop(2);
  CHECK_FALSE(stop.update(1.0));
  CHECK_FALSE(stop.update(0.9));
  CHECK_FALSE(stop.update(0.95));
  CHECK(stop.update(0.96));
  CHECK(stop.best() == 0.9);
}

TEST_CASE("an equal loss is not an improvement") {
  EarlyStopping stop(1);
  CHECK_FALSE(stop.update(0.5));
  CHECK(stop.update(0.5));
}

TEST_CASE("repetition penalty rules") {
  Eigen::RowVectorXd s(4);
  s << 2.0, -1.0, 0.5, 3.0;
  const std::vector<int> gen{0, 1};
  Eigen::RowVectorXd same = s;
  apply_repetition_penalty(same, gen, 1.0);
  CHECK(same == s);
  Eigen::RowVectorXd pen = s;
  apply_repetition_penalty(pen, gen, 2.0);
  CHECK(pen(0) == 1.0);
  CHECK(pen(1) == -2.0);
  CHECK(pen(2) == 0.5);
  CHECK(pen(3) == 3.0);
  Eigen::RowVectorXd twice = s;
  const std::vector<int> repeated{0, 0};
  apply_repetition_penalty(twice, repeated, 2.0);
  CHECK(twice(0) == 1.0);
}

TEST_CASE("configs validate their ranges") {
  HumanizerConfig h;
  h.backbone = Backbone::T5Small;
  CHECK_NOTHROW(h.validate(BackboneConfig{}));
  h.label_smoothing_eps = 1.0;
  CHECK_THROWS(h.validate(BackboneConfig{}));
  h.label_smoothing_eps = 0.1;
  h.max_len = 1024;
  BackboneConfig bart;
  bart.kind = Backbone::Bart;
  CHECK_THROWS(h.validate(bart));
  h.max_len = 512;
  h.max_epochs = 0;
  CHECK_THROWS(h.validate(BackboneConfig{}));
  DecodingConfig d;
  CHECK_NOTHROW(d.validate());
  d.repetition_penalty = 0.5;
  CHECK_THROWS(d.validate());
  d.repetition_penalty = 1.0;
  d.top_p = 0.0;
  CHECK_NOTHROW(d.validate());
  d.strategy = Strategy::Sample;
  CHECK_THROWS(d.validate());
  CHECK(HumanizerConfig::from_json(quick_config(Backbone::Bart).to_json()).to_json() ==
        quick_config(Backbone::Bart).to_json());
}

TEST_CASE("incremental decoding matches teacher-forced logits") {
  for (Backbone b : {Backbone::T5Small, Backbone::Bart}) {
    const auto model = tiny_model(b);
    const auto src = model->vocab().to_ids("humanize: the quick brown fox");
    const std::vector<unsigned char> valid(src.size(), 1);
    const std::vector<int> dec{Vocabulary::kBos, model->vocab().id("the"), model->vocab().id("lazy"),
                               model->vocab().id("dog")};
    ag::Graph g(false);
    const auto memory = model->encode(g, src, valid);
    const Eigen::MatrixXd full = model->decode_logits(g, memory, valid, dec)->value;
    auto state = model->start(g, memory, valid);
    for (std::size_t t = 0; t < dec.size(); ++t) {
      const Eigen::RowVectorXd row = model->step(g, state, dec[t]);
      CHECK_MESSAGE((row - full.row(static_cast<Eigen::Index>(t))).cwiseAbs().maxCoeff() < 1e-9,
                    backbone_name(b) << " position " << t);
    }
  }
}

TEST_CASE("greedy, beam width 1 and top-k 1 sampling agree token for token") {
  for (Backbone b : {Backbone::T5Small, Backbone::Bart}) {
    const auto model = tiny_model(b, 8);
    DecodingConfig greedy;
    greedy.strategy = Strategy::Greedy;
    greedy.max_gen_len = 16;
    DecodingConfig beam = greedy;
    beam.strategy = Strategy::Beam;
    beam.beam_width = 1;
    DecodingConfig sample = greedy;
    sample.strategy = Strategy::Sample;
    sample.top_k = 1;
    sample.seed = 99;
    const auto in = inputs(20, 3);
    for (std::size_t i = 0; i < in.size(); ++i) {
      const auto g = generate_ids(*model, in[i], greedy, i);
      CHECK(generate_ids(*model, in[i], beam, i) == g);
      CHECK(generate_ids(*model, in[i], sample, i) == g);
    }
  }
}

TEST_CASE("sampling is reproducible for a fixed seed") {
  const auto model = tiny_model(Backbone::T5Small, 9);
  DecodingConfig d;
  d.strategy = Strategy::Sample;
  d.top_k = static_cast<int>(model->vocab().size());
  d.top_p = 1.0;
  d.max_gen_len = 12;
  d.seed = 17;
  const auto in = inputs(10, 4);
  const auto a = decode(*model, in, d);
  CHECK(decode(*model, in, d) == a);
  d.seed = 18;
  CHECK(decode(*model, in, d) != a);
}

TEST_CASE("decoded outputs respect max_gen_len and contain no special tokens") {
  const auto model = tiny_model(Backbone::Bart, 10);
  Rng rng(6);
  const auto in = inputs(50, 5);
  for (std::size_t i = 0; i < in.size(); ++i) {
    DecodingConfig d;
    d.strategy = i % 2 ? Strategy::Beam : Strategy::Sample;
    d.beam_width = 2;
    d.max_gen_len = 1 + static_cast<int>(rng.index(20));
    d.seed = i + 1;
    const auto ids = generate_ids(*model, in[i], d, i);
    CHECK(ids.size() <= static_cast<std::size_t>(d.max_gen_len));
    for (int id : ids) CHECK_FALSE(Vocabulary::is_special(id));
  }
}

TEST_CASE("an empty input decodes to an empty output") {
  const auto model = tiny_model(Backbone::T5Small);
  const std::vector<std::string> in{"", "humanize: the dog"};
  DecodingConfig d;
  d.max_gen_len = 8;
  const auto out = decode(*model, in, d);
  REQUIRE(out.size() == 2);
  CHECK(out[0].empty());
}

TEST_CASE("transform_corpus maps every GPT sample to one linked output") {
  const auto model = tiny_model(Backbone::T5Small, 12);
  std::vector<TextSample> gpt;
  const auto in = inputs(100, 7);
  for (std::size_t i = 0; i < in.size(); ++i) gpt.push_back({"g" + std::to_string(i), in[i].substr(10), Label::Gpt, {}});
  DecodingConfig d;
  d.strategy = Strategy::Greedy;
  d.max_gen_len = 6;
  d.repetition_penalty = 1.0;
  TransformReport rep;
  const Corpus out = transform_corpus(*model, Corpus(gpt), d, Label::T5Gen, "humanize:", 64, &rep);
  CHECK(out.size() + rep.dropped == 100);
  std::set<std::string> sources;
  for (const auto& s : out.samples()) {
    CHECK(s.label == Label::T5Gen);
    REQUIRE(s.source_id);
    sources.insert(*s.source_id);
  }
  CHECK(sources.size() == out.size());
  CHECK(transform_corpus(*model, Corpus(), d, Label::BartGen, "humanize:").empty());
}

TEST_CASE("one small gradient step decreases the training loss") {
  for (Backbone b : {Backbone::T5Small, Backbone::Bart}) {
    auto model = tiny_model(b, 13);
    const auto src = model->vocab().to_ids("humanize: please clean your workspace before starting");
    auto tgt = model->vocab().to_ids("honestly i think the movie was pretty good");
    tgt.push_back(Vocabulary::kEos);
    std::vector<int> dec{Vocabulary::kBos};
    dec.insert(dec.end(), tgt.begin(), tgt.end() - 1);
    const std::vector<unsigned char> valid(src.size(), 1);
    const std::vector<double> weights(tgt.size(), 1.0);
    auto loss_and_grad = [&](bool backward) {
      ag::Graph g(backward);
      const auto logits = model->decode_logits(g, model->encode(g, src, valid), valid, dec);
      const auto loss = ag::smoothed_cross_entropy(logits, tgt, weights, 0.1);
      if (backward) g.backward(loss);
      return loss->value(0, 0);
    };
    model->store().zero_grad();
    const double before = loss_and_grad(true);
    for (auto* p : model->store().all()) p->value -= 1e-3 * p->grad;
    const double after = loss_and_grad(false);
    CHECK_MESSAGE(after < before, backbone_name(b));
  }
}

TEST_CASE("three epochs of improving loss give three checkpoints and a max-epochs stop") {
  testing::TempDir dir("finetune");
  auto model = tiny_model(Backbone::Bart, 14);
  const auto pairs = pairs_from(sentences());
  auto cfg = quick_config(Backbone::Bart);
  cfg.backbone = Backbone::Bart;
  const auto trace = fine_tune(*model, pairs, cfg, dir.path());
  REQUIRE(trace.epochs.size() == 3);
  CHECK(trace.epochs[1].eval_loss < trace.epochs[0].eval_loss);
  CHECK(trace.epochs[2].eval_loss < trace.epochs[1].eval_loss);
  CHECK(trace.stopped_epoch == 3);
  CHECK(trace.stop_reason == StopReason::MaxEpochs);
  CHECK(trace.best_epoch == 3);
  for (int e = 1; e <= 3; ++e) CHECK(std::filesystem::exists(dir / ("bart/epoch-" + std::to_string(e))));
  CHECK(best_checkpoint(dir / "bart") == dir / "bart/epoch-3");
  const auto reloaded = Seq2SeqModel::load(best_checkpoint(dir / "bart"));
  CHECK(reloaded->hash() == model->hash());
  CHECK(TrainingTrace::from_json(trace.to_json()).to_json() == trace.to_json());
}

TEST_CASE("fine-tuning is reproducible and rejects mismatched inputs") {
  const auto pairs = pairs_from(sentences());
  auto cfg = quick_config(Backbone::T5Small);
  cfg.max_epochs = 1;
  auto a = tiny_model(Backbone::T5Small, 15);
  auto b = tiny_model(Backbone::T5Small, 15);
  fine_tune(*a, pairs, cfg, {});
  fine_tune(*b, pairs, cfg, {});
  CHECK(a->hash() == b->hash());
  CHECK_THROWS_AS(fine_tune(*a, std::span<const PairedExample>(), cfg, {}), Error);
  cfg.backbone = Backbone::Bart;
  CHECK_THROWS_AS(fine_tune(*a, pairs, cfg, {}), Error);
  cfg.backbone = Backbone::T5Small;
  const std::vector<PairedExample> foreign{{"humanize: zzz", "qqq www eee", "g", "h"}};
  CHECK_THROWS_AS(fine_tune(*a, foreign, cfg, {}), Error);
}

TEST_CASE("missing backbone weights give provisioning guidance") {
  try {
    Seq2SeqModel::load("/nonexistent/backbone");
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::Unavailable);
    CHECK(std::string(e.what()).find("provision") != std::string::npos);
  }
}
