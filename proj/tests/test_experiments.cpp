#include <doctest.h>

#include <cmath>

#include "support.hpp"
#include "textshift/experiments.hpp"
#include "textshift/toy_corpus.hpp"

using namespace textshift;

namespace {

constexpr double kPercentTolerance = 0.0015;  // 0.15 percentage points

const PaperTables& paper() {
  static const PaperTables t = load_paper_tables();
  return t;
}

AccuracyTable only(const AccuracyTable& t, std::optional<Backbone> b) {
  AccuracyTable out;
  for (const auto& [k, v] : t) {
    if (k.transformer == b) out[k] = v;
  }
  return out;
}

struct SmallRun {
  TrainTest split;
  Corpus transformed;
  EmbeddingModel glove;
};

SmallRun small_run() {
  ToyCorpusSpec spec;
  spec.per_class = 30;
  spec.seed = 4;
  const Corpus c = make_toy_corpus(spec);
  SplitSpec s;
  s.per_class_n = 30;
  s.seed = 2;
  SmallRun r{split(balanced_sample(c, s), s), Corpus(), EmbeddingModel()};
  std::vector<TextSample> t;
  for (const auto& g : c.samples()) {
    if (g.label != Label::Gpt) continue;
    t.push_back({g.id + "-t5", "so basically " + g.text, Label::T5Gen, g.id});
  }
  r.transformed = Corpus(t);
  std::vector<std::string> texts;
  for (const auto& x : c.samples()) texts.push_back(x.text);
  Word2VecParams p;
  p.dim = 8;
  p.epochs = 1;
  p.min_count = 1;
  const auto w = train_word2vec(texts, p);
  r.glove = EmbeddingModel::from_vectors(EmbeddingKind::Glove, w.tokens(), w.vectors());
  return r;
}

RunSettings fast_settings() {
  RunSettings s;
  s.hyperparams.rf_trees = 10;
  s.hyperparams.xgb_trees = 10;
  s.hyperparams.max_epochs = 3;
  s.hyperparams.mlp_hidden = {8};
  s.hyperparams.lstm_hidden = 8;
  s.word2vec.dim = 8;
  s.word2vec.epochs = 1;
  s.word2vec.min_count = 1;
  s.sequence_length = 12;
  s.record_timestamps = false;
  return s;
}

ExperimentPlan small_plan(Phase phase, std::optional<Backbone> t = std::nullopt) {
  ExperimentPlan p;
  p.phase = phase;
  p.transformer = t;
  p.embeddings = {EmbeddingKind::Word2Vec, EmbeddingKind::Glove};
  p.detectors = {DetectorKind::LR, DetectorKind::RF, DetectorKind::LSTM};
  p.seed = 11;
  return p;
}

}  // namespace

TEST_CASE("relative drop reproduces the two worked percentages") {
  CHECK(std::abs(relative_drop(0.9345, 0.7830) - 0.162) < kPercentTolerance);
  CHECK(std::abs(relative_drop(0.9315, 0.7515) - 0.193) < kPercentTolerance);
  CHECK(relative_drop(0.8, 0.8) == 0.0);
  CHECK_THROWS_AS(relative_drop(0.0, 0.5), Error);
}

TEST_CASE("relative drop matches its defining formula on random inputs") {
  for (int i = 1; i <= 100; ++i) {
    const double b = i / 100.0, a = std::fmod(i * 0.37, 1.0);
    CHECK(relative_drop(b, a) == doctest::Approx((b - a) / b));
  }
}

TEST_CASE("drop summary over the published tables reproduces the stated ranges") {
  const auto s = drop_summary(paper().baseline, paper().attack);
  CHECK(s.drops.size() == 36);

  const auto& w2v = s.at(EmbeddingKind::Word2Vec, DetectorKind::XGB, Backbone::T5Small);
  CHECK(std::abs(w2v.drop - 0.162) < kPercentTolerance);
  CHECK(std::abs(s.at(EmbeddingKind::Word2Vec, DetectorKind::LSTM, Backbone::T5Small).drop - 0.193) <
        kPercentTolerance);

  const auto& glove = s.range(EmbeddingKind::Glove);
  CHECK(std::abs(glove.min.drop - 0.149) < kPercentTolerance);
  CHECK(std::abs(glove.max.drop - 0.183) < kPercentTolerance);
  CHECK(glove.min.key.detector == DetectorKind::MLP);
  CHECK(glove.min.key.transformer == std::optional(Backbone::T5Small));
  CHECK(glove.max.key.detector == DetectorKind::XGB);
  CHECK(glove.max.key.transformer == std::optional(Backbone::Bart));

  const auto& bert = s.range(EmbeddingKind::Bert);
  CHECK(std::abs(bert.min.drop - 0.077) < kPercentTolerance);
  CHECK(std::abs(bert.max.drop - 0.153) < kPercentTolerance);
  CHECK(bert.min.key.detector == DetectorKind::DNN);
  CHECK(bert.min.key.transformer == std::optional(Backbone::Bart));
  CHECK(bert.max.key.detector == DetectorKind::LSTM);
  CHECK(bert.max.key.transformer == std::optional(Backbone::T5Small));
}

TEST_CASE("T5 drops exceed BART drops for every contextual-embedding detector") {
  const auto s = drop_summary(paper().baseline, paper().attack);
  for (auto d : kAllDetectors) {
    CHECK_MESSAGE(s.at(EmbeddingKind::Bert, d, Backbone::T5Small).drop > s.at(EmbeddingKind::Bert, d, Backbone::Bart).drop,
                  detector_name(d));
  }
}

TEST_CASE("drop ranges per transformer bracket every drop of that transformer") {
  const auto s = drop_summary(paper().baseline, paper().attack);
  for (auto e : kAllEmbeddings) {
    for (auto b : {Backbone::T5Small, Backbone::Bart}) {
      const auto& r = s.range(e, b);
      for (auto d : kAllDetectors) {
        const double v = s.at(e, d, b).drop;
        CHECK(v >= r.min.drop);
        CHECK(v <= r.max.drop);
      }
    }
  }
}

TEST_CASE("identical baseline and attack give zero drops") {
  AccuracyTable attack;
  for (const auto& [k, v] : paper().baseline) attack[{k.embedding, k.detector, Backbone::Bart}] = v;
  const auto s = drop_summary(paper().baseline, attack);
  for (const auto& d : s.drops) CHECK(d.drop == 0.0);
}

TEST_CASE("drop summary rejects mismatched cells") {
  AccuracyTable attack = only(paper().attack, Backbone::T5Small);
  attack.erase(attack.begin());
  CHECK_THROWS_AS(drop_summary(paper().baseline, attack), Error);
  AccuracyTable base = paper().baseline;
  base.erase(base.begin());
  CHECK_THROWS_AS(drop_summary(base, only(paper().attack, Backbone::T5Small)), Error);
}

TEST_CASE("published fixture holds the quoted reference cells") {
  CHECK(paper().baseline.at({EmbeddingKind::Bert, DetectorKind::DNN, std::nullopt}) == 0.9840);
  CHECK(paper().attack.at({EmbeddingKind::Bert, DetectorKind::DNN, Backbone::T5Small}) == 0.8940);
  CHECK(paper().attack.at({EmbeddingKind::Bert, DetectorKind::DNN, Backbone::Bart}) == 0.9080);
  CHECK(paper().attack.at({EmbeddingKind::Bert, DetectorKind::LSTM, Backbone::T5Small}) == 0.7195);
  CHECK(paper().retrain.at({EmbeddingKind::Bert, DetectorKind::DNN, Backbone::T5Small}) == 0.9845);
  CHECK(paper().baseline.size() == 18);
  CHECK(paper().attack.size() == 36);
  CHECK(paper().retrain.size() == 36);
}

TEST_CASE("DNN is the best detector for every embedding in the published baseline") {
  for (auto e : kAllEmbeddings) {
    DetectorKind best = DetectorKind::LR;
    double acc = -1;
    for (auto d : kAllDetectors) {
      const double v = paper().baseline.at({e, d, std::nullopt});
      if (v > acc) acc = v, best = d;
    }
    CHECK(best == DetectorKind::DNN);
  }
}

TEST_CASE("the full plan covers 18 + 36 + 36 = 90 cells") {
  const auto plans = full_plan(3, SplitSpec{});
  REQUIRE(plans.size() == 5);
  std::size_t total = 0, baseline = 0, attack = 0, retrain = 0;
  for (const auto& p : plans) {
    CHECK_NOTHROW(p.validate());
    total += p.cardinality();
    (p.phase == Phase::Baseline ? baseline : p.phase == Phase::Attack ? attack : retrain) += p.cardinality();
  }
  CHECK(baseline == 18);
  CHECK(attack == 36);
  CHECK(retrain == 36);
  CHECK(total == 90);
}

TEST_CASE("plans enforce the transformer rule") {
  ExperimentPlan p;
  p.transformer = Backbone::Bart;
  CHECK_THROWS_AS(p.validate(), Error);
  p.phase = Phase::Attack;
  CHECK_NOTHROW(p.validate());
  p.transformer.reset();
  CHECK_THROWS_AS(p.validate(), Error);
  p.phase = Phase::Retrain;
  CHECK_THROWS_AS(p.validate(), Error);
}

TEST_CASE("merging tables rejects duplicate cells") {
  const auto t5 = only(paper().attack, Backbone::T5Small);
  const auto bart = only(paper().attack, Backbone::Bart);
  CHECK(merge_tables({t5, bart}).size() == 36);
  CHECK_THROWS_AS(merge_tables({t5, t5}), Error);
}

TEST_CASE("phase partitions keep the human side and swap the machine side") {
  const auto run = small_run();
  const auto base = phase_partition(run.split.test, Phase::Baseline, std::nullopt);
  const auto retrain = phase_partition(run.split.test, Phase::Retrain, run.transformed);
  REQUIRE(base.texts.size() == retrain.texts.size());
  CHECK(base.labels == retrain.labels);
  for (std::size_t i = 0; i < base.texts.size(); ++i) {
    if (base.labels[i] == 0) {
      CHECK(base.texts[i] == retrain.texts[i]);
    } else {
      CHECK(retrain.texts[i] == "so basically " + base.texts[i]);
    }
  }
  CHECK(base.hash != retrain.hash);
}

TEST_CASE("phases run end to end, attack freezes the baseline models and reruns are identical") {
  testing::TempDir dir("phases");
  const auto run = small_run();
  PhaseInputs inputs{run.split, run.transformed, run.glove, nullptr};
  const auto settings = fast_settings();

  const auto missing_baseline = small_plan(Phase::Attack, Backbone::T5Small);
  CHECK_THROWS_AS(run_phase(missing_baseline, inputs, settings, dir.path()), Error);

  const auto base = run_baseline(small_plan(Phase::Baseline), inputs, settings, dir.path());
  CHECK(base.cells.size() == 6);
  CHECK(base.failed_cells() == 0);
  for (const auto& c : base.cells) {
    REQUIRE(c.eval);
    CHECK((c.eval->accuracy >= 0.0 && c.eval->accuracy <= 1.0));
    CHECK(c.eval->n_test == run.split.test.size());
  }
  CHECK(std::filesystem::exists(dir / "baseline/report.json"));
  CHECK(load_report(dir.path(), Phase::Baseline, std::nullopt).canonical() == base.canonical());
  for (const char* key : {"seed", "config_hash", "corpus_hashes", "embedding_hashes", "detector_seeds"}) {
    CHECK_MESSAGE(base.provenance.contains(key), key);
  }

  const auto attack = run_attack(small_plan(Phase::Attack, Backbone::T5Small), inputs, settings, dir.path());
  CHECK(attack.cells.size() == 6);
  CHECK(attack.failed_cells() == 0);
  for (const auto& c : attack.cells) {
    CHECK(c.model_hash == base.find(c.key.embedding, c.key.detector)->model_hash);
  }

  const auto retrain = run_retrain(small_plan(Phase::Retrain, Backbone::T5Small), inputs, settings, dir.path());
  CHECK(retrain.failed_cells() == 0);
  CHECK(retrain.cells.size() == 6);

  testing::TempDir again("phases-again");
  const auto base2 = run_baseline(small_plan(Phase::Baseline), inputs, settings, again.path());
  CHECK(base2.canonical() == base.canonical());
  CHECK(ExperimentReport::from_json(base.to_json()).canonical() == base.canonical());
}

TEST_CASE("a tampered baseline record fails only its own attack cell") {
  testing::TempDir dir("tamper");
  const auto run = small_run();
  PhaseInputs inputs{run.split, run.transformed, run.glove, nullptr};
  const auto settings = fast_settings();
  run_baseline(small_plan(Phase::Baseline), inputs, settings, dir.path());
  auto j = nlohmann::json::parse(read_file(dir / "baseline/report.json"));
  for (auto& c : j["cells"]) {
    if (c["embedding"] == "GloVe" && c["detector"] == "RF") c["model_hash"] = "0000";
  }
  write_file_atomic(dir / "baseline/report.json", j.dump());
  const auto attack = run_attack(small_plan(Phase::Attack, Backbone::T5Small), inputs, settings, dir.path());
  CHECK(attack.failed_cells() == 1);
  CHECK_FALSE(attack.find(EmbeddingKind::Glove, DetectorKind::RF)->error.empty());
  CHECK(attack.find(EmbeddingKind::Glove, DetectorKind::LR)->eval);
}

TEST_CASE("a missing embedding resource fails its cells without aborting the sweep") {
  testing::TempDir dir("isolate");
  const auto run = small_run();
  PhaseInputs inputs{run.split, std::nullopt, std::nullopt, nullptr};
  auto plan = small_plan(Phase::Baseline);
  plan.embeddings.push_back(EmbeddingKind::Bert);
  const auto report = run_baseline(plan, inputs, fast_settings(), dir.path());
  CHECK(report.cells.size() == 9);
  CHECK(report.failed_cells() == 6);
  CHECK(report.find(EmbeddingKind::Word2Vec, DetectorKind::LR)->eval);
  CHECK(accuracy_table(report).size() == 3);
}
