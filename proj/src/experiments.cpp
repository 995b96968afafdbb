#include "textshift/experiments.hpp"

#include <chrono>
#include <cstdlib>
#include <set>

#include <spdlog/fmt/chrono.h>
#include <spdlog/spdlog.h>

#include "textshift/common.hpp"
#include "textshift/text.hpp"

namespace textshift {

namespace fs = std::filesystem;
using nlohmann::json;

std::string_view phase_name(Phase p) {
  switch (p) {
    case Phase::Baseline: return "baseline";
    case Phase::Attack: return "attack";
    case Phase::Retrain: return "retrain";
  }
  return "?";
}

std::optional<Phase> parse_phase(std::string_view name) {
  const std::string n = text::to_lower_ascii(name);
  if (n == "baseline") return Phase::Baseline;
  if (n == "attack") return Phase::Attack;
  if (n == "retrain") return Phase::Retrain;
  return std::nullopt;
}

Label transformed_label(Backbone b) { return b == Backbone::T5Small ? Label::T5Gen : Label::BartGen; }

void ExperimentPlan::validate() const {
  if (phase == Phase::Baseline && transformer) {
    throw Error(ErrorKind::Config, "plan: the baseline phase takes no transformer");
  }
  if (phase != Phase::Baseline && !transformer) {
    throw Error(ErrorKind::Config, std::string("plan: the ") + std::string(phase_name(phase)) +
                                       " phase needs exactly one transformer");
  }
  if (embeddings.empty() || detectors.empty()) throw Error(ErrorKind::Config, "plan: no cells");
}

std::vector<ExperimentPlan> full_plan(std::uint64_t seed, const SplitSpec& split) {
  std::vector<ExperimentPlan> plans;
  ExperimentPlan base;
  base.seed = seed;
  base.split = split;
  plans.push_back(base);
  for (Phase p : {Phase::Attack, Phase::Retrain}) {
    for (Backbone b : {Backbone::T5Small, Backbone::Bart}) {
      ExperimentPlan plan = base;
      plan.phase = p;
      plan.transformer = b;
      plans.push_back(plan);
    }
  }
  return plans;
}

std::size_t ExperimentReport::failed_cells() const {
  std::size_t n = 0;
  for (const auto& c : cells) n += static_cast<std::size_t>(!c.eval.has_value());
  return n;
}

const CellResult* ExperimentReport::find(EmbeddingKind e, DetectorKind d) const {
  for (const auto& c : cells) {
    if (c.key.embedding == e && c.key.detector == d) return &c;
  }
  return nullptr;
}

namespace {

json transformer_json(std::optional<Backbone> t) { return t ? json(backbone_name(*t)) : json(nullptr); }

std::optional<Backbone> transformer_from(const json& j) {
  if (j.is_null()) return std::nullopt;
  const auto b = parse_backbone(j.get<std::string>());
  if (!b) fail("unknown transformer " + j.get<std::string>());
  return b;
}

std::string utc_now() {
  return fmt::format("{:%Y-%m-%dT%H:%M:%SZ}", fmt::gmtime(std::chrono::system_clock::to_time_t(
                                                   std::chrono::system_clock::now())));
}

}  // namespace

json ExperimentReport::to_json() const {
  json cs = json::array();
  for (const auto& c : cells) {
    cs.push_back({{"embedding", embedding_name(c.key.embedding)},
                  {"detector", detector_name(c.key.detector)},
                  {"transformer", transformer_json(c.key.transformer)},
                  {"eval", c.eval ? c.eval->to_json() : json(nullptr)},
                  {"error", c.error},
                  {"model_hash", c.model_hash},
                  {"model_dir", c.model_dir}});
  }
  return {{"phase", phase_name(phase)},
          {"transformer", transformer_json(transformer)},
          {"cells", cs},
          {"provenance", provenance}};
}

ExperimentReport ExperimentReport::from_json(const json& j) {
  ExperimentReport r;
  const auto p = parse_phase(j.at("phase").get<std::string>());
  if (!p) fail("unknown phase in report");
  r.phase = *p;
  r.transformer = transformer_from(j.at("transformer"));
  for (const auto& c : j.at("cells")) {
    CellResult cell;
    const auto e = parse_embedding(c.at("embedding").get<std::string>());
    const auto d = parse_detector(c.at("detector").get<std::string>());
    if (!e || !d) fail("unknown cell in report");
    cell.key = {*e, *d, transformer_from(c.at("transformer"))};
    if (!c.at("eval").is_null()) cell.eval = EvalResult::from_json(c.at("eval"));
    cell.error = c.at("error").get<std::string>();
    cell.model_hash = c.at("model_hash").get<std::string>();
    cell.model_dir = c.at("model_dir").get<std::string>();
    r.cells.push_back(std::move(cell));
  }
  r.provenance = j.at("provenance");
  return r;
}

std::string ExperimentReport::canonical() const {
  json j = to_json();
  j["provenance"].erase("timestamps");
  for (auto& c : j["cells"]) c.erase("model_dir");
  return j.dump();
}

AccuracyTable accuracy_table(const ExperimentReport& report) {
  AccuracyTable t;
  for (const auto& c : report.cells) {
    if (c.eval) t[c.key] = c.eval->accuracy;
  }
  return t;
}

AccuracyTable merge_tables(const std::vector<AccuracyTable>& tables) {
  AccuracyTable out;
  for (const auto& t : tables) {
    for (const auto& [k, v] : t) {
      if (!out.emplace(k, v).second) fail("merge_tables: duplicate cell");
    }
  }
  return out;
}

double relative_drop(double baseline_acc, double attack_acc) {
  if (!(baseline_acc > 0)) fail("relative_drop: baseline accuracy must be positive");
  return (baseline_acc - attack_acc) / baseline_acc;
}

const DropCell& DropSummary::at(EmbeddingKind e, DetectorKind d, Backbone t) const {
  for (const auto& c : drops) {
    if (c.key.embedding == e && c.key.detector == d && c.key.transformer == t) return c;
  }
  fail("drop_summary: no such cell");
}

const DropRange& DropSummary::range(EmbeddingKind e, std::optional<Backbone> t) const {
  for (const auto& r : ranges) {
    if (r.embedding == e && r.transformer == t) return r;
  }
  fail("drop_summary: no such range");
}

json DropSummary::to_json() const {
  auto cell = [](const DropCell& c) {
    return json{{"embedding", embedding_name(c.key.embedding)},
                {"detector", detector_name(c.key.detector)},
                {"transformer", transformer_json(c.key.transformer)},
                {"baseline", c.baseline},
                {"attack", c.attack},
                {"drop", c.drop}};
  };
  json ds = json::array(), rs = json::array();
  for (const auto& c : drops) ds.push_back(cell(c));
  for (const auto& r : ranges) {
    rs.push_back({{"embedding", embedding_name(r.embedding)},
                  {"transformer", transformer_json(r.transformer)},
                  {"min", cell(r.min)},
                  {"max", cell(r.max)}});
  }
  return {{"drops", ds}, {"ranges", rs}};
}

DropSummary drop_summary(const AccuracyTable& baseline, const AccuracyTable& attack) {
  std::set<std::pair<EmbeddingKind, DetectorKind>> base_cells;
  for (const auto& [k, v] : baseline) {
    if (k.transformer) fail("drop_summary: baseline cells carry no transformer");
    base_cells.insert({k.embedding, k.detector});
  }
  std::map<Backbone, std::set<std::pair<EmbeddingKind, DetectorKind>>> attack_cells;
  for (const auto& [k, v] : attack) {
    if (!k.transformer) fail("drop_summary: attack cells need a transformer");
    attack_cells[*k.transformer].insert({k.embedding, k.detector});
  }
  if (attack_cells.empty()) fail("drop_summary: empty attack table");
  for (const auto& [t, cells] : attack_cells) {
    if (cells != base_cells) {
      fail(std::string("drop_summary: cell mismatch between baseline and ") + std::string(backbone_name(t)));
    }
  }

  DropSummary s;
  for (EmbeddingKind e : kAllEmbeddings) {
    for (Backbone t : {Backbone::T5Small, Backbone::Bart}) {
      if (!attack_cells.count(t)) continue;
      for (DetectorKind d : kAllDetectors) {
        if (!base_cells.count({e, d})) continue;
        const double b = baseline.at({e, d, std::nullopt});
        const double a = attack.at({e, d, t});
        s.drops.push_back({{e, d, t}, b, a, relative_drop(b, a)});
      }
    }
  }
  for (EmbeddingKind e : kAllEmbeddings) {
    std::vector<std::optional<Backbone>> scopes{std::nullopt};
    for (const auto& [t, cells] : attack_cells) scopes.emplace_back(t);
    for (const auto& scope : scopes) {
      const DropCell* lo = nullptr;
      const DropCell* hi = nullptr;
      for (const auto& c : s.drops) {
        if (c.key.embedding != e || (scope && c.key.transformer != scope)) continue;
        if (!lo || c.drop < lo->drop) lo = &c;
        if (!hi || c.drop > hi->drop) hi = &c;
      }
      if (lo) s.ranges.push_back({e, scope, *lo, *hi});
    }
  }
  return s;
}

fs::path default_data_dir() {
  if (const char* env = std::getenv("TEXTSHIFT_DATA_DIR"); env && *env) return env;
  return TEXTSHIFT_DATA_DIR;
}

PaperTables parse_paper_tables(const json& j) {
  auto block = [](const json& b, std::optional<Backbone> t, AccuracyTable& out) {
    for (const auto& [ename, row] : b.items()) {
      const auto e = parse_embedding(ename);
      if (!e) fail("paper tables: unknown embedding " + ename);
      for (const auto& [dname, acc] : row.items()) {
        const auto d = parse_detector(dname);
        if (!d) fail("paper tables: unknown detector " + dname);
        out[{*e, *d, t}] = acc.get<double>();
      }
    }
  };
  PaperTables p;
  block(j.at("baseline"), std::nullopt, p.baseline);
  for (const auto& [phase, table] : {std::pair{"attack", &p.attack}, std::pair{"retrain", &p.retrain}}) {
    for (const auto& [tname, b] : j.at(phase).items()) {
      const auto t = parse_backbone(tname);
      if (!t) fail("paper tables: unknown transformer " + tname);
      block(b, t, *table);
    }
  }
  return p;
}

PaperTables load_paper_tables(const fs::path& path) {
  if (!fs::exists(path)) throw Error(ErrorKind::MissingArtifact, "paper tables fixture not found: " + path.string());
  return parse_paper_tables(json::parse(read_file(path)));
}

LabelledTexts phase_partition(const Corpus& part, Phase phase, const std::optional<Corpus>& transformed) {
  if (phase != Phase::Baseline && !transformed) fail("phase_partition: transformed corpus required");
  std::unordered_map<std::string, const TextSample*> by_source;
  if (phase != Phase::Baseline) {
    for (const auto& s : transformed->samples()) {
      if (s.source_id) by_source.emplace(*s.source_id, &s);
    }
  }
  LabelledTexts out;
  std::size_t missing = 0;
  for (const auto& s : part.samples()) {
    if (s.label == Label::Human) {
      out.texts.push_back(s.text);
      out.labels.push_back(0);
    } else if (s.label == Label::Gpt) {
      if (phase == Phase::Baseline) {
        out.texts.push_back(s.text);
        out.labels.push_back(1);
      } else if (auto it = by_source.find(s.id); it != by_source.end()) {
        out.texts.push_back(it->second->text);
        out.labels.push_back(1);
      } else {
        ++missing;
      }
    }
  }
  if (missing) spdlog::warn("{} GPT samples have no transformed counterpart and were skipped", missing);
  Fnv1a h;
  for (std::size_t i = 0; i < out.texts.size(); ++i) {
    h.update(out.texts[i]).update_pod(out.labels[i]);
  }
  out.hash = h.hex();
  return out;
}

fs::path phase_dir(const fs::path& results_root, Phase phase, std::optional<Backbone> transformer) {
  fs::path p = results_root / phase_name(phase);
  if (transformer) p /= text::to_lower_ascii(backbone_name(*transformer));
  return p;
}

ExperimentReport load_report(const fs::path& results_root, Phase phase, std::optional<Backbone> transformer) {
  const fs::path path = phase_dir(results_root, phase, transformer) / "report.json";
  if (!fs::exists(path)) throw Error(ErrorKind::MissingArtifact, "no report at " + path.string());
  return ExperimentReport::from_json(json::parse(read_file(path)));
}

namespace {

struct FeatureSet {
  Features train;
  Features test;
};

Features document_features(const EmbeddingModel& m, const std::vector<std::string>& texts, const RunSettings& s) {
  Features f;
  f.dense.resize(static_cast<Eigen::Index>(texts.size()), m.dim());
  if (m.is_static()) {
    for (std::size_t i = 0; i < texts.size(); ++i) {
      f.dense.row(static_cast<Eigen::Index>(i)) = embed_document(m, texts[i]).values.transpose();
    }
  } else {
    const auto docs = bert_embed(*m.encoder(), texts, s.bert_max_len, s.bert_pooling);
    for (std::size_t i = 0; i < docs.size(); ++i) f.dense.row(static_cast<Eigen::Index>(i)) = docs[i].values.transpose();
  }
  return f;
}

Features sequence_features(const EmbeddingModel& m, const std::vector<std::string>& texts, const RunSettings& s) {
  Features f;
  for (const auto& t : texts) f.sequences.push_back(embed_sequence(m, t, s.sequence_length));
  return f;
}

std::string cell_label(const CellKey& k) {
  std::string s = std::string(embedding_name(k.embedding)) + "/" + std::string(detector_name(k.detector));
  if (k.transformer) s += "/" + std::string(backbone_name(*k.transformer));
  return s;
}

}  // namespace

ExperimentReport run_phase(const ExperimentPlan& plan, const PhaseInputs& inputs, const RunSettings& settings,
                           const fs::path& results_root) {
  plan.validate();
  const fs::path out_dir = phase_dir(results_root, plan.phase, plan.transformer);
  const fs::path base_dir = phase_dir(results_root, Phase::Baseline, std::nullopt);
  std::optional<ExperimentReport> baseline_report;
  if (plan.phase == Phase::Attack) {
    if (!fs::exists(base_dir / "report.json")) {
      throw Error(ErrorKind::MissingArtifact,
                  "attack phase needs baseline artifacts; run the baseline phase first (missing " +
                      (base_dir / "report.json").string() + ")");
    }
    baseline_report = load_report(results_root, Phase::Baseline, std::nullopt);
  }
  if (plan.phase != Phase::Baseline && !inputs.transformed) {
    throw Error(ErrorKind::MissingArtifact, std::string("no transformed corpus for ") +
                                                std::string(backbone_name(*plan.transformer)));
  }
  fs::create_directories(out_dir);

  ExperimentReport report;
  report.phase = plan.phase;
  report.transformer = plan.transformer;
  const std::string started = utc_now();

  const Phase train_phase = plan.phase == Phase::Attack ? Phase::Baseline : plan.phase;
  const LabelledTexts train = phase_partition(inputs.split.train, train_phase, inputs.transformed);
  const LabelledTexts test = phase_partition(inputs.split.test, plan.phase, inputs.transformed);
  json embedding_hashes = json::object();
  json detector_seeds = json::object();
  const bool want_sequences =
      std::find(plan.detectors.begin(), plan.detectors.end(), DetectorKind::LSTM) != plan.detectors.end();
  const bool want_documents =
      std::any_of(plan.detectors.begin(), plan.detectors.end(), [](DetectorKind d) { return !consumes_sequences(d); });

  for (EmbeddingKind emb : plan.embeddings) {
    const fs::path emb_dir = out_dir / embedding_name(emb);
    std::optional<EmbeddingModel> model;
    std::string resource_error;
    try {
      switch (emb) {
        case EmbeddingKind::Word2Vec: {
          if (plan.phase == Phase::Attack) {
            model = load_static_model(base_dir / "Word2Vec" / "embedding");
          } else {
            Word2VecParams p = settings.word2vec;
            p.seed = derive_seed(plan.seed, std::string("word2vec/") + std::string(phase_name(plan.phase)));
            model = train_word2vec(train.texts, p);
            save_static_model(*model, emb_dir / "embedding");
          }
          break;
        }
        case EmbeddingKind::Glove:
          if (!inputs.glove) throw Error(ErrorKind::MissingArtifact, "GloVe vectors not loaded");
          model = *inputs.glove;
          break;
        case EmbeddingKind::Bert:
          if (!inputs.encoder) throw Error(ErrorKind::Unavailable, "contextual encoder not loaded");
          model = EmbeddingModel::from_encoder(inputs.encoder);
          break;
      }
      embedding_hashes[std::string(embedding_name(emb))] = model->hash();
    } catch (const std::exception& e) {
      resource_error = e.what();
      spdlog::error("{}: embedding unavailable: {}", embedding_name(emb), resource_error);
    }

    FeatureSet docs, seqs;
    if (model) {
      if (want_documents) {
        if (plan.phase != Phase::Attack) docs.train = document_features(*model, train.texts, settings);
        docs.test = document_features(*model, test.texts, settings);
      }
      if (want_sequences) {
        if (plan.phase != Phase::Attack) seqs.train = sequence_features(*model, train.texts, settings);
        seqs.test = sequence_features(*model, test.texts, settings);
      }
    }

    for (DetectorKind det : plan.detectors) {
      CellResult cell;
      cell.key = {emb, det, plan.transformer};
      const fs::path cell_dir = emb_dir / detector_name(det);
      cell.model_dir = cell_dir.string();
      const std::uint64_t seed = derive_seed(plan.seed, "detector/" + cell_label({emb, det, std::nullopt}));
      detector_seeds[cell_label(cell.key)] = seed;
      try {
        if (!model) throw Error(ErrorKind::MissingArtifact, resource_error);
        const FeatureSet& fs_ = consumes_sequences(det) ? seqs : docs;
        DetectorModel dm;
        if (plan.phase == Phase::Attack) {
          const fs::path src = base_dir / embedding_name(emb) / detector_name(det);
          const std::string file_before = hash_file(src / "model.bin");
          dm = DetectorModel::load(src);
          const std::string before = dm.hash();
          const CellResult* b = baseline_report->find(emb, det);
          if (!b || b->model_hash != before) fail("baseline model hash does not match the baseline report");
          cell.eval = evaluate(dm, fs_.test, test.labels);
          if (dm.hash() != before || hash_file(src / "model.bin") != file_before) {
            fail("baseline model changed during the attack evaluation");
          }
          cell.model_dir = src.string();
        } else {
          dm = train_detector(det, fs_.train, train.labels, settings.hyperparams, seed, emb);
          dm.save(cell_dir);
          cell.eval = evaluate(dm, fs_.test, test.labels);
        }
        cell.model_hash = dm.hash();
        fs::create_directories(cell_dir);
        write_file_atomic(cell_dir / "eval.json", cell.eval->to_json().dump(2));
        spdlog::info("{} {}: accuracy {:.4f}", phase_name(plan.phase), cell_label(cell.key), cell.eval->accuracy);
      } catch (const std::exception& e) {
        cell.eval.reset();
        cell.error = e.what();
        spdlog::error("{} {} failed: {}", phase_name(plan.phase), cell_label(cell.key), cell.error);
      }
      report.cells.push_back(std::move(cell));
    }
  }

  report.provenance = {
      {"seed", plan.seed},
      {"config_hash", settings.config_hash},
      {"split", {{"train_ratio", plan.split.train_ratio}, {"seed", plan.split.seed}, {"per_class_n", plan.split.per_class_n}}},
      {"corpus_hashes",
       {{"train", inputs.split.train.content_hash()},
        {"test", inputs.split.test.content_hash()},
        {"transformed", inputs.transformed ? json(inputs.transformed->content_hash()) : json(nullptr)}}},
      {"train_set_hash", plan.phase == Phase::Attack ? json(nullptr) : json(train.hash)},
      {"test_set_hash", test.hash},
      {"embedding_hashes", embedding_hashes},
      {"detector_seeds", detector_seeds},
      {"hyperparams", settings.hyperparams.to_json()},
  };
  if (settings.record_timestamps) report.provenance["timestamps"] = {{"started", started}, {"finished", utc_now()}};
  write_file_atomic(out_dir / "report.json", report.to_json().dump(2));
  return report;
}

ExperimentReport run_baseline(const ExperimentPlan& plan, const PhaseInputs& inputs, const RunSettings& settings,
                              const fs::path& results_root) {
  if (plan.phase != Phase::Baseline) fail("run_baseline: plan phase is not BASELINE");
  return run_phase(plan, inputs, settings, results_root);
}

ExperimentReport run_attack(const ExperimentPlan& plan, const PhaseInputs& inputs, const RunSettings& settings,
                            const fs::path& results_root) {
  if (plan.phase != Phase::Attack) fail("run_attack: plan phase is not ATTACK");
  return run_phase(plan, inputs, settings, results_root);
}

ExperimentReport run_retrain(const ExperimentPlan& plan, const PhaseInputs& inputs, const RunSettings& settings,
                             const fs::path& results_root) {
  if (plan.phase != Phase::Retrain) fail("run_retrain: plan phase is not RETRAIN");
  return run_phase(plan, inputs, settings, results_root);
}

}  // namespace textshift
