#include "textshift/pipeline.hpp"

#include <algorithm>
#include <cstdlib>
#include <set>

#include <spdlog/fmt/fmt.h>
#include <spdlog/spdlog.h>

#include "textshift/common.hpp"
#include "textshift/contextual_encoder.hpp"
#include "textshift/rng.hpp"
#include "textshift/text.hpp"

namespace textshift {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string lower_name(Backbone b) { return text::to_lower_ascii(backbone_name(b)); }

fs::path resolve(const fs::path& p, const fs::path& base) {
  if (p.empty() || p.is_absolute() || base.empty()) return p;
  return base / p;
}

json word2vec_json(const Word2VecParams& p) {
  return {{"dim", p.dim},           {"window", p.window},       {"epochs", p.epochs},
          {"min_count", p.min_count}, {"negative", p.negative}, {"alpha", p.alpha},
          {"min_alpha", p.min_alpha}};
}

template <typename T>
void opt(const json& j, const char* key, T& field) {
  if (j.contains(key)) field = j.at(key).get<T>();
}

json provenance(const RunConfig& cfg, std::string_view stage, std::uint64_t stage_seed, json inputs, json outputs) {
  return {{"stage", stage},
          {"config_hash", cfg.hash()},
          {"seed", cfg.seed},
          {"stage_seed", stage_seed},
          {"inputs", std::move(inputs)},
          {"outputs", std::move(outputs)}};
}

json file_hashes(const fs::path& dir, const std::vector<std::string>& names) {
  json out = json::object();
  for (const auto& n : names) out[n] = hash_file(dir / n);
  return out;
}

std::vector<std::string> corpus_texts(const Corpus& c) {
  std::vector<std::string> t;
  t.reserve(c.size());
  for (const auto& s : c.samples()) t.push_back(s.text);
  return t;
}

std::string csv_number(double v) { return fmt::format("{:.17g}", v); }

}  // namespace

json RunConfig::to_json() const {
  json embs = json::array(), dets = json::array();
  for (auto e : embeddings) embs.push_back(embedding_name(e));
  for (auto d : detector_kinds) dets.push_back(detector_name(d));
  return {{"seed", seed},
          {"paths",
           {{"corpus", paths.corpus.string()},
            {"glove_vectors", paths.glove_vectors.string()},
            {"backbone_weights", paths.backbone_weights.string()},
            {"encoder_weights", paths.encoder_weights.string()},
            {"results_root", paths.results_root.string()}}},
          {"split", {{"train_ratio", split.train_ratio}, {"seed", split.seed}, {"per_class_n", split.per_class_n}}},
          {"humanizer", humanizer},
          {"decoding", decoding.to_json()},
          {"detectors", detectors.to_json()},
          {"word2vec", word2vec_json(word2vec)},
          {"glove_dim", glove_dim},
          {"sequence_length", sequence_length},
          {"bert_max_len", bert_max_len},
          {"transform_max_input_len", transform_max_input_len},
          {"finetune_pairs", finetune_pairs},
          {"embeddings", embs},
          {"detector_kinds", dets}};
}

RunConfig RunConfig::from_json(const json& j, const fs::path& base_dir) {
  static const std::set<std::string> known{"seed",           "paths",          "split",
                                           "humanizer",      "decoding",       "detectors",
                                           "word2vec",       "glove_dim",      "sequence_length",
                                           "bert_max_len",   "transform_max_input_len", "finetune_pairs",
                                           "embeddings",     "detector_kinds"};
  if (!j.is_object()) throw Error(ErrorKind::Config, "config: expected a JSON object");
  for (const auto& [k, v] : j.items()) {
    if (!known.count(k)) throw Error(ErrorKind::Config, "config: unknown field '" + k + "'");
  }
  RunConfig c;
  try {
    opt(j, "seed", c.seed);
    if (j.contains("paths")) {
      const auto& p = j.at("paths");
      auto path = [&](const char* key, fs::path& field) {
        if (p.contains(key)) field = resolve(p.at(key).get<std::string>(), base_dir);
      };
      path("corpus", c.paths.corpus);
      path("glove_vectors", c.paths.glove_vectors);
      path("backbone_weights", c.paths.backbone_weights);
      path("encoder_weights", c.paths.encoder_weights);
      path("results_root", c.paths.results_root);
    }
    if (j.contains("split")) {
      const auto& s = j.at("split");
      opt(s, "train_ratio", c.split.train_ratio);
      opt(s, "seed", c.split.seed);
      opt(s, "per_class_n", c.split.per_class_n);
    }
    if (j.contains("humanizer")) c.humanizer = j.at("humanizer");
    if (j.contains("decoding")) c.decoding = DecodingConfig::from_json(j.at("decoding"));
    if (j.contains("detectors")) c.detectors = DetectorHyperparams::from_json(j.at("detectors"));
    if (j.contains("word2vec")) {
      const auto& w = j.at("word2vec");
      opt(w, "dim", c.word2vec.dim);
      opt(w, "window", c.word2vec.window);
      opt(w, "epochs", c.word2vec.epochs);
      opt(w, "min_count", c.word2vec.min_count);
      opt(w, "negative", c.word2vec.negative);
      opt(w, "alpha", c.word2vec.alpha);
      opt(w, "min_alpha", c.word2vec.min_alpha);
    }
    opt(j, "glove_dim", c.glove_dim);
    opt(j, "sequence_length", c.sequence_length);
    opt(j, "bert_max_len", c.bert_max_len);
    opt(j, "transform_max_input_len", c.transform_max_input_len);
    opt(j, "finetune_pairs", c.finetune_pairs);
    if (j.contains("embeddings")) {
      c.embeddings.clear();
      for (const auto& e : j.at("embeddings")) {
        const auto k = parse_embedding(e.get<std::string>());
        if (!k) throw Error(ErrorKind::Config, "config: unknown embedding " + e.get<std::string>());
        c.embeddings.push_back(*k);
      }
    }
    if (j.contains("detector_kinds")) {
      c.detector_kinds.clear();
      for (const auto& d : j.at("detector_kinds")) {
        const auto k = parse_detector(d.get<std::string>());
        if (!k) throw Error(ErrorKind::Config, "config: unknown detector " + d.get<std::string>());
        c.detector_kinds.push_back(*k);
      }
    }
  } catch (const json::exception& e) {
    throw Error(ErrorKind::Config, std::string("config: ") + e.what());
  }
  if (!(c.split.train_ratio > 0 && c.split.train_ratio < 1)) {
    throw Error(ErrorKind::Config, "config: split.train_ratio must lie in (0, 1)");
  }
  if (c.glove_dim <= 0) throw Error(ErrorKind::Config, "config: glove_dim must be positive");
  c.humanizer_for(Backbone::T5Small);
  c.decoding.validate();
  return c;
}

RunConfig RunConfig::load(const fs::path& file) {
  if (!fs::exists(file)) throw Error(ErrorKind::Config, "config file not found: " + file.string());
  json j = json::parse(read_file(file), nullptr, false);
  if (j.is_discarded()) throw Error(ErrorKind::Config, "config file is not valid JSON: " + file.string());
  return from_json(j, file.parent_path());
}

std::string RunConfig::hash() const {
  json j = to_json();
  j["paths"].erase("results_root");
  return hash_hex(j.dump());
}

HumanizerConfig RunConfig::humanizer_for(Backbone b) const {
  json j = humanizer.is_object() ? humanizer : json::object();
  if (!humanizer.is_object()) throw Error(ErrorKind::Config, "config: humanizer must be an object");
  j["backbone"] = backbone_name(b);
  if (!j.contains("seed")) j["seed"] = derive_seed(seed, "finetune/" + lower_name(b));
  try {
    return HumanizerConfig::from_json(j);
  } catch (const json::exception& e) {
    throw Error(ErrorKind::Config, std::string("config: humanizer: ") + e.what());
  }
}

SplitSpec RunConfig::derived_split() const {
  SplitSpec s = split;
  if (s.seed == 0) s.seed = derive_seed(seed, "split");
  return s;
}

fs::path results_root(const RunConfig& cfg) {
  if (const char* env = std::getenv("TEXTSHIFT_RESULTS_ROOT"); env && *env) return env;
  return cfg.paths.results_root;
}

void validate_paths(const RunConfig& cfg, Stage stage) {
  auto need = [](const fs::path& p, const char* field) {
    if (p.empty()) throw Error(ErrorKind::Config, std::string("paths.") + field + " is not set");
    if (!fs::exists(p)) throw Error(ErrorKind::Config, std::string("paths.") + field + ": not found: " + p.string());
  };
  auto planned = [&](EmbeddingKind e) {
    return std::find(cfg.embeddings.begin(), cfg.embeddings.end(), e) != cfg.embeddings.end();
  };
  switch (stage) {
    case Stage::Prep: need(cfg.paths.corpus, "corpus"); break;
    case Stage::Finetune: need(cfg.paths.backbone_weights, "backbone_weights"); break;
    case Stage::Embed:
    case Stage::TrainDetector:
    case Stage::Run:
      if (planned(EmbeddingKind::Glove)) need(cfg.paths.glove_vectors, "glove_vectors");
      if (planned(EmbeddingKind::Bert)) need(cfg.paths.encoder_weights, "encoder_weights");
      break;
    case Stage::Transform:
    case Stage::Report: break;
  }
}

bool stamp_matches(const fs::path& dir, const Stamp& stamp) {
  const fs::path f = dir / "stamp.json";
  if (!fs::exists(f)) return false;
  const json j = json::parse(read_file(f), nullptr, false);
  return !j.is_discarded() && j.value("config_hash", "") == stamp.config_hash && j.value("inputs", json()) == stamp.inputs;
}

void write_stamp(const fs::path& dir, const Stamp& stamp) {
  fs::create_directories(dir);
  write_file_atomic(dir / "stamp.json", json{{"config_hash", stamp.config_hash}, {"inputs", stamp.inputs}}.dump(2));
}

// ---------------------------------------------------------------------------
// prep

PrepResult prep(const RunConfig& cfg, bool force) {
  validate_paths(cfg, Stage::Prep);
  const fs::path dir = results_root(cfg) / "prep";
  const Stamp stamp{cfg.hash(), {{"corpus", hash_file(cfg.paths.corpus)}}};
  if (!force && stamp_matches(dir, stamp) && fs::exists(dir / "train.jsonl") && fs::exists(dir / "test.jsonl")) {
    spdlog::info("prep: up to date, skipping (use --force to rerun)");
    PrepResult r{load_prepared(cfg), {}, true};
    r.stats = compute_stats(r.split.train.merged_with(r.split.test));
    return r;
  }
  LoadReport lr;
  const Corpus corpus = load_corpus(cfg.paths.corpus, format_from_path(cfg.paths.corpus), {}, &lr);
  const SplitSpec spec = cfg.derived_split();
  const Corpus sampled = balanced_sample(corpus, spec, {Label::Human, Label::Gpt});
  PrepResult r;
  r.split = split(sampled, spec);
  r.stats = compute_stats(corpus);

  fs::create_directories(dir);
  save_corpus(r.split.train, dir / "train.jsonl");
  save_corpus(r.split.test, dir / "test.jsonl");
  write_file_atomic(dir / "stats.json", json{{"corpus", r.stats.to_json()},
                                             {"train", compute_stats(r.split.train).to_json()},
                                             {"test", compute_stats(r.split.test).to_json()},
                                             {"accepted", lr.accepted},
                                             {"rejected", lr.rejected}}
                                            .dump(2));
  write_file_atomic(dir / "manifest.json",
                    json{{"train_ids", r.split.train.ids()},
                         {"test_ids", r.split.test.ids()},
                         {"split", {{"train_ratio", spec.train_ratio}, {"seed", spec.seed}, {"per_class_n", spec.per_class_n}}}}
                        .dump(2));
  write_file_atomic(dir / "provenance.json",
                    provenance(cfg, "prep", spec.seed, stamp.inputs,
                               file_hashes(dir, {"train.jsonl", "test.jsonl", "stats.json", "manifest.json"}))
                        .dump(2));
  write_stamp(dir, stamp);
  spdlog::info("prep: {} train / {} test samples", r.split.train.size(), r.split.test.size());
  return r;
}

TrainTest load_prepared(const RunConfig& cfg) {
  const fs::path dir = results_root(cfg) / "prep";
  if (!fs::exists(dir / "train.jsonl") || !fs::exists(dir / "test.jsonl")) {
    throw Error(ErrorKind::MissingArtifact, "no prepared split under " + dir.string() + "; run `textshift prep` first");
  }
  return {load_corpus(dir / "train.jsonl", CorpusFormat::Jsonl), load_corpus(dir / "test.jsonl", CorpusFormat::Jsonl)};
}

// ---------------------------------------------------------------------------
// embed / train-detector

namespace {

std::uint64_t plan_seed(const RunConfig& cfg) { return derive_seed(cfg.seed, "run"); }

RunSettings run_settings(const RunConfig& cfg) {
  RunSettings s;
  s.hyperparams = cfg.detectors;
  s.word2vec = cfg.word2vec;
  s.sequence_length = cfg.sequence_length;
  s.bert_max_len = cfg.bert_max_len;
  s.config_hash = cfg.hash();
  return s;
}

PhaseInputs base_inputs(const RunConfig& cfg, const std::vector<EmbeddingKind>& embeddings) {
  PhaseInputs in;
  in.split = load_prepared(cfg);
  auto planned = [&](EmbeddingKind e) { return std::find(embeddings.begin(), embeddings.end(), e) != embeddings.end(); };
  if (planned(EmbeddingKind::Glove)) {
    try {
      GloveLoadReport rep;
      in.glove = load_glove(cfg.paths.glove_vectors, cfg.glove_dim, &rep);
      if (rep.malformed || rep.dim_mismatch) {
        spdlog::warn("GloVe: skipped {} malformed and {} wrong-dimension lines", rep.malformed, rep.dim_mismatch);
      }
    } catch (const std::exception& e) {
      spdlog::error("GloVe vectors unavailable: {}", e.what());
    }
  }
  if (planned(EmbeddingKind::Bert)) {
    try {
      in.encoder = ContextualEncoder::load(cfg.paths.encoder_weights);
    } catch (const std::exception& e) {
      spdlog::error("contextual encoder unavailable: {}", e.what());
    }
  }
  return in;
}

}  // namespace

EmbedResult embed(const RunConfig& cfg, EmbeddingKind kind, bool force) {
  validate_paths(cfg, Stage::Embed);
  const TrainTest split = load_prepared(cfg);
  const fs::path dir = results_root(cfg) / "embed" / embedding_name(kind);
  json inputs{{"train", split.train.content_hash()}, {"test", split.test.content_hash()}};
  if (kind == EmbeddingKind::Glove) inputs["glove"] = hash_file(cfg.paths.glove_vectors);
  if (kind == EmbeddingKind::Bert) inputs["encoder"] = hash_file(cfg.paths.encoder_weights / "weights.bin");
  const Stamp stamp{cfg.hash(), inputs};
  if (!force && stamp_matches(dir, stamp)) {
    spdlog::info("embed {}: up to date, skipping", embedding_name(kind));
    return {dir, json::parse(read_file(dir / "provenance.json")).at("outputs").at("model_hash"), true};
  }

  std::optional<EmbeddingModel> model;
  const std::uint64_t w2v_seed = derive_seed(plan_seed(cfg), "word2vec/baseline");
  switch (kind) {
    case EmbeddingKind::Word2Vec: {
      Word2VecParams p = cfg.word2vec;
      p.seed = w2v_seed;
      model = train_word2vec(split.train, p);
      save_static_model(*model, dir / "model");
      break;
    }
    case EmbeddingKind::Glove: model = load_glove(cfg.paths.glove_vectors, cfg.glove_dim); break;
    case EmbeddingKind::Bert: model = EmbeddingModel::from_encoder(ContextualEncoder::load(cfg.paths.encoder_weights)); break;
  }
  fs::create_directories(dir);
  for (const auto& [name, part] : {std::pair{"train", &split.train}, std::pair{"test", &split.test}}) {
    std::string out = "id,label";
    for (int k = 0; k < model->dim(); ++k) out += ",v" + std::to_string(k);
    out += "\r\n";
    std::vector<DocumentVector> docs;
    if (model->is_static()) {
      for (const auto& s : part->samples()) docs.push_back(embed_document(*model, s.text));
    } else {
      docs = bert_embed(*model->encoder(), corpus_texts(*part), cfg.bert_max_len);
    }
    for (std::size_t i = 0; i < docs.size(); ++i) {
      const auto& s = part->samples()[i];
      out += text::csv_field(s.id) + "," + std::string(label_name(s.label));
      for (Eigen::Index k = 0; k < docs[i].values.size(); ++k) out += "," + csv_number(docs[i].values[k]);
      out += "\r\n";
    }
    write_file_atomic(dir / (std::string(name) + ".csv"), out);
  }
  const std::string model_hash = model->hash();
  write_file_atomic(dir / "provenance.json",
                    provenance(cfg, "embed", w2v_seed, inputs,
                               {{"model_hash", model_hash}, {"files", file_hashes(dir, {"train.csv", "test.csv"})}})
                        .dump(2));
  write_stamp(dir, stamp);
  return {dir, model_hash, false};
}

CellResult train_single_detector(const RunConfig& cfg, EmbeddingKind e, DetectorKind d) {
  validate_paths(cfg, Stage::TrainDetector);
  ExperimentPlan plan;
  plan.phase = Phase::Baseline;
  plan.embeddings = {e};
  plan.detectors = {d};
  plan.seed = plan_seed(cfg);
  plan.split = cfg.derived_split();
  const PhaseInputs in = base_inputs(cfg, plan.embeddings);
  const fs::path root = results_root(cfg) / "single";
  const ExperimentReport rep = run_phase(plan, in, run_settings(cfg), root);
  return rep.cells.front();
}

// ---------------------------------------------------------------------------
// finetune / transform

FinetuneResult finetune(const RunConfig& cfg, Backbone b, bool force) {
  validate_paths(cfg, Stage::Finetune);
  const HumanizerConfig hc = cfg.humanizer_for(b);
  const TrainTest split = load_prepared(cfg);
  PairingReport pr;
  std::vector<PairedExample> pairs = pair_examples(split.train.only(Label::Gpt), split.train.only(Label::Human), hc.prefix, &pr);
  if (!pr.dangling.empty()) spdlog::warn("finetune: {} GPT samples have no human source", pr.dangling.size());
  if (cfg.finetune_pairs > 0 && pairs.size() > cfg.finetune_pairs) pairs.resize(cfg.finetune_pairs);
  if (pairs.empty()) throw Error(ErrorKind::MissingArtifact, "finetune: no (GPT, human) pairs in the training split");

  const fs::path weights = cfg.paths.backbone_weights / lower_name(b);
  const fs::path root = results_root(cfg) / "finetune";
  const fs::path dir = root / lower_name(b);
  if (!fs::exists(weights / "weights.bin")) Seq2SeqModel::load(weights);  // throws with provisioning guidance
  const Stamp stamp{cfg.hash(), {{"pairs", pair_set_hash(pairs)}, {"backbone", hash_file(weights / "weights.bin")}}};
  if (!force && stamp_matches(dir, stamp) && fs::exists(dir / "trace.json")) {
    spdlog::info("finetune {}: up to date, skipping", backbone_name(b));
    return {TrainingTrace::from_json(json::parse(read_file(dir / "trace.json"))), best_checkpoint(dir), true};
  }
  if (fs::exists(dir)) fs::remove_all(dir);
  auto model = Seq2SeqModel::load(weights);
  FinetuneResult r;
  r.trace = fine_tune(*model, pairs, hc, root);
  r.best = best_checkpoint(dir);
  write_file_atomic(dir / "provenance.json",
                    provenance(cfg, "finetune", hc.seed, stamp.inputs,
                               {{"best_checkpoint", r.best.filename().string()},
                                {"weights", hash_file(r.best / "weights.bin")}})
                        .dump(2));
  write_stamp(dir, stamp);
  return r;
}

fs::path transformed_path(const RunConfig& cfg, Backbone b) {
  return results_root(cfg) / "transform" / lower_name(b) / "corpus.jsonl";
}

TransformResult transform(const RunConfig& cfg, Backbone b, bool force, const std::optional<fs::path>& checkpoint) {
  const HumanizerConfig hc = cfg.humanizer_for(b);
  const TrainTest split = load_prepared(cfg);
  const fs::path ckpt = checkpoint ? *checkpoint : best_checkpoint(results_root(cfg) / "finetune" / lower_name(b));
  if (!fs::exists(ckpt / "weights.bin")) {
    throw Error(ErrorKind::MissingArtifact, "no checkpoint at " + ckpt.string() + "; run `textshift finetune` first");
  }
  const Corpus gpt = split.train.only(Label::Gpt).merged_with(split.test.only(Label::Gpt));
  DecodingConfig dc = cfg.decoding;
  if (dc.seed == 0) dc.seed = derive_seed(cfg.seed, "transform/" + lower_name(b));

  const fs::path out = transformed_path(cfg, b);
  const fs::path dir = out.parent_path();
  const Stamp stamp{cfg.hash(), {{"gpt", gpt.content_hash()}, {"checkpoint", hash_file(ckpt / "weights.bin")}}};
  if (!force && stamp_matches(dir, stamp) && fs::exists(out)) {
    spdlog::info("transform {}: up to date, skipping", backbone_name(b));
    return {load_corpus(out, CorpusFormat::Jsonl), {}, out, true};
  }
  auto model = Seq2SeqModel::load(ckpt);
  TransformResult r;
  r.corpus = transform_corpus(*model, gpt, dc, transformed_label(b), hc.prefix, cfg.transform_max_input_len, &r.report);
  r.path = out;
  fs::create_directories(dir);
  save_corpus(r.corpus, out);
  write_file_atomic(dir / "provenance.json",
                    provenance(cfg, "transform", dc.seed, stamp.inputs,
                               {{"corpus.jsonl", hash_file(out)}, {"dropped", r.report.dropped_ids},
                                {"decoding", dc.to_json()}})
                        .dump(2));
  write_stamp(dir, stamp);
  spdlog::info("transform {}: {} samples written, {} dropped", backbone_name(b), r.corpus.size(), r.report.dropped);
  return r;
}

// ---------------------------------------------------------------------------
// run

RunResult run_stage(const RunConfig& cfg, Phase phase, std::optional<Backbone> transformer, bool force) {
  validate_paths(cfg, Stage::Run);
  ExperimentPlan plan;
  plan.phase = phase;
  plan.embeddings = cfg.embeddings;
  plan.detectors = cfg.detector_kinds;
  plan.transformer = transformer;
  plan.seed = plan_seed(cfg);
  plan.split = cfg.derived_split();
  plan.validate();

  const fs::path root = results_root(cfg);
  const fs::path dir = phase_dir(root, phase, transformer);
  if (phase == Phase::Attack && !fs::exists(phase_dir(root, Phase::Baseline, std::nullopt) / "report.json")) {
    throw Error(ErrorKind::MissingArtifact,
                "attack phase needs baseline artifacts; run `textshift run --phase baseline` first");
  }
  std::optional<Corpus> transformed;
  if (transformer) {
    const fs::path tp = transformed_path(cfg, *transformer);
    if (!fs::exists(tp)) {
      throw Error(ErrorKind::MissingArtifact, "no transformed corpus at " + tp.string() +
                                                  "; run `textshift transform --backbone " + lower_name(*transformer) +
                                                  "` first");
    }
    transformed = load_corpus(tp, CorpusFormat::Jsonl);
  }

  PhaseInputs in = base_inputs(cfg, plan.embeddings);
  in.transformed = transformed;
  json inputs{{"train", in.split.train.content_hash()}, {"test", in.split.test.content_hash()}};
  if (transformed) inputs["transformed"] = transformed->content_hash();
  if (in.glove) inputs["glove"] = in.glove->hash();
  if (in.encoder) inputs["encoder"] = in.encoder->hash();
  if (phase == Phase::Attack) inputs["baseline_report"] = hash_file(phase_dir(root, Phase::Baseline, std::nullopt) / "report.json");
  const Stamp stamp{cfg.hash(), inputs};
  if (!force && stamp_matches(dir, stamp) && fs::exists(dir / "report.json")) {
    spdlog::info("run {}: up to date, skipping", phase_name(phase));
    return {load_report(root, phase, transformer), true};
  }
  RunResult r{run_phase(plan, in, run_settings(cfg), root), false};
  write_stamp(dir, stamp);
  return r;
}

// ---------------------------------------------------------------------------
// report

namespace {

std::string caption_for(Phase p) {
  switch (p) {
    case Phase::Baseline: return "Baseline accuracies";
    case Phase::Attack: return "Accuracy on transformed text";
    case Phase::Retrain: return "Accuracy after retraining";
  }
  return "";
}

std::string extension(TableFormat f) {
  switch (f) {
    case TableFormat::Markdown: return ".md";
    case TableFormat::Csv: return ".csv";
    case TableFormat::Latex: return ".tex";
  }
  return ".txt";
}

}  // namespace

std::string render_paper_table(Phase phase, TableFormat format, const PaperTables& tables) {
  const AccuracyTable& t = phase == Phase::Baseline ? tables.baseline : phase == Phase::Attack ? tables.attack : tables.retrain;
  return render_table(t, format, caption_for(phase)).text;
}

ReportResult report_stage(const RunConfig& cfg, TableFormat format) {
  const fs::path root = results_root(cfg);
  const fs::path out = root / "report";
  fs::create_directories(out);
  ReportResult r;
  auto write = [&](const fs::path& rel, const std::string& content) {
    fs::create_directories((out / rel).parent_path());
    write_file_atomic(out / rel, content);
    r.written.push_back(out / rel);
  };

  std::map<Phase, std::vector<ExperimentReport>> reports;
  for (Phase p : {Phase::Baseline, Phase::Attack, Phase::Retrain}) {
    std::vector<std::optional<Backbone>> scopes;
    if (p == Phase::Baseline) {
      scopes = {std::nullopt};
    } else {
      scopes = {Backbone::T5Small, Backbone::Bart};
    }
    for (const auto& t : scopes) {
      if (fs::exists(phase_dir(root, p, t) / "report.json")) reports[p].push_back(load_report(root, p, t));
    }
    if (reports[p].empty()) {
      r.skipped_phases.emplace_back(phase_name(p));
      reports.erase(p);
    }
  }
  if (reports.empty()) throw Error(ErrorKind::MissingArtifact, "no experiment reports under " + root.string());

  std::map<Phase, AccuracyTable> tables;
  for (const auto& [p, reps] : reports) {
    std::vector<AccuracyTable> parts;
    for (const auto& rep : reps) parts.push_back(accuracy_table(rep));
    tables[p] = merge_tables(parts);
    write(std::string(phase_name(p)) + extension(format), render_table(tables[p], format, caption_for(p)).text);
    for (const auto& rep : reps) {
      for (const auto& c : rep.cells) {
        if (!c.eval) continue;
        fs::path rel = fs::path("confusion") / phase_name(p);
        if (rep.transformer) rel /= lower_name(*rep.transformer);
        const std::string stem = std::string(embedding_name(c.key.embedding)) + "_" + std::string(detector_name(c.key.detector));
        const auto art = render_confusion(*c.eval, rep.transformer ? label_name(transformed_label(*rep.transformer)) : "GPT");
        write(rel / (stem + ".csv"), art.csv);
        write(rel / (stem + ".json"), art.plot.dump(2));
      }
    }
  }
  if (tables.count(Phase::Baseline)) {
    for (Phase p : {Phase::Attack, Phase::Retrain}) {
      if (!tables.count(p)) continue;
      try {
        write(fs::path("bars_") += std::string(phase_name(p)) + ".json",
              render_bars(tables[Phase::Baseline], tables[p], std::string(phase_name(p))).to_json().dump(2));
      } catch (const std::exception& e) {
        spdlog::warn("report: no bar data for {}: {}", phase_name(p), e.what());
      }
    }
    if (tables.count(Phase::Attack)) {
      try {
        write("drops.json", drop_summary(tables[Phase::Baseline], tables[Phase::Attack]).to_json().dump(2));
      } catch (const std::exception& e) {
        spdlog::warn("report: no drop summary: {}", e.what());
      }
    }
  }
  write("provenance.json",
        provenance(cfg, "report", cfg.seed, json::object(), json{{"format", table_format_name(format)}}).dump(2));
  return r;
}

// ---------------------------------------------------------------------------
// provisioning

std::string provision_backbone(const fs::path& dir, Backbone b, const std::vector<std::string>& texts,
                               BackboneProvision spec, std::uint64_t seed, const std::string& prefix) {
  if (texts.empty()) throw Error(ErrorKind::InvalidInput, "provision backbone: no texts");
  const std::vector<std::string> always{prefix};
  Vocabulary vocab = Vocabulary::build(texts, spec.min_count, spec.max_words, true, always);
  spec.architecture.kind = b;
  Seq2SeqModel model(std::move(vocab), spec.architecture, derive_seed(seed, "backbone-init/" + lower_name(b)));
  if (spec.pretrain.seed == 0) spec.pretrain.seed = derive_seed(seed, "backbone-pretrain/" + lower_name(b));
  double loss = 0.0;
  if (spec.pretrain.steps > 0) loss = pretrain_denoising(model, texts, spec.pretrain);
  model.save(dir);
  Fnv1a h;
  for (const auto& t : texts) h.update(t).update("\n");
  write_file_atomic(dir / "provision.json", json{{"backbone", backbone_name(b)},
                                                 {"texts_hash", h.hex()},
                                                 {"seed", seed},
                                                 {"pretrain_steps", spec.pretrain.steps},
                                                 {"pretrain_noise", spec.pretrain.noise},
                                                 {"pretrain_loss", loss},
                                                 {"vocab_size", model.vocab().size()}}
                                                .dump(2));
  return model.hash();
}

std::string provision_encoder(const fs::path& dir, const std::vector<std::string>& texts, EncoderConfig cfg,
                              std::uint64_t seed) {
  if (texts.empty()) throw Error(ErrorKind::InvalidInput, "provision encoder: no texts");
  Vocabulary vocab = Vocabulary::build(texts, 1, 0, true);
  ContextualEncoder enc(std::move(vocab), cfg, derive_seed(seed, "encoder-init"));
  enc.save(dir);
  return enc.hash();
}

std::string provision_glove(const fs::path& file, const std::vector<std::string>& texts, int dim, std::uint64_t seed) {
  if (dim <= 0) throw Error(ErrorKind::InvalidInput, "provision glove: dim must be positive");
  std::set<std::string> vocab;
  for (const auto& t : texts) {
    for (auto& tok : embedding_tokens(t)) vocab.insert(std::move(tok));
  }
  std::vector<std::string> tokens(vocab.begin(), vocab.end());
  Eigen::MatrixXd vectors(static_cast<Eigen::Index>(tokens.size()), dim);
  const double scale = 1.0 / std::sqrt(static_cast<double>(dim));
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    Rng rng(derive_seed(seed, "glove/" + tokens[i]));
    for (int k = 0; k < dim; ++k) vectors(static_cast<Eigen::Index>(i), k) = scale * rng.normal();
  }
  const EmbeddingModel model = EmbeddingModel::from_vectors(EmbeddingKind::Glove, std::move(tokens), std::move(vectors));
  if (file.has_parent_path()) fs::create_directories(file.parent_path());
  write_file_atomic(file, to_glove_text(model));
  return model.hash();
}

}  // namespace textshift
