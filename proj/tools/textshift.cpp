#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "textshift/common.hpp"
#include "textshift/contextual_encoder.hpp"
#include "textshift/pipeline.hpp"
#include "textshift/text.hpp"
#include "textshift/toy_corpus.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace textshift;

namespace {

constexpr int kOk = 0;
constexpr int kConfigError = 2;
constexpr int kMissingArtifact = 3;
constexpr int kPartialFailure = 4;

struct Common {
  std::string config;
  bool force = false;
  std::optional<std::uint64_t> seed;
  std::string results_root;
};

void add_common(CLI::App* cmd, Common& c, bool with_force = true) {
  cmd->add_option("-c,--config", c.config, "run configuration JSON")->required();
  cmd->add_option("--seed", c.seed, "override the global seed");
  cmd->add_option("--results-root", c.results_root, "override paths.results_root");
  if (with_force) cmd->add_flag("--force", c.force, "rerun even when outputs are up to date");
}

RunConfig load_config(const Common& c) {
  RunConfig cfg = RunConfig::load(c.config);
  if (c.seed) cfg.seed = *c.seed;
  if (!c.results_root.empty()) cfg.paths.results_root = c.results_root;
  return cfg;
}

template <typename T, typename Parse>
T parse_or_config_error(const std::string& value, Parse parse, const char* what) {
  const auto v = parse(value);
  if (!v) throw Error(ErrorKind::Config, std::string("unknown ") + what + " '" + value + "'");
  return *v;
}

std::vector<std::string> corpus_texts(const fs::path& path) {
  const Corpus c = load_corpus(path, format_from_path(path));
  std::vector<std::string> texts;
  for (const auto& s : c.samples()) texts.push_back(s.text);
  return texts;
}

void print(const json& j) { std::cout << j.dump(2) << "\n"; }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"textshift: machine-text detectors versus seq2seq humanizers"};
  app.require_subcommand(1);
  bool verbose = false;
  app.add_flag("-v,--verbose", verbose, "debug logging");

  Common prep_o, embed_o, det_o, ft_o, tr_o, run_o, rep_o;
  std::string embedding_s, detector_s, backbone_s, phase_s, transformer_s, format_s = "markdown", checkpoint_s;
  bool paper = false;

  auto* prep_cmd = app.add_subcommand("prep", "balanced sample, split and corpus statistics");
  add_common(prep_cmd, prep_o);

  auto* embed_cmd = app.add_subcommand("embed", "document vectors of the prepared split");
  add_common(embed_cmd, embed_o);
  embed_cmd->add_option("-e,--embedding", embedding_s, "Word2Vec | GloVe | BERT")->required();

  auto* det_cmd = app.add_subcommand("train-detector", "train and evaluate one baseline detector");
  add_common(det_cmd, det_o, false);
  det_cmd->add_option("-e,--embedding", embedding_s)->required();
  det_cmd->add_option("-d,--detector", detector_s, "LR | RF | XGB | MLP | DNN | LSTM")->required();

  auto* ft_cmd = app.add_subcommand("finetune", "fine-tune a humanizer backbone on (GPT, human) pairs");
  add_common(ft_cmd, ft_o);
  ft_cmd->add_option("-b,--backbone", backbone_s, "t5small | bart")->required();

  auto* tr_cmd = app.add_subcommand("transform", "rewrite the GPT samples with a fine-tuned humanizer");
  add_common(tr_cmd, tr_o);
  tr_cmd->add_option("-b,--backbone", backbone_s)->required();
  tr_cmd->add_option("--checkpoint", checkpoint_s, "checkpoint directory (default: best epoch)");

  auto* run_cmd = app.add_subcommand("run", "run an experiment phase");
  add_common(run_cmd, run_o);
  run_cmd->add_option("-p,--phase", phase_s, "baseline | attack | retrain | all")->required();
  run_cmd->add_option("-t,--transformer", transformer_s, "t5small | bart (attack and retrain)");

  auto* rep_cmd = app.add_subcommand("report", "tables, drop summary, bar and confusion data");
  rep_cmd->add_option("-c,--config", rep_o.config, "run configuration JSON");
  rep_cmd->add_option("--results-root", rep_o.results_root);
  rep_cmd->add_option("-f,--format", format_s, "markdown | csv | latex");
  rep_cmd->add_flag("--paper", paper, "render the shipped published tables instead of local results");
  rep_cmd->add_option("--phase", phase_s, "with --paper: which table (default baseline)");

  auto* prov_cmd = app.add_subcommand("provision", "create local stand-ins for pretrained resources");
  prov_cmd->require_subcommand(1);
  std::string prov_corpus, prov_out;
  std::uint64_t prov_seed = 1;
  int glove_dim = 50, pretrain_steps = 600;
  auto* prov_backbone = prov_cmd->add_subcommand("backbone", "initialize and warm-start a seq2seq backbone");
  auto* prov_encoder = prov_cmd->add_subcommand("encoder", "initialize a contextual encoder");
  auto* prov_glove = prov_cmd->add_subcommand("glove", "write a GloVe-format vector file");
  for (auto* c : {prov_backbone, prov_encoder, prov_glove}) {
    c->add_option("--corpus", prov_corpus, "texts that define the vocabulary")->required();
    c->add_option("-o,--out", prov_out, "output directory (file for glove)")->required();
    c->add_option("--seed", prov_seed);
  }
  prov_backbone->add_option("-b,--backbone", backbone_s)->required();
  prov_backbone->add_option("--pretrain-steps", pretrain_steps, "denoising warm-start steps");
  prov_glove->add_option("--dim", glove_dim);

  auto* toy_cmd = app.add_subcommand("make-toy", "write a synthetic paired corpus");
  ToyCorpusSpec toy;
  std::string toy_out;
  toy_cmd->add_option("-o,--out", toy_out, "JSONL output")->required();
  toy_cmd->add_option("--per-class", toy.per_class);
  toy_cmd->add_option("--seed", toy.seed);
  toy_cmd->add_option("--style-mix", toy.style_mix);
  toy_cmd->add_option("--id-prefix", toy.id_prefix);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kConfigError;
  }
  spdlog::set_default_logger(spdlog::stderr_color_mt("textshift"));
  spdlog::set_level(verbose ? spdlog::level::debug : spdlog::level::info);

  try {
    if (*prep_cmd) {
      const auto r = prep(load_config(prep_o), prep_o.force);
      print({{"skipped", r.skipped}, {"train", r.split.train.size()}, {"test", r.split.test.size()},
             {"stats", r.stats.to_json()}});
      return kOk;
    }
    if (*embed_cmd) {
      const auto e = parse_or_config_error<EmbeddingKind>(embedding_s, parse_embedding, "embedding");
      const auto r = embed(load_config(embed_o), e, embed_o.force);
      print({{"dir", r.dir.string()}, {"model_hash", r.model_hash}, {"skipped", r.skipped}});
      return kOk;
    }
    if (*det_cmd) {
      const auto e = parse_or_config_error<EmbeddingKind>(embedding_s, parse_embedding, "embedding");
      const auto d = parse_or_config_error<DetectorKind>(detector_s, parse_detector, "detector");
      const auto cell = train_single_detector(load_config(det_o), e, d);
      print({{"model_dir", cell.model_dir},
             {"model_hash", cell.model_hash},
             {"eval", cell.eval ? cell.eval->to_json() : json(nullptr)},
             {"error", cell.error}});
      return cell.eval ? kOk : kPartialFailure;
    }
    if (*ft_cmd) {
      const auto b = parse_or_config_error<Backbone>(backbone_s, parse_backbone, "backbone");
      const auto r = finetune(load_config(ft_o), b, ft_o.force);
      print({{"trace", r.trace.to_json()}, {"best_checkpoint", r.best.string()}, {"skipped", r.skipped}});
      return kOk;
    }
    if (*tr_cmd) {
      const auto b = parse_or_config_error<Backbone>(backbone_s, parse_backbone, "backbone");
      std::optional<fs::path> ckpt;
      if (!checkpoint_s.empty()) ckpt = checkpoint_s;
      const auto r = transform(load_config(tr_o), b, tr_o.force, ckpt);
      print({{"path", r.path.string()}, {"samples", r.corpus.size()}, {"dropped", r.report.dropped},
             {"skipped", r.skipped}});
      return kOk;
    }
    if (*run_cmd) {
      const RunConfig cfg = load_config(run_o);
      std::vector<std::pair<Phase, std::optional<Backbone>>> jobs;
      if (text::to_lower_ascii(phase_s) == "all") {
        for (const auto& plan : full_plan(0, cfg.split)) jobs.emplace_back(plan.phase, plan.transformer);
      } else {
        const auto p = parse_or_config_error<Phase>(phase_s, parse_phase, "phase");
        std::optional<Backbone> t;
        if (!transformer_s.empty()) t = parse_or_config_error<Backbone>(transformer_s, parse_backbone, "transformer");
        if ((p == Phase::Baseline) != !t) {
          throw Error(ErrorKind::Config, p == Phase::Baseline ? "the baseline phase takes no --transformer"
                                                              : "attack and retrain need --transformer");
        }
        jobs.emplace_back(p, t);
      }
      json out = json::array();
      std::size_t failed = 0;
      for (const auto& [p, t] : jobs) {
        const auto r = run_stage(cfg, p, t, run_o.force);
        failed += r.report.failed_cells();
        out.push_back({{"phase", phase_name(p)},
                       {"transformer", t ? json(backbone_name(*t)) : json(nullptr)},
                       {"cells", r.report.cells.size()},
                       {"failed", r.report.failed_cells()},
                       {"skipped", r.skipped}});
      }
      print(out);
      return failed ? kPartialFailure : kOk;
    }
    if (*rep_cmd) {
      const auto f = parse_or_config_error<TableFormat>(format_s, parse_table_format, "format");
      if (paper) {
        const Phase p = phase_s.empty() ? Phase::Baseline : parse_or_config_error<Phase>(phase_s, parse_phase, "phase");
        std::cout << render_paper_table(p, f, load_paper_tables());
        return kOk;
      }
      if (rep_o.config.empty()) throw Error(ErrorKind::Config, "report needs --config (or --paper)");
      const auto r = report_stage(load_config(rep_o), f);
      json files = json::array();
      for (const auto& w : r.written) files.push_back(w.string());
      print({{"written", files}, {"missing_phases", r.skipped_phases}});
      return kOk;
    }
    if (*prov_cmd) {
      const auto texts = corpus_texts(prov_corpus);
      std::string hash;
      if (*prov_backbone) {
        const auto b = parse_or_config_error<Backbone>(backbone_s, parse_backbone, "backbone");
        BackboneProvision spec;
        spec.pretrain.steps = pretrain_steps;
        hash = provision_backbone(prov_out, b, texts, spec, prov_seed);
      } else if (*prov_encoder) {
        hash = provision_encoder(prov_out, texts, EncoderConfig{}, prov_seed);
      } else {
        hash = provision_glove(prov_out, texts, glove_dim, prov_seed);
      }
      print({{"out", prov_out}, {"hash", hash}});
      return kOk;
    }
    if (*toy_cmd) {
      const Corpus c = make_toy_corpus(toy);
      save_corpus(c, toy_out);
      print({{"out", toy_out}, {"samples", c.size()}, {"hash", c.content_hash()}});
      return kOk;
    }
  } catch (const Error& e) {
    spdlog::error("{}", e.what());
    switch (e.kind()) {
      case ErrorKind::Config:
      case ErrorKind::InvalidInput: return kConfigError;
      case ErrorKind::MissingArtifact:
      case ErrorKind::Unavailable: return kMissingArtifact;
    }
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return 1;
  }
  return kOk;
}
