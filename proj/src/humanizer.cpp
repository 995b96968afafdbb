#include "textshift/humanizer.hpp"

#include <algorithm>
#include <cmath>

#include <spdlog/spdlog.h>

#include "textshift/common.hpp"
#include "textshift/rng.hpp"
#include "textshift/text.hpp"

namespace textshift {

namespace fs = std::filesystem;
using ag::Var;
using nlohmann::json;

void HumanizerConfig::validate(const BackboneConfig& backbone_cfg) const {
  if (max_len < 2) throw Error(ErrorKind::Config, "humanizer: max_len must be at least 2");
  if (backbone_cfg.kind == Backbone::Bart && max_len > backbone_cfg.max_positions) {
    throw Error(ErrorKind::Config, "humanizer: max_len " + std::to_string(max_len) + " exceeds positional limit " +
                                       std::to_string(backbone_cfg.max_positions));
  }
  if (label_smoothing_eps < 0 || label_smoothing_eps >= 1) {
    throw Error(ErrorKind::Config, "humanizer: label_smoothing_eps must be in [0,1)");
  }
  if (max_epochs < 1) throw Error(ErrorKind::Config, "humanizer: max_epochs must be at least 1");
  if (batch_size < 1 || grad_accum < 1) throw Error(ErrorKind::Config, "humanizer: batch sizes must be positive");
  if (peak_lr <= 0) throw Error(ErrorKind::Config, "humanizer: peak_lr must be positive");
  if (warmup_steps < 0) throw Error(ErrorKind::Config, "humanizer: warmup_steps must be non-negative");
  if (early_stop_patience < 1) throw Error(ErrorKind::Config, "humanizer: early_stop_patience must be positive");
  if (eval_fraction < 0 || eval_fraction >= 1) throw Error(ErrorKind::Config, "humanizer: eval_fraction in [0,1)");
}

json HumanizerConfig::to_json() const {
  return {{"backbone", backbone_name(backbone)},
          {"max_len", max_len},
          {"max_epochs", max_epochs},
          {"label_smoothing_eps", label_smoothing_eps},
          {"warmup_steps", warmup_steps},
          {"peak_lr", peak_lr},
          {"batch_size", batch_size},
          {"grad_accum", grad_accum},
          {"weight_decay", weight_decay},
          {"max_grad_norm", max_grad_norm},
          {"fp16", fp16},
          {"early_stop_patience", early_stop_patience},
          {"eval_fraction", eval_fraction},
          {"prefix", prefix},
          {"seed", seed}};
}

HumanizerConfig HumanizerConfig::from_json(const json& j) {
  HumanizerConfig c;
  if (j.contains("backbone")) {
    const auto b = parse_backbone(j.at("backbone").get<std::string>());
    if (!b) throw Error(ErrorKind::Config, "unknown backbone " + j.at("backbone").get<std::string>());
    c.backbone = *b;
    c.peak_lr = default_peak_lr(c.backbone);
  }
  auto opt = [&](const char* key, auto& field) {
    if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
  };
  opt("max_len", c.max_len);
  opt("max_epochs", c.max_epochs);
  opt("label_smoothing_eps", c.label_smoothing_eps);
  opt("warmup_steps", c.warmup_steps);
  opt("peak_lr", c.peak_lr);
  opt("batch_size", c.batch_size);
  opt("grad_accum", c.grad_accum);
  opt("weight_decay", c.weight_decay);
  opt("max_grad_norm", c.max_grad_norm);
  opt("fp16", c.fp16);
  opt("early_stop_patience", c.early_stop_patience);
  opt("eval_fraction", c.eval_fraction);
  opt("prefix", c.prefix);
  opt("seed", c.seed);
  return c;
}

json TrainingTrace::to_json() const {
  json ep = json::array();
  for (const auto& e : epochs) {
    ep.push_back({{"epoch", e.epoch},
                  {"train_loss", e.train_loss},
                  {"eval_loss", e.eval_loss},
                  {"checkpoint_path", e.checkpoint_path}});
  }
  return {{"epochs", ep},
          {"stopped_epoch", stopped_epoch},
          {"stop_reason", stop_reason == StopReason::EarlyStop ? "EARLY_STOP" : "MAX_EPOCHS"},
          {"best_epoch", best_epoch},
          {"precision", precision},
          {"optimizer_steps", optimizer_steps}};
}

TrainingTrace TrainingTrace::from_json(const json& j) {
  TrainingTrace t;
  for (const auto& e : j.at("epochs")) {
    t.epochs.push_back({e.at("epoch").get<int>(), e.at("train_loss").get<double>(), e.at("eval_loss").get<double>(),
                        e.at("checkpoint_path").get<std::string>()});
  }
  t.stopped_epoch = j.at("stopped_epoch").get<int>();
  t.stop_reason = j.at("stop_reason") == "EARLY_STOP" ? StopReason::EarlyStop : StopReason::MaxEpochs;
  t.best_epoch = j.at("best_epoch").get<int>();
  t.precision = j.at("precision").get<std::string>();
  t.optimizer_steps = j.at("optimizer_steps").get<int>();
  return t;
}

double label_smoothed_ce(const Eigen::MatrixXd& logits, std::span<const int> targets,
                         std::span<const unsigned char> keep, double eps) {
  if (eps < 0 || eps >= 1) fail("label_smoothed_ce: eps must be in [0,1)");
  if (static_cast<std::size_t>(logits.rows()) != targets.size() || targets.size() != keep.size()) {
    fail("label_smoothed_ce: logits, targets and mask must agree in length");
  }
  std::vector<double> weights(keep.size());
  double active = 0;
  for (std::size_t i = 0; i < keep.size(); ++i) {
    weights[i] = keep[i] ? 1.0 : 0.0;
    active += weights[i];
    if (keep[i] && (targets[i] < 0 || targets[i] >= logits.cols())) fail("label_smoothed_ce: target out of range");
  }
  if (active == 0) fail("label_smoothed_ce: every target position is padding");
  ag::Graph g(false);
  return ag::smoothed_cross_entropy(g.constant(logits), targets, weights, eps)->value(0, 0) / active;
}

double lr_multiplier(int step, int warmup, int total) {
  if (warmup <= 0 || warmup >= total) fail("lr_multiplier: need 0 < warmup < total");
  if (step < 0 || step > total) fail("lr_multiplier: step outside [0, total]");
  if (step <= warmup) return static_cast<double>(step) / warmup;
  return static_cast<double>(total - step) / (total - warmup);
}

bool EarlyStopping::update(double loss) {
  improved_ = !seen_ || loss < best_;
  if (improved_) {
    best_ = loss;
    seen_ = true;
    stale_ = 0;
    return false;
  }
  return ++stale_ >= patience_;
}

std::string pair_set_hash(std::span<const PairedExample> pairs) {
  Fnv1a h;
  for (const auto& p : pairs) {
    h.update(p.input).update("\x1f").update(p.target).update("\x1f").update(p.gpt_id).update("\x1f").update(p.human_id);
    h.update("\x1e");
  }
  return h.hex();
}

namespace {

struct Example {
  std::vector<int> src;
  std::vector<unsigned char> src_valid;
  std::vector<int> tgt;
  std::vector<unsigned char> tgt_valid;
};

Example from_ids(std::vector<int> src, std::vector<int> tgt, std::size_t max_len) {
  auto finish = [&](std::vector<int>& ids, std::vector<unsigned char>& valid) {
    if (ids.size() + 1 > max_len) ids.resize(max_len - 1);
    ids.push_back(Vocabulary::kEos);
    valid.assign(ids.size(), 1);
  };
  Example e;
  e.src = std::move(src);
  e.tgt = std::move(tgt);
  finish(e.src, e.src_valid);
  finish(e.tgt, e.tgt_valid);
  return e;
}

Example encode_pair(const Vocabulary& vocab, const PairedExample& p, std::size_t max_len) {
  return from_ids(vocab.to_ids(p.input), vocab.to_ids(p.target), max_len);
}

// Pads every example of a micro-batch to the longest source and target.
std::vector<Example> pad_batch(std::vector<Example> batch) {
  std::size_t ls = 0, lt = 0;
  for (const auto& e : batch) {
    ls = std::max(ls, e.src.size());
    lt = std::max(lt, e.tgt.size());
  }
  for (auto& e : batch) {
    e.src.resize(ls, Vocabulary::kPad);
    e.src_valid.resize(ls, 0);
    e.tgt.resize(lt, Vocabulary::kPad);
    e.tgt_valid.resize(lt, 0);
  }
  return batch;
}

std::size_t target_tokens(const Example& e) {
  return static_cast<std::size_t>(std::count(e.tgt_valid.begin(), e.tgt_valid.end(), 1));
}

// Summed smoothed cross-entropy over the example's target tokens.
Var example_loss(ag::Graph& g, const Seq2SeqModel& model, const Example& e, double eps) {
  std::vector<int> dec_in(e.tgt.size());
  dec_in[0] = Vocabulary::kBos;
  std::copy(e.tgt.begin(), e.tgt.end() - 1, dec_in.begin() + 1);
  std::vector<double> weights(e.tgt_valid.begin(), e.tgt_valid.end());
  const Var memory = model.encode(g, e.src, e.src_valid);
  return ag::smoothed_cross_entropy(model.decode_logits(g, memory, e.src_valid, dec_in), e.tgt, weights, eps);
}

// Token-weighted mean loss without gradient tracking.
double mean_loss(const Seq2SeqModel& model, std::span<const Example> examples, double eps) {
  double total = 0;
  std::size_t tokens = 0;
  for (const auto& e : examples) {
    ag::Graph g(false);
    total += example_loss(g, model, e, eps)->value(0, 0);
    tokens += target_tokens(e);
  }
  return tokens ? total / static_cast<double>(tokens) : 0.0;
}

// One optimizer update over `group` (already split into micro-batches).
double accumulate_group(Seq2SeqModel& model, const std::vector<std::vector<Example>>& group, double eps,
                        std::size_t* tokens_out) {
  std::size_t tokens = 0;
  for (const auto& mb : group) {
    for (const auto& e : mb) tokens += target_tokens(e);
  }
  double total = 0;
  for (const auto& mb : group) {
    ag::Graph g(true);
    std::vector<Var> losses;
    for (const auto& e : mb) losses.push_back(example_loss(g, model, e, eps));
    Var sum = losses.size() == 1 ? losses.front() : ag::sum_all(ag::concat_rows(losses));
    total += sum->value(0, 0);
    g.backward(ag::scale(sum, 1.0 / static_cast<double>(tokens)));
  }
  *tokens_out = tokens;
  return total;
}

void save_checkpoint(const Seq2SeqModel& model, const fs::path& dir, const json& meta) {
  const fs::path tmp = dir.string() + ".tmp";
  fs::remove_all(tmp);
  model.save(tmp);
  write_file_atomic(tmp / "config.json", meta.dump(2));
  fs::remove_all(dir);
  fs::rename(tmp, dir);
}

}  // namespace

TrainingTrace fine_tune(Seq2SeqModel& model, std::span<const PairedExample> pairs, const HumanizerConfig& cfg,
                        const fs::path& checkpoint_root) {
  cfg.validate(model.config());
  if (pairs.empty()) fail("fine_tune: no training pairs");
  if (cfg.backbone != model.config().kind) {
    throw Error(ErrorKind::Config, std::string("fine_tune: config names ") + std::string(backbone_name(cfg.backbone)) +
                                       " but the loaded backbone is " +
                                       std::string(backbone_name(model.config().kind)));
  }
  const auto max_len = static_cast<std::size_t>(cfg.max_len);

  std::vector<Example> all;
  std::size_t unknown = 0, seen = 0;
  for (const auto& p : pairs) {
    all.push_back(encode_pair(model.vocab(), p, max_len));
    for (int id : all.back().tgt) {
      unknown += static_cast<std::size_t>(id == Vocabulary::kUnk);
      ++seen;
    }
  }
  if (2 * unknown > seen) {
    throw Error(ErrorKind::Config, "fine_tune: most target tokens are unknown to the backbone vocabulary "
                                   "(tokenizer/backbone mismatch)");
  }

  Rng rng(derive_seed(cfg.seed, "fine-tune"));
  std::vector<std::size_t> order(all.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  rng.shuffle(std::span<std::size_t>(order));
  std::size_t n_eval = all.size() >= 10 ? static_cast<std::size_t>(std::llround(cfg.eval_fraction * all.size())) : 0;
  std::vector<Example> eval_set, train_set;
  for (std::size_t i = 0; i < order.size(); ++i) (i < n_eval ? eval_set : train_set).push_back(all[order[i]]);

  TrainingTrace trace;
  trace.precision = "float64";
  if (cfg.fp16) {
    spdlog::warn("fine_tune: FP16 requested but the CPU backend has no half-precision path; training in float64");
    trace.precision = "float64 (fp16 requested, unavailable)";
  }

  const std::size_t micro = static_cast<std::size_t>(cfg.batch_size);
  const std::size_t per_step = micro * static_cast<std::size_t>(cfg.grad_accum);
  const int steps_per_epoch = static_cast<int>((train_set.size() + per_step - 1) / per_step);
  const int total = steps_per_epoch * cfg.max_epochs;
  int warmup = cfg.warmup_steps > 0 ? cfg.warmup_steps : static_cast<int>(std::llround(0.1 * total));
  warmup = std::clamp(warmup, 1, std::max(1, total - 1));

  auto params = model.store().all();
  nn::AdamW opt(params, nn::AdamWConfig{.lr = cfg.peak_lr, .weight_decay = cfg.weight_decay});
  model.store().zero_grad();
  EarlyStopping stopper(cfg.early_stop_patience);
  std::string best_weights;
  const fs::path backbone_dir =
      checkpoint_root.empty() ? fs::path() : checkpoint_root / text::to_lower_ascii(backbone_name(cfg.backbone));
  const std::string pairs_hash = pair_set_hash(pairs);

  int step = 0;
  for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    rng.shuffle(std::span<Example>(train_set));
    double loss_sum = 0;
    std::size_t token_sum = 0;
    for (std::size_t start = 0; start < train_set.size(); start += per_step) {
      std::vector<std::vector<Example>> group;
      const std::size_t end = std::min(train_set.size(), start + per_step);
      for (std::size_t s = start; s < end; s += micro) {
        group.push_back(pad_batch(std::vector<Example>(train_set.begin() + static_cast<std::ptrdiff_t>(s),
                                                       train_set.begin() + static_cast<std::ptrdiff_t>(
                                                                               std::min(end, s + micro)))));
      }
      std::size_t tokens = 0;
      loss_sum += accumulate_group(model, group, cfg.label_smoothing_eps, &tokens);
      token_sum += tokens;
      ++step;
      if (cfg.max_grad_norm > 0) nn::clip_grad_norm(params, cfg.max_grad_norm);
      opt.step(total >= 2 ? lr_multiplier(step, warmup, total) : 1.0);
    }
    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = loss_sum / static_cast<double>(std::max<std::size_t>(token_sum, 1));
    rec.eval_loss = mean_loss(model, eval_set.empty() ? train_set : eval_set, cfg.label_smoothing_eps);
    const bool stop = stopper.update(rec.eval_loss);
    if (stopper.improved()) {
      best_weights = model.store().serialize();
      trace.best_epoch = epoch;
    }
    if (!backbone_dir.empty()) {
      const fs::path dir = backbone_dir / ("epoch-" + std::to_string(epoch));
      save_checkpoint(model, dir,
                      {{"humanizer", cfg.to_json()},
                       {"pair_set_hash", pairs_hash},
                       {"seed", cfg.seed},
                       {"epoch", epoch},
                       {"train_loss", rec.train_loss},
                       {"eval_loss", rec.eval_loss}});
      rec.checkpoint_path = dir.string();
    }
    spdlog::info("fine_tune {} epoch {}: train_loss {:.4f} eval_loss {:.4f}", backbone_name(cfg.backbone), epoch,
                 rec.train_loss, rec.eval_loss);
    trace.epochs.push_back(rec);
    trace.stopped_epoch = epoch;
    if (stop) {
      trace.stop_reason = StopReason::EarlyStop;
      break;
    }
  }
  trace.optimizer_steps = step;
  if (!best_weights.empty()) model.store().deserialize(best_weights);
  if (!backbone_dir.empty()) write_file_atomic(backbone_dir / "trace.json", trace.to_json().dump(2));
  return trace;
}

fs::path best_checkpoint(const fs::path& backbone_dir) {
  if (!fs::exists(backbone_dir / "trace.json")) {
    throw Error(ErrorKind::MissingArtifact, "no training trace in " + backbone_dir.string());
  }
  const auto trace = TrainingTrace::from_json(json::parse(read_file(backbone_dir / "trace.json")));
  return backbone_dir / ("epoch-" + std::to_string(trace.best_epoch));
}

double pretrain_denoising(Seq2SeqModel& model, std::span<const std::string> texts, const PretrainConfig& cfg) {
  if (texts.empty()) fail("pretrain: no texts");
  Rng rng(derive_seed(cfg.seed, "pretrain"));
  std::vector<std::vector<int>> encoded;
  for (const auto& t : texts) {
    auto ids = model.vocab().to_ids(t);
    if (!ids.empty()) encoded.push_back(std::move(ids));
  }
  if (encoded.empty()) fail("pretrain: every text is empty");
  auto params = model.store().all();
  nn::AdamW opt(params, nn::AdamWConfig{.lr = cfg.lr});
  model.store().zero_grad();
  double recent = 0;
  int recent_n = 0;
  for (int step = 0; step < cfg.steps; ++step) {
    std::vector<Example> batch;
    for (int b = 0; b < cfg.batch_size; ++b) {
      const auto& ids = encoded[rng.index(encoded.size())];
      std::vector<int> noisy;
      for (int id : ids) {
        if (!rng.bernoulli(cfg.noise)) {
          noisy.push_back(id);
        } else if (rng.bernoulli(0.5)) {
          noisy.push_back(Vocabulary::kUnk);
        }
      }
      if (noisy.empty()) noisy.push_back(Vocabulary::kUnk);
      batch.push_back(from_ids(std::move(noisy), ids, static_cast<std::size_t>(cfg.max_len)));
    }
    std::size_t tokens = 0;
    const double loss = accumulate_group(model, {pad_batch(std::move(batch))}, 0.0, &tokens);
    nn::clip_grad_norm(params, 1.0);
    const double warm = std::min(1.0, static_cast<double>(step + 1) / std::max(1, cfg.steps / 10));
    opt.step(warm);
    if (step >= cfg.steps - 50) {
      recent += loss / static_cast<double>(tokens);
      ++recent_n;
    }
    if ((step + 1) % 100 == 0) spdlog::info("pretrain step {}: loss {:.4f}", step + 1, loss / tokens);
  }
  return recent_n ? recent / recent_n : 0.0;
}

}  // namespace textshift
