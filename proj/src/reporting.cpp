#include "textshift/reporting.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include <spdlog/fmt/fmt.h>
#include <spdlog/spdlog.h>

#include "textshift/common.hpp"
#include "textshift/text.hpp"

namespace textshift {

using nlohmann::json;

namespace {

constexpr std::string_view kDash = "\u2014";

std::string column_title(std::optional<Backbone> t) {
  if (!t) return "Accuracy";
  return *t == Backbone::T5Small ? "T5-small" : "BART";
}

// Accuracies compare at the displayed precision, so ties are what a reader sees.
long long display_key(double v) { return std::llround(v * 1e4); }

std::vector<std::size_t> block_rows(const RenderedTable& t, EmbeddingKind e) {
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    if (t.rows[i].embedding == e) idx.push_back(i);
  }
  return idx;
}

std::vector<EmbeddingKind> table_embeddings(const RenderedTable& t) {
  std::vector<EmbeddingKind> out;
  for (const auto& r : t.rows) {
    if (out.empty() || out.back() != r.embedding) out.push_back(r.embedding);
  }
  return out;
}

std::string markdown(const RenderedTable& t) {
  std::string s;
  if (!t.caption.empty()) s += "Table: " + t.caption + "\n\n";
  s += "| Embedding | Model |";
  for (const auto& c : t.columns) s += " " + c + " |";
  s += "\n| --- | --- |";
  for (std::size_t c = 0; c < t.columns.size(); ++c) s += " ---: |";
  s += "\n";
  for (const auto& r : t.rows) {
    s += fmt::format("| {} | {} |", embedding_name(r.embedding), detector_name(r.detector));
    for (std::size_t c = 0; c < r.values.size(); ++c) {
      if (!r.values[c]) {
        s += fmt::format(" {} |", kDash);
      } else if (r.bold[c]) {
        s += " **" + format_accuracy(*r.values[c]) + "** |";
      } else {
        s += " " + format_accuracy(*r.values[c]) + " |";
      }
    }
    s += "\n";
  }
  return s;
}

std::string csv(const RenderedTable& t) {
  std::vector<std::string> header{"embedding", "detector"};
  for (const auto& c : t.columns) header.push_back(c);
  for (const auto& c : t.columns) header.push_back(c + " best");
  std::string s;
  for (std::size_t i = 0; i < header.size(); ++i) s += (i ? "," : "") + text::csv_field(header[i]);
  s += "\r\n";
  for (const auto& r : t.rows) {
    s += text::csv_field(embedding_name(r.embedding)) + "," + text::csv_field(detector_name(r.detector));
    for (const auto& v : r.values) s += "," + (v ? format_accuracy(*v) : std::string(kDash));
    for (bool b : r.bold) s += b ? ",1" : ",0";
    s += "\r\n";
  }
  return s;
}

std::string latex(const RenderedTable& t) {
  const std::size_t nc = t.columns.size();
  std::string s = "\\begin{tabular}{c|c" + std::string(nc, 'c') + "}\\toprule\n";
  if (nc == 1 && !t.column_keys.front()) {
    s += "\\textbf{Embedding} & \\textbf{Model} & \\textbf{Accuracy}\\\\ \\midrule\n";
  } else {
    s += fmt::format(
        "\\multirow{{2}}{{*}}{{\\textbf{{Embedding}}}} & \\multirow{{2}}{{*}}{{\\textbf{{Model}}}} & "
        "\\multicolumn{{{}}}{{c}}{{\\textbf{{Accuracy}}}} \\\\\n & &",
        nc);
    for (std::size_t c = 0; c < nc; ++c) s += (c ? " & " : " ") + std::string("\\textbf{") + t.columns[c] + "}";
    s += " \\\\ \\midrule\n";
  }
  const auto embs = table_embeddings(t);
  for (std::size_t bi = 0; bi < embs.size(); ++bi) {
    const auto rows = block_rows(t, embs[bi]);
    s += fmt::format("\\multirow{{{}}}{{*}}{{{}}}\n", rows.size(), embedding_name(embs[bi]));
    for (std::size_t k = 0; k < rows.size(); ++k) {
      const auto& r = t.rows[rows[k]];
      s += fmt::format("& {}", detector_name(r.detector));
      for (std::size_t c = 0; c < nc; ++c) {
        if (!r.values[c]) {
          s += " & ---";
        } else if (r.bold[c]) {
          s += " & \\textbf{" + format_accuracy(*r.values[c]) + "}";
        } else {
          s += " & " + format_accuracy(*r.values[c]);
        }
      }
      s += " \\\\";
      if (k + 1 == rows.size()) s += bi + 1 == embs.size() ? "  \\bottomrule" : "  \\midrule";
      s += "\n";
    }
  }
  s += "\\end{tabular}\n";
  return s;
}

}  // namespace

std::string_view table_format_name(TableFormat f) {
  switch (f) {
    case TableFormat::Markdown: return "markdown";
    case TableFormat::Csv: return "csv";
    case TableFormat::Latex: return "latex";
  }
  return "?";
}

std::optional<TableFormat> parse_table_format(std::string_view name) {
  const std::string n = text::to_lower_ascii(name);
  if (n == "markdown" || n == "md") return TableFormat::Markdown;
  if (n == "csv") return TableFormat::Csv;
  if (n == "latex" || n == "tex") return TableFormat::Latex;
  return std::nullopt;
}

std::string format_accuracy(double v) { return fmt::format("{:.4f}", v); }

bool RenderedTable::bold_mask_valid() const {
  for (EmbeddingKind e : table_embeddings(*this)) {
    const auto idx = block_rows(*this, e);
    for (std::size_t c = 0; c < columns.size(); ++c) {
      std::optional<long long> best;
      for (auto i : idx) {
        if (rows[i].values[c]) best = std::max(best.value_or(display_key(*rows[i].values[c])), display_key(*rows[i].values[c]));
      }
      std::size_t bolded = 0;
      for (auto i : idx) {
        const bool is_max = rows[i].values[c] && display_key(*rows[i].values[c]) == *best;
        if (rows[i].bold[c] != is_max) return false;
        bolded += rows[i].bold[c];
      }
      if (best && bolded == 0) return false;
    }
  }
  return true;
}

RenderedTable render_table(const AccuracyTable& table, TableFormat format, std::string caption) {
  RenderedTable t;
  t.caption = std::move(caption);
  t.format = format;

  std::set<std::optional<Backbone>> keys;
  std::set<EmbeddingKind> present;
  for (const auto& [k, v] : table) {
    keys.insert(k.transformer);
    present.insert(k.embedding);
  }
  if (keys.count(std::nullopt) && keys.size() > 1) {
    fail("render_table: cannot mix baseline cells with transformer cells");
  }
  if (keys.empty() || keys.count(std::nullopt)) {
    t.column_keys = {std::nullopt};
  } else {
    for (Backbone b : {Backbone::T5Small, Backbone::Bart}) {
      if (keys.count(b)) t.column_keys.emplace_back(b);
    }
  }
  for (const auto& k : t.column_keys) t.columns.push_back(column_title(k));

  for (EmbeddingKind e : kAllEmbeddings) {
    if (!present.empty() && !present.count(e)) continue;
    for (DetectorKind d : kAllDetectors) {
      TableRow row{e, d, {}, std::vector<bool>(t.column_keys.size(), false)};
      for (const auto& k : t.column_keys) {
        auto it = table.find({e, d, k});
        if (it == table.end()) {
          row.values.emplace_back();
          const std::string note = fmt::format("{}/{}/{}", embedding_name(e), detector_name(d), column_title(k));
          spdlog::warn("render_table: missing cell {}", note);
          t.missing.push_back(note);
        } else {
          row.values.emplace_back(it->second);
        }
      }
      t.rows.push_back(std::move(row));
    }
  }

  for (EmbeddingKind e : table_embeddings(t)) {
    const auto idx = block_rows(t, e);
    for (std::size_t c = 0; c < t.columns.size(); ++c) {
      std::optional<long long> best;
      for (auto i : idx) {
        if (const auto& v = t.rows[i].values[c]; v && (!best || display_key(*v) > *best)) best = display_key(*v);
      }
      if (!best) continue;
      std::vector<std::string> winners;
      for (auto i : idx) {
        if (const auto& v = t.rows[i].values[c]; v && display_key(*v) == *best) {
          t.rows[i].bold[c] = true;
          winners.emplace_back(detector_name(t.rows[i].detector));
        }
      }
      if (winners.size() > 1) {
        std::string names;
        for (const auto& w : winners) names += (names.empty() ? "" : ", ") + w;
        const std::string note =
            fmt::format("{} {}: tie at {} between {}", embedding_name(e), t.columns[c],
                        format_accuracy(static_cast<double>(*best) / 1e4), names);
        spdlog::info("render_table: {}", note);
        t.ties.push_back(note);
      }
    }
  }

  switch (format) {
    case TableFormat::Markdown: t.text = markdown(t); break;
    case TableFormat::Csv: t.text = csv(t); break;
    case TableFormat::Latex: t.text = latex(t); break;
  }
  return t;
}

RenderedTable render_table(const std::vector<ExperimentReport>& reports, TableFormat format, std::string caption) {
  std::vector<AccuracyTable> tables;
  for (const auto& r : reports) tables.push_back(accuracy_table(r));
  return render_table(merge_tables(tables), format, std::move(caption));
}

AccuracyTable parse_table_csv(std::string_view content) {
  std::vector<std::vector<std::string>> rows;
  if (!text::parse_csv_rows(content, rows) || rows.empty()) fail("table csv: malformed");
  const auto& header = rows.front();
  if (header.size() < 3 || header[0] != "embedding" || header[1] != "detector") fail("table csv: bad header");
  const std::size_t nc = (header.size() - 2) / 2;
  std::vector<std::optional<Backbone>> keys;
  for (std::size_t c = 0; c < nc; ++c) {
    const std::string& title = header[2 + c];
    if (title == "Accuracy") {
      keys.emplace_back();
    } else if (auto b = parse_backbone(title)) {
      keys.emplace_back(*b);
    } else {
      fail("table csv: unknown column " + title);
    }
  }
  AccuracyTable out;
  for (std::size_t r = 1; r < rows.size(); ++r) {
    const auto& row = rows[r];
    if (row.size() != header.size()) fail("table csv: ragged row");
    const auto e = parse_embedding(row[0]);
    const auto d = parse_detector(row[1]);
    if (!e || !d) fail("table csv: unknown cell " + row[0] + "/" + row[1]);
    for (std::size_t c = 0; c < nc; ++c) {
      if (row[2 + c] == kDash) continue;
      out[{*e, *d, keys[c]}] = std::stod(row[2 + c]);
    }
  }
  return out;
}

bool confusion_asymmetric(std::size_t fp, std::size_t fn) {
  return std::max(fp, fn) > 2 * std::min(fp, fn);
}

ConfusionArtifact render_confusion(const EvalResult& eval, std::string_view positive_name) {
  ConfusionArtifact a;
  a.counts = eval.confusion;
  const std::size_t fp = a.counts[0][1];
  const std::size_t fn = a.counts[1][0];
  a.asymmetric = confusion_asymmetric(fp, fn);
  const std::string pos(positive_name);
  a.csv = "true\\predicted,HUMAN," + text::csv_field(pos) + "\r\n";
  a.csv += fmt::format("HUMAN,{},{}\r\n", a.counts[0][0], a.counts[0][1]);
  a.csv += fmt::format("{},{},{}\r\n", text::csv_field(pos), a.counts[1][0], a.counts[1][1]);
  std::string dominant = "balanced";
  if (fp > fn) dominant = "human_as_machine";
  if (fn > fp) dominant = "machine_as_human";
  a.plot = {{"axes", {{"rows", "true"}, {"columns", "predicted"}}},
            {"labels", {"HUMAN", pos}},
            {"counts", {{a.counts[0][0], a.counts[0][1]}, {a.counts[1][0], a.counts[1][1]}}},
            {"accuracy", eval.accuracy},
            {"n_test", eval.n_test},
            {"false_positive", fp},
            {"false_negative", fn},
            {"dominant_error", dominant},
            {"asymmetric", a.asymmetric}};
  return a;
}

std::array<std::array<std::size_t, 2>, 2> parse_confusion_csv(std::string_view content) {
  std::vector<std::vector<std::string>> rows;
  if (!text::parse_csv_rows(content, rows) || rows.size() != 3) fail("confusion csv: expected 3 rows");
  std::array<std::array<std::size_t, 2>, 2> m{};
  for (std::size_t r = 0; r < 2; ++r) {
    if (rows[r + 1].size() != 3) fail("confusion csv: expected 3 columns");
    for (std::size_t c = 0; c < 2; ++c) m[r][c] = std::stoull(rows[r + 1][c + 1]);
  }
  return m;
}

json BarChartData::to_json() const {
  json gs = json::array();
  for (const auto& g : groups) {
    json ds = json::array();
    for (auto d : g.detectors) ds.push_back(detector_name(d));
    json ss = json::array();
    for (const auto& s : g.series) ss.push_back({{"name", s.name}, {"values", s.values}});
    gs.push_back({{"embedding", embedding_name(g.embedding)}, {"detectors", ds}, {"series", ss}});
  }
  return {{"comparison", comparison}, {"groups", gs}};
}

BarChartData BarChartData::from_json(const json& j) {
  BarChartData b;
  b.comparison = j.at("comparison").get<std::string>();
  for (const auto& g : j.at("groups")) {
    BarGroup group;
    const auto e = parse_embedding(g.at("embedding").get<std::string>());
    if (!e) fail("bar data: unknown embedding");
    group.embedding = *e;
    for (const auto& d : g.at("detectors")) {
      const auto k = parse_detector(d.get<std::string>());
      if (!k) fail("bar data: unknown detector");
      group.detectors.push_back(*k);
    }
    for (const auto& s : g.at("series")) {
      group.series.push_back({s.at("name").get<std::string>(), s.at("values").get<std::vector<double>>()});
    }
    b.groups.push_back(std::move(group));
  }
  return b;
}

BarChartData render_bars(const AccuracyTable& baseline, const AccuracyTable& comparison,
                         std::string comparison_name) {
  std::set<std::pair<EmbeddingKind, DetectorKind>> base_cells;
  for (const auto& [k, v] : baseline) {
    if (k.transformer) fail("render_bars: baseline cells carry no transformer");
    base_cells.insert({k.embedding, k.detector});
  }
  std::map<Backbone, std::set<std::pair<EmbeddingKind, DetectorKind>>> cmp_cells;
  for (const auto& [k, v] : comparison) {
    if (!k.transformer) fail("render_bars: comparison cells need a transformer");
    cmp_cells[*k.transformer].insert({k.embedding, k.detector});
  }
  for (const auto& [t, cells] : cmp_cells) {
    if (cells != base_cells) {
      fail(std::string("render_bars: cell mismatch between baseline and ") + std::string(backbone_name(t)));
    }
  }

  BarChartData out;
  out.comparison = comparison.empty() ? "none" : std::move(comparison_name);
  for (EmbeddingKind e : kAllEmbeddings) {
    BarGroup g;
    g.embedding = e;
    for (DetectorKind d : kAllDetectors) {
      if (base_cells.count({e, d})) g.detectors.push_back(d);
    }
    if (g.detectors.empty()) continue;
    BarSeries base{"baseline", {}};
    for (auto d : g.detectors) base.values.push_back(baseline.at({e, d, std::nullopt}));
    g.series.push_back(std::move(base));
    for (const auto& [t, cells] : cmp_cells) {
      BarSeries s{std::string(backbone_name(t)), {}};
      for (auto d : g.detectors) s.values.push_back(comparison.at({e, d, t}));
      g.series.push_back(std::move(s));
    }
    out.groups.push_back(std::move(g));
  }
  return out;
}

}  // namespace textshift
