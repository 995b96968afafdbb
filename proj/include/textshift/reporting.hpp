#pragma once

#include <array>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "textshift/detectors.hpp"
#include "textshift/experiments.hpp"

namespace textshift {

enum class TableFormat { Markdown, Csv, Latex };

std::string_view table_format_name(TableFormat f);
std::optional<TableFormat> parse_table_format(std::string_view name);

struct TableRow {
  EmbeddingKind embedding = EmbeddingKind::Word2Vec;
  DetectorKind detector = DetectorKind::LR;
  std::vector<std::optional<double>> values;  // one per column; empty = missing cell
  std::vector<bool> bold;
};

struct RenderedTable {
  std::string caption;
  std::vector<std::string> columns;              // accuracy column titles
  std::vector<std::optional<Backbone>> column_keys;
  std::vector<TableRow> rows;                    // embedding blocks, detectors in fixed order
  TableFormat format = TableFormat::Markdown;
  std::string text;
  std::vector<std::string> ties;     // one note per block column with a shared maximum
  std::vector<std::string> missing;  // cells rendered as a dash

  /// Every bold cell is its block-column maximum and every maximum is bold.
  bool bold_mask_valid() const;
};

/// Table of one phase. Cells without a transformer form a single "Accuracy"
/// column; otherwise there is one column per transformer present.
RenderedTable render_table(const AccuracyTable& table, TableFormat format, std::string caption = "");
RenderedTable render_table(const std::vector<ExperimentReport>& reports, TableFormat format,
                           std::string caption = "");

/// Inverse of the CSV rendering.
AccuracyTable parse_table_csv(std::string_view csv);

/// Fixed 4-decimal accuracy text.
std::string format_accuracy(double v);

struct ConfusionArtifact {
  std::array<std::array<std::size_t, 2>, 2> counts{};  // [true][predicted]
  bool asymmetric = false;  // max(FP, FN) > 2 * min(FP, FN)
  std::string csv;
  nlohmann::json plot;
};

ConfusionArtifact render_confusion(const EvalResult& eval, std::string_view positive_name = "GPT");
std::array<std::array<std::size_t, 2>, 2> parse_confusion_csv(std::string_view csv);
bool confusion_asymmetric(std::size_t fp, std::size_t fn);

struct BarSeries {
  std::string name;            // "baseline", "T5SMALL", "BART"
  std::vector<double> values;  // one per detector, fixed order
};

struct BarGroup {
  EmbeddingKind embedding = EmbeddingKind::Word2Vec;
  std::vector<DetectorKind> detectors;
  std::vector<BarSeries> series;
};

struct BarChartData {
  std::string comparison;  // "attack", "retrain" or "none"
  std::vector<BarGroup> groups;

  nlohmann::json to_json() const;
  static BarChartData from_json(const nlohmann::json& j);
};

/// One group per embedding: the baseline series followed by one series per
/// transformer in `comparison`. Throws when the cells differ.
BarChartData render_bars(const AccuracyTable& baseline, const AccuracyTable& comparison,
                         std::string comparison_name);

}  // namespace textshift
