#include <doctest.h>

#include <cmath>

#include "textshift/common.hpp"
#include "textshift/reporting.hpp"

using namespace textshift;

namespace {

const PaperTables& fixture() {
  static const PaperTables t = load_paper_tables();
  return t;
}

const TableRow& row(const RenderedTable& t, EmbeddingKind e, DetectorKind d) {
  for (const auto& r : t.rows) {
    if (r.embedding == e && r.detector == d) return r;
  }
  throw std::runtime_error("row not found");
}

// Bold cells of the rendered table, read back from the published bold marks.
void check_bold_matches_fixture(const RenderedTable& t, const nlohmann::json& marks) {
  for (std::size_t c = 0; c < t.columns.size(); ++c) {
    const auto& key = t.column_keys[c];
    const auto& block_marks = key ? marks.at(std::string(backbone_name(*key))) : marks;
    for (const auto& r : t.rows) {
      const auto& bolded = block_marks.at(std::string(embedding_name(r.embedding)));
      bool expected = false;
      for (const auto& name : bolded) expected |= name.get<std::string>() == detector_name(r.detector);
      CHECK_MESSAGE(r.bold[c] == expected, embedding_name(r.embedding) << " " << detector_name(r.detector));
    }
  }
}

EvalResult eval_of(std::size_t tn, std::size_t fp, std::size_t fn, std::size_t tp) {
  EvalResult e;
  e.confusion = {{{tn, fp}, {fn, tp}}};
  e.n_test = tn + fp + fn + tp;
  e.accuracy = static_cast<double>(tn + tp) / static_cast<double>(e.n_test);
  return e;
}

}  // namespace

TEST_CASE("the published tables render with DNN bolded in every block") {
  const auto marks = nlohmann::json::parse(read_file(default_data_dir() / "paper_tables.json")).at("bold");
  const auto t3 = render_table(fixture().baseline, TableFormat::Markdown, "Baseline accuracies");
  const auto t4 = render_table(fixture().attack, TableFormat::Markdown, "Accuracy on transformed text");
  const auto t5 = render_table(fixture().retrain, TableFormat::Markdown, "Accuracy after retraining");
  check_bold_matches_fixture(t3, marks.at("baseline"));
  check_bold_matches_fixture(t4, marks.at("attack"));
  check_bold_matches_fixture(t5, marks.at("retrain"));
  for (const auto* t : {&t3, &t4, &t5}) {
    CHECK(t->bold_mask_valid());
    CHECK(t->ties.empty());
    CHECK(t->missing.empty());
    CHECK(t->rows.size() == 18);
  }
}

TEST_CASE("baseline table bolds DNN 0.9490 in the Word2Vec block") {
  const auto t = render_table(fixture().baseline, TableFormat::Markdown);
  REQUIRE(t.columns == std::vector<std::string>{"Accuracy"});
  const auto& r = row(t, EmbeddingKind::Word2Vec, DetectorKind::DNN);
  CHECK(r.bold[0]);
  CHECK(*r.values[0] == 0.949);
  CHECK(t.text.find("**0.9490**") != std::string::npos);
}

TEST_CASE("attack table bolds BERT DNN in both transformer columns") {
  const auto t = render_table(fixture().attack, TableFormat::Markdown);
  REQUIRE(t.columns.size() == 2);
  const auto& r = row(t, EmbeddingKind::Bert, DetectorKind::DNN);
  CHECK(r.bold[0]);
  CHECK(r.bold[1]);
  CHECK(format_accuracy(*r.values[0]) == "0.8940");
  CHECK(format_accuracy(*r.values[1]) == "0.9080");
  CHECK(t.text.find("| **0.8940** | **0.9080** |") != std::string::npos);
}

TEST_CASE("rows follow the fixed embedding and detector order") {
  const auto t = render_table(fixture().baseline, TableFormat::Csv);
  std::size_t i = 0;
  for (auto e : kAllEmbeddings) {
    for (auto d : kAllDetectors) {
      CHECK(t.rows[i].embedding == e);
      CHECK(t.rows[i].detector == d);
      ++i;
    }
  }
}

TEST_CASE("a tie for the block maximum bolds both cells and is noted") {
  AccuracyTable table;
  for (auto d : kAllDetectors) table[{EmbeddingKind::Glove, d, std::nullopt}] = 0.5;
  table[{EmbeddingKind::Glove, DetectorKind::RF, std::nullopt}] = 0.91;
  table[{EmbeddingKind::Glove, DetectorKind::MLP, std::nullopt}] = 0.91;
  const auto t = render_table(table, TableFormat::Markdown);
  CHECK(row(t, EmbeddingKind::Glove, DetectorKind::RF).bold[0]);
  CHECK(row(t, EmbeddingKind::Glove, DetectorKind::MLP).bold[0]);
  CHECK_FALSE(row(t, EmbeddingKind::Glove, DetectorKind::LR).bold[0]);
  CHECK(t.ties.size() == 1);
  CHECK(t.bold_mask_valid());
}

TEST_CASE("missing cells render as a dash") {
  AccuracyTable table = fixture().baseline;
  table.erase({EmbeddingKind::Bert, DetectorKind::LSTM, std::nullopt});
  const auto t = render_table(table, TableFormat::Markdown);
  CHECK(t.missing.size() == 1);
  CHECK_FALSE(row(t, EmbeddingKind::Bert, DetectorKind::LSTM).values[0]);
  CHECK(t.text.find("| LSTM | \xE2\x80\x94 |") != std::string::npos);
  CHECK(t.bold_mask_valid());
}

TEST_CASE("mixing baseline and transformer cells is rejected") {
  AccuracyTable mixed = fixture().baseline;
  mixed.insert(fixture().attack.begin(), fixture().attack.end());
  CHECK_THROWS_AS(render_table(mixed, TableFormat::Markdown), Error);
}

TEST_CASE("rendering is pure and CSV round-trips every value exactly") {
  for (const auto* table : {&fixture().baseline, &fixture().attack, &fixture().retrain}) {
    const auto a = render_table(*table, TableFormat::Csv);
    const auto b = render_table(*table, TableFormat::Csv);
    CHECK(a.text == b.text);
    CHECK(parse_table_csv(a.text) == *table);
  }
}

TEST_CASE("LaTeX output is a tabular fragment with bold DNN") {
  const auto t = render_table(fixture().baseline, TableFormat::Latex, "Baseline accuracies");
  CHECK(t.text.find("\\begin{tabular}") != std::string::npos);
  CHECK(t.text.find("\\end{tabular}") != std::string::npos);
  CHECK(t.text.find("\\textbf{0.9840}") != std::string::npos);
  CHECK(t.text.find("\\multirow") != std::string::npos);
}

TEST_CASE("table formats parse by name") {
  CHECK(parse_table_format("markdown") == std::optional(TableFormat::Markdown));
  CHECK(parse_table_format("CSV") == std::optional(TableFormat::Csv));
  CHECK(parse_table_format("latex") == std::optional(TableFormat::Latex));
  CHECK_FALSE(parse_table_format("html"));
}

TEST_CASE("a perfect confusion matrix renders with 50s on the diagonal") {
  const auto art = render_confusion(eval_of(50, 0, 0, 50));
  CHECK(art.csv.find("HUMAN,50,0") != std::string::npos);
  CHECK(art.csv.find("GPT,0,50") != std::string::npos);
  CHECK_FALSE(art.asymmetric);
  CHECK(parse_confusion_csv(art.csv) == art.counts);
}

TEST_CASE("confusion CSV round trips") {
  for (std::size_t k = 0; k < 20; ++k) {
    const auto e = eval_of(k * 3 + 1, k, 2 * k + 1, 40 - k);
    const auto art = render_confusion(e, k % 2 ? "T5GEN" : "GPT");
    CHECK(parse_confusion_csv(art.csv) == e.confusion);
    CHECK(art.plot.at("counts").get<std::vector<std::vector<std::size_t>>>()[1][0] == e.confusion[1][0]);
  }
}

TEST_CASE("asymmetry is flagged above a two-to-one error imbalance") {
  CHECK_FALSE(confusion_asymmetric(10, 5));
  CHECK(confusion_asymmetric(11, 5));
  CHECK(confusion_asymmetric(1, 0));
  CHECK_FALSE(confusion_asymmetric(0, 0));
  const auto art = render_confusion(eval_of(40, 9, 2, 49));
  CHECK(art.asymmetric);
  CHECK(art.plot.at("asymmetric") == true);
}

TEST_CASE("attack bars show baseline and both transformers for BERT DNN") {
  const auto bars = render_bars(fixture().baseline, fixture().attack, "attack");
  CHECK(bars.comparison == "attack");
  REQUIRE(bars.groups.size() == 3);
  const auto& bert = bars.groups[2];
  CHECK(bert.embedding == EmbeddingKind::Bert);
  REQUIRE(bert.series.size() == 3);
  const std::size_t dnn = 4;
  REQUIRE(bert.detectors[dnn] == DetectorKind::DNN);
  CHECK(bert.series[0].values[dnn] == 0.9840);
  CHECK(bert.series[1].values[dnn] == 0.8940);
  CHECK(bert.series[2].values[dnn] == 0.9080);
  for (const auto& g : bars.groups) {
    for (const auto& s : g.series) CHECK(s.values.size() == g.detectors.size());
  }
  CHECK(BarChartData::from_json(bars.to_json()).to_json() == bars.to_json());
}

TEST_CASE("retrained Word2Vec bars stay within 0.01 of the baseline") {
  const auto bars = render_bars(fixture().baseline, fixture().retrain, "retrain");
  const auto& w2v = bars.groups[0];
  REQUIRE(w2v.embedding == EmbeddingKind::Word2Vec);
  for (std::size_t s = 1; s < w2v.series.size(); ++s) {
    for (std::size_t d = 0; d < w2v.detectors.size(); ++d) {
      CHECK(std::abs(w2v.series[s].values[d] - w2v.series[0].values[d]) <= 0.01);
    }
  }
}

TEST_CASE("an empty comparison gives baseline-only series") {
  const auto bars = render_bars(fixture().baseline, {}, "attack");
  CHECK(bars.comparison == "none");
  for (const auto& g : bars.groups) {
    REQUIRE(g.series.size() == 1);
    CHECK(g.series[0].name == "baseline");
  }
}

TEST_CASE("bars reject mismatched cells") {
  AccuracyTable partial = fixture().attack;
  partial.erase(partial.begin());
  CHECK_THROWS_AS(render_bars(fixture().baseline, partial, "attack"), Error);
}
