#include <doctest.h>

#include <cmath>
#include <numeric>

#include "support.hpp"
#include "textshift/detectors.hpp"
#include "textshift/rng.hpp"

using namespace textshift;

namespace {

Features dense(const Eigen::MatrixXd& x) {
  Features f;
  f.dense = x;
  return f;
}

// Two overlapping Gaussian blobs in 2-D.
std::pair<Eigen::MatrixXd, Labels> blobs(std::size_t per_class, double gap, std::uint64_t seed) {
  Rng rng(seed);
  Eigen::MatrixXd x(2 * per_class, 2);
  Labels y;
  for (std::size_t i = 0; i < 2 * per_class; ++i) {
    const int label = i < per_class ? 0 : 1;
    const double c = label ? gap : -gap;
    x(static_cast<Eigen::Index>(i), 0) = c + rng.normal();
    x(static_cast<Eigen::Index>(i), 1) = 0.5 * c + rng.normal();
    y.push_back(label);
  }
  return {x, y};
}

DetectorHyperparams fast_hp() {
  DetectorHyperparams hp;
  hp.rf_trees = 20;
  hp.xgb_trees = 20;
  hp.max_epochs = 5;
  hp.mlp_hidden = {16};
  hp.dnn_hidden = {16, 8};
  hp.lstm_hidden = 8;
  return hp;
}

Features sequences(std::size_t n, std::size_t len, Eigen::Index dim, std::uint64_t seed, Labels& y) {
  Rng rng(seed);
  Features f;
  for (std::size_t i = 0; i < n; ++i) {
    const int label = static_cast<int>(i % 2);
    SequenceEmbedding s;
    s.matrix = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(len), dim);
    const std::size_t used = len - rng.index(len / 2);
    s.mask.assign(len, 0);
    for (std::size_t t = 0; t < used; ++t) {
      s.mask[t] = 1;
      for (Eigen::Index d = 0; d < dim; ++d) s.matrix(static_cast<Eigen::Index>(t), d) = rng.normal();
    }
    f.sequences.push_back(std::move(s));
    y.push_back(label);
  }
  return f;
}

}  // namespace

TEST_CASE("logistic regression matches an independent gradient-descent fit") {
  const auto [x, y] = blobs(30, 0.7, 5);
  DetectorHyperparams hp;
  const auto coef = detail::logistic_coefficients(*detail::fit_logistic(x, y, hp));

  // Plain gradient descent on the same objective with a fixed safe step.
  const double c = 1.0 / hp.lr_l2;
  Eigen::MatrixXd a(x.rows(), 3);
  a.col(0).setOnes();
  a.rightCols(2) = x;
  Eigen::VectorXd t(x.rows());
  for (Eigen::Index i = 0; i < t.size(); ++i) t(i) = y[static_cast<std::size_t>(i)];
  const double lipschitz = 0.25 * c * a.squaredNorm() + 1.0;
  Eigen::VectorXd beta = Eigen::VectorXd::Zero(3);
  for (int it = 0; it < 200000; ++it) {
    Eigen::VectorXd p = (a * beta).unaryExpr([](double z) { return 1.0 / (1.0 + std::exp(-z)); });
    Eigen::VectorXd grad = c * a.transpose() * (p - t);
    grad.tail(2) += beta.tail(2);
    if (grad.norm() < 1e-12) break;
    beta -= grad / lipschitz;
  }
  REQUIRE(coef.size() == 3);
  CHECK((coef - beta).cwiseAbs().maxCoeff() < 1e-3);
}

TEST_CASE("logistic regression separates two separable points") {
  Eigen::MatrixXd x(2, 2);
  x << -1.0, 0.0, 1.0, 0.0;
  const Labels y{0, 1};
  const auto m = train_detector(DetectorKind::LR, dense(x), y, DetectorHyperparams{}, 1);
  CHECK(evaluate(m, dense(x), y).accuracy == 1.0);
}

TEST_CASE("a one-stump forest recovers the best single split") {
  Rng rng(3);
  const std::size_t n = 40;
  Eigen::MatrixXd x(n, 1);
  Labels y;
  for (std::size_t i = 0; i < n; ++i) {
    x(static_cast<Eigen::Index>(i), 0) = rng.uniform();
    y.push_back(x(static_cast<Eigen::Index>(i), 0) > 0.37 ? 1 : 0);
  }
  // Brute force: the split with the fewest training errors over all midpoints.
  std::vector<double> xs(x.data(), x.data() + n);
  std::sort(xs.begin(), xs.end());
  double best_thr = 0;
  std::size_t best_err = n + 1;
  for (std::size_t i = 0; i + 1 < n; ++i) {
    const double thr = 0.5 * (xs[i] + xs[i + 1]);
    std::size_t err = 0;
    for (std::size_t j = 0; j < n; ++j) err += (x(static_cast<Eigen::Index>(j), 0) > thr ? 1 : 0) != y[j];
    if (err < best_err) best_err = err, best_thr = thr;
  }
  DetectorHyperparams hp;
  hp.rf_trees = 1;
  hp.rf_max_depth = 1;
  hp.rf_bootstrap = false;
  const auto model = train_detector(DetectorKind::RF, dense(x), y, hp, 7);
  // Probe points away from the gap the two thresholds may disagree on.
  const double lo = *std::max_element(xs.begin(), xs.end(), [&](double a, double b) {
    return (a < best_thr ? a : -1) < (b < best_thr ? b : -1);
  });
  const double hi = *std::upper_bound(xs.begin(), xs.end(), best_thr);
  Eigen::MatrixXd probe(101, 1);
  for (int i = 0; i <= 100; ++i) probe(i, 0) = i / 100.0;
  const auto pred = predict(model, dense(probe)).labels;
  for (int i = 0; i <= 100; ++i) {
    const double v = probe(i, 0);
    if (v > lo && v < hi) continue;
    CHECK_MESSAGE(pred[static_cast<std::size_t>(i)] == (v > best_thr ? 1 : 0), "x = " << v);
  }
}

TEST_CASE("the LSTM memorizes eight sequences") {
  Labels y;
  const Features f = sequences(8, 6, 4, 11, y);
  DetectorHyperparams hp;
  hp.lstm_hidden = 16;
  hp.batch_size = 8;
  hp.max_epochs = 200;
  hp.learning_rate = 1e-2;
  const auto model = train_detector(DetectorKind::LSTM, f, y, hp, 3);
  const auto p = predict(model, f);
  double loss = 0;
  for (std::size_t i = 0; i < y.size(); ++i) loss -= std::log(y[i] ? p.scores[i] : 1.0 - p.scores[i]);
  loss /= static_cast<double>(y.size());
  CHECK(loss < 0.05);
  CHECK(p.labels == y);
}

TEST_CASE("a score of exactly one half goes to the machine side") {
  CHECK(threshold_label(0.5) == 1);
  CHECK(threshold_label(std::nextafter(0.5, 0.0)) == 0);
  CHECK(threshold_label(1.0) == 1);
  CHECK(threshold_label(0.0) == 0);
}

TEST_CASE("perfect and constant predictors on a balanced set") {
  std::vector<int> truth(100);
  for (std::size_t i = 0; i < 100; ++i) truth[i] = i < 50 ? 0 : 1;
  const auto perfect = evaluate_predictions(truth, truth);
  CHECK(perfect.accuracy == 1.0);
  CHECK(perfect.confusion[0][0] == 50);
  CHECK(perfect.confusion[1][1] == 50);
  CHECK(perfect.confusion[0][1] == 0);
  const std::vector<int> all_gpt(100, 1);
  const auto constant = evaluate_predictions(all_gpt, truth);
  CHECK(constant.accuracy == 0.5);
  CHECK(constant.confusion[0][0] == 0);
  CHECK(constant.confusion[0][1] == 50);
  CHECK(constant.confusion[1][0] == 0);
  CHECK(constant.confusion[1][1] == 50);
}

TEST_CASE("accuracy equals the confusion trace over n on random prediction sets") {
  Rng rng(21);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = 1 + rng.index(200);
    std::vector<int> pred(n), truth(n);
    for (std::size_t i = 0; i < n; ++i) {
      pred[i] = static_cast<int>(rng.index(2));
      truth[i] = static_cast<int>(rng.index(2));
    }
    const auto r = evaluate_predictions(pred, truth);
    const auto& c = r.confusion;
    CHECK(c[0][0] + c[0][1] + c[1][0] + c[1][1] == n);
    CHECK(r.n_test == n);
    CHECK(r.accuracy == static_cast<double>(c[0][0] + c[1][1]) / static_cast<double>(n));
    CHECK(r.accuracy >= 0.0);
    CHECK(r.accuracy <= 1.0);

    std::vector<int> sp(n), st(n);
    for (std::size_t i = 0; i < n; ++i) sp[i] = 1 - pred[i], st[i] = 1 - truth[i];
    const auto s = evaluate_predictions(sp, st);
    CHECK(s.accuracy == r.accuracy);
    CHECK(s.confusion[0][0] == c[1][1]);
    CHECK(s.confusion[1][1] == c[0][0]);
    CHECK(s.confusion[0][1] == c[1][0]);
    CHECK(s.confusion[1][0] == c[0][1]);

    const auto swapped = evaluate_predictions(truth, pred);
    CHECK(swapped.accuracy == r.accuracy);
    for (int i = 0; i < 2; ++i) {
      for (int j = 0; j < 2; ++j) CHECK(swapped.confusion[i][j] == c[j][i]);
    }
  }
}

TEST_CASE("evaluation rejects an empty or mismatched test set") {
  const std::vector<int> none;
  CHECK_THROWS_AS(evaluate_predictions(none, none), Error);
  const std::vector<int> a{0, 1}, b{1};
  CHECK_THROWS_AS(evaluate_predictions(a, b), Error);
}

TEST_CASE("eval results round trip through JSON") {
  const std::vector<int> p{0, 1, 1, 0, 1}, t{0, 1, 0, 0, 0};
  const auto r = evaluate_predictions(p, t);
  CHECK(EvalResult::from_json(r.to_json()) == r);
}

TEST_CASE("every detector family trains, scores in [0,1] and beats chance on separable blobs") {
  const auto [x, y] = blobs(40, 2.0, 8);
  const auto [xt, yt] = blobs(40, 2.0, 9);
  auto hp = fast_hp();
  hp.max_epochs = 50;
  hp.learning_rate = 1e-2;
  for (auto kind : {DetectorKind::LR, DetectorKind::RF, DetectorKind::XGB, DetectorKind::MLP, DetectorKind::DNN}) {
    const auto m = train_detector(kind, dense(x), y, hp, 4, EmbeddingKind::Glove);
    const auto p = predict(m, dense(xt));
    for (double s : p.scores) CHECK((s >= 0.0 && s <= 1.0));
    CHECK_MESSAGE(evaluate(m, dense(xt), yt).accuracy > 0.8, detector_name(kind));
  }
}

TEST_CASE("permuting the test set permutes the predictions") {
  const auto [x, y] = blobs(20, 1.0, 12);
  const auto hp = fast_hp();
  for (auto kind : {DetectorKind::LR, DetectorKind::RF, DetectorKind::XGB, DetectorKind::MLP}) {
    const auto m = train_detector(kind, dense(x), y, hp, 2);
    std::vector<std::size_t> perm(static_cast<std::size_t>(x.rows()));
    std::iota(perm.begin(), perm.end(), 0);
    Rng rng(1);
    rng.shuffle(std::span(perm));
    const auto base = predict(m, dense(x)).scores;
    const auto permuted = predict(m, dense(x).select(perm)).scores;
    for (std::size_t i = 0; i < perm.size(); ++i) CHECK(permuted[i] == base[perm[i]]);
  }
}

TEST_CASE("a memorizing forest reproduces its training labels") {
  const auto [x, y] = blobs(25, 0.3, 14);
  DetectorHyperparams hp;
  hp.rf_trees = 1;
  hp.rf_bootstrap = false;
  const auto m = train_detector(DetectorKind::RF, dense(x), y, hp, 1);
  CHECK(predict(m, dense(x)).labels == y);
}

TEST_CASE("fixed-seed retraining reproduces the model") {
  const auto [x, y] = blobs(30, 1.0, 15);
  const auto hp = fast_hp();
  for (auto kind : kAllDetectors) {
    if (consumes_sequences(kind)) continue;
    const auto a = train_detector(kind, dense(x), y, hp, 6);
    const auto b = train_detector(kind, dense(x), y, hp, 6);
    CHECK_MESSAGE(a.hash() == b.hash(), detector_name(kind));
    CHECK(predict(a, dense(x)).scores == predict(b, dense(x)).scores);
  }
  Labels sy;
  const Features sf = sequences(12, 5, 3, 2, sy);
  CHECK(train_detector(DetectorKind::LSTM, sf, sy, hp, 6).hash() == train_detector(DetectorKind::LSTM, sf, sy, hp, 6).hash());
}

TEST_CASE("saved models reload with identical state and predictions") {
  testing::TempDir dir("detectors");
  const auto [x, y] = blobs(20, 1.0, 16);
  const auto hp = fast_hp();
  for (auto kind : kAllDetectors) {
    Labels sy;
    const Features f = consumes_sequences(kind) ? sequences(12, 5, 3, 2, sy) : dense(x);
    const Labels& labels = consumes_sequences(kind) ? sy : y;
    const auto m = train_detector(kind, f, labels, hp, 5, EmbeddingKind::Word2Vec);
    const auto sub = dir / std::string(detector_name(kind));
    m.save(sub);
    const auto back = DetectorModel::load(sub);
    CHECK(back.hash() == m.hash());
    CHECK(back.kind == kind);
    CHECK(back.embedding == std::optional(EmbeddingKind::Word2Vec));
    CHECK(predict(back, f).scores == predict(m, f).scores);
  }
}

TEST_CASE("training rejects single-class sets, NaN features and tiny sets") {
  Eigen::MatrixXd x(4, 2);
  x.setRandom();
  CHECK_THROWS_AS(train_detector(DetectorKind::LR, dense(x), Labels{1, 1, 1, 1}, fast_hp(), 1), Error);
  Eigen::MatrixXd bad = x;
  bad(2, 1) = std::nan("");
  CHECK_THROWS_AS(train_detector(DetectorKind::LR, dense(bad), Labels{0, 1, 0, 1}, fast_hp(), 1), Error);
  CHECK_THROWS_AS(train_detector(DetectorKind::LR, dense(x.topRows(1)), Labels{0}, fast_hp(), 1), Error);
  CHECK_THROWS_AS(train_detector(DetectorKind::LR, dense(x), Labels{0, 1, 0}, fast_hp(), 1), Error);
}

TEST_CASE("prediction rejects a feature shape mismatch") {
  const auto [x, y] = blobs(10, 1.0, 17);
  const auto m = train_detector(DetectorKind::LR, dense(x), y, fast_hp(), 1);
  Eigen::MatrixXd wrong(3, 5);
  wrong.setZero();
  CHECK_THROWS_AS(predict(m, dense(wrong)), Error);
}

TEST_CASE("hyperparameters round trip through JSON and keep unspecified defaults") {
  DetectorHyperparams hp = fast_hp();
  hp.xgb_eta = 0.3;
  const auto back = DetectorHyperparams::from_json(hp.to_json());
  CHECK(back.to_json() == hp.to_json());
  const auto partial = DetectorHyperparams::from_json({{"rf_trees", 7}});
  CHECK(partial.rf_trees == 7);
  CHECK(partial.xgb_trees == DetectorHyperparams{}.xgb_trees);
}
