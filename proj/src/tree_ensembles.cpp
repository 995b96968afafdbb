#include <algorithm>
#include <cmath>
#include <numeric>

#include "textshift/common.hpp"
#include "textshift/detectors.hpp"
#include "textshift/rng.hpp"

namespace textshift::detail {

using nlohmann::json;

namespace {

// Flat binary tree; x[feature] <= threshold goes left. Leaves have feature -1.
struct Tree {
  std::vector<int> feature;
  std::vector<double> threshold;
  std::vector<int> left;
  std::vector<int> right;
  std::vector<double> value;

  int add_leaf(double v) {
    feature.push_back(-1);
    threshold.push_back(0.0);
    left.push_back(-1);
    right.push_back(-1);
    value.push_back(v);
    return static_cast<int>(value.size()) - 1;
  }

  double eval(const Eigen::Ref<const Eigen::RowVectorXd>& x) const {
    int node = 0;
    while (feature[static_cast<std::size_t>(node)] >= 0) {
      const auto k = static_cast<std::size_t>(node);
      node = x(feature[k]) <= threshold[k] ? left[k] : right[k];
    }
    return value[static_cast<std::size_t>(node)];
  }

  json to_json() const {
    return {{"feature", feature}, {"threshold", threshold}, {"left", left}, {"right", right}, {"value", value}};
  }

  static Tree from_json(const json& j) {
    Tree t;
    t.feature = j.at("feature").get<std::vector<int>>();
    t.threshold = j.at("threshold").get<std::vector<double>>();
    t.left = j.at("left").get<std::vector<int>>();
    t.right = j.at("right").get<std::vector<int>>();
    t.value = j.at("value").get<std::vector<double>>();
    const std::size_t n = t.value.size();
    if (n == 0 || t.feature.size() != n || t.threshold.size() != n || t.left.size() != n || t.right.size() != n) {
      fail("malformed tree in model.bin");
    }
    return t;
  }
};

struct SplitChoice {
  int feature = -1;
  double threshold = 0.0;
  double score = 0.0;
};

// Sorted (value, row) pairs of one feature over the node's rows.
std::vector<std::pair<double, std::size_t>> sorted_column(const Eigen::MatrixXd& x, std::span<const std::size_t> rows,
                                                          int feature) {
  std::vector<std::pair<double, std::size_t>> col;
  col.reserve(rows.size());
  for (std::size_t r : rows) col.emplace_back(x(static_cast<Eigen::Index>(r), feature), r);
  std::sort(col.begin(), col.end());
  return col;
}

class ForestBuilder {
 public:
  ForestBuilder(const Eigen::MatrixXd& x, const Labels& y, const DetectorHyperparams& hp, Rng& rng)
      : x_(x), y_(y), hp_(hp), rng_(rng) {
    const auto d = static_cast<std::size_t>(x.cols());
    mtry_ = std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(std::sqrt(static_cast<double>(d)))));
  }

  Tree build(std::vector<std::size_t> rows) {
    Tree t;
    grow(t, rows, 0);
    return t;
  }

 private:
  static double gini(double pos, double n) {
    if (n <= 0) return 0.0;
    const double p = pos / n;
    return 2.0 * p * (1.0 - p);
  }

  int grow(Tree& t, std::vector<std::size_t>& rows, int depth) {
    const double n = static_cast<double>(rows.size());
    double pos = 0;
    for (std::size_t r : rows) pos += y_[r];
    const std::size_t min_leaf = static_cast<std::size_t>(std::max(1, hp_.rf_min_samples_leaf));
    const bool depth_done = hp_.rf_max_depth > 0 && depth >= hp_.rf_max_depth;
    if (pos == 0 || pos == n || depth_done || rows.size() < 2 * min_leaf) return t.add_leaf(pos / n);

    const SplitChoice best = choose(rows, pos, min_leaf);
    if (best.feature < 0) return t.add_leaf(pos / n);

    std::vector<std::size_t> lrows, rrows;
    for (std::size_t r : rows) {
      (x_(static_cast<Eigen::Index>(r), best.feature) <= best.threshold ? lrows : rrows).push_back(r);
    }
    rows.clear();
    rows.shrink_to_fit();
    const int node = t.add_leaf(pos / n);
    t.feature[static_cast<std::size_t>(node)] = best.feature;
    t.threshold[static_cast<std::size_t>(node)] = best.threshold;
    const int l = grow(t, lrows, depth + 1);
    t.left[static_cast<std::size_t>(node)] = l;
    const int r = grow(t, rrows, depth + 1);
    t.right[static_cast<std::size_t>(node)] = r;
    return node;
  }

  // Visits features in random order until mtry non-constant ones were tried.
  SplitChoice choose(std::span<const std::size_t> rows, double pos, std::size_t min_leaf) {
    std::vector<int> order(static_cast<std::size_t>(x_.cols()));
    std::iota(order.begin(), order.end(), 0);
    const double n = static_cast<double>(rows.size());
    const double parent = gini(pos, n);
    SplitChoice best;
    double best_impurity = parent;
    std::size_t tried = 0;
    for (std::size_t i = 0; i < order.size() && tried < mtry_; ++i) {
      std::swap(order[i], order[i + rng_.index(order.size() - i)]);
      const int f = order[i];
      const auto col = sorted_column(x_, rows, f);
      if (col.front().first == col.back().first) continue;
      ++tried;
      double lpos = 0;
      for (std::size_t k = 0; k + 1 < col.size(); ++k) {
        lpos += y_[col[k].second];
        if (col[k].first == col[k + 1].first) continue;
        const std::size_t ln = k + 1;
        const std::size_t rn = col.size() - ln;
        if (ln < min_leaf || rn < min_leaf) continue;
        const double lnd = static_cast<double>(ln), rnd = static_cast<double>(rn);
        const double impurity = (lnd * gini(lpos, lnd) + rnd * gini(pos - lpos, rnd)) / n;
        if (impurity < best_impurity - 1e-15) {
          best_impurity = impurity;
          best.feature = f;
          best.threshold = 0.5 * (col[k].first + col[k + 1].first);
          best.score = parent - impurity;
        }
      }
    }
    return best;
  }

  const Eigen::MatrixXd& x_;
  const Labels& y_;
  const DetectorHyperparams& hp_;
  Rng& rng_;
  std::size_t mtry_ = 1;
};

class ForestModel final : public Classifier {
 public:
  explicit ForestModel(std::vector<Tree> trees) : trees_(std::move(trees)) {}

  std::vector<double> scores(const Features& x) const override {
    std::vector<double> out(x.size(), 0.0);
    for (Eigen::Index i = 0; i < x.dense.rows(); ++i) {
      double s = 0;
      for (const Tree& t : trees_) s += t.eval(x.dense.row(i));
      out[static_cast<std::size_t>(i)] = s / static_cast<double>(trees_.size());
    }
    return out;
  }

  std::string serialize() const override {
    json trees = json::array();
    for (const Tree& t : trees_) trees.push_back(t.to_json());
    return json{{"family", "forest"}, {"trees", trees}}.dump();
  }

 private:
  std::vector<Tree> trees_;
};

double sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

// Second-order gradient boosting on the logistic loss with exact greedy splits.
class BoostBuilder {
 public:
  BoostBuilder(const Eigen::MatrixXd& x, const DetectorHyperparams& hp) : x_(x), hp_(hp) {}

  Tree build(const std::vector<double>& g, const std::vector<double>& h) {
    g_ = &g;
    h_ = &h;
    std::vector<std::size_t> rows(static_cast<std::size_t>(x_.rows()));
    std::iota(rows.begin(), rows.end(), 0);
    Tree t;
    grow(t, rows, 0);
    return t;
  }

 private:
  double leaf_weight(double gs, double hs) const { return -hp_.xgb_eta * gs / (hs + hp_.xgb_lambda); }
  double term(double gs, double hs) const { return gs * gs / (hs + hp_.xgb_lambda); }

  int grow(Tree& t, std::vector<std::size_t>& rows, int depth) {
    double gs = 0, hs = 0;
    for (std::size_t r : rows) {
      gs += (*g_)[r];
      hs += (*h_)[r];
    }
    if (depth >= hp_.xgb_max_depth || rows.size() < 2) return t.add_leaf(leaf_weight(gs, hs));

    SplitChoice best;
    const double parent = term(gs, hs);
    for (int f = 0; f < x_.cols(); ++f) {
      const auto col = sorted_column(x_, rows, f);
      double gl = 0, hl = 0;
      for (std::size_t k = 0; k + 1 < col.size(); ++k) {
        gl += (*g_)[col[k].second];
        hl += (*h_)[col[k].second];
        if (col[k].first == col[k + 1].first) continue;
        const double gr = gs - gl, hr = hs - hl;
        if (hl < hp_.xgb_min_child_weight || hr < hp_.xgb_min_child_weight) continue;
        const double gain = 0.5 * (term(gl, hl) + term(gr, hr) - parent) - hp_.xgb_gamma;
        if (gain > best.score + 1e-15) {
          best.score = gain;
          best.feature = f;
          best.threshold = 0.5 * (col[k].first + col[k + 1].first);
        }
      }
    }
    if (best.feature < 0) return t.add_leaf(leaf_weight(gs, hs));

    std::vector<std::size_t> lrows, rrows;
    for (std::size_t r : rows) {
      (x_(static_cast<Eigen::Index>(r), best.feature) <= best.threshold ? lrows : rrows).push_back(r);
    }
    const int node = t.add_leaf(leaf_weight(gs, hs));
    t.feature[static_cast<std::size_t>(node)] = best.feature;
    t.threshold[static_cast<std::size_t>(node)] = best.threshold;
    const int l = grow(t, lrows, depth + 1);
    t.left[static_cast<std::size_t>(node)] = l;
    const int r = grow(t, rrows, depth + 1);
    t.right[static_cast<std::size_t>(node)] = r;
    return node;
  }

  const Eigen::MatrixXd& x_;
  const DetectorHyperparams& hp_;
  const std::vector<double>* g_ = nullptr;
  const std::vector<double>* h_ = nullptr;
};

class BoostedModel final : public Classifier {
 public:
  explicit BoostedModel(std::vector<Tree> trees) : trees_(std::move(trees)) {}

  std::vector<double> scores(const Features& x) const override {
    std::vector<double> out(x.size(), 0.0);
    for (Eigen::Index i = 0; i < x.dense.rows(); ++i) {
      double margin = 0;
      for (const Tree& t : trees_) margin += t.eval(x.dense.row(i));
      out[static_cast<std::size_t>(i)] = sigmoid(margin);
    }
    return out;
  }

  std::string serialize() const override {
    json trees = json::array();
    for (const Tree& t : trees_) trees.push_back(t.to_json());
    return json{{"family", "boosted"}, {"trees", trees}}.dump();
  }

 private:
  std::vector<Tree> trees_;
};

std::vector<Tree> parse_trees(std::string_view bytes, const char* family) {
  const json j = json::parse(bytes);
  if (j.at("family") != family) fail(std::string("model.bin is not a ") + family + " model");
  std::vector<Tree> trees;
  for (const auto& t : j.at("trees")) trees.push_back(Tree::from_json(t));
  if (trees.empty()) fail("model.bin has no trees");
  return trees;
}

}  // namespace

std::shared_ptr<const Classifier> fit_forest(const Eigen::MatrixXd& x, const Labels& y, const DetectorHyperparams& hp,
                                             std::uint64_t seed) {
  if (hp.rf_trees <= 0) fail("random forest: need at least one tree");
  Rng rng(seed);
  ForestBuilder builder(x, y, hp, rng);
  const auto n = static_cast<std::size_t>(x.rows());
  std::vector<Tree> trees;
  trees.reserve(static_cast<std::size_t>(hp.rf_trees));
  for (int t = 0; t < hp.rf_trees; ++t) {
    std::vector<std::size_t> rows(n);
    if (hp.rf_bootstrap) {
      for (auto& r : rows) r = rng.index(n);
      std::sort(rows.begin(), rows.end());
    } else {
      std::iota(rows.begin(), rows.end(), 0);
    }
    trees.push_back(builder.build(std::move(rows)));
  }
  return std::make_shared<ForestModel>(std::move(trees));
}

std::shared_ptr<const Classifier> fit_boosted(const Eigen::MatrixXd& x, const Labels& y,
                                              const DetectorHyperparams& hp) {
  if (hp.xgb_trees <= 0) fail("boosting: need at least one tree");
  const auto n = static_cast<std::size_t>(x.rows());
  BoostBuilder builder(x, hp);
  std::vector<double> margin(n, 0.0), g(n), h(n);
  std::vector<Tree> trees;
  for (int t = 0; t < hp.xgb_trees; ++t) {
    for (std::size_t i = 0; i < n; ++i) {
      const double p = sigmoid(margin[i]);
      g[i] = p - y[i];
      h[i] = p * (1.0 - p);
    }
    Tree tree = builder.build(g, h);
    for (std::size_t i = 0; i < n; ++i) margin[i] += tree.eval(x.row(static_cast<Eigen::Index>(i)));
    trees.push_back(std::move(tree));
  }
  return std::make_shared<BoostedModel>(std::move(trees));
}

std::shared_ptr<const Classifier> load_forest(std::string_view bytes) {
  return std::make_shared<ForestModel>(parse_trees(bytes, "forest"));
}

std::shared_ptr<const Classifier> load_boosted(std::string_view bytes) {
  return std::make_shared<BoostedModel>(parse_trees(bytes, "boosted"));
}

}  // namespace textshift::detail
