#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>

#include "textshift/common.hpp"
#include "textshift/detectors.hpp"
#include "textshift/nn.hpp"
#include "textshift/rng.hpp"

namespace textshift::detail {

using nlohmann::json;
using ag::Mat;
using ag::Var;

namespace {

constexpr std::size_t kInferenceBatch = 256;

double sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

// Per-feature standardisation fitted on training inputs.
struct Scaler {
  Eigen::RowVectorXd mean;
  Eigen::RowVectorXd inv_std;

  static Scaler fit(const Mat& rows) {
    Scaler s;
    s.mean = rows.colwise().mean();
    const Mat centered = rows.rowwise() - s.mean;
    Eigen::RowVectorXd var = centered.array().square().colwise().sum() / std::max<double>(1.0, rows.rows());
    s.inv_std = var.unaryExpr([](double v) { return v > 1e-24 ? 1.0 / std::sqrt(v) : 1.0; });
    return s;
  }

  Mat apply(const Mat& rows) const { return (rows.rowwise() - mean).array().rowwise() * inv_std.array(); }

  json to_json() const {
    return {{"mean", std::vector<double>(mean.data(), mean.data() + mean.size())},
            {"inv_std", std::vector<double>(inv_std.data(), inv_std.data() + inv_std.size())}};
  }

  static Scaler from_json(const json& j) {
    Scaler s;
    const auto m = j.at("mean").get<std::vector<double>>();
    const auto v = j.at("inv_std").get<std::vector<double>>();
    s.mean = Eigen::Map<const Eigen::RowVectorXd>(m.data(), static_cast<Eigen::Index>(m.size()));
    s.inv_std = Eigen::Map<const Eigen::RowVectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
    return s;
  }
};

// Header JSON line followed by the parameter blob.
std::string pack(const json& header, const nn::ParamStore& store) { return header.dump() + "\n" + store.serialize(); }

std::pair<json, std::string_view> unpack(std::string_view bytes, const char* family) {
  const auto nl = bytes.find('\n');
  if (nl == std::string_view::npos) fail("malformed neural model.bin");
  json header = json::parse(bytes.substr(0, nl));
  if (header.at("family") != family) fail(std::string("model.bin is not a ") + family + " model");
  return {std::move(header), bytes.substr(nl + 1)};
}

using Forward = std::function<Var(ag::Graph&, std::span<const std::size_t>, Rng*)>;

std::vector<double> logits_in_batches(std::size_t n, const Forward& forward) {
  std::vector<double> out;
  out.reserve(n);
  std::vector<std::size_t> rows;
  for (std::size_t start = 0; start < n; start += kInferenceBatch) {
    rows.resize(std::min(kInferenceBatch, n - start));
    std::iota(rows.begin(), rows.end(), start);
    ag::Graph g(false);
    const Var z = forward(g, rows, nullptr);
    for (Eigen::Index i = 0; i < z->value.rows(); ++i) out.push_back(z->value(i, 0));
  }
  return out;
}

// Minibatch Adam on mean BCE. When the set is large enough a seeded slice is
// held out; training stops once validation accuracy has not improved for
// `patience` epochs and the best-scoring weights are restored.
void train_binary(nn::ParamStore& store, const Labels& y, const DetectorHyperparams& hp, std::uint64_t seed,
                  const Forward& forward) {
  if (hp.batch_size <= 0 || hp.max_epochs <= 0) fail("neural detector: batch size and epochs must be positive");
  Rng rng(seed);
  std::vector<std::size_t> order(y.size());
  std::iota(order.begin(), order.end(), 0);
  rng.shuffle(std::span<std::size_t>(order));
  std::size_t n_val = static_cast<std::size_t>(std::llround(hp.val_fraction * static_cast<double>(y.size())));
  if (y.size() < 10) n_val = 0;
  std::vector<std::size_t> val(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_val));
  std::vector<std::size_t> train(order.begin() + static_cast<std::ptrdiff_t>(n_val), order.end());

  nn::AdamW opt(store.all(), nn::AdamWConfig{.lr = hp.learning_rate});
  store.zero_grad();
  double best_acc = -1.0;
  std::string best;
  int stale = 0;
  const auto batch = static_cast<std::size_t>(hp.batch_size);
  for (int epoch = 0; epoch < hp.max_epochs; ++epoch) {
    rng.shuffle(std::span<std::size_t>(train));
    for (std::size_t start = 0; start < train.size(); start += batch) {
      const std::span<const std::size_t> rows(train.data() + start, std::min(batch, train.size() - start));
      std::vector<double> targets;
      targets.reserve(rows.size());
      for (std::size_t r : rows) targets.push_back(y[r]);
      ag::Graph g(true);
      const Var loss = ag::bce_with_logits(forward(g, rows, &rng), targets);
      g.backward(loss);
      opt.step();
    }
    if (val.empty()) continue;
    std::size_t correct = 0;
    for (std::size_t start = 0; start < val.size(); start += kInferenceBatch) {
      const std::span<const std::size_t> rows(val.data() + start, std::min(kInferenceBatch, val.size() - start));
      ag::Graph g(false);
      const Var z = forward(g, rows, nullptr);
      for (std::size_t i = 0; i < rows.size(); ++i) {
        correct += static_cast<std::size_t>((z->value(static_cast<Eigen::Index>(i), 0) >= 0.0 ? 1 : 0) == y[rows[i]]);
      }
    }
    const double acc = static_cast<double>(correct) / static_cast<double>(val.size());
    if (acc > best_acc) {
      best_acc = acc;
      best = store.serialize();
      stale = 0;
    } else if (++stale >= hp.patience) {
      break;
    }
  }
  if (!best.empty()) store.deserialize(best);
}

class FeedForwardModel final : public Classifier {
 public:
  FeedForwardModel(Eigen::Index input_dim, std::vector<int> hidden, double dropout, std::uint64_t seed)
      : input_dim_(input_dim), hidden_(std::move(hidden)), dropout_(dropout) {
    Rng rng(seed);
    Eigen::Index in = input_dim_;
    for (std::size_t l = 0; l < hidden_.size(); ++l) {
      layers_.push_back(nn::Linear::create(store_, "hidden" + std::to_string(l), in, hidden_[l], rng));
      in = hidden_[l];
    }
    layers_.push_back(nn::Linear::create(store_, "output", in, 1, rng));
  }

  Var forward(ag::Graph& g, const Mat& x, Rng* rng) const {
    Var h = g.constant(x);
    for (std::size_t l = 0; l + 1 < layers_.size(); ++l) {
      h = ag::relu(layers_[l](g, h));
      if (rng != nullptr && dropout_ > 0) h = ag::dropout(h, dropout_, *rng);
    }
    return layers_.back()(g, h);
  }

  void fit(const Mat& x, const Labels& y, const DetectorHyperparams& hp, std::uint64_t seed) {
    scaler_ = Scaler::fit(x);
    const Mat xs = scaler_.apply(x);
    train_binary(store_, y, hp, seed, [&](ag::Graph& g, std::span<const std::size_t> rows, Rng* rng) {
      return forward(g, gather(xs, rows), rng);
    });
  }

  std::vector<double> scores(const Features& x) const override {
    const Mat xs = scaler_.apply(x.dense);
    auto z = logits_in_batches(x.size(), [&](ag::Graph& g, std::span<const std::size_t> rows, Rng*) {
      return forward(g, gather(xs, rows), nullptr);
    });
    for (double& v : z) v = sigmoid(v);
    return z;
  }

  std::string serialize() const override {
    return pack({{"family", "feedforward"},
                 {"input_dim", input_dim_},
                 {"hidden", hidden_},
                 {"dropout", dropout_},
                 {"scaler", scaler_.to_json()}},
                store_);
  }

  static std::shared_ptr<const Classifier> load(std::string_view bytes) {
    auto [header, blob] = unpack(bytes, "feedforward");
    auto m = std::make_shared<FeedForwardModel>(header.at("input_dim").get<Eigen::Index>(),
                                                header.at("hidden").get<std::vector<int>>(),
                                                header.at("dropout").get<double>(), 0);
    m->scaler_ = Scaler::from_json(header.at("scaler"));
    m->store_.deserialize(blob);
    return m;
  }

 private:
  static Mat gather(const Mat& x, std::span<const std::size_t> rows) {
    Mat out(static_cast<Eigen::Index>(rows.size()), x.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = x.row(static_cast<Eigen::Index>(rows[i]));
    return out;
  }

  Eigen::Index input_dim_;
  std::vector<int> hidden_;
  double dropout_;
  mutable nn::ParamStore store_;
  std::vector<nn::Linear> layers_;
  Scaler scaler_;
};

// Single-layer LSTM over the masked prefix of each sequence; the state after
// the last valid step feeds a linear readout.
class LstmModel final : public Classifier {
 public:
  LstmModel(Eigen::Index input_dim, int hidden, std::uint64_t seed) : input_dim_(input_dim), hidden_(hidden) {
    Rng rng(seed);
    input_ = &store_.add("lstm.input", nn::xavier(input_dim_, 4 * hidden_, rng));
    recurrent_ = &store_.add("lstm.recurrent", nn::xavier(hidden_, 4 * hidden_, rng));
    Mat bias = Mat::Zero(1, 4 * hidden_);
    bias.middleCols(hidden_, hidden_).setOnes();  // forget gate
    bias_ = &store_.add("lstm.bias", std::move(bias));
    readout_ = nn::Linear::create(store_, "readout", hidden_, 1, rng);
  }

  Var forward(ag::Graph& g, const std::vector<SequenceEmbedding>& seqs, std::span<const std::size_t> rows) const {
    const auto b = static_cast<Eigen::Index>(rows.size());
    std::size_t steps = 0;
    for (std::size_t r : rows) steps = std::max(steps, seqs[r].length());
    const auto h_dim = static_cast<Eigen::Index>(hidden_);
    Var h = g.constant(Mat::Zero(b, h_dim));
    Var c = g.constant(Mat::Zero(b, h_dim));
    if (steps > 0) {
      // Rows are step-major: row t * b + i holds step t of batch item i.
      Mat x = Mat::Zero(static_cast<Eigen::Index>(steps) * b, input_dim_);
      for (std::size_t t = 0; t < steps; ++t) {
        for (Eigen::Index i = 0; i < b; ++i) {
          const auto& s = seqs[rows[static_cast<std::size_t>(i)]];
          if (t < s.length()) {
            x.row(static_cast<Eigen::Index>(t) * b + i) =
                (s.matrix.row(static_cast<Eigen::Index>(t)) - scaler_.mean).cwiseProduct(scaler_.inv_std);
          }
        }
      }
      const Var projected = ag::add_row(ag::matmul(g.constant(std::move(x)), g.param(*input_)), g.param(*bias_));
      const Var recurrent = g.param(*recurrent_);
      for (std::size_t t = 0; t < steps; ++t) {
        const Var z = ag::add(ag::slice_rows(projected, static_cast<Eigen::Index>(t) * b, b), ag::matmul(h, recurrent));
        const Var in_gate = ag::sigmoid(ag::slice_cols(z, 0, h_dim));
        const Var forget = ag::sigmoid(ag::slice_cols(z, h_dim, h_dim));
        const Var cand = ag::tanh(ag::slice_cols(z, 2 * h_dim, h_dim));
        const Var out_gate = ag::sigmoid(ag::slice_cols(z, 3 * h_dim, h_dim));
        const Var c_new = ag::add(ag::mul(forget, c), ag::mul(in_gate, cand));
        const Var h_new = ag::mul(out_gate, ag::tanh(c_new));
        Mat keep(b, 1);
        bool all_active = true;
        for (Eigen::Index i = 0; i < b; ++i) {
          keep(i, 0) = t < seqs[rows[static_cast<std::size_t>(i)]].length() ? 1.0 : 0.0;
          all_active = all_active && keep(i, 0) == 1.0;
        }
        if (all_active) {
          h = h_new;
          c = c_new;
        } else {
          const Mat on = keep.replicate(1, h_dim);
          const Var on_v = g.constant(on);
          const Var off_v = g.constant(Mat::Ones(b, h_dim) - on);
          h = ag::add(ag::mul(on_v, h_new), ag::mul(off_v, h));
          c = ag::add(ag::mul(on_v, c_new), ag::mul(off_v, c));
        }
      }
    }
    return readout_(g, h);
  }

  void fit(const std::vector<SequenceEmbedding>& x, const Labels& y, const DetectorHyperparams& hp,
           std::uint64_t seed) {
    std::size_t valid = 0;
    for (const auto& s : x) valid += s.length();
    Mat tokens(static_cast<Eigen::Index>(std::max<std::size_t>(valid, 1)), input_dim_);
    tokens.setZero();
    Eigen::Index k = 0;
    for (const auto& s : x) {
      for (std::size_t t = 0; t < s.length(); ++t) tokens.row(k++) = s.matrix.row(static_cast<Eigen::Index>(t));
    }
    scaler_ = Scaler::fit(tokens);
    train_binary(store_, y, hp, seed,
                 [&](ag::Graph& g, std::span<const std::size_t> rows, Rng*) { return forward(g, x, rows); });
  }

  std::vector<double> scores(const Features& x) const override {
    auto z = logits_in_batches(x.size(), [&](ag::Graph& g, std::span<const std::size_t> rows, Rng*) {
      return forward(g, x.sequences, rows);
    });
    for (double& v : z) v = sigmoid(v);
    return z;
  }

  std::string serialize() const override {
    return pack({{"family", "lstm"}, {"input_dim", input_dim_}, {"hidden", hidden_}, {"scaler", scaler_.to_json()}},
                store_);
  }

  static std::shared_ptr<const Classifier> load(std::string_view bytes) {
    auto [header, blob] = unpack(bytes, "lstm");
    auto m = std::make_shared<LstmModel>(header.at("input_dim").get<Eigen::Index>(), header.at("hidden").get<int>(), 0);
    m->scaler_ = Scaler::from_json(header.at("scaler"));
    m->store_.deserialize(blob);
    return m;
  }

 private:
  Eigen::Index input_dim_;
  int hidden_;
  mutable nn::ParamStore store_;
  ag::Parameter* input_ = nullptr;
  ag::Parameter* recurrent_ = nullptr;
  ag::Parameter* bias_ = nullptr;
  nn::Linear readout_;
  Scaler scaler_;
};

}  // namespace

std::shared_ptr<const Classifier> fit_feedforward(const Eigen::MatrixXd& x, const Labels& y,
                                                  const std::vector<int>& hidden, double dropout,
                                                  const DetectorHyperparams& hp, std::uint64_t seed) {
  for (int h : hidden) {
    if (h <= 0) fail("feed-forward detector: hidden sizes must be positive");
  }
  if (dropout < 0 || dropout >= 1) fail("feed-forward detector: dropout must be in [0,1)");
  auto m = std::make_shared<FeedForwardModel>(x.cols(), hidden, dropout, derive_seed(seed, "init"));
  m->fit(x, y, hp, derive_seed(seed, "train"));
  return m;
}

std::shared_ptr<const Classifier> fit_lstm(const std::vector<SequenceEmbedding>& x, const Labels& y,
                                           const DetectorHyperparams& hp, std::uint64_t seed) {
  if (hp.lstm_hidden <= 0) fail("lstm detector: hidden size must be positive");
  auto m = std::make_shared<LstmModel>(x.front().matrix.cols(), hp.lstm_hidden, derive_seed(seed, "init"));
  m->fit(x, y, hp, derive_seed(seed, "train"));
  return m;
}

std::shared_ptr<const Classifier> load_feedforward(std::string_view bytes) { return FeedForwardModel::load(bytes); }

std::shared_ptr<const Classifier> load_lstm(std::string_view bytes) { return LstmModel::load(bytes); }

}  // namespace textshift::detail
