#include <doctest.h>

#include <cmath>
#include <functional>
#include <vector>

#include "textshift/autograd.hpp"
#include "textshift/nn.hpp"
#include "textshift/rng.hpp"

using namespace textshift;
using ag::Mat;
using ag::Parameter;
using ag::Var;

namespace {

Mat random_mat(Eigen::Index r, Eigen::Index c, Rng& rng, double scale = 1.0) {
  Mat m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = scale * rng.normal();
  return m;
}

using Forward = std::function<Var(ag::Graph&, std::vector<Var>&)>;

// Largest relative error between backprop gradients and central differences.
double gradient_error(std::vector<Parameter>& params, const Forward& f) {
  auto loss_value = [&] {
    ag::Graph g;
    std::vector<Var> vs;
    for (auto& p : params) vs.push_back(g.param(p));
    return f(g, vs)->value(0, 0);
  };
  for (auto& p : params) p.zero_grad();
  {
    ag::Graph g;
    std::vector<Var> vs;
    for (auto& p : params) vs.push_back(g.param(p));
    g.backward(f(g, vs));
  }
  double worst = 0.0;
  const double h = 1e-5;
  for (auto& p : params) {
    for (Eigen::Index i = 0; i < p.value.size(); ++i) {
      const double keep = p.value.data()[i];
      p.value.data()[i] = keep + h;
      const double up = loss_value();
      p.value.data()[i] = keep - h;
      const double down = loss_value();
      p.value.data()[i] = keep;
      const double numeric = (up - down) / (2 * h);
      const double analytic = p.grad.data()[i];
      worst = std::max(worst, std::abs(numeric - analytic) / std::max(1.0, std::abs(numeric)));
    }
  }
  return worst;
}

// Projects a matrix output onto fixed random weights so every entry matters.
Var project(ag::Graph& g, Var out, std::uint64_t seed) {
  Rng rng(seed);
  return ag::sum_all(ag::mul(out, g.constant(random_mat(out->value.rows(), out->value.cols(), rng))));
}

std::vector<Parameter> params_of(std::initializer_list<std::pair<Eigen::Index, Eigen::Index>> shapes,
                                 std::uint64_t seed) {
  Rng rng(seed);
  std::vector<Parameter> ps;
  int k = 0;
  for (auto [r, c] : shapes) ps.push_back({"p" + std::to_string(k++), random_mat(r, c, rng), {}});
  return ps;
}

constexpr double kGradTol = 1e-6;

}  // namespace

TEST_CASE("linear algebra gradients match finite differences") {
  auto ps = params_of({{3, 4}, {4, 2}, {3, 2}, {1, 2}, {5, 4}}, 1);
  CHECK(gradient_error(ps, [](ag::Graph& g, std::vector<Var>& v) { return project(g, ag::matmul(v[0], v[1]), 2); }) <
        kGradTol);
  CHECK(gradient_error(ps, [](ag::Graph& g, std::vector<Var>& v) { return project(g, ag::matmul_nt(v[0], v[4]), 3); }) <
        kGradTol);
  CHECK(gradient_error(ps, [](ag::Graph& g, std::vector<Var>& v) {
          return project(g, ag::sub(ag::add(ag::matmul(v[0], v[1]), v[2]), ag::scale(v[2], 0.3)), 4);
        }) < kGradTol);
  CHECK(gradient_error(ps, [](ag::Graph& g, std::vector<Var>& v) { return project(g, ag::add_row(v[2], v[3]), 5); }) <
        kGradTol);
  CHECK(gradient_error(ps, [](ag::Graph& g, std::vector<Var>& v) { return project(g, ag::mul(v[2], v[2]), 6); }) <
        kGradTol);
  CHECK(gradient_error(ps, [](ag::Graph& g, std::vector<Var>& v) {
          return project(g, ag::add_constant(v[2], Mat::Constant(3, 2, 0.5)), 7);
        }) < kGradTol);
}

TEST_CASE("activation gradients match finite differences") {
  auto ps = params_of({{4, 5}}, 11);
  for (auto act : {ag::relu, ag::gelu, ag::tanh, ag::sigmoid, ag::softmax_rows}) {
    CHECK(gradient_error(ps, [act](ag::Graph& g, std::vector<Var>& v) { return project(g, act(v[0]), 12); }) <
          kGradTol);
  }
}

TEST_CASE("normalization gradients match finite differences") {
  auto ps = params_of({{3, 6}, {1, 6}, {1, 6}}, 21);
  CHECK(gradient_error(ps, [](ag::Graph& g, std::vector<Var>& v) {
          return project(g, ag::layer_norm(v[0], v[1], v[2]), 22);
        }) < kGradTol);
  CHECK(gradient_error(ps, [](ag::Graph& g, std::vector<Var>& v) { return project(g, ag::rms_norm(v[0], v[1]), 23); }) <
        kGradTol);
}

TEST_CASE("layer norm output has zero mean and unit variance per row") {
  Rng rng(3);
  ag::Graph g(false);
  Var x = g.constant(random_mat(4, 8, rng, 3.0));
  Var y = ag::layer_norm(x, g.constant(Mat::Ones(1, 8)), g.constant(Mat::Zero(1, 8)), 1e-12);
  for (Eigen::Index r = 0; r < 4; ++r) {
    const auto row = y->value.row(r).array();
    CHECK(row.mean() == doctest::Approx(0.0).epsilon(1e-9));
    CHECK((row.square().mean()) == doctest::Approx(1.0).epsilon(1e-9));
  }
}

TEST_CASE("shape operation gradients match finite differences") {
  auto ps = params_of({{5, 3}, {2, 3}, {5, 2}}, 31);
  const std::vector<int> ids{4, 0, 4, 2};
  CHECK(gradient_error(ps, [&](ag::Graph& g, std::vector<Var>& v) { return project(g, ag::gather_rows(v[0], ids), 32); }) <
        kGradTol);
  CHECK(gradient_error(ps, [](ag::Graph& g, std::vector<Var>& v) { return project(g, ag::slice_cols(v[0], 1, 2), 33); }) <
        kGradTol);
  CHECK(gradient_error(ps, [](ag::Graph& g, std::vector<Var>& v) { return project(g, ag::slice_rows(v[0], 2, 3), 34); }) <
        kGradTol);
  CHECK(gradient_error(ps, [](ag::Graph& g, std::vector<Var>& v) {
          const Var parts[] = {v[0], v[2]};
          return project(g, ag::concat_cols(parts), 35);
        }) < kGradTol);
  CHECK(gradient_error(ps, [](ag::Graph& g, std::vector<Var>& v) {
          const Var parts[] = {v[0], v[1]};
          return project(g, ag::concat_rows(parts), 36);
        }) < kGradTol);
  CHECK(gradient_error(ps, [](ag::Graph& g, std::vector<Var>& v) { return project(g, ag::mean_rows(v[0]), 37); }) <
        kGradTol);
  Eigen::MatrixXi grid(3, 3);
  grid << 0, 1, 2, 4, 0, 1, 3, 4, 0;
  CHECK(gradient_error(ps, [&](ag::Graph& g, std::vector<Var>& v) { return project(g, ag::gather_grid(v[0], grid, 1), 38); }) <
        kGradTol);
}

TEST_CASE("smoothed cross entropy matches an explicit sum and its gradient") {
  Rng rng(41);
  const Mat z = random_mat(4, 6, rng);
  const std::vector<int> targets{1, 5, 0, 3};
  const std::vector<double> weights{1.0, 1.0, 0.0, 1.0};
  const double eps = 0.1;
  double expected = 0.0;
  for (Eigen::Index t = 0; t < 4; ++t) {
    if (weights[t] == 0.0) continue;
    double denom = 0.0;
    for (Eigen::Index j = 0; j < 6; ++j) denom += std::exp(z(t, j));
    for (Eigen::Index j = 0; j < 6; ++j) {
      const double q = eps / 6 + (j == targets[t] ? 1.0 - eps : 0.0);
      expected -= q * std::log(std::exp(z(t, j)) / denom);
    }
  }
  ag::Graph g;
  CHECK(ag::smoothed_cross_entropy(g.constant(z), targets, weights, eps)->value(0, 0) ==
        doctest::Approx(expected).epsilon(1e-12));
  std::vector<Parameter> ps{{"z", z, {}}};
  CHECK(gradient_error(ps, [&](ag::Graph& gg, std::vector<Var>& v) {
          return ag::smoothed_cross_entropy(v[0], targets, weights, eps);
        }) < kGradTol);
}

TEST_CASE("binary cross entropy with logits matches the explicit formula") {
  const std::vector<double> labels{1, 0, 1, 0, 1};
  Mat z(5, 1);
  z << 2.0, -1.0, -0.5, 3.0, 0.0;
  double expected = 0.0;
  for (int i = 0; i < 5; ++i) {
    const double p = 1.0 / (1.0 + std::exp(-z(i, 0)));
    expected -= labels[i] * std::log(p) + (1 - labels[i]) * std::log(1 - p);
  }
  expected /= 5;
  ag::Graph g;
  CHECK(ag::bce_with_logits(g.constant(z), labels)->value(0, 0) == doctest::Approx(expected).epsilon(1e-12));
  std::vector<Parameter> ps{{"z", z, {}}};
  CHECK(gradient_error(ps, [&](ag::Graph&, std::vector<Var>& v) { return ag::bce_with_logits(v[0], labels); }) <
        kGradTol);
}

TEST_CASE("a parameter read twice accumulates both gradient paths") {
  std::vector<Parameter> ps{{"w", Mat::Constant(1, 1, 3.0), {}}};
  ps[0].zero_grad();
  ag::Graph g;
  Var a = g.param(ps[0]);
  Var b = g.param(ps[0]);
  CHECK(a == b);
  g.backward(ag::sum_all(ag::mul(a, b)));
  CHECK(ps[0].grad(0, 0) == doctest::Approx(6.0));
}

TEST_CASE("dropout is identity at p = 0 and in inference graphs") {
  Rng rng(5);
  const Mat x = random_mat(3, 3, rng);
  ag::Graph train;
  CHECK(ag::dropout(train.constant(x), 0.0, rng)->value == x);
  ag::Graph infer(false);
  CHECK(ag::dropout(infer.constant(x), 0.5, rng)->value == x);
}

TEST_CASE("dropout keeps the expected activation") {
  Rng rng(6);
  ag::Graph g;
  Var y = ag::dropout(g.constant(Mat::Ones(200, 200)), 0.3, rng);
  CHECK(y->value.mean() == doctest::Approx(1.0).epsilon(0.02));
  const double zeros = (y->value.array() == 0.0).cast<double>().mean();
  CHECK(zeros == doctest::Approx(0.3).epsilon(0.05));
}

TEST_CASE("AdamW follows the bias-corrected update with decoupled decay") {
  nn::ParamStore store;
  auto& p = store.add("w", (Mat(1, 2) << 1.0, -2.0).finished());
  nn::AdamWConfig cfg;
  cfg.lr = 0.1;
  cfg.weight_decay = 0.01;
  nn::AdamW opt(store.all(), cfg);
  double m[2] = {0, 0}, v[2] = {0, 0}, w[2] = {1.0, -2.0};
  const double grads[2][2] = {{0.5, -0.25}, {0.1, 0.3}};
  for (int t = 1; t <= 2; ++t) {
    p.grad = (Mat(1, 2) << grads[t - 1][0], grads[t - 1][1]).finished();
    opt.step();
    for (int i = 0; i < 2; ++i) {
      const double gr = grads[t - 1][i];
      m[i] = 0.9 * m[i] + 0.1 * gr;
      v[i] = 0.999 * v[i] + 0.001 * gr * gr;
      const double mh = m[i] / (1 - std::pow(0.9, t));
      const double vh = v[i] / (1 - std::pow(0.999, t));
      w[i] = w[i] * (1 - 0.1 * 0.01) - 0.1 * mh / (std::sqrt(vh) + 1e-8);
      CHECK(p.value(0, i) == doctest::Approx(w[i]).epsilon(1e-12));
    }
    CHECK(p.grad.isZero());
  }
}

TEST_CASE("AdamW minimizes a quadratic") {
  nn::ParamStore store;
  auto& p = store.add("w", Mat::Constant(2, 2, 5.0));
  nn::AdamWConfig cfg;
  cfg.lr = 0.05;
  nn::AdamW opt(store.all(), cfg);
  for (int i = 0; i < 1000; ++i) {
    ag::Graph g;
    Var w = g.param(p);
    g.backward(ag::sum_all(ag::mul(w, w)));
    opt.step();
  }
  CHECK(p.value.cwiseAbs().maxCoeff() < 1e-2);
}

TEST_CASE("gradient clipping rescales only above the limit") {
  nn::ParamStore store;
  auto& a = store.add("a", Mat::Zero(1, 2));
  auto& b = store.add("b", Mat::Zero(1, 1));
  a.grad = (Mat(1, 2) << 3.0, 0.0).finished();
  b.grad = (Mat(1, 1) << 4.0).finished();
  CHECK(nn::clip_grad_norm(store.all(), 10.0) == doctest::Approx(5.0));
  CHECK(a.grad(0, 0) == doctest::Approx(3.0));
  CHECK(nn::clip_grad_norm(store.all(), 1.0) == doctest::Approx(5.0));
  CHECK(a.grad(0, 0) == doctest::Approx(0.6));
  CHECK(b.grad(0, 0) == doctest::Approx(0.8));
}

TEST_CASE("parameter store serialization round trips and checks shapes") {
  Rng rng(9);
  nn::ParamStore a;
  a.add("x", random_mat(3, 2, rng));
  a.add("y", random_mat(1, 4, rng));
  nn::ParamStore b;
  b.add("x", Mat::Zero(3, 2));
  b.add("y", Mat::Zero(1, 4));
  b.deserialize(a.serialize());
  CHECK(b.hash() == a.hash());
  CHECK(b.get("y").value == a.get("y").value);
  CHECK(a.scalar_count() == 10);
  nn::ParamStore c;
  c.add("x", Mat::Zero(2, 3));
  c.add("y", Mat::Zero(1, 4));
  CHECK_THROWS(c.deserialize(a.serialize()));
}

TEST_CASE("linear layer computes x W + b") {
  Rng rng(4);
  nn::ParamStore store;
  auto lin = nn::Linear::create(store, "lin", 3, 2, rng);
  lin.bias->value << 0.5, -0.5;
  const Mat x = random_mat(4, 3, rng);
  ag::Graph g(false);
  const Mat y = lin(g, g.constant(x))->value;
  const Mat expected = (x * lin.weight->value).rowwise() + lin.bias->value.row(0);
  CHECK((y - expected).cwiseAbs().maxCoeff() < 1e-12);
}
