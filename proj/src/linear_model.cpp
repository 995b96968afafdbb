#include <cmath>

#include "textshift/common.hpp"
#include "textshift/detectors.hpp"

namespace textshift::detail {

using nlohmann::json;

namespace {

double sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

// log(1 + exp(z)) without overflow
double softplus(double z) { return z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z)); }

class LogisticModel final : public Classifier {
 public:
  explicit LogisticModel(Eigen::VectorXd coef) : coef_(std::move(coef)) {}

  std::vector<double> scores(const Features& x) const override {
    std::vector<double> out(x.size());
    for (Eigen::Index i = 0; i < x.dense.rows(); ++i) {
      out[static_cast<std::size_t>(i)] = sigmoid(coef_(0) + x.dense.row(i).dot(coef_.tail(coef_.size() - 1)));
    }
    return out;
  }

  std::string serialize() const override {
    return json{{"family", "logistic"}, {"coef", std::vector<double>(coef_.data(), coef_.data() + coef_.size())}}
        .dump();
  }

  const Eigen::VectorXd& coef() const { return coef_; }

 private:
  Eigen::VectorXd coef_;  // intercept, then weights
};

}  // namespace

// Minimises C * sum(logloss) + 0.5 * |w|^2 (intercept unpenalised) by damped
// Newton steps with a backtracking line search.
std::shared_ptr<const Classifier> fit_logistic(const Eigen::MatrixXd& x, const Labels& y,
                                               const DetectorHyperparams& hp) {
  if (hp.lr_l2 <= 0) fail("logistic regression: l2 strength must be positive");
  const double c = 1.0 / hp.lr_l2;
  const Eigen::Index n = x.rows();
  const Eigen::Index d = x.cols();
  Eigen::MatrixXd a(n, d + 1);
  a.col(0).setOnes();
  a.rightCols(d) = x;
  Eigen::VectorXd target(n);
  for (Eigen::Index i = 0; i < n; ++i) target(i) = y[static_cast<std::size_t>(i)];

  auto objective = [&](const Eigen::VectorXd& beta) {
    const Eigen::VectorXd z = a * beta;
    double loss = 0;
    for (Eigen::Index i = 0; i < n; ++i) loss += softplus(z(i)) - target(i) * z(i);
    return c * loss + 0.5 * beta.tail(d).squaredNorm();
  };

  Eigen::VectorXd beta = Eigen::VectorXd::Zero(d + 1);
  double f = objective(beta);
  for (int iter = 0; iter < hp.lr_max_iter; ++iter) {
    const Eigen::VectorXd z = a * beta;
    Eigen::VectorXd p(n), s(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      p(i) = sigmoid(z(i));
      s(i) = p(i) * (1.0 - p(i));
    }
    Eigen::VectorXd grad = c * a.transpose() * (p - target);
    grad.tail(d) += beta.tail(d);
    if (grad.lpNorm<Eigen::Infinity>() < 1e-10) break;
    Eigen::MatrixXd hess = c * a.transpose() * s.asDiagonal() * a;
    hess.diagonal().tail(d).array() += 1.0;
    hess(0, 0) += 1e-12;
    const Eigen::VectorXd step = hess.ldlt().solve(grad);
    double t = 1.0;
    Eigen::VectorXd next = beta - step;
    double fn = objective(next);
    while (fn > f && t > 1e-10) {
      t *= 0.5;
      next = beta - t * step;
      fn = objective(next);
    }
    if (fn > f) break;
    const bool converged = (f - fn) <= 1e-15 * std::max(1.0, std::abs(f));
    beta = next;
    f = fn;
    if (converged) break;
  }
  return std::make_shared<LogisticModel>(std::move(beta));
}

std::shared_ptr<const Classifier> load_logistic(std::string_view bytes) {
  const json j = json::parse(bytes);
  if (j.at("family") != "logistic") fail("model.bin is not a logistic model");
  const auto v = j.at("coef").get<std::vector<double>>();
  return std::make_shared<LogisticModel>(Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size())));
}

Eigen::VectorXd logistic_coefficients(const Classifier& model) {
  const auto* lr = dynamic_cast<const LogisticModel*>(&model);
  if (lr == nullptr) fail("not a logistic model");
  return lr->coef();
}

}  // namespace textshift::detail
