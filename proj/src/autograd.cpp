#include "textshift/autograd.hpp"

#include <cmath>
#include <numbers>

#include "textshift/common.hpp"
#include "textshift/rng.hpp"

namespace textshift::ag {

void Node::accumulate(const Mat& g) {
  if (grad.size() == 0) {
    grad = g;
  } else {
    grad += g;
  }
}

Var Graph::make(Mat value, bool needs_grad) {
  auto node = std::make_unique<Node>();
  node->value = std::move(value);
  node->needs_grad = needs_grad && recording_;
  node->graph = this;
  nodes_.push_back(std::move(node));
  return nodes_.back().get();
}

Var Graph::constant(Mat value) { return make(std::move(value), false); }

Var Graph::param(Parameter& p) {
  auto it = params_.find(&p);
  if (it != params_.end()) return it->second;
  Var v = make(p.value, true);
  v->param = &p;
  params_.emplace(&p, v);
  return v;
}

void Graph::backward(Var loss) {
  if (!recording_) fail("backward on a non-recording graph");
  if (loss->value.size() != 1) fail("backward needs a scalar loss");
  loss->grad = Mat::Ones(1, 1);
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    Node& n = **it;
    if (!n.needs_grad || n.grad.size() == 0) continue;
    if (n.backward) n.backward();
    if (n.param) {
      if (n.param->grad.size() == 0) n.param->zero_grad();
      n.param->grad += n.grad;
    }
  }
}

namespace {

bool any_grad(std::initializer_list<Var> vs) {
  for (Var v : vs) {
    if (v->needs_grad) return true;
  }
  return false;
}

Var result(Var like, Mat value, std::initializer_list<Var> parents) {
  return like->graph->make(std::move(value), any_grad(parents));
}

}  // namespace

Var matmul(Var a, Var b) {
  Var out = result(a, a->value * b->value, {a, b});
  if (out->needs_grad) {
    out->backward = [=] {
      if (a->needs_grad) a->accumulate(out->grad * b->value.transpose());
      if (b->needs_grad) b->accumulate(a->value.transpose() * out->grad);
    };
  }
  return out;
}

Var matmul_nt(Var a, Var b) {
  Var out = result(a, a->value * b->value.transpose(), {a, b});
  if (out->needs_grad) {
    out->backward = [=] {
      if (a->needs_grad) a->accumulate(out->grad * b->value);
      if (b->needs_grad) b->accumulate(out->grad.transpose() * a->value);
    };
  }
  return out;
}

Var add(Var a, Var b) {
  Var out = result(a, a->value + b->value, {a, b});
  if (out->needs_grad) {
    out->backward = [=] {
      if (a->needs_grad) a->accumulate(out->grad);
      if (b->needs_grad) b->accumulate(out->grad);
    };
  }
  return out;
}

Var sub(Var a, Var b) {
  Var out = result(a, a->value - b->value, {a, b});
  if (out->needs_grad) {
    out->backward = [=] {
      if (a->needs_grad) a->accumulate(out->grad);
      if (b->needs_grad) b->accumulate(-out->grad);
    };
  }
  return out;
}

Var add_row(Var a, Var row) {
  Mat v = a->value;
  v.rowwise() += row->value.row(0);
  Var out = result(a, std::move(v), {a, row});
  if (out->needs_grad) {
    out->backward = [=] {
      if (a->needs_grad) a->accumulate(out->grad);
      if (row->needs_grad) row->accumulate(out->grad.colwise().sum());
    };
  }
  return out;
}

Var mul(Var a, Var b) {
  Var out = result(a, a->value.cwiseProduct(b->value), {a, b});
  if (out->needs_grad) {
    out->backward = [=] {
      if (a->needs_grad) a->accumulate(out->grad.cwiseProduct(b->value));
      if (b->needs_grad) b->accumulate(out->grad.cwiseProduct(a->value));
    };
  }
  return out;
}

Var scale(Var a, double s) {
  Var out = result(a, a->value * s, {a});
  if (out->needs_grad) {
    out->backward = [=] { a->accumulate(out->grad * s); };
  }
  return out;
}

Var add_constant(Var a, const Mat& c) {
  Var out = result(a, a->value + c, {a});
  if (out->needs_grad) {
    out->backward = [=] { a->accumulate(out->grad); };
  }
  return out;
}

Var relu(Var a) {
  Var out = result(a, a->value.cwiseMax(0.0), {a});
  if (out->needs_grad) {
    out->backward = [=] {
      a->accumulate(out->grad.cwiseProduct((a->value.array() > 0.0).cast<double>().matrix()));
    };
  }
  return out;
}

Var gelu(Var a) {
  constexpr double k = 0.7978845608028654;  // sqrt(2/pi)
  constexpr double c = 0.044715;
  Mat t = (k * (a->value.array() + c * a->value.array().cube())).tanh().matrix();
  Mat v = (0.5 * a->value.array() * (1.0 + t.array())).matrix();
  Var out = result(a, std::move(v), {a});
  if (out->needs_grad) {
    out->backward = [=, t = std::move(t)] {
      const auto x = a->value.array();
      auto d = 0.5 * (1.0 + t.array()) + 0.5 * x * (1.0 - t.array().square()) * k * (1.0 + 3.0 * c * x.square());
      a->accumulate((out->grad.array() * d).matrix());
    };
  }
  return out;
}

Var tanh(Var a) {
  Var out = result(a, a->value.array().tanh().matrix(), {a});
  if (out->needs_grad) {
    out->backward = [=] {
      a->accumulate((out->grad.array() * (1.0 - out->value.array().square())).matrix());
    };
  }
  return out;
}

Var sigmoid(Var a) {
  Var out = result(a, (1.0 / (1.0 + (-a->value.array()).exp())).matrix(), {a});
  if (out->needs_grad) {
    out->backward = [=] {
      a->accumulate((out->grad.array() * out->value.array() * (1.0 - out->value.array())).matrix());
    };
  }
  return out;
}

Var softmax_rows(Var a) {
  Mat v = a->value;
  for (Eigen::Index r = 0; r < v.rows(); ++r) {
    v.row(r).array() -= v.row(r).maxCoeff();
    v.row(r) = v.row(r).array().exp().matrix();
    v.row(r) /= v.row(r).sum();
  }
  Var out = result(a, std::move(v), {a});
  if (out->needs_grad) {
    out->backward = [=] {
      const Mat& y = out->value;
      Eigen::VectorXd dots = (out->grad.cwiseProduct(y)).rowwise().sum();
      Mat g = out->grad;
      g.colwise() -= dots;
      a->accumulate(g.cwiseProduct(y));
    };
  }
  return out;
}

Var layer_norm(Var x, Var gamma, Var beta, double eps) {
  const Eigen::Index n = x->value.cols();
  Eigen::VectorXd mean = x->value.rowwise().mean();
  Mat centered = x->value.colwise() - mean;
  Eigen::VectorXd inv_std =
      ((centered.array().square().rowwise().sum() / static_cast<double>(n)) + eps).rsqrt().matrix();
  Mat xhat = centered.array().colwise() * inv_std.array();
  Mat v = xhat.array().rowwise() * gamma->value.row(0).array();
  v.rowwise() += beta->value.row(0);
  Var out = result(x, std::move(v), {x, gamma, beta});
  if (out->needs_grad) {
    out->backward = [=, xhat = std::move(xhat), inv_std = std::move(inv_std)] {
      const Mat& dy = out->grad;
      if (gamma->needs_grad) gamma->accumulate(dy.cwiseProduct(xhat).colwise().sum());
      if (beta->needs_grad) beta->accumulate(dy.colwise().sum());
      if (x->needs_grad) {
        Mat dxhat = dy.array().rowwise() * gamma->value.row(0).array();
        Eigen::VectorXd m1 = dxhat.rowwise().mean();
        Eigen::VectorXd m2 = dxhat.cwiseProduct(xhat).rowwise().mean();
        Mat dx = dxhat;
        dx.colwise() -= m1;
        dx.array() -= xhat.array().colwise() * m2.array();
        x->accumulate((dx.array().colwise() * inv_std.array()).matrix());
      }
    };
  }
  return out;
}

Var rms_norm(Var x, Var gamma, double eps) {
  Eigen::VectorXd inv_rms = (x->value.array().square().rowwise().mean() + eps).rsqrt().matrix();
  Mat xn = x->value.array().colwise() * inv_rms.array();
  Mat v = xn.array().rowwise() * gamma->value.row(0).array();
  Var out = result(x, std::move(v), {x, gamma});
  if (out->needs_grad) {
    out->backward = [=, xn = std::move(xn), inv_rms = std::move(inv_rms)] {
      const Mat& dy = out->grad;
      if (gamma->needs_grad) gamma->accumulate(dy.cwiseProduct(xn).colwise().sum());
      if (x->needs_grad) {
        Mat g = dy.array().rowwise() * gamma->value.row(0).array();
        Eigen::VectorXd m = g.cwiseProduct(xn).rowwise().mean();
        Mat dx = g - Mat(xn.array().colwise() * m.array());
        x->accumulate(dx.array().colwise() * inv_rms.array());
      }
    };
  }
  return out;
}

Var dropout(Var a, double p, Rng& rng) {
  if (p <= 0.0 || !a->graph->recording()) return a;
  Mat mask(a->value.rows(), a->value.cols());
  const double keep = 1.0 / (1.0 - p);
  for (Eigen::Index i = 0; i < mask.size(); ++i) mask.data()[i] = rng.bernoulli(p) ? 0.0 : keep;
  Var out = result(a, a->value.cwiseProduct(mask), {a});
  if (out->needs_grad) {
    out->backward = [=, mask = std::move(mask)] { a->accumulate(out->grad.cwiseProduct(mask)); };
  }
  return out;
}

Var gather_rows(Var table, std::span<const int> ids) {
  Mat v(static_cast<Eigen::Index>(ids.size()), table->value.cols());
  for (std::size_t i = 0; i < ids.size(); ++i) v.row(static_cast<Eigen::Index>(i)) = table->value.row(ids[i]);
  Var out = result(table, std::move(v), {table});
  if (out->needs_grad) {
    std::vector<int> idx(ids.begin(), ids.end());
    out->backward = [=, idx = std::move(idx)] {
      if (table->grad.size() == 0) table->grad.setZero(table->value.rows(), table->value.cols());
      for (std::size_t i = 0; i < idx.size(); ++i) {
        table->grad.row(idx[i]) += out->grad.row(static_cast<Eigen::Index>(i));
      }
    };
  }
  return out;
}

Var slice_cols(Var a, Eigen::Index start, Eigen::Index n) {
  Var out = result(a, a->value.middleCols(start, n), {a});
  if (out->needs_grad) {
    out->backward = [=] {
      if (a->grad.size() == 0) a->grad.setZero(a->value.rows(), a->value.cols());
      a->grad.middleCols(start, n) += out->grad;
    };
  }
  return out;
}

Var slice_rows(Var a, Eigen::Index start, Eigen::Index n) {
  Var out = result(a, a->value.middleRows(start, n), {a});
  if (out->needs_grad) {
    out->backward = [=] {
      if (a->grad.size() == 0) a->grad.setZero(a->value.rows(), a->value.cols());
      a->grad.middleRows(start, n) += out->grad;
    };
  }
  return out;
}

Var concat_cols(std::span<const Var> parts) {
  Eigen::Index cols = 0;
  for (Var p : parts) cols += p->value.cols();
  Mat v(parts.front()->value.rows(), cols);
  bool grad = false;
  Eigen::Index c = 0;
  for (Var p : parts) {
    v.middleCols(c, p->value.cols()) = p->value;
    c += p->value.cols();
    grad = grad || p->needs_grad;
  }
  Var out = parts.front()->graph->make(std::move(v), grad);
  if (out->needs_grad) {
    std::vector<Var> ps(parts.begin(), parts.end());
    out->backward = [=, ps = std::move(ps)] {
      Eigen::Index off = 0;
      for (Var p : ps) {
        if (p->needs_grad) p->accumulate(out->grad.middleCols(off, p->value.cols()));
        off += p->value.cols();
      }
    };
  }
  return out;
}

Var concat_rows(std::span<const Var> parts) {
  Eigen::Index rows = 0;
  for (Var p : parts) rows += p->value.rows();
  Mat v(rows, parts.front()->value.cols());
  bool grad = false;
  Eigen::Index r = 0;
  for (Var p : parts) {
    v.middleRows(r, p->value.rows()) = p->value;
    r += p->value.rows();
    grad = grad || p->needs_grad;
  }
  Var out = parts.front()->graph->make(std::move(v), grad);
  if (out->needs_grad) {
    std::vector<Var> ps(parts.begin(), parts.end());
    out->backward = [=, ps = std::move(ps)] {
      Eigen::Index off = 0;
      for (Var p : ps) {
        if (p->needs_grad) p->accumulate(out->grad.middleRows(off, p->value.rows()));
        off += p->value.rows();
      }
    };
  }
  return out;
}

Var mean_rows(Var a) {
  const double n = static_cast<double>(a->value.rows());
  Var out = result(a, a->value.colwise().mean(), {a});
  if (out->needs_grad) {
    out->backward = [=] {
      Mat g = out->grad.replicate(a->value.rows(), 1) / n;
      a->accumulate(g);
    };
  }
  return out;
}

Var gather_grid(Var table, const Eigen::MatrixXi& index, Eigen::Index column) {
  Mat v(index.rows(), index.cols());
  for (Eigen::Index i = 0; i < index.rows(); ++i) {
    for (Eigen::Index j = 0; j < index.cols(); ++j) v(i, j) = table->value(index(i, j), column);
  }
  Var out = result(table, std::move(v), {table});
  if (out->needs_grad) {
    out->backward = [=, index = index] {
      if (table->grad.size() == 0) table->grad.setZero(table->value.rows(), table->value.cols());
      for (Eigen::Index i = 0; i < index.rows(); ++i) {
        for (Eigen::Index j = 0; j < index.cols(); ++j) table->grad(index(i, j), column) += out->grad(i, j);
      }
    };
  }
  return out;
}

Var sum_all(Var a) {
  Mat v(1, 1);
  v(0, 0) = a->value.sum();
  Var out = result(a, std::move(v), {a});
  if (out->needs_grad) {
    out->backward = [=] { a->accumulate(Mat::Constant(a->value.rows(), a->value.cols(), out->grad(0, 0))); };
  }
  return out;
}

Var smoothed_cross_entropy(Var logits, std::span<const int> targets, std::span<const double> weights, double eps) {
  const Eigen::Index T = logits->value.rows();
  const Eigen::Index V = logits->value.cols();
  if (static_cast<std::size_t>(T) != targets.size() || targets.size() != weights.size()) {
    fail("smoothed_cross_entropy: shape mismatch");
  }
  Mat probs(T, V);
  double total = 0.0;
  const double off = eps / static_cast<double>(V);
  for (Eigen::Index t = 0; t < T; ++t) {
    const double w = weights[static_cast<std::size_t>(t)];
    auto z = logits->value.row(t);
    const double m = z.maxCoeff();
    const double lse = m + std::log((z.array() - m).exp().sum());
    probs.row(t) = (z.array() - lse).exp().matrix();
    if (w == 0.0) continue;
    // -sum q log p = lse - sum q z, with q = off + (1-eps) * onehot
    const double qz = off * z.sum() + (1.0 - eps) * z(targets[static_cast<std::size_t>(t)]);
    total += w * (lse - qz);
  }
  Mat v(1, 1);
  v(0, 0) = total;
  Var out = result(logits, std::move(v), {logits});
  if (out->needs_grad) {
    std::vector<int> tg(targets.begin(), targets.end());
    std::vector<double> ws(weights.begin(), weights.end());
    out->backward = [=, probs = std::move(probs), tg = std::move(tg), ws = std::move(ws)]() mutable {
      const double g = out->grad(0, 0);
      for (Eigen::Index t = 0; t < T; ++t) {
        const double w = ws[static_cast<std::size_t>(t)];
        if (w == 0.0) {
          probs.row(t).setZero();
          continue;
        }
        probs.row(t).array() -= off;
        probs(t, tg[static_cast<std::size_t>(t)]) -= 1.0 - eps;
        probs.row(t) *= w * g;
      }
      logits->accumulate(probs);
    };
  }
  return out;
}

Var bce_with_logits(Var logits, std::span<const double> labels) {
  const Eigen::Index n = logits->value.rows();
  if (static_cast<std::size_t>(n) != labels.size() || logits->value.cols() != 1) fail("bce_with_logits: shape");
  double total = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const double z = logits->value(i, 0);
    total += std::max(z, 0.0) - z * labels[static_cast<std::size_t>(i)] + std::log1p(std::exp(-std::abs(z)));
  }
  Mat v(1, 1);
  v(0, 0) = total / static_cast<double>(n);
  Var out = result(logits, std::move(v), {logits});
  if (out->needs_grad) {
    std::vector<double> ys(labels.begin(), labels.end());
    out->backward = [=, ys = std::move(ys)] {
      Mat g(n, 1);
      for (Eigen::Index i = 0; i < n; ++i) {
        const double s = 1.0 / (1.0 + std::exp(-logits->value(i, 0)));
        g(i, 0) = (s - ys[static_cast<std::size_t>(i)]) / static_cast<double>(n) * out->grad(0, 0);
      }
      logits->accumulate(g);
    };
  }
  return out;
}

}  // namespace textshift::ag
