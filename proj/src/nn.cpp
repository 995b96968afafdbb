#include "textshift/nn.hpp"

#include <cmath>
#include <cstring>

#include "textshift/common.hpp"
#include "textshift/rng.hpp"

namespace textshift::nn {

Parameter& ParamStore::add(std::string name, Mat init) {
  auto p = std::make_unique<Parameter>();
  p->name = std::move(name);
  p->value = std::move(init);
  p->zero_grad();
  params_.push_back(std::move(p));
  return *params_.back();
}

Parameter& ParamStore::get(const std::string& name) {
  for (auto& p : params_) {
    if (p->name == name) return *p;
  }
  fail("no parameter named " + name);
}

std::vector<Parameter*> ParamStore::all() {
  std::vector<Parameter*> out;
  out.reserve(params_.size());
  for (auto& p : params_) out.push_back(p.get());
  return out;
}

std::size_t ParamStore::scalar_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += static_cast<std::size_t>(p->value.size());
  return n;
}

void ParamStore::zero_grad() {
  for (auto& p : params_) p->zero_grad();
}

namespace {

template <typename T>
void put(std::string& out, const T& v) {
  out.append(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T take(std::string_view& in) {
  if (in.size() < sizeof(T)) fail("truncated parameter blob");
  T v;
  std::memcpy(&v, in.data(), sizeof(T));
  in.remove_prefix(sizeof(T));
  return v;
}

}  // namespace

std::string ParamStore::serialize() const {
  std::string out = "TSPARAM1";
  put<std::uint64_t>(out, params_.size());
  for (const auto& p : params_) {
    put<std::uint64_t>(out, p->name.size());
    out += p->name;
    put<std::int64_t>(out, p->value.rows());
    put<std::int64_t>(out, p->value.cols());
    out.append(reinterpret_cast<const char*>(p->value.data()),
               static_cast<std::size_t>(p->value.size()) * sizeof(double));
  }
  return out;
}

void ParamStore::deserialize(std::string_view in) {
  if (in.substr(0, 8) != "TSPARAM1") fail("not a parameter blob");
  in.remove_prefix(8);
  const auto count = take<std::uint64_t>(in);
  if (count != params_.size()) fail("parameter count mismatch");
  for (auto& p : params_) {
    const auto len = take<std::uint64_t>(in);
    if (in.size() < len) fail("truncated parameter blob");
    std::string name(in.substr(0, len));
    in.remove_prefix(len);
    const auto rows = take<std::int64_t>(in);
    const auto cols = take<std::int64_t>(in);
    if (name != p->name || rows != p->value.rows() || cols != p->value.cols()) {
      fail("parameter mismatch at " + p->name + " (file has " + name + ")");
    }
    const std::size_t bytes = static_cast<std::size_t>(rows * cols) * sizeof(double);
    if (in.size() < bytes) fail("truncated parameter blob");
    std::memcpy(p->value.data(), in.data(), bytes);
    in.remove_prefix(bytes);
  }
}

std::string ParamStore::hash() const { return hash_hex(serialize()); }

Mat xavier(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(rows + cols));
  Mat m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform(-limit, limit);
  return m;
}

Mat normal(Eigen::Index rows, Eigen::Index cols, double stddev, Rng& rng) {
  Mat m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = stddev * rng.normal();
  return m;
}

Linear Linear::create(ParamStore& store, const std::string& name, Eigen::Index in, Eigen::Index out, Rng& rng,
                      bool with_bias) {
  Linear l;
  l.weight = &store.add(name + ".weight", xavier(in, out, rng));
  if (with_bias) l.bias = &store.add(name + ".bias", Mat::Zero(1, out));
  return l;
}

Var Linear::operator()(ag::Graph& g, Var x) const {
  Var y = ag::matmul(x, g.param(*weight));
  return bias ? ag::add_row(y, g.param(*bias)) : y;
}

LayerNorm LayerNorm::create(ParamStore& store, const std::string& name, Eigen::Index dim, bool rms) {
  LayerNorm ln;
  ln.rms = rms;
  ln.gamma = &store.add(name + ".gamma", Mat::Ones(1, dim));
  if (!rms) ln.beta = &store.add(name + ".beta", Mat::Zero(1, dim));
  return ln;
}

Var LayerNorm::operator()(ag::Graph& g, Var x) const {
  if (rms) return ag::rms_norm(x, g.param(*gamma));
  return ag::layer_norm(x, g.param(*gamma), g.param(*beta));
}

AdamW::AdamW(std::vector<Parameter*> params, AdamWConfig cfg) : params_(std::move(params)), cfg_(cfg) {
  for (auto* p : params_) {
    m_.push_back(Mat::Zero(p->value.rows(), p->value.cols()));
    v_.push_back(Mat::Zero(p->value.rows(), p->value.cols()));
  }
}

void AdamW::step(double lr_scale) {
  ++t_;
  const double lr = cfg_.lr * lr_scale;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Parameter& p = *params_[i];
    if (p.grad.size() == 0) continue;
    m_[i] = cfg_.beta1 * m_[i] + (1.0 - cfg_.beta1) * p.grad;
    v_[i] = cfg_.beta2 * v_[i] + (1.0 - cfg_.beta2) * p.grad.cwiseProduct(p.grad);
    if (cfg_.weight_decay > 0.0) p.value *= 1.0 - lr * cfg_.weight_decay;
    p.value.array() -= lr * (m_[i].array() / bc1) / ((v_[i].array() / bc2).sqrt() + cfg_.eps);
    p.grad.setZero();
  }
}

double clip_grad_norm(const std::vector<Parameter*>& params, double max_norm) {
  double sq = 0.0;
  for (auto* p : params) {
    if (p->grad.size()) sq += p->grad.squaredNorm();
  }
  const double norm = std::sqrt(sq);
  if (norm > max_norm && norm > 0.0) {
    const double s = max_norm / norm;
    for (auto* p : params) {
      if (p->grad.size()) p->grad *= s;
    }
  }
  return norm;
}

}  // namespace textshift::nn
