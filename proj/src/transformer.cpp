#include "textshift/transformer.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

namespace textshift::nn {

Attention Attention::create(ParamStore& store, const std::string& name, Eigen::Index dim, int heads, Rng& rng,
                            bool bias) {
  Attention a;
  a.heads = heads;
  a.q = Linear::create(store, name + ".q", dim, dim, rng, bias);
  a.k = Linear::create(store, name + ".k", dim, dim, rng, bias);
  a.v = Linear::create(store, name + ".v", dim, dim, rng, bias);
  a.o = Linear::create(store, name + ".o", dim, dim, rng, bias);
  return a;
}

Attention::KeyValue Attention::project(ag::Graph& g, Var memory) const { return {k(g, memory), v(g, memory)}; }

Attention::KeyValue Attention::append(const KeyValue& cache, const KeyValue& fresh) {
  if (!cache.keys) return fresh;
  const Var ks[] = {cache.keys, fresh.keys};
  const Var vs[] = {cache.values, fresh.values};
  return {ag::concat_rows(ks), ag::concat_rows(vs)};
}

Var Attention::attend(ag::Graph& g, Var queries, const KeyValue& kv, const Mat* mask,
                      std::span<const Var> head_bias, bool scale_scores) const {
  Var qp = q(g, queries);
  const Eigen::Index dim = qp->value.cols();
  const Eigen::Index dh = dim / heads;
  const double s = scale_scores ? 1.0 / std::sqrt(static_cast<double>(dh)) : 1.0;
  std::vector<Var> outs;
  outs.reserve(static_cast<std::size_t>(heads));
  for (int h = 0; h < heads; ++h) {
    Var qh = ag::slice_cols(qp, h * dh, dh);
    Var kh = ag::slice_cols(kv.keys, h * dh, dh);
    Var vh = ag::slice_cols(kv.values, h * dh, dh);
    Var scores = ag::matmul_nt(qh, kh);
    if (s != 1.0) scores = ag::scale(scores, s);
    if (!head_bias.empty()) scores = ag::add(scores, head_bias[static_cast<std::size_t>(h)]);
    if (mask) scores = ag::add_constant(scores, *mask);
    outs.push_back(ag::matmul(ag::softmax_rows(scores), vh));
  }
  return o(g, heads == 1 ? outs.front() : ag::concat_cols(outs));
}

FeedForward FeedForward::create(ParamStore& store, const std::string& name, Eigen::Index dim, Eigen::Index hidden,
                                Activation act, Rng& rng, bool bias) {
  FeedForward f;
  f.act = act;
  f.in = Linear::create(store, name + ".in", dim, hidden, rng, bias);
  f.out = Linear::create(store, name + ".out", hidden, dim, rng, bias);
  return f;
}

Var FeedForward::operator()(ag::Graph& g, Var x) const {
  Var h = in(g, x);
  h = act == Activation::Gelu ? ag::gelu(h) : ag::relu(h);
  return out(g, h);
}

Eigen::MatrixXi relative_position_buckets(Eigen::Index q_len, Eigen::Index k_len, Eigen::Index q_offset,
                                          bool bidirectional, int num_buckets, int max_distance) {
  Eigen::MatrixXi out(q_len, k_len);
  for (Eigen::Index i = 0; i < q_len; ++i) {
    for (Eigen::Index j = 0; j < k_len; ++j) {
      long rel = static_cast<long>(j) - static_cast<long>(i + q_offset);
      int buckets = num_buckets;
      int ret = 0;
      long n;
      if (bidirectional) {
        buckets /= 2;
        if (rel > 0) ret += buckets;
        n = std::abs(rel);
      } else {
        n = std::max(-rel, 0L);
      }
      const int max_exact = buckets / 2;
      if (n < max_exact) {
        ret += static_cast<int>(n);
      } else {
        const double ratio = std::log(static_cast<double>(n) / max_exact) /
                             std::log(static_cast<double>(max_distance) / max_exact);
        int large = max_exact + static_cast<int>(ratio * (buckets - max_exact));
        ret += std::min(large, buckets - 1);
      }
      out(i, j) = ret;
    }
  }
  return out;
}

Mat causal_mask(Eigen::Index len) {
  Mat m = Mat::Zero(len, len);
  for (Eigen::Index i = 0; i < len; ++i) {
    for (Eigen::Index j = i + 1; j < len; ++j) m(i, j) = kMaskedScore;
  }
  return m;
}

Mat padding_mask(Eigen::Index q_len, std::span<const unsigned char> key_valid) {
  Mat m = Mat::Zero(q_len, static_cast<Eigen::Index>(key_valid.size()));
  for (std::size_t j = 0; j < key_valid.size(); ++j) {
    if (!key_valid[j]) m.col(static_cast<Eigen::Index>(j)).setConstant(kMaskedScore);
  }
  return m;
}

}  // namespace textshift::nn
