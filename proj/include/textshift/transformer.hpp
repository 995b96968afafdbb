#pragma once

#include <span>
#include <string>

#include "textshift/nn.hpp"

namespace textshift::nn {

enum class Activation { Relu, Gelu };

/// Multi-head attention with separate projection and attention steps so a
/// decoder can cache projected keys/values across generation steps.
struct Attention {
  Linear q, k, v, o;
  int heads = 1;

  static Attention create(ParamStore& store, const std::string& name, Eigen::Index dim, int heads, Rng& rng,
                          bool bias);

  struct KeyValue {
    Var keys;
    Var values;
  };
  KeyValue project(ag::Graph& g, Var memory) const;
  static KeyValue append(const KeyValue& cache, const KeyValue& fresh);

  /// `mask` (Lq x Lk, additive, may be null) and `head_bias` (one Lq x Lk
  /// additive term per head, may be empty) shape the attention scores.
  Var attend(ag::Graph& g, Var queries, const KeyValue& kv, const Mat* mask, std::span<const Var> head_bias,
             bool scale_scores) const;
};

struct FeedForward {
  Linear in, out;
  Activation act = Activation::Relu;

  static FeedForward create(ParamStore& store, const std::string& name, Eigen::Index dim, Eigen::Index hidden,
                            Activation act, Rng& rng, bool bias);
  Var operator()(ag::Graph& g, Var x) const;
};

/// Bucketed relative positions (log-spaced beyond half the buckets), in the
/// style of text-to-text transformers. Returns an Lq x Lk bucket index grid.
Eigen::MatrixXi relative_position_buckets(Eigen::Index q_len, Eigen::Index k_len, Eigen::Index q_offset,
                                          bool bidirectional, int num_buckets, int max_distance);

/// Additive mask: 0 where attention is allowed, a large negative value elsewhere.
Mat causal_mask(Eigen::Index len);
Mat padding_mask(Eigen::Index q_len, std::span<const unsigned char> key_valid);

inline constexpr double kMaskedScore = -1e9;

}  // namespace textshift::nn
