#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "textshift/autograd.hpp"

namespace textshift {
class Rng;
}

namespace textshift::nn {

using ag::Mat;
using ag::Parameter;
using ag::Var;

/// Owns parameters at stable addresses. Layers keep raw Parameter pointers.
class ParamStore {
 public:
  Parameter& add(std::string name, Mat init);
  Parameter& get(const std::string& name);
  std::vector<Parameter*> all();
  std::size_t size() const { return params_.size(); }
  std::size_t scalar_count() const;
  void zero_grad();

  /// Binary layout: count, then per parameter {name, rows, cols, doubles}.
  std::string serialize() const;
  /// Loads values into an already-shaped store; names and shapes must match.
  void deserialize(std::string_view bytes);
  std::string hash() const;

 private:
  std::vector<std::unique_ptr<Parameter>> params_;
};

Mat xavier(Eigen::Index rows, Eigen::Index cols, Rng& rng);
Mat normal(Eigen::Index rows, Eigen::Index cols, double stddev, Rng& rng);

struct Linear {
  Parameter* weight = nullptr;  // in x out
  Parameter* bias = nullptr;    // 1 x out, optional

  static Linear create(ParamStore& store, const std::string& name, Eigen::Index in, Eigen::Index out, Rng& rng,
                       bool with_bias = true);
  Var operator()(ag::Graph& g, Var x) const;
};

struct LayerNorm {
  Parameter* gamma = nullptr;
  Parameter* beta = nullptr;  // absent for RMS norm
  bool rms = false;

  static LayerNorm create(ParamStore& store, const std::string& name, Eigen::Index dim, bool rms = false);
  Var operator()(ag::Graph& g, Var x) const;
};

struct AdamWConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
};

/// Adam with decoupled weight decay.
class AdamW {
 public:
  AdamW(std::vector<Parameter*> params, AdamWConfig cfg);
  /// Applies one update at lr * lr_scale, then clears gradients.
  void step(double lr_scale = 1.0);
  const AdamWConfig& config() const { return cfg_; }

 private:
  std::vector<Parameter*> params_;
  std::vector<Mat> m_, v_;
  AdamWConfig cfg_;
  std::int64_t t_ = 0;
};

/// Rescales gradients so their global L2 norm is at most max_norm.
double clip_grad_norm(const std::vector<Parameter*>& params, double max_norm);

}  // namespace textshift::nn
