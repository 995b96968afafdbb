#pragma once

// Minimal tape-based reverse-mode autodiff over dense matrices. A Graph owns
// every node created during one forward pass; calling backward() runs the
// recorded closures in reverse creation order and accumulates gradients into
// the Parameters that were read.

#include <functional>
#include <memory>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include <Eigen/Dense>

namespace textshift {
class Rng;
}

namespace textshift::ag {

using Mat = Eigen::MatrixXd;
using RowVec = Eigen::RowVectorXd;

struct Parameter {
  std::string name;
  Mat value;
  Mat grad;

  void zero_grad() { grad.setZero(value.rows(), value.cols()); }
};

class Graph;

struct Node {
  Mat value;
  Mat grad;
  bool needs_grad = false;
  Parameter* param = nullptr;
  std::function<void()> backward;
  Graph* graph = nullptr;

  void accumulate(const Mat& g);
};

using Var = Node*;

class Graph {
 public:
  /// With recording off no backward closures are kept (inference mode).
  explicit Graph(bool recording = true) : recording_(recording) {}
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  bool recording() const noexcept { return recording_; }

  Var constant(Mat value);
  /// One leaf per parameter per graph; repeated reads share it.
  Var param(Parameter& p);

  /// Seeds d(loss)/d(loss) = 1 for a 1x1 node and backpropagates.
  void backward(Var loss);

  Var make(Mat value, bool needs_grad);

 private:
  bool recording_;
  std::vector<std::unique_ptr<Node>> nodes_;
  std::unordered_map<Parameter*, Var> params_;
};

// Linear algebra
Var matmul(Var a, Var b);
Var matmul_nt(Var a, Var b);  // a * b^T
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var add_row(Var a, Var row);  // broadcast a 1xN row over every row of a
Var mul(Var a, Var b);        // elementwise
Var scale(Var a, double s);
Var add_constant(Var a, const Mat& c);

// Activations
Var relu(Var a);
Var gelu(Var a);  // tanh approximation
Var tanh(Var a);
Var sigmoid(Var a);
Var softmax_rows(Var a);
Var layer_norm(Var x, Var gamma, Var beta, double eps = 1e-5);
Var rms_norm(Var x, Var gamma, double eps = 1e-6);
Var dropout(Var a, double p, Rng& rng);

// Shape
Var gather_rows(Var table, std::span<const int> ids);
Var slice_cols(Var a, Eigen::Index start, Eigen::Index n);
Var slice_rows(Var a, Eigen::Index start, Eigen::Index n);
Var concat_cols(std::span<const Var> parts);
Var concat_rows(std::span<const Var> parts);
Var mean_rows(Var a);  // 1xN column means

/// out(i,j) = table(index(i,j), column); used for bucketed attention biases.
Var gather_grid(Var table, const Eigen::MatrixXi& index, Eigen::Index column);

// Reductions and losses (all return 1x1)
Var sum_all(Var a);

/// Sum over rows of label-smoothed cross-entropy. Row t targets targets[t]
/// with mass (1-eps) plus eps/V spread uniformly over all V columns; rows with
/// weight 0 are ignored. Divide by the active-row count for a mean.
Var smoothed_cross_entropy(Var logits, std::span<const int> targets, std::span<const double> weights, double eps);

/// Mean binary cross-entropy of an n x 1 logit column against {0,1} labels.
Var bce_with_logits(Var logits, std::span<const double> labels);

}  // namespace textshift::ag
