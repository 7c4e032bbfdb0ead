#pragma once

#include "mine/nn/graph.hpp"
#include "mine/rng.hpp"

#include <json.hpp>

#include <string>
#include <vector>

namespace mine::nn {

// y = x W + b with W: in x out, b: 1 x out.
struct Dense {
  Tensor W;
  Tensor b;

  Dense() = default;
  Dense(Eigen::Index in, Eigen::Index out, const std::string& name, Rng& rng);

  Var forward(Graph& g, Var x);
  std::vector<Tensor*> params() { return {&W, &b}; }
};

// Graph-free evaluation of a dense layer.
RowMatrix forward_dense(const RowMatrix& x, const Dense& layer);

// Dense stack with ReLU between layers and a linear output.
struct Mlp {
  std::vector<Dense> layers;

  Mlp() = default;
  Mlp(const std::vector<Eigen::Index>& widths, const std::string& name, Rng& rng);

  Var forward(Graph& g, Var x);
  // Graph-free inference with the same arithmetic as forward().
  RowMatrix eval(const RowMatrix& x) const;
  std::vector<Tensor*> params();
  std::vector<const Tensor*> params() const;
  Eigen::Index in_dim() const { return layers.front().W.rows(); }
  Eigen::Index out_dim() const { return layers.back().W.cols(); }
};

struct TimeEmbedding {
  Tensor omega;  // 1 x L, frequencies in 1/time units

  TimeEmbedding() = default;
  TimeEmbedding(Eigen::Index L, double lo, double hi);

  static Vector log_spaced(Eigen::Index L, double lo, double hi);
  Var forward(Graph& g, const Vector& t) { return time_embed(g, t, g.param(omega)); }
  Eigen::Index width() const { return 2 * omega.cols(); }
};

// Single-head residual attention applied independently to each block of rows:
// Z + softmax(Q K^T / sqrt(d)) V with Q = Z W_Q, K = Z W_K, V = Z W_V.
struct AttentionBlock {
  Tensor wq;
  Tensor wk;
  Tensor wv;

  AttentionBlock() = default;
  AttentionBlock(Eigen::Index d, Rng& rng);

  Var forward(Graph& g, Var z, Eigen::Index block);
  std::vector<Tensor*> params() { return {&wq, &wk, &wv}; }
};

class Adam {
 public:
  Adam(std::vector<Tensor*> params, double lr, double beta1 = 0.9, double beta2 = 0.999,
       double eps = 1e-8);

  void step();
  void zero_grad();
  long steps() const { return t_; }
  double lr() const { return lr_; }

 private:
  std::vector<Tensor*> params_;
  std::vector<RowMatrix> m_;
  std::vector<RowMatrix> v_;
  double lr_, beta1_, beta2_, eps_;
  long t_ = 0;
};

// {"name": {"rows", "cols", "data"}} with full-precision values.
nlohmann::json tensors_to_json(const std::vector<const Tensor*>& params);
void tensors_from_json(const nlohmann::json& j, const std::vector<Tensor*>& params);

}  // namespace mine::nn
