#pragma once

#include "mine/common.hpp"

#include <array>
#include <cstddef>
#include <functional>
#include <string>
#include <vector>

namespace mine::nn {

// Trainable 2-D tensor: row-major values plus an accumulated gradient.
struct Tensor {
  std::string name;
  RowMatrix value;
  RowMatrix grad;

  Tensor() = default;
  Tensor(std::string n, RowMatrix v)
      : name(std::move(n)), value(std::move(v)), grad(RowMatrix::Zero(value.rows(), value.cols())) {}

  Eigen::Index rows() const { return value.rows(); }
  Eigen::Index cols() const { return value.cols(); }
  std::size_t size() const { return static_cast<std::size_t>(value.size()); }
  void zero_grad() { grad.setZero(value.rows(), value.cols()); }
};

struct Var {
  std::size_t id = static_cast<std::size_t>(-1);
};

class Graph;

// Reverse-mode tape. Nodes are appended in evaluation order, so replaying the
// tape backwards visits every consumer before its inputs.
class Graph {
 public:
  // A graph built with record = false only evaluates; backward() is refused.
  explicit Graph(bool record = true) : record_(record) {}

  Var constant(RowMatrix value);
  Var variable(RowMatrix value);  // leaf that receives a gradient
  Var param(Tensor& t);           // leaf whose gradient accumulates into t.grad

  const RowMatrix& value(Var v) const { return nodes_.at(v.id).value; }
  const RowMatrix& grad(Var v) const { return nodes_.at(v.id).grad; }
  std::size_t size() const { return nodes_.size(); }
  bool recording() const { return record_; }

  void backward(Var loss);

  // Internal: used by op implementations.
  using Backward = std::function<void(Graph&, std::size_t self)>;
  Var push(RowMatrix value, std::vector<std::size_t> inputs, Backward back);
  bool needs_grad(Var v) const { return nodes_.at(v.id).needs_grad; }
  RowMatrix& grad_ref(std::size_t id) { return nodes_[id].grad; }
  const RowMatrix& grad_of(std::size_t id) const { return nodes_[id].grad; }
  const RowMatrix& value_of(std::size_t id) const { return nodes_[id].value; }
  bool needs_grad_id(std::size_t id) const { return nodes_[id].needs_grad; }

 private:
  struct Node {
    RowMatrix value;
    RowMatrix grad;
    Backward back;
    Tensor* param = nullptr;
    bool needs_grad = false;
  };
  std::vector<Node> nodes_;
  bool record_;
};

// ---- ops ----

Var matmul(Graph& g, Var a, Var b);
Var add_bias(Graph& g, Var a, Var bias);  // bias is 1 x cols, broadcast over rows
Var relu(Graph& g, Var a);
Var add(Graph& g, Var a, Var b);
Var sub(Graph& g, Var a, Var b);
Var scale(Graph& g, Var a, double s);
Var sum(Graph& g, Var a);   // 1 x 1
Var mean(Graph& g, Var a);  // 1 x 1
Var softmax_rows(Graph& g, Var a);
// Rows `idx` of a, in order.
Var gather_rows(Graph& g, Var a, std::vector<Eigen::Index> idx);

// t: grid (n x 1 constant), omega: 1 x L. Output n x 2L with interleaved
// (sin(2 pi w t), cos(2 pi w t)) pairs.
Var time_embed(Graph& g, const Vector& t, Var omega);

// z0: B x d, lam: S x d (optional). Output B*S x d, row b*S + s = z0_b (+ lam_s).
Var broadcast_blocks(Graph& g, Var z0, Eigen::Index block);
Var broadcast_blocks(Graph& g, Var z0, Var lam);

// Per-block products over stacked blocks of `block` rows.
Var block_matmul_nt(Graph& g, Var a, Var b, Eigen::Index block);
Var block_matmul(Graph& g, Var a, Var b, Eigen::Index block);

// z_0 = z0_b, z_s = z_{s-1} + z_{s-1} A + c, stacked as B*S x d.
Var linear_rollout(Graph& g, Var z0, Var A, Var c, Eigen::Index steps);

// ---- losses ----

double pinball(double q, double y, double tau);

// preds: n x 2 (q05, q95); returns sum of both pinball losses plus
// lambda * sum max(0, q05 - q95).
Var quantile_objective(Graph& g, Var preds, const Vector& ys, double lambda);

struct AeodeLossParts {
  double recon = 0.0;
  double d1 = 0.0;
  double d2 = 0.0;
  double idn = 0.0;
  double mass = 0.0;
};

// pred/truth: B*S x N stacked trajectories, recon: B x N prediction of x0.
// All terms are element means.
Var aeode_loss(Graph& g, Var pred, const RowMatrix& truth, const RowMatrix& x0, Var recon,
               const std::array<double, 5>& alphas, Eigen::Index steps, double dt,
               AeodeLossParts* parts = nullptr);

}  // namespace mine::nn
