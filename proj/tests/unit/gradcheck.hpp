#pragma once

#include "mine/nn/graph.hpp"
#include "test_util.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

// Central-difference gradient checks shared by the unit and acceptance suites.
namespace mine::test {

using nn::Graph;
using nn::Var;

using Build = std::function<Var(Graph&, const std::vector<Var>&)>;

// Scalar probe sum_ij P_i out_ij R_j with random weights, so every output
// element gets its own weight.
inline Var probe(Graph& g, Var out, const RowMatrix& P, const RowMatrix& R) {
  return sum(g, matmul(g, matmul(g, g.constant(P), out), g.constant(R)));
}

inline double eval_loss(const std::vector<RowMatrix>& in, const Build& f, const RowMatrix& P, const RowMatrix& R) {
  Graph g(false);
  std::vector<Var> vars;
  for (const auto& m : in) vars.push_back(g.constant(m));
  return g.value(probe(g, f(g, vars), P, R))(0, 0);
}

// Largest elementwise relative error |a - n| / max(|a|, |n|, 1e-3) between the
// analytic gradient and a central difference with h = 1e-5.
inline double max_grad_error(const std::vector<RowMatrix>& in, const Build& f, Rng& rng) {
  Graph g0(false);
  std::vector<Var> v0;
  for (const auto& m : in) v0.push_back(g0.constant(m));
  const RowMatrix& out = g0.value(f(g0, v0));
  const RowMatrix P = random_matrix(1, out.rows(), rng);
  const RowMatrix R = random_matrix(out.cols(), 1, rng);

  Graph g;
  std::vector<Var> vars;
  for (const auto& m : in) vars.push_back(g.variable(m));
  g.backward(probe(g, f(g, vars), P, R));

  const double h = 1e-5;
  double worst = 0.0;
  for (std::size_t k = 0; k < in.size(); ++k) {
    const RowMatrix analytic = g.grad(vars[k]);
    for (Eigen::Index i = 0; i < in[k].size(); ++i) {
      auto plus = in, minus = in;
      plus[k].data()[i] += h;
      minus[k].data()[i] -= h;
      const double numeric = (eval_loss(plus, f, P, R) - eval_loss(minus, f, P, R)) / (2 * h);
      const double a = analytic.data()[i];
      worst = std::max(worst, std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-3}));
    }
  }
  return worst;
}

constexpr int kInstances = 25;
constexpr double kTol = 1e-4;

// Keeps entries at least `gap` away from zero (away from ReLU kinks).
inline RowMatrix away_from_zero(RowMatrix m, double gap) {
  for (Eigen::Index i = 0; i < m.size(); ++i) {
    double& v = m.data()[i];
    if (std::abs(v) < gap) v = v < 0 ? v - gap : v + gap;
  }
  return m;
}

struct OpCheck {
  std::string name;
  std::function<std::vector<RowMatrix>(Rng&)> make;
  Build build;
};

// Worst relative error of one op over `instances` random inputs.
inline double op_worst_error(const OpCheck& op, int instances) {
  Rng rng(std::hash<std::string>{}(op.name));
  double worst = 0.0;
  for (int k = 0; k < instances; ++k) worst = std::max(worst, max_grad_error(op.make(rng), op.build, rng));
  return worst;
}

// Every differentiable op, plus the dense and attention compositions.
inline std::vector<OpCheck> gradient_check_ops() {
  using namespace mine::nn;
  const auto mats = [](std::vector<std::pair<int, int>> shapes) {
    return [shapes](Rng& r) {
      std::vector<RowMatrix> out;
      for (auto [a, b] : shapes) out.push_back(random_matrix(a, b, r));
      return out;
    };
  };
  std::vector<OpCheck> ops;
  ops.push_back({"matmul", mats({{4, 3}, {3, 5}}), [](Graph& g, const auto& v) { return matmul(g, v[0], v[1]); }});
  ops.push_back(
      {"add_bias", mats({{4, 3}, {1, 3}}), [](Graph& g, const auto& v) { return add_bias(g, v[0], v[1]); }});
  ops.push_back({"relu",
                 [](Rng& r) { return std::vector<RowMatrix>{away_from_zero(random_matrix(5, 4, r), 1e-2)}; },
                 [](Graph& g, const auto& v) { return relu(g, v[0]); }});
  ops.push_back({"add", mats({{3, 4}, {3, 4}}), [](Graph& g, const auto& v) { return add(g, v[0], v[1]); }});
  ops.push_back({"sub", mats({{3, 4}, {3, 4}}), [](Graph& g, const auto& v) { return sub(g, v[0], v[1]); }});
  ops.push_back({"scale", mats({{3, 4}}), [](Graph& g, const auto& v) { return scale(g, v[0], -1.7); }});
  ops.push_back({"sum", mats({{3, 4}}), [](Graph& g, const auto& v) { return sum(g, v[0]); }});
  ops.push_back({"mean", mats({{3, 4}}), [](Graph& g, const auto& v) { return mean(g, v[0]); }});
  ops.push_back({"softmax_rows", mats({{4, 5}}), [](Graph& g, const auto& v) { return softmax_rows(g, v[0]); }});
  ops.push_back({"gather_rows", mats({{5, 3}}),
                 [](Graph& g, const auto& v) { return gather_rows(g, v[0], {4, 0, 0, 2}); }});
  ops.push_back({"time_embed", [](Rng& r) { return std::vector<RowMatrix>{random_matrix(1, 3, r, 0.3)}; },
                 [](Graph& g, const auto& v) {
                   Vector t(4);
                   t << 0.0, 0.7, 1.3, 2.9;
                   return time_embed(g, t, v[0]);
                 }});
  ops.push_back({"broadcast_blocks", mats({{3, 4}}),
                 [](Graph& g, const auto& v) { return broadcast_blocks(g, v[0], Eigen::Index{5}); }});
  ops.push_back({"broadcast_blocks_lam", mats({{3, 4}, {5, 4}}),
                 [](Graph& g, const auto& v) { return broadcast_blocks(g, v[0], v[1]); }});
  ops.push_back({"block_matmul_nt", mats({{12, 3}, {12, 3}}),
                 [](Graph& g, const auto& v) { return block_matmul_nt(g, v[0], v[1], 4); }});
  ops.push_back({"block_matmul", mats({{12, 4}, {12, 3}}),
                 [](Graph& g, const auto& v) { return block_matmul(g, v[0], v[1], 4); }});
  ops.push_back({"linear_rollout",
                 [](Rng& r) {
                   return std::vector<RowMatrix>{random_matrix(2, 3, r), random_matrix(3, 3, r, 0.3),
                                                 random_matrix(1, 3, r)};
                 },
                 [](Graph& g, const auto& v) { return linear_rollout(g, v[0], v[1], v[2], 5); }});
  ops.push_back({"quantile_objective",
                 [](Rng& r) {
                   // Targets are fixed at 0; predictions stay 0.2 away from 0 and from each other.
                   RowMatrix p(6, 2);
                   for (Eigen::Index i = 0; i < 6; ++i) {
                     do {
                       p(i, 0) = 2 * r.normal();
                       p(i, 1) = 2 * r.normal();
                     } while (std::abs(p(i, 0)) < 0.2 || std::abs(p(i, 1)) < 0.2 ||
                              std::abs(p(i, 0) - p(i, 1)) < 0.2);
                   }
                   return std::vector<RowMatrix>{p};
                 },
                 [](Graph& g, const auto& v) { return quantile_objective(g, v[0], Vector::Zero(6), 3.0); }});
  ops.push_back({"aeode_loss", mats({{12, 3}, {3, 3}}), [](Graph& g, const auto& v) {
                   Rng fixed(77);
                   const RowMatrix truth = random_matrix(12, 3, fixed);
                   const RowMatrix x0 = random_matrix(3, 3, fixed);
                   return aeode_loss(g, v[0], truth, x0, v[1], {1.0, 10.0, 10.0, 1.0, 0.5}, 4, 0.3);
                 }});
  // Composite layers, gradients taken through their parameters via variables.
  ops.push_back({"dense", mats({{5, 3}, {3, 4}, {1, 4}}), [](Graph& g, const auto& v) {
                   return relu(g, add_bias(g, matmul(g, v[0], v[1]), v[2]));
                 }});
  ops.push_back({"attention", mats({{8, 4}, {4, 4}, {4, 4}, {4, 4}}), [](Graph& g, const auto& v) {
                   const auto p = softmax_rows(
                       g, scale(g, block_matmul_nt(g, matmul(g, v[0], v[1]), matmul(g, v[0], v[2]), 4), 0.5));
                   return add(g, v[0], block_matmul(g, p, matmul(g, v[0], v[3]), 4));
                 }});
  return ops;
}

}  // namespace mine::test
