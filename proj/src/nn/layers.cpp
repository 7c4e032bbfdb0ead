#include "mine/nn/layers.hpp"

#include "mine/io.hpp"
#include "mine/nn/kernels.hpp"

#include <cmath>

namespace mine::nn {

namespace {

RowMatrix glorot(Eigen::Index in, Eigen::Index out, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(in + out));
  RowMatrix w(in, out);
  for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = limit * (2.0 * rng.uniform() - 1.0);
  return w;
}

}  // namespace

Dense::Dense(Eigen::Index in, Eigen::Index out, const std::string& name, Rng& rng)
    : W(name + ".W", glorot(in, out, rng)), b(name + ".b", RowMatrix::Zero(1, out)) {}

Var Dense::forward(Graph& g, Var x) {
  require(g.value(x).cols() == W.rows(), ErrorKind::Shape,
          "dense " + W.name + ": expected " + std::to_string(W.rows()) + " input columns");
  return add_bias(g, matmul(g, x, g.param(W)), g.param(b));
}

RowMatrix forward_dense(const RowMatrix& x, const Dense& layer) {
  require(x.cols() == layer.W.rows(), ErrorKind::Shape, "forward_dense: shape mismatch");
  RowMatrix y = x * layer.W.value;
  y.rowwise() += layer.b.value.row(0);
  return y;
}

Mlp::Mlp(const std::vector<Eigen::Index>& widths, const std::string& name, Rng& rng) {
  require(widths.size() >= 2, ErrorKind::Config, "mlp needs at least input and output widths");
  for (std::size_t i = 0; i + 1 < widths.size(); ++i) {
    layers.emplace_back(widths[i], widths[i + 1], name + "." + std::to_string(i), rng);
  }
}

Var Mlp::forward(Graph& g, Var x) {
  for (std::size_t i = 0; i < layers.size(); ++i) {
    x = layers[i].forward(g, x);
    if (i + 1 < layers.size()) x = relu(g, x);
  }
  return x;
}

RowMatrix Mlp::eval(const RowMatrix& x) const {
  RowMatrix h = x;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    require(h.cols() == layers[i].W.rows(), ErrorKind::Shape, "mlp: input width mismatch");
    RowMatrix y = kernels::matmul(h, layers[i].W.value);
    y.rowwise() += layers[i].b.value.row(0);
    h = i + 1 < layers.size() ? RowMatrix(y.cwiseMax(0.0)) : std::move(y);
  }
  return h;
}

std::vector<Tensor*> Mlp::params() {
  std::vector<Tensor*> out;
  for (auto& l : layers) {
    out.push_back(&l.W);
    out.push_back(&l.b);
  }
  return out;
}

std::vector<const Tensor*> Mlp::params() const {
  std::vector<const Tensor*> out;
  for (const auto& l : layers) {
    out.push_back(&l.W);
    out.push_back(&l.b);
  }
  return out;
}

Vector TimeEmbedding::log_spaced(Eigen::Index L, double lo, double hi) {
  require(L >= 1 && lo > 0.0 && hi >= lo, ErrorKind::Config, "time embedding: bad frequency range");
  Vector w(L);
  if (L == 1) {
    w(0) = lo;
    return w;
  }
  const double a = std::log(lo), b = std::log(hi);
  for (Eigen::Index i = 0; i < L; ++i) w(i) = std::exp(a + (b - a) * static_cast<double>(i) / static_cast<double>(L - 1));
  return w;
}

TimeEmbedding::TimeEmbedding(Eigen::Index L, double lo, double hi)
    : omega("time_embed.omega", log_spaced(L, lo, hi).transpose()) {}

AttentionBlock::AttentionBlock(Eigen::Index d, Rng& rng)
    : wq("attention.W_Q", glorot(d, d, rng)),
      wk("attention.W_K", glorot(d, d, rng)),
      wv("attention.W_V", glorot(d, d, rng)) {}

Var AttentionBlock::forward(Graph& g, Var z, Eigen::Index block) {
  const auto d = static_cast<double>(wq.rows());
  require(g.value(z).cols() == wq.rows(), ErrorKind::Shape, "attention: latent width mismatch");
  const Var q = matmul(g, z, g.param(wq));
  const Var k = matmul(g, z, g.param(wk));
  const Var v = matmul(g, z, g.param(wv));
  const Var logits = scale(g, block_matmul_nt(g, q, k, block), 1.0 / std::sqrt(d));
  return add(g, z, block_matmul(g, softmax_rows(g, logits), v, block));
}

Adam::Adam(std::vector<Tensor*> params, double lr, double beta1, double beta2, double eps)
    : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
  for (auto* p : params_) {
    m_.push_back(RowMatrix::Zero(p->rows(), p->cols()));
    v_.push_back(RowMatrix::Zero(p->rows(), p->cols()));
  }
}

void Adam::step() {
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto& p = *params_[i];
    m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * p.grad;
    v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * p.grad.cwiseProduct(p.grad);
    p.value.array() -= lr_ * (m_[i].array() / c1) / ((v_[i].array() / c2).sqrt() + eps_);
  }
}

void Adam::zero_grad() {
  for (auto* p : params_) p->zero_grad();
}

nlohmann::json tensors_to_json(const std::vector<const Tensor*>& params) {
  nlohmann::json j = nlohmann::json::object();
  for (const auto* p : params) j[p->name] = io::to_json(p->value);
  return j;
}

void tensors_from_json(const nlohmann::json& j, const std::vector<Tensor*>& params) {
  for (auto* p : params) {
    require(j.contains(p->name), ErrorKind::Config, "weights missing tensor " + p->name);
    RowMatrix m = io::matrix_from_json(j.at(p->name));
    require(m.rows() == p->rows() && m.cols() == p->cols(), ErrorKind::Shape,
            "weights tensor " + p->name + " has the wrong shape");
    p->value = std::move(m);
    p->zero_grad();
  }
}

}  // namespace mine::nn
