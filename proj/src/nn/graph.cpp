#include "mine/nn/graph.hpp"

#include "mine/nn/kernels.hpp"

#include <cmath>

namespace mine::nn {

namespace {

constexpr double kTwoPi = 6.283185307179586476925;

void accumulate(Graph& g, std::size_t id, const RowMatrix& d) {
  if (g.needs_grad_id(id)) g.grad_ref(id) += d;
}

void check_same_shape(const RowMatrix& a, const RowMatrix& b, const char* op) {
  require(a.rows() == b.rows() && a.cols() == b.cols(), ErrorKind::Shape,
          std::string(op) + ": shape mismatch");
}

RowMatrix block_step_rows(const RowMatrix& m, Eigen::Index block, Eigen::Index step) {
  const auto blocks = m.rows() / block;
  RowMatrix out(blocks, m.cols());
  for (Eigen::Index b = 0; b < blocks; ++b) out.row(b) = m.row(b * block + step);
  return out;
}

}  // namespace

Var Graph::constant(RowMatrix value) {
  Node n;
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return Var{nodes_.size() - 1};
}

Var Graph::variable(RowMatrix value) {
  Node n;
  n.value = std::move(value);
  n.needs_grad = record_;
  nodes_.push_back(std::move(n));
  return Var{nodes_.size() - 1};
}

Var Graph::param(Tensor& t) {
  Node n;
  n.value = t.value;
  n.param = &t;
  n.needs_grad = record_;
  nodes_.push_back(std::move(n));
  return Var{nodes_.size() - 1};
}

Var Graph::push(RowMatrix value, std::vector<std::size_t> inputs, Backward back) {
  Node n;
  n.value = std::move(value);
  if (record_) {
    for (auto id : inputs) n.needs_grad = n.needs_grad || nodes_.at(id).needs_grad;
    if (n.needs_grad) n.back = std::move(back);
  }
  nodes_.push_back(std::move(n));
  return Var{nodes_.size() - 1};
}

void Graph::backward(Var loss) {
  require(record_, ErrorKind::Usage, "backward on a graph that does not record");
  require(!nodes_.empty() && loss.id < nodes_.size(), ErrorKind::Usage,
          "backward called before any forward pass");
  const auto& out = nodes_[loss.id].value;
  require(out.rows() == 1 && out.cols() == 1, ErrorKind::Usage, "backward needs a scalar loss");
  for (std::size_t i = 0; i <= loss.id; ++i) {
    if (nodes_[i].needs_grad) nodes_[i].grad.setZero(nodes_[i].value.rows(), nodes_[i].value.cols());
  }
  if (!nodes_[loss.id].needs_grad) return;
  nodes_[loss.id].grad(0, 0) = 1.0;
  for (std::size_t i = loss.id + 1; i-- > 0;) {
    if (nodes_[i].back) nodes_[i].back(*this, i);
  }
  for (std::size_t i = 0; i <= loss.id; ++i) {
    if (nodes_[i].param != nullptr) nodes_[i].param->grad += nodes_[i].grad;
  }
}

// ---- ops ----

Var matmul(Graph& g, Var a, Var b) {
  const auto& A = g.value(a);
  const auto& B = g.value(b);
  return g.push(kernels::matmul(A, B), {a.id, b.id}, [a, b](Graph& gr, std::size_t self) {
    const auto& go = gr.grad_of(self);
    if (gr.needs_grad_id(a.id)) gr.grad_ref(a.id) += kernels::matmul_nt(go, gr.value_of(b.id));
    if (gr.needs_grad_id(b.id)) gr.grad_ref(b.id) += kernels::matmul_tn(gr.value_of(a.id), go);
  });
}

Var add_bias(Graph& g, Var a, Var bias) {
  const auto& A = g.value(a);
  const auto& b = g.value(bias);
  require(b.rows() == 1 && b.cols() == A.cols(), ErrorKind::Shape, "add_bias: bias shape");
  RowMatrix out = A;
  out.rowwise() += b.row(0);
  return g.push(std::move(out), {a.id, bias.id}, [a, bias](Graph& gr, std::size_t self) {
    const auto& go = gr.grad_of(self);
    accumulate(gr, a.id, go);
    if (gr.needs_grad_id(bias.id)) gr.grad_ref(bias.id) += kernels::column_sums(go);
  });
}

Var relu(Graph& g, Var a) {
  RowMatrix out = g.value(a).cwiseMax(0.0);
  return g.push(std::move(out), {a.id}, [a](Graph& gr, std::size_t self) {
    const auto& x = gr.value_of(a.id);
    const RowMatrix d = (x.array() > 0.0).select(gr.grad_of(self), 0.0);
    accumulate(gr, a.id, d);
  });
}

Var add(Graph& g, Var a, Var b) {
  check_same_shape(g.value(a), g.value(b), "add");
  RowMatrix out = g.value(a) + g.value(b);
  return g.push(std::move(out), {a.id, b.id}, [a, b](Graph& gr, std::size_t self) {
    accumulate(gr, a.id, gr.grad_of(self));
    accumulate(gr, b.id, gr.grad_of(self));
  });
}

Var sub(Graph& g, Var a, Var b) {
  check_same_shape(g.value(a), g.value(b), "sub");
  RowMatrix out = g.value(a) - g.value(b);
  return g.push(std::move(out), {a.id, b.id}, [a, b](Graph& gr, std::size_t self) {
    accumulate(gr, a.id, gr.grad_of(self));
    if (gr.needs_grad_id(b.id)) gr.grad_ref(b.id) -= gr.grad_of(self);
  });
}

Var scale(Graph& g, Var a, double s) {
  RowMatrix out = s * g.value(a);
  return g.push(std::move(out), {a.id}, [a, s](Graph& gr, std::size_t self) {
    if (gr.needs_grad_id(a.id)) gr.grad_ref(a.id) += s * gr.grad_of(self);
  });
}

Var sum(Graph& g, Var a) {
  RowMatrix out(1, 1);
  out(0, 0) = g.value(a).sum();
  return g.push(std::move(out), {a.id}, [a](Graph& gr, std::size_t self) {
    if (gr.needs_grad_id(a.id)) gr.grad_ref(a.id).array() += gr.grad_of(self)(0, 0);
  });
}

Var mean(Graph& g, Var a) {
  const auto n = static_cast<double>(g.value(a).size());
  require(n > 0, ErrorKind::Shape, "mean of an empty tensor");
  return scale(g, sum(g, a), 1.0 / n);
}

Var softmax_rows(Graph& g, Var a) {
  const auto& x = g.value(a);
  RowMatrix out(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const double mx = x.row(i).maxCoeff();
    out.row(i) = (x.row(i).array() - mx).exp();
    out.row(i) /= out.row(i).sum();
  }
  return g.push(std::move(out), {a.id}, [a](Graph& gr, std::size_t self) {
    if (!gr.needs_grad_id(a.id)) return;
    const auto& y = gr.value_of(self);
    const auto& go = gr.grad_of(self);
    const Eigen::VectorXd dots = (go.array() * y.array()).rowwise().sum();
    RowMatrix d = y.array() * (go.colwise() - dots).array();
    gr.grad_ref(a.id) += d;
  });
}

Var gather_rows(Graph& g, Var a, std::vector<Eigen::Index> idx) {
  const auto& x = g.value(a);
  RowMatrix out(static_cast<Eigen::Index>(idx.size()), x.cols());
  for (std::size_t k = 0; k < idx.size(); ++k) {
    require(idx[k] >= 0 && idx[k] < x.rows(), ErrorKind::Shape, "gather_rows: index out of range");
    out.row(static_cast<Eigen::Index>(k)) = x.row(idx[k]);
  }
  return g.push(std::move(out), {a.id}, [a, idx = std::move(idx)](Graph& gr, std::size_t self) {
    if (!gr.needs_grad_id(a.id)) return;
    auto& ga = gr.grad_ref(a.id);
    const auto& go = gr.grad_of(self);
    for (std::size_t k = 0; k < idx.size(); ++k) ga.row(idx[k]) += go.row(static_cast<Eigen::Index>(k));
  });
}

Var time_embed(Graph& g, const Vector& t, Var omega) {
  const auto& w = g.value(omega);
  require(w.rows() == 1 && w.cols() >= 1, ErrorKind::Shape, "time_embed: omega must be 1 x L");
  require(t.allFinite(), ErrorKind::InvalidInput, "time_embed: non-finite time");
  const auto L = w.cols();
  RowMatrix out(t.size(), 2 * L);
  for (Eigen::Index i = 0; i < t.size(); ++i) {
    for (Eigen::Index l = 0; l < L; ++l) {
      const double ph = kTwoPi * w(0, l) * t(i);
      out(i, 2 * l) = std::sin(ph);
      out(i, 2 * l + 1) = std::cos(ph);
    }
  }
  return g.push(std::move(out), {omega.id}, [omega, t](Graph& gr, std::size_t self) {
    const auto& y = gr.value_of(self);
    const auto& go = gr.grad_of(self);
    auto& gw = gr.grad_ref(omega.id);
    for (Eigen::Index i = 0; i < t.size(); ++i) {
      const double f = kTwoPi * t(i);
      for (Eigen::Index l = 0; l < gw.cols(); ++l) {
        // d sin = f cos, d cos = -f sin
        gw(0, l) += f * (go(i, 2 * l) * y(i, 2 * l + 1) - go(i, 2 * l + 1) * y(i, 2 * l));
      }
    }
  });
}

Var broadcast_blocks(Graph& g, Var z0, Eigen::Index block) {
  require(block > 0, ErrorKind::Shape, "broadcast_blocks: block must be positive");
  const auto& z = g.value(z0);
  RowMatrix out(z.rows() * block, z.cols());
  for (Eigen::Index b = 0; b < z.rows(); ++b) out.middleRows(b * block, block).rowwise() = z.row(b);
  return g.push(std::move(out), {z0.id}, [z0, block](Graph& gr, std::size_t self) {
    if (!gr.needs_grad_id(z0.id)) return;
    const auto& go = gr.grad_of(self);
    auto& gz = gr.grad_ref(z0.id);
    for (Eigen::Index b = 0; b < gz.rows(); ++b) gz.row(b) += go.middleRows(b * block, block).colwise().sum();
  });
}

Var broadcast_blocks(Graph& g, Var z0, Var lam) {
  const auto& z = g.value(z0);
  const auto& l = g.value(lam);
  require(z.cols() == l.cols(), ErrorKind::Shape, "broadcast_blocks: width mismatch");
  const auto block = l.rows();
  RowMatrix out(z.rows() * block, z.cols());
  for (Eigen::Index b = 0; b < z.rows(); ++b) {
    out.middleRows(b * block, block) = l;
    out.middleRows(b * block, block).rowwise() += z.row(b);
  }
  return g.push(std::move(out), {z0.id, lam.id}, [z0, lam, block](Graph& gr, std::size_t self) {
    const auto& go = gr.grad_of(self);
    const auto blocks = go.rows() / block;
    if (gr.needs_grad_id(z0.id)) {
      auto& gz = gr.grad_ref(z0.id);
      for (Eigen::Index b = 0; b < blocks; ++b) gz.row(b) += go.middleRows(b * block, block).colwise().sum();
    }
    if (gr.needs_grad_id(lam.id)) {
      auto& gl = gr.grad_ref(lam.id);
      for (Eigen::Index b = 0; b < blocks; ++b) gl += go.middleRows(b * block, block);
    }
  });
}

Var block_matmul_nt(Graph& g, Var a, Var b, Eigen::Index block) {
  return g.push(kernels::block_matmul_nt(g.value(a), g.value(b), block), {a.id, b.id},
                [a, b, block](Graph& gr, std::size_t self) {
                  const auto& go = gr.grad_of(self);
                  // C_k = A_k B_k^T: dA_k = G_k B_k, dB_k = G_k^T A_k
                  if (gr.needs_grad_id(a.id))
                    gr.grad_ref(a.id) += kernels::block_matmul(go, gr.value_of(b.id), block);
                  if (gr.needs_grad_id(b.id))
                    gr.grad_ref(b.id) += kernels::block_matmul_tn(go, gr.value_of(a.id), block);
                });
}

Var block_matmul(Graph& g, Var a, Var b, Eigen::Index block) {
  return g.push(kernels::block_matmul(g.value(a), g.value(b), block), {a.id, b.id},
                [a, b, block](Graph& gr, std::size_t self) {
                  const auto& go = gr.grad_of(self);
                  // C_k = A_k B_k: dA_k = G_k B_k^T, dB_k = A_k^T G_k
                  if (gr.needs_grad_id(a.id))
                    gr.grad_ref(a.id) += kernels::block_matmul_nt(go, gr.value_of(b.id), block);
                  if (gr.needs_grad_id(b.id))
                    gr.grad_ref(b.id) += kernels::block_matmul_tn(gr.value_of(a.id), go, block);
                });
}

Var linear_rollout(Graph& g, Var z0, Var A, Var c, Eigen::Index steps) {
  const auto& z = g.value(z0);
  const auto& a = g.value(A);
  const auto& cc = g.value(c);
  require(steps >= 1, ErrorKind::Shape, "linear_rollout: need at least one step");
  require(a.rows() == z.cols() && a.cols() == z.cols(), ErrorKind::Shape,
          "linear_rollout: A must be d x d");
  require(cc.rows() == 1 && cc.cols() == z.cols(), ErrorKind::Shape, "linear_rollout: c must be 1 x d");
  RowMatrix out(z.rows() * steps, z.cols());
  RowMatrix cur = z;
  for (Eigen::Index s = 0; s < steps; ++s) {
    if (s > 0) {
      RowMatrix next = cur + cur * a;
      next.rowwise() += cc.row(0);
      cur = std::move(next);
    }
    for (Eigen::Index b = 0; b < z.rows(); ++b) out.row(b * steps + s) = cur.row(b);
  }
  return g.push(std::move(out), {z0.id, A.id, c.id}, [z0, A, c, steps](Graph& gr, std::size_t self) {
    const auto& go = gr.grad_of(self);
    const auto& y = gr.value_of(self);
    const auto& a = gr.value_of(A.id);
    RowMatrix gz = block_step_rows(go, steps, steps - 1);
    RowMatrix ga = RowMatrix::Zero(a.rows(), a.cols());
    RowMatrix gc = RowMatrix::Zero(1, a.cols());
    for (Eigen::Index s = steps - 1; s >= 1; --s) {
      const RowMatrix prev = block_step_rows(y, steps, s - 1);
      ga.noalias() += prev.transpose() * gz;
      gc += gz.colwise().sum();
      RowMatrix back = block_step_rows(go, steps, s - 1) + gz;
      back.noalias() += gz * a.transpose();
      gz = std::move(back);
    }
    accumulate(gr, z0.id, gz);
    accumulate(gr, A.id, ga);
    accumulate(gr, c.id, gc);
  });
}

// ---- losses ----

double pinball(double q, double y, double tau) {
  if (!(tau > 0.0 && tau < 1.0)) throw Error(ErrorKind::Config, "pinball: tau must lie in (0, 1)");
  const double r = y - q;
  return r >= 0.0 ? tau * r : (tau - 1.0) * r;
}

Var quantile_objective(Graph& g, Var preds, const Vector& ys, double lambda) {
  const auto& p = g.value(preds);
  require(p.cols() == 2 && p.rows() == ys.size(), ErrorKind::Shape,
          "quantile_objective: preds must be n x 2 matching ys");
  constexpr double lo = 0.05, hi = 0.95;
  double total = 0.0;
  for (Eigen::Index i = 0; i < p.rows(); ++i) {
    total += pinball(p(i, 0), ys(i), lo) + pinball(p(i, 1), ys(i), hi);
    total += lambda * std::max(0.0, p(i, 0) - p(i, 1));
  }
  RowMatrix out(1, 1);
  out(0, 0) = total;
  return g.push(std::move(out), {preds.id}, [preds, ys, lambda](Graph& gr, std::size_t self) {
    const auto& p = gr.value_of(preds.id);
    const double s = gr.grad_of(self)(0, 0);
    auto& gp = gr.grad_ref(preds.id);
    const auto dq = [](double q, double y, double tau) {
      if (y > q) return -tau;
      if (y < q) return 1.0 - tau;
      return 0.0;
    };
    for (Eigen::Index i = 0; i < p.rows(); ++i) {
      double g0 = dq(p(i, 0), ys(i), lo);
      double g1 = dq(p(i, 1), ys(i), hi);
      if (p(i, 0) > p(i, 1)) {
        g0 += lambda;
        g1 -= lambda;
      }
      gp(i, 0) += s * g0;
      gp(i, 1) += s * g1;
    }
  });
}

Var aeode_loss(Graph& g, Var pred, const RowMatrix& truth, const RowMatrix& x0, Var recon,
               const std::array<double, 5>& alphas, Eigen::Index steps, double dt,
               AeodeLossParts* parts) {
  const auto& p = g.value(pred);
  const auto& r0 = g.value(recon);
  check_same_shape(p, truth, "aeode_loss");
  check_same_shape(r0, x0, "aeode_loss recon");
  require(steps >= 1 && p.rows() % steps == 0 && p.rows() / steps == x0.rows(), ErrorKind::Shape,
          "aeode_loss: rows must be blocks of `steps` per initial state");
  require(dt > 0.0, ErrorKind::InvalidInput, "aeode_loss: dt must be positive");
  for (double a : alphas) require(a >= 0.0, ErrorKind::InvalidInput, "aeode_loss: alphas must be >= 0");

  const auto blocks = x0.rows();
  const auto N = p.cols();
  const RowMatrix R = p - truth;
  const RowMatrix I = r0 - x0;

  AeodeLossParts lp;
  lp.recon = R.array().square().mean();
  lp.idn = I.array().square().mean();
  const Eigen::VectorXd mass = R.rowwise().sum();
  lp.mass = mass.array().square().mean();

  const double n1 = static_cast<double>(blocks * (steps - 1) * N);
  const double n2 = static_cast<double>(blocks * (steps - 2) * N);
  if (steps >= 2) {
    double s1 = 0.0;
    for (Eigen::Index b = 0; b < blocks; ++b)
      for (Eigen::Index s = 0; s + 1 < steps; ++s)
        s1 += ((R.row(b * steps + s + 1) - R.row(b * steps + s)) / dt).squaredNorm();
    lp.d1 = s1 / n1;
  }
  if (steps >= 3) {
    double s2 = 0.0;
    const double dt2 = dt * dt;
    for (Eigen::Index b = 0; b < blocks; ++b)
      for (Eigen::Index s = 1; s + 1 < steps; ++s)
        s2 += ((R.row(b * steps + s + 1) - 2.0 * R.row(b * steps + s) + R.row(b * steps + s - 1)) / dt2)
                  .squaredNorm();
    lp.d2 = s2 / n2;
  }
  if (parts != nullptr) *parts = lp;

  RowMatrix out(1, 1);
  out(0, 0) = alphas[0] * lp.recon + alphas[1] * lp.d1 + alphas[2] * lp.d2 + alphas[3] * lp.idn +
              alphas[4] * lp.mass;

  return g.push(std::move(out), {pred.id, recon.id},
                [pred, recon, R, I, mass, alphas, steps, dt, n1, n2, blocks](Graph& gr, std::size_t self) {
                  const double s = gr.grad_of(self)(0, 0);
                  if (gr.needs_grad_id(pred.id)) {
                    RowMatrix d = (2.0 * alphas[0] / static_cast<double>(R.size())) * R;
                    d.colwise() += (2.0 * alphas[4] / static_cast<double>(R.rows())) * mass;
                    if (steps >= 2 && alphas[1] != 0.0) {
                      const double k = 2.0 * alphas[1] / (n1 * dt * dt);
                      for (Eigen::Index b = 0; b < blocks; ++b)
                        for (Eigen::Index t = 0; t + 1 < steps; ++t) {
                          const auto i = b * steps + t;
                          const RowMatrix e = k * (R.row(i + 1) - R.row(i));
                          d.row(i + 1) += e;
                          d.row(i) -= e;
                        }
                    }
                    if (steps >= 3 && alphas[2] != 0.0) {
                      const double k = 2.0 * alphas[2] / (n2 * dt * dt * dt * dt);
                      for (Eigen::Index b = 0; b < blocks; ++b)
                        for (Eigen::Index t = 1; t + 1 < steps; ++t) {
                          const auto i = b * steps + t;
                          const RowMatrix e = k * (R.row(i + 1) - 2.0 * R.row(i) + R.row(i - 1));
                          d.row(i + 1) += e;
                          d.row(i) -= 2.0 * e;
                          d.row(i - 1) += e;
                        }
                    }
                    gr.grad_ref(pred.id) += s * d;
                  }
                  if (gr.needs_grad_id(recon.id)) {
                    gr.grad_ref(recon.id) += (s * 2.0 * alphas[3] / static_cast<double>(I.size())) * I;
                  }
                });
}

}  // namespace mine::nn
