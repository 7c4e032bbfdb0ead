#include "mine/aeode.hpp"

#include "mine/io.hpp"
#include "mine/metrics.hpp"
#include "mine/nn/kernels.hpp"
#include "mine/rng.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace mine::aeode {

using nlohmann::json;

// ---- config ----

std::array<double, 5> AeodeConfig::effective_alphas() const {
  auto a = alphas;
  if (!toggles.physics_loss) a[1] = a[2] = a[4] = 0.0;
  return a;
}

void AeodeConfig::validate() const {
  require(frequencies >= 1, ErrorKind::Config, "aeode: frequencies must be >= 1");
  for (auto w : encoder_hidden) require(w > 0, ErrorKind::Config, "aeode: encoder widths must be positive");
  for (auto w : decoder_hidden) require(w > 0, ErrorKind::Config, "aeode: decoder widths must be positive");
  for (double a : alphas) require(a >= 0.0 && std::isfinite(a), ErrorKind::Config, "aeode: alphas must be >= 0");
  require(!(toggles.linear_step && toggles.time_embed), ErrorKind::Config,
          "aeode: linear_step replaces the time embedding; enable at most one");
  require(train.lr > 0.0 && train.batch >= 1 && train.iters >= 1 && train.eval_every >= 1,
          ErrorKind::Config, "aeode: lr, batch, iters and eval_every must be positive");
}

json AeodeConfig::to_json() const {
  return {{"frequencies", frequencies},
          {"encoder_hidden", encoder_hidden},
          {"decoder_hidden", decoder_hidden},
          {"toggles",
           {{"time_embed", toggles.time_embed},
            {"attention", toggles.attention},
            {"physics_loss", toggles.physics_loss},
            {"linear_step", toggles.linear_step}}},
          {"alphas", alphas},
          {"train",
           {{"lr", train.lr},
            {"batch", train.batch},
            {"iters", train.iters},
            {"eval_every", train.eval_every},
            {"seed", train.seed},
            {"roll_augment", train.roll_augment}}}};
}

AeodeConfig AeodeConfig::from_json(const json& j) {
  AeodeConfig c;
  if (j.contains("frequencies")) c.frequencies = j.at("frequencies").get<Eigen::Index>();
  if (j.contains("encoder_hidden")) c.encoder_hidden = j.at("encoder_hidden").get<std::vector<Eigen::Index>>();
  if (j.contains("decoder_hidden")) c.decoder_hidden = j.at("decoder_hidden").get<std::vector<Eigen::Index>>();
  if (j.contains("toggles")) {
    const auto& t = j.at("toggles");
    c.toggles.time_embed = t.value("time_embed", c.toggles.time_embed);
    c.toggles.attention = t.value("attention", c.toggles.attention);
    c.toggles.physics_loss = t.value("physics_loss", c.toggles.physics_loss);
    c.toggles.linear_step = t.value("linear_step", c.toggles.linear_step);
  }
  if (j.contains("alphas")) c.alphas = j.at("alphas").get<std::array<double, 5>>();
  if (j.contains("train")) {
    const auto& t = j.at("train");
    c.train.lr = t.value("lr", c.train.lr);
    c.train.batch = t.value("batch", c.train.batch);
    c.train.iters = t.value("iters", c.train.iters);
    c.train.eval_every = t.value("eval_every", c.train.eval_every);
    c.train.seed = t.value("seed", c.train.seed);
    c.train.roll_augment = t.value("roll_augment", c.train.roll_augment);
  }
  c.validate();
  return c;
}

AeodeConfig AeodeConfig::full() { return AeodeConfig{}; }

AeodeConfig AeodeConfig::baseline() {
  AeodeConfig c;
  c.toggles = Toggles{false, false, false, false};
  return c;
}

AeodeConfig AeodeConfig::linear_reference() {
  AeodeConfig c;
  c.toggles = Toggles{false, false, false, true};
  return c;
}

// ---- grid / normalization ----

Vector Grid::offsets() const {
  Vector t(rows);
  for (Eigen::Index i = 0; i < rows; ++i) t(i) = static_cast<double>(i) * dt;
  return t;
}

json Grid::to_json() const { return {{"t0", t0}, {"dt", dt}, {"rows", rows}}; }

Grid Grid::from_json(const json& j) {
  Grid g;
  g.t0 = j.at("t0").get<double>();
  g.dt = j.at("dt").get<double>();
  g.rows = j.at("rows").get<Eigen::Index>();
  require(g.rows >= 1 && g.dt > 0.0, ErrorKind::Config, "grid needs rows >= 1 and dt > 0");
  return g;
}

namespace {

void minmax_forward(Eigen::Ref<RowMatrix> block, const Vector& lo, const Vector& hi) {
  for (Eigen::Index j = 0; j < block.cols(); ++j) {
    const double span = hi(j) - lo(j);
    if (span > 0.0) {
      block.col(j) = (2.0 * (block.col(j).array() - lo(j)) / span - 1.0).matrix();
    } else {
      block.col(j).array() -= lo(j);
    }
  }
}

void minmax_inverse(Eigen::Ref<RowMatrix> block, const Vector& lo, const Vector& hi) {
  for (Eigen::Index j = 0; j < block.cols(); ++j) {
    const double span = hi(j) - lo(j);
    if (span > 0.0) {
      block.col(j) = ((block.col(j).array() + 1.0) * 0.5 * span + lo(j)).matrix();
    } else {
      block.col(j).array() += lo(j);
    }
  }
}

}  // namespace

RowMatrix Normalization::normalize_inputs(const RowMatrix& inputs) const {
  require(inputs.cols() == x_dim + theta_min.size(), ErrorKind::Shape, "aeode: input width mismatch");
  RowMatrix out = inputs;
  if (x_mode == "state") {
    out.leftCols(x_dim) /= state_scale;
  } else {
    minmax_forward(out.leftCols(x_dim), x_min, x_max);
  }
  minmax_forward(out.rightCols(theta_min.size()), theta_min, theta_max);
  return out;
}

RowMatrix Normalization::denormalize_inputs(const RowMatrix& normalized) const {
  RowMatrix out = normalized;
  if (x_mode == "state") {
    out.leftCols(x_dim) *= state_scale;
  } else {
    minmax_inverse(out.leftCols(x_dim), x_min, x_max);
  }
  minmax_inverse(out.rightCols(theta_min.size()), theta_min, theta_max);
  return out;
}

json Normalization::to_json() const {
  return {{"x_mode", x_mode},
          {"x_dim", x_dim},
          {"x_min", io::to_json(x_min)},
          {"x_max", io::to_json(x_max)},
          {"theta_min", io::to_json(theta_min)},
          {"theta_max", io::to_json(theta_max)},
          {"state_scale", state_scale}};
}

Normalization Normalization::from_json(const json& j) {
  Normalization n;
  n.x_mode = j.at("x_mode").get<std::string>();
  n.x_dim = j.at("x_dim").get<Eigen::Index>();
  n.x_min = io::vector_from_json(j.at("x_min"));
  n.x_max = io::vector_from_json(j.at("x_max"));
  n.theta_min = io::vector_from_json(j.at("theta_min"));
  n.theta_max = io::vector_from_json(j.at("theta_max"));
  n.state_scale = j.at("state_scale").get<double>();
  return n;
}

Normalization Normalization::fit(const RowMatrix& inputs, Eigen::Index x_dim, const RowMatrix& targets,
                                 const std::string& x_mode) {
  require(x_mode == "state" || x_mode == "minmax", ErrorKind::Config,
          "aeode: x normalization must be \"state\" or \"minmax\"");
  require(inputs.rows() > 0 && x_dim <= inputs.cols(), ErrorKind::Shape, "aeode: bad normalization inputs");
  Normalization n;
  n.x_mode = x_mode;
  n.x_dim = x_dim;
  n.x_min = inputs.leftCols(x_dim).colwise().minCoeff().transpose();
  n.x_max = inputs.leftCols(x_dim).colwise().maxCoeff().transpose();
  const auto dt = inputs.cols() - x_dim;
  n.theta_min = inputs.rightCols(dt).colwise().minCoeff().transpose();
  n.theta_max = inputs.rightCols(dt).colwise().maxCoeff().transpose();
  n.state_scale = targets.size() > 0 ? targets.cwiseAbs().maxCoeff() : 1.0;
  if (!(n.state_scale > 0.0)) n.state_scale = 1.0;
  return n;
}

// ---- model ----

std::vector<nn::Tensor*> AeodeModel::params() {
  auto out = encoder.params();
  if (embed) out.push_back(&embed->omega);
  if (step_A) out.push_back(&*step_A);
  if (step_c) out.push_back(&*step_c);
  if (attention) {
    for (auto* p : attention->params()) out.push_back(p);
  }
  for (auto* p : decoder.params()) out.push_back(p);
  return out;
}

std::vector<const nn::Tensor*> AeodeModel::params() const {
  auto* self = const_cast<AeodeModel*>(this);
  const auto mutable_params = self->params();
  return {mutable_params.begin(), mutable_params.end()};
}

AeodeModel make_model(const AeodeConfig& config, const Grid& grid, Eigen::Index input_dim,
                      Eigen::Index state_dim, const Normalization& norm) {
  config.validate();
  require(input_dim >= 1 && state_dim >= 1, ErrorKind::Shape, "aeode: empty input or state");
  AeodeModel m;
  m.config = config;
  m.grid = grid;
  m.state_dim = state_dim;
  m.norm = norm;
  const auto d = config.latent();
  Rng rng = Rng::stream(config.train.seed, 7);

  std::vector<Eigen::Index> enc{input_dim};
  enc.insert(enc.end(), config.encoder_hidden.begin(), config.encoder_hidden.end());
  enc.push_back(d);
  m.encoder = nn::Mlp(enc, "encoder", rng);

  if (config.toggles.time_embed) {
    const double span = static_cast<double>(std::max<Eigen::Index>(grid.rows - 1, 1)) * grid.dt;
    m.embed.emplace(config.frequencies, 1.0 / (2.0 * span), 4.0 / grid.dt);
  }
  if (config.toggles.linear_step) {
    m.step_A.emplace("step.A", RowMatrix::Zero(d, d));
    m.step_c.emplace("step.c", RowMatrix::Zero(1, d));
  }
  if (config.toggles.attention) m.attention.emplace(d, rng);

  std::vector<Eigen::Index> dec{d};
  dec.insert(dec.end(), config.decoder_hidden.begin(), config.decoder_hidden.end());
  dec.push_back(state_dim);
  m.decoder = nn::Mlp(dec, "decoder", rng);
  return m;
}

json AeodeModel::to_json() const {
  std::vector<Eigen::Index> enc{encoder.in_dim()}, dec{decoder.in_dim()};
  for (const auto& l : encoder.layers) enc.push_back(l.W.cols());
  for (const auto& l : decoder.layers) dec.push_back(l.W.cols());
  return {{"schema_version", io::kSchemaVersion},
          {"architecture",
           {{"type", "aeode"},
            {"encoder", enc},
            {"decoder", dec},
            {"latent", config.latent()},
            {"time_embed", embed.has_value()},
            {"attention", attention.has_value()},
            {"linear_step", step_A.has_value()}}},
          {"config", config.to_json()},
          {"seed", config.train.seed},
          {"grid", grid.to_json()},
          {"state_dim", state_dim},
          {"state_names", state_names},
          {"normalization", norm.to_json()},
          {"tensors", nn::tensors_to_json(params())}};
}

AeodeModel AeodeModel::from_json(const json& j) {
  require(j.at("schema_version").get<int>() == io::kSchemaVersion, ErrorKind::Config,
          "aeode model: unsupported schema version");
  const auto config = AeodeConfig::from_json(j.at("config"));
  const auto grid = Grid::from_json(j.at("grid"));
  const auto norm = Normalization::from_json(j.at("normalization"));
  const auto enc = j.at("architecture").at("encoder").get<std::vector<Eigen::Index>>();
  auto m = make_model(config, grid, enc.front(), j.at("state_dim").get<Eigen::Index>(), norm);
  m.state_names = j.at("state_names").get<std::vector<std::string>>();
  nn::tensors_from_json(j.at("tensors"), m.params());
  return m;
}

// ---- forward ----

nn::Var forward_graph(AeodeModel& model, nn::Graph& g, const RowMatrix& inputs) {
  const auto S = model.grid.rows;
  const nn::Var z0 = model.encoder.forward(g, g.constant(inputs));
  nn::Var z;
  if (model.step_A) {
    z = nn::linear_rollout(g, z0, g.param(*model.step_A), g.param(*model.step_c), S);
  } else if (model.embed) {
    z = nn::broadcast_blocks(g, z0, model.embed->forward(g, model.grid.offsets()));
  } else {
    z = nn::broadcast_blocks(g, z0, S);
  }
  if (model.attention) z = model.attention->forward(g, z, S);
  return model.decoder.forward(g, z);
}

RowMatrix forward_normalized(const AeodeModel& model, const RowMatrix& inputs) {
  const auto S = model.grid.rows;
  const RowMatrix z0 = model.encoder.eval(inputs);
  const auto B = z0.rows();
  const auto d = z0.cols();
  RowMatrix z(B * S, d);
  RowMatrix lam_cache;
  if (model.step_A) {
    const auto& A = model.step_A->value;
    const auto& c = model.step_c->value;
    RowMatrix cur = z0;
    for (Eigen::Index s = 0; s < S; ++s) {
      if (s > 0) {
        RowMatrix next = cur + cur * A;
        next.rowwise() += c.row(0);
        cur = std::move(next);
      }
      for (Eigen::Index b = 0; b < B; ++b) z.row(b * S + s) = cur.row(b);
    }
  } else {
    RowMatrix lam = RowMatrix::Zero(S, d);
    if (model.embed) {
      const Vector t = model.grid.offsets();
      const auto& w = model.embed->omega.value;
      for (Eigen::Index i = 0; i < S; ++i)
        for (Eigen::Index l = 0; l < w.cols(); ++l) {
          const double ph = 6.283185307179586476925 * w(0, l) * t(i);
          lam(i, 2 * l) = std::sin(ph);
          lam(i, 2 * l + 1) = std::cos(ph);
        }
    }
    for (Eigen::Index b = 0; b < B; ++b) {
      z.middleRows(b * S, S) = lam;
      z.middleRows(b * S, S).rowwise() += z0.row(b);
    }
    lam_cache = std::move(lam);
  }
  if (model.attention) {
    const auto& a = *model.attention;
    // Without the linear step z = lam (+) z0 per block, so z W = lam W (+) z0 W.
    const auto project = [&](const RowMatrix& w) {
      if (model.step_A) return nn::kernels::matmul(z, w);
      const RowMatrix lw = lam_cache * w;
      const RowMatrix zw = nn::kernels::matmul(z0, w);
      RowMatrix out(B * S, w.cols());
      for (Eigen::Index b = 0; b < B; ++b) {
        out.middleRows(b * S, S) = lw;
        out.middleRows(b * S, S).rowwise() += zw.row(b);
      }
      return out;
    };
    const RowMatrix q = project(a.wq.value);
    const RowMatrix k = project(a.wk.value);
    const RowMatrix v = project(a.wv.value);
    RowMatrix p = (1.0 / std::sqrt(static_cast<double>(d))) * nn::kernels::block_matmul_nt(q, k, S);
    for (Eigen::Index i = 0; i < p.rows(); ++i) {
      const double mx = p.row(i).maxCoeff();
      p.row(i) = (p.row(i).array() - mx).exp();
      p.row(i) /= p.row(i).sum();
    }
    z = z + nn::kernels::block_matmul(p, v, S);
  }
  return model.decoder.eval(z);
}

RowMatrix aeode_forward_batch(const AeodeModel& model, const RowMatrix& inputs) {
  return model.norm.denormalize_targets(forward_normalized(model, model.norm.normalize_inputs(inputs)));
}

RowMatrix aeode_forward(const AeodeModel& model, const Vector& x0, const Vector& theta,
                        const std::vector<Eigen::Index>* rows) {
  RowMatrix in(1, x0.size() + theta.size());
  in.row(0).head(x0.size()) = x0.transpose();
  in.row(0).tail(theta.size()) = theta.transpose();
  RowMatrix traj = aeode_forward_batch(model, in);
  if (rows == nullptr) return traj;
  RowMatrix out(static_cast<Eigen::Index>(rows->size()), traj.cols());
  for (std::size_t k = 0; k < rows->size(); ++k) {
    const auto r = (*rows)[k];
    require(r >= 0 && r < traj.rows(), ErrorKind::InvalidInput, "aeode_forward: grid row out of range");
    out.row(static_cast<Eigen::Index>(k)) = traj.row(r);
  }
  return out;
}

RowMatrix roll_augment(const RowMatrix& traj, Eigen::Index tau) {
  const auto S = traj.rows();
  require(tau >= 0 && tau < S, ErrorKind::InvalidInput, "roll_augment: tau must lie in [0, rows)");
  RowMatrix out(S, traj.cols());
  for (Eigen::Index t = 0; t < S; ++t) out.row(t) = traj.row((t + tau) % S);
  return out;
}

// ---- training ----

json TrainReport::to_json() const {
  return {{"eval_iters", eval_iters},
          {"val_mse", val_mse},
          {"train_loss", train_loss},
          {"best_iter", best_iter},
          {"best_val_mse", best_val_mse},
          {"final_train_parts",
           {{"recon", final_train_parts.recon},
            {"d1", final_train_parts.d1},
            {"d2", final_train_parts.d2},
            {"idn", final_train_parts.idn},
            {"mass", final_train_parts.mass}}}};
}

namespace {

struct Prepared {
  RowMatrix inputs;   // normalized, n x in
  RowMatrix targets;  // normalized, n x S*N
};

Prepared prepare(const AeodeModel& model, const datasets::Dataset& ds) {
  return {model.norm.normalize_inputs(ds.features), model.norm.normalize_targets(ds.targets)};
}

// Stack trajectories of `idx` as B*S x N, optionally rolled per trajectory.
RowMatrix stack_truth(const RowMatrix& targets, const std::vector<std::size_t>& idx, Eigen::Index S,
                      Eigen::Index N, const std::vector<Eigen::Index>* taus = nullptr) {
  RowMatrix out(static_cast<Eigen::Index>(idx.size()) * S, N);
  for (std::size_t b = 0; b < idx.size(); ++b) {
    const Eigen::Map<const RowMatrix> traj(targets.row(static_cast<Eigen::Index>(idx[b])).data(), S, N);
    if (taus != nullptr) {
      out.middleRows(static_cast<Eigen::Index>(b) * S, S) = roll_augment(traj, (*taus)[b]);
    } else {
      out.middleRows(static_cast<Eigen::Index>(b) * S, S) = traj;
    }
  }
  return out;
}

RowMatrix gather(const RowMatrix& m, const std::vector<std::size_t>& idx) {
  RowMatrix out(static_cast<Eigen::Index>(idx.size()), m.cols());
  for (std::size_t k = 0; k < idx.size(); ++k) out.row(static_cast<Eigen::Index>(k)) = m.row(static_cast<Eigen::Index>(idx[k]));
  return out;
}

RowMatrix first_rows(const RowMatrix& stacked, Eigen::Index S) {
  RowMatrix out(stacked.rows() / S, stacked.cols());
  for (Eigen::Index b = 0; b < out.rows(); ++b) out.row(b) = stacked.row(b * S);
  return out;
}

EvalParts parts_for(const AeodeModel& model, const RowMatrix& inputs, const RowMatrix& truth) {
  const auto S = model.grid.rows;
  nn::Graph g(false);
  const RowMatrix pred = forward_normalized(model, inputs);
  const auto p = g.constant(pred);
  const auto recon = g.constant(first_rows(pred, S));
  EvalParts out;
  nn::aeode_loss(g, p, truth, first_rows(truth, S), recon, {1.0, 1.0, 1.0, 1.0, 1.0}, S, model.grid.dt,
                 &out.parts);
  out.mse = out.parts.recon;
  return out;
}

}  // namespace

EvalParts evaluate_rows(const AeodeModel& model, const datasets::Dataset& ds,
                        const std::vector<std::size_t>& idx) {
  require(!idx.empty(), ErrorKind::Usage, "aeode evaluation on an empty index set");
  const auto prep = prepare(model, ds);
  return parts_for(model, gather(prep.inputs, idx), stack_truth(prep.targets, idx, model.grid.rows, model.state_dim));
}

AeodeModel train_aeode(const datasets::Dataset& ds, const AeodeConfig& config, const std::string& x_mode,
                       TrainReport* report) {
  config.validate();
  require(ds.kind == "forward", ErrorKind::InvalidInput, "train_aeode needs a forward dataset");
  require(!ds.split.train.empty() && !ds.split.val.empty(), ErrorKind::InvalidInput,
          "train_aeode needs non-empty train and validation splits");
  const auto x_dim = ds.meta.at("x0_dim").get<Eigen::Index>();
  const auto N = ds.meta.at("state_dim").get<Eigen::Index>();
  Grid grid;
  grid.t0 = ds.meta.at("grid").value("t0", 0.0);
  grid.dt = ds.meta.at("grid").value("dt", 1.0);
  grid.rows = ds.meta.at("grid").at("rows").get<Eigen::Index>();
  const auto S = grid.rows;
  require(ds.targets.cols() == S * N, ErrorKind::Shape, "trajectory width disagrees with grid metadata");

  const auto norm = Normalization::fit(ds.feature_rows(ds.split.train), x_dim,
                                       ds.target_rows(ds.split.train), x_mode);
  auto model = make_model(config, grid, ds.features.cols(), N, norm);
  for (Eigen::Index k = 0; k < N; ++k) {
    const auto& name = ds.target_names.at(static_cast<std::size_t>(k));
    model.state_names.push_back(name.substr(0, name.find('@')));
  }

  const auto prep = prepare(model, ds);
  const RowMatrix val_in = gather(prep.inputs, ds.split.val);
  const RowMatrix val_truth = stack_truth(prep.targets, ds.split.val, S, N);
  const auto alphas = config.effective_alphas();

  nn::Adam adam(model.params(), config.train.lr);
  Rng rng = Rng::stream(config.train.seed, 11);
  std::vector<std::size_t> order = ds.split.train;
  const auto n_train = order.size();
  const auto batch = std::min(config.train.batch, n_train);
  std::size_t cursor = n_train;  // forces a shuffle on the first iteration

  auto best = model;
  TrainReport local;
  local.best_val_mse = std::numeric_limits<double>::infinity();

  for (std::size_t it = 1; it <= config.train.iters; ++it) {
    if (cursor + batch > n_train) {
      for (std::size_t i = n_train - 1; i > 0; --i) std::swap(order[i], order[rng.below(i + 1)]);
      cursor = 0;
    }
    const std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(cursor),
                                       order.begin() + static_cast<std::ptrdiff_t>(cursor + batch));
    cursor += batch;

    std::vector<Eigen::Index> taus;
    if (config.train.roll_augment) {
      for (std::size_t b = 0; b < idx.size(); ++b) taus.push_back(static_cast<Eigen::Index>(rng.below(static_cast<std::uint64_t>(S))));
    }
    const RowMatrix truth = stack_truth(prep.targets, idx, S, N, config.train.roll_augment ? &taus : nullptr);

    nn::Graph g;
    const auto pred = forward_graph(model, g, gather(prep.inputs, idx));
    std::vector<Eigen::Index> starts(idx.size());
    for (std::size_t b = 0; b < idx.size(); ++b) starts[b] = static_cast<Eigen::Index>(b) * S;
    const auto recon = nn::gather_rows(g, pred, starts);
    const auto loss = nn::aeode_loss(g, pred, truth, first_rows(truth, S), recon, alphas, S, grid.dt);
    const double value = g.value(loss)(0, 0);
    if (!std::isfinite(value)) {
      throw IndexedError(ErrorKind::TrainingDiverged, it, "aeode training loss is not finite");
    }
    adam.zero_grad();
    g.backward(loss);
    adam.step();

    if (it % config.train.eval_every == 0 || it == config.train.iters) {
      const RowMatrix vp = forward_normalized(model, val_in);
      const double mse = (vp - val_truth).array().square().mean();
      if (!std::isfinite(mse)) {
        throw IndexedError(ErrorKind::TrainingDiverged, it, "aeode validation error is not finite");
      }
      local.eval_iters.push_back(it);
      local.val_mse.push_back(mse);
      local.train_loss.push_back(value);
      if (mse < local.best_val_mse) {
        local.best_val_mse = mse;
        local.best_iter = it;
        best = model;
      }
    }
  }

  const auto train_in = gather(prep.inputs, ds.split.train);
  local.final_train_parts =
      parts_for(best, train_in, stack_truth(prep.targets, ds.split.train, S, N)).parts;
  if (report != nullptr) *report = std::move(local);
  return best;
}

// ---- ensembles ----

Ensemble ensemble_predict(const AeodeModel& model, const Vector& x, const RowMatrix& posterior,
                          std::size_t n_draws, std::uint64_t seed) {
  require(n_draws >= 2, ErrorKind::InvalidInput, "ensemble_predict needs at least two draws");
  require(posterior.rows() >= 1, ErrorKind::InvalidInput, "ensemble_predict: empty posterior");
  const auto S = model.grid.rows;
  const auto N = model.state_dim;
  Rng rng(Rng::mix(seed));
  Ensemble e;
  RowMatrix inputs(static_cast<Eigen::Index>(n_draws), x.size() + posterior.cols());
  for (std::size_t k = 0; k < n_draws; ++k) {
    const auto idx = static_cast<std::size_t>(rng.below(static_cast<std::uint64_t>(posterior.rows())));
    e.chain_rows.push_back(idx);
    inputs.row(static_cast<Eigen::Index>(k)).head(x.size()) = x.transpose();
    inputs.row(static_cast<Eigen::Index>(k)).tail(posterior.cols()) = posterior.row(static_cast<Eigen::Index>(idx));
  }
  e.trajectories = aeode_forward_batch(model, inputs);
  e.q05.resize(S, N);
  e.q50.resize(S, N);
  e.q95.resize(S, N);
  std::vector<double> col(n_draws);
  for (Eigen::Index s = 0; s < S; ++s)
    for (Eigen::Index k = 0; k < N; ++k) {
      for (std::size_t d = 0; d < n_draws; ++d) col[d] = e.trajectories(static_cast<Eigen::Index>(d) * S + s, k);
      std::sort(col.begin(), col.end());
      e.q05(s, k) = metrics::quantile_sorted(col, 0.05);
      e.q50(s, k) = metrics::quantile_sorted(col, 0.50);
      e.q95(s, k) = metrics::quantile_sorted(col, 0.95);
    }
  return e;
}

}  // namespace mine::aeode
