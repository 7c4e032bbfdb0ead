#include "mine/quantile.hpp"

#include "mine/io.hpp"
#include "mine/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace mine::quantile {

using nlohmann::json;

// ---- emission draws ----

void Eta::validate() const {
  require(eta1 == 0 || eta1 == 1, ErrorKind::InvalidInput, "eta1 must be 0 (normal) or 1 (lognormal)");
  require(std::isfinite(eta2), ErrorKind::InvalidInput, "eta2 must be finite");
  require(std::isfinite(eta3) && eta3 > 0.0, ErrorKind::InvalidInput, "eta3 must be positive");
}

void EtaRanges::validate() const {
  require(loc_lo <= loc_hi && normal_sd_lo <= normal_sd_hi && log_sd_lo <= log_sd_hi,
          ErrorKind::Config, "eta ranges must be ordered");
  require(normal_sd_lo > 0.0 && log_sd_lo > 0.0, ErrorKind::Config, "eta scales must be positive");
}

Eta EtaRanges::sample(Rng& rng) const {
  Eta e;
  e.eta1 = static_cast<int>(rng.below(2));
  e.eta2 = loc_lo + (loc_hi - loc_lo) * rng.uniform();
  e.eta3 = e.eta1 == 0 ? normal_sd_lo + (normal_sd_hi - normal_sd_lo) * rng.uniform()
                       : log_sd_lo + (log_sd_hi - log_sd_lo) * rng.uniform();
  return e;
}

double sample_e0(const Eta& eta, Rng& rng, std::size_t* resamples) {
  eta.validate();
  for (int attempt = 0; attempt < 10000; ++attempt) {
    const double z = rng.normal();
    const double e0 = eta.eta1 == 0
                          ? eta.eta2 + eta.eta3 * z
                          : eta.eta2 + std::exp(eta.eta3 * z) - std::exp(0.5 * eta.eta3 * eta.eta3);
    if (e0 > 0.0) return e0;
    if (resamples != nullptr) ++*resamples;
  }
  throw Error(ErrorKind::NumericDomain, "sample_e0: distribution has almost no positive mass");
}

// ---- config ----

void QuantileConfig::validate() const {
  require(!hidden.empty(), ErrorKind::Config, "quantile: need at least one hidden layer");
  for (auto w : hidden) require(w > 0, ErrorKind::Config, "quantile: hidden widths must be positive");
  require(lambda >= 0.0, ErrorKind::Config, "quantile: lambda must be >= 0");
  require(lr > 0.0, ErrorKind::Config, "quantile: lr must be positive");
  require(epochs >= 1, ErrorKind::Config, "quantile: epochs must be >= 1");
}

std::size_t QuantileConfig::batch_for(std::size_t rows) const {
  if (batch > 0) return std::min(batch, rows);
  return rows <= 10000 ? rows : 1024;
}

json QuantileConfig::to_json() const {
  return {{"hidden", hidden}, {"lambda", lambda}, {"lr", lr},
          {"epochs", epochs}, {"batch", batch},   {"seed", seed}};
}

QuantileConfig QuantileConfig::from_json(const json& j) {
  QuantileConfig c;
  if (j.contains("hidden")) c.hidden = j.at("hidden").get<std::vector<Eigen::Index>>();
  if (j.contains("lambda")) c.lambda = j.at("lambda").get<double>();
  if (j.contains("lr")) c.lr = j.at("lr").get<double>();
  if (j.contains("epochs")) c.epochs = j.at("epochs").get<std::size_t>();
  if (j.contains("batch")) c.batch = j.at("batch").get<std::size_t>();
  if (j.contains("seed")) c.seed = j.at("seed").get<std::uint64_t>();
  c.validate();
  return c;
}

// ---- model ----

RowMatrix QuantileModel::normalize_inputs(const RowMatrix& x) const {
  require(x.cols() == in_min.size(), ErrorKind::Shape, "quantile model: input width mismatch");
  RowMatrix out(x.rows(), x.cols());
  for (Eigen::Index j = 0; j < x.cols(); ++j) {
    const double span = in_max(j) - in_min(j);
    if (span > 0.0) {
      out.col(j) = (2.0 * (x.col(j).array() - in_min(j)) / span - 1.0).matrix();
    } else {
      out.col(j).setZero();
    }
  }
  return out;
}

RowMatrix QuantileModel::predict_raw(const RowMatrix& x) const {
  RowMatrix out = net.eval(normalize_inputs(x));
  return (out.array() * y_sd + y_mean).matrix();
}

json QuantileModel::to_json() const {
  std::vector<Eigen::Index> widths{net.in_dim()};
  for (const auto& l : net.layers) widths.push_back(l.W.cols());
  return {{"schema_version", io::kSchemaVersion},
          {"architecture", {{"type", "quantile_mlp"}, {"widths", widths}, {"activation", "relu"}}},
          {"normalization",
           {{"in_min", io::to_json(in_min)},
            {"in_max", io::to_json(in_max)},
            {"y_mean", y_mean},
            {"y_sd", y_sd}}},
          {"config", config.to_json()},
          {"seed", config.seed},
          {"best_val_pinball", best_val_pinball},
          {"tensors", nn::tensors_to_json(net.params())}};
}

QuantileModel QuantileModel::from_json(const json& j) {
  require(j.at("schema_version").get<int>() == io::kSchemaVersion, ErrorKind::Config,
          "quantile model: unsupported schema version");
  QuantileModel m;
  m.config = QuantileConfig::from_json(j.at("config"));
  const auto widths = j.at("architecture").at("widths").get<std::vector<Eigen::Index>>();
  Rng rng(0);
  m.net = nn::Mlp(widths, "quantile", rng);
  nn::tensors_from_json(j.at("tensors"), m.net.params());
  const auto& n = j.at("normalization");
  m.in_min = io::vector_from_json(n.at("in_min"));
  m.in_max = io::vector_from_json(n.at("in_max"));
  m.y_mean = n.at("y_mean").get<double>();
  m.y_sd = n.at("y_sd").get<double>();
  m.best_val_pinball = j.at("best_val_pinball").get<double>();
  return m;
}

Interval predict_interval(const QuantileModel& model, const Vector& x) {
  const RowMatrix raw = model.predict_raw(x.transpose());
  Interval iv;
  iv.raw = raw.row(0).transpose();
  iv.lo = std::min(iv.raw(0), iv.raw(1));
  iv.hi = std::max(iv.raw(0), iv.raw(1));
  return iv;
}

std::pair<double, double> mean_pinball(const QuantileModel& model, const RowMatrix& x, const Vector& y) {
  require(x.rows() == y.size() && y.size() > 0, ErrorKind::Shape, "mean_pinball: shape mismatch");
  const RowMatrix p = model.predict_raw(x);
  double lo = 0.0, hi = 0.0;
  for (Eigen::Index i = 0; i < y.size(); ++i) {
    lo += nn::pinball(p(i, 0), y(i), kLevelLo);
    hi += nn::pinball(p(i, 1), y(i), kLevelHi);
  }
  const auto n = static_cast<double>(y.size());
  return {lo / n, hi / n};
}

// ---- training ----

QuantileModel train_quantile(const RowMatrix& x_train, const Vector& y_train, const RowMatrix& x_val,
                             const Vector& y_val, const QuantileConfig& config, TrainLog* log) {
  config.validate();
  require(x_train.rows() == y_train.size() && x_train.rows() > 0, ErrorKind::Shape,
          "train_quantile: training inputs/targets mismatch");
  require(x_val.rows() == y_val.size() && x_val.rows() > 0 && x_val.cols() == x_train.cols(),
          ErrorKind::Shape, "train_quantile: validation inputs/targets mismatch");

  QuantileModel model;
  model.config = config;
  model.in_min = x_train.colwise().minCoeff().transpose();
  model.in_max = x_train.colwise().maxCoeff().transpose();
  model.y_mean = y_train.mean();
  const double var = (y_train.array() - model.y_mean).square().mean();
  model.y_sd = var > 0.0 ? std::sqrt(var) : 1.0;

  std::vector<Eigen::Index> widths{x_train.cols()};
  widths.insert(widths.end(), config.hidden.begin(), config.hidden.end());
  widths.push_back(2);
  Rng init_rng = Rng::stream(config.seed, 0);
  model.net = nn::Mlp(widths, "quantile", init_rng);

  const RowMatrix xn = model.normalize_inputs(x_train);
  const Vector yn = (y_train.array() - model.y_mean) / model.y_sd;
  const auto n = static_cast<std::size_t>(xn.rows());
  const auto batch = config.batch_for(n);

  nn::Adam adam(model.net.params(), config.lr);
  Rng shuffle_rng = Rng::stream(config.seed, 1);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});

  nn::Mlp best = model.net;
  double best_val = std::numeric_limits<double>::infinity();
  TrainLog local;

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    if (batch < n) {
      for (std::size_t i = n - 1; i > 0; --i) std::swap(order[i], order[shuffle_rng.below(i + 1)]);
    }
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < n; start += batch) {
      const auto m = std::min(batch, n - start);
      RowMatrix xb(static_cast<Eigen::Index>(m), xn.cols());
      Vector yb(static_cast<Eigen::Index>(m));
      for (std::size_t k = 0; k < m; ++k) {
        xb.row(static_cast<Eigen::Index>(k)) = xn.row(static_cast<Eigen::Index>(order[start + k]));
        yb(static_cast<Eigen::Index>(k)) = yn(static_cast<Eigen::Index>(order[start + k]));
      }
      nn::Graph g;
      const auto preds = model.net.forward(g, g.constant(std::move(xb)));
      const auto loss = nn::scale(g, nn::quantile_objective(g, preds, yb, config.lambda),
                                  1.0 / static_cast<double>(m));
      const double value = g.value(loss)(0, 0);
      if (!std::isfinite(value)) {
        throw IndexedError(ErrorKind::TrainingDiverged, epoch, "quantile training loss is not finite");
      }
      adam.zero_grad();
      g.backward(loss);
      adam.step();
      epoch_loss += value * static_cast<double>(m);
    }
    local.train_loss.push_back(epoch_loss / static_cast<double>(n));

    const auto [plo, phi] = mean_pinball(model, x_val, y_val);
    const double val = plo + phi;
    if (!std::isfinite(val)) {
      throw IndexedError(ErrorKind::TrainingDiverged, epoch, "quantile validation loss is not finite");
    }
    local.val_pinball.push_back(val);
    if (val < best_val) {
      best_val = val;
      best = model.net;
      local.best_epoch = epoch;
    }
  }
  model.net = std::move(best);
  model.best_val_pinball = best_val;
  if (log != nullptr) *log = std::move(local);
  return model;
}

QuantileModel train_quantile(const datasets::Dataset& ds, const QuantileConfig& config, TrainLog* log) {
  require(ds.kind == "quantile", ErrorKind::InvalidInput, "train_quantile needs a quantile dataset");
  require(ds.targets.cols() == 1, ErrorKind::Shape, "quantile dataset must have one target column");
  const RowMatrix yt = ds.target_rows(ds.split.train);
  const RowMatrix yv = ds.target_rows(ds.split.val);
  return train_quantile(ds.feature_rows(ds.split.train), yt.col(0), ds.feature_rows(ds.split.val),
                        yv.col(0), config, log);
}

// ---- oracle ----

OracleResult empirical_quantile_oracle(const std::function<double(Rng&)>& sampler, std::size_t M,
                                       std::uint64_t seed) {
  require(M >= 1000, ErrorKind::InvalidInput, "quantile oracle needs at least 1000 draws");
  std::vector<double> draws(M);
  std::vector<char> ok(M, 0);
  std::vector<std::exception_ptr> errors(M);
#pragma omp parallel for schedule(dynamic, 64)
  for (std::size_t j = 0; j < M; ++j) {
    Rng rng = Rng::stream(seed, j);
    try {
      const double y = sampler(rng);
      if (std::isfinite(y)) {
        draws[j] = y;
        ok[j] = 1;
      }
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::IntegrationDiverged && e.kind() != ErrorKind::NumericDomain) {
        errors[j] = std::current_exception();
      }
    } catch (...) {
      errors[j] = std::current_exception();
    }
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);

  OracleResult r;
  for (std::size_t j = 0; j < M; ++j) {
    if (ok[j]) {
      r.draws.push_back(draws[j]);
    } else {
      ++r.failures;
    }
  }
  if (static_cast<double>(r.failures) > datasets::kMaxSkipFraction * static_cast<double>(M)) {
    throw Error(ErrorKind::DataQuality, std::to_string(r.failures) + " of " + std::to_string(M) +
                                            " oracle draws failed (limit 1%)");
  }
  std::sort(r.draws.begin(), r.draws.end());
  r.q05 = metrics::quantile_sorted(r.draws, kLevelLo);
  r.q95 = metrics::quantile_sorted(r.draws, kLevelHi);
  return r;
}

OracleResult empirical_quantile_oracle(int scenario, const Eta& eta, const RowMatrix& posterior,
                                       std::size_t M, const datasets::HorizonSimulator& simulator,
                                       std::uint64_t seed) {
  eta.validate();
  require(posterior.rows() >= 1, ErrorKind::InvalidInput, "quantile oracle: empty posterior");
  const auto rows = static_cast<std::uint64_t>(posterior.rows());
  return empirical_quantile_oracle(
      [&](Rng& rng) {
        const double e0 = sample_e0(eta, rng);
        const Vector theta = posterior.row(static_cast<Eigen::Index>(rng.below(rows))).transpose();
        return simulator(scenario, e0, theta);
      },
      M, seed);
}

// ---- evaluation ----

json QuantileEvalReport::to_json() const {
  return {{"inputs", inputs},
          {"mse_lo", mse_lo},
          {"mse_hi", mse_hi},
          {"pinball_lo", pinball_lo},
          {"pinball_hi", pinball_hi},
          {"mean_coverage", mean_coverage},
          {"mean_interval_size_model", mean_interval_size_model},
          {"mean_interval_size_empirical", mean_interval_size_empirical}};
}

QuantileEvalReport evaluate_quantile(const QuantileModel& model, const RowMatrix& test_inputs,
                                     const std::vector<std::vector<double>>& oracle_draws) {
  require(test_inputs.rows() > 0, ErrorKind::Usage, "evaluate_quantile: empty test set");
  require(static_cast<std::size_t>(test_inputs.rows()) == oracle_draws.size(), ErrorKind::Shape,
          "evaluate_quantile: one draw set per test input required");
  const RowMatrix raw = model.predict_raw(test_inputs);
  QuantileEvalReport r;
  r.inputs = oracle_draws.size();
  for (std::size_t i = 0; i < oracle_draws.size(); ++i) {
    const auto& d = oracle_draws[i];
    require(!d.empty(), ErrorKind::Usage, "evaluate_quantile: empty draw set");
    const auto row = static_cast<Eigen::Index>(i);
    const double lo = std::min(raw(row, 0), raw(row, 1));
    const double hi = std::max(raw(row, 0), raw(row, 1));
    std::vector<double> sorted(d);
    std::sort(sorted.begin(), sorted.end());
    const double q05 = metrics::quantile_sorted(sorted, kLevelLo);
    const double q95 = metrics::quantile_sorted(sorted, kLevelHi);
    r.mse_lo += (lo - q05) * (lo - q05);
    r.mse_hi += (hi - q95) * (hi - q95);
    double plo = 0.0, phi = 0.0;
    for (double y : d) {
      plo += nn::pinball(lo, y, kLevelLo);
      phi += nn::pinball(hi, y, kLevelHi);
    }
    r.pinball_lo += plo / static_cast<double>(d.size());
    r.pinball_hi += phi / static_cast<double>(d.size());
    r.mean_coverage += metrics::coverage(d, lo, hi);
    r.mean_interval_size_model += hi - lo;
    r.mean_interval_size_empirical += q95 - q05;
  }
  const auto n = static_cast<double>(r.inputs);
  r.mse_lo /= n;
  r.mse_hi /= n;
  r.pinball_lo /= n;
  r.pinball_hi /= n;
  r.mean_coverage /= n;
  r.mean_interval_size_model /= n;
  r.mean_interval_size_empirical /= n;
  return r;
}

}  // namespace mine::quantile
