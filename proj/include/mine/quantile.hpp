#pragma once

#include "mine/common.hpp"
#include "mine/datasets.hpp"
#include "mine/emission.hpp"
#include "mine/nn/layers.hpp"

#include <json.hpp>

#include <cstdint>
#include <vector>

namespace mine::quantile {

inline constexpr double kLevelLo = 0.05;
inline constexpr double kLevelHi = 0.95;

struct QuantileConfig {
  std::vector<Eigen::Index> hidden{20, 20};
  double lambda = 10.0;  // non-crossing penalty weight
  double lr = 1e-3;
  std::size_t epochs = 1000;
  std::size_t batch = 0;  // 0: full batch up to 1e4 rows, else 1024
  std::uint64_t seed = 0;

  void validate() const;
  std::size_t batch_for(std::size_t rows) const;
  nlohmann::json to_json() const;
  static QuantileConfig from_json(const nlohmann::json& j);
};

struct TrainLog {
  std::vector<double> train_loss;  // mean objective per epoch
  std::vector<double> val_pinball;
  std::size_t best_epoch = 0;
};

struct QuantileModel {
  nn::Mlp net;
  Vector in_min;
  Vector in_max;
  double y_mean = 0.0;
  double y_sd = 1.0;
  QuantileConfig config;
  double best_val_pinball = 0.0;

  // Per-feature affine map to [-1, 1]; constant features map to 0.
  RowMatrix normalize_inputs(const RowMatrix& x) const;
  // Raw network outputs in target units, n x 2.
  RowMatrix predict_raw(const RowMatrix& x) const;

  nlohmann::json to_json() const;
  static QuantileModel from_json(const nlohmann::json& j);
};

struct Interval {
  double lo = 0.0;
  double hi = 0.0;
  Eigen::Vector2d raw = Eigen::Vector2d::Zero();
};

Interval predict_interval(const QuantileModel& model, const Vector& x);

QuantileModel train_quantile(const RowMatrix& x_train, const Vector& y_train, const RowMatrix& x_val,
                             const Vector& y_val, const QuantileConfig& config,
                             TrainLog* log = nullptr);
// Uses the dataset's own train/val split.
QuantileModel train_quantile(const datasets::Dataset& ds, const QuantileConfig& config,
                             TrainLog* log = nullptr);

// Mean pinball loss of a model on (x, y), per level.
std::pair<double, double> mean_pinball(const QuantileModel& model, const RowMatrix& x, const Vector& y);

struct OracleResult {
  double q05 = 0.0;
  double q95 = 0.0;
  std::vector<double> draws;  // sorted
  std::size_t failures = 0;
};

// Nested Monte Carlo: E0 ~ p(E0 | eta), theta uniform over posterior rows,
// then the simulator's horizon value; type-7 order statistics.
OracleResult empirical_quantile_oracle(int scenario, const Eta& eta, const RowMatrix& posterior,
                                       std::size_t M, const datasets::HorizonSimulator& simulator,
                                       std::uint64_t seed);
// Same estimator over an arbitrary scalar sampler.
OracleResult empirical_quantile_oracle(const std::function<double(Rng&)>& sampler, std::size_t M,
                                       std::uint64_t seed);

struct QuantileEvalReport {
  std::size_t inputs = 0;
  double mse_lo = 0.0;
  double mse_hi = 0.0;
  double pinball_lo = 0.0;
  double pinball_hi = 0.0;
  double mean_coverage = 0.0;
  double mean_interval_size_model = 0.0;
  double mean_interval_size_empirical = 0.0;

  nlohmann::json to_json() const;
};

// oracle_draws[i] are simulator draws for test input i.
QuantileEvalReport evaluate_quantile(const QuantileModel& model, const RowMatrix& test_inputs,
                                     const std::vector<std::vector<double>>& oracle_draws);

}  // namespace mine::quantile
