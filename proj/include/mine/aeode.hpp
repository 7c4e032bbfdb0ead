#pragma once

#include "mine/common.hpp"
#include "mine/datasets.hpp"
#include "mine/nn/layers.hpp"

#include <json.hpp>

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace mine::aeode {

struct Toggles {
  bool time_embed = true;
  bool attention = true;
  bool physics_loss = true;  // off: derivative and mass terms drop out
  bool linear_step = false;  // optional latent update z_s = z_{s-1} + z_{s-1} A + c
};

struct TrainSettings {
  double lr = 1e-3;
  std::size_t batch = 256;
  std::size_t iters = 10000;
  std::size_t eval_every = 250;
  std::uint64_t seed = 0;
  bool roll_augment = false;
};

struct AeodeConfig {
  Eigen::Index frequencies = 16;  // L; latent width is 2L
  std::vector<Eigen::Index> encoder_hidden{64};
  std::vector<Eigen::Index> decoder_hidden{64};
  Toggles toggles;
  std::array<double, 5> alphas{1.0, 10.0, 10.0, 1.0, 0.001};
  TrainSettings train;

  Eigen::Index latent() const { return 2 * frequencies; }
  std::array<double, 5> effective_alphas() const;
  void validate() const;
  nlohmann::json to_json() const;
  static AeodeConfig from_json(const nlohmann::json& j);

  static AeodeConfig full();
  // All three contributions off: z0 repeated, a time-independent map.
  static AeodeConfig baseline();
  // All three off, latent advanced by a learned linear step instead.
  static AeodeConfig linear_reference();
};

struct Grid {
  double t0 = 0.0;
  double dt = 1.0;
  Eigen::Index rows = 1;

  // Offsets from t0: 0, dt, 2 dt, ...
  Vector offsets() const;
  nlohmann::json to_json() const;
  static Grid from_json(const nlohmann::json& j);
};

// Inputs are (x0 | theta). The x-part is divided by the state scale ("state")
// or min-max scaled to [-1, 1] ("minmax"); theta is min-max scaled; targets
// are divided by the state scale.
struct Normalization {
  std::string x_mode = "state";
  Eigen::Index x_dim = 0;
  Vector x_min, x_max;
  Vector theta_min, theta_max;
  double state_scale = 1.0;

  RowMatrix normalize_inputs(const RowMatrix& inputs) const;
  RowMatrix denormalize_inputs(const RowMatrix& normalized) const;
  RowMatrix normalize_targets(const RowMatrix& y) const { return y / state_scale; }
  RowMatrix denormalize_targets(const RowMatrix& y) const { return y * state_scale; }

  nlohmann::json to_json() const;
  static Normalization from_json(const nlohmann::json& j);
  static Normalization fit(const RowMatrix& inputs, Eigen::Index x_dim, const RowMatrix& targets,
                           const std::string& x_mode);
};

struct AeodeModel {
  AeodeConfig config;
  Grid grid;
  Eigen::Index state_dim = 0;
  Normalization norm;
  std::vector<std::string> state_names;

  nn::Mlp encoder;
  nn::Mlp decoder;
  std::optional<nn::TimeEmbedding> embed;
  std::optional<nn::AttentionBlock> attention;
  std::optional<nn::Tensor> step_A;
  std::optional<nn::Tensor> step_c;

  std::vector<nn::Tensor*> params();
  std::vector<const nn::Tensor*> params() const;
  Eigen::Index input_dim() const { return encoder.in_dim(); }

  nlohmann::json to_json() const;
  static AeodeModel from_json(const nlohmann::json& j);
};

AeodeModel make_model(const AeodeConfig& config, const Grid& grid, Eigen::Index input_dim,
                      Eigen::Index state_dim, const Normalization& norm);

// Training-time forward on normalized inputs (B x in); returns B*S x N.
nn::Var forward_graph(AeodeModel& model, nn::Graph& g, const RowMatrix& inputs);
// Inference on normalized inputs, no tape.
RowMatrix forward_normalized(const AeodeModel& model, const RowMatrix& inputs);

// Whole trajectory (S x N, physical units) for one (x0, theta). When `rows`
// is given only those grid rows are returned; the whole grid is still produced
// in the same single pass.
RowMatrix aeode_forward(const AeodeModel& model, const Vector& x0, const Vector& theta,
                        const std::vector<Eigen::Index>* rows = nullptr);
// Batched: inputs rows are (x0 | theta) in physical units; returns B*S x N.
RowMatrix aeode_forward_batch(const AeodeModel& model, const RowMatrix& inputs);

// Row t of the result is row (t + tau) mod S of the input.
RowMatrix roll_augment(const RowMatrix& traj, Eigen::Index tau);

struct TrainReport {
  std::vector<std::size_t> eval_iters;
  std::vector<double> val_mse;
  std::vector<double> train_loss;  // loss at each evaluation point
  std::size_t best_iter = 0;
  double best_val_mse = 0.0;
  nn::AeodeLossParts final_train_parts;  // full training split, best weights
  double seconds = 0.0;

  nlohmann::json to_json() const;
};

// Dataset features are (x0 | theta), targets the flattened S x N trajectory.
AeodeModel train_aeode(const datasets::Dataset& ds, const AeodeConfig& config,
                       const std::string& x_mode = "state", TrainReport* report = nullptr);

// Loss components and plain MSE of a model on dataset rows, normalized scale.
struct EvalParts {
  nn::AeodeLossParts parts;
  double mse = 0.0;
};
EvalParts evaluate_rows(const AeodeModel& model, const datasets::Dataset& ds,
                        const std::vector<std::size_t>& idx);

struct Ensemble {
  std::vector<std::size_t> chain_rows;
  RowMatrix trajectories;  // n_draws*S x N
  RowMatrix q05, q50, q95;  // S x N
};

// x: the non-parameter input block (x0 for Himmel, scenario features for FaIR).
Ensemble ensemble_predict(const AeodeModel& model, const Vector& x, const RowMatrix& posterior,
                          std::size_t n_draws, std::uint64_t seed);

}  // namespace mine::aeode
