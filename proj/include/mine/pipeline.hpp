#pragma once

#include "mine/aeode.hpp"
#include "mine/datasets.hpp"
#include "mine/mcmc.hpp"
#include "mine/measures.hpp"
#include "mine/odes.hpp"
#include "mine/quantile.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

namespace mine::pipeline {

enum ExitCode : int { kOk = 0, kRuntime = 1, kConfig = 2, kProvenance = 3 };

// Maps an exception to the process exit code.
int exit_code_for(const std::exception& e);

struct HimmelSettings {
  odes::HimmelSystem system;
  Vector x0;
  Vector theta_true;
  std::vector<int> observe;  // species columns
  double noise_sigma = 0.01;
  Vector x0_lower;           // initial-state sampler box for datasets
  Vector x0_upper;
};

struct FairSettings {
  odes::FairLiteSystem system;
  Vector theta_true;
  double sigma_carbon = 2.0;
  double sigma_temperature = 0.05;
  int obs_stride_years = 5;
  double e0_lower = 7.0;  // forward-dataset base-year emission range
  double e0_upper = 11.0;
  quantile::EtaRanges eta;
};

struct DatasetSettings {
  std::size_t forward_rows = 0;
  std::size_t quantile_rows = 0;
  std::size_t thinning = 1;
};

struct AeodeSettings {
  aeode::AeodeConfig config;
  std::string x_mode = "state";
  bool ablation = false;
  std::vector<std::uint64_t> ablation_seeds;
};

struct EvaluateSettings {
  std::size_t oracle_draws = 2000;
  std::size_t test_inputs = 50;
};

struct EnsembleSettings {
  std::size_t draws = 400;
  Vector x;  // x0 (himmel) or (E0, scenario id) (fairlite)
};

struct VerifySettings {
  std::size_t shift_instances = 100;
  std::size_t product_instances = 50;
  measures::FiniteChainSuiteConfig finite_chain;
  std::size_t mixture_scenarios = 3;
  std::size_t mixture_atoms = 32;
};

struct PipelineConfig {
  std::string model;  // "himmel" or "fairlite"
  std::uint64_t seed = 0;
  std::filesystem::path out_dir;
  std::optional<int> threads;

  HimmelSettings himmel;
  FairSettings fair;
  mcmc::ChainConfig chain;
  mcmc::BoxPrior prior;
  DatasetSettings dataset;
  AeodeSettings aeode;
  quantile::QuantileConfig quantile;
  EvaluateSettings evaluate;
  EnsembleSettings ensemble;
  VerifySettings verify;

  bool is_himmel() const { return model == "himmel"; }
};

struct Overrides {
  std::optional<std::uint64_t> seed;
  std::optional<int> threads;
  std::optional<std::filesystem::path> out_dir;
};

// Strict parse: every field must be present; errors are Config errors naming
// the dotted field path.
PipelineConfig parse_config(const nlohmann::json& doc, const Overrides& overrides = {});
PipelineConfig load_config(const std::filesystem::path& path, const Overrides& overrides = {});

// Stage seeds derived from the global seed.
std::uint64_t stage_seed(std::uint64_t seed, std::uint64_t stage);

// ---- model wiring ----

mcmc::Observation synthetic_observations(const PipelineConfig& cfg);
mcmc::ForwardModel observation_model(const PipelineConfig& cfg, const mcmc::Observation& obs);
std::vector<std::string> parameter_names(const PipelineConfig& cfg);

// Forward-dataset simulator on the emulator grid, plus x-part sampler and names.
datasets::TrajectorySimulator trajectory_simulator(const PipelineConfig& cfg);
datasets::InitialStateSampler input_sampler(const PipelineConfig& cfg);
datasets::ForwardSpec forward_spec(const PipelineConfig& cfg, const std::string& chain_hash);
datasets::HorizonSimulator horizon_simulator(const PipelineConfig& cfg);

// ---- commands ----

struct Paths {
  std::filesystem::path chain_csv, chain_json, observations, forward_bin, quantile_bin, aeode_model,
      aeode_report, ablation, quantile_model, quantile_report, evaluation, ensemble_csv, ensemble_json,
      bounds_json, finite_chain_csv;
  explicit Paths(const std::filesystem::path& out);
};

void cmd_calibrate(const PipelineConfig& cfg, std::ostream& log);
void cmd_generate(const PipelineConfig& cfg, std::ostream& log);
void cmd_train_quantile(const PipelineConfig& cfg, std::ostream& log);
void cmd_train_forward(const PipelineConfig& cfg, std::ostream& log);
void cmd_evaluate(const PipelineConfig& cfg, std::ostream& log);
void cmd_ensemble(const PipelineConfig& cfg, std::ostream& log);
// Returns false if any theory assertion failed (reports are still written).
bool cmd_verify_bounds(const PipelineConfig& cfg, std::ostream& log);

// Dispatches by name and converts exceptions to exit codes.
int run_command(const std::string& name, const PipelineConfig& cfg, std::ostream& log, std::ostream& err);

}  // namespace mine::pipeline
