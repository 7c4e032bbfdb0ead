#pragma once

#include "mine/common.hpp"
#include "mine/emission.hpp"
#include "mine/rng.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace mine::datasets {

inline constexpr std::uint16_t kFormatVersion = 1;
inline constexpr double kMaxSkipFraction = 0.01;

struct Split {
  std::vector<std::size_t> train;
  std::vector<std::size_t> val;
  std::vector<std::size_t> test;
};

// Seeded shuffle, sizes floor(0.6n) / floor(0.2n) / remainder.
Split split_622(std::size_t n, std::uint64_t seed);

struct Dataset {
  std::string kind;  // "forward" or "quantile"
  std::vector<std::string> feature_names;
  std::vector<std::string> target_names;
  RowMatrix features;  // n x f
  RowMatrix targets;   // n x k
  Split split;
  std::vector<std::size_t> chain_rows;  // post-burn-in index of each row's theta
  std::size_t skipped = 0;
  std::uint64_t seed = 0;
  std::string chain_hash;
  std::string simulator;
  nlohmann::json meta = nlohmann::json::object();  // grid, normalization, scenario info

  std::size_t size() const { return static_cast<std::size_t>(features.rows()); }
  RowMatrix feature_rows(const std::vector<std::size_t>& idx) const;
  RowMatrix target_rows(const std::vector<std::size_t>& idx) const;
};

// Per-column min/max over `idx` (used for [-1, 1] scaling) and the max
// absolute target value.
struct Normalization {
  Vector feature_min;
  Vector feature_max;
  double target_scale = 1.0;

  nlohmann::json to_json() const;
  static Normalization from_json(const nlohmann::json& j);
  static Normalization fit(const Dataset& ds, const std::vector<std::size_t>& idx);
};

// Binary file plus `<path>.json` sidecar. Returns the sha256 of the binary.
std::string save_dataset(const std::filesystem::path& path, const Dataset& ds);
// Verifies the binary hash and, when given, the chain hash; throws Provenance on mismatch.
Dataset load_dataset(const std::filesystem::path& path,
                     const std::optional<std::string>& expected_chain_hash = std::nullopt);
std::filesystem::path sidecar_path(const std::filesystem::path& path);

// ---- generation ----

// Returns a (grid rows) x (state dim) trajectory for one (x0, theta).
using TrajectorySimulator = std::function<RowMatrix(const Vector& x0, const Vector& theta)>;
using InitialStateSampler = std::function<Vector(Rng& rng)>;

struct ForwardSpec {
  std::size_t n = 0;
  std::uint64_t seed = 0;
  std::vector<std::string> state_names;
  std::vector<std::string> x0_names;     // defaults to state_names
  std::vector<std::string> theta_names;
  std::string simulator_id;
  std::string chain_hash;
  nlohmann::json grid = nlohmann::json::object();
};

// Rows are independent: row i draws from Rng::stream(seed, i). The parallel
// and serial versions produce identical datasets.
Dataset generate_forward_dataset(const RowMatrix& posterior, const InitialStateSampler& x0_sampler,
                                 const TrajectorySimulator& simulator, const ForwardSpec& spec);
Dataset generate_forward_dataset_serial(const RowMatrix& posterior,
                                        const InitialStateSampler& x0_sampler,
                                        const TrajectorySimulator& simulator,
                                        const ForwardSpec& spec);

// Horizon value for one scenario / E0 / theta.
using HorizonSimulator = std::function<double(int scenario, double e0, const Vector& theta)>;

struct QuantileSpec {
  std::size_t n = 0;
  std::uint64_t seed = 0;
  int scenarios = 3;
  std::vector<std::string> scenario_names;
  quantile::EtaRanges eta;
  std::string simulator_id;
  std::string chain_hash;
};

Dataset generate_quantile_dataset(const RowMatrix& posterior, const HorizonSimulator& simulator,
                                  const QuantileSpec& spec);
Dataset generate_quantile_dataset_serial(const RowMatrix& posterior,
                                         const HorizonSimulator& simulator,
                                         const QuantileSpec& spec);

// Feature layout of quantile inputs: one-hot scenario then eta1, eta2, eta3.
Vector quantile_features(int scenario, int scenarios, const quantile::Eta& eta);

}  // namespace mine::datasets
