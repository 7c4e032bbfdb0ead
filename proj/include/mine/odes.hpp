#pragma once

#include "mine/common.hpp"

#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace mine::odes {

// ---------------------------------------------------------------------------
// Himmel kinetics: A+B -> C+F, A+C -> D+F, A+D -> E+F.
// ---------------------------------------------------------------------------

inline constexpr int kHimmelSpecies = 6;
inline constexpr int kHimmelParams = 3;

using Species = Eigen::Matrix<double, kHimmelSpecies, 1>;

struct KineticState {
  Species concentrations = Species::Zero();  // A, B, C, D, E, F
};

struct KineticParams {
  Eigen::Vector3d theta = Eigen::Vector3d::Zero();  // rate constants of the three reactions
};

// Components sum to zero: every reaction removes two species and creates two.
Species himmel_rhs(const KineticState& state, const KineticParams& params);

const std::vector<std::string>& himmel_species_names();

// ---------------------------------------------------------------------------
// FaIR-lite: four carbon reservoirs plus a single-box energy balance.
// ---------------------------------------------------------------------------

struct FairLiteParams {
  Eigen::Vector4d a{0.2173, 0.2240, 0.2824, 0.2763};      // reservoir fractions
  Eigen::Vector4d tau{1.0e6, 394.4, 36.54, 4.304};        // lifespans, years
  double alpha0 = 1.0;                                    // lifespan scale at T = 0
  double f2x = 3.71;                                      // W m^-2 per doubling
  double c_heat = 8.0;                                    // W yr m^-2 K^-1
  double t_feedback = 1.2;                                // W m^-2 K^-1
  double kappa = 0.05;                                    // 1/K, alpha(T) = alpha0 exp(kappa T)
  double c0 = 590.0;                                      // pre-industrial carbon stock, GtC

  // Renormalizes `a` to sum to one and checks positivity constraints.
  void normalize();
  double alpha(double temperature) const;
};

struct FairLiteState {
  Eigen::Vector4d reservoirs = Eigen::Vector4d::Zero();  // GtC above pre-industrial
  double temperature = 0.0;                              // K anomaly
};

using FairLiteDerivative = Eigen::Matrix<double, 5, 1>;

FairLiteDerivative fairlite_rhs(const FairLiteState& state, double emission, const FairLiteParams& params);

// Calibrated parameter vector: (alpha0, f2x, c_heat, t_feedback, tau_2, tau_3).
inline constexpr int kFairLiteParams = 6;
FairLiteParams fairlite_from_theta(std::span<const double> theta, const FairLiteParams& base = {});
Vector fairlite_theta(const FairLiteParams& params);
const std::vector<std::string>& fairlite_param_names();

// ---------------------------------------------------------------------------
// Emission scenarios: piecewise-linear growth relative to the base-year value.
// ---------------------------------------------------------------------------

struct ScenarioSpec {
  int id = 0;
  std::string name;
  double base_year = 2005.0;
  std::vector<double> boundaries;  // interior segment boundaries, years, increasing
  std::vector<double> slopes;      // relative growth per year, one per segment

  // E(year) = E0 * (1 + sum_k slope_k * years spent in segment k since base_year).
  double emission_at(double e0, double year) const;
};

class ScenarioSet {
 public:
  ScenarioSet() = default;
  explicit ScenarioSet(std::vector<ScenarioSpec> specs);

  // Low / middle / high pathways.
  static ScenarioSet defaults(double base_year = 2005.0);

  const ScenarioSpec& get(int id) const;
  int size() const { return static_cast<int>(specs_.size()); }
  const std::vector<ScenarioSpec>& specs() const { return specs_; }

 private:
  std::vector<ScenarioSpec> specs_;
};

Vector scenario_pathway(const ScenarioSpec& spec, double e0, std::span<const double> years);

// ---------------------------------------------------------------------------
// Fixed-step RK4.
// ---------------------------------------------------------------------------

using VectorField = std::function<Vector(double t, const Vector& x)>;

struct Trajectory {
  double t0 = 0.0;
  double dt = 1.0;
  std::size_t steps = 0;
  RowMatrix states;  // (steps + 1) x N, row per time

  double time(std::size_t i) const { return t0 + static_cast<double>(i) * dt; }
  Vector times() const;
  // Keeps rows 0, stride, 2*stride, ...; steps must be divisible by stride.
  Trajectory subsample(std::size_t stride) const;
};

Trajectory integrate(const VectorField& rhs, const Vector& x0, double t0, double dt, std::size_t steps);

void write_trajectory_csv(const std::filesystem::path& path, const Trajectory& traj,
                          const std::vector<std::string>& state_names);

// ---------------------------------------------------------------------------
// Simulators built on the pieces above.
// ---------------------------------------------------------------------------

struct HimmelSystem {
  double dt = 0.02;
  std::size_t steps = 600;
  std::size_t obs_stride = 60;  // 600 / 60 -> 11 observation rows including t = 0

  Trajectory simulate(const Vector& x0, std::span<const double> theta) const;
  // Trajectory restricted to the observation grid.
  Trajectory observe(const Vector& x0, std::span<const double> theta) const;
};

// Synthetic historical emissions (GtC/yr), smooth growth to ~9 GtC/yr in 2005.
double historical_emission(double year);

struct FairLiteSystem {
  FairLiteParams base;
  double hist_start = 1850.0;
  double base_year = 2005.0;
  double end_year = 2100.0;
  ScenarioSet scenarios = ScenarioSet::defaults();

  // Annual trajectory of (R1..R4, T) over [hist_start, base_year].
  Trajectory historical(std::span<const double> theta) const;
  FairLiteState state_at_base_year(std::span<const double> theta) const;
  // Annual trajectory over [base_year, end_year] starting from `start`.
  Trajectory project(std::span<const double> theta, const FairLiteState& start, int scenario,
                     double e0) const;
  Trajectory project(std::span<const double> theta, int scenario, double e0) const;
  std::size_t projection_steps() const;
};

}  // namespace mine::odes
