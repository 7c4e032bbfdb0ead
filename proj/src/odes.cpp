#include "mine/odes.hpp"

#include "mine/io.hpp"

#include <algorithm>
#include <cmath>

namespace mine::odes {

namespace {

bool all_finite(const Eigen::Ref<const Vector>& v) { return v.allFinite(); }

}  // namespace

Species himmel_rhs(const KineticState& state, const KineticParams& params) {
  const auto& c = state.concentrations;
  require(c.allFinite() && params.theta.allFinite(), ErrorKind::InvalidInput,
          "himmel_rhs: non-finite state or parameters");
  const double a = c(0), b = c(1), cc = c(2), d = c(3);
  const double r1 = params.theta(0) * a * b;
  const double r2 = params.theta(1) * a * cc;
  const double r3 = params.theta(2) * a * d;
  Species dx;
  dx << -r1 - r2 - r3, -r1, r1 - r2, r2 - r3, r3, r1 + r2 + r3;
  return dx;
}

const std::vector<std::string>& himmel_species_names() {
  static const std::vector<std::string> names{"A", "B", "C", "D", "E", "F"};
  return names;
}

void FairLiteParams::normalize() {
  require(a.allFinite() && tau.allFinite(), ErrorKind::InvalidInput, "fair-lite: non-finite a or tau");
  require((a.array() >= 0.0).all() && a.sum() > 0.0, ErrorKind::InvalidInput,
          "fair-lite: reservoir fractions must be non-negative with positive sum");
  require((tau.array() > 0.0).all(), ErrorKind::InvalidInput, "fair-lite: lifespans must be positive");
  require(c_heat > 0.0, ErrorKind::InvalidInput, "fair-lite: heat capacity must be positive");
  require(c0 > 0.0, ErrorKind::InvalidInput, "fair-lite: reference stock must be positive");
  a /= a.sum();
}

double FairLiteParams::alpha(double temperature) const {
  const double value = alpha0 * std::exp(kappa * temperature);
  if (!(value > 0.0) || !std::isfinite(value)) {
    throw Error(ErrorKind::NumericDomain, "fair-lite: alpha(T) = " + io::format_double(value) +
                                              " at T = " + io::format_double(temperature));
  }
  return value;
}

FairLiteDerivative fairlite_rhs(const FairLiteState& state, double emission, const FairLiteParams& params) {
  require(state.reservoirs.allFinite() && std::isfinite(state.temperature) && std::isfinite(emission),
          ErrorKind::InvalidInput, "fairlite_rhs: non-finite input");
  const double alpha = params.alpha(state.temperature);
  FairLiteDerivative dx;
  for (int i = 0; i < 4; ++i) {
    dx(i) = params.a(i) * emission - state.reservoirs(i) / (alpha * params.tau(i));
  }
  const double ratio = 1.0 + state.reservoirs.sum() / params.c0;
  if (!(ratio > 0.0)) {
    throw Error(ErrorKind::NumericDomain, "fair-lite: carbon stock below zero, log forcing undefined");
  }
  const double forcing = params.f2x * std::log2(ratio);
  dx(4) = (forcing - params.t_feedback * state.temperature) / params.c_heat;
  if (!dx.allFinite()) throw Error(ErrorKind::NumericDomain, "fair-lite: derivative overflow");
  return dx;
}

FairLiteParams fairlite_from_theta(std::span<const double> theta, const FairLiteParams& base) {
  require(theta.size() == kFairLiteParams, ErrorKind::Shape,
          "fair-lite theta must have " + std::to_string(kFairLiteParams) + " entries");
  FairLiteParams p = base;
  p.alpha0 = theta[0];
  p.f2x = theta[1];
  p.c_heat = theta[2];
  p.t_feedback = theta[3];
  p.tau(1) = theta[4];
  p.tau(2) = theta[5];
  p.normalize();
  return p;
}

Vector fairlite_theta(const FairLiteParams& params) {
  Vector theta(kFairLiteParams);
  theta << params.alpha0, params.f2x, params.c_heat, params.t_feedback, params.tau(1), params.tau(2);
  return theta;
}

const std::vector<std::string>& fairlite_param_names() {
  static const std::vector<std::string> names{"alpha0", "f2x", "c_heat", "t_feedback", "tau2", "tau3"};
  return names;
}

double ScenarioSpec::emission_at(double e0, double year) const {
  double growth = 0.0;
  double seg_start = base_year;
  for (std::size_t k = 0; k < slopes.size(); ++k) {
    const double seg_end = k < boundaries.size() ? boundaries[k] : INFINITY;
    if (year <= seg_start) break;
    const double span = std::min(year, seg_end) - seg_start;
    growth += slopes[k] * span;
    seg_start = seg_end;
  }
  return e0 * (1.0 + growth);
}

ScenarioSet::ScenarioSet(std::vector<ScenarioSpec> specs) : specs_(std::move(specs)) {
  for (std::size_t i = 0; i < specs_.size(); ++i) {
    const auto& s = specs_[i];
    require(s.id == static_cast<int>(i), ErrorKind::Config, "scenario ids must be 0..K-1 in order");
    require(!s.slopes.empty() && s.boundaries.size() + 1 == s.slopes.size(), ErrorKind::Config,
            "scenario '" + s.name + "' needs one slope per segment");
    for (std::size_t k = 0; k < s.boundaries.size(); ++k) {
      const double prev = k == 0 ? s.base_year : s.boundaries[k - 1];
      require(s.boundaries[k] > prev, ErrorKind::Config, "scenario boundaries must increase");
    }
  }
}

ScenarioSet ScenarioSet::defaults(double base_year) {
  return ScenarioSet({
      {0, "low", base_year, {2040.0, 2070.0}, {-0.01, -0.02, -0.005}},
      {1, "middle", base_year, {2050.0}, {0.005, -0.008}},
      {2, "high", base_year, {}, {0.015}},
  });
}

const ScenarioSpec& ScenarioSet::get(int id) const {
  if (id < 0 || id >= size()) throw Error(ErrorKind::Config, "unknown scenario id " + std::to_string(id));
  return specs_[static_cast<std::size_t>(id)];
}

Vector scenario_pathway(const ScenarioSpec& spec, double e0, std::span<const double> years) {
  Vector out(static_cast<Eigen::Index>(years.size()));
  if (years.empty()) return out;
  require(years[0] == spec.base_year, ErrorKind::InvalidInput, "scenario grid must start at the base year");
  if (years.size() > 2) {
    const double step = years[1] - years[0];
    for (std::size_t i = 2; i < years.size(); ++i) {
      require(std::abs((years[i] - years[i - 1]) - step) <= 1e-9 * std::max(1.0, std::abs(step)),
              ErrorKind::InvalidInput, "scenario grid must be uniform");
    }
  }
  out(0) = e0;
  for (std::size_t i = 1; i < years.size(); ++i) {
    out(static_cast<Eigen::Index>(i)) = spec.emission_at(e0, years[i]);
  }
  return out;
}

Vector Trajectory::times() const {
  Vector t(static_cast<Eigen::Index>(steps + 1));
  for (std::size_t i = 0; i <= steps; ++i) t(static_cast<Eigen::Index>(i)) = time(i);
  return t;
}

Trajectory Trajectory::subsample(std::size_t stride) const {
  require(stride >= 1 && steps % stride == 0, ErrorKind::InvalidInput,
          "subsample stride must divide the step count");
  Trajectory out;
  out.t0 = t0;
  out.dt = dt * static_cast<double>(stride);
  out.steps = steps / stride;
  out.states.resize(static_cast<Eigen::Index>(out.steps + 1), states.cols());
  for (std::size_t i = 0; i <= out.steps; ++i) {
    out.states.row(static_cast<Eigen::Index>(i)) = states.row(static_cast<Eigen::Index>(i * stride));
  }
  return out;
}

Trajectory integrate(const VectorField& rhs, const Vector& x0, double t0, double dt, std::size_t steps) {
  require(dt > 0.0 && std::isfinite(dt), ErrorKind::InvalidInput, "integrate: dt must be positive");
  require(steps >= 1, ErrorKind::InvalidInput, "integrate: need at least one step");
  require(all_finite(x0), ErrorKind::InvalidInput, "integrate: non-finite initial state");

  Trajectory traj;
  traj.t0 = t0;
  traj.dt = dt;
  traj.steps = steps;
  traj.states.resize(static_cast<Eigen::Index>(steps + 1), x0.size());
  traj.states.row(0) = x0.transpose();

  Vector x = x0;
  const double half = 0.5 * dt;
  for (std::size_t i = 0; i < steps; ++i) {
    const double t = t0 + static_cast<double>(i) * dt;
    const Vector k1 = rhs(t, x);
    const Vector k2 = rhs(t + half, x + half * k1);
    const Vector k3 = rhs(t + half, x + half * k2);
    const Vector k4 = rhs(t + dt, x + dt * k3);
    x += (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    if (!all_finite(k1) || !all_finite(k2) || !all_finite(k3) || !all_finite(k4) || !all_finite(x)) {
      throw IndexedError(ErrorKind::IntegrationDiverged, i + 1, "integrate: non-finite state");
    }
    traj.states.row(static_cast<Eigen::Index>(i + 1)) = x.transpose();
  }
  return traj;
}

void write_trajectory_csv(const std::filesystem::path& path, const Trajectory& traj,
                          const std::vector<std::string>& state_names) {
  require(state_names.size() == static_cast<std::size_t>(traj.states.cols()), ErrorKind::Shape,
          "trajectory csv: one name per state column required");
  std::vector<std::string> header{"t"};
  header.insert(header.end(), state_names.begin(), state_names.end());
  RowMatrix table(traj.states.rows(), traj.states.cols() + 1);
  table.col(0) = traj.times();
  table.rightCols(traj.states.cols()) = traj.states;
  io::write_csv(path, header, table);
}

Trajectory HimmelSystem::simulate(const Vector& x0, std::span<const double> theta) const {
  require(x0.size() == kHimmelSpecies, ErrorKind::Shape, "himmel: x0 must have 6 species");
  require(theta.size() == kHimmelParams, ErrorKind::Shape, "himmel: theta must have 3 entries");
  KineticParams params;
  params.theta << theta[0], theta[1], theta[2];
  const VectorField field = [&params](double, const Vector& x) -> Vector {
    KineticState s;
    s.concentrations = x;
    return himmel_rhs(s, params);
  };
  return integrate(field, x0, 0.0, dt, steps);
}

Trajectory HimmelSystem::observe(const Vector& x0, std::span<const double> theta) const {
  return simulate(x0, theta).subsample(obs_stride);
}

double historical_emission(double year) {
  const double s = std::clamp((year - 1850.0) / 155.0, 0.0, 1.5);
  return 0.5 + 8.5 * std::pow(s, 2.5);
}

namespace {

Vector pack(const FairLiteState& s) {
  Vector x(5);
  x << s.reservoirs, s.temperature;
  return x;
}

FairLiteState unpack(const Vector& x) {
  FairLiteState s;
  s.reservoirs = x.head<4>();
  s.temperature = x(4);
  return s;
}

}  // namespace

Trajectory FairLiteSystem::historical(std::span<const double> theta) const {
  const FairLiteParams params = fairlite_from_theta(theta, base);
  const VectorField field = [&params](double t, const Vector& x) -> Vector {
    return fairlite_rhs(unpack(x), historical_emission(t), params);
  };
  const auto steps = static_cast<std::size_t>(std::llround(base_year - hist_start));
  return integrate(field, pack(FairLiteState{}), hist_start, 1.0, steps);
}

FairLiteState FairLiteSystem::state_at_base_year(std::span<const double> theta) const {
  const Trajectory hist = historical(theta);
  return unpack(hist.states.row(hist.states.rows() - 1).transpose());
}

std::size_t FairLiteSystem::projection_steps() const {
  return static_cast<std::size_t>(std::llround(end_year - base_year));
}

Trajectory FairLiteSystem::project(std::span<const double> theta, const FairLiteState& start, int scenario,
                                   double e0) const {
  const FairLiteParams params = fairlite_from_theta(theta, base);
  const ScenarioSpec& spec = scenarios.get(scenario);
  const VectorField field = [&params, &spec, e0](double t, const Vector& x) -> Vector {
    return fairlite_rhs(unpack(x), spec.emission_at(e0, t), params);
  };
  return integrate(field, pack(start), base_year, 1.0, projection_steps());
}

Trajectory FairLiteSystem::project(std::span<const double> theta, int scenario, double e0) const {
  return project(theta, state_at_base_year(theta), scenario, e0);
}

}  // namespace mine::odes
