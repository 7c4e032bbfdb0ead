#include "mine/odes.hpp"
#include "test_util.hpp"

#include <doctest.h>

#include <cmath>

using namespace mine;
using namespace mine::odes;

namespace {

KineticState kstate(std::initializer_list<double> c) {
  KineticState s;
  int i = 0;
  for (double v : c) s.concentrations(i++) = v;
  return s;
}

}  // namespace

TEST_CASE("himmel_rhs: zero rates give a zero field") {
  Rng r(1);
  for (int k = 0; k < 10; ++k) {
    KineticState s;
    for (int i = 0; i < kHimmelSpecies; ++i) s.concentrations(i) = r.uniform();
    CHECK(himmel_rhs(s, KineticParams{}).isZero(0.0));
  }
}

TEST_CASE("himmel_rhs: no A means no reaction") {
  KineticParams p;
  p.theta << 2.0, 1.0, 0.5;
  CHECK(himmel_rhs(kstate({0, 1, 1, 1, 1, 1}), p).isZero(0.0));
}

TEST_CASE("himmel_rhs: direct substitution") {
  KineticParams p;
  p.theta << 1.0, 0.0, 0.0;
  Species want;
  want << -1, -1, 1, 0, 0, 1;
  CHECK(himmel_rhs(kstate({1, 1, 0, 0, 0, 0}), p) == want);
}

TEST_CASE("himmel_rhs: components sum to zero") {
  Rng r(2);
  for (int k = 0; k < 20; ++k) {
    KineticState s;
    KineticParams p;
    for (int i = 0; i < kHimmelSpecies; ++i) s.concentrations(i) = r.uniform();
    for (int i = 0; i < 3; ++i) p.theta(i) = 3.0 * r.uniform();
    CHECK(std::abs(himmel_rhs(s, p).sum()) < 1e-14);
  }
}

TEST_CASE("fairlite_rhs: quiescent state stays put") {
  CHECK(fairlite_rhs(FairLiteState{}, 0.0, FairLiteParams{}).isZero(0.0));
}

TEST_CASE("fairlite_rhs: unit emission from empty reservoirs splits by fractions") {
  const auto d = fairlite_rhs(FairLiteState{}, 1.0, FairLiteParams{});
  CHECK(d.head<4>().sum() == doctest::Approx(1.0).epsilon(1e-14));
  const FairLiteParams p;
  for (int i = 0; i < 4; ++i) CHECK(d(i) == doctest::Approx(p.a(i) / p.a.sum()));
}

TEST_CASE("fairlite_rhs: pure decay") {
  FairLiteParams p;
  p.tau = Eigen::Vector4d::Constant(10.0);
  p.a = Eigen::Vector4d::Constant(0.25);
  p.kappa = 0.0;
  FairLiteState s;
  s.reservoirs = Eigen::Vector4d::Ones();
  const auto d = fairlite_rhs(s, 0.0, p);
  for (int i = 0; i < 4; ++i) CHECK(d(i) == doctest::Approx(-0.1).epsilon(1e-14));
}

TEST_CASE("scenario_pathway examples") {
  const auto set = ScenarioSet::defaults();
  const std::vector<double> years{2005, 2030, 2055};
  for (const auto& spec : set.specs()) CHECK(scenario_pathway(spec, 0.0, years)(0) == 0.0);

  ScenarioSpec flat;
  flat.base_year = 2005;
  flat.slopes = {0.0};
  const Vector f = scenario_pathway(flat, 15.0, years);
  CHECK((f.array() == 15.0).all());

  ScenarioSpec grow;
  grow.base_year = 0;
  grow.slopes = {0.02};
  std::vector<double> y(11);
  for (int i = 0; i <= 10; ++i) y[static_cast<std::size_t>(i)] = i;
  CHECK(scenario_pathway(grow, 100.0, y)(10) == doctest::Approx(120.0).epsilon(1e-14));
  CHECK(grow.emission_at(100.0, 10.0) == doctest::Approx(120.0).epsilon(1e-14));
}

TEST_CASE("integrate: zero field keeps the state") {
  Vector x0(3);
  x0 << 1, -2, 3;
  const auto traj = integrate([](double, const Vector& x) { return Vector::Zero(x.size()).eval(); }, x0, 0.0,
                              0.1, 50);
  CHECK(traj.states.rows() == 51);
  for (Eigen::Index i = 0; i < traj.states.rows(); ++i) CHECK(traj.states.row(i).transpose() == x0);
}

TEST_CASE("integrate: exponential decay to t = 1") {
  Vector x0(1);
  x0 << 1.0;
  const auto traj = integrate([](double, const Vector& x) { return (-x).eval(); }, x0, 0.0, 0.01, 100);
  CHECK(std::abs(traj.states(100, 0) - std::exp(-1.0)) < 1e-6);
  CHECK(traj.time(100) == doctest::Approx(1.0));
}

TEST_CASE("himmel trajectories conserve the species total") {
  HimmelSystem sys;
  Rng r(3);
  for (int k = 0; k < 10; ++k) {
    Vector x0(6);
    for (int i = 0; i < 6; ++i) x0(i) = r.uniform();
    const double th[3] = {4 * r.uniform(), 4 * r.uniform(), 4 * r.uniform()};
    const auto traj = sys.simulate(x0, th);
    const double total = x0.sum();
    for (Eigen::Index i = 0; i < traj.states.rows(); ++i)
      CHECK(std::abs(traj.states.row(i).sum() - total) / total <= 1e-10);
  }
}

TEST_CASE("himmel observation grid has 11 rows including t = 0") {
  HimmelSystem sys;
  Vector x0(6);
  x0 << 1, 0.4, 0, 0, 0, 0;
  const double th[3] = {2, 1, 0.5};
  const auto obs = sys.observe(x0, th);
  CHECK(obs.states.rows() == 11);
  CHECK(obs.states.row(0).transpose() == x0);
  CHECK(obs.dt == doctest::Approx(1.2));
}

TEST_CASE("fairlite: warming over the historical period and bounded projections") {
  FairLiteSystem sys;
  const Vector th = fairlite_theta(sys.base);
  const auto hist = sys.historical(std::span<const double>(th.data(), th.size()));
  CHECK(hist.states.rows() == 156);
  const double t2005 = hist.states(hist.states.rows() - 1, 4);
  CHECK(t2005 > 0.3);
  CHECK(t2005 < 2.0);
  for (int s = 0; s < sys.scenarios.size(); ++s) {
    const auto proj = sys.project(std::span<const double>(th.data(), th.size()), s, 9.0);
    CHECK(proj.states.rows() == static_cast<Eigen::Index>(sys.projection_steps() + 1));
    CHECK(proj.states(0, 4) == doctest::Approx(t2005));
    const double t2100 = proj.states(proj.states.rows() - 1, 4);
    CHECK(t2100 > -5.0);
    CHECK(t2100 < 15.0);
  }
}

TEST_CASE("fairlite: theta round trip") {
  FairLiteParams p;
  const Vector th = fairlite_theta(p);
  CHECK(th.size() == kFairLiteParams);
  const auto q = fairlite_from_theta(std::span<const double>(th.data(), th.size()));
  CHECK(fairlite_theta(q) == th);
}
