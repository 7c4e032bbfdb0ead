#include "mine/assignment.hpp"
#include "mine/measures.hpp"
#include "test_util.hpp"

#include <doctest.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>

using namespace mine;
using namespace mine::measures;

namespace {

RowMatrix rows(std::initializer_list<std::initializer_list<double>> r) {
  RowMatrix m(static_cast<Eigen::Index>(r.size()), static_cast<Eigen::Index>(r.begin()->size()));
  Eigen::Index i = 0;
  for (const auto& row : r) {
    Eigen::Index j = 0;
    for (double v : row) m(i, j++) = v;
    ++i;
  }
  return m;
}

EmpiricalMeasure dirac(std::initializer_list<double> atom) {
  return EmpiricalMeasure::uniform(rows({atom}));
}

// Brute force over all permutations for tiny instances.
double brute_force_w2(const RowMatrix& a, const RowMatrix& b) {
  std::vector<int> p(static_cast<std::size_t>(a.rows()));
  std::iota(p.begin(), p.end(), 0);
  double best = 1e300;
  do {
    double c = 0;
    for (Eigen::Index i = 0; i < a.rows(); ++i) c += (a.row(i) - b.row(p[static_cast<std::size_t>(i)])).squaredNorm();
    best = std::min(best, c);
  } while (std::next_permutation(p.begin(), p.end()));
  return std::sqrt(best / static_cast<double>(a.rows()));
}

}  // namespace

TEST_CASE("w2_1d examples") {
  const std::vector<double> a{0.3, -1.0, 2.5};
  CHECK(w2_1d(a, a) == 0.0);
  CHECK(w2_1d(std::vector<double>{0}, std::vector<double>{1}) == 1.0);
  CHECK(w2_1d(std::vector<double>{0, 2}, std::vector<double>{1, 3}) == doctest::Approx(1.0));
}

TEST_CASE("w2_1d_unequal matches w2_1d on equal sizes and replication") {
  Rng r(1);
  std::vector<double> a(30), b(30);
  for (auto& v : a) v = r.normal();
  for (auto& v : b) v = r.normal() + 0.5;
  CHECK(w2_1d_unequal(a, b) == doctest::Approx(w2_1d(a, b)).epsilon(1e-12));
  std::vector<double> b3;
  for (double v : b)
    for (int k = 0; k < 3; ++k) b3.push_back(v);
  CHECK(w2_1d_unequal(a, b3) == doctest::Approx(w2_1d(a, b)).epsilon(1e-12));
  // {0,1} vs {0,0.5,1}: two slabs of mass 1/6 move by 0.5, so W2^2 = 1/12.
  CHECK(w2_1d_unequal(std::vector<double>{0, 1}, std::vector<double>{0, 0.5, 1}) ==
        doctest::Approx(std::sqrt((1.0 / 6.0) * 0.25 + (1.0 / 6.0) * 0.25)).epsilon(1e-12));
}

TEST_CASE("w2_assignment examples") {
  Rng r(2);
  const RowMatrix a = test::random_matrix(6, 3, r);
  RowMatrix b = a;
  b.row(0).swap(b.row(4));
  b.row(2).swap(b.row(5));
  CHECK(w2_assignment(a, b) == doctest::Approx(0.0).scale(1.0));
  CHECK(w2_assignment(rows({{0, 0}, {1, 1}}), rows({{1, 1}, {0, 0}})) == 0.0);
  CHECK(w2_assignment(rows({{0, 0}, {1, 0}}), rows({{0, 1}, {1, 1}})) == doctest::Approx(1.0));
}

TEST_CASE("w2_assignment agrees with brute force and with sorting in 1-D") {
  Rng r(3);
  for (int k = 0; k < 25; ++k) {
    const RowMatrix a = test::random_matrix(6, 2, r), b = test::random_matrix(6, 2, r);
    CHECK(w2_assignment(a, b) == doctest::Approx(brute_force_w2(a, b)).epsilon(1e-12));
  }
  const RowMatrix a = test::random_matrix(40, 1, r), b = test::random_matrix(40, 1, r);
  CHECK(w2_assignment(a, b) ==
        doctest::Approx(w2_1d(std::span<const double>(a.data(), 40), std::span<const double>(b.data(), 40)))
            .epsilon(1e-12));
}

TEST_CASE("w2_assignment refuses more than 512 atoms") {
  const RowMatrix a = RowMatrix::Zero(513, 1);
  try {
    w2_assignment(a, a);
    FAIL("expected capacity error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::Capacity);
  }
}

TEST_CASE("hungarian: cost equals the sum of chosen entries and beats the identity") {
  Rng r(4);
  for (int k = 0; k < 10; ++k) {
    const RowMatrix c = test::random_matrix(20, 20, r).cwiseAbs();
    const auto s = ot::solve_assignment(c);
    double sum = 0, diag = 0;
    std::vector<bool> used(20, false);
    for (int i = 0; i < 20; ++i) {
      const auto j = s.row_to_col[static_cast<std::size_t>(i)];
      CHECK(!used[static_cast<std::size_t>(j)]);
      used[static_cast<std::size_t>(j)] = true;
      sum += c(i, j);
      diag += c(i, i);
    }
    CHECK(s.cost == doctest::Approx(sum));
    CHECK(s.cost <= diag + 1e-12);
  }
}

TEST_CASE("squared_distances: parallel equals serial") {
  Rng r(5);
  const RowMatrix a = test::random_matrix(300, 4, r), b = test::random_matrix(200, 4, r);
  CHECK(ot::squared_distances(a, b) == ot::squared_distances_serial(a, b));
}

TEST_CASE("product_reduction_check examples") {
  const auto rho = EmpiricalMeasure::uniform(rows({{0.2, -1.0}, {1.5, 0.3}, {0.0, 0.0}}));
  const auto pi = EmpiricalMeasure::uniform(rows({{0.1}, {0.7}, {-0.4}}));
  auto both = product_reduction_check(rho, pi, pi);
  CHECK(both.w2_joint == doctest::Approx(0.0).scale(1.0));
  CHECK(both.w2_theta == doctest::Approx(0.0).scale(1.0));

  both = product_reduction_check(dirac({3.0}), dirac({0.0}), dirac({1.0}));
  CHECK(both.w2_joint == doctest::Approx(1.0));
  CHECK(both.w2_theta == doctest::Approx(1.0));

  both = product_reduction_check(EmpiricalMeasure::uniform(rows({{-1.0}, {2.0}})),
                                 EmpiricalMeasure::uniform(rows({{0.0}, {0.0}})),
                                 EmpiricalMeasure::uniform(rows({{3.0}, {3.0}})));
  CHECK(both.w2_joint == doctest::Approx(3.0));
  CHECK(both.w2_theta == doctest::Approx(3.0));
}

TEST_CASE("product atoms are x-major") {
  const RowMatrix p = product_atoms(rows({{1}, {2}}), rows({{10}, {20}, {30}}));
  CHECK(p.rows() == 6);
  CHECK(p.row(1) == rows({{1, 20}}));
  CHECK(p.row(3) == rows({{2, 10}}));
}

TEST_CASE("shift_constant_c examples") {
  const auto zero = dirac({0.0, 0.0});
  CHECK(shift_constant_c(zero, zero, LipschitzBundle{0.5, 0.5, 0.5, 0.5}) == doctest::Approx(2.0));
  CHECK(shift_constant_c(dirac({3.0}), dirac({-7.0}), LipschitzBundle{0.0, 0.0, 4.0, 1.0}) == 0.0);
  CHECK(shift_constant_c(dirac({1.0}), dirac({-1.0}), LipschitzBundle{0.5, 0.5, 0.0, 0.0}) ==
        doctest::Approx(2.0));
}

TEST_CASE("empirical_risk examples") {
  const VecMap id = [](const Vector& u) { return u; };
  const VecMap zero = [](const Vector& u) { return Vector::Zero(u.size()).eval(); };
  const VecMap plus1 = [](const Vector& u) { return (u.array() + 1.0).matrix().eval(); };
  Rng r(6);
  const auto mu = EmpiricalMeasure::uniform(test::random_matrix(10, 1, r));
  CHECK(empirical_risk(id, id, mu) == 0.0);
  CHECK(empirical_risk(zero, id, dirac({2.0})) == doctest::Approx(4.0));
  CHECK(empirical_risk(plus1, id, mu) == doctest::Approx(1.0));
}

TEST_CASE("empirical_risk names the failing atom") {
  const VecMap id = [](const Vector& u) { return u; };
  const VecMap bad = [](const Vector& u) -> Vector {
    if (u(0) > 1.5) throw Error(ErrorKind::NumericDomain, "boom");
    return u;
  };
  try {
    empirical_risk(bad, id, EmpiricalMeasure::uniform(rows({{0.0}, {1.0}, {2.0}})));
    FAIL("expected error");
  } catch (const IndexedError& e) {
    CHECK(e.index() == 2);
  }
}

TEST_CASE("verify_shift_bound examples") {
  const VecMap id = [](const Vector& u) { return u; };
  const VecMap zero = [](const Vector& u) { return Vector::Zero(u.size()).eval(); };
  Rng r(7);
  const auto mu = EmpiricalMeasure::uniform(test::random_matrix(8, 1, r));
  const auto same = verify_shift_bound(zero, id, mu, mu, LipschitzBundle{1, 1, 0, 0});
  CHECK(same.w2 == doctest::Approx(0.0).scale(1.0));
  CHECK(same.slack >= 0.0);
  CHECK(same.lhs == doctest::Approx(same.rhs));

  const auto rep = verify_shift_bound(zero, id, dirac({1.0}), dirac({2.0}), LipschitzBundle{1, 1, 0, 0});
  CHECK(rep.lhs == doctest::Approx(4.0));
  CHECK(rep.risk_nu == doctest::Approx(1.0));
  CHECK(rep.w2 == doctest::Approx(1.0));
  CHECK(rep.c_const == doctest::Approx(4.0 * std::sqrt(10.0)));
  CHECK(rep.rhs == doctest::Approx(1.0 + 4.0 * std::sqrt(10.0)));
  CHECK(rep.valid());
}

TEST_CASE("verify_shift_bound throws when the constants are understated") {
  const VecMap id = [](const Vector& u) { return (10.0 * u).eval(); };
  const VecMap zero = [](const Vector& u) { return Vector::Zero(u.size()).eval(); };
  try {
    verify_shift_bound(zero, id, dirac({0.0}), dirac({5.0}), LipschitzBundle{0.01, 0.0, 0.0, 0.0});
    FAIL("expected violation");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::BoundViolation);
  }
}

TEST_CASE("affine fit recovers an affine map and reports its constants") {
  Rng r(8);
  AffineMap truth{test::random_matrix(2, 3, r), test::random_vector(2, r)};
  const auto mu = EmpiricalMeasure::uniform(test::random_matrix(40, 3, r));
  const auto fit = fit_affine(mu, [&](const Vector& u) { return truth(u); });
  CHECK((fit.W - truth.W).cwiseAbs().maxCoeff() < 1e-9);
  CHECK((fit.b - truth.b).cwiseAbs().maxCoeff() < 1e-9);
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(Eigen::MatrixXd(truth.W));
  CHECK(fit.lipschitz() == doctest::Approx(svd.singularValues()(0)));
}

TEST_CASE("shift bound suite: 100 random instances all hold, under 10 s") {
  const auto t0 = std::chrono::steady_clock::now();
  const auto res = run_shift_bound_suite(100, 2024);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  CHECK(res.instances == 100);
  CHECK(res.failures == 0);
  CHECK(res.min_slack >= -1e-9);
  CHECK(secs < 10.0);
}

TEST_CASE("product reduction suite: equality within 1e-9") {
  const auto res = run_product_reduction_suite(50, 99);
  CHECK(res.failures == 0);
  CHECK(res.max_abs_diff <= 1e-9);
}

TEST_CASE("finite chain: the reference itself gives zero gap") {
  Rng r(9);
  FiniteChainSetup s;
  s.rho = RowMatrix(8, 1);
  for (Eigen::Index i = 0; i < 8; ++i) s.rho(i, 0) = 2.0 * r.uniform() - 1.0;
  s.pi_ref = Vector(200);
  for (Eigen::Index i = 0; i < 200; ++i) s.pi_ref(i) = 0.5 + 0.8 * r.normal();
  s.chain = s.pi_ref;
  s.ns = {200};
  s.forward = [](const Vector& u) {
    Vector y(1);
    y(0) = 0.5 * std::sin(2 * u(0)) + std::tanh(u(1));
    return y;
  };
  s.forward_lipschitz = std::sqrt(2.0);
  const auto rep = finite_chain_experiment(s);
  CHECK(rep.rows.size() == 1);
  CHECK(rep.rows[0].w2 == doctest::Approx(0.0).scale(1.0));
  CHECK(std::abs(rep.rows[0].gap) <= 1e-9);
  CHECK(rep.passed);
}

TEST_CASE("finite chain suite: theorem holds and median W2 decreases") {
  FiniteChainSuiteConfig cfg;
  cfg.n_ref = 20000;
  cfg.ns = {50, 200, 1000};
  cfg.seeds = 8;
  cfg.seed = 3;
  const auto res = run_finite_chain_suite(cfg);
  CHECK(res.theorem_holds);
  CHECK(res.median_decreasing);
  for (const auto& rep : res.reports)
    for (const auto& row : rep.rows) {
      CHECK(row.gap >= -1e-9);
      CHECK(row.gap <= row.bound + 1e-9);
    }
}

TEST_CASE("mixture corollary on equal-weight scenario laws") {
  Rng r(10);
  std::vector<RowMatrix> laws;
  for (int k = 0; k < 3; ++k) {
    RowMatrix a = test::random_matrix(16, 2, r);
    a.col(1).array() += 0.5 * k;
    laws.push_back(a);
  }
  const auto rep = mixture_bound_check(
      laws,
      [](const Vector& u) {
        Vector y(1);
        y(0) = 0.5 * std::sin(2 * u(0)) + std::tanh(u(1));
        return y;
      },
      std::sqrt(2.0), 0.0);
  CHECK(rep.passed);
  CHECK(rep.j_k.size() == 3);
}
