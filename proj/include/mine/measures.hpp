#pragma once

#include "mine/common.hpp"

#include <json.hpp>

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

namespace mine::measures {

inline constexpr std::size_t kMaxAssignmentAtoms = 512;

// Atoms are rows of `points`; weights default to uniform.
struct EmpiricalMeasure {
  RowMatrix points;
  Vector weights;

  static EmpiricalMeasure uniform(RowMatrix points);

  void validate() const;
  std::size_t size() const { return static_cast<std::size_t>(points.rows()); }
  std::size_t dim() const { return static_cast<std::size_t>(points.cols()); }
  bool is_uniform() const;
  // E ||u||^2
  double second_moment() const;
};

struct LipschitzBundle {
  double L = 0.0;   // Lip(F)
  double R = 0.0;   // Lip(E) bound
  double B = 0.0;   // ||E(0)|| bound
  double F0 = 0.0;  // ||F(0)||

  void validate() const;
  double c1() const { return L + R; }
  double c2() const { return F0 + B; }
};

struct BoundReport {
  double risk_nu = 0.0;
  double risk_nu_dep = 0.0;
  double w2 = 0.0;
  double c_const = 0.0;
  double lhs = 0.0;
  double rhs = 0.0;
  double slack = 0.0;

  bool valid() const { return slack >= -1e-9; }
  nlohmann::json to_json() const;
};

using VecMap = std::function<Vector(const Vector&)>;

double w2_1d(std::span<const double> a, std::span<const double> b);
// Exact W2 between uniform 1-D empirical measures of any sizes, via the
// monotone (quantile) coupling.
double w2_1d_unequal(std::span<const double> a, std::span<const double> b);
double w2_assignment(const RowMatrix& a, const RowMatrix& b);
// Uniform measures only. Equal sizes use the assignment solver; sizes where one
// divides the other replicate the smaller measure; 1-D measures of any sizes use
// the quantile coupling.
double w2_uniform(const EmpiricalMeasure& a, const EmpiricalMeasure& b);

// All pairs (x_i, theta_j), x-major.
RowMatrix product_atoms(const RowMatrix& x, const RowMatrix& theta);

struct ProductReduction {
  double w2_joint = 0.0;
  double w2_theta = 0.0;
};
ProductReduction product_reduction_check(const EmpiricalMeasure& rho, const EmpiricalMeasure& pi,
                                         const EmpiricalMeasure& pi_hat);

double shift_constant_c(const EmpiricalMeasure& mu_a, const EmpiricalMeasure& mu_b,
                        const LipschitzBundle& lip);
// Same constant from precomputed second moments.
double shift_constant_c(double moment_a, double moment_b, const LipschitzBundle& lip);

double empirical_risk(const VecMap& emulator, const VecMap& forward, const EmpiricalMeasure& mu);

BoundReport verify_shift_bound(const VecMap& emulator, const VecMap& forward,
                               const EmpiricalMeasure& mu_train, const EmpiricalMeasure& mu_dep,
                               const LipschitzBundle& lip);

// y = W u + b
struct AffineMap {
  RowMatrix W;
  Vector b;

  Vector operator()(const Vector& u) const { return W * u + b; }
  double lipschitz() const;  // spectral norm of W
  double offset_norm() const { return b.norm(); }
};

// Weighted least-squares fit accumulated atom by atom. The normal equations
// are solved by a rank-revealing decomposition, so degenerate designs still
// return a minimiser.
class AffineFitter {
 public:
  AffineFitter(std::size_t in_dim, std::size_t out_dim);
  void add(const Vector& u, const Vector& y, double weight);
  AffineMap solve() const;

 private:
  std::size_t in_dim_;
  Eigen::MatrixXd gram_;
  Eigen::MatrixXd cross_;
};

AffineMap fit_affine(const EmpiricalMeasure& mu, const VecMap& forward);

// ---- finite-chain experiment ----

struct FiniteChainSetup {
  RowMatrix rho;     // X atoms, uniform
  Vector pi_ref;     // large reference sample of the scalar parameter
  Vector chain;      // chain draws; prefixes form the empirical posteriors
  std::vector<std::size_t> ns;
  VecMap forward;    // U = X x Theta, u = (x, theta)
  double forward_lipschitz = 0.0;
  double forward_at_zero = 0.0;
  Vector pi_dep;     // optional deployment sample, logged only
};

struct FiniteChainRow {
  std::size_t n = 0;
  double w2 = 0.0;
  double j_hat = 0.0;
  double j_star = 0.0;
  double gap = 0.0;
  double bound = 0.0;
  double c_const = 0.0;
  bool ok = false;
  // Triangle decomposition against pi_dep when supplied.
  double w2_hat_dep = -1.0;
  double w2_ref_dep = -1.0;
};

struct FiniteChainReport {
  std::vector<FiniteChainRow> rows;
  LipschitzBundle lip;
  double inf_risk_ref = 0.0;
  bool passed = false;

  RowMatrix table() const;  // columns N,w2,J_hat,J_star,gap,bound
  nlohmann::json to_json() const;
};

// Throws TheoremCheck naming the offending N when `strict` and a row fails.
FiniteChainReport finite_chain_experiment(const FiniteChainSetup& setup, bool strict = true);

// ---- mixture corollary ----

struct MixtureReport {
  double j_mix = 0.0;
  std::vector<double> j_k;
  LipschitzBundle lip;
  bool passed = false;
  nlohmann::json to_json() const;
};

// scenario_atoms[k] holds the U atoms of scenario law k (equal counts, uniform).
MixtureReport mixture_bound_check(const std::vector<RowMatrix>& scenario_atoms,
                                  const VecMap& forward, double forward_lipschitz,
                                  double forward_at_zero);

// ---- randomized drivers ----

struct ShiftSuiteResult {
  std::size_t instances = 0;
  std::size_t failures = 0;
  double min_slack = 0.0;
  std::vector<BoundReport> reports;
  nlohmann::json to_json() const;
};
ShiftSuiteResult run_shift_bound_suite(std::size_t instances, std::uint64_t seed);

struct ProductSuiteResult {
  std::size_t instances = 0;
  std::size_t failures = 0;
  double max_abs_diff = 0.0;
  nlohmann::json to_json() const;
};
ProductSuiteResult run_product_reduction_suite(std::size_t instances, std::uint64_t seed);

struct FiniteChainSuiteConfig {
  std::size_t n_ref = 50000;
  std::vector<std::size_t> ns{50, 200, 1000, 5000};
  std::size_t seeds = 20;
  std::size_t rho_atoms = 16;
  std::uint64_t seed = 0;
};

struct FiniteChainSuiteResult {
  std::vector<FiniteChainReport> reports;
  std::vector<double> median_w2;
  bool theorem_holds = false;
  bool median_decreasing = false;
  nlohmann::json to_json() const;
};
FiniteChainSuiteResult run_finite_chain_suite(const FiniteChainSuiteConfig& config);

}  // namespace mine::measures
