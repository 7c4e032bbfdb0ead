#include "mine/measures.hpp"

#include "mine/assignment.hpp"
#include "mine/rng.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace mine::measures {

using nlohmann::json;

EmpiricalMeasure EmpiricalMeasure::uniform(RowMatrix points) {
  EmpiricalMeasure mu;
  const auto n = points.rows();
  require(n > 0, ErrorKind::InvalidInput, "empirical measure needs at least one atom");
  mu.points = std::move(points);
  mu.weights = Vector::Constant(n, 1.0 / static_cast<double>(n));
  return mu;
}

void EmpiricalMeasure::validate() const {
  require(points.rows() > 0, ErrorKind::InvalidInput, "empirical measure has no atoms");
  require(weights.size() == points.rows(), ErrorKind::Shape, "weights/atoms length mismatch");
  require(points.allFinite(), ErrorKind::InvalidInput, "non-finite atom");
  require((weights.array() >= 0.0).all(), ErrorKind::InvalidInput, "negative weight");
  require(std::abs(weights.sum() - 1.0) <= 1e-12, ErrorKind::InvalidInput,
          "weights do not sum to one");
}

bool EmpiricalMeasure::is_uniform() const {
  const double w = 1.0 / static_cast<double>(points.rows());
  return ((weights.array() - w).abs() <= 1e-15).all();
}

double EmpiricalMeasure::second_moment() const {
  return weights.dot(points.rowwise().squaredNorm());
}

void LipschitzBundle::validate() const {
  for (double v : {L, R, B, F0}) {
    require(std::isfinite(v) && v >= 0.0, ErrorKind::InvalidInput,
            "Lipschitz bundle entries must be finite and nonnegative");
  }
}

json BoundReport::to_json() const {
  return {{"risk_nu", risk_nu}, {"risk_nu_dep", risk_nu_dep}, {"w2", w2}, {"c", c_const},
          {"lhs", lhs},         {"rhs", rhs},                 {"slack", slack}, {"valid", valid()}};
}

// ---- distances ----

double w2_1d(std::span<const double> a, std::span<const double> b) {
  require(a.size() == b.size(), ErrorKind::Shape, "w2_1d: length mismatch");
  require(!a.empty(), ErrorKind::InvalidInput, "w2_1d: empty sample");
  std::vector<double> sa(a.begin(), a.end()), sb(b.begin(), b.end());
  std::sort(sa.begin(), sa.end());
  std::sort(sb.begin(), sb.end());
  double s = 0.0;
  for (std::size_t i = 0; i < sa.size(); ++i) s += (sa[i] - sb[i]) * (sa[i] - sb[i]);
  return std::sqrt(s / static_cast<double>(sa.size()));
}

double w2_1d_unequal(std::span<const double> a, std::span<const double> b) {
  require(!a.empty() && !b.empty(), ErrorKind::InvalidInput, "w2_1d_unequal: empty sample");
  std::vector<double> sa(a.begin(), a.end()), sb(b.begin(), b.end());
  std::sort(sa.begin(), sa.end());
  std::sort(sb.begin(), sb.end());
  // Quantile functions are step functions with breaks at i/n and j/m; walk the
  // merged grid in integer units of 1/(n*m).
  const auto n = static_cast<unsigned long long>(sa.size());
  const auto m = static_cast<unsigned long long>(sb.size());
  unsigned long long t = 0;
  std::size_t i = 0, j = 0;
  double s = 0.0;
  while (i < sa.size() && j < sb.size()) {
    const unsigned long long end_a = (i + 1) * m;
    const unsigned long long end_b = (j + 1) * n;
    const unsigned long long next = std::min(end_a, end_b);
    const double d = sa[i] - sb[j];
    s += static_cast<double>(next - t) * d * d;
    t = next;
    if (end_a == next) ++i;
    if (end_b == next) ++j;
  }
  return std::sqrt(s / static_cast<double>(n * m));
}

double w2_assignment(const RowMatrix& a, const RowMatrix& b) {
  require(a.rows() == b.rows() && a.cols() == b.cols(), ErrorKind::Shape,
          "w2_assignment: measures must have equal size and dimension");
  require(a.rows() > 0, ErrorKind::InvalidInput, "w2_assignment: empty measure");
  if (static_cast<std::size_t>(a.rows()) > kMaxAssignmentAtoms) {
    throw Error(ErrorKind::Capacity, "w2_assignment: " + std::to_string(a.rows()) +
                                         " atoms exceeds " + std::to_string(kMaxAssignmentAtoms) +
                                         "; subsample both measures first");
  }
  const auto plan = ot::solve_assignment(ot::squared_distances(a, b));
  return std::sqrt(std::max(0.0, plan.cost) / static_cast<double>(a.rows()));
}

namespace {

RowMatrix replicate_rows(const RowMatrix& m, Eigen::Index times) {
  RowMatrix out(m.rows() * times, m.cols());
  for (Eigen::Index k = 0; k < times; ++k) out.middleRows(k * m.rows(), m.rows()) = m;
  return out;
}

std::span<const double> column_span(const RowMatrix& m) {
  return {m.data(), static_cast<std::size_t>(m.rows())};
}

}  // namespace

double w2_uniform(const EmpiricalMeasure& a, const EmpiricalMeasure& b) {
  a.validate();
  b.validate();
  require(a.is_uniform() && b.is_uniform(), ErrorKind::InvalidInput,
          "w2_uniform: weighted measures are not supported");
  require(a.dim() == b.dim(), ErrorKind::Shape, "w2_uniform: dimension mismatch");
  if (a.dim() == 1) return w2_1d_unequal(column_span(a.points), column_span(b.points));
  if (a.size() == b.size()) return w2_assignment(a.points, b.points);
  const auto small = std::min(a.size(), b.size());
  const auto large = std::max(a.size(), b.size());
  require(large % small == 0, ErrorKind::Capacity,
          "w2_uniform: unequal sizes must divide each other in dimension > 1");
  const auto times = static_cast<Eigen::Index>(large / small);
  if (a.size() < b.size()) return w2_assignment(replicate_rows(a.points, times), b.points);
  return w2_assignment(a.points, replicate_rows(b.points, times));
}

RowMatrix product_atoms(const RowMatrix& x, const RowMatrix& theta) {
  RowMatrix out(x.rows() * theta.rows(), x.cols() + theta.cols());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    for (Eigen::Index j = 0; j < theta.rows(); ++j) {
      const auto r = i * theta.rows() + j;
      out.row(r).head(x.cols()) = x.row(i);
      out.row(r).tail(theta.cols()) = theta.row(j);
    }
  }
  return out;
}

ProductReduction product_reduction_check(const EmpiricalMeasure& rho, const EmpiricalMeasure& pi,
                                         const EmpiricalMeasure& pi_hat) {
  rho.validate();
  pi.validate();
  pi_hat.validate();
  require(pi.size() == pi_hat.size() && pi.dim() == pi_hat.dim(), ErrorKind::Shape,
          "product_reduction_check: pi and pi_hat must have equal size and dimension");
  require(rho.is_uniform() && pi.is_uniform() && pi_hat.is_uniform(), ErrorKind::InvalidInput,
          "product_reduction_check: uniform measures required");
  ProductReduction out;
  out.w2_joint =
      w2_assignment(product_atoms(rho.points, pi.points), product_atoms(rho.points, pi_hat.points));
  out.w2_theta = w2_assignment(pi.points, pi_hat.points);
  return out;
}

double shift_constant_c(double moment_a, double moment_b, const LipschitzBundle& lip) {
  lip.validate();
  const double c1 = lip.c1();
  return c1 * c1 * std::sqrt(2.0 * (moment_a + moment_b)) + 2.0 * c1 * lip.c2();
}

double shift_constant_c(const EmpiricalMeasure& mu_a, const EmpiricalMeasure& mu_b,
                        const LipschitzBundle& lip) {
  return shift_constant_c(mu_a.second_moment(), mu_b.second_moment(), lip);
}

double empirical_risk(const VecMap& emulator, const VecMap& forward, const EmpiricalMeasure& mu) {
  mu.validate();
  double risk = 0.0;
  for (Eigen::Index i = 0; i < mu.points.rows(); ++i) {
    const Vector u = mu.points.row(i).transpose();
    Vector diff;
    try {
      diff = forward(u) - emulator(u);
    } catch (const Error& e) {
      throw IndexedError(e.kind(), static_cast<std::size_t>(i), e.what());
    } catch (const std::exception& e) {
      throw IndexedError(ErrorKind::InvalidInput, static_cast<std::size_t>(i), e.what());
    }
    risk += mu.weights(i) * diff.squaredNorm();
  }
  return risk;
}

namespace {

BoundReport shift_report(const VecMap& emulator, const VecMap& forward,
                         const EmpiricalMeasure& mu_train, const EmpiricalMeasure& mu_dep,
                         const LipschitzBundle& lip) {
  BoundReport r;
  r.risk_nu = empirical_risk(emulator, forward, mu_train);
  r.risk_nu_dep = empirical_risk(emulator, forward, mu_dep);
  r.w2 = w2_uniform(mu_train, mu_dep);
  r.c_const = shift_constant_c(mu_train, mu_dep, lip);
  r.lhs = r.risk_nu_dep;
  r.rhs = r.risk_nu + r.c_const * r.w2;
  r.slack = r.rhs - r.lhs;
  return r;
}

}  // namespace

BoundReport verify_shift_bound(const VecMap& emulator, const VecMap& forward,
                               const EmpiricalMeasure& mu_train, const EmpiricalMeasure& mu_dep,
                               const LipschitzBundle& lip) {
  auto r = shift_report(emulator, forward, mu_train, mu_dep, lip);
  if (!r.valid()) {
    throw Error(ErrorKind::BoundViolation,
                "shift bound violated with slack " + std::to_string(r.slack));
  }
  return r;
}

// ---- affine hypothesis class ----

double AffineMap::lipschitz() const {
  if (W.size() == 0) return 0.0;
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(W);
  return svd.singularValues()(0);
}

AffineFitter::AffineFitter(std::size_t in_dim, std::size_t out_dim)
    : in_dim_(in_dim),
      gram_(Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(in_dim + 1),
                                  static_cast<Eigen::Index>(in_dim + 1))),
      cross_(Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(in_dim + 1),
                                   static_cast<Eigen::Index>(out_dim))) {}

void AffineFitter::add(const Vector& u, const Vector& y, double weight) {
  Vector z(static_cast<Eigen::Index>(in_dim_ + 1));
  z.head(static_cast<Eigen::Index>(in_dim_)) = u;
  z(static_cast<Eigen::Index>(in_dim_)) = 1.0;
  gram_.selfadjointView<Eigen::Lower>().rankUpdate(z, weight);
  cross_.noalias() += weight * z * y.transpose();
}

AffineMap AffineFitter::solve() const {
  Eigen::MatrixXd g = gram_.selfadjointView<Eigen::Lower>();
  Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod(g);
  const Eigen::MatrixXd coef = cod.solve(cross_);  // (in+1) x out
  AffineMap map;
  const auto d = static_cast<Eigen::Index>(in_dim_);
  map.W = coef.topRows(d).transpose();
  map.b = coef.row(d).transpose();
  return map;
}

AffineMap fit_affine(const EmpiricalMeasure& mu, const VecMap& forward) {
  mu.validate();
  const Vector u0 = mu.points.row(0).transpose();
  const auto out_dim = static_cast<std::size_t>(forward(u0).size());
  AffineFitter fitter(mu.dim(), out_dim);
  for (Eigen::Index i = 0; i < mu.points.rows(); ++i) {
    const Vector u = mu.points.row(i).transpose();
    fitter.add(u, forward(u), mu.weights(i));
  }
  return fitter.solve();
}

// ---- finite-chain experiment ----

namespace {

// Product measure rho x theta with cached forward values; atoms are never
// materialised as one matrix.
struct ProductSample {
  const RowMatrix* rho;
  const double* theta;
  std::size_t n_theta;
  RowMatrix y;  // (n_rho * n_theta) x out

  Vector atom(Eigen::Index i, std::size_t j) const {
    Vector u(rho->cols() + 1);
    u.head(rho->cols()) = rho->row(i).transpose();
    u(rho->cols()) = theta[j];
    return u;
  }
};

ProductSample evaluate_product(const RowMatrix& rho, const double* theta, std::size_t n_theta,
                               const VecMap& forward) {
  ProductSample s{&rho, theta, n_theta, {}};
  for (Eigen::Index i = 0; i < rho.rows(); ++i) {
    for (std::size_t j = 0; j < n_theta; ++j) {
      const Vector y = forward(s.atom(i, j));
      if (s.y.size() == 0) s.y.resize(rho.rows() * static_cast<Eigen::Index>(n_theta), y.size());
      s.y.row(i * static_cast<Eigen::Index>(n_theta) + static_cast<Eigen::Index>(j)) = y.transpose();
    }
  }
  return s;
}

AffineMap fit_product(const ProductSample& s) {
  AffineFitter fitter(static_cast<std::size_t>(s.rho->cols() + 1),
                      static_cast<std::size_t>(s.y.cols()));
  const double w = 1.0 / static_cast<double>(s.y.rows());
  for (Eigen::Index i = 0; i < s.rho->rows(); ++i) {
    for (std::size_t j = 0; j < s.n_theta; ++j) {
      fitter.add(s.atom(i, j), s.y.row(i * static_cast<Eigen::Index>(s.n_theta) +
                                       static_cast<Eigen::Index>(j)).transpose(), w);
    }
  }
  return fitter.solve();
}

double risk_product(const ProductSample& s, const AffineMap& e) {
  double risk = 0.0;
  for (Eigen::Index i = 0; i < s.rho->rows(); ++i) {
    for (std::size_t j = 0; j < s.n_theta; ++j) {
      const auto r = i * static_cast<Eigen::Index>(s.n_theta) + static_cast<Eigen::Index>(j);
      risk += (s.y.row(r).transpose() - e(s.atom(i, j))).squaredNorm();
    }
  }
  return risk / static_cast<double>(s.y.rows());
}

double mean_square(const double* v, std::size_t n) {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += v[i] * v[i];
  return s / static_cast<double>(n);
}

}  // namespace

RowMatrix FiniteChainReport::table() const {
  RowMatrix t(static_cast<Eigen::Index>(rows.size()), 6);
  for (std::size_t k = 0; k < rows.size(); ++k) {
    const auto& r = rows[k];
    t.row(static_cast<Eigen::Index>(k)) << static_cast<double>(r.n), r.w2, r.j_hat, r.j_star,
        r.gap, r.bound;
  }
  return t;
}

json FiniteChainReport::to_json() const {
  json rs = json::array();
  for (const auto& r : rows) {
    json row = {{"N", r.n},       {"w2", r.w2},   {"J_hat", r.j_hat}, {"J_star", r.j_star},
                {"gap", r.gap},   {"bound", r.bound}, {"c", r.c_const}, {"ok", r.ok}};
    if (r.w2_hat_dep >= 0.0) {
      row["triangle"] = {{"w2_hat_dep", r.w2_hat_dep},
                         {"w2_ref_dep", r.w2_ref_dep},
                         {"upper", r.w2_hat_dep + r.w2_ref_dep}};
    }
    rs.push_back(std::move(row));
  }
  return {{"rows", rs},
          {"lipschitz", {{"L", lip.L}, {"R", lip.R}, {"B", lip.B}, {"F0", lip.F0}}},
          {"inf_risk_ref", inf_risk_ref},
          {"passed", passed}};
}

FiniteChainReport finite_chain_experiment(const FiniteChainSetup& setup, bool strict) {
  require(setup.rho.rows() > 0 && setup.rho.allFinite(), ErrorKind::InvalidInput,
          "finite_chain_experiment: rho must have finite atoms");
  require(setup.pi_ref.size() > 0 && setup.pi_ref.allFinite(), ErrorKind::InvalidInput,
          "finite_chain_experiment: empty or non-finite reference sample");
  require(setup.chain.allFinite(), ErrorKind::InvalidInput,
          "finite_chain_experiment: non-finite chain draw");
  require(static_cast<bool>(setup.forward), ErrorKind::InvalidInput,
          "finite_chain_experiment: forward map missing");
  for (auto n : setup.ns) {
    require(n > 0 && n <= static_cast<std::size_t>(setup.chain.size()), ErrorKind::InvalidInput,
            "finite_chain_experiment: N must lie in [1, chain length]");
  }

  const std::size_t n_ref = static_cast<std::size_t>(setup.pi_ref.size());
  const auto ref = evaluate_product(setup.rho, setup.pi_ref.data(), n_ref, setup.forward);
  const auto fit_ref = fit_product(ref);

  std::vector<ProductSample> hats;
  std::vector<AffineMap> fits;
  for (auto n : setup.ns) {
    hats.push_back(evaluate_product(setup.rho, setup.chain.data(), n, setup.forward));
    fits.push_back(fit_product(hats.back()));
  }

  FiniteChainReport report;
  report.lip.L = setup.forward_lipschitz;
  report.lip.F0 = setup.forward_at_zero;
  report.lip.R = fit_ref.lipschitz();
  report.lip.B = fit_ref.offset_norm();
  for (const auto& f : fits) {
    report.lip.R = std::max(report.lip.R, f.lipschitz());
    report.lip.B = std::max(report.lip.B, f.offset_norm());
  }

  report.inf_risk_ref = risk_product(ref, fit_ref);
  const double rho_moment = setup.rho.rowwise().squaredNorm().mean();
  const double ref_moment = rho_moment + mean_square(setup.pi_ref.data(), n_ref);
  const std::span<const double> ref_span(setup.pi_ref.data(), n_ref);

  report.passed = true;
  for (std::size_t k = 0; k < setup.ns.size(); ++k) {
    const auto n = setup.ns[k];
    const std::span<const double> hat_span(setup.chain.data(), n);
    FiniteChainRow row;
    row.n = n;
    row.w2 = w2_1d_unequal(hat_span, ref_span);
    row.c_const =
        shift_constant_c(rho_moment + mean_square(setup.chain.data(), n), ref_moment, report.lip);
    row.j_hat = risk_product(hats[k], fits[k]) + row.c_const * row.w2;
    row.j_star = report.inf_risk_ref;
    row.gap = row.j_hat - row.j_star;
    row.bound = 2.0 * row.c_const * row.w2;
    row.ok = row.gap >= -1e-9 && row.gap <= row.bound + 1e-9;
    if (setup.pi_dep.size() > 0) {
      const std::span<const double> dep(setup.pi_dep.data(),
                                        static_cast<std::size_t>(setup.pi_dep.size()));
      row.w2_hat_dep = w2_1d_unequal(hat_span, dep);
      row.w2_ref_dep = w2_1d_unequal(ref_span, dep);
    }
    report.passed = report.passed && row.ok;
    report.rows.push_back(row);
    if (strict && !row.ok) {
      throw IndexedError(ErrorKind::TheoremCheck, n,
                         "finite-chain bound failed: gap " + std::to_string(row.gap) +
                             ", bound " + std::to_string(row.bound));
    }
  }
  return report;
}

// ---- mixture corollary ----

json MixtureReport::to_json() const {
  return {{"J_mix", j_mix},
          {"J_k", j_k},
          {"lipschitz", {{"L", lip.L}, {"R", lip.R}, {"B", lip.B}, {"F0", lip.F0}}},
          {"passed", passed}};
}

MixtureReport mixture_bound_check(const std::vector<RowMatrix>& scenario_atoms,
                                  const VecMap& forward, double forward_lipschitz,
                                  double forward_at_zero) {
  require(!scenario_atoms.empty(), ErrorKind::InvalidInput, "mixture check: no scenarios");
  const auto n = scenario_atoms.front().rows();
  const auto d = scenario_atoms.front().cols();
  for (const auto& a : scenario_atoms) {
    require(a.rows() == n && a.cols() == d, ErrorKind::Shape,
            "mixture check: scenario laws must have equal atom counts and dimension");
  }
  RowMatrix all(n * static_cast<Eigen::Index>(scenario_atoms.size()), d);
  for (std::size_t k = 0; k < scenario_atoms.size(); ++k) {
    all.middleRows(static_cast<Eigen::Index>(k) * n, n) = scenario_atoms[k];
  }
  const auto mix = EmpiricalMeasure::uniform(all);
  std::vector<EmpiricalMeasure> laws;
  std::vector<AffineMap> fits;
  for (const auto& a : scenario_atoms) {
    laws.push_back(EmpiricalMeasure::uniform(a));
    fits.push_back(fit_affine(laws.back(), forward));
  }
  const auto fit_mix = fit_affine(mix, forward);

  MixtureReport report;
  report.lip.L = forward_lipschitz;
  report.lip.F0 = forward_at_zero;
  report.lip.R = fit_mix.lipschitz();
  report.lip.B = fit_mix.offset_norm();
  for (const auto& f : fits) {
    report.lip.R = std::max(report.lip.R, f.lipschitz());
    report.lip.B = std::max(report.lip.B, f.offset_norm());
  }

  report.j_mix = empirical_risk(fit_mix, forward, mix);
  report.passed = true;
  for (std::size_t k = 0; k < laws.size(); ++k) {
    const double w2 = w2_uniform(laws[k], mix);
    const double c = shift_constant_c(laws[k], mix, report.lip);
    const double j = empirical_risk(fits[k], forward, laws[k]) + c * w2;
    report.j_k.push_back(j);
    report.passed = report.passed && report.j_mix <= j + 1e-9;
  }
  return report;
}

// ---- randomized drivers ----

namespace {

RowMatrix normal_matrix(Rng& rng, Eigen::Index rows, Eigen::Index cols, double scale = 1.0) {
  RowMatrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = scale * rng.normal();
  return m;
}

Vector normal_vector(Rng& rng, Eigen::Index n, double scale = 1.0) {
  Vector v(n);
  for (Eigen::Index i = 0; i < n; ++i) v(i) = scale * rng.normal();
  return v;
}

double spectral_norm(const Eigen::MatrixXd& m) {
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(m);
  return svd.singularValues()(0);
}

}  // namespace

json ShiftSuiteResult::to_json() const {
  json rs = json::array();
  for (const auto& r : reports) rs.push_back(r.to_json());
  return {{"instances", instances}, {"failures", failures}, {"min_slack", min_slack},
          {"reports", rs}};
}

ShiftSuiteResult run_shift_bound_suite(std::size_t instances, std::uint64_t seed) {
  ShiftSuiteResult out;
  out.instances = instances;
  out.reports.resize(instances);
  std::vector<char> failed(instances, 0);

#pragma omp parallel for schedule(dynamic)
  for (std::size_t t = 0; t < instances; ++t) {
    Rng rng = Rng::stream(seed, t);
    const auto m = static_cast<Eigen::Index>(1 + rng.below(3));
    const auto p = static_cast<Eigen::Index>(1 + rng.below(3));
    const auto n = static_cast<Eigen::Index>(2 + rng.below(31));

    const Eigen::MatrixXd A = normal_matrix(rng, p, m);
    const Vector a = normal_vector(rng, p);
    LipschitzBundle lip;
    lip.L = spectral_norm(A);
    lip.F0 = a.norm();
    VecMap forward = [A, a](const Vector& u) { return Vector(A * u + a); };

    VecMap emulator;
    if (t % 2 == 0) {
      const Eigen::MatrixXd Bm = normal_matrix(rng, p, m, 0.7);
      const Vector b = normal_vector(rng, p, 0.5);
      lip.R = spectral_norm(Bm);
      lip.B = b.norm();
      emulator = [Bm, b](const Vector& u) { return Vector(Bm * u + b); };
    } else {
      // One-hidden-layer ReLU net; product of spectral norms bounds its modulus.
      const auto h = static_cast<Eigen::Index>(2 + rng.below(7));
      const Eigen::MatrixXd W1 = normal_matrix(rng, h, m, 0.7);
      const Vector b1 = normal_vector(rng, h, 0.5);
      const Eigen::MatrixXd W2 = normal_matrix(rng, p, h, 0.7);
      const Vector b2 = normal_vector(rng, p, 0.5);
      emulator = [W1, b1, W2, b2](const Vector& u) {
        return Vector(W2 * (W1 * u + b1).cwiseMax(0.0) + b2);
      };
      lip.R = spectral_norm(W2) * spectral_norm(W1);
      lip.B = emulator(Vector::Zero(m)).norm();
    }

    const RowMatrix train = normal_matrix(rng, n, m);
    const double scale = 0.5 + rng.uniform();
    const RowMatrix shift = normal_matrix(rng, 1, m);
    RowMatrix dep = scale * train + normal_matrix(rng, n, m, 0.3);
    dep.rowwise() += shift.row(0);

    auto report = shift_report(emulator, forward, EmpiricalMeasure::uniform(train),
                               EmpiricalMeasure::uniform(dep), lip);
    failed[t] = report.valid() ? 0 : 1;
    out.reports[t] = report;
  }

  out.min_slack = std::numeric_limits<double>::infinity();
  for (std::size_t t = 0; t < instances; ++t) {
    out.failures += static_cast<std::size_t>(failed[t]);
    out.min_slack = std::min(out.min_slack, out.reports[t].slack);
  }
  return out;
}

json ProductSuiteResult::to_json() const {
  return {{"instances", instances}, {"failures", failures}, {"max_abs_diff", max_abs_diff}};
}

ProductSuiteResult run_product_reduction_suite(std::size_t instances, std::uint64_t seed) {
  ProductSuiteResult out;
  out.instances = instances;
  std::vector<double> diffs(instances, 0.0);

#pragma omp parallel for schedule(dynamic)
  for (std::size_t t = 0; t < instances; ++t) {
    Rng rng = Rng::stream(seed, t);
    const auto dx = static_cast<Eigen::Index>(1 + rng.below(3));
    const auto dt = static_cast<Eigen::Index>(1 + rng.below(3));
    const auto n_rho = static_cast<Eigen::Index>(1 + rng.below(4));
    const auto n = static_cast<Eigen::Index>(1 + rng.below(8));
    const auto rho = EmpiricalMeasure::uniform(normal_matrix(rng, n_rho, dx));
    const auto pi = EmpiricalMeasure::uniform(normal_matrix(rng, n, dt));
    const auto pi_hat = EmpiricalMeasure::uniform(normal_matrix(rng, n, dt, 1.5));
    const auto r = product_reduction_check(rho, pi, pi_hat);
    diffs[t] = std::abs(r.w2_joint - r.w2_theta);
  }
  for (double d : diffs) {
    out.max_abs_diff = std::max(out.max_abs_diff, d);
    if (!(d <= 1e-9)) ++out.failures;
  }
  return out;
}

json FiniteChainSuiteResult::to_json() const {
  json rs = json::array();
  for (const auto& r : reports) rs.push_back(r.to_json());
  return {{"median_w2", median_w2},
          {"theorem_holds", theorem_holds},
          {"median_decreasing", median_decreasing},
          {"seeds", rs}};
}

FiniteChainSuiteResult run_finite_chain_suite(const FiniteChainSuiteConfig& config) {
  require(!config.ns.empty() && config.seeds > 0, ErrorKind::InvalidInput,
          "finite-chain suite: need at least one N and one seed");
  const auto max_n = *std::max_element(config.ns.begin(), config.ns.end());
  require(config.n_ref > max_n, ErrorKind::InvalidInput,
          "finite-chain suite: reference sample must exceed every N");

  FiniteChainSuiteResult out;
  out.reports.resize(config.seeds);

  // F(x, theta) = sin(2x)/2 + tanh(theta): gradient norm at most sqrt(2), F(0) = 0.
  const VecMap forward = [](const Vector& u) {
    Vector y(1);
    y(0) = 0.5 * std::sin(2.0 * u(0)) + std::tanh(u(1));
    return y;
  };

#pragma omp parallel for schedule(dynamic)
  for (std::size_t s = 0; s < config.seeds; ++s) {
    Rng rng = Rng::stream(config.seed, s);
    FiniteChainSetup setup;
    setup.rho.resize(static_cast<Eigen::Index>(config.rho_atoms), 1);
    for (Eigen::Index i = 0; i < setup.rho.rows(); ++i) setup.rho(i, 0) = 2.0 * rng.uniform() - 1.0;
    setup.pi_ref.resize(static_cast<Eigen::Index>(config.n_ref));
    for (Eigen::Index i = 0; i < setup.pi_ref.size(); ++i) setup.pi_ref(i) = 0.5 + 0.8 * rng.normal();
    setup.chain.resize(static_cast<Eigen::Index>(max_n));
    for (Eigen::Index i = 0; i < setup.chain.size(); ++i) setup.chain(i) = 0.5 + 0.8 * rng.normal();
    setup.ns = config.ns;
    setup.forward = forward;
    setup.forward_lipschitz = std::sqrt(2.0);
    setup.forward_at_zero = 0.0;
    out.reports[s] = finite_chain_experiment(setup, false);
  }

  out.theorem_holds = true;
  for (const auto& r : out.reports) out.theorem_holds = out.theorem_holds && r.passed;
  for (std::size_t k = 0; k < config.ns.size(); ++k) {
    std::vector<double> w;
    for (const auto& r : out.reports) w.push_back(r.rows[k].w2);
    std::sort(w.begin(), w.end());
    const auto h = w.size() / 2;
    out.median_w2.push_back(w.size() % 2 ? w[h] : 0.5 * (w[h - 1] + w[h]));
  }
  out.median_decreasing = true;
  for (std::size_t k = 1; k < out.median_w2.size(); ++k) {
    out.median_decreasing = out.median_decreasing && out.median_w2[k] < out.median_w2[k - 1];
  }
  return out;
}

}  // namespace mine::measures
