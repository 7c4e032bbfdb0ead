#include "mine/mcmc.hpp"

#include "mine/io.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace mine::mcmc {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

}  // namespace

LogPosterior LogPosterior::rejected(PosteriorStatus why) { return {kNegInf, why}; }

void Observation::validate() const {
  require(values.rows() == static_cast<Eigen::Index>(times.size()), ErrorKind::Shape,
          "observation: one value row per observation time");
  require(noise_sigma.size() == values.cols(), ErrorKind::Shape, "observation: one sigma per component");
  require((noise_sigma.array() > 0.0).all(), ErrorKind::InvalidInput, "observation: noise sigma must be > 0");
  for (std::size_t i = 1; i < times.size(); ++i) {
    require(times[i] > times[i - 1], ErrorKind::InvalidInput, "observation: times must strictly increase");
  }
}

bool BoxPrior::contains(const Vector& theta) const {
  return (theta.array() >= lower.array()).all() && (theta.array() <= upper.array()).all();
}

LogPosterior log_posterior(const Vector& theta, const Observation& obs, const ForwardModel& model,
                           const BoxPrior& prior) {
  require(theta.allFinite(), ErrorKind::InvalidInput, "log_posterior: non-finite theta");
  require(prior.lower.size() == theta.size() && prior.upper.size() == theta.size(), ErrorKind::Shape,
          "log_posterior: prior dimension mismatch");
  if (!prior.contains(theta)) return LogPosterior::rejected(PosteriorStatus::OutsidePrior);
  RowMatrix predicted;
  try {
    predicted = model(theta);
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::IntegrationDiverged || e.kind() == ErrorKind::NumericDomain) {
      return LogPosterior::rejected(PosteriorStatus::Diverged);
    }
    throw;
  }
  require(predicted.rows() == obs.values.rows() && predicted.cols() == obs.values.cols(), ErrorKind::Shape,
          "log_posterior: model output does not match observations");
  double sum = 0.0;
  for (Eigen::Index j = 0; j < obs.values.cols(); ++j) {
    const double inv_two_var = 1.0 / (2.0 * obs.noise_sigma(j) * obs.noise_sigma(j));
    sum += (predicted.col(j) - obs.values.col(j)).squaredNorm() * inv_two_var;
  }
  if (!std::isfinite(sum)) return LogPosterior::rejected(PosteriorStatus::Diverged);
  return {-sum, PosteriorStatus::Ok};
}

void ChainConfig::validate() const {
  require(n_samples > 0, ErrorKind::Config, "chain: n_samples must be positive");
  require(burn_in < n_samples, ErrorKind::Config, "chain: burn_in must be < n_samples");
  require(init_theta.size() > 0 && init_theta.allFinite(), ErrorKind::Config, "chain: init_theta required");
  const auto d = init_theta.size();
  require(init_cov.rows() == d && init_cov.cols() == d, ErrorKind::Config, "chain: init_cov must be d x d");
  require(init_cov.isApprox(init_cov.transpose(), 1e-12), ErrorKind::Config, "chain: init_cov must be symmetric");
  require(init_cov.llt().info() == Eigen::Success, ErrorKind::Config, "chain: init_cov must be SPD");
  require(dr_scale > 0.0 && dr_scale < 1.0, ErrorKind::Config, "chain: dr_scale must lie in (0, 1)");
  require(epsilon_reg > 0.0, ErrorKind::Config, "chain: epsilon_reg must be > 0");
}

nlohmann::json ChainConfig::to_json() const {
  nlohmann::json j;
  j["n_samples"] = n_samples;
  j["burn_in"] = burn_in;
  j["init_theta"] = io::to_json(init_theta);
  j["init_cov"] = io::to_json(RowMatrix(init_cov));
  j["adapt_interval"] = adapt_interval;
  j["adapt_start"] = adapt_start;
  j["dr_scale"] = dr_scale;
  j["epsilon_reg"] = epsilon_reg;
  j["seed"] = seed;
  return j;
}

ChainConfig ChainConfig::from_json(const nlohmann::json& j) {
  ChainConfig c;
  c.n_samples = j.at("n_samples").get<std::size_t>();
  c.burn_in = j.at("burn_in").get<std::size_t>();
  c.init_theta = io::vector_from_json(j.at("init_theta"));
  c.init_cov = io::matrix_from_json(j.at("init_cov"));
  c.adapt_interval = j.at("adapt_interval").get<std::size_t>();
  c.adapt_start = j.at("adapt_start").get<std::size_t>();
  c.dr_scale = j.at("dr_scale").get<double>();
  c.epsilon_reg = j.at("epsilon_reg").get<double>();
  c.seed = j.at("seed").get<std::uint64_t>();
  return c;
}

Proposal::Proposal(const Eigen::MatrixXd& cov, double epsilon_reg, std::size_t* fallbacks) : cov_(cov) {
  Eigen::LLT<Eigen::MatrixXd> llt(cov_);
  if (llt.info() != Eigen::Success || !cov_.allFinite()) {
    if (fallbacks) ++*fallbacks;
    cov_ = epsilon_reg * Eigen::MatrixXd::Identity(cov.rows(), cov.cols());
    llt.compute(cov_);
  }
  lower_ = llt.matrixL();
}

Vector Proposal::draw(const Vector& center, double scale, Rng& rng) const {
  Vector z(center.size());
  for (Eigen::Index i = 0; i < z.size(); ++i) z(i) = rng.normal();
  return center + scale * (lower_ * z);
}

double Proposal::log_density(const Vector& from, const Vector& to) const {
  const Vector w = lower_.triangularView<Eigen::Lower>().solve(to - from);
  return -0.5 * w.squaredNorm();
}

double stage1_acceptance(double log_post_from, const LogPosterior& proposed) {
  if (!proposed.ok()) return 0.0;
  const double log_ratio = proposed.value - log_post_from;
  return log_ratio >= 0.0 ? 1.0 : std::exp(log_ratio);
}

double stage2_acceptance(const ChainPoint& current, const Vector& theta1, const LogPosterior& lp1,
                         const Vector& theta2, const LogPosterior& lp2, const Proposal& proposal) {
  if (!lp2.ok()) return 0.0;
  const double a1_from_current = stage1_acceptance(current.log_post, lp1);
  const double a1_from_second = stage1_acceptance(lp2.value, lp1);
  if (a1_from_second >= 1.0) return 0.0;
  if (a1_from_current >= 1.0) return 1.0;  // only reachable through ties; stage 1 would have accepted
  const double log_num = lp2.value + proposal.log_density(theta2, theta1) + std::log1p(-a1_from_second);
  const double log_den = current.log_post + proposal.log_density(current.theta, theta1) +
                         std::log1p(-a1_from_current);
  const double log_ratio = log_num - log_den;
  return log_ratio >= 0.0 ? 1.0 : std::exp(log_ratio);
}

StepResult dram_step(const ChainPoint& current, const Proposal& proposal, double dr_scale,
                     const LogDensity& target, Rng& rng) {
  const Vector theta1 = proposal.draw(current.theta, 1.0, rng);
  const LogPosterior lp1 = target(theta1);
  const double a1 = stage1_acceptance(current.log_post, lp1);
  if (rng.uniform() < a1) return {{theta1, lp1.value}, 1};

  const Vector theta2 = proposal.draw(current.theta, dr_scale, rng);
  const LogPosterior lp2 = target(theta2);
  const double a2 = stage2_acceptance(current, theta1, lp1, theta2, lp2, proposal);
  if (rng.uniform() < a2) return {{theta2, lp2.value}, 2};
  return {current, 0};
}

Eigen::MatrixXd adapt_covariance(const RowMatrix& history, int d, double epsilon_reg) {
  require(history.rows() >= 2, ErrorKind::InvalidInput, "adapt_covariance: need at least two rows");
  require(history.cols() == d, ErrorKind::Shape, "adapt_covariance: dimension mismatch");
  const double sd = 2.4 * 2.4 / d;
  const Eigen::RowVectorXd mean = history.colwise().mean();
  const RowMatrix centered = history.rowwise() - mean;
  Eigen::MatrixXd cov = (centered.transpose() * centered) / static_cast<double>(history.rows() - 1);
  cov = 0.5 * (cov + cov.transpose());
  return sd * cov + sd * epsilon_reg * Eigen::MatrixXd::Identity(d, d);
}

double Chain::acceptance_rate() const {
  if (accept_stage.empty()) return 0.0;
  const auto accepted = std::count_if(accept_stage.begin(), accept_stage.end(), [](int s) { return s > 0; });
  return static_cast<double>(accepted) / static_cast<double>(accept_stage.size());
}

RowMatrix Chain::posterior(std::size_t thinning) const {
  require(thinning >= 1, ErrorKind::InvalidInput, "posterior: thinning must be >= 1");
  const std::size_t start = config.burn_in;
  require(start < size(), ErrorKind::InvalidInput, "posterior: chain has no post-burn-in rows");
  const std::size_t count = (size() - start + thinning - 1) / thinning;
  RowMatrix out(static_cast<Eigen::Index>(count), samples.cols());
  for (std::size_t i = 0; i < count; ++i) {
    out.row(static_cast<Eigen::Index>(i)) = samples.row(static_cast<Eigen::Index>(start + i * thinning));
  }
  return out;
}

Chain run_chain(const ChainConfig& config, const LogDensity& target) {
  config.validate();
  const int d = static_cast<int>(config.init_theta.size());

  Chain chain;
  chain.config = config;
  chain.samples.resize(static_cast<Eigen::Index>(config.n_samples), d);
  chain.log_posts.resize(static_cast<Eigen::Index>(config.n_samples));
  chain.accept_stage.assign(config.n_samples, 0);

  const LogPosterior initial = target(config.init_theta);
  require(initial.ok(), ErrorKind::InvalidInput, "run_chain: initial theta has zero posterior density");
  ChainPoint current{config.init_theta, initial.value};

  Rng rng(Rng::mix(config.seed));
  Proposal proposal(config.init_cov, config.epsilon_reg, &chain.cholesky_fallbacks);

  for (std::size_t i = 0; i < config.n_samples; ++i) {
    StepResult step = dram_step(current, proposal, config.dr_scale, target, rng);
    current = std::move(step.next);
    const auto row = static_cast<Eigen::Index>(i);
    chain.samples.row(row) = current.theta.transpose();
    chain.log_posts(row) = current.log_post;
    chain.accept_stage[i] = step.stage;

    const std::size_t filled = i + 1;
    if (config.adapt_interval > 0 && filled >= config.adapt_start && filled % config.adapt_interval == 0 &&
        filled < config.n_samples) {
      proposal = Proposal(adapt_covariance(chain.samples.topRows(row + 1), d, config.epsilon_reg),
                          config.epsilon_reg, &chain.cholesky_fallbacks);
    }
  }

  if (config.n_samples >= kStagnationWindow) {
    std::size_t accepted = 0;
    for (std::size_t i = 0; i < config.n_samples; ++i) {
      accepted += chain.accept_stage[i] > 0;
      if (i >= kStagnationWindow) accepted -= chain.accept_stage[i - kStagnationWindow] > 0;
      if (i + 1 >= kStagnationWindow && accepted * 100 < kStagnationWindow) {
        chain.stagnation_warning = true;
        break;
      }
    }
  }
  return chain;
}

Chain run_chain(const ChainConfig& config, const Observation& obs, const ForwardModel& model,
                const BoxPrior& prior) {
  obs.validate();
  return run_chain(config, [&](const Vector& theta) { return log_posterior(theta, obs, model, prior); });
}

std::string write_chain(const std::filesystem::path& csv_path, const std::filesystem::path& json_path,
                        const Chain& chain, const nlohmann::json& extra) {
  const int d = chain.dim();
  std::vector<std::string> header;
  for (int k = 1; k <= d; ++k) header.push_back("theta_" + std::to_string(k));
  header.emplace_back("log_post");
  header.emplace_back("accept_stage");
  RowMatrix table(chain.samples.rows(), d + 2);
  table.leftCols(d) = chain.samples;
  table.col(d) = chain.log_posts;
  for (std::size_t i = 0; i < chain.size(); ++i) {
    table(static_cast<Eigen::Index>(i), d + 1) = chain.accept_stage[i];
  }
  io::write_csv(csv_path, header, table);
  const std::string hash = io::sha256_file(csv_path);

  nlohmann::json side = extra;
  side["schema_version"] = io::kSchemaVersion;
  side["config"] = chain.config.to_json();
  side["seed"] = chain.config.seed;
  side["csv_sha256"] = hash;
  side["rows"] = chain.size();
  side["dim"] = d;
  side["acceptance_rate"] = chain.acceptance_rate();
  side["cholesky_fallbacks"] = chain.cholesky_fallbacks;
  side["stagnation_warning"] = chain.stagnation_warning;
  io::write_json(json_path, side);
  return hash;
}

Chain read_chain(const std::filesystem::path& csv_path, const std::filesystem::path& json_path) {
  const auto side = io::read_json(json_path);
  const std::string hash = io::sha256_file(csv_path);
  if (side.at("csv_sha256").get<std::string>() != hash) {
    throw Error(ErrorKind::Provenance, "chain file " + csv_path.string() + " does not match its sidecar hash");
  }
  const auto table = io::read_csv(csv_path);
  const auto d = static_cast<int>(table.values.cols()) - 2;
  require(d >= 1, ErrorKind::Shape, "chain csv needs theta columns plus log_post and accept_stage");
  Chain chain;
  chain.config = ChainConfig::from_json(side.at("config"));
  chain.samples = table.values.leftCols(d);
  chain.log_posts = table.values.col(d);
  chain.accept_stage.resize(static_cast<std::size_t>(table.values.rows()));
  for (Eigen::Index i = 0; i < table.values.rows(); ++i) {
    chain.accept_stage[static_cast<std::size_t>(i)] = static_cast<int>(table.values(i, d + 1));
  }
  chain.cholesky_fallbacks = side.value("cholesky_fallbacks", std::size_t{0});
  chain.stagnation_warning = side.value("stagnation_warning", false);
  return chain;
}

}  // namespace mine::mcmc
