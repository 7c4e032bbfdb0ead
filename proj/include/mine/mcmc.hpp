#pragma once

#include "mine/common.hpp"
#include "mine/rng.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

namespace mine::mcmc {

enum class PosteriorStatus { Ok, OutsidePrior, Diverged };

struct LogPosterior {
  double value = 0.0;
  PosteriorStatus status = PosteriorStatus::Ok;

  bool ok() const { return status == PosteriorStatus::Ok; }
  static LogPosterior rejected(PosteriorStatus why);
};

using LogDensity = std::function<LogPosterior(const Vector& theta)>;

// Observed rows (indices into the simulator's output grid) and columns.
struct Observation {
  std::vector<std::size_t> times;
  RowMatrix values;    // times.size() x components
  Vector noise_sigma;  // one per component

  void validate() const;
};

struct BoxPrior {
  Vector lower;
  Vector upper;

  bool contains(const Vector& theta) const;
};

// Maps theta to predictions aligned with Observation::values. May throw
// IntegrationDiverged / NumericDomain errors, which count as rejections.
using ForwardModel = std::function<RowMatrix(const Vector& theta)>;

// Gaussian i.i.d. log-likelihood plus flat box prior, up to an additive constant.
LogPosterior log_posterior(const Vector& theta, const Observation& obs, const ForwardModel& model,
                           const BoxPrior& prior);

struct ChainConfig {
  std::size_t n_samples = 0;  // total rows, burn-in included
  std::size_t burn_in = 0;
  Vector init_theta;
  Eigen::MatrixXd init_cov;
  std::size_t adapt_interval = 100;  // 0 disables adaptation
  std::size_t adapt_start = 200;
  double dr_scale = 0.3;
  double epsilon_reg = 1e-8;
  std::uint64_t seed = 0;

  void validate() const;
  nlohmann::json to_json() const;
  static ChainConfig from_json(const nlohmann::json& j);
};

// Gaussian proposal N(theta, cov) with its Cholesky factor.
class Proposal {
 public:
  // Falls back to epsilon_reg * I when `cov` is not SPD; `fallbacks` is incremented.
  Proposal(const Eigen::MatrixXd& cov, double epsilon_reg, std::size_t* fallbacks = nullptr);

  const Eigen::MatrixXd& cov() const { return cov_; }
  const Eigen::MatrixXd& lower() const { return lower_; }
  Vector draw(const Vector& center, double scale, Rng& rng) const;
  // log N(to; from, cov) without the normalizing constant.
  double log_density(const Vector& from, const Vector& to) const;

 private:
  Eigen::MatrixXd cov_;
  Eigen::MatrixXd lower_;
};

struct ChainPoint {
  Vector theta;
  double log_post = 0.0;
};

struct StepResult {
  ChainPoint next;
  int stage = 0;  // 0 rejected, 1 first-stage accept, 2 second-stage accept
};

double stage1_acceptance(double log_post_from, const LogPosterior& proposed);

// Two-stage delayed-rejection acceptance probability for the second proposal.
double stage2_acceptance(const ChainPoint& current, const Vector& theta1, const LogPosterior& lp1,
                         const Vector& theta2, const LogPosterior& lp2, const Proposal& proposal);

StepResult dram_step(const ChainPoint& current, const Proposal& proposal, double dr_scale,
                     const LogDensity& target, Rng& rng);

// s_d * Cov(history) + s_d * epsilon_reg * I with s_d = 2.4^2 / d.
Eigen::MatrixXd adapt_covariance(const RowMatrix& history, int d, double epsilon_reg);

struct Chain {
  RowMatrix samples;
  Vector log_posts;
  std::vector<int> accept_stage;
  ChainConfig config;
  std::size_t cholesky_fallbacks = 0;
  bool stagnation_warning = false;

  std::size_t size() const { return static_cast<std::size_t>(samples.rows()); }
  int dim() const { return static_cast<int>(samples.cols()); }
  double acceptance_rate() const;
  // Rows after burn-in, keeping every `thinning`-th.
  RowMatrix posterior(std::size_t thinning = 1) const;
};

inline constexpr std::size_t kStagnationWindow = 1000;

Chain run_chain(const ChainConfig& config, const LogDensity& target);
Chain run_chain(const ChainConfig& config, const Observation& obs, const ForwardModel& model,
                const BoxPrior& prior);

// CSV `theta_1..theta_d,log_post,accept_stage` plus JSON sidecar. Returns the CSV sha256.
std::string write_chain(const std::filesystem::path& csv_path, const std::filesystem::path& json_path,
                        const Chain& chain, const nlohmann::json& extra = nlohmann::json::object());
Chain read_chain(const std::filesystem::path& csv_path, const std::filesystem::path& json_path);

}  // namespace mine::mcmc
