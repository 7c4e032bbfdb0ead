#include "mine/pipeline.hpp"

#include "mine/io.hpp"
#include "mine/metrics.hpp"

#include <omp.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <map>

namespace mine::pipeline {

using nlohmann::json;
namespace fs = std::filesystem;

int exit_code_for(const std::exception& e) {
  if (const auto* err = dynamic_cast<const Error*>(&e)) {
    switch (err->kind()) {
      case ErrorKind::Config:
      case ErrorKind::Usage:
        return kConfig;
      case ErrorKind::Provenance:
        return kProvenance;
      default:
        return kRuntime;
    }
  }
  return kRuntime;
}

std::uint64_t stage_seed(std::uint64_t seed, std::uint64_t stage) {
  return Rng::mix(seed ^ Rng::mix(stage * 0x9E3779B97F4A7C15ULL + 1));
}

// ---- config parsing ----

namespace {

class Reader {
 public:
  Reader(const json& j, std::string path) : j_(j), path_(std::move(path)) {}

  std::string full(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  const json& at(const std::string& key) const {
    if (!j_.is_object() || !j_.contains(key)) throw Error(ErrorKind::Config, "missing field '" + full(key) + "'");
    return j_.at(key);
  }

  bool has(const std::string& key) const { return j_.is_object() && j_.contains(key); }

  template <class T>
  T get(const std::string& key) const {
    try {
      return at(key).get<T>();
    } catch (const json::exception&) {
      throw Error(ErrorKind::Config, "field '" + full(key) + "' has the wrong type");
    }
  }

  Vector vec(const std::string& key, Eigen::Index expected = -1) const {
    const auto v = get<std::vector<double>>(key);
    if (expected >= 0 && static_cast<Eigen::Index>(v.size()) != expected) {
      throw Error(ErrorKind::Config, "field '" + full(key) + "' must have " + std::to_string(expected) + " entries");
    }
    return Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size()));
  }

  Reader sub(const std::string& key) const { return Reader(at(key), full(key)); }

 private:
  const json& j_;
  std::string path_;
};

void parse_himmel(const Reader& r, HimmelSettings& h) {
  h.system.dt = r.get<double>("dt");
  h.system.steps = r.get<std::size_t>("steps");
  h.system.obs_stride = r.get<std::size_t>("obs_stride");
  require(h.system.dt > 0.0 && h.system.steps > 0 && h.system.obs_stride > 0 &&
              h.system.steps % h.system.obs_stride == 0,
          ErrorKind::Config, "simulator: steps must be a positive multiple of obs_stride");
  h.x0 = r.vec("x0", odes::kHimmelSpecies);
  h.theta_true = r.vec("theta_true", odes::kHimmelParams);
  h.observe = r.get<std::vector<int>>("observe");
  require(!h.observe.empty(), ErrorKind::Config, "simulator.observe must list at least one species");
  for (int s : h.observe) {
    require(s >= 0 && s < odes::kHimmelSpecies, ErrorKind::Config, "simulator.observe: species index out of range");
  }
  h.noise_sigma = r.get<double>("noise_sigma");
  require(h.noise_sigma > 0.0, ErrorKind::Config, "simulator.noise_sigma must be positive");
  h.x0_lower = r.vec("x0_lower", odes::kHimmelSpecies);
  h.x0_upper = r.vec("x0_upper", odes::kHimmelSpecies);
  require((h.x0_lower.array() <= h.x0_upper.array()).all() && (h.x0_lower.array() >= 0.0).all(),
          ErrorKind::Config, "simulator: x0 box must satisfy 0 <= lower <= upper");
}

void parse_fair(const Reader& r, FairSettings& f) {
  f.system.hist_start = r.get<double>("hist_start");
  f.system.base_year = r.get<double>("base_year");
  f.system.end_year = r.get<double>("end_year");
  require(f.system.hist_start < f.system.base_year && f.system.base_year < f.system.end_year, ErrorKind::Config,
          "simulator: need hist_start < base_year < end_year");
  f.system.scenarios = odes::ScenarioSet::defaults(f.system.base_year);
  f.theta_true = r.vec("theta_true", odes::kFairLiteParams);
  f.sigma_carbon = r.get<double>("sigma_carbon");
  f.sigma_temperature = r.get<double>("sigma_temperature");
  f.obs_stride_years = r.get<int>("obs_stride_years");
  require(f.sigma_carbon > 0.0 && f.sigma_temperature > 0.0 && f.obs_stride_years >= 1, ErrorKind::Config,
          "simulator: noise levels and obs_stride_years must be positive");
  f.e0_lower = r.get<double>("e0_lower");
  f.e0_upper = r.get<double>("e0_upper");
  require(0.0 < f.e0_lower && f.e0_lower <= f.e0_upper, ErrorKind::Config, "simulator: bad e0 range");
  const auto eta = r.sub("eta");
  const auto loc = eta.vec("loc", 2), nsd = eta.vec("normal_sd", 2), lsd = eta.vec("log_sd", 2);
  f.eta.loc_lo = loc(0);
  f.eta.loc_hi = loc(1);
  f.eta.normal_sd_lo = nsd(0);
  f.eta.normal_sd_hi = nsd(1);
  f.eta.log_sd_lo = lsd(0);
  f.eta.log_sd_hi = lsd(1);
  f.eta.validate();
}

void parse_chain(const Reader& r, PipelineConfig& cfg, Eigen::Index d) {
  auto& c = cfg.chain;
  c.n_samples = r.get<std::size_t>("n_samples");
  c.burn_in = r.get<std::size_t>("burn_in");
  c.init_theta = r.vec("init_theta", d);
  c.init_cov = r.vec("init_cov_diag", d).asDiagonal();
  c.adapt_interval = r.get<std::size_t>("adapt_interval");
  c.adapt_start = r.get<std::size_t>("adapt_start");
  c.dr_scale = r.get<double>("dr_scale");
  c.epsilon_reg = r.get<double>("epsilon_reg");
  c.seed = stage_seed(cfg.seed, 1);
  c.validate();
  cfg.prior.lower = r.vec("prior_lower", d);
  cfg.prior.upper = r.vec("prior_upper", d);
  require((cfg.prior.lower.array() < cfg.prior.upper.array()).all(), ErrorKind::Config,
          "chain: prior_lower must be below prior_upper");
  require(cfg.prior.contains(c.init_theta), ErrorKind::Config, "chain: init_theta lies outside the prior box");
}

void parse_aeode(const Reader& r, PipelineConfig& cfg) {
  auto& a = cfg.aeode;
  auto& c = a.config;
  c.frequencies = r.get<Eigen::Index>("frequencies");
  c.encoder_hidden = r.get<std::vector<Eigen::Index>>("encoder_hidden");
  c.decoder_hidden = r.get<std::vector<Eigen::Index>>("decoder_hidden");
  const auto t = r.sub("toggles");
  c.toggles.time_embed = t.get<bool>("time_embed");
  c.toggles.attention = t.get<bool>("attention");
  c.toggles.physics_loss = t.get<bool>("physics_loss");
  c.toggles.linear_step = t.get<bool>("linear_step");
  c.alphas = r.get<std::array<double, 5>>("alphas");
  const auto tr = r.sub("train");
  c.train.lr = tr.get<double>("lr");
  c.train.batch = tr.get<std::size_t>("batch");
  c.train.iters = tr.get<std::size_t>("iters");
  c.train.eval_every = tr.get<std::size_t>("eval_every");
  c.train.roll_augment = tr.get<bool>("roll_augment");
  c.train.seed = stage_seed(cfg.seed, 4);
  c.validate();
  a.x_mode = r.get<std::string>("x_mode");
  require(a.x_mode == "state" || a.x_mode == "minmax", ErrorKind::Config,
          "aeode.x_mode must be \"state\" or \"minmax\"");
  const auto ab = r.sub("ablation");
  a.ablation = ab.get<bool>("enabled");
  a.ablation_seeds = ab.get<std::vector<std::uint64_t>>("seeds");
}

void parse_quantile(const Reader& r, PipelineConfig& cfg) {
  auto& q = cfg.quantile;
  q.hidden = r.get<std::vector<Eigen::Index>>("hidden");
  q.lambda = r.get<double>("lambda");
  q.lr = r.get<double>("lr");
  q.epochs = r.get<std::size_t>("epochs");
  q.batch = r.get<std::size_t>("batch");
  q.seed = stage_seed(cfg.seed, 5);
  q.validate();
}

void parse_verify(const Reader& r, PipelineConfig& cfg) {
  auto& v = cfg.verify;
  v.shift_instances = r.get<std::size_t>("shift_instances");
  v.product_instances = r.get<std::size_t>("product_instances");
  const auto fc = r.sub("finite_chain");
  v.finite_chain.n_ref = fc.get<std::size_t>("n_ref");
  v.finite_chain.ns = fc.get<std::vector<std::size_t>>("ns");
  v.finite_chain.seeds = fc.get<std::size_t>("seeds");
  v.finite_chain.rho_atoms = fc.get<std::size_t>("rho_atoms");
  v.finite_chain.seed = stage_seed(cfg.seed, 8);
  require(std::is_sorted(v.finite_chain.ns.begin(), v.finite_chain.ns.end()), ErrorKind::Config,
          "verify.finite_chain.ns must be increasing");
  const auto mx = r.sub("mixture");
  v.mixture_scenarios = mx.get<std::size_t>("scenarios");
  v.mixture_atoms = mx.get<std::size_t>("atoms");
  require(v.mixture_scenarios >= 1 && v.mixture_atoms >= 1 &&
              v.mixture_scenarios * v.mixture_atoms <= measures::kMaxAssignmentAtoms,
          ErrorKind::Config, "verify.mixture: scenarios * atoms must lie in [1, 512]");
}

}  // namespace

PipelineConfig parse_config(const json& doc, const Overrides& overrides) {
  const Reader r(doc, "");
  PipelineConfig cfg;
  cfg.model = r.get<std::string>("model");
  require(cfg.model == "himmel" || cfg.model == "fairlite", ErrorKind::Config,
          "field 'model' must be \"himmel\" or \"fairlite\"");
  cfg.seed = overrides.seed ? *overrides.seed : r.get<std::uint64_t>("seed");
  cfg.out_dir = overrides.out_dir ? *overrides.out_dir : fs::path(r.get<std::string>("out_dir"));
  if (overrides.threads) {
    cfg.threads = overrides.threads;
  } else if (r.has("threads")) {
    cfg.threads = r.get<int>("threads");
  }
  if (cfg.threads) require(*cfg.threads >= 1, ErrorKind::Config, "threads must be >= 1");

  Eigen::Index d = 0;
  if (cfg.is_himmel()) {
    parse_himmel(r.sub("simulator"), cfg.himmel);
    d = odes::kHimmelParams;
  } else {
    parse_fair(r.sub("simulator"), cfg.fair);
    d = odes::kFairLiteParams;
  }
  parse_chain(r.sub("chain"), cfg, d);

  const auto ds = r.sub("dataset");
  cfg.dataset.forward_rows = ds.get<std::size_t>("forward_rows");
  cfg.dataset.quantile_rows = ds.get<std::size_t>("quantile_rows");
  cfg.dataset.thinning = ds.get<std::size_t>("thinning");
  require(cfg.dataset.thinning >= 1, ErrorKind::Config, "dataset.thinning must be >= 1");

  parse_aeode(r.sub("aeode"), cfg);
  if (!cfg.is_himmel()) parse_quantile(r.sub("quantile"), cfg);

  const auto ev = r.sub("evaluate");
  cfg.evaluate.oracle_draws = ev.get<std::size_t>("oracle_draws");
  cfg.evaluate.test_inputs = ev.get<std::size_t>("test_inputs");

  const auto en = r.sub("ensemble");
  cfg.ensemble.draws = en.get<std::size_t>("draws");
  cfg.ensemble.x = en.vec("x", cfg.is_himmel() ? odes::kHimmelSpecies : 2);
  require(cfg.ensemble.draws >= 2, ErrorKind::Config, "ensemble.draws must be >= 2");

  parse_verify(r.sub("verify"), cfg);
  return cfg;
}

PipelineConfig load_config(const fs::path& path, const Overrides& overrides) {
  json doc;
  try {
    doc = io::read_json(path);
  } catch (const json::exception& e) {
    throw Error(ErrorKind::Config, "cannot parse " + path.string() + ": " + e.what());
  } catch (const Error& e) {
    throw Error(ErrorKind::Config, e.what());
  }
  return parse_config(doc, overrides);
}

// ---- model wiring ----

std::vector<std::string> parameter_names(const PipelineConfig& cfg) {
  if (cfg.is_himmel()) return {"theta1", "theta2", "theta3"};
  return odes::fairlite_param_names();
}

namespace {

std::vector<std::size_t> fair_obs_rows(const PipelineConfig& cfg) {
  const auto years = static_cast<std::size_t>(std::llround(cfg.fair.system.base_year - cfg.fair.system.hist_start));
  std::vector<std::size_t> rows;
  for (std::size_t r = static_cast<std::size_t>(cfg.fair.obs_stride_years); r <= years;
       r += static_cast<std::size_t>(cfg.fair.obs_stride_years)) {
    rows.push_back(r);
  }
  return rows;
}

RowMatrix fair_observables(const odes::Trajectory& hist, const std::vector<std::size_t>& rows) {
  RowMatrix out(static_cast<Eigen::Index>(rows.size()), 2);
  for (std::size_t k = 0; k < rows.size(); ++k) {
    const auto r = static_cast<Eigen::Index>(rows[k]);
    out(static_cast<Eigen::Index>(k), 0) = hist.states.row(r).head(4).sum();
    out(static_cast<Eigen::Index>(k), 1) = hist.states(r, 4);
  }
  return out;
}

RowMatrix himmel_observables(const PipelineConfig& cfg, const Vector& theta) {
  const auto traj = cfg.himmel.system.observe(cfg.himmel.x0, std::span<const double>(theta.data(), 3));
  RowMatrix out(traj.states.rows(), static_cast<Eigen::Index>(cfg.himmel.observe.size()));
  for (std::size_t k = 0; k < cfg.himmel.observe.size(); ++k) {
    out.col(static_cast<Eigen::Index>(k)) = traj.states.col(cfg.himmel.observe[k]);
  }
  return out;
}

int scenario_from_onehot(const Vector& x, int offset, int k) {
  Eigen::Index best = 0;
  x.segment(offset, k).maxCoeff(&best);
  return static_cast<int>(best);
}

}  // namespace

mcmc::Observation synthetic_observations(const PipelineConfig& cfg) {
  Rng rng = Rng::stream(stage_seed(cfg.seed, 0), 0);
  mcmc::Observation obs;
  RowMatrix clean;
  if (cfg.is_himmel()) {
    clean = himmel_observables(cfg, cfg.himmel.theta_true);
    for (Eigen::Index i = 0; i < clean.rows(); ++i) obs.times.push_back(static_cast<std::size_t>(i));
    obs.noise_sigma = Vector::Constant(clean.cols(), cfg.himmel.noise_sigma);
  } else {
    obs.times = fair_obs_rows(cfg);
    const Vector th = cfg.fair.theta_true;
    clean = fair_observables(cfg.fair.system.historical(std::span<const double>(th.data(), th.size())), obs.times);
    obs.noise_sigma = Vector(2);
    obs.noise_sigma << cfg.fair.sigma_carbon, cfg.fair.sigma_temperature;
  }
  obs.values = clean;
  for (Eigen::Index i = 0; i < clean.rows(); ++i)
    for (Eigen::Index j = 0; j < clean.cols(); ++j) obs.values(i, j) += obs.noise_sigma(j) * rng.normal();
  obs.validate();
  return obs;
}

mcmc::ForwardModel observation_model(const PipelineConfig& cfg, const mcmc::Observation& obs) {
  if (cfg.is_himmel()) {
    return [cfg](const Vector& theta) { return himmel_observables(cfg, theta); };
  }
  const auto rows = obs.times;
  return [cfg, rows](const Vector& theta) {
    return fair_observables(cfg.fair.system.historical(std::span<const double>(theta.data(), theta.size())), rows);
  };
}

datasets::TrajectorySimulator trajectory_simulator(const PipelineConfig& cfg) {
  if (cfg.is_himmel()) {
    const auto sys = cfg.himmel.system;
    return [sys](const Vector& x0, const Vector& theta) {
      return sys.observe(x0, std::span<const double>(theta.data(), theta.size())).states;
    };
  }
  const auto sys = cfg.fair.system;
  return [sys](const Vector& x, const Vector& theta) {
    const int scenario = scenario_from_onehot(x, 1, sys.scenarios.size());
    const auto traj = sys.project(std::span<const double>(theta.data(), theta.size()), scenario, x(0));
    return RowMatrix(traj.states.col(4));
  };
}

datasets::InitialStateSampler input_sampler(const PipelineConfig& cfg) {
  if (cfg.is_himmel()) {
    const Vector lo = cfg.himmel.x0_lower, hi = cfg.himmel.x0_upper;
    return [lo, hi](Rng& rng) {
      Vector x(lo.size());
      for (Eigen::Index i = 0; i < x.size(); ++i) x(i) = lo(i) + (hi(i) - lo(i)) * rng.uniform();
      return x;
    };
  }
  const double lo = cfg.fair.e0_lower, hi = cfg.fair.e0_upper;
  const int k = cfg.fair.system.scenarios.size();
  return [lo, hi, k](Rng& rng) {
    Vector x = Vector::Zero(1 + k);
    x(0) = lo + (hi - lo) * rng.uniform();
    x(1 + static_cast<Eigen::Index>(rng.below(static_cast<std::uint64_t>(k)))) = 1.0;
    return x;
  };
}

datasets::ForwardSpec forward_spec(const PipelineConfig& cfg, const std::string& chain_hash) {
  datasets::ForwardSpec spec;
  spec.n = cfg.dataset.forward_rows;
  spec.seed = stage_seed(cfg.seed, 2);
  spec.theta_names = parameter_names(cfg);
  spec.chain_hash = chain_hash;
  if (cfg.is_himmel()) {
    spec.state_names = odes::himmel_species_names();
    spec.simulator_id = "himmel-rk4";
    const auto& s = cfg.himmel.system;
    spec.grid = {{"t0", 0.0}, {"dt", s.dt * static_cast<double>(s.obs_stride)}};
  } else {
    spec.state_names = {"T"};
    spec.x0_names = {"E0"};
    for (const auto& sc : cfg.fair.system.scenarios.specs()) spec.x0_names.push_back("scenario_" + sc.name);
    spec.simulator_id = "fairlite-rk4";
    spec.grid = {{"t0", cfg.fair.system.base_year}, {"dt", 1.0}};
  }
  return spec;
}

datasets::HorizonSimulator horizon_simulator(const PipelineConfig& cfg) {
  const auto sys = cfg.fair.system;
  return [sys](int scenario, double e0, const Vector& theta) {
    const auto traj = sys.project(std::span<const double>(theta.data(), theta.size()), scenario, e0);
    return traj.states(traj.states.rows() - 1, 4);
  };
}

// ---- commands ----

Paths::Paths(const fs::path& out)
    : chain_csv(out / "chain.csv"),
      chain_json(out / "chain.json"),
      observations(out / "observations.json"),
      forward_bin(out / "forward.bin"),
      quantile_bin(out / "quantile.bin"),
      aeode_model(out / "aeode_model.json"),
      aeode_report(out / "aeode_train.json"),
      ablation(out / "ablation.json"),
      quantile_model(out / "quantile_model.json"),
      quantile_report(out / "quantile_train.json"),
      evaluation(out / "evaluation.json"),
      ensemble_csv(out / "ensemble.csv"),
      ensemble_json(out / "ensemble.json"),
      bounds_json(out / "bounds.json"),
      finite_chain_csv(out / "finite_chain.csv") {}

namespace {

json header(const PipelineConfig& cfg) {
  return {{"schema_version", io::kSchemaVersion}, {"seed", cfg.seed}, {"model", cfg.model}};
}

// Loads the chain (hash-checked against its sidecar) and returns it with its hash.
std::pair<mcmc::Chain, std::string> load_chain(const Paths& p) {
  auto chain = mcmc::read_chain(p.chain_csv, p.chain_json);
  return {std::move(chain), io::sha256_file(p.chain_csv)};
}

json load_model_file(const fs::path& path, const std::string& dataset_hash, const std::string& chain_hash) {
  const json doc = io::read_json(path);
  if (doc.at("dataset_sha256").get<std::string>() != dataset_hash) {
    throw Error(ErrorKind::Provenance, path.string() + " was trained on a different dataset");
  }
  if (doc.at("chain_hash").get<std::string>() != chain_hash) {
    throw Error(ErrorKind::Provenance, path.string() + " was trained from a different chain");
  }
  return doc;
}

json posterior_summary(const mcmc::Chain& chain, const std::vector<std::string>& names) {
  const RowMatrix post = chain.posterior();
  const Vector mean = post.colwise().mean().transpose();
  json s = json::object();
  for (Eigen::Index j = 0; j < post.cols(); ++j) {
    const double sd = std::sqrt((post.col(j).array() - mean(j)).square().sum() /
                                static_cast<double>(std::max<Eigen::Index>(post.rows() - 1, 1)));
    s[names.at(static_cast<std::size_t>(j))] = {{"mean", mean(j)}, {"sd", sd}};
  }
  return s;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace

void cmd_calibrate(const PipelineConfig& cfg, std::ostream& log) {
  const Paths p(cfg.out_dir);
  const auto obs = synthetic_observations(cfg);
  const auto model = observation_model(cfg, obs);
  const auto chain = mcmc::run_chain(cfg.chain, obs, model, cfg.prior);
  const auto names = parameter_names(cfg);

  json obs_doc = header(cfg);
  obs_doc["times"] = obs.times;
  obs_doc["values"] = io::to_json(obs.values);
  obs_doc["noise_sigma"] = io::to_json(obs.noise_sigma);
  obs_doc["theta_true"] = io::to_json(cfg.is_himmel() ? cfg.himmel.theta_true : cfg.fair.theta_true);
  io::write_json(p.observations, obs_doc);

  json extra = header(cfg);
  extra["parameter_names"] = names;
  extra["posterior"] = posterior_summary(chain, names);
  mcmc::write_chain(p.chain_csv, p.chain_json, chain, extra);

  log << "calibrate: " << chain.size() << " rows, " << chain.posterior().rows()
      << " after burn-in, acceptance " << chain.acceptance_rate() << "\n";
  for (const auto& [name, s] : extra["posterior"].items()) {
    log << "  " << name << ": mean " << s["mean"].get<double>() << " sd " << s["sd"].get<double>() << "\n";
  }
  if (chain.stagnation_warning) log << "warning: chain stagnated (a 1000-step window rejected > 99%)\n";
  if (chain.cholesky_fallbacks > 0) {
    log << "warning: " << chain.cholesky_fallbacks << " proposal covariance fallbacks\n";
  }
}

void cmd_generate(const PipelineConfig& cfg, std::ostream& log) {
  const Paths p(cfg.out_dir);
  const auto [chain, chain_hash] = load_chain(p);
  const RowMatrix post = chain.posterior(cfg.dataset.thinning);

  auto ds = datasets::generate_forward_dataset(post, input_sampler(cfg), trajectory_simulator(cfg),
                                               forward_spec(cfg, chain_hash));
  ds.meta["global_seed"] = cfg.seed;
  ds.meta["burn_in"] = chain.config.burn_in;
  ds.meta["thinning"] = cfg.dataset.thinning;
  datasets::save_dataset(p.forward_bin, ds);
  log << "generate: forward dataset " << ds.size() << " rows (" << ds.skipped << " resampled)\n";

  if (!cfg.is_himmel() && cfg.dataset.quantile_rows > 0) {
    datasets::QuantileSpec qs;
    qs.n = cfg.dataset.quantile_rows;
    qs.seed = stage_seed(cfg.seed, 3);
    qs.scenarios = cfg.fair.system.scenarios.size();
    for (const auto& s : cfg.fair.system.scenarios.specs()) qs.scenario_names.push_back(s.name);
    qs.eta = cfg.fair.eta;
    qs.simulator_id = "fairlite-rk4-horizon";
    qs.chain_hash = chain_hash;
    auto qd = datasets::generate_quantile_dataset(post, horizon_simulator(cfg), qs);
    qd.meta["global_seed"] = cfg.seed;
    qd.meta["burn_in"] = chain.config.burn_in;
    qd.meta["thinning"] = cfg.dataset.thinning;
    datasets::save_dataset(p.quantile_bin, qd);
    log << "generate: quantile dataset " << qd.size() << " rows (" << qd.skipped << " resampled)\n";
  }
}

void cmd_train_forward(const PipelineConfig& cfg, std::ostream& log) {
  const Paths p(cfg.out_dir);
  const auto chain_hash = io::sha256_file(p.chain_csv);
  const auto ds = datasets::load_dataset(p.forward_bin, chain_hash);
  const auto ds_hash = io::sha256_file(p.forward_bin);

  const auto t0 = std::chrono::steady_clock::now();
  aeode::TrainReport report;
  const auto model = aeode::train_aeode(ds, cfg.aeode.config, cfg.aeode.x_mode, &report);
  log << "train-forward: best validation MSE " << report.best_val_mse << " at iteration " << report.best_iter
      << " (" << seconds_since(t0) << " s)\n";

  json doc = header(cfg);
  doc["dataset_sha256"] = ds_hash;
  doc["chain_hash"] = chain_hash;
  doc["final_train_parts"] = report.to_json()["final_train_parts"];
  doc["model"] = model.to_json();
  io::write_json(p.aeode_model, doc);
  json rep = header(cfg);
  rep["report"] = report.to_json();
  io::write_json(p.aeode_report, rep);

  if (cfg.aeode.ablation) {
    // Full model against the all-off baseline; the linear-step variant is a
    // stronger reference reported alongside.
    const std::vector<std::string> variants{"full", "baseline", "linear_step"};
    std::map<std::string, std::vector<double>> mse;
    json runs = json::array();
    for (auto s : cfg.aeode.ablation_seeds) {
      for (const auto& v : variants) {
        auto c = v == "full" ? cfg.aeode.config
                             : (v == "baseline" ? aeode::AeodeConfig::baseline() : aeode::AeodeConfig::linear_reference());
        if (v != "full") {
          c.frequencies = cfg.aeode.config.frequencies;
          c.encoder_hidden = cfg.aeode.config.encoder_hidden;
          c.decoder_hidden = cfg.aeode.config.decoder_hidden;
          c.alphas = cfg.aeode.config.alphas;
          c.train = cfg.aeode.config.train;
        }
        c.train.seed = stage_seed(s, 4);
        aeode::TrainReport r;
        aeode::train_aeode(ds, c, cfg.aeode.x_mode, &r);
        mse[v].push_back(r.best_val_mse);
        runs.push_back({{"seed", s}, {"variant", v}, {"val_mse", r.best_val_mse}});
        log << "  ablation seed " << s << " " << v << ": " << r.best_val_mse << "\n";
      }
    }
    json ab = header(cfg);
    ab["runs"] = runs;
    if (!cfg.aeode.ablation_seeds.empty()) {
      const auto median = [](std::vector<double> v) {
        std::sort(v.begin(), v.end());
        const auto h = v.size() / 2;
        return v.size() % 2 ? v[h] : 0.5 * (v[h - 1] + v[h]);
      };
      for (const auto& v : variants) ab["median_" + v] = median(mse[v]);
      ab["full_le_baseline"] = median(mse["full"]) <= median(mse["baseline"]);
      ab["full_le_linear_step"] = median(mse["full"]) <= median(mse["linear_step"]);
    }
    io::write_json(p.ablation, ab);
  }
}

void cmd_train_quantile(const PipelineConfig& cfg, std::ostream& log) {
  require(!cfg.is_himmel(), ErrorKind::Config, "train-quantile requires model \"fairlite\"");
  const Paths p(cfg.out_dir);
  const auto chain_hash = io::sha256_file(p.chain_csv);
  const auto ds = datasets::load_dataset(p.quantile_bin, chain_hash);
  quantile::TrainLog tl;
  const auto model = quantile::train_quantile(ds, cfg.quantile, &tl);
  log << "train-quantile: best validation pinball " << model.best_val_pinball << " at epoch " << tl.best_epoch
      << "\n";
  json doc = header(cfg);
  doc["dataset_sha256"] = io::sha256_file(p.quantile_bin);
  doc["chain_hash"] = chain_hash;
  doc["model"] = model.to_json();
  io::write_json(p.quantile_model, doc);
  json rep = header(cfg);
  rep["train_loss"] = tl.train_loss;
  rep["val_pinball"] = tl.val_pinball;
  rep["best_epoch"] = tl.best_epoch;
  io::write_json(p.quantile_report, rep);
}

void cmd_evaluate(const PipelineConfig& cfg, std::ostream& log) {
  const Paths p(cfg.out_dir);
  const auto [chain, chain_hash] = load_chain(p);
  const auto ds = datasets::load_dataset(p.forward_bin, chain_hash);
  const auto doc = load_model_file(p.aeode_model, io::sha256_file(p.forward_bin), chain_hash);
  const auto model = aeode::AeodeModel::from_json(doc.at("model"));
  require(!ds.split.test.empty(), ErrorKind::Usage, "evaluate: forward dataset has no test rows");

  json out = header(cfg);
  const RowMatrix pred = aeode::aeode_forward_batch(model, ds.feature_rows(ds.split.test));
  RowMatrix truth(pred.rows(), pred.cols());
  const auto S = model.grid.rows;
  for (std::size_t b = 0; b < ds.split.test.size(); ++b) {
    truth.middleRows(static_cast<Eigen::Index>(b) * S, S) =
        Eigen::Map<const RowMatrix>(ds.targets.row(static_cast<Eigen::Index>(ds.split.test[b])).data(), S,
                                    model.state_dim);
  }
  out["forward"]["metrics"] = metrics::regression_metrics(pred, truth).to_json();
  const auto parts = aeode::evaluate_rows(model, ds, ds.split.test);
  const double train_mass = doc.at("final_train_parts").at("mass").get<double>();
  out["forward"]["normalized_mse"] = parts.mse;
  out["forward"]["test_parts"] = {{"recon", parts.parts.recon}, {"d1", parts.parts.d1}, {"d2", parts.parts.d2},
                                  {"idn", parts.parts.idn},     {"mass", parts.parts.mass}};
  out["forward"]["train_mass"] = train_mass;
  out["forward"]["mass_within_10x"] = parts.parts.mass <= 10.0 * train_mass;
  log << "evaluate: forward test MSE " << out["forward"]["metrics"]["mse"].get<double>() << ", L_mass "
      << parts.parts.mass << " (train " << train_mass << ")\n";

  if (cfg.is_himmel()) {
    double worst = 0.0;
    const auto N = model.state_dim;
    for (Eigen::Index i = 0; i < ds.targets.rows(); ++i) {
      const Eigen::Map<const RowMatrix> traj(ds.targets.row(i).data(), S, N);
      const Eigen::VectorXd sums = traj.rowwise().sum();
      worst = std::max(worst, ((sums.array() - sums(0)).abs() / std::abs(sums(0))).maxCoeff());
    }
    out["simulator_mass_max_rel_dev"] = worst;
    out["simulator_mass_conserved"] = worst <= 1e-10;
  } else {
    const auto qds = datasets::load_dataset(p.quantile_bin, chain_hash);
    const auto qdoc = load_model_file(p.quantile_model, io::sha256_file(p.quantile_bin), chain_hash);
    const auto qmodel = quantile::QuantileModel::from_json(qdoc.at("model"));
    const auto n_in = std::min(cfg.evaluate.test_inputs, qds.split.test.size());
    require(n_in > 0, ErrorKind::Usage, "evaluate: quantile dataset has no test rows");
    const RowMatrix post = chain.posterior(cfg.dataset.thinning);
    const int k = cfg.fair.system.scenarios.size();
    RowMatrix inputs(static_cast<Eigen::Index>(n_in), qds.features.cols());
    std::vector<std::vector<double>> draws(n_in);
    const auto sim = horizon_simulator(cfg);
    for (std::size_t i = 0; i < n_in; ++i) {
      const Vector f = qds.features.row(static_cast<Eigen::Index>(qds.split.test[i])).transpose();
      inputs.row(static_cast<Eigen::Index>(i)) = f.transpose();
      quantile::Eta eta{static_cast<int>(std::lround(f(k))), f(k + 1), f(k + 2)};
      const auto oracle = quantile::empirical_quantile_oracle(scenario_from_onehot(f, 0, k), eta, post,
                                                              cfg.evaluate.oracle_draws, sim,
                                                              Rng::stream(stage_seed(cfg.seed, 6), i).key());
      draws[i] = oracle.draws;
    }
    const auto rep = quantile::evaluate_quantile(qmodel, inputs, draws);
    out["quantile"] = rep.to_json();
    log << "evaluate: quantile coverage " << rep.mean_coverage << ", interval size model "
        << rep.mean_interval_size_model << " vs empirical " << rep.mean_interval_size_empirical << "\n";
  }
  io::write_json(p.evaluation, out);
}

void cmd_ensemble(const PipelineConfig& cfg, std::ostream& log) {
  const Paths p(cfg.out_dir);
  const auto [chain, chain_hash] = load_chain(p);
  const json doc = io::read_json(p.aeode_model);
  if (doc.at("chain_hash").get<std::string>() != chain_hash) {
    throw Error(ErrorKind::Provenance, "aeode model was trained from a different chain");
  }
  const auto model = aeode::AeodeModel::from_json(doc.at("model"));
  const RowMatrix post = chain.posterior(cfg.dataset.thinning);

  Vector x = cfg.ensemble.x;
  if (!cfg.is_himmel()) {
    const int k = cfg.fair.system.scenarios.size();
    const auto s = static_cast<int>(std::lround(cfg.ensemble.x(1)));
    require(s >= 0 && s < k, ErrorKind::Config, "ensemble.x: scenario id out of range");
    x = Vector::Zero(1 + k);
    x(0) = cfg.ensemble.x(0);
    x(1 + s) = 1.0;
  }

  const auto seed = stage_seed(cfg.seed, 7);
  auto t0 = std::chrono::steady_clock::now();
  const auto ens = aeode::ensemble_predict(model, x, post, cfg.ensemble.draws, seed);
  const double t_emulator = seconds_since(t0);

  const auto sim = trajectory_simulator(cfg);
  const auto S = model.grid.rows;
  const auto N = model.state_dim;
  RowMatrix sim_traj(ens.trajectories.rows(), N);
  t0 = std::chrono::steady_clock::now();
  for (std::size_t d = 0; d < ens.chain_rows.size(); ++d) {
    sim_traj.middleRows(static_cast<Eigen::Index>(d) * S, S) =
        sim(x, post.row(static_cast<Eigen::Index>(ens.chain_rows[d])).transpose());
  }
  const double t_simulator = seconds_since(t0);

  std::vector<std::string> header_cols{"draw", "chain_row", "t"};
  for (const auto& s : model.state_names) header_cols.push_back(s);
  RowMatrix table(ens.trajectories.rows(), 3 + N);
  for (std::size_t d = 0; d < ens.chain_rows.size(); ++d)
    for (Eigen::Index s = 0; s < S; ++s) {
      const auto r = static_cast<Eigen::Index>(d) * S + s;
      table(r, 0) = static_cast<double>(d);
      table(r, 1) = static_cast<double>(ens.chain_rows[d]);
      table(r, 2) = model.grid.t0 + static_cast<double>(s) * model.grid.dt;
      table.row(r).tail(N) = ens.trajectories.row(r);
    }
  io::write_csv(p.ensemble_csv, header_cols, table);

  double band_dev = 0.0;
  std::vector<double> col(ens.chain_rows.size());
  for (Eigen::Index k = 0; k < N; ++k) {
    RowMatrix band(S, 4);
    for (Eigen::Index s = 0; s < S; ++s) {
      band.row(s) << model.grid.t0 + static_cast<double>(s) * model.grid.dt, ens.q05(s, k), ens.q50(s, k),
          ens.q95(s, k);
      for (std::size_t d = 0; d < col.size(); ++d) col[d] = sim_traj(static_cast<Eigen::Index>(d) * S + s, k);
      std::sort(col.begin(), col.end());
      band_dev = std::max({band_dev, std::abs(metrics::quantile_sorted(col, 0.05) - ens.q05(s, k)),
                           std::abs(metrics::quantile_sorted(col, 0.95) - ens.q95(s, k))});
    }
    io::write_csv(cfg.out_dir / ("band_" + model.state_names.at(static_cast<std::size_t>(k)) + ".csv"),
                  {"t", "q05", "q50", "q95"}, band);
  }
  const auto m = metrics::regression_metrics(ens.trajectories, sim_traj);

  json out = header(cfg);
  out["draws"] = cfg.ensemble.draws;
  out["x"] = io::to_json(x);
  out["chain_hash"] = chain_hash;
  out["emulator_vs_simulator"] = m.to_json();
  out["band_max_abs_deviation"] = band_dev;
  out["band_within_3_rmse"] = band_dev <= 3.0 * m.rmse;
  io::write_json(p.ensemble_json, out);
  log << "ensemble: " << cfg.ensemble.draws << " draws, emulator " << t_emulator << " s, simulator "
      << t_simulator << " s (speedup " << t_simulator / std::max(t_emulator, 1e-12) << "x)\n";
}

bool cmd_verify_bounds(const PipelineConfig& cfg, std::ostream& log) {
  const Paths p(cfg.out_dir);
  const auto& v = cfg.verify;
  json out = header(cfg);

  const auto shift = measures::run_shift_bound_suite(v.shift_instances, stage_seed(cfg.seed, 81));
  const auto product = measures::run_product_reduction_suite(v.product_instances, stage_seed(cfg.seed, 82));
  const auto finite = measures::run_finite_chain_suite(v.finite_chain);

  // Scenario laws: U = (x, theta) atoms from shifted Gaussians.
  std::vector<RowMatrix> laws;
  Rng rng = Rng::stream(stage_seed(cfg.seed, 83), 0);
  for (std::size_t k = 0; k < v.mixture_scenarios; ++k) {
    RowMatrix a(static_cast<Eigen::Index>(v.mixture_atoms), 2);
    const double shift_k = 0.5 * static_cast<double>(k);
    for (Eigen::Index i = 0; i < a.rows(); ++i) {
      a(i, 0) = 2.0 * rng.uniform() - 1.0;
      a(i, 1) = shift_k + 0.8 * rng.normal();
    }
    laws.push_back(std::move(a));
  }
  const auto forward = [](const Vector& u) {
    Vector y(1);
    y(0) = 0.5 * std::sin(2.0 * u(0)) + std::tanh(u(1));
    return y;
  };
  const auto mixture = measures::mixture_bound_check(laws, forward, std::sqrt(2.0), 0.0);

  const bool shift_ok = shift.failures == 0;
  const bool product_ok = product.failures == 0;
  const bool finite_ok = finite.theorem_holds;
  out["shift_bound"] = {{"instances", shift.instances}, {"failures", shift.failures}, {"min_slack", shift.min_slack},
                        {"passed", shift_ok}};
  out["product_reduction"] = product.to_json();
  out["product_reduction"]["passed"] = product_ok;
  out["finite_chain"] = {{"median_w2", finite.median_w2},
                         {"median_decreasing", finite.median_decreasing},
                         {"theorem_holds", finite_ok},
                         {"ns", v.finite_chain.ns},
                         {"seeds", finite.to_json()["seeds"]}};
  out["mixture"] = mixture.to_json();
  io::write_json(p.bounds_json, out);
  io::write_csv(p.finite_chain_csv, {"N", "w2", "J_hat", "J_star", "gap", "bound"}, finite.reports.front().table());

  log << "verify-bounds: shift " << (shift_ok ? "ok" : "FAILED") << " (min slack " << shift.min_slack << "), product "
      << (product_ok ? "ok" : "FAILED") << ", finite-chain " << (finite_ok ? "ok" : "FAILED")
      << (finite.median_decreasing ? "" : " (median W2 not decreasing)") << ", mixture "
      << (mixture.passed ? "ok" : "FAILED") << "\n";
  return shift_ok && product_ok && finite_ok && mixture.passed;
}

int run_command(const std::string& name, const PipelineConfig& cfg, std::ostream& log, std::ostream& err) {
  try {
    if (cfg.threads) omp_set_num_threads(*cfg.threads);
    if (name == "calibrate") {
      cmd_calibrate(cfg, log);
    } else if (name == "generate") {
      cmd_generate(cfg, log);
    } else if (name == "train-quantile") {
      cmd_train_quantile(cfg, log);
    } else if (name == "train-forward") {
      cmd_train_forward(cfg, log);
    } else if (name == "evaluate") {
      cmd_evaluate(cfg, log);
    } else if (name == "ensemble") {
      cmd_ensemble(cfg, log);
    } else if (name == "verify-bounds") {
      if (!cmd_verify_bounds(cfg, log)) {
        err << "error: theory assertions failed\n";
        return kRuntime;
      }
    } else {
      err << "error: unknown command '" << name << "'\n";
      return kConfig;
    }
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return exit_code_for(e);
  }
  return kOk;
}

}  // namespace mine::pipeline
