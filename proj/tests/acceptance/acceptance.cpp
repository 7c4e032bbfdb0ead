// Acceptance suite: one PASS/FAIL line per criterion 1-10.
#include "mine/aeode.hpp"
#include "mine/io.hpp"
#include "mine/mcmc.hpp"
#include "mine/measures.hpp"
#include "mine/metrics.hpp"
#include "mine/pipeline.hpp"
#include "mine/quantile.hpp"

#include "../unit/gradcheck.hpp"

#include <CLI11.hpp>
#include <omp.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <iostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

using namespace mine;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(4);
  os << v;
  return os.str();
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const auto h = v.size() / 2;
  return v.size() % 2 ? v[h] : 0.5 * (v[h - 1] + v[h]);
}

json shipped(const std::string& name) { return io::read_json(fs::path(MINE_SOURCE_DIR) / "configs" / name); }

fs::path fresh_dir(const fs::path& d) {
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

void run_or_throw(const std::string& cmd, const pipeline::PipelineConfig& cfg, std::ostream& log) {
  std::ostringstream err;
  const int code = pipeline::run_command(cmd, cfg, log, err);
  if (code != pipeline::kOk) throw std::runtime_error(cmd + " exited " + std::to_string(code) + ": " + err.str());
}

constexpr std::uint64_t kSeed = 20240101;

// ---- criteria ----

Outcome c1_shift() {
  const auto t0 = Clock::now();
  const auto r = measures::run_shift_bound_suite(100, pipeline::stage_seed(kSeed, 81));
  const double secs = seconds_since(t0);
  return {r.instances == 100 && r.failures == 0 && r.min_slack >= -1e-9 && secs < 10.0,
          "instances " + std::to_string(r.instances) + ", failures " + std::to_string(r.failures) +
              ", min slack " + fmt(r.min_slack) + ", " + fmt(secs) + " s"};
}

Outcome c2_product() {
  const auto r = measures::run_product_reduction_suite(50, pipeline::stage_seed(kSeed, 82));
  return {r.instances == 50 && r.failures == 0 && r.max_abs_diff <= 1e-9,
          "instances " + std::to_string(r.instances) + ", max |w2_joint - w2_theta| " + fmt(r.max_abs_diff)};
}

Outcome c3_finite_chain() {
  measures::FiniteChainSuiteConfig c;
  c.seed = pipeline::stage_seed(kSeed, 8);
  const auto t0 = Clock::now();
  const auto r = measures::run_finite_chain_suite(c);
  const double secs = seconds_since(t0);
  std::string med;
  for (double w : r.median_w2) med += (med.empty() ? "" : " ") + fmt(w);
  return {r.theorem_holds && r.median_decreasing && secs < 120.0,
          "bound holds " + std::string(r.theorem_holds ? "yes" : "no") + ", median W2 [" + med + "], " +
              fmt(secs) + " s"};
}

Outcome c4_dram(const fs::path& work) {
  const auto t0 = Clock::now();
  mcmc::ChainConfig cc;
  cc.n_samples = 50000;
  cc.burn_in = 0;
  cc.init_theta = Vector::Zero(1);
  cc.init_cov = Eigen::MatrixXd::Identity(1, 1);
  auto normal = [](const Vector& th) { return mcmc::LogPosterior{-0.5 * th.squaredNorm()}; };
  const auto chain = mcmc::run_chain(cc, normal);
  const double mean = chain.samples.col(0).mean();
  const double var = (chain.samples.col(0).array() - mean).square().mean();
  const bool normal_ok = std::abs(mean) <= 0.05 && std::abs(var - 1.0) <= 0.1;

  auto doc = shipped("himmel.json");
  const auto cfg = pipeline::parse_config(doc, {std::nullopt, std::nullopt, fresh_dir(work / "c4_himmel")});
  std::ostringstream log;
  run_or_throw("calibrate", cfg, log);
  const pipeline::Paths p(cfg.out_dir);
  const RowMatrix post = mcmc::read_chain(p.chain_csv, p.chain_json).posterior();
  bool recovered = true;
  std::string z;
  for (Eigen::Index k = 0; k < post.cols(); ++k) {
    const double m = post.col(k).mean();
    const double sd = std::sqrt((post.col(k).array() - m).square().sum() / static_cast<double>(post.rows() - 1));
    const double score = std::abs(m - cfg.himmel.theta_true(k)) / sd;
    recovered = recovered && score <= 3.0;
    z += (z.empty() ? "" : " ") + fmt(score);
  }
  const double secs = seconds_since(t0);
  return {normal_ok && recovered && secs < 300.0, "N(0,1) mean " + fmt(mean) + " var " + fmt(var) +
                                                      ", himmel |mean - theta*|/sd [" + z + "], " + fmt(secs) +
                                                      " s"};
}

Outcome c5_gradients() {
  const auto t0 = Clock::now();
  double worst = 0.0;
  std::string worst_op;
  const auto ops = test::gradient_check_ops();
  for (const auto& op : ops) {
    const double e = test::op_worst_error(op, 25);
    if (e >= worst) {
      worst = e;
      worst_op = op.name;
    }
  }
  const double secs = seconds_since(t0);
  return {worst <= 1e-4 && secs < 30.0, std::to_string(ops.size()) + " ops x 25 instances, worst rel err " +
                                            fmt(worst) + " (" + worst_op + "), " + fmt(secs) + " s"};
}

// y = 0.5 x + (1 + 0.25 x) eps on x in [-2, 2]: heteroscedastic Gaussian.
double gaussian_task_draw(double x, Rng& r) { return 0.5 * x + (1.0 + 0.25 * x) * r.normal(); }

Outcome c6_quantile() {
  const auto t0 = Clock::now();
  Rng r(pipeline::stage_seed(kSeed, 3));
  auto make = [&](std::size_t n, RowMatrix& x, Vector& y) {
    x.resize(static_cast<Eigen::Index>(n), 1);
    y.resize(static_cast<Eigen::Index>(n));
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      x(i, 0) = -2.0 + 4.0 * r.uniform();
      y(i) = gaussian_task_draw(x(i, 0), r);
    }
  };
  RowMatrix xtr, xva;
  Vector ytr, yva;
  make(30000, xtr, ytr);
  make(10000, xva, yva);
  quantile::QuantileConfig qc;
  qc.seed = pipeline::stage_seed(kSeed, 5);
  const auto model = quantile::train_quantile(xtr, ytr, xva, yva, qc);

  const std::size_t n_test = 50, draws = 2000;
  RowMatrix xte(n_test, 1);
  std::vector<std::vector<double>> oracle(n_test);
  for (std::size_t i = 0; i < n_test; ++i) {
    const double x = -2.0 + 4.0 * r.uniform();
    xte(static_cast<Eigen::Index>(i), 0) = x;
    Rng d = Rng::stream(pipeline::stage_seed(kSeed, 6), i);
    for (std::size_t k = 0; k < draws; ++k) oracle[i].push_back(gaussian_task_draw(x, d));
  }
  const auto rep = quantile::evaluate_quantile(model, xte, oracle);
  const double gap = std::abs(rep.mean_interval_size_model - rep.mean_interval_size_empirical);
  const double secs = seconds_since(t0);
  return {rep.mean_coverage >= 0.87 && rep.mean_coverage <= 0.93 && gap <= 0.05 && secs < 300.0,
          "mean coverage " + fmt(rep.mean_coverage) + ", interval size model " +
              fmt(rep.mean_interval_size_model) + " vs empirical " + fmt(rep.mean_interval_size_empirical) +
              " (gap " + fmt(gap) + "), " + fmt(secs) + " s"};
}

// Desk-scale Himmel run shared by criteria 7, 8 and 9.
struct HimmelRun {
  pipeline::PipelineConfig cfg;
  double train_seconds = 0.0;
};

HimmelRun himmel_run(const fs::path& work) {
  auto doc = shipped("himmel.json");
  doc["aeode"]["ablation"]["enabled"] = true;
  HimmelRun run{pipeline::parse_config(doc, {std::nullopt, std::nullopt, fresh_dir(work / "himmel")})};
  std::ostringstream log;
  run_or_throw("calibrate", run.cfg, log);
  run_or_throw("generate", run.cfg, log);
  const auto t0 = Clock::now();
  run_or_throw("train-forward", run.cfg, log);
  run.train_seconds = seconds_since(t0);
  run_or_throw("evaluate", run.cfg, log);
  return run;
}

Outcome c7_ablation(const HimmelRun& run) {
  const pipeline::Paths p(run.cfg.out_dir);
  const auto ab = io::read_json(p.ablation);
  const auto n_train = datasets::load_dataset(p.forward_bin).split.train.size();
  const double full = ab.at("median_full").get<double>();
  const double base = ab.at("median_baseline").get<double>();
  const double linear = ab.at("median_linear_step").get<double>();
  return {n_train == 3000 && run.cfg.aeode.config.train.iters == 10000 &&
              run.cfg.aeode.ablation_seeds.size() == 3 && full <= base && run.train_seconds < 3600.0,
          "train rows " + std::to_string(n_train) + ", median val MSE full " + fmt(full) + " vs baseline " +
              fmt(base) + " (linear-step reference " + fmt(linear) + "), " + fmt(run.train_seconds) + " s"};
}

Outcome c8_mass(const HimmelRun& run) {
  // Simulator: random states and rates, every row of the fine grid.
  const auto& cfg = run.cfg;
  Rng r(pipeline::stage_seed(kSeed, 2));
  double worst = 0.0;
  for (int i = 0; i < 200; ++i) {
    Vector x0(cfg.himmel.x0_lower.size());
    for (Eigen::Index k = 0; k < x0.size(); ++k)
      x0(k) = cfg.himmel.x0_lower(k) + (cfg.himmel.x0_upper(k) - cfg.himmel.x0_lower(k)) * r.uniform();
    Vector th(3);
    for (Eigen::Index k = 0; k < 3; ++k) th(k) = 0.1 + 5.0 * r.uniform();
    const auto traj = cfg.himmel.system.simulate(x0, std::span<const double>(th.data(), th.size()));
    const Eigen::VectorXd sums = traj.states.rowwise().sum();
    worst = std::max(worst, ((sums.array() - sums(0)).abs() / std::abs(sums(0))).maxCoeff());
  }
  const auto ev = io::read_json(pipeline::Paths(cfg.out_dir).evaluation);
  const double test_mass = ev.at("forward").at("test_parts").at("mass").get<double>();
  const double train_mass = ev.at("forward").at("train_mass").get<double>();
  const double dataset_dev = ev.at("simulator_mass_max_rel_dev").get<double>();
  return {worst <= 1e-10 && dataset_dev <= 1e-10 && test_mass <= 10.0 * train_mass,
          "simulator max rel dev " + fmt(std::max(worst, dataset_dev)) + ", AEODE L_mass test " + fmt(test_mass) +
              " vs train " + fmt(train_mass)};
}

Outcome c9_speedup(const HimmelRun& run) {
  const auto& cfg = run.cfg;
  const pipeline::Paths p(cfg.out_dir);
  const auto model = aeode::AeodeModel::from_json(io::read_json(p.aeode_model).at("model"));
  const RowMatrix post = mcmc::read_chain(p.chain_csv, p.chain_json).posterior();
  const auto sim = pipeline::trajectory_simulator(cfg);
  const std::size_t draws = 400;
  Rng pick(pipeline::stage_seed(kSeed, 7));
  std::vector<Eigen::Index> rows(draws);
  for (auto& i : rows) i = static_cast<Eigen::Index>(pick.below(static_cast<std::uint64_t>(post.rows())));

  std::vector<double> t_ens, t_rk4;
  double sink = 0.0;
  for (int rep = 0; rep < 5; ++rep) {
    auto t0 = Clock::now();
    const auto e = aeode::ensemble_predict(model, cfg.ensemble.x, post, draws, pipeline::stage_seed(kSeed, 7));
    t_ens.push_back(seconds_since(t0));
    sink += e.q50(0, 0);
    t0 = Clock::now();
    for (auto i : rows) sink += sim(cfg.ensemble.x, post.row(i).transpose())(0, 0);
    t_rk4.push_back(seconds_since(t0));
  }
  const double ratio = median(t_rk4) / median(t_ens);
  return {std::isfinite(sink) && ratio >= 5.0, "400 draws: AEODE " + fmt(median(t_ens)) + " s, RK4 " +
                                                   fmt(median(t_rk4)) + " s, speedup " + fmt(ratio) + "x"};
}

// Scaled-down copies of the shipped configs; every command runs.
json small(const std::string& name) {
  auto j = shipped(name);
  j["chain"]["n_samples"] = 3000;
  j["chain"]["burn_in"] = 1000;
  j["dataset"]["forward_rows"] = 300;
  j["aeode"]["train"]["iters"] = 100;
  j["aeode"]["train"]["eval_every"] = 25;
  j["aeode"]["ablation"]["enabled"] = true;
  j["aeode"]["ablation"]["seeds"] = {1, 2};
  j["evaluate"]["oracle_draws"] = 1000;
  j["evaluate"]["test_inputs"] = 5;
  j["ensemble"]["draws"] = 100;
  j["verify"]["shift_instances"] = 20;
  j["verify"]["product_instances"] = 10;
  j["verify"]["finite_chain"] = {{"n_ref", 5000}, {"ns", {50, 200, 1000}}, {"seeds", 5}, {"rho_atoms", 8}};
  if (name == "fairlite.json") {
    j["dataset"]["quantile_rows"] = 2000;
    j["quantile"]["epochs"] = 20;
  }
  return j;
}

Outcome c10_determinism(const fs::path& work) {
  const std::vector<std::string> himmel_cmds{"calibrate", "generate", "train-forward", "evaluate", "ensemble",
                                             "verify-bounds"};
  std::vector<std::string> fair_cmds{"calibrate",     "generate", "train-quantile", "train-forward",
                                     "evaluate",      "ensemble", "verify-bounds"};
  std::size_t files = 0;
  std::vector<std::string> differing;
  for (const std::string name : {"himmel.json", "fairlite.json"}) {
    const auto& cmds = name == "himmel.json" ? himmel_cmds : fair_cmds;
    std::vector<fs::path> dirs;
    // Second run uses a different thread count: results must not depend on it.
    for (int t : {1, 3}) {
      const auto dir = fresh_dir(work / ("c10_" + name.substr(0, name.find('.')) + "_" + std::to_string(t)));
      pipeline::Overrides o;
      o.threads = t;
      o.out_dir = dir;
      const auto cfg = pipeline::parse_config(small(name), o);
      std::ostringstream log;
      for (const auto& c : cmds) run_or_throw(c, cfg, log);
      dirs.push_back(dir);
    }
    for (const auto& e : fs::directory_iterator(dirs[0])) {
      ++files;
      const auto other = dirs[1] / e.path().filename();
      if (!fs::exists(other) || io::read_file(e.path()) != io::read_file(other))
        differing.push_back(e.path().filename().string());
    }
    for (const auto& e : fs::directory_iterator(dirs[1]))
      if (!fs::exists(dirs[0] / e.path().filename())) differing.push_back(e.path().filename().string());
  }
  std::string diff;
  for (const auto& d : differing) diff += " " + d;
  return {differing.empty() && files > 20,
          std::to_string(files) + " output files compared across reruns" +
              (differing.empty() ? ", all identical" : ", differing:" + diff)};
}

}  // namespace

int main(int argc, char** argv) {
  configure_allocator();
  CLI::App app{"acceptance suite"};
  std::string workdir = "acceptance_runs";
  std::vector<int> only;
  app.add_option("--workdir", workdir, "Scratch directory for pipeline runs");
  app.add_option("--only", only, "Run only these criteria")->check(CLI::Range(1, 10));
  CLI11_PARSE(app, argc, argv);
  const fs::path work = fs::absolute(workdir);
  fs::create_directories(work);
  const std::set<int> selected(only.begin(), only.end());
  const auto want = [&](int c) { return selected.empty() || selected.count(c) > 0; };

  std::optional<HimmelRun> himmel;
  const auto need_himmel = [&]() -> const HimmelRun& {
    if (!himmel) himmel = himmel_run(work);
    return *himmel;
  };

  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"shift lemma suite", c1_shift},
      {"product reduction", c2_product},
      {"finite-chain theorem", c3_finite_chain},
      {"DRAM correctness", [&] { return c4_dram(work); }},
      {"gradient checks", c5_gradients},
      {"quantile calibration", c6_quantile},
      {"AEODE ablation direction", [&] { return c7_ablation(need_himmel()); }},
      {"mass conservation", [&] { return c8_mass(need_himmel()); }},
      {"ensemble speedup", [&] { return c9_speedup(need_himmel()); }},
      {"determinism", [&] { return c10_determinism(work); }},
  };

  json summary = json::object();
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!want(id)) continue;
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    failed += o.pass ? 0 : 1;
    std::cout << "criterion " << id << " " << (o.pass ? "PASS" : "FAIL") << " " << criteria[i].first << ": "
              << o.detail << std::endl;
    summary[std::to_string(id)] = {{"name", criteria[i].first}, {"pass", o.pass}, {"detail", o.detail}};
  }
  io::write_json(work / "acceptance.json", summary);
  return failed == 0 ? 0 : 1;
}
