#include "mine/io.hpp"
#include "mine/pipeline.hpp"
#include "test_util.hpp"

#include <doctest.h>

#include <sstream>

using namespace mine;
using namespace mine::pipeline;
namespace fs = std::filesystem;

namespace {

nlohmann::json shipped(const std::string& name) {
  return io::read_json(fs::path(MINE_SOURCE_DIR) / "configs" / name);
}

// The shipped Himmel config scaled down to a few seconds.
nlohmann::json small_himmel(const fs::path& out) {
  auto j = shipped("himmel.json");
  j["out_dir"] = out.string();
  j["chain"]["n_samples"] = 3000;
  j["chain"]["burn_in"] = 1000;
  j["dataset"]["forward_rows"] = 200;
  j["aeode"]["train"]["iters"] = 60;
  j["aeode"]["train"]["eval_every"] = 20;
  j["evaluate"]["oracle_draws"] = 200;
  j["evaluate"]["test_inputs"] = 10;
  j["ensemble"]["draws"] = 50;
  j["verify"]["shift_instances"] = 10;
  j["verify"]["product_instances"] = 5;
  j["verify"]["finite_chain"] = {{"n_ref", 4000}, {"ns", {50, 200, 1000}}, {"seeds", 3}, {"rho_atoms", 8}};
  return j;
}

nlohmann::json small_fair(const fs::path& out) {
  auto j = shipped("fairlite.json");
  j["out_dir"] = out.string();
  j["chain"]["n_samples"] = 2000;
  j["chain"]["burn_in"] = 1000;
  j["dataset"]["forward_rows"] = 100;
  j["dataset"]["quantile_rows"] = 1000;
  j["aeode"]["train"]["iters"] = 40;
  j["aeode"]["train"]["eval_every"] = 20;
  j["quantile"]["epochs"] = 3;
  j["quantile"]["batch"] = 256;
  j["evaluate"]["oracle_draws"] = 1000;  // oracle minimum
  j["evaluate"]["test_inputs"] = 4;
  j["ensemble"]["draws"] = 20;
  return j;
}

int run(const std::string& cmd, const PipelineConfig& cfg) {
  std::ostringstream log, err;
  fs::create_directories(cfg.out_dir);
  return run_command(cmd, cfg, log, err);
}

const std::vector<std::string> kHimmelCommands{"calibrate", "generate", "train-forward", "evaluate", "ensemble"};

}  // namespace

TEST_CASE("the shipped configs parse") {
  CHECK_NOTHROW(parse_config(shipped("himmel.json")));
  const auto f = parse_config(shipped("fairlite.json"));
  CHECK(!f.is_himmel());
  CHECK(f.quantile.hidden == std::vector<Eigen::Index>{20, 20});
}

TEST_CASE("a missing field is a config error naming the field") {
  auto j = shipped("himmel.json");
  j["chain"].erase("burn_in");
  try {
    parse_config(j);
    FAIL("expected config error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::Config);
    CHECK(std::string(e.what()).find("chain.burn_in") != std::string::npos);
    CHECK(exit_code_for(e) == kConfig);
  }
  auto k = shipped("himmel.json");
  k["seed"] = "twelve";
  CHECK_THROWS_AS(parse_config(k), Error);
  auto m = shipped("himmel.json");
  m["model"] = "lorenz";
  CHECK_THROWS_AS(parse_config(m), Error);
}

TEST_CASE("overrides take precedence over the file") {
  Overrides o;
  o.seed = 7;
  o.threads = 2;
  o.out_dir = "elsewhere";
  const auto c = parse_config(shipped("himmel.json"), o);
  CHECK(c.seed == 7);
  CHECK(c.threads == 2);
  CHECK(c.out_dir == fs::path("elsewhere"));
}

TEST_CASE("exit code mapping") {
  CHECK(exit_code_for(Error(ErrorKind::Config, "x")) == kConfig);
  CHECK(exit_code_for(Error(ErrorKind::Usage, "x")) == kConfig);
  CHECK(exit_code_for(Error(ErrorKind::Provenance, "x")) == kProvenance);
  CHECK(exit_code_for(Error(ErrorKind::TrainingDiverged, "x")) == kRuntime);
  CHECK(exit_code_for(std::runtime_error("x")) == kRuntime);
}

TEST_CASE("stage seeds differ by stage and by global seed") {
  CHECK(stage_seed(1, 2) == stage_seed(1, 2));
  CHECK(stage_seed(1, 2) != stage_seed(1, 3));
  CHECK(stage_seed(1, 2) != stage_seed(2, 2));
}

TEST_CASE("himmel pipeline end to end, byte-identical rerun, provenance") {
  const auto a = test::scratch_dir("pipe_a");
  const auto b = test::scratch_dir("pipe_b");
  const auto ca = parse_config(small_himmel(a));
  const auto cb = parse_config(small_himmel(b));
  for (const auto& cmd : kHimmelCommands) {
    INFO(cmd);
    CHECK(run(cmd, ca) == kOk);
    CHECK(run(cmd, cb) == kOk);
  }
  const Paths pa(a), pb(b);
  CHECK(io::read_json(pa.chain_json).contains("schema_version"));
  for (const auto& p : {pa.aeode_model, pa.aeode_report, pa.evaluation, pa.ensemble_json}) {
    INFO(p.string());
    const auto j = io::read_json(p);
    CHECK(j.contains("schema_version"));
    CHECK(j.at("seed").get<std::uint64_t>() == ca.seed);
  }
  std::size_t compared = 0;
  for (const auto& entry : fs::directory_iterator(a)) {
    INFO(entry.path().filename().string());
    CHECK(io::read_file(entry.path()) == io::read_file(b / entry.path().filename()));
    ++compared;
  }
  CHECK(compared >= 8);

  auto bytes = io::read_file(pb.forward_bin);
  bytes[bytes.size() / 2] ^= 0x10;
  io::write_file(pb.forward_bin, bytes);
  CHECK(run("train-forward", cb) == kProvenance);

  auto other = small_himmel(b);
  other["seed"] = 99;
  CHECK(run("train-forward", parse_config(other)) == kProvenance);
}

TEST_CASE("a command whose inputs are missing fails with a runtime code") {
  const auto d = test::scratch_dir("pipe_empty");
  CHECK(run("train-forward", parse_config(small_himmel(d))) == kRuntime);
  CHECK(run("no-such-command", parse_config(small_himmel(d))) == kConfig);
}

TEST_CASE("verify-bounds exits 0 and writes its report") {
  const auto d = test::scratch_dir("pipe_verify");
  const auto c = parse_config(small_himmel(d));
  CHECK(run("verify-bounds", c) == kOk);
  const auto j = io::read_json(Paths(d).bounds_json);
  CHECK(j.at("shift_bound").at("passed").get<bool>());
  CHECK(j.at("product_reduction").at("passed").get<bool>());
  CHECK(fs::exists(Paths(d).finite_chain_csv));
}

TEST_CASE("fairlite pipeline end to end") {
  const auto d = test::scratch_dir("pipe_fair");
  const auto c = parse_config(small_fair(d));
  for (const std::string cmd : {"calibrate", "generate", "train-quantile", "train-forward", "evaluate", "ensemble"}) {
    INFO(cmd);
    CHECK(run(cmd, c) == kOk);
  }
  const Paths p(d);
  const auto eval = io::read_json(p.evaluation);
  CHECK(eval.contains("quantile"));
  CHECK(io::read_json(p.quantile_model).contains("dataset_sha256"));
}
