#include "mine/pipeline.hpp"

#include <CLI11.hpp>

#include <iostream>

int main(int argc, char** argv) {
  using namespace mine::pipeline;
  mine::configure_allocator();
  CLI::App app{"mine: calibrate, emulate and verify ODE forward models"};
  app.require_subcommand(1, 1);

  std::string config;
  Overrides ov;
  std::uint64_t seed = 0;
  int threads = 0;
  std::string out;

  const std::vector<std::pair<std::string, std::string>> commands{
      {"calibrate", "run DRAM on synthetic observations, write the chain"},
      {"generate", "build posterior-informed forward and quantile datasets"},
      {"train-quantile", "train the 5%/95% interval emulator (fairlite)"},
      {"train-forward", "train the AEODE trajectory emulator"},
      {"evaluate", "score the emulators on held-out data"},
      {"ensemble", "posterior predictive ensemble through the AEODE"},
      {"verify-bounds", "check the shift, product and finite-chain bounds"}};
  for (const auto& [name, help] : commands) {
    auto* sub = app.add_subcommand(name, help);
    sub->add_option("--config", config, "pipeline config (JSON)")->required()->check(CLI::ExistingFile);
    sub->add_option("--seed", seed, "override the global seed");
    sub->add_option("--threads", threads, "OpenMP thread count")->check(CLI::PositiveNumber);
    sub->add_option("--out", out, "override the output directory");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kConfig;
  }

  const auto* sub = app.get_subcommands().front();
  if (sub->count("--seed")) ov.seed = seed;
  if (sub->count("--threads")) ov.threads = threads;
  if (sub->count("--out")) ov.out_dir = out;

  PipelineConfig cfg;
  try {
    cfg = load_config(config, ov);
    std::filesystem::create_directories(cfg.out_dir);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code_for(e) == kRuntime ? kConfig : exit_code_for(e);
  }
  return run_command(sub->get_name(), cfg, std::cout, std::cerr);
}
