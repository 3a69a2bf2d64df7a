#include <iostream>
#if defined(__GLIBC__)
#include <malloc.h>
#endif
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "replay/error.hpp"
#include "replay/harness.hpp"

using namespace replay;

int main(int argc, char** argv) {
#if defined(__GLIBC__)
  // Parameter vectors are large; keep them off mmap to avoid page-fault churn.
  mallopt(M_MMAP_THRESHOLD, 8 << 20);
#endif
  CLI::App app{"Task-free online continual learning with replay"};
  app.require_subcommand(1);

  std::string config_path;
  int jobs = 1;
  auto* run = app.add_subcommand("run", "Run every (strategy, seed) cell of a config");
  run->add_option("--config", config_path, "JSON config file")->required();
  run->add_option("--jobs", jobs, "Parallel cells")->check(CLI::PositiveNumber);

  auto* sweep = app.add_subcommand("sweep", "Repeat a config over several memory sizes");
  std::vector<std::size_t> mem_sizes;
  sweep->add_option("--config", config_path, "JSON config file")->required();
  sweep->add_option("--mem-sizes", mem_sizes, "Comma-separated memory sizes")
      ->required()
      ->delimiter(',');
  sweep->add_option("--jobs", jobs, "Parallel cells")->check(CLI::PositiveNumber);

  GradcheckOptions grad;
  double tol = 0.0;
  auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference gradient checks");
  gradcheck->add_option("--tol", tol, "Relative-error tolerance for both suites");
  gradcheck->add_option("--cases", grad.cases, "Random cases per suite");

  BufferSimOptions sim;
  std::string policy = "reservoir";
  auto* buffer_sim = app.add_subcommand("buffer-sim", "Monte-Carlo memory statistics");
  buffer_sim->add_option("--trials", sim.trials, "Independent streams");
  buffer_sim->add_option("--stream-len", sim.stream_len, "Items per stream");
  buffer_sim->add_option("--mem-sz", sim.mem_sz, "Memory capacity");
  buffer_sim->add_option("--policy", policy, "reservoir, crs_s1 or crs_s2");
  buffer_sim->add_option("--seed", sim.seed, "Random seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (*run || *sweep) {
      RunConfig cfg;
      try {
        cfg = load_run_config(config_path);
      } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return kExitConfig;
      }
      return *run ? cmd_run(cfg, jobs, std::cout) : cmd_sweep(cfg, mem_sizes, jobs, std::cout);
    }
    if (*gradcheck) {
      if (tol > 0.0) grad.backprop_tol = grad.principal_tol = tol;
      return cmd_gradcheck(grad, std::cout);
    }
    try {
      sim.policy = parse_storage_policy(policy);
    } catch (const InvalidInput& e) {
      std::cerr << "config error: " << e.what() << '\n';
      return kExitConfig;
    }
    return cmd_buffer_sim(sim, std::cout);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitInternal;
  }
}
