#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "replay/strategy.hpp"
#include "replay/streams.hpp"

namespace replay {

// Exit codes of the CLI commands.
enum ExitCode : int { kExitOk = 0, kExitInternal = 1, kExitConfig = 2, kExitData = 3 };

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

enum class DatasetKind { mnist_split, mnist_perm, synthetic };

std::string to_string(DatasetKind kind);

struct RunConfig {
  DatasetKind dataset = DatasetKind::synthetic;
  std::filesystem::path data_dir;  // IDX directory for the MNIST datasets
  std::vector<std::string> strategies = {"ER"};
  StoragePolicy crs_variant = StoragePolicy::crs_s1;
  std::optional<int> mem_per_class;  // takes precedence over strategy.mem_sz
  std::vector<std::uint64_t> seeds = {0};
  std::filesystem::path output_dir = "results";
  int n_tasks = 5;
  int per_task = 1000;
  int test_cap = 1000;
  // Template for every cell; training/storage/retrieval come from the strategy name.
  StrategyConfig strategy;
  // When non-empty, lambda of PGD cells is picked from this grid on a validation split.
  std::vector<double> lambda_grid;
  bool step_log = false;
  SyntheticConfig synthetic;
};

// Flat JSON document -> RunConfig. Unknown keys and bad values raise ConfigError.
// A missing data_dir falls back to $REPLAY_DATA_DIR.
RunConfig parse_run_config(const nlohmann::json& doc);
RunConfig load_run_config(const std::filesystem::path& path);

// Fully resolved config, including defaulted hyperparameters.
nlohmann::json to_json(const RunConfig& cfg);

std::size_t resolved_mem_sz(const RunConfig& cfg);

struct CellResult {
  std::string dataset;
  std::string strategy;
  std::size_t mem_sz = 0;
  std::uint64_t seed = 0;
  double lambda = 0.0;
  AccuracyMatrix accuracy;
  double avg_acc = 0.0;
  double forgetting = 0.0;
};

// Train streams and per-task test sets for one seed.
struct Benchmark {
  TaskStream stream;
  std::vector<std::vector<Example>> test_sets;
};

// Source data shared read-only by every cell.
struct DataSource {
  std::vector<Example> train;
  std::vector<Example> test;
};

DataSource load_data(const RunConfig& cfg);
Benchmark make_benchmark(const RunConfig& cfg, const DataSource& data, std::uint64_t seed);

// Runs every (strategy, seed) cell, up to `jobs` in parallel. Cells come back
// in (strategy, seed) order regardless of scheduling.
std::vector<CellResult> run_grid(const RunConfig& cfg, const DataSource& data, int jobs);

// Aggregate table: one row per (dataset, strategy, mem_sz); accuracies and
// forgetting in percent, std is the sample standard deviation over seeds.
std::string aggregate_csv(const std::vector<CellResult>& cells);

int cmd_run(const RunConfig& cfg, int jobs, std::ostream& log);
int cmd_sweep(const RunConfig& cfg, const std::vector<std::size_t>& mem_sizes, int jobs,
              std::ostream& log);

struct GradcheckOptions {
  double backprop_tol = 1e-5;
  double principal_tol = 1e-6;
  int cases = 100;
  std::uint64_t seed = 7;
};

// Finite-difference checks of backprop and of the principal-direction gradient.
int cmd_gradcheck(const GradcheckOptions& opts, std::ostream& out);

struct BufferSimOptions {
  std::int64_t trials = 50000;
  std::int64_t stream_len = 10000;
  std::size_t mem_sz = 100;
  StoragePolicy policy = StoragePolicy::reservoir;
  std::uint64_t seed = 11;
};

struct BufferSimReport {
  nlohmann::json stats;
  bool pass = true;
};

// Monte-Carlo inclusion / admission / victim statistics with 3-sigma verdicts.
BufferSimReport buffer_sim(const BufferSimOptions& opts);
int cmd_buffer_sim(const BufferSimOptions& opts, std::ostream& out);

}  // namespace replay
