#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "replay/combiner.hpp"
#include "replay/memory.hpp"
#include "replay/mlp.hpp"
#include "replay/rng.hpp"
#include "replay/streams.hpp"

namespace replay {

enum class Training { er, pgd };
enum class Retrieval { uniform, mir };

struct StrategyConfig {
  Training training = Training::er;
  StoragePolicy storage = StoragePolicy::reservoir;
  Retrieval retrieval = Retrieval::uniform;
  int replay_k = 10;
  int mir_candidates = 50;
  double lr = 0.05;
  CombinerConfig combiner;
  double c = 1.0;
  std::size_t mem_sz = 500;
  int stream_batch = 1;
  std::vector<int> hidden = {100, 100};
  int n_classes = 10;
  // Keep each step's update direction in its StepRecord.
  bool keep_directions = false;
};

void validate(const StrategyConfig& cfg);

// "ER", "ER-P", "ER-C", "ER-PC", optionally suffixed "-MIR". The -C variants use
// `crs` for the eviction rule (s1 or s2).
StrategyConfig parse_strategy(const std::string& name, StoragePolicy crs = StoragePolicy::crs_s1);
std::string strategy_name(const StrategyConfig& cfg);

struct StepRecord {
  std::int64_t step = 0;
  double loss = 0.0;
  double g_norm = 0.0;
  double w_norm = 0.0;
  std::vector<std::optional<std::size_t>> replaced;  // one per incoming example
  std::vector<std::int64_t> trained_ids;
  std::vector<std::int64_t> replayed_ids;
  ParamVector direction;  // empty unless keep_directions
};

nlohmann::json to_json(const StepRecord& rec);

// One online step on the incoming examples: retrieve from memory, combine
// gradients, update the model, refresh margin increments, then offer the
// incoming examples to memory.
StepRecord train_step(MlpModel& model, Buffer& buf, std::span<const Example> incoming,
                      const StrategyConfig& cfg, Rng& rng);

// Loss increase of each candidate under a virtual step model - lr * g.
Eigen::VectorXd interference_scores(const MlpModel& model, const ParamVector& g,
                                    std::span<const Example> candidates, double lr);

// Indices of the K candidates most interfered by the virtual step, highest first
// (ties keep candidate order). Returns all indices when there are fewer than K.
std::vector<std::size_t> mir_select(const MlpModel& model, const ParamVector& g,
                                    std::span<const Example> candidates, int k, double lr);

struct RunResult {
  AccuracyMatrix accuracy;
  std::vector<StepRecord> steps;
  MlpModel final_model{std::vector<int>{1, 1}};
};

using StepObserver = std::function<void(const StepRecord&)>;

// Single pass over the stream. The learner only sees examples; task ids are
// used here solely to place evaluations at task boundaries.
RunResult run_stream(const TaskStream& stream, const StrategyConfig& cfg,
                     std::span<const std::vector<Example>> eval_sets, std::uint64_t seed,
                     const StepObserver& observer = {});

}  // namespace replay
