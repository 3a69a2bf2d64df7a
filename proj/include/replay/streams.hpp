#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "replay/mlp.hpp"

namespace replay {

// Ordered stream of examples with task ids that only the evaluator reads.
// Task ids come in contiguous blocks.
class TaskStream {
 public:
  TaskStream() = default;
  TaskStream(std::vector<Example> examples, std::vector<int> task_ids, int n_tasks);

  std::span<const Example> examples() const { return examples_; }
  std::size_t size() const { return examples_.size(); }
  int n_tasks() const { return n_tasks_; }

  // Evaluator-side accessors.
  int task_id(std::size_t i) const { return task_ids_.at(i); }
  const std::vector<int>& task_ids() const { return task_ids_; }
  // Step indices i > 0 where task_id(i) != task_id(i - 1).
  std::vector<std::size_t> boundaries() const;

 private:
  std::vector<Example> examples_;
  std::vector<int> task_ids_;
  int n_tasks_ = 0;
};

// a[l][j]: accuracy on task j's test set after training block l (row 0 is the initial model).
using AccuracyMatrix = std::vector<std::vector<double>>;

// Mean of the final row.
double average_accuracy(const AccuracyMatrix& m);

// Mean over all but the last task of (best accuracy after any earlier training
// block) - (final accuracy).
double forgetting(const AccuracyMatrix& m);

struct IdxShape {
  int rows = 28;
  int cols = 28;
};

// Reads an IDX image/label pair (magics 0x803 / 0x801, big-endian), scaling bytes to [0, 1].
std::vector<Example> load_idx(const std::filesystem::path& images_path,
                              const std::filesystem::path& labels_path, int n_classes = 10);

// Writes examples back as an IDX pair; features are rounded to bytes.
void write_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path,
               std::span<const Example> examples, IdxShape shape);

// Task k holds classes [k*c, (k+1)*c) with c = n_classes / n_tasks; per_task
// examples drawn without replacement per task. Labels keep the global space.
TaskStream make_split_tasks(std::span<const Example> data, int n_tasks, int per_task,
                            std::uint64_t seed, int n_classes = 10);

// Test set of each split task, in file order, capped at `cap` examples.
std::vector<std::vector<Example>> split_test_sets(std::span<const Example> test, int n_tasks,
                                                  int cap, int n_classes = 10);

struct PermutedStream {
  TaskStream stream;
  std::vector<std::vector<int>> permutations;  // permutations[0] is the identity
};

// Task k permutes feature indices with a fixed random permutation (identity for task 0).
PermutedStream make_permuted_tasks(std::span<const Example> data, int n_tasks, int per_task,
                                   std::uint64_t seed);

Example permute_features(const Example& ex, std::span<const int> permutation);

std::vector<std::vector<Example>> permuted_test_sets(std::span<const Example> test,
                                                     const std::vector<std::vector<int>>& perms,
                                                     int cap);

struct SyntheticConfig {
  int dims = 10;
  int n_classes = 4;
  int n_tasks = 2;
  int per_task = 500;
  int test_per_task = 200;
  double spread = 1.0;       // per-coordinate std of each cluster
  double separation = 3.0;   // scale of class means
  double task_shift = 3.0;   // scale of the per-task mean shift
  std::uint64_t seed = 0;
};

struct SyntheticData {
  TaskStream stream;
  std::vector<std::vector<Example>> test_sets;
};

// Gaussian class clusters whose means move by a task-specific offset.
SyntheticData synthetic_stream(const SyntheticConfig& cfg);

}  // namespace replay
