#include "replay/streams.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <string>

#include "replay/error.hpp"
#include "replay/rng.hpp"

namespace replay {
namespace {

constexpr std::uint32_t kImageMagic = 0x00000803;
constexpr std::uint32_t kLabelMagic = 0x00000801;

std::uint32_t read_be32(std::ifstream& in, const std::filesystem::path& path) {
  std::array<unsigned char, 4> b{};
  if (!in.read(reinterpret_cast<char*>(b.data()), 4)) {
    throw IoError("truncated IDX header in " + path.string());
  }
  return (std::uint32_t{b[0]} << 24) | (std::uint32_t{b[1]} << 16) | (std::uint32_t{b[2]} << 8) |
         std::uint32_t{b[3]};
}

void write_be32(std::ofstream& out, std::uint32_t v) {
  const std::array<char, 4> b{static_cast<char>(v >> 24), static_cast<char>(v >> 16),
                              static_cast<char>(v >> 8), static_cast<char>(v)};
  out.write(b.data(), 4);
}

std::ifstream open_in(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return in;
}

}  // namespace

TaskStream::TaskStream(std::vector<Example> examples, std::vector<int> task_ids, int n_tasks)
    : examples_(std::move(examples)), task_ids_(std::move(task_ids)), n_tasks_(n_tasks) {
  if (examples_.size() != task_ids_.size()) {
    throw InvalidInput("TaskStream: one task id per example required");
  }
}

std::vector<std::size_t> TaskStream::boundaries() const {
  std::vector<std::size_t> out;
  for (std::size_t i = 1; i < task_ids_.size(); ++i) {
    if (task_ids_[i] != task_ids_[i - 1]) out.push_back(i);
  }
  return out;
}

double average_accuracy(const AccuracyMatrix& m) {
  if (m.empty() || m.back().empty()) throw InvalidInput("average_accuracy: empty matrix");
  const auto& last = m.back();
  return std::accumulate(last.begin(), last.end(), 0.0) / static_cast<double>(last.size());
}

double forgetting(const AccuracyMatrix& m) {
  if (m.empty() || m.back().empty()) throw InvalidInput("forgetting: empty matrix");
  const std::size_t tasks = m.back().size();
  const std::size_t final_row = m.size() - 1;
  if (tasks < 2 || final_row < 2) return 0.0;
  double total = 0.0;
  for (std::size_t j = 0; j + 1 < tasks; ++j) {
    double best = m[1][j];
    for (std::size_t l = 2; l < final_row; ++l) best = std::max(best, m[l][j]);
    total += best - m[final_row][j];
  }
  return total / static_cast<double>(tasks - 1);
}

std::vector<Example> load_idx(const std::filesystem::path& images_path,
                              const std::filesystem::path& labels_path, int n_classes) {
  auto images = open_in(images_path);
  auto labels = open_in(labels_path);

  if (read_be32(images, images_path) != kImageMagic) {
    throw FormatError("bad image magic in " + images_path.string());
  }
  const std::uint32_t count = read_be32(images, images_path);
  const std::uint32_t rows = read_be32(images, images_path);
  const std::uint32_t cols = read_be32(images, images_path);

  if (read_be32(labels, labels_path) != kLabelMagic) {
    throw FormatError("bad label magic in " + labels_path.string());
  }
  const std::uint32_t label_count = read_be32(labels, labels_path);
  if (label_count != count) {
    throw FormatError("image count " + std::to_string(count) + " != label count " +
                      std::to_string(label_count));
  }

  const std::size_t dim = std::size_t{rows} * cols;
  std::vector<unsigned char> pixels(dim);
  std::vector<Example> out;
  out.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    if (!images.read(reinterpret_cast<char*>(pixels.data()), static_cast<std::streamsize>(dim))) {
      throw IoError("truncated image data in " + images_path.string());
    }
    char label = 0;
    if (!labels.get(label)) throw IoError("truncated label data in " + labels_path.string());
    const int y = static_cast<unsigned char>(label);
    if (y >= n_classes) {
      throw FormatError("label " + std::to_string(y) + " out of range for " +
                        std::to_string(n_classes) + " classes");
    }
    Example ex;
    ex.id = i;
    ex.label = y;
    ex.features.resize(static_cast<Eigen::Index>(dim));
    for (std::size_t p = 0; p < dim; ++p) {
      ex.features(static_cast<Eigen::Index>(p)) = pixels[p] / 255.0;
    }
    out.push_back(std::move(ex));
  }
  return out;
}

void write_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path,
               std::span<const Example> examples, IdxShape shape) {
  const auto dim = static_cast<Eigen::Index>(shape.rows) * shape.cols;
  std::ofstream images(images_path, std::ios::binary);
  std::ofstream labels(labels_path, std::ios::binary);
  if (!images || !labels) throw IoError("cannot open IDX output files");
  write_be32(images, kImageMagic);
  write_be32(images, static_cast<std::uint32_t>(examples.size()));
  write_be32(images, static_cast<std::uint32_t>(shape.rows));
  write_be32(images, static_cast<std::uint32_t>(shape.cols));
  write_be32(labels, kLabelMagic);
  write_be32(labels, static_cast<std::uint32_t>(examples.size()));
  for (const auto& ex : examples) {
    if (ex.features.size() != dim) throw InvalidInput("write_idx: feature length mismatch");
    if (ex.label < 0 || ex.label > 255) throw InvalidInput("write_idx: label not a byte");
    for (Eigen::Index p = 0; p < dim; ++p) {
      const double v = std::clamp(ex.features(p), 0.0, 1.0);
      images.put(static_cast<char>(static_cast<unsigned char>(std::lround(v * 255.0))));
    }
    labels.put(static_cast<char>(static_cast<unsigned char>(ex.label)));
  }
  if (!images || !labels) throw IoError("failed writing IDX output files");
}

TaskStream make_split_tasks(std::span<const Example> data, int n_tasks, int per_task,
                            std::uint64_t seed, int n_classes) {
  if (n_tasks < 1 || n_classes % n_tasks != 0) {
    throw InvalidInput("make_split_tasks: n_tasks must divide the class count");
  }
  if (per_task < 1) throw InvalidInput("make_split_tasks: per_task must be positive");
  const int per = n_classes / n_tasks;
  std::mt19937_64 rng(derive_seed(seed, 0x5911));
  std::vector<Example> examples;
  std::vector<int> task_ids;
  examples.reserve(static_cast<std::size_t>(n_tasks) * per_task);
  for (int k = 0; k < n_tasks; ++k) {
    std::vector<std::size_t> pool;
    for (std::size_t i = 0; i < data.size(); ++i) {
      if (data[i].label / per == k) pool.push_back(i);
    }
    if (pool.size() < static_cast<std::size_t>(per_task)) {
      throw InvalidInput("make_split_tasks: task " + std::to_string(k) + " has only " +
                         std::to_string(pool.size()) + " examples, " +
                         std::to_string(per_task) + " requested");
    }
    std::shuffle(pool.begin(), pool.end(), rng);
    for (int i = 0; i < per_task; ++i) {
      Example ex = data[pool[static_cast<std::size_t>(i)]];
      ex.id = static_cast<std::int64_t>(examples.size());
      examples.push_back(std::move(ex));
      task_ids.push_back(k);
    }
  }
  return {std::move(examples), std::move(task_ids), n_tasks};
}

std::vector<std::vector<Example>> split_test_sets(std::span<const Example> test, int n_tasks,
                                                  int cap, int n_classes) {
  if (n_tasks < 1 || n_classes % n_tasks != 0) {
    throw InvalidInput("split_test_sets: n_tasks must divide the class count");
  }
  const int per = n_classes / n_tasks;
  std::vector<std::vector<Example>> out(static_cast<std::size_t>(n_tasks));
  for (const auto& ex : test) {
    auto& set = out[static_cast<std::size_t>(ex.label / per)];
    if (static_cast<int>(set.size()) < cap) set.push_back(ex);
  }
  return out;
}

Example permute_features(const Example& ex, std::span<const int> permutation) {
  if (static_cast<Eigen::Index>(permutation.size()) != ex.features.size()) {
    throw InvalidInput("permute_features: permutation length mismatch");
  }
  Example out = ex;
  for (std::size_t p = 0; p < permutation.size(); ++p) {
    out.features(static_cast<Eigen::Index>(p)) = ex.features(permutation[p]);
  }
  return out;
}

PermutedStream make_permuted_tasks(std::span<const Example> data, int n_tasks, int per_task,
                                   std::uint64_t seed) {
  if (n_tasks < 1 || per_task < 1) throw InvalidInput("make_permuted_tasks: bad sizes");
  if (data.size() < static_cast<std::size_t>(per_task)) {
    throw InvalidInput("make_permuted_tasks: per_task exceeds available examples");
  }
  const auto dim = static_cast<int>(data.front().features.size());
  std::mt19937_64 rng(derive_seed(seed, 0x9e77));
  PermutedStream out;
  std::vector<Example> examples;
  std::vector<int> task_ids;
  for (int k = 0; k < n_tasks; ++k) {
    std::vector<int> perm(static_cast<std::size_t>(dim));
    std::iota(perm.begin(), perm.end(), 0);
    if (k > 0) std::shuffle(perm.begin(), perm.end(), rng);

    std::vector<std::size_t> pool(data.size());
    std::iota(pool.begin(), pool.end(), std::size_t{0});
    std::shuffle(pool.begin(), pool.end(), rng);
    for (int i = 0; i < per_task; ++i) {
      Example ex = permute_features(data[pool[static_cast<std::size_t>(i)]], perm);
      ex.id = static_cast<std::int64_t>(examples.size());
      examples.push_back(std::move(ex));
      task_ids.push_back(k);
    }
    out.permutations.push_back(std::move(perm));
  }
  out.stream = TaskStream(std::move(examples), std::move(task_ids), n_tasks);
  return out;
}

std::vector<std::vector<Example>> permuted_test_sets(std::span<const Example> test,
                                                     const std::vector<std::vector<int>>& perms,
                                                     int cap) {
  std::vector<std::vector<Example>> out;
  const auto take = std::min(test.size(), static_cast<std::size_t>(std::max(cap, 0)));
  for (const auto& perm : perms) {
    std::vector<Example> set;
    set.reserve(take);
    for (std::size_t i = 0; i < take; ++i) set.push_back(permute_features(test[i], perm));
    out.push_back(std::move(set));
  }
  return out;
}

SyntheticData synthetic_stream(const SyntheticConfig& cfg) {
  if (cfg.dims < 1 || cfg.n_classes < 2 || cfg.n_tasks < 1 || cfg.per_task < 1 ||
      cfg.test_per_task < 0 || cfg.spread < 0.0) {
    throw InvalidInput("synthetic_stream: bad configuration");
  }
  std::mt19937_64 rng(derive_seed(cfg.seed, 0x5e7));
  std::normal_distribution<double> unit(0.0, 1.0);

  auto random_vec = [&](double scale) {
    Eigen::VectorXd v(cfg.dims);
    for (int d = 0; d < cfg.dims; ++d) v(d) = scale * unit(rng);
    return v;
  };
  std::vector<Eigen::VectorXd> class_means;
  for (int c = 0; c < cfg.n_classes; ++c) class_means.push_back(random_vec(cfg.separation));
  std::vector<Eigen::VectorXd> shifts;
  for (int k = 0; k < cfg.n_tasks; ++k) {
    shifts.push_back(k == 0 ? Eigen::VectorXd::Zero(cfg.dims) : random_vec(cfg.task_shift));
  }

  auto sample = [&](int task, int label) {
    Example ex;
    ex.label = label;
    ex.features = class_means[static_cast<std::size_t>(label)] +
                  shifts[static_cast<std::size_t>(task)] + random_vec(cfg.spread);
    return ex;
  };

  SyntheticData out;
  std::vector<Example> examples;
  std::vector<int> task_ids;
  std::uniform_int_distribution<int> pick_class(0, cfg.n_classes - 1);
  for (int k = 0; k < cfg.n_tasks; ++k) {
    for (int i = 0; i < cfg.per_task; ++i) {
      Example ex = sample(k, pick_class(rng));
      ex.id = static_cast<std::int64_t>(examples.size());
      examples.push_back(std::move(ex));
      task_ids.push_back(k);
    }
    std::vector<Example> test;
    for (int i = 0; i < cfg.test_per_task; ++i) {
      Example ex = sample(k, i % cfg.n_classes);
      ex.id = i;
      test.push_back(std::move(ex));
    }
    out.test_sets.push_back(std::move(test));
  }
  out.stream = TaskStream(std::move(examples), std::move(task_ids), cfg.n_tasks);
  return out;
}

}  // namespace replay
