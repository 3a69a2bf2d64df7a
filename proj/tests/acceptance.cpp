// Acceptance suite: one PASS/FAIL line per criterion.

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <iomanip>
#include <iostream>
#include <map>
#include <numeric>
#include <random>
#include <sstream>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include "replay/combiner.hpp"
#include "replay/harness.hpp"
#include "replay/strategy.hpp"

using namespace replay;
using Clock = std::chrono::steady_clock;

namespace {

// MNIST protocol shared by criteria 5-7.
constexpr int kTasks = 5;
constexpr int kPerTask = 1000;
constexpr int kMemPerClass = 50;
constexpr int kSeeds = 10;

RunConfig mnist_config(DatasetKind kind, std::vector<std::string> strategies) {
  nlohmann::json doc = {{"dataset", to_string(kind)},
                        {"strategies", strategies},
                        {"n_tasks", kTasks},
                        {"per_task", kPerTask},
                        {"mem_per_class", kMemPerClass},
                        {"replay_k", 10},
                        {"stream_batch", 10},
                        {"lr", 0.05},
                        {"lambda_grid", {1.0, 2.0, 3.0, 4.0}},
                        {"epsilon", 0.1},
                        {"groups", 2},
                        {"crs_variant", "s2"},
                        {"c", 1.0}};
  std::vector<std::uint64_t> seeds(kSeeds);
  std::iota(seeds.begin(), seeds.end(), 0);
  doc["seeds"] = seeds;
  return parse_run_config(doc);
}

struct Line {
  int id;
  std::string name;
  bool pass;
  std::string detail;
  double seconds;
};

void report(const Line& l) {
  std::cout << (l.pass ? "PASS" : "FAIL") << " criterion " << l.id << " (" << l.name << "): "
            << l.detail << " [" << std::fixed << std::setprecision(1) << l.seconds << "s]"
            << std::endl;
}

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(double v, int digits = 2) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(digits) << v;
  return s.str();
}

std::string sci(double v) {
  std::ostringstream s;
  s << std::scientific << std::setprecision(2) << v;
  return s.str();
}

struct Summary {
  double acc = 0, fgt = 0;
};

std::map<std::string, Summary> summarize(const std::vector<CellResult>& cells) {
  std::map<std::string, Summary> out;
  std::map<std::string, int> n;
  for (const auto& c : cells) {
    out[c.strategy].acc += 100 * c.avg_acc;
    out[c.strategy].fgt += 100 * c.forgetting;
    ++n[c.strategy];
  }
  for (auto& [k, s] : out) {
    s.acc /= n[k];
    s.fgt /= n[k];
  }
  return out;
}

Line gradients() {
  const auto t0 = Clock::now();
  std::ostringstream out;
  GradcheckOptions opts;
  opts.cases = 100;
  const bool ok = cmd_gradcheck(opts, out) == kExitOk;
  const double s = seconds_since(t0);
  std::string detail = out.str();
  std::replace(detail.begin(), detail.end(), '\n', ';');
  return {1, "gradient correctness", ok && s < 10, detail, s};
}

Line orthogonality() {
  const auto t0 = Clock::now();
  std::mt19937_64 gen(2024);
  std::normal_distribution<double> normal;
  std::uniform_real_distribution<double> log_scale(-3, 2);
  double worst = 0;
  int count = 0;
  for (Eigen::Index dim : {2, 10, 200}) {
    for (int trial = 0; trial < 1000; ++trial, ++count) {
      const int k = 1 + trial % 10;
      std::vector<ParamVector> grads;
      for (int i = 0; i < k; ++i) {
        const double scale = std::exp(log_scale(gen));
        ParamVector g(dim);
        for (Eigen::Index j = 0; j < dim; ++j) g[j] = scale * normal(gen);
        grads.push_back(g);
      }
      ParamVector w(dim);
      const double scale = std::exp(log_scale(gen));
      for (Eigen::Index j = 0; j < dim; ++j) w[j] = scale * normal(gen);
      const ParamVector d = pgd_grad_f(w, grads, 1e-8);
      worst = std::max(worst, std::abs(d.dot(w)) / (d.norm() * w.norm()));
    }
  }
  const double s = seconds_since(t0);
  return {2, "orthogonality", worst < 1e-10 && s < 5,
          "instances=" + std::to_string(count) + " max_cos=" + sci(worst), s};
}

Line er_equivalence() {
  const auto t0 = Clock::now();
  SyntheticConfig syn;
  syn.per_task = 250;
  syn.seed = 3;
  const auto data = synthetic_stream(syn);
  StrategyConfig cfg = parse_strategy("ER");
  cfg.hidden = {32, 32};
  cfg.n_classes = syn.n_classes;
  cfg.mem_sz = 50;
  cfg.keep_directions = true;
  Rng init(1), rng(2);
  MlpModel model = MlpModel::initialized({syn.dims, 32, 32, syn.n_classes}, init);
  Buffer buf(cfg.mem_sz, cfg.storage);
  int steps = 0, equal = 0;
  for (const auto& ex : data.stream.examples()) {
    const MlpModel before = model;
    const Buffer buf_before = buf;
    const std::span<const Example> incoming(&ex, 1);
    const StepRecord rec = train_step(model, buf, incoming, cfg, rng);
    const ParamVector g = loss_and_grad(before, incoming).grad;
    ParamVector expected = g;
    if (!rec.replayed_ids.empty()) {
      std::vector<Example> replay;
      for (auto id : rec.replayed_ids) {
        for (const auto& s : buf_before.slots()) {
          if (s.example.id == id) replay.push_back(s.example);
        }
      }
      expected = er_combine(g, loss_and_grad(before, replay).grad);
    }
    ++steps;
    if (rec.direction == expected) ++equal;
  }
  return {3, "ER analytic equivalence", steps == 500 && equal == steps,
          std::to_string(equal) + "/" + std::to_string(steps) + " steps bitwise equal",
          seconds_since(t0)};
}

Line reservoir_stats() {
  const auto t0 = Clock::now();
  BufferSimOptions opts;
  opts.trials = 50000;
  opts.stream_len = 10000;
  opts.mem_sz = 100;
  opts.policy = StoragePolicy::reservoir;
  const auto res = buffer_sim(opts);
  opts.trials = 1;
  opts.stream_len = 1;
  opts.policy = StoragePolicy::crs_s2;
  const auto s2 = buffer_sim(opts);
  const auto& inc = res.stats["inclusion"];
  const auto& vic = s2.stats["victim"];
  const bool victim_ok = vic["pass"].get<bool>() && vic["draws"].get<std::int64_t>() >= 100000;
  const double s = seconds_since(t0);
  std::string detail = "inclusion: mean=" + fmt(inc["mean"].get<double>(), 5) +
                       " expected=" + fmt(inc["expected"].get<double>(), 5) +
                       " max|z|=" + fmt(inc["max_abs_z"].get<double>()) +
                       " >3sigma=" + std::to_string(inc["exceed_3sigma"].get<int>()) + "/" +
                       std::to_string(inc["points"].get<int>()) + " (allowed " +
                       std::to_string(inc["allowed_exceed"].get<int>()) + ")" +
                       "; s2 max|freq-p|=" + fmt(vic["max_abs_dev"].get<double>(), 4) + " over " +
                       std::to_string(vic["draws"].get<std::int64_t>()) + " draws";
  return {4, "reservoir statistics", res.pass && victim_ok && s < 60, detail, s};
}

Line mnist_split(const DataSource& data) {
  const auto t0 = Clock::now();
  const RunConfig cfg = mnist_config(DatasetKind::mnist_split, {"ER", "ER-PC"});
  const auto sum = summarize(run_grid(cfg, data, 1));
  const auto er = sum.at("ER"), pc = sum.at("ER-PC");
  const bool ok = er.acc >= 73 && er.acc <= 87 && pc.acc >= er.acc + 1.5 && pc.fgt < er.fgt;
  const double s = seconds_since(t0);
  return {5, "MNIST-S ablation", ok && s < 300,
          "ER acc=" + fmt(er.acc) + " fgt=" + fmt(er.fgt) + "; ER-PC acc=" + fmt(pc.acc) +
              " fgt=" + fmt(pc.fgt) + "; need ER in [73,87], ER-PC >= ER+1.5, lower forgetting",
          s};
}

Line mnist_permuted(const DataSource& data) {
  const auto t0 = Clock::now();
  const RunConfig cfg = mnist_config(DatasetKind::mnist_perm, {"ER", "ER-PC"});
  const auto sum = summarize(run_grid(cfg, data, 1));
  const auto er = sum.at("ER"), pc = sum.at("ER-PC");
  const bool ok = er.acc >= 73 && er.acc <= 85 && pc.acc >= er.acc;
  const double s = seconds_since(t0);
  return {6, "MNIST-P ablation", ok && s < 600,
          "ER acc=" + fmt(er.acc) + "; ER-PC acc=" + fmt(pc.acc) + "; need ER in [73,85], ER-PC >= ER",
          s};
}

Line memory_monotonicity(const DataSource& data) {
  const auto t0 = Clock::now();
  RunConfig cfg = mnist_config(DatasetKind::mnist_perm, {"ER-PC-MIR"});
  cfg.mem_per_class.reset();
  std::vector<double> acc;
  for (std::size_t m : {100, 250, 500, 1000}) {
    cfg.strategy.mem_sz = m;
    acc.push_back(summarize(run_grid(cfg, data, 1)).at("ER-PC-MIR").acc);
  }
  int inversions = 0;
  bool small = true;
  for (std::size_t i = 1; i < acc.size(); ++i) {
    if (acc[i] < acc[i - 1]) {
      ++inversions;
      small = small && acc[i - 1] - acc[i] <= 0.5;
    }
  }
  const double s = seconds_since(t0);
  std::string detail = "acc by mem {100,250,500,1000} =";
  for (double a : acc) detail += " " + fmt(a);
  detail += "; inversions=" + std::to_string(inversions) + " (" + std::to_string(kSeeds) + " seeds)";
  return {7, "memory-size monotonicity", inversions <= 1 && small && s < 1800, detail, s};
}

Line contracts() {
  const auto t0 = Clock::now();
  SyntheticConfig syn;
  syn.n_tasks = 3;
  syn.per_task = 200;
  syn.seed = 8;
  const auto data = synthetic_stream(syn);
  bool ok = true;
  std::string detail;
  for (const std::string name : {"ER", "ER-P", "ER-C", "ER-PC", "ER-PC-MIR"}) {
    StrategyConfig cfg = parse_strategy(name);
    cfg.hidden = {16};
    cfg.n_classes = syn.n_classes;
    cfg.mem_sz = 40;
    cfg.stream_batch = 3;
    std::map<std::int64_t, int> trained;
    const RunResult a = run_stream(data.stream, cfg, data.test_sets, 5, [&](const StepRecord& rec) {
      for (auto id : rec.trained_ids) ++trained[id];
    });
    bool once = trained.size() == data.stream.size();
    for (const auto& [id, n] : trained) once = once && n == 1;

    // Same examples, scrambled task-id values with the same boundaries.
    std::vector<int> other_ids;
    for (std::size_t i = 0; i < data.stream.size(); ++i) {
      other_ids.push_back(100 - 7 * data.stream.task_id(i));
    }
    const auto ex = data.stream.examples();
    const TaskStream relabeled(std::vector<Example>(ex.begin(), ex.end()), other_ids, syn.n_tasks);
    const RunResult b = run_stream(relabeled, cfg, data.test_sets, 5);
    const bool blind = a.final_model.params() == b.final_model.params();
    ok = ok && once && blind;
    detail += name + ":" + (once ? "once" : "REPEAT") + "," + (blind ? "task-blind" : "TASK-DEPENDENT") + " ";
  }
  return {8, "single-pass and task-free", ok, detail, seconds_since(t0)};
}

}  // namespace

int main(int argc, char** argv) {
#if defined(__GLIBC__)
  mallopt(M_MMAP_THRESHOLD, 8 << 20);
#endif
  // Optional argument: comma-free list of criterion numbers to run, e.g. "1234".
  const std::string only = argc > 1 ? argv[1] : "12345678";
  auto wanted = [&](int id) { return only.find(static_cast<char>('0' + id)) != std::string::npos; };

  std::vector<Line> lines;
  auto run = [&](int id, auto&& fn) {
    if (!wanted(id)) return;
    try {
      lines.push_back(fn());
    } catch (const std::exception& e) {
      lines.push_back({id, "error", false, e.what(), 0});
    }
    report(lines.back());
  };

  run(1, gradients);
  run(2, orthogonality);
  run(3, er_equivalence);
  run(4, reservoir_stats);

  if (wanted(5) || wanted(6) || wanted(7)) {
    DataSource data;
    std::string load_error;
    try {
      const char* dir = std::getenv("REPLAY_DATA_DIR");
      if (dir == nullptr) throw std::runtime_error("REPLAY_DATA_DIR is not set");
      RunConfig cfg = mnist_config(DatasetKind::mnist_split, {"ER"});
      cfg.data_dir = dir;
      data = load_data(cfg);
    } catch (const std::exception& e) {
      load_error = e.what();
    }
    auto with_data = [&](int id, const char* name, auto&& fn) {
      if (!load_error.empty()) {
        lines.push_back({id, name, false, "no MNIST data: " + load_error, 0});
        report(lines.back());
        return;
      }
      run(id, [&] { return fn(data); });
    };
    if (wanted(5)) with_data(5, "MNIST-S ablation", mnist_split);
    if (wanted(6)) with_data(6, "MNIST-P ablation", mnist_permuted);
    if (wanted(7)) with_data(7, "memory-size monotonicity", memory_monotonicity);
  }
  run(8, contracts);

  int failed = 0;
  for (const auto& l : lines) failed += l.pass ? 0 : 1;
  std::cout << (lines.size() - failed) << "/" << lines.size() << " criteria passed" << std::endl;
  return failed == 0 ? 0 : 1;
}
