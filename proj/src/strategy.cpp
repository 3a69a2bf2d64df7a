#include "replay/strategy.hpp"

#include <algorithm>
#include <numeric>
#include <stdexcept>

#include "replay/error.hpp"

namespace replay {
namespace {

std::vector<Example> gather(const Buffer& buf, std::span<const std::size_t> indices) {
  std::vector<Example> out;
  out.reserve(indices.size());
  for (auto i : indices) out.push_back(buf.slot(i).example);
  return out;
}

bool ends_with(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

// Replay gradients for the principal-direction combiner. With grouping on, each
// group's mean gradient is the batch gradient of its chunk, so the per-example
// passes are skipped.
std::vector<ParamVector> replay_gradients(const MlpModel& model, const std::vector<Example>& replay,
                                          int groups) {
  const auto k = static_cast<int>(replay.size());
  if (groups <= 0 || groups >= k) return per_example_grads(model, replay);
  std::vector<ParamVector> out;
  const int base = k / groups, extra = k % groups;
  std::size_t start = 0;
  for (int gi = 0; gi < groups; ++gi) {
    const auto len = static_cast<std::size_t>(base + (gi < extra ? 1 : 0));
    out.push_back(loss_and_grad(model, std::span<const Example>(replay).subspan(start, len)).grad);
    start += len;
  }
  return out;
}

}  // namespace

void validate(const StrategyConfig& cfg) {
  if (cfg.replay_k < 1) throw InvalidInput("replay batch size K must be >= 1");
  if (cfg.retrieval == Retrieval::mir && cfg.mir_candidates < cfg.replay_k) {
    throw InvalidInput("mir_candidates must be >= K");
  }
  if (!(cfg.lr > 0.0)) throw InvalidInput("learning rate must be positive");
  if (cfg.mem_sz == 0) throw InvalidInput("memory size must be positive");
  if (cfg.stream_batch < 1) throw InvalidInput("stream_batch must be >= 1");
  if (cfg.n_classes < 2) throw InvalidInput("n_classes must be >= 2");
  validate(cfg.combiner);
}

StrategyConfig parse_strategy(const std::string& name, StoragePolicy crs) {
  StrategyConfig cfg;
  std::string base = name;
  if (ends_with(base, "-MIR")) {
    cfg.retrieval = Retrieval::mir;
    base.resize(base.size() - 4);
  }
  if (base == "ER") {
  } else if (base == "ER-P") {
    cfg.training = Training::pgd;
  } else if (base == "ER-C") {
    cfg.storage = crs;
  } else if (base == "ER-PC") {
    cfg.training = Training::pgd;
    cfg.storage = crs;
  } else {
    throw InvalidInput("unknown strategy '" + name + "'");
  }
  return cfg;
}

std::string strategy_name(const StrategyConfig& cfg) {
  std::string name = "ER";
  const bool p = cfg.training == Training::pgd;
  const bool c = cfg.storage != StoragePolicy::reservoir;
  if (p || c) name += "-";
  if (p) name += "P";
  if (c) name += "C";
  if (cfg.retrieval == Retrieval::mir) name += "-MIR";
  return name;
}

nlohmann::json to_json(const StepRecord& rec) {
  nlohmann::json replaced = nlohmann::json::array();
  for (const auto& r : rec.replaced) {
    replaced.push_back(r ? nlohmann::json(*r) : nlohmann::json(nullptr));
  }
  return {{"step", rec.step},          {"loss", rec.loss},
          {"g_norm", rec.g_norm},      {"w_norm", rec.w_norm},
          {"replaced", replaced},      {"trained_ids", rec.trained_ids},
          {"replayed_ids", rec.replayed_ids}};
}

Eigen::VectorXd interference_scores(const MlpModel& model, const ParamVector& g,
                                    std::span<const Example> candidates, double lr) {
  if (candidates.empty()) return {};
  const MlpModel virtual_model = apply_step(model, g, lr);
  return example_losses(virtual_model, candidates) - example_losses(model, candidates);
}

std::vector<std::size_t> mir_select(const MlpModel& model, const ParamVector& g,
                                    std::span<const Example> candidates, int k, double lr) {
  std::vector<std::size_t> order(candidates.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  if (k < 0 || static_cast<std::size_t>(k) >= candidates.size()) return order;
  const Eigen::VectorXd s = interference_scores(model, g, candidates, lr);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return s(static_cast<Eigen::Index>(a)) > s(static_cast<Eigen::Index>(b));
  });
  order.resize(static_cast<std::size_t>(k));
  return order;
}

StepRecord train_step(MlpModel& model, Buffer& buf, std::span<const Example> incoming,
                      const StrategyConfig& cfg, Rng& rng) {
  if (incoming.empty()) throw InvalidInput("train_step: no incoming examples");
  StepRecord rec;
  rec.step = buf.seen();
  for (const auto& ex : incoming) rec.trained_ids.push_back(ex.id);

  LossGrad lg = loss_and_grad(model, incoming);
  rec.loss = lg.loss;
  rec.g_norm = lg.grad.norm();

  std::vector<std::size_t> selected;
  if (!buf.empty()) {
    if (cfg.retrieval == Retrieval::mir) {
      const auto pool = buf.draw(static_cast<std::size_t>(cfg.mir_candidates), rng);
      const auto pool_examples = gather(buf, pool);
      for (auto i : mir_select(model, lg.grad, pool_examples, cfg.replay_k, cfg.lr)) {
        selected.push_back(pool[i]);
      }
    } else {
      selected = buf.draw(static_cast<std::size_t>(cfg.replay_k), rng);
    }
    buf.mark_selected(selected);
  }
  const std::vector<Example> replay = gather(buf, selected);
  for (const auto& ex : replay) rec.replayed_ids.push_back(ex.id);

  ParamVector w;
  if (replay.empty()) {
    w = lg.grad;
  } else if (cfg.training == Training::er) {
    w = er_combine(lg.grad, loss_and_grad(model, replay).grad);
  } else {
    w = pgd_combine(lg.grad, replay_gradients(model, replay, cfg.combiner.groups), cfg.combiner);
  }
  rec.w_norm = w.norm();

  const bool track_margins = cfg.storage != StoragePolicy::reservoir;
  Eigen::VectorXd in_before, rep_before;
  if (track_margins) {
    in_before = margins(model, incoming);
    rep_before = margins(model, replay);
  }
  model.step(w, cfg.lr);
  if (!model.params().allFinite()) {
    throw std::runtime_error("train_step: parameters became non-finite at step " +
                             std::to_string(rec.step));
  }
  Eigen::VectorXd in_after, rep_after;
  if (track_margins) {
    in_after = margins(model, incoming);
    rep_after = margins(model, replay);
    for (std::size_t i = 0; i < selected.size(); ++i) {
      const auto e = static_cast<Eigen::Index>(i);
      update_mi(buf.slot(selected[i]), rep_before(e), rep_after(e));
    }
  }

  for (std::size_t i = 0; i < incoming.size(); ++i) {
    const auto e = static_cast<Eigen::Index>(i);
    const double mi = track_margins ? in_after(e) - in_before(e) : 0.0;
    rec.replaced.push_back(buf.offer(incoming[i], rng, mi));
  }
  if (cfg.keep_directions) rec.direction = std::move(w);
  return rec;
}

RunResult run_stream(const TaskStream& stream, const StrategyConfig& cfg,
                     std::span<const std::vector<Example>> eval_sets, std::uint64_t seed,
                     const StepObserver& observer) {
  validate(cfg);
  if (eval_sets.empty()) throw InvalidInput("run_stream: no evaluation sets");
  int input_dim = 0;
  for (const auto& set : eval_sets) {
    if (!set.empty()) input_dim = static_cast<int>(set.front().features.size());
  }
  if (stream.size() > 0) input_dim = static_cast<int>(stream.examples().front().features.size());
  if (input_dim == 0) throw InvalidInput("run_stream: cannot infer input dimension");

  std::vector<int> sizes{input_dim};
  sizes.insert(sizes.end(), cfg.hidden.begin(), cfg.hidden.end());
  sizes.push_back(cfg.n_classes);

  Rng init_rng(derive_seed(seed, 1));
  Rng rng(derive_seed(seed, 2));
  MlpModel model = MlpModel::initialized(sizes, init_rng);
  Buffer buf(cfg.mem_sz, cfg.storage, cfg.c);

  RunResult result;
  auto evaluate = [&] {
    std::vector<double> row;
    row.reserve(eval_sets.size());
    for (const auto& set : eval_sets) row.push_back(accuracy(model, set));
    result.accuracy.push_back(std::move(row));
  };
  evaluate();

  // Block ends: every task boundary plus the end of the stream.
  std::vector<std::size_t> block_ends = stream.boundaries();
  if (stream.size() > 0) block_ends.push_back(stream.size());

  const auto examples = stream.examples();
  std::size_t start = 0;
  for (std::size_t end : block_ends) {
    for (std::size_t i = start; i < end;) {
      const std::size_t len = std::min<std::size_t>(static_cast<std::size_t>(cfg.stream_batch), end - i);
      StepRecord rec = train_step(model, buf, examples.subspan(i, len), cfg, rng);
      if (observer) observer(rec);
      result.steps.push_back(std::move(rec));
      i += len;
    }
    evaluate();
    start = end;
  }
  result.final_model = std::move(model);
  return result;
}

}  // namespace replay
