#include <algorithm>
#include <cmath>
#include <ostream>

#include "replay/combiner.hpp"
#include "replay/harness.hpp"
#include "replay/memory.hpp"
#include "replay/mlp.hpp"

namespace replay {
namespace {

constexpr double kNominalExceedRate = 0.0027;  // two-sided 3-sigma tail

double relative_error(const ParamVector& analytic, const ParamVector& numeric) {
  const double scale = std::max({analytic.norm(), numeric.norm(), 1e-12});
  return (analytic - numeric).norm() / scale;
}

ParamVector random_vector(Eigen::Index n, Rng& rng, double scale = 1.0) {
  std::normal_distribution<double> normal(0.0, scale);
  ParamVector v(n);
  for (Eigen::Index i = 0; i < n; ++i) v[i] = normal(rng.engine());
  return v;
}

double backprop_case(Rng& rng) {
  const int in = 2 + static_cast<int>(rng.index(5));
  const int hidden = 2 + static_cast<int>(rng.index(5));
  const int classes = 2 + static_cast<int>(rng.index(4));
  const std::vector<int> sizes = {in, hidden, hidden, classes};
  MlpModel model = MlpModel::initialized(sizes, rng);
  model = MlpModel::from_params(sizes, model.params() + random_vector(model.param_count(), rng, 0.1));
  std::vector<Example> batch;
  const int b = 1 + static_cast<int>(rng.index(4));
  for (int i = 0; i < b; ++i) {
    batch.push_back({i, random_vector(in, rng), static_cast<int>(rng.index(classes))});
  }
  const ParamVector analytic = loss_and_grad(model, batch).grad;
  ParamVector numeric(model.param_count());
  const double h = 1e-6;
  for (Eigen::Index p = 0; p < model.param_count(); ++p) {
    ParamVector plus = model.params(), minus = model.params();
    plus[p] += h;
    minus[p] -= h;
    numeric[p] = (mean_loss(MlpModel::from_params(sizes, plus), batch) -
                  mean_loss(MlpModel::from_params(sizes, minus), batch)) / (2 * h);
  }
  return relative_error(analytic, numeric);
}

std::vector<ParamVector> random_grads(Eigen::Index dim, Rng& rng) {
  const int k = 1 + static_cast<int>(rng.index(10));
  std::vector<ParamVector> grads;
  for (int i = 0; i < k; ++i) {
    grads.push_back(random_vector(dim, rng, std::exp(2.0 * rng.uniform() - 1.0)));
  }
  return grads;
}

double principal_case(Rng& rng, double epsilon) {
  const Eigen::Index dim = 10;
  const auto grads = random_grads(dim, rng);
  const ParamVector w = random_vector(dim, rng);
  const ParamVector analytic = pgd_grad_f(w, grads, epsilon);
  ParamVector numeric(dim);
  const double h = 1e-5;
  for (Eigen::Index p = 0; p < dim; ++p) {
    ParamVector plus = w, minus = w;
    plus[p] += h;
    minus[p] -= h;
    numeric[p] = (principal_objective(plus, grads, epsilon) -
                  principal_objective(minus, grads, epsilon)) / (2 * h);
  }
  return relative_error(analytic, numeric);
}

// Largest per-point z-score and how many points exceed 3 sigma, for observed
// success counts against expected probabilities.
nlohmann::json binomial_verdict(const std::vector<std::int64_t>& counts,
                                const std::vector<double>& expected, std::int64_t trials,
                                bool& pass) {
  double max_z = 0.0;
  std::int64_t exceed = 0;
  for (std::size_t i = 0; i < counts.size(); ++i) {
    const double p = expected[i];
    const double sigma = std::sqrt(p * (1 - p) / static_cast<double>(trials));
    const double observed = static_cast<double>(counts[i]) / static_cast<double>(trials);
    const double z = sigma > 0 ? std::abs(observed - p) / sigma : (observed == p ? 0.0 : INFINITY);
    max_z = std::max(max_z, z);
    if (z > 3.0) ++exceed;
  }
  // Under the null each point exceeds 3 sigma with probability ~0.27%; allow the
  // count to sit within 3 sigma of that rate.
  const double n = static_cast<double>(counts.size());
  const double mean_exceed = n * kNominalExceedRate;
  const auto allowed = static_cast<std::int64_t>(
      std::ceil(mean_exceed + 3.0 * std::sqrt(mean_exceed * (1 - kNominalExceedRate))));
  const bool ok = exceed <= allowed;
  pass = pass && ok;
  return {{"points", counts.size()},
          {"max_abs_z", max_z},
          {"exceed_3sigma", exceed},
          {"allowed_exceed", allowed},
          {"pass", ok}};
}

std::vector<double> frozen_scores(std::size_t n) {
  std::vector<double> s(n);
  for (std::size_t i = 0; i < n; ++i) s[i] = std::sin(static_cast<double>(i) * 1.7) + 0.3;
  return s;
}

}  // namespace

int cmd_gradcheck(const GradcheckOptions& opts, std::ostream& out) {
  Rng rng(opts.seed);
  double worst_backprop = 0.0, worst_principal = 0.0;
  for (int i = 0; i < opts.cases; ++i) {
    worst_backprop = std::max(worst_backprop, backprop_case(rng));
    worst_principal = std::max(worst_principal, principal_case(rng, 1e-8));
  }
  const bool backprop_ok = worst_backprop < opts.backprop_tol;
  const bool principal_ok = worst_principal < opts.principal_tol;
  out << "backprop: cases=" << opts.cases << " max_rel_err=" << worst_backprop
      << " tol=" << opts.backprop_tol << (backprop_ok ? " PASS" : " FAIL") << '\n';
  out << "principal: cases=" << opts.cases << " max_rel_err=" << worst_principal
      << " tol=" << opts.principal_tol << (principal_ok ? " PASS" : " FAIL") << '\n';
  return backprop_ok && principal_ok ? kExitOk : kExitInternal;
}

BufferSimReport buffer_sim(const BufferSimOptions& opts) {
  BufferSimReport report;
  report.stats = {{"policy", to_string(opts.policy)},
                  {"trials", opts.trials},
                  {"stream_len", opts.stream_len},
                  {"mem_sz", opts.mem_sz}};
  if (opts.stream_len <= 0 || opts.trials <= 0 || opts.mem_sz == 0) {
    report.stats["pass"] = true;
    return report;
  }

  const auto len = static_cast<std::size_t>(opts.stream_len);
  std::vector<std::int64_t> included(len, 0);
  std::vector<std::int64_t> admitted(len, 0);
  Rng rng(opts.seed);
  for (std::int64_t trial = 0; trial < opts.trials; ++trial) {
    Buffer buf(opts.mem_sz, opts.policy);
    for (std::size_t t = 0; t < len; ++t) {
      const std::size_t before = buf.size();
      const auto replaced = buf.offer(Example{static_cast<std::int64_t>(t), {}, 0}, rng);
      if (replaced || buf.size() > before) ++admitted[t];
    }
    for (const auto& slot : buf.slots()) ++included[static_cast<std::size_t>(slot.example.id)];
  }

  // Admission of the t-th item (1-based) into a full buffer: mem_sz / t.
  std::vector<std::int64_t> adm_counts;
  std::vector<double> adm_expected;
  for (std::size_t t = opts.mem_sz; t < len; ++t) {
    adm_counts.push_back(admitted[t]);
    adm_expected.push_back(static_cast<double>(opts.mem_sz) / static_cast<double>(t + 1));
  }
  if (!adm_counts.empty()) {
    report.stats["admission"] = binomial_verdict(adm_counts, adm_expected, opts.trials, report.pass);
  }

  // Final inclusion is uniform only when the victim is uniform.
  if (opts.policy == StoragePolicy::reservoir) {
    const double p = std::min(1.0, static_cast<double>(opts.mem_sz) / static_cast<double>(len));
    report.stats["inclusion"] = binomial_verdict(included, std::vector<double>(len, p), opts.trials,
                                                 report.pass);
    report.stats["inclusion"]["expected"] = p;
    double mean = 0.0;
    for (auto c : included) mean += static_cast<double>(c);
    report.stats["inclusion"]["mean"] =
        mean / static_cast<double>(len) / static_cast<double>(opts.trials);
  }

  // Victim choice on frozen scores.
  const std::vector<double> scores = frozen_scores(opts.mem_sz);
  nlohmann::json victim = {{"scores", scores}};
  if (opts.policy == StoragePolicy::crs_s1) {
    const std::size_t v = argmax_score(scores);
    const auto best = std::max_element(scores.begin(), scores.end());
    const bool ok = v == static_cast<std::size_t>(best - scores.begin());
    victim["victim"] = v;
    victim["pass"] = ok;
    report.pass = report.pass && ok;
  } else {
    std::vector<double> expected(opts.mem_sz, 1.0 / static_cast<double>(opts.mem_sz));
    if (opts.policy == StoragePolicy::crs_s2) {
      const double shift = -std::min(0.0, *std::min_element(scores.begin(), scores.end()));
      double total = 0.0;
      for (double s : scores) total += s + shift;
      for (std::size_t i = 0; i < scores.size(); ++i) expected[i] = (scores[i] + shift) / total;
    }
    const std::int64_t draws = std::max<std::int64_t>(opts.trials * 2, 100000);
    std::vector<std::int64_t> hits(opts.mem_sz, 0);
    for (std::int64_t d = 0; d < draws; ++d) {
      const std::size_t v = opts.policy == StoragePolicy::crs_s2
                                ? sample_proportional(scores, rng)
                                : static_cast<std::size_t>(rng.index(opts.mem_sz));
      ++hits[v];
    }
    double max_dev = 0.0;
    std::vector<double> freq(opts.mem_sz);
    for (std::size_t i = 0; i < opts.mem_sz; ++i) {
      freq[i] = static_cast<double>(hits[i]) / static_cast<double>(draws);
      max_dev = std::max(max_dev, std::abs(freq[i] - expected[i]));
    }
    const bool ok = max_dev <= 0.02;
    victim["draws"] = draws;
    victim["expected"] = expected;
    victim["frequency"] = freq;
    victim["max_abs_dev"] = max_dev;
    victim["tolerance"] = 0.02;
    victim["pass"] = ok;
    report.pass = report.pass && ok;
  }
  report.stats["victim"] = victim;
  report.stats["pass"] = report.pass;
  return report;
}

int cmd_buffer_sim(const BufferSimOptions& opts, std::ostream& out) {
  const BufferSimReport report = buffer_sim(opts);
  out << report.stats.dump(2) << '\n';
  return report.pass ? kExitOk : kExitInternal;
}

}  // namespace replay
