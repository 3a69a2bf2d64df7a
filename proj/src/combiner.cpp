#include "replay/combiner.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "replay/error.hpp"

namespace replay {
namespace {

void check_same_length(const ParamVector& a, const ParamVector& b, const char* what) {
  if (a.size() != b.size()) {
    throw InvalidInput(std::string(what) + ": length mismatch (" + std::to_string(a.size()) +
                       " vs " + std::to_string(b.size()) + ")");
  }
}

// Accumulates sum_i c_i g_i and sum_i c_i <w, g_i> separately, then combines:
//   grad f = -(1/|w|) sum_i c_i g_i + (1/|w|^3) (sum_i c_i <w, g_i>) w,
// with c_i = sigmoid(|g_i|) / max(eps, |g_i|).
ParamVector grad_f(const ParamVector& w, std::span<const ParamVector> grads, double epsilon) {
  const double w_norm = w.norm();
  ParamVector weighted = ParamVector::Zero(w.size());
  double projected = 0.0;
  for (const auto& gi : grads) {
    check_same_length(w, gi, "pgd_grad_f");
    const double gi_norm = gi.norm();
    const double coef = sigmoid(gi_norm) / std::max(epsilon, gi_norm);
    weighted += coef * gi;
    projected += coef * w.dot(gi);
  }
  const double w_norm3 = w_norm * w_norm * w_norm;
  return -weighted / w_norm + (projected / w_norm3) * w;
}

// grad f with |w| floored at eps. Since grad f(s w) = grad f(w) / s,
// this is grad f(w) * min(1, |w| / eps), evaluated at length eps so tiny |w| cannot underflow.
ParamVector floored_grad_f(const ParamVector& w, std::span<const ParamVector> grads,
                           double epsilon) {
  const double n = w.norm();
  if (n >= epsilon) return grad_f(w, grads, epsilon);
  return grad_f(w * (epsilon / n), grads, epsilon);
}

}  // namespace

void validate(const CombinerConfig& cfg) {
  if (!(cfg.lambda > 0.0)) throw InvalidInput("combiner lambda must be positive");
  if (!(cfg.epsilon > 0.0)) throw InvalidInput("combiner epsilon must be positive");
  if (cfg.steps < 1) throw InvalidInput("combiner steps must be >= 1");
  if (cfg.groups < 0) throw InvalidInput("combiner groups must be >= 0");
  if (!(cfg.alpha > 0.0)) throw InvalidInput("combiner alpha must be positive");
  if (cfg.beta < 0.0) throw InvalidInput("combiner beta must be non-negative");
}

ParamVector er_combine(const ParamVector& g, const ParamVector& g_ref) {
  check_same_length(g, g_ref, "er_combine");
  return g + g_ref;
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

double principal_objective(const ParamVector& w, std::span<const ParamVector> grads,
                           double epsilon) {
  const double w_norm = w.norm();
  double f = 0.0;
  for (const auto& gi : grads) {
    check_same_length(w, gi, "principal_objective");
    const double gi_norm = gi.norm();
    f -= w.dot(gi) / (w_norm * std::max(epsilon, gi_norm)) * sigmoid(gi_norm);
  }
  return f;
}

ParamVector pgd_grad_f(const ParamVector& w, std::span<const ParamVector> grads, double epsilon) {
  if (grads.empty()) throw InvalidInput("pgd_grad_f: no replay gradients");
  if (w.norm() < epsilon) throw PreconditionError("pgd_grad_f: |w| is below epsilon");
  return grad_f(w, grads, epsilon);
}

std::vector<ParamVector> group_gradients(std::span<const ParamVector> grads, int groups) {
  const auto k = static_cast<int>(grads.size());
  if (groups < 1 || groups > k) {
    throw InvalidInput("group_gradients: groups must be in [1, " + std::to_string(k) + "]");
  }
  std::vector<ParamVector> out;
  out.reserve(static_cast<std::size_t>(groups));
  const int base = k / groups;
  const int extra = k % groups;
  int start = 0;
  for (int gi = 0; gi < groups; ++gi) {
    const int len = base + (gi < extra ? 1 : 0);
    ParamVector sum = grads[static_cast<std::size_t>(start)];
    for (int j = start + 1; j < start + len; ++j) sum += grads[static_cast<std::size_t>(j)];
    out.push_back(sum / static_cast<double>(len));
    start += len;
  }
  return out;
}

ParamVector pgd_combine(const ParamVector& g, std::span<const ParamVector> grads,
                        const CombinerConfig& cfg) {
  validate(cfg);
  for (const auto& gi : grads) check_same_length(g, gi, "pgd_combine");
  if (grads.empty()) return g;
  if (g.norm() == 0.0) return g;

  std::vector<ParamVector> grouped;
  std::span<const ParamVector> used = grads;
  if (cfg.groups > 0 && cfg.groups < static_cast<int>(grads.size())) {
    grouped = group_gradients(grads, cfg.groups);
    used = grouped;
  }

  const double beta = cfg.beta > 0.0 ? cfg.beta : cfg.lambda;
  const bool anchored = std::isfinite(cfg.alpha);
  if (cfg.steps == 1 && !anchored) {
    return g - cfg.lambda * floored_grad_f(g, used, cfg.epsilon);
  }

  ParamVector w = g;
  for (int k = 0; k < cfg.steps; ++k) {
    if (w.norm() == 0.0) break;
    ParamVector moved = w - beta * floored_grad_f(w, used, cfg.epsilon);
    if (anchored) {
      w = (cfg.alpha * moved + beta * g) / (cfg.alpha + beta);
    } else {
      w = std::move(moved);
    }
  }
  return w;
}

}  // namespace replay
