#pragma once

#include <limits>
#include <span>
#include <vector>

#include "replay/mlp.hpp"

namespace replay {

struct CombinerConfig {
  // Step size of the one-step proximal update (stands in for a*b/(a+b)).
  double lambda = 0.1;
  // Floor on replay-gradient lengths and on |w| when sizing a step.
  double epsilon = 0.1;
  // Proximal-gradient iterations; 1 is the closed-form single step.
  int steps = 1;
  // Number of averaged groups the replay gradients are folded into; 0 keeps one per example.
  int groups = 0;
  // Advanced: explicit weights of the iterate w <- (a (w - b grad f) + b g) / (a + b).
  // beta defaults to lambda, alpha to +inf (pure gradient steps on f).
  double alpha = std::numeric_limits<double>::infinity();
  double beta = 0.0;
};

void validate(const CombinerConfig& cfg);

// Experience replay direction: the minimizer of 1/2 |g - w|^2 - <g_ref, w>.
ParamVector er_combine(const ParamVector& g, const ParamVector& g_ref);

double sigmoid(double x);

// f(w) = -sum_i cos(w, g_i; eps) * sigmoid(|g_i|), the length-weighted
// principal-direction objective. |g_i| in the cosine denominator is floored at eps.
double principal_objective(const ParamVector& w, std::span<const ParamVector> grads,
                           double epsilon);

// Analytic gradient of principal_objective. Requires |w| >= epsilon.
ParamVector pgd_grad_f(const ParamVector& w, std::span<const ParamVector> grads, double epsilon);
// Splits grads into `groups` contiguous, near-equal chunks and returns each chunk's mean.
std::vector<ParamVector> group_gradients(std::span<const ParamVector> grads, int groups);

// Principal gradient direction: proximal-gradient iterations on the
// principal-direction objective, started at (and anchored to) the new-data gradient g.
// Each step on f is scaled by min(1, |w| / eps). A zero g is returned unchanged.
ParamVector pgd_combine(const ParamVector& g, std::span<const ParamVector> grads,
                        const CombinerConfig& cfg);

}  // namespace replay
