#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "s2s/network.hpp"

namespace s2s {

struct LossEval {
  double value = 0.0;
  std::vector<double> grad_params;  // analytic gradient, same length as net params
};

// |analytic - central| / max(|analytic|, |central|, 1e-3). The 1e-3 floor keeps
// finite-difference rounding noise (~1e-11 for O(1) losses at eps=1e-5) from
// registering as huge relative error on components whose true gradient is 0.
double relative_error(double analytic, double central);

// Central-difference sweep over x: the objective is re-evaluated 2x per entry
// with x[i] +/- eps. Returns the max relative_error against `analytic`.
double central_difference_max_err(std::span<double> x, const std::function<double()>& value,
                                  std::span<const double> analytic, double eps);

// Same sweep over a network's parameter vector. The objective is called once
// up front for the analytic gradient, then value-only on perturbed copies.
double gradient_check(const PartNetwork& net,
                      const std::function<LossEval(const PartNetwork&)>& objective, double eps);

// One verification row: a loss term checked against central differences over
// randomly generated instances. Direct terms differentiate with respect to the
// embeddings; "network" chains the total loss through a small random conv net
// and differentiates with respect to its parameters.
struct TermCheck {
  std::string term;
  int instances = 0;
  double max_rel_err = 0.0;
  double threshold = 0.0;  // 1e-6 direct, 1e-4 network-chained
  bool pass() const { return max_rel_err < threshold; }
};

// Terms accepted by run_term_check, in reporting order.
const std::vector<std::string>& gradcheck_terms();

// Draws `instances` random instances (deterministic in seed; instances near a
// hinge boundary are rejected and redrawn, since the loss is not differentiable
// there) and verifies the term's analytic gradient. UsageError on unknown term
// or eps <= 0.
TermCheck run_term_check(const std::string& term, std::uint64_t seed, double eps, int instances);

}  // namespace s2s
